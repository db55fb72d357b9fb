//! Gridded pixel-day tables, fire events and mark attachment.
//!
//! The observation unit is a *pixel-day*: one grid cell on one day, with
//! fire-danger covariates and the number of escaped fires. Events carry
//! burnt-area marks in hectares and are classified moderate/extreme by
//! strict exceedance above a threshold `u`; moderate marks are mapped to
//! (0, 1) for the Beta size component.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EmberError, Result};

/// Boundary clamp for transformed moderate marks; the Beta likelihood is
/// undefined at 0 and 1.
pub const MARK_CLAMP_EPS: f64 = 1e-6;

/// Fire season as an inclusive month range (default June–October).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Season {
    pub first_month: u8,
    pub last_month: u8,
}

impl Default for Season {
    fn default() -> Self {
        Season {
            first_month: 6,
            last_month: 10,
        }
    }
}

impl Season {
    pub fn contains(&self, month: u8) -> bool {
        month >= self.first_month && month <= self.last_month
    }

    pub fn months(&self) -> impl Iterator<Item = u8> {
        self.first_month..=self.last_month
    }

    pub fn n_months(&self) -> usize {
        (self.last_month - self.first_month + 1) as usize
    }
}

/// One grid cell × day observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelDay {
    pub cell_id: u64,
    pub day_index: u32,
    pub year: i32,
    pub month: u8,
    pub x_km: f64,
    pub y_km: f64,
    pub fwi: f64,
    pub fa: f64,
    pub count: u32,
    pub volume: f64,
}

impl PixelDay {
    fn validate(&self) -> Result<()> {
        if !(self.volume > 0.0) {
            return Err(EmberError::FieldRange {
                field: "volume",
                message: format!("must be > 0, got {}", self.volume),
            });
        }
        if !(self.fwi >= 0.0) || !self.fwi.is_finite() {
            return Err(EmberError::FieldRange {
                field: "fwi",
                message: format!("must be a finite non-negative real, got {}", self.fwi),
            });
        }
        if !(0.0..=100.0).contains(&self.fa) {
            return Err(EmberError::FieldRange {
                field: "fa",
                message: format!("must lie in [0, 100], got {}", self.fa),
            });
        }
        Ok(())
    }
}

/// Immutable table of pixel-days with a (cell, day) lookup index.
#[derive(Debug, Clone)]
pub struct PixelDayTable {
    rows: Vec<PixelDay>,
    index: HashMap<(u64, u32), usize>,
    season: Season,
}

impl PixelDayTable {
    pub fn new(rows: Vec<PixelDay>, season: Season) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (pos, row) in rows.iter().enumerate() {
            row.validate()?;
            if !season.contains(row.month) {
                return Err(EmberError::FieldRange {
                    field: "month",
                    message: format!(
                        "month {} outside season {}..={} (cell_id={}, day_index={})",
                        row.month, season.first_month, season.last_month, row.cell_id, row.day_index
                    ),
                });
            }
            if index.insert((row.cell_id, row.day_index), pos).is_some() {
                return Err(EmberError::DuplicateKey {
                    cell_id: row.cell_id,
                    day_index: row.day_index,
                });
            }
        }
        Ok(PixelDayTable {
            rows,
            index,
            season,
        })
    }

    pub fn rows(&self) -> &[PixelDay] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn season(&self) -> Season {
        self.season
    }

    pub fn position(&self, cell_id: u64, day_index: u32) -> Option<usize> {
        self.index.get(&(cell_id, day_index)).copied()
    }

    pub fn get(&self, cell_id: u64, day_index: u32) -> Option<&PixelDay> {
        self.position(cell_id, day_index).map(|i| &self.rows[i])
    }
}

/// A wildfire event with burnt-area mark (ha), attached to a pixel-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireEvent {
    pub fire_id: u64,
    pub cell_id: u64,
    pub day_index: u32,
    pub burnt_area_ha: f64,
}

/// An event with its exceedance indicator and table row resolved.
#[derive(Debug, Clone)]
pub struct MarkedEvent {
    pub event: FireEvent,
    /// Index of the hosting pixel-day in the table.
    pub row: usize,
    /// Strict exceedance indicator I(Y > u).
    pub exceeds: bool,
}

/// Pixel-day table plus events grouped by pixel-day, with exceedance
/// indicators relative to the threshold `u`.
#[derive(Debug, Clone)]
pub struct MarkedDataset {
    table: PixelDayTable,
    threshold: f64,
    /// Events sorted by (row, fire_id).
    events: Vec<MarkedEvent>,
    /// Half-open range into `events` per table row.
    spans: Vec<(usize, usize)>,
}

impl MarkedDataset {
    pub fn table(&self) -> &PixelDayTable {
        &self.table
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn events(&self) -> &[MarkedEvent] {
        &self.events
    }

    pub fn events_for_row(&self, row: usize) -> &[MarkedEvent] {
        let (a, b) = self.spans[row];
        &self.events[a..b]
    }

    pub fn n_exceedances(&self) -> usize {
        self.events.iter().filter(|e| e.exceeds).count()
    }

    pub fn into_table(self) -> PixelDayTable {
        self.table
    }
}

/// Group events by pixel-day, validate counts, and compute exceedance
/// indicators `I(Y > u)`.
pub fn attach_marks(
    table: PixelDayTable,
    events: Vec<FireEvent>,
    threshold: f64,
) -> Result<MarkedDataset> {
    if !(threshold > 1.0) {
        return Err(EmberError::InvalidInput(format!(
            "threshold must exceed the 1 ha reporting floor, got {threshold}"
        )));
    }
    let mut marked = Vec::with_capacity(events.len());
    for event in events {
        if !(event.burnt_area_ha > 1.0) {
            return Err(EmberError::FieldRange {
                field: "burnt_area_ha",
                message: format!(
                    "escaped fires must exceed 1 ha, got {} (fire_id={})",
                    event.burnt_area_ha, event.fire_id
                ),
            });
        }
        let row = table
            .position(event.cell_id, event.day_index)
            .ok_or(EmberError::OrphanEvent {
                fire_id: event.fire_id,
                cell_id: event.cell_id,
                day_index: event.day_index,
            })?;
        let exceeds = event.burnt_area_ha > threshold;
        marked.push(MarkedEvent {
            event,
            row,
            exceeds,
        });
    }
    marked.sort_by(|a, b| (a.row, a.event.fire_id).cmp(&(b.row, b.event.fire_id)));

    let mut spans = vec![(0usize, 0usize); table.len()];
    let mut k = 0;
    for row in 0..table.len() {
        let start = k;
        while k < marked.len() && marked[k].row == row {
            k += 1;
        }
        spans[row] = (start, k);
        let attached = k - start;
        let expected = table.rows()[row].count;
        if attached != expected as usize {
            let pd = &table.rows()[row];
            return Err(EmberError::CountMismatch {
                cell_id: pd.cell_id,
                day_index: pd.day_index,
                expected,
                actual: attached,
            });
        }
    }
    Ok(MarkedDataset {
        table,
        threshold,
        events: marked,
        spans,
    })
}

/// Map a moderate mark y ∈ (1, u] onto (0, 1) via (y−1)/(u−1), clamped away
/// from the Beta boundary.
pub fn transform_moderate_mark(y: f64, threshold: f64) -> Result<f64> {
    if !(y > 1.0) {
        return Err(EmberError::FieldRange {
            field: "burnt_area_ha",
            message: format!("moderate mark must exceed 1 ha, got {y}"),
        });
    }
    if y > threshold {
        return Err(EmberError::FieldRange {
            field: "burnt_area_ha",
            message: format!("moderate mark must not exceed the threshold {threshold}, got {y}"),
        });
    }
    let z = (y - 1.0) / (threshold - 1.0);
    Ok(z.clamp(MARK_CLAMP_EPS, 1.0 - MARK_CLAMP_EPS))
}

// --- CSV schemas ------------------------------------------------------------
//
// pixel_days.csv: cell_id,day_index,year,month,x_km,y_km,fwi,fa,count,volume
// fires.csv:      fire_id,cell_id,day_index,burnt_area_ha

pub fn load_pixel_days<P: AsRef<Path>>(path: P, season: Season) -> Result<PixelDayTable> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        EmberError::InvalidInput(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_pixel_days(file, season)
}

pub fn read_pixel_days<R: Read>(reader: R, season: Season) -> Result<PixelDayTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut rows = Vec::new();
    for record in rdr.deserialize::<PixelDay>() {
        let row = record.map_err(|e| EmberError::Parse {
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or_default(),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    PixelDayTable::new(rows, season)
}

pub fn write_pixel_days<W: Write>(writer: W, table: &PixelDayTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in table.rows() {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_fire_events<P: AsRef<Path>>(path: P) -> Result<Vec<FireEvent>> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        EmberError::InvalidInput(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_fire_events(file)
}

pub fn read_fire_events<R: Read>(reader: R) -> Result<Vec<FireEvent>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut events = Vec::new();
    for record in rdr.deserialize::<FireEvent>() {
        let event = record.map_err(|e| EmberError::Parse {
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or_default(),
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_fire_events<W: Write>(writer: W, events: &[FireEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for event in events {
        wtr.serialize(event)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd(cell: u64, day: u32, count: u32) -> PixelDay {
        PixelDay {
            cell_id: cell,
            day_index: day,
            year: 2000,
            month: 7,
            x_km: cell as f64,
            y_km: 0.0,
            fwi: 10.0,
            fa: 50.0,
            count,
            volume: 64.0,
        }
    }

    #[test]
    fn three_row_file_loads() {
        let csv = "cell_id,day_index,year,month,x_km,y_km,fwi,fa,count,volume\n\
                   1,10,2000,7,0.0,0.0,12.5,40.0,0,64.0\n\
                   2,10,2000,7,8.0,0.0,3.25,60.0,1,64.0\n\
                   3,11,2000,8,16.0,0.0,0.0,0.0,0,64.0\n";
        let table = read_pixel_days(csv.as_bytes(), Season::default()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.get(2, 10).unwrap().count, 1);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let rows = vec![pd(5, 10, 0), pd(5, 10, 0)];
        let err = PixelDayTable::new(rows, Season::default()).unwrap_err();
        assert!(matches!(
            err,
            EmberError::DuplicateKey {
                cell_id: 5,
                day_index: 10
            }
        ));
    }

    #[test]
    fn fa_out_of_range_names_the_field() {
        let mut row = pd(1, 1, 0);
        row.fa = 120.0;
        let err = PixelDayTable::new(vec![row], Season::default()).unwrap_err();
        match err {
            EmberError::FieldRange { field, .. } => assert_eq!(field, "fa"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_season_month_is_rejected() {
        let mut row = pd(1, 1, 0);
        row.month = 3;
        let err = PixelDayTable::new(vec![row], Season::default()).unwrap_err();
        assert!(matches!(err, EmberError::FieldRange { field: "month", .. }));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let csv = "cell_id,day_index,year,month,x_km,y_km,fwi,fa,count,volume\n\
                   1,10,2000,7,0.0,0.0,12.5,40.0,0,64.0\n\
                   2,oops,2000,7,8.0,0.0,3.25,60.0,1,64.0\n";
        let err = read_pixel_days(csv.as_bytes(), Season::default()).unwrap_err();
        match err {
            EmberError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn exceedance_indicator_is_strict() {
        let table = PixelDayTable::new(vec![pd(1, 1, 2)], Season::default()).unwrap();
        let events = vec![
            FireEvent {
                fire_id: 1,
                cell_id: 1,
                day_index: 1,
                burnt_area_ha: 100.0,
            },
            FireEvent {
                fire_id: 2,
                cell_id: 1,
                day_index: 1,
                burnt_area_ha: 79.0,
            },
        ];
        let ds = attach_marks(table, events, 79.0).unwrap();
        let flags: Vec<bool> = ds.events().iter().map(|e| e.exceeds).collect();
        assert_eq!(flags, vec![true, false]);
        assert_eq!(ds.n_exceedances(), 1);
    }

    #[test]
    fn orphan_event_is_a_hard_error() {
        let table = PixelDayTable::new(vec![pd(1, 1, 0)], Season::default()).unwrap();
        let events = vec![FireEvent {
            fire_id: 9,
            cell_id: 2,
            day_index: 1,
            burnt_area_ha: 5.0,
        }];
        let err = attach_marks(table, events, 79.0).unwrap_err();
        assert!(matches!(err, EmberError::OrphanEvent { fire_id: 9, .. }));
    }

    #[test]
    fn count_mismatch_is_a_hard_error() {
        let table = PixelDayTable::new(vec![pd(1, 1, 2)], Season::default()).unwrap();
        let events = vec![FireEvent {
            fire_id: 1,
            cell_id: 1,
            day_index: 1,
            burnt_area_ha: 5.0,
        }];
        let err = attach_marks(table, events, 79.0).unwrap_err();
        assert!(matches!(
            err,
            EmberError::CountMismatch {
                expected: 2,
                actual: 1,
                ..
            }
        ));
    }

    #[test]
    fn moderate_mark_transform_values() {
        assert_eq!(transform_moderate_mark(40.0, 79.0).unwrap(), 0.5);
        assert_eq!(
            transform_moderate_mark(79.0, 79.0).unwrap(),
            1.0 - MARK_CLAMP_EPS
        );
        // (1.000001 - 1)/78 ≈ 1.28e-8 clamps up to the lower boundary
        assert_eq!(
            transform_moderate_mark(1.000001, 79.0).unwrap(),
            MARK_CLAMP_EPS
        );
        assert!(transform_moderate_mark(1.0, 79.0).is_err());
        assert!(transform_moderate_mark(79.1, 79.0).is_err());
    }

    #[test]
    fn transform_is_strictly_increasing_before_clamp() {
        let u = 79.0;
        let mut prev = f64::NEG_INFINITY;
        for k in 1..200 {
            let y = 1.0 + (u - 1.0) * (k as f64) / 200.0;
            let z = (y - 1.0) / (u - 1.0);
            assert!(z > prev);
            prev = z;
        }
    }

    #[test]
    fn csv_round_trip_is_identical() {
        let rows = vec![
            PixelDay {
                cell_id: 1,
                day_index: 160,
                year: 2003,
                month: 6,
                x_km: 0.125,
                y_km: -3.5,
                fwi: 17.3331,
                fa: 99.99,
                count: 2,
                volume: 64.0,
            },
            PixelDay {
                cell_id: 2,
                day_index: 161,
                year: 2003,
                month: 6,
                x_km: 1.0 / 3.0,
                y_km: 0.1 + 0.2,
                fwi: f64::MIN_POSITIVE,
                fa: 0.0,
                count: 0,
                volume: 64.0,
            },
        ];
        let table = PixelDayTable::new(rows, Season::default()).unwrap();
        let mut buf = Vec::new();
        write_pixel_days(&mut buf, &table).unwrap();
        let reread = read_pixel_days(buf.as_slice(), Season::default()).unwrap();
        assert_eq!(table.rows(), reread.rows());
    }
}
