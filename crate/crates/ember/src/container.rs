//! Versioned binary container for fitted models ("EMBR1").
//!
//! Layout (little-endian): magic `EMBR1`, format version, three 32-byte
//! digests (config, spec, data), hyperparameter slots, latent block table,
//! posterior mode, posterior precision in coordinate form (upper triangle),
//! and constraint rows. The container is self-contained for posterior
//! sampling; predictive simulation additionally reassembles the model from
//! the run configuration and verifies the digests.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{EmberError, Result};
use crate::gmrf::PrecisionFactor;

pub const MAGIC: &[u8; 5] = b"EMBR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSlot {
    pub name: String,
    pub value: f64,
    pub free: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredBlock {
    pub id: String,
    pub offset: usize,
    pub len: usize,
}

/// Serializable view of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitContainer {
    pub config_digest: [u8; 32],
    pub spec_digest: [u8; 32],
    pub data_digest: [u8; 32],
    pub slots: Vec<StoredSlot>,
    pub blocks: Vec<StoredBlock>,
    pub mode: Vec<f64>,
    /// Upper-triangle nonzeros of the posterior precision.
    pub precision: Vec<(u32, u32, f64)>,
    pub constraints: Vec<Vec<f64>>,
}

impl FitContainer {
    pub fn n_latent(&self) -> usize {
        self.mode.len()
    }

    pub fn slot(&self, name: &str) -> Option<f64> {
        self.slots.iter().find(|s| s.name == name).map(|s| s.value)
    }

    pub fn block(&self, id: &str) -> Option<&StoredBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    /// Rebuild the posterior factor for sampling.
    pub fn factor(&self) -> Result<PrecisionFactor> {
        let n = self.n_latent();
        let mut dense = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.precision {
            dense[(i as usize, j as usize)] = v;
            dense[(j as usize, i as usize)] = v;
        }
        PrecisionFactor::of_dense(dense, &self.constraints)
    }

    pub fn mode_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mode)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.config_digest)?;
        w.write_all(&self.spec_digest)?;
        w.write_all(&self.data_digest)?;

        write_u64(&mut w, self.slots.len() as u64)?;
        for s in &self.slots {
            write_str(&mut w, &s.name)?;
            w.write_all(&s.value.to_le_bytes())?;
            w.write_all(&[u8::from(s.free)])?;
        }
        write_u64(&mut w, self.blocks.len() as u64)?;
        for b in &self.blocks {
            write_str(&mut w, &b.id)?;
            write_u64(&mut w, b.offset as u64)?;
            write_u64(&mut w, b.len as u64)?;
        }
        write_u64(&mut w, self.mode.len() as u64)?;
        for v in &self.mode {
            w.write_all(&v.to_le_bytes())?;
        }
        write_u64(&mut w, self.precision.len() as u64)?;
        for &(i, j, v) in &self.precision {
            w.write_all(&i.to_le_bytes())?;
            w.write_all(&j.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        write_u64(&mut w, self.constraints.len() as u64)?;
        for row in &self.constraints {
            write_u64(&mut w, row.len() as u64)?;
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmberError::InvalidInput(
                "not a fit container (bad magic bytes)".into(),
            ));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(EmberError::InvalidInput(format!(
                "unsupported fit container version {version}"
            )));
        }
        let mut config_digest = [0u8; 32];
        r.read_exact(&mut config_digest)?;
        let mut spec_digest = [0u8; 32];
        r.read_exact(&mut spec_digest)?;
        let mut data_digest = [0u8; 32];
        r.read_exact(&mut data_digest)?;

        let n_slots = read_u64(&mut r)? as usize;
        let mut slots = Vec::with_capacity(n_slots.min(1 << 20));
        for _ in 0..n_slots {
            let name = read_str(&mut r)?;
            let value = read_f64(&mut r)?;
            let mut free = [0u8; 1];
            r.read_exact(&mut free)?;
            slots.push(StoredSlot {
                name,
                value,
                free: free[0] != 0,
            });
        }
        let n_blocks = read_u64(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(n_blocks.min(1 << 20));
        for _ in 0..n_blocks {
            let id = read_str(&mut r)?;
            let offset = read_u64(&mut r)? as usize;
            let len = read_u64(&mut r)? as usize;
            blocks.push(StoredBlock { id, offset, len });
        }
        let n_mode = read_u64(&mut r)? as usize;
        let mut mode = Vec::with_capacity(n_mode.min(1 << 26));
        for _ in 0..n_mode {
            mode.push(read_f64(&mut r)?);
        }
        let nnz = read_u64(&mut r)? as usize;
        let mut precision = Vec::with_capacity(nnz.min(1 << 26));
        for _ in 0..nnz {
            let i = read_u32(&mut r)?;
            let j = read_u32(&mut r)?;
            let v = read_f64(&mut r)?;
            precision.push((i, j, v));
        }
        let n_constraints = read_u64(&mut r)? as usize;
        let mut constraints = Vec::with_capacity(n_constraints.min(1 << 20));
        for _ in 0..n_constraints {
            let len = read_u64(&mut r)? as usize;
            let mut row = Vec::with_capacity(len.min(1 << 26));
            for _ in 0..len {
                row.push(read_f64(&mut r)?);
            }
            constraints.push(row);
        }
        Ok(FitContainer {
            config_digest,
            spec_digest,
            data_digest,
            slots,
            blocks,
            mode,
            precision,
            constraints,
        })
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > (1 << 20) {
        return Err(EmberError::InvalidInput("oversized string field".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|_| EmberError::InvalidInput("invalid UTF-8 in container".into()))
}

/// Rebuild a fitted model from a container and a reassembled latent model.
///
/// Slot values are matched by name; the latent dimensions must agree.
pub fn fit_from_container(
    model: crate::inference::LatentModel,
    container: &FitContainer,
) -> Result<crate::inference::PosteriorFit> {
    if model.n_latent != container.n_latent() {
        return Err(EmberError::InvalidInput(format!(
            "container holds {} latent variables but the reassembled model has {}",
            container.n_latent(),
            model.n_latent
        )));
    }
    let mut hyper = model.hyper_template.clone();
    for slot in &container.slots {
        hyper.set_value(&slot.name, slot.value)?;
    }
    let n = container.n_latent();
    let mut precision = DMatrix::zeros(n, n);
    for &(i, j, v) in &container.precision {
        precision[(i as usize, j as usize)] = v;
        precision[(j as usize, i as usize)] = v;
    }
    crate::inference::PosteriorFit::from_parts(model, hyper, container.mode_vector(), precision)
}

/// Build a container from a fitted model.
pub fn container_from_fit(
    fit: &crate::inference::PosteriorFit,
    config_digest: [u8; 32],
    spec_digest: [u8; 32],
    data_digest: [u8; 32],
) -> FitContainer {
    let slots = fit
        .hyper
        .slots()
        .iter()
        .map(|s| StoredSlot {
            name: s.name.clone(),
            value: s.value,
            free: s.free,
        })
        .collect();
    let blocks = fit
        .model
        .blocks
        .iter()
        .map(|b| StoredBlock {
            id: b.id.clone(),
            offset: b.offset,
            len: b.len,
        })
        .collect();
    let h = fit.posterior_precision();
    let n = h.nrows();
    let mut precision = Vec::new();
    for i in 0..n {
        for j in i..n {
            let v = h[(i, j)];
            if v != 0.0 {
                precision.push((i as u32, j as u32, v));
            }
        }
    }
    FitContainer {
        config_digest,
        spec_digest,
        data_digest,
        slots,
        blocks,
        mode: fit.mode.as_slice().to_vec(),
        precision,
        constraints: fit.model.constraints().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trips() {
        let c = FitContainer {
            config_digest: [1; 32],
            spec_digest: [2; 32],
            data_digest: [3; 32],
            slots: vec![StoredSlot {
                name: "gpd_shape".into(),
                value: 0.7,
                free: true,
            }],
            blocks: vec![StoredBlock {
                id: "field".into(),
                offset: 0,
                len: 2,
            }],
            mode: vec![0.1, -0.2],
            precision: vec![(0, 0, 2.0), (0, 1, -0.5), (1, 1, 2.0)],
            constraints: vec![vec![1.0, 1.0]],
        };
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        assert_eq!(&buf[..5], MAGIC);
        let back = FitContainer::read(buf.as_slice()).unwrap();
        assert_eq!(c, back);
        let factor = back.factor().unwrap();
        assert_eq!(factor.dim(), 2);
        // corrupted magic is rejected
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(FitContainer::read(bad.as_slice()).is_err());
    }
}
