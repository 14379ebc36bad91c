//! On-disk dataset cache.
//!
//! Each dataset file is little-endian binary:
//!
//! ```text
//! "FGDS" | version: u32 | rows: u32 | dim: u32 | x: f64[rows*dim] | labels: u16[rows] | origins: u8[rows]
//! ```
//!
//! A bundle directory holds `client_{i}_train.bin`, `client_{i}_test.bin`,
//! `pool_{j}_test.bin` and a `dataset.json` sidecar with ground truth and
//! provenance.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClientData, Dataset, InherentSpec};
use crate::error::{Error, Result};
use crate::nn::checkpoint::ByteReader;
use crate::nn::Matrix;

pub const MAGIC: &[u8; 4] = b"FGDS";
pub const VERSION: u32 = 1;

pub fn write_dataset<W: Write>(w: &mut W, d: &Dataset) -> Result<()> {
    if d.labels.iter().any(|&y| y > u16::MAX as usize) {
        return Err(Error::Input("label does not fit in u16".into()));
    }
    if d.origins.iter().any(|&o| o > u8::MAX as usize) {
        return Err(Error::Input("origin does not fit in u8".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d.len() as u32).to_le_bytes())?;
    w.write_all(&(d.dim() as u32).to_le_bytes())?;
    for v in d.x.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &y in &d.labels {
        w.write_all(&(y as u16).to_le_bytes())?;
    }
    let origins: Vec<u8> = d.origins.iter().map(|&o| o as u8).collect();
    w.write_all(&origins)?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut r = ByteReader::new(r);
    if &r.bytes::<4>("magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected FGDS"));
    }
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = r.u32_le("row count")? as usize;
    let dim = r.u32_le("dimension")? as usize;
    let x = r.f64_vec(n * dim, "samples")?;
    let labels = (0..n)
        .map(|_| r.u16_le("label").map(usize::from))
        .collect::<Result<Vec<_>>>()?;
    let origins = (0..n)
        .map(|_| r.u8("origin").map(usize::from))
        .collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    Dataset::new(Matrix::from_vec(n, dim, x)?, labels, origins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub format_version: u32,
    pub num_clients: usize,
    pub num_components: usize,
    pub num_classes: usize,
    pub data_dim: usize,
    pub true_alpha: Vec<Vec<f64>>,
    pub inherent: Vec<InherentSpec>,
    /// Free-form description of how the data was produced (config echo, seed).
    pub provenance: serde_json::Value,
}

/// Client datasets plus held-out per-distribution test pools.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub clients: Vec<ClientData>,
    pub test_pools: Vec<Dataset>,
    pub num_classes: usize,
    pub inherent: Vec<InherentSpec>,
}

impl DatasetBundle {
    pub fn data_dim(&self) -> usize {
        self.test_pools
            .first()
            .map(Dataset::dim)
            .or_else(|| self.clients.first().map(|c| c.train.dim()))
            .unwrap_or(0)
    }

    pub fn num_components(&self) -> usize {
        self.test_pools.len()
    }

    pub fn write_dir(&self, dir: &Path, provenance: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let put = |name: String, d: &Dataset| -> Result<()> {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            write_dataset(&mut w, d)?;
            w.flush()?;
            Ok(())
        };
        for c in &self.clients {
            put(format!("client_{}_train.bin", c.id), &c.train)?;
            put(format!("client_{}_test.bin", c.id), &c.test)?;
        }
        for (j, p) in self.test_pools.iter().enumerate() {
            put(format!("pool_{j}_test.bin"), p)?;
        }
        let sidecar = CacheSidecar {
            format_version: VERSION,
            num_clients: self.clients.len(),
            num_components: self.num_components(),
            num_classes: self.num_classes,
            data_dim: self.data_dim(),
            true_alpha: self.clients.iter().map(|c| c.true_alpha.clone()).collect(),
            inherent: self.inherent.clone(),
            provenance,
        };
        fs::write(dir.join("dataset.json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<(Self, CacheSidecar)> {
        let sidecar: CacheSidecar = serde_json::from_slice(&fs::read(dir.join("dataset.json"))?)?;
        let get = |name: String| -> Result<Dataset> {
            read_dataset(BufReader::new(File::open(dir.join(name))?))
        };
        let mut clients = Vec::with_capacity(sidecar.num_clients);
        for (id, alpha) in sidecar.true_alpha.iter().enumerate() {
            clients.push(ClientData {
                id,
                train: get(format!("client_{id}_train.bin"))?,
                test: get(format!("client_{id}_test.bin"))?,
                true_alpha: alpha.clone(),
            });
        }
        let test_pools = (0..sidecar.num_components)
            .map(|j| get(format!("pool_{j}_test.bin")))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                clients,
                test_pools,
                num_classes: sidecar.num_classes,
                inherent: sidecar.inherent.clone(),
            },
            sidecar,
        ))
    }
}
