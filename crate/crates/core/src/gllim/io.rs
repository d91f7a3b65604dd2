//! Model JSON and binary training-set files.
//!
//! Training sets (`.bnts`): magic `BNTS`, u32 version, u64 N, u32 L, u32 D,
//! N×L then N×D little-endian f64 row-major, then a u64 length and a UTF-8
//! JSON metadata block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Component, GllimModel, PriorMode, TrainingSet};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const TRAINING_FORMAT_VERSION: u32 = 1;
const TRAINING_MAGIC: &[u8; 4] = b"BNTS";

#[derive(Serialize, Deserialize)]
struct ComponentJson {
    pi: f64,
    c: Vec<f64>,
    #[serde(rename = "Gamma")]
    gamma: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "D")]
    d: usize,
    prior_mode: PriorMode,
    components: Vec<ComponentJson>,
    sigma2: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, v: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Format(format!(
            "{what} has {} values, expected {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

impl GllimModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelJson {
            version: MODEL_FORMAT_VERSION,
            k: self.k(),
            l: self.l(),
            d: self.d(),
            prior_mode: self.prior_mode,
            components: self
                .components
                .iter()
                .map(|c| ComponentJson {
                    pi: c.pi,
                    c: c.c.as_slice().to_vec(),
                    gamma: row_major(&c.gamma),
                    a: row_major(&c.a),
                    b: c.b.as_slice().to_vec(),
                })
                .collect(),
            sigma2: self.sigma2.as_slice().to_vec(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(text)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: doc.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if doc.components.len() != doc.k || doc.sigma2.len() != doc.d {
            return Err(Error::Format(format!(
                "header says K={} D={}, found {} components and {} variances",
                doc.k,
                doc.d,
                doc.components.len(),
                doc.sigma2.len()
            )));
        }
        let (l, d) = (doc.l, doc.d);
        let components = doc
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.c.len() != l || c.b.len() != d {
                    return Err(Error::Format(format!("component {i} has wrong c or b length")));
                }
                Ok(Component {
                    pi: c.pi,
                    c: DVector::from_column_slice(&c.c),
                    gamma: from_row_major(l, l, &c.gamma, "Gamma")?,
                    a: from_row_major(d, l, &c.a, "A")?,
                    b: DVector::from_column_slice(&c.b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = GllimModel {
            components,
            sigma2: DVector::from_vec(doc.sigma2),
            prior_mode: doc.prior_mode,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl TrainingSet {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRAINING_MAGIC)?;
        w.write_all(&TRAINING_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.l() as u32).to_le_bytes())?;
        w.write_all(&(self.d() as u32).to_le_bytes())?;
        for m in [&self.x, &self.y] {
            for i in 0..m.nrows() {
                for v in m.row(i).iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TRAINING_MAGIC {
            return Err(Error::Format("not a training-set file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != TRAINING_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: TRAINING_FORMAT_VERSION,
            });
        }
        let n = read_u64(&mut r)? as usize;
        let l = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let x = DMatrix::from_row_slice(n, l, &read_f64s(&mut r, n * l)?);
        let y = DMatrix::from_row_slice(n, d, &read_f64s(&mut r, n * d)?);
        let len = read_u64(&mut r)? as usize;
        let mut meta = vec![0u8; len];
        r.read_exact(&mut meta)?;
        TrainingSet::new(x, y, serde_json::from_slice(&meta)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gllim::synthetic::{random_model, RandomModelSpec};

    #[test]
    fn model_json_round_trip_is_exact() {
        let m = random_model(&RandomModelSpec { k: 3, l: 4, d: 7, ..Default::default() }, 2);
        let back = GllimModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let text = m.to_json().unwrap();
        assert!(text.contains("\"Gamma\"") && text.contains("\"sigma2\"") && text.contains("\"prior_mode\":\"free\""));
    }

    #[test]
    fn model_json_rejects_bad_version() {
        let m = random_model(&RandomModelSpec::default(), 2);
        let text = m.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(GllimModel::from_json(&text), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn training_set_round_trip() {
        let m = random_model(&RandomModelSpec::default(), 5);
        let t = m.sample(17, 1);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(TrainingSet::read_from(buf.as_slice()).unwrap(), t);
        buf[0] = b'X';
        assert!(TrainingSet::read_from(buf.as_slice()).is_err());
    }
}
