//! `LPS1` pixel-feature store.
//!
//! ```text
//! magic "LPS1" | version u32 | C u32 | record_count u32 | flags u32
//! width u32 | height u32
//! record: frame u32 | object u32 | run_count u32 | (start u32, len u32)*runs
//!         | f32*C
//! ```
//! Flag bit 0 marks a complete run; partial stores are written without it.

use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use thiserror::Error;

use super::Mask;

pub const STORE_MAGIC: [u8; 4] = *b"LPS1";
pub const STORE_VERSION: u32 = 1;
const FLAG_COMPLETE: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic bytes {0:?}, expected \"LPS1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}, expected {STORE_VERSION}")]
    Version(u32),
    #[error("store truncated in {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
    #[error("invalid store: {0}")]
    Invalid(String),
    #[error("frame {0} has no records")]
    FrameAbsent(u32),
    #[error("frame {frame}: object {object} overlaps an earlier region")]
    Overlap { frame: u32, object: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major runs `(start, len)` of set pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rle {
    pub runs: Vec<(u32, u32)>,
}

impl Rle {
    pub fn encode(mask: &Mask) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &b) in mask.bits.iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s as u32, (i - s) as u32));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s as u32, (mask.bits.len() - s) as u32));
        }
        Self { runs }
    }

    pub fn decode(&self, width: usize, height: usize) -> Result<Mask, StoreError> {
        let mut m = Mask::empty(width, height);
        let n = width * height;
        for &(s, l) in &self.runs {
            let (s, l) = (s as usize, l as usize);
            if l == 0 || s + l > n {
                return Err(StoreError::Invalid(format!("run ({s}, {l}) outside {n} pixels")));
            }
            m.bits[s..s + l].iter_mut().for_each(|b| *b = true);
        }
        Ok(m)
    }

    pub fn area(&self) -> usize {
        self.runs.iter().map(|&(_, l)| l as usize).sum()
    }
}

/// One object's region in one frame and its feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub frame: u32,
    pub object: u32,
    pub region: Rle,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureStore {
    pub c: usize,
    pub width: u32,
    pub height: u32,
    /// False for a store flushed after a failure.
    pub complete: bool,
    pub records: Vec<Record>,
}

impl PixelFeatureStore {
    pub fn new(c: usize, width: u32, height: u32) -> Self {
        Self {
            c,
            width,
            height,
            complete: false,
            records: Vec::new(),
        }
    }

    pub fn frames(&self) -> Vec<u32> {
        let mut f: Vec<u32> = self.records.iter().map(|r| r.frame).collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Distinct object ids over the whole store.
    pub fn object_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.object).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Adds one record per mask for `frame`. Rows of `features` follow
    /// `masks`.
    pub fn ingest(
        &mut self,
        frame: u32,
        masks: &[(u32, Mask)],
        features: &Array2<f64>,
    ) -> Result<(), StoreError> {
        if features.dim() != (masks.len(), self.c) {
            return Err(StoreError::Invalid(format!(
                "features are {:?}, expected ({}, {})",
                features.dim(),
                masks.len(),
                self.c
            )));
        }
        for ((id, m), f) in masks.iter().zip(features.rows()) {
            if (m.width, m.height) != (self.width as usize, self.height as usize) {
                return Err(StoreError::Invalid("mask resolution differs from the store".into()));
            }
            self.records.push(Record {
                frame,
                object: *id,
                region: Rle::encode(m),
                feature: f.iter().map(|&v| v as f32).collect(),
            });
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<(), StoreError> {
        let count = u32::try_from(self.records.len())
            .map_err(|_| StoreError::Invalid("more than u32::MAX records".into()))?;
        w.write_all(&STORE_MAGIC)?;
        w.write_u32::<LE>(STORE_VERSION)?;
        w.write_u32::<LE>(self.c as u32)?;
        w.write_u32::<LE>(count)?;
        w.write_u32::<LE>(if self.complete { FLAG_COMPLETE } else { 0 })?;
        w.write_u32::<LE>(self.width)?;
        w.write_u32::<LE>(self.height)?;
        for r in &self.records {
            if r.feature.len() != self.c {
                return Err(StoreError::Invalid(format!(
                    "record ({}, {}) has {} feature values, store C is {}",
                    r.frame,
                    r.object,
                    r.feature.len(),
                    self.c
                )));
            }
            w.write_u32::<LE>(r.frame)?;
            w.write_u32::<LE>(r.object)?;
            w.write_u32::<LE>(r.region.runs.len() as u32)?;
            for &(s, l) in &r.region.runs {
                w.write_u32::<LE>(s)?;
                w.write_u32::<LE>(l)?;
            }
            for &v in &r.feature {
                w.write_f32::<LE>(v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Cursor::new(bytes);
        let t = |section| move |_: io::Error| StoreError::Truncated(section);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(t("header"))?;
        if magic != STORE_MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = r.read_u32::<LE>().map_err(t("header"))?;
        if version != STORE_VERSION {
            return Err(StoreError::Version(version));
        }
        let c = r.read_u32::<LE>().map_err(t("header"))? as usize;
        let count = r.read_u32::<LE>().map_err(t("header"))? as usize;
        let flags = r.read_u32::<LE>().map_err(t("header"))?;
        let width = r.read_u32::<LE>().map_err(t("header"))?;
        let height = r.read_u32::<LE>().map_err(t("header"))?;
        let pixels = width as u64 * height as u64;
        // Every record needs at least 12 + 4C bytes; reject absurd counts
        // before allocating.
        let remaining = bytes.len() as u64 - r.position();
        if count as u64 * (12 + 4 * c as u64) > remaining {
            return Err(StoreError::Truncated("records"));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let frame = r.read_u32::<LE>().map_err(t("record header"))?;
            let object = r.read_u32::<LE>().map_err(t("record header"))?;
            let n_runs = r.read_u32::<LE>().map_err(t("record header"))? as u64;
            if n_runs * 8 > bytes.len() as u64 - r.position() {
                return Err(StoreError::Truncated("runs"));
            }
            let mut runs = Vec::with_capacity(n_runs as usize);
            for _ in 0..n_runs {
                let s = r.read_u32::<LE>().map_err(t("runs"))?;
                let l = r.read_u32::<LE>().map_err(t("runs"))?;
                if l == 0 || s as u64 + l as u64 > pixels {
                    return Err(StoreError::Invalid(format!(
                        "run ({s}, {l}) of record ({frame}, {object}) outside the frame"
                    )));
                }
                runs.push((s, l));
            }
            let mut feature = vec![0f32; c];
            r.read_f32_into::<LE>(&mut feature).map_err(t("features"))?;
            records.push(Record {
                frame,
                object,
                region: Rle { runs },
                feature,
            });
        }
        let trailing = bytes.len() - r.position() as usize;
        if trailing != 0 {
            return Err(StoreError::Trailing(trailing));
        }
        Ok(Self {
            c,
            width,
            height,
            complete: flags & FLAG_COMPLETE != 0,
            records,
        })
    }
}

/// Group masks and their features for one frame, in object id order.
/// Overlapping regions violate the store invariant and are rejected.
pub fn export_supervision(
    store: &PixelFeatureStore,
    frame: u32,
) -> Result<(Vec<(u32, Mask)>, Array2<f64>), StoreError> {
    let mut recs: Vec<&Record> = store.records.iter().filter(|r| r.frame == frame).collect();
    if recs.is_empty() {
        return Err(StoreError::FrameAbsent(frame));
    }
    recs.sort_by_key(|r| r.object);
    let (w, h) = (store.width as usize, store.height as usize);
    let mut claimed = Mask::empty(w, h);
    let mut masks = Vec::with_capacity(recs.len());
    let mut features = Array2::zeros((recs.len(), store.c));
    for (i, r) in recs.iter().enumerate() {
        let m = r.region.decode(w, h)?;
        if m.intersection(&claimed) > 0 || masks.iter().any(|(id, _)| *id == r.object) {
            return Err(StoreError::Overlap {
                frame,
                object: r.object,
            });
        }
        claimed.union_with(&m);
        for (j, &v) in r.feature.iter().enumerate() {
            features[(i, j)] = v as f64;
        }
        masks.push((r.object, m));
    }
    Ok((masks, features))
}
