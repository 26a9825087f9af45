//! `LFS1` scene container: little-endian header followed by flat sections.
//!
//! ```text
//! magic "LFS1" | version u32 | n u64 | K u32 | C u32 | vocab_count u32
//! positions f32*3n | quaternions f32*4n | scales f32*3n | opacities f32*n
//! colors f32*3n | weights f32*nK | atoms f32*KC
//! vocab: (u16 len, utf8 term, f32*C)*vocab_count
//! metadata: u32 pairs, (u32 len, utf8 key, u32 len, utf8 value)*pairs
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::{GaussianPrimitive, Scene, SemanticDictionary, VocabularyEntry, VocabularyTable};

pub const SCENE_MAGIC: [u8; 4] = *b"LFS1";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("bad magic bytes {0:?}, expected \"LFS1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported scene version {0}, expected {SCENE_VERSION}")]
    Version(u32),
    #[error("file truncated in section `{0}`")]
    Truncated(&'static str),
    #[error("inconsistent dimensions: {0}")]
    Inconsistent(String),
    #[error("invalid UTF-8 in section `{0}`")]
    Utf8(&'static str),
    #[error("{0} trailing bytes after metadata")]
    Trailing(usize),
    #[error("string of {len} bytes does not fit the {section} length prefix")]
    TooLong { section: &'static str, len: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene(scene, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneFileError> {
    let bytes = std::fs::read(path)?;
    read_scene(&bytes)
}

fn put_f32s<W: Write>(w: &mut W, vals: impl IntoIterator<Item = f32>) -> io::Result<()> {
    for v in vals {
        w.write_f32::<LE>(v)?;
    }
    Ok(())
}

pub fn write_scene<W: Write>(scene: &Scene, w: &mut W) -> Result<(), SceneFileError> {
    let k = scene.dictionary.k();
    let c = scene.dictionary.c();
    let prims = &scene.primitives;
    if let Some(i) = prims.iter().position(|p| p.weights.len() != k) {
        return Err(SceneFileError::Inconsistent(format!(
            "primitive {i} has {} weights, dictionary K is {k}",
            prims[i].weights.len()
        )));
    }
    if let Some(e) = scene.vocabulary.entries().iter().find(|e| e.embedding.len() != c) {
        return Err(SceneFileError::Inconsistent(format!(
            "term {:?} has dimension {}, dictionary C is {c}",
            e.term,
            e.embedding.len()
        )));
    }

    w.write_all(&SCENE_MAGIC)?;
    w.write_u32::<LE>(SCENE_VERSION)?;
    w.write_u64::<LE>(prims.len() as u64)?;
    w.write_u32::<LE>(k as u32)?;
    w.write_u32::<LE>(c as u32)?;
    w.write_u32::<LE>(scene.vocabulary.len() as u32)?;

    put_f32s(w, prims.iter().flat_map(|p| p.position))?;
    put_f32s(w, prims.iter().flat_map(|p| p.rotation))?;
    put_f32s(w, prims.iter().flat_map(|p| p.scale))?;
    put_f32s(w, prims.iter().map(|p| p.opacity))?;
    put_f32s(w, prims.iter().flat_map(|p| p.color))?;
    put_f32s(w, prims.iter().flat_map(|p| p.weights.iter().copied()))?;
    put_f32s(w, scene.dictionary.as_slice().iter().copied())?;

    for entry in scene.vocabulary.entries() {
        let bytes = entry.term.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| SceneFileError::TooLong {
            section: "vocabulary",
            len: bytes.len(),
        })?;
        w.write_u16::<LE>(len)?;
        w.write_all(bytes)?;
        put_f32s(w, entry.embedding.iter().copied())?;
    }

    w.write_u32::<LE>(scene.metadata.len() as u32)?;
    for (key, value) in &scene.metadata {
        for s in [key, value] {
            let len = u32::try_from(s.len()).map_err(|_| SceneFileError::TooLong {
                section: "metadata",
                len: s.len(),
            })?;
            w.write_u32::<LE>(len)?;
            w.write_all(s.as_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    fn need(&self, bytes: u128, section: &'static str) -> Result<(), SceneFileError> {
        if bytes > self.remaining() as u128 {
            Err(SceneFileError::Truncated(section))
        } else {
            Ok(())
        }
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, SceneFileError> {
        self.cur.read_u16::<LE>().map_err(|_| SceneFileError::Truncated(section))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, SceneFileError> {
        self.cur.read_u32::<LE>().map_err(|_| SceneFileError::Truncated(section))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64, SceneFileError> {
        self.cur.read_u64::<LE>().map_err(|_| SceneFileError::Truncated(section))
    }

    fn f32s(&mut self, count: usize, section: &'static str) -> Result<Vec<f32>, SceneFileError> {
        self.need(count as u128 * 4, section)?;
        let mut out = vec![0.0f32; count];
        self.cur
            .read_f32_into::<LE>(&mut out)
            .map_err(|_| SceneFileError::Truncated(section))?;
        Ok(out)
    }

    fn string(&mut self, len: usize, section: &'static str) -> Result<String, SceneFileError> {
        self.need(len as u128, section)?;
        let mut buf = vec![0u8; len];
        self.cur
            .read_exact(&mut buf)
            .map_err(|_| SceneFileError::Truncated(section))?;
        String::from_utf8(buf).map_err(|_| SceneFileError::Utf8(section))
    }
}

pub fn read_scene(bytes: &[u8]) -> Result<Scene, SceneFileError> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
    };
    let mut magic = [0u8; 4];
    r.cur
        .read_exact(&mut magic)
        .map_err(|_| SceneFileError::Truncated("header"))?;
    if magic != SCENE_MAGIC {
        return Err(SceneFileError::BadMagic(magic));
    }
    let version = r.u32("header")?;
    if version != SCENE_VERSION {
        return Err(SceneFileError::Version(version));
    }
    let n = r.u64("header")?;
    let k = r.u32("header")? as usize;
    let c = r.u32("header")? as usize;
    let vocab_count = r.u32("header")? as usize;
    if k == 0 || c == 0 {
        return Err(SceneFileError::Inconsistent(format!(
            "dictionary must have K >= 1 and C >= 1, header says K={k}, C={c}"
        )));
    }
    // Every primitive needs at least 14 + K floats; reject absurd counts before allocating.
    r.need(n as u128 * (14 + k as u128) * 4, "positions")
        .map_err(|_| SceneFileError::Truncated(truncated_section(n, k, r.remaining())))?;
    let n = n as usize;

    let positions = r.f32s(3 * n, "positions")?;
    let rotations = r.f32s(4 * n, "quaternions")?;
    let scales = r.f32s(3 * n, "scales")?;
    let opacities = r.f32s(n, "opacities")?;
    let colors = r.f32s(3 * n, "colors")?;
    let weights = r.f32s(n * k, "weights")?;
    let atoms = r.f32s(k * c, "dictionary")?;

    let primitives = (0..n)
        .map(|i| GaussianPrimitive {
            position: std::array::from_fn(|j| positions[3 * i + j]),
            rotation: std::array::from_fn(|j| rotations[4 * i + j]),
            scale: std::array::from_fn(|j| scales[3 * i + j]),
            opacity: opacities[i],
            color: std::array::from_fn(|j| colors[3 * i + j]),
            weights: weights[i * k..(i + 1) * k].to_vec(),
        })
        .collect();
    let dictionary =
        SemanticDictionary::from_raw(k, c, atoms).map_err(|e| SceneFileError::Inconsistent(e.to_string()))?;

    let mut vocabulary = VocabularyTable::new();
    for _ in 0..vocab_count {
        let len = r.u16("vocabulary")? as usize;
        let term = r.string(len, "vocabulary")?;
        let embedding = r.f32s(c, "vocabulary")?;
        vocabulary.push_raw(VocabularyEntry { term, embedding });
    }

    let pairs = r.u32("metadata")? as usize;
    let mut metadata = BTreeMap::new();
    for _ in 0..pairs {
        let klen = r.u32("metadata")? as usize;
        let key = r.string(klen, "metadata")?;
        let vlen = r.u32("metadata")? as usize;
        let value = r.string(vlen, "metadata")?;
        metadata.insert(key, value);
    }
    if r.remaining() != 0 {
        return Err(SceneFileError::Trailing(r.remaining()));
    }

    Ok(Scene {
        primitives,
        dictionary,
        vocabulary,
        metadata,
    })
}

/// Names the first per-primitive section that cannot fit in `remaining` bytes.
fn truncated_section(n: u64, k: usize, remaining: usize) -> &'static str {
    let sections: [(&'static str, u128); 6] = [
        ("positions", 3),
        ("quaternions", 4),
        ("scales", 3),
        ("opacities", 1),
        ("colors", 3),
        ("weights", k as u128),
    ];
    let mut used = 0u128;
    for (name, per) in sections {
        used += n as u128 * per * 4;
        if used > remaining as u128 {
            return name;
        }
    }
    "weights"
}
