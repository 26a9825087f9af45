//! Scene data model: Gaussian primitives carrying simplex weights over a
//! shared semantic dictionary, plus a vocabulary of named query embeddings.

mod io;
mod synth;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use io::{load_scene, read_scene, save_scene, write_scene, SceneFileError, SCENE_MAGIC, SCENE_VERSION};
pub use synth::{
    make_synthetic_scene, random_scene, region_of_x, synthetic_camera, SynthError,
    SYNTHETIC_EXTENT,
};

/// Default dictionary length.
pub const DEFAULT_K: usize = 128;
/// Default feature dimension for desk-scale runs.
pub const DEFAULT_C: usize = 32;

const UNIT_TOL: f64 = 1e-6;
const SIMPLEX_TOL: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("dictionary shape mismatch: {k} x {c} needs {expected} values, got {found}")]
    DictionaryShape {
        k: usize,
        c: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot normalize atom {0}: zero norm")]
    ZeroAtom(usize),
    #[error("duplicate vocabulary term {0:?}")]
    DuplicateTerm(String),
    #[error("embedding for {term:?} has dimension {found}, expected {expected}")]
    EmbeddingDimension {
        term: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding for {0:?} has zero norm")]
    ZeroEmbedding(String),
}

/// One anisotropic 3D Gaussian with flat color and dictionary weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: [f32; 3],
    /// Unit quaternion, (w, x, y, z).
    pub rotation: [f32; 4],
    /// Per-axis standard deviations in meters.
    pub scale: [f32; 3],
    pub opacity: f32,
    pub color: [f32; 3],
    /// Mixture over dictionary atoms; lives on the K-simplex.
    pub weights: Vec<f32>,
}

impl GaussianPrimitive {
    /// Semantic feature `sum_k w_k d_k` of this primitive.
    pub fn feature(&self, dictionary: &SemanticDictionary) -> Vec<f32> {
        let mut out = vec![0.0f32; dictionary.c()];
        for (k, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &d) in out.iter_mut().zip(dictionary.atom(k)) {
                *o += w * d;
            }
        }
        out
    }
}

/// K atoms of dimension C, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDictionary {
    k: usize,
    c: usize,
    atoms: Vec<f32>,
}

impl SemanticDictionary {
    /// Wraps raw atoms without touching their norms.
    pub fn from_raw(k: usize, c: usize, atoms: Vec<f32>) -> Result<Self, SceneError> {
        if atoms.len() != k * c {
            return Err(SceneError::DictionaryShape {
                k,
                c,
                expected: k * c,
                found: atoms.len(),
            });
        }
        Ok(Self { k, c, atoms })
    }

    /// Builds a dictionary and rescales every atom to unit length.
    pub fn normalized(k: usize, c: usize, mut atoms: Vec<f32>) -> Result<Self, SceneError> {
        if atoms.len() != k * c {
            return Err(SceneError::DictionaryShape {
                k,
                c,
                expected: k * c,
                found: atoms.len(),
            });
        }
        for (i, row) in atoms.chunks_mut(c.max(1)).enumerate() {
            let norm = l2(row);
            if norm == 0.0 {
                return Err(SceneError::ZeroAtom(i));
            }
            row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
        Ok(Self { k, c, atoms })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn atom(&self, k: usize) -> &[f32] {
        &self.atoms[k * self.c..(k + 1) * self.c]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.atoms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyEntry {
    pub term: String,
    pub embedding: Vec<f32>,
}

/// Ordered, uniquely keyed text-term embeddings used for open-vocabulary queries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VocabularyTable {
    entries: Vec<VocabularyEntry>,
}

impl VocabularyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a term; the embedding is normalized to unit length.
    pub fn push(&mut self, term: impl Into<String>, embedding: Vec<f32>) -> Result<(), SceneError> {
        let term = term.into();
        if self.get(&term).is_some() {
            return Err(SceneError::DuplicateTerm(term));
        }
        if let Some(first) = self.entries.first() {
            if first.embedding.len() != embedding.len() {
                return Err(SceneError::EmbeddingDimension {
                    term,
                    expected: first.embedding.len(),
                    found: embedding.len(),
                });
            }
        }
        let norm = l2(&embedding);
        if norm == 0.0 {
            return Err(SceneError::ZeroEmbedding(term));
        }
        let embedding = embedding.iter().map(|&v| (v as f64 / norm) as f32).collect();
        self.entries.push(VocabularyEntry { term, embedding });
        Ok(())
    }

    /// Appends an entry verbatim. Used by the file reader; invariants are
    /// checked later by [`validate_scene`].
    pub(crate) fn push_raw(&mut self, entry: VocabularyEntry) {
        self.entries.push(entry);
    }

    pub fn get(&self, term: &str) -> Option<&VocabularyEntry> {
        self.entries.iter().find(|e| e.term == term)
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.term == term)
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.term.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A complete semantic Gaussian field.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub dictionary: SemanticDictionary,
    pub vocabulary: VocabularyTable,
    pub metadata: BTreeMap<String, String>,
}

impl Scene {
    pub fn new(dictionary: SemanticDictionary) -> Self {
        Self {
            primitives: Vec::new(),
            dictionary,
            vocabulary: VocabularyTable::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.dictionary.k()
    }

    pub fn c(&self) -> usize {
        self.dictionary.c()
    }
}

/// What a validation issue refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Primitive(usize),
    Atom(usize),
    Vocabulary(usize),
    Dictionary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite,
    QuaternionNorm(f64),
    NonPositiveScale,
    OpacityRange,
    ColorRange,
    WeightLength { expected: usize, found: usize },
    NegativeWeight,
    WeightSimplex(f64),
    AtomNorm(f64),
    EmptyDictionary,
    EmbeddingDimension { expected: usize, found: usize },
    EmbeddingNorm(f64),
    DuplicateTerm,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "non-finite value"),
            Violation::QuaternionNorm(n) => write!(f, "quaternion norm {n} is not 1"),
            Violation::NonPositiveScale => write!(f, "scale component <= 0"),
            Violation::OpacityRange => write!(f, "opacity outside [0, 1]"),
            Violation::ColorRange => write!(f, "color channel outside [0, 1]"),
            Violation::WeightLength { expected, found } => {
                write!(f, "weights have length {found}, dictionary K is {expected}")
            }
            Violation::NegativeWeight => write!(f, "negative weight"),
            Violation::WeightSimplex(s) => write!(f, "weights sum to {s}, not 1"),
            Violation::AtomNorm(n) => write!(f, "atom norm {n} is not 1"),
            Violation::EmptyDictionary => write!(f, "dictionary needs K >= 1 and C >= 1"),
            Violation::EmbeddingDimension { expected, found } => {
                write!(f, "embedding dimension {found}, dictionary C is {expected}")
            }
            Violation::EmbeddingNorm(n) => write!(f, "embedding norm {n} is not 1"),
            Violation::DuplicateTerm => write!(f, "duplicate term"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<(Subject, Violation)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    /// Issues attached to one primitive.
    pub fn for_primitive(&self, index: usize) -> impl Iterator<Item = &Violation> {
        self.issues
            .iter()
            .filter(move |(s, _)| *s == Subject::Primitive(index))
            .map(|(_, v)| v)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return writeln!(f, "scene valid");
        }
        for (subject, violation) in &self.issues {
            writeln!(f, "{subject:?}: {violation}")?;
        }
        Ok(())
    }
}

/// Checks every scene invariant and reports each violation. Never fails.
pub fn validate_scene(scene: &Scene) -> ValidationReport {
    let mut issues = Vec::new();
    let k = scene.dictionary.k();
    let c = scene.dictionary.c();

    if k == 0 || c == 0 {
        issues.push((Subject::Dictionary, Violation::EmptyDictionary));
    }
    for atom in 0..k {
        let row = scene.dictionary.atom(atom);
        if row.iter().any(|v| !v.is_finite()) {
            issues.push((Subject::Atom(atom), Violation::NonFinite));
            continue;
        }
        let norm = l2(row);
        if (norm - 1.0).abs() > UNIT_TOL {
            issues.push((Subject::Atom(atom), Violation::AtomNorm(norm)));
        }
    }

    for (i, p) in scene.primitives.iter().enumerate() {
        let subject = Subject::Primitive(i);
        let finite = p
            .position
            .iter()
            .chain(&p.rotation)
            .chain(&p.scale)
            .chain(std::iter::once(&p.opacity))
            .chain(&p.color)
            .chain(&p.weights)
            .all(|v| v.is_finite());
        if !finite {
            issues.push((subject, Violation::NonFinite));
            continue;
        }
        let qn = l2(&p.rotation);
        if (qn - 1.0).abs() > UNIT_TOL {
            issues.push((subject, Violation::QuaternionNorm(qn)));
        }
        if p.scale.iter().any(|&s| s <= 0.0) {
            issues.push((subject, Violation::NonPositiveScale));
        }
        if !(0.0..=1.0).contains(&p.opacity) {
            issues.push((subject, Violation::OpacityRange));
        }
        if p.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            issues.push((subject, Violation::ColorRange));
        }
        if p.weights.len() != k {
            issues.push((
                subject,
                Violation::WeightLength {
                    expected: k,
                    found: p.weights.len(),
                },
            ));
            continue;
        }
        if p.weights.iter().any(|&w| w < 0.0) {
            issues.push((subject, Violation::NegativeWeight));
        }
        let sum: f64 = p.weights.iter().map(|&w| w as f64).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            issues.push((subject, Violation::WeightSimplex(sum)));
        }
    }

    for (j, entry) in scene.vocabulary.entries().iter().enumerate() {
        let subject = Subject::Vocabulary(j);
        if scene.vocabulary.entries()[..j]
            .iter()
            .any(|e| e.term == entry.term)
        {
            issues.push((subject, Violation::DuplicateTerm));
        }
        if entry.embedding.len() != c {
            issues.push((
                subject,
                Violation::EmbeddingDimension {
                    expected: c,
                    found: entry.embedding.len(),
                },
            ));
            continue;
        }
        let norm = l2(&entry.embedding);
        if !norm.is_finite() {
            issues.push((subject, Violation::NonFinite));
        } else if (norm - 1.0).abs() > UNIT_TOL {
            issues.push((subject, Violation::EmbeddingNorm(norm)));
        }
    }

    ValidationReport { issues }
}

pub(crate) fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}
