//! Render and query operations shared by the `render` / `query` commands
//! and the HTTP service.

use langfield::eval::{
    heatmap_png, open_vocab_segment, similarity_heatmap, write_label_png, EvalError, LabelImage,
    LabelPngError,
};
use langfield::raster::{alpha_png, rgb_png, RenderError};
use langfield::{assemble_features, render, Camera, RenderOptions, Scene, VocabularyTable};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown term {term:?}; available terms: {}", available.join(", "))]
    UnknownTerm { term: String, available: Vec<String> },
    #[error("embedding has {found} values, scene C is {expected}")]
    EmbeddingWidth { expected: usize, found: usize },
    #[error("embedding must be finite and nonzero")]
    BadEmbedding,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Png(#[from] LabelPngError),
}

impl QueryError {
    /// Caused by the request rather than the server.
    pub fn is_client_error(&self) -> bool {
        matches!(
            self,
            QueryError::UnknownTerm { .. }
                | QueryError::EmbeddingWidth { .. }
                | QueryError::BadEmbedding
                | QueryError::Render(RenderError::Camera(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryTarget {
    Term(String),
    Embedding(Vec<f32>),
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub width: usize,
    pub height: usize,
    /// Cosine per pixel, -1 below the alpha floor.
    pub heatmap: Vec<f64>,
    /// Vocabulary segmentation of the same view.
    pub labels: LabelImage,
    /// Largest similarity over pixels above the alpha floor.
    pub max_similarity: Option<f64>,
    /// The same maximum for every vocabulary term.
    pub per_term_max: Vec<(String, Option<f64>)>,
}

impl QueryResult {
    pub fn heatmap_png(&self) -> Result<Vec<u8>, QueryError> {
        Ok(heatmap_png(self.width, self.height, &self.heatmap)?)
    }

    pub fn labels_png(&self) -> Result<Vec<u8>, QueryError> {
        Ok(write_label_png(&self.labels)?)
    }
}

/// RGB and alpha PNGs of one view.
pub fn render_pngs(
    scene: &Scene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<(Vec<u8>, Vec<u8>), RenderError> {
    let out = render::<f32>(scene, camera, options)?;
    Ok((rgb_png(&out), alpha_png(&out)))
}

fn max_valid(heatmap: &[f64], alpha: &[f32], floor: f64) -> Option<f64> {
    heatmap
        .iter()
        .zip(alpha)
        .filter(|(_, &a)| a as f64 >= floor)
        .map(|(&s, _)| s)
        .reduce(f64::max)
}

pub fn run_query(
    scene: &Scene,
    camera: &Camera,
    target: &QueryTarget,
    alpha_floor: f64,
    options: &RenderOptions,
) -> Result<QueryResult, QueryError> {
    let embedding: Vec<f32> = match target {
        QueryTarget::Term(term) => match scene.vocabulary.get(term) {
            Some(e) => e.embedding.clone(),
            None => {
                return Err(QueryError::UnknownTerm {
                    term: term.clone(),
                    available: scene.vocabulary.terms().map(String::from).collect(),
                })
            }
        },
        QueryTarget::Embedding(v) => {
            if v.len() != scene.c() {
                return Err(QueryError::EmbeddingWidth {
                    expected: scene.c(),
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) || v.iter().all(|&x| x == 0.0) {
                return Err(QueryError::BadEmbedding);
            }
            v.clone()
        }
    };
    let out = render::<f32>(scene, camera, options)?;
    let features = assemble_features(&out.weight_maps, &scene.dictionary)?;
    let heatmap = similarity_heatmap(&features, &embedding, &out.alpha, alpha_floor)?;
    let max_similarity = max_valid(&heatmap, &out.alpha, alpha_floor);
    let per_term_max = scene
        .vocabulary
        .entries()
        .iter()
        .map(|e| {
            let h = similarity_heatmap(&features, &e.embedding, &out.alpha, alpha_floor)?;
            Ok((e.term.clone(), max_valid(&h, &out.alpha, alpha_floor)))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let labels = if scene.vocabulary.is_empty() {
        let mut single = VocabularyTable::new();
        single
            .push("query", embedding)
            .map_err(|_| QueryError::BadEmbedding)?;
        open_vocab_segment(&features, &single, &out.alpha, alpha_floor)?
    } else {
        open_vocab_segment(&features, &scene.vocabulary, &out.alpha, alpha_floor)?
    };
    Ok(QueryResult {
        width: out.width,
        height: out.height,
        heatmap,
        labels,
        max_similarity,
        per_term_max,
    })
}
