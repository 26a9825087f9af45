//! Semantic Gaussian fields: Gaussian primitives with sparse weights over a
//! shared semantic dictionary, rendered into RGB, per-atom weight maps and
//! language-feature images, plus the grouping, aggregation and label
//! collection machinery that produces such fields.

pub mod autodiff;
pub mod camera;
pub mod gradcheck;
pub mod eval;
pub mod experiments;
pub mod grouping;
pub mod lfa;
pub mod pipeline;
pub mod raster;
pub mod real;
pub mod scene;

pub use camera::{Camera, CameraSpec};
pub use raster::{
    assemble_features, render, render_features_direct, FeatureImage, RenderOptions, RenderOutput,
    WeightMapStack,
};
pub use real::Real;
pub use scene::{
    load_scene, make_synthetic_scene, save_scene, validate_scene, GaussianPrimitive, Scene,
    SemanticDictionary, ValidationReport, VocabularyTable,
};
