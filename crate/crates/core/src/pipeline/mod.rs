//! Continuous label collection: per-frame mask generation, suppression of
//! redundant masks, detection of new objects against propagated masks, and
//! the pixel-feature store built from the tracked masks.

mod adapter;
mod collect;
mod mask;
mod store;
mod synthetic;

use thiserror::Error;

pub use adapter::{AdapterError, SubprocessAdapter, ADAPTER_PROTOCOL_VERSION};
pub use collect::{
    detect_new_objects, post_nms_filter, run_collection, CollectionConfig, CollectionFailure,
    CollectionOutput, FrameStats, DEFAULT_COVERAGE_THRESHOLD, DEFAULT_NMS_IOU,
};
pub use mask::{Frame, Mask, MaskSet, MaskSource};
pub use store::{
    export_supervision, PixelFeatureStore, Record, Rle, StoreError, STORE_MAGIC, STORE_VERSION,
};
pub use synthetic::{
    moving_rectangles, ColorComponentGenerator, ColorEmbedder, ColorTrackPropagator,
    ConstantEmbedder, SequenceSpec,
};

/// Produces candidate object masks for one frame.
pub trait MaskGenerator {
    fn name(&self) -> &str;
    fn generate(&mut self, frame: &Frame) -> Result<Vec<Mask>, String>;
}

/// Carries tracked object masks from one frame to the next. Objects that
/// vanish may be dropped or returned with an empty mask.
pub trait MaskPropagator {
    fn name(&self) -> &str;
    fn propagate(
        &mut self,
        objects: &[(u32, Mask)],
        from: &Frame,
        to: &Frame,
    ) -> Result<Vec<(u32, Mask)>, String>;
}

/// Maps a masked frame region to a language feature.
pub trait PixelEmbedder: Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, frame: &Frame, mask: &Mask) -> Result<Vec<f32>, String>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("frame {frame}: {component} failed: {message}")]
    Component {
        frame: usize,
        component: String,
        message: String,
    },
    #[error("no frames to process")]
    NoFrames,
    #[error("frame {frame} is {got:?}, expected {expected:?}")]
    Resolution {
        frame: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("{0}")]
    Config(String),
}
