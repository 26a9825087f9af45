use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::store::{PixelFeatureStore, Record, Rle};
use super::{Frame, Mask, MaskGenerator, MaskPropagator, MaskSet, MaskSource, PipelineError, PixelEmbedder};

pub const DEFAULT_NMS_IOU: f64 = 0.8;
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.5;

/// Greedy suppression in descending area order (ties by ascending id): a
/// mask is dropped when its IoU with an already kept mask exceeds
/// `iou_threshold`. The result keeps that order.
pub fn post_nms_filter(masks: &MaskSet, iou_threshold: f64) -> MaskSet {
    let areas: Vec<usize> = masks.masks.iter().map(|(_, m)| m.area()).collect();
    let mut order: Vec<usize> = (0..masks.masks.len()).collect();
    order.sort_by(|&a, &b| {
        areas[b]
            .cmp(&areas[a])
            .then(masks.masks[a].0.cmp(&masks.masks[b].0))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let m = &masks.masks[i].1;
        if kept.iter().all(|&k| masks.masks[k].1.iou(m) <= iou_threshold) {
            kept.push(i);
        }
    }
    MaskSet {
        frame_index: masks.frame_index,
        masks: kept.into_iter().map(|i| masks.masks[i].clone()).collect(),
        source: masks.source,
    }
}

/// Candidates whose fraction of pixels covered by the union of propagated
/// masks is strictly below `coverage_threshold`. Empty candidates are never
/// new.
pub fn detect_new_objects(
    candidates: &MaskSet,
    propagated: &MaskSet,
    coverage_threshold: f64,
) -> Vec<Mask> {
    let Some((_, first)) = candidates.masks.first() else {
        return Vec::new();
    };
    let mut union = Mask::empty(first.width, first.height);
    for (_, m) in &propagated.masks {
        union.union_with(m);
    }
    candidates
        .masks
        .iter()
        .filter(|(_, m)| {
            let area = m.area();
            area > 0 && (m.intersection(&union) as f64 / area as f64) < coverage_threshold
        })
        .map(|(_, m)| m.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectionConfig {
    pub nms_iou: f64,
    pub coverage_threshold: f64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            nms_iou: DEFAULT_NMS_IOU,
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame: usize,
    pub candidates: usize,
    pub after_nms: usize,
    /// Ids first seen on this frame.
    pub new_ids: Vec<u32>,
    /// Object masks stored for this frame.
    pub masks: usize,
    pub covered_pixels: usize,
    pub total_pixels: usize,
}

impl FrameStats {
    pub fn coverage(&self) -> f64 {
        self.covered_pixels as f64 / self.total_pixels as f64
    }
}

#[derive(Debug, Clone)]
pub struct CollectionOutput {
    pub store: PixelFeatureStore,
    pub stats: Vec<FrameStats>,
    /// Disjoint object masks per frame, in id order.
    pub stored_masks: Vec<MaskSet>,
}

impl CollectionOutput {
    /// Run-level statistics: images, masks per image, coverage.
    pub fn summary_table(&self) -> String {
        summary_table(&self.stats)
    }
}

pub(crate) fn summary_table(stats: &[FrameStats]) -> String {
    let n = stats.len().max(1) as f64;
    let masks: usize = stats.iter().map(|s| s.masks).sum();
    let covered: usize = stats.iter().map(|s| s.covered_pixels).sum();
    let total: usize = stats.iter().map(|s| s.total_pixels).sum();
    let ids: usize = stats.iter().map(|s| s.new_ids.len()).sum();
    let mut out = String::new();
    let _ = writeln!(out, "{:<16}{:>12}", "Images", stats.len());
    let _ = writeln!(out, "{:<16}{:>12}", "Objects", ids);
    let _ = writeln!(out, "{:<16}{:>12.2}", "Masks/Image", masks as f64 / n);
    let pct = if total == 0 { 0.0 } else { 100.0 * covered as f64 / total as f64 };
    let _ = writeln!(out, "{:<16}{:>12.2}", "Coverage (%)", pct);
    out
}

/// A run that stopped early; `partial` holds every record produced before
/// the failure and is marked incomplete.
#[derive(Debug, Clone)]
pub struct CollectionFailure {
    pub error: PipelineError,
    pub partial: PixelFeatureStore,
    pub stats: Vec<FrameStats>,
}

fn component_error(frame: usize, component: &str, message: String) -> PipelineError {
    PipelineError::Component {
        frame,
        component: component.to_string(),
        message,
    }
}

fn check_masks(frame: &Frame, masks: &[Mask], component: &str) -> Result<(), PipelineError> {
    for m in masks {
        if (m.width, m.height) != (frame.width, frame.height) || m.bits.len() != frame.pixels() {
            return Err(component_error(
                frame.index,
                component,
                format!("returned a {}x{} mask for a {}x{} frame", m.width, m.height, frame.width, frame.height),
            ));
        }
    }
    Ok(())
}

/// Tracks objects through `frames` and stores one feature per object mask
/// per frame.
pub fn run_collection(
    frames: &[Frame],
    generator: &mut dyn MaskGenerator,
    propagator: &mut dyn MaskPropagator,
    embedder: &dyn PixelEmbedder,
    config: &CollectionConfig,
) -> Result<CollectionOutput, Box<CollectionFailure>> {
    let (w, h) = match frames.first() {
        Some(f) => (f.width, f.height),
        None => {
            return Err(Box::new(CollectionFailure {
                error: PipelineError::NoFrames,
                partial: PixelFeatureStore::new(embedder.dim(), 0, 0),
                stats: Vec::new(),
            }))
        }
    };
    let mut stats = Vec::with_capacity(frames.len());
    let mut stored = Vec::with_capacity(frames.len());
    let tracked = track(frames, generator, propagator, config, &mut stats, &mut stored);
    let (records, embed_error) = embed_all(frames, &stored, embedder);
    let mut store = PixelFeatureStore::new(embedder.dim(), w as u32, h as u32);
    store.records = records;
    match tracked.err().or(embed_error) {
        None => {
            store.complete = true;
            Ok(CollectionOutput {
                store,
                stats,
                stored_masks: stored,
            })
        }
        Some(error) => Err(Box::new(CollectionFailure {
            error,
            partial: store,
            stats,
        })),
    }
}

fn track(
    frames: &[Frame],
    generator: &mut dyn MaskGenerator,
    propagator: &mut dyn MaskPropagator,
    config: &CollectionConfig,
    stats: &mut Vec<FrameStats>,
    stored: &mut Vec<MaskSet>,
) -> Result<(), PipelineError> {
    let (w, h) = (frames[0].width, frames[0].height);
    let mut next_id = 0u32;
    let mut tracked: Vec<(u32, Mask)> = Vec::new();
    for (t, frame) in frames.iter().enumerate() {
        if (frame.width, frame.height) != (w, h) || frame.rgb.len() != 3 * w * h {
            return Err(PipelineError::Resolution {
                frame: t,
                got: (frame.width, frame.height),
                expected: (w, h),
            });
        }
        let candidates = generator
            .generate(frame)
            .map_err(|e| component_error(t, generator.name(), e))?;
        check_masks(frame, &candidates, generator.name())?;
        let candidate_count = candidates.len();
        let candidates = MaskSet {
            frame_index: t,
            masks: candidates
                .into_iter()
                .filter(|m| !m.is_empty())
                .enumerate()
                .map(|(i, m)| (i as u32, m))
                .collect(),
            source: MaskSource::Generated,
        };
        let filtered = post_nms_filter(&candidates, config.nms_iou);

        let mut propagated = if t == 0 {
            Vec::new()
        } else {
            propagator
                .propagate(&tracked, &frames[t - 1], frame)
                .map_err(|e| component_error(t, propagator.name(), e))?
        };
        let prop_masks: Vec<Mask> = propagated.iter().map(|(_, m)| m.clone()).collect();
        check_masks(frame, &prop_masks, propagator.name())?;
        for (id, _) in &propagated {
            if !tracked.iter().any(|(k, _)| k == id) {
                return Err(component_error(
                    t,
                    propagator.name(),
                    format!("returned unknown object id {id}"),
                ));
            }
        }
        propagated.retain(|(_, m)| !m.is_empty());
        propagated.sort_by_key(|(id, _)| *id);
        propagated.dedup_by_key(|(id, _)| *id);
        let prop_set = MaskSet {
            frame_index: t,
            masks: propagated,
            source: MaskSource::Propagated,
        };

        let new = detect_new_objects(&filtered, &prop_set, config.coverage_threshold);
        let mut new_ids = Vec::with_capacity(new.len());
        tracked = prop_set.masks;
        for m in new {
            new_ids.push(next_id);
            tracked.push((next_id, m));
            next_id += 1;
        }

        // Propagated masks claim pixels first, then new objects in id order.
        let mut claimed = Mask::empty(w, h);
        let mut masks = Vec::with_capacity(tracked.len());
        for (id, m) in &tracked {
            let mut own = m.clone();
            own.subtract(&claimed);
            claimed.union_with(&own);
            if !own.is_empty() {
                masks.push((*id, own));
            }
        }
        stats.push(FrameStats {
            frame: t,
            candidates: candidate_count,
            after_nms: filtered.masks.len(),
            new_ids,
            masks: masks.len(),
            covered_pixels: claimed.area(),
            total_pixels: w * h,
        });
        stored.push(MaskSet {
            frame_index: t,
            masks,
            source: if t == 0 { MaskSource::Generated } else { MaskSource::Propagated },
        });
    }
    Ok(())
}

/// Embeds every stored (frame, object) mask in parallel and appends the
/// records in frame, then id, order. Stops at the first failure.
fn embed_all(
    frames: &[Frame],
    stored: &[MaskSet],
    embedder: &dyn PixelEmbedder,
) -> (Vec<Record>, Option<PipelineError>) {
    let jobs: Vec<(usize, u32, &Mask)> = stored
        .iter()
        .flat_map(|set| set.masks.iter().map(move |(id, m)| (set.frame_index, *id, m)))
        .collect();
    let results: Vec<Result<Record, PipelineError>> = jobs
        .par_iter()
        .map(|&(t, id, m)| {
            let feature = embedder
                .embed(&frames[t], m)
                .map_err(|e| component_error(t, embedder.name(), e))?;
            if feature.len() != embedder.dim() || feature.iter().any(|v| !v.is_finite()) {
                return Err(component_error(
                    t,
                    embedder.name(),
                    format!("feature has {} values, expected {} finite", feature.len(), embedder.dim()),
                ));
            }
            Ok(Record {
                frame: t as u32,
                object: id,
                region: Rle::encode(m),
                feature,
            })
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => return (records, Some(e)),
        }
    }
    (records, None)
}
