use langfield::pipeline::{
    export_supervision, moving_rectangles, run_collection, ColorComponentGenerator, ColorEmbedder,
    ColorTrackPropagator, CollectionConfig, ConstantEmbedder, Frame, Mask, MaskGenerator,
    MaskPropagator, PipelineError, PixelFeatureStore, SequenceSpec,
};

fn collect(spec: &SequenceSpec) -> langfield::pipeline::CollectionOutput {
    let frames = moving_rectangles(spec);
    run_collection(
        &frames,
        &mut ColorComponentGenerator,
        &mut ColorTrackPropagator,
        &ColorEmbedder::new(16, 7),
        &CollectionConfig::default(),
    )
    .unwrap()
}

#[test]
fn two_rectangles_keep_two_stable_ids() {
    let out = collect(&SequenceSpec::default());
    assert!(out.store.complete);
    assert_eq!(out.store.object_ids(), vec![0, 1]);
    assert_eq!(out.stats[0].new_ids, vec![0, 1]);
    assert!(out.stats[1..].iter().all(|s| s.new_ids.is_empty()));
    // Same color under the same id on every frame.
    let frames = moving_rectangles(&SequenceSpec::default());
    for set in &out.stored_masks {
        assert_eq!(set.masks.len(), 2);
        for (id, m) in &set.masks {
            let p = m.bits.iter().position(|&b| b).unwrap();
            let color = frames[set.frame_index].pixel(p);
            let first = &out.stored_masks[0].masks[*id as usize].1;
            let p0 = first.bits.iter().position(|&b| b).unwrap();
            assert_eq!(color, frames[0].pixel(p0));
        }
    }
}

#[test]
fn entering_rectangle_gets_new_id_at_its_frame() {
    let out = collect(&SequenceSpec {
        third_object_frame: Some(5),
        ..Default::default()
    });
    for s in &out.stats {
        match s.frame {
            0 => assert_eq!(s.new_ids, vec![0, 1]),
            5 => assert_eq!(s.new_ids, vec![2]),
            _ => assert!(s.new_ids.is_empty(), "frame {}", s.frame),
        }
        assert_eq!(s.masks, if s.frame >= 5 { 3 } else { 2 });
    }
    assert_eq!(out.store.object_ids(), vec![0, 1, 2]);
}

#[test]
fn reruns_write_identical_bytes() {
    let spec = SequenceSpec {
        third_object_frame: Some(5),
        ..Default::default()
    };
    let a = collect(&spec).store.to_bytes().unwrap();
    let b = collect(&spec).store.to_bytes().unwrap();
    assert_eq!(a, b);
}

#[test]
fn coverage_is_exact_pixel_count() {
    let out = collect(&SequenceSpec::default());
    for (s, set) in out.stats.iter().zip(&out.stored_masks) {
        let mut union = Mask::empty(64, 48);
        for (_, m) in &set.masks {
            union.union_with(m);
        }
        assert_eq!(s.covered_pixels, union.area());
        assert_eq!(s.total_pixels, 64 * 48);
    }
    assert!(out.summary_table().contains("Masks/Image"));
}

struct OneMask;

impl MaskGenerator for OneMask {
    fn name(&self) -> &str {
        "one"
    }
    fn generate(&mut self, f: &Frame) -> Result<Vec<Mask>, String> {
        Ok(vec![Mask::rect(f.width, f.height, 1, 1, 3, 2)])
    }
}

#[test]
fn single_frame_single_mask() {
    let frame = Frame {
        index: 0,
        width: 4,
        height: 3,
        rgb: vec![9; 36],
    };
    let feature = vec![0.25f32, -1.0, 3.0];
    let out = run_collection(
        &[frame],
        &mut OneMask,
        &mut ColorTrackPropagator,
        &ConstantEmbedder {
            feature: feature.clone(),
        },
        &CollectionConfig::default(),
    )
    .unwrap();
    assert_eq!(out.store.records.len(), 1);
    assert_eq!(out.store.records[0].feature, feature);
    let (masks, f) = export_supervision(&out.store, 0).unwrap();
    assert_eq!(masks, vec![(0, Mask::rect(4, 3, 1, 1, 3, 2))]);
    assert_eq!(f.row(0).to_vec(), vec![0.25, -1.0, 3.0]);
}

struct FailsAt(usize);

impl MaskPropagator for FailsAt {
    fn name(&self) -> &str {
        "flaky"
    }
    fn propagate(
        &mut self,
        objects: &[(u32, Mask)],
        from: &Frame,
        to: &Frame,
    ) -> Result<Vec<(u32, Mask)>, String> {
        if to.index == self.0 {
            return Err("boom".into());
        }
        ColorTrackPropagator.propagate(objects, from, to)
    }
}

#[test]
fn component_failure_names_frame_and_flushes_partial_store() {
    let frames = moving_rectangles(&SequenceSpec::default());
    let err = run_collection(
        &frames,
        &mut ColorComponentGenerator,
        &mut FailsAt(4),
        &ColorEmbedder::new(8, 1),
        &CollectionConfig::default(),
    )
    .unwrap_err();
    assert_eq!(
        err.error,
        PipelineError::Component {
            frame: 4,
            component: "flaky".into(),
            message: "boom".into()
        }
    );
    assert!(!err.partial.complete);
    assert_eq!(err.partial.frames(), vec![0, 1, 2, 3]);
    let back = PixelFeatureStore::from_bytes(&err.partial.to_bytes().unwrap()).unwrap();
    assert!(!back.complete);
    assert_eq!(back, err.partial);
}

#[test]
fn empty_sequence_is_an_error() {
    let err = run_collection(
        &[],
        &mut ColorComponentGenerator,
        &mut ColorTrackPropagator,
        &ColorEmbedder::new(4, 0),
        &CollectionConfig::default(),
    )
    .unwrap_err();
    assert_eq!(err.error, PipelineError::NoFrames);
}

#[test]
fn export_then_reingest_is_identity() {
    let out = collect(&SequenceSpec::default());
    let mut again = PixelFeatureStore::new(16, 64, 48);
    for f in out.store.frames() {
        let (masks, feats) = export_supervision(&out.store, f).unwrap();
        again.ingest(f, &masks, &feats).unwrap();
    }
    again.complete = true;
    assert_eq!(again, out.store);
}
