use proptest::prelude::*;
use salnet::geometry::{physical_to_normalized, Axis, GridSpec, SalParams, PARAM_NAMES};
use salnet::protocol::{
    adapt_intersession, displacement, evaluate_majority, extract_features, majority_vote, random_heldout,
    run_perturbation_experiment, train_full, ExperimentConfig, FeatureSet, PipelineConfig,
};
use salnet::rng::stream;
use salnet::sal::{FreezeMask, SalLayer};
use salnet::synth::{generate_sessions, PerturbationRanges, SynthSpec};

fn sessions(shift: SalParams) -> (FeatureSet, FeatureSet, ExperimentConfig) {
    let spec = SynthSpec {
        reps_per_gesture: 3,
        segment_seconds: 0.5,
        ..SynthSpec::default_for(3)
    };
    let s = generate_sessions(&spec, &[SalParams::identity(), shift]).unwrap();
    let cfg = ExperimentConfig {
        pipeline: PipelineConfig { frame_stride: 4, ..PipelineConfig::default() },
        ..ExperimentConfig::default()
    };
    let a = extract_features(&s[0], &cfg.pipeline).unwrap();
    let b = extract_features(&s[1], &cfg.pipeline).unwrap();
    (a, b, cfg)
}

fn one_column() -> SalParams {
    SalParams { tx: GridSpec::csl().step(Axis::X), ..SalParams::identity() }
}

#[test]
fn frozen_scalars_stay_bit_identical() {
    let (train, adapt, cfg) = sessions(one_column());
    let model = train_full(&train, &cfg).unwrap();
    let checksum = model.checksum();
    let start = SalLayer {
        params: SalParams { phi: 0.01, sy: 1.02, ..SalParams::identity() },
        ..SalLayer::new(train.grid)
    };
    for trainable in [&["tx", "bias"][..], &["phi", "sx", "shy"][..], &PARAM_NAMES[..]] {
        let sal = start.clone().with_freeze(FreezeMask::trainable_only(trainable).unwrap());
        let adapted = adapt_intersession(&model, &sal, &adapt.reps, &cfg.train).unwrap();
        let before = sal.param_vector();
        let after = adapted.param_vector();
        let mask = sal.trainable_mask();
        for i in 0..before.len() {
            if !mask[i] {
                assert_eq!(before[i].to_bits(), after[i].to_bits(), "entry {i} moved under {trainable:?}");
            }
        }
        assert_ne!(before, after, "nothing trained under {trainable:?}");
        assert_eq!(model.checksum(), checksum);
    }
}

#[test]
fn fully_frozen_layer_gives_zero_shot_accuracy() {
    let (train, adapt, cfg) = sessions(one_column());
    let model = train_full(&train, &cfg).unwrap();
    let base = SalLayer::new(train.grid);
    let frozen = base.clone().with_freeze(FreezeMask::ALL);
    let adapted = adapt_intersession(&model, &frozen, &adapt.reps, &cfg.train).unwrap();
    assert_eq!(adapted.param_vector(), base.param_vector());
    let zero_shot = evaluate_majority(&model, &base, &adapt.reps, cfg.window, adapt.frame_rate).unwrap();
    let after = evaluate_majority(&model, &adapted, &adapt.reps, cfg.window, adapt.frame_rate).unwrap();
    assert_eq!(zero_shot, after);
}

#[test]
fn identity_perturbation_keeps_intrasession_accuracy() {
    let (train, _, cfg) = sessions(SalParams::identity());
    let r = run_perturbation_experiment(&train, &cfg, &PerturbationRanges::identity(), 2).unwrap();
    let intra = r.summary["intrasession_mv_accuracy"];
    for t in &r.trials {
        assert_eq!(t.perturbation, SalParams::identity());
        assert_eq!(t.mv_accuracy_before, intra);
        assert_eq!(t.displacement_before_mm, 0.0);
        assert!(t.mv_accuracy_after >= 0.8 * intra);
    }
    assert_eq!(r.summary["trials_recovered_80pct"], 2.0);
}

#[test]
fn heldout_choice_is_seeded() {
    let (train, _, _) = sessions(SalParams::identity());
    let a = random_heldout(&train, &mut stream(4, &[1]));
    let b = random_heldout(&train, &mut stream(4, &[1]));
    assert_eq!(a, b);
    assert_eq!(a.len(), train.n_classes);
    assert!(a.iter().all(|&r| r < 3));
}

/// Mean electrode displacement of a pure rotation, one electrode at a time.
fn rotation_oracle(g: &GridSpec, phi: f64) -> f64 {
    let half_w = (g.width - 1) as f64 / 2.0;
    let half_h = (g.height - 1) as f64 / 2.0;
    let mut total = 0.0;
    for r in 0..g.height {
        for c in 0..g.width {
            let x = c as f64 / half_w - 1.0;
            let y = r as f64 / half_h - 1.0;
            let xr = phi.cos() * x - phi.sin() * y;
            let yr = phi.sin() * x + phi.cos() * y;
            let dx = (xr - x) * half_w * g.ied_mm;
            let dy = (yr - y) * half_h * g.ied_mm;
            total += dx.hypot(dy);
        }
    }
    total / g.len() as f64
}

proptest! {
    #[test]
    fn clear_majorities_win(label in 0usize..6, others in prop::collection::vec(0usize..6, 0..20), extra in 1usize..5) {
        let mut preds: Vec<usize> = others.clone();
        preds.extend(std::iter::repeat_n(label, others.len() + extra));
        prop_assert_eq!(majority_vote(&preds), Some(label));
    }

    #[test]
    fn rotation_displacement_matches_per_electrode_sum(phi in -0.5..0.5f64, h in 2usize..9, w in 2usize..30) {
        let g = GridSpec::new(h, w, 10.0, Axis::X).unwrap();
        let d = displacement(&g, &SalParams { phi, ..SalParams::identity() }).unwrap();
        prop_assert!((d - rotation_oracle(&g, phi)).abs() < 1e-9);
    }

    #[test]
    fn translation_displacement_ignores_resolution(mm in -25.0..25.0f64, h in 2usize..9, w in 2usize..30, ied in 5.0..12.0f64) {
        let g = GridSpec::new(h, w, ied, Axis::X).unwrap();
        let tx = physical_to_normalized(mm, Axis::X, &g).unwrap();
        let d = displacement(&g, &SalParams { tx, ..SalParams::identity() }).unwrap();
        prop_assert!((d - mm.abs()).abs() < 1e-9);
    }
}

#[test]
fn majority_vote_of_nothing_is_none() {
    assert_eq!(majority_vote(&[]), None);
}
