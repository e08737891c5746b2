use std::sync::Arc;

use lesionseg_core::expert::{ExpertConfig, IdealExpert};
use lesionseg_core::phantom::{generate_phantom, generate_phantom_set, write_phantom_set, Ellipsoid, PhantomSetSpec, PhantomSpec};
use lesionseg_core::runner::{
    load_report, replay, run_experiment, run_scan, run_system1, run_system2, run_system3, ExperimentConfig,
    RunSettings, SegmenterBinding, SegmenterSettings, SystemSpec,
};
use lesionseg_core::segment::{ConservativeRefiner, NullSegmenter, OracleRefiner, ThresholdSegmenter};
use lesionseg_core::{Dims, SessionConfig, Topology};

fn settings(topology: Topology, iterations: usize, seg: SegmenterBinding) -> RunSettings {
    RunSettings {
        system: SystemSpec::from_cli(topology, iterations, seg),
        session: SessionConfig::default(),
        expert: ExpertConfig::default(),
        segmenters: SegmenterSettings::default(),
        seed: 11,
    }
}

#[test]
fn null_system1_is_empty() {
    let p = generate_phantom(4, &PhantomSpec::default()).unwrap();
    let out = run_system1(Arc::new(p.volume), Some(Arc::new(p.mask)), &mut NullSegmenter, SessionConfig::default())
        .unwrap();
    assert_eq!(out.mask.count(), 0);
    assert_eq!(out.ledger.score(), 0.0);
    assert!(out.log.iterations.is_empty());
}

#[test]
fn threshold_system1_overlaps_lesions() {
    for seed in 0..5 {
        let p = generate_phantom(seed, &PhantomSpec::default()).unwrap();
        let out = run_system1(
            Arc::new(p.volume),
            Some(Arc::new(p.mask)),
            &mut ThresholdSegmenter::default(),
            SessionConfig::default(),
        )
        .unwrap();
        assert!(out.iou.unwrap() > 0.0, "seed {seed}");
    }
}

#[test]
fn empty_gt_system2_never_clicks() {
    let p = generate_phantom(1, &PhantomSpec::explicit(Dims::new(32, 32, 16), vec![])).unwrap();
    let out = run_system2(
        Arc::new(p.volume),
        Arc::new(p.mask),
        Box::new(ConservativeRefiner::default()),
        &IdealExpert::default(),
        4,
        SessionConfig::default(),
        0,
    )
    .unwrap();
    assert_eq!(out.mask.count(), 0);
    assert_eq!(out.iou, Some(1.0));
    assert_eq!(out.ledger.score(), 0.0);
    assert_eq!(out.log.iterations.len(), 4);
}

#[test]
fn spurious_blob_is_erased_first() {
    let lesion = Ellipsoid {
        center: [20.0, 20.0, 4.0],
        radii: [5.0, 5.0, 2.0],
        hu: 40,
    };
    let mut spec = PhantomSpec::explicit(Dims::new(48, 48, 16), vec![lesion]);
    spec.min_distractors = 1;
    spec.max_distractors = 1;
    let p = generate_phantom(2, &spec).unwrap();
    let blob_k = p.distractors[0].center[2] as usize;
    assert_eq!(p.mask.slice(blob_k).unwrap().count(), 0);
    let out = run_system3(
        Arc::new(p.volume),
        Arc::new(p.mask),
        &mut ThresholdSegmenter::default(),
        Box::new(OracleRefiner::default()),
        &IdealExpert::default(),
        1,
        SessionConfig::default(),
        0,
    )
    .unwrap();
    let first = &out.log.iterations[1].actions;
    assert!(first
        .iter()
        .any(|a| a.slice == blob_k && a.action == lesionseg_core::Action::Erase));
    assert_eq!(out.mask.slice(blob_k).unwrap().count(), 0);
}

#[test]
fn oracle_loop_is_monotone() {
    let set = generate_phantom_set(
        5,
        &PhantomSetSpec {
            count: 8,
            ..Default::default()
        },
    )
    .unwrap();
    let s = settings(Topology::System3, 6, SegmenterBinding::Oracle);
    for p in set {
        let out = run_scan(Arc::new(p.volume), Some(Arc::new(p.mask)), &s).unwrap();
        let ious: Vec<f64> = out.log.iterations.iter().map(|r| r.iou.unwrap()).collect();
        assert_eq!(ious.len(), 7);
        assert!(ious.windows(2).all(|w| w[1] >= w[0]), "{ious:?}");
    }
}

#[test]
fn system3_zero_iterations_matches_system1() {
    for seed in 0..5 {
        let p = generate_phantom(seed, &PhantomSpec::default()).unwrap();
        let v = Arc::new(p.volume);
        let m = Arc::new(p.mask);
        let s1 = run_scan(v.clone(), Some(m.clone()), &settings(Topology::System1, 0, SegmenterBinding::Threshold))
            .unwrap();
        let s3 = run_scan(v, Some(m), &settings(Topology::System3, 0, SegmenterBinding::Conservative)).unwrap();
        assert_eq!(s1.mask, s3.mask);
    }
}

#[test]
fn replay_reproduces_masks() {
    for seed in 0..4 {
        let p = generate_phantom(seed, &PhantomSpec::default()).unwrap();
        let v = Arc::new(p.volume);
        let m = Arc::new(p.mask);
        for (topology, seg) in [
            (Topology::System2, SegmenterBinding::Conservative),
            (Topology::System3, SegmenterBinding::Conservative),
        ] {
            let s = settings(topology, 3, seg);
            let out = run_scan(v.clone(), Some(m.clone()), &s).unwrap();
            let mut init = ThresholdSegmenter::default();
            let initial: Option<&mut dyn lesionseg_core::segment::InitialSegmenter> =
                (topology == Topology::System3).then_some(&mut init as _);
            let again = replay(
                v.clone(),
                Some(m.clone()),
                &out.log,
                initial,
                Some(Box::new(ConservativeRefiner::default())),
                SessionConfig::default(),
                0,
            )
            .unwrap();
            assert_eq!(again.mask(), &out.mask);
            assert_eq!(again.log(), &out.log);
        }
    }
}

fn experiment(dir: &std::path::Path, topology: Topology, iterations: usize, seg: SegmenterBinding) -> ExperimentConfig {
    ExperimentConfig {
        manifest: dir.join("manifest.json"),
        split: None,
        seed: 3,
        system: SystemSpec::from_cli(topology, iterations, seg),
        session: SessionConfig::default(),
        expert: ExpertConfig::default(),
        segmenters: SegmenterSettings::default(),
    }
}

#[test]
fn experiment_reports() {
    let data = tempfile::tempdir().unwrap();
    let set = generate_phantom_set(
        9,
        &PhantomSetSpec {
            count: 5,
            ..Default::default()
        },
    )
    .unwrap();
    write_phantom_set(data.path(), &set).unwrap();

    let out1 = tempfile::tempdir().unwrap();
    let r = run_experiment(&experiment(data.path(), Topology::System1, 0, SegmenterBinding::Threshold)).unwrap();
    r.write(out1.path()).unwrap();
    let loaded = load_report(out1.path()).unwrap();
    assert_eq!(loaded.rows.len(), 5);
    assert_eq!(loaded.summary.feedback.score, 0.0);
    assert!(!loaded.summary.partial);

    let cfg = experiment(data.path(), Topology::System3, 3, SegmenterBinding::Oracle);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg).unwrap().write(a.path()).unwrap();
    run_experiment(&cfg).unwrap().write(b.path()).unwrap();
    let loaded = load_report(a.path()).unwrap();
    assert_eq!(loaded.curves.len(), 4);
    assert!(loaded.curves.windows(2).all(|w| w[1].mean_iou >= w[0].mean_iou));
    assert!(loaded.curves.windows(2).all(|w| w[1].feedback_score >= w[0].feedback_score));
    for name in ["per_scan.csv", "summary.json", "curves.csv", "sessions/ph0000.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn failures_mark_report_partial() {
    let data = tempfile::tempdir().unwrap();
    let set = generate_phantom_set(
        9,
        &PhantomSetSpec {
            count: 3,
            ..Default::default()
        },
    )
    .unwrap();
    write_phantom_set(data.path(), &set).unwrap();
    std::fs::remove_file(data.path().join("volumes/ph0001.lvol")).unwrap();
    let r = run_experiment(&experiment(data.path(), Topology::System1, 0, SegmenterBinding::Threshold)).unwrap();
    assert!(r.summary.partial);
    assert_eq!(r.summary.n_failed, 1);
    assert_eq!(r.rows.len(), 3);
    assert!(!r.rows[1].error.is_empty());
}
