use std::time::Duration;

use lesionseg_core::click::{encode_clicks, SliceClicks};
use lesionseg_core::phantom::{generate_phantom, PhantomSpec};
use lesionseg_core::segment::{
    ConservativeRefiner, InitialSegmenter, PluginCommand, PluginError, PluginSegmenter, RefineInput,
    RefinementSegmenter, SegmenterError, ThresholdSegmenter,
};
use lesionseg_core::volume::{extract_window, IntensityWindow};
use lesionseg_core::{ClickEncoding, Pixel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plugin(mode: &str, timeout: Duration) -> Result<PluginSegmenter, PluginError> {
    let cmd = PluginCommand {
        program: env!("CARGO_BIN_EXE_lesionseg").into(),
        args: vec!["plugin-serve".into(), "--mode".into(), mode.into()],
    };
    PluginSegmenter::spawn(&cmd, timeout)
}

struct Case {
    window: lesionseg_core::volume::SliceWindow,
    prev: lesionseg_core::BinaryPlane,
    clicks: SliceClicks,
}

fn cases(n: usize) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < n {
        let ph = generate_phantom(seed, &PhantomSpec::default()).unwrap();
        seed += 1;
        let dims = ph.volume.dims();
        for k in (0..dims.n_slices).step_by(4) {
            let window = extract_window(&ph.volume, k, 2, &IntensityWindow::default()).unwrap();
            let prev = ph.mask.slice(k).unwrap();
            let (n_pos, n_neg) = (rng.gen_range(0..4), rng.gen_range(0..3));
            let mut pick = || Pixel::new(rng.gen_range(0..dims.height), rng.gen_range(0..dims.width));
            let clicks = SliceClicks {
                positive: (0..n_pos).map(|_| pick()).collect(),
                negative: (0..n_neg).map(|_| pick()).collect(),
            };
            out.push(Case { window, prev, clicks });
        }
    }
    out.truncate(n);
    out
}

fn refine_with(seg: &mut dyn RefinementSegmenter, case: &Case) -> Result<Vec<f32>, SegmenterError> {
    let enc = ClickEncoding::default();
    let shape = case.prev.shape();
    let pos = encode_clicks(&case.clicks.positive, shape, enc).unwrap();
    let neg = encode_clicks(&case.clicks.negative, shape, enc).unwrap();
    let input = RefineInput {
        window: &case.window,
        prev_mask: &case.prev,
        pos_mask: &pos,
        neg_mask: &neg,
        clicks: &case.clicks,
        gt: None,
    };
    seg.refine(&input).map(|p| p.into_vec())
}

#[test]
fn loopback_matches_in_process_bit_for_bit() {
    let mut remote = plugin("reference", Duration::from_secs(30)).unwrap();
    let mut local = ConservativeRefiner::default();
    for case in cases(50) {
        let a = refine_with(&mut remote, &case).unwrap();
        let b = refine_with(&mut local, &case).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn loopback_predict_matches_threshold() {
    let mut remote = plugin("reference", Duration::from_secs(30)).unwrap();
    let mut local = ThresholdSegmenter::default();
    for case in cases(8) {
        assert_eq!(
            remote.predict(&case.window).unwrap(),
            local.predict(&case.window).unwrap()
        );
    }
}

#[test]
fn echo_returns_previous_mask() {
    let mut remote = plugin("echo", Duration::from_secs(30)).unwrap();
    for case in cases(4) {
        let out = refine_with(&mut remote, &case).unwrap();
        let expected: Vec<f32> = case.prev.as_slice().iter().map(|&b| b as u8 as f32).collect();
        assert_eq!(out, expected);
    }
}

#[test]
fn wrong_shape_is_rejected() {
    let mut remote = plugin("bad-shape", Duration::from_secs(30)).unwrap();
    let case = &cases(1)[0];
    let err = refine_with(&mut remote, case).unwrap_err();
    assert!(matches!(err, SegmenterError::Plugin(PluginError::ShapeMismatch { .. })), "{err}");
}

#[test]
fn silent_plugin_times_out() {
    let mut remote = plugin("silent", Duration::from_millis(300)).unwrap();
    let case = &cases(1)[0];
    let err = refine_with(&mut remote, case).unwrap_err();
    assert!(matches!(err, SegmenterError::Plugin(PluginError::Timeout(_))), "{err}");
}

#[test]
fn missing_handshake_fails_to_start() {
    let err = plugin("no-handshake", Duration::from_millis(300)).unwrap_err();
    assert!(matches!(err, PluginError::Handshake(_) | PluginError::Timeout(_)), "{err}");
}

#[test]
fn missing_program_is_a_spawn_error() {
    let cmd = PluginCommand {
        program: "/nonexistent/lesionseg-plugin".into(),
        args: Vec::new(),
    };
    let err = PluginSegmenter::spawn(&cmd, Duration::from_secs(1)).unwrap_err();
    assert!(matches!(err, PluginError::Spawn { .. }), "{err}");
}
