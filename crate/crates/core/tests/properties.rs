use gnrs::algo1::run_algorithm1_observed;
use gnrs::algo2::run_algorithm2;
use gnrs::config::{Algo1Config, Algo2Config};
use gnrs::data::{inverse_reshuffle, reshuffle, ShapeMatrix};
use gnrs::experiments::{add_noise, e3d, generate_scene, FlipMode, SceneParams};
use gnrs::numeric::{svt, thin_svd};
use gnrs::{OrderingVector, Snapshot};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn permutation(n: usize, seed: u64) -> OrderingVector {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    OrderingVector::new(idx).unwrap()
}

fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let s = thin_svd(m).unwrap().sigma;
    let top = s.max();
    s.iter().filter(|&&v| v > tol * top.max(1e-300)).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ordering_then_inverse_is_identity(n in 1usize..40, seed in any::<u64>()) {
        let p = permutation(n, seed);
        prop_assert!(p.then(&p.inverse()).unwrap().is_identity());
        prop_assert!(p.inverse().then(&p).unwrap().is_identity());
    }

    #[test]
    fn reshuffle_round_trips(frames in 1usize..6, points in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = DMatrix::<f64>::from_fn(3 * frames, points, |_, _| rand::Rng::random_range(&mut rng, -5.0..5.0));
        let sharp = reshuffle(&s);
        prop_assert_eq!(sharp.shape(), (3 * points, frames));
        prop_assert_eq!(inverse_reshuffle(&sharp).unwrap(), s);
    }

    #[test]
    fn svt_keeps_singular_values_above_threshold(seed in any::<u64>(), tau in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::<f64>::from_fn(7, 5, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let sigma = thin_svd(&m).unwrap().sigma;
        let kept = sigma.iter().filter(|&&s| s > tau).count();
        let out = svt(&m, tau).unwrap();
        prop_assert!(rank(&out, 1e-9) <= kept);
        let shrunk = thin_svd(&out).unwrap().sigma;
        let mut expect: Vec<f64> = sigma.iter().map(|&s| (s - tau).max(0.0)).collect();
        expect.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in shrunk.iter().zip(&expect) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scenes_respect_their_rank_bound(seed in 0u64..1000, modes in 1usize..4) {
        let params = SceneParams { modes, deform_scale: if modes == 1 { 0.0 } else { 0.4 }, ..SceneParams::planted(8, 40, seed) };
        let params = SceneParams { clusters: if 3 * modes >= 6 { 2 } else { 1 }, ..params };
        let scene = generate_scene::<f64>(&params).unwrap();
        prop_assert!(rank(&reshuffle(scene.s_gt.data()), 1e-10) <= modes);
        let residual = scene.r.project(scene.s_gt.data()).unwrap() - scene.w.data();
        prop_assert_eq!(residual.abs().max(), 0.0);
    }

    #[test]
    fn e3d_ignores_tracked_permutations(seed in any::<u64>()) {
        let scene = generate_scene::<f64>(&SceneParams::planted(4, 24, seed % 97)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = scene.s_gt.data().map(|v| v + rand::Rng::random_range(&mut rng, -0.1..0.1));
        let plain = e3d(&ShapeMatrix::new(noisy.clone()).unwrap(), &scene.s_gt, FlipMode::Global).unwrap();
        let order = permutation(24, seed);
        let moved = ShapeMatrix::new(noisy).unwrap().reorder(&order).unwrap();
        let permuted = e3d(&moved, &scene.s_gt, FlipMode::Global).unwrap();
        prop_assert!((plain - permuted).abs() < 1e-14);
    }
}

#[test]
fn e3d_is_linear_in_small_perturbations() {
    let scene = generate_scene::<f64>(&SceneParams::planted(6, 50, 3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eta = DMatrix::<f64>::from_fn(18, 50, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
    let at = |scale: f64| {
        let est = ShapeMatrix::new(scene.s_gt.data() + &eta * scale).unwrap();
        e3d(&est, &scene.s_gt, FlipMode::None).unwrap()
    };
    let (a, b) = (at(1e-3), at(1e-6));
    assert!(a > 0.0 && b > 0.0);
    assert!((a / b / 1e3 - 1.0).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn noise_has_the_requested_spread() {
    let w = DMatrix::<f64>::from_fn(100, 120, |i, j| if i == 0 && j == 0 { 100.0 } else { 0.0 });
    let noisy = add_noise(&w, 0.01, 3).unwrap();
    let diff = &noisy - &w;
    let n = diff.len() as f64;
    let mean = diff.sum() / n;
    let std = (diff.map(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
    assert!((0.95..=1.05).contains(&std), "{std}");
    assert_eq!(add_noise(&w, 0.01, 3).unwrap(), noisy);
    assert_eq!(add_noise(&w, 0.0, 3).unwrap(), w);
}

#[test]
fn chart_history_tracks_every_reordering() {
    let scene = generate_scene::<f64>(&SceneParams::planted(8, 60, 6)).unwrap();
    let cfg = Algo1Config { max_iters: 25, ..Algo1Config::default() };
    let mut charts = Vec::new();
    let mut record = |snap: &Snapshot<'_, f64>| charts.push(snap.chart.clone());
    let out = run_algorithm1_observed(&scene.w, &scene.r, &cfg, Some(&mut record)).unwrap();
    assert_eq!(out.history.len(), out.diagnostics.iterations() + 1);
    assert_eq!(&out.history[1..], &charts[..]);
    assert_eq!(out.history.last().unwrap().indices(), out.shape.point_ids());
    // the returned shape is the reordered ground-truth layout
    let w_cols = scene.w.reorder(out.history.last().unwrap()).unwrap();
    let projected = scene.r.project(out.shape.data()).unwrap();
    let original = scene.r.project(out.shape.in_original_order().data()).unwrap();
    assert!((&projected - w_cols.data()).norm() < 1e-6 * scene.w.data().norm() + (&original - scene.w.data()).norm() + 1e-9);
}

#[test]
fn store_rows_are_permutations() {
    let scene = generate_scene::<f64>(&SceneParams::planted(8, 60, 7)).unwrap();
    let cfg = Algo2Config { max_iters: 20, ..Algo2Config::default() };
    let out = run_algorithm2(&scene.w, &scene.r, &cfg).unwrap();
    assert_eq!(out.history.len(), out.diagnostics.iterations() + 1);
    for row in &out.history {
        let mut seen = row.indices().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..60).collect::<Vec<_>>());
    }
}

#[test]
fn solvers_agree_in_single_precision() {
    let scene = generate_scene::<f32>(&SceneParams::rigid(10, 100, 3)).unwrap();
    let cfg = Algo1Config { ks: 1, kt: 1, ps: 3, pt: 1, ..Algo1Config::default() };
    let out = gnrs::algo1::run_algorithm1(&scene.w, &scene.r, &cfg).unwrap();
    let e = e3d(&out.shape, &scene.s_gt, FlipMode::Global).unwrap();
    assert!(e < 1e-2, "{e}");
}
