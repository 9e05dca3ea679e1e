//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Built with `harness = false` so the verdict
//! lines are always visible.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use skelbench::cli::RunReport;
use skelbench::datagen::{gen_pairs, gen_shape, split_dataset, DatasetSpec};
use skelbench::mask::{connected_components, shift_mask, BinaryMask};
use skelbench::metrics::{evaluate_pair, f1_score, max_zncc, zncc_at_offset, MatchConfig};
use skelbench::nn::{
    conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, softmax2, softmax2_backward,
    transposed_conv2d, transposed_conv2d_backward, weighted_loss, weighted_loss_backward, LossConfig, LossMode,
    Tensor,
};
use skelbench::thinning::{medial_axis, prune_spurs, skeletonize, zhang_suen_thin, ThinningAlgo, ThinningVariant};
use skelbench::unet::{
    apply_stage, decode_model, encode_model, infer_all, infer_prefix, load_model, save_model, train_pipeline,
    train_stage, PipelineConfig, UNet, UNetConfig,
};

/// Batch size for the training criteria. With 160 training pairs and 20 epochs,
/// a batch of 32 leaves only 100 optimizer steps per stage.
const DESK_BATCH: usize = 4;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- gradients

const H: f64 = 1e-5;

fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    one_sided(f, x).into_iter().map(|(up, down)| 0.5 * (up + down)).collect()
}

/// Forward and backward difference quotients for every coordinate.
fn one_sided(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<(f64, f64)> {
    let f0 = f(x);
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            xs[i] = x[i] + H;
            let a = f(&xs);
            xs[i] = x[i] - H;
            let b = f(&xs);
            xs[i] = x[i];
            ((a - f0) / H, (f0 - b) / H)
        })
        .collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

fn t(shape: [usize; 4], x: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, x.to_vec()).unwrap()
}

/// `sum(r * y)` for a fixed random `r`, so `dL/dy = r`.
fn probe(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn conv_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::uniform([2, 3, 6, 5], 1.0, &mut rng);
    let w = Tensor::<f64>::uniform([4, 3, 3, 3], 1.0, &mut rng);
    let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = Tensor::<f64>::uniform([2, 4, 6, 5], 1.0, &mut rng);
    let g = conv2d_backward(&x, &w, &r).unwrap();
    let fx = |v: &[f64]| probe(&conv2d(&t(x.shape(), v), &w, &b).unwrap(), &r);
    let fw = |v: &[f64]| probe(&conv2d(&x, &t(w.shape(), v), &b).unwrap(), &r);
    let fb = |v: &[f64]| probe(&conv2d(&x, &w, v).unwrap(), &r);
    rel_err(g.input.data(), &central_diff(&fx, x.data()))
        .max(rel_err(g.weight.data(), &central_diff(&fw, w.data())))
        .max(rel_err(&g.bias, &central_diff(&fb, &b)))
}

fn tconv_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::uniform([2, 3, 3, 4], 1.0, &mut rng);
    let w = Tensor::<f64>::uniform([3, 2, 2, 2], 1.0, &mut rng);
    let r = Tensor::<f64>::uniform([2, 2, 6, 8], 1.0, &mut rng);
    let (gx, gw) = transposed_conv2d_backward(&x, &w, &r).unwrap();
    let fx = |v: &[f64]| probe(&transposed_conv2d(&t(x.shape(), v), &w).unwrap(), &r);
    let fw = |v: &[f64]| probe(&transposed_conv2d(&x, &t(w.shape(), v)).unwrap(), &r);
    rel_err(gx.data(), &central_diff(&fx, x.data())).max(rel_err(gw.data(), &central_diff(&fw, w.data())))
}

fn pool_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::uniform([2, 2, 8, 6], 1.0, &mut rng);
    let (y, idx) = maxpool2d(&x).unwrap();
    let r = Tensor::<f64>::uniform(y.shape(), 1.0, &mut rng);
    let g = maxpool2d_backward(&r, &idx).unwrap();
    let f = |v: &[f64]| probe(&maxpool2d(&t(x.shape(), v)).unwrap().0, &r);
    rel_err(g.data(), &central_diff(&f, x.data()))
}

fn relu_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::uniform([2, 3, 4, 4], 1.0, &mut rng);
    let r = Tensor::<f64>::uniform(x.shape(), 1.0, &mut rng);
    let g = relu_backward(&x, &r);
    let f = |v: &[f64]| probe(&relu(&t(x.shape(), v)), &r);
    rel_err(g.data(), &central_diff(&f, x.data()))
}

fn random_masks(n: usize, h: u32, w: u32, rng: &mut ChaCha8Rng) -> Vec<BinaryMask> {
    (0..n).map(|_| BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(0.3))).collect()
}

fn softmax_loss_case(seed: u64, mode: LossMode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Tensor::<f64>::uniform([2, 2, 5, 4], 3.0, &mut rng);
    let targets = random_masks(2, 5, 4, &mut rng);
    let cfg = LossConfig { mode, ..LossConfig::default() };
    let p = softmax2(&z).unwrap();
    let gz = softmax2_backward(&p, &weighted_loss_backward(&p, &targets, &cfg).unwrap()).unwrap();
    let f = |v: &[f64]| weighted_loss(&softmax2(&t(z.shape(), v)).unwrap(), &targets, &cfg).unwrap();
    rel_err(gz.data(), &central_diff(&f, z.data()))
}

/// `None` when the sample point sits on a ReLU or max-pool kink, i.e. the two
/// one-sided quotients of some coordinate disagree, so the loss has no
/// derivative there to compare against.
fn unet_case(seed: u64, mode: LossMode) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = UNet::<f64>::new(UNetConfig::new(1, 2, 8), &mut rng).unwrap();
    // Random biases keep most activations off the ReLU kink.
    for p in net.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
    }
    let x = Tensor::<f64>::uniform([1, 1, 8, 8], 1.0, &mut rng);
    let target = random_masks(1, 8, 8, &mut rng);
    let cfg = LossConfig { mode, ..LossConfig::default() };
    let (_, grads) = net.loss_and_grads(&x, &target, &cfg).unwrap();
    let flat: Vec<f64> = net.params().iter().flat_map(|p| p.data().to_vec()).collect();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let f = |v: &[f64]| {
        let mut probe = net.clone();
        let mut off = 0;
        for p in probe.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        probe.loss_and_grads(&x, &target, &cfg).unwrap().0
    };
    let sides = one_sided(&f, &flat);
    let (up, down): (Vec<f64>, Vec<f64>) = sides.iter().cloned().unzip();
    if rel_err(&up, &down) > 1e-2 {
        return None;
    }
    let central: Vec<f64> = sides.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    Some(rel_err(&analytic, &central))
}

/// Worst error over the first five smooth seeded cases, and how many kinked
/// draws were passed over.
fn unet_cases(mode: LossMode) -> (f64, usize) {
    let mut worst = 0.0f64;
    let (mut done, mut skipped) = (0, 0);
    for seed in 0.. {
        match unet_case(seed, mode) {
            Some(e) => {
                worst = worst.max(e);
                done += 1;
            }
            None => skipped += 1,
        }
        if done == 5 {
            break;
        }
    }
    (worst, skipped)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let seeds = 0..5u64;
    let modes = [LossMode::Literal, LossMode::StandardWcce];
    let worst = |f: &dyn Fn(u64) -> f64| seeds.clone().map(f).fold(0.0, f64::max);
    let rows = [
        ("conv2d", worst(&conv_case)),
        ("transposed_conv2d", worst(&tconv_case)),
        ("maxpool2d", worst(&pool_case)),
        ("relu", worst(&relu_case)),
        ("softmax+loss literal", worst(&|s| softmax_loss_case(s, modes[0]))),
        ("softmax+loss wcce", worst(&|s| softmax_loss_case(s, modes[1]))),
    ];
    let (unet_literal, skip_literal) = unet_cases(modes[0]);
    let (unet_wcce, skip_wcce) = unet_cases(modes[1]);
    let rows = [rows.as_slice(), &[("unet literal", unet_literal), ("unet wcce", unet_wcce)]].concat();
    let secs = start.elapsed().as_secs_f64();
    let max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = rows
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        max < 1e-4 && secs < 60.0,
        format!(
            "max rel err {max:.2e} in {secs:.1}s ({detail}; kinked unet draws skipped {})",
            skip_literal + skip_wcce
        ),
    )
}

// ---------------------------------------------------------------- metrics

/// Zhang-Suen skeletons of generated shapes whose content keeps `margin` px
/// clear of every border.
fn inset_skeletons(count: usize, margin: usize, seed: u64) -> Vec<BinaryMask> {
    let spec = DatasetSpec { seed, ..DatasetSpec::default() };
    let size = spec.size;
    (0..)
        .map(|i| gen_shape(&spec, i).unwrap().skeleton)
        .filter(|s| {
            s.foreground()
                .all(|(r, c)| r >= margin && c >= margin && r + margin < size && c + margin < size)
        })
        .take(count)
        .collect()
}

fn closed_form() -> Outcome {
    let skels = inset_skeletons(20, 12, 11);
    let cfg = MatchConfig::default();
    let shifts = [(1isize, 0isize), (0, 2), (3, 4), (6, 8), (0, 10)];
    let mut worst = 0.0f64;
    let mut identity_ok = true;
    for s in &skels {
        identity_ok &= evaluate_pair(s, s, &cfg).unwrap().m_ccorr == 1.0;
        for &(dx, dy) in &shifts {
            let got = evaluate_pair(s, &shift_mask(s, dx, dy), &cfg).unwrap().m_ccorr;
            let want = 1.0 / (((dx * dx + dy * dy) as f64).sqrt() + 2.0).log2();
            worst = worst.max((got - want).abs());
        }
    }
    ensure(
        skels.len() == 20 && worst < 1e-9 && identity_ok,
        format!("{} skeletons x 5 shifts, max |err| {worst:.1e}, identity exact: {identity_ok}", skels.len()),
    )
}

/// One-pixel skeletons built from horizontal, vertical and diagonal strokes.
fn stroke_skeletons() -> Vec<BinaryMask> {
    let in_range = |v: usize, a: usize, b: usize| (a..b).contains(&v);
    let mut out = vec![
        BinaryMask::from_fn(64, 64, |r, c| r == c && in_range(r, 10, 54)),
        BinaryMask::from_fn(64, 64, |r, c| r + c == 63 && in_range(r, 12, 50)),
        BinaryMask::from_fn(64, 64, |r, c| r == 32 && in_range(c, 8, 56)),
        BinaryMask::from_fn(64, 64, |r, c| c == 20 && in_range(r, 8, 56)),
        // Cross, L, T and V.
        BinaryMask::from_fn(64, 64, |r, c| (r == 30 && in_range(c, 10, 54)) || (c == 33 && in_range(r, 10, 54))),
        BinaryMask::from_fn(64, 64, |r, c| (c == 14 && in_range(r, 10, 50)) || (r == 49 && in_range(c, 14, 52))),
        BinaryMask::from_fn(64, 64, |r, c| (r == 12 && in_range(c, 10, 54)) || (c == 31 && in_range(r, 12, 52))),
        BinaryMask::from_fn(64, 64, |r, c| in_range(r, 10, 31) && (c == r + 2 || c == 62 - r)),
    ];
    // Stick figure: body, arms and legs.
    out.push(BinaryMask::from_fn(64, 64, |r, c| {
        let (y, x) = (r as isize, c as isize);
        let body = x == 32 && (8..40).contains(&y);
        let arms = y == 18 && (14..51).contains(&x);
        let legs = (40..56).contains(&y) && (x - 32).abs() == y - 39;
        body || arms || legs
    }));
    // Zhang-Suen skeletons of thick bars.
    out.push(zhang_suen_thin(&BinaryMask::from_fn(64, 64, |r, c| in_range(r, 28, 33) && in_range(c, 8, 56))));
    out.push(zhang_suen_thin(&BinaryMask::from_fn(64, 64, |r, c| in_range(c, 28, 33) && in_range(r, 8, 56))));
    out
}

fn figure_two() -> Outcome {
    let skels = stroke_skeletons();
    let cfg = MatchConfig::default();
    let (mut f1_max, mut worst) = (0.0f64, 0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, s) in skels.iter().enumerate() {
        let r = evaluate_pair(s, &shift_mask(s, 3, 4), &cfg).unwrap();
        if r.f1 > f1_max {
            (f1_max, worst) = (r.f1, i);
        }
        lo = lo.min(r.m_ccorr);
        hi = hi.max(r.m_ccorr);
    }
    ensure(
        f1_max < 0.05 && lo >= 0.356 && hi <= 0.357,
        format!("{} skeletons shifted (3,4): max F1 {f1_max:.4} (fixture {worst}), M-CCORR in [{lo:.5}, {hi:.5}]", skels.len()),
    )
}

/// Pearson coefficient by definition over the overlap window.
fn pearson(truth: &BinaryMask, pred: &BinaryMask, dx: isize, dy: isize) -> f64 {
    let (h, w) = truth.dims();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (pr, pc) = (r - dy, c - dx);
            if pr >= 0 && pc >= 0 && (pr as usize) < h && (pc as usize) < w {
                a.push(truth.get(r as usize, c as usize) as u8 as f64);
                b.push(pred.get(pr as usize, pc as usize) as u8 as f64);
            }
        }
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(&b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn brute_force_oracle() -> Outcome {
    let cfg = MatchConfig::new(8, 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = Vec::new();
    let mut worst = 0.0f64;
    for case in 0..50 {
        let density = rng.gen_range(0.02..0.5);
        let truth = BinaryMask::from_fn(32, 32, |_, _| rng.gen_bool(density));
        let pred = if case % 2 == 0 {
            BinaryMask::from_fn(32, 32, |_, _| rng.gen_bool(density))
        } else {
            // A noisy translate, so the best offset is away from the origin.
            let moved = shift_mask(&truth, rng.gen_range(-6..=6), rng.gen_range(-6..=6));
            BinaryMask::from_fn(32, 32, |r, c| moved.get(r, c) ^ rng.gen_bool(0.05))
        };
        // Exhaustive scan with the tie rule: largest value, then smallest
        // squared distance, then smallest dy, then smallest dx.
        let mut best: Option<(f64, isize, isize)> = None;
        for dy in -8isize..=8 {
            for dx in -8isize..=8 {
                let exact = zncc_at_offset(&truth, &pred, dx, dy, &cfg).unwrap().unwrap();
                let oracle = pearson(&truth, &pred, dx, dy);
                worst = worst.max((exact - oracle).abs());
                let better = match best {
                    None => true,
                    Some((v, bx, by)) => {
                        exact > v || (exact == v && (dx * dx + dy * dy, dy, dx) < (bx * bx + by * by, by, bx))
                    }
                };
                if better {
                    best = Some((exact, dx, dy));
                }
            }
        }
        let (v, dx, dy) = best.unwrap();
        let got = max_zncc(&truth, &pred, &cfg).unwrap();
        if (got.coefficient, got.dx, got.dy) != (v, dx, dy) {
            mismatches.push(case);
        }
    }
    ensure(
        mismatches.is_empty() && worst < 1e-12,
        format!("50 pairs 32x32 radius 8: mismatches {mismatches:?}, definition oracle max |diff| {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- thinning

fn thinning_invariants() -> Outcome {
    let start = Instant::now();
    let spec = DatasetSpec { count: 100, seed: 5, ..DatasetSpec::default() };
    let shapes: Vec<BinaryMask> = gen_pairs(&spec).unwrap().into_iter().map(|p| p.shape).collect();
    let pruned = ThinningAlgo { variant: ThinningVariant::ZhangSuen, prune_length: 8 };
    let failures: Vec<usize> = shapes
        .par_iter()
        .enumerate()
        .filter(|(_, shape)| {
            let thin = zhang_suen_thin(shape);
            let ma = medial_axis(shape);
            let gt = skeletonize(shape, &pruned);
            let ok = thin.is_subset_of(shape)
                && zhang_suen_thin(&thin) == thin
                && connected_components(&thin).count == connected_components(shape).count
                && ma.is_subset_of(shape)
                && gt.is_subset_of(shape)
                && prune_spurs(&gt, 8) == gt;
            !ok
        })
        .map(|(i, _)| i)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    ensure(
        failures.is_empty() && secs < 30.0,
        format!("100 shapes: subset, idempotence, component count; failures {failures:?} in {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- training

fn mean_f1(truth: &[BinaryMask], pred: &[BinaryMask]) -> f64 {
    truth.iter().zip(pred).map(|(t, p)| f1_score(t, p).unwrap()).sum::<f64>() / truth.len() as f64
}

fn desk_training() -> Outcome {
    let start = Instant::now();
    let pairs = gen_pairs(&DatasetSpec { count: 200, size: 64, seed: 42, ..DatasetSpec::default() }).unwrap();
    let (train, hold) = split_dataset(&pairs, 0.8, 42).unwrap();
    let shapes: Vec<BinaryMask> = train.iter().map(|p| p.shape.clone()).collect();
    let skels: Vec<BinaryMask> = train.iter().map(|p| p.skeleton.clone()).collect();
    let hold_shapes: Vec<BinaryMask> = hold.iter().map(|p| p.shape.clone()).collect();
    let hold_skels: Vec<BinaryMask> = hold.iter().map(|p| p.skeleton.clone()).collect();
    // One three-stage run per seed; its one- and two-stage prefixes are the
    // shorter pipelines, since stages never share random draws.
    let scores: Vec<[f64; 3]> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = PipelineConfig { n_stages: 3, batch_size: DESK_BATCH, seed, ..PipelineConfig::default() };
            let bundle = train_pipeline(&shapes, &skels, UNetConfig::new(2, 8, 64), &cfg).unwrap();
            let mut out = [0.0; 3];
            for (k, slot) in out.iter_mut().enumerate() {
                let pred: Vec<BinaryMask> =
                    hold_shapes.iter().map(|s| infer_prefix(&bundle, s, k + 1).unwrap()).collect();
                *slot = mean_f1(&hold_skels, &pred);
            }
            out
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let one_min = scores.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
    let wins = scores.iter().filter(|s| s[1] >= s[0]).count();
    let table = scores
        .iter()
        .map(|s| format!("{:.3}/{:.3}/{:.3}", s[0], s[1], s[2]))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(
        one_min >= 0.30 && wins >= 3,
        format!(
            "holdout F1 1/2/3 stages per seed: {table}; min one-stage {one_min:.3}, two>=one in {wins}/5, \
             batch {DESK_BATCH}, {secs:.0}s"
        ),
    )
}

fn small_data(count: usize, size: usize, seed: u64) -> (Vec<BinaryMask>, Vec<BinaryMask>) {
    gen_pairs(&DatasetSpec { count, size, seed, ..DatasetSpec::default() })
        .unwrap()
        .into_iter()
        .map(|p| (p.shape, p.skeleton))
        .unzip()
}

fn determinism() -> Outcome {
    let (shapes, skels) = small_data(16, 32, 9);
    let cfg = PipelineConfig { n_stages: 2, epochs: 2, batch_size: 4, seed: 3, ..PipelineConfig::default() };
    let unet = UNetConfig::new(2, 4, 32);
    let a = train_pipeline(&shapes, &skels, unet, &cfg).unwrap();
    let b = train_pipeline(&shapes, &skels, unet, &cfg).unwrap();
    let (ba, bb) = (encode_model(&a), encode_model(&b));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sklb");
    save_model(&a, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let on_disk = std::fs::read(&path).unwrap();
    let (fixtures, _) = small_data(10, 32, 77);
    let same_outputs = infer_all(&a, &fixtures).unwrap() == infer_all(&loaded, &fixtures).unwrap();
    let decoded_same = decode_model(&ba).unwrap() == a;
    ensure(
        ba == bb && on_disk == ba && loaded == a && decoded_same && same_outputs,
        format!(
            "same-seed bytes equal: {}, file bytes equal: {}, loaded bundle equal: {}, 10 fixture outputs equal: {}",
            ba == bb,
            on_disk == ba,
            loaded == a && decoded_same,
            same_outputs
        ),
    )
}

fn overfit() -> Outcome {
    let sample = gen_shape(&DatasetSpec { seed: 42, ..DatasetSpec::default() }, 0).unwrap();
    let cfg = PipelineConfig { n_stages: 1, epochs: 200, batch_size: 1, seed: 0, ..PipelineConfig::default() };
    let unet = UNetConfig::new(2, 8, 64);
    let mut net = UNet::new(unet, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let inputs = [sample.shape.clone()];
    let targets = [sample.skeleton.clone()];
    let mut first = None;
    train_stage(&mut net, &inputs, &targets, &cfg, 1, &mut |epoch, _, net| {
        if first.is_none() && epoch % 5 == 0 {
            let pred = apply_stage(net, &inputs).unwrap();
            if f1_score(&targets[0], &pred[0]).unwrap() >= 0.9 {
                first = Some(epoch);
            }
        }
    })
    .unwrap();
    let last = f1_score(&targets[0], &apply_stage(&net, &inputs).unwrap()[0]).unwrap();
    ensure(
        first.is_some() && last >= 0.9,
        format!("F1 >= 0.9 first at epoch {first:?}, after 200 epochs {last:.4}"),
    )
}

// ---------------------------------------------------------------- cli

fn skelbench(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_skelbench"))
        .args(args)
        .env("SKELBENCH_THREADS", "0")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`{}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cli_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, model, preds, report) = (d.join("data"), d.join("m.sklb"), d.join("pred"), d.join("report.json"));
    skelbench(&["gen", "--out", path(&data), "--count", "12", "--size", "32", "--seed", "1"])?;
    skelbench(&[
        "train", "--data", path(&data), "--stages", "2", "--epochs", "2", "--batch", "4", "--out", path(&model),
    ])?;
    skelbench(&["infer", "--model", path(&model), "--input", path(&data.join("img")), "--out", path(&preds)])?;
    let stdout = skelbench(&[
        "eval",
        "--pred",
        path(&preds),
        "--truth",
        path(&data.join("gt")),
        "--radius",
        "8",
        "--report",
        path(&report),
    ])?;
    let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let rep: RunReport = serde_json::from_str(&text).map_err(|e| format!("malformed report: {e}"))?;
    let n = rep.images.len() as f64;
    let mean = |f: &dyn Fn(&skelbench::MetricReport) -> f64| rep.images.iter().map(|i| f(&i.metrics)).sum::<f64>() / n;
    let g = &rep.aggregate;
    let defined: Vec<f64> = rep.images.iter().filter_map(|i| i.metrics.center_distance).collect();
    let center_ok = match g.center_distance {
        Some(c) => (c - defined.iter().sum::<f64>() / defined.len() as f64).abs() <= 1e-12,
        None => defined.is_empty(),
    };
    let gaps = [
        (g.precision - mean(&|m| m.precision)).abs(),
        (g.recall - mean(&|m| m.recall)).abs(),
        (g.f1 - mean(&|m| m.f1)).abs(),
        (g.max_zncc - mean(&|m| m.max_zncc)).abs(),
        (g.m_ccorr - mean(&|m| m.m_ccorr)).abs(),
        (g.degenerate - mean(&|m| m.degenerate as u8 as f64)).abs(),
    ];
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let printed = stdout.contains(&format!("F1         {:.4}", g.f1)) && stdout.contains(&format!("M-CCORR    {:.4}", g.m_ccorr));
    ensure(
        rep.images.len() == 12 && g.count == 12 && worst <= 1e-12 && center_ok && printed,
        format!("12 images, aggregate-vs-mean max gap {worst:.1e}, F1 {:.4}, M-CCORR {:.4}", g.f1, g.m_ccorr),
    )
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("m-ccorr closed form", closed_form),
        ("shifted thin skeleton: F1 collapse, M-CCORR 1/log2(7)", figure_two),
        ("max_zncc brute-force oracle", brute_force_oracle),
        ("thinning invariants", thinning_invariants),
        ("desk-scale training", desk_training),
        ("determinism and serialization", determinism),
        ("overfit sanity", overfit),
        ("cli end-to-end", cli_end_to_end),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let total = Instant::now();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        match outcome {
            Ok(d) => println!("PASS [{}] {name}: {d} ({took:.1?})", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{}] {name}: {d} ({took:.1?})", i + 1);
            }
        }
    }
    println!("acceptance: {failed} failed, {:.0?} total", total.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
