mod common;

use common::*;
use gspn::block::{block_backward, block_forward, block_forward_cached, GspnBlockParams, Projection};
use gspn::train::{train_toy, ToyKind, ToyTask};
use gspn::{Dims, Direction, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params<R: Rng>(channels: usize, reduced: usize, rng: &mut R) -> GspnBlockParams {
    let mut p = GspnBlockParams::init_with_reduced(channels, reduced, rng);
    for proj in p.projections_mut() {
        for b in &mut proj.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    p
}

#[test]
fn block_gradients_match_finite_differences() {
    let dims = Dims::new(1, 4, 6, 6);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(4, 2, &mut rng);
        let x = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let dout = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let groups = 1 + (seed as usize % 2);
        let (_, cache) = block_forward_cached(&x, &params, groups).unwrap();
        let g = block_backward(&params, &cache, &dout).unwrap();

        let mut point = x.data().to_vec();
        point.extend(params.to_flat());
        let mut analytic = g.dx.data().to_vec();
        analytic.extend(g.dparams.to_flat());
        let n = x.len();
        let numeric = central_diff_proj(&point, dout.data(), |p| {
            let xx = Tensor4::from_vec(dims, p[..n].to_vec()).unwrap();
            let mut pp = params.clone();
            pp.set_flat(&p[n..]);
            block_forward(&xx, &pp, groups).unwrap().into_vec()
        });
        let mut at = 0;
        for len in group_lengths(&params, n) {
            let (a, b) = (&analytic[at..at + len], &numeric[at..at + len]);
            worst = worst.max(norm_rel_err(a, b));
            at += len;
        }
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

/// `dx`, then each projection's weight and bias, in flat order.
fn group_lengths(p: &GspnBlockParams, n: usize) -> Vec<usize> {
    let mut v = vec![n];
    for proj in p.projections() {
        v.push(proj.weight.len());
        v.push(proj.bias.len());
    }
    v
}

#[test]
fn merge_gradient_is_correlation_with_directional_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let dims = Dims::new(2, 3, 4, 5);
    let params = random_params(3, 1, &mut rng);
    let x = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
    let dout = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
    let (_, cache) = block_forward_cached(&x, &params, 1).unwrap();
    let g = block_backward(&params, &cache, &dout).unwrap();
    let c = 3;
    for o in 0..c {
        for i in 0..4 * c {
            let mut corr = 0.0;
            for b in 0..2 {
                corr += dot(dout.plane(b, o), cache.y_cat.plane(b, i));
            }
            assert!((g.dparams.merge.w(o, i) - corr).abs() < 1e-12);
        }
        let bias: f64 = (0..2).map(|b| dout.plane(b, o).iter().sum::<f64>()).sum();
        assert!((g.dparams.merge.bias[o] - bias).abs() < 1e-12);
    }
    // And the same numbers by finite differences on the merge weights alone.
    let numeric = central_diff_proj(&params.merge.weight, dout.data(), |w| {
        let mut p = params.clone();
        p.merge.weight.copy_from_slice(w);
        block_forward(&x, &p, 1).unwrap().into_vec()
    });
    assert!(max_rel_err(&g.dparams.merge.weight, &numeric, 1e-6) < 1e-5);
}

#[test]
fn shifted_input_gives_shifted_output_away_from_the_edge() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (h, w, shift) = (10, 4, 3);
    let params = random_params(4, 1, &mut rng);
    let x = Tensor4::random_uniform(Dims::new(1, 4, h, w), -1.0, 1.0, &mut rng);
    let padded = Tensor4::from_fn(Dims::new(1, 4, h + shift, w), |b, c, r, col| {
        if r < shift { 0.0 } else { x.get(b, c, r - shift, col) }
    });
    // Zero rows have no injection, so vertical scans see the same history;
    // horizontal scans differ only inside the cone spreading from the old
    // top edge, one row per column.
    let out = block_forward(&x, &params, 1).unwrap();
    let out_p = block_forward(&padded, &params, 1).unwrap();
    let mut worst = 0.0f64;
    for c in 0..4 {
        for r in w..h {
            for col in 0..w {
                worst = worst.max((out.get(0, c, r, col) - out_p.get(0, c, r + shift, col)).abs());
            }
        }
    }
    assert!(worst < 1e-12, "interior mismatch {worst:e}");
    // The window is not trivially wide: the top rows do change.
    let edge = (0..4).any(|c| (out.get(0, c, 0, w - 1) - out_p.get(0, c, shift, w - 1)).abs() > 1e-9);
    assert!(edge);
}

#[test]
fn constant_input_depends_only_on_scan_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let c = 4;
    let params = random_params(c, 1, &mut rng);
    let vals = [0.3, -0.7, 1.1, 0.25];
    let dims = Dims::new(1, c, 5, 6);
    let x = Tensor4::from_fn(dims, |_, ch, _, _| vals[ch]);
    let (out, cache) = block_forward_cached(&x, &params, 1).unwrap();
    let (u, lam) = (&cache.gates[0].u, &cache.gates[0].lam);
    for (d, dir) in Direction::ALL.into_iter().enumerate() {
        let y = &cache.scans[d].y;
        for (ch, &v) in vals.iter().enumerate().take(c) {
            for r in 0..5 {
                for col in 0..6 {
                    let depth = match dir {
                        Direction::LeftToRight => col,
                        Direction::RightToLeft => 5 - col,
                        Direction::TopToBottom => r,
                        Direction::BottomToTop => 4 - r,
                    };
                    let want = (depth + 1) as f64 * u.get(0, ch, r, col) * lam.get(0, ch, r, col) * v;
                    assert!((y.get(0, ch, r, col) - want).abs() < 1e-12);
                }
            }
        }
    }
    // The merged output is then a function of (row depth, column depth)
    // alone: it is symmetric under the joint 180° rotation when the merge
    // treats opposite directions alike.
    let mut sym = params.clone();
    for o in 0..c {
        for ch in 0..c {
            let a = sym.merge.w(o, ch);
            let b = sym.merge.w(o, 2 * c + ch);
            sym.merge.weight[o * 4 * c + c + ch] = a;
            sym.merge.weight[o * 4 * c + 3 * c + ch] = b;
        }
    }
    let out_s = block_forward(&x, &sym, 1).unwrap();
    let rot = out_s.flip_h().flip_w();
    assert!(out_s.max_abs_diff(&rot) < 1e-12);
    assert_eq!(out.dims(), dims);
}

#[test]
fn traces_are_identical_across_worker_counts() {
    let task = ToyTask::new(ToyKind::FixedBlur, 3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_toy(&task, 25, 0.5).unwrap().losses)
    };
    let base = run(1);
    for t in [2, 4] {
        let other = run(t);
        assert!(base.iter().zip(&other).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn explicit_reduced_width_is_honored() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let p = GspnBlockParams::init_with_reduced(4, 2, &mut rng);
    assert_eq!(p.reduced, 2);
    assert_eq!(p.proj_w, Projection { in_dim: 2, out_dim: 48, ..p.proj_w.clone() });
    let x = Tensor4::random_uniform(Dims::new(1, 4, 3, 3), -1.0, 1.0, &mut rng);
    let (_, cache) = block_forward_cached(&x, &p, 1).unwrap();
    let g = block_backward(&p, &cache, &x).unwrap();
    assert_eq!(g.dparams.reduce.out_dim, 2);
}


#[test]
fn toy_training_decreases_loss() {
    for kind in [ToyKind::Identity, ToyKind::FixedBlur] {
        let r = train_toy(&ToyTask::new(kind, 1), 100, kind.default_lr()).unwrap();
        assert!(r.final_loss() < 0.9 * r.initial_loss(), "{kind:?}: {:.4}", r.ratio());
    }
}
