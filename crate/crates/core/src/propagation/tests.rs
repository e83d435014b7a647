use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle;

fn d(b: usize, c: usize, h: usize, w: usize) -> Dims {
    Dims::new(b, c, h, w)
}

#[test]
fn interior_zero_gates_are_thirds() {
    let g = Tensor4::<f64>::zeros(d(1, 1, 3, 3));
    let w = normalize_gates(&g, &g, &g, &ScanConfig::global(Direction::TopToBottom)).unwrap();
    let third = 1.0 / 3.0;
    assert!((w.w1.get(0, 0, 1, 1) - third).abs() < 1e-15);
    assert!((w.w2.get(0, 0, 1, 1) - third).abs() < 1e-15);
    assert!((w.w3.get(0, 0, 1, 1) - third).abs() < 1e-15);
    // Edge pixel without a lower-index neighbor.
    assert_eq!(w.w1.get(0, 0, 1, 0), 0.0);
    assert_eq!(w.w2.get(0, 0, 1, 0), 0.5);
    assert_eq!(w.w3.get(0, 0, 1, 0), 0.5);
    // First line has no predecessor.
    for j in 0..3 {
        assert_eq!(w.w2.get(0, 0, 0, j), 0.0);
    }
}

#[test]
fn ln3_gate_gives_three_sevenths() {
    // σ(ln 3) = 3/4, σ(0) = 1/2: weights (0.75, 0.5, 0.5) / 1.75.
    let g1 = Tensor4::alloc(d(1, 1, 2, 3), 3f64.ln()).unwrap();
    let z = Tensor4::<f64>::zeros(d(1, 1, 2, 3));
    let w = normalize_gates(&g1, &z, &z, &ScanConfig::global(Direction::TopToBottom)).unwrap();
    assert!((w.w1.get(0, 0, 1, 1) - 3.0 / 7.0).abs() < 1e-15);
    assert!((w.w2.get(0, 0, 1, 1) - 2.0 / 7.0).abs() < 1e-15);
    assert!((w.w3.get(0, 0, 1, 1) - 2.0 / 7.0).abs() < 1e-15);
}

#[test]
fn horizontal_gates_index_rows() {
    // Left-to-right: lines are columns, g1 is the row above.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gf = GateField::<f64>::random(d(1, 1, 4, 5), 2.0, &mut rng);
    let w = normalize_gates(&gf.g1, &gf.g2, &gf.g3, &ScanConfig::global(Direction::LeftToRight)).unwrap();
    for r in 0..4 {
        assert_eq!(w.w2.get(0, 0, r, 0), 0.0);
    }
    assert_eq!(w.w1.get(0, 0, 0, 2), 0.0);
    assert_eq!(w.w3.get(0, 0, 3, 2), 0.0);
    let s = w.w1.get(0, 0, 2, 2) + w.w2.get(0, 0, 2, 2) + w.w3.get(0, 0, 2, 2);
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn zero_input_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gf = GateField::<f64>::random(d(2, 3, 5, 4), 4.0, &mut rng);
    gf.lam = Tensor4::alloc(gf.dims(), 1.0).unwrap();
    let x = Tensor4::zeros(gf.dims());
    for dir in Direction::ALL {
        let out = scan_forward(&x, &gf, &ScanConfig::global(dir)).unwrap();
        assert!(out.h.data().iter().all(|&v| v == 0.0));
        assert!(out.y.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_line_has_no_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gf = GateField::<f64>::random(d(1, 2, 1, 6), 2.0, &mut rng);
    let x = Tensor4::random_uniform(gf.dims(), -1.0, 1.0, &mut rng);
    let out = scan_forward(&x, &gf, &ScanConfig::global(Direction::TopToBottom)).unwrap();
    assert_eq!(out.h, x.mul(&gf.lam));
    assert_eq!(out.y, gf.u.mul(&x.mul(&gf.lam)));
}

#[test]
fn two_by_two_hand_example() {
    let x = Tensor4::from_vec(d(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let gf = GateField::uniform(x.dims(), 0.0);
    let cfg = ScanConfig::global(Direction::TopToBottom);
    let out = scan_forward(&x, &gf, &cfg).unwrap();
    assert_eq!(out.h.data(), &[1.0, 2.0, 4.5, 5.5]);
    assert_eq!(out.y, out.h);
    let g = oracle::expand_dense_g(&gf, &cfg, 0, 0).unwrap();
    let hv = g.matvec(x.data());
    for (a, b) in hv.iter().zip([1.0, 2.0, 4.5, 5.5]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let gf = GateField::<f64>::uniform(d(1, 1, 3, 3), 0.0);
    let x = Tensor4::zeros(d(1, 1, 3, 4));
    let err = scan_forward(&x, &gf, &ScanConfig::global(Direction::TopToBottom)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    let x = Tensor4::zeros(d(1, 1, 3, 3));
    let bad = Tensor4::zeros(d(1, 1, 2, 3));
    let err = scan_backward(&x, &gf, &ScanConfig::global(Direction::TopToBottom), &x, &bad).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn group_split_rules() {
    assert_eq!(group_ranges(8, 2).unwrap(), vec![0..4, 4..8]);
    assert_eq!(group_ranges(7, 2).unwrap(), vec![0..3, 3..7]);
    assert_eq!(group_ranges(10, 3).unwrap(), vec![0..3, 3..6, 6..10]);
    assert_eq!(group_ranges(5, 1).unwrap(), vec![0..5]);
    assert!(group_ranges(3, 4).is_err());
    assert!(group_ranges(3, 0).is_err());
    assert!(group_ranges(0, 1).unwrap().is_empty());
}

#[test]
fn empty_tensors_pass_through() {
    let gf = GateField::<f64>::uniform(d(1, 2, 0, 3), 0.0);
    let x = Tensor4::zeros(gf.dims());
    let out = scan_forward(&x, &gf, &ScanConfig::global(Direction::TopToBottom)).unwrap();
    assert!(out.h.is_empty());
    let g = scan_backward(&x, &gf, &ScanConfig::global(Direction::LeftToRight), &out.h, &x).unwrap();
    assert!(g.dx.is_empty());
}

#[test]
fn identity_first_line_skips_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gf = GateField::<f64>::random(d(1, 1, 4, 3), 2.0, &mut rng);
    let x = Tensor4::random_uniform(gf.dims(), -1.0, 1.0, &mut rng);
    let cfg = ScanConfig::local(Direction::TopToBottom, 2).with_first_line(FirstLine::Identity);
    let out = scan_forward(&x, &gf, &cfg).unwrap();
    for j in 0..3 {
        assert_eq!(out.h.get(0, 0, 0, j), x.get(0, 0, 0, j));
        assert_eq!(out.h.get(0, 0, 2, j), x.get(0, 0, 2, j));
    }
    let reference = oracle::dense_scan(&x, &gf, &cfg).unwrap();
    assert!(out.h.max_abs_diff(&reference) < 1e-12);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gf = GateField::<f64>::random(d(1, 2, 4, 5), 2.0, &mut rng);
    let x = Tensor4::random_uniform(gf.dims(), -1.0, 1.0, &mut rng);
    let cfg = ScanConfig::global(Direction::RightToLeft);
    let out = scan_forward(&x, &gf, &cfg).unwrap();
    let g = scan_backward(&x, &gf, &cfg, &out.h, &Tensor4::zeros(x.dims())).unwrap();
    for t in [&g.dx, &g.dlam, &g.dg1, &g.dg2, &g.dg3, &g.du] {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_line_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = d(1, 1, 1, 5);
    let mut gf = GateField::<f64>::random(dims, 2.0, &mut rng);
    gf.u = Tensor4::alloc(dims, 1.0).unwrap();
    gf.lam = Tensor4::alloc(dims, 1.0).unwrap();
    let x = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
    let dy = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
    let cfg = ScanConfig::global(Direction::TopToBottom);
    let out = scan_forward(&x, &gf, &cfg).unwrap();
    let g = scan_backward(&x, &gf, &cfg, &out.h, &dy).unwrap();
    assert_eq!(g.dx, dy);
    assert_eq!(g.dlam, x.mul(&dy));
    for t in [&g.dg1, &g.dg2, &g.dg3] {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn right_to_left_is_flipped_left_to_right() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gf = GateField::<f64>::random(d(1, 2, 4, 6), 2.0, &mut rng);
    let x = Tensor4::random_uniform(gf.dims(), -1.0, 1.0, &mut rng);
    let rtl = scan_forward(&x, &gf, &ScanConfig::global(Direction::RightToLeft)).unwrap();
    let flipped = scan_forward(
        &x.flip_w(),
        &gf.map_tensors(Tensor4::flip_w),
        &ScanConfig::global(Direction::LeftToRight),
    )
    .unwrap();
    assert_eq!(rtl.h, flipped.h.flip_w());
    assert_eq!(rtl.y, flipped.y.flip_w());
}
