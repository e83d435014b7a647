use gspn::attention::{linear_attention_causal, SeqBatch};
use gspn::oracle::{
    self, check_row_stochastic_product, check_spectral_stability, expand_from_lines, merged_affinity,
    normalized_line, LineGeometry, TridiagonalLine,
};
use gspn::{Dims, Direction, FirstLine, GateField, ScanConfig, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_line<R: Rng>(n: usize, spread: f64, rng: &mut R) -> TridiagonalLine {
    let mut g = || (0..n).map(|_| rng.gen_range(-spread..spread)).collect::<Vec<f64>>();
    let (a, b, c) = (g(), g(), g());
    normalized_line(&a, &b, &c)
}

#[test]
fn identity_propagation_is_causal_linear_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [1usize, 2, 7, 16, 33, 64] {
        let width = 3;
        let geom = LineGeometry::new(Direction::TopToBottom, n, width);
        let lines = vec![TridiagonalLine::identity(width); n];
        let dims = Dims::new(1, 1, n, width);
        let lam = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let u = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let x = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let lam_lines: Vec<Vec<f64>> = (0..n).map(|i| geom.line_values(&lam, 0, 0, i)).collect();
        let g = expand_from_lines(&geom, 1, FirstLine::Learned, &lines, &lam_lines).unwrap();
        let h = g.matvec(x.data());
        for col in 0..width {
            let column = |t: &Tensor4<f64>| SeqBatch::new(n, 1, (0..n).map(|r| t.get(0, 0, r, col)).collect()).unwrap();
            let la = linear_attention_causal(&column(&u), &column(&lam), &column(&x)).unwrap();
            for r in 0..n {
                let y = u.get(0, 0, r, col) * h[r * width + col];
                assert!((y - la.data()[r]).abs() < 1e-10, "n={n} col={col} row={r}");
            }
        }
    }
}

#[test]
fn unit_features_with_identity_lines_give_prefix_sums() {
    let n = 5;
    let geom = LineGeometry::new(Direction::TopToBottom, n, 1);
    let lines = vec![TridiagonalLine::identity(1); n];
    let g = expand_from_lines(&geom, 1, FirstLine::Learned, &lines, &vec![vec![1.0]; n]).unwrap();
    assert_eq!(g.matvec(&[1.0, 2.0, 3.0, 4.0, 5.0]), vec![1.0, 3.0, 6.0, 10.0, 15.0]);
}

#[test]
fn diagonal_blocks_are_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gf = GateField::<f64>::random(Dims::new(1, 1, 5, 4), 2.0, &mut rng);
    for dir in Direction::ALL {
        let geom = LineGeometry::new(dir, 5, 4);
        let g = oracle::expand_dense_g(&gf, &ScanConfig::global(dir), 0, 0).unwrap();
        for i in 0..geom.n_lines() {
            let blk = g.block(&geom, i, i);
            let lam = geom.line_values(&gf.lam, 0, 0, i);
            let n = geom.line_len();
            for p in 0..n {
                for q in 0..n {
                    assert_eq!(blk[p * n + q], if p == q { lam[p] } else { 0.0 });
                }
            }
            for j in i + 1..geom.n_lines() {
                assert!(g.block(&geom, i, j).iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn random_chains_stay_row_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let n = rng.gen_range(1..=16);
        let len = rng.gen_range(1..=64);
        let lines: Vec<_> = (0..len).map(|_| random_line(n, 4.0, &mut rng)).collect();
        let report = check_row_stochastic_product(&lines).unwrap();
        assert!(report.max_deviation <= 1e-12);
        assert!(report.min_entry >= 0.0);
    }
}

#[test]
fn long_chains_fill_in() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lines: Vec<_> = (0..30).map(|_| random_line(8, 2.0, &mut rng)).collect();
    let report = check_row_stochastic_product(&lines).unwrap();
    assert_eq!(report.final_zero_entries, 0);
    // A product of k tridiagonal lines has half-bandwidth k.
    let short = check_row_stochastic_product(&lines[..3]).unwrap();
    for r in 0..8usize {
        for c in 0..8usize {
            let v = short.product[r * 8 + c];
            assert_eq!(v == 0.0, r.abs_diff(c) > 3, "({r},{c})");
        }
    }
}

#[test]
fn normalized_lines_have_unit_gershgorin_bound_and_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.gen_range(1..=16);
        let line = random_line(n, 4.0, &mut rng);
        let rep = check_spectral_stability(&line);
        assert!((rep.gershgorin_bound - 1.0).abs() <= 1e-12);
        let rho = rep.spectral_radius.unwrap();
        assert!(rho <= 1.0 + 1e-12, "spectral radius {rho}");
        // σ_max is the 2-norm, which for a row-stochastic matrix is at least
        // the root-mean-square column sum and hence at least one.
        let sigma = rep.sigma_max.unwrap();
        let dense = line.to_dense();
        let rms = ((0..n)
            .map(|c| (0..n).map(|r| dense[r * n + c]).sum::<f64>().powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(sigma >= rms * (1.0 - 1e-9), "σ_max {sigma} below rms column sum {rms}");
    }
}

#[test]
fn merged_affinity_is_dense_on_small_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for side in [4usize, 8] {
        for trial in 0..5 {
            let dims = Dims::new(1, 1, side, side);
            let gates: [GateField<f64>; 4] = std::array::from_fn(|_| GateField::random(dims, 3.0, &mut rng));
            let merge = if trial == 0 {
                [0.25; 4]
            } else {
                std::array::from_fn(|_| rng.gen_range(0.01..1.0))
            };
            let g = merged_affinity(&gates, merge, 0, 0).unwrap();
            assert_eq!(g.zero_count(), 0, "side {side} trial {trial}");
        }
    }
}

#[test]
fn single_direction_merge_is_that_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = Dims::new(1, 1, 4, 5);
    let gates: [GateField<f64>; 4] = std::array::from_fn(|_| GateField::random(dims, 3.0, &mut rng));
    for k in 0..4 {
        let mut merge = [0.0; 4];
        merge[k] = 1.0;
        let m = merged_affinity(&gates, merge, 0, 0).unwrap();
        let g = oracle::expand_dense_g(&gates[k], &ScanConfig::global(Direction::ALL[k]), 0, 0).unwrap();
        assert_eq!(m.as_slice(), g.as_slice());
    }
}

#[test]
fn top_to_bottom_heat_stays_above_the_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gf = GateField::<f64>::random(Dims::new(1, 1, 6, 6), 2.0, &mut rng);
    let g = oracle::expand_dense_g(&gf, &ScanConfig::global(Direction::TopToBottom), 0, 0).unwrap();
    let (qr, qc) = (3, 2);
    let map = g.query_map(qr, qc);
    for r in 0..6usize {
        for c in 0..6usize {
            let v = map[r * 6 + c];
            let reachable = r <= qr && c.abs_diff(qc) <= qr - r;
            assert_eq!(v != 0.0, reachable, "({r},{c})");
        }
    }
}

#[test]
fn left_to_right_corner_query_sees_only_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let gf = GateField::<f64>::random(Dims::new(1, 1, 5, 5), 2.0, &mut rng);
    let g = oracle::expand_dense_g(&gf, &ScanConfig::global(Direction::LeftToRight), 0, 0).unwrap();
    let map = g.query_map(0, 0);
    for (k, &v) in map.iter().enumerate() {
        assert_eq!(v != 0.0, k == 0);
    }
    // One column in, the cone covers rows 0 and 1 of column 0.
    let map = g.query_map(0, 1);
    let nz: Vec<usize> = (0..25).filter(|&k| map[k] != 0.0).collect();
    assert_eq!(nz, vec![0, 1, 5]);
}

#[test]
fn oracle_refuses_large_grids() {
    let gf = GateField::<f64>::uniform(Dims::new(1, 1, 65, 64), 0.0);
    let err = oracle::expand_dense_g(&gf, &ScanConfig::global(Direction::TopToBottom), 0, 0).unwrap_err();
    assert!(matches!(err, gspn::Error::ScaleGuard { .. }));
}
