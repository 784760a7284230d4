use mechmix::basis::DomainBasis;
use mechmix::diagnostics::{ks_two_sample, snr_eff};
use mechmix::encoder::{encode, DistortionRanges};
use mechmix::generator::{build_mechanism_set, check_simplex, make_schedule, Family};
use mechmix::linalg::{pseudoinverse, solve_tridiagonal, svd, Matrix};
use mechmix::metrics::{mcc, ranks, weight_correlation, CorrelationKind};
use mechmix::recovery::{calibrate_two_point, project_simplex, recover, SmoothingConfig};
use mechmix::{EncoderDistortion, MechanismSet};
use mechmix::rng::{normal_vec, substream, Purpose};
use proptest::prelude::*;

fn vec_in(len: std::ops::RangeInclusive<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    len.prop_flat_map(move |n| prop::collection::vec(lo..hi, n))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn random_means(k: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, Purpose::Oracle, 99);
    (0..k).map(|_| normal_vec(&mut rng, d)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_lands_on_simplex(v in vec_in(2..=6, -3.0, 3.0)) {
        let p = project_simplex(&v).unwrap();
        check_simplex(&p, 1e-9).unwrap();
    }

    #[test]
    fn projection_is_idempotent(v in vec_in(2..=6, -3.0, 3.0)) {
        let p = project_simplex(&v).unwrap();
        let q = project_simplex(&p).unwrap();
        prop_assert!(dist(&p, &q) < 1e-12);
    }

    #[test]
    fn projection_is_nonexpansive(pair in (2usize..=6).prop_flat_map(|n| (prop::collection::vec(-3.0..3.0f64, n), prop::collection::vec(-3.0..3.0f64, n)))) {
        let (a, b) = pair;
        let (pa, pb) = (project_simplex(&a).unwrap(), project_simplex(&b).unwrap());
        prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
    }

    #[test]
    fn projection_beats_every_vertex(v in vec_in(2..=6, -3.0, 3.0)) {
        let p = project_simplex(&v).unwrap();
        for k in 0..v.len() {
            let mut e = vec![0.0; v.len()];
            e[k] = 1.0;
            prop_assert!(dist(&p, &v) <= dist(&e, &v) + 1e-12);
        }
    }

    #[test]
    fn pinv_satisfies_penrose(m in (2usize..=8, 1usize..=4).prop_flat_map(|(r, c)| matrix(r.max(c), c))) {
        if let Ok(p) = pseudoinverse(&m) {
            let mpm = m.matmul(&p).matmul(&m);
            let pmp = p.matmul(&m).matmul(&p);
            let scale = 1.0 + m.max_abs() * p.max_abs();
            prop_assert!(mpm.sub(&m).max_abs() < 1e-9 * scale);
            prop_assert!(pmp.sub(&p).max_abs() < 1e-9 * scale * p.max_abs().max(1.0));
            let mp = m.matmul(&p);
            prop_assert!(mp.sub(&mp.transpose()).max_abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn svd_reconstructs_and_sorts(m in (1usize..=7, 1usize..=7).prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = svd(&m).unwrap();
        prop_assert!(s.reconstruct().sub(&m).max_abs() < 1e-10);
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_values_ignore_row_permutation(m in matrix(6, 3), seed in 0u64..1000) {
        let mut perm: Vec<usize> = (0..6).collect();
        perm.rotate_left((seed % 6) as usize);
        let p = Matrix::from_fn(6, 3, |i, j| m[(perm[i], j)]);
        let (a, b) = (svd(&m).unwrap(), svd(&p).unwrap());
        for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn tridiagonal_residual_small(n in 2usize..60, seed in 0u64..10_000) {
        let f = |i: usize, s: u64| ((i as f64 + 1.0) * (s as f64 + 0.5) * 0.618).sin();
        let off: Vec<f64> = (0..n - 1).map(|i| f(i, seed)).collect();
        let diag: Vec<f64> = (0..n).map(|i| 2.5 + f(i, seed + 7).abs()).collect();
        let rhs: Vec<f64> = (0..n).map(|i| f(i, seed + 13)).collect();
        let x = solve_tridiagonal(&diag, &off, &rhs).unwrap();
        for i in 0..n {
            let mut r = diag[i] * x[i] - rhs[i];
            if i > 0 { r += off[i - 1] * x[i - 1]; }
            if i + 1 < n { r += off[i] * x[i + 1]; }
            prop_assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn ks_symmetric(a in vec_in(20..=60, -3.0, 3.0), b in vec_in(20..=60, -3.0, 3.0)) {
        let (s1, p1) = ks_two_sample(&a, &b).unwrap();
        let (s2, p2) = ks_two_sample(&b, &a).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-12 && (p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn ks_invariant_under_increasing_map(a in vec_in(20..=60, -3.0, 3.0), b in vec_in(20..=60, -3.0, 3.0)) {
        let g = |x: &f64| (0.7 * x).exp() + x.powi(3);
        let (ga, gb): (Vec<f64>, Vec<f64>) = (a.iter().map(g).collect(), b.iter().map(g).collect());
        let (s1, _) = ks_two_sample(&a, &b).unwrap();
        let (s2, _) = ks_two_sample(&ga, &gb).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn snr_monotone(sm in 0.05..2.0f64, res in 0.01..2.0f64, delta in 0.0..0.5f64, bump in 0.01..1.0f64) {
        let base = snr_eff(sm, res, delta).unwrap();
        prop_assert!(snr_eff(sm + bump, res, delta).unwrap() > base);
        prop_assert!(snr_eff(sm, res + bump, delta).unwrap() < base);
        prop_assert!(snr_eff(sm, res, delta + bump).unwrap() < base);
    }

    #[test]
    fn ranks_are_a_permutation_of_positions(v in prop::collection::vec(-100i32..100, 1..40)) {
        let x: Vec<f64> = v.iter().map(|&i| i as f64).collect();
        let r = ranks(&x);
        let n = x.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spearman_mcc_ignores_warps_and_permutations(seed in 0u64..10_000, decreasing in any::<bool>()) {
        let z = Matrix::from_fn(120, 5, |t, j| ((t as f64 * (0.37 + 0.11 * j as f64)) + seed as f64).sin() * (1.0 + j as f64) + 0.01 * t as f64);
        let ranges = DistortionRanges { allow_decreasing: decreasing, ..DistortionRanges::default() };
        let d: EncoderDistortion = EncoderDistortion::random(5, &ranges, 0.0, seed);
        let (score, _) = mcc(&encode(&z, &d, seed, 0).unwrap(), &z, CorrelationKind::SpearmanAbs).unwrap();
        prop_assert!((score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn effective_transition_is_affine(seed in 0u64..1000, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let ms: MechanismSet = build_mechanism_set(6, 4, 0.5, seed).unwrap();
        let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
        let p = norm(vec![1.0, a, b, 0.3]);
        let q = norm(vec![0.2, b, 1.0, a]);
        let lam = 0.35;
        let mix: Vec<f64> = p.iter().zip(&q).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
        let wp = ms.effective_transition(&p).unwrap();
        let wq = ms.effective_transition(&q).unwrap();
        let wm = ms.effective_transition(&mix).unwrap();
        prop_assert!(wm.sub(&wp.scale(lam).add(&wq.scale(1.0 - lam))).max_abs() < 1e-12);
    }

    #[test]
    fn basis_permutation_equivariance(seed in 0u64..1000) {
        let means = random_means(4, 7, seed);
        let b = DomainBasis::from_means(vec![0, 1, 2, 3], &means, vec![1; 4]).unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        perm.rotate_left((seed % 7) as usize);
        let p = b.permuted(&perm).unwrap();
        prop_assert!((p.sigma_min - b.sigma_min).abs() < 1e-10);
        for i in 0..7 {
            for j in 0..3 {
                prop_assert!((p.b[(i, j)] - b.b[(perm[i], j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_linear_data_recovers_truth(seed in 0u64..1000, family in prop::sample::select(vec![Family::Sequential, Family::Oscillating, Family::Overlapping])) {
        let means = random_means(3, 6, seed);
        let basis = DomainBasis::from_means(vec![0, 1, 2], &means, vec![1; 3]).unwrap();
        let sched = make_schedule::<f64>(family, 60, 3, &[0, 1, 2]).unwrap();
        let rows: Vec<Vec<f64>> = sched.alphas.iter().map(|a| {
            let lin = basis.b.matvec(&a[1..]);
            basis.mu0.iter().zip(&lin).map(|(m, l)| m + l).collect()
        }).collect();
        let r = recover(&Matrix::from_rows(&rows), &basis, &SmoothingConfig::None).unwrap();
        for (est, truth) in r.raw_alphas.iter().zip(&sched.alphas) {
            prop_assert!(dist(est, truth) < 1e-8);
        }
    }

    #[test]
    fn calibration_undoes_compression(factor in 0.3..0.9f64, seed in 0u64..100) {
        let means = random_means(2, 4, seed);
        let basis = DomainBasis::from_means(vec![0, 1], &means, vec![1; 2]).unwrap();
        let sched = make_schedule::<f64>(Family::Sequential, 80, 2, &[0, 1]).unwrap();
        // Observed shift shrinks toward the midpoint by `factor`.
        let rows: Vec<Vec<f64>> = sched.alphas.iter().map(|a| {
            let w = 0.5 + factor * (a[1] - 0.5);
            basis.mu0.iter().zip(basis.b.col(0)).map(|(m, b)| m + w * b).collect()
        }).collect();
        let raw = recover(&Matrix::from_rows(&rows), &basis, &SmoothingConfig::None).unwrap();
        let truth = sched.restricted(&[0, 1]);
        let cal = calibrate_two_point(&raw, &truth[0], &truth[truth.len() - 1]).unwrap();
        let corr = weight_correlation(cal.calibrated_alphas.as_ref().unwrap(), &truth).unwrap();
        prop_assert!(corr > 0.999);
        let err_raw: f64 = raw.smoothed_alphas.iter().zip(&truth).map(|(a, b)| dist(a, b)).sum();
        let err_cal: f64 = cal.calibrated_alphas.unwrap().iter().zip(&truth).map(|(a, b)| dist(a, b)).sum();
        prop_assert!(err_cal <= err_raw);
    }
}
