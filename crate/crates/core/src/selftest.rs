//! Oracle suite behind the `selftest` subcommand: each fast routine is
//! checked against a slow, independent reference on random inputs.

use std::time::Instant;

use rand::Rng;

use crate::error::Result;
use crate::generator::MixingMap;
use crate::linalg::{optimal_assignment, solve_tridiagonal, Matrix};
use crate::recovery::project_simplex;
use crate::rng::{normal_vec, substream, Purpose};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst deviation seen.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "{} {}: worst {:.3e} (tol {:.0e}, {:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.seconds
        )
    }
}

fn timed(name: &'static str, tolerance: f64, f: impl FnOnce() -> Result<f64>) -> Result<Check> {
    let t0 = Instant::now();
    let worst = f()?;
    Ok(Check { name, passed: worst <= tolerance, worst, tolerance, seconds: t0.elapsed().as_secs_f64() })
}

/// Minimizes `‖x − v‖²` over the simplex by pairwise mass transfers with a
/// shrinking step. Slow but only uses the objective.
pub fn simplex_projection_search(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let f = |x: &[f64]| x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut x = vec![1.0 / n as f64; n];
    let mut h: f64 = 0.5;
    while h > 1e-7 {
        let mut improved = true;
        while improved {
            improved = false;
            for i in 0..n {
                for j in 0..n {
                    if i == j || x[j] <= 0.0 {
                        continue;
                    }
                    let step = h.min(x[j]);
                    let mut y = x.clone();
                    y[i] += step;
                    y[j] -= step;
                    if f(&y) < f(&x) {
                        x = y;
                        improved = true;
                    }
                }
            }
        }
        h /= 2.0;
    }
    x
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= m * a[c][k];
            }
            b[r] -= m * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Minimum assignment cost by enumerating all permutations (Heap's algorithm).
pub fn brute_force_assignment(cost: &Matrix<f64>) -> f64 {
    let n = cost.rows();
    let mut p: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum::<f64>();
    let mut best = total(&p);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            best = best.min(total(&p));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub fn check_projection(points: usize, seed: u64) -> Result<Check> {
    timed("simplex projection vs pairwise search", 1e-4, || {
        let mut rng = substream(seed, Purpose::Oracle, 1);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let k = rng.random_range(2..=5);
            let v: Vec<f64> = normal_vec::<f64, _>(&mut rng, k).into_iter().map(|x| x * 0.8 + 1.0 / k as f64).collect();
            let fast = project_simplex(&v)?;
            let slow = simplex_projection_search(&v);
            worst = worst.max(fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        Ok(worst)
    })
}

pub fn check_tridiagonal(systems: usize, seed: u64) -> Result<Check> {
    timed("Thomas solver vs dense elimination", 1e-10, || {
        let mut rng = substream(seed, Purpose::Oracle, 2);
        let mut worst: f64 = 0.0;
        for _ in 0..systems {
            let n = rng.random_range(2..40);
            let off: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let diag: Vec<f64> = (0..n).map(|_| 2.0 + rng.random_range(0.0..3.0)).collect();
            let rhs: Vec<f64> = normal_vec(&mut rng, n);
            let fast = solve_tridiagonal(&diag, &off, &rhs)?;
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                a[i][i] = diag[i];
                if i + 1 < n {
                    a[i][i + 1] = off[i];
                    a[i + 1][i] = off[i];
                }
            }
            let slow = dense_solve(a, rhs);
            worst = worst.max(fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        Ok(worst)
    })
}

pub fn check_assignment(matrices: usize, seed: u64) -> Result<Check> {
    timed("Hungarian vs 8! enumeration", 0.0, || {
        let mut rng = substream(seed, Purpose::Oracle, 3);
        let mut worst: f64 = 0.0;
        for _ in 0..matrices {
            // Integer costs keep the comparison exact.
            let cost = Matrix::from_fn(8, 8, |_, _| rng.random_range(0..100) as f64);
            let perm = optimal_assignment(&cost)?;
            let got: f64 = perm.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum();
            worst = worst.max((got - brute_force_assignment(&cost)).abs());
        }
        Ok(worst)
    })
}

pub fn check_mixing_round_trip(samples: usize, seed: u64) -> Result<Check> {
    timed("mixing map round trip", 1e-8, || {
        let mut rng = substream(seed, Purpose::Oracle, 4);
        let mut worst: f64 = 0.0;
        for (depth, p) in [(1, 8), (2, 8), (3, 12)] {
            let map: MixingMap<f64> = MixingMap::new(8, p, depth, seed)?;
            for _ in 0..samples {
                let z: Vec<f64> = normal_vec::<f64, _>(&mut rng, 8).into_iter().map(|x| 2.0 * x).collect();
                let back = map.invert(&map.apply(&z), 1e-6)?;
                worst = worst.max(z.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
        }
        Ok(worst)
    })
}

/// The full oracle suite at the acceptance sizes.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        check_projection(500, seed)?,
        check_tridiagonal(100, seed)?,
        check_assignment(50, seed)?,
        check_mixing_round_trip(100, seed)?,
    ])
}
