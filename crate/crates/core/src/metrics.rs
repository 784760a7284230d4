//! Scores: MCC over latent dimensions, correlation of mixing weights, MAE and
//! correlation of the implied `W(t)` entries.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::generator::MechanismSet;
use crate::linalg::{optimal_assignment, Matrix};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CorrelationKind {
    PearsonAbs,
    #[default]
    SpearmanAbs,
}

impl FromStr for CorrelationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson_abs" | "pearson" => Ok(CorrelationKind::PearsonAbs),
            "spearman_abs" | "spearman" => Ok(CorrelationKind::SpearmanAbs),
            _ => invalid(format!("unknown correlation kind '{s}'")),
        }
    }
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationKind::PearsonAbs => "pearson_abs",
            CorrelationKind::SpearmanAbs => "spearman_abs",
        })
    }
}

pub fn pearson<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() || a.len() < 2 {
        return invalid("pearson needs two equal-length samples of size >= 2");
    }
    let n = S::lit(a.len() as f64);
    let ma = a.iter().copied().sum::<S>() / n;
    let mb = b.iter().copied().sum::<S>() / n;
    let (mut sab, mut saa, mut sbb) = (S::zero(), S::zero(), S::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == S::zero() || sbb == S::zero() {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).max(-S::one()).min(S::one()))
}

/// Ranks starting at 1, ties get their average rank.
pub fn ranks<S: Scalar>(x: &[S]) -> Vec<S> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![S::zero(); x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = S::lit((i + j) as f64 / 2.0 + 1.0);
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    pearson(&ranks(a), &ranks(b))
}

/// Mean matched |correlation| between columns of `estimated` and `truth`.
/// `perm[i]` is the truth column matched to estimated column `i`.
pub fn mcc<S: Scalar>(estimated: &Matrix<S>, truth: &Matrix<S>, kind: CorrelationKind) -> Result<(S, Vec<usize>)> {
    if estimated.rows() != truth.rows() || estimated.cols() != truth.cols() {
        return invalid("mcc inputs must have the same shape");
    }
    if truth.rows() < 3 {
        return invalid("mcc needs T >= 3");
    }
    let d = truth.cols();
    let prep = |m: &Matrix<S>| -> Vec<Vec<S>> {
        (0..d)
            .map(|j| match kind {
                CorrelationKind::PearsonAbs => m.col(j),
                CorrelationKind::SpearmanAbs => ranks(&m.col(j)),
            })
            .collect()
    };
    let (ce, ct) = (prep(estimated), prep(truth));
    let mut corr = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            corr[(i, j)] = pearson(&ce[i], &ct[j]).map_err(|e| e.context(format!("mcc column pair ({i}, {j})")))?.abs();
        }
    }
    let perm = optimal_assignment(&corr.scale(-S::one()))?;
    let score = perm.iter().enumerate().map(|(i, &j)| corr[(i, j)]).sum::<S>() / S::lit(d as f64);
    Ok((score, perm))
}

fn check_shapes<S>(a: &[Vec<S>], b: &[Vec<S>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return invalid("alpha trajectories must have the same shape");
    }
    Ok(())
}

/// Pearson correlation over all flattened `(t, k)` pairs.
pub fn weight_correlation<S: Scalar>(estimated: &[Vec<S>], truth: &[Vec<S>]) -> Result<S> {
    check_shapes(estimated, truth)?;
    let a: Vec<S> = estimated.iter().flatten().copied().collect();
    let b: Vec<S> = truth.iter().flatten().copied().collect();
    pearson(&a, &b)
}

/// Per-component Pearson correlations; `None` for components with no variance.
pub fn per_component_correlation<S: Scalar>(estimated: &[Vec<S>], truth: &[Vec<S>]) -> Result<Vec<Option<S>>> {
    check_shapes(estimated, truth)?;
    let n = truth.first().map_or(0, |r| r.len());
    Ok((0..n)
        .map(|k| {
            let a: Vec<S> = estimated.iter().map(|r| r[k]).collect();
            let b: Vec<S> = truth.iter().map(|r| r[k]).collect();
            pearson(&a, &b).ok()
        })
        .collect())
}

/// Pearson correlation over every entry of `W(t)` built from both trajectories.
pub fn w_trajectory_correlation<S: Scalar>(ms: &MechanismSet<S>, estimated: &[Vec<S>], truth: &[Vec<S>]) -> Result<S> {
    check_shapes(estimated, truth)?;
    let mut a = Vec::with_capacity(truth.len() * ms.d * ms.d);
    let mut b = Vec::with_capacity(truth.len() * ms.d * ms.d);
    for (e, t) in estimated.iter().zip(truth) {
        a.extend_from_slice(ms.effective_transition(e)?.as_slice());
        b.extend_from_slice(ms.effective_transition(t)?.as_slice());
    }
    pearson(&a, &b)
}

pub fn mae<S: Scalar>(estimated: &[Vec<S>], truth: &[Vec<S>]) -> Result<S> {
    check_shapes(estimated, truth)?;
    let n = truth.iter().map(|r| r.len()).sum::<usize>().max(1);
    let s: S = estimated.iter().flatten().zip(truth.iter().flatten()).map(|(x, y)| (*x - *y).abs()).sum();
    Ok(s / S::lit(n as f64))
}

pub fn mse<S: Scalar>(estimated: &[Vec<S>], truth: &[Vec<S>]) -> Result<S> {
    check_shapes(estimated, truth)?;
    let n = truth.iter().map(|r| r.len()).sum::<usize>().max(1);
    let s: S = estimated.iter().flatten().zip(truth.iter().flatten()).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    Ok(s / S::lit(n as f64))
}

/// Lifts alphas over basis domains into full K-vectors.
pub fn embed_alphas<S: Scalar>(alphas: &[Vec<S>], domains: &[usize], k: usize) -> Vec<Vec<S>> {
    alphas
        .iter()
        .map(|a| {
            let mut v = vec![S::zero(); k];
            for (x, &j) in a.iter().zip(domains) {
                v[j] = *x;
            }
            v
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ScoreCard<S> {
    pub mcc: S,
    pub mcc_kind: CorrelationKind,
    pub assignment: Vec<usize>,
    pub weight_corr: S,
    pub weight_corr_per_component: Vec<Option<S>>,
    pub mae_raw: S,
    pub mae_cal: Option<S>,
    pub w_traj_corr: S,
}

impl<S: Scalar> ScoreCard<S> {
    pub fn csv_header() -> String {
        "mcc,weight_corr,mae_raw,mae_cal,w_traj_corr".into()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{},{:.6}",
            self.mcc.f64(),
            self.weight_corr.f64(),
            self.mae_raw.f64(),
            self.mae_cal.map_or("NA".to_string(), |v| format!("{:.6}", v.f64())),
            self.w_traj_corr.f64()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> Matrix<f64> {
        Matrix::from_fn(40, 3, |t, j| ((t as f64) * (0.3 + 0.2 * j as f64)).sin() + 0.01 * (t * j) as f64)
    }

    #[test]
    fn mcc_self_and_permuted() {
        let z = truth();
        let (s, p) = mcc(&z, &z, CorrelationKind::SpearmanAbs).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(p, vec![0, 1, 2]);
        let perm = [2, 0, 1];
        let zp = Matrix::from_fn(40, 3, |t, j| z[(t, perm[j])]);
        let (s, p) = mcc(&zp, &z, CorrelationKind::PearsonAbs).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(p, perm.to_vec());
    }

    #[test]
    fn mcc_warp_sensitivity() {
        let z = truth();
        let w = z.map(|x| (3.0 * x).exp());
        let (s, _) = mcc(&w, &z, CorrelationKind::SpearmanAbs).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
        let (p, _) = mcc(&w, &z, CorrelationKind::PearsonAbs).unwrap();
        assert!(p < 1.0 - 1e-3);
    }

    #[test]
    fn mcc_constant_column_errors() {
        let z = truth();
        let c = Matrix::from_fn(40, 3, |t, j| if j == 1 { 1.0 } else { z[(t, j)] });
        assert!(matches!(mcc(&c, &z, CorrelationKind::PearsonAbs).unwrap_err().root(), Error::UndefinedCorrelation(_)));
    }

    #[test]
    fn weight_corr_cases() {
        let a: Vec<Vec<f64>> = (0..30).map(|t| vec![1.0 - t as f64 / 29.0, t as f64 / 29.0]).collect();
        assert!((weight_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let anti: Vec<Vec<f64>> = a.iter().map(|r| vec![r[1], r[0]]).collect();
        assert!(weight_correlation(&anti, &a).unwrap() < 0.0);
        let aff: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|x| 0.5 * x + 0.25).collect()).collect();
        assert!((weight_correlation(&aff, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mae_arithmetic() {
        let t: Vec<Vec<f64>> = vec![vec![0.5, 0.5]; 4];
        let e = vec![vec![0.6, 0.5]; 4];
        assert!((mae(&e, &t).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
