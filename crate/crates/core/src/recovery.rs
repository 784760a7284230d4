//! Recovering the mixing trajectory: pointwise least squares onto the basis,
//! simplex projection, window or quadratic-difference smoothing, GCV for the
//! smoothing weight, and boundary calibration.
//!
//! The solver works in shift coordinates (`α_1..α_{n-1}` over the basis
//! domains); full simplex vectors are `[1 − Σα, α_1, ..]` before projection.

use crate::basis::DomainBasis;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2, pseudoinverse, solve_tridiagonal, symmetric_eigendecomposition, tridiagonal_inverse_diagonal, Matrix};
use crate::Scalar;

#[derive(Clone, Debug)]
pub struct RecoveryResult<S> {
    /// Domains indexing the alpha columns; `domains[0]` is the baseline.
    pub domains: Vec<usize>,
    /// Unprojected estimates in shift coordinates (`T × (n-1)`), as produced by
    /// the estimator that made `smoothed_alphas`.
    pub pre_projection: Vec<Vec<S>>,
    /// Pointwise estimates, projected (`T × n`).
    pub raw_alphas: Vec<Vec<S>>,
    pub smoothed_alphas: Vec<Vec<S>>,
    pub calibrated_alphas: Option<Vec<Vec<S>>>,
    /// `‖ẑ_t − μ̂⁰ − B̂α̂_t‖` with the pointwise, unprojected `α̂_t`.
    pub residual_norms: Vec<S>,
    pub lambda_used: S,
    pub window_used: usize,
    pub warning: Option<String>,
}

impl<S: Scalar> RecoveryResult<S> {
    pub fn len(&self) -> usize {
        self.raw_alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_alphas.is_empty()
    }

    /// Calibrated alphas when present, otherwise smoothed.
    pub fn best(&self) -> &[Vec<S>] {
        self.calibrated_alphas.as_deref().unwrap_or(&self.smoothed_alphas)
    }

    pub fn mean_residual(&self) -> S {
        let n = S::lit(self.residual_norms.len().max(1) as f64);
        self.residual_norms.iter().copied().sum::<S>() / n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    Gcv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SmoothingConfig {
    None,
    Window(usize),
    Tv { lambda: Lambda, grid: Vec<f64> },
}

impl SmoothingConfig {
    pub fn tv_auto() -> Self {
        SmoothingConfig::Tv { lambda: Lambda::Gcv, grid: default_lambda_grid() }
    }
}

/// 25 log-spaced values in `[0.1, 50]`.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi, n) = (0.1f64.ln(), 50f64.ln(), 25);
    (0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    if v.is_empty() {
        return invalid("cannot project an empty vector");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return invalid("non-finite entry in simplex projection");
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = S::zero();
    let mut theta = S::zero();
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let th = (css - S::one()) / S::lit((i + 1) as f64);
        if ui - th > S::zero() {
            theta = th;
        }
    }
    let mut out: Vec<S> = v.iter().map(|&x| (x - theta).max(S::zero())).collect();
    // Absorb rounding so the output sums to one.
    let sum: S = out.iter().copied().sum();
    if let Some(big) = out.iter_mut().max_by(|a, b| a.partial_cmp(b).unwrap()) {
        *big += S::one() - sum;
    }
    Ok(out)
}

/// `[1 − Σα, α_1, ..]`.
pub fn lift<S: Scalar>(shift: &[S]) -> Vec<S> {
    let mut v = Vec::with_capacity(shift.len() + 1);
    v.push(S::one() - shift.iter().copied().sum::<S>());
    v.extend_from_slice(shift);
    v
}

fn check_encoded<S: Scalar>(encoded: &Matrix<S>, basis: &DomainBasis<S>) -> Result<()> {
    if encoded.cols() != basis.dim() {
        return invalid(format!("encoded has {} columns, basis has dimension {}", encoded.cols(), basis.dim()));
    }
    if encoded.rows() == 0 || !encoded.is_finite() {
        return invalid("encoded trajectory is empty or non-finite");
    }
    Ok(())
}

fn centered<S: Scalar>(encoded: &Matrix<S>, basis: &DomainBasis<S>) -> Matrix<S> {
    Matrix::from_fn(encoded.rows(), encoded.cols(), |t, i| encoded[(t, i)] - basis.mu0[i])
}

fn project_all<S: Scalar>(shift: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
    shift.iter().map(|a| project_simplex(&lift(a))).collect()
}

/// `α̂(t) = Proj(lift(B̂†(ẑ_t − μ̂⁰)))`.
pub fn recover_pointwise<S: Scalar>(encoded: &Matrix<S>, basis: &DomainBasis<S>) -> Result<RecoveryResult<S>> {
    check_encoded(encoded, basis)?;
    let pinv = basis.pinv()?;
    let y = centered(encoded, basis);
    let mut pre = Vec::with_capacity(y.rows());
    let mut residual_norms = Vec::with_capacity(y.rows());
    for t in 0..y.rows() {
        let a = pinv.matvec(y.row(t));
        let fit = basis.b.matvec(&a);
        let r: Vec<S> = y.row(t).iter().zip(&fit).map(|(u, v)| *u - *v).collect();
        residual_norms.push(norm2(&r));
        pre.push(a);
    }
    let raw = project_all(&pre)?;
    Ok(RecoveryResult {
        domains: basis.domains.clone(),
        pre_projection: pre,
        smoothed_alphas: raw.clone(),
        raw_alphas: raw,
        calibrated_alphas: None,
        residual_norms,
        lambda_used: S::zero(),
        window_used: 0,
        warning: basis.warning.clone(),
    })
}

/// Centered moving average of the projected pointwise estimates; the first
/// and last `w` steps keep their unsmoothed values.
pub fn smooth_window<S: Scalar>(result: &RecoveryResult<S>, w: usize) -> Result<RecoveryResult<S>> {
    let t_len = result.raw_alphas.len();
    if 2 * w + 1 > t_len {
        return invalid(format!("window 2*{w}+1 exceeds T = {t_len}"));
    }
    let n = result.raw_alphas.first().map_or(0, |a| a.len());
    let mut out = result.raw_alphas.clone();
    let denom = S::lit((2 * w + 1) as f64);
    for t in w..t_len - w {
        let mut acc = vec![S::zero(); n];
        for row in &result.raw_alphas[t - w..=t + w] {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += *v;
            }
        }
        let avg: Vec<S> = acc.into_iter().map(|a| a / denom).collect();
        out[t] = project_simplex(&avg)?;
    }
    let mut r = result.clone();
    r.smoothed_alphas = out;
    r.window_used = w;
    r.calibrated_alphas = None;
    Ok(r)
}

/// Eigen-rotated form of the quadratic-difference smoother, reused across λ.
struct TvProblem<S> {
    t_len: usize,
    eigvals: Vec<S>,
    eigvecs: Matrix<S>,
    /// Rotated right-hand sides, one vector of length T per component.
    rhs: Vec<Vec<S>>,
    y: Matrix<S>,
}

impl<S: Scalar> TvProblem<S> {
    fn new(encoded: &Matrix<S>, basis: &DomainBasis<S>) -> Result<Self> {
        check_encoded(encoded, basis)?;
        let t_len = encoded.rows();
        if t_len < 3 {
            return invalid("TV smoothing needs T >= 3");
        }
        if basis.sigma_min.f64() < crate::basis::SIGMA_MIN_ERROR {
            return Err(Error::DegenerateBasis { sigma_min: basis.sigma_min.f64() });
        }
        let y = centered(encoded, basis);
        let gram = basis.b.transpose().matmul(&basis.b);
        let (eigvals, eigvecs) = symmetric_eigendecomposition(&gram)?;
        let m = eigvals.len();
        // Row t of Y B U, split by component.
        let bu = basis.b.matmul(&eigvecs);
        let mut rhs = vec![vec![S::zero(); t_len]; m];
        for t in 0..t_len {
            let row = bu.tmatvec(y.row(t));
            for k in 0..m {
                rhs[k][t] = row[k];
            }
        }
        Ok(TvProblem { t_len, eigvals, eigvecs, rhs, y })
    }

    fn system(&self, k: usize, lambda: S) -> (Vec<S>, Vec<S>) {
        let t = self.t_len;
        let mut diag = vec![self.eigvals[k] + S::lit(2.0) * lambda; t];
        diag[0] = self.eigvals[k] + lambda;
        diag[t - 1] = self.eigvals[k] + lambda;
        (diag, vec![-lambda; t - 1])
    }

    /// Unprojected minimizer in shift coordinates.
    fn solve(&self, lambda: S) -> Result<Vec<Vec<S>>> {
        let m = self.eigvals.len();
        let mut beta = Vec::with_capacity(m);
        for k in 0..m {
            let (diag, off) = self.system(k, lambda);
            beta.push(solve_tridiagonal(&diag, &off, &self.rhs[k])?);
        }
        Ok((0..self.t_len)
            .map(|t| {
                let bt: Vec<S> = (0..m).map(|k| beta[k][t]).collect();
                self.eigvecs.matvec(&bt)
            })
            .collect())
    }

    /// Smoother degrees of freedom `Σ_k λ_k tr((λ_k I + λ D₁ᵀD₁)⁻¹)`.
    fn dof(&self, lambda: S) -> Result<S> {
        let mut df = S::zero();
        for k in 0..self.eigvals.len() {
            if lambda == S::zero() {
                df += S::lit(self.t_len as f64);
                continue;
            }
            let (diag, off) = self.system(k, lambda);
            let inv = tridiagonal_inverse_diagonal(&diag, &off)?;
            df += self.eigvals[k] * inv.into_iter().sum::<S>();
        }
        Ok(df)
    }

    fn rss(&self, basis: &DomainBasis<S>, alphas: &[Vec<S>]) -> S {
        let mut rss = S::zero();
        for (t, a) in alphas.iter().enumerate() {
            let fit = basis.b.matvec(a);
            for (u, v) in self.y.row(t).iter().zip(&fit) {
                rss += (*u - *v) * (*u - *v);
            }
        }
        rss
    }
}

/// GCV score `RSS / (n − df)²` with `n = T·d` scalar observations.
pub fn gcv_score<S: Scalar>(encoded: &Matrix<S>, basis: &DomainBasis<S>, lambda: f64) -> Result<S> {
    let p = TvProblem::new(encoded, basis)?;
    gcv_with(&p, basis, S::lit(lambda))
}

fn gcv_with<S: Scalar>(p: &TvProblem<S>, basis: &DomainBasis<S>, lambda: S) -> Result<S> {
    let alphas = p.solve(lambda)?;
    let rss = p.rss(basis, &alphas);
    let n = S::lit((p.t_len * basis.dim()) as f64);
    let slack = n - p.dof(lambda)?;
    if slack <= S::zero() {
        return Ok(S::infinity());
    }
    Ok(rss / (slack * slack))
}

/// Grid value minimizing the GCV score (first one on ties).
pub fn select_lambda_gcv<S: Scalar>(encoded: &Matrix<S>, basis: &DomainBasis<S>, grid: &[f64]) -> Result<S> {
    if grid.is_empty() {
        return invalid("empty lambda grid");
    }
    if grid.iter().any(|l| !(*l >= 0.0)) {
        return invalid("lambda grid must be nonnegative");
    }
    let p = TvProblem::new(encoded, basis)?;
    let mut best = (S::infinity(), S::lit(grid[0]));
    for &l in grid {
        let l = S::lit(l);
        let score = gcv_with(&p, basis, l)?;
        if score < best.0 {
            best = (score, l);
        }
    }
    Ok(best.1)
}

/// Minimizes `Σ‖ẑ_t − μ̂⁰ − B̂α_t‖² + λ Σ‖α_{t+1} − α_t‖²` exactly, then
/// projects each step onto the simplex.
pub fn smooth_tv<S: Scalar>(encoded: &Matrix<S>, basis: &DomainBasis<S>, lambda: &Lambda, grid: &[f64]) -> Result<RecoveryResult<S>> {
    let lam = match lambda {
        Lambda::Fixed(l) => {
            if !(*l >= 0.0) {
                return invalid("lambda must be nonnegative");
            }
            S::lit(*l)
        }
        Lambda::Gcv => select_lambda_gcv(encoded, basis, grid)?,
    };
    let pointwise = recover_pointwise(encoded, basis)?;
    let p = TvProblem::new(encoded, basis)?;
    let pre = p.solve(lam)?;
    let smoothed = project_all(&pre)?;
    Ok(RecoveryResult { pre_projection: pre, smoothed_alphas: smoothed, lambda_used: lam, ..pointwise })
}

/// Runs pointwise recovery followed by the configured smoother.
pub fn recover<S: Scalar>(encoded: &Matrix<S>, basis: &DomainBasis<S>, cfg: &SmoothingConfig) -> Result<RecoveryResult<S>> {
    match cfg {
        SmoothingConfig::None => recover_pointwise(encoded, basis),
        SmoothingConfig::Window(w) => smooth_window(&recover_pointwise(encoded, basis)?, *w),
        SmoothingConfig::Tv { lambda, grid } => smooth_tv(encoded, basis, lambda, grid),
    }
}

/// Per-component affine map `α ↦ a α + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration<S> {
    pub scale: Vec<S>,
    pub offset: Vec<S>,
}

pub const CALIBRATION_WINDOW: usize = 5;

fn boundary_means<S: Scalar>(alphas: &[Vec<S>], len: usize) -> (Vec<S>, Vec<S>) {
    let n = alphas[0].len();
    let t_len = alphas.len();
    let mean = |rows: &[Vec<S>]| -> Vec<S> {
        let mut acc = vec![S::zero(); n];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += *v;
            }
        }
        acc.into_iter().map(|a| a / S::lit(rows.len() as f64)).collect()
    };
    (mean(&alphas[..len]), mean(&alphas[t_len - len..]))
}

/// Fits per-component `(a_k, b_k)` so the mean of the first and last five
/// smoothed steps land on the known boundary states. Components whose known
/// endpoints agree only get an offset.
pub fn fit_two_point<S: Scalar>(result: &RecoveryResult<S>, start: &[S], end: &[S]) -> Result<Calibration<S>> {
    let n = result.domains.len();
    if start.len() != n || end.len() != n {
        return invalid("boundary vectors must match the basis domains");
    }
    crate::generator::check_simplex(start, 1e-9)?;
    crate::generator::check_simplex(end, 1e-9)?;
    let gap: Vec<S> = start.iter().zip(end).map(|(a, b)| *b - *a).collect();
    if norm2(&gap) <= S::lit(1e-9) {
        return Err(Error::CalibrationDegenerate);
    }
    let len = CALIBRATION_WINDOW.min(result.len() / 2).max(1);
    let (s_hat, e_hat) = boundary_means(&result.smoothed_alphas, len);
    let mut scale = vec![S::one(); n];
    let mut offset = vec![S::zero(); n];
    for k in 0..n {
        let est_gap = e_hat[k] - s_hat[k];
        if gap[k].abs() > S::lit(1e-9) && est_gap.abs() > S::lit(1e-12) {
            scale[k] = gap[k] / est_gap;
            offset[k] = start[k] - scale[k] * s_hat[k];
        } else {
            offset[k] = (start[k] + end[k] - s_hat[k] - e_hat[k]) / S::lit(2.0);
        }
    }
    Ok(Calibration { scale, offset })
}

pub fn apply_calibration<S: Scalar>(result: &RecoveryResult<S>, cal: &Calibration<S>) -> Result<RecoveryResult<S>> {
    let cal_alphas = result
        .smoothed_alphas
        .iter()
        .map(|a| {
            let v: Vec<S> = a.iter().enumerate().map(|(k, x)| cal.scale[k] * *x + cal.offset[k]).collect();
            project_simplex(&v)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = result.clone();
    r.calibrated_alphas = Some(cal_alphas);
    Ok(r)
}

/// Two-point calibration against known start and end states (basis-domain order).
pub fn calibrate_two_point<S: Scalar>(result: &RecoveryResult<S>, start: &[S], end: &[S]) -> Result<RecoveryResult<S>> {
    apply_calibration(result, &fit_two_point(result, start, end)?)
}

/// Full-matrix correction `α ↦ M α + c` in shift coordinates, fitted by least
/// squares from anchor steps with known weights. Needs at least `n` anchors
/// (n = number of basis domains) whose estimates are affinely independent.
pub fn calibrate_matrix<S: Scalar>(result: &RecoveryResult<S>, anchors: &[(usize, Vec<S>)]) -> Result<RecoveryResult<S>> {
    let n = result.domains.len();
    let m = n - 1;
    if anchors.len() < n {
        return invalid(format!("matrix calibration needs at least {n} anchors"));
    }
    let mut design = Matrix::zeros(anchors.len(), n);
    let mut target = Matrix::zeros(anchors.len(), m);
    for (r, (t, alpha)) in anchors.iter().enumerate() {
        if *t >= result.len() || alpha.len() != n {
            return invalid("anchor out of range or wrong length");
        }
        let est = &result.smoothed_alphas[*t];
        for k in 0..m {
            design[(r, k)] = est[k + 1];
            target[(r, k)] = alpha[k + 1];
        }
        design[(r, m)] = S::one();
    }
    let coef = pseudoinverse(&design).map_err(|_| Error::CalibrationDegenerate)?.matmul(&target);
    let cal_alphas = result
        .smoothed_alphas
        .iter()
        .map(|a| {
            let mut x = a[1..].to_vec();
            x.push(S::one());
            let shift: Vec<S> = (0..m).map(|k| dot(&x, &coef.col(k))).collect();
            project_simplex(&lift(&shift))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = result.clone();
    r.calibrated_alphas = Some(cal_alphas);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis2() -> DomainBasis<f64> {
        DomainBasis::new(vec![0, 1, 2], vec![0.5, -0.5, 0.0], Matrix::from_rows(&[vec![1.0, 0.2], vec![0.0, 0.8], vec![0.3, 0.0]]), vec![100; 3]).unwrap()
    }

    fn encode_alphas(basis: &DomainBasis<f64>, shifts: &[Vec<f64>]) -> Matrix<f64> {
        let rows: Vec<Vec<f64>> = shifts
            .iter()
            .map(|a| basis.b.matvec(a).iter().zip(&basis.mu0).map(|(x, m)| x + m).collect())
            .collect();
        Matrix::from_rows(&rows)
    }

    #[test]
    fn projection_basics() {
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let v = [0.2, 0.3, 0.5];
        let p: Vec<f64> = project_simplex(&v).unwrap();
        for (a, b) in p.iter().zip(v) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(project_simplex(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn baseline_point_recovers_vertex() {
        let b = basis2();
        let enc = Matrix::from_rows(&[b.mu0.clone()]);
        let r = recover_pointwise(&enc, &b).unwrap();
        assert_eq!(r.raw_alphas[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn window_zero_and_constant() {
        let b = basis2();
        let shifts: Vec<Vec<f64>> = (0..20).map(|t| vec![0.01 * t as f64, 0.3]).collect();
        let r = recover_pointwise(&encode_alphas(&b, &shifts), &b).unwrap();
        assert_eq!(smooth_window(&r, 0).unwrap().smoothed_alphas, r.raw_alphas);
        assert!(smooth_window(&r, 10).is_err());
        let flat = recover_pointwise(&encode_alphas(&b, &vec![vec![0.2, 0.3]; 20]), &b).unwrap();
        let s = smooth_window(&flat, 4).unwrap();
        for (a, c) in s.smoothed_alphas.iter().zip(&flat.raw_alphas) {
            for (x, y) in a.iter().zip(c) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tv_zero_lambda_is_pointwise() {
        let b = basis2();
        let enc = Matrix::from_fn(15, 3, |t, i| ((t * 3 + i) as f64).sin());
        let pw = recover_pointwise(&enc, &b).unwrap();
        let tv = smooth_tv(&enc, &b, &Lambda::Fixed(0.0), &[]).unwrap();
        for (a, c) in pw.pre_projection.iter().zip(&tv.pre_projection) {
            for (x, y) in a.iter().zip(c) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tv_huge_lambda_flattens() {
        let b = basis2();
        let enc = Matrix::from_fn(30, 3, |t, i| ((t * 3 + i) as f64).sin());
        let tv = smooth_tv(&enc, &b, &Lambda::Fixed(1e8), &[]).unwrap();
        let first = &tv.pre_projection[0];
        for a in &tv.pre_projection {
            for (x, y) in a.iter().zip(first) {
                assert!((x - y).abs() < 1e-4);
            }
        }
        assert!(smooth_tv(&enc, &b, &Lambda::Fixed(-1.0), &[]).is_err());
    }

    #[test]
    fn gcv_singleton_grid() {
        let b = basis2();
        let enc = Matrix::from_fn(30, 3, |t, i| ((t * 3 + i) as f64).sin());
        assert_eq!(select_lambda_gcv(&enc, &b, &[0.0]).unwrap(), 0.0);
        assert!(select_lambda_gcv(&enc, &b, &[]).is_err());
    }

    #[test]
    fn calibration_identity_on_exact_endpoints() {
        let b = basis2();
        let shifts: Vec<Vec<f64>> = (0..40).map(|t| vec![t as f64 / 39.0, 0.0]).collect();
        let r = recover_pointwise(&encode_alphas(&b, &shifts), &b).unwrap();
        let s = smooth_window(&r, 0).unwrap();
        // endpoints are averages of the first/last 5 steps, so feed those
        let (st, en) = boundary_means(&s.smoothed_alphas, 5);
        let cal = fit_two_point(&s, &st, &en).unwrap();
        assert!((cal.scale[1] - 1.0).abs() < 1e-6 && cal.offset[1].abs() < 1e-6);
        assert!(matches!(fit_two_point(&s, &st, &st), Err(Error::CalibrationDegenerate)));
    }

    #[test]
    fn lambda_grid_spans_range() {
        let g = default_lambda_grid();
        assert!((g[0] - 0.1).abs() < 1e-12 && (g[24] - 50.0).abs() < 1e-9);
    }
}
