//! Domain basis: baseline conditional mean `μ̂⁰`, shift matrix `B̂` and its
//! smallest singular value.
//!
//! The default estimator evaluates every domain's one-step map on one shared
//! pool of lag contexts (taken from pure-domain runs) so the per-domain means
//! differ only through the mechanism. [`estimate_basis_observational`] is the
//! plain per-domain mean, which is biased whenever domains have different
//! stationary distributions.

use crate::encoder::EncoderMode;
use crate::error::{invalid, Error, Result};
use crate::generator::{check_simplex, MechanismSet};
use crate::linalg::{norm2, pseudoinverse, svd, Matrix};
use crate::rng::{normal, substream, Purpose};
use crate::Scalar;

pub const SIGMA_MIN_ERROR: f64 = 1e-6;
pub const SIGMA_MIN_WARN: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct DomainBasis<S> {
    /// Domains the basis spans; `domains[0]` is the baseline.
    pub domains: Vec<usize>,
    pub mu0: Vec<S>,
    /// `d × (n - 1)`; column `j` is `μ̂(domains[j+1]) − μ̂⁰`.
    pub b: Matrix<S>,
    pub sigma_min: S,
    pub sample_counts: Vec<usize>,
    /// Set when `σ_min` is in the warning band.
    pub warning: Option<String>,
}

impl<S: Scalar> DomainBasis<S> {
    pub fn new(domains: Vec<usize>, mu0: Vec<S>, b: Matrix<S>, sample_counts: Vec<usize>) -> Result<Self> {
        if b.rows() != mu0.len() || b.cols() + 1 != domains.len() {
            return invalid("basis shapes disagree with mu0 / domain list");
        }
        if b.cols() == 0 {
            return invalid("basis needs at least two domains");
        }
        let sigma_min = svd(&b)?.sigma_min();
        if b.rows() < b.cols() {
            return Err(Error::DegenerateBasis { sigma_min: 0.0 });
        }
        if !(sigma_min.f64() >= SIGMA_MIN_ERROR) {
            return Err(Error::DegenerateBasis { sigma_min: sigma_min.f64() });
        }
        let warning = (sigma_min.f64() < SIGMA_MIN_WARN).then(|| {
            format!("sigma_min = {:.3e} is in the geometric-bottleneck band; recovery will be ill-conditioned", sigma_min.f64())
        });
        Ok(DomainBasis { domains, mu0, b, sigma_min, sample_counts, warning })
    }

    /// Builds from per-domain means (first entry is the baseline).
    pub fn from_means(domains: Vec<usize>, means: &[Vec<S>], sample_counts: Vec<usize>) -> Result<Self> {
        if means.len() < 2 || means.len() != domains.len() {
            return invalid("need one mean per domain and at least two domains");
        }
        let mu0 = means[0].clone();
        let cols: Vec<Vec<S>> = means[1..].iter().map(|m| m.iter().zip(&mu0).map(|(a, b)| *a - *b).collect()).collect();
        Self::new(domains, mu0, Matrix::from_columns(&cols), sample_counts)
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// Number of basis domains including the baseline.
    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn pinv(&self) -> Result<Matrix<S>> {
        pseudoinverse(&self.b)
    }

    /// Shift coordinates of a full K-vector: entries for `domains[1..]`.
    pub fn shift_coords(&self, alpha_full: &[S]) -> Vec<S> {
        self.domains[1..].iter().map(|&j| alpha_full[j]).collect()
    }

    /// `μ̂⁰ + B̂ e_k` for a basis domain `k`; `None` when `k` is not a basis domain.
    pub fn domain_mean(&self, k: usize) -> Option<Vec<S>> {
        let pos = self.domains.iter().position(|&d| d == k)?;
        if pos == 0 {
            return Some(self.mu0.clone());
        }
        Some(self.mu0.iter().zip(self.b.col(pos - 1)).map(|(&m, b)| m + b).collect())
    }

    /// Permutes representation dimensions: new row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mu0 = perm.iter().map(|&p| self.mu0[p]).collect();
        let b = Matrix::from_fn(self.b.rows(), self.b.cols(), |i, j| self.b[(perm[i], j)]);
        Self::new(self.domains.clone(), mu0, b, self.sample_counts.clone())
    }
}

/// Plain per-domain means of encoded pure-domain data. `skip` leading rows of
/// each trajectory are dropped.
pub fn estimate_basis_observational<S: Scalar>(domains: &[usize], encodings: &[Vec<Matrix<S>>], skip: usize) -> Result<DomainBasis<S>> {
    if encodings.len() < 2 || encodings.len() != domains.len() {
        return invalid("need encodings for at least two domains");
    }
    let mut means = Vec::with_capacity(encodings.len());
    let mut counts = Vec::with_capacity(encodings.len());
    for (dom, runs) in domains.iter().zip(encodings) {
        let d = runs.first().map_or(0, |m| m.cols());
        let mut acc = vec![S::zero(); d];
        let mut n = 0usize;
        for m in runs {
            for t in skip..m.rows() {
                for (a, v) in acc.iter_mut().zip(m.row(t)) {
                    *a += *v;
                }
                n += 1;
            }
        }
        if n < 50 {
            return invalid(format!("domain {dom} has {n} usable timesteps, need at least 50"));
        }
        let nn = S::lit(n as f64);
        means.push(acc.into_iter().map(|a| a / nn).collect());
        counts.push(n);
    }
    DomainBasis::from_means(domains.to_vec(), &means, counts)
}

/// Shared pool of lag contexts `(z_{t-1}, z_{t-2})` with one transition-noise
/// draw per context, reused for every domain and every mixture.
#[derive(Clone, Debug)]
pub struct SharedContext<S> {
    d: usize,
    c1: Matrix<S>,
    /// `W_base c1 + b`.
    base_pre: Matrix<S>,
    /// `σ(W_lag2 c2)`.
    lag: Matrix<S>,
    noise: Matrix<S>,
}

impl<S: Scalar> SharedContext<S> {
    /// Collects every `(z_{t-1}, z_{t-2})` pair of the given latent runs.
    pub fn from_trajectories(ms: &MechanismSet<S>, runs: &[&Matrix<S>], noise_sigma: f64, seed: u64) -> Result<Self> {
        let mut pairs: Vec<(&[S], &[S])> = Vec::new();
        for m in runs {
            if m.cols() != ms.d {
                return invalid("context trajectories must have d columns");
            }
            for t in 2..m.rows() {
                pairs.push((m.row(t - 1), m.row(t - 2)));
            }
        }
        Self::from_pairs(ms, &pairs, noise_sigma, seed)
    }

    pub fn from_pairs(ms: &MechanismSet<S>, pairs: &[(&[S], &[S])], noise_sigma: f64, seed: u64) -> Result<Self> {
        let (d, n) = (ms.d, pairs.len());
        if n == 0 {
            return invalid("empty context pool");
        }
        let mut c1 = Matrix::zeros(n, d);
        let mut base_pre = Matrix::zeros(n, d);
        let mut lag = Matrix::zeros(n, d);
        let mut noise = Matrix::zeros(n, d);
        let mut rng = substream(seed, Purpose::Oracle, 0);
        let sigma = S::lit(noise_sigma);
        for (r, (z1, z2)) in pairs.iter().enumerate() {
            c1.row_mut(r).copy_from_slice(z1);
            let pre = ms.w_base.matvec(z1);
            let lg = ms.w_lag2.matvec(z2);
            for i in 0..d {
                base_pre[(r, i)] = pre[i] + ms.drive[i];
                lag[(r, i)] = ms.activate(lg[i]);
                noise[(r, i)] = if noise_sigma > 0.0 { sigma * normal::<S, _>(&mut rng) } else { S::zero() };
            }
        }
        Ok(SharedContext { d, c1, base_pre, lag, noise })
    }

    pub fn len(&self) -> usize {
        self.c1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.c1.rows() == 0
    }

    /// Mean representation of the next state under mixture `alpha` (full K-vector).
    pub fn mean_response(&self, ms: &MechanismSet<S>, alpha: &[S], enc: &EncoderMode<S>) -> Result<Vec<S>> {
        if alpha.len() != ms.k {
            return invalid("alpha length differs from K");
        }
        check_simplex(alpha, 1e-9)?;
        let d = self.d;
        let mut acc = vec![S::zero(); d];
        let mut z = vec![S::zero(); d];
        let mut out = vec![S::zero(); d];
        let weights: Vec<(usize, usize, S)> = ms
            .delta_cells
            .iter()
            .enumerate()
            .filter(|(kk, _)| alpha[kk + 1] != S::zero())
            .map(|(kk, &(i, j))| (i, j, alpha[kk + 1] * ms.deltas[kk][(i, j)]))
            .collect();
        for r in 0..self.len() {
            let bp = self.base_pre.row(r);
            z.copy_from_slice(bp);
            let c1 = self.c1.row(r);
            for &(i, j, w) in &weights {
                z[i] += w * c1[j];
            }
            let lg = self.lag.row(r);
            let nz = self.noise.row(r);
            for i in 0..d {
                z[i] = ms.activate(ms.activate(z[i]) + lg[i]) + nz[i];
            }
            enc.apply_row(&z, &mut out);
            for (a, o) in acc.iter_mut().zip(&out) {
                *a += *o;
            }
        }
        let n = S::lit(self.len() as f64);
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// [`mean_response`](Self::mean_response) for many mixtures. Output
    /// coordinates fed only by latent rows no active delta touches are taken
    /// from the baseline mean, so results match the one-at-a-time version
    /// bit for bit.
    pub fn mean_responses(&self, ms: &MechanismSet<S>, alphas: &[Vec<S>], enc: &EncoderMode<S>) -> Result<Vec<Vec<S>>> {
        let d = self.d;
        let mut e0 = vec![S::zero(); ms.k];
        e0[0] = S::one();
        let base = self.mean_response(ms, &e0, enc)?;
        // Output coordinate i reads latent row src[i].
        let src: Vec<usize> = match enc.distortion() {
            Some(dist) => dist.perm.clone(),
            None => (0..d).collect(),
        };
        let n = S::lit(self.len() as f64);
        let mut z = vec![S::zero(); d];
        let mut out = vec![S::zero(); d];
        let mut results = Vec::with_capacity(alphas.len());
        for alpha in alphas {
            if alpha.len() != ms.k {
                return invalid("alpha length differs from K");
            }
            check_simplex(alpha, 1e-9)?;
            let weights: Vec<(usize, usize, S)> = ms
                .delta_cells
                .iter()
                .enumerate()
                .filter(|(kk, _)| alpha[kk + 1] != S::zero())
                .map(|(kk, &(i, j))| (i, j, alpha[kk + 1] * ms.deltas[kk][(i, j)]))
                .collect();
            let mut touched = vec![false; d];
            for &(i, _, _) in &weights {
                touched[i] = true;
            }
            let dims: Vec<usize> = (0..d).filter(|&i| touched[src[i]]).collect();
            if dims.is_empty() {
                results.push(base.clone());
                continue;
            }
            let rows: Vec<usize> = (0..d).filter(|&i| touched[i]).collect();
            let mut acc = vec![S::zero(); d];
            for r in 0..self.len() {
                let bp = self.base_pre.row(r);
                let c1 = self.c1.row(r);
                let (lg, nz) = (self.lag.row(r), self.noise.row(r));
                for &i in &rows {
                    z[i] = bp[i];
                }
                for &(i, j, w) in &weights {
                    z[i] += w * c1[j];
                }
                for &i in &rows {
                    z[i] = ms.activate(ms.activate(z[i]) + lg[i]) + nz[i];
                }
                match enc {
                    EncoderMode::Oracle => {
                        for &i in &dims {
                            acc[i] += z[i];
                        }
                    }
                    EncoderMode::Distorted(dist) => {
                        for &i in &dims {
                            out[i] = dist.warp(i, z[src[i]]);
                            acc[i] += out[i];
                        }
                    }
                }
            }
            let mut m = base.clone();
            for &i in &dims {
                m[i] = acc[i] / n;
            }
            results.push(m);
        }
        Ok(results)
    }
}

/// Shared-context estimator: `μ̂(k)` is the mean encoded one-step response of
/// domain `k` over the context pool.
pub fn estimate_basis<S: Scalar>(ms: &MechanismSet<S>, ctx: &SharedContext<S>, enc: &EncoderMode<S>, domains: &[usize]) -> Result<DomainBasis<S>> {
    if domains.len() < 2 {
        return invalid("need at least two domains");
    }
    if ctx.len() < 50 {
        return invalid(format!("{} shared contexts, need at least 50", ctx.len()));
    }
    let means = domain_means(ms, ctx, enc, domains)?;
    DomainBasis::from_means(domains.to_vec(), &means, vec![ctx.len(); domains.len()])
}

/// Noise-free basis at one context `(z_{t-1}, z_{t-2})`. With identity
/// activation and the oracle encoder it is exact for that step.
pub fn estimate_basis_analytic<S: Scalar>(ms: &MechanismSet<S>, z1: &[S], z2: &[S], enc: &EncoderMode<S>, domains: &[usize]) -> Result<DomainBasis<S>> {
    if domains.len() < 2 {
        return invalid("need at least two domains");
    }
    let ctx = SharedContext::from_pairs(ms, &[(z1, z2)], 0.0, 0)?;
    let means = domain_means(ms, &ctx, enc, domains)?;
    DomainBasis::from_means(domains.to_vec(), &means, vec![1; domains.len()])
}

fn domain_means<S: Scalar>(ms: &MechanismSet<S>, ctx: &SharedContext<S>, enc: &EncoderMode<S>, domains: &[usize]) -> Result<Vec<Vec<S>>> {
    domains
        .iter()
        .map(|&k| {
            if k >= ms.k {
                return invalid(format!("domain {k} out of range"));
            }
            let mut a = vec![S::zero(); ms.k];
            a[k] = S::one();
            ctx.mean_response(ms, &a, enc)
        })
        .collect()
}

/// `‖μ̂_mixed(α) − μ̂⁰ − B̂α‖` for one full K-vector `alpha`.
pub fn linearization_residual<S: Scalar>(
    ms: &MechanismSet<S>,
    basis: &DomainBasis<S>,
    ctx: &SharedContext<S>,
    enc: &EncoderMode<S>,
    alpha: &[S],
) -> Result<S> {
    let mixed = ctx.mean_response(ms, alpha, enc)?;
    let shift = basis.b.matvec(&basis.shift_coords(alpha));
    let r: Vec<S> = (0..basis.dim()).map(|i| mixed[i] - basis.mu0[i] - shift[i]).collect();
    Ok(norm2(&r))
}

/// Pairwise mixtures of basis domains at 1/4, 1/2, 3/4 plus the barycentre.
pub fn default_probes<S: Scalar>(k: usize, domains: &[usize]) -> Vec<Vec<S>> {
    let mut probes = Vec::new();
    for (x, &a) in domains.iter().enumerate() {
        for &b in &domains[x + 1..] {
            for f in [0.25, 0.5, 0.75] {
                let mut v = vec![S::zero(); k];
                v[a] = S::lit(1.0 - f);
                v[b] = S::lit(f);
                probes.push(v);
            }
        }
    }
    let mut v = vec![S::zero(); k];
    for &a in domains {
        v[a] = S::lit(1.0 / domains.len() as f64);
    }
    probes.push(v);
    probes
}

/// Maximum linearization residual over the probes.
pub fn estimate_delta_approx<S: Scalar>(
    ms: &MechanismSet<S>,
    basis: &DomainBasis<S>,
    probes: &[Vec<S>],
    ctx: &SharedContext<S>,
    enc: &EncoderMode<S>,
) -> Result<S> {
    let mut worst = S::zero();
    for p in probes {
        for (j, &v) in p.iter().enumerate() {
            if v != S::zero() && !basis.domains.contains(&j) {
                return invalid(format!("probe puts mass on domain {j}, outside the basis"));
            }
        }
        worst = worst.max(linearization_residual(ms, basis, ctx, enc, p)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_shift_basis() {
        let v = [0.3, -0.4, 0.0];
        let base: Vec<Matrix<f64>> = vec![Matrix::from_fn(60, 3, |t, j| (t + j) as f64 * 0.01)];
        let shifted: Vec<Matrix<f64>> = vec![Matrix::from_fn(60, 3, |t, j| (t + j) as f64 * 0.01 + v[j])];
        let b = estimate_basis_observational(&[0, 1], &[base, shifted], 0).unwrap();
        for i in 0..3 {
            assert!((b.b[(i, 0)] - v[i]).abs() < 1e-12);
        }
        assert!((b.sigma_min - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_domains_are_degenerate() {
        let m: Vec<Matrix<f64>> = vec![Matrix::from_fn(60, 3, |t, j| (t * j) as f64)];
        let err = estimate_basis_observational(&[0, 1], &[m.clone(), m], 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateBasis { .. }));
    }

    #[test]
    fn too_few_samples_rejected() {
        let m: Vec<Matrix<f64>> = vec![Matrix::from_fn(10, 2, |t, _| t as f64)];
        assert!(estimate_basis_observational(&[0, 1], &[m.clone(), m], 0).is_err());
    }

    #[test]
    fn batched_means_match_single() {
        use crate::encoder::{DistortionRanges, EncoderDistortion};
        let ms: MechanismSet<f64> = crate::generator::build_mechanism_set(6, 4, 0.5, 3).unwrap();
        let runs: Vec<Matrix<f64>> = (0..3).map(|i| Matrix::from_fn(30, 6, |t, j| ((t * 5 + j * 3 + i) as f64 * 0.37).sin())).collect();
        let refs: Vec<&Matrix<f64>> = runs.iter().collect();
        let ctx = SharedContext::from_trajectories(&ms, &refs, 0.1, 1).unwrap();
        let alphas = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.2, 0.3, 0.5, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
        for enc in [EncoderMode::Oracle, EncoderMode::Distorted(EncoderDistortion::random(6, &DistortionRanges::default(), 0.0, 2))] {
            let batch = ctx.mean_responses(&ms, &alphas, &enc).unwrap();
            for (a, m) in alphas.iter().zip(&batch) {
                assert_eq!(&ctx.mean_response(&ms, a, &enc).unwrap(), m);
            }
        }
    }

    #[test]
    fn warning_band() {
        let b = DomainBasis::new(vec![0, 1], vec![0.0, 0.0], Matrix::from_rows(&[vec![0.01], vec![0.0]]), vec![1, 1]).unwrap();
        assert!(b.warning.is_some());
        assert!(DomainBasis::new(vec![0, 1], vec![0.0], Matrix::from_rows(&[vec![1e-8]]), vec![1, 1]).is_err());
    }

    #[test]
    fn default_probes_cover_pairs() {
        let p: Vec<Vec<f64>> = default_probes(5, &[0, 2, 4]);
        assert_eq!(p.len(), 3 * 3 + 1);
        assert!(p.iter().all(|v| (v.iter().sum::<f64>() - 1.0).abs() < 1e-15 && v[1] == 0.0));
    }
}
