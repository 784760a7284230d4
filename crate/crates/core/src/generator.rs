//! Ground-truth dynamics: mechanism sets, mixing schedules, the second-order
//! LeakyReLU recurrence and the invertible observation map.
//!
//! Column convention throughout: `z_t = σ(σ(W(t) z_{t-1} + b) + σ(W_lag2 z_{t-2})) + ε_t`.
//! `b` is a fixed drive that pins the baseline fixed point at
//! `operating_point · 1`; setting the operating point to zero gives the
//! bias-free recurrence.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm2, orthonormalize_columns, svd, Matrix};
use crate::rng::{normal, normal_vec, permutation, substream, Purpose};
use crate::Scalar;

#[inline]
pub fn leaky_relu<S: Scalar>(x: S, slope: S) -> S {
    if x > S::zero() {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_inv<S: Scalar>(y: S, slope: S) -> S {
    if y > S::zero() {
        y
    } else {
        y / slope
    }
}

/// Construction knobs for [`MechanismSet`]. `new` gives the standard setting.
#[derive(Clone, Debug)]
pub struct MechanismSpec {
    pub d: usize,
    pub k: usize,
    pub perturbation_norm: f64,
    pub activation_slope: f64,
    pub base_norm: f64,
    pub lag2_ratio: f64,
    pub operating_point: f64,
    /// Skip the `K ≤ d + 1` check; delta rows wrap around once exhausted.
    pub allow_over_capacity: bool,
}

impl MechanismSpec {
    pub fn new(d: usize, k: usize, perturbation_norm: f64) -> Self {
        MechanismSpec {
            d,
            k,
            perturbation_norm,
            activation_slope: 0.2,
            base_norm: 0.8,
            lag2_ratio: 0.3,
            operating_point: 1.0,
            allow_over_capacity: false,
        }
    }

    pub fn linear(mut self) -> Self {
        self.activation_slope = 1.0;
        self
    }

    pub fn build<S: Scalar>(&self, seed: u64) -> Result<MechanismSet<S>> {
        let (d, k) = (self.d, self.k);
        if d < 2 || k < 2 {
            return invalid(format!("need d >= 2 and K >= 2, got d = {d}, K = {k}"));
        }
        if k > d + 1 && !self.allow_over_capacity {
            return Err(Error::CapacityViolation { k, d });
        }
        if !(self.perturbation_norm > 0.0) || !self.perturbation_norm.is_finite() {
            return invalid("perturbation norm must be positive");
        }
        if k - 1 > d * (d - 1) {
            return invalid("more deltas than off-diagonal cells");
        }
        let mut rng = substream(seed, Purpose::Mechanism, 0);

        let gaussian = |rng: &mut crate::rng::Stream| Matrix::<S>::from_vec(d, d, normal_vec(rng, d * d));
        let mut w_base = gaussian(&mut rng)?;
        let s = svd(&w_base)?.sigma_max();
        w_base = w_base.scale(S::lit(self.base_norm) / s);
        let mut w_lag2 = gaussian(&mut rng)?;
        let s = svd(&w_lag2)?.sigma_max();
        w_lag2 = w_lag2.scale(S::lit(self.lag2_ratio * self.base_norm) / s);

        let rows = permutation(&mut rng, d);
        let cols = permutation(&mut rng, d);
        let mut cells: Vec<(usize, usize)> = Vec::with_capacity(k - 1);
        let mut deltas = Vec::with_capacity(k - 1);
        let norm = S::lit(self.perturbation_norm);
        let mut idx = 0;
        while cells.len() < k - 1 {
            let i = rows[idx % d];
            idx += 1;
            if let Some(&j) = cols.iter().find(|&&j| j != i && !cells.contains(&(i, j))) {
                cells.push((i, j));
                let mut m = Matrix::zeros(d, d);
                m[(i, j)] = norm;
                deltas.push(m);
            }
        }

        let slope = S::lit(self.activation_slope);
        let op = vec![S::lit(self.operating_point); d];
        let lag = w_lag2.matvec(&op);
        let base = w_base.matvec(&op);
        let drive = (0..d).map(|i| op[i] - leaky_relu(lag[i], slope) - base[i]).collect();

        Ok(MechanismSet {
            d,
            k,
            w_base,
            deltas,
            delta_cells: cells,
            w_lag2,
            drive,
            activation_slope: slope,
            perturbation_norm: norm,
        })
    }
}

/// Atomic transition matrices `W^(k) = W_base + δW^(k)` plus the shared lag-2 matrix.
#[derive(Clone, Debug)]
pub struct MechanismSet<S> {
    pub d: usize,
    pub k: usize,
    pub w_base: Matrix<S>,
    /// `K - 1` deltas; domain 0 is the baseline.
    pub deltas: Vec<Matrix<S>>,
    /// `(row, col)` of the single nonzero entry of each delta.
    pub delta_cells: Vec<(usize, usize)>,
    pub w_lag2: Matrix<S>,
    pub drive: Vec<S>,
    pub activation_slope: S,
    pub perturbation_norm: S,
}

/// `K ≤ d + 1` is enforced; see [`MechanismSpec`] for other knobs.
pub fn build_mechanism_set<S: Scalar>(d: usize, k: usize, perturbation_norm: f64, seed: u64) -> Result<MechanismSet<S>> {
    MechanismSpec::new(d, k, perturbation_norm).build(seed)
}

pub fn check_simplex<S: Scalar>(alpha: &[S], tol: f64) -> Result<()> {
    let tol = S::lit(tol);
    let sum: S = alpha.iter().copied().sum();
    if alpha.iter().any(|a| !a.is_finite() || *a < -tol) || (sum - S::one()).abs() > tol {
        return invalid(format!("alpha off the simplex: {:?}", alpha.iter().map(|a| a.f64()).collect::<Vec<_>>()));
    }
    Ok(())
}

impl<S: Scalar> MechanismSet<S> {
    #[inline]
    pub fn activate(&self, x: S) -> S {
        leaky_relu(x, self.activation_slope)
    }

    /// `W_base + Σ_{k≥1} α_k δW^(k)`.
    pub fn effective_transition(&self, alpha: &[S]) -> Result<Matrix<S>> {
        if alpha.len() != self.k {
            return invalid(format!("alpha has {} entries, expected K = {}", alpha.len(), self.k));
        }
        check_simplex(alpha, 1e-9)?;
        Ok(self.transition_unchecked(alpha))
    }

    pub(crate) fn transition_unchecked(&self, alpha: &[S]) -> Matrix<S> {
        let mut w = self.w_base.clone();
        for (kk, &(i, j)) in self.delta_cells.iter().enumerate() {
            w[(i, j)] += alpha[kk + 1] * self.deltas[kk][(i, j)];
        }
        w
    }

    /// One noise-free step of the recurrence under transition `w`.
    pub fn step(&self, w: &Matrix<S>, z1: &[S], z2: &[S]) -> Vec<S> {
        let pre = w.matvec(z1);
        let lag = self.w_lag2.matvec(z2);
        (0..self.d)
            .map(|i| self.activate(self.activate(pre[i] + self.drive[i]) + self.activate(lag[i])))
            .collect()
    }

    /// Smallest singular value of the deltas stacked as rows of a `(K-1) × d²` matrix.
    pub fn distinguishability(&self) -> S {
        let rows: Vec<Vec<S>> = self.deltas.iter().map(|m| m.as_slice().to_vec()).collect();
        svd(&Matrix::from_rows(&rows)).map(|f| f.sigma_min()).unwrap_or(S::zero())
    }

    /// Per-row rank condition: the i-th rows of the deltas touching row i are
    /// linearly independent. Reported, not enforced.
    pub fn row_condition_report(&self) -> Vec<bool> {
        (0..self.d)
            .map(|i| {
                let rows: Vec<Vec<S>> = self
                    .deltas
                    .iter()
                    .filter(|m| m.row(i).iter().any(|x| *x != S::zero()))
                    .map(|m| m.row(i).to_vec())
                    .collect();
                if rows.is_empty() || rows.len() > self.d {
                    return rows.is_empty();
                }
                svd(&Matrix::from_rows(&rows))
                    .map(|f| f.sigma_min() > S::lit(1e-8) * f.sigma_max())
                    .unwrap_or(false)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Sequential,
    Overlapping,
    Oscillating,
    Linear,
    Sinusoidal,
    OneHot(usize),
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Sequential => write!(f, "sequential"),
            Family::Overlapping => write!(f, "overlapping"),
            Family::Oscillating => write!(f, "oscillating"),
            Family::Linear => write!(f, "linear"),
            Family::Sinusoidal => write!(f, "sinusoidal"),
            Family::OneHot(k) => write!(f, "one_hot({k})"),
            Family::Custom => write!(f, "custom"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sequential" => Family::Sequential,
            "overlapping" => Family::Overlapping,
            "oscillating" | "complex" => Family::Oscillating,
            "linear" => Family::Linear,
            "sinusoidal" => Family::Sinusoidal,
            "custom" => Family::Custom,
            other => {
                let k = other
                    .strip_prefix("one_hot(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("unknown schedule family '{other}'")))?;
                Family::OneHot(k)
            }
        })
    }
}

/// Ground-truth mixing weights, one simplex vector over all K domains per step.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingSchedule<S> {
    pub k: usize,
    pub family: Family,
    pub active: Vec<usize>,
    pub alphas: Vec<Vec<S>>,
    pub total_variation: S,
}

impl<S: Scalar> MixingSchedule<S> {
    /// Wraps arbitrary simplex vectors. Active domains are those with any mass.
    pub fn from_alphas(k: usize, alphas: Vec<Vec<S>>) -> Result<Self> {
        for a in &alphas {
            if a.len() != k {
                return invalid("schedule rows must have K entries");
            }
            check_simplex(a, 1e-9)?;
        }
        let active = (0..k).filter(|&j| alphas.iter().any(|a| a[j] > S::zero())).collect();
        Ok(Self::assemble(k, Family::Custom, active, alphas))
    }

    pub fn constant(k: usize, alpha: &[S], len: usize) -> Result<Self> {
        Self::from_alphas(k, vec![alpha.to_vec(); len])
    }

    fn assemble(k: usize, family: Family, active: Vec<usize>, alphas: Vec<Vec<S>>) -> Self {
        let total_variation = alphas
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (*b - *a) * (*b - *a)).sum::<S>().sqrt())
            .sum();
        MixingSchedule { k, family, active, alphas, total_variation }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Weights restricted to the given domains, in that order.
    pub fn restricted(&self, domains: &[usize]) -> Vec<Vec<S>> {
        self.alphas.iter().map(|a| domains.iter().map(|&j| a[j]).collect()).collect()
    }
}

/// Family-specific trajectories over `active` (a list of domain indices < K).
pub fn make_schedule<S: Scalar>(family: Family, t_len: usize, k: usize, active: &[usize]) -> Result<MixingSchedule<S>> {
    if t_len < 2 {
        return invalid("schedule needs T >= 2");
    }
    if let Family::OneHot(j) = family {
        if j >= k {
            return invalid(format!("one_hot({j}) with K = {k}"));
        }
        let mut a = vec![S::zero(); k];
        a[j] = S::one();
        return Ok(MixingSchedule::assemble(k, family, vec![j], vec![a; t_len]));
    }
    let n = active.len();
    if n < 2 {
        return invalid("K_active must be at least 2");
    }
    if n > k || active.iter().any(|&j| j >= k) {
        return invalid("active domains must be indices below K");
    }
    let mut seen = active.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != n {
        return invalid("active domains must be distinct");
    }

    let tf = t_len as f64;
    let weights = |t: usize| -> Vec<f64> {
        let tt = t as f64;
        match family {
            Family::Sequential => {
                let x = tt * (n - 1) as f64 / (tf - 1.0);
                let i = (x.floor() as usize).min(n - 2);
                let f = x - i as f64;
                let mut w = vec![0.0; n];
                w[i] = 1.0 - f;
                w[i + 1] = f;
                w
            }
            Family::Overlapping => {
                let spacing = (tf - 1.0) / (n - 1) as f64;
                let width = 0.57 * spacing;
                (0..n)
                    .map(|j| {
                        let c = j as f64 * spacing;
                        (-(tt - c) * (tt - c) / (2.0 * width * width)).exp()
                    })
                    .collect()
            }
            Family::Oscillating => (0..n)
                .map(|j| {
                    let jf = j as f64;
                    0.5 * (1.0 + ((1.0 + 0.5 * jf) * 2.0 * PI * tt / tf + jf * PI / n as f64).cos())
                })
                .collect(),
            Family::Linear => {
                let s = tt / (tf - 1.0);
                let mut w = vec![s / (n - 1) as f64; n];
                w[0] = 1.0 - s;
                w
            }
            Family::Sinusoidal => (0..n)
                .map(|j| 1.0 + (2.0 * PI * tt / tf - 2.0 * PI * j as f64 / n as f64).sin())
                .collect(),
            Family::OneHot(_) | Family::Custom => unreachable!(),
        }
    };
    if family == Family::Custom {
        return invalid("custom schedules are built with MixingSchedule::from_alphas");
    }
    let alphas = (0..t_len)
        .map(|t| {
            let w = weights(t);
            let sum: f64 = w.iter().sum();
            let mut a = vec![S::zero(); k];
            for (j, &dom) in active.iter().enumerate() {
                a[dom] = S::lit(w[j] / sum);
            }
            a
        })
        .collect();
    Ok(MixingSchedule::assemble(k, family, active.to_vec(), alphas))
}

/// Extra causal edge active only while `α_watch ∈ (lo, hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeInjection<S> {
    pub source: usize,
    pub target: usize,
    pub weight: S,
    pub watch: usize,
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> EdgeInjection<S> {
    /// Edge from latent 1 into latent 4 (zero-based), watching domain 1.
    pub fn standard(weight: f64) -> Self {
        EdgeInjection { source: 1, target: 4, weight: S::lit(weight), watch: 1, lo: S::lit(0.3), hi: S::lit(0.7) }
    }

    #[inline]
    pub fn applies(&self, alpha: &[S]) -> bool {
        let a = alpha[self.watch];
        a > self.lo && a < self.hi
    }

    pub fn apply(&self, w: &mut Matrix<S>) {
        w[(self.target, self.source)] += self.weight;
    }
}

/// Three-domain sequential schedule with the standard emergent-edge rule.
pub fn make_violation_schedule<S: Scalar>(t_len: usize) -> Result<(MixingSchedule<S>, EdgeInjection<S>)> {
    Ok((make_schedule(Family::Sequential, t_len, 3, &[0, 1, 2])?, EdgeInjection::standard(1.0)))
}

/// Layered observation map `x = g(z)`: orthonormal-column linear maps, each
/// followed by LeakyReLU(0.2). Depth 0 is a zero-padded embedding.
#[derive(Clone, Debug)]
pub struct MixingMap<S> {
    pub d: usize,
    pub p: usize,
    pub layers: Vec<Matrix<S>>,
    pub slope: S,
}

impl<S: Scalar> MixingMap<S> {
    pub fn new(d: usize, p: usize, depth: usize, seed: u64) -> Result<Self> {
        if p < d {
            return invalid(format!("observation dim p = {p} below latent dim d = {d}"));
        }
        let mut rng = substream(seed, Purpose::MixingMap, 0);
        let mut layers = Vec::with_capacity(depth);
        for layer in 0..depth {
            let cols = if layer == 0 { d } else { p };
            let g = Matrix::from_vec(p, cols, normal_vec(&mut rng, p * cols))?;
            layers.push(orthonormalize_columns(&g)?);
        }
        Ok(MixingMap { d, p, layers, slope: S::lit(0.2) })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn apply(&self, z: &[S]) -> Vec<S> {
        if self.layers.is_empty() {
            let mut x = z.to_vec();
            x.resize(self.p, S::zero());
            return x;
        }
        let mut x = z.to_vec();
        for l in &self.layers {
            x = l.matvec(&x).into_iter().map(|v| leaky_relu(v, self.slope)).collect();
        }
        x
    }

    pub fn apply_rows(&self, latents: &Matrix<S>) -> Matrix<S> {
        let mut out = Matrix::zeros(latents.rows(), self.p);
        for t in 0..latents.rows() {
            out.row_mut(t).copy_from_slice(&self.apply(latents.row(t)));
        }
        out
    }

    /// Layer-by-layer analytic left inverse. Fails when `x` is off the image
    /// by more than `tol` (relative).
    pub fn invert(&self, x: &[S], tol: S) -> Result<Vec<S>> {
        if x.len() != self.p {
            return invalid("observation length differs from p");
        }
        let scale = S::one().max(norm2(x));
        if self.layers.is_empty() {
            let off = norm2(&x[self.d..]);
            if off > tol * scale {
                return Err(Error::InversionFailure(format!("padded coordinates nonzero ({:.3e})", off.f64())));
            }
            return Ok(x[..self.d].to_vec());
        }
        let mut y = x.to_vec();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let pre: Vec<S> = y.iter().map(|&v| leaky_relu_inv(v, self.slope)).collect();
            let back = l.tmatvec(&pre);
            if idx == 0 && self.p > self.d {
                let again = l.matvec(&back);
                let miss: Vec<S> = again.iter().zip(&pre).map(|(a, b)| *a - *b).collect();
                let r = norm2(&miss);
                if r > tol * scale {
                    return Err(Error::InversionFailure(format!("observation off the image manifold (residual {:.3e})", r.f64())));
                }
            }
            y = back;
        }
        Ok(y)
    }
}

pub fn mix_to_observations<S: Scalar>(latents: &Matrix<S>, depth: usize, p: usize, seed: u64) -> Result<Matrix<S>> {
    Ok(MixingMap::new(latents.cols(), p, depth, seed)?.apply_rows(latents))
}

#[derive(Clone, Debug)]
pub struct TrajectoryBundle<S> {
    pub latents: Matrix<S>,
    pub observations: Matrix<S>,
    pub schedule: MixingSchedule<S>,
    /// The two latent states preceding row 0, oldest first.
    pub pre_roll: Matrix<S>,
    pub noise_sigma: S,
    pub seed: u64,
}

/// Per-run options for [`simulate_with`].
#[derive(Clone, Debug)]
pub struct SimOptions<S> {
    pub burn_in: usize,
    /// Selects the noise and initial-state substreams.
    pub trajectory_index: u64,
    pub injection: Option<EdgeInjection<S>>,
    pub mixing: Option<MixingMap<S>>,
}

impl<S> Default for SimOptions<S> {
    fn default() -> Self {
        SimOptions { burn_in: 10, trajectory_index: 0, injection: None, mixing: None }
    }
}

/// Simulates with the default options: burn-in 10, identity-depth-0 observations.
pub fn simulate<S: Scalar>(ms: &MechanismSet<S>, schedule: &MixingSchedule<S>, noise_sigma: f64, seed: u64) -> Result<TrajectoryBundle<S>> {
    simulate_with(ms, schedule, noise_sigma, seed, &SimOptions::default())
}

pub fn simulate_with<S: Scalar>(
    ms: &MechanismSet<S>,
    schedule: &MixingSchedule<S>,
    noise_sigma: f64,
    seed: u64,
    opts: &SimOptions<S>,
) -> Result<TrajectoryBundle<S>> {
    let t_len = schedule.len();
    if t_len < 3 {
        return invalid("simulation needs T >= 3");
    }
    if !(noise_sigma >= 0.0) {
        return invalid("noise sigma must be nonnegative");
    }
    if schedule.k != ms.k {
        return invalid(format!("schedule has K = {}, mechanism set has K = {}", schedule.k, ms.k));
    }
    let d = ms.d;
    let sigma = S::lit(noise_sigma);
    let mut init = substream(seed, Purpose::Initial, opts.trajectory_index);
    let mut noise = substream(seed, Purpose::TransitionNoise, opts.trajectory_index);
    let mut z2: Vec<S> = normal_vec(&mut init, d);
    let mut z1: Vec<S> = normal_vec(&mut init, d);
    let mut latents = Matrix::zeros(t_len, d);
    let total = opts.burn_in + t_len;
    let mut pre_roll = Matrix::zeros(2, d);
    for step in 0..total {
        if step == opts.burn_in {
            pre_roll.row_mut(0).copy_from_slice(&z2);
            pre_roll.row_mut(1).copy_from_slice(&z1);
        }
        let t = step.saturating_sub(opts.burn_in);
        let alpha = &schedule.alphas[t];
        let mut w = ms.transition_unchecked(alpha);
        if let Some(rule) = opts.injection.as_ref().filter(|e| e.applies(alpha)) {
            rule.apply(&mut w);
        }
        let mut z = ms.step(&w, &z1, &z2);
        for zi in z.iter_mut() {
            *zi += sigma * normal::<S, _>(&mut noise);
        }
        if step >= opts.burn_in {
            latents.row_mut(t).copy_from_slice(&z);
        }
        z2 = std::mem::replace(&mut z1, z);
    }
    if !latents.is_finite() {
        return Err(Error::DegenerateInput("trajectory diverged".into()));
    }
    let observations = match &opts.mixing {
        Some(m) => {
            if m.d != d {
                return invalid("mixing map latent dim differs from d");
            }
            m.apply_rows(&latents)
        }
        None => latents.clone(),
    };
    Ok(TrajectoryBundle { latents, observations, schedule: schedule.clone(), pre_roll, noise_sigma: sigma, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_setting_deltas() {
        let ms: MechanismSet<f64> = build_mechanism_set(8, 5, 0.5, 1).unwrap();
        assert_eq!(ms.deltas.len(), 4);
        let mut rows: Vec<usize> = ms.delta_cells.iter().map(|c| c.0).collect();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(rows.len(), 4);
        for (m, &(i, j)) in ms.deltas.iter().zip(&ms.delta_cells) {
            assert_ne!(i, j);
            assert!((m.frobenius() - 0.5).abs() < 1e-15);
            assert_eq!(m.as_slice().iter().filter(|x| **x != 0.0).count(), 1);
        }
        assert!(ms.distinguishability() > 1e-8);
        assert!(svd(&ms.w_base).unwrap().sigma_max() <= 0.8 + 1e-12);
    }

    #[test]
    fn minimal_and_over_capacity() {
        let ms: MechanismSet<f64> = build_mechanism_set(2, 2, 0.1, 0).unwrap();
        assert_eq!(ms.deltas[0].as_slice().iter().filter(|x| **x != 0.0).count(), 1);
        let err = build_mechanism_set::<f64>(8, 10, 0.5, 0).unwrap_err();
        assert!(matches!(err, Error::CapacityViolation { k: 10, d: 8 }));
        let mut spec = MechanismSpec::new(8, 10, 0.5);
        spec.allow_over_capacity = true;
        let ms: MechanismSet<f64> = spec.build(0).unwrap();
        assert_eq!(ms.deltas.len(), 9);
        assert!(ms.distinguishability() > 1e-8);
    }

    #[test]
    fn baseline_fixed_point_is_operating_point() {
        let ms: MechanismSet<f64> = build_mechanism_set(8, 3, 0.5, 4).unwrap();
        let ones = vec![1.0; 8];
        let z = ms.step(&ms.w_base, &ones, &ones);
        assert!(z.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn vertex_and_midpoint_transitions() {
        let ms: MechanismSet<f64> = build_mechanism_set(8, 3, 0.5, 2).unwrap();
        assert_eq!(ms.effective_transition(&[1.0, 0.0, 0.0]).unwrap(), ms.w_base);
        let w1 = ms.effective_transition(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(w1, ms.w_base.add(&ms.deltas[0]));
        let mid = ms.effective_transition(&[0.5, 0.5, 0.0]).unwrap();
        let avg = ms.w_base.add(&w1).scale(0.5);
        assert!(mid.sub(&avg).max_abs() < 1e-15);
        assert!(ms.effective_transition(&[0.5, 0.6, 0.0]).is_err());
    }

    #[test]
    fn sequential_two_domain_ramp() {
        let s: MixingSchedule<f64> = make_schedule(Family::Sequential, 100, 2, &[0, 1]).unwrap();
        assert_eq!(s.alphas[0], vec![1.0, 0.0]);
        assert!((s.alphas[99][1] - 1.0).abs() < 1e-15);
        assert!(s.alphas[49][0] > 0.5 && s.alphas[50][0] < 0.5);
    }

    #[test]
    fn oscillating_has_no_dominant_domain() {
        // The cosine formula only keeps every weight below ~0.55 from five
        // active domains up; with three, single steps reach ~0.95.
        let s: MixingSchedule<f64> = make_schedule(Family::Oscillating, 200, 5, &[0, 1, 2, 3, 4]).unwrap();
        let peak = s.alphas.iter().flat_map(|a| a.iter().copied()).fold(0.0, f64::max);
        assert!(peak <= 0.55, "peak {peak}");
        let s: MixingSchedule<f64> = make_schedule(Family::Oscillating, 200, 5, &[0, 1, 2]).unwrap();
        let median_peak = {
            let mut m: Vec<f64> = s.alphas.iter().map(|a| a.iter().copied().fold(0.0, f64::max)).collect();
            m.sort_by(|a, b| a.partial_cmp(b).unwrap());
            m[m.len() / 2]
        };
        assert!(median_peak < 0.65, "median peak {median_peak}");
    }

    #[test]
    fn families_stay_on_simplex() {
        for fam in [Family::Sequential, Family::Overlapping, Family::Oscillating, Family::Linear, Family::Sinusoidal, Family::OneHot(2)] {
            let s: MixingSchedule<f64> = make_schedule(fam, 57, 5, &[0, 2, 4]).unwrap();
            for a in &s.alphas {
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{fam}");
                assert!(a.iter().all(|x| *x >= 0.0));
                assert_eq!(a[1], 0.0);
            }
            assert!(s.total_variation.is_finite());
        }
        assert!(make_schedule::<f64>(Family::Sequential, 10, 3, &[1]).is_err());
    }

    #[test]
    fn overlapping_interior_peak_near_point_seven() {
        let s: MixingSchedule<f64> = make_schedule(Family::Overlapping, 201, 3, &[0, 1, 2]).unwrap();
        let peak = s.alphas.iter().map(|a| a[1]).fold(0.0, f64::max);
        assert!((peak - 0.7).abs() < 0.03, "peak {peak}");
    }

    #[test]
    fn family_parsing_roundtrip() {
        for fam in [Family::Sequential, Family::Oscillating, Family::OneHot(3), Family::Sinusoidal] {
            assert_eq!(fam.to_string().parse::<Family>().unwrap(), fam);
        }
        assert!("zigzag".parse::<Family>().is_err());
    }

    #[test]
    fn injection_touches_expected_cell() {
        let (s, rule) = make_violation_schedule::<f64>(100).unwrap();
        let ms: MechanismSet<f64> = build_mechanism_set(8, 3, 0.5, 0).unwrap();
        let t = s.alphas.iter().position(|a| (a[1] - 0.5).abs() < 0.02).unwrap();
        let plain = ms.effective_transition(&s.alphas[t]).unwrap();
        let mut w = plain.clone();
        assert!(rule.applies(&s.alphas[t]));
        rule.apply(&mut w);
        let diff = w.sub(&plain);
        assert_eq!(diff[(4, 1)], 1.0);
        assert_eq!(diff.max_abs(), 1.0);
        assert!(!rule.applies(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn depth_zero_map_pads() {
        let m = MixingMap::<f64>::new(2, 4, 0, 0).unwrap();
        assert_eq!(m.apply(&[1.0, -2.0]), vec![1.0, -2.0, 0.0, 0.0]);
        assert!(MixingMap::<f64>::new(4, 2, 1, 0).is_err());
    }

    #[test]
    fn off_manifold_observation_rejected() {
        let m = MixingMap::<f64>::new(8, 16, 3, 5).unwrap();
        let mut x = m.apply(&[0.3, -1.0, 0.2, 0.5, 1.5, -0.7, 0.1, 0.9]);
        for v in x.iter_mut() {
            *v += 1e-2;
        }
        assert!(matches!(m.invert(&x, 1e-8), Err(Error::InversionFailure(_))));
    }
}
