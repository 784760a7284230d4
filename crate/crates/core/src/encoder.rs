//! Stage-1 stand-in: permutation plus per-dimension strictly monotone warp
//! `h_i(z) = a_i z + b_i tanh(c_i z) + shift_i`, plus optional noise.

use crate::error::{invalid, Error, Result};
use crate::generator::MixingMap;
use crate::linalg::Matrix;
use crate::rng::{normal, permutation, substream, uniform, Purpose};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderDistortion<S> {
    /// Output dimension `i` reads latent `perm[i]`.
    pub perm: Vec<usize>,
    pub a: Vec<S>,
    pub b: Vec<S>,
    pub c: Vec<S>,
    pub shift: Vec<S>,
    pub noise_sigma: S,
}

/// Sampling ranges for [`EncoderDistortion::random`].
#[derive(Clone, Debug)]
pub struct DistortionRanges {
    pub a: (f64, f64),
    pub b_max: f64,
    pub c: (f64, f64),
    pub shift: f64,
    pub allow_decreasing: bool,
}

impl Default for DistortionRanges {
    fn default() -> Self {
        DistortionRanges { a: (0.7, 1.3), b_max: 0.3, c: (0.5, 2.0), shift: 0.5, allow_decreasing: false }
    }
}

impl<S: Scalar> EncoderDistortion<S> {
    pub fn identity(d: usize) -> Self {
        EncoderDistortion {
            perm: (0..d).collect(),
            a: vec![S::one(); d],
            b: vec![S::zero(); d],
            c: vec![S::one(); d],
            shift: vec![S::zero(); d],
            noise_sigma: S::zero(),
        }
    }

    pub fn permutation_only(perm: Vec<usize>) -> Self {
        let mut e = Self::identity(perm.len());
        e.perm = perm;
        e
    }

    /// Random distortion. `|b|` is capped at `0.9 |a| / c` so that `|a| > |b c|`.
    /// With `allow_decreasing`, each warp is negated with probability 1/2.
    pub fn random(d: usize, ranges: &DistortionRanges, noise_sigma: f64, seed: u64) -> Self {
        let mut rng = substream(seed, Purpose::Distortion, 0);
        let perm = permutation(&mut rng, d);
        let mut e = Self::identity(d);
        e.perm = perm;
        e.noise_sigma = S::lit(noise_sigma);
        for i in 0..d {
            let a: f64 = uniform(&mut rng, ranges.a.0, ranges.a.1);
            let c: f64 = uniform(&mut rng, ranges.c.0, ranges.c.1);
            let bmax = ranges.b_max.min(0.9 * a / c);
            let b: f64 = uniform(&mut rng, -1.0, 1.0);
            let shift: f64 = uniform(&mut rng, -ranges.shift, ranges.shift);
            let sign = if ranges.allow_decreasing && uniform::<f64, _>(&mut rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            e.a[i] = S::lit(sign * a);
            e.b[i] = S::lit(sign * b * bmax);
            e.c[i] = S::lit(c);
            e.shift[i] = S::lit(shift);
        }
        e
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.perm.len();
        if [self.a.len(), self.b.len(), self.c.len(), self.shift.len()].iter().any(|&n| n != d) {
            return Err(Error::InvalidDistortion("parameter lengths differ".into()));
        }
        let mut seen = vec![false; d];
        for &p in &self.perm {
            if p >= d || seen[p] {
                return Err(Error::InvalidDistortion("perm is not a permutation".into()));
            }
            seen[p] = true;
        }
        for i in 0..d {
            if !(self.a[i].abs() > (self.b[i] * self.c[i]).abs()) {
                return Err(Error::InvalidDistortion(format!(
                    "dimension {i} not strictly monotone: |a| = {} <= |b c| = {}",
                    self.a[i].abs().f64(),
                    (self.b[i] * self.c[i]).abs().f64()
                )));
            }
        }
        if !(self.noise_sigma >= S::zero()) {
            return Err(Error::InvalidDistortion("negative noise".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn warp(&self, i: usize, x: S) -> S {
        self.a[i] * x + self.b[i] * (self.c[i] * x).tanh() + self.shift[i]
    }

    /// `h_i'(x)`.
    #[inline]
    pub fn warp_prime(&self, i: usize, x: S) -> S {
        let th = (self.c[i] * x).tanh();
        self.a[i] + self.b[i] * self.c[i] * (S::one() - th * th)
    }

    /// `h_i''(x)`.
    #[inline]
    pub fn warp_second(&self, i: usize, x: S) -> S {
        let th = (self.c[i] * x).tanh();
        S::lit(-2.0) * self.b[i] * self.c[i] * self.c[i] * th * (S::one() - th * th)
    }

    /// Noise-free encoding of one latent row.
    #[inline]
    pub fn encode_row(&self, z: &[S], out: &mut [S]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.warp(i, z[self.perm[i]]);
        }
    }
}

/// `ẑ_{t,i} = h_i(z_{t,π(i)}) + η_{t,i}`; `index` selects the noise substream.
pub fn encode<S: Scalar>(latents: &Matrix<S>, dist: &EncoderDistortion<S>, seed: u64, index: u64) -> Result<Matrix<S>> {
    dist.validate()?;
    if latents.cols() != dist.dim() {
        return invalid(format!("latents have {} columns, distortion expects {}", latents.cols(), dist.dim()));
    }
    let mut rng = substream(seed, Purpose::RepresentationNoise, index);
    let mut out = Matrix::zeros(latents.rows(), latents.cols());
    for t in 0..latents.rows() {
        dist.encode_row(latents.row(t), out.row_mut(t));
        if dist.noise_sigma > S::zero() {
            for v in out.row_mut(t) {
                *v += dist.noise_sigma * normal::<S, _>(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Perfect `g⁻¹`: inverts the mixing map row by row.
pub fn oracle_encoder<S: Scalar>(observations: &Matrix<S>, map: &MixingMap<S>) -> Result<Matrix<S>> {
    let tol = S::lit(1e-6).max(S::epsilon() * S::lit(1e3));
    let mut out = Matrix::zeros(observations.rows(), map.d);
    for t in 0..observations.rows() {
        let z = map.invert(observations.row(t), tol).map_err(|e| e.context(format!("row {t}")))?;
        out.row_mut(t).copy_from_slice(&z);
    }
    Ok(out)
}

/// How a pipeline turns latents into representations.
#[derive(Clone, Debug)]
pub enum EncoderMode<S> {
    /// Analytic inverse of the observation map; representations equal latents.
    Oracle,
    Distorted(EncoderDistortion<S>),
}

impl<S: Scalar> EncoderMode<S> {
    /// Noise-free map of one latent row into representation space.
    pub fn apply_row(&self, z: &[S], out: &mut [S]) {
        match self {
            EncoderMode::Oracle => out.copy_from_slice(z),
            EncoderMode::Distorted(e) => e.encode_row(z, out),
        }
    }

    pub fn distortion(&self) -> Option<&EncoderDistortion<S>> {
        match self {
            EncoderMode::Oracle => None,
            EncoderMode::Distorted(e) => Some(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_latents() -> Matrix<f64> {
        Matrix::from_fn(30, 4, |t, j| ((t * 7 + j * 3) as f64 * 0.37).sin() * 2.0)
    }

    #[test]
    fn identity_is_exact() {
        let z = sample_latents();
        assert_eq!(encode(&z, &EncoderDistortion::identity(4), 0, 0).unwrap(), z);
    }

    #[test]
    fn permutation_reorders_columns() {
        let z = sample_latents();
        let out = encode(&z, &EncoderDistortion::permutation_only(vec![2, 0, 3, 1]), 0, 0).unwrap();
        assert_eq!(out.col(0), z.col(2));
        assert_eq!(out.col(3), z.col(1));
    }

    #[test]
    fn monotonicity_violation_rejected() {
        let mut e = EncoderDistortion::<f64>::identity(2);
        e.b[1] = 2.0;
        e.c[1] = 1.0;
        let z = Matrix::zeros(3, 2);
        assert!(matches!(encode(&z, &e, 0, 0), Err(Error::InvalidDistortion(_))));
    }

    #[test]
    fn random_warps_are_valid_and_increasing() {
        for seed in 0..20 {
            let e = EncoderDistortion::<f64>::random(8, &DistortionRanges::default(), 0.0, seed);
            e.validate().unwrap();
            for i in 0..8 {
                assert!(e.a[i] > 0.0);
                assert!(e.warp_prime(i, 0.3) > 0.0);
            }
        }
    }

    #[test]
    fn decreasing_flag_produces_both_signs() {
        let ranges = DistortionRanges { allow_decreasing: true, ..Default::default() };
        let e = EncoderDistortion::<f64>::random(16, &ranges, 0.0, 3);
        e.validate().unwrap();
        assert!(e.a.iter().any(|a| *a < 0.0) && e.a.iter().any(|a| *a > 0.0));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let e = EncoderDistortion::<f64>::random(3, &DistortionRanges::default(), 0.0, 9);
        for i in 0..3 {
            for &x in &[-1.3, 0.0, 0.4, 2.2] {
                let h = 1e-5;
                let fd1 = (e.warp(i, x + h) - e.warp(i, x - h)) / (2.0 * h);
                let fd2 = (e.warp(i, x + h) - 2.0 * e.warp(i, x) + e.warp(i, x - h)) / (h * h);
                assert!((fd1 - e.warp_prime(i, x)).abs() < 1e-8);
                assert!((fd2 - e.warp_second(i, x)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn depth_zero_oracle_truncates() {
        let map = MixingMap::<f64>::new(4, 6, 0, 0).unwrap();
        let z = sample_latents();
        let x = map.apply_rows(&z);
        assert_eq!(oracle_encoder(&x, &map).unwrap(), z);
    }
}
