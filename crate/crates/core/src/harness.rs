//! Config-driven experiment runner: one pipeline per `(config, seed)`,
//! sweeps over a single config field, the bound and KS protocols, and the
//! named presets.
//!
//! Config files are flat TOML. Unknown keys are rejected. Every field has a
//! default, so a preset or an empty file is a complete config.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::basis::{default_probes, estimate_basis, estimate_basis_analytic, estimate_basis_observational, estimate_delta_approx, SharedContext};
use crate::diagnostics::{check_pointwise_bound, snr_eff, verify_assumption, AssumptionCheck, BoundReport};
use crate::encoder::{encode, oracle_encoder, DistortionRanges, EncoderDistortion, EncoderMode};
use crate::error::{invalid, Error, Result};
use crate::generator::{make_schedule, simulate_with, EdgeInjection, Family, MechanismSpec, MixingMap, SimOptions};
use crate::linalg::{norm2, pseudoinverse};
use crate::metrics::{embed_alphas, mae, mcc, mse, per_component_correlation, w_trajectory_correlation, weight_correlation, CorrelationKind};
use crate::recovery::{calibrate_two_point, default_lambda_grid, lift, project_simplex, recover, select_lambda_gcv, smooth_tv, smooth_window, Lambda, SmoothingConfig};
use crate::rng::{normal_vec, substream, Purpose};
use crate::{io, DiagnosticsReport, DomainBasis, Matrix, MechanismSet, MixingSchedule, RecoveryResult, ScoreCard, TrajectoryBundle};

const PURE_INDEX_BASE: u64 = 1 << 32;
const VALIDATION_INDEX_BASE: u64 = 2 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Inverts the observation map exactly.
    Oracle,
    /// Random per-dimension monotone warps plus a permutation.
    Distorted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisEstimator {
    /// Mean one-step response over a shared pool of pure-domain contexts.
    Shared,
    /// Per-domain means of encoded pure-domain runs.
    Observational,
    /// Per-step noise-free basis at the true context (needs ground truth).
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    None,
    Window,
    Tv,
}

/// Flat experiment config. See the README for the field list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub d: usize,
    pub k_total: usize,
    pub k_active: usize,
    /// Empty means `0..k_active`. The first entry is the baseline.
    pub active_domains: Vec<usize>,
    pub t: usize,
    pub family: String,
    pub noise_sigma: f64,
    pub perturbation_norm: f64,
    pub activation_slope: f64,
    pub operating_point: f64,
    pub allow_over_capacity: bool,
    pub encoder: EncoderKind,
    pub representation_noise: f64,
    pub allow_decreasing: bool,
    /// Observation map depth; 0 observes latents directly.
    pub mixing_depth: usize,
    /// 0 means `d`.
    pub observation_dim: usize,
    pub basis_estimator: BasisEstimator,
    /// Multiplies the estimated basis; values other than 1 inject a scale
    /// error for calibration studies.
    pub basis_scale: f64,
    pub trajectories_per_domain: usize,
    pub pure_length: usize,
    pub smoothing: SmoothingKind,
    pub window: usize,
    /// TV penalty; absent means GCV over `lambda_grid`.
    pub lambda: Option<f64>,
    /// Empty means the default grid.
    pub lambda_grid: Vec<f64>,
    pub calibrate: bool,
    pub mcc_kind: String,
    pub seeds: Vec<u64>,
    /// Emergent-edge weight; 0 disables the violation.
    pub violation_edge_weight: f64,
    pub bound_check: bool,
    pub ks_check: bool,
    pub ks_thin: usize,
    pub sweep_axis: String,
    pub sweep_values: Vec<f64>,
    /// Worker threads for sweeps; 0 uses the available parallelism.
    pub threads: usize,
    /// Output directory; empty disables artifact writing.
    pub output: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            d: 8,
            k_total: 5,
            k_active: 3,
            active_domains: Vec::new(),
            t: 200,
            family: "sequential".into(),
            noise_sigma: 0.1,
            perturbation_norm: 0.5,
            activation_slope: 0.2,
            operating_point: 1.0,
            allow_over_capacity: false,
            encoder: EncoderKind::Distorted,
            representation_noise: 0.0,
            allow_decreasing: false,
            mixing_depth: 2,
            observation_dim: 0,
            basis_estimator: BasisEstimator::Shared,
            basis_scale: 1.0,
            trajectories_per_domain: 200,
            pure_length: 50,
            smoothing: SmoothingKind::Window,
            window: 5,
            lambda: None,
            lambda_grid: Vec::new(),
            calibrate: false,
            mcc_kind: "spearman_abs".into(),
            seeds: (0..10).collect(),
            violation_edge_weight: 0.0,
            bound_check: false,
            ks_check: false,
            ks_thin: 3,
            sweep_axis: String::new(),
            sweep_values: Vec::new(),
            threads: 0,
            output: String::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn active(&self) -> Vec<usize> {
        if self.active_domains.is_empty() {
            (0..self.k_active).collect()
        } else {
            self.active_domains.clone()
        }
    }

    pub fn family(&self) -> Result<Family> {
        self.family.parse()
    }

    pub fn correlation_kind(&self) -> Result<CorrelationKind> {
        self.mcc_kind.parse()
    }

    pub fn smoothing_config(&self) -> SmoothingConfig {
        match self.smoothing {
            SmoothingKind::None => SmoothingConfig::None,
            SmoothingKind::Window => SmoothingConfig::Window(self.window),
            SmoothingKind::Tv => SmoothingConfig::Tv {
                lambda: self.lambda.map_or(Lambda::Gcv, Lambda::Fixed),
                grid: if self.lambda_grid.is_empty() { default_lambda_grid() } else { self.lambda_grid.clone() },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d < 2 {
            return bad(format!("d = {} must be at least 2", self.d));
        }
        if self.k_total < 2 || self.k_active < 2 {
            return bad("k_total and k_active must be at least 2".into());
        }
        if self.k_active > self.k_total {
            return bad(format!("k_active = {} exceeds k_total = {}", self.k_active, self.k_total));
        }
        if self.k_total > self.d + 1 && !self.allow_over_capacity {
            return bad(format!("k_total = {} exceeds d + 1 = {} (set allow_over_capacity)", self.k_total, self.d + 1));
        }
        if self.k_active > self.d + 1 {
            return bad(format!("k_active = {} exceeds d + 1 = {}", self.k_active, self.d + 1));
        }
        let active = self.active();
        if active.len() != self.k_active {
            return bad(format!("active_domains has {} entries, k_active = {}", active.len(), self.k_active));
        }
        let mut seen = active.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != active.len() || active.iter().any(|&a| a >= self.k_total) {
            return bad("active_domains must be distinct and below k_total".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.t < 3 || self.pure_length < 3 {
            return bad("t and pure_length must be at least 3".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.representation_noise >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if !(self.basis_scale > 0.0) {
            return bad("basis_scale must be positive".into());
        }
        if self.ks_thin == 0 {
            return bad("ks_thin must be at least 1".into());
        }
        if self.basis_estimator == BasisEstimator::Analytic && self.smoothing == SmoothingKind::Tv {
            return bad("tv smoothing needs a single basis; the analytic estimator gives one per step".into());
        }
        self.family().map_err(|e| Error::Config(e.to_string()))?;
        self.correlation_kind().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Copy with one field replaced. The field keeps its TOML type, so
    /// integer fields only accept integral values.
    pub fn with_field(&self, key: &str, value: f64) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let known = ["lambda"];
        let v = match table.get(key) {
            Some(toml::Value::Integer(_)) => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::InvalidInput(format!("axis '{key}' is an integer field, got {value}")));
                }
                toml::Value::Integer(value as i64)
            }
            Some(toml::Value::Float(_)) => toml::Value::Float(value),
            None if known.contains(&key) => toml::Value::Float(value),
            Some(_) => return Err(Error::InvalidInput(format!("axis '{key}' is not numeric"))),
            None => return Err(Error::InvalidInput(format!("unknown sweep axis '{key}'"))),
        };
        table.insert(key.to_string(), v);
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub const PRESETS: [&str; 9] = ["table2", "table3_scheme1", "table3_scheme2", "table5", "table7", "table9", "fig4", "ks_violation", "calibration"];

/// Named experiment configs at desk scale.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig { name: name.to_string(), ..ExperimentConfig::default() };
    let table3 = ExperimentConfig { t: 400, smoothing: SmoothingKind::Tv, calibrate: true, ..base.clone() };
    let cfg = match name {
        "table2" => base,
        "table3_scheme1" => ExperimentConfig {
            sweep_axis: "noise_sigma".into(),
            sweep_values: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            ..table3
        },
        "table3_scheme2" => ExperimentConfig {
            sweep_axis: "perturbation_norm".into(),
            sweep_values: vec![0.1, 0.2, 0.3, 0.5, 0.7],
            ..table3
        },
        "table5" | "table7" => ExperimentConfig {
            k_total: 10,
            allow_over_capacity: true,
            family: "oscillating".into(),
            sweep_axis: "k_active".into(),
            sweep_values: if name == "table5" { vec![3.0, 5.0, 7.0] } else { (2..=7).map(f64::from).collect() },
            ..base
        },
        "table9" => ExperimentConfig {
            k_active: 5,
            family: "oscillating".into(),
            t: 100,
            sweep_axis: "window".into(),
            sweep_values: vec![0.0, 3.0, 5.0, 7.0, 10.0],
            ..base
        },
        "fig4" => ExperimentConfig {
            bound_check: true,
            sweep_axis: "noise_sigma".into(),
            sweep_values: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            ..table3
        },
        "ks_violation" => ExperimentConfig {
            k_total: 3,
            active_domains: vec![0, 1, 2],
            violation_edge_weight: 1.0,
            ks_check: true,
            trajectories_per_domain: 100,
            ..base
        },
        // Two domains, oracle encoder, basis stretched so raw estimates are
        // compressed toward the center.
        "calibration" => ExperimentConfig {
            k_total: 2,
            k_active: 2,
            encoder: EncoderKind::Oracle,
            basis_scale: 1.6,
            smoothing: SmoothingKind::Tv,
            calibrate: true,
            ..base
        },
        _ => return Err(Error::Config(format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Everything built before the evaluation trajectory: mechanisms, maps and
/// the basis. Reused by the bound and KS protocols.
#[derive(Clone, Debug)]
pub struct Setup {
    pub mechanisms: MechanismSet,
    pub mixing: Option<MixingMap<f64>>,
    pub encoder: EncoderMode<f64>,
    pub context: SharedContext<f64>,
    pub basis: DomainBasis,
    /// Per-domain means of the encoded pure pool; built for the KS protocol
    /// and the observational estimator.
    pub observed: Option<DomainBasis>,
    pub domains: Vec<usize>,
    pub delta_approx: f64,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Setup> {
    let d = cfg.d;
    let spec = MechanismSpec {
        activation_slope: cfg.activation_slope,
        operating_point: cfg.operating_point,
        allow_over_capacity: cfg.allow_over_capacity,
        ..MechanismSpec::new(d, cfg.k_total, cfg.perturbation_norm)
    };
    let ms: MechanismSet = spec.build(seed)?;
    let mixing = if cfg.mixing_depth > 0 {
        let p = if cfg.observation_dim == 0 { d } else { cfg.observation_dim };
        Some(MixingMap::new(d, p, cfg.mixing_depth, seed)?)
    } else {
        None
    };
    let encoder = match cfg.encoder {
        EncoderKind::Oracle => EncoderMode::Oracle,
        EncoderKind::Distorted => {
            let ranges = DistortionRanges { allow_decreasing: cfg.allow_decreasing, ..DistortionRanges::default() };
            EncoderMode::Distorted(EncoderDistortion::random(d, &ranges, cfg.representation_noise, seed))
        }
    };
    let domains = cfg.active();

    let mut pure: Vec<Vec<Matrix>> = Vec::with_capacity(domains.len());
    for &a in &domains {
        let mut e = vec![0.0; cfg.k_total];
        e[a] = 1.0;
        let sched = MixingSchedule::constant(cfg.k_total, &e, cfg.pure_length)?;
        let mut runs = Vec::with_capacity(cfg.trajectories_per_domain);
        for r in 0..cfg.trajectories_per_domain {
            let opts = SimOptions { trajectory_index: PURE_INDEX_BASE + ((a as u64) << 24) + r as u64, ..SimOptions::default() };
            runs.push(simulate_with(&ms, &sched, cfg.noise_sigma, seed, &opts)?.latents);
        }
        pure.push(runs);
    }
    let all: Vec<&Matrix> = pure.iter().flatten().collect();
    let context = SharedContext::from_trajectories(&ms, &all, cfg.noise_sigma, seed)?;
    let observed = if cfg.ks_check || cfg.basis_estimator == BasisEstimator::Observational {
        let mut encoded = Vec::with_capacity(pure.len());
        for (di, runs) in pure.iter().enumerate() {
            let mut v = Vec::with_capacity(runs.len());
            for (r, z) in runs.iter().enumerate() {
                let idx = PURE_INDEX_BASE + ((domains[di] as u64) << 24) + r as u64;
                v.push(encode_latents(&encoder, z, None, seed, idx)?);
            }
            encoded.push(v);
        }
        Some(estimate_basis_observational(&domains, &encoded, 2)?)
    } else {
        None
    };
    let basis = match (cfg.basis_estimator, &observed) {
        (BasisEstimator::Observational, Some(b)) => b.clone(),
        _ => estimate_basis(&ms, &context, &encoder, &domains)?,
    };
    let basis = if cfg.basis_scale != 1.0 {
        DomainBasis::new(basis.domains.clone(), basis.mu0.clone(), basis.b.scale(cfg.basis_scale), basis.sample_counts.clone())?
    } else {
        basis
    };
    let delta_approx = estimate_delta_approx(&ms, &basis, &default_probes(cfg.k_total, &domains), &context, &encoder)?;
    Ok(Setup { mechanisms: ms, mixing, encoder, context, basis, observed, domains, delta_approx })
}

/// Representation of one latent run. The oracle path goes through the
/// observation map and back when one is given.
fn encode_latents(enc: &EncoderMode<f64>, latents: &Matrix, obs: Option<(&Matrix, &MixingMap<f64>)>, seed: u64, index: u64) -> Result<Matrix> {
    match enc {
        EncoderMode::Oracle => match obs {
            Some((x, map)) => oracle_encoder(x, map),
            None => Ok(latents.clone()),
        },
        EncoderMode::Distorted(dist) => encode(latents, dist, seed, index),
    }
}

impl Setup {
    fn simulate(&self, cfg: &ExperimentConfig, schedule: &MixingSchedule, seed: u64, index: u64) -> Result<(TrajectoryBundle, Matrix)> {
        let injection = (cfg.violation_edge_weight != 0.0).then(|| EdgeInjection::standard(cfg.violation_edge_weight));
        let opts = SimOptions { trajectory_index: index, injection, mixing: self.mixing.clone(), ..SimOptions::default() };
        let bundle = simulate_with(&self.mechanisms, schedule, cfg.noise_sigma, seed, &opts)?;
        let obs = self.mixing.as_ref().map(|m| (&bundle.observations, m));
        let encoded = encode_latents(&self.encoder, &bundle.latents, obs, seed, index)?;
        Ok((bundle, encoded))
    }
}

/// Pointwise recovery with a separate noise-free basis at every step's true
/// context. Rows 0 and 1 use the pre-roll states.
pub fn recover_analytic(setup: &Setup, bundle: &TrajectoryBundle, encoded: &Matrix) -> Result<RecoveryResult> {
    let z = &bundle.latents;
    let t_len = z.rows();
    let (mut pre, mut raw, mut res) = (Vec::with_capacity(t_len), Vec::with_capacity(t_len), Vec::with_capacity(t_len));
    let mut worst_sigma = f64::INFINITY;
    for t in 0..t_len {
        let ctx = |s: isize| -> &[f64] {
            if s >= 0 {
                z.row(s as usize)
            } else {
                bundle.pre_roll.row((2 + s) as usize)
            }
        };
        let (z1, z2) = (ctx(t as isize - 1), ctx(t as isize - 2));
        let b = estimate_basis_analytic(&setup.mechanisms, z1, z2, &setup.encoder, &setup.domains).map_err(|e| e.context(format!("step {t}")))?;
        worst_sigma = worst_sigma.min(b.sigma_min);
        let centered: Vec<f64> = encoded.row(t).iter().zip(&b.mu0).map(|(x, m)| x - m).collect();
        let shift = pseudoinverse(&b.b)?.matvec(&centered);
        let fit = b.b.matvec(&shift);
        res.push(norm2(&centered.iter().zip(&fit).map(|(c, f)| c - f).collect::<Vec<_>>()));
        raw.push(project_simplex(&lift(&shift))?);
        pre.push(shift);
    }
    Ok(RecoveryResult {
        domains: setup.domains.clone(),
        pre_projection: pre,
        smoothed_alphas: raw.clone(),
        raw_alphas: raw,
        calibrated_alphas: None,
        residual_norms: res,
        lambda_used: 0.0,
        window_used: 0,
        warning: (worst_sigma < crate::basis::SIGMA_MIN_WARN).then(|| format!("per-step sigma_min down to {worst_sigma:.3e}")),
    })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub seed: u64,
    pub score: ScoreCard,
    pub diagnostics: DiagnosticsReport,
    pub recovery: RecoveryResult,
    pub bundle: TrajectoryBundle,
    pub encoded: Matrix,
    pub basis: DomainBasis,
}

/// Generate, encode, estimate the basis, recover, smooth, optionally
/// calibrate, score and diagnose. Writes artifacts when `cfg.output` is set.
pub fn run_single(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    run_single_inner(cfg, seed).map_err(|e| e.context(format!("config '{}', seed {seed}", cfg.name)))
}

fn run_single_inner(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let setup = prepare(cfg, seed)?;
    let schedule: MixingSchedule = make_schedule(cfg.family()?, cfg.t, cfg.k_total, &setup.domains)?;
    let (bundle, encoded) = setup.simulate(cfg, &schedule, seed, 0)?;

    let mut recovery = match cfg.basis_estimator {
        BasisEstimator::Analytic => {
            let r = recover_analytic(&setup, &bundle, &encoded)?;
            match cfg.smoothing {
                SmoothingKind::Window => smooth_window(&r, cfg.window)?,
                _ => r,
            }
        }
        _ => recover(&encoded, &setup.basis, &cfg.smoothing_config())?,
    };
    let truth = schedule.restricted(&setup.domains);
    if cfg.calibrate {
        recovery = calibrate_two_point(&recovery, &truth[0], &truth[cfg.t - 1])?;
    }

    let (mcc_score, assignment) = mcc(&encoded, &bundle.latents, cfg.correlation_kind()?)?;
    let full = embed_alphas(&recovery.smoothed_alphas, &setup.domains, cfg.k_total);
    let score = ScoreCard {
        mcc: mcc_score,
        mcc_kind: cfg.correlation_kind()?,
        assignment,
        weight_corr: weight_correlation(&recovery.smoothed_alphas, &truth)?,
        weight_corr_per_component: per_component_correlation(&recovery.smoothed_alphas, &truth)?,
        mae_raw: mae(&recovery.smoothed_alphas, &truth)?,
        mae_cal: recovery.calibrated_alphas.as_ref().map(|c| mae(c, &truth)).transpose()?,
        w_traj_corr: w_trajectory_correlation(&setup.mechanisms, &full, &schedule.alphas)?,
    };

    let mean_residual = recovery.mean_residual();
    let snr = match snr_eff(setup.basis.sigma_min, mean_residual, setup.delta_approx) {
        Ok(v) => v,
        Err(Error::DegenerateInput(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let mut diagnostics = DiagnosticsReport {
        snr_eff: snr,
        sigma_min: setup.basis.sigma_min,
        mean_residual,
        delta_approx: setup.delta_approx,
        bound_violations: None,
        bound_fraction: None,
        assumption: None,
    };
    if cfg.bound_check {
        diagnostics = diagnostics.with_bound(&bound_report(&setup, &schedule, &encoded)?);
    }
    if cfg.ks_check {
        diagnostics = diagnostics.with_assumption(ks_protocol(cfg, &setup, &recovery, &encoded, seed)?);
    }

    let out = RunOutput { seed, score, diagnostics, recovery, bundle, encoded, basis: setup.basis };
    if !cfg.output.is_empty() {
        write_run_artifacts(Path::new(&cfg.output), cfg, &out)?;
    }
    Ok(out)
}

pub fn run_prefix(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}_seed{seed}", cfg.name)
}

pub fn write_run_artifacts(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<Vec<PathBuf>> {
    let pre = run_prefix(cfg, out.seed);
    let p = |s: &str| dir.join(format!("{pre}_{s}"));
    let paths = vec![p("trajectory.csv"), p("encoded.csv"), p("recovery.csv"), p("basis.txt"), p("diagnostics.txt"), p("scores.csv")];
    io::write_trajectory(
        &paths[0],
        &out.bundle,
        &[("perturbation_norm", cfg.perturbation_norm.to_string()), ("config", cfg.name.clone())],
    )?;
    io::write_encoded(&paths[1], &out.encoded)?;
    io::write_recovery(&paths[2], &out.recovery)?;
    io::write_basis(&paths[3], &out.basis)?;
    std::fs::write(&paths[4], out.diagnostics.to_key_value())?;
    let header: Vec<String> = ScoreCard::csv_header().split(',').map(str::to_string).collect();
    let row: Vec<String> = out.score.csv_row().split(',').map(str::to_string).collect();
    io::write_csv(&paths[5], &header, &[row])?;
    io::write_meta(&paths[5], &[("config", cfg.name.clone()), ("seed", out.seed.to_string())])?;
    Ok(paths)
}

/// Pointwise bound check on the evaluation trajectory. `ε̂_t` is the
/// distance from the encoded state to the mixed conditional mean at the true
/// weights; `δ_approx` covers the probes and every step's true weights.
pub fn bound_report(setup: &Setup, schedule: &MixingSchedule, encoded: &Matrix) -> Result<BoundReport<f64>> {
    let pointwise = recover(encoded, &setup.basis, &SmoothingConfig::None)?;
    let (ms, basis) = (&setup.mechanisms, &setup.basis);
    let mut eps = Vec::with_capacity(schedule.len());
    let mut delta = setup.delta_approx;
    let means = setup.context.mean_responses(ms, &schedule.alphas, &setup.encoder)?;
    for (t, (a, mixed)) in schedule.alphas.iter().zip(&means).enumerate() {
        eps.push(norm2(&encoded.row(t).iter().zip(mixed.iter()).map(|(x, m)| x - m).collect::<Vec<_>>()));
        let lin = basis.b.matvec(&basis.shift_coords(a));
        let r: Vec<f64> = (0..basis.dim()).map(|i| mixed[i] - basis.mu0[i] - lin[i]).collect();
        delta = delta.max(norm2(&r));
    }
    check_pointwise_bound(&pointwise, schedule, basis, delta, &eps)
}

/// KS test of thinned transition residuals `‖ẑ_t − μ̂⁰ − B̂ᾱ_t‖` against
/// pure-domain residuals `‖ẑ − μ̂(k)‖` from fresh validation runs, one
/// random step per run, domains taken in turn. Both sides use the
/// observed per-domain means so that neither carries the one-step bias of
/// the shared-context basis.
fn ks_protocol(cfg: &ExperimentConfig, setup: &Setup, recovery: &RecoveryResult, encoded: &Matrix, seed: u64) -> Result<AssumptionCheck<f64>> {
    let basis = setup.observed.as_ref().ok_or_else(|| Error::InvalidInput("KS protocol needs the observed domain means".into()))?;
    let transition: Vec<f64> = recovery
        .smoothed_alphas
        .iter()
        .enumerate()
        .step_by(cfg.ks_thin)
        .map(|(t, a)| {
            let fit = basis.b.matvec(&a[1..]);
            norm2(&(0..basis.dim()).map(|i| encoded[(t, i)] - basis.mu0[i] - fit[i]).collect::<Vec<_>>())
        })
        .collect();
    let mut pick = substream(seed, Purpose::Validation, 0);
    let mut pure = Vec::with_capacity(transition.len());
    for i in 0..transition.len() {
        let k = setup.domains[i % setup.domains.len()];
        let mut e = vec![0.0; cfg.k_total];
        e[k] = 1.0;
        let sched = MixingSchedule::constant(cfg.k_total, &e, cfg.pure_length)?;
        let (_, z) = setup.simulate(&ExperimentConfig { violation_edge_weight: 0.0, ..cfg.clone() }, &sched, seed, VALIDATION_INDEX_BASE + i as u64)?;
        let t = rand::Rng::random_range(&mut pick, 2..cfg.pure_length);
        let mu = basis.domain_mean(k).ok_or_else(|| Error::InvalidInput(format!("domain {k} not in basis")))?;
        pure.push(norm2(&z.row(t).iter().zip(&mu).map(|(x, m)| x - m).collect::<Vec<_>>()));
    }
    verify_assumption(&pure, &transition)
}

/// Exactness check: identity activation, no noise, oracle encoder, per-step
/// analytic basis, constant schedules on the `grid`-step simplex lattice over
/// `k` domains. Returns the largest pre-projection error.
pub fn exactness_max_error(d: usize, k: usize, grid: usize, t_len: usize, seed: u64) -> Result<f64> {
    let cfg = ExperimentConfig {
        d,
        k_total: k,
        k_active: k,
        activation_slope: 1.0,
        noise_sigma: 0.0,
        perturbation_norm: 0.1,
        encoder: EncoderKind::Oracle,
        mixing_depth: 0,
        basis_estimator: BasisEstimator::Analytic,
        smoothing: SmoothingKind::None,
        trajectories_per_domain: 4,
        pure_length: 20,
        t: t_len,
        ..ExperimentConfig::default()
    };
    let setup = prepare(&cfg, seed)?;
    let mut worst: f64 = 0.0;
    for (p, alpha) in simplex_lattice(k, grid).into_iter().enumerate() {
        let sched = MixingSchedule::constant(k, &alpha, t_len)?;
        let (bundle, encoded) = setup.simulate(&cfg, &sched, seed, p as u64)?;
        let r = recover_analytic(&setup, &bundle, &encoded)?;
        for pre in &r.pre_projection {
            let err: f64 = pre.iter().zip(&alpha[1..]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Points of the simplex with coordinates in multiples of `1/grid`.
pub fn simplex_lattice(k: usize, grid: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, grid: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / grid as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(k, left - c, grid, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, grid, grid, &mut Vec::new(), &mut out);
    out
}

/// One run of a sweep.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub score: ScoreCard,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub value: f64,
    pub n: usize,
    /// `(metric, mean, sd)` in [`SWEEP_METRICS`] order.
    pub stats: Vec<(&'static str, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub axis: String,
    pub runs: Vec<SweepRun>,
    pub summary: Vec<SweepSummary>,
}

pub const SWEEP_METRICS: [&str; 11] = [
    "mcc",
    "weight_corr",
    "mae_raw",
    "mae_cal",
    "w_traj_corr",
    "snr_eff",
    "sigma_min",
    "mean_residual",
    "delta_approx",
    "bound_violations",
    "ks_p_value",
];

fn metric_values(run: &SweepRun) -> [f64; 11] {
    let (s, d) = (&run.score, &run.diagnostics);
    [
        s.mcc,
        s.weight_corr,
        s.mae_raw,
        s.mae_cal.unwrap_or(f64::NAN),
        s.w_traj_corr,
        d.snr_eff,
        d.sigma_min,
        d.mean_residual,
        d.delta_approx,
        d.bound_violations.map_or(f64::NAN, |v| v as f64),
        d.assumption.map_or(f64::NAN, |a| a.ks_p_value),
    ]
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn worker_count(cfg: &ExperimentConfig, jobs: usize) -> usize {
    let n = if cfg.threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cfg.threads };
    n.clamp(1, jobs.max(1))
}

/// One `run_single` per `(value, seed)`, aggregated per value. Jobs run on a
/// small thread pool; results are ordered by `(value, seed)` regardless of
/// thread count.
pub fn run_sweep(base: &ExperimentConfig, axis: &str, values: &[f64]) -> Result<SweepResult> {
    if values.is_empty() {
        return invalid("sweep needs at least one value");
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| base.with_field(axis, v).map(|c| ExperimentConfig { output: String::new(), ..c }))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|i| base.seeds.iter().map(move |&s| (i, s))).collect();
    let slots: Vec<Mutex<Option<Result<RunOutput>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(base, jobs.len()) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                let (i, seed) = jobs[j];
                let r = run_single(&configs[i], seed);
                *slots[j].lock().expect("slot") = Some(r);
            });
        }
    });
    let mut runs = Vec::with_capacity(jobs.len());
    for (j, slot) in slots.into_iter().enumerate() {
        let out = slot.into_inner().expect("slot").expect("job ran").map_err(|e| e.context(format!("sweep {axis} = {}", values[jobs[j].0])))?;
        runs.push(SweepRun { value: values[jobs[j].0], seed: out.seed, score: out.score, diagnostics: out.diagnostics });
    }
    let summary = values
        .iter()
        .map(|&v| {
            let rows: Vec<[f64; 11]> = runs.iter().filter(|r| r.value == v).map(metric_values).collect();
            let stats = SWEEP_METRICS
                .iter()
                .enumerate()
                .map(|(m, name)| {
                    let col: Vec<f64> = rows.iter().map(|r| r[m]).collect();
                    let (mean, sd) = mean_sd(&col);
                    (*name, mean, sd)
                })
                .collect();
            SweepSummary { value: v, n: rows.len(), stats }
        })
        .collect();
    let result = SweepResult { axis: axis.to_string(), runs, summary };
    if !base.output.is_empty() {
        write_sweep(Path::new(&base.output), base, &result)?;
    }
    Ok(result)
}

impl SweepResult {
    pub fn mean(&self, value: f64, metric: &str) -> Option<f64> {
        let m = SWEEP_METRICS.iter().position(|x| *x == metric)?;
        self.summary.iter().find(|s| s.value == value).map(|s| s.stats[m].1)
    }

    pub fn runs_csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec![self.axis.clone(), "seed".to_string()];
        header.extend(SWEEP_METRICS.iter().map(|s| s.to_string()));
        let rows = self
            .runs
            .iter()
            .map(|r| {
                let mut row = vec![r.value.to_string(), r.seed.to_string()];
                row.extend(metric_values(r).iter().map(|x| x.to_string()));
                row
            })
            .collect();
        (header, rows)
    }

    pub fn summary_csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec![self.axis.clone(), "n".to_string()];
        for m in SWEEP_METRICS {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_sd"));
        }
        let rows = self
            .summary
            .iter()
            .map(|s| {
                let mut row = vec![s.value.to_string(), s.n.to_string()];
                for (_, mean, sd) in &s.stats {
                    row.push(mean.to_string());
                    row.push(sd.to_string());
                }
                row
            })
            .collect();
        (header, rows)
    }
}

/// `<name>_sweep_runs.csv` and `<name>_sweep.csv`, each with a sidecar.
pub fn write_sweep(dir: &Path, cfg: &ExperimentConfig, result: &SweepResult) -> Result<Vec<PathBuf>> {
    let runs = dir.join(format!("{}_sweep_runs.csv", cfg.name));
    let summary = dir.join(format!("{}_sweep.csv", cfg.name));
    let (h, r) = result.runs_csv();
    io::write_csv(&runs, &h, &r)?;
    let (h, r) = result.summary_csv();
    io::write_csv(&summary, &h, &r)?;
    let meta = [
        ("config", cfg.name.clone()),
        ("axis", result.axis.clone()),
        ("seeds", cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")),
    ];
    io::write_meta(&runs, &meta)?;
    io::write_meta(&summary, &meta)?;
    Ok(vec![runs, summary])
}

/// Bound protocol over a sweep: total violations and points checked.
pub fn validate_bounds(base: &ExperimentConfig, axis: &str, values: &[f64]) -> Result<(usize, usize)> {
    let cfg = ExperimentConfig { bound_check: true, ..base.clone() };
    let sweep = run_sweep(&cfg, axis, values)?;
    let violations = sweep.runs.iter().map(|r| r.diagnostics.bound_violations.unwrap_or(0)).sum();
    Ok((violations, sweep.runs.len() * cfg.t))
}

/// MSE of the quadratic-penalty smoother on the exact linear observation
/// model `ẑ_t = μ̂⁰ + B̂α*_t + σξ_t`, with `B̂` taken from `cfg`'s setup and
/// `α*` its schedule stretched to each length. `λ` is chosen by GCV at the
/// first length and scaled by `(T/T₀)^{1/3}` after that.
pub fn tv_rate_mse(cfg: &ExperimentConfig, t_lens: &[usize], seed: u64) -> Result<Vec<f64>> {
    let setup = prepare(cfg, seed)?;
    let basis = &setup.basis;
    let mut lam0 = None;
    let mut out = Vec::with_capacity(t_lens.len());
    for (i, &t_len) in t_lens.iter().enumerate() {
        let schedule: MixingSchedule = make_schedule(cfg.family()?, t_len, cfg.k_total, &setup.domains)?;
        let truth = schedule.restricted(&setup.domains);
        let mut rng = substream(seed, Purpose::Evaluation, (1 << 40) + i as u64);
        let mut z = Matrix::zeros(t_len, basis.dim());
        for (t, a) in truth.iter().enumerate() {
            let lin = basis.b.matvec(&a[1..]);
            let noise: Vec<f64> = normal_vec(&mut rng, basis.dim());
            for j in 0..basis.dim() {
                z[(t, j)] = basis.mu0[j] + lin[j] + cfg.noise_sigma * noise[j];
            }
        }
        let lam = match lam0 {
            None => {
                let l = select_lambda_gcv(&z, basis, &default_lambda_grid())?;
                lam0 = Some((l, t_len));
                l
            }
            Some((l, t0)) => l * (t_len as f64 / t0 as f64).cbrt(),
        };
        let r = smooth_tv(&z, basis, &Lambda::Fixed(lam), &[])?;
        out.push(mse(&r.smoothed_alphas, &truth)?);
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Two-domain noise-free ramp observed through its conditional means
/// `μ̂_mixed(α*_t)` over the shared contexts. Returns the smallest
/// step-to-step increase of the pre-projection weight on the second domain
/// (positive means strictly increasing throughout) and `max ε̂²/σ_min`, with
/// `ε̂` the per-step linearization residual.
pub fn monotonicity_margin(cfg: &ExperimentConfig, seed: u64) -> Result<(f64, f64)> {
    let cfg = ExperimentConfig { k_total: 2, k_active: 2, active_domains: vec![], noise_sigma: 0.0, family: "sequential".into(), ..cfg.clone() };
    cfg.validate()?;
    let setup = prepare(&cfg, seed)?;
    let schedule: MixingSchedule = make_schedule(cfg.family()?, cfg.t, cfg.k_total, &setup.domains)?;
    let means = setup.context.mean_responses(&setup.mechanisms, &schedule.alphas, &setup.encoder)?;
    let z = Matrix::from_rows(&means);
    let r = recover(&z, &setup.basis, &SmoothingConfig::None)?;
    let w: Vec<f64> = r.pre_projection.iter().map(|a| a[0]).collect();
    let min_step = w.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
    let worst_eps = r.residual_norms.iter().fold(0.0f64, |m, &e| m.max(e));
    Ok((min_step, worst_eps * worst_eps / setup.basis.sigma_min))
}

/// Raw and calibrated MSE of one run against the true weights.
pub fn calibration_errors(cfg: &ExperimentConfig, seed: u64) -> Result<(f64, f64)> {
    let cfg = ExperimentConfig { calibrate: true, output: String::new(), ..cfg.clone() };
    let out = run_single(&cfg, seed)?;
    let truth = out.bundle.schedule.restricted(&out.recovery.domains);
    let cal = out.recovery.calibrated_alphas.as_ref().ok_or_else(|| Error::InvalidInput("calibration did not run".into()))?;
    Ok((mse(&out.recovery.smoothed_alphas, &truth)?, mse(cal, &truth)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("noise_sigmaa = 0.1"), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_toml_str("noise_sigma = 0.2\nseeds = [1, 2]").unwrap();
        assert_eq!(cfg.noise_sigma, 0.2);
        assert_eq!(cfg.seeds, vec![1, 2]);
    }

    #[test]
    fn with_field_types() {
        let c = ExperimentConfig::default();
        assert_eq!(c.with_field("window", 7.0).unwrap().window, 7);
        assert_eq!(c.with_field("lambda", 2.5).unwrap().lambda, Some(2.5));
        assert!(matches!(c.with_field("bogus", 1.0), Err(Error::InvalidInput(_))));
        assert!(c.with_field("window", 2.5).is_err());
        assert!(c.with_field("k_active", 9.0).is_err());
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(simplex_lattice(3, 5).len(), 21);
        assert!(simplex_lattice(4, 3).iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn capacity_checked() {
        let c = ExperimentConfig { k_total: 10, ..ExperimentConfig::default() };
        assert!(c.validate().is_err());
    }
}
