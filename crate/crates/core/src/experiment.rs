//! Experiment configuration, realization handling, parameter sweeps and the
//! CSV artifacts they produce.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    aggregate, echo_condition, find_tr_with, fit_gamma, regime, scaling_curve, CompensationResult,
    DecayFit, EchoCondition, Lambda, ScalingCurve, ScalingPoint,
};
use crate::basis::{SymmetrySector, DEFAULT_MAX_STATES};
use crate::ermt::randomize_signs;
use crate::error::{Error, Result};
use crate::model::{
    hex, spectral_diagnostics, ModelKind, ModelParams, QuantizedModel, SigmaConvention,
};
use crate::preparation::{
    coherent_state, default_center, eigenstate_preparation, ergodic_preparation,
    random_superposition, seed_level_order, ErgodicityOptions, PreparationSpec, SeedLevelOptions,
    StateVector,
};
use crate::propagation::{echo_trace, fidelity_trace, survival_trace, EchoTrace, EvolutionPair, Spectrum};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ModelChoice {
    #[default]
    #[serde(rename = "2dw")]
    Physical2dw,
    #[serde(rename = "ermt")]
    Ermt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelChoice,
    pub hbar: f64,
    pub e_cutoff: f64,
    pub x_ref: f64,
    pub sector: SymmetrySector,
    pub window_center: f64,
    pub window_half_width: f64,
    pub edge_margin: f64,
    pub max_states: usize,
    /// Seed of the sign randomization when `kind = "ermt"`.
    pub ermt_seed: u64,
    /// Cache file of the physical model, relative to the output directory.
    pub cache: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            kind: ModelChoice::Physical2dw,
            hbar: p.hbar,
            e_cutoff: p.e_cutoff,
            x_ref: p.x_ref,
            sector: p.sector,
            window_center: p.window_center,
            window_half_width: p.window_half_width,
            edge_margin: p.edge_margin,
            max_states: DEFAULT_MAX_STATES,
            ermt_seed: 7,
            cache: "model.bin".into(),
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            hbar: self.hbar,
            e_cutoff: self.e_cutoff,
            x_ref: self.x_ref,
            sector: self.sector,
            window_center: self.window_center,
            window_half_width: self.window_half_width,
            edge_margin: self.edge_margin,
            max_states: self.max_states,
        }
    }

    pub fn cache_path(&self, out: &Path) -> PathBuf {
        out.join(&self.cache)
    }

    pub fn ermt_cache_path(&self, out: &Path) -> PathBuf {
        let p = Path::new(&self.cache);
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        out.join(p.with_file_name(format!("{stem}-ermt-{}.bin", self.ermt_seed)))
    }

    /// Load the cached model selected by `kind`.
    pub fn load(&self, out: &Path) -> Result<QuantizedModel> {
        let path = match self.kind {
            ModelChoice::Physical2dw => self.cache_path(out),
            ModelChoice::Ermt => self.ermt_cache_path(out),
        };
        let m = QuantizedModel::load(&path)?;
        if m.params != self.params() {
            return Err(Error::Cache {
                path,
                reason: "cached model was built with different [model] parameters; rebuild it".into(),
            });
        }
        match (&m.kind, self.kind) {
            (ModelKind::Physical2dw, ModelChoice::Physical2dw) => Ok(m),
            (ModelKind::Ermt { seed, .. }, ModelChoice::Ermt) if *seed == self.ermt_seed => Ok(m),
            _ => Err(Error::Cache {
                path,
                reason: "cached model kind or seed does not match the config".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSection {
    pub epsilon_evol: f64,
    pub period: f64,
    /// Samples per period (even).
    pub samples: usize,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self {
            epsilon_evol: 0.1,
            period: 0.5,
            samples: crate::propagation::DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealizationSection {
    pub count: usize,
    pub seed: u64,
    /// Seed-level candidate band |E − center| ≤ seed_band.
    pub seed_band: f64,
    pub chaotic_fraction: f64,
    /// Seed levels tried before giving up (0: four per realization).
    pub max_attempts: usize,
    pub pr_checkpoints: usize,
    pub pr_threshold: f64,
}

impl Default for RealizationSection {
    fn default() -> Self {
        let s = SeedLevelOptions::default();
        let e = ErgodicityOptions::default();
        Self {
            count: 16,
            seed: 1,
            seed_band: s.band,
            chaotic_fraction: s.chaotic_fraction,
            max_attempts: 0,
            pr_checkpoints: e.checkpoints,
            pr_threshold: e.threshold,
        }
    }
}

impl RealizationSection {
    fn seed_options(&self) -> SeedLevelOptions {
        SeedLevelOptions {
            band: self.seed_band,
            chaotic_fraction: self.chaotic_fraction,
        }
    }

    fn ergodicity(&self) -> ErgodicityOptions {
        ErgodicityOptions {
            checkpoints: self.pr_checkpoints,
            threshold: self.pr_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// t_r per realization, then averaged.
    #[default]
    PerRealization,
    /// t_r of the realization-averaged trace.
    MeanTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub refine: bool,
    pub averaging: Averaging,
    pub plateau_tol: f64,
    pub regime_factor: f64,
    pub sigma_convention: SigmaConvention,
    /// Fit γ_SR and γ_LE on traces of length `decay_horizon`.
    pub decay_fits: bool,
    pub decay_horizon: f64,
    pub decay_samples: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            refine: true,
            averaging: Averaging::PerRealization,
            plateau_tol: 0.03,
            regime_factor: 5.0,
            sigma_convention: SigmaConvention::NearestNeighbor,
            decay_fits: true,
            decay_horizon: 4.0,
            decay_samples: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// ε_prep values (0 selects eigenstate preparation). Empty: use [preparation].
    pub epsilon_prep: Vec<f64>,
    /// ε_evol values, used when `lambda` is empty or ε_prep = 0.
    pub epsilon_evol: Vec<f64>,
    /// λ values; ε_evol = λ·ε_prep for ergodic cells.
    pub lambda: Vec<f64>,
    /// Periods T. Empty: use [evolution].
    pub period: Vec<f64>,
    /// Cells with larger ε_evol are skipped.
    pub max_epsilon_evol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSection {
    /// Grid points per axis over [0, T].
    pub points: usize,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        Self { points: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub preparation: PreparationSpec,
    pub evolution: EvolutionSection,
    pub realizations: RealizationSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
    pub surface: SurfaceSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            preparation: PreparationSpec::Ergodic {
                epsilon_prep: 0.2,
                prep_time: 20.0,
            },
            evolution: EvolutionSection::default(),
            realizations: RealizationSection::default(),
            analysis: AnalysisSection::default(),
            sweep: SweepSection::default(),
            surface: SurfaceSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.preparation.validate()?;
        let e = &self.evolution;
        if !(e.epsilon_evol >= 0.0 && e.epsilon_evol.is_finite()) {
            return Err(Error::param("epsilon_evol", format!("must be ≥ 0, got {}", e.epsilon_evol)));
        }
        if !(e.period > 0.0 && e.period.is_finite()) {
            return Err(Error::param("period", format!("must be positive, got {}", e.period)));
        }
        if e.samples < 2 || e.samples % 2 != 0 {
            return Err(Error::param("samples", format!("must be even and ≥ 2, got {}", e.samples)));
        }
        if self.realizations.count == 0 {
            return Err(Error::param("count", "need at least one realization"));
        }
        let s = &self.sweep;
        if s.epsilon_prep.iter().chain(&s.epsilon_evol).chain(&s.lambda).any(|v| !(*v >= 0.0)) {
            return Err(Error::param("sweep", "grid values must be ≥ 0"));
        }
        if s.period.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::param("sweep.period", "periods must be positive"));
        }
        Ok(())
    }

    /// Short hash pinning every input of this config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))[..16].to_string()
    }
}

// ---------------------------------------------------------------------------
// Realizations

#[derive(Debug, Clone)]
pub struct Realization {
    /// Seed level (ergodic/eigenstate), RNG seed (random superposition) or 0.
    pub label: u64,
    pub state: StateVector,
}

/// Prepared initial states for all realizations of a preparation.
pub fn prepare_realizations(
    model: &QuantizedModel,
    spec: &PreparationSpec,
    h_prep: Option<&Spectrum>,
    rs: &RealizationSection,
) -> Result<Vec<Realization>> {
    match spec {
        PreparationSpec::Coherent { phase_space_center } => {
            let p = &model.params;
            let center = phase_space_center.unwrap_or_else(|| default_center(p.window_center, p.x_ref));
            Ok(vec![Realization {
                label: 0,
                state: coherent_state(model, center)?,
            }])
        }
        PreparationSpec::RandomSuperposition {
            energy_width,
            center_energy,
            envelope,
        } => {
            let c = center_energy.unwrap_or(model.params.window_center);
            (0..rs.count as u64)
                .map(|r| {
                    let seed = rs.seed.wrapping_add(r);
                    Ok(Realization {
                        label: seed,
                        state: random_superposition(model, *energy_width, c, *envelope, seed)?,
                    })
                })
                .collect()
        }
        PreparationSpec::Eigenstate => {
            let order = seed_level_order(model, &rs.seed_options(), rs.seed);
            if order.len() < rs.count {
                return Err(Error::Preparation(format!(
                    "{} seed-level candidates for {} realizations; widen seed_band",
                    order.len(),
                    rs.count
                )));
            }
            order[..rs.count]
                .iter()
                .map(|&k| {
                    Ok(Realization {
                        label: k as u64,
                        state: eigenstate_preparation(model, k)?,
                    })
                })
                .collect()
        }
        PreparationSpec::Ergodic { prep_time, epsilon_prep } => {
            let h = h_prep.ok_or_else(|| Error::Preparation("ergodic preparation needs H_prep".into()))?;
            debug_assert_eq!(h.delta_x, *epsilon_prep);
            let order = seed_level_order(model, &rs.seed_options(), rs.seed);
            let attempts = if rs.max_attempts == 0 { 4 * rs.count } else { rs.max_attempts };
            let opts = rs.ergodicity();
            let mut out = Vec::with_capacity(rs.count);
            let mut last_err = None;
            for &k in order.iter().take(attempts) {
                match ergodic_preparation(h, k, *prep_time, &opts) {
                    Ok((state, _)) => {
                        out.push(Realization { label: k as u64, state });
                        if out.len() == rs.count {
                            return Ok(out);
                        }
                    }
                    Err(e @ Error::NotErgodic { .. }) => {
                        log::debug!("seed level {k} rejected: {e}");
                        last_err = Some(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.unwrap_or_else(|| {
                Error::Preparation(format!(
                    "only {} of {} realizations could be prepared from {} candidates",
                    out.len(),
                    rs.count,
                    order.len()
                ))
            }))
        }
    }
}

// ---------------------------------------------------------------------------
// One experiment cell

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub label: u64,
    pub compensation: CompensationResult,
    pub echo: EchoCondition,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub lambda: Lambda,
    pub aggregate: CompensationResult,
    pub realizations: Vec<RealizationResult>,
    /// Trace of the first realization.
    pub first_trace: EchoTrace,
    /// Realization-averaged trace.
    pub mean_trace: EchoTrace,
    pub gamma_sr: Option<DecayFit>,
    pub gamma_le: Option<DecayFit>,
}

/// A fully resolved single experiment (one grid cell).
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub result: std::result::Result<CellResult, String>,
    pub numerical_failure: bool,
}

impl CellOutcome {
    pub fn epsilon_prep(&self) -> Option<f64> {
        self.config.preparation.epsilon_prep()
    }
}

/// Run all realizations of one experiment on pre-built spectra.
pub fn run_cell(
    model: &QuantizedModel,
    cfg: &ExperimentConfig,
    realizations: &[Realization],
    pair: &EvolutionPair,
) -> Result<CellResult> {
    let ev = &cfg.evolution;
    let hash = cfg.hash();
    let mut results = Vec::with_capacity(realizations.len());
    let mut traces = Vec::with_capacity(realizations.len());
    for r in realizations {
        let tr = echo_trace(&r.state.amplitudes, pair, ev.period, ev.samples, hash.clone())?;
        let comp = find_tr_with(&tr, cfg.analysis.refine);
        let echo = echo_condition(&r.state.amplitudes, pair, ev.period);
        results.push(RealizationResult {
            label: r.label,
            compensation: comp,
            echo,
        });
        traces.push(tr);
    }
    let mut mean_trace = traces[0].clone();
    let n = traces.len() as f64;
    for (k, p) in mean_trace.p_values.iter_mut().enumerate() {
        *p = traces.iter().map(|t| t.p_values[k]).sum::<f64>() / n;
    }
    let comps: Vec<CompensationResult> = results.iter().map(|r| r.compensation.clone()).collect();
    let aggregate = match cfg.analysis.averaging {
        Averaging::PerRealization => aggregate(&comps).expect("nonempty"),
        Averaging::MeanTrace => {
            let mut c = find_tr_with(&mean_trace, cfg.analysis.refine);
            c.n_realizations = comps.len();
            c.spread = aggregate(&comps).expect("nonempty").spread;
            c
        }
    };

    let (gamma_sr, gamma_le) = if cfg.analysis.decay_fits {
        decay_fits(model, cfg, realizations, pair)
    } else {
        (None, None)
    };

    Ok(CellResult {
        lambda: Lambda::from_epsilons(cfg.preparation.epsilon_prep(), ev.epsilon_evol),
        aggregate,
        realizations: results,
        first_trace: traces.swap_remove(0),
        mean_trace,
        gamma_sr,
        gamma_le,
    })
}

/// Realization-averaged decay traces on [0, horizon].
pub fn decay_traces(
    realizations: &[Realization],
    pair: &EvolutionPair,
    horizon: f64,
    samples: usize,
    fidelity: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let times: Vec<f64> = (0..=samples).map(|k| horizon * k as f64 / samples as f64).collect();
    let n = realizations.len() as f64;
    let mut sr = vec![0.0; times.len()];
    let mut le = vec![0.0; times.len()];
    let mut sat = 0.0;
    for r in realizations {
        let psi = &r.state.amplitudes;
        for (a, b) in sr.iter_mut().zip(survival_trace(psi, &pair.h1, &times)) {
            *a += b / n;
        }
        if fidelity {
            for (a, b) in le.iter_mut().zip(fidelity_trace(psi, pair, &times)) {
                *a += b / n;
            }
        }
        let c = pair.h1.to_eigen(psi);
        sat += c.iter().map(|x| x.norm_sqr().powi(2)).sum::<f64>() / n;
    }
    (times, sr, le, sat)
}

fn decay_fits(
    model: &QuantizedModel,
    cfg: &ExperimentConfig,
    realizations: &[Realization],
    pair: &EvolutionPair,
) -> (Option<DecayFit>, Option<DecayFit>) {
    let a = &cfg.analysis;
    let (times, sr, le, sat) = decay_traces(realizations, pair, a.decay_horizon, a.decay_samples, true);
    let dxc = spectral_diagnostics(model).ok().map(|d| d.delta_x_c);
    let tag = |fit: Result<DecayFit>, eps: Option<f64>| {
        fit.ok().map(|mut f| {
            if let (Some(d), Some(e)) = (dxc, eps) {
                f.regime = Some(regime(e, d, a.regime_factor));
            }
            f
        })
    };
    (
        tag(fit_gamma(&times, &sr, sat), cfg.preparation.epsilon_prep()),
        tag(fit_gamma(&times, &le, sat), Some(cfg.evolution.epsilon_evol)),
    )
}

// ---------------------------------------------------------------------------
// Sweeps

/// Expand the [sweep] section into per-cell configs (a single cell if empty).
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let s = &cfg.sweep;
    let periods = if s.period.is_empty() { vec![cfg.evolution.period] } else { s.period.clone() };
    let evols = if s.epsilon_evol.is_empty() { vec![cfg.evolution.epsilon_evol] } else { s.epsilon_evol.clone() };
    // Seed-level preparations take ε_prep from the grid (0 = eigenstate).
    let preps: Vec<PreparationSpec> = if cfg.preparation.uses_seed_level() && !s.epsilon_prep.is_empty() {
        let prep_time = match cfg.preparation {
            PreparationSpec::Ergodic { prep_time, .. } => prep_time,
            _ => 20.0 * crate::constants::TAU_CL,
        };
        s.epsilon_prep
            .iter()
            .map(|&e| {
                if e == 0.0 {
                    PreparationSpec::Eigenstate
                } else {
                    PreparationSpec::Ergodic { epsilon_prep: e, prep_time }
                }
            })
            .collect()
    } else {
        vec![cfg.preparation.clone()]
    };
    let mut cells = Vec::new();
    for &period in &periods {
        for prep in &preps {
            let eps: Vec<f64> = match prep.epsilon_prep() {
                // Rounded so that e.g. 0.1·0.2 is stored as 0.02.
                Some(e) if e > 0.0 && !s.lambda.is_empty() => {
                    s.lambda.iter().map(|l| (l * e * 1e12).round() / 1e12).collect()
                }
                _ => evols.clone(),
            };
            for e in eps {
                if s.max_epsilon_evol.is_some_and(|m| e > m + 1e-12) {
                    continue;
                }
                let mut c = cfg.clone();
                c.sweep = SweepSection::default();
                c.preparation = prep.clone();
                c.evolution.period = period;
                c.evolution.epsilon_evol = e;
                cells.push(c);
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Sorted by config hash.
    pub cells: Vec<CellOutcome>,
    pub model_hash: String,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    pub fn scaling_points(&self) -> Vec<ScalingPoint> {
        self.cells
            .iter()
            .filter_map(|c| {
                let r = c.result.as_ref().ok()?;
                Some(ScalingPoint {
                    lambda: r.lambda,
                    t_r_over_t: r.aggregate.t_r_over_t,
                    epsilon_prep: c.epsilon_prep(),
                    epsilon_evol: c.config.evolution.epsilon_evol,
                    period: c.config.evolution.period,
                    model_kind: c.config.model.kind_label().into(),
                    spread: r.aggregate.spread,
                })
            })
            .collect()
    }

    pub fn scaling_curve(&self) -> Result<ScalingCurve> {
        scaling_curve(&self.scaling_points())
    }
}

impl ModelSection {
    pub fn kind_label(&self) -> &'static str {
        match self.kind {
            ModelChoice::Physical2dw => "2DW",
            ModelChoice::Ermt => "ERMT",
        }
    }
}

fn key(x: f64) -> u64 {
    x.to_bits()
}

/// Run every cell on `workers` threads. Cells that fail are recorded with
/// their error and the sweep continues.
pub fn run_sweep(model: &QuantizedModel, cfg: &ExperimentConfig, workers: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let cells = sweep_cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    pool.install(|| run_cells(model, cells))
}

fn run_cells(model: &QuantizedModel, cells: Vec<ExperimentConfig>) -> Result<SweepOutcome> {
    // Distinct Hamiltonians first: E ± ε_evol·B and E + ε_prep·B.
    let mut deltas: Vec<f64> = Vec::new();
    for c in &cells {
        let e = c.evolution.epsilon_evol;
        deltas.extend([e, -e]);
        if let PreparationSpec::Ergodic { epsilon_prep, .. } = c.preparation {
            deltas.push(epsilon_prep);
        }
    }
    deltas.sort_by(f64::total_cmp);
    deltas.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let spectra: BTreeMap<u64, std::result::Result<Arc<Spectrum>, String>> = deltas
        .par_iter()
        .map(|&d| (key(d), Spectrum::perturbed(model, d).map(Arc::new).map_err(|e| e.to_string())))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    // Prepared states, shared by all cells with the same preparation.
    let mut preps: Vec<PreparationSpec> = Vec::new();
    for c in &cells {
        if !preps.contains(&c.preparation) {
            preps.push(c.preparation.clone());
        }
    }
    let rs = cells.first().map(|c| c.realizations.clone()).unwrap_or_default();
    type Prepared = std::result::Result<Arc<Vec<Realization>>, (String, bool)>;
    let prepared: Vec<(PreparationSpec, Prepared)> = preps
        .par_iter()
        .map(|p| {
            let h = match p {
                PreparationSpec::Ergodic { epsilon_prep, .. } => match &spectra[&key(*epsilon_prep)] {
                    Ok(s) => Some(s.clone()),
                    Err(e) => return (p.clone(), Err((e.clone(), true))),
                },
                _ => None,
            };
            let r = prepare_realizations(model, p, h.as_deref(), &rs)
                .map(Arc::new)
                .map_err(|e| (e.to_string(), e.is_numerical()));
            (p.clone(), r)
        })
        .collect();

    let mut outcomes: Vec<CellOutcome> = cells
        .into_par_iter()
        .map(|cfg| {
            let hash = cfg.hash();
            let e = cfg.evolution.epsilon_evol;
            let prep = &prepared.iter().find(|(p, _)| *p == cfg.preparation).expect("prepared").1;
            let res: std::result::Result<CellResult, (String, bool)> = (|| {
                let reals = prep.clone()?;
                let h1 = spectra[&key(e)].clone().map_err(|m| (m, true))?;
                let h2 = spectra[&key(-e)].clone().map_err(|m| (m, true))?;
                let pair = EvolutionPair::from_spectra((*h1).clone(), (*h2).clone());
                let pair = EvolutionPair { epsilon_evol: e, ..pair };
                run_cell(model, &cfg, &reals, &pair).map_err(|err| (err.to_string(), err.is_numerical()))
            })();
            let (result, numerical_failure) = match res {
                Ok(r) => (Ok(r), false),
                Err((m, num)) => (Err(m), num),
            };
            CellOutcome {
                config: cfg,
                config_hash: hash,
                result,
                numerical_failure,
            }
        })
        .collect();
    outcomes.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));
    Ok(SweepOutcome {
        cells: outcomes,
        model_hash: model.content_hash(),
    })
}

/// Derive the ERMT model a config asks for from its physical parent.
pub fn derive_ermt(parent: &QuantizedModel, seed: u64) -> Result<QuantizedModel> {
    randomize_signs(parent, seed)
}

// ---------------------------------------------------------------------------
// CSV output

fn header<W: Write>(w: &mut W, items: &[(&str, String)]) -> io::Result<()> {
    for (k, v) in items {
        writeln!(w, "# {k}: {v}")?;
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn cell_header(cfg: &ExperimentConfig, model_hash: &str) -> Vec<(&'static str, String)> {
    let lambda = Lambda::from_epsilons(cfg.preparation.epsilon_prep(), cfg.evolution.epsilon_evol);
    vec![
        ("config_hash", cfg.hash()),
        ("code_version", CODE_VERSION.to_string()),
        ("model", model_hash[..16].to_string()),
        ("model_kind", cfg.model.kind_label().to_string()),
        ("hbar", cfg.model.hbar.to_string()),
        ("preparation", cfg.preparation.kind_name().to_string()),
        ("T", cfg.evolution.period.to_string()),
        ("epsilon_prep", opt(cfg.preparation.epsilon_prep())),
        ("epsilon_evol", cfg.evolution.epsilon_evol.to_string()),
        ("lambda", lambda.to_string()),
        ("lambda_flag", lambda.flag().to_string()),
        ("seed", cfg.realizations.seed.to_string()),
    ]
}

/// Columns (t, P).
pub fn write_trace_csv<W: Write>(
    mut w: W,
    cfg: &ExperimentConfig,
    model_hash: &str,
    trace: &EchoTrace,
) -> io::Result<()> {
    header(&mut w, &cell_header(cfg, model_hash))?;
    writeln!(w, "# reversal_index: {}", trace.reversal_index)?;
    writeln!(w, "t,P")?;
    for (t, p) in trace.times.iter().zip(&trace.p_values) {
        writeln!(w, "{t},{p}")?;
    }
    Ok(())
}

pub const RESULTS_COLUMNS: &str = "config_hash,model,hbar,kind,preparation,epsilon_prep,epsilon_evol,lambda,lambda_flag,T,t_r,t_r_over_T,spread,p_max,gamma_SR,gamma_LE,n_realizations,echo_condition_fraction,status";

/// One row per experiment cell.
pub fn write_results_csv<W: Write>(mut w: W, sweep: &SweepOutcome, sweep_hash: &str) -> io::Result<()> {
    header(
        &mut w,
        &[
            ("config_hash", sweep_hash.to_string()),
            ("code_version", CODE_VERSION.to_string()),
            ("model", sweep.model_hash[..16].to_string()),
        ],
    )?;
    writeln!(w, "{RESULTS_COLUMNS}")?;
    for c in &sweep.cells {
        let cfg = &c.config;
        let lambda = Lambda::from_epsilons(cfg.preparation.epsilon_prep(), cfg.evolution.epsilon_evol);
        let lead = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            c.config_hash,
            &sweep.model_hash[..16],
            cfg.model.hbar,
            cfg.model.kind_label(),
            cfg.preparation.kind_name(),
            opt(cfg.preparation.epsilon_prep()),
            cfg.evolution.epsilon_evol,
            lambda,
            lambda.flag(),
            cfg.evolution.period,
        );
        match &c.result {
            Ok(r) => {
                let a = &r.aggregate;
                let frac = r.realizations.iter().filter(|x| x.echo.satisfied).count() as f64
                    / r.realizations.len() as f64;
                writeln!(
                    w,
                    "{lead},{},{},{},{},{},{},{},{},ok",
                    a.t_r,
                    a.t_r_over_t,
                    a.spread,
                    a.p_max,
                    opt(r.gamma_sr.as_ref().map(|f| f.gamma)),
                    opt(r.gamma_le.as_ref().map(|f| f.gamma)),
                    a.n_realizations,
                    frac
                )?;
            }
            Err(e) => {
                let tag = if c.numerical_failure { "numerical" } else { "error" };
                writeln!(w, "{lead},,,,,,,0,,{tag}: {}", e.replace([',', '\n'], ";"))?;
            }
        }
    }
    Ok(())
}

/// Columns (lambda_bin, f_mean, f_std, n).
pub fn write_scaling_csv<W: Write>(mut w: W, curve: &ScalingCurve, sweep_hash: &str) -> io::Result<()> {
    header(
        &mut w,
        &[
            ("config_hash", sweep_hash.to_string()),
            ("code_version", CODE_VERSION.to_string()),
            ("monotone", curve.monotone.to_string()),
        ],
    )?;
    writeln!(w, "lambda_bin,f_mean,f_std,n")?;
    for b in &curve.bins {
        let l = if b.lambda.is_infinite() { "inf".to_string() } else { b.lambda.to_string() };
        writeln!(w, "{l},{},{},{}", b.f_mean, b.f_std, b.n)?;
    }
    Ok(())
}

/// Triplets (t1, t2, P).
pub fn write_surface_csv<W: Write>(
    mut w: W,
    cfg: &ExperimentConfig,
    model_hash: &str,
    t1: &[f64],
    t2: &[f64],
    values: &[Vec<f64>],
    contour_level: f64,
) -> io::Result<()> {
    header(&mut w, &cell_header(cfg, model_hash))?;
    writeln!(w, "# contour_level: {contour_level}")?;
    writeln!(w, "t1,t2,P")?;
    for (i, a) in t1.iter().enumerate() {
        for (j, b) in t2.iter().enumerate() {
            writeln!(w, "{a},{b},{}", values[i][j])?;
        }
    }
    Ok(())
}

/// Parse a results CSV back into scaling points (rows with status `ok`).
pub fn read_results_csv(text: &str) -> std::result::Result<Vec<ScalingPoint>, String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let head = lines.next().ok_or("empty results file")?;
    let cols: Vec<&str> = head.split(',').collect();
    let idx = |name: &str| cols.iter().position(|c| *c == name).ok_or(format!("missing column {name}"));
    let (il, iflag, ifr, iep, iee, it, ik, isp, ist) = (
        idx("lambda")?,
        idx("lambda_flag")?,
        idx("t_r_over_T")?,
        idx("epsilon_prep")?,
        idx("epsilon_evol")?,
        idx("T")?,
        idx("kind")?,
        idx("spread")?,
        idx("status")?,
    );
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"));
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < cols.len() {
            return Err(format!("short row: {line}"));
        }
        if f[ist] != "ok" {
            continue;
        }
        let lambda = match f[iflag] {
            "infinite" => Lambda::Infinite,
            "small" => Lambda::Small,
            _ => Lambda::Value(num(f[il])?),
        };
        out.push(ScalingPoint {
            lambda,
            t_r_over_t: num(f[ifr])?,
            epsilon_prep: if f[iep].is_empty() { None } else { Some(num(f[iep])?) },
            epsilon_evol: num(f[iee])?,
            period: num(f[it])?,
            model_kind: f[ik].to_string(),
            spread: num(f[isp])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_expansion() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep = SweepSection {
            epsilon_prep: vec![0.0, 0.2],
            epsilon_evol: vec![0.3],
            lambda: vec![0.5, 1.0, 3.0],
            period: vec![0.5, 1.0],
            max_epsilon_evol: Some(0.5),
        };
        let cells = sweep_cells(&cfg);
        // per period: eigenstate × 1 + ergodic × 2 (λ=3 → 0.6 skipped)
        assert_eq!(cells.len(), 6);
        assert!(cells.iter().all(|c| c.sweep == SweepSection::default()));
        let eig = cells.iter().filter(|c| c.preparation == PreparationSpec::Eigenstate).count();
        assert_eq!(eig, 2);
        let hashes: std::collections::HashSet<_> = cells.iter().map(|c| c.hash()).collect();
        assert_eq!(hashes.len(), 6);
    }

    #[test]
    fn single_cell_without_sweep() {
        let cfg = ExperimentConfig::default();
        let cells = sweep_cells(&cfg);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].hash(), cfg.hash());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.evolution.samples = 11;
        assert!(cfg.validate().is_err());
    }
}
