use std::path::Path;

use echotime_core::experiment::ExperimentConfig;

use crate::CliError;

/// Commented defaults, printed by `config-reference`. Kept in sync with
/// `ExperimentConfig::default()` by a test.
pub const REFERENCE: &str = r#"# echotime experiment configuration.
# Every key is optional; the values below are the built-in defaults.

[model]
# "2dw" (quantized 2D well) or "ermt" (sign-randomized counterpart of the
# cached 2dw model; create it with `echotime ermt-derive`).
kind = "2dw"
hbar = 0.04
# Product states with hbar*(n1 + n2 + 1) <= e_cutoff.
e_cutoff = 6.0
# Reference coupling: E = H(x_ref), perturbation B = Q1^2 Q2^2.
x_ref = 1.0
# full | even-even-symmetric | even-even-antisymmetric | odd-odd-symmetric
#      | odd-odd-antisymmetric | even-odd
sector = "even-even-symmetric"
# Energy window [center - half_width, center + half_width].
window_center = 3.0
window_half_width = 1.0
# Fraction of the basis that must lie above the last window level.
edge_margin = 0.2
# Hard cap on the basis size.
max_states = 10000
ermt_seed = 7
# Model cache, relative to --out. ERMT caches go next to it as
# <stem>-ermt-<seed>.bin.
cache = "model.bin"

[preparation]
# ergodic | eigenstate | coherent | random-superposition
kind = "ergodic"
epsilon_prep = 0.2
# Time under E + epsilon_prep*B before the experiment (>= 10).
prep_time = 20.0
# coherent:             phase_space_center = [Q1, Q2, P1, P2]
#                       (default: a point on the window-center energy shell)
# random-superposition: energy_width = 0.1
#                       center_energy = 3.0   (default: window_center)
#                       envelope = "gaussian" | "box"

[evolution]
epsilon_evol = 0.1
period = 0.5
# Samples per period (even); the reversal sits at samples/2.
samples = 512

[realizations]
count = 16
seed = 1
# Seed levels are drawn from |E_n - window_center| <= seed_band ...
seed_band = 0.25
# ... whose off-diagonal B row weight is >= this fraction of the median.
chaotic_fraction = 0.25
# Seed levels tried by the ergodic preparation (0: 4*count).
max_attempts = 0
# Participation-ratio saturation check over [prep_time/2, prep_time].
pr_checkpoints = 64
pr_threshold = 1.2

[analysis]
# Parabolic refinement of the return-probability maximum.
refine = true
# "per-realization" (mean of t_r) or "mean-trace" (t_r of the mean trace).
averaging = "per-realization"
# |f - 0.5| below which a lambda bin counts as plateau.
plateau_tol = 0.03
# Perturbative if epsilon < regime_factor * dx_c.
regime_factor = 5.0
# "nearest-neighbor" or "within-spacing".
sigma_convention = "nearest-neighbor"
# Fit gamma_SR and gamma_LE on traces over [0, decay_horizon].
decay_fits = true
decay_horizon = 4.0
decay_samples = 256

[sweep]
# Grid; empty lists fall back to [preparation]/[evolution].
# epsilon_prep = 0 selects eigenstate preparation.
epsilon_prep = []
epsilon_evol = []
# With lambda set, ergodic cells use epsilon_evol = lambda * epsilon_prep.
lambda = []
period = []
# Skip cells with a larger epsilon_evol.
# max_epsilon_evol = 0.5

[surface]
# Grid points per axis over [0, T].
points = 101
"#;

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read `path`, or use the defaults when no config is given.
pub fn load(path: Option<&Path>, seed_offset: u64) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })?
        }
        None => ExperimentConfig::default(),
    };
    cfg.realizations.seed = cfg.realizations.seed.wrapping_add(seed_offset);
    Ok(cfg)
}
