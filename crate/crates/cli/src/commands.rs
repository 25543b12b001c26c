use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use echotime_core::analysis::{estimate_lambda_star, scaling_curve, ScalingCurve};
use echotime_core::ermt::flip_fraction;
use echotime_core::experiment::{
    derive_ermt, prepare_realizations, read_results_csv, run_sweep, write_results_csv, write_scaling_csv,
    write_surface_csv, write_trace_csv, ExperimentConfig, ModelChoice, SweepSection,
};
use echotime_core::model::{
    diagonalize_reference, spectral_diagnostics_with, QuantizedModel, SigmaConvention, SpectralDiagnostics,
};
use echotime_core::preparation::PreparationSpec;
use echotime_core::propagation::{fidelity_trace, period_grid, surface as surface_grid, EvolutionPair, Spectrum};
use echotime_core::Error;
use serde::Serialize;

use crate::CliError;

pub struct Context {
    pub out: PathBuf,
    pub workers: usize,
}

fn create<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let f = File::create(path).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn out_dir(ctx: &Context) -> Result<&Path, CliError> {
    fs::create_dir_all(&ctx.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", ctx.out.display())))?;
    Ok(&ctx.out)
}

fn load_model(ctx: &Context, cfg: &ExperimentConfig) -> Result<QuantizedModel, CliError> {
    let m = &cfg.model;
    let path = match m.kind {
        ModelChoice::Physical2dw => m.cache_path(&ctx.out),
        ModelChoice::Ermt => m.ermt_cache_path(&ctx.out),
    };
    if !path.exists() {
        let how = match m.kind {
            ModelChoice::Physical2dw => "`echotime build`",
            ModelChoice::Ermt => "`echotime build` and then `echotime ermt-derive`",
        };
        return Err(CliError::Config(format!(
            "no cached model at {}; run {how} with the same --config and --out first",
            path.display()
        )));
    }
    Ok(m.load(&ctx.out)?)
}

/// The config with its [sweep] section dropped (single-experiment commands).
fn single(cfg: &ExperimentConfig, command: &str) -> ExperimentConfig {
    let mut c = cfg.clone();
    if c.sweep != SweepSection::default() {
        log::warn!("{command} ignores the [sweep] section");
        c.sweep = SweepSection::default();
    }
    c
}

#[derive(Serialize)]
struct DiagnosticsReport<'a> {
    model_hash: String,
    kind: &'a str,
    hbar: f64,
    e_cutoff: f64,
    basis_dim: usize,
    window_levels: usize,
    energy_range: [f64; 2],
    mean_spacing: f64,
    diagnostics: Option<SpectralDiagnostics>,
    note: Option<String>,
}

fn diagnostics_report(model: &QuantizedModel, conv: SigmaConvention) -> Result<DiagnosticsReport<'_>, CliError> {
    let (diagnostics, note) = match spectral_diagnostics_with(model, conv) {
        Ok(d) => (Some(d), None),
        Err(e @ Error::StatisticalFloor { .. }) => {
            log::warn!("{e}; σ and δx_c are not reported");
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(DiagnosticsReport {
        model_hash: model.content_hash(),
        kind: model.kind.label(),
        hbar: model.params.hbar,
        e_cutoff: model.params.e_cutoff,
        basis_dim: model.basis_dim,
        window_levels: model.len(),
        energy_range: [model.energies[0], model.energies[model.len() - 1]],
        mean_spacing: model.mean_spacing,
        diagnostics,
        note,
    })
}

fn print_report(r: &DiagnosticsReport) {
    println!(
        "{} model {}: ℏ = {}, {} basis states, {} levels in [{:.4}, {:.4}]",
        r.kind,
        &r.model_hash[..16],
        r.hbar,
        r.basis_dim,
        r.window_levels,
        r.energy_range[0],
        r.energy_range[1]
    );
    println!("  Δ = {:.6e}", r.mean_spacing);
    if let Some(d) = &r.diagnostics {
        println!("  σ = {:.6}  δx_c = {:.6}", d.sigma, d.delta_x_c);
        println!(
            "  bandwidth = {:.4} ({} levels)  τ_cl(ref) = {}",
            d.bandwidth, d.bandwidth_levels, d.tau_cl_reference
        );
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    create(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

pub fn build(ctx: &Context, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = diagonalize_reference(&cfg.model.params())?;
    let out = out_dir(ctx)?;
    let path = cfg.model.cache_path(out);
    model.save(&path)?;
    let report = diagnostics_report(&model, cfg.analysis.sigma_convention)?;
    write_json(&out.join("diagnostics.json"), &report)?;
    print_report(&report);
    println!("  cache: {}", path.display());
    Ok(())
}

pub fn ermt_derive(ctx: &Context, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut phys = cfg.clone();
    phys.model.kind = ModelChoice::Physical2dw;
    let parent = load_model(ctx, &phys)?;
    let seed = cfg.model.ermt_seed;
    let child = derive_ermt(&parent, seed)?;
    let out = out_dir(ctx)?;
    let path = cfg.model.ermt_cache_path(out);
    child.save(&path)?;
    let report = diagnostics_report(&child, cfg.analysis.sigma_convention)?;
    write_json(&out.join(format!("diagnostics-ermt-{seed}.json")), &report)?;
    print_report(&report);
    println!("  seed = {seed}, signs flipped: {:.4}", flip_fraction(&parent, &child));
    println!("  cache: {}", path.display());
    Ok(())
}

pub fn run(ctx: &Context, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let c = single(cfg, "run");
    let model = load_model(ctx, &c)?;
    let outcome = run_sweep(&model, &c, ctx.workers)?;
    let cell = &outcome.cells[0];
    let r = match &cell.result {
        Ok(r) => r,
        Err(m) if cell.numerical_failure => return Err(CliError::Numerical(m.clone())),
        Err(m) => return Err(CliError::Config(m.clone())),
    };
    let out = out_dir(ctx)?;
    let mh = &outcome.model_hash;
    create(&out.join("trace.csv"), |w| write_trace_csv(w, &cell.config, mh, &r.first_trace))?;
    create(&out.join("trace_mean.csv"), |w| write_trace_csv(w, &cell.config, mh, &r.mean_trace))?;
    create(&out.join("result.csv"), |w| write_results_csv(w, &outcome, &cell.config_hash))?;

    let a = &r.aggregate;
    let echo = r.realizations.iter().filter(|x| x.echo.satisfied).count();
    println!(
        "{} / {}: λ = {} ({}), T = {}",
        c.model.kind_label(),
        c.preparation.kind_name(),
        r.lambda,
        r.lambda.flag(),
        c.evolution.period
    );
    println!(
        "  t_r = {:.6}  t_r/T = {:.4} ± {:.4}  P_max = {:.4}  ({} realizations, echo condition {echo}/{})",
        a.t_r,
        a.t_r_over_t,
        a.spread,
        a.p_max,
        a.n_realizations,
        r.realizations.len()
    );
    if let Some(f) = &r.gamma_sr {
        println!("  γ_SR = {:.4} (rms {:.3})", f.gamma, f.residual);
    }
    if let Some(f) = &r.gamma_le {
        println!("  γ_LE = {:.4} (rms {:.3})", f.gamma, f.residual);
    }
    println!("  config {} → {}", cell.config_hash, out.display());
    Ok(())
}

fn print_curve(curve: &ScalingCurve, plateau_tol: f64) {
    println!("  λ        f(λ)    std     n");
    for b in &curve.bins {
        println!("  {:<8} {:.4}  {:.4}  {}", b.lambda, b.f_mean, b.f_std, b.n);
    }
    if !curve.monotone {
        log::warn!("binned f(λ) is not monotone within its spread");
    }
    match estimate_lambda_star(&curve.bins, plateau_tol) {
        Ok(s) => println!("  λ* = {:.4} (between λ = {} and {})", s.value, s.lo, s.hi),
        Err(e) => println!("  λ* not available: {e}"),
    }
}

pub fn sweep(ctx: &Context, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = load_model(ctx, cfg)?;
    let outcome = run_sweep(&model, cfg, ctx.workers)?;
    let out = out_dir(ctx)?;
    let hash = cfg.hash();
    create(&out.join("results.csv"), |w| write_results_csv(w, &outcome, &hash))?;
    println!(
        "{} cells on the {} model, {} failed → {}",
        outcome.cells.len(),
        cfg.model.kind_label(),
        outcome.failures(),
        out.join("results.csv").display()
    );
    match outcome.scaling_curve() {
        Ok(curve) => {
            create(&out.join("scaling.csv"), |w| write_scaling_csv(w, &curve, &hash))?;
            print_curve(&curve, cfg.analysis.plateau_tol);
        }
        Err(e) => log::warn!("no scaling.csv: {e}"),
    }
    for c in outcome.cells.iter().filter(|c| c.result.is_err()) {
        if let Err(m) = &c.result {
            eprintln!("  cell {} failed: {m}", c.config_hash);
        }
    }
    if outcome.failures() > 0 {
        return Err(CliError::Partial(format!(
            "{} of {} cells failed; see the status column of results.csv",
            outcome.failures(),
            outcome.cells.len()
        )));
    }
    Ok(())
}

pub fn surface(ctx: &Context, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let c = single(cfg, "surface");
    let n = c.surface.points;
    if n < 3 || n % 2 == 0 {
        return Err(CliError::Config(format!(
            "surface.points must be odd and ≥ 3 so that T/2 lies on the grid, got {n}"
        )));
    }
    let model = load_model(ctx, &c)?;
    let h_prep = match c.preparation {
        PreparationSpec::Ergodic { epsilon_prep, .. } => Some(Spectrum::perturbed(&model, epsilon_prep)?),
        _ => None,
    };
    let reals = prepare_realizations(&model, &c.preparation, h_prep.as_ref(), &c.realizations)?;
    let psi = &reals[0].state.amplitudes;
    let pair = EvolutionPair::new(&model, c.evolution.epsilon_evol)?;
    let period = c.evolution.period;
    let grid = period_grid(period, n - 1);
    let values = surface_grid(psi, &pair, &grid, &grid)?;
    let level = fidelity_trace(psi, &pair, &[period / 2.0])[0];
    let out = out_dir(ctx)?;
    create(&out.join("surface.csv"), |w| {
        write_surface_csv(w, &c, &model.content_hash(), &grid, &grid, &values, level)
    })?;
    println!(
        "{n}×{n} surface over [0, {period}]², contour level P_LE(T/2) = {level:.6} → {}",
        out.join("surface.csv").display()
    );
    Ok(())
}

pub fn analyze(ctx: &Context, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let path = ctx.out.join("results.csv");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read {} (run `echotime sweep` first): {e}", path.display())))?;
    let hash = text
        .lines()
        .find_map(|l| l.strip_prefix("# config_hash: "))
        .unwrap_or("unknown")
        .to_string();
    let points = read_results_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let curve = scaling_curve(&points)?;
    create(&ctx.out.join("scaling.csv"), |w| write_scaling_csv(w, &curve, &hash))?;
    println!("{} experiments from {}", points.len(), path.display());
    print_curve(&curve, cfg.analysis.plateau_tol);
    Ok(())
}
