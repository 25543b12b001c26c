use echotime_core::analysis::{find_tr_with, Lambda};
use echotime_core::experiment::{
    prepare_realizations, read_results_csv, run_cell, run_sweep, write_results_csv, Averaging, ExperimentConfig,
    SweepSection,
};
use echotime_core::model::{diagonalize_reference, ModelParams, QuantizedModel};
use echotime_core::propagation::{fidelity_trace, period_grid, return_probability, surface, EvolutionPair, Spectrum};

use std::sync::OnceLock;

// 240 states, 50 window levels.
fn model() -> &'static QuantizedModel {
    static M: OnceLock<QuantizedModel> = OnceLock::new();
    M.get_or_init(|| {
        diagonalize_reference(&ModelParams {
            hbar: 0.1,
            ..ModelParams::default()
        })
        .unwrap()
    })
}

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model.hbar = 0.1;
    cfg.evolution.samples = 128;
    cfg.realizations.count = 4;
    cfg.analysis.decay_fits = false;
    cfg
}

fn swept() -> ExperimentConfig {
    let mut cfg = config();
    cfg.sweep = SweepSection {
        epsilon_prep: vec![0.0, 0.15, 0.2],
        lambda: vec![0.1, 0.5, 2.0],
        period: vec![0.5, 1.0],
        ..SweepSection::default()
    };
    cfg
}

fn csv(cfg: &ExperimentConfig, workers: usize) -> Vec<u8> {
    let out = run_sweep(model(), cfg, workers).unwrap();
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &out, &cfg.hash()).unwrap();
    buf
}

#[test]
fn results_csv_round_trips() {
    let cfg = swept();
    let out = run_sweep(model(), &cfg, 2).unwrap();
    assert_eq!(out.failures(), 0);
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &out, &cfg.hash()).unwrap();
    let back = read_results_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back, out.scaling_points());
    assert!(back.iter().any(|p| p.lambda == Lambda::Infinite));
    assert!(back.iter().any(|p| p.lambda == Lambda::Value(0.1)));
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let cfg = swept();
    assert_eq!(csv(&cfg, 1), csv(&cfg, 3));
}

#[test]
fn one_cell_sweep_equals_direct_run() {
    let mut cfg = config();
    cfg.evolution.epsilon_evol = 0.05;
    let out = run_sweep(model(), &cfg, 1).unwrap();
    assert_eq!(out.cells.len(), 1);
    let cell = out.cells[0].result.as_ref().unwrap();

    let eps = cfg.preparation.epsilon_prep().unwrap();
    let h_prep = Spectrum::perturbed(model(), eps).unwrap();
    let reals = prepare_realizations(model(), &cfg.preparation, Some(&h_prep), &cfg.realizations).unwrap();
    let pair = EvolutionPair::new(model(), 0.05).unwrap();
    let direct = run_cell(model(), &cfg, &reals, &pair).unwrap();

    assert_eq!(direct.aggregate, cell.aggregate);
    assert_eq!(direct.first_trace, cell.first_trace);
    assert_eq!(direct.lambda, Lambda::Value(0.25));
}

#[test]
fn mean_trace_averaging_uses_the_mean_trace() {
    let mut cfg = config();
    cfg.evolution.epsilon_evol = 0.1;
    cfg.analysis.averaging = Averaging::MeanTrace;
    let out = run_sweep(model(), &cfg, 1).unwrap();
    let r = out.cells[0].result.as_ref().unwrap();
    let direct = find_tr_with(&r.mean_trace, cfg.analysis.refine);
    assert_eq!(r.aggregate.t_r, direct.t_r);
    assert_eq!(r.aggregate.n_realizations, 4);
    // Per-realization spread is still reported.
    let spread = {
        let f: Vec<f64> = r.realizations.iter().map(|x| x.compensation.t_r_over_t).collect();
        let m = f.iter().sum::<f64>() / f.len() as f64;
        (f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / f.len() as f64).sqrt()
    };
    assert!((r.aggregate.spread - spread).abs() < 1e-15);
}

#[test]
fn mean_trace_is_the_realization_average() {
    let mut cfg = config();
    cfg.evolution.epsilon_evol = 0.1;
    let out = run_sweep(model(), &cfg, 1).unwrap();
    let r = out.cells[0].result.as_ref().unwrap();

    let h_prep = Spectrum::perturbed(model(), 0.2).unwrap();
    let reals = prepare_realizations(model(), &cfg.preparation, Some(&h_prep), &cfg.realizations).unwrap();
    let pair = EvolutionPair::new(model(), 0.1).unwrap();
    let t = &r.mean_trace.times;
    for k in [0, 40, 64, 100, 128] {
        let expect: f64 = reals
            .iter()
            .map(|x| {
                let psi = &x.state.amplitudes;
                if k <= 64 {
                    return_probability(psi, &pair, t[k], 0.0)
                } else {
                    return_probability(psi, &pair, 0.25, t[k] - 0.25)
                }
            })
            .sum::<f64>()
            / reals.len() as f64;
        assert!((r.mean_trace.p_values[k] - expect).abs() < 1e-10, "k = {k}");
    }
}

/// First t₁ ∈ [0, T/2] with P(t₁, 0) = level, by bisection on the propagator.
fn bisect(psi: &[num_complex::Complex64], pair: &EvolutionPair, level: f64, mut lo: f64, mut hi: f64) -> f64 {
    let f = |t: f64| return_probability(psi, pair, t, 0.0) - level;
    assert!(f(lo) > 0.0 && f(hi) < 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn surface_contour_crossing_matches_bisection() {
    // Where the echo condition holds, the contour P = P_LE(T/2) meets the
    // t₂ = 0 edge before the reversal.
    let cfg = config();
    let period = 0.5;
    let h_prep = Spectrum::perturbed(model(), 0.2).unwrap();
    let reals = prepare_realizations(model(), &cfg.preparation, Some(&h_prep), &cfg.realizations).unwrap();
    let pair = EvolutionPair::new(model(), 0.02).unwrap();
    let grid = period_grid(period, 400);
    let mut checked = 0;
    for r in &reals {
        let psi = &r.state.amplitudes;
        let level = fidelity_trace(psi, &pair, &[period / 2.0])[0];
        let s = surface(psi, &pair, &grid, &grid[..1]).unwrap();
        let edge: Vec<f64> = s.iter().map(|row| row[0]).collect();
        if edge[200] >= level {
            continue;
        }
        let k = edge.iter().position(|&p| p < level).unwrap();
        let (a, b) = (edge[k - 1], edge[k]);
        let t_grid = grid[k - 1] + (a - level) / (a - b) * (grid[k] - grid[k - 1]);
        let t_exact = bisect(psi, &pair, level, grid[k - 1], grid[k]);
        assert!((t_grid - t_exact).abs() < 1e-5, "{t_grid} vs {t_exact}");
        assert!(t_exact < period / 2.0);
        checked += 1;
    }
    assert!(checked > 0, "no realization satisfies the echo condition");
}
