//! Compensation time t_r, the scaling curve f(λ) = t_r/T, λ*, exponential
//! decay fits and the echo condition P_SR(T/2) < P_LE(T/2).

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{fidelity_trace, survival_trace, EchoTrace, EvolutionPair};

/// A trace whose final value is this close to 1 is a perfect echo.
pub const PERFECT_ECHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationResult {
    pub t_r: f64,
    pub t_r_over_t: f64,
    pub p_max: f64,
    pub n_realizations: usize,
    /// Std of t_r/T across realizations (0 for a single trace).
    pub spread: f64,
}

/// Time of maximal return probability over [T/2, T], earliest maximizer,
/// with quadratic refinement around interior maxima.
pub fn find_tr(trace: &EchoTrace) -> CompensationResult {
    find_tr_with(trace, true)
}

pub fn find_tr_with(trace: &EchoTrace, refine: bool) -> CompensationResult {
    let p = &trace.p_values;
    let t = &trace.times;
    let r = trace.reversal_index;
    let last = p.len() - 1;
    let period = trace.period;

    if p[last] >= 1.0 - PERFECT_ECHO_TOL {
        return single(period, period, p[last]);
    }
    let mut k = r;
    for i in r + 1..=last {
        if p[i] > p[k] {
            k = i;
        }
    }
    let (mut t_r, mut p_max) = (t[k], p[k]);
    if refine && k > r && k < last {
        let (a, b, c) = (p[k - 1], p[k], p[k + 1]);
        let curv = a - 2.0 * b + c;
        if curv < 0.0 {
            let d = (0.5 * (a - c) / curv).clamp(-0.5, 0.5);
            t_r = (t[k] + d * trace.step()).clamp(period / 2.0, period);
            p_max = (b - 0.25 * (a - c) * d).max(b).min(b.max(1.0));
        }
    }
    single(t_r, period, p_max)
}

fn single(t_r: f64, period: f64, p_max: f64) -> CompensationResult {
    CompensationResult {
        t_r,
        t_r_over_t: (t_r / period).clamp(0.5, 1.0),
        p_max,
        n_realizations: 1,
        spread: 0.0,
    }
}

/// Realization average: mean of the per-trace t_r (not t_r of the mean trace).
pub fn aggregate(results: &[CompensationResult]) -> Option<CompensationResult> {
    if results.is_empty() {
        return None;
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&CompensationResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let f = mean(&|r| r.t_r_over_t);
    let var = results.iter().map(|r| (r.t_r_over_t - f).powi(2)).sum::<f64>() / n;
    Some(CompensationResult {
        t_r: mean(&|r| r.t_r),
        t_r_over_t: f,
        p_max: mean(&|r| r.p_max),
        n_realizations: results.len(),
        spread: var.sqrt(),
    })
}

/// λ = ε_evol/ε_prep, or one of the two flag values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", content = "value", rename_all = "kebab-case")]
pub enum Lambda {
    Value(f64),
    /// Eigenstate preparation (ε_prep = 0) with ε_evol > 0.
    Infinite,
    /// Coherent / random-superposition preparations: λ ≪ 1 by classification.
    Small,
}

impl Lambda {
    pub fn from_epsilons(epsilon_prep: Option<f64>, epsilon_evol: f64) -> Self {
        if epsilon_evol == 0.0 {
            return Lambda::Value(0.0);
        }
        match epsilon_prep {
            None => Lambda::Small,
            Some(e) if e == 0.0 => Lambda::Infinite,
            // 12 significant digits: λ·ε_prep/ε_prep should give back λ.
            Some(e) => Lambda::Value(format!("{:.11e}", epsilon_evol / e).parse().unwrap_or(epsilon_evol / e)),
        }
    }

    /// Numeric position on the λ axis (Small → 0, Infinite → ∞).
    pub fn axis(self) -> f64 {
        match self {
            Lambda::Value(v) => v,
            Lambda::Infinite => f64::INFINITY,
            Lambda::Small => 0.0,
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            Lambda::Value(_) => "value",
            Lambda::Infinite => "infinite",
            Lambda::Small => "small",
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Value(v) => write!(f, "{v}"),
            Lambda::Infinite => f.write_str("inf"),
            Lambda::Small => f.write_str("0"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub lambda: Lambda,
    pub t_r_over_t: f64,
    pub epsilon_prep: Option<f64>,
    pub epsilon_evol: f64,
    pub period: f64,
    pub model_kind: String,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingBin {
    pub lambda: f64,
    pub f_mean: f64,
    pub f_std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<ScalingPoint>,
    /// Ascending in λ; an eigenstate (λ = ∞) bin comes last if present.
    pub bins: Vec<ScalingBin>,
    /// Whether the binned means are nonincreasing within their spread.
    pub monotone: bool,
}

/// Group points by λ (relative tolerance 1e-9) into binned f(λ).
pub fn scaling_curve(points: &[ScalingPoint]) -> Result<ScalingCurve> {
    let mut keys: Vec<f64> = Vec::new();
    for p in points {
        let x = p.lambda.axis();
        if !keys.iter().any(|&k| same_lambda(k, x)) {
            keys.push(x);
        }
    }
    if keys.len() < 2 {
        return Err(Error::InsufficientLambda {
            found: keys.len(),
            required: 2,
        });
    }
    keys.sort_by(f64::total_cmp);
    let bins: Vec<ScalingBin> = keys
        .iter()
        .map(|&k| {
            let f: Vec<f64> = points
                .iter()
                .filter(|p| same_lambda(p.lambda.axis(), k))
                .map(|p| p.t_r_over_t)
                .collect();
            let n = f.len() as f64;
            let mean = f.iter().sum::<f64>() / n;
            let var = f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            ScalingBin {
                lambda: k,
                f_mean: mean,
                f_std: var.sqrt(),
                n: f.len(),
            }
        })
        .collect();
    let monotone = bins.windows(2).all(|w| {
        let tol = w[0].f_std.max(w[1].f_std).max(0.02);
        w[1].f_mean <= w[0].f_mean + tol
    });
    Ok(ScalingCurve {
        points: points.to_vec(),
        bins,
        monotone,
    })
}

fn same_lambda(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStar {
    pub value: f64,
    /// Bracketing bins used for the interpolation.
    pub lo: f64,
    pub hi: f64,
}

/// Onset of the f = 0.5 plateau: the bins from some index on all lie within
/// `plateau_tol` of 0.5; λ* is where the line through the last bin before the
/// plateau and the first plateau bin reaches 0.5.
pub fn estimate_lambda_star(bins: &[ScalingBin], plateau_tol: f64) -> Result<LambdaStar> {
    let finite: Vec<&ScalingBin> = bins.iter().filter(|b| b.lambda.is_finite()).collect();
    if finite.len() < 2 {
        return Err(Error::InsufficientLambda {
            found: finite.len(),
            required: 2,
        });
    }
    let on = |b: &ScalingBin| (b.f_mean - 0.5).abs() <= plateau_tol;
    let mut p = finite.len();
    while p > 0 && on(finite[p - 1]) {
        p -= 1;
    }
    if p == finite.len() {
        return Err(Error::NoPlateau(format!(
            "largest sampled λ = {} has f = {:.3}",
            finite[p - 1].lambda,
            finite[p - 1].f_mean
        )));
    }
    if p == 0 {
        return Err(Error::NoPlateau(
            "every sampled λ is already on the plateau; sample smaller λ".into(),
        ));
    }
    let (a, b) = (finite[p - 1], finite[p]);
    let value = if a.f_mean > b.f_mean {
        a.lambda + (a.f_mean - 0.5) * (b.lambda - a.lambda) / (a.f_mean - b.f_mean)
    } else {
        b.lambda
    };
    let value = value.max(a.lambda);
    Ok(LambdaStar {
        value,
        lo: a.lambda,
        hi: b.lambda.max(value),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Perturbative,
    Nonperturbative,
}

/// Perturbative if ε < factor·δx_c.
pub fn regime(epsilon: f64, delta_x_c: f64, factor: f64) -> Regime {
    if epsilon < factor * delta_x_c {
        Regime::Perturbative
    } else {
        Regime::Nonperturbative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub fit_window: (f64, f64),
    pub points: usize,
    /// RMS of the residuals of ln P about the fitted line.
    pub residual: f64,
    pub regime: Option<Regime>,
}

/// Least-squares fit of ln P = c − γt over the decay window: from the first
/// sample below 0.8 while P stays above 3·saturation.
pub fn fit_gamma(times: &[f64], values: &[f64], saturation_level: f64) -> Result<DecayFit> {
    const ENTRY: f64 = 0.8;
    const MIN_POINTS: usize = 8;
    let i0 = values
        .iter()
        .position(|&p| p < ENTRY)
        .ok_or(Error::NoDecay { threshold: ENTRY })?;
    let floor = 3.0 * saturation_level.max(0.0);
    let mut i1 = i0;
    while i1 < values.len() && values[i1] > floor && values[i1] > 0.0 {
        i1 += 1;
    }
    let n = i1 - i0;
    if n < MIN_POINTS {
        return Err(Error::FitWindowTooShort {
            found: n,
            required: MIN_POINTS,
        });
    }
    let xs = &times[i0..i1];
    let ys: Vec<f64> = values[i0..i1].iter().map(|p| p.ln()).collect();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    Ok(DecayFit {
        gamma: (-slope).max(0.0),
        fit_window: (xs[0], xs[n - 1]),
        points: n,
        residual: (rss / nf).sqrt(),
        regime: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoCondition {
    pub p_sr: f64,
    pub p_le: f64,
    pub satisfied: bool,
}

/// Compare P_SR(T/2) under H₁ with P_LE(T/2).
pub fn echo_condition(psi: &[Complex64], pair: &EvolutionPair, period: f64) -> EchoCondition {
    let t = [period / 2.0];
    let p_sr = survival_trace(psi, &pair.h1, &t)[0];
    let p_le = fidelity_trace(psi, pair, &t)[0];
    EchoCondition {
        p_sr,
        p_le,
        satisfied: p_sr < p_le,
    }
}
