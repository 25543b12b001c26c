//! Exact unitary evolution in the windowed eigenrepresentation and the
//! return-probability objects built from it.
//!
//! Convention: H₁ = E + ε_evol·B drives the forward half, H₂ = E − ε_evol·B
//! the reversed half, so the two Hamiltonians differ by 2ε_evol.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::model::QuantizedModel;

/// Default samples per period (even, so T/2 is on the grid).
pub const DEFAULT_SAMPLES: usize = 512;
/// Default cap on surface points.
pub const SURFACE_POINT_CAP: usize = 4_000_000;

/// Eigendecomposition of E + δx·B on the window. `vectors == None` means the
/// identity (δx = 0), so unperturbed evolution is exactly diagonal.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub delta_x: f64,
    pub hbar: f64,
    pub values: Vec<f64>,
    pub vectors: Option<Mat<f64>>,
}

impl Spectrum {
    pub fn perturbed(model: &QuantizedModel, delta_x: f64) -> Result<Self> {
        if !delta_x.is_finite() {
            return Err(Error::param("delta_x", "must be finite"));
        }
        if delta_x == 0.0 {
            return Ok(Self {
                delta_x,
                hbar: model.hbar(),
                values: model.energies.clone(),
                vectors: None,
            });
        }
        let n = model.len();
        let b = &model.b_matrix;
        let h = Mat::from_fn(n, n, |i, j| {
            let v = delta_x * b[(i, j)];
            if i == j {
                model.energies[i] + v
            } else {
                v
            }
        });
        let eig = symmetric_eigen(h.as_ref())?;
        Ok(Self {
            delta_x,
            hbar: model.hbar(),
            values: eig.values,
            vectors: Some(eig.vectors),
        })
    }

    /// Spectrum of an explicit symmetric matrix (oracle and toy use).
    pub fn from_matrix(h: &Mat<f64>, hbar: f64) -> Result<Self> {
        let eig = symmetric_eigen(h.as_ref())?;
        Ok(Self {
            delta_x: f64::NAN,
            hbar,
            values: eig.values,
            vectors: Some(eig.vectors),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// c = Vᵀψ.
    pub fn to_eigen(&self, psi: &[Complex64]) -> Vec<Complex64> {
        match &self.vectors {
            None => psi.to_vec(),
            Some(v) => {
                let n = self.dim();
                (0..n)
                    .map(|k| {
                        let col = v.col(k);
                        let mut s = Complex64::new(0.0, 0.0);
                        for i in 0..n {
                            s += psi[i] * col[i];
                        }
                        s
                    })
                    .collect()
            }
        }
    }

    /// ψ = V·c.
    pub fn from_eigen(&self, c: &[Complex64]) -> Vec<Complex64> {
        match &self.vectors {
            None => c.to_vec(),
            Some(v) => {
                let n = self.dim();
                let mut out = vec![Complex64::new(0.0, 0.0); n];
                for (k, &ck) in c.iter().enumerate() {
                    let col = v.col(k);
                    for i in 0..n {
                        out[i] += ck * col[i];
                    }
                }
                out
            }
        }
    }

    /// e^{−iλ_k t/ℏ}.
    pub fn phases(&self, t: f64) -> impl Iterator<Item = Complex64> + '_ {
        let w = t / self.hbar;
        self.values.iter().map(move |&l| Complex64::from_polar(1.0, -l * w))
    }

    /// ψ(t) = V e^{−iΛt/ℏ} Vᵀ ψ.
    pub fn evolve(&self, psi: &[Complex64], t: f64) -> Vec<Complex64> {
        let mut c = self.to_eigen(psi);
        for (ck, ph) in c.iter_mut().zip(self.phases(t)) {
            *ck *= ph;
        }
        self.from_eigen(&c)
    }
}

/// H₁ = E + ε·B and H₂ = E − ε·B.
#[derive(Debug, Clone)]
pub struct EvolutionPair {
    pub h1: Spectrum,
    pub h2: Spectrum,
    pub epsilon_evol: f64,
    pub hbar: f64,
}

impl EvolutionPair {
    pub fn new(model: &QuantizedModel, epsilon_evol: f64) -> Result<Self> {
        if !(epsilon_evol >= 0.0) {
            return Err(Error::param("epsilon_evol", format!("must be ≥ 0, got {epsilon_evol}")));
        }
        if epsilon_evol > 0.5 {
            log::warn!(
                "epsilon_evol = {epsilon_evol} is not small compared with x_ref; the linearization is questionable"
            );
        }
        Ok(Self {
            h1: Spectrum::perturbed(model, epsilon_evol)?,
            h2: Spectrum::perturbed(model, -epsilon_evol)?,
            epsilon_evol,
            hbar: model.hbar(),
        })
    }

    pub fn from_spectra(h1: Spectrum, h2: Spectrum) -> Self {
        Self {
            epsilon_evol: h1.delta_x,
            hbar: h1.hbar,
            h1,
            h2,
        }
    }
}

/// ⟨a|b⟩.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn evolve(psi: &[Complex64], spectrum: &Spectrum, t: f64) -> Vec<Complex64> {
    spectrum.evolve(psi, t)
}

/// P(t₁,t₂) = |⟨ψ|U₂(t₂)⁻¹U₁(t₁)|ψ⟩|².
pub fn return_probability(psi: &[Complex64], pair: &EvolutionPair, t1: f64, t2: f64) -> f64 {
    let fwd = pair.h1.evolve(psi, t1);
    let back = pair.h2.evolve(psi, t2);
    inner(&back, &fwd).norm_sqr()
}

/// P_SR(t) = |⟨ψ|U(t)|ψ⟩|² = |Σ_k |c_k|² e^{−iλ_k t/ℏ}|².
pub fn survival_trace(psi: &[Complex64], spectrum: &Spectrum, times: &[f64]) -> Vec<f64> {
    let weights: Vec<f64> = spectrum.to_eigen(psi).iter().map(|c| c.norm_sqr()).collect();
    times
        .iter()
        .map(|&t| {
            weights
                .iter()
                .zip(spectrum.phases(t))
                .map(|(&w, ph)| ph * w)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .collect()
}

/// P_LE(t) = P(t, t).
pub fn fidelity_trace(psi: &[Complex64], pair: &EvolutionPair, times: &[f64]) -> Vec<f64> {
    let c1 = pair.h1.to_eigen(psi);
    let c2 = pair.h2.to_eigen(psi);
    times
        .iter()
        .map(|&t| {
            let a = phased(&pair.h1, &c1, t);
            let b = phased(&pair.h2, &c2, t);
            inner(&b, &a).norm_sqr()
        })
        .collect()
}

fn phased(s: &Spectrum, c: &[Complex64], t: f64) -> Vec<Complex64> {
    let d: Vec<Complex64> = c.iter().zip(s.phases(t)).map(|(x, p)| x * p).collect();
    s.from_eigen(&d)
}

/// Sampled P(t) over one experiment of period T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoTrace {
    pub period: f64,
    pub times: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Index of t = T/2.
    pub reversal_index: usize,
    pub config_ref: String,
}

impl EchoTrace {
    pub fn step(&self) -> f64 {
        self.period / (self.times.len() - 1) as f64
    }

    pub fn p_final(&self) -> f64 {
        *self.p_values.last().expect("trace is nonempty")
    }
}

/// Uniform grid on [0, T] with `n_samples` intervals; T/2 and T are exact.
pub fn period_grid(period: f64, n_samples: usize) -> Vec<f64> {
    let half = n_samples / 2;
    (0..=n_samples)
        .map(|k| {
            if k == half {
                period / 2.0
            } else if k == n_samples {
                period
            } else {
                period * k as f64 / n_samples as f64
            }
        })
        .collect()
}

/// P(t) = P(t, 0) for t ≤ T/2 and P(T/2, t − T/2) afterwards.
pub fn echo_trace(
    psi: &[Complex64],
    pair: &EvolutionPair,
    period: f64,
    n_samples: usize,
    config_ref: impl Into<String>,
) -> Result<EchoTrace> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::param("period", format!("must be positive, got {period}")));
    }
    if n_samples < 2 || n_samples % 2 != 0 {
        return Err(Error::param("samples", format!("must be even and ≥ 2, got {n_samples}")));
    }
    let times = period_grid(period, n_samples);
    let half = n_samples / 2;
    let mut p = survival_trace(psi, &pair.h1, &times[..=half]);

    // Forward half-state, computed once.
    let mid = pair.h1.evolve(psi, period / 2.0);
    let a = pair.h2.to_eigen(&mid);
    let b = pair.h2.to_eigen(psi);
    let ab: Vec<Complex64> = b.iter().zip(&a).map(|(bk, ak)| bk.conj() * ak).collect();
    for &t in &times[half + 1..] {
        let t2 = t - period / 2.0;
        let w = t2 / pair.hbar;
        let amp: Complex64 = ab
            .iter()
            .zip(&pair.h2.values)
            .map(|(x, &l)| x * Complex64::from_polar(1.0, l * w))
            .sum();
        p.push(amp.norm_sqr());
    }
    Ok(EchoTrace {
        period,
        times,
        p_values: p,
        reversal_index: half,
        config_ref: config_ref.into(),
    })
}

/// P(t₁, t₂) on a grid; row i is t₁ = t1_grid[i].
pub fn surface(
    psi: &[Complex64],
    pair: &EvolutionPair,
    t1_grid: &[f64],
    t2_grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    surface_capped(psi, pair, t1_grid, t2_grid, SURFACE_POINT_CAP)
}

pub fn surface_capped(
    psi: &[Complex64],
    pair: &EvolutionPair,
    t1_grid: &[f64],
    t2_grid: &[f64],
    cap: usize,
) -> Result<Vec<Vec<f64>>> {
    let (rows, cols) = (t1_grid.len(), t2_grid.len());
    if rows.saturating_mul(cols) > cap {
        return Err(Error::SurfaceTooLarge { rows, cols, cap });
    }
    for (name, g) in [("t1_grid", t1_grid), ("t2_grid", t2_grid)] {
        if g.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param(name, "must be strictly ascending"));
        }
    }
    let b = pair.h2.to_eigen(psi);
    let c1 = pair.h1.to_eigen(psi);
    Ok(t1_grid
        .iter()
        .map(|&t1| {
            let fwd = phased(&pair.h1, &c1, t1);
            let a = pair.h2.to_eigen(&fwd);
            let ab: Vec<Complex64> = b.iter().zip(&a).map(|(bk, ak)| bk.conj() * ak).collect();
            t2_grid
                .iter()
                .map(|&t2| {
                    let w = t2 / pair.hbar;
                    ab.iter()
                        .zip(&pair.h2.values)
                        .map(|(x, &l)| x * Complex64::from_polar(1.0, l * w))
                        .sum::<Complex64>()
                        .norm_sqr()
                })
                .collect()
        })
        .collect())
}
