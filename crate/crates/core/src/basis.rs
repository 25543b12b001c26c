//! Truncated oscillator product basis and the 2D-well Hamiltonian
//! `H(x) = ½(P₁²+P₂²+Q₁²+Q₂²) + x·Q₁²Q₂²` assembled in it.

use std::collections::HashMap;
use std::fmt;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on basis dimension (dense matrices of this size take ~0.8 GB each).
pub const DEFAULT_MAX_STATES: usize = 10_000;

/// Symmetry sector of the C4v-invariant well.
///
/// The quartic coupling preserves the parity of each mode and commutes with
/// the exchange `Q₁ ↔ Q₂`, so H is block diagonal over these sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SymmetrySector {
    /// The whole product basis, no reduction.
    Full,
    /// n₁, n₂ even; symmetric under exchange.
    #[default]
    EvenEvenSymmetric,
    EvenEvenAntisymmetric,
    OddOddSymmetric,
    OddOddAntisymmetric,
    /// n₁ even, n₂ odd (one partner of the two-dimensional irrep).
    EvenOdd,
}

impl SymmetrySector {
    pub const ALL: [SymmetrySector; 6] = [
        SymmetrySector::Full,
        SymmetrySector::EvenEvenSymmetric,
        SymmetrySector::EvenEvenAntisymmetric,
        SymmetrySector::OddOddSymmetric,
        SymmetrySector::OddOddAntisymmetric,
        SymmetrySector::EvenOdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SymmetrySector::Full => "full",
            SymmetrySector::EvenEvenSymmetric => "even-even-symmetric",
            SymmetrySector::EvenEvenAntisymmetric => "even-even-antisymmetric",
            SymmetrySector::OddOddSymmetric => "odd-odd-symmetric",
            SymmetrySector::OddOddAntisymmetric => "odd-odd-antisymmetric",
            SymmetrySector::EvenOdd => "even-odd",
        }
    }

    /// Exchange parity (+1 symmetric, -1 antisymmetric) for the exchange-adapted sectors.
    fn exchange(self) -> Option<f64> {
        match self {
            SymmetrySector::EvenEvenSymmetric | SymmetrySector::OddOddSymmetric => Some(1.0),
            SymmetrySector::EvenEvenAntisymmetric | SymmetrySector::OddOddAntisymmetric => Some(-1.0),
            _ => None,
        }
    }

    /// Whether the sector-adapted state labelled `(a, b)` exists.
    fn admits(self, a: u32, b: u32) -> bool {
        match self {
            SymmetrySector::Full => true,
            SymmetrySector::EvenOdd => a % 2 == 0 && b % 2 == 1,
            SymmetrySector::EvenEvenSymmetric => a % 2 == 0 && b % 2 == 0 && a >= b,
            SymmetrySector::EvenEvenAntisymmetric => a % 2 == 0 && b % 2 == 0 && a > b,
            SymmetrySector::OddOddSymmetric => a % 2 == 1 && b % 2 == 1 && a >= b,
            SymmetrySector::OddOddAntisymmetric => a % 2 == 1 && b % 2 == 1 && a > b,
        }
    }
}

impl fmt::Display for SymmetrySector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Truncated product basis, possibly restricted to a symmetry sector.
///
/// In a symmetric sector the label `(a, b)` with `a > b` stands for
/// `(|a,b⟩ ± |b,a⟩)/√2`, and `(a, a)` for `|a,a⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorBasis {
    pub hbar: f64,
    pub e_cutoff: f64,
    /// Largest quantum number of a single mode.
    pub n_max_per_mode: u32,
    pub sector: SymmetrySector,
    pub states: Vec<(u32, u32)>,
}

impl OscillatorBasis {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Oscillator energy ℏ(n₁+n₂+1) of basis state `i`.
    pub fn oscillator_energy(&self, i: usize) -> f64 {
        let (a, b) = self.states[i];
        self.hbar * f64::from(a + b + 1)
    }

    /// Product-basis components `((n₁, n₂), coefficient)` of basis state `i`.
    pub fn components(&self, i: usize) -> Vec<((u32, u32), f64)> {
        components(self.sector, self.states[i])
    }
}

fn components(sector: SymmetrySector, (a, b): (u32, u32)) -> Vec<((u32, u32), f64)> {
    match sector.exchange() {
        None => vec![((a, b), 1.0)],
        Some(_) if a == b => vec![((a, a), 1.0)],
        Some(p) => {
            let c = std::f64::consts::FRAC_1_SQRT_2;
            vec![((a, b), c), ((b, a), p * c)]
        }
    }
}

/// Largest total quantum number s = n₁+n₂ with ℏ(s+1) ≤ e_cutoff.
fn max_total_quanta(hbar: f64, e_cutoff: f64) -> u32 {
    // The relative slack keeps exact products such as 0.05·90 = 4.5 inside.
    let q = e_cutoff / hbar * (1.0 + 1e-12);
    (q.floor() as u32).saturating_sub(1)
}

/// All product states with ℏ(n₁+n₂+1) ≤ e_cutoff, ordered by (n₁+n₂, n₁).
pub fn build_basis(hbar: f64, e_cutoff: f64) -> Result<OscillatorBasis> {
    build_sector_basis(hbar, e_cutoff, SymmetrySector::Full, DEFAULT_MAX_STATES)
}

pub fn build_sector_basis(
    hbar: f64,
    e_cutoff: f64,
    sector: SymmetrySector,
    max_states: usize,
) -> Result<OscillatorBasis> {
    if !(hbar.is_finite() && hbar > 0.0) {
        return Err(Error::param("hbar", format!("must be positive, got {hbar}")));
    }
    if !(e_cutoff.is_finite() && e_cutoff > 0.0) {
        return Err(Error::param("e_cutoff", format!("must be positive, got {e_cutoff}")));
    }
    if e_cutoff < hbar * (1.0 - 1e-12) {
        return Err(Error::param(
            "e_cutoff",
            format!("{e_cutoff} is below the ground-state energy {hbar}"),
        ));
    }
    let smax = max_total_quanta(hbar, e_cutoff);
    // Count first so absurd requests fail before allocating.
    let full = (smax as usize + 1) * (smax as usize + 2) / 2;
    let estimate = match sector {
        SymmetrySector::Full => full,
        SymmetrySector::EvenOdd => full / 4 + 1,
        _ => full / 8 + smax as usize,
    };
    if estimate > max_states.saturating_mul(2) {
        return Err(Error::BasisTooLarge {
            requested: estimate,
            cap: max_states,
        });
    }
    let mut states = Vec::new();
    for s in 0..=smax {
        for n1 in 0..=s {
            let n2 = s - n1;
            if sector.admits(n1, n2) {
                states.push((n1, n2));
            }
        }
    }
    if states.len() > max_states {
        return Err(Error::BasisTooLarge {
            requested: states.len(),
            cap: max_states,
        });
    }
    if states.is_empty() {
        return Err(Error::param(
            "e_cutoff",
            format!("sector {sector} has no states below {e_cutoff}"),
        ));
    }
    Ok(OscillatorBasis {
        hbar,
        e_cutoff,
        n_max_per_mode: smax,
        sector,
        states,
    })
}

/// ⟨n|Q²|m⟩ for a single oscillator mode.
pub fn q_squared_elements(n: u32, m: u32, hbar: f64) -> f64 {
    let (lo, hi) = if n <= m { (n, m) } else { (m, n) };
    match hi - lo {
        0 => hbar * (f64::from(lo) + 0.5),
        2 => {
            let l = f64::from(lo);
            0.5 * hbar * ((l + 1.0) * (l + 2.0)).sqrt()
        }
        _ => 0.0,
    }
}

/// The quartic coupling B = Q₁²Q₂² in the (sector) basis.
pub fn build_perturbation_matrix(basis: &OscillatorBasis) -> Mat<f64> {
    let dim = basis.len();
    let h = basis.hbar;
    let index: HashMap<(u32, u32), usize> = basis
        .states
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();

    // Locates the sector state (and overlap) carrying a product state.
    let locate = |p: (u32, u32)| -> Option<(usize, f64)> {
        let label = match basis.sector.exchange() {
            None => p,
            Some(_) => (p.0.max(p.1), p.0.min(p.1)),
        };
        let &i = index.get(&label)?;
        components(basis.sector, label)
            .into_iter()
            .find(|&(q, _)| q == p)
            .map(|(_, c)| (i, c))
    };

    let mut b = Mat::<f64>::zeros(dim, dim);
    for j in 0..dim {
        for ((p1, p2), cj) in basis.components(j) {
            for d1 in [-2i64, 0, 2] {
                let m1 = i64::from(p1) + d1;
                if m1 < 0 {
                    continue;
                }
                let q1 = q_squared_elements(m1 as u32, p1, h);
                for d2 in [-2i64, 0, 2] {
                    let m2 = i64::from(p2) + d2;
                    if m2 < 0 {
                        continue;
                    }
                    if let Some((i, ci)) = locate((m1 as u32, m2 as u32)) {
                        let q2 = q_squared_elements(m2 as u32, p2, h);
                        b[(i, j)] += ci * cj * q1 * q2;
                    }
                }
            }
        }
    }
    // Exact symmetrization: both triangles come from identical products, but
    // the summation order may differ in the last bit.
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    b
}

/// H(x) = diag(ℏ(n₁+n₂+1)) + x·B.
pub fn build_hamiltonian_matrix(basis: &OscillatorBasis, x: f64) -> Mat<f64> {
    let mut h = build_perturbation_matrix(basis);
    let dim = basis.len();
    for j in 0..dim {
        for i in 0..dim {
            h[(i, j)] *= x;
        }
        h[(j, j)] += basis.oscillator_energy(j);
    }
    h
}

/// Classical energy H_cl(Q₁, Q₂, P₁, P₂) at coupling `x`.
pub fn classical_energy(center: [f64; 4], x: f64) -> f64 {
    let [q1, q2, p1, p2] = center;
    0.5 * (p1 * p1 + p2 * p2 + q1 * q1 + q2 * q2) + x * q1 * q1 * q2 * q2
}
