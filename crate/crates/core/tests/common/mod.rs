//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's eigensolver or propagator.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CMat = Vec<Vec<Complex64>>;

/// Cyclic Jacobi eigensolver: (ascending eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = idx.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..n).map(|r| idx.iter().map(|&i| v[r][i]).collect()).collect();
    (vals, vecs)
}

fn cmul(a: &CMat, b: &CMat) -> CMat {
    let n = a.len();
    let mut c = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

/// exp(−iHt/ℏ) by Taylor series with scaling and squaring.
pub fn expm_propagator(h: &[Vec<f64>], t: f64, hbar: f64) -> CMat {
    let n = h.len();
    let norm1 = (0..n).map(|j| (0..n).map(|i| h[i][j].abs()).sum::<f64>()).fold(0.0, f64::max) * (t / hbar).abs();
    let mut s = 0;
    while norm1 / f64::from(1u32 << s.min(30)) > 0.25 && s < 60 {
        s += 1;
    }
    let scale = (t / hbar) / 2f64.powi(s);
    let a: CMat = h.iter().map(|r| r.iter().map(|&x| Complex64::new(0.0, -x * scale)).collect()).collect();
    let ident: CMat = (0..n).map(|i| (0..n).map(|j| Complex64::new(f64::from(u8::from(i == j)), 0.0)).collect()).collect();
    let mut sum = ident.clone();
    let mut term = ident;
    for k in 1..=30 {
        term = cmul(&term, &a);
        let inv = 1.0 / k as f64;
        for r in term.iter_mut() {
            for x in r.iter_mut() {
                *x *= inv;
            }
        }
        for i in 0..n {
            for j in 0..n {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        sum = cmul(&sum, &sum);
    }
    sum
}

pub fn apply(u: &CMat, psi: &[Complex64]) -> Vec<Complex64> {
    u.iter().map(|r| r.iter().zip(psi).map(|(a, b)| a * b).sum()).collect()
}

pub fn overlap(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Random symmetric model: ascending energies and a symmetric B.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut e: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    e.sort_by(f64::total_cmp);
    let mut b = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0) * (-(i.abs_diff(j) as f64) / 6.0).exp();
            b[i][j] = v;
            b[j][i] = v;
        }
    }
    (e, b)
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let s = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / s).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hermite functions φ_n(q) for ℏ = 1 on a grid (three-term recurrence).
pub fn hermite_functions(nmax: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; grid.len()]; nmax + 1];
    for (k, &q) in grid.iter().enumerate() {
        out[0][k] = std::f64::consts::PI.powf(-0.25) * (-q * q / 2.0).exp();
        if nmax >= 1 {
            out[1][k] = 2f64.sqrt() * q * out[0][k];
        }
        for n in 1..nmax {
            let nf = n as f64;
            out[n + 1][k] = (2.0 / (nf + 1.0)).sqrt() * q * out[n][k] - (nf / (nf + 1.0)).sqrt() * out[n - 1][k];
        }
    }
    out
}

/// ⟨(a₁,a₂)|H|(b₁,b₂)⟩ for H = ½(P₁²+P₂²+Q₁²+Q₂²) + x·Q₁²Q₂² at ℏ = 1, with
/// the kinetic term from a five-point finite-difference Laplacian and all
/// integrals by quadrature on a uniform grid.
pub fn grid_hamiltonian(states: &[(u32, u32)], x: f64) -> Vec<Vec<f64>> {
    let npts = 4001;
    let (lo, hi) = (-12.0, 12.0);
    let dq = (hi - lo) / (npts - 1) as f64;
    let grid: Vec<f64> = (0..npts).map(|k| lo + dq * k as f64).collect();
    let nmax = states.iter().map(|&(a, b)| a.max(b)).max().unwrap() as usize;
    let phi = hermite_functions(nmax, &grid);
    let integ = |f: &dyn Fn(usize) -> f64| (0..npts).map(f).sum::<f64>() * dq;
    let lap = |v: &[f64], k: usize| -> f64 {
        let g = |i: isize| if i < 0 || i >= npts as isize { 0.0 } else { v[i as usize] };
        let k = k as isize;
        (-g(k - 2) + 16.0 * g(k - 1) - 30.0 * g(k) + 16.0 * g(k + 1) - g(k + 2)) / (12.0 * dq * dq)
    };
    let m = nmax + 1;
    // Single-mode matrices: overlap S, oscillator h = −½∂² + ½q², and Q².
    let mut s = vec![vec![0.0; m]; m];
    let mut h1 = vec![vec![0.0; m]; m];
    let mut q2 = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..m {
            s[a][b] = integ(&|k| phi[a][k] * phi[b][k]);
            h1[a][b] = integ(&|k| phi[a][k] * (-0.5 * lap(&phi[b], k) + 0.5 * grid[k] * grid[k] * phi[b][k]));
            q2[a][b] = integ(&|k| phi[a][k] * grid[k] * grid[k] * phi[b][k]);
        }
    }
    states
        .iter()
        .map(|&(a1, a2)| {
            states
                .iter()
                .map(|&(b1, b2)| {
                    let (a1, a2, b1, b2) = (a1 as usize, a2 as usize, b1 as usize, b2 as usize);
                    h1[a1][b1] * s[a2][b2] + s[a1][b1] * h1[a2][b2] + x * q2[a1][b1] * q2[a2][b2]
                })
                .collect()
        })
        .collect()
}
