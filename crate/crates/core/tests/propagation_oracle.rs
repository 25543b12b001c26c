mod common;

use common::{apply, expm_propagator, overlap, random_model, random_state, rng};
use echotime_core::model::{ModelKind, ModelParams, QuantizedModel};
use echotime_core::propagation::{
    echo_trace, evolve, fidelity_trace, norm, return_probability, survival_trace, EvolutionPair, Spectrum,
};
use faer::Mat;
use num_complex::Complex64;
use rand::Rng;

fn model(e: Vec<f64>, b: &[Vec<f64>], hbar: f64) -> QuantizedModel {
    let n = e.len();
    QuantizedModel::from_parts(
        ModelParams { hbar, ..ModelParams::default() },
        ModelKind::Physical2dw,
        e,
        Mat::from_fn(n, n, |i, j| b[i][j]),
    )
    .unwrap()
}

fn dense(e: &[f64], b: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    let n = e.len();
    (0..n)
        .map(|i| (0..n).map(|j| eps * b[i][j] + if i == j { e[i] } else { 0.0 }).collect())
        .collect()
}

#[test]
fn evolve_matches_matrix_exponential() {
    let mut r = rng(11);
    let (e, b) = random_model(&mut r, 8);
    let m = model(e.clone(), &b, 0.3);
    let s = Spectrum::perturbed(&m, 0.4).unwrap();
    let psi = random_state(&mut r, 8);
    for t in [0.0, 0.37, 1.9, -0.8] {
        let want = apply(&expm_propagator(&dense(&e, &b, 0.4), t, 0.3), &psi);
        let got = evolve(&psi, &s, t);
        for (a, w) in got.iter().zip(&want) {
            assert!((a - w).norm() < 1e-8);
        }
        assert!((norm(&got) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn return_probability_matches_oracle() {
    let mut r = rng(12);
    let (e, b) = random_model(&mut r, 12);
    let m = model(e.clone(), &b, 0.2);
    let pair = EvolutionPair::new(&m, 0.15).unwrap();
    let psi = random_state(&mut r, 12);
    for _ in 0..10 {
        let t1 = r.random_range(0.0..3.0);
        let t2 = r.random_range(0.0..3.0);
        let u1 = expm_propagator(&dense(&e, &b, 0.15), t1, 0.2);
        let u2 = expm_propagator(&dense(&e, &b, -0.15), t2, 0.2);
        let want = overlap(&apply(&u2, &psi), &apply(&u1, &psi)).norm_sqr();
        assert!((return_probability(&psi, &pair, t1, t2) - want).abs() < 1e-8);
    }
    assert!((return_probability(&psi, &pair, 0.0, 0.0) - 1.0).abs() < 1e-12);
}

#[test]
fn fidelity_matches_oracle() {
    let mut r = rng(13);
    let (e, b) = random_model(&mut r, 12);
    let m = model(e.clone(), &b, 0.25);
    let pair = EvolutionPair::new(&m, 0.3).unwrap();
    let psi = random_state(&mut r, 12);
    let times = [0.0, 0.2, 0.9, 2.5];
    let got = fidelity_trace(&psi, &pair, &times);
    for (k, &t) in times.iter().enumerate() {
        let u1 = expm_propagator(&dense(&e, &b, 0.3), t, 0.25);
        let u2 = expm_propagator(&dense(&e, &b, -0.3), t, 0.25);
        let want = overlap(&apply(&u2, &psi), &apply(&u1, &psi)).norm_sqr();
        assert!((got[k] - want).abs() < 1e-8);
    }
    assert!((got[0] - 1.0).abs() < 1e-12);
}

#[test]
fn eigenstates_are_stationary() {
    let mut r = rng(14);
    let (e, b) = random_model(&mut r, 10);
    let m = model(e, &b, 0.1);
    let s = Spectrum::perturbed(&m, 0.2).unwrap();
    let v = s.vectors.as_ref().unwrap();
    let psi: Vec<Complex64> = (0..10).map(|i| Complex64::new(v[(i, 3)], 0.0)).collect();
    let p = survival_trace(&psi, &s, &[0.0, 0.5, 7.0]);
    assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-12));
    let later = evolve(&psi, &s, 2.3);
    assert!((overlap(&psi, &later).norm() - 1.0).abs() < 1e-12);
}

#[test]
fn echo_trace_matches_oracle_and_is_continuous() {
    let mut r = rng(15);
    let (e, b) = random_model(&mut r, 20);
    let m = model(e.clone(), &b, 0.15);
    let pair = EvolutionPair::new(&m, 0.1).unwrap();
    let psi = random_state(&mut r, 20);
    let tr = echo_trace(&psi, &pair, 2.0, 64, "oracle").unwrap();
    let u1h = expm_propagator(&dense(&e, &b, 0.1), 1.0, 0.15);
    let mid = apply(&u1h, &psi);
    for (k, &t) in tr.times.iter().enumerate() {
        let want = if k <= tr.reversal_index {
            overlap(&psi, &apply(&expm_propagator(&dense(&e, &b, 0.1), t, 0.15), &psi)).norm_sqr()
        } else {
            let u2 = expm_propagator(&dense(&e, &b, -0.1), t - 1.0, 0.15);
            overlap(&apply(&u2, &psi), &mid).norm_sqr()
        };
        assert!((tr.p_values[k] - want).abs() < 1e-8, "k={k}");
    }
    // Continuity at the reversal: P(T/2, 0) equals P_SR(T/2).
    let r0 = return_probability(&psi, &pair, 1.0, 0.0);
    assert!((tr.p_values[tr.reversal_index] - r0).abs() < 1e-12);
}

#[test]
fn perfect_echo_without_perturbation() {
    let mut r = rng(16);
    let (e, b) = random_model(&mut r, 30);
    let m = model(e, &b, 0.05);
    let pair = EvolutionPair::new(&m, 0.0).unwrap();
    let psi = random_state(&mut r, 30);
    let tr = echo_trace(&psi, &pair, 3.0, 512, "").unwrap();
    assert!((tr.p_final() - 1.0).abs() < 1e-10);
    let norm_end = norm(&pair.h2.evolve(&pair.h1.evolve(&psi, 1.5), -1.5));
    assert!((norm_end - 1.0).abs() < 1e-9);
}
