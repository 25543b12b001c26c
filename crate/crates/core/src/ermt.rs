//! Effective random-matrix model: the physical B with the signs of its
//! off-diagonal elements randomized. Energies and |B_nm| are untouched, so the
//! band profile and all spectral diagnostics carry over exactly.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelKind, QuantizedModel};

/// B'_nm = s_nm·B_nm, with fair i.i.d. signs drawn row by row over the strict
/// upper triangle and mirrored; the diagonal is kept.
pub fn randomize_signs(model: &QuantizedModel, seed: u64) -> Result<QuantizedModel> {
    if model.kind != ModelKind::Physical2dw {
        return Err(Error::ModelKind(
            "sign randomization needs a physical 2DW parent, got an ERMT model".into(),
        ));
    }
    let n = model.len();
    let b = &model.b_matrix;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = b[(i, i)];
        for j in i + 1..n {
            let v = if rng.random::<bool>() { -b[(i, j)] } else { b[(i, j)] };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(QuantizedModel {
        params: model.params.clone(),
        kind: ModelKind::Ermt {
            seed,
            parent_hash: model.content_hash(),
        },
        energies: model.energies.clone(),
        b_matrix: out,
        window: model.window.clone(),
        basis_dim: model.basis_dim,
        mean_spacing: model.mean_spacing,
        eigenvectors: model.eigenvectors.clone(),
    })
}

/// Fraction of nonzero strict-upper-triangle elements whose sign differs.
pub fn flip_fraction(parent: &QuantizedModel, child: &QuantizedModel) -> f64 {
    let n = parent.len();
    let (mut flipped, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (parent.b_matrix[(i, j)], child.b_matrix[(i, j)]);
            if a != 0.0 {
                total += 1;
                if a.signum() != b.signum() {
                    flipped += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        flipped as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn parent(n: usize) -> QuantizedModel {
        let e: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        let b = Mat::from_fn(n, n, |i, j| 1.0 + ((i + j) % 7) as f64);
        QuantizedModel::from_parts(ModelParams::default(), ModelKind::Physical2dw, e, b).unwrap()
    }

    #[test]
    fn signs_only() {
        let p = parent(150);
        let q = randomize_signs(&p, 7).unwrap();
        assert_eq!(q.energies, p.energies);
        for i in 0..150 {
            assert_eq!(q.b_matrix[(i, i)], p.b_matrix[(i, i)]);
            for j in 0..150 {
                assert_eq!(q.b_matrix[(i, j)].abs(), p.b_matrix[(i, j)].abs());
                assert_eq!(q.b_matrix[(i, j)], q.b_matrix[(j, i)]);
            }
        }
        let f = flip_fraction(&p, &q);
        assert!((0.48..=0.52).contains(&f), "{f}");
    }

    #[test]
    fn deterministic_and_parent_only() {
        let p = parent(30);
        let a = randomize_signs(&p, 3).unwrap();
        let b = randomize_signs(&p, 3).unwrap();
        assert_eq!(a.b_matrix, b.b_matrix);
        assert_ne!(a.b_matrix, randomize_signs(&p, 4).unwrap().b_matrix);
        assert!(matches!(randomize_signs(&a, 1), Err(Error::ModelKind(_))));
        match a.kind {
            ModelKind::Ermt { seed, ref parent_hash } => {
                assert_eq!(seed, 3);
                assert_eq!(parent_hash, &p.content_hash());
            }
            _ => panic!("kind"),
        }
    }
}
