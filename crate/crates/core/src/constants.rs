//! Reference values of the full-scale 2D-well computation (ℏ = 0.012).
//!
//! These are metadata for comparison only; desk-scale runs recompute their
//! own analogues at larger ℏ.

pub const REFERENCE_HBAR: f64 = 0.012;
pub const REFERENCE_ENERGY: f64 = 3.0;
/// Classical correlation time τ_cl of the well.
pub const TAU_CL: f64 = 1.0;
/// Δ ≈ 4.3·ℏ².
pub const SPACING_COEFF: f64 = 4.3;
/// δx_c ≈ 3.8·ℏ^{3/2}.
pub const DELTA_XC_COEFF: f64 = 3.8;
pub const DELTA_XC_EXPONENT: f64 = 1.5;
pub const LAMBDA_STAR: f64 = 1.3;

pub fn reference_spacing(hbar: f64) -> f64 {
    SPACING_COEFF * hbar * hbar
}

pub fn reference_delta_xc(hbar: f64) -> f64 {
    DELTA_XC_COEFF * hbar.powf(DELTA_XC_EXPONENT)
}

#[cfg(test)]
mod tests {
    #[test]
    fn reference_delta_xc_at_full_scale() {
        let v = super::reference_delta_xc(super::REFERENCE_HBAR);
        assert!((v - 5.0e-3).abs() < 0.1e-3, "{v}");
    }
}
