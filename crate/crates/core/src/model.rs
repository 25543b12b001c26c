//! The quantized model: eigenenergies of E = H(x_ref) in an energy window and
//! the perturbation B = ∂H/∂x expressed in that eigenbasis.

use std::fs;
use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{
    build_hamiltonian_matrix, build_perturbation_matrix, build_sector_basis, OscillatorBasis,
    SymmetrySector, DEFAULT_MAX_STATES,
};
use crate::constants::TAU_CL;
use crate::error::{Error, Result};
use crate::linalg::{self, symmetric_eigen};

/// Levels required in the window before spacing/σ statistics are trusted.
pub const STATISTICAL_FLOOR: usize = 50;

/// Parameters of the physical 2D-well model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub hbar: f64,
    pub e_cutoff: f64,
    pub x_ref: f64,
    pub sector: SymmetrySector,
    pub window_center: f64,
    pub window_half_width: f64,
    /// Fraction of the basis that must lie above the window.
    pub edge_margin: f64,
    pub max_states: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            hbar: 0.04,
            e_cutoff: 6.0,
            x_ref: 1.0,
            sector: SymmetrySector::EvenEvenSymmetric,
            window_center: 3.0,
            window_half_width: 1.0,
            edge_margin: 0.2,
            max_states: DEFAULT_MAX_STATES,
        }
    }
}

impl ModelParams {
    pub fn basis(&self) -> Result<OscillatorBasis> {
        build_sector_basis(self.hbar, self.e_cutoff, self.sector, self.max_states)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(rename = "2dw")]
    Physical2dw,
    Ermt { seed: u64, parent_hash: String },
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Physical2dw => "2DW",
            ModelKind::Ermt { .. } => "ERMT",
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuantizedModel {
    pub params: ModelParams,
    pub kind: ModelKind,
    /// Ascending eigenvalues of E inside the window.
    pub energies: Vec<f64>,
    /// B in the windowed E-eigenbasis.
    pub b_matrix: Mat<f64>,
    /// Index range of the window within the full spectrum.
    pub window: Range<usize>,
    pub basis_dim: usize,
    pub mean_spacing: f64,
    /// Window eigenvectors as columns in the oscillator (sector) basis;
    /// needed only to expand states given in that basis.
    pub eigenvectors: Option<Mat<f64>>,
}

impl QuantizedModel {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn hbar(&self) -> f64 {
        self.params.hbar
    }

    /// Build a model directly from windowed data (toy models, tests, ERMT).
    pub fn from_parts(
        params: ModelParams,
        kind: ModelKind,
        energies: Vec<f64>,
        b_matrix: Mat<f64>,
    ) -> Result<Self> {
        let n = energies.len();
        if n == 0 {
            return Err(Error::EmptyWindow {
                lo: params.window_center - params.window_half_width,
                hi: params.window_center + params.window_half_width,
            });
        }
        if b_matrix.nrows() != n || b_matrix.ncols() != n {
            return Err(Error::param(
                "b_matrix",
                format!("{}x{} does not match {n} energies", b_matrix.nrows(), b_matrix.ncols()),
            ));
        }
        if energies.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::param("energies", "must be ascending"));
        }
        let mean_spacing = mean_spacing(&energies);
        Ok(Self {
            params,
            kind,
            energies,
            b_matrix,
            window: 0..n,
            basis_dim: n,
            mean_spacing,
            eigenvectors: None,
        })
    }

    /// Off-diagonal weight Σ_{m≠n} B_nm² of each row.
    pub fn row_variance(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| self.b_matrix[(i, j)].powi(2))
                    .sum()
            })
            .collect()
    }

    /// Content hash identifying this model (kind, parameters, energies, B).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.header()).expect("header serializes"));
        for e in &self.energies {
            h.update(e.to_le_bytes());
        }
        let n = self.len();
        for j in 0..n {
            for i in 0..n {
                h.update(self.b_matrix[(i, j)].to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    fn header(&self) -> CacheHeader {
        CacheHeader {
            params: self.params.clone(),
            kind: self.kind.clone(),
            window_start: self.window.start,
            window_end: self.window.end,
            basis_dim: self.basis_dim,
            has_eigenvectors: self.eigenvectors.is_some(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn mean_spacing(energies: &[f64]) -> f64 {
    let n = energies.len();
    if n < 2 {
        return f64::NAN;
    }
    (energies[n - 1] - energies[0]) / (n - 1) as f64
}

/// Contiguous range of indices with |E_n − e_center| ≤ half_width.
pub fn select_window(energies: &[f64], e_center: f64, half_width: f64) -> Result<Range<usize>> {
    select_window_with_margin(energies, e_center, half_width, 0.2)
}

/// As [`select_window`], additionally requiring the last selected index to sit
/// at least `margin·len` below the top of the spectrum.
pub fn select_window_with_margin(
    energies: &[f64],
    e_center: f64,
    half_width: f64,
    margin: f64,
) -> Result<Range<usize>> {
    if !(half_width > 0.0) {
        return Err(Error::param("window_half_width", format!("must be positive, got {half_width}")));
    }
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::param("edge_margin", format!("must be in [0, 1), got {margin}")));
    }
    let (lo, hi) = (e_center - half_width, e_center + half_width);
    let start = energies.partition_point(|&e| e < lo);
    let end = energies.partition_point(|&e| e <= hi);
    if start >= end {
        return Err(Error::EmptyWindow { lo, hi });
    }
    let dim = energies.len();
    let last = end - 1;
    if last as f64 + margin * dim as f64 > (dim - 1) as f64 {
        return Err(Error::TruncationGuard {
            last,
            dim,
            margin_percent: 100.0 * margin,
            suggested_cutoff: f64::NAN,
        });
    }
    Ok(start..end)
}

/// Diagonalize E = H(x_ref), select the window, and transform B.
pub fn diagonalize_reference(params: &ModelParams) -> Result<QuantizedModel> {
    let basis = params.basis()?;
    diagonalize_basis(&basis, params)
}

pub(crate) fn diagonalize_basis(basis: &OscillatorBasis, params: &ModelParams) -> Result<QuantizedModel> {
    let h = build_hamiltonian_matrix(basis, params.x_ref);
    let b = build_perturbation_matrix(basis);
    let eig = symmetric_eigen(h.as_ref())?;
    let dim = eig.dim();

    let window = match select_window_with_margin(
        &eig.values,
        params.window_center,
        params.window_half_width,
        params.edge_margin,
    ) {
        Err(Error::TruncationGuard { last, dim, margin_percent, .. }) => {
            // Level counts grow roughly like E², so scale the cutoff by the
            // square root of the required count ratio.
            let need = (last + 1) as f64 + params.edge_margin * dim as f64;
            let suggested = params.e_cutoff * (need / dim as f64).sqrt() * 1.05;
            return Err(Error::TruncationGuard {
                last,
                dim,
                margin_percent,
                suggested_cutoff: (suggested * 10.0).ceil() / 10.0,
            });
        }
        r => r?,
    };

    let norm_h = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let residual = linalg::max_residual(h.as_ref(), &eig, window.clone());
    if residual > 1e-9 * norm_h.max(f64::MIN_POSITIVE) {
        return Err(Error::Eigensolver {
            dim,
            max_abs: norm_h,
            reason: format!("window residual {residual:.3e} exceeds 1e-9·‖H‖"),
        });
    }

    let vw = eig.vectors.as_ref().subcols(window.start, window.len()).to_owned();
    let bw = linalg::congruence(vw.as_ref(), b.as_ref());
    let energies = eig.values[window.clone()].to_vec();
    Ok(QuantizedModel {
        params: params.clone(),
        kind: ModelKind::Physical2dw,
        mean_spacing: mean_spacing(&energies),
        energies,
        b_matrix: bw,
        window,
        basis_dim: dim,
        eigenvectors: Some(vw),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaConvention {
    /// RMS of the first off-diagonal B_{n,n+1}.
    #[default]
    NearestNeighbor,
    /// RMS of all B_nm with 0 < |E_n − E_m| < Δ.
    WithinSpacing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandBin {
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub mean_sq: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDiagnostics {
    pub levels: usize,
    pub mean_spacing: f64,
    pub sigma: f64,
    pub delta_x_c: f64,
    /// Mean |B_nm|² binned by ω = |E_n − E_m| (diagonal included in the first bin).
    pub band_profile: Vec<BandBin>,
    /// Smallest ω containing 99% of the Frobenius weight of B.
    pub bandwidth: f64,
    /// Same, in level-index distance |n − m|.
    pub bandwidth_levels: usize,
    pub tau_cl_reference: f64,
    pub sigma_convention: SigmaConvention,
}

/// Δ, σ, δx_c = Δ/σ and the band profile with bins of width `2Δ`.
pub fn spectral_diagnostics(model: &QuantizedModel) -> Result<SpectralDiagnostics> {
    spectral_diagnostics_with(model, SigmaConvention::NearestNeighbor)
}

pub fn spectral_diagnostics_with(
    model: &QuantizedModel,
    convention: SigmaConvention,
) -> Result<SpectralDiagnostics> {
    let n = model.len();
    if n < STATISTICAL_FLOOR {
        return Err(Error::StatisticalFloor {
            found: n,
            required: STATISTICAL_FLOOR,
        });
    }
    let e = &model.energies;
    let b = &model.b_matrix;
    let delta = model.mean_spacing;

    let sigma = match convention {
        SigmaConvention::NearestNeighbor => {
            let s: f64 = (0..n - 1).map(|i| b[(i, i + 1)].powi(2)).sum();
            (s / (n - 1) as f64).sqrt()
        }
        SigmaConvention::WithinSpacing => {
            let (mut s, mut c) = (0.0, 0usize);
            for i in 0..n {
                for j in i + 1..n {
                    if e[j] - e[i] >= delta {
                        break;
                    }
                    s += b[(i, j)].powi(2);
                    c += 1;
                }
            }
            if c == 0 {
                (0..n - 1).map(|i| b[(i, i + 1)].powi(2)).sum::<f64>().sqrt() / ((n - 1) as f64).sqrt()
            } else {
                (s / c as f64).sqrt()
            }
        }
    };
    if !(sigma > 0.0) {
        return Err(Error::Eigensolver {
            dim: n,
            max_abs: sigma,
            reason: "near-diagonal B vanishes; select a symmetry sector".into(),
        });
    }

    let width = 2.0 * delta;
    let span = e[n - 1] - e[0];
    let nbins = (span / width).floor() as usize + 1;
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    // (ω, weight) pairs for the 99% bandwidth, and per index distance.
    let mut by_distance = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i..n {
            let w = b[(i, j)].powi(2);
            let k = (((e[j] - e[i]) / width).floor() as usize).min(nbins - 1);
            let mult = if i == j { 1.0 } else { 2.0 };
            sums[k] += w * mult;
            counts[k] += if i == j { 1 } else { 2 };
            by_distance[j - i] += w * mult;
            total += w * mult;
        }
    }
    let band_profile: Vec<BandBin> = (0..nbins)
        .map(|k| BandBin {
            omega_lo: k as f64 * width,
            omega_hi: (k + 1) as f64 * width,
            mean_sq: if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 },
            count: counts[k],
        })
        .collect();

    let target = 0.99 * total;
    let mut acc = 0.0;
    let mut bandwidth = span;
    for (k, &s) in sums.iter().enumerate() {
        acc += s;
        if acc >= target {
            bandwidth = (k + 1) as f64 * width;
            break;
        }
    }
    let mut acc = 0.0;
    let mut bandwidth_levels = n - 1;
    for (d, &s) in by_distance.iter().enumerate() {
        acc += s;
        if acc >= target {
            bandwidth_levels = d;
            break;
        }
    }

    Ok(SpectralDiagnostics {
        levels: n,
        mean_spacing: delta,
        sigma,
        delta_x_c: delta / sigma,
        band_profile,
        bandwidth,
        bandwidth_levels,
        tau_cl_reference: TAU_CL,
        sigma_convention: convention,
    })
}

/// Fraction of the Frobenius weight of B with |E_n − E_m| > ω.
pub fn weight_beyond(model: &QuantizedModel, omega: f64) -> f64 {
    let n = model.len();
    let (mut out, mut total) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = model.b_matrix[(i, j)].powi(2);
            total += w;
            if (model.energies[j] - model.energies[i]).abs() > omega {
                out += w;
            }
        }
    }
    if total > 0.0 {
        out / total
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Cache file: MAGIC, u32 version, u64 header length, JSON header, f64 payload
// (little endian), then the SHA-256 of everything before it.

const MAGIC: &[u8; 8] = b"ECHOMDL\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheHeader {
    params: ModelParams,
    kind: ModelKind,
    window_start: usize,
    window_end: usize,
    basis_dim: usize,
    has_eigenvectors: bool,
}

impl QuantizedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let n = self.len();
        let mut out = Vec::with_capacity(64 + header.len() + 8 * (n + n * n));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.energies {
            out.extend_from_slice(&e.to_le_bytes());
        }
        for j in 0..n {
            for i in 0..n {
                out.extend_from_slice(&self.b_matrix[(i, j)].to_le_bytes());
            }
        }
        if let Some(v) = &self.eigenvectors {
            for j in 0..v.ncols() {
                for i in 0..v.nrows() {
                    out.extend_from_slice(&v[(i, j)].to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..8] != MAGIC {
            return Err("not a model cache (bad magic)".into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err("checksum mismatch (file corrupted or truncated)".into());
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(format!("format version {version}, expected {VERSION}"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let hend = 20usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or("bad header length")?;
        let header: CacheHeader =
            serde_json::from_slice(&body[20..hend]).map_err(|e| format!("bad header: {e}"))?;
        let n = header.window_end.checked_sub(header.window_start).ok_or("bad window")?;
        let mut floats = body[hend..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let expect = n + n * n + if header.has_eigenvectors { header.basis_dim * n } else { 0 };
        if (body.len() - hend) != 8 * expect {
            return Err(format!("payload holds {} bytes, expected {}", body.len() - hend, 8 * expect));
        }
        let energies: Vec<f64> = floats.by_ref().take(n).collect();
        let mut b = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                b[(i, j)] = floats.next().unwrap();
            }
        }
        let eigenvectors = header.has_eigenvectors.then(|| {
            let mut v = Mat::<f64>::zeros(header.basis_dim, n);
            for j in 0..n {
                for i in 0..header.basis_dim {
                    v[(i, j)] = floats.next().unwrap();
                }
            }
            v
        });
        Ok(QuantizedModel {
            params: header.params,
            kind: header.kind,
            mean_spacing: mean_spacing(&energies),
            energies,
            b_matrix: b,
            window: header.window_start..header.window_end,
            basis_dim: header.basis_dim,
            eigenvectors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Cache {
            path: path.to_path_buf(),
            reason: format!("{e} (run `echotime build` first)"),
        })?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Cache {
            path: path.to_path_buf(),
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, off: f64) -> QuantizedModel {
        let e: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let b = Mat::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { off } else { 0.0 });
        QuantizedModel::from_parts(ModelParams::default(), ModelKind::Physical2dw, e, b).unwrap()
    }

    #[test]
    fn window_examples() {
        let e = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(select_window(&e, 3.0, 0.5).unwrap(), 2..3);
        assert_eq!(select_window(&e, 3.0, 1.1).unwrap(), 1..4);
        assert!(matches!(select_window(&e, 4.5, 0.6), Err(Error::TruncationGuard { .. })));
        assert!(matches!(select_window(&e, 10.0, 0.1), Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn diagnostics_of_uniform_chain() {
        let d = spectral_diagnostics(&toy(60, 2.0)).unwrap();
        assert_eq!(d.mean_spacing, 1.0);
        assert_eq!(d.sigma, 2.0);
        assert_eq!(d.delta_x_c, 0.5);
        assert_eq!(d.delta_x_c * d.sigma, d.mean_spacing);
        assert!(d.band_profile.iter().all(|b| b.mean_sq >= 0.0));
        assert_eq!(d.bandwidth_levels, 1);
    }

    #[test]
    fn statistical_floor() {
        assert!(matches!(
            spectral_diagnostics(&toy(20, 1.0)),
            Err(Error::StatisticalFloor { found: 20, .. })
        ));
    }

    #[test]
    fn oscillator_limit_keeps_product_basis() {
        // x_ref = 0: E is already diagonal, so the transformed B is B itself
        // up to the ordering and signs of degenerate eigenvectors. Use a
        // sector whose oscillator levels are nondegenerate at small size.
        let params = ModelParams {
            hbar: 0.5,
            e_cutoff: 3.0,
            x_ref: 0.0,
            sector: SymmetrySector::Full,
            window_center: 1.0,
            window_half_width: 0.6,
            edge_margin: 0.2,
            max_states: 100,
        };
        let m = diagonalize_reference(&params).unwrap();
        let basis = params.basis().unwrap();
        let b = build_perturbation_matrix(&basis);
        // Invariant under rotations inside degenerate blocks: the trace of B
        // over each degenerate level.
        let mut k = 0;
        while k < m.len() {
            let e = m.energies[k];
            let mut l = k;
            let mut tr_model = 0.0;
            while l < m.len() && (m.energies[l] - e).abs() < 1e-9 {
                tr_model += m.b_matrix[(l, l)];
                l += 1;
            }
            let tr_basis: f64 = (0..basis.len())
                .filter(|&i| (basis.oscillator_energy(i) - e).abs() < 1e-9)
                .map(|i| b[(i, i)])
                .sum();
            assert!((tr_model - tr_basis).abs() < 1e-12);
            k = l;
        }
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let m = toy(12, 0.3);
        let bytes = m.to_bytes();
        let back = QuantizedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.energies, m.energies);
        assert_eq!(back.b_matrix, m.b_matrix);
        assert_eq!(back.content_hash(), m.content_hash());
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(QuantizedModel::from_bytes(&bad).is_err());
    }
}
