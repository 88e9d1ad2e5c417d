//! Link adaptation: sub-band EESM, effective SINR, CQI quantization,
//! transport block sizing and the per-link transmission success probability.
//!
//! EESM operates on linear SNR throughout; dB appears only at interfaces.

use crate::radio::CellId;
use crate::tables::{LinkAdaptTables, McsEntry};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinkAdaptError {
    #[error("invalid sub-band grid: {0}")]
    InvalidGrid(String),
    #[error("selected sub-band set is empty or out of range")]
    BadSelection,
    #[error("non-positive N_info ({0}): invalid MCS/PRB combination")]
    NonPositiveNinfo(f64),
}

/// Per-PRB linear SNR values partitioned into sub-bands of `prbs_per_subband`
/// contiguous PRBs (the last sub-band may be shorter).
#[derive(Debug, Clone)]
pub struct SubbandGrid {
    per_prb_snr: Vec<f64>,
    prbs_per_subband: usize,
}

impl SubbandGrid {
    pub fn new(per_prb_snr: Vec<f64>, prbs_per_subband: usize) -> Result<Self, LinkAdaptError> {
        if !(2..=8).contains(&prbs_per_subband) {
            return Err(LinkAdaptError::InvalidGrid(format!(
                "prbs_per_subband must be in 2..=8, got {prbs_per_subband}"
            )));
        }
        if per_prb_snr.is_empty() {
            return Err(LinkAdaptError::InvalidGrid("no PRBs".into()));
        }
        if per_prb_snr.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(LinkAdaptError::InvalidGrid(
                "per-PRB SNR values must be positive and finite".into(),
            ));
        }
        Ok(Self {
            per_prb_snr,
            prbs_per_subband,
        })
    }

    pub fn prb_count(&self) -> usize {
        self.per_prb_snr.len()
    }

    /// S = ceil(|P| / p)
    pub fn subband_count(&self) -> usize {
        self.per_prb_snr.len().div_ceil(self.prbs_per_subband)
    }

    pub fn subband_prbs(&self, s: usize) -> &[f64] {
        let lo = s * self.prbs_per_subband;
        let hi = (lo + self.prbs_per_subband).min(self.per_prb_snr.len());
        &self.per_prb_snr[lo..hi]
    }
}

/// EESM tuning and UE-selected sub-band reporting configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EesmConfig {
    /// Tuning parameter θ, linear SNR units.
    pub theta: f64,
    /// Number M of best sub-bands reported.
    pub m_sel: usize,
}

impl Default for EesmConfig {
    fn default() -> Self {
        Self { theta: 1.0, m_sel: 4 }
    }
}

/// EESM kernel over a set of linear SNRs: -θ·ln( mean(exp(-γ/θ)) ).
pub fn eesm(values: &[f64], theta: f64) -> f64 {
    debug_assert!(!values.is_empty() && theta > 0.0);
    let mean_exp =
        values.iter().map(|g| (-g / theta).exp()).sum::<f64>() / values.len() as f64;
    -theta * mean_exp.ln()
}

/// Sub-band SNR: EESM over the PRBs of sub-band `s`.
pub fn subband_snr(grid: &SubbandGrid, s: usize, theta: f64) -> f64 {
    eesm(grid.subband_prbs(s), theta)
}

/// All sub-band SNRs of a grid.
pub fn all_subband_snrs(grid: &SubbandGrid, theta: f64) -> Vec<f64> {
    (0..grid.subband_count())
        .map(|s| subband_snr(grid, s, theta))
        .collect()
}

/// Effective SINR: EESM over the selected sub-bands only (divisor = |selection|).
pub fn effective_sinr(
    subband_snrs: &[f64],
    selected: &[usize],
    theta: f64,
) -> Result<f64, LinkAdaptError> {
    if selected.is_empty() || selected.iter().any(|s| *s >= subband_snrs.len()) {
        return Err(LinkAdaptError::BadSelection);
    }
    let vals: Vec<f64> = selected.iter().map(|s| subband_snrs[*s]).collect();
    Ok(eesm(&vals, theta))
}

/// Indices of the `m_sel` largest sub-band SNRs (ties: lower index first) and
/// the effective SINR over them. The returned index set is sorted ascending.
pub fn select_top_subbands(
    subband_snrs: &[f64],
    m_sel: usize,
    theta: f64,
) -> Result<(Vec<usize>, f64), LinkAdaptError> {
    if m_sel == 0 || m_sel > subband_snrs.len() {
        return Err(LinkAdaptError::BadSelection);
    }
    let mut order: Vec<usize> = (0..subband_snrs.len()).collect();
    order.sort_by(|a, b| {
        subband_snrs[*b]
            .partial_cmp(&subband_snrs[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let mut selected: Vec<usize> = order[..m_sel].to_vec();
    selected.sort_unstable();
    let gamma = effective_sinr(subband_snrs, &selected, theta)?;
    Ok((selected, gamma))
}

/// How the UE reports channel quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportScheme {
    /// Best-M sub-band feedback: one effective CQI over the M best sub-bands.
    UeSelected,
    /// Per-sub-band feedback: every sub-band's own quantized CQI, plus the
    /// effective CQI over all sub-bands.
    SubbandLevel,
}

/// One CQI report, generated at the UE and delivered after the CQI latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqiReport {
    pub cell: CellId,
    pub cqi_index: u8,
    pub selected_subbands: Vec<usize>,
    pub per_subband_cqi: Option<Vec<u8>>,
    pub generated_tti: u64,
    pub delivery_tti: u64,
}

/// Build a CQI report from a grid under the given scheme.
pub fn generate_cqi_report(
    cell: CellId,
    grid: &SubbandGrid,
    cfg: &EesmConfig,
    scheme: ReportScheme,
    tables: &LinkAdaptTables,
    generated_tti: u64,
    latency_ttis: u64,
) -> Result<CqiReport, LinkAdaptError> {
    let snrs = all_subband_snrs(grid, cfg.theta);
    let (selected, gamma, per_subband) = match scheme {
        ReportScheme::UeSelected => {
            let m = cfg.m_sel.min(snrs.len()).max(1);
            let (sel, g) = select_top_subbands(&snrs, m, cfg.theta)?;
            (sel, g, None)
        }
        ReportScheme::SubbandLevel => {
            let all: Vec<usize> = (0..snrs.len()).collect();
            let g = effective_sinr(&snrs, &all, cfg.theta)?;
            let per = snrs.iter().map(|s| tables.quantize_cqi(*s)).collect();
            (all, g, Some(per))
        }
    };
    Ok(CqiReport {
        cell,
        cqi_index: tables.quantize_cqi(gamma),
        selected_subbands: selected,
        per_subband_cqi: per_subband,
        generated_tti,
        delivery_tti: generated_tti + latency_ttis,
    })
}

/// Transport block sizing result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbsResult {
    pub tbs_bits: u64,
    pub n_info: f64,
    pub quantized_n_info: u64,
    pub code_blocks: u32,
}

/// Transport block size for an MCS, PRB allocation and layer count.
///
/// Small blocks (N_info <= 3824) quantize N_info on a power-of-two grid and
/// look up the smallest tabulated size that fits; large blocks are sized by
/// the closed-form byte-aligned code-block formulas.
pub fn compute_tbs(
    mcs: &McsEntry,
    prb_count: u32,
    layers: u32,
    tbs_small_table: &[u32],
) -> Result<TbsResult, LinkAdaptError> {
    let n_info = f64::from(prb_count) * mcs.code_rate() * f64::from(mcs.qm) * f64::from(layers);
    if n_info <= 0.0 {
        return Err(LinkAdaptError::NonPositiveNinfo(n_info));
    }
    if n_info <= 3824.0 {
        let n = (n_info.log2().floor() as i32 - 6).max(3);
        let step = 2f64.powi(n);
        let quantized = (step * ((n_info - 24.0) / step).floor()).max(24.0) as u64;
        let tbs = tbs_small_table
            .iter()
            .find(|t| u64::from(**t) >= quantized)
            .copied()
            .map(u64::from)
            .ok_or_else(|| {
                LinkAdaptError::InvalidGrid("small-TBS table does not cover N*_info".into())
            })?;
        Ok(TbsResult {
            tbs_bits: tbs,
            n_info,
            quantized_n_info: quantized,
            code_blocks: 1,
        })
    } else {
        let n = (n_info - 24.0).log2().floor() as i32 - 5;
        let step = 2f64.powi(n);
        let quantized = (step * (n_info / step).ceil()).max(3840.0) as u64;
        let (code_blocks, tbs) = if quantized > 8424 {
            let c = (quantized + 24).div_ceil(8424);
            let d = 8 * c;
            (c as u32, d * (quantized + 24).div_ceil(d) - 24)
        } else {
            (1, 8 * (quantized + 24).div_ceil(8) - 24)
        };
        Ok(TbsResult {
            tbs_bits: tbs,
            n_info,
            quantized_n_info: quantized,
            code_blocks,
        })
    }
}

/// Transmission success probability at an effective SINR for an MCS:
/// 1 - BLER(γ) with BLER(γ) = 0.5·erfc((γ - midpoint)/(√2·slope)).
pub fn success_prob(gamma_eff_db: f64, mcs: &McsEntry) -> f64 {
    let z = (gamma_eff_db - mcs.bler_midpoint_db) / (std::f64::consts::SQRT_2 * mcs.bler_slope_db);
    let bler = 0.5 * libm::erfc(z);
    (1.0 - bler).clamp(0.0, 1.0)
}
