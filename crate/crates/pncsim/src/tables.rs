//! Link-adaptation lookup tables: 4-bit CQI table, MCS table and the small
//! transport-block-size table.
//!
//! The tables are data, not code: they ship as a JSON file bundled with the
//! crate (`data/nr_tables.json`) and can be swapped out at runtime for audit
//! or experimentation. Values mirror the cited 3GPP tables (CQI indices with
//! per-1024 code rates, 29-entry MCS table up to 64QAM, 93-entry small-TBS
//! table up to 3824 bits). The SNR thresholds and BLER curve parameters are
//! derived, not standardized: thresholds come from the Shannon bound on each
//! entry's spectral efficiency (made strictly increasing), and each MCS's
//! error curve is calibrated so BLER = 10% at its threshold.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// Raw text of the bundled table file.
pub const BUNDLED_TABLES_JSON: &str = include_str!("../data/nr_tables.json");

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid table data: {0}")]
    Invalid(String),
}

/// One row of the 4-bit CQI table.
///
/// `la_threshold_db` is the lowest effective SNR at which this CQI index is
/// reported (index 0 carries a sentinel floor and means "out of range").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqiEntry {
    pub cqi: u8,
    pub qm: u8,
    pub code_rate_x1024: u32,
    pub la_threshold_db: f64,
}

impl CqiEntry {
    /// Spectral efficiency in bits per resource element.
    pub fn efficiency(&self) -> f64 {
        f64::from(self.qm) * f64::from(self.code_rate_x1024) / 1024.0
    }
}

/// One row of the MCS table, with the parameters of its success-probability
/// curve: BLER(γ) = Q((γ − midpoint)/slope), calibrated so that
/// BLER(la_threshold) = 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub mcs: u8,
    pub qm: u8,
    pub code_rate_x1024: u32,
    pub la_threshold_db: f64,
    pub bler_midpoint_db: f64,
    pub bler_slope_db: f64,
}

impl McsEntry {
    /// Code rate as a fraction of 1.
    pub fn code_rate(&self) -> f64 {
        f64::from(self.code_rate_x1024) / 1024.0
    }

    /// Spectral efficiency in bits per resource element.
    pub fn efficiency(&self) -> f64 {
        f64::from(self.qm) * self.code_rate()
    }
}

/// The full table set loaded from one file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkAdaptTables {
    pub schema_version: u32,
    pub cqi_table: Vec<CqiEntry>,
    pub mcs_table: Vec<McsEntry>,
    pub tbs_small_table: Vec<u32>,
}

static BUNDLED: OnceLock<LinkAdaptTables> = OnceLock::new();

impl LinkAdaptTables {
    /// The tables bundled with the crate.
    pub fn bundled() -> &'static LinkAdaptTables {
        BUNDLED.get_or_init(|| {
            LinkAdaptTables::from_json_str(BUNDLED_TABLES_JSON)
                .expect("bundled table file must be valid")
        })
    }

    /// Parse and validate a table file.
    pub fn from_json_str(text: &str) -> Result<Self, TableError> {
        let tables: LinkAdaptTables = serde_json::from_str(text)?;
        tables.validate()?;
        Ok(tables)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        if self.cqi_table.len() != 16 {
            return Err(TableError::Invalid(format!(
                "cqi_table must have 16 entries, got {}",
                self.cqi_table.len()
            )));
        }
        if self.mcs_table.is_empty() || self.mcs_table.len() > 32 {
            return Err(TableError::Invalid(format!(
                "mcs_table must have 1..=32 entries, got {}",
                self.mcs_table.len()
            )));
        }
        for (i, e) in self.cqi_table.iter().enumerate() {
            if usize::from(e.cqi) != i {
                return Err(TableError::Invalid(format!(
                    "cqi_table entry {i} has index {}",
                    e.cqi
                )));
            }
            if !e.la_threshold_db.is_finite() {
                return Err(TableError::Invalid("non-finite CQI threshold".into()));
            }
            if i > 0 && !(e.qm == 2 || e.qm == 4 || e.qm == 6) {
                return Err(TableError::Invalid(format!("cqi {i} has Qm {}", e.qm)));
            }
            if i > 0 && (e.code_rate_x1024 == 0 || e.code_rate_x1024 >= 1024) {
                return Err(TableError::Invalid(format!(
                    "cqi {i} code rate {} out of (0,1024)",
                    e.code_rate_x1024
                )));
            }
        }
        for w in self.cqi_table.windows(2) {
            if w[1].la_threshold_db <= w[0].la_threshold_db {
                return Err(TableError::Invalid(
                    "cqi thresholds must be strictly increasing".into(),
                ));
            }
        }
        for (i, e) in self.mcs_table.iter().enumerate() {
            if usize::from(e.mcs) != i {
                return Err(TableError::Invalid(format!(
                    "mcs_table entry {i} has index {}",
                    e.mcs
                )));
            }
            if !(e.qm == 2 || e.qm == 4 || e.qm == 6) {
                return Err(TableError::Invalid(format!("mcs {i} has Qm {}", e.qm)));
            }
            if e.code_rate_x1024 == 0 || e.code_rate_x1024 >= 1024 {
                return Err(TableError::Invalid(format!(
                    "mcs {i} code rate {} out of (0,1024)",
                    e.code_rate_x1024
                )));
            }
            if !e.la_threshold_db.is_finite()
                || !e.bler_midpoint_db.is_finite()
                || !(e.bler_slope_db.is_finite() && e.bler_slope_db > 0.0)
            {
                return Err(TableError::Invalid(format!("mcs {i} has bad curve parameters")));
            }
        }
        for w in self.mcs_table.windows(2) {
            if w[1].la_threshold_db <= w[0].la_threshold_db {
                return Err(TableError::Invalid(
                    "mcs thresholds must be strictly increasing".into(),
                ));
            }
        }
        if self.tbs_small_table.is_empty() {
            return Err(TableError::Invalid("tbs_small_table is empty".into()));
        }
        for w in self.tbs_small_table.windows(2) {
            if w[1] <= w[0] {
                return Err(TableError::Invalid(
                    "tbs_small_table must be strictly increasing".into(),
                ));
            }
        }
        if *self.tbs_small_table.first().unwrap() != 24
            || *self.tbs_small_table.last().unwrap() != 3824
        {
            return Err(TableError::Invalid(
                "tbs_small_table must span 24..=3824".into(),
            ));
        }
        Ok(())
    }

    pub fn cqi(&self, index: u8) -> &CqiEntry {
        &self.cqi_table[usize::from(index.min(15))]
    }

    pub fn mcs(&self, index: u8) -> &McsEntry {
        &self.mcs_table[usize::from(index).min(self.mcs_table.len() - 1)]
    }

    /// Quantize an effective SNR (linear) to a CQI index: the highest index
    /// whose threshold is met, 0 when even index 1 is out of reach.
    pub fn quantize_cqi(&self, gamma_eff_linear: f64) -> u8 {
        let gamma_db = 10.0 * gamma_eff_linear.log10();
        self.quantize_cqi_db(gamma_db)
    }

    pub fn quantize_cqi_db(&self, gamma_db: f64) -> u8 {
        for entry in self.cqi_table.iter().rev() {
            if entry.cqi == 0 {
                break;
            }
            if gamma_db >= entry.la_threshold_db {
                return entry.cqi;
            }
        }
        0
    }

    /// Map a reported CQI to the MCS the scheduler uses: the highest MCS
    /// whose spectral efficiency does not exceed the CQI's, falling back to
    /// MCS 0. CQI 0 maps to no MCS (nothing schedulable).
    pub fn mcs_for_cqi(&self, cqi: u8) -> Option<u8> {
        if cqi == 0 {
            return None;
        }
        let target = self.cqi(cqi).efficiency();
        let mut best = 0u8;
        for e in &self.mcs_table {
            if e.efficiency() <= target {
                best = e.mcs;
            }
        }
        Some(best)
    }

    /// Representative effective SNR (dB) for a CQI index: the midpoint of the
    /// index's SNR interval. Used to derive per-state success matrices.
    pub fn cqi_region_midpoint_db(&self, cqi: u8) -> f64 {
        let i = usize::from(cqi.min(15));
        if i == 0 {
            return self.cqi_table[1].la_threshold_db - 3.0;
        }
        let lower = self.cqi_table[i].la_threshold_db;
        let upper = if i + 1 < self.cqi_table.len() {
            self.cqi_table[i + 1].la_threshold_db
        } else {
            lower + 2.0
        };
        0.5 * (lower + upper)
    }

    /// SHA-256 of a table file's raw text, for run metadata.
    pub fn checksum_hex(text: &str) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
