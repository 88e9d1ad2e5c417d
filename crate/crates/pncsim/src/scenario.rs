//! Scenario files: versioned JSON describing topology, UE trajectory,
//! propagation, timing, traffic, measurement/link-adaptation settings and
//! the policy under test. A reference scenario mirroring the in-scope
//! simulation-summary quantities ships with the crate.

use crate::queue::ConstituencyPreset;
use crate::radio::CellRole;
use crate::linkadapt::ReportScheme;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Raw text of the bundled reference scenario.
pub const REFERENCE_SCENARIO_JSON: &str = include_str!("../scenarios/reference.scenario");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub id: u32,
    pub role: CellRole,
    /// Ground position in metres.
    pub position_m: [f64; 2],
    pub tx_power_dbm: f64,
    pub carrier_ghz: f64,
    pub antenna_height_m: f64,
    /// Range-extension offset in dB (small cells only).
    #[serde(default)]
    pub re_offset_db: f64,
    /// Fraction of PRBs available to the tracked UE (background load).
    #[serde(default = "default_one")]
    pub prb_fraction: f64,
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeConfig {
    pub start_position_m: [f64; 2],
    pub velocity_mps: f64,
    /// Heading in degrees, 0 along +x.
    pub heading_deg: f64,
    pub antenna_height_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathModel {
    pub exponent: f64,
    /// Loss at 1 m in dB (absorbs antenna gains; presets are calibrated, not
    /// physical).
    pub reference_loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Macro-cell path model (uma-like preset).
    #[serde(default = "PropagationConfig::uma_like")]
    pub macro_path: PathModel,
    /// Small-cell path model (umi-like preset).
    #[serde(default = "PropagationConfig::umi_like")]
    pub small_path: PathModel,
    #[serde(default = "default_shadowing_sigma")]
    pub shadowing_sigma_db: f64,
    #[serde(default = "default_shadowing_corr")]
    pub shadowing_correlation_distance_m: f64,
    /// Thermal noise over the full bandwidth.
    #[serde(default = "default_noise_floor")]
    pub noise_floor_dbm: f64,
    #[serde(default = "default_noise_figure")]
    pub noise_figure_db: f64,
    /// Zero-mean per-PRB frequency-selective jitter.
    #[serde(default = "default_prb_jitter")]
    pub per_prb_jitter_sigma_db: f64,
    #[serde(default = "default_bandwidth_prbs")]
    pub bandwidth_prbs: u32,
}

fn default_shadowing_sigma() -> f64 {
    2.0
}
fn default_shadowing_corr() -> f64 {
    20.0
}
fn default_noise_floor() -> f64 {
    -101.4
}
fn default_noise_figure() -> f64 {
    9.0
}
fn default_prb_jitter() -> f64 {
    1.0
}
fn default_bandwidth_prbs() -> u32 {
    100
}

impl PropagationConfig {
    pub fn uma_like() -> PathModel {
        PathModel {
            exponent: 3.7,
            reference_loss_db: 1.3,
        }
    }

    pub fn umi_like() -> PathModel {
        PathModel {
            exponent: 3.2,
            reference_loss_db: 72.0,
        }
    }

    pub fn path_for(&self, role: CellRole) -> PathModel {
        match role {
            CellRole::Macro => self.macro_path,
            CellRole::Small => self.small_path,
        }
    }
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            macro_path: Self::uma_like(),
            small_path: Self::umi_like(),
            shadowing_sigma_db: default_shadowing_sigma(),
            shadowing_correlation_distance_m: default_shadowing_corr(),
            noise_floor_dbm: default_noise_floor(),
            noise_figure_db: default_noise_figure(),
            per_prb_jitter_sigma_db: default_prb_jitter(),
            bandwidth_prbs: default_bandwidth_prbs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// TTI duration: 2 OFDM symbols at numerology 0.
    #[serde(default = "default_tti_us")]
    pub tti_us: f64,
    #[serde(default = "default_xn_delay")]
    pub xn_delay_ttis: u32,
    #[serde(default = "default_s1_delay")]
    pub s1_delay_ttis: u32,
    #[serde(default = "default_cqi_latency")]
    pub cqi_latency_ttis: u64,
    #[serde(default = "default_cqi_period")]
    pub cqi_period_ttis: u64,
}

fn default_tti_us() -> f64 {
    1000.0 / 7.0
}
fn default_xn_delay() -> u32 {
    4 // 500 us at 1/7 ms per TTI, ceil
}
fn default_s1_delay() -> u32 {
    70 // 10 ms
}
fn default_cqi_latency() -> u64 {
    14 // 2 ms
}
fn default_cqi_period() -> u64 {
    14
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            tti_us: default_tti_us(),
            xn_delay_ttis: default_xn_delay(),
            s1_delay_ttis: default_s1_delay(),
            cqi_latency_ttis: default_cqi_latency(),
            cqi_period_ttis: default_cqi_period(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub payload_bytes: u64,
    pub mean_interarrival_us: f64,
}

impl TrafficConfig {
    pub fn rate_per_tti(&self, tti_us: f64) -> f64 {
        tti_us / self.mean_interarrival_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub capacity_bytes: u64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity_bytes: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSettings {
    #[serde(default = "default_filter_p")]
    pub filter_coeff_p: u32,
    #[serde(default = "default_rq_scell")]
    pub rq_scell_threshold_db: f64,
    #[serde(default)]
    pub o_neighbour_db: f64,
    #[serde(default)]
    pub o_serving_db: f64,
    #[serde(default = "default_hysteresis")]
    pub hysteresis_y_db: f64,
    #[serde(default = "default_a6_offset")]
    pub a6_offset_db: f64,
    #[serde(default)]
    pub time_to_trigger_ttis: u32,
    /// Report grids; when absent, dense default grids are used
    /// (1 dB RSRP steps, 0.5 dB RSRQ steps).
    #[serde(default)]
    pub rsrp_thresholds_dbm: Option<Vec<f64>>,
    #[serde(default)]
    pub rsrq_thresholds_db: Option<Vec<f64>>,
}

fn default_filter_p() -> u32 {
    4
}
fn default_rq_scell() -> f64 {
    -14.0
}
fn default_hysteresis() -> f64 {
    3.0
}
fn default_a6_offset() -> f64 {
    1.0
}

impl Default for MeasurementSettings {
    fn default() -> Self {
        Self {
            filter_coeff_p: default_filter_p(),
            rq_scell_threshold_db: default_rq_scell(),
            o_neighbour_db: 0.0,
            o_serving_db: 0.0,
            hysteresis_y_db: default_hysteresis(),
            a6_offset_db: default_a6_offset(),
            time_to_trigger_ttis: 0,
            rsrp_thresholds_dbm: None,
            rsrq_thresholds_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkAdaptSettings {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_prbs_per_subband")]
    pub prbs_per_subband: usize,
    #[serde(default = "default_m_sel")]
    pub m_sel: usize,
    #[serde(default = "default_report_scheme")]
    pub report_scheme: ReportScheme,
    #[serde(default = "default_layers")]
    pub layers: u32,
}

fn default_theta() -> f64 {
    1.0
}
fn default_prbs_per_subband() -> usize {
    8
}
fn default_m_sel() -> usize {
    4
}
fn default_report_scheme() -> ReportScheme {
    ReportScheme::UeSelected
}
fn default_layers() -> u32 {
    1
}

impl Default for LinkAdaptSettings {
    fn default() -> Self {
        Self {
            theta: default_theta(),
            prbs_per_subband: default_prbs_per_subband(),
            m_sel: default_m_sel(),
            report_scheme: default_report_scheme(),
            layers: default_layers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtmcSettings {
    /// Additive smoothing for the transition estimate.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Re-synchronize σ_t from each delivered CQI report instead of
    /// free-running the chain.
    #[serde(default)]
    pub resync_on_cqi: bool,
    /// Custom state-mapper table (18 entries); the default tercile mapping
    /// applies when absent.
    #[serde(default)]
    pub mapper_table: Option<Vec<usize>>,
}

fn default_smoothing() -> f64 {
    1.0
}

impl Default for DtmcSettings {
    fn default() -> Self {
        Self {
            smoothing: default_smoothing(),
            resync_on_cqi: false,
            mapper_table: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Pnc,
    AutonomousA6,
    SingleConnectivity,
    MaxWeight,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Pnc => "pnc",
            PolicyKind::AutonomousA6 => "autonomous_a6",
            PolicyKind::SingleConnectivity => "single_connectivity",
            PolicyKind::MaxWeight => "max_weight",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "pnc" => Some(PolicyKind::Pnc),
            "autonomous_a6" => Some(PolicyKind::AutonomousA6),
            "single_connectivity" => Some(PolicyKind::SingleConnectivity),
            "max_weight" => Some(PolicyKind::MaxWeight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(default)]
    pub name: PolicyKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_q_diag")]
    pub q_diag: [f64; 4],
    /// Append the multi-connectivity duplication column to the routing
    /// matrix.
    #[serde(default)]
    pub enable_dc: bool,
}

fn default_horizon() -> usize {
    4
}
fn default_q_diag() -> [f64; 4] {
    [1.0, 1.0, 1.0, 0.0]
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            name: PolicyKind::default(),
            horizon: default_horizon(),
            q_diag: default_q_diag(),
            enable_dc: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_ttis: u64,
    pub cells: Vec<CellConfig>,
    pub ue: UeConfig,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub buffers: BufferConfig,
    #[serde(default)]
    pub measurement: MeasurementSettings,
    #[serde(default)]
    pub link_adapt: LinkAdaptSettings,
    #[serde(default)]
    pub dtmc: DtmcSettings,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub constituency: ConstituencyPreset,
    /// KPI evaluation window [start, end) in TTIs, bracketing the small-cell
    /// change.
    #[serde(default)]
    pub mobility_window: Option<[u64; 2]>,
    /// Sliding window for the throughput series (default 50 ms).
    #[serde(default = "default_kpi_window")]
    pub kpi_window_ttis: usize,
}

fn default_kpi_window() -> usize {
    350
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let s: ScenarioConfig = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// The bundled reference scenario.
    pub fn reference() -> Self {
        Self::from_json_str(REFERENCE_SCENARIO_JSON).expect("bundled scenario must be valid")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return err(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.duration_ttis == 0 {
            return err("duration_ttis must be >= 1".into());
        }
        if self.cells.is_empty() {
            return err("at least one cell is required".into());
        }
        let mut ids: Vec<u32> = self.cells.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.cells.len() {
            return err("cell ids must be unique".into());
        }
        for c in &self.cells {
            if !(c.position_m.iter().all(|v| v.is_finite())
                && c.tx_power_dbm.is_finite()
                && c.carrier_ghz.is_finite()
                && c.antenna_height_m.is_finite()
                && c.re_offset_db.is_finite())
            {
                return err(format!("cell {} has non-finite fields", c.id));
            }
            if c.role == CellRole::Macro && c.re_offset_db != 0.0 {
                return err(format!("macro cell {} must have zero RE offset", c.id));
            }
            if c.re_offset_db < 0.0 {
                return err(format!("cell {} has negative RE offset", c.id));
            }
            if !(0.0..=1.0).contains(&c.prb_fraction) {
                return err(format!("cell {} prb_fraction outside [0,1]", c.id));
            }
        }
        if !self.cells.iter().any(|c| c.role == CellRole::Macro) {
            return err("a macro cell is required".into());
        }
        if !(self.ue.velocity_mps.is_finite() && self.ue.velocity_mps >= 0.0) {
            return err("UE velocity must be finite and >= 0".into());
        }
        if !self
            .ue
            .start_position_m
            .iter()
            .chain([&self.ue.heading_deg, &self.ue.antenna_height_m])
            .all(|v| v.is_finite())
        {
            return err("UE fields must be finite".into());
        }
        let p = &self.propagation;
        if p.bandwidth_prbs == 0 {
            return err("bandwidth_prbs must be >= 1".into());
        }
        for (name, v) in [
            ("macro exponent", p.macro_path.exponent),
            ("small exponent", p.small_path.exponent),
            ("macro reference loss", p.macro_path.reference_loss_db),
            ("small reference loss", p.small_path.reference_loss_db),
            ("shadowing sigma", p.shadowing_sigma_db),
            ("shadowing correlation distance", p.shadowing_correlation_distance_m),
            ("noise floor", p.noise_floor_dbm),
            ("noise figure", p.noise_figure_db),
            ("per-PRB jitter sigma", p.per_prb_jitter_sigma_db),
        ] {
            if !v.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        if p.shadowing_sigma_db < 0.0
            || p.per_prb_jitter_sigma_db < 0.0
            || p.shadowing_correlation_distance_m <= 0.0
        {
            return err("shadowing/jitter parameters out of range".into());
        }
        if !(self.timing.tti_us.is_finite() && self.timing.tti_us > 0.0) {
            return err("tti_us must be positive".into());
        }
        if self.timing.xn_delay_ttis == 0 {
            return err("xn_delay_ttis must be >= 1 (wired links have delay)".into());
        }
        if self.traffic.payload_bytes == 0 {
            return err("payload_bytes must be >= 1".into());
        }
        if !(self.traffic.mean_interarrival_us.is_finite()
            && self.traffic.mean_interarrival_us > 0.0)
        {
            return err("mean_interarrival_us must be positive".into());
        }
        if self.buffers.capacity_bytes == 0 {
            return err("buffer capacity must be >= 1".into());
        }
        if !(2..=8).contains(&self.link_adapt.prbs_per_subband) {
            return err("prbs_per_subband must be in 2..=8".into());
        }
        let subbands =
            (p.bandwidth_prbs as usize).div_ceil(self.link_adapt.prbs_per_subband);
        if self.link_adapt.m_sel == 0 || self.link_adapt.m_sel > subbands {
            return err(format!(
                "m_sel must be in 1..={subbands} for this bandwidth"
            ));
        }
        if !(self.link_adapt.theta.is_finite() && self.link_adapt.theta > 0.0) {
            return err("theta must be positive".into());
        }
        if self.link_adapt.layers == 0 {
            return err("layers must be >= 1".into());
        }
        if !(self.dtmc.smoothing.is_finite() && self.dtmc.smoothing >= 0.0) {
            return err("dtmc smoothing must be finite and >= 0".into());
        }
        if let Some(t) = &self.dtmc.mapper_table {
            if t.len() != 18 || t.iter().any(|s| *s == 0 || *s > 6) {
                return err("mapper_table must hold 18 states in 1..=6".into());
            }
        }
        if self.policy.horizon == 0 || self.policy.horizon > 8 {
            return err("policy horizon must be in 1..=8".into());
        }
        if self.policy.q_diag.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return err("q_diag entries must be finite and >= 0".into());
        }
        let m = &self.measurement;
        for (name, v) in [
            ("rq_scell_threshold_db", m.rq_scell_threshold_db),
            ("o_neighbour_db", m.o_neighbour_db),
            ("o_serving_db", m.o_serving_db),
            ("hysteresis_y_db", m.hysteresis_y_db),
            ("a6_offset_db", m.a6_offset_db),
        ] {
            if !v.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        if m.hysteresis_y_db < 0.0 {
            return err("hysteresis must be >= 0".into());
        }
        for (name, grid) in [
            ("rsrp_thresholds_dbm", &m.rsrp_thresholds_dbm),
            ("rsrq_thresholds_db", &m.rsrq_thresholds_db),
        ] {
            if let Some(g) = grid {
                if g.len() < 2
                    || g.iter().any(|v| !v.is_finite())
                    || g.windows(2).any(|w| w[1] <= w[0])
                {
                    return err(format!("{name} must be strictly increasing and finite"));
                }
            }
        }
        if let Some([start, end]) = self.mobility_window {
            if start >= end || end > self.duration_ttis {
                return err("mobility_window must satisfy start < end <= duration".into());
            }
        }
        if self.kpi_window_ttis == 0 {
            return err("kpi_window_ttis must be >= 1".into());
        }
        Ok(())
    }

    pub fn buffer_capacity_bits(&self) -> u64 {
        self.buffers.capacity_bytes.saturating_mul(8)
    }

    pub fn payload_bits(&self) -> u64 {
        self.traffic.payload_bytes * 8
    }
}
