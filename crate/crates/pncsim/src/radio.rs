//! UE radio measurements and mobility events.
//!
//! Implements the measurement pipeline a UE runs per TTI: wideband RSSI,
//! RSRP/RSRQ, quantized reporting against configured threshold grids, L3
//! exponential filtering, primary/secondary cell selection, and the A2/A4/A6
//! event engine that drives small-cell mobility.
//!
//! All power arithmetic happens in linear milliwatts; dBm/dB only at the
//! interfaces.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Cell identifier; ordering is used for deterministic tie-breaks.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRole {
    Macro,
    Small,
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("empty candidate list (scenario configured no cells for selection)")]
    NoCandidates,
    #[error("invalid measurement config: {0}")]
    InvalidConfig(String),
}

/// Linear received power decomposition at the UE, in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerComponents {
    pub p_serving_mw: f64,
    pub p_cochannel_mw: f64,
    pub p_noise_mw: f64,
}

impl PowerComponents {
    pub fn new(p_serving_mw: f64, p_cochannel_mw: f64, p_noise_mw: f64) -> Self {
        debug_assert!(p_serving_mw >= 0.0 && p_cochannel_mw >= 0.0 && p_noise_mw > 0.0);
        Self {
            p_serving_mw,
            p_cochannel_mw,
            p_noise_mw,
        }
    }
}

/// Wideband RSSI in dBm: total received power (serving + co-channel + noise).
pub fn compute_rssi(c: &PowerComponents) -> f64 {
    10.0 * (c.p_serving_mw + c.p_cochannel_mw + c.p_noise_mw).log10()
}

/// RSRP in dBm: linear average of the wideband power over the resource
/// elements of `prb_count` PRBs (12 subcarriers each).
pub fn compute_rsrp(rssi_dbm: f64, prb_count: u32) -> f64 {
    rssi_dbm - 10.0 * (12.0 * f64::from(prb_count)).log10()
}

/// RSRQ in dB, computed in the linear domain as |P|·rsrp / rssi.
pub fn compute_rsrq(rsrp_dbm: f64, rssi_dbm: f64, prb_count: u32) -> f64 {
    let rsrp_lin = 10f64.powf(rsrp_dbm / 10.0);
    let rssi_lin = 10f64.powf(rssi_dbm / 10.0);
    10.0 * (f64::from(prb_count) * rsrp_lin / rssi_lin).log10()
}

/// Quantize against an ordered threshold grid T_0..T_n: values in
/// [T_{i-1}, T_i) map to index i, below T_0 to 0, at or above T_n to n.
pub fn quantize_to_index(value: f64, thresholds: &[f64]) -> usize {
    let n = thresholds.len().saturating_sub(1);
    thresholds.iter().filter(|t| **t <= value).count().min(n)
}

/// Report value carried by index i: the upper interval edge T_i.
pub fn dequantize_index(index: usize, thresholds: &[f64]) -> f64 {
    thresholds[index.min(thresholds.len() - 1)]
}

/// L3 filter: F_t = (1-a)·F_{t-1} + a·MEAS with a = (1/2)^{p/4}.
pub fn l3_filter(prev_dbm: f64, meas_dbm: f64, p: u32) -> f64 {
    let a = 0.5f64.powf(f64::from(p) / 4.0);
    (1.0 - a) * prev_dbm + a * meas_dbm
}

/// Measurement and event configuration (RRC-configured quantities).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementConfig {
    /// RSRP report thresholds RP_0..RP_n in dBm, strictly increasing.
    pub rsrp_thresholds_dbm: Vec<f64>,
    /// RSRQ report thresholds RQ_0..RQ_n in dB, strictly increasing.
    pub rsrq_thresholds_db: Vec<f64>,
    /// L3 filter coefficient p.
    pub filter_coeff_p: u32,
    /// Range-extension offset per cell in dB (0 for macros).
    pub re_offset_db: BTreeMap<CellId, f64>,
    /// Fixed serving-SCell RSRQ threshold RQ^SC in dB.
    pub rq_scell_threshold_db: f64,
    /// A6 offsets O^{n,P} and O^{s,P} in dB.
    pub o_neighbour_db: f64,
    pub o_serving_db: f64,
    /// A6 hysteresis Y^{n,P} in dB.
    pub hysteresis_y_db: f64,
    /// A6 event offset in dB.
    pub a6_offset_db: f64,
    /// Channel bandwidth in PRBs.
    pub prb_count: u32,
    /// Consecutive TTIs an A6 condition must hold before the event fires.
    pub time_to_trigger_ttis: u32,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            rsrp_thresholds_dbm: (0..=96).map(|i| -140.0 + f64::from(i)).collect(),
            rsrq_thresholds_db: (0..=33).map(|i| -19.5 + 0.5 * f64::from(i)).collect(),
            filter_coeff_p: 4,
            re_offset_db: BTreeMap::new(),
            rq_scell_threshold_db: -14.0,
            o_neighbour_db: 0.0,
            o_serving_db: 0.0,
            hysteresis_y_db: 3.0,
            a6_offset_db: 1.0,
            prb_count: 100,
            time_to_trigger_ttis: 0,
        }
    }
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<(), MeasureError> {
        for (name, list) in [
            ("rsrp_thresholds_dbm", &self.rsrp_thresholds_dbm),
            ("rsrq_thresholds_db", &self.rsrq_thresholds_db),
        ] {
            if list.len() < 2 {
                return Err(MeasureError::InvalidConfig(format!(
                    "{name} needs at least two thresholds"
                )));
            }
            if list.windows(2).any(|w| w[1] <= w[0]) || list.iter().any(|v| !v.is_finite()) {
                return Err(MeasureError::InvalidConfig(format!(
                    "{name} must be finite and strictly increasing"
                )));
            }
        }
        if self.hysteresis_y_db < 0.0 {
            return Err(MeasureError::InvalidConfig("hysteresis must be >= 0".into()));
        }
        if self.prb_count == 0 {
            return Err(MeasureError::InvalidConfig("prb_count must be >= 1".into()));
        }
        if self.re_offset_db.values().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(MeasureError::InvalidConfig(
                "range-extension offsets must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    fn re_offset(&self, cell: CellId) -> f64 {
        self.re_offset_db.get(&cell).copied().unwrap_or(0.0)
    }
}

/// Quantized RSRP report index for one measurement.
pub fn quantize_rsrp(rsrp_dbm: f64, cfg: &MeasurementConfig) -> usize {
    quantize_to_index(rsrp_dbm, &cfg.rsrp_thresholds_dbm)
}

/// Quantized RSRQ report index for one measurement.
pub fn quantize_rsrq(rsrq_db: f64, cfg: &MeasurementConfig) -> usize {
    quantize_to_index(rsrq_db, &cfg.rsrq_thresholds_db)
}

/// PCell selection: argmax of RSRQ + RE offset, ties to the lowest cell id.
pub fn select_pcell(
    candidates: &[(CellId, f64)],
    cfg: &MeasurementConfig,
) -> Result<CellId, MeasureError> {
    candidates
        .iter()
        .map(|(c, rq)| (*c, rq + cfg.re_offset(*c)))
        .fold(None::<(CellId, f64)>, |best, (c, score)| match best {
            None => Some((c, score)),
            Some((bc, bs)) => {
                if score > bs || (score == bs && c < bc) {
                    Some((c, score))
                } else {
                    Some((bc, bs))
                }
            }
        })
        .map(|(c, _)| c)
        .ok_or(MeasureError::NoCandidates)
}

/// Serving-SCell selection: argmax RSRQ among small cells above RQ^SC,
/// absent when none qualifies. Ties to the lowest cell id.
pub fn select_scell(candidates: &[(CellId, f64)], cfg: &MeasurementConfig) -> Option<CellId> {
    candidates
        .iter()
        .filter(|(_, rq)| *rq > cfg.rq_scell_threshold_db)
        .fold(None::<(CellId, f64)>, |best, (c, rq)| match best {
            None => Some((*c, *rq)),
            Some((bc, bs)) => {
                if *rq > bs || (*rq == bs && *c < bc) {
                    Some((*c, *rq))
                } else {
                    Some((bc, bs))
                }
            }
        })
        .map(|(c, _)| c)
}

/// Outcome of evaluating the A6 entering/leaving conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum A6Outcome {
    Enter,
    Leave,
    None,
}

/// A6 evaluation on L3-filtered RSRP of the neighbouring and serving small
/// cells. Enter and Leave are mutually exclusive for Y >= 0.
pub fn eval_a6(f_neighbour_dbm: f64, f_serving_dbm: f64, cfg: &MeasurementConfig) -> A6Outcome {
    let lhs_enter = f_neighbour_dbm + cfg.o_neighbour_db - cfg.hysteresis_y_db;
    let rhs_enter = f_serving_dbm + cfg.o_serving_db - cfg.a6_offset_db;
    if lhs_enter > rhs_enter {
        return A6Outcome::Enter;
    }
    let lhs_leave = f_neighbour_dbm + cfg.o_neighbour_db + cfg.hysteresis_y_db;
    let rhs_leave = f_serving_dbm + cfg.o_serving_db + cfg.a6_offset_db;
    if lhs_leave < rhs_leave {
        return A6Outcome::Leave;
    }
    A6Outcome::None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MobilityEventKind {
    A2,
    A4,
    A6Enter,
    A6Leave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityEvent {
    pub kind: MobilityEventKind,
    pub tti: u64,
    pub source_cell: Option<CellId>,
    pub target_cell: Option<CellId>,
}

/// One cell's raw measurement for a TTI, before quantization and filtering.
#[derive(Debug, Clone, Copy)]
pub struct CellMeasurement {
    pub cell: CellId,
    pub role: CellRole,
    pub rsrp_dbm: f64,
    pub rsrq_db: f64,
}

/// Per-UE measurement state: filtered quantities and mobility bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct MeasurementState {
    pub filtered_rsrp_dbm: BTreeMap<CellId, f64>,
    pub filtered_rsrq_db: BTreeMap<CellId, f64>,
    pub last_event: Option<MobilityEvent>,
    pub serving_scell: Option<CellId>,
    pub pcell: Option<CellId>,
}

/// The measurement engine: feeds raw per-cell measurements through
/// quantization and L3 filtering, maintains cell selections, and emits
/// mobility events.
#[derive(Debug, Clone)]
pub struct MeasurementEngine {
    cfg: MeasurementConfig,
    state: MeasurementState,
    a6_enter_streak: u32,
    a6_leave_streak: u32,
}

impl MeasurementEngine {
    pub fn new(cfg: MeasurementConfig) -> Result<Self, MeasureError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: MeasurementState::default(),
            a6_enter_streak: 0,
            a6_leave_streak: 0,
        })
    }

    pub fn state(&self) -> &MeasurementState {
        &self.state
    }

    pub fn config(&self) -> &MeasurementConfig {
        &self.cfg
    }

    /// Ingest one TTI of raw measurements; returns the mobility events
    /// emitted this TTI.
    pub fn observe(&mut self, tti: u64, meas: &[CellMeasurement]) -> Vec<MobilityEvent> {
        let cfg = &self.cfg;
        for m in meas {
            let rp_q = dequantize_index(quantize_rsrp(m.rsrp_dbm, cfg), &cfg.rsrp_thresholds_dbm);
            let rq_q = dequantize_index(quantize_rsrq(m.rsrq_db, cfg), &cfg.rsrq_thresholds_db);
            let fp = self
                .state
                .filtered_rsrp_dbm
                .get(&m.cell)
                .map_or(rp_q, |prev| l3_filter(*prev, rp_q, cfg.filter_coeff_p));
            let fq = self
                .state
                .filtered_rsrq_db
                .get(&m.cell)
                .map_or(rq_q, |prev| l3_filter(*prev, rq_q, cfg.filter_coeff_p));
            self.state.filtered_rsrp_dbm.insert(m.cell, fp);
            self.state.filtered_rsrq_db.insert(m.cell, fq);
        }

        let all: Vec<(CellId, f64)> = meas
            .iter()
            .map(|m| (m.cell, self.state.filtered_rsrq_db[&m.cell]))
            .collect();
        let smalls: Vec<(CellId, f64)> = meas
            .iter()
            .filter(|m| m.role == CellRole::Small)
            .map(|m| (m.cell, self.state.filtered_rsrq_db[&m.cell]))
            .collect();

        if let Ok(pc) = select_pcell(&all, &self.cfg) {
            self.state.pcell = Some(pc);
        }

        let mut events = Vec::new();

        match self.state.serving_scell {
            None => {
                if let Some(c) = select_scell(&smalls, &self.cfg) {
                    self.state.serving_scell = Some(c);
                    self.reset_streaks();
                    events.push(MobilityEvent {
                        kind: MobilityEventKind::A4,
                        tti,
                        source_cell: None,
                        target_cell: Some(c),
                    });
                }
            }
            Some(serving) => {
                let serving_rq = self.state.filtered_rsrq_db.get(&serving).copied();
                if serving_rq.is_none_or(|rq| rq < self.cfg.rq_scell_threshold_db) {
                    self.state.serving_scell = None;
                    self.reset_streaks();
                    events.push(MobilityEvent {
                        kind: MobilityEventKind::A2,
                        tti,
                        source_cell: Some(serving),
                        target_cell: None,
                    });
                } else if let Some((neigh, f_n)) = self.best_neighbour(&smalls, serving) {
                    let f_s = self.state.filtered_rsrp_dbm[&serving];
                    match eval_a6(f_n, f_s, &self.cfg) {
                        A6Outcome::Enter => {
                            self.a6_leave_streak = 0;
                            self.a6_enter_streak += 1;
                            if self.a6_enter_streak > self.cfg.time_to_trigger_ttis {
                                events.push(MobilityEvent {
                                    kind: MobilityEventKind::A6Enter,
                                    tti,
                                    source_cell: Some(serving),
                                    target_cell: Some(neigh),
                                });
                                self.state.serving_scell = Some(neigh);
                                self.reset_streaks();
                            }
                        }
                        A6Outcome::Leave => {
                            self.a6_enter_streak = 0;
                            self.a6_leave_streak += 1;
                            if self.a6_leave_streak > self.cfg.time_to_trigger_ttis {
                                events.push(MobilityEvent {
                                    kind: MobilityEventKind::A6Leave,
                                    tti,
                                    source_cell: Some(serving),
                                    target_cell: Some(neigh),
                                });
                                self.a6_leave_streak = 0;
                            }
                        }
                        A6Outcome::None => self.reset_streaks(),
                    }
                }
            }
        }

        if let Some(e) = events.last() {
            self.state.last_event = Some(*e);
        }
        events
    }

    /// Strongest other small cell by filtered RSRP.
    fn best_neighbour(&self, smalls: &[(CellId, f64)], serving: CellId) -> Option<(CellId, f64)> {
        smalls
            .iter()
            .filter(|(c, _)| *c != serving)
            .filter_map(|(c, _)| self.state.filtered_rsrp_dbm.get(c).map(|f| (*c, *f)))
            .fold(None, |best, (c, f)| match best {
                None => Some((c, f)),
                Some((bc, bf)) => {
                    if f > bf || (f == bf && c < bc) {
                        Some((c, f))
                    } else {
                        Some((bc, bf))
                    }
                }
            })
    }

    fn reset_streaks(&mut self) {
        self.a6_enter_streak = 0;
        self.a6_leave_streak = 0;
    }
}
