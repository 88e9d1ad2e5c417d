//! Discrete-time simulator and control library for predictive
//! multi-connectivity downlink flow control.
//!
//! A UE served by a macro cell and two street-level small cells is modelled
//! as a four-queue stochastic network (MgNB, SgNB1, SgNB2, UE sink) joined
//! by wireless and wired links. Per TTI the library runs the UE measurement
//! pipeline (RSSI/RSRP/RSRQ, L3 filtering, A2/A4/A6 events), turns per-PRB
//! SNR into sub-band CQI reports via EESM, sizes transport blocks from the
//! configured MCS, and lets a forwarding policy pick which links to fire.
//! The predictive policy minimizes expected quadratic queue cost over a
//! receding horizon, with the wireless evolution captured by a six-state
//! discrete-time Markov chain over per-link success matrices.
//!
//! Modules follow the pipeline:
//!
//! - [`radio`]: measurements, filtering, cell selection, mobility events
//! - [`tables`] / [`linkadapt`]: CQI/MCS/TBS tables, EESM, success curves
//! - [`dtmc`]: the channel predictor
//! - [`queue`]: the queueing network and its feasible control sets
//! - [`policy`]: the receding-horizon controller and baselines
//! - [`scenario`] / [`sim`] / [`kpi`]: scenario files, the per-TTI loop,
//!   KPI export

pub mod dtmc;
pub mod kpi;
pub mod linkadapt;
pub mod policy;
pub mod queue;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod tables;

pub use dtmc::{estimate_transitions, map_initial_state, DtmcModel, StateMapper};
pub use kpi::{compute_throughput, KpiTrace, RunMetadata, KPI_CSV_HEADER};
pub use linkadapt::{
    compute_tbs, effective_sinr, select_top_subbands, subband_snr, success_prob, CqiReport,
    EesmConfig, SubbandGrid, TbsResult,
};
pub use policy::{
    baseline_autonomous_a6, baseline_maxweight, baseline_single_connectivity, evaluate_cost,
    evaluate_cost_exact, solve, CostWeights, PolicyDecision,
};
pub use queue::{
    build_routing_matrix, expected_step, feasible_controls, ArrivalProcess, Constituency,
    ConstituencyPreset, ControlVector, LinkKind, LinkSpec, QueueNetwork, RoutingMatrix,
};
pub use radio::{
    compute_rsrp, compute_rsrq, compute_rssi, eval_a6, l3_filter, select_pcell, select_scell,
    CellId, CellRole, MeasurementConfig, MeasurementEngine, MeasurementState, MobilityEvent,
    MobilityEventKind, PowerComponents,
};
pub use scenario::{PolicyKind, ScenarioConfig};
pub use sim::{run, run_with, sweep, RunResult, SweepResult};
pub use tables::{CqiEntry, LinkAdaptTables, McsEntry};
