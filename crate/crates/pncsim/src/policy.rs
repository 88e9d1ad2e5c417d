//! Forwarding policies: the receding-horizon predictive controller (exact
//! branch-and-bound over binary control trajectories) and the comparison
//! baselines.
//!
//! The predictive cost is the expected quadratic queue cost over the horizon,
//! conditional on the current queue state and DTMC channel state. The
//! default evaluation is certainty-equivalent (mean dynamics under the DTMC
//! marginals); an exact enumerative expectation over Markov paths and
//! Bernoulli outcomes is provided for short horizons as a validation oracle.

use crate::dtmc::DtmcModel;
use crate::queue::{
    expected_step, feasible_controls, Constituency, ControlVector, RoutingMatrix, LINK_COUNT,
    NODE_COUNT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("trajectory length {got} does not match horizon {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("exact cost evaluation supports horizons up to {max}, got {got}")]
    ExactHorizonTooLarge { got: usize, max: usize },
}

/// Quadratic cost weights and prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Diagonal of Q. The UE sink is unweighted by default: it drains every
    /// TTI, and penalizing delivered bits would anti-optimize throughput.
    pub q_diag: [f64; NODE_COUNT],
    pub horizon: usize,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q_diag: [1.0, 1.0, 1.0, 0.0],
            horizon: 4,
        }
    }
}

/// The controller's output for one TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub u_now: ControlVector,
    pub predicted_cost: f64,
    pub planned_trajectory: Vec<ControlVector>,
}

/// Per-step diagnostics of a trajectory evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCostBreakdown {
    pub expected_queues: Vec<[f64; NODE_COUNT]>,
    pub per_step_cost: Vec<f64>,
    pub total: f64,
}

fn quad(q: &[f64; NODE_COUNT], w: &[f64; NODE_COUNT]) -> f64 {
    q.iter().zip(w).map(|(x, wk)| wk * x * x).sum()
}

/// Certainty-equivalent trajectory cost: mean dynamics with the per-step
/// expected success matrices E[M_{t+i} | σ_t] and mean arrivals.
pub fn evaluate_cost(
    trajectory: &[ControlVector],
    q0: &[u64; NODE_COUNT],
    dtmc: &DtmcModel,
    weights: &CostWeights,
    r: &RoutingMatrix,
    arrivals_mean: &[f64; NODE_COUNT],
) -> Result<f64, PolicyError> {
    Ok(evaluate_cost_breakdown(trajectory, q0, dtmc, weights, r, arrivals_mean)?.total)
}

/// Certainty-equivalent cost with per-step expected queues and contributions.
pub fn evaluate_cost_breakdown(
    trajectory: &[ControlVector],
    q0: &[u64; NODE_COUNT],
    dtmc: &DtmcModel,
    weights: &CostWeights,
    r: &RoutingMatrix,
    arrivals_mean: &[f64; NODE_COUNT],
) -> Result<TrajectoryCostBreakdown, PolicyError> {
    if trajectory.len() != weights.horizon {
        return Err(PolicyError::LengthMismatch {
            got: trajectory.len(),
            expected: weights.horizon,
        });
    }
    let mut qbar = [0.0; NODE_COUNT];
    for (o, v) in qbar.iter_mut().zip(q0) {
        *o = *v as f64;
    }
    let mut expected_queues = Vec::with_capacity(trajectory.len());
    let mut per_step_cost = Vec::with_capacity(trajectory.len());
    let mut total = 0.0;
    for (i, u) in trajectory.iter().enumerate() {
        let mbar = dtmc.expected_success_matrix(i);
        qbar = expected_step(&qbar, u, r, &mbar, arrivals_mean);
        let c = quad(&qbar, &weights.q_diag);
        expected_queues.push(qbar);
        per_step_cost.push(c);
        total += c;
    }
    Ok(TrajectoryCostBreakdown {
        expected_queues,
        per_step_cost,
        total,
    })
}

/// Largest horizon the exact enumerative expectation accepts.
pub const EXACT_MODE_MAX_HORIZON: usize = 3;

/// Exact trajectory cost: enumerates every Markov state path and every
/// Bernoulli outcome of the activated links, averaging the realized
/// quadratic cost. Arrivals enter at their mean (the cost is conditional on
/// the arrival information available at decision time).
pub fn evaluate_cost_exact(
    trajectory: &[ControlVector],
    q0: &[u64; NODE_COUNT],
    dtmc: &DtmcModel,
    weights: &CostWeights,
    r: &RoutingMatrix,
    arrivals_mean: &[f64; NODE_COUNT],
) -> Result<f64, PolicyError> {
    if trajectory.len() != weights.horizon {
        return Err(PolicyError::LengthMismatch {
            got: trajectory.len(),
            expected: weights.horizon,
        });
    }
    if trajectory.len() > EXACT_MODE_MAX_HORIZON {
        return Err(PolicyError::ExactHorizonTooLarge {
            got: trajectory.len(),
            max: EXACT_MODE_MAX_HORIZON,
        });
    }
    let mut qbar = [0.0; NODE_COUNT];
    for (o, v) in qbar.iter_mut().zip(q0) {
        *o = *v as f64;
    }
    let mut total = 0.0;
    descend_exact(
        trajectory,
        dtmc,
        weights,
        r,
        arrivals_mean,
        0,
        dtmc.current_state(),
        qbar,
        1.0,
        &mut total,
    );
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn descend_exact(
    trajectory: &[ControlVector],
    dtmc: &DtmcModel,
    weights: &CostWeights,
    r: &RoutingMatrix,
    arrivals_mean: &[f64; NODE_COUNT],
    depth: usize,
    state: usize,
    q: [f64; NODE_COUNT],
    prob: f64,
    total: &mut f64,
) {
    if depth == trajectory.len() {
        return;
    }
    let m = dtmc.success_matrix(state);
    let active: Vec<usize> = (0..r.column_count())
        .filter(|j| trajectory[depth].is_active(*j))
        .collect();
    // all success/failure combinations over the activated columns' arms
    let arm_count: usize = active.iter().map(|j| r.columns[*j].arms.len()).sum();
    for combo in 0u32..(1 << arm_count) {
        let mut p = prob;
        let mut q2 = q;
        let mut bit = 0;
        for j in &active {
            let col = &r.columns[*j];
            let mut any = false;
            for arm in &col.arms {
                let success = (combo >> bit) & 1 == 1;
                bit += 1;
                let ps = m[arm.link];
                p *= if success { ps } else { 1.0 - ps };
                if success {
                    any = true;
                    q2[arm.dest] += col.amount as f64;
                }
            }
            if any {
                q2[col.source] -= col.amount as f64;
            }
        }
        if p == 0.0 {
            continue;
        }
        for (o, a) in q2.iter_mut().zip(arrivals_mean) {
            *o += a;
        }
        *total += p * quad(&q2, &weights.q_diag);
        if depth + 1 < trajectory.len() {
            let row = &dtmc.transition_matrix()[state - 1];
            for (next, pt) in row.iter().enumerate() {
                if *pt == 0.0 {
                    continue;
                }
                descend_exact(
                    trajectory,
                    dtmc,
                    weights,
                    r,
                    arrivals_mean,
                    depth + 1,
                    next + 1,
                    q2,
                    p * pt,
                    total,
                );
            }
        }
    }
}

fn floored(q: &[f64; NODE_COUNT]) -> [f64; NODE_COUNT] {
    let mut out = *q;
    for v in out.iter_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Summed immediate-delta column of a control (integer-exact).
fn control_need(dense: &[[i64; NODE_COUNT]], u: &ControlVector) -> [i64; NODE_COUNT] {
    let mut need = [0i64; NODE_COUNT];
    for (j, col) in dense.iter().enumerate() {
        if u.is_active(j) {
            for (n, c) in need.iter_mut().zip(col) {
                *n += c;
            }
        }
    }
    need
}

fn feasible_need(q: &[f64; NODE_COUNT], need: &[i64; NODE_COUNT]) -> bool {
    q.iter().zip(need).all(|(v, n)| v + *n as f64 >= 0.0)
}

/// Within-horizon feasibility of a control at an expected queue point
/// (floored at zero): the check `solve` applies at every inner step.
pub fn horizon_feasible(qbar: &[f64; NODE_COUNT], r: &RoutingMatrix, u: &ControlVector) -> bool {
    feasible_need(&floored(qbar), &control_need(&r.immediate_dense(), u))
}

/// Candidate controls passing the constituency constraint alone, in the
/// canonical (active count, lexicographic) order shared with
/// [`feasible_controls`].
pub fn constituency_candidates(ncols: usize, a: &Constituency) -> Vec<ControlVector> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << ncols) {
        let v = ControlVector((0..ncols).map(|j| ((mask >> j) & 1) as u8).collect());
        if a.permits(&v) {
            out.push(v);
        }
    }
    out.sort_by(|x, y| x.active_count().cmp(&y.active_count()).then(x.cmp(y)));
    out
}

/// Receding-horizon solve: exhaustive depth-first search over feasible
/// control trajectories with branch-and-bound pruning on the monotone
/// partial cost. Inner-step feasibility is checked against expected queues
/// floored at zero; the first step's check coincides with the exact integer
/// feasibility of the current state. Ties resolve to the first minimizer in
/// canonical order (fewest active links, then lexicographic, earliest slot
/// most significant).
pub fn solve(
    q: &[u64; NODE_COUNT],
    dtmc: &DtmcModel,
    weights: &CostWeights,
    r: &RoutingMatrix,
    a: &Constituency,
    arrivals_mean: &[f64; NODE_COUNT],
) -> PolicyDecision {
    let horizon = weights.horizon.max(1);
    let candidates = constituency_candidates(r.column_count(), a);
    let dense = r.immediate_dense();
    let needs: Vec<[i64; NODE_COUNT]> = candidates
        .iter()
        .map(|c| control_need(&dense, c))
        .collect();
    let mbars: Vec<[f64; LINK_COUNT]> =
        (0..horizon).map(|i| dtmc.expected_success_matrix(i)).collect();

    // completion bound ingredients: the weighted queue mass s = w·q obeys
    // s' >= s + min_cand(w·Δ) per step, and w·q q >= (max(0,s))²/Σw by
    // Cauchy-Schwarz, so the remaining cost is bounded from below without
    // reference to the path taken
    let wsum: f64 = weights.q_diag.iter().sum();
    let wdelta_min: Vec<f64> = (0..horizon)
        .map(|d| {
            candidates
                .iter()
                .map(|c| {
                    let delta = expected_step(&[0.0; NODE_COUNT], c, r, &mbars[d], arrivals_mean);
                    delta.iter().zip(&weights.q_diag).map(|(x, w)| w * x).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let mut q0 = [0.0; NODE_COUNT];
    for (o, v) in q0.iter_mut().zip(q) {
        *o = *v as f64;
    }

    struct Search<'a> {
        candidates: &'a [ControlVector],
        needs: &'a [[i64; NODE_COUNT]],
        mbars: &'a [[f64; LINK_COUNT]],
        wdelta_min: &'a [f64],
        wsum: f64,
        r: &'a RoutingMatrix,
        w: [f64; NODE_COUNT],
        abar: [f64; NODE_COUNT],
        horizon: usize,
        best_cost: Option<f64>,
        best_path: Vec<usize>,
        path: Vec<usize>,
    }

    impl Search<'_> {
        fn dfs(&mut self, depth: usize, qbar: [f64; NODE_COUNT], partial: f64) {
            // partial cost is monotone in depth, and a tie can never displace
            // the earlier-found incumbent, so >= prunes without losing the
            // canonical-order optimum
            if let Some(bc) = self.best_cost {
                if partial >= bc {
                    return;
                }
                if self.wsum > 0.0 {
                    let mut s: f64 =
                        qbar.iter().zip(&self.w).map(|(q, w)| w * q).sum();
                    let mut acc = 0.0;
                    for k in depth..self.horizon {
                        s += self.wdelta_min[k];
                        let sp = s.max(0.0);
                        acc += sp * sp;
                    }
                    // shrink absorbs the bound's own float rounding
                    if partial + acc / self.wsum * (1.0 - 1e-9) >= bc {
                        return;
                    }
                }
            }
            if depth == self.horizon {
                self.best_cost = Some(partial);
                self.best_path.clear();
                self.best_path.extend_from_slice(&self.path);
                return;
            }
            let qf = floored(&qbar);
            for (ci, cand) in self.candidates.iter().enumerate() {
                if !feasible_need(&qf, &self.needs[ci]) {
                    continue;
                }
                let q2 = expected_step(&qbar, cand, self.r, &self.mbars[depth], &self.abar);
                let step_cost = quad(&q2, &self.w);
                self.path.push(ci);
                self.dfs(depth + 1, q2, partial + step_cost);
                self.path.pop();
            }
        }
    }

    let mut search = Search {
        candidates: &candidates,
        needs: &needs,
        mbars: &mbars,
        wdelta_min: &wdelta_min,
        wsum,
        r,
        w: weights.q_diag,
        abar: *arrivals_mean,
        horizon,
        best_cost: None,
        best_path: Vec::new(),
        path: Vec::with_capacity(horizon),
    };
    search.dfs(0, q0, 0.0);

    // the zero trajectory is always feasible, so a best path exists
    let planned: Vec<ControlVector> = search
        .best_path
        .iter()
        .map(|ci| candidates[*ci].clone())
        .collect();
    PolicyDecision {
        u_now: planned
            .first()
            .cloned()
            .unwrap_or_else(|| ControlVector::zeros(r.column_count())),
        predicted_cost: search.best_cost.unwrap_or(0.0),
        planned_trajectory: planned,
    }
}

/// Myopic one-step comparator: the feasible control minimizing the H=1
/// certainty-equivalent cost, with the same canonical tie-break as `solve`.
pub fn baseline_maxweight(
    q: &[u64; NODE_COUNT],
    r: &RoutingMatrix,
    m_now: &[f64; LINK_COUNT],
    a: &Constituency,
    weights: &CostWeights,
    arrivals_mean: &[f64; NODE_COUNT],
) -> ControlVector {
    let mut q0 = [0.0; NODE_COUNT];
    for (o, v) in q0.iter_mut().zip(q) {
        *o = *v as f64;
    }
    let mut best: Option<(f64, ControlVector)> = None;
    for cand in feasible_controls(q, r, a) {
        let q1 = expected_step(&q0, &cand, r, m_now, arrivals_mean);
        let cost = quad(&q1, &weights.q_diag);
        if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
            best = Some((cost, cand));
        }
    }
    best.map(|(_, u)| u)
        .unwrap_or_else(|| ControlVector::zeros(r.column_count()))
}

/// The serving small cell's forwarding and downlink columns, as seen by the
/// autonomous baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServingPath {
    pub xn_column: usize,
    pub dl_column: usize,
}

/// Autonomous small-cell baseline: forward over Xn to the serving small cell
/// every TTI and activate that cell's downlink, each when the source queue
/// covers the transfer.
pub fn baseline_autonomous_a6(
    q: &[u64; NODE_COUNT],
    r: &RoutingMatrix,
    a: &Constituency,
    serving: Option<ServingPath>,
) -> ControlVector {
    let mut u = ControlVector::zeros(r.column_count());
    let Some(path) = serving else {
        return u;
    };
    let xn = &r.columns[path.xn_column];
    if xn.amount > 0 && q[xn.source] >= xn.amount {
        u.0[path.xn_column] = 1;
    }
    let dl = &r.columns[path.dl_column];
    if dl.amount > 0 && q[dl.source] >= dl.amount {
        u.0[path.dl_column] = 1;
    }
    if !a.permits(&u) {
        // drop the downlink leg first; the forwarding leg keeps data moving
        u.0[path.dl_column] = 0;
    }
    u
}

/// Single-connectivity reference: only the direct MgNB->UE link, when funded.
pub fn baseline_single_connectivity(q: &[u64; NODE_COUNT], r: &RoutingMatrix) -> ControlVector {
    let mut u = ControlVector::zeros(r.column_count());
    let col = &r.columns[0];
    if col.amount > 0 && q[col.source] >= col.amount {
        u.0[0] = 1;
    }
    u
}
