//! Discrete-time Markov chain over channel states.
//!
//! Each state pins a diagonal matrix of per-link success probabilities; the
//! chain predicts how those matrices evolve. States are 1-based throughout
//! the public API (σ ∈ {1..n}).

use crate::queue::LINK_COUNT;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-stochasticity tolerance enforced on every transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DtmcError {
    #[error("invalid DTMC: {0}")]
    Invalid(String),
    #[error("DTMC file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

/// The channel predictor: states {1..n}, row-stochastic transition matrix,
/// one per-link success vector per state, and the current state σ_t.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DtmcModelFile", into = "DtmcModelFile")]
pub struct DtmcModel {
    transition: Vec<Vec<f64>>,
    success_matrices: Vec<[f64; LINK_COUNT]>,
    current_state: usize,
}

/// Serialized form (import/export for reproducing a specific run).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DtmcModelFile {
    pub transition: Vec<Vec<f64>>,
    pub success_matrices: Vec<Vec<f64>>,
    pub current_state: usize,
}

impl From<DtmcModel> for DtmcModelFile {
    fn from(m: DtmcModel) -> Self {
        DtmcModelFile {
            transition: m.transition,
            success_matrices: m.success_matrices.iter().map(|r| r.to_vec()).collect(),
            current_state: m.current_state,
        }
    }
}

impl TryFrom<DtmcModelFile> for DtmcModel {
    type Error = DtmcError;
    fn try_from(f: DtmcModelFile) -> Result<Self, DtmcError> {
        let mats = f
            .success_matrices
            .iter()
            .map(|r| {
                <[f64; LINK_COUNT]>::try_from(r.as_slice()).map_err(|_| {
                    DtmcError::Invalid(format!(
                        "success matrix must have {LINK_COUNT} diagonal entries"
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        DtmcModel::new(f.transition, mats, f.current_state)
    }
}

impl DtmcModel {
    pub fn new(
        transition: Vec<Vec<f64>>,
        success_matrices: Vec<[f64; LINK_COUNT]>,
        initial_state: usize,
    ) -> Result<Self, DtmcError> {
        let n = transition.len();
        if n == 0 {
            return Err(DtmcError::Invalid("no states".into()));
        }
        if success_matrices.len() != n {
            return Err(DtmcError::Invalid(format!(
                "{n} states but {} success matrices",
                success_matrices.len()
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(DtmcError::Invalid(format!("row {i} is not length {n}")));
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0 && *p <= 1.0)) {
                return Err(DtmcError::Invalid(format!("row {i} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(DtmcError::Invalid(format!(
                    "row {i} sums to {sum}, not 1 within {ROW_SUM_TOL}"
                )));
            }
        }
        for (i, m) in success_matrices.iter().enumerate() {
            if m.iter().any(|p| !(p.is_finite() && *p >= 0.0 && *p <= 1.0)) {
                return Err(DtmcError::Invalid(format!(
                    "success matrix {} has entries outside [0,1]",
                    i + 1
                )));
            }
        }
        if initial_state == 0 || initial_state > n {
            return Err(DtmcError::Invalid(format!(
                "initial state {initial_state} outside 1..={n}"
            )));
        }
        Ok(Self {
            transition,
            success_matrices,
            current_state: initial_state,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, DtmcError> {
        let f: DtmcModelFile = serde_json::from_str(text)?;
        DtmcModel::try_from(f)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&DtmcModelFile::from(self.clone()))
            .expect("DTMC serialization cannot fail")
    }

    pub fn state_count(&self) -> usize {
        self.transition.len()
    }

    pub fn current_state(&self) -> usize {
        self.current_state
    }

    pub fn set_state(&mut self, state: usize) -> Result<(), DtmcError> {
        if state == 0 || state > self.state_count() {
            return Err(DtmcError::Invalid(format!("state {state} out of range")));
        }
        self.current_state = state;
        Ok(())
    }

    pub fn transition_matrix(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Swap in a freshly derived per-state success matrix set.
    pub fn set_success_matrices(
        &mut self,
        mats: Vec<[f64; LINK_COUNT]>,
    ) -> Result<(), DtmcError> {
        if mats.len() != self.state_count() {
            return Err(DtmcError::Invalid(format!(
                "{} states but {} success matrices",
                self.state_count(),
                mats.len()
            )));
        }
        if mats
            .iter()
            .any(|m| m.iter().any(|p| !(p.is_finite() && *p >= 0.0 && *p <= 1.0)))
        {
            return Err(DtmcError::Invalid("success entries outside [0,1]".into()));
        }
        self.success_matrices = mats;
        Ok(())
    }

    pub fn success_matrix(&self, state: usize) -> &[f64; LINK_COUNT] {
        &self.success_matrices[state - 1]
    }

    /// Sample the next state from the current row and advance σ_t.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let row = &self.transition[self.current_state - 1];
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = self.state_count(); // fall through to the last state
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if draw < acc {
                next = j + 1;
                break;
            }
        }
        self.current_state = next;
        next
    }

    /// Distribution over states `lookahead` steps ahead of the current state:
    /// the σ_t row of P^i (P^0 = identity).
    pub fn marginal(&self, lookahead: usize) -> Vec<f64> {
        let n = self.state_count();
        let mut dist = vec![0.0; n];
        dist[self.current_state - 1] = 1.0;
        for _ in 0..lookahead {
            let mut next = vec![0.0; n];
            for (i, w) in dist.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                for (j, p) in self.transition[i].iter().enumerate() {
                    next[j] += w * p;
                }
            }
            dist = next;
        }
        dist
    }

    /// E[M_{t+i} | σ_t]: the marginal-weighted mixture of the per-state
    /// success matrices.
    pub fn expected_success_matrix(&self, lookahead: usize) -> [f64; LINK_COUNT] {
        let dist = self.marginal(lookahead);
        let mut out = [0.0; LINK_COUNT];
        for (j, w) in dist.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (k, m) in self.success_matrices[j].iter().enumerate() {
                out[k] += w * m;
            }
        }
        out
    }
}

/// Maximum-likelihood transition estimate from a state trace with additive
/// smoothing; rows never observed (and smoothing 0) come out uniform.
pub fn estimate_transitions(
    trace: &[usize],
    state_count: usize,
    smoothing: f64,
) -> Result<Vec<Vec<f64>>, DtmcError> {
    if trace.len() < 2 {
        return Err(DtmcError::Invalid("trace must have at least 2 states".into()));
    }
    if smoothing < 0.0 || !smoothing.is_finite() {
        return Err(DtmcError::Invalid("smoothing must be finite and >= 0".into()));
    }
    if trace.iter().any(|s| *s == 0 || *s > state_count) {
        return Err(DtmcError::Invalid("trace contains out-of-range states".into()));
    }
    let mut counts = vec![vec![smoothing; state_count]; state_count];
    for w in trace.windows(2) {
        counts[w[0] - 1][w[1] - 1] += 1.0;
    }
    for row in counts.iter_mut() {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for p in row.iter_mut() {
                *p /= sum;
            }
        } else {
            row.fill(1.0 / state_count as f64);
        }
        // exact renormalization keeps every emitted row stochastic within tolerance
        let sum: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    Ok(counts)
}

/// Alg.-2 style hash map from a CQI-region triple to the initial DTMC state.
///
/// Regions are CQI terciles {1-5, 6-10, 11-15} for the macro cell and the
/// serving small cell, crossed with the serving/neighbour relation
/// (neighbour <= serving, neighbour > serving). The default table ignores
/// the macro band and lays out serving tercile x relation row-major onto
/// states 1..6; it is a documented stand-in, fully replaceable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMapper {
    /// Indexed by ((mcell_tercile * 3) + scell_tercile) * 2 + relation.
    table: Vec<usize>,
    state_count: usize,
}

fn tercile(cqi: u8) -> usize {
    match cqi {
        0..=5 => 0,
        6..=10 => 1,
        _ => 2,
    }
}

impl StateMapper {
    /// Default 3x2 construction over six states.
    pub fn default_tercile() -> Self {
        let mut table = vec![0usize; 18];
        for m in 0..3 {
            for s in 0..3 {
                for rel in 0..2 {
                    table[(m * 3 + s) * 2 + rel] = s * 2 + rel + 1;
                }
            }
        }
        Self {
            table,
            state_count: 6,
        }
    }

    /// Mapper sending every triple to the same state.
    pub fn constant(state: usize, state_count: usize) -> Result<Self, DtmcError> {
        if state == 0 || state > state_count {
            return Err(DtmcError::Invalid(format!("state {state} out of range")));
        }
        Ok(Self {
            table: vec![state; 18],
            state_count,
        })
    }

    pub fn from_table(table: Vec<usize>, state_count: usize) -> Result<Self, DtmcError> {
        if table.len() != 18 {
            return Err(DtmcError::Invalid(format!(
                "mapper table must have 18 entries, got {}",
                table.len()
            )));
        }
        if table.iter().any(|s| *s == 0 || *s > state_count) {
            return Err(DtmcError::Invalid("mapper image outside state range".into()));
        }
        Ok(Self { table, state_count })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn map(&self, cqi_mcell: u8, cqi_scell: u8, cqi_neighbour: u8) -> usize {
        let relation = usize::from(cqi_neighbour > cqi_scell);
        let idx = (tercile(cqi_mcell) * 3 + tercile(cqi_scell)) * 2 + relation;
        self.table[idx]
    }

    /// Representative (serving CQI, neighbour CQI) pair for each state of the
    /// default construction, used to derive per-state success matrices: the
    /// serving tercile midpoint, and the neighbour offset by the relation.
    pub fn representative_cqis(state: usize) -> (u8, u8) {
        let s = state - 1;
        let serving = [3u8, 8, 13][s / 2];
        let neighbour = if s % 2 == 1 {
            (serving + 3).min(15)
        } else {
            serving.saturating_sub(3).max(1)
        };
        (serving, neighbour)
    }
}

/// σ0 lookup at the A6 entering trigger.
pub fn map_initial_state(
    cqi_mcell: u8,
    cqi_scell: u8,
    cqi_neighbour: u8,
    mapper: &StateMapper,
) -> usize {
    mapper.map(cqi_mcell, cqi_scell, cqi_neighbour)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_m() -> [f64; LINK_COUNT] {
        [1.0, 1.0, 0.5, 1.0, 0.5]
    }

    fn model(p: Vec<Vec<f64>>, start: usize) -> DtmcModel {
        let n = p.len();
        DtmcModel::new(p, vec![uniform_m(); n], start).unwrap()
    }

    #[test]
    fn mapper_defaults() {
        let m = StateMapper::default_tercile();
        // low serving tercile, neighbour not better -> state 1
        assert_eq!(map_initial_state(7, 3, 2, &m), 1);
        // high tercile, neighbour better -> state 6
        assert_eq!(map_initial_state(2, 12, 15, &m), 6);
        // macro band is ignored by the default table
        assert_eq!(map_initial_state(1, 8, 9, &m), map_initial_state(15, 8, 9, &m));
        let c = StateMapper::constant(4, 6).unwrap();
        for (a, b, n) in [(0, 0, 0), (15, 15, 15), (3, 9, 12)] {
            assert_eq!(c.map(a, b, n), 4);
        }
    }

    #[test]
    fn identity_chain_never_moves() {
        let eye = (0..6)
            .map(|i| (0..6).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let mut m = model(eye, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(m.step(&mut rng), 3);
        }
        assert_eq!(m.marginal(0), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.marginal(17), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_rows_sample_uniformly() {
        let p = vec![vec![1.0 / 6.0; 6]; 6];
        let mut m = model(p, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u64; 6];
        let n = 100_000;
        for _ in 0..n {
            counts[m.step(&mut rng) - 1] += 1;
        }
        let l1: f64 = counts
            .iter()
            .map(|c| (*c as f64 / n as f64 - 1.0 / 6.0).abs())
            .sum();
        assert!(l1 < 0.02, "l1 error {l1}");
    }

    #[test]
    fn block_chain_never_crosses() {
        let mut p = vec![vec![0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = 1.0 / 3.0;
                p[i + 3][j + 3] = 1.0 / 3.0;
            }
        }
        let mut m = model(p, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            assert!(m.step(&mut rng) <= 3);
        }
    }

    #[test]
    fn marginal_semigroup() {
        let p = vec![
            vec![0.5, 0.3, 0.2, 0.0, 0.0, 0.0],
            vec![0.1, 0.6, 0.1, 0.1, 0.1, 0.0],
            vec![0.2, 0.2, 0.2, 0.2, 0.1, 0.1],
            vec![0.0, 0.1, 0.3, 0.4, 0.1, 0.1],
            vec![0.1, 0.1, 0.1, 0.1, 0.5, 0.1],
            vec![0.3, 0.0, 0.0, 0.1, 0.1, 0.5],
        ];
        let m = model(p.clone(), 4);
        for i in 0..20 {
            let lhs = m.marginal(i + 1);
            let prev = m.marginal(i);
            let mut rhs = vec![0.0; 6];
            for (a, w) in prev.iter().enumerate() {
                for (b, q) in p[a].iter().enumerate() {
                    rhs[b] += w * q;
                }
            }
            for (x, y) in lhs.iter().zip(&rhs) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((lhs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_converges_to_stationary() {
        // 2x2 chain with known stationary distribution (embedded in new())
        let p = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        // pi solves pi P = pi: pi = (0.75, 0.25)
        let m = DtmcModel::new(p, vec![uniform_m(); 2], 1).unwrap();
        let dist = m.marginal(200);
        assert!((dist[0] - 0.75).abs() < 1e-6);
        assert!((dist[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn expected_success_matrix_mixes() {
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let m1 = [1.0, 1.0, 0.8, 1.0, 0.2];
        let m2 = [1.0, 1.0, 0.4, 1.0, 0.6];
        let m = DtmcModel::new(p, vec![m1, m2], 1).unwrap();
        assert_eq!(m.expected_success_matrix(0), m1);
        // lookahead 1 from state 1 lands in state 2 with certainty
        assert_eq!(m.expected_success_matrix(1), m2);
        // two effective states with a half-half mixture
        let p = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let m = DtmcModel::new(p, vec![m1, m2], 1).unwrap();
        let e = m.expected_success_matrix(1);
        assert!((e[2] - 0.6).abs() < 1e-12);
        assert!((e[4] - 0.4).abs() < 1e-12);
        // wired entries stay exactly 1
        assert_eq!(e[0], 1.0);
        assert_eq!(e[1], 1.0);
        assert_eq!(e[3], 1.0);
    }

    #[test]
    fn estimate_from_traces() {
        // constant trace: observed row is an indicator, the rest uniform
        let p = estimate_transitions(&[1, 1, 1, 1], 3, 0.0).unwrap();
        assert_eq!(p[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(p[1], vec![1.0 / 3.0; 3]);
        assert_eq!(p[2], vec![1.0 / 3.0; 3]);

        // alternating trace
        let p = estimate_transitions(&[1, 2, 1, 2, 1, 2], 2, 0.0).unwrap();
        assert_eq!(p[0], vec![0.0, 1.0]);
        assert_eq!(p[1], vec![1.0, 0.0]);

        // heavy smoothing approaches uniform
        let p = estimate_transitions(&[1, 2, 1, 2], 2, 1e9).unwrap();
        assert!((p[0][0] - 0.5).abs() < 1e-6);

        assert!(estimate_transitions(&[1], 2, 0.0).is_err());
        assert!(estimate_transitions(&[1, 5], 2, 0.0).is_err());
    }

    #[test]
    fn estimated_rows_are_stochastic() {
        let trace: Vec<usize> = (0..500).map(|i| (i * 7 + i / 3) % 6 + 1).collect();
        for smoothing in [0.0, 0.5, 1.0, 10.0] {
            let p = estimate_transitions(&trace, 6, smoothing).unwrap();
            for row in &p {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL);
            }
        }
    }

    #[test]
    fn long_run_frequencies_match_stationary() {
        let p = vec![
            vec![0.6, 0.2, 0.1, 0.05, 0.03, 0.02],
            vec![0.2, 0.5, 0.1, 0.1, 0.05, 0.05],
            vec![0.1, 0.2, 0.4, 0.1, 0.1, 0.1],
            vec![0.05, 0.1, 0.2, 0.4, 0.15, 0.1],
            vec![0.05, 0.05, 0.1, 0.2, 0.4, 0.2],
            vec![0.02, 0.08, 0.1, 0.1, 0.2, 0.5],
        ];
        let mut m = model(p, 1);
        // stationary distribution via long power iteration
        let pi = m.marginal(5000);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0u64; 6];
        let n = 100_000;
        for _ in 0..n {
            counts[m.step(&mut rng) - 1] += 1;
        }
        let l1: f64 = counts
            .iter()
            .zip(&pi)
            .map(|(c, p)| (*c as f64 / n as f64 - p).abs())
            .sum();
        assert!(l1 < 0.05, "l1 {l1}");
    }

    #[test]
    fn json_roundtrip_and_rejects() {
        let m = model(vec![vec![0.5, 0.5], vec![0.25, 0.75]], 2);
        let text = m.to_json_string();
        let back = DtmcModel::from_json_str(&text).unwrap();
        assert_eq!(back.current_state(), 2);
        assert_eq!(back.transition_matrix(), m.transition_matrix());

        assert!(DtmcModel::from_json_str("{").is_err());
        // non-stochastic row
        let bad = r#"{"transition":[[0.5,0.6]],"success_matrices":[[1,1,1,1,1]],"current_state":1}"#;
        assert!(DtmcModel::from_json_str(bad).is_err());
        // wrong link count
        let bad = r#"{"transition":[[1.0]],"success_matrices":[[1,1,1]],"current_state":1}"#;
        assert!(DtmcModel::from_json_str(bad).is_err());
    }
}
