//! Leader-follower distributed consensus among DG agents.

use thiserror::Error;

use crate::topology::CyberGraph;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("agent {0} does not exist")]
    UnknownAgent(usize),
    #[error("agent {agent} has no state for neighbour {neighbor}")]
    StaleData { agent: usize, neighbor: usize },
    #[error("consensus error is undefined over an empty set")]
    EmptySet,
    #[error("gain for agent {0} must be positive")]
    InvalidGain(usize),
    #[error("controller sizes disagree with the graph")]
    SizeMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusController {
    gains: Vec<f64>,
    leader_flags: Vec<bool>,
    leader_state: Vec<f64>,
    adjacency: Vec<Vec<f64>>,
    members: Vec<bool>,
}

impl ConsensusController {
    pub fn new(
        graph: &CyberGraph,
        gains: Vec<f64>,
        leader_flags: Vec<bool>,
        leader_state: Vec<f64>,
    ) -> Result<Self, ConsensusError> {
        let n = graph.node_count();
        if gains.len() != n || leader_flags.len() != n {
            return Err(ConsensusError::SizeMismatch);
        }
        if let Some(i) = gains.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(ConsensusError::InvalidGain(i));
        }
        let adjacency = graph
            .adjacency()
            .iter()
            .map(|row| row.iter().map(|&a| f64::from(a)).collect())
            .collect();
        Ok(Self {
            gains,
            leader_flags,
            leader_state,
            adjacency,
            members: vec![true; n],
        })
    }

    pub fn agent_count(&self) -> usize {
        self.gains.len()
    }

    pub fn leader_state(&self) -> &[f64] {
        &self.leader_state
    }

    pub fn set_leader_state(&mut self, x0: Vec<f64>) {
        self.leader_state = x0;
    }

    pub fn is_member(&self, k: usize) -> bool {
        self.members[k]
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    /// Entry of the working adjacency: the original link masked by membership.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.members[i] && self.members[j] {
            self.adjacency[i][j]
        } else {
            0.0
        }
    }

    pub fn working_adjacency(&self) -> Vec<Vec<f64>> {
        let n = self.agent_count();
        (0..n)
            .map(|i| (0..n).map(|j| self.weight(i, j)).collect())
            .collect()
    }

    pub fn working_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.agent_count())
            .filter(|&j| self.weight(i, j) != 0.0)
            .collect()
    }

    /// `u_i = -h_i sum_j a_ij (x_i - x_j) - h_i b_i (x_i - x_0)`.
    pub fn consensus_input<S: AsRef<[f64]>>(
        &self,
        states: &[Option<S>],
        i: usize,
    ) -> Result<Vec<f64>, ConsensusError> {
        if i >= self.agent_count() {
            return Err(ConsensusError::UnknownAgent(i));
        }
        let xi = states
            .get(i)
            .and_then(|s| s.as_ref())
            .ok_or(ConsensusError::StaleData { agent: i, neighbor: i })?
            .as_ref();
        let h = self.gains[i];
        let mut u = vec![0.0; xi.len()];
        for j in 0..self.agent_count() {
            let a = self.weight(i, j);
            if a == 0.0 || j == i {
                continue;
            }
            let xj = states
                .get(j)
                .and_then(|s| s.as_ref())
                .ok_or(ConsensusError::StaleData { agent: i, neighbor: j })?
                .as_ref();
            for (d, (a_i, a_j)) in u.iter_mut().zip(xi.iter().zip(xj)) {
                *d -= h * a * (a_i - a_j);
            }
        }
        if self.leader_flags[i] {
            for (d, (a_i, a_0)) in u.iter_mut().zip(xi.iter().zip(&self.leader_state)) {
                *d -= h * (a_i - a_0);
            }
        }
        Ok(u)
    }

    /// Drops agent `k` from the consensus set. Returns `false` (a warning, not
    /// an error) when it was already removed.
    pub fn remove_agent(&mut self, k: usize) -> Result<bool, ConsensusError> {
        let slot = self.members.get_mut(k).ok_or(ConsensusError::UnknownAgent(k))?;
        let changed = *slot;
        *slot = false;
        Ok(changed)
    }

    pub fn restore_agent(&mut self, k: usize) -> Result<bool, ConsensusError> {
        let slot = self.members.get_mut(k).ok_or(ConsensusError::UnknownAgent(k))?;
        let changed = !*slot;
        *slot = true;
        Ok(changed)
    }
}

/// `max_i |x_i - x_0|` over agents still in the consensus set, taking the
/// largest component for vector states.
pub fn consensus_error<S: AsRef<[f64]>>(
    states: &[S],
    x0: &[f64],
    members: &[bool],
) -> Result<f64, ConsensusError> {
    let mut worst: Option<f64> = None;
    for (s, &member) in states.iter().zip(members) {
        if !member {
            continue;
        }
        let dev = s
            .as_ref()
            .iter()
            .zip(x0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
    }
    worst.ok_or(ConsensusError::EmptySet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_graph;

    fn path4() -> ConsensusController {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3)], 4).unwrap();
        ConsensusController::new(&g, vec![1.0; 4], vec![true, false, false, false], vec![0.0]).unwrap()
    }

    fn wrap(x: &[f64]) -> Vec<Option<Vec<f64>>> {
        x.iter().map(|&v| Some(vec![v])).collect()
    }

    /// Independent scalar simulation: x <- x + dt * u with u built from the
    /// plain adjacency.
    fn simulate(adj: &[Vec<f64>], b: &[f64], h: f64, x0: f64, mut x: Vec<f64>, dt: f64, steps: usize) -> Vec<f64> {
        let n = x.len();
        for _ in 0..steps {
            let mut next = x.clone();
            for i in 0..n {
                let mut u = 0.0;
                for j in 0..n {
                    u -= h * adj[i][j] * (x[i] - x[j]);
                }
                u -= h * b[i] * (x[i] - x0);
                next[i] = x[i] + dt * u;
            }
            x = next;
        }
        x
    }

    #[test]
    fn fixed_point_has_zero_input() {
        let c = path4();
        let s = wrap(&[0.0; 4]);
        for i in 0..4 {
            assert_eq!(c.consensus_input(&s, i).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn two_agent_arithmetic() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let c = ConsensusController::new(&g, vec![1.0; 2], vec![true, false], vec![0.0]).unwrap();
        let u = c.consensus_input(&wrap(&[1.0, 1.0]), 0).unwrap();
        assert_eq!(u, vec![-1.0]);
    }

    #[test]
    fn path_converges_with_single_leader_link() {
        // With h = 1 the slowest mode, 2(1 - cos(pi/9)) ~ 0.12, leaves ~1e-5
        // after 100 s; h = 2 doubles every rate.
        let g = build_graph(&[(0, 1), (1, 2), (2, 3)], 4).unwrap();
        let mut c = ConsensusController::new(&g, vec![2.0; 4], vec![true, false, false, false], vec![0.0]).unwrap();
        let initial = vec![1.0, -0.5, 2.0, 0.3];
        let oracle = simulate(
            &c.working_adjacency(),
            &[1.0, 0.0, 0.0, 0.0],
            2.0,
            0.0,
            initial.clone(),
            0.01,
            10_000,
        );
        let mut x = initial;
        for _ in 0..10_000 {
            let s = wrap(&x);
            let u: Vec<f64> = (0..4).map(|i| c.consensus_input(&s, i).unwrap()[0]).collect();
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi += 0.01 * ui;
            }
        }
        let members = c.members().to_vec();
        let states: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        assert!(consensus_error(&states, &[0.0], &members).unwrap() < 1e-6);
        for (a, b) in x.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }

        // Removal keeps the leader-connected remainder converging.
        c.remove_agent(3).unwrap();
        let adj = c.working_adjacency();
        let after = simulate(&adj, &[1.0, 0.0, 0.0, 0.0], 2.0, 0.0, vec![0.4, -0.2, 0.9, 5.0], 0.01, 10_000);
        assert!(after[..3].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn error_cases() {
        assert_eq!(
            consensus_error(&[vec![1.0], vec![0.5]], &[0.0], &[true, true]).unwrap(),
            1.0
        );
        assert_eq!(consensus_error(&[vec![0.0]], &[0.0], &[true]).unwrap(), 0.0);
        assert_eq!(
            consensus_error(&[vec![1.0], vec![0.5]], &[0.0], &[false, true]).unwrap(),
            0.5
        );
        assert_eq!(
            consensus_error::<Vec<f64>>(&[], &[0.0], &[]),
            Err(ConsensusError::EmptySet)
        );
    }

    #[test]
    fn stale_neighbor_is_reported() {
        let c = path4();
        let mut s = wrap(&[0.0; 4]);
        s[2] = None;
        assert_eq!(
            c.consensus_input(&s, 1),
            Err(ConsensusError::StaleData { agent: 1, neighbor: 2 })
        );
        // A removed neighbour is not needed.
        let mut c = c;
        c.remove_agent(2).unwrap();
        assert!(c.consensus_input(&s, 1).is_ok());
    }

    #[test]
    fn graph_surgery() {
        let mut c = path4();
        let original = c.working_adjacency();
        assert!(c.remove_agent(2).unwrap());
        assert_eq!(c.working_neighbors(1), vec![0]);
        assert!(c.working_neighbors(3).is_empty());
        assert!(!c.remove_agent(2).unwrap());
        assert!(c.restore_agent(2).unwrap());
        assert_eq!(c.working_adjacency(), original);
    }

    #[test]
    fn removed_agent_has_no_influence() {
        let mut c = path4();
        c.remove_agent(2).unwrap();
        let base = c.consensus_input(&wrap(&[0.1, 0.2, 0.3, 0.4]), 1).unwrap();
        let poisoned = c.consensus_input(&wrap(&[0.1, 0.2, 1e6, 0.4]), 1).unwrap();
        assert_eq!(base, poisoned);
        let base3 = c.consensus_input(&wrap(&[0.1, 0.2, 0.3, 0.4]), 3).unwrap();
        let poisoned3 = c.consensus_input(&wrap(&[0.1, 0.2, -7.0, 0.4]), 3).unwrap();
        assert_eq!(base3, poisoned3);
    }

    #[test]
    fn rejects_bad_gain() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        assert_eq!(
            ConsensusController::new(&g, vec![1.0, 0.0], vec![true; 2], vec![0.0]),
            Err(ConsensusError::InvalidGain(1))
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn error_non_increasing_at_small_step(init in proptest::collection::vec(-5.0f64..5.0, 4)) {
                let g = build_graph(&[(0, 1), (1, 2), (2, 3)], 4).unwrap();
                let h = 5.0;
                let c = ConsensusController::new(&g, vec![h; 4], vec![true; 4], vec![0.0]).unwrap();
                // dt h (deg + b) < 1 with max degree 2.
                let dt = 0.9 / (h * 3.0);
                let mut x = init;
                let members = [true; 4];
                let mut prev = f64::INFINITY;
                for _ in 0..200 {
                    let states: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
                    let e = consensus_error(&states, &[0.0], &members).unwrap();
                    prop_assert!(e <= prev + 1e-12);
                    prev = e;
                    let s = wrap(&x);
                    let u: Vec<f64> = (0..4).map(|i| c.consensus_input(&s, i).unwrap()[0]).collect();
                    for (xi, ui) in x.iter_mut().zip(u) {
                        *xi += dt * ui;
                    }
                }
            }

            #[test]
            fn remove_restore_round_trip(k in 0usize..4) {
                let mut c = path4();
                let before = c.clone();
                c.remove_agent(k).unwrap();
                c.restore_agent(k).unwrap();
                prop_assert_eq!(c, before);
            }
        }
    }
}
