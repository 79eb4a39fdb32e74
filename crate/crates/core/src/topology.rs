//! Cyber communication graph and the physical benchmark network constants.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid edge ({0}, {1}): node id out of range for {2} nodes")]
    OutOfRange(usize, usize, usize),
    #[error("invalid edge ({0}, {0}): self-loops are not allowed")]
    SelfLoop(usize),
    #[error("graph must have at least one node")]
    Empty,
}

/// Undirected DG-to-DG communication graph.
///
/// The MSC leader is not a node of this graph; its links to the agents are
/// carried separately as leader flags on the consensus controller.
#[derive(Debug, Clone, PartialEq)]
pub struct CyberGraph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<u8>>,
}

impl CyberGraph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edge set with each pair normalised to `(min, max)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j] == 1
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.node_count)
            .filter(|&j| self.adjacency[i][j] == 1)
            .collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().filter(|&&a| a == 1).count()
    }

    /// True when every node can reach every other node through DG links.
    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return false;
        }
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds the undirected graph from a list of node pairs. Duplicate and
/// reversed pairs collapse onto one edge.
pub fn build_graph(edges: &[(usize, usize)], n: usize) -> Result<CyberGraph, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    let mut set = BTreeSet::new();
    let mut adjacency = vec![vec![0u8; n]; n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(TopologyError::OutOfRange(i, j, n));
        }
        if i == j {
            return Err(TopologyError::SelfLoop(i));
        }
        set.insert((i.min(j), i.max(j)));
        adjacency[i][j] = 1;
        adjacency[j][i] = 1;
    }
    Ok(CyberGraph {
        node_count: n,
        edges: set,
        adjacency,
    })
}

/// Feeder line between a DG bus and the PCC, per unit on the DG base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineImpedance {
    pub z_pu: f64,
    /// Impedance angle in radians, in (0, pi/2].
    pub theta: f64,
}

impl Default for LineImpedance {
    fn default() -> Self {
        Self {
            z_pu: 0.1,
            theta: std::f64::consts::FRAC_PI_2,
        }
    }
}

/// Constants of the modified urban benchmark feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTopology {
    pub substation_primary_kv: f64,
    pub feeder_kv: f64,
    pub dg_lv_kv: f64,
    pub capacitor_bank_mvar: f64,
    /// The capacitor bank sits on the grid side of bus 1; islanded runs keep it out.
    pub capacitor_bank_connected: bool,
    pub per_bus_load_mw: f64,
    pub per_bus_load_mvar: f64,
    pub bess_capacity_mwh: f64,
    /// Per-DG apparent power base.
    pub s_base_mva: f64,
    pub line_impedances: Vec<LineImpedance>,
    pub pcc_bus_id: usize,
    /// Physical bus of each DG, parallel to `line_impedances`.
    pub dg_buses: Vec<usize>,
}

impl BenchmarkTopology {
    pub fn canadian_urban(dg_count: usize) -> Self {
        Self {
            substation_primary_kv: 120.0,
            feeder_kv: 12.5,
            dg_lv_kv: 0.208,
            capacitor_bank_mvar: 2.75,
            capacitor_bank_connected: false,
            per_bus_load_mw: 2.0,
            per_bus_load_mvar: 0.0,
            bess_capacity_mwh: 1.0,
            s_base_mva: 2.0,
            line_impedances: vec![LineImpedance::default(); dg_count],
            pcc_bus_id: 1,
            dg_buses: (0..dg_count).map(|i| i + 2).collect(),
        }
    }

    pub fn dg_count(&self) -> usize {
        self.line_impedances.len()
    }

    pub fn s_base_va(&self) -> f64 {
        self.s_base_mva * 1e6
    }

    /// Returns the first violated invariant as `(field, message)`.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let positive = [
            ("substation_primary_kv", self.substation_primary_kv),
            ("feeder_kv", self.feeder_kv),
            ("dg_lv_kv", self.dg_lv_kv),
            ("capacitor_bank_mvar", self.capacitor_bank_mvar),
            ("per_bus_load_mw", self.per_bus_load_mw),
            ("bess_capacity_mwh", self.bess_capacity_mwh),
            ("s_base_mva", self.s_base_mva),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err((name.into(), format!("must be strictly positive, got {value}")));
            }
        }
        for (k, line) in self.line_impedances.iter().enumerate() {
            if !(line.z_pu > 0.0 && line.z_pu.is_finite()) {
                return Err((
                    format!("line_z_pu[{k}]"),
                    format!("impedance magnitude must be positive, got {}", line.z_pu),
                ));
            }
            if !(line.theta > 0.0 && line.theta <= std::f64::consts::FRAC_PI_2 + 1e-12) {
                return Err((
                    format!("line_theta_deg[{k}]"),
                    format!("angle must lie in (0, 90] degrees, got {}", line.theta.to_degrees()),
                ));
            }
        }
        if self.dg_buses.len() != self.line_impedances.len() {
            return Err(("dg_buses".into(), "one bus per DG line required".into()));
        }
        if self.dg_buses.contains(&self.pcc_bus_id) {
            return Err((
                "pcc_bus".into(),
                format!("bus {} hosts a DG and cannot be the PCC", self.pcc_bus_id),
            ));
        }
        let max_bus = self.dg_buses.iter().copied().max().unwrap_or(0).max(1);
        if self.pcc_bus_id == 0 || self.pcc_bus_id > max_bus {
            return Err((
                "pcc_bus".into(),
                format!("bus {} is not part of the feeder", self.pcc_bus_id),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_neighbors() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3)], 4).unwrap();
        assert_eq!(g.neighbors(1), vec![0, 2]);
        assert!(g.is_connected());
        for i in 0..4 {
            assert_eq!(g.adjacency()[i][i], 0);
            for j in 0..4 {
                assert_eq!(g.adjacency()[i][j], g.adjacency()[j][i]);
            }
        }
    }

    #[test]
    fn empty_edge_set() {
        let g = build_graph(&[], 3).unwrap();
        assert!(g.adjacency().iter().flatten().all(|&a| a == 0));
        assert!(!g.is_connected());
    }

    #[test]
    fn reversed_pair_is_one_edge() {
        let g = build_graph(&[(0, 1), (1, 0)], 2).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert!(g.is_adjacent(0, 1) && g.is_adjacent(1, 0));
    }

    #[test]
    fn rejects_bad_edges() {
        assert_eq!(build_graph(&[(0, 4)], 4), Err(TopologyError::OutOfRange(0, 4, 4)));
        assert_eq!(build_graph(&[(2, 2)], 4), Err(TopologyError::SelfLoop(2)));
    }

    #[test]
    fn benchmark_is_valid() {
        let t = BenchmarkTopology::canadian_urban(4);
        assert!(t.validate().is_ok());
        let mut bad = t.clone();
        bad.line_impedances[2].theta = 0.0;
        assert_eq!(bad.validate().unwrap_err().0, "line_theta_deg[2]");
        let mut bad = t;
        bad.pcc_bus_id = 3;
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn edge_set_round_trips(pairs in proptest::collection::vec((0usize..8, 0usize..8), 0..20)) {
                let pairs: Vec<_> = pairs.into_iter().filter(|(a, b)| a != b).collect();
                let g = build_graph(&pairs, 8).unwrap();
                let expected: BTreeSet<_> = pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
                prop_assert_eq!(g.edges(), expected.iter().copied().collect::<Vec<_>>());
                let rebuilt = build_graph(&g.edges(), 8).unwrap();
                prop_assert_eq!(rebuilt, g);
            }
        }
    }
}
