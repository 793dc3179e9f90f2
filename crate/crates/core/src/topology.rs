//! How a process decomposes into interacting subsystems.
//!
//! Subsystems are ordered once at construction; every stacked matrix in the
//! crate lays out its per-subsystem column blocks in that order. Neighbor sets
//! are kept sorted ascending so concatenated neighbor liftings are
//! deterministic.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subsystem of the decomposition. All indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    /// Global state indices owned by this subsystem, in local order.
    pub states: Vec<usize>,
    /// Global input indices that act directly on this subsystem.
    #[serde(default)]
    pub inputs: Vec<usize>,
    /// Local state positions that are measured (the rows of the selector H_i).
    pub sensors: Vec<usize>,
    /// Subsystems whose states enter this subsystem's dynamics.
    #[serde(default)]
    pub neighbors: Vec<usize>,
    /// Lifted state dimension.
    #[serde(default)]
    pub lifted_dim: usize,
    /// Lifted input dimension.
    #[serde(default)]
    pub lifted_input_dim: usize,
}

impl SubsystemSpec {
    pub fn n_x(&self) -> usize {
        self.states.len()
    }
    pub fn n_u(&self) -> usize {
        self.inputs.len()
    }
    pub fn n_y(&self) -> usize {
        self.sensors.len()
    }
    pub fn n_z(&self) -> usize {
        self.lifted_dim
    }
    pub fn n_v(&self) -> usize {
        self.lifted_input_dim
    }

    /// Measurement selector H_i (n_y x n_x).
    pub fn sensor_matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n_y(), self.n_x());
        for (row, &col) in self.sensors.iter().enumerate() {
            h[(row, col)] = 1.0;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemTopology {
    pub n_states: usize,
    #[serde(default)]
    pub n_inputs: usize,
    pub subsystems: Vec<SubsystemSpec>,
}

impl SubsystemTopology {
    /// Builds a topology, sorting neighbor sets, and validates it.
    pub fn new(
        n_states: usize,
        n_inputs: usize,
        mut subsystems: Vec<SubsystemSpec>,
    ) -> Result<Self> {
        for s in &mut subsystems {
            s.neighbors.sort_unstable();
        }
        let topo = SubsystemTopology {
            n_states,
            n_inputs,
            subsystems,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Checks every structural invariant and reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m == 0 {
            return Err(Error::Topology("no subsystems".into()));
        }
        let mut owner = vec![None; self.n_states];
        for (i, s) in self.subsystems.iter().enumerate() {
            if s.states.is_empty() {
                return Err(Error::Topology(format!("subsystem {i} owns no states")));
            }
            for &g in &s.states {
                if g >= self.n_states {
                    return Err(Error::Topology(format!(
                        "subsystem {i} references state {g} outside 0..{}",
                        self.n_states
                    )));
                }
                if let Some(prev) = owner[g] {
                    return Err(Error::Topology(format!(
                        "state {g} assigned to both subsystem {prev} and subsystem {i}"
                    )));
                }
                owner[g] = Some(i);
            }
            for &u in &s.inputs {
                if u >= self.n_inputs {
                    return Err(Error::Topology(format!(
                        "subsystem {i} references input {u} outside 0..{}",
                        self.n_inputs
                    )));
                }
            }
            for &p in &s.sensors {
                if p >= s.n_x() {
                    return Err(Error::Topology(format!(
                        "subsystem {i} sensor at local state {p} but n_x = {}",
                        s.n_x()
                    )));
                }
            }
            if s.lifted_dim < s.n_x() {
                return Err(Error::Topology(format!(
                    "subsystem {i} lifted dimension {} smaller than n_x = {}",
                    s.lifted_dim,
                    s.n_x()
                )));
            }
            if s.inputs.is_empty() && s.lifted_input_dim != 0 {
                return Err(Error::Topology(format!(
                    "subsystem {i} has lifted inputs but no inputs"
                )));
            }
            for (k, &j) in s.neighbors.iter().enumerate() {
                if j == i {
                    return Err(Error::Topology(format!(
                        "subsystem {i} lists itself as neighbor"
                    )));
                }
                if j >= m {
                    return Err(Error::Topology(format!(
                        "subsystem {i} neighbor {j} outside 0..{m}"
                    )));
                }
                if k > 0 && s.neighbors[k - 1] >= j {
                    return Err(Error::Topology(format!(
                        "subsystem {i} neighbors not strictly ascending"
                    )));
                }
            }
        }
        if let Some(g) = owner.iter().position(|o| o.is_none()) {
            return Err(Error::Topology(format!(
                "state {g} not assigned to any subsystem"
            )));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.subsystems.len()
    }

    pub fn subsystem(&self, i: usize) -> &SubsystemSpec {
        &self.subsystems[i]
    }

    pub fn lifted_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.n_z()).collect()
    }
    pub fn lifted_input_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.n_v()).collect()
    }
    pub fn measurement_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.n_y()).collect()
    }
    pub fn total_lifted(&self) -> usize {
        self.subsystems.iter().map(|s| s.n_z()).sum()
    }
    pub fn total_lifted_inputs(&self) -> usize {
        self.subsystems.iter().map(|s| s.n_v()).sum()
    }
    pub fn total_measurements(&self) -> usize {
        self.subsystems.iter().map(|s| s.n_y()).sum()
    }

    /// Offset of subsystem `i`'s block in a vector laid out with `dims`.
    pub fn offset(dims: &[usize], i: usize) -> usize {
        dims[..i].iter().sum()
    }

    pub fn lifted_range(&self, i: usize) -> Range<usize> {
        let dims = self.lifted_dims();
        let o = Self::offset(&dims, i);
        o..o + dims[i]
    }
    pub fn lifted_input_range(&self, i: usize) -> Range<usize> {
        let dims = self.lifted_input_dims();
        let o = Self::offset(&dims, i);
        o..o + dims[i]
    }
    pub fn measurement_range(&self, i: usize) -> Range<usize> {
        let dims = self.measurement_dims();
        let o = Self::offset(&dims, i);
        o..o + dims[i]
    }

    /// Global state indices measured, in stacked measurement order.
    pub fn measured_states(&self) -> Vec<usize> {
        self.subsystems
            .iter()
            .flat_map(|s| s.sensors.iter().map(move |&p| s.states[p]))
            .collect()
    }

    /// Global state indices in subsystem-stacked order.
    pub fn stacked_states(&self) -> Vec<usize> {
        self.subsystems
            .iter()
            .flat_map(|s| s.states.iter().cloned())
            .collect()
    }
}

/// Which stacked matrix a column selection refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    /// Global state matrix A.
    A,
    /// Global output matrix C.
    C,
    /// Observability stack.
    Observability,
    /// Disturbance-to-output stack (one block column per window step).
    Gamma,
    /// State-transition stack.
    Transition,
    /// Disturbance-to-state stack (one block column per window step).
    DisturbanceToState,
}

impl StackKind {
    /// Number of repeated lifted-state column groups for a window of `horizon`.
    pub fn column_groups(self, horizon: usize) -> usize {
        match self {
            StackKind::Gamma | StackKind::DisturbanceToState => horizon,
            _ => 1,
        }
    }
}

/// Picks the columns of a stacked matrix that belong to one subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSelector {
    pub source: StackKind,
    pub target_subsystem: usize,
}

impl BlockSelector {
    pub fn new(source: StackKind, target_subsystem: usize) -> Self {
        BlockSelector {
            source,
            target_subsystem,
        }
    }

    pub fn ranges(&self, topology: &SubsystemTopology, horizon: usize) -> Vec<Range<usize>> {
        let groups = self.source.column_groups(horizon);
        let total = topology.total_lifted();
        let local = topology.lifted_range(self.target_subsystem);
        (0..groups)
            .map(|g| g * total + local.start..g * total + local.end)
            .collect()
    }

    pub fn select(
        &self,
        m: &DMatrix<f64>,
        topology: &SubsystemTopology,
        horizon: usize,
    ) -> Result<DMatrix<f64>> {
        let groups = self.source.column_groups(horizon);
        let expected = groups * topology.total_lifted();
        if m.ncols() != expected {
            return Err(Error::dim("column selection", expected, m.ncols()));
        }
        let ranges = self.ranges(topology, horizon);
        let width: usize = ranges.iter().map(|r| r.len()).sum();
        let mut out = DMatrix::zeros(m.nrows(), width);
        let mut c = 0;
        for r in ranges {
            out.columns_mut(c, r.len())
                .copy_from(&m.columns(r.start, r.len()));
            c += r.len();
        }
        Ok(out)
    }
}

/// Columns of `m` that belong to subsystem `i`'s lifted state block.
pub fn select_columns(
    m: &DMatrix<f64>,
    i: usize,
    topology: &SubsystemTopology,
) -> Result<DMatrix<f64>> {
    BlockSelector::new(StackKind::A, i).select(m, topology, 1)
}
