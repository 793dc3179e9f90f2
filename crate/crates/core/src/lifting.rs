//! State and input lifting dictionaries.
//!
//! Dictionaries act on scaled variables. A dictionary is a list of basis
//! families applied elementwise, so `[identity, cube_root, exp]` on `(T, C)`
//! yields `[T, C, T^(1/3), C^(1/3), e^T, e^C]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::SubsystemTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFunction {
    Identity,
    Square,
    CubeRoot,
    Exp,
}

impl BasisFunction {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            BasisFunction::Identity => x,
            BasisFunction::Square => x * x,
            BasisFunction::CubeRoot => x.cbrt(),
            BasisFunction::Exp => x.exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisFunction::Identity => "identity",
            BasisFunction::Square => "square",
            BasisFunction::CubeRoot => "cube_root",
            BasisFunction::Exp => "exp",
        }
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(BasisFunction::Identity),
            "square" => Ok(BasisFunction::Square),
            "cube_root" => Ok(BasisFunction::CubeRoot),
            "exp" => Ok(BasisFunction::Exp),
            other => Err(Error::Config(format!(
                "unknown basis function '{other}' (expected identity, square, cube_root or exp)"
            ))),
        }
    }
}

/// One scalar observable: a basis function applied to one input coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisEntry {
    pub function: BasisFunction,
    pub coordinate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingDictionary {
    pub families: Vec<BasisFunction>,
    pub input_dim: usize,
    pub entries: Vec<BasisEntry>,
    /// Leading entries that are the identity on each coordinate.
    pub identity_count: usize,
}

impl LiftingDictionary {
    /// Elementwise dictionary over `input_dim` coordinates.
    pub fn elementwise(families: &[BasisFunction], input_dim: usize) -> Self {
        let entries: Vec<BasisEntry> = if input_dim == 0 {
            Vec::new()
        } else {
            families
                .iter()
                .flat_map(|&function| {
                    (0..input_dim).map(move |coordinate| BasisEntry {
                        function,
                        coordinate,
                    })
                })
                .collect()
        };
        let identity_count = if families.first() == Some(&BasisFunction::Identity) {
            input_dim
        } else {
            0
        };
        LiftingDictionary {
            families: families.to_vec(),
            input_dim,
            entries,
            identity_count,
        }
    }

    /// State dictionary; the identity family must come first so the original
    /// coordinates can be read back from the lifted state.
    pub fn for_state(families: &[BasisFunction], n_x: usize) -> Result<Self> {
        if families.first() != Some(&BasisFunction::Identity) {
            return Err(Error::Config(
                "state dictionary must start with the identity family".into(),
            ));
        }
        Ok(Self::elementwise(families, n_x))
    }

    pub fn identity(n: usize) -> Self {
        Self::elementwise(&[BasisFunction::Identity], n)
    }

    pub fn parse(names: &[String], input_dim: usize) -> Result<Self> {
        let families = names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<BasisFunction>>>()?;
        Ok(Self::elementwise(&families, input_dim))
    }

    pub fn names(&self) -> Vec<String> {
        self.families.iter().map(|f| f.name().to_string()).collect()
    }

    pub fn output_dim(&self) -> usize {
        self.entries.len()
    }

    /// Writes the lifted vector into `out` (length `output_dim`).
    #[inline]
    pub fn lift_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_dim);
        debug_assert_eq!(out.len(), self.entries.len());
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.function.eval(x[e.coordinate]);
        }
    }

    pub fn lift(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dim("lifting input", self.input_dim, x.len()));
        }
        let mut out = DVector::zeros(self.output_dim());
        self.lift_into(x, out.as_mut_slice());
        Ok(out)
    }
}

/// Lifts a scaled subsystem state.
pub fn lift_state(dictionary: &LiftingDictionary, x: &[f64]) -> Result<DVector<f64>> {
    dictionary.lift(x)
}

/// Lifts a scaled subsystem input; empty when the subsystem has no inputs.
pub fn lift_input(dictionary: &LiftingDictionary, u: &[f64]) -> Result<DVector<f64>> {
    dictionary.lift(u)
}

/// Concatenated liftings of subsystem `i`'s neighbors, ascending index order.
///
/// `states[j]` is the scaled state of subsystem `j`, or `None` if unavailable.
pub fn lift_neighbors(
    topology: &SubsystemTopology,
    dictionaries: &[LiftingDictionary],
    i: usize,
    states: &[Option<&[f64]>],
) -> Result<DVector<f64>> {
    let mut neighbors = topology.subsystem(i).neighbors.clone();
    neighbors.sort_unstable();
    let len: usize = neighbors
        .iter()
        .map(|&j| dictionaries[j].output_dim())
        .sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for j in neighbors {
        let x = states.get(j).copied().flatten().ok_or_else(|| {
            Error::Config(format!("missing state of neighbor {j} for subsystem {i}"))
        })?;
        let d = &dictionaries[j];
        if x.len() != d.input_dim {
            return Err(Error::dim(
                format!("neighbor {j} state"),
                d.input_dim,
                x.len(),
            ));
        }
        d.lift_into(x, &mut out.as_mut_slice()[offset..offset + d.output_dim()]);
        offset += d.output_dim();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::SubsystemSpec;
    use proptest::prelude::*;
    use BasisFunction::*;

    #[test]
    fn evaluation_at_zero() {
        let d = LiftingDictionary::for_state(&[Identity, Square, Exp], 1).unwrap();
        assert_eq!(lift_state(&d, &[0.0]).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cstr_state_dictionary_ordering() {
        let d = LiftingDictionary::for_state(&[Identity, CubeRoot, Exp], 2).unwrap();
        let (t, c) = (0.3, 0.8);
        let z = lift_state(&d, &[t, c]).unwrap();
        let expected = [t, c, t.cbrt(), c.cbrt(), t.exp(), c.exp()];
        assert_eq!(z.as_slice(), &expected);
    }

    #[test]
    fn agro_state_dictionary_has_36_entries() {
        let d = LiftingDictionary::for_state(&[Identity, Square, Exp], 12).unwrap();
        let x: Vec<f64> = (0..12).map(|k| k as f64 / 11.0).collect();
        let z = lift_state(&d, &x).unwrap();
        assert_eq!(z.len(), 36);
        for k in 0..12 {
            assert_eq!(z[k], x[k]);
            assert_eq!(z[12 + k], x[k] * x[k]);
            assert_eq!(z[24 + k], x[k].exp());
        }
    }

    #[test]
    fn input_dictionaries() {
        let cstr = LiftingDictionary::elementwise(&[Identity, CubeRoot], 1);
        assert_eq!(
            lift_input(&cstr, &[0.125]).unwrap().as_slice(),
            &[0.125, 0.5]
        );
        let agro = LiftingDictionary::elementwise(&[Identity, Square, Exp], 1);
        assert_eq!(
            lift_input(&agro, &[0.5]).unwrap().as_slice(),
            &[0.5, 0.25, 0.5f64.exp()]
        );
        let none = LiftingDictionary::elementwise(&[Identity, Square, Exp], 0);
        assert_eq!(lift_input(&none, &[]).unwrap().len(), 0);
    }

    #[test]
    fn cube_root_is_real_for_negatives() {
        assert_eq!(CubeRoot.eval(-8.0), -2.0);
    }

    #[test]
    fn state_dictionary_requires_identity_first() {
        assert!(LiftingDictionary::for_state(&[Square, Identity], 2).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = LiftingDictionary::identity(2);
        assert!(d.lift(&[1.0]).is_err());
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!("sin".parse::<BasisFunction>().is_err());
        assert_eq!("cube_root".parse::<BasisFunction>().unwrap(), CubeRoot);
    }

    fn topo(neighbors_of_0: Vec<usize>) -> SubsystemTopology {
        let spec = |s: usize, nb: Vec<usize>| SubsystemSpec {
            states: vec![s],
            inputs: vec![],
            sensors: vec![0],
            neighbors: nb,
            lifted_dim: 2,
            lifted_input_dim: 0,
        };
        SubsystemTopology {
            n_states: 4,
            n_inputs: 0,
            subsystems: vec![
                spec(0, neighbors_of_0),
                spec(1, vec![]),
                spec(2, vec![]),
                spec(3, vec![]),
            ],
        }
    }

    #[test]
    fn neighbors_concatenate_in_ascending_order() {
        let dicts = vec![LiftingDictionary::for_state(&[Identity, Square], 1).unwrap(); 4];
        let states = [[0.0], [2.0], [3.0], [4.0]];
        let views: Vec<Option<&[f64]>> = states.iter().map(|s| Some(&s[..])).collect();
        // declared unordered on purpose
        let t = topo(vec![3, 2]);
        let phi = lift_neighbors(&t, &dicts, 0, &views).unwrap();
        assert_eq!(phi.as_slice(), &[3.0, 9.0, 4.0, 16.0]);
        let empty = lift_neighbors(&topo(vec![]), &dicts, 0, &views).unwrap();
        assert_eq!(empty.len(), 0);
    }

    #[test]
    fn missing_neighbor_is_an_error() {
        let dicts = vec![LiftingDictionary::identity(1); 4];
        let views: Vec<Option<&[f64]>> = vec![Some(&[0.0][..]), None, None, None];
        assert!(lift_neighbors(&topo(vec![1]), &dicts, 0, &views).is_err());
    }

    proptest! {
        #[test]
        fn identity_block_is_bitwise_exact(x in proptest::collection::vec(-2.0f64..3.0, 1..8)) {
            let d = LiftingDictionary::for_state(&[Identity, Square, CubeRoot, Exp], x.len()).unwrap();
            let z = d.lift(&x).unwrap();
            prop_assert_eq!(z.len(), 4 * x.len());
            for (k, &v) in x.iter().enumerate() {
                prop_assert_eq!(z[k].to_bits(), v.to_bits());
            }
        }
    }
}
