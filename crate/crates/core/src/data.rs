//! Observed per-unit variables.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::network::FriendshipNetwork;
use crate::sgraph::Layer;

/// Aligned per-unit vectors. `A` and `Y` are binary; `L` is binary unless
/// flagged continuous. Everything is stored as `f64` so ring sums can be
/// formed uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    l: Vec<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
    l_continuous: bool,
}

fn check_binary(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| x != 0.0 && x != 1.0) {
        Some(i) => invalid(format!("{name}[{i}] = {} is not binary", v[i])),
        None => Ok(()),
    }
}

impl NetworkData {
    pub fn new(l: Vec<f64>, l_continuous: bool, a: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if l.len() != a.len() || a.len() != y.len() {
            return invalid(format!("layer lengths differ: L {}, A {}, Y {}", l.len(), a.len(), y.len()));
        }
        if l_continuous {
            if let Some(i) = l.iter().position(|x| !x.is_finite()) {
                return invalid(format!("L[{i}] is not finite"));
            }
        } else {
            check_binary("L", &l)?;
        }
        check_binary("A", &a)?;
        check_binary("Y", &y)?;
        Ok(Self { l, a, y, l_continuous })
    }

    pub fn n_units(&self) -> usize {
        self.l.len()
    }

    pub fn l_continuous(&self) -> bool {
        self.l_continuous
    }

    pub fn layer(&self, layer: Layer) -> &[f64] {
        match layer {
            Layer::L => &self.l,
            Layer::A => &self.a,
            Layer::Y => &self.y,
        }
    }

    pub fn view(&self) -> LayerValues<'_> {
        LayerValues { l: &self.l, a: &self.a, y: &self.y }
    }

    pub fn check_aligned(&self, net: &FriendshipNetwork) -> Result<()> {
        if self.n_units() != net.n_units() {
            return invalid(format!("data has {} units, network has {}", self.n_units(), net.n_units()));
        }
        Ok(())
    }

    /// Same data with units relabeled so that new unit `perm[i]` carries old
    /// unit `i`'s values.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_units();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return invalid("not a permutation of the units");
        }
        let apply = |v: &[f64]| {
            let mut out = vec![0.0; n];
            for (i, &p) in perm.iter().enumerate() {
                out[p] = v[i];
            }
            out
        };
        Ok(Self { l: apply(&self.l), a: apply(&self.a), y: apply(&self.y), l_continuous: self.l_continuous })
    }
}

/// Borrowed layer vectors, possibly hypothetical (a Gibbs state, an
/// intervened treatment) rather than observed.
#[derive(Debug, Clone, Copy)]
pub struct LayerValues<'a> {
    pub l: &'a [f64],
    pub a: &'a [f64],
    pub y: &'a [f64],
}

impl LayerValues<'_> {
    pub fn get(&self, layer: Layer) -> &[f64] {
        match layer {
            Layer::L => self.l,
            Layer::A => self.a,
            Layer::Y => self.y,
        }
    }
}
