//! Friendship networks, degree neighborhoods and greedy k-degree separated sets.
//!
//! Units are identified by dense `usize` ids in `0..n_units`. Distances are
//! unweighted shortest-path hop counts; units in different connected
//! components are unreachable and count as separated at every degree.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::stream_rng;

/// Undirected simple graph over the units of a study population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FriendshipNetwork {
    adjacency: Vec<Vec<usize>>,
}

impl FriendshipNetwork {
    /// A network of `n_units` units with no ties.
    pub fn edgeless(n_units: usize) -> Self {
        Self { adjacency: vec![Vec::new(); n_units] }
    }

    /// Builds a network from an edge list. Duplicate edges (in either
    /// orientation) collapse to one; self-loops and out-of-range ids are errors.
    pub fn from_edges<I>(n_units: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adjacency = vec![Vec::new(); n_units];
        for (i, j) in edges {
            if i >= n_units || j >= n_units {
                return invalid(format!("edge ({i}, {j}) references a unit outside 0..{n_units}"));
            }
            if i == j {
                return invalid(format!("self-loop on unit {i}"));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(Self { adjacency })
    }

    /// Validates and adopts a prebuilt adjacency structure.
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.sort_unstable();
            if nbrs.windows(2).any(|w| w[0] == w[1]) {
                return invalid(format!("unit {i} lists a neighbor twice"));
            }
            if nbrs.iter().any(|&j| j >= n) {
                return invalid(format!("unit {i} has a neighbor outside 0..{n}"));
            }
            if nbrs.binary_search(&i).is_ok() {
                return invalid(format!("self-loop on unit {i}"));
            }
        }
        for i in 0..n {
            for &j in &adjacency[i] {
                if adjacency[j].binary_search(&i).is_err() {
                    return invalid(format!("adjacency is not symmetric: {i} -> {j}"));
                }
            }
        }
        Ok(Self { adjacency })
    }

    pub fn n_units(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Sorted neighbor ids of unit `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n_units() && self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Edges as `(i, j)` pairs with `i < j`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |&&j| i < j).map(move |&j| (i, j)))
    }

    pub(crate) fn check_unit(&self, i: usize) -> Result<()> {
        if i >= self.n_units() {
            return invalid(format!("unit {i} out of range 0..{}", self.n_units()));
        }
        Ok(())
    }

    /// Units grouped by exact distance from `i`: element `d` holds every unit
    /// at distance `d`, for `d` in `0..=max_ring`. Each ring is sorted.
    ///
    /// Panics if `i` is not a valid unit.
    pub fn rings(&self, i: usize, max_ring: usize) -> Vec<Vec<usize>> {
        let mut rings = vec![vec![i]];
        let mut seen = std::collections::HashSet::from([i]);
        for _ in 0..max_ring {
            let mut next = Vec::new();
            for &u in rings.last().expect("rings start non-empty") {
                for &v in &self.adjacency[u] {
                    if seen.insert(v) {
                        next.push(v);
                    }
                }
            }
            next.sort_unstable();
            rings.push(next);
        }
        rings
    }

    /// Units whose distance from `i` is one of `degrees`. Degree 0 is `i`
    /// itself. The result is sorted.
    pub fn neighborhood(&self, i: usize, degrees: &[usize]) -> Result<Vec<usize>> {
        self.check_unit(i)?;
        let Some(&max) = degrees.iter().max() else {
            return Ok(Vec::new());
        };
        let rings = self.rings(i, max);
        let mut out: Vec<usize> =
            rings.into_iter().enumerate().filter(|(d, _)| degrees.contains(d)).flat_map(|(_, ring)| ring).collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Shortest-path hop count between `i` and `j`, or `None` when unreachable.
    pub fn pairwise_distance(&self, i: usize, j: usize) -> Result<Option<usize>> {
        self.check_unit(i)?;
        self.check_unit(j)?;
        if i == j {
            return Ok(Some(0));
        }
        let mut dist = vec![usize::MAX; self.n_units()];
        let mut queue = VecDeque::from([i]);
        dist[i] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    if v == j {
                        return Ok(Some(dist[v]));
                    }
                    queue.push_back(v);
                }
            }
        }
        Ok(None)
    }

    /// True when unit `i` has at least one unit at distance 1 and at least
    /// one at distance 2.
    pub fn has_rings_one_and_two(&self, i: usize) -> bool {
        let nbrs = &self.adjacency[i];
        if nbrs.is_empty() {
            return false;
        }
        nbrs.iter().flat_map(|&u| self.adjacency[u].iter()).any(|&w| w != i && nbrs.binary_search(&w).is_err())
    }
}

/// Scratch space for repeated depth-truncated breadth-first searches. The
/// stamp trick avoids clearing an `n`-sized visited array per search.
struct BallSearch {
    stamp: Vec<u32>,
    depth: Vec<u32>,
    current: u32,
    queue: VecDeque<usize>,
}

impl BallSearch {
    fn new(n: usize) -> Self {
        Self { stamp: vec![0; n], depth: vec![0; n], current: 0, queue: VecDeque::new() }
    }

    /// Calls `visit` on every unit within `radius` hops of any source.
    fn for_each_within<F: FnMut(usize)>(
        &mut self,
        net: &FriendshipNetwork,
        sources: &[usize],
        radius: usize,
        mut visit: F,
    ) {
        self.current = self.current.wrapping_add(1);
        if self.current == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.current = 1;
        }
        self.queue.clear();
        for &s in sources {
            if self.stamp[s] != self.current {
                self.stamp[s] = self.current;
                self.depth[s] = 0;
                self.queue.push_back(s);
            }
        }
        while let Some(u) = self.queue.pop_front() {
            visit(u);
            if self.depth[u] as usize >= radius {
                continue;
            }
            for &v in net.neighbors(u) {
                if self.stamp[v] != self.current {
                    self.stamp[v] = self.current;
                    self.depth[v] = self.depth[u] + 1;
                    self.queue.push_back(v);
                }
            }
        }
    }
}

/// Which units may join a separated set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Eligibility {
    /// Every unit is a candidate.
    None,
    /// Only units with non-empty first- and second-degree neighborhoods.
    NonEmptyRings12,
}

impl Eligibility {
    fn admits(self, net: &FriendshipNetwork, i: usize) -> bool {
        match self {
            Eligibility::None => true,
            Eligibility::NonEmptyRings12 => net.has_rings_one_and_two(i),
        }
    }
}

/// Units that are pairwise at least `k` hops apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparatedSet {
    pub k: usize,
    pub members: Vec<usize>,
    pub eligibility: Eligibility,
}

impl SeparatedSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The first `n` members, still a valid separated set (not maximal).
    pub fn truncated(&self, n: usize) -> Self {
        Self { k: self.k, members: self.members[..n.min(self.len())].to_vec(), eligibility: self.eligibility }
    }

    /// Checks pairwise separation and eligibility against `net`.
    pub fn verify(&self, net: &FriendshipNetwork) -> Result<()> {
        for &m in &self.members {
            net.check_unit(m)?;
            if !self.eligibility.admits(net, m) {
                return invalid(format!("member {m} fails eligibility {:?}", self.eligibility));
            }
        }
        let mut search = BallSearch::new(net.n_units());
        let mut is_member = vec![false; net.n_units()];
        for &m in &self.members {
            if std::mem::replace(&mut is_member[m], true) {
                return invalid(format!("member {m} listed twice"));
            }
        }
        for &m in &self.members {
            let mut clash = None;
            search.for_each_within(net, &[m], self.k.saturating_sub(1), |u| {
                if u != m && is_member[u] {
                    clash = Some(u);
                }
            });
            if let Some(u) = clash {
                return invalid(format!("members {m} and {u} are closer than {} hops", self.k));
            }
        }
        Ok(())
    }

    /// True when no eligible non-member can be added without breaking separation.
    pub fn is_maximal(&self, net: &FriendshipNetwork) -> bool {
        let blocked = blocked_mask(net, self.members.iter().map(|&m| [m, m]), self.k);
        (0..net.n_units()).all(|u| blocked[u] || !self.eligibility.admits(net, u))
    }
}

/// Dyads (edges of the network) whose endpoints in distinct dyads are
/// pairwise at least `k` hops apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadSeparatedSet {
    pub k: usize,
    pub dyads: Vec<(usize, usize)>,
}

impl DyadSeparatedSet {
    pub fn len(&self) -> usize {
        self.dyads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dyads.is_empty()
    }

    pub fn verify(&self, net: &FriendshipNetwork) -> Result<()> {
        let mut owner = vec![usize::MAX; net.n_units()];
        for (d, &(i, j)) in self.dyads.iter().enumerate() {
            if !net.has_edge(i, j) {
                return invalid(format!("dyad ({i}, {j}) is not an edge"));
            }
            for u in [i, j] {
                if owner[u] != usize::MAX {
                    return invalid(format!("unit {u} appears in two dyads"));
                }
                owner[u] = d;
            }
        }
        let mut search = BallSearch::new(net.n_units());
        for (d, &(i, j)) in self.dyads.iter().enumerate() {
            let mut clash = None;
            search.for_each_within(net, &[i, j], self.k.saturating_sub(1), |u| {
                if owner[u] != usize::MAX && owner[u] != d {
                    clash = Some(u);
                }
            });
            if let Some(u) = clash {
                return invalid(format!("dyad ({i}, {j}) is closer than {} hops to unit {u}", self.k));
            }
        }
        Ok(())
    }

    pub fn is_maximal(&self, net: &FriendshipNetwork) -> bool {
        let blocked = blocked_mask(net, self.dyads.iter().map(|&(i, j)| [i, j]), self.k);
        net.edges().all(|(i, j)| blocked[i] || blocked[j])
    }
}

fn blocked_mask<I>(net: &FriendshipNetwork, groups: I, k: usize) -> Vec<bool>
where
    I: Iterator<Item = [usize; 2]>,
{
    let mut blocked = vec![false; net.n_units()];
    let mut search = BallSearch::new(net.n_units());
    for g in groups {
        search.for_each_within(net, &g, k.saturating_sub(1), |u| blocked[u] = true);
    }
    blocked
}

fn check_search_args(k: usize, restarts: usize) -> Result<()> {
    if k == 0 {
        return invalid("separation degree k must be at least 1");
    }
    if restarts == 0 {
        return invalid("at least one greedy restart is required");
    }
    Ok(())
}

/// Greedy maximal k-degree separated set, best of `restarts` randomized passes.
///
/// Each pass visits eligible units in an independently shuffled order and
/// keeps a unit when it is not within `k - 1` hops of an accepted member.
/// Among passes of equal size the earliest one wins.
pub fn greedy_separated_set(
    net: &FriendshipNetwork,
    k: usize,
    eligibility: Eligibility,
    restarts: usize,
    seed: u64,
) -> Result<SeparatedSet> {
    let runs = greedy_separated_runs(net, k, eligibility, restarts, seed)?;
    let members = pick_largest(runs.into_iter().map(|s| s.members).collect());
    Ok(SeparatedSet { k, members, eligibility })
}

/// Every pass of [`greedy_separated_set`], in restart order.
pub fn greedy_separated_runs(
    net: &FriendshipNetwork,
    k: usize,
    eligibility: Eligibility,
    restarts: usize,
    seed: u64,
) -> Result<Vec<SeparatedSet>> {
    check_search_args(k, restarts)?;
    let candidates: Vec<usize> = (0..net.n_units()).filter(|&u| eligibility.admits(net, u)).collect();
    Ok((0..restarts)
        .into_par_iter()
        .map(|r| SeparatedSet {
            k,
            members: greedy_units_pass(net, k, &candidates, &mut stream_rng(seed, r as u64)),
            eligibility,
        })
        .collect())
}

fn greedy_units_pass(net: &FriendshipNetwork, k: usize, candidates: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.shuffle(rng);
    let mut blocked = vec![false; net.n_units()];
    let mut search = BallSearch::new(net.n_units());
    let mut members = Vec::new();
    for u in order {
        if blocked[u] {
            continue;
        }
        members.push(u);
        search.for_each_within(net, &[u], k - 1, |v| blocked[v] = true);
    }
    members.sort_unstable();
    members
}

/// Greedy maximal set of dyads whose cross-dyad endpoints are at least `k`
/// hops apart, best of `restarts` randomized passes.
pub fn greedy_dyad_separated_set(
    net: &FriendshipNetwork,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<DyadSeparatedSet> {
    check_search_args(k, restarts)?;
    let edges: Vec<(usize, usize)> = net.edges().collect();
    let runs: Vec<Vec<(usize, usize)>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut order = edges.clone();
            order.shuffle(&mut rng);
            let mut blocked = vec![false; net.n_units()];
            let mut search = BallSearch::new(net.n_units());
            let mut dyads = Vec::new();
            for (i, j) in order {
                if blocked[i] || blocked[j] {
                    continue;
                }
                dyads.push((i, j));
                search.for_each_within(net, &[i, j], k - 1, |v| blocked[v] = true);
            }
            dyads.sort_unstable();
            dyads
        })
        .collect();
    Ok(DyadSeparatedSet { k, dyads: pick_largest(runs) })
}

fn pick_largest<T>(runs: Vec<Vec<T>>) -> Vec<T> {
    let mut best: Option<Vec<T>> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.len() > b.len()) {
            best = Some(run);
        }
    }
    best.unwrap_or_default()
}
