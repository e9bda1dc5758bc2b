//! Synthetic networks and the layered data-generating processes used for
//! test calibration and estimator evaluation, plus ground-truth effects.

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{LayerValues, NetworkData};
use crate::error::{invalid, Error, Result};
use crate::estimator::{random_binary, BinaryConditional, GibbsConfig, OverallEffect};
use crate::glm::expit;
use crate::mvn::AdjacencyMvn;
use crate::network::FriendshipNetwork;
use crate::rng::{derive_seed, stream_rng};
use crate::sgraph::{Layer, Mechanism, SegregatedGraphSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DegreeRule {
    /// Target degrees uniform on `min..=max`.
    Range { min: usize, max: usize },
    /// Target degrees `1 + Binomial(max - 1, (mean - 1) / (max - 1))`.
    MeanMax { mean: f64, max: usize },
}

impl DegreeRule {
    fn bounds(&self) -> (usize, usize) {
        match *self {
            DegreeRule::Range { min, max } => (min, max),
            DegreeRule::MeanMax { max, .. } => (1, max),
        }
    }
}

/// Erdős–Gallai test.
fn is_graphical(degrees: &[usize]) -> bool {
    let mut d = degrees.to_vec();
    d.sort_unstable_by(|a, b| b.cmp(a));
    if d.iter().sum::<usize>() % 2 == 1 {
        return false;
    }
    let n = d.len();
    let mut lhs = 0;
    for k in 1..=n {
        lhs += d[k - 1];
        let rhs = k * (k - 1) + d[k..].iter().map(|&x| x.min(k)).sum::<usize>();
        if lhs > rhs {
            return false;
        }
    }
    true
}

fn target_degrees(n: usize, rule: DegreeRule, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let (min, max) = rule.bounds();
    if min > max {
        return invalid(format!("degree bounds {min}..={max} are empty"));
    }
    if n > 0 && max > n - 1 {
        return invalid(format!("maximum degree {max} impossible with {n} units"));
    }
    let mut degrees: Vec<usize> = match rule {
        DegreeRule::Range { min, max } => (0..n).map(|_| rng.random_range(min..=max)).collect(),
        DegreeRule::MeanMax { mean, max } => {
            if !(mean >= 1.0 && mean <= max as f64) {
                return invalid(format!("mean degree {mean} outside 1..={max}"));
            }
            if max == 1 {
                vec![1; n]
            } else {
                let binom = Binomial::new((max - 1) as u64, (mean - 1.0) / (max - 1) as f64)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                (0..n).map(|_| 1 + binom.sample(rng) as usize).collect()
            }
        }
    };
    if degrees.iter().sum::<usize>() % 2 == 1 {
        if min == max {
            return invalid(format!("{n} units of degree {min} have an odd degree total"));
        }
        // With min < max every unit can move one step and stay in bounds.
        let i = rng.random_range(0..n);
        if degrees[i] < max {
            degrees[i] += 1;
        } else {
            degrees[i] -= 1;
        }
    }
    if !is_graphical(&degrees) {
        return invalid("degree rule produced a sequence no simple graph realizes");
    }
    Ok(degrees)
}

/// Random simple graph with degrees drawn from `rule`, built by pairing
/// stubs, rejecting loops and duplicates, and rewiring any leftovers.
pub fn generate_network(n: usize, rule: DegreeRule, seed: u64) -> Result<FriendshipNetwork> {
    let mut rng = stream_rng(seed, 0);
    let degrees = target_degrees(n, rule, &mut rng)?;
    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut stubs: Vec<usize> = degrees.iter().enumerate().flat_map(|(i, &d)| std::iter::repeat_n(i, d)).collect();

    for _ in 0..20 {
        if stubs.is_empty() {
            break;
        }
        stubs.shuffle(&mut rng);
        let mut leftover = Vec::new();
        for pair in stubs.chunks(2) {
            let (u, v) = (pair[0], pair[1]);
            if u != v && adj[u].insert(v) {
                adj[v].insert(u);
                edges.push((u, v));
            } else {
                leftover.extend([u, v]);
            }
        }
        stubs = leftover;
    }

    // Each leftover stub pair (x, y) takes over an edge (u, v) as (x, u)
    // and (y, v), keeping every degree on target.
    stubs.shuffle(&mut rng);
    for pair in stubs.chunks(2) {
        let (x, y) = (pair[0], pair[1]);
        if x != y && adj[x].insert(y) {
            adj[y].insert(x);
            edges.push((x, y));
            continue;
        }
        let mut placed = false;
        for _ in 0..10_000 {
            if edges.is_empty() {
                break;
            }
            let e = rng.random_range(0..edges.len());
            let (mut u, mut v) = edges[e];
            if rng.random_bool(0.5) {
                std::mem::swap(&mut u, &mut v);
            }
            if [x, y].contains(&u) || [x, y].contains(&v) || adj[x].contains(&u) || adj[y].contains(&v) {
                continue;
            }
            edges.swap_remove(e);
            adj[u].remove(&v);
            adj[v].remove(&u);
            for (p, q) in [(x, u), (y, v)] {
                adj[p].insert(q);
                adj[q].insert(p);
                edges.push((p, q));
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Precondition(format!("could not realize the degree sequence near units {x} and {y}")));
        }
    }
    FriendshipNetwork::from_edges(n, edges)
}

/// Linear predictor terms of one layer's conditional. Own-value terms and
/// first-ring sums of each layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub intercept: f64,
    pub own_l: f64,
    pub own_a: f64,
    pub sum_l: f64,
    pub sum_a: f64,
    pub sum_y: f64,
}

impl Coefficients {
    fn own_sum(&self, layer: Layer) -> f64 {
        match layer {
            Layer::L => self.sum_l,
            Layer::A => self.sum_a,
            Layer::Y => self.sum_y,
        }
    }

    fn without_own_sum(mut self, layer: Layer) -> Self {
        match layer {
            Layer::L => self.sum_l = 0.0,
            Layer::A => self.sum_a = 0.0,
            Layer::Y => self.sum_y = 0.0,
        }
        self
    }

    /// Predictor at `i` using every term, reading layers from `values`.
    pub fn eta(&self, net: &FriendshipNetwork, values: &LayerValues<'_>, i: usize) -> f64 {
        let sum = |v: &[f64]| net.neighbors(i).iter().map(|&j| v[j]).sum::<f64>();
        let mut eta = self.intercept;
        for (coef, own, layer) in [
            (self.own_l, true, Layer::L),
            (self.own_a, true, Layer::A),
            (self.sum_l, false, Layer::L),
            (self.sum_a, false, Layer::A),
            (self.sum_y, false, Layer::Y),
        ] {
            if coef != 0.0 {
                eta += coef * if own { values.get(layer)[i] } else { sum(values.get(layer)) };
            }
        }
        eta
    }

    fn references(&self, layer: Layer) -> bool {
        match layer {
            Layer::L => self.own_l != 0.0 || self.sum_l != 0.0,
            Layer::A => self.own_a != 0.0 || self.sum_a != 0.0,
            Layer::Y => self.sum_y != 0.0,
        }
    }
}

/// How one layer is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerDgp {
    /// Undirected: Gibbs factors `Bernoulli(expit(eta))`, where `eta` may
    /// include the layer's own first-ring sum.
    Gibbs(Coefficients),
    /// Bidirected binary: one hidden `Normal(hidden_mean, hidden_sd)` per
    /// edge, entering as `hidden_weight` times the sum over incident edges.
    Hidden { coefficients: Coefficients, hidden_mean: f64, hidden_sd: f64, hidden_weight: f64 },
    /// Bidirected real-valued `L`: multivariate normal with `variance` on the
    /// diagonal and `covariance` between adjacent units.
    Normal { mean: f64, variance: f64, covariance: f64 },
}

impl LayerDgp {
    pub fn mechanism(&self) -> Mechanism {
        match self {
            LayerDgp::Gibbs(_) => Mechanism::Undirected,
            _ => Mechanism::Bidirected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub l: LayerDgp,
    pub a: LayerDgp,
    pub y: LayerDgp,
    /// Sweeps run before keeping the state of each undirected layer. Short
    /// burn-in leaves the data off the stationary distribution and biases
    /// calibration checks.
    pub burn_in_sweeps: usize,
}

fn gibbs(intercept: f64, own_l: f64, own_a: f64, sum_l: f64, sum_a: f64, sum_y: f64) -> LayerDgp {
    LayerDgp::Gibbs(Coefficients { intercept, own_l, own_a, sum_l, sum_a, sum_y })
}

fn hidden(c: Coefficients, mean: f64, weight: f64) -> LayerDgp {
    LayerDgp::Hidden { coefficients: c, hidden_mean: mean, hidden_sd: 1.0, hidden_weight: weight }
}

impl DgpConfig {
    /// Test-calibration process with contagion in every layer.
    pub fn h1_undirected() -> Self {
        Self {
            l: gibbs(0.0, 0.0, 0.0, -0.1, 0.0, 0.0),
            a: gibbs(0.0, 0.8, 0.0, -0.1, -0.1, 0.0),
            y: gibbs(0.0, 0.8, 1.7, -0.1, -0.1, -0.1),
            burn_in_sweeps: 200,
        }
    }

    /// Test-calibration process with latent confounding in every layer.
    pub fn h1_bidirected() -> Self {
        let c = |own_l, own_a, sum_l, sum_a| Coefficients { own_l, own_a, sum_l, sum_a, ..Default::default() };
        Self {
            l: hidden(c(0.0, 0.0, 0.0, 0.0), 0.0, 5.0),
            a: hidden(c(0.2, 0.0, 0.1, 0.0), 0.0, 5.0),
            y: hidden(c(0.2, -0.3, 0.1, -0.2), 0.0, 5.0),
            burn_in_sweeps: 200,
        }
    }

    /// Estimation process for the given per-layer mechanisms.
    pub fn h3(spec: &SegregatedGraphSpec) -> Result<Self> {
        if !spec.is_determined() {
            return Err(Error::Precondition(format!("mechanism configuration {spec} is not fully determined")));
        }
        let undirected = |m| m == Mechanism::Undirected;
        let l = if undirected(spec.l) {
            gibbs(-0.3, 0.0, 0.0, 0.4, 0.0, 0.0)
        } else {
            LayerDgp::Normal { mean: 0.7, variance: 3.5, covariance: 0.2 }
        };
        let a = if undirected(spec.a) {
            gibbs(5.0, 4.0, 0.0, -1.2, -2.0, 0.0)
        } else {
            let c = Coefficients { intercept: 1.3, own_l: -0.4, sum_l: -0.7, ..Default::default() };
            hidden(c, 2.0, 0.2)
        };
        let y = if undirected(spec.y) {
            gibbs(2.0, 1.0, 1.5, -5.3, 1.0, -4.0)
        } else {
            let c = Coefficients { intercept: -1.0, own_l: 0.1, own_a: 1.0, sum_l: -0.3, sum_a: 1.0, sum_y: 0.0 };
            hidden(c, 0.0, 2.0)
        };
        Ok(Self { l, a, y, burn_in_sweeps: 200 })
    }

    /// `h1-undirected`, `h1-bidirected`, or `h3-` followed by a three-letter
    /// mechanism code such as `h3-BUB`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "h1-undirected" => Ok(Self::h1_undirected()),
            "h1-bidirected" => Ok(Self::h1_bidirected()),
            _ => match name.strip_prefix("h3-") {
                Some(code) => Self::h3(&SegregatedGraphSpec::from_str(code)?),
                None => invalid(format!("unknown preset '{name}'")),
            },
        }
    }

    pub fn spec(&self) -> SegregatedGraphSpec {
        SegregatedGraphSpec::new(self.l.mechanism(), self.a.mechanism(), self.y.mechanism())
    }

    pub fn layer(&self, layer: Layer) -> &LayerDgp {
        match layer {
            Layer::L => &self.l,
            Layer::A => &self.a,
            Layer::Y => &self.y,
        }
    }

    /// Layers may only depend on earlier layers, and only undirected layers
    /// on their own neighbors.
    pub fn validate(&self) -> Result<()> {
        for layer in Layer::ALL {
            let coefficients = match *self.layer(layer) {
                LayerDgp::Gibbs(c) => c.without_own_sum(layer),
                LayerDgp::Hidden { coefficients, hidden_sd, .. } => {
                    if !(hidden_sd >= 0.0) {
                        return invalid(format!("{layer}-layer hidden standard deviation must be non-negative"));
                    }
                    if coefficients.own_sum(layer) != 0.0 {
                        return invalid(format!("bidirected {layer} layer cannot depend on its own neighbors"));
                    }
                    coefficients
                }
                LayerDgp::Normal { variance, .. } => {
                    if layer != Layer::L {
                        return invalid("only the L layer can be multivariate normal");
                    }
                    if !(variance > 0.0) {
                        return invalid("normal L layer needs a positive variance");
                    }
                    Coefficients::default()
                }
            };
            let later: &[Layer] = match layer {
                Layer::L => &[Layer::L, Layer::A, Layer::Y],
                Layer::A => &[Layer::A, Layer::Y],
                Layer::Y => &[Layer::Y],
            };
            if later.iter().any(|&l| coefficients.references(l)) {
                return invalid(format!("{layer}-layer coefficients reference the layer itself or a later layer"));
            }
        }
        Ok(())
    }
}

/// Hidden-variable sum `Σ_{edges at i} H_e` for fresh edge draws.
fn hidden_sums(net: &FriendshipNetwork, mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(mean, sd).expect("sd validated non-negative");
    let mut sums = vec![0.0; net.n_units()];
    for (i, j) in net.edges() {
        let h = normal.sample(rng);
        sums[i] += h;
        sums[j] += h;
    }
    sums
}

/// Predictor of `layer` without the layer's own first-ring sum.
fn base_predictor(net: &FriendshipNetwork, c: &Coefficients, layer: Layer, values: &LayerValues<'_>) -> Vec<f64> {
    let c = c.without_own_sum(layer);
    (0..net.n_units()).map(|i| c.eta(net, values, i)).collect()
}

/// Success probabilities of a bidirected binary layer for one draw of the
/// hidden variables.
fn hidden_probabilities(
    net: &FriendshipNetwork,
    dgp: &LayerDgp,
    layer: Layer,
    values: &LayerValues<'_>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let LayerDgp::Hidden { coefficients, hidden_mean, hidden_sd, hidden_weight } = dgp else {
        unreachable!("called for hidden-variable layers only")
    };
    let base = base_predictor(net, coefficients, layer, values);
    let h = hidden_sums(net, *hidden_mean, *hidden_sd, rng);
    base.iter().zip(h).map(|(b, s)| expit(b + hidden_weight * s)).collect()
}

fn bernoulli_vector(p: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    p.iter().map(|&p| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect()
}

fn generate_layer(
    net: &FriendshipNetwork,
    config: &DgpConfig,
    layer: Layer,
    values: &LayerValues<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let dgp = config.layer(layer);
    Ok(match dgp {
        LayerDgp::Gibbs(c) => {
            let base = base_predictor(net, c, layer, values);
            let conditional = BinaryConditional::new(net, &base, c.own_sum(layer));
            let mut state = random_binary(net.n_units(), rng);
            for _ in 0..config.burn_in_sweeps {
                conditional.sweep(net, &mut state, rng);
            }
            state
        }
        LayerDgp::Hidden { .. } => {
            let p = hidden_probabilities(net, dgp, layer, values, rng);
            bernoulli_vector(&p, rng)
        }
        &LayerDgp::Normal { mean, variance, covariance } => {
            AdjacencyMvn::new(net, mean, variance, covariance)?.sample(rng)
        }
    })
}

/// Samples `L`, then `A` given `L`, then `Y` given both. Hidden variables
/// are drawn and dropped inside each layer.
pub fn generate_data(net: &FriendshipNetwork, config: &DgpConfig, seed: u64) -> Result<NetworkData> {
    config.validate()?;
    let n = net.n_units();
    let mut rng = stream_rng(seed, 0);
    let zeros = vec![0.0; n];
    let l = generate_layer(net, config, Layer::L, &LayerValues { l: &zeros, a: &zeros, y: &zeros }, &mut rng)?;
    let a = generate_layer(net, config, Layer::A, &LayerValues { l: &l, a: &zeros, y: &zeros }, &mut rng)?;
    let y = generate_layer(net, config, Layer::Y, &LayerValues { l: &l, a: &a, y: &zeros }, &mut rng)?;
    let continuous = matches!(config.l, LayerDgp::Normal { .. });
    NetworkData::new(l, continuous, a, y)
}

/// True `E[Y_i | do(A = a)]` per unit, from `M` draws of the
/// post-intervention process. Undirected layers continue a single thinned
/// chain (jointly over `L` and `Y` when both are undirected); an undirected
/// `Y` over independent `L` draws gets its own burn-in per draw; bidirected
/// `Y` averages exact success probabilities over fresh hidden draws.
pub fn ground_truth_means(
    net: &FriendshipNetwork,
    config: &DgpConfig,
    a: &[f64],
    gibbs: &GibbsConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    gibbs.validate()?;
    let n = net.n_units();
    if a.len() != n || a.iter().any(|&x| x != 0.0 && x != 1.0) {
        return invalid("treatment must be a binary vector over the units");
    }
    let mut rng = stream_rng(seed, 0);
    let zeros = vec![0.0; n];
    let mut sums = vec![0.0; n];

    let l_gibbs = match config.l {
        LayerDgp::Gibbs(c) => Some(BinaryConditional::new(
            net,
            &base_predictor(net, &c, Layer::L, &LayerValues { l: &zeros, a, y: &zeros }),
            c.sum_l,
        )),
        _ => None,
    };
    let mut l_state = if l_gibbs.is_some() { random_binary(n, &mut rng) } else { zeros.clone() };
    let mut y_state = random_binary(n, &mut rng);

    // One step of the joint chain, or a fresh L draw.
    let mvn = match config.l {
        LayerDgp::Normal { mean, variance, covariance } => Some(AdjacencyMvn::new(net, mean, variance, covariance)?),
        _ => None,
    };
    let advance_l = |l_state: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
        if let Some(conditional) = &l_gibbs {
            conditional.sweep(net, l_state, rng);
        } else if let Some(mvn) = &mvn {
            *l_state = mvn.sample(rng);
        } else {
            let p = hidden_probabilities(net, &config.l, Layer::L, &LayerValues { l: &zeros, a, y: &zeros }, rng);
            *l_state = bernoulli_vector(&p, rng);
        }
    };
    let y_conditional = |l: &[f64]| {
        let LayerDgp::Gibbs(c) = config.y else { unreachable!() };
        let base = base_predictor(net, &c, Layer::Y, &LayerValues { l, a, y: &zeros });
        BinaryConditional::new(net, &base, c.sum_y)
    };
    let y_sweep = |l: &[f64], y: &mut Vec<f64>, rng: &mut ChaCha8Rng| y_conditional(l).sweep(net, y, rng);
    let y_undirected = matches!(config.y, LayerDgp::Gibbs(_));
    let joint_chain = l_gibbs.is_some() && y_undirected;

    if l_gibbs.is_some() {
        for _ in 0..gibbs.burn_in {
            advance_l(&mut l_state, &mut rng);
            if joint_chain {
                y_sweep(&l_state, &mut y_state, &mut rng);
            }
        }
    }
    for _ in 0..gibbs.n_draws {
        if l_gibbs.is_some() {
            for _ in 0..gibbs.thinning {
                advance_l(&mut l_state, &mut rng);
                if joint_chain {
                    y_sweep(&l_state, &mut y_state, &mut rng);
                }
            }
        } else {
            advance_l(&mut l_state, &mut rng);
        }
        let values = LayerValues { l: &l_state, a, y: &zeros };
        let contribution = if joint_chain {
            y_state.clone()
        } else if y_undirected {
            let conditional = y_conditional(&l_state);
            let mut y = random_binary(n, &mut rng);
            for _ in 0..gibbs.burn_in {
                conditional.sweep(net, &mut y, &mut rng);
            }
            y
        } else {
            hidden_probabilities(net, &config.y, Layer::Y, &values, &mut rng)
        };
        for (s, v) in sums.iter_mut().zip(contribution) {
            *s += v;
        }
    }
    Ok(sums.into_iter().map(|s| s / gibbs.n_draws as f64).collect())
}

/// Population-average contrast between two treatment vectors, each arm with
/// its own seed.
pub fn ground_truth_effect(
    net: &FriendshipNetwork,
    config: &DgpConfig,
    arms: (&[f64], &[f64]),
    gibbs: &GibbsConfig,
    seed: u64,
) -> Result<OverallEffect> {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let treated = mean(ground_truth_means(net, config, arms.0, gibbs, derive_seed(seed, 11))?);
    let control = mean(ground_truth_means(net, config, arms.1, gibbs, derive_seed(seed, 10))?);
    Ok(OverallEffect { treated, control, effect: treated - control })
}

/// The all-treated versus all-control contrast.
pub fn ground_truth_overall_effect(
    net: &FriendshipNetwork,
    config: &DgpConfig,
    gibbs: &GibbsConfig,
    seed: u64,
) -> Result<OverallEffect> {
    let n = net.n_units();
    ground_truth_effect(net, config, (&vec![1.0; n], &vec![0.0; n]), gibbs, seed)
}
