//! Network causal effects `E[Y_i | do(A = a)]` under full interference.
//!
//! Draws of `L` come from a Gibbs chain when the `L` layer is undirected and
//! from a multivariate normal dyad model when it is bidirected. Outcomes come
//! from a Gibbs chain per `L` draw when `Y` is undirected, or from an outcome
//! regression evaluated at each draw when `Y` is bidirected. With both layers
//! undirected this is plain auto-g-computation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LayerValues, NetworkData};
use crate::error::{invalid, Error, Result};
use crate::glm::{build_coding_samples, expit, fit_mle, Feature, FitConfig, LayerModelSpec};
use crate::mvn::AdjacencyMvn;
use crate::network::{
    greedy_dyad_separated_set, greedy_separated_set, DyadSeparatedSet, Eligibility, FriendshipNetwork, SeparatedSet,
};
use crate::rng::{derive_seed, stream_rng};
use crate::sgraph::{Layer, Mechanism, SegregatedGraphSpec};

/// Hop separation for the estimation coding likelihoods.
pub const ESTIMATION_SEPARATION: usize = 2;
/// Greedy restarts used when the caller does not pick separated sets.
pub const DEFAULT_RESTARTS: usize = 10;

/// L draws generated per batch before outcomes are computed in parallel.
const BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Retained draws `M`.
    pub n_draws: usize,
    /// Sweeps between retained draws `T`.
    pub thinning: usize,
    /// Sweeps discarded before the first retained draw `m*`.
    pub burn_in: usize,
}

impl GibbsConfig {
    /// `M = ceil(0.3 N)`, `T = 3`, `m* = 200`.
    pub fn for_network(n_units: usize) -> Self {
        Self { n_draws: ((0.3 * n_units as f64).ceil() as usize).max(1), thinning: 3, burn_in: 200 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 || self.thinning == 0 {
            return invalid(format!("need at least one draw and thinning >= 1, got {self:?}"));
        }
        Ok(())
    }
}

/// Shared mean, variance and adjacent-pair covariance of a bidirected `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LBidirectedParams {
    pub mean: f64,
    pub variance: f64,
    pub covariance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LLayerParams {
    /// Logistic conditional on the first-ring sum: `[intercept, neighbor sum]`.
    Contagion(Vec<f64>),
    /// Real-valued `L` treated as undirected: `L_i | rest ~ N(intercept +
    /// neighbor * sum, variance)`.
    AutoGaussian {
        intercept: f64,
        neighbor: f64,
        variance: f64,
    },
    Bidirected(LBidirectedParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum YLayerParams {
    /// Coefficients for `LayerModelSpec::contagion_model(Layer::Y)`.
    Contagion(Vec<f64>),
    /// Coefficients for `LayerModelSpec::outcome_regression()`.
    OutcomeRegression(Vec<f64>),
}

fn check_mechanism(m: Mechanism, layer: Layer) -> Result<()> {
    if m == Mechanism::Unknown {
        return Err(Error::Precondition(format!("{layer}-layer mechanism is undetermined")));
    }
    Ok(())
}

fn fit_logistic(
    net: &FriendshipNetwork,
    data: &NetworkData,
    spec: &LayerModelSpec,
    sep: &SeparatedSet,
) -> Result<Vec<f64>> {
    let samples = build_coding_samples(net, data, spec, sep)?;
    Ok(fit_mle(&samples, &FitConfig::default())?.into_converged()?.params)
}

/// Closed-form maximizer of the exchangeable bivariate normal likelihood over
/// dyads.
pub fn fit_dyad_normal(pairs: &[(f64, f64)]) -> Result<LBidirectedParams> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSample { available: 0, required: 1 });
    }
    let d = pairs.len() as f64;
    let mean = pairs.iter().map(|(x, y)| x + y).sum::<f64>() / (2.0 * d);
    let variance = pairs.iter().map(|(x, y)| (x - mean).powi(2) + (y - mean).powi(2)).sum::<f64>() / (2.0 * d);
    let covariance = pairs.iter().map(|(x, y)| (x - mean) * (y - mean)).sum::<f64>() / d;
    if !(variance > 0.0) || covariance.abs() >= variance {
        return Err(Error::FitFailure(format!(
            "degenerate dyad estimates: variance {variance:.6e}, covariance {covariance:.6e}"
        )));
    }
    Ok(LBidirectedParams { mean, variance, covariance })
}

/// Least-squares fit of `L_i` on its first-ring sum over `sep`.
fn fit_auto_gaussian(net: &FriendshipNetwork, l: &[f64], sep: &SeparatedSet) -> Result<LLayerParams> {
    let rows: Vec<(f64, f64)> =
        sep.members.iter().map(|&i| (net.neighbors(i).iter().map(|&j| l[j]).sum(), l[i])).collect();
    if rows.len() < 3 {
        return Err(Error::InsufficientSample { available: rows.len(), required: 3 });
    }
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let sxx = rows.iter().map(|r| (r.0 - mx).powi(2)).sum::<f64>();
    if !(sxx > 0.0) {
        return Err(Error::FitFailure("neighbor sums of L are constant".into()));
    }
    let neighbor = rows.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum::<f64>() / sxx;
    let intercept = my - neighbor * mx;
    let variance = rows.iter().map(|r| (r.1 - intercept - neighbor * r.0).powi(2)).sum::<f64>() / (n - 2.0);
    Ok(LLayerParams::AutoGaussian { intercept, neighbor, variance })
}

pub fn fit_l_layer(
    net: &FriendshipNetwork,
    data: &NetworkData,
    mechanism: Mechanism,
    sep_units: &SeparatedSet,
    sep_dyads: &DyadSeparatedSet,
) -> Result<LLayerParams> {
    check_mechanism(mechanism, Layer::L)?;
    data.check_aligned(net)?;
    match (mechanism, data.l_continuous()) {
        (Mechanism::Bidirected, false) => {
            Err(Error::UnsupportedModel("a bidirected L layer is modeled only for real-valued L".into()))
        }
        (Mechanism::Bidirected, true) => {
            let l = data.layer(Layer::L);
            let pairs: Vec<(f64, f64)> = sep_dyads.dyads.iter().map(|&(i, j)| (l[i], l[j])).collect();
            let p = fit_dyad_normal(&pairs)?;
            // Refuse estimates that cannot drive the sampler.
            AdjacencyMvn::new(net, p.mean, p.variance, p.covariance)?;
            Ok(LLayerParams::Bidirected(p))
        }
        (_, true) => fit_auto_gaussian(net, data.layer(Layer::L), sep_units),
        (_, false) => {
            fit_logistic(net, data, &LayerModelSpec::contagion_model(Layer::L)?, sep_units).map(LLayerParams::Contagion)
        }
    }
}

pub fn fit_y_layer(
    net: &FriendshipNetwork,
    data: &NetworkData,
    mechanism: Mechanism,
    sep_units: &SeparatedSet,
) -> Result<YLayerParams> {
    check_mechanism(mechanism, Layer::Y)?;
    data.check_aligned(net)?;
    if mechanism == Mechanism::Undirected {
        fit_logistic(net, data, &LayerModelSpec::contagion_model(Layer::Y)?, sep_units).map(YLayerParams::Contagion)
    } else {
        fit_logistic(net, data, &LayerModelSpec::outcome_regression(), sep_units).map(YLayerParams::OutcomeRegression)
    }
}

/// Linear predictor of `layer` at each unit split into the part that does
/// not involve the layer itself and the coefficient on its first-ring sum.
fn split_predictor(
    net: &FriendshipNetwork,
    spec: &LayerModelSpec,
    params: &[f64],
    values: &LayerValues<'_>,
) -> (Vec<f64>, f64) {
    let coupling: f64 =
        spec.features.iter().zip(params).filter(|(f, _)| **f == Feature::RingSum(spec.layer, 1)).map(|(_, p)| p).sum();
    let base = (0..net.n_units())
        .map(|i| {
            spec.features
                .iter()
                .zip(params)
                .map(|(&f, &p)| {
                    p * match f {
                        Feature::Intercept => 1.0,
                        Feature::Own(layer) => values.get(layer)[i],
                        Feature::RingSum(layer, 1) if layer == spec.layer => 0.0,
                        Feature::RingSum(layer, 1) => net.neighbors(i).iter().map(|&j| values.get(layer)[j]).sum(),
                        Feature::RingSum(_, d) => panic!("estimation models use rings 0 and 1 only, got ring {d}"),
                    }
                })
                .sum()
        })
        .collect();
    (base, coupling)
}

/// Conditional `P(X_i = 1) = expit(base_i + coupling * s)` of a binary
/// layer with `s` the number of neighbors at 1. Probabilities are tabulated
/// per unit for every possible `s`, as 64-bit acceptance thresholds.
pub(crate) struct BinaryConditional {
    start: Vec<usize>,
    threshold: Vec<u64>,
}

impl BinaryConditional {
    pub(crate) fn new(net: &FriendshipNetwork, base: &[f64], coupling: f64) -> Self {
        let mut start = Vec::with_capacity(net.n_units() + 1);
        let mut threshold = Vec::new();
        for (i, &b) in base.iter().enumerate() {
            start.push(threshold.len());
            for s in 0..=net.degree(i) {
                // The float-to-int cast saturates, so p = 1 maps to u64::MAX.
                threshold.push((expit(b + coupling * s as f64) * 18_446_744_073_709_551_616.0) as u64);
            }
        }
        start.push(threshold.len());
        Self { start, threshold }
    }

    /// One systematic-scan sweep in ascending unit order.
    pub(crate) fn sweep<R: Rng + ?Sized>(&self, net: &FriendshipNetwork, state: &mut [f64], rng: &mut R) {
        for i in 0..state.len() {
            let s = net.neighbors(i).iter().filter(|&&j| state[j] != 0.0).count();
            state[i] = if rng.next_u64() < self.threshold[self.start[i] + s] { 1.0 } else { 0.0 };
        }
    }
}

pub(crate) fn random_binary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

/// Source of `L` draws: a single thinned chain, or independent draws.
#[allow(clippy::large_enum_variant)]
enum LSampler {
    Chain { state: Vec<f64>, rng: ChaCha8Rng, step: ChainStep, thinning: usize },
    Independent { mvn: AdjacencyMvn, seed: u64 },
}

enum ChainStep {
    Logistic(BinaryConditional),
    Gaussian { intercept: f64, neighbor: f64, sd: f64 },
}

impl ChainStep {
    fn sweep(&self, net: &FriendshipNetwork, state: &mut [f64], rng: &mut ChaCha8Rng) {
        match self {
            ChainStep::Logistic(conditional) => conditional.sweep(net, state, rng),
            ChainStep::Gaussian { intercept, neighbor, sd } => {
                for i in 0..state.len() {
                    let s: f64 = net.neighbors(i).iter().map(|&j| state[j]).sum();
                    let z: f64 = rng.sample(StandardNormal);
                    state[i] = intercept + neighbor * s + sd * z;
                }
            }
        }
    }
}

impl LSampler {
    fn new(net: &FriendshipNetwork, params: &LLayerParams, config: &GibbsConfig, seed: u64) -> Result<Self> {
        let n = net.n_units();
        let mut rng = stream_rng(seed, 0);
        let (step, state) = match params {
            LLayerParams::Bidirected(p) => {
                return Ok(LSampler::Independent {
                    mvn: AdjacencyMvn::new(net, p.mean, p.variance, p.covariance)?,
                    seed,
                })
            }
            LLayerParams::Contagion(theta) => {
                let spec = LayerModelSpec::contagion_model(Layer::L)?;
                if theta.len() != spec.n_features() {
                    return invalid(format!("L contagion model takes {} parameters", spec.n_features()));
                }
                let zeros = vec![0.0; n];
                let values = LayerValues { l: &zeros, a: &zeros, y: &zeros };
                let (base, coupling) = split_predictor(net, &spec, theta, &values);
                (ChainStep::Logistic(BinaryConditional::new(net, &base, coupling)), random_binary(n, &mut rng))
            }
            &LLayerParams::AutoGaussian { intercept, neighbor, variance } => {
                // Diagonal dominance of the implied precision guarantees a
                // proper joint; without it the chain may diverge.
                if neighbor.abs() * net.max_degree() as f64 >= 1.0 || !(variance > 0.0) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "auto-Gaussian L with neighbor coefficient {neighbor:.4} and variance {variance:.4} \
                         cannot be certified as a proper joint for max degree {}",
                        net.max_degree()
                    )));
                }
                (ChainStep::Gaussian { intercept, neighbor, sd: variance.sqrt() }, vec![intercept; n])
            }
        };
        let mut state = state;
        for _ in 0..config.burn_in {
            step.sweep(net, &mut state, &mut rng);
        }
        Ok(LSampler::Chain { state, rng, step, thinning: config.thinning })
    }

    /// Draws with indices `range`, in order.
    fn next_batch(&mut self, net: &FriendshipNetwork, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        match self {
            LSampler::Chain { state, rng, step, thinning } => range
                .map(|_| {
                    for _ in 0..*thinning {
                        step.sweep(net, state, rng);
                    }
                    state.clone()
                })
                .collect(),
            LSampler::Independent { mvn, seed } => {
                range.into_par_iter().map(|m| mvn.sample(&mut stream_rng(*seed, 1 + m as u64))).collect()
            }
        }
    }
}

/// `M` retained states of the `L` chain (or independent draws for a
/// bidirected `L`).
pub fn sample_l(
    net: &FriendshipNetwork,
    params: &LLayerParams,
    config: &GibbsConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let mut sampler = LSampler::new(net, params, config, seed)?;
    Ok(sampler.next_batch(net, 0..config.n_draws))
}

/// Systematic-scan Gibbs draws of a binary `L` with logistic conditional
/// `expit(theta[0] + theta[1] * first-ring sum)`.
pub fn gibbs_sample_l(
    net: &FriendshipNetwork,
    theta: &[f64],
    config: &GibbsConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    sample_l(net, &LLayerParams::Contagion(theta.to_vec()), config, seed)
}

/// Independent draws of `L ~ N(mean·1, Σ)` with the adjacency covariance.
pub fn sample_l_mvn(
    net: &FriendshipNetwork,
    params: &LBidirectedParams,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mvn = AdjacencyMvn::new(net, params.mean, params.variance, params.covariance)?;
    Ok((0..n_draws).into_par_iter().map(|m| mvn.sample(&mut stream_rng(seed, 1 + m as u64))).collect())
}

fn check_treatment(net: &FriendshipNetwork, a: &[f64]) -> Result<()> {
    if a.len() != net.n_units() {
        return invalid(format!("treatment has {} entries for {} units", a.len(), net.n_units()));
    }
    if a.iter().any(|&x| x != 0.0 && x != 1.0) {
        return invalid("treatment must be binary");
    }
    Ok(())
}

/// Final state of a Y chain run for `burn_in` sweeps from a random start
/// given `l` and `a`.
fn y_chain(
    net: &FriendshipNetwork,
    theta: &[f64],
    l: &[f64],
    a: &[f64],
    burn_in: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let spec = LayerModelSpec::contagion_model(Layer::Y).expect("Y has one");
    let n = net.n_units();
    let zeros = vec![0.0; n];
    let (base, coupling) = split_predictor(net, &spec, theta, &LayerValues { l, a, y: &zeros });
    let conditional = BinaryConditional::new(net, &base, coupling);
    let mut y = random_binary(n, rng);
    for _ in 0..burn_in {
        conditional.sweep(net, &mut y, rng);
    }
    y
}

/// One `Y` state per `L` draw: each from its own chain with `m*` sweeps.
pub fn gibbs_sample_y(
    net: &FriendshipNetwork,
    theta: &[f64],
    l_draws: &[Vec<f64>],
    a: &[f64],
    config: &GibbsConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_treatment(net, a)?;
    if theta.len() != LayerModelSpec::contagion_model(Layer::Y)?.n_features() {
        return invalid("wrong number of Y contagion parameters");
    }
    Ok(l_draws
        .par_iter()
        .enumerate()
        .map(|(m, l)| y_chain(net, theta, l, a, config.burn_in, &mut stream_rng(seed, m as u64)))
        .collect())
}

/// `E[Y_i | a, l]` under the outcome regression.
fn outcome_predictions(net: &FriendshipNetwork, theta: &[f64], l: &[f64], a: &[f64]) -> Vec<f64> {
    let spec = LayerModelSpec::outcome_regression();
    let zeros = vec![0.0; net.n_units()];
    let (base, _) = split_predictor(net, &spec, theta, &LayerValues { l, a, y: &zeros });
    base.into_iter().map(expit).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub per_unit: Vec<f64>,
    pub population_average: f64,
    pub n_draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallEffect {
    pub treated: f64,
    pub control: f64,
    /// `treated - control`.
    pub effect: f64,
}

/// Fitted `L` and `Y` models for one mechanism configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEffectModel {
    pub spec: SegregatedGraphSpec,
    pub l: LLayerParams,
    pub y: YLayerParams,
}

impl FittedEffectModel {
    /// Fits on greedy maximal separated sets (best of `restarts`).
    pub fn fit(
        net: &FriendshipNetwork,
        data: &NetworkData,
        spec: &SegregatedGraphSpec,
        restarts: usize,
        seed: u64,
    ) -> Result<Self> {
        check_mechanism(spec.l, Layer::L)?;
        check_mechanism(spec.y, Layer::Y)?;
        data.check_aligned(net)?;
        let units =
            greedy_separated_set(net, ESTIMATION_SEPARATION, Eligibility::None, restarts, derive_seed(seed, 1))?;
        let dyads = if spec.l == Mechanism::Bidirected {
            greedy_dyad_separated_set(net, ESTIMATION_SEPARATION, restarts, derive_seed(seed, 2))?
        } else {
            DyadSeparatedSet { k: ESTIMATION_SEPARATION, dyads: Vec::new() }
        };
        Ok(Self {
            spec: *spec,
            l: fit_l_layer(net, data, spec.l, &units, &dyads)?,
            y: fit_y_layer(net, data, spec.y, &units)?,
        })
    }

    /// Estimates `E[Y_i | do(a)]` for every unit.
    pub fn estimate(
        &self,
        net: &FriendshipNetwork,
        a: &[f64],
        config: &GibbsConfig,
        seed: u64,
    ) -> Result<EffectEstimate> {
        config.validate()?;
        check_treatment(net, a)?;
        let n = net.n_units();
        let mut l_sampler = LSampler::new(net, &self.l, config, derive_seed(seed, 1))?;
        let y_seed = derive_seed(seed, 2);
        let mut sums = vec![0.0; n];
        let mut done = 0;
        while done < config.n_draws {
            let end = (done + BATCH).min(config.n_draws);
            let l_batch = l_sampler.next_batch(net, done..end);
            let outcomes: Vec<Vec<f64>> = l_batch
                .par_iter()
                .enumerate()
                .map(|(b, l)| match &self.y {
                    YLayerParams::Contagion(theta) => {
                        y_chain(net, theta, l, a, config.burn_in, &mut stream_rng(y_seed, (done + b) as u64))
                    }
                    YLayerParams::OutcomeRegression(theta) => outcome_predictions(net, theta, l, a),
                })
                .collect();
            for y in outcomes {
                for (s, v) in sums.iter_mut().zip(y) {
                    *s += v;
                }
            }
            done = end;
        }
        let per_unit: Vec<f64> = sums.into_iter().map(|s| s / config.n_draws as f64).collect();
        let population_average = per_unit.iter().sum::<f64>() / n.max(1) as f64;
        Ok(EffectEstimate { per_unit, population_average, n_draws: config.n_draws })
    }

    /// `E[Y | do(1)] - E[Y | do(0)]` averaged over units, each arm with its
    /// own seed.
    pub fn overall_effect(&self, net: &FriendshipNetwork, config: &GibbsConfig, seed: u64) -> Result<OverallEffect> {
        let n = net.n_units();
        let treated = self.estimate(net, &vec![1.0; n], config, derive_seed(seed, 11))?.population_average;
        let control = self.estimate(net, &vec![0.0; n], config, derive_seed(seed, 10))?.population_average;
        Ok(OverallEffect { treated, control, effect: treated - control })
    }
}

pub fn estimate_effects(
    net: &FriendshipNetwork,
    data: &NetworkData,
    spec: &SegregatedGraphSpec,
    a: &[f64],
    config: &GibbsConfig,
    seed: u64,
) -> Result<EffectEstimate> {
    if !spec.is_determined() {
        return Err(Error::Precondition(format!("mechanism configuration {spec} is not fully determined")));
    }
    FittedEffectModel::fit(net, data, spec, DEFAULT_RESTARTS, derive_seed(seed, 0))?.estimate(
        net,
        a,
        config,
        derive_seed(seed, 3),
    )
}

pub fn overall_effect(
    net: &FriendshipNetwork,
    data: &NetworkData,
    spec: &SegregatedGraphSpec,
    config: &GibbsConfig,
    seed: u64,
) -> Result<OverallEffect> {
    if !spec.is_determined() {
        return Err(Error::Precondition(format!("mechanism configuration {spec} is not fully determined")));
    }
    FittedEffectModel::fit(net, data, spec, DEFAULT_RESTARTS, derive_seed(seed, 0))?.overall_effect(
        net,
        config,
        derive_seed(seed, 3),
    )
}

/// Auto-g-computation: both `L` and `Y` treated as undirected.
pub fn auto_g_overall_effect(
    net: &FriendshipNetwork,
    data: &NetworkData,
    config: &GibbsConfig,
    seed: u64,
) -> Result<OverallEffect> {
    overall_effect(net, data, &SegregatedGraphSpec::uniform(Mechanism::Undirected), config, seed)
}
