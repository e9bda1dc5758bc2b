//! Coding likelihood ratio tests deciding, layer by layer, between contagion
//! (undirected edges) and latent confounding (bidirected edges).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::NetworkData;
use crate::error::{invalid, Error, Result};
use crate::glm::{build_coding_samples, chi_square_sf, fit_mle, FitConfig, FitResult, Hypothesis, LayerModelSpec};
use crate::network::{greedy_separated_set, Eligibility, FriendshipNetwork, SeparatedSet};
use crate::sgraph::{Layer, Mechanism, SegregatedGraphSpec};

/// Hop separation needed for the coding likelihood to factorize.
pub const TEST_SEPARATION: usize = 6;

/// Slack allowed for a negative likelihood ratio from optimizer tolerance.
const LR_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTestResult {
    pub layer: Layer,
    /// `-2 (logCL(null) - logCL(alternative))`, never below `-1e-6`.
    pub lr_statistic: f64,
    pub df: u32,
    pub p_value: f64,
    /// `Bidirected` when the null is rejected, `Undirected` otherwise.
    pub decision: Mechanism,
    pub effective_sample_size: usize,
    pub null_fit: FitResult,
    pub alternative_fit: FitResult,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("significance level {alpha} outside (0, 1]"));
    }
    Ok(())
}

pub fn test_layer(
    net: &FriendshipNetwork,
    data: &NetworkData,
    layer: Layer,
    alpha: f64,
    sep: &SeparatedSet,
) -> Result<LayerTestResult> {
    check_alpha(alpha)?;
    if sep.k < TEST_SEPARATION || sep.eligibility != Eligibility::NonEmptyRings12 {
        return Err(Error::Precondition(format!(
            "layer tests need a {TEST_SEPARATION}-separated set of units with non-empty rings 1 and 2 \
             (got k = {}, {:?})",
            sep.k, sep.eligibility
        )));
    }
    if layer == Layer::L && data.l_continuous() {
        return Err(Error::UnsupportedModel("the L-layer test needs binary L".into()));
    }
    let null = LayerModelSpec::test_model(layer, Hypothesis::Null);
    let alt = LayerModelSpec::test_model(layer, Hypothesis::Alternative);
    let required = alt.n_features() + 1;
    if sep.len() < required {
        return Err(Error::InsufficientSample { available: sep.len(), required });
    }
    let config = FitConfig::default();
    let null_fit = fit_mle(&build_coding_samples(net, data, &null, sep)?, &config)?;
    let alternative_fit = fit_mle(&build_coding_samples(net, data, &alt, sep)?, &config)?;
    for (name, fit) in [("null", &null_fit), ("alternative", &alternative_fit)] {
        if !fit.converged {
            return Err(Error::FitFailure(format!(
                "{layer}-layer {name} model: {}",
                fit.diagnostic.as_deref().unwrap_or("did not converge")
            )));
        }
    }
    let lr_statistic = -2.0 * (null_fit.log_likelihood - alternative_fit.log_likelihood);
    if lr_statistic < -LR_SLACK {
        return Err(Error::FitFailure(format!(
            "{layer}-layer alternative fit is worse than the nested null (statistic {lr_statistic:.3e})"
        )));
    }
    let df = (alt.n_features() - null.n_features()) as u32;
    let p_value = chi_square_sf(lr_statistic.max(0.0), df)?;
    let decision = if p_value < alpha { Mechanism::Bidirected } else { Mechanism::Undirected };
    Ok(LayerTestResult {
        layer,
        lr_statistic,
        df,
        p_value,
        decision,
        effective_sample_size: sep.len(),
        null_fit,
        alternative_fit,
    })
}

/// Outcome of testing all three layers on one shared separated set.
#[derive(Debug)]
pub struct MechanismReport {
    /// Layers whose test failed stay `Unknown`.
    pub spec: SegregatedGraphSpec,
    pub separated_set: SeparatedSet,
    pub layers: Vec<(Layer, Result<LayerTestResult>)>,
}

/// Runs the three layer tests on `sep`.
pub fn determine_mechanisms_with(
    net: &FriendshipNetwork,
    data: &NetworkData,
    alpha: f64,
    sep: SeparatedSet,
) -> Result<MechanismReport> {
    check_alpha(alpha)?;
    data.check_aligned(net)?;
    let layers: Vec<(Layer, Result<LayerTestResult>)> =
        Layer::ALL.par_iter().map(|&layer| (layer, test_layer(net, data, layer, alpha, &sep))).collect();
    let mut spec = SegregatedGraphSpec::undetermined();
    for (layer, outcome) in &layers {
        if let Ok(r) = outcome {
            spec.set(*layer, r.decision);
        }
    }
    Ok(MechanismReport { spec, separated_set: sep, layers })
}

/// Builds a maximal 6-separated set (best of `restarts` greedy passes) and
/// tests every layer on it.
pub fn determine_mechanisms(
    net: &FriendshipNetwork,
    data: &NetworkData,
    alpha: f64,
    restarts: usize,
    seed: u64,
) -> Result<MechanismReport> {
    check_alpha(alpha)?;
    data.check_aligned(net)?;
    let sep = greedy_separated_set(net, TEST_SEPARATION, Eligibility::NonEmptyRings12, restarts, seed)?;
    determine_mechanisms_with(net, data, alpha, sep)
}
