//! Logistic layer models fitted by coding likelihood.
//!
//! A model predicts one layer of a unit from aggregate statistics of its
//! neighborhood rings. Rows come from a separated set, so the product of
//! per-row conditionals is a proper likelihood and ordinary logistic
//! regression machinery applies.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LayerValues, NetworkData};
use crate::error::{invalid, Error, Result};
use crate::network::{Eligibility, FriendshipNetwork, SeparatedSet};
use crate::sgraph::Layer;

/// Logistic function, computed without overflow for large `|x|`.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// One column of a design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    Intercept,
    /// The unit's own value of a layer.
    Own(Layer),
    /// Sum of a layer over the units at exactly this distance.
    RingSum(Layer, usize),
}

impl Feature {
    /// Value at `unit`, where `rings[d]` lists the units at distance `d`.
    pub fn evaluate(self, values: &LayerValues<'_>, unit: usize, rings: &[Vec<usize>]) -> f64 {
        match self {
            Feature::Intercept => 1.0,
            Feature::Own(layer) => values.get(layer)[unit],
            Feature::RingSum(layer, d) => {
                let v = values.get(layer);
                rings.get(d).map_or(0.0, |ring| ring.iter().map(|&k| v[k]).sum())
            }
        }
    }

    fn max_ring(self) -> usize {
        match self {
            Feature::RingSum(_, d) => d,
            _ => 0,
        }
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Feature::Intercept => write!(f, "1"),
            Feature::Own(layer) => write!(f, "{layer}_i"),
            Feature::RingSum(layer, d) => write!(f, "sum {layer} ring {d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    Null,
    Alternative,
}

/// Response layer plus ordered feature list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerModelSpec {
    pub layer: Layer,
    /// Set for the mechanism-test models, which need rings 1 and 2 non-empty.
    pub hypothesis: Option<Hypothesis>,
    pub features: Vec<Feature>,
}

impl LayerModelSpec {
    /// The nested pair used by the mechanism test of `layer`. The null model
    /// conditions on the layer's first ring and on lower layers over rings
    /// 0 to 3; the alternative appends the layer's second-ring sum.
    pub fn test_model(layer: Layer, hypothesis: Hypothesis) -> Self {
        use Feature::*;
        let lower = |below: Layer| [Own(below), RingSum(below, 1), RingSum(below, 2), RingSum(below, 3)];
        let mut features = vec![Intercept, RingSum(layer, 1)];
        match layer {
            Layer::L => {}
            Layer::A => features.extend(lower(Layer::L)),
            Layer::Y => {
                features.extend(lower(Layer::A));
                features.extend(lower(Layer::L));
            }
        }
        if hypothesis == Hypothesis::Alternative {
            features.push(RingSum(layer, 2));
        }
        Self { layer, hypothesis: Some(hypothesis), features }
    }

    /// Conditional of an undirected (contagion) `L` or `Y` layer given its
    /// first ring, as used to drive the Gibbs samplers.
    pub fn contagion_model(layer: Layer) -> Result<Self> {
        use Feature::*;
        let features = match layer {
            Layer::L => vec![Intercept, RingSum(Layer::L, 1)],
            Layer::Y => vec![
                Intercept,
                RingSum(Layer::Y, 1),
                Own(Layer::A),
                RingSum(Layer::A, 1),
                Own(Layer::L),
                RingSum(Layer::L, 1),
            ],
            Layer::A => return invalid("the treatment layer has no contagion model"),
        };
        Ok(Self { layer, hypothesis: None, features })
    }

    /// Outcome regression for a bidirected `Y` layer: no peer outcomes.
    pub fn outcome_regression() -> Self {
        use Feature::*;
        Self {
            layer: Layer::Y,
            hypothesis: None,
            features: vec![Intercept, Own(Layer::A), RingSum(Layer::A, 1), Own(Layer::L), RingSum(Layer::L, 1)],
        }
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn max_ring(&self) -> usize {
        self.features.iter().map(|f| f.max_ring()).max().unwrap_or(0)
    }

    pub fn feature_vector(&self, values: &LayerValues<'_>, unit: usize, rings: &[Vec<usize>]) -> Vec<f64> {
        self.features.iter().map(|f| f.evaluate(values, unit, rings)).collect()
    }
}

/// Design matrix and responses, one row per separated-set member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingSampleSet {
    pub spec: LayerModelSpec,
    /// Members the rows were built from, in row order.
    pub units: Vec<usize>,
    pub responses: Vec<f64>,
    /// Row-major, `units.len() * spec.n_features()` entries.
    pub design: Vec<f64>,
}

impl CodingSampleSet {
    /// Builds directly from rows; every row must match the spec's width.
    pub fn from_rows(spec: LayerModelSpec, rows: Vec<(usize, f64, Vec<f64>)>) -> Result<Self> {
        let p = spec.n_features();
        let mut out = Self { spec, units: Vec::new(), responses: Vec::new(), design: Vec::new() };
        for (unit, y, x) in rows {
            if x.len() != p {
                return invalid(format!("row for unit {unit} has {} features, expected {p}", x.len()));
            }
            out.units.push(unit);
            out.responses.push(y);
            out.design.extend(x);
        }
        Ok(out)
    }

    pub fn n_rows(&self) -> usize {
        self.responses.len()
    }

    pub fn n_features(&self) -> usize {
        self.spec.n_features()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.n_features();
        &self.design[r * p..(r + 1) * p]
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_features() {
            return invalid(format!("{} parameters for {} features", params.len(), self.n_features()));
        }
        Ok(())
    }
}

pub fn build_coding_samples(
    net: &FriendshipNetwork,
    data: &NetworkData,
    spec: &LayerModelSpec,
    sep: &SeparatedSet,
) -> Result<CodingSampleSet> {
    data.check_aligned(net)?;
    if spec.hypothesis.is_some() && sep.eligibility != Eligibility::NonEmptyRings12 {
        return Err(Error::Precondition(
            "mechanism-test samples need a separated set restricted to units with non-empty rings 1 and 2".into(),
        ));
    }
    let values = data.view();
    let response = data.layer(spec.layer);
    let max_ring = spec.max_ring();
    let rows = sep
        .members
        .iter()
        .map(|&i| {
            net.check_unit(i)?;
            let rings = net.rings(i, max_ring);
            Ok((i, response[i], spec.feature_vector(&values, i, &rings)))
        })
        .collect::<Result<Vec<_>>>()?;
    CodingSampleSet::from_rows(spec.clone(), rows)
}

pub fn coding_log_likelihood(samples: &CodingSampleSet, params: &[f64]) -> Result<f64> {
    samples.check_params(params)?;
    Ok((0..samples.n_rows())
        .map(|r| {
            let eta = dot(samples.row(r), params);
            samples.responses[r] * eta - softplus(eta)
        })
        .sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-likelihood, gradient and Hessian at `params`.
pub fn log_likelihood_derivatives(
    samples: &CodingSampleSet,
    params: &[f64],
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    samples.check_params(params)?;
    let p = samples.n_features();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    for r in 0..samples.n_rows() {
        let x = samples.row(r);
        let y = samples.responses[r];
        let eta = dot(x, params);
        let mu = expit(eta);
        let w = mu * (1.0 - mu);
        ll += y * eta - softplus(eta);
        for a in 0..p {
            grad[a] += (y - mu) * x[a];
            for b in 0..=a {
                hess[(a, b)] -= w * x[a] * x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            hess[(b, a)] = hess[(a, b)];
        }
    }
    Ok((ll, grad, hess))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the gradient max-norm.
    pub gradient_tolerance: f64,
    pub max_halvings: usize,
    /// Added to the diagonal when the Newton system is near singular.
    pub ridge: f64,
    /// Smallest acceptable eigenvalue of the column-normalized information
    /// matrix; anything lower is treated as separation or collinearity.
    pub min_information: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iterations: 100, gradient_tolerance: 1e-8, max_halvings: 30, ridge: 1e-8, min_information: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Why the fit is not usable, when `converged` is false.
    pub diagnostic: Option<String>,
}

impl FitResult {
    /// Converts a flagged fit into an error.
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::FitFailure(self.diagnostic.unwrap_or_else(|| "did not converge".into())))
        }
    }
}

/// Smallest eigenvalue of `m` after scaling to unit diagonal by `scale`.
fn normalized_min_eigenvalue(m: &DMatrix<f64>, scale: &DVector<f64>) -> f64 {
    let p = m.nrows();
    let mut s = m.clone();
    for a in 0..p {
        for b in 0..p {
            s[(a, b)] /= (scale[a] * scale[b]).sqrt();
        }
    }
    s.symmetric_eigenvalues().min()
}

/// Newton–Raphson with step-halving on the logistic coding likelihood.
/// Rank-deficient designs and separated data come back with
/// `converged = false` and a diagnostic rather than as an error, so callers
/// can report which fit failed.
pub fn fit_mle(samples: &CodingSampleSet, config: &FitConfig) -> Result<FitResult> {
    let p = samples.n_features();
    if samples.n_rows() == 0 {
        return Err(Error::InsufficientSample { available: 0, required: 1 });
    }
    let failed = |params: Vec<f64>, ll: f64, iterations, gradient_norm, why: String| FitResult {
        params,
        log_likelihood: ll,
        converged: false,
        iterations,
        gradient_norm,
        diagnostic: Some(why),
    };

    let mut gram = DMatrix::zeros(p, p);
    for r in 0..samples.n_rows() {
        let x = DVector::from_column_slice(samples.row(r));
        gram += &x * x.transpose();
    }
    let diag = gram.diagonal();
    if let Some(c) = diag.iter().position(|&d| d == 0.0) {
        let zero = vec![0.0; p];
        let ll = coding_log_likelihood(samples, &zero)?;
        return Ok(failed(
            zero,
            ll,
            0,
            f64::NAN,
            format!("feature '{}' is zero in every row", samples.spec.features[c]),
        ));
    }
    if normalized_min_eigenvalue(&gram, &diag) < 1e-10 {
        let zero = vec![0.0; p];
        let ll = coding_log_likelihood(samples, &zero)?;
        return Ok(failed(zero, ll, 0, f64::NAN, "design matrix is rank deficient".into()));
    }

    let mut beta = DVector::zeros(p);
    let (mut ll, mut grad, mut hess) = log_likelihood_derivatives(samples, beta.as_slice())?;
    let mut iterations = 0;
    loop {
        let gnorm = grad.amax();
        if gnorm < config.gradient_tolerance {
            break;
        }
        if iterations == config.max_iterations {
            return Ok(failed(
                beta.as_slice().to_vec(),
                ll,
                iterations,
                gnorm,
                format!("no convergence after {iterations} iterations (gradient max-norm {gnorm:.3e})"),
            ));
        }
        iterations += 1;
        let info = -&hess;
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let ridged = info + DMatrix::identity(p, p) * config.ridge;
                match ridged.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => {
                        return Ok(failed(
                            beta.as_slice().to_vec(),
                            ll,
                            iterations,
                            gnorm,
                            "information matrix is singular".into(),
                        ))
                    }
                }
            }
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=config.max_halvings {
            let trial = &beta + &step * scale;
            let trial_ll = coding_log_likelihood(samples, trial.as_slice())?;
            if trial_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent along the Newton direction: the gradient is already
            // as small as floating point allows.
            break;
        }
        (ll, grad, hess) = log_likelihood_derivatives(samples, beta.as_slice())?;
    }

    let gnorm = grad.amax();
    let params = beta.as_slice().to_vec();
    if gnorm >= config.gradient_tolerance.max(1e-6) {
        return Ok(failed(params, ll, iterations, gnorm, format!("stalled with gradient max-norm {gnorm:.3e}")));
    }
    let info_min = normalized_min_eigenvalue(&(-&hess), &diag);
    if info_min < config.min_information {
        return Ok(failed(
            params,
            ll,
            iterations,
            gnorm,
            format!("fitted probabilities saturate (information eigenvalue {info_min:.3e}); data are separated"),
        ));
    }
    Ok(FitResult { params, log_likelihood: ll, converged: true, iterations, gradient_norm: gnorm, diagnostic: None })
}

/// Upper tail `P(X >= x)` for `X ~ chi-square(df)`.
pub fn chi_square_sf(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return invalid("degrees of freedom must be positive");
    }
    if !(x >= 0.0) {
        return invalid(format!("chi-square statistic {x} must be non-negative"));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(statrs::function::gamma::gamma_ur(df as f64 / 2.0, x / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l_data(l: Vec<f64>) -> NetworkData {
        let n = l.len();
        NetworkData::new(l, false, vec![0.0; n], vec![0.0; n]).unwrap()
    }

    #[test]
    fn expit_basics() {
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(50.0) <= 1.0 && expit(-50.0) > 0.0 && expit(-50.0) < 1e-20);
        assert!(expit(-800.0) >= 0.0 && expit(800.0) == 1.0);
        for x in [-30.0, -2.5, 0.1, 7.0] {
            assert!((expit(x) + expit(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn test_model_widths() {
        let widths: Vec<(usize, usize)> = Layer::ALL
            .iter()
            .map(|&l| {
                (
                    LayerModelSpec::test_model(l, Hypothesis::Null).n_features(),
                    LayerModelSpec::test_model(l, Hypothesis::Alternative).n_features(),
                )
            })
            .collect();
        assert_eq!(widths, vec![(2, 3), (6, 7), (10, 11)]);
        for layer in Layer::ALL {
            let null = LayerModelSpec::test_model(layer, Hypothesis::Null);
            let alt = LayerModelSpec::test_model(layer, Hypothesis::Alternative);
            assert_eq!(&alt.features[..null.n_features()], &null.features[..]);
            assert_eq!(alt.features.last(), Some(&Feature::RingSum(layer, 2)));
        }
        assert_eq!(LayerModelSpec::contagion_model(Layer::Y).unwrap().n_features(), 6);
    }

    #[test]
    fn l_null_row_is_intercept_and_neighbor_sum() {
        // Star on 0 with a tail so unit 0 has a second ring.
        let net = FriendshipNetwork::from_edges(5, [(0, 1), (0, 2), (0, 3), (3, 4)]).unwrap();
        let data = l_data(vec![0.0, 1.0, 0.0, 1.0, 1.0]);
        let sep = SeparatedSet { k: 6, members: vec![0], eligibility: Eligibility::NonEmptyRings12 };
        let s =
            build_coding_samples(&net, &data, &LayerModelSpec::test_model(Layer::L, Hypothesis::Null), &sep).unwrap();
        assert_eq!(s.row(0), &[1.0, 2.0]);
        let none = SeparatedSet { eligibility: Eligibility::None, ..sep };
        assert!(matches!(
            build_coding_samples(&net, &data, &LayerModelSpec::test_model(Layer::L, Hypothesis::Null), &none),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn likelihood_hand_values() {
        let spec = LayerModelSpec { layer: Layer::L, hypothesis: None, features: vec![Feature::Intercept] };
        let empty = CodingSampleSet::from_rows(spec.clone(), vec![]).unwrap();
        assert_eq!(coding_log_likelihood(&empty, &[0.3]).unwrap(), 0.0);
        let one = CodingSampleSet::from_rows(spec.clone(), vec![(0, 1.0, vec![1.0])]).unwrap();
        assert!((coding_log_likelihood(&one, &[2.0]).unwrap() - expit(2.0).ln()).abs() < 1e-14);
        let m = CodingSampleSet::from_rows(spec, (0..7).map(|i| (i, (i % 2) as f64, vec![1.0])).collect()).unwrap();
        assert!((coding_log_likelihood(&m, &[0.0]).unwrap() - 7.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(coding_log_likelihood(&m, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn intercept_only_fit_is_logit_of_mean() {
        let spec = LayerModelSpec { layer: Layer::L, hypothesis: None, features: vec![Feature::Intercept] };
        let rows = (0..40).map(|i| (i, if i % 5 == 0 { 1.0 } else { 0.0 }, vec![1.0])).collect();
        let s = CodingSampleSet::from_rows(spec, rows).unwrap();
        let fit = fit_mle(&s, &FitConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.params[0] - (0.2f64 / 0.8).ln()).abs() < 1e-9);
        assert!(fit.gradient_norm < 1e-6);
    }

    #[test]
    fn separation_and_collinearity_are_flagged() {
        let spec = LayerModelSpec {
            layer: Layer::L,
            hypothesis: None,
            features: vec![Feature::Intercept, Feature::RingSum(Layer::L, 1)],
        };
        let separated: Vec<_> = (0..20).map(|i| (i, (i >= 10) as u8 as f64, vec![1.0, i as f64])).collect();
        let fit =
            fit_mle(&CodingSampleSet::from_rows(spec.clone(), separated).unwrap(), &FitConfig::default()).unwrap();
        assert!(!fit.converged && fit.diagnostic.is_some());
        assert!(matches!(fit.into_converged(), Err(Error::FitFailure(_))));

        let collinear: Vec<_> = (0..20).map(|i| (i, (i % 3 == 0) as u8 as f64, vec![1.0, 2.0])).collect();
        let fit =
            fit_mle(&CodingSampleSet::from_rows(spec.clone(), collinear).unwrap(), &FitConfig::default()).unwrap();
        assert_eq!(fit.diagnostic.as_deref(), Some("design matrix is rank deficient"));

        let constant: Vec<_> = (0..20).map(|i| (i, 1.0, vec![1.0, (i % 4) as f64])).collect();
        let fit = fit_mle(&CodingSampleSet::from_rows(spec, constant).unwrap(), &FitConfig::default()).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn chi_square_tail_edges() {
        for k in 1..6 {
            assert_eq!(chi_square_sf(0.0, k).unwrap(), 1.0);
        }
        assert!(chi_square_sf(-1.0, 1).is_err());
        assert!(chi_square_sf(1.0, 0).is_err());
        // Known quantiles.
        assert!((chi_square_sf(3.841458820694124, 1).unwrap() - 0.05).abs() < 1e-12);
        assert!((chi_square_sf(2.0, 2).unwrap() - (-1.0f64).exp()).abs() < 1e-14);
    }
}
