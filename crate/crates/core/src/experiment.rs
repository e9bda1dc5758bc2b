//! Monte Carlo harnesses and the reports they produce: per-trial records
//! (plot-ready CSV) plus a JSON document echoing the configuration and seed.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::NetworkData;
use crate::dgp::{generate_data, generate_network, ground_truth_overall_effect, DegreeRule, DgpConfig};
use crate::error::{invalid, Error, Result};
use crate::estimator::{
    auto_g_overall_effect, overall_effect, EffectEstimate, FittedEffectModel, GibbsConfig, OverallEffect,
    DEFAULT_RESTARTS,
};
use crate::mechtest::{determine_mechanisms, test_layer, LayerTestResult, TEST_SEPARATION};
use crate::network::{greedy_separated_runs, greedy_separated_set, Eligibility, FriendshipNetwork, SeparatedSet};
use crate::rng::{derive_seed, stream_rng};
use crate::sgraph::{Layer, Mechanism, SegregatedGraphSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TestCalibration,
    TestPower,
    EstimationConsistency,
    NetworkAnalysis,
}

impl ExperimentKind {
    /// Preset used when none is given.
    pub fn default_preset(self) -> &'static str {
        match self {
            ExperimentKind::TestCalibration => "h1-undirected",
            ExperimentKind::TestPower => "h1-bidirected",
            ExperimentKind::EstimationConsistency => "h3-BBB",
            ExperimentKind::NetworkAnalysis => "",
        }
    }
}

/// Where each trial's network comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkSource {
    /// A fresh random network per trial. For estimation runs the unit count
    /// is the size being studied and `units` is ignored.
    Generated { units: usize, rule: DegreeRule },
    /// One fixed network read from a file.
    EdgeList { path: String, units: usize, edges: usize },
}

/// Everything needed to rerun an experiment bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub preset: Option<String>,
    /// Effective sample sizes for tests (empty: the whole separated set),
    /// network sizes for estimation.
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub alpha: f64,
    pub k: usize,
    pub restarts: usize,
    pub network: NetworkSource,
    /// Gibbs settings for estimation; `None` uses `GibbsConfig::for_network`.
    pub gibbs: Option<GibbsConfig>,
    /// Also run plain auto-g-computation in estimation trials.
    pub baseline: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Defaults for `kind`: 20,000-unit networks with degrees 1 to 6 for the
    /// tests, degrees averaging 5 (at most 10) for estimation.
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        let rule = match kind {
            ExperimentKind::EstimationConsistency => DegreeRule::MeanMax { mean: 5.0, max: 10 },
            _ => DegreeRule::Range { min: 1, max: 6 },
        };
        Self {
            kind,
            preset: None,
            sizes: Vec::new(),
            trials: 1,
            alpha: 0.05,
            k: TEST_SEPARATION,
            restarts: DEFAULT_RESTARTS,
            network: NetworkSource::Generated { units: 20_000, rule },
            gibbs: None,
            baseline: false,
            seed,
        }
    }

    fn dgp(&self) -> Result<DgpConfig> {
        DgpConfig::preset(self.preset.as_deref().unwrap_or(self.kind.default_preset()))
    }
}

/// One row of results. Test trials give one record per layer and size,
/// estimation trials one per size, network analysis one per greedy restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub size: usize,
    pub trial: usize,
    pub seed: u64,
    pub layer: Option<Layer>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub rejected: Option<bool>,
    pub estimate: Option<f64>,
    pub truth: Option<f64>,
    pub baseline: Option<f64>,
    pub set_size: Option<usize>,
    pub error: Option<String>,
}

impl TrialRecord {
    fn new(size: usize, trial: usize, seed: u64) -> Self {
        Self {
            size,
            trial,
            seed,
            layer: None,
            statistic: None,
            p_value: None,
            rejected: None,
            estimate: None,
            truth: None,
            baseline: None,
            set_size: None,
            error: None,
        }
    }
}

/// Aggregates over the records sharing a size (and layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub size: usize,
    pub layer: Option<Layer>,
    pub trials: usize,
    pub failures: usize,
    pub rejection_rate: Option<f64>,
    pub mean_estimate: Option<f64>,
    pub mean_truth: Option<f64>,
    /// Mean of `estimate - truth`.
    pub bias: Option<f64>,
    /// Sample standard deviation of `estimate - truth`.
    pub spread: Option<f64>,
    /// Mean of `baseline - truth`.
    pub baseline_bias: Option<f64>,
    pub max_set_size: Option<usize>,
    pub mean_set_size: Option<f64>,
    /// `max_set_size / size`.
    pub node_usage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Recomputes the summary from records, grouped by `(size, layer)` in order
/// of first appearance.
pub fn summarize(kind: ExperimentKind, records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Option<Layer>)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.size, r.layer)) {
            keys.push((r.size, r.layer));
        }
    }
    keys.into_iter()
        .map(|(size, layer)| {
            let group: Vec<&TrialRecord> = records.iter().filter(|r| r.size == size && r.layer == layer).collect();
            let failures = group.iter().filter(|r| r.error.is_some()).count();
            let mut row = SummaryRow {
                size,
                layer,
                trials: group.len(),
                failures,
                rejection_rate: None,
                mean_estimate: None,
                mean_truth: None,
                bias: None,
                spread: None,
                baseline_bias: None,
                max_set_size: None,
                mean_set_size: None,
                node_usage: None,
            };
            match kind {
                ExperimentKind::TestCalibration | ExperimentKind::TestPower => {
                    let decided: Vec<f64> =
                        group.iter().filter_map(|r| r.rejected).map(|b| f64::from(u8::from(b))).collect();
                    row.rejection_rate = mean(&decided);
                }
                ExperimentKind::EstimationConsistency => {
                    let pairs: Vec<(f64, f64)> = group.iter().filter_map(|r| Some((r.estimate?, r.truth?))).collect();
                    let errors: Vec<f64> = pairs.iter().map(|(e, t)| e - t).collect();
                    row.mean_estimate = mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
                    row.mean_truth = mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
                    row.bias = mean(&errors);
                    row.spread = sample_sd(&errors);
                    let base: Vec<f64> = group.iter().filter_map(|r| Some(r.baseline? - r.truth?)).collect();
                    row.baseline_bias = mean(&base);
                }
                ExperimentKind::NetworkAnalysis => {
                    let sizes: Vec<usize> = group.iter().filter_map(|r| r.set_size).collect();
                    row.max_set_size = sizes.iter().copied().max();
                    row.mean_set_size = mean(&sizes.iter().map(|&s| s as f64).collect::<Vec<_>>());
                    row.node_usage = row.max_set_size.map(|m| m as f64 / size.max(1) as f64);
                }
            }
            row
        })
        .collect()
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, records: Vec<TrialRecord>) -> Self {
        let summary = summarize(config.kind, &records);
        Self { config, records, summary }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }

    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(&self.records, writer)
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(&self.summary, writer)
    }
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| Error::Parse { line: k + 2, message: e.to_string() }))
        .collect()
}

/// Separated-set search on one network: every restart is a record.
pub fn analyze_network(
    net: &FriendshipNetwork,
    k: usize,
    restarts: usize,
    seed: u64,
    source: NetworkSource,
) -> Result<ExperimentReport> {
    let runs = greedy_separated_runs(net, k, Eligibility::NonEmptyRings12, restarts, seed)?;
    let records = runs
        .iter()
        .enumerate()
        .map(|(r, s)| TrialRecord { set_size: Some(s.len()), ..TrialRecord::new(net.n_units(), r, seed) })
        .collect();
    let mut config = ExperimentConfig::new(ExperimentKind::NetworkAnalysis, seed);
    config.k = k;
    config.restarts = restarts;
    config.network = source;
    Ok(ExperimentReport::new(config, records))
}

fn trial_network(
    config: &ExperimentConfig,
    fixed: Option<&FriendshipNetwork>,
    units: usize,
    seed: u64,
) -> Result<FriendshipNetwork> {
    match (&config.network, fixed) {
        (NetworkSource::EdgeList { .. }, Some(net)) => Ok(net.clone()),
        (NetworkSource::EdgeList { path, .. }, None) => invalid(format!("network from '{path}' was not supplied")),
        (NetworkSource::Generated { rule, .. }, _) => generate_network(units, *rule, seed),
    }
}

fn error_record(mut r: TrialRecord, e: &Error) -> TrialRecord {
    r.error = Some(e.to_string());
    r
}

fn test_trial(
    config: &ExperimentConfig,
    dgp: &DgpConfig,
    fixed: Option<&FriendshipNetwork>,
    trial: usize,
) -> Vec<TrialRecord> {
    let seed = derive_seed(config.seed, trial as u64);
    let units = match config.network {
        NetworkSource::Generated { units, .. } => units,
        NetworkSource::EdgeList { units, .. } => units,
    };
    let sizes = config.sizes.clone();
    let failed = |e: Error| -> Vec<TrialRecord> {
        let sizes = if sizes.is_empty() { vec![0] } else { sizes.clone() };
        sizes
            .iter()
            .flat_map(|&s| {
                Layer::ALL.map(|layer| {
                    error_record(TrialRecord { layer: Some(layer), ..TrialRecord::new(s, trial, seed) }, &e)
                })
            })
            .collect()
    };
    let prepared = (|| -> Result<(FriendshipNetwork, NetworkData, SeparatedSet)> {
        let net = trial_network(config, fixed, units, derive_seed(seed, 0))?;
        let data = generate_data(&net, dgp, derive_seed(seed, 1))?;
        let sep =
            greedy_separated_set(&net, config.k, Eligibility::NonEmptyRings12, config.restarts, derive_seed(seed, 2))?;
        Ok((net, data, sep))
    })();
    let (net, data, mut sep) = match prepared {
        Ok(p) => p,
        Err(e) => return failed(e),
    };
    // Random nested subsets: every size uses a prefix of one shuffled order.
    sep.members.shuffle(&mut stream_rng(seed, 3));
    let sizes = if config.sizes.is_empty() { vec![sep.len()] } else { config.sizes.clone() };
    let mut out = Vec::new();
    for size in sizes {
        for layer in Layer::ALL {
            let base =
                TrialRecord { layer: Some(layer), set_size: Some(sep.len()), ..TrialRecord::new(size, trial, seed) };
            let outcome = if size > sep.len() {
                Err(Error::InsufficientSample { available: sep.len(), required: size })
            } else {
                test_layer(&net, &data, layer, config.alpha, &sep.truncated(size))
            };
            out.push(match outcome {
                Ok(r) => TrialRecord {
                    statistic: Some(r.lr_statistic),
                    p_value: Some(r.p_value),
                    rejected: Some(r.decision == Mechanism::Bidirected),
                    ..base
                },
                Err(e) => error_record(base, &e),
            });
        }
    }
    out
}

fn estimation_trial(
    config: &ExperimentConfig,
    dgp: &DgpConfig,
    fixed: Option<&FriendshipNetwork>,
    size: usize,
    trial: usize,
) -> TrialRecord {
    let seed = derive_seed(derive_seed(config.seed, size as u64), trial as u64);
    let mut record = TrialRecord::new(size, trial, seed);
    let prepared = (|| -> Result<(FriendshipNetwork, NetworkData, GibbsConfig, OverallEffect)> {
        let net = trial_network(config, fixed, size, derive_seed(seed, 0))?;
        let data = generate_data(&net, dgp, derive_seed(seed, 1))?;
        let gibbs = config.gibbs.unwrap_or_else(|| GibbsConfig::for_network(net.n_units()));
        let truth = ground_truth_overall_effect(&net, dgp, &gibbs, derive_seed(seed, 2))?;
        Ok((net, data, gibbs, truth))
    })();
    let (net, data, gibbs, truth) = match prepared {
        Ok(p) => p,
        Err(e) => return error_record(record, &e),
    };
    record.truth = Some(truth.effect);
    let mut errors = Vec::new();
    match overall_effect(&net, &data, &dgp.spec(), &gibbs, derive_seed(seed, 3)) {
        Ok(e) => record.estimate = Some(e.effect),
        Err(e) => errors.push(e.to_string()),
    }
    if config.baseline {
        match auto_g_overall_effect(&net, &data, &gibbs, derive_seed(seed, 4)) {
            Ok(e) => record.baseline = Some(e.effect),
            Err(e) => errors.push(format!("baseline: {e}")),
        }
    }
    if !errors.is_empty() {
        record.error = Some(errors.join("; "));
    }
    record
}

/// Runs a test-calibration, test-power or estimation study. `fixed` must be
/// given when the configuration names an edge-list network.
pub fn simulate(config: &ExperimentConfig, fixed: Option<&FriendshipNetwork>) -> Result<ExperimentReport> {
    if config.trials == 0 {
        return invalid("at least one trial is required");
    }
    if !(config.alpha > 0.0 && config.alpha <= 1.0) {
        return invalid(format!("significance level {} outside (0, 1]", config.alpha));
    }
    if let Some(g) = &config.gibbs {
        g.validate()?;
    }
    let dgp = config.dgp()?;
    dgp.validate()?;
    let records: Vec<TrialRecord> = match config.kind {
        ExperimentKind::TestCalibration | ExperimentKind::TestPower => {
            if config.k < TEST_SEPARATION {
                return invalid(format!("layer tests need k >= {TEST_SEPARATION}"));
            }
            (0..config.trials).into_par_iter().flat_map_iter(|t| test_trial(config, &dgp, fixed, t)).collect()
        }
        ExperimentKind::EstimationConsistency => {
            let sizes = match (&config.network, fixed) {
                (NetworkSource::EdgeList { .. }, Some(net)) => vec![net.n_units()],
                _ if config.sizes.is_empty() => return invalid("estimation studies need at least one network size"),
                _ => config.sizes.clone(),
            };
            let jobs: Vec<(usize, usize)> =
                sizes.iter().flat_map(|&s| (0..config.trials).map(move |t| (s, t))).collect();
            jobs.into_par_iter().map(|(s, t)| estimation_trial(config, &dgp, fixed, s, t)).collect()
        }
        ExperimentKind::NetworkAnalysis => return invalid("use analyze_network for network analysis"),
    };
    Ok(ExperimentReport::new(config.clone(), records))
}

/// Serializable outcome of one layer test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOutcome {
    pub layer: Layer,
    pub result: Option<LayerTestResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// Three-letter code; `?` marks a layer whose test failed.
    pub spec: String,
    pub alpha: f64,
    pub restarts: usize,
    pub seed: u64,
    pub separated_set: SeparatedSet,
    pub layers: Vec<LayerOutcome>,
}

pub fn run_test(
    net: &FriendshipNetwork,
    data: &NetworkData,
    alpha: f64,
    restarts: usize,
    seed: u64,
) -> Result<TestReport> {
    let report = determine_mechanisms(net, data, alpha, restarts, seed)?;
    let layers = report
        .layers
        .into_iter()
        .map(|(layer, r)| match r {
            Ok(r) => LayerOutcome { layer, result: Some(r), error: None },
            Err(e) => LayerOutcome { layer, result: None, error: Some(e.to_string()) },
        })
        .collect();
    Ok(TestReport { spec: report.spec.to_string(), alpha, restarts, seed, separated_set: report.separated_set, layers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Treatment {
    Ones,
    Zeros,
    /// Both arms and their contrast.
    Both,
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub spec: String,
    /// The layer tests that chose `spec` in automatic mode.
    pub tests: Option<TestReport>,
    pub model: FittedEffectModel,
    pub gibbs: GibbsConfig,
    pub restarts: usize,
    pub seed: u64,
    /// Keyed by arm name (`treated`, `control`, or `custom`).
    pub estimates: Vec<(String, EffectEstimate)>,
    pub contrast: Option<OverallEffect>,
}

/// Fits the effect model (choosing the spec by testing first when `spec` is
/// `None`) and estimates the requested arms. The `both` contrast reuses the
/// seeds of [`FittedEffectModel::overall_effect`].
#[allow(clippy::too_many_arguments)]
pub fn run_estimate(
    net: &FriendshipNetwork,
    data: &NetworkData,
    spec: Option<SegregatedGraphSpec>,
    alpha: f64,
    treatment: &Treatment,
    gibbs: &GibbsConfig,
    restarts: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let (spec, tests) = match spec {
        Some(s) => (s, None),
        None => {
            let t = run_test(net, data, alpha, restarts, derive_seed(seed, 5))?;
            let s: SegregatedGraphSpec = t.spec.parse()?;
            if s.l == Mechanism::Unknown || s.y == Mechanism::Unknown {
                let why: Vec<String> = t.layers.iter().filter_map(|o| o.error.clone()).collect();
                return Err(Error::Precondition(format!("automatic mode could not determine {s}: {}", why.join("; "))));
            }
            // The treatment layer is intervened on, so its mechanism does not
            // enter the estimate.
            (SegregatedGraphSpec { a: Mechanism::Undirected, ..s }, Some(t))
        }
    };
    let model = FittedEffectModel::fit(net, data, &spec, restarts, derive_seed(seed, 0))?;
    let n = net.n_units();
    let run_seed = derive_seed(seed, 3);
    let arm = |a: Vec<f64>, label: u64| model.estimate(net, &a, gibbs, derive_seed(run_seed, label));
    let mut estimates = Vec::new();
    let mut contrast = None;
    match treatment {
        Treatment::Ones => estimates.push(("treated".to_string(), arm(vec![1.0; n], 11)?)),
        Treatment::Zeros => estimates.push(("control".to_string(), arm(vec![0.0; n], 10)?)),
        Treatment::Both => {
            let t = arm(vec![1.0; n], 11)?;
            let c = arm(vec![0.0; n], 10)?;
            contrast = Some(OverallEffect {
                treated: t.population_average,
                control: c.population_average,
                effect: t.population_average - c.population_average,
            });
            estimates.push(("treated".to_string(), t));
            estimates.push(("control".to_string(), c));
        }
        Treatment::Vector(a) => estimates.push(("custom".to_string(), arm(a.clone(), 12)?)),
    }
    Ok(EstimateReport { spec: spec.to_string(), tests, model, gibbs: *gibbs, restarts, seed, estimates, contrast })
}
