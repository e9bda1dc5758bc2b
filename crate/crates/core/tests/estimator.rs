mod common;

use common::effect_check::{compare, model, L_LOGISTIC, L_NORMAL, Y_CONTAGION, Y_REGRESSION};
use common::oracle::{self, LModel, Tiny, YModel};
use netmech::data::NetworkData;
use netmech::dgp::{generate_data, generate_network, DegreeRule, DgpConfig};
use netmech::error::Error;
use netmech::estimator::{
    fit_dyad_normal, gibbs_sample_l, gibbs_sample_y, overall_effect, FittedEffectModel, GibbsConfig, LLayerParams,
    YLayerParams,
};
use netmech::network::FriendshipNetwork;
use netmech::rng::stream_rng;
use netmech::sgraph::{Layer, Mechanism, SegregatedGraphSpec};
use rand::Rng;
use rand_distr::StandardNormal;
use std::str::FromStr;

fn state_index(x: &[f64]) -> usize {
    x.iter().enumerate().map(|(i, &v)| (v as usize) << i).sum()
}

fn empirical(draws: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; 1 << n];
    for d in draws {
        counts[state_index(d)] += 1.0;
    }
    counts.iter().map(|c| c / draws.len() as f64).collect()
}

#[test]
fn effects_match_enumeration_on_small_networks() {
    let pairs: [(&LModel, &YModel); 4] = [
        (&L_LOGISTIC, &Y_CONTAGION),
        (&L_LOGISTIC, &Y_REGRESSION),
        (&L_NORMAL, &Y_CONTAGION),
        (&L_NORMAL, &Y_REGRESSION),
    ];
    let nets = [Tiny { n: 2, edges: vec![(0, 1)] }, Tiny { n: 3, edges: vec![(0, 1), (1, 2), (0, 2)] }];
    for (k, tiny) in nets.iter().enumerate() {
        let a: Vec<f64> = (0..tiny.n).map(|i| (i % 2 == 0) as u8 as f64).collect();
        for (p, (l, y)) in pairs.iter().enumerate() {
            let c = compare(tiny, l, y, &a, 20_000, 100 + 10 * k as u64 + p as u64);
            assert!(
                c.worst_z() < 3.0,
                "network {k}, pair {p}: {:?} vs {:?} (se {:?})",
                c.estimate,
                c.exact,
                c.standard_error
            );
        }
    }
}

#[test]
fn l_chain_reaches_the_auto_logistic_joint() {
    let tiny = Tiny { n: 3, edges: vec![(0, 1), (1, 2), (0, 2)] };
    let net = FriendshipNetwork::from_edges(3, tiny.edges.iter().copied()).unwrap();
    let draws =
        gibbs_sample_l(&net, &[-0.4, 0.9], &GibbsConfig { n_draws: 100_000, thinning: 3, burn_in: 200 }, 5).unwrap();
    let exact = oracle::auto_logistic(&tiny, &[-0.4; 3], 0.9);
    let tv = oracle::total_variation(&empirical(&draws, 3), &exact);
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn y_chains_reach_the_conditional_joint() {
    let tiny = Tiny { n: 3, edges: vec![(0, 1), (1, 2)] };
    let net = FriendshipNetwork::from_edges(3, tiny.edges.iter().copied()).unwrap();
    let theta = [-0.5, 0.7, 0.8, -0.3, 0.5, 0.2];
    let l = vec![1.0, 0.0, 1.0];
    let a = [0.0, 1.0, 1.0];
    let config = GibbsConfig { n_draws: 50_000, thinning: 1, burn_in: 200 };
    let draws = gibbs_sample_y(&net, &theta, &vec![l.clone(); config.n_draws], &a, &config, 9).unwrap();
    let sum = |x: &[f64], i: usize| tiny.adjacent(i).iter().map(|&j| x[j]).sum::<f64>();
    let base: Vec<f64> = (0..3)
        .map(|i| theta[0] + theta[2] * a[i] + theta[3] * sum(&a, i) + theta[4] * l[i] + theta[5] * sum(&l, i))
        .collect();
    let exact = oracle::auto_logistic(&tiny, &base, theta[1]);
    let tv = oracle::total_variation(&empirical(&draws, 3), &exact);
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn auto_g_matches_enumeration_on_an_eight_unit_network() {
    let tiny = Tiny { n: 8, edges: vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0), (0, 4)] };
    let a: Vec<f64> = (0..8).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let c = compare(&tiny, &L_LOGISTIC, &Y_CONTAGION, &a, 10_000, 77);
    assert!(c.worst_z() < 3.5, "{:?} vs {:?}", c.estimate, c.exact);
}

#[test]
fn dyad_fit_recovers_exchangeable_normal() {
    let (mean, variance, covariance): (f64, f64, f64) = (0.7, 3.5, 0.2);
    let mut rng = stream_rng(3, 0);
    // x = mean + a z1 + b z2, y = mean + a z2 + b z1 with a² + b² = var, 2ab = cov.
    let s = (variance + covariance).sqrt();
    let d = (variance - covariance).sqrt();
    let (p, q) = ((s + d) / 2.0, (s - d) / 2.0);
    let pairs: Vec<(f64, f64)> = (0..40_000)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (mean + p * z1 + q * z2, mean + p * z2 + q * z1)
        })
        .collect();
    let fit = fit_dyad_normal(&pairs).unwrap();
    assert!((fit.mean - mean).abs() < 0.04, "{fit:?}");
    assert!((fit.variance - variance).abs() < 0.08, "{fit:?}");
    assert!((fit.covariance - covariance).abs() < 0.08, "{fit:?}");
}

#[test]
fn degenerate_dyads_are_refused() {
    assert!(matches!(fit_dyad_normal(&[(1.0, 1.0), (2.0, 2.0)]), Err(Error::FitFailure(_))));
    assert!(matches!(fit_dyad_normal(&[]), Err(Error::InsufficientSample { .. })));
}

#[test]
fn null_treatment_coefficients_give_no_effect() {
    let net = FriendshipNetwork::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
    let mut fitted = model(&L_NORMAL, &Y_REGRESSION);
    fitted.y = YLayerParams::OutcomeRegression(vec![-0.4, 0.0, 0.0, 0.6, 0.3]);
    let e = fitted.overall_effect(&net, &GibbsConfig { n_draws: 40_000, thinning: 1, burn_in: 0 }, 4).unwrap();
    assert!(e.effect.abs() < 0.01, "{e:?}");
}

fn bbb_instance(n: usize, seed: u64) -> (FriendshipNetwork, NetworkData) {
    let cfg = DgpConfig::h3(&SegregatedGraphSpec::from_str("BBB").unwrap()).unwrap();
    let net = generate_network(n, DegreeRule::MeanMax { mean: 5.0, max: 10 }, seed).unwrap();
    let data = generate_data(&net, &cfg, seed + 1).unwrap();
    (net, data)
}

#[test]
fn treatment_layer_mechanism_does_not_change_estimates() {
    let (net, data) = bbb_instance(300, 8);
    let config = GibbsConfig { n_draws: 30, thinning: 3, burn_in: 20 };
    let bbb = overall_effect(&net, &data, &SegregatedGraphSpec::from_str("BBB").unwrap(), &config, 1).unwrap();
    let bub = overall_effect(&net, &data, &SegregatedGraphSpec::from_str("BUB").unwrap(), &config, 1).unwrap();
    assert_eq!(bbb, bub);
}

#[test]
fn estimates_are_deterministic_per_seed() {
    let (net, data) = bbb_instance(300, 8);
    let spec = SegregatedGraphSpec::from_str("BBU").unwrap();
    let config = GibbsConfig { n_draws: 20, thinning: 3, burn_in: 20 };
    let first = overall_effect(&net, &data, &spec, &config, 4).unwrap();
    assert_eq!(first, overall_effect(&net, &data, &spec, &config, 4).unwrap());
    assert_ne!(first, overall_effect(&net, &data, &spec, &config, 5).unwrap());
}

#[test]
fn fitting_rejects_unsupported_configurations() {
    let (net, data) = bbb_instance(200, 2);
    let binary_l = NetworkData::new(
        data.layer(Layer::L).iter().map(|&x| (x > 0.7) as u8 as f64).collect(),
        false,
        data.layer(Layer::A).to_vec(),
        data.layer(Layer::Y).to_vec(),
    )
    .unwrap();
    let spec = SegregatedGraphSpec::from_str("BUB").unwrap();
    assert!(matches!(FittedEffectModel::fit(&net, &binary_l, &spec, 2, 0), Err(Error::UnsupportedModel(_))));
    let unknown = SegregatedGraphSpec::new(Mechanism::Unknown, Mechanism::Undirected, Mechanism::Undirected);
    assert!(matches!(FittedEffectModel::fit(&net, &data, &unknown, 2, 0), Err(Error::Precondition(_))));
    let fitted = model(&L_NORMAL, &Y_REGRESSION);
    let config = GibbsConfig::for_network(200);
    assert!(matches!(fitted.estimate(&net, &[1.0; 3], &config, 0), Err(Error::InvalidArgument(_))));
    assert!(matches!(fitted.estimate(&net, &vec![0.5; 200], &config, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn unstable_auto_gaussian_is_refused() {
    let net = FriendshipNetwork::from_edges(3, [(0, 1), (1, 2)]).unwrap();
    let fitted = FittedEffectModel {
        spec: SegregatedGraphSpec::uniform(Mechanism::Undirected),
        l: LLayerParams::AutoGaussian { intercept: 0.0, neighbor: 0.6, variance: 1.0 },
        y: YLayerParams::Contagion(vec![0.0; 6]),
    };
    let r = fitted.estimate(&net, &[0.0; 3], &GibbsConfig::for_network(3), 0);
    assert!(matches!(r, Err(Error::NotPositiveDefinite(_))));
}
