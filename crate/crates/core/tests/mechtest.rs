use netmech::data::NetworkData;
use netmech::dgp::{generate_data, generate_network, DegreeRule, DgpConfig};
use netmech::error::Error;
use netmech::mechtest::{determine_mechanisms, determine_mechanisms_with, test_layer, TEST_SEPARATION};
use netmech::network::{greedy_separated_set, Eligibility, FriendshipNetwork, SeparatedSet};
use netmech::rng::stream_rng;
use netmech::sgraph::{Layer, Mechanism};
use rand::seq::SliceRandom;

fn instance(n: usize, cfg: &DgpConfig, seed: u64) -> (FriendshipNetwork, NetworkData, SeparatedSet) {
    let net = generate_network(n, DegreeRule::Range { min: 1, max: 6 }, seed).unwrap();
    let data = generate_data(&net, cfg, seed + 1).unwrap();
    let sep = greedy_separated_set(&net, TEST_SEPARATION, Eligibility::NonEmptyRings12, 3, seed + 2).unwrap();
    (net, data, sep)
}

#[test]
fn level_one_rejects_every_layer() {
    let (net, data, sep) = instance(8000, &DgpConfig::h1_undirected(), 1);
    let report = determine_mechanisms_with(&net, &data, 1.0, sep).unwrap();
    for (layer, r) in &report.layers {
        let r = r.as_ref().unwrap();
        assert!(r.p_value < 1.0, "{layer}: p = {}", r.p_value);
        assert_eq!(r.decision, Mechanism::Bidirected);
    }
}

#[test]
fn statistics_are_consistent() {
    let (net, data, sep) = instance(8000, &DgpConfig::h1_bidirected(), 3);
    let report = determine_mechanisms_with(&net, &data, 0.05, sep.clone()).unwrap();
    for (layer, r) in &report.layers {
        let r = r.as_ref().unwrap();
        assert!(r.lr_statistic >= -1e-6);
        assert_eq!(r.df, 1);
        assert_eq!(r.effective_sample_size, sep.len());
        assert!(r.alternative_fit.log_likelihood >= r.null_fit.log_likelihood - 1e-6);
        assert_eq!(report.spec.get(*layer), r.decision);
        let lambda = -2.0 * (r.null_fit.log_likelihood - r.alternative_fit.log_likelihood);
        assert!((lambda - r.lr_statistic).abs() < 1e-9);
    }
}

#[test]
fn tests_are_invariant_to_relabeling_units() {
    let (net, data, sep) = instance(6000, &DgpConfig::h1_undirected(), 5);
    let n = net.n_units();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(5, 0));
    let net2 = FriendshipNetwork::from_edges(n, net.edges().map(|(i, j)| (perm[i], perm[j]))).unwrap();
    let data2 = data.permuted(&perm).unwrap();
    let sep2 = SeparatedSet { members: sep.members.iter().map(|&m| perm[m]).collect(), ..sep.clone() };
    sep2.verify(&net2).unwrap();
    for layer in Layer::ALL {
        let a = test_layer(&net, &data, layer, 0.05, &sep).unwrap();
        let b = test_layer(&net2, &data2, layer, 0.05, &sep2).unwrap();
        assert!((a.lr_statistic - b.lr_statistic).abs() < 1e-7, "{layer}");
        assert_eq!(a.decision, b.decision);
    }
}

#[test]
fn small_sets_are_insufficient() {
    let (net, data, sep) = instance(2000, &DgpConfig::h1_undirected(), 7);
    let r = test_layer(&net, &data, Layer::Y, 0.05, &sep.truncated(11));
    assert!(matches!(r, Err(Error::InsufficientSample { available: 11, required: 12 })), "{r:?}");
}

#[test]
fn wrong_separation_is_a_precondition_failure() {
    let (net, data, _) = instance(2000, &DgpConfig::h1_undirected(), 9);
    let close = greedy_separated_set(&net, 2, Eligibility::NonEmptyRings12, 1, 0).unwrap();
    assert!(matches!(test_layer(&net, &data, Layer::A, 0.05, &close), Err(Error::Precondition(_))));
    let loose = greedy_separated_set(&net, TEST_SEPARATION, Eligibility::None, 1, 0).unwrap();
    assert!(matches!(test_layer(&net, &data, Layer::A, 0.05, &loose), Err(Error::Precondition(_))));
}

#[test]
fn invalid_levels_are_rejected() {
    let (net, data, sep) = instance(500, &DgpConfig::h1_undirected(), 11);
    for alpha in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(test_layer(&net, &data, Layer::L, alpha, &sep), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn continuous_l_leaves_only_the_l_layer_unknown() {
    let net = generate_network(8000, DegreeRule::Range { min: 1, max: 6 }, 13).unwrap();
    let data = generate_data(&net, &DgpConfig::preset("h3-BUU").unwrap(), 13).unwrap();
    let report = determine_mechanisms(&net, &data, 0.05, 2, 13).unwrap();
    assert_eq!(report.spec.get(Layer::L), Mechanism::Unknown);
    let l = &report.layers.iter().find(|(layer, _)| *layer == Layer::L).unwrap().1;
    assert!(matches!(l, Err(Error::UnsupportedModel(_))));
    assert!(report.layers.iter().filter(|(layer, _)| *layer != Layer::L).all(|(_, r)| r.is_ok()));
}

#[test]
fn report_is_deterministic_per_seed() {
    let net = generate_network(3000, DegreeRule::Range { min: 1, max: 6 }, 15).unwrap();
    let data = generate_data(&net, &DgpConfig::h1_undirected(), 15).unwrap();
    let a = determine_mechanisms(&net, &data, 0.05, 3, 1).unwrap();
    let b = determine_mechanisms(&net, &data, 0.05, 3, 1).unwrap();
    assert_eq!(a.separated_set, b.separated_set);
    assert_eq!(a.spec, b.spec);
}
