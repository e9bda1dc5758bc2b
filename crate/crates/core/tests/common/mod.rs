//! Independent test oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

#[allow(clippy::needless_range_loop)]
pub mod separation {
    use netmech::sgraph::{Edge, EdgeKind, MixedGraph};
    use rand::Rng;

    /// Anterior by naive fixed-point iteration over the edge list.
    pub fn anterior(edges: &[Edge], n: usize, seed: &[usize]) -> Vec<bool> {
        let mut inside = vec![false; n];
        for &v in seed {
            inside[v] = true;
        }
        loop {
            let mut changed = false;
            for e in edges {
                let pulled = match e.kind {
                    EdgeKind::Directed => inside[e.to].then_some(e.from),
                    EdgeKind::Undirected if inside[e.to] => Some(e.from),
                    EdgeKind::Undirected if inside[e.from] => Some(e.to),
                    _ => None,
                };
                if let Some(u) = pulled {
                    if !inside[u] {
                        inside[u] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                return inside;
            }
        }
    }

    /// Does `edge` put an arrowhead at `at` coming from `from`?
    fn arrow_into(e: &Edge, from: usize, at: usize) -> bool {
        match e.kind {
            EdgeKind::Directed => e.from == from && e.to == at,
            EdgeKind::Bidirected => (e.from == from && e.to == at) || (e.to == from && e.from == at),
            EdgeKind::Undirected => false,
        }
    }

    /// Augmented adjacency matrix by explicit walk search: from each start,
    /// enter a section through an arrowhead, move within it along undirected
    /// edges or hop to the next section along a bidirected edge, and close
    /// the walk with an arrowhead from the end vertex.
    pub fn augmented(edges: &[Edge], n: usize, inside: &[bool]) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; n]; n];
        let live: Vec<&Edge> = edges.iter().filter(|e| inside[e.from] && inside[e.to]).collect();
        for e in &live {
            adj[e.from][e.to] = true;
            adj[e.to][e.from] = true;
        }
        for s in (0..n).filter(|&v| inside[v]) {
            let mut reached = vec![false; n];
            let mut stack = Vec::new();
            for w in 0..n {
                if live.iter().any(|e| arrow_into(e, s, w)) && !reached[w] {
                    reached[w] = true;
                    stack.push(w);
                }
            }
            while let Some(w) = stack.pop() {
                for e in &live {
                    let other = if e.from == w {
                        e.to
                    } else if e.to == w {
                        e.from
                    } else {
                        continue;
                    };
                    if matches!(e.kind, EdgeKind::Undirected | EdgeKind::Bidirected) && !reached[other] {
                        reached[other] = true;
                        stack.push(other);
                    }
                }
            }
            for w in (0..n).filter(|&w| reached[w]) {
                for t in (0..n).filter(|&t| inside[t] && t != s) {
                    if live.iter().any(|e| arrow_into(e, t, w)) {
                        adj[s][t] = true;
                        adj[t][s] = true;
                    }
                }
            }
        }
        adj
    }

    /// Enumerates simple paths from each x; separated iff none reaches y
    /// without passing through z.
    pub fn brute_force_separated(g: &MixedGraph, x: &[usize], y: &[usize], z: &[usize]) -> bool {
        let n = g.n_vertices();
        let seed: Vec<usize> = x.iter().chain(y).chain(z).copied().collect();
        let inside = anterior(g.edges(), n, &seed);
        let adj = augmented(g.edges(), n, &inside);
        let mut on_path = vec![false; n];
        fn dfs(v: usize, adj: &[Vec<bool>], y: &[usize], z: &[usize], on_path: &mut [bool]) -> bool {
            if y.contains(&v) {
                return true;
            }
            on_path[v] = true;
            for w in 0..adj.len() {
                if adj[v][w] && !on_path[w] && !z.contains(&w) && dfs(w, adj, y, z, on_path) {
                    on_path[v] = false;
                    return true;
                }
            }
            on_path[v] = false;
            false
        }
        !x.iter().any(|&s| dfs(s, &adj, y, z, &mut on_path))
    }

    /// Random loopless mixed graph on `n` vertices; parallel edges allowed.
    pub fn random_graph<R: Rng>(rng: &mut R, n: usize, density: f64) -> MixedGraph {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if !rng.random_bool(density) {
                    continue;
                }
                let copies = if rng.random_bool(0.1) { 2 } else { 1 };
                for _ in 0..copies {
                    edges.push(match rng.random_range(0..4) {
                        0 => Edge::directed(a, b),
                        1 => Edge::directed(b, a),
                        2 => Edge::bidirected(a, b),
                        _ => Edge::undirected(a, b),
                    });
                }
            }
        }
        MixedGraph::unlabeled(n, edges).unwrap()
    }

    /// Random disjoint (x, y, z) with x and y non-empty.
    pub fn random_query<R: Rng>(rng: &mut R, n: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        loop {
            let (mut x, mut y, mut z) = (Vec::new(), Vec::new(), Vec::new());
            for v in 0..n {
                match rng.random_range(0..10) {
                    0 | 1 => x.push(v),
                    2 | 3 => y.push(v),
                    4..=6 => z.push(v),
                    _ => {}
                }
            }
            if !x.is_empty() && !y.is_empty() {
                return (x, y, z);
            }
        }
    }
}

pub mod numerics {
    /// Chi-square density with integer degrees of freedom; the gamma
    /// constant comes from the half-integer recursion.
    pub fn chi_square_pdf(t: f64, df: u32) -> f64 {
        let k = df as f64 / 2.0;
        let mut gamma = if df.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
        let mut g = if df.is_multiple_of(2) { 1.0 } else { 0.5 };
        while g < k {
            gamma *= g;
            g += 1.0;
        }
        t.powf(k - 1.0) * (-t / 2.0).exp() / (2f64.powf(k) * gamma)
    }

    /// Composite Simpson integration of the upper tail, truncated far out.
    pub fn chi_square_tail_by_quadrature(x: f64, df: u32) -> f64 {
        let upper = x + 400.0;
        let n = 400_000;
        let h = (upper - x) / n as f64;
        let mut sum = chi_square_pdf(x, df) + chi_square_pdf(upper, df);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * chi_square_pdf(x + i as f64 * h, df);
        }
        sum * h / 3.0
    }

    pub fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }
}

/// Exact values of the effect functional on tiny networks, by enumerating
/// binary layers and integrating a normal L with Gauss-Hermite quadrature.
pub mod oracle {
    use nalgebra::{DMatrix, SymmetricEigen};

    pub struct Tiny {
        pub n: usize,
        pub edges: Vec<(usize, usize)>,
    }

    impl Tiny {
        pub fn adjacent(&self, i: usize) -> Vec<usize> {
            self.edges
                .iter()
                .filter_map(|&(u, v)| {
                    if u == i {
                        Some(v)
                    } else if v == i {
                        Some(u)
                    } else {
                        None
                    }
                })
                .collect()
        }

        fn ring_sum(&self, x: &[f64], i: usize) -> f64 {
            self.adjacent(i).iter().map(|&j| x[j]).sum()
        }
    }

    /// Every labeled simple graph on 2 and on 3 vertices.
    pub fn all_small_networks() -> Vec<Tiny> {
        let mut out = vec![Tiny { n: 2, edges: vec![] }, Tiny { n: 2, edges: vec![(0, 1)] }];
        let pairs = [(0, 1), (0, 2), (1, 2)];
        for mask in 0..8u32 {
            let edges = (0..3).filter(|b| mask >> b & 1 == 1).map(|b| pairs[b]).collect();
            out.push(Tiny { n: 3, edges });
        }
        out
    }

    pub fn states(n: usize) -> Vec<Vec<f64>> {
        (0..1u32 << n).map(|s| (0..n).map(|i| f64::from(s >> i & 1)).collect()).collect()
    }

    /// Joint `p(x) ∝ exp(Σ base_i x_i + coupling Σ_edges x_i x_j)` over all
    /// binary states, in the order of `states`.
    pub fn auto_logistic(net: &Tiny, base: &[f64], coupling: f64) -> Vec<f64> {
        let w: Vec<f64> = states(net.n)
            .iter()
            .map(|x| {
                let e: f64 = (0..net.n).map(|i| base[i] * x[i]).sum::<f64>()
                    + coupling * net.edges.iter().map(|&(i, j)| x[i] * x[j]).sum::<f64>();
                e.exp()
            })
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    }

    fn sigmoid(t: f64) -> f64 {
        1.0 / (1.0 + (-t).exp())
    }

    /// Nodes and weights for `E f(Z)`, `Z ~ N(0, 1)` (Golub-Welsch).
    pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut j = DMatrix::zeros(k, k);
        for i in 1..k {
            j[(i, i - 1)] = (i as f64).sqrt();
            j[(i - 1, i)] = (i as f64).sqrt();
        }
        let eig = SymmetricEigen::new(j);
        let nodes = eig.eigenvalues.iter().copied().collect();
        let weights = (0..k).map(|c| eig.eigenvectors[(0, c)].powi(2)).collect();
        (nodes, weights)
    }

    pub enum LModel {
        Logistic { intercept: f64, neighbor: f64 },
        Normal { mean: f64, variance: f64, covariance: f64 },
    }

    pub enum YModel {
        /// `[1, ΣY, A_i, ΣA, L_i, ΣL]`
        Contagion([f64; 6]),
        /// `[1, A_i, ΣA, L_i, ΣL]`
        Regression([f64; 5]),
    }

    pub fn y_given_l(net: &Tiny, y: &YModel, l: &[f64], a: &[f64]) -> Vec<f64> {
        let n = net.n;
        match y {
            YModel::Regression(t) => (0..n)
                .map(|i| {
                    sigmoid(t[0] + t[1] * a[i] + t[2] * net.ring_sum(a, i) + t[3] * l[i] + t[4] * net.ring_sum(l, i))
                })
                .collect(),
            YModel::Contagion(t) => {
                let base: Vec<f64> = (0..n)
                    .map(|i| t[0] + t[2] * a[i] + t[3] * net.ring_sum(a, i) + t[4] * l[i] + t[5] * net.ring_sum(l, i))
                    .collect();
                let p = auto_logistic(net, &base, t[1]);
                let mut m = vec![0.0; n];
                for (x, w) in states(n).iter().zip(&p) {
                    for i in 0..n {
                        m[i] += w * x[i];
                    }
                }
                m
            }
        }
    }

    /// `E[Y_i | do(a)]` for every unit.
    pub fn effect(net: &Tiny, l: &LModel, y: &YModel, a: &[f64]) -> Vec<f64> {
        let n = net.n;
        let mut out = vec![0.0; n];
        match *l {
            LModel::Logistic { intercept, neighbor } => {
                let p = auto_logistic(net, &vec![intercept; n], neighbor);
                for (x, w) in states(n).iter().zip(&p) {
                    for (o, v) in out.iter_mut().zip(y_given_l(net, y, x, a)) {
                        *o += w * v;
                    }
                }
            }
            LModel::Normal { mean, variance, covariance } => {
                let mut cov = DMatrix::from_diagonal_element(n, n, variance);
                for &(i, j) in &net.edges {
                    cov[(i, j)] = covariance;
                    cov[(j, i)] = covariance;
                }
                let chol = cov.cholesky().expect("positive definite").l();
                let (nodes, weights) = gauss_hermite(40);
                let k = nodes.len();
                let mut idx = vec![0usize; n];
                loop {
                    let z: Vec<f64> = idx.iter().map(|&c| nodes[c]).collect();
                    let w: f64 = idx.iter().map(|&c| weights[c]).product();
                    let x: Vec<f64> =
                        (0..n).map(|r| mean + (0..=r).map(|c| chol[(r, c)] * z[c]).sum::<f64>()).collect();
                    for (o, v) in out.iter_mut().zip(y_given_l(net, y, &x, a)) {
                        *o += w * v;
                    }
                    let mut d = 0;
                    while d < n && idx[d] + 1 == k {
                        idx[d] = 0;
                        d += 1;
                    }
                    if d == n {
                        break;
                    }
                    idx[d] += 1;
                }
            }
        }
        out
    }

    /// Batch-means standard error of the mean of a serially dependent series.
    pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
        let size = xs.len() / batches;
        let means: Vec<f64> = xs.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
        let b = means.len() as f64;
        let grand = means.iter().sum::<f64>() / b;
        (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
    }

    pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Monte Carlo effect estimates on tiny networks next to the exact values.
pub mod effect_check {
    use super::oracle::{self, LModel, Tiny, YModel};
    use netmech::estimator::{
        gibbs_sample_y, sample_l, FittedEffectModel, GibbsConfig, LBidirectedParams, LLayerParams, YLayerParams,
    };
    use netmech::network::FriendshipNetwork;
    use netmech::rng::derive_seed;
    use netmech::sgraph::{Mechanism, SegregatedGraphSpec};

    pub struct Comparison {
        pub estimate: Vec<f64>,
        pub exact: Vec<f64>,
        pub standard_error: Vec<f64>,
    }

    impl Comparison {
        /// Largest `|estimate - exact| / se` over units.
        pub fn worst_z(&self) -> f64 {
            self.estimate
                .iter()
                .zip(&self.exact)
                .zip(&self.standard_error)
                .map(|((e, x), s)| (e - x).abs() / s.max(1e-12))
                .fold(0.0, f64::max)
        }
    }

    pub const L_LOGISTIC: LModel = LModel::Logistic { intercept: -0.3, neighbor: 0.6 };
    pub const L_NORMAL: LModel = LModel::Normal { mean: 0.5, variance: 1.2, covariance: 0.4 };
    pub const Y_CONTAGION: YModel = YModel::Contagion([-0.5, 0.4, 0.8, -0.3, 0.5, 0.2]);
    pub const Y_REGRESSION: YModel = YModel::Regression([-0.4, 0.9, -0.2, 0.6, 0.3]);

    pub fn model(l: &LModel, y: &YModel) -> FittedEffectModel {
        let (lm, lp) = match *l {
            LModel::Logistic { intercept, neighbor } => {
                (Mechanism::Undirected, LLayerParams::Contagion(vec![intercept, neighbor]))
            }
            LModel::Normal { mean, variance, covariance } => {
                (Mechanism::Bidirected, LLayerParams::Bidirected(LBidirectedParams { mean, variance, covariance }))
            }
        };
        let (ym, yp) = match y {
            YModel::Contagion(t) => (Mechanism::Undirected, YLayerParams::Contagion(t.to_vec())),
            YModel::Regression(t) => (Mechanism::Bidirected, YLayerParams::OutcomeRegression(t.to_vec())),
        };
        FittedEffectModel { spec: SegregatedGraphSpec::new(lm, Mechanism::Undirected, ym), l: lp, y: yp }
    }

    /// Runs `FittedEffectModel::estimate` with `m` draws and rebuilds its
    /// per-draw outcomes from the public samplers to get batch-means errors.
    pub fn compare(tiny: &Tiny, l: &LModel, y: &YModel, a: &[f64], m: usize, seed: u64) -> Comparison {
        let net = FriendshipNetwork::from_edges(tiny.n, tiny.edges.iter().copied()).unwrap();
        let fitted = model(l, y);
        let config = GibbsConfig { n_draws: m, thinning: 3, burn_in: 200 };
        let estimate = fitted.estimate(&net, a, &config, seed).unwrap().per_unit;

        let l_draws = sample_l(&net, &fitted.l, &config, derive_seed(seed, 1)).unwrap();
        let outcomes: Vec<Vec<f64>> = match y {
            YModel::Contagion(t) => gibbs_sample_y(&net, t, &l_draws, a, &config, derive_seed(seed, 2)).unwrap(),
            YModel::Regression(_) => l_draws.iter().map(|ld| oracle::y_given_l(tiny, y, ld, a)).collect(),
        };
        let standard_error = (0..tiny.n)
            .map(|i| {
                let series: Vec<f64> = outcomes.iter().map(|o| o[i]).collect();
                let mean = series.iter().sum::<f64>() / series.len() as f64;
                assert!((mean - estimate[i]).abs() < 1e-9, "estimate is not the mean of its draws");
                oracle::batch_means_se(&series, 50)
            })
            .collect();
        Comparison { estimate, exact: oracle::effect(tiny, l, y, a), standard_error }
    }
}
