use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use netmech::dgp::{generate_data, generate_network, DegreeRule, DgpConfig};
use netmech::error::{Error, Result};
use netmech::estimator::{GibbsConfig, DEFAULT_RESTARTS};
use netmech::experiment::{
    analyze_network, run_estimate, run_test, simulate, ExperimentConfig, ExperimentKind, ExperimentReport,
    NetworkSource, Treatment,
};
use netmech::io::{load_data, load_edge_list, read_edge_list, read_treatment, write_data, write_edge_list};
use netmech::mechtest::TEST_SEPARATION;
use netmech::sgraph::{instantiate_sg, validate_sg, MixedGraph, SegregatedGraphSpec};

#[derive(Parser)]
#[command(name = "netmech", version, about = "Contagion vs. latent confounding tests and network causal effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximal 6-separated sets of a network, best of many greedy restarts.
    AnalyzeNetwork {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long, default_value_t = TEST_SEPARATION)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tests each layer for contagion against latent confounding.
    Test {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimates E[Y_i | do(A = a)] for every unit.
    Estimate {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Mechanism code such as BUB, or `auto` to run the layer tests first.
        #[arg(long, default_value = "auto")]
        spec: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// `ones`, `zeros`, `both` (with the contrast) or `file:PATH`.
        #[arg(long, default_value = "both")]
        treatment: String,
        #[command(flatten)]
        gibbs: GibbsArgs,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo studies of the tests or the estimator.
    Simulate {
        #[arg(value_enum)]
        kind: SimulationKind,
        /// Comma-separated effective sample sizes (tests) or network sizes
        /// (estimation).
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = TEST_SEPARATION)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        /// Units per generated network in test studies.
        #[arg(long, default_value_t = 20_000)]
        units: usize,
        /// Use this network in every trial instead of generating one.
        #[arg(long)]
        edges: Option<PathBuf>,
        #[command(flatten)]
        gibbs: GibbsArgs,
        /// Also run plain auto-g-computation in estimation trials.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path; per-trial and summary CSVs are written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a random network and data drawn from a preset.
    Generate {
        #[arg(long)]
        units: usize,
        #[arg(long, default_value = "h1-undirected")]
        preset: String,
        /// Degrees uniform on MIN-MAX, or `mean:MAX` for the binomial rule.
        #[arg(long, default_value = "1-6")]
        degrees: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Separation query or validity check on the segregated graph of a network.
    SgQuery {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        spec: String,
        /// Comma-separated vertex labels such as L0,A3.
        #[arg(long, value_delimiter = ',')]
        x: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        z: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimulationKind {
    TestCalibration,
    TestPower,
    Estimation,
}

#[derive(clap::Args)]
struct GibbsArgs {
    /// Retained draws (default ceil(0.3 N)).
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
}

impl GibbsArgs {
    fn any(&self) -> bool {
        self.draws.is_some() || self.thin.is_some() || self.burnin.is_some()
    }

    fn resolve(&self, n_units: usize) -> GibbsConfig {
        let d = GibbsConfig::for_network(n_units);
        GibbsConfig {
            n_draws: self.draws.unwrap_or(d.n_draws),
            thinning: self.thin.unwrap_or(d.thinning),
            burn_in: self.burnin.unwrap_or(d.burn_in),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } => 2,
        Error::Precondition(_) | Error::InsufficientSample { .. } | Error::UnsupportedModel(_) => 3,
        Error::FitFailure(_) | Error::NotPositiveDefinite(_) => 4,
        Error::InvalidArgument(_) | Error::Io(_) => 1,
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_report(report: &ExperimentReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, report.to_json()? + "\n")?;
            report.write_records_csv(File::create(sibling(path, "records.csv"))?)?;
            report.write_summary_csv(File::create(sibling(path, "summary.csv"))?)?;
        }
        None => println!("{}", report.to_json()?),
    }
    Ok(())
}

fn parse_degrees(text: &str) -> Result<DegreeRule> {
    let bad = || Error::InvalidArgument(format!("degree rule '{text}' is neither MIN-MAX nor MEAN:MAX"));
    if let Some((mean, max)) = text.split_once(':') {
        return Ok(DegreeRule::MeanMax {
            mean: mean.parse().map_err(|_| bad())?,
            max: max.parse().map_err(|_| bad())?,
        });
    }
    let (min, max) = text.split_once('-').ok_or_else(bad)?;
    Ok(DegreeRule::Range { min: min.parse().map_err(|_| bad())?, max: max.parse().map_err(|_| bad())? })
}

fn vertices(g: &MixedGraph, labels: &[String]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| g.vertex(l).ok_or_else(|| Error::InvalidArgument(format!("no vertex labeled '{l}'"))))
        .collect()
}

fn edge_source(path: &Path, net: &netmech::network::FriendshipNetwork) -> NetworkSource {
    NetworkSource::EdgeList { path: path.display().to_string(), units: net.n_units(), edges: net.n_edges() }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::AnalyzeNetwork { edges, k, restarts, seed, out } => {
            let net = load_edge_list(&edges)?;
            let report = analyze_network(&net, k, restarts, seed, edge_source(&edges, &net))?;
            write_report(&report, out.as_deref())
        }
        Command::Test { edges, data, alpha, restarts, seed, out } => {
            let net = load_edge_list(&edges)?;
            let data = load_data(&data)?;
            emit(&run_test(&net, &data, alpha, restarts, seed)?, out.as_deref())
        }
        Command::Estimate { edges, data, spec, alpha, treatment, gibbs, restarts, seed, out } => {
            let net = load_edge_list(&edges)?;
            let data = load_data(&data)?;
            let spec = match spec.as_str() {
                "auto" => None,
                code => Some(code.parse::<SegregatedGraphSpec>()?),
            };
            let treatment = match treatment.as_str() {
                "ones" => Treatment::Ones,
                "zeros" => Treatment::Zeros,
                "both" => Treatment::Both,
                other => match other.strip_prefix("file:") {
                    Some(path) => Treatment::Vector(read_treatment(File::open(path)?, net.n_units())?),
                    None => return Err(Error::InvalidArgument(format!("unknown treatment '{other}'"))),
                },
            };
            let g = gibbs.resolve(net.n_units());
            emit(&run_estimate(&net, &data, spec, alpha, &treatment, &g, restarts, seed)?, out.as_deref())
        }
        Command::Simulate {
            kind,
            sizes,
            trials,
            preset,
            alpha,
            k,
            restarts,
            units,
            edges,
            gibbs,
            baseline,
            seed,
            out,
        } => {
            let kind = match kind {
                SimulationKind::TestCalibration => ExperimentKind::TestCalibration,
                SimulationKind::TestPower => ExperimentKind::TestPower,
                SimulationKind::Estimation => ExperimentKind::EstimationConsistency,
            };
            let mut config = ExperimentConfig::new(kind, seed);
            let fixed = match &edges {
                Some(path) => {
                    let net = load_edge_list(path)?;
                    config.network = edge_source(path, &net);
                    Some(net)
                }
                None => {
                    if let NetworkSource::Generated { units: u, .. } = &mut config.network {
                        *u = units;
                    }
                    None
                }
            };
            config.preset = preset;
            config.sizes = sizes;
            config.trials = trials;
            config.alpha = alpha;
            config.k = k;
            config.restarts = restarts;
            config.baseline = baseline;
            // Without overrides every network gets GibbsConfig::for_network.
            config.gibbs = gibbs.any().then(|| gibbs.resolve(config.sizes.iter().copied().max().unwrap_or(1)));
            let report = simulate(&config, fixed.as_ref())?;
            write_report(&report, out.as_deref())
        }
        Command::Generate { units, preset, degrees, seed, edges, data } => {
            let net = generate_network(units, parse_degrees(&degrees)?, seed)?;
            let values = generate_data(&net, &DgpConfig::preset(&preset)?, seed.wrapping_add(1))?;
            let mut text = Vec::new();
            write_edge_list(&net, &mut text)?;
            // Readers number units by first appearance in the edge list, so
            // the data rows follow that numbering.
            let loaded = read_edge_list(text.as_slice())?;
            if loaded.network.n_units() != net.n_units() {
                return Err(Error::Precondition("isolated units cannot be written to an edge list".into()));
            }
            let mut perm = vec![0; net.n_units()];
            for (u, &id) in loaded.original_ids.iter().enumerate() {
                perm[id as usize] = u;
            }
            std::fs::write(&edges, text)?;
            write_data(&values.permuted(&perm)?, File::create(&data)?)
        }
        Command::SgQuery { edges, spec, x, y, z } => {
            let net = load_edge_list(&edges)?;
            let g = instantiate_sg(&net, &spec.parse()?)?;
            let valid = validate_sg(&g).map_err(|v| format!("{v:?}"));
            let separated = if x.is_empty() || y.is_empty() {
                None
            } else {
                Some(netmech::sgraph::s_separated(&g, &vertices(&g, &x)?, &vertices(&g, &y)?, &vertices(&g, &z)?)?)
            };
            #[derive(Serialize)]
            struct Answer {
                vertices: usize,
                edges: usize,
                valid: bool,
                violations: Option<String>,
                separated: Option<bool>,
            }
            emit(
                &Answer {
                    vertices: g.n_vertices(),
                    edges: g.edges().len(),
                    valid: valid.is_ok(),
                    violations: valid.err(),
                    separated,
                },
                None,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("NETMECH_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
