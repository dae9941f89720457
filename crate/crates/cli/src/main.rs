//! `rnets`: command-line front end for the rational-nets library.
//!
//! Every invocation prints exactly one JSON object on stdout. Failures print
//! `{"error": ..., "kind": ...}` and exit non-zero. Logs go to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rational_nets::datasets;
use rational_nets::distance::{self, DistanceConfig};
use rational_nets::fitting::{self, FitConfig, ReferenceActivation};
use rational_nets::nn::{self, Dataset, NetworkSpec, OptimizerKind, Partition, TrainConfig};
use rational_nets::quadrature::linspace;
use rational_nets::rl::{self, ActivationKind, DqnConfig, GridWorld, ScoreReport};
use rational_nets::{algebra, Error, RationalFunction};

#[derive(Parser, Debug)]
#[command(name = "rnets", version, about = "Rational activation functions: fitting, algebra, distances, training")]
struct Cli {
    /// Seed for every random choice; overrides seeds in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for file artifacts (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a safe rational to a reference activation.
    Fit(FitArgs),
    /// Neural distance between two functions.
    Distance(DistanceArgs),
    /// Rewrite R(x) + x as a single rational (raw variant).
    Absorb(RfArgs),
    /// Compose two raw rationals: outer(inner(x)).
    Compose(ComposeArgs),
    /// Scale a raw rational so that its constant denominator term is 1.
    Normalize(RfArgs),
    /// Train a classifier network.
    Train(TrainArgs),
    /// Pairwise slot distances of a trained network and a sharing suggestion.
    Share(ShareArgs),
    /// Train a DQN agent on the gridworld.
    Rl(RlArgs),
    /// Export per-slot activation profiles as CSV.
    Profile(ProfileArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Reference activation, e.g. lrelu, lrelu:0.2, tanh, silu, swish:1.5.
    #[arg(long = "ref")]
    reference: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct DistanceArgs {
    /// Rational JSON file or reference activation name.
    #[arg(long)]
    f1: String,
    #[arg(long)]
    f2: String,
    /// Report min(ND(f1, f2), ND(f2, f1)).
    #[arg(long)]
    symmetric: bool,
}

#[derive(Args, Debug)]
struct RfArgs {
    /// Rational function JSON file.
    #[arg(long)]
    rf: PathBuf,
}

#[derive(Args, Debug)]
struct ComposeArgs {
    #[arg(long)]
    outer: PathBuf,
    #[arg(long)]
    inner: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training CSV with rows `label,f1,f2,...`; a synthetic set is used otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    activation: Option<ActivationKind>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct ShareArgs {
    /// Network JSON with populated slot histograms.
    #[arg(long)]
    network: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct RlArgs {
    #[arg(long)]
    activation: Option<ActivationKind>,
    /// Number of environment steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Network JSON; one CSV per slot.
    #[arg(long, conflicts_with = "rf", required_unless_present = "rf")]
    network: Option<PathBuf>,
    /// Single rational JSON (density column is 0).
    #[arg(long)]
    rf: Option<PathBuf>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
struct RunConfigFile {
    seed: Option<u64>,
    fit: FitSection,
    distance: Option<DistanceConfig>,
    train: TrainSection,
    rl: RlSection,
    profile: ProfileSection,
}

#[derive(Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
struct FitSection {
    reference: String,
    m: usize,
    n: usize,
    interval: (f64, f64),
    n_points: usize,
    max_iters: usize,
    tolerance: f64,
    /// Points in the fit profile CSV.
    profile_points: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let fc = FitConfig::default();
        Self {
            reference: "lrelu".into(),
            m: 5,
            n: 4,
            interval: fc.interval,
            n_points: fc.n_points,
            max_iters: fc.max_iters,
            tolerance: fc.tolerance,
            profile_points: 201,
        }
    }
}

#[derive(Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum SyntheticSet {
    Spirals,
    Blobs,
}

#[derive(Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    hidden: Vec<usize>,
    activation: ActivationKind,
    /// Groups of hidden-layer sites sharing one slot; defaults follow the activation kind.
    partition: Option<Partition>,
    dataset: SyntheticSet,
    /// Points per class of the synthetic set.
    samples: usize,
    optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: ActivationKind::Rational,
            partition: None,
            dataset: SyntheticSet::Spirals,
            samples: 200,
            optimizer: TrainConfig {
                optimizer: OptimizerKind::Adam,
                epochs: 50,
                batch_size: 32,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
struct RlSection {
    env: GridWorld,
    hidden: Vec<usize>,
    activation: ActivationKind,
    dqn: DqnConfig,
    /// Episodes used to estimate the random-policy score.
    random_episodes: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            env: GridWorld::default(),
            hidden: vec![32, 32],
            activation: ActivationKind::SharedRational,
            dqn: DqnConfig::default(),
            random_episodes: 1000,
        }
    }
}

#[derive(Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
struct ProfileSection {
    domain: (f64, f64),
    points: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            domain: (-5.0, 5.0),
            points: 201,
        }
    }
}

/// Error carrying a short machine-readable category.
#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Io(_) => "io",
            Error::Json(_) | Error::Csv(_) => "parse",
            Error::Config(_) | Error::InvalidDegree(_) | Error::InvalidCoefficients(_) => "config",
            _ => "module",
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_error(message: impl Into<String>) -> CliError {
    CliError {
        kind: "config",
        message: message.into(),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError {
        kind: "io",
        message: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError {
        kind: "parse",
        message: format!("{}: {e}", path.display()),
    })
}

/// Writes artifacts under one output directory and remembers their names.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        log::info!("wrote {}", path.display());
        self.written.push(path.display().to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

fn parse_reference(s: &str) -> CliResult<ReferenceActivation> {
    s.parse::<ReferenceActivation>().map_err(CliError::from)
}

/// A rational from a JSON file, or a reference activation by name.
enum FunctionArg {
    Rational(RationalFunction),
    Reference(ReferenceActivation),
}

impl FunctionArg {
    fn load(arg: &str) -> CliResult<Self> {
        let path = Path::new(arg);
        if path.is_file() {
            return Ok(FunctionArg::Rational(read_json(path)?));
        }
        parse_reference(arg).map(FunctionArg::Reference).map_err(|e| CliError {
            kind: e.kind,
            message: format!("{arg:?} is neither a readable file nor a reference activation ({})", e.message),
        })
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            FunctionArg::Rational(rf) => rf.eval(x).unwrap_or(f64::NAN),
            FunctionArg::Reference(r) => r.eval(x),
        }
    }
}

fn cmd_fit(args: &FitArgs, file: RunConfigFile, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Value> {
    let sec = file.fit;
    let reference = parse_reference(args.reference.as_deref().unwrap_or(&sec.reference))?;
    let m = args.m.unwrap_or(sec.m);
    let n = args.n.unwrap_or(sec.n);
    if m == 0 {
        return Err(config_error("numerator degree m must be at least 1"));
    }
    let cfg = FitConfig {
        interval: sec.interval,
        n_points: sec.n_points,
        max_iters: sec.max_iters,
        tolerance: sec.tolerance,
        seed: seed.unwrap_or(0),
    };
    let (rf, report) = fitting::fit(m, n, reference, &cfg)?;

    let mut csv = String::from("x,target,value\n");
    for x in linspace(cfg.interval.0, cfg.interval.1, sec.profile_points.max(2)) {
        csv.push_str(&format!(
            "{},{},{}\n",
            nn::format_sig6(x),
            nn::format_sig6(reference.eval(x)),
            nn::format_sig6(rf.eval(x)?)
        ));
    }
    out.write_json("rf.json", &rf)?;
    out.write("fit_profile.csv", &csv)?;
    Ok(json!({
        "command": "fit",
        "reference": reference.to_string(),
        "function": rf,
        "final_mse": report.final_mse,
        "iterations": report.iterations,
        "converged": report.converged,
        "artifacts": out.written,
    }))
}

fn cmd_distance(args: &DistanceArgs, file: RunConfigFile, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Value> {
    let mut cfg = file.distance.unwrap_or_default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let f1 = FunctionArg::load(&args.f1)?;
    let f2 = FunctionArg::load(&args.f2)?;
    let e1 = |x: f64| f1.eval(x);
    let e2 = |x: f64| f2.eval(x);
    let result = if args.symmetric {
        json!({ "command": "distance", "symmetric": true, "value": distance::nd_sym(&e1, &e2, &cfg)? })
    } else {
        let d = distance::nd(&e1, &e2, &cfg)?;
        json!({
            "command": "distance",
            "symmetric": false,
            "value": d.value,
            "a": d.reparam.a,
            "b": d.reparam.b,
            "c": d.reparam.c,
            "d": d.reparam.d,
        })
    };
    out.write_json("distance.json", &result)?;
    Ok(result)
}

fn cmd_algebra(
    name: &str,
    artifact: &str,
    rf: RationalFunction,
    out: &mut Artifacts,
) -> CliResult<Value> {
    out.write_json(artifact, &rf)?;
    Ok(json!({
        "command": name,
        "variant": rf.variant(),
        "numerator": rf.numerator(),
        "denominator": rf.denominator(),
        "artifacts": out.written,
    }))
}

fn load_train_data(args: &TrainArgs, sec: &TrainSection, seed: u64) -> CliResult<(Dataset, Option<Dataset>)> {
    let train = match &args.data {
        Some(path) => Dataset::from_csv_path(path)?,
        None => match sec.dataset {
            SyntheticSet::Spirals => datasets::two_spirals(sec.samples, 0.0, seed)?,
            SyntheticSet::Blobs => datasets::blobs(sec.samples, 0.7, seed)?,
        },
    };
    let test = args.test.as_deref().map(Dataset::from_csv_path).transpose()?;
    Ok((train, test))
}

fn cmd_train(args: &TrainArgs, file: RunConfigFile, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Value> {
    let sec = file.train;
    let mut cfg = sec.optimizer.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let kind = args.activation.unwrap_or(sec.activation);
    let (train, test) = load_train_data(args, &sec, cfg.seed)?;
    let classes = train
        .labels
        .iter()
        .chain(test.iter().flat_map(|t| &t.labels))
        .max()
        .map_or(1, |m| m + 1)
        .max(2);
    let mut sizes = vec![train.features.cols()];
    sizes.extend_from_slice(&sec.hidden);
    sizes.push(classes);

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = match &sec.partition {
        Some(p) => NetworkSpec::build(&sizes, p, &kind.slot_function()?, true, &mut rng)?,
        None => kind.build(&sizes, true, &mut rng)?,
    };
    let (net, history) = nn::train_classifier(net, &train, test.as_ref(), &cfg)?;
    out.write_json("network.json", &net)?;
    out.write_json("history.json", &history)?;
    let last = history.last().expect("history has the initial entry");
    Ok(json!({
        "command": "train",
        "activation": kind,
        "layers": sizes,
        "sites": net.sites(),
        "epochs": cfg.epochs,
        "train_accuracy": last.train_accuracy,
        "test_accuracy": last.test_accuracy,
        "history": history,
        "artifacts": out.written,
    }))
}

fn cmd_share(args: &ShareArgs, file: RunConfigFile, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Value> {
    let net: NetworkSpec = read_json(&args.network)?;
    let mut cfg = file.distance.unwrap_or_default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let distances = nn::pairwise_layer_distances(&net, &cfg)?;
    let partition = nn::suggest_sharing(&distances, args.threshold)?;
    let result = json!({
        "command": "share",
        "threshold": args.threshold,
        "distances": distances,
        "partition": partition,
    });
    out.write_json("sharing.json", &result)?;
    Ok(result)
}

fn cmd_rl(args: &RlArgs, file: RunConfigFile, seed: Option<u64>, out: &mut Artifacts) -> CliResult<Value> {
    let sec = file.rl;
    let mut cfg = sec.dqn.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(steps) = args.steps {
        cfg.train_steps = steps;
    }
    let kind = args.activation.unwrap_or(sec.activation);
    let world = sec.env.clone();
    world.validate()?;
    let baseline = world
        .optimal_return()
        .ok_or_else(|| config_error("goal is unreachable within max_steps"))?;
    let random = rl::random_policy_return(&world, sec.random_episodes, cfg.seed)?;

    let net = rl::build_q_network(&world, &sec.hidden, kind, cfg.seed)?;
    let init_params = net.parameters();
    let (net, outcome) = rl::dqn_train(&world, net, &cfg)?;
    let moved: f64 = net
        .parameters()
        .iter()
        .zip(&init_params)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let report = ScoreReport::new(outcome.final_return, random, baseline)?;

    let curve = json!({ "activation": kind, "seed": cfg.seed, "curve": outcome.curve });
    out.write_json("curve.json", &curve)?;
    out.write("scores.csv", &report.to_csv()?)?;
    out.write_json("qnet.json", &net)?;
    Ok(json!({
        "command": "rl",
        "activation": kind,
        "train_steps": cfg.train_steps,
        "final_return": outcome.final_return,
        "optimal_return": baseline,
        "score": report,
        "parameter_shift": moved,
        "curve": outcome.curve,
        "artifacts": out.written,
    }))
}

fn cmd_profile(args: &ProfileArgs, file: RunConfigFile, out: &mut Artifacts) -> CliResult<Value> {
    let sec = file.profile;
    let points = args.points.unwrap_or(sec.points);
    if points < 2 {
        return Err(config_error("points must be at least 2"));
    }
    let slots = match (&args.network, &args.rf) {
        (Some(path), _) => read_json::<NetworkSpec>(path)?.slots().to_vec(),
        (None, Some(path)) => vec![nn::ActivationSlot::new(read_json::<RationalFunction>(path)?)],
        (None, None) => return Err(config_error("pass --network or --rf")),
    };
    for (k, slot) in slots.iter().enumerate() {
        out.write(&format!("profile_slot{k}.csv"), &nn::profile_csv(slot, sec.domain, points)?)?;
    }
    Ok(json!({
        "command": "profile",
        "slots": slots.len(),
        "points": points,
        "artifacts": out.written,
    }))
}

fn run(cli: Cli) -> CliResult<Value> {
    let file: RunConfigFile = match &cli.config {
        Some(path) => read_json(path)?,
        None => RunConfigFile::default(),
    };
    let seed = cli.seed.or(file.seed);
    let mut out = Artifacts::new(&cli.out);
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, file, seed, &mut out),
        Command::Distance(a) => cmd_distance(a, file, seed, &mut out),
        Command::Absorb(a) => {
            let rf = algebra::absorb_residual(&read_json(&a.rf)?)?;
            cmd_algebra("absorb", "absorbed.json", rf, &mut out)
        }
        Command::Compose(a) => {
            let rf = algebra::compose(&read_json(&a.outer)?, &read_json(&a.inner)?)?;
            cmd_algebra("compose", "composed.json", rf, &mut out)
        }
        Command::Normalize(a) => {
            let rf = algebra::normalize(&read_json(&a.rf)?)?;
            cmd_algebra("normalize", "normalized.json", rf, &mut out)
        }
        Command::Train(a) => cmd_train(a, file, seed, &mut out),
        Command::Share(a) => cmd_share(a, file, seed, &mut out),
        Command::Rl(a) => cmd_rl(a, file, seed, &mut out),
        Command::Profile(a) => cmd_profile(a, file, &mut out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            println!("{}", json!({ "error": first, "kind": "usage" }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{}", e.message);
            println!("{}", json!({ "error": e.message, "kind": e.kind }));
            ExitCode::FAILURE
        }
    }
}
