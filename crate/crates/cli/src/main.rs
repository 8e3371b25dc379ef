use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use covsched::decoder::Chooser;
use covsched::encoder::NormUse;
use covsched::harness::{
    check_reference, evaluate, param_report, write_report_csv, write_tsplib, Reference, ScheduleReport,
    TWO_OPT_PASSES,
};
use covsched::mapgen::{generate_dataset, load_maps_file, RadiusRange};
use covsched::solvers::{
    brute_force_enumerate, build_edge_matrix, exact_schedule, nearest_neighbor_best, symmetrize, two_opt,
    BRUTE_FORCE_MAX_AREAS, EXACT_MAX_AREAS,
};
use covsched::training::{derived_rng, train, BaselineKind, MapSource, TrainConfig};
use covsched::{AreaMap, CostModel, Policy, PolicyConfig, Schedule};
use gradtape::Tape;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(name = "covsched", about = "Coverage scheduling over square areas", disable_version_flag = true)]
struct Cli {
    /// Print build information and exit.
    #[arg(long)]
    version: bool,
    /// With --version: `paper` adds the parameter count of the full-size policy.
    #[arg(long, requires = "version")]
    config: Option<String>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSONL dataset of random maps.
    GenMaps(GenMaps),
    /// Train a policy with REINFORCE.
    Train(Train),
    /// Solve one map with a solver or a trained policy.
    Solve(Solve),
    /// Score a checkpoint against a reference solver on a dataset.
    Eval(Eval),
    /// Exact schedules for maps with at most 12 areas.
    Oracle(Oracle),
    /// Write the symmetrized edge matrix of a map as TSPLIB text.
    ExportTsp(ExportTsp),
}

#[derive(Args)]
struct CostArgs {
    /// Weight of in-area coverage length.
    #[arg(long)]
    lambda: Option<f64>,
    /// Do not return to the first area.
    #[arg(long)]
    open: bool,
    /// Lanes per coverage pattern.
    #[arg(long)]
    lanes: Option<usize>,
}

impl CostArgs {
    /// Flags win, then the training config stored in a checkpoint, then defaults.
    fn resolve(&self, stored: Option<&TrainConfig>) -> CostModel {
        let base = stored
            .map(|t| CostModel {
                lanes: t.lanes,
                lambda_intra: t.lambda_intra,
                closed: t.closed,
            })
            .unwrap_or_default();
        CostModel {
            lanes: self.lanes.unwrap_or(base.lanes),
            lambda_intra: self.lambda.unwrap_or(base.lambda_intra),
            closed: base.closed && !self.open,
        }
    }
}

#[derive(Args)]
struct MapArgs {
    /// JSONL map file.
    #[arg(long)]
    map: PathBuf,
    /// Zero-based line of the map to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

impl MapArgs {
    fn load(&self) -> Result<AreaMap, CliError> {
        let mut maps = read_maps(&self.map)?;
        if self.index >= maps.len() {
            return Err(usage(format!(
                "--index {} out of range: {} holds {} maps",
                self.index,
                self.map.display(),
                maps.len()
            )));
        }
        Ok(maps.swap_remove(self.index))
    }
}

#[derive(Args)]
struct GenMaps {
    #[arg(long)]
    count: usize,
    /// Areas per map.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = RadiusRange::default().min)]
    radius_min: f64,
    #[arg(long, default_value_t = RadiusRange::default().max)]
    radius_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Rollout,
    Critic,
}

#[derive(Args)]
struct Train {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for metrics.csv and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Train on a fixed JSONL dataset instead of fresh maps.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Areas per generated map.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    #[arg(long)]
    baseline_interval: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Embedding width used for all three decoder stages and the encoder.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Single-threaded run with byte-identical logs.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SolverArg {
    Exact,
    Brute,
    Nn,
    #[value(name = "nn+2opt")]
    NnTwoOpt,
}

#[derive(Args)]
struct Solve {
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, value_enum, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    solver: Option<SolverArg>,
    /// Decode with a trained policy instead of a solver.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Sample from the policy instead of decoding greedily.
    #[arg(long)]
    sample: bool,
    /// Include per-step probabilities (policy only).
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// exact (n <= 12) or nn+2opt.
    #[arg(long, default_value = "nn+2opt")]
    reference: Reference,
    /// Directory receiving report.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Args)]
struct Oracle {
    #[arg(long)]
    map: PathBuf,
    /// Solve only this map; all maps otherwise, one JSON line each.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Args)]
struct ExportTsp {
    #[command(flatten)]
    map: MapArgs,
    /// Pinned corner:pattern per area in area order, e.g. 0:1,2:0,...
    /// Defaults to the choices of the nn+2opt schedule.
    #[arg(long)]
    fixed: Option<String>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cost: CostArgs,
}

fn read_maps(path: &Path) -> Result<Vec<AreaMap>, CliError> {
    Ok(load_maps_file(path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_policy(path: &Path) -> Result<(Policy, Option<TrainConfig>), CliError> {
    let (policy, header) = Policy::load_file(path).with_context(|| format!("loading {}", path.display()))?;
    let stored = header
        .hyperparameters
        .get("train")
        .and_then(|t| serde_json::from_value(t.clone()).ok());
    Ok((policy, stored))
}

fn print_json(value: &ScheduleReport) -> CliResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value).context("writing output")?;
    writeln!(out).context("writing output")?;
    Ok(())
}

fn gen_maps(a: GenMaps) -> CliResult {
    if a.count == 0 || a.n == 0 {
        return Err(usage("--count and --n must be at least 1"));
    }
    let radius = RadiusRange {
        min: a.radius_min,
        max: a.radius_max,
    };
    let written = generate_dataset(a.count, a.n, radius, a.seed, &a.out).map_err(|e| match e {
        covsched::mapgen::MapError::InvalidArgument(m) => usage(m),
        e => CliError::Runtime(anyhow::Error::new(e).context(format!("writing {}", a.out.display()))),
    })?;
    eprintln!("wrote {written} maps to {}", a.out.display());
    Ok(())
}

fn train_cmd(a: Train) -> CliResult {
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag { $field = v; })*
        };
    }
    set!(
        seed => config.seed,
        epochs => config.epochs,
        steps_per_epoch => config.steps_per_epoch,
        batch_size => config.batch_size,
        n => config.n_areas,
        lr => config.lr,
        baseline_interval => config.baseline_interval,
        checkpoint_every => config.checkpoint_every,
        grad_clip => config.grad_clip,
        layers => config.policy.layers,
        heads => config.policy.heads,
    );
    if let Some(d) = a.dim {
        config.policy = PolicyConfig {
            d1: d,
            d2: d,
            d3: d,
            ..config.policy
        };
    }
    if let Some(b) = a.baseline {
        config.baseline = match b {
            BaselineArg::Rollout => BaselineKind::Rollout,
            BaselineArg::Critic => BaselineKind::Critic,
        };
    }
    let cost = a.cost.resolve(Some(&config));
    config.lanes = cost.lanes;
    config.lambda_intra = cost.lambda_intra;
    config.closed = cost.closed;
    config.strict |= a.strict;
    config.validate().map_err(|e| usage(e.to_string()))?;

    let source = match &a.dataset {
        Some(p) => MapSource::Dataset(read_maps(p)?),
        None => MapSource::Generated,
    };
    let outcome = train(config, &source, Some(&a.out)).context("training")?;
    if let Some(last) = outcome.metrics.last() {
        eprintln!(
            "step {} epoch {} mean_cost {:.6} grad_norm {:.4}",
            last.step, last.epoch, last.mean_cost, last.grad_norm
        );
    }
    if let Some(p) = outcome.final_checkpoint {
        println!("{}", p.display());
    }
    Ok(())
}

fn solve_with(solver: SolverArg, map: &AreaMap, cost: &CostModel) -> Result<Schedule, CliError> {
    let cap = match solver {
        SolverArg::Exact => Some(EXACT_MAX_AREAS),
        SolverArg::Brute => Some(BRUTE_FORCE_MAX_AREAS),
        _ => None,
    };
    if let Some(cap) = cap.filter(|&c| map.len() > c) {
        return Err(usage(format!("this solver supports n <= {cap}; map has n = {}", map.len())));
    }
    let s = match solver {
        SolverArg::Exact => exact_schedule(map, cost).map(|(s, _)| s),
        SolverArg::Brute => brute_force_enumerate(map, cost).map(|(s, _, _)| s),
        SolverArg::Nn => nearest_neighbor_best(map, cost),
        SolverArg::NnTwoOpt => nearest_neighbor_best(map, cost).and_then(|s| two_opt(map, &s, cost, TWO_OPT_PASSES)),
    };
    Ok(s.context("solving")?)
}

fn solve(a: Solve) -> CliResult {
    if a.checkpoint.is_none() && (a.trace || a.sample) {
        return Err(usage("--trace and --sample need --checkpoint"));
    }
    let map = a.map.load()?;
    let report = match (&a.checkpoint, a.solver) {
        (Some(path), _) => {
            let (policy, stored) = load_policy(path)?;
            let cost = a.cost.resolve(stored.as_ref());
            let mut rng = derived_rng(a.seed, 0, a.map.index as u64);
            let chooser = if a.sample { Chooser::Sample(&mut rng) } else { Chooser::Greedy };
            let mut tape = Tape::new();
            let (r, _) = policy
                .rollout(&mut tape, &map, &cost, chooser, NormUse::Batch)
                .context("decoding")?;
            let schedule = Schedule::evaluate(&map, r.decisions, &cost).context("scoring")?;
            let name = if a.sample { "policy-sample" } else { "policy-greedy" };
            let mut report = ScheduleReport::new(name, &map, &schedule, &cost);
            report.log_prob = Some(r.log_prob_value);
            report.trace = a.trace.then_some(r.trace);
            report
        }
        (None, Some(solver)) => {
            let cost = a.cost.resolve(None);
            let schedule = solve_with(solver, &map, &cost)?;
            let name = solver.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
            ScheduleReport::new(name, &map, &schedule, &cost)
        }
        (None, None) => return Err(usage("one of --solver or --checkpoint is required")),
    };
    print_json(&report)
}

fn eval(a: Eval) -> CliResult {
    let maps = read_maps(&a.dataset)?;
    if maps.is_empty() {
        return Err(usage(format!("{} holds no maps", a.dataset.display())));
    }
    check_reference(a.reference, &maps).map_err(|e| usage(e.to_string()))?;
    let (policy, stored) = load_policy(&a.checkpoint)?;
    let cost = a.cost.resolve(stored.as_ref());
    let report = evaluate(
        &policy,
        &a.reference,
        &maps,
        &cost,
        Some(a.checkpoint.display().to_string()),
        a.seed,
    )
    .context("evaluating")?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let csv = a.out.join("report.csv");
    let mut w = BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?);
    write_report_csv(&report.records, &mut w).context("writing report.csv")?;
    w.flush().context("writing report.csv")?;
    let summary = a.out.join("summary.json");
    let text = serde_json::to_string_pretty(&report).context("serializing summary")?;
    fs::write(&summary, text + "\n").with_context(|| format!("writing {}", summary.display()))?;

    for g in &report.groups {
        println!(
            "n={} maps={} model {:.4}±{:.4} {} {:.4}±{:.4} gap {:.2}% excess {:+.2}%",
            g.n,
            g.model_cost.count,
            g.model_cost.mean,
            g.model_cost.std,
            report.meta.reference,
            g.ref_cost.mean,
            g.ref_cost.std,
            g.gap_ratio_pct.mean,
            g.excess_pct.mean
        );
    }
    if !report.complete {
        eprintln!("warning: {} maps failed; see summary.json", report.failures.len());
    }
    Ok(())
}

fn oracle(a: Oracle) -> CliResult {
    let maps = read_maps(&a.map)?;
    let picked: Vec<&AreaMap> = match a.index {
        Some(i) => vec![maps
            .get(i)
            .ok_or_else(|| usage(format!("--index {i} out of range: {} holds {} maps", a.map.display(), maps.len())))?],
        None => maps.iter().collect(),
    };
    if let Some(m) = picked.iter().find(|m| m.len() > EXACT_MAX_AREAS) {
        return Err(usage(format!(
            "exact solving supports n <= {EXACT_MAX_AREAS}; map {} has n = {}",
            m.id,
            m.len()
        )));
    }
    let cost = a.cost.resolve(None);
    for map in picked {
        let (schedule, _) = exact_schedule(map, &cost).context("solving")?;
        print_json(&ScheduleReport::new("exact", map, &schedule, &cost))?;
    }
    Ok(())
}

fn parse_fixed(text: &str, n: usize) -> Result<Vec<(usize, usize)>, CliError> {
    let fixed = text
        .split(',')
        .map(|pair| {
            let (c, p) = pair.trim().split_once(':')?;
            Some((c.trim().parse().ok()?, p.trim().parse().ok()?))
        })
        .collect::<Option<Vec<(usize, usize)>>>()
        .ok_or_else(|| usage(format!("--fixed: expected corner:pattern pairs, got {text:?}")))?;
    if fixed.len() != n {
        return Err(usage(format!("--fixed: {} pairs given for {n} areas", fixed.len())));
    }
    Ok(fixed)
}

fn export_tsp(a: ExportTsp) -> CliResult {
    let map = a.map.load()?;
    let cost = a.cost.resolve(None);
    let fixed = match &a.fixed {
        Some(text) => parse_fixed(text, map.len())?,
        None => {
            let s = solve_with(SolverArg::NnTwoOpt, &map, &cost)?;
            let mut f = vec![(0, 0); map.len()];
            for d in &s.decisions {
                f[d.area] = (d.corner, d.pattern);
            }
            f
        }
    };
    let edges = build_edge_matrix(&map, &fixed, &cost).map_err(|e| usage(e.to_string()))?;
    let sym = symmetrize(&edges).context("symmetrizing")?;
    let name = a.name.clone().unwrap_or_else(|| format!("map{}", map.id));
    match &a.out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            write_tsplib(&sym, &name, &mut w).context("writing TSPLIB")?;
            w.flush().context("writing TSPLIB")?;
        }
        None => write_tsplib(&sym, &name, io::stdout().lock()).context("writing TSPLIB")?,
    }
    Ok(())
}

fn version(config: Option<&str>) -> CliResult {
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    println!(
        "covsched {} ({}-{}, {profile})",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH
    );
    match config {
        None => Ok(()),
        Some("paper") => {
            println!("{}", param_report(PolicyConfig::full_size()));
            Ok(())
        }
        Some(other) => Err(usage(format!("unknown --config {other:?} (expected paper)"))),
    }
}

/// Prints the synopsis of `sub` (or the whole tool) to standard error.
fn synopsis(sub: Option<&str>) {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = match sub.and_then(|s| cmd.find_subcommand_mut(s)) {
        Some(c) => c.render_usage(),
        None => cmd.render_usage(),
    };
    eprintln!("{usage}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                return ExitCode::SUCCESS;
            }
            // Value errors come without a usage line.
            if !e.render().to_string().contains("Usage:") {
                synopsis(std::env::args().nth(1).as_deref());
            }
            return ExitCode::from(1);
        }
    };
    let (name, result) = match cli.command {
        _ if cli.version => (None, version(cli.config.as_deref())),
        None => (None, Err(usage("no subcommand given"))),
        Some(Command::GenMaps(a)) => (Some("gen-maps"), gen_maps(a)),
        Some(Command::Train(a)) => (Some("train"), train_cmd(a)),
        Some(Command::Solve(a)) => (Some("solve"), solve(a)),
        Some(Command::Eval(a)) => (Some("eval"), eval(a)),
        Some(Command::Oracle(a)) => (Some("oracle"), oracle(a)),
        Some(Command::ExportTsp(a)) => (Some("export-tsp"), export_tsp(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            synopsis(name);
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
