mod error;
mod external;
mod format;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use symtn::builder::{
    build_assignment_mps, build_cardinality_mps, embed_method1, embed_method2, expand_degeneracy, Skeleton,
};
use symtn::geo::{geo_run, CostFunction, GeoConfig, GeoStart, NegativeSeparation, TemperaturePolicy};
use symtn::oracle::{
    degeneracy_count, degeneracy_count_as_printed, degeneracy_ratio, enumerate_solutions, random_valid_search,
    solve_single_equality_dp, solve_single_equality_mitm,
};
use symtn::sample::sample_batch;
use symtn::train::{nll, train, write_loss_csv, TrainConfig, WeightedTrainingSet};
use symtn::{Bitstring, ConstraintSystem, SeedSet, SymMps};

use error::{CliError, CliResult};
use external::ExternalCost;
use manifest::{digest_file, RunManifest};

/// Symmetric tensor-network generative models for equality-constrained
/// binary optimisation.
#[derive(Debug, Parser, Serialize)]
#[command(name = "symtn", version)]
struct Cli {
    /// Print a machine-readable JSON summary on standard output.
    #[arg(long, global = true, env = "SYMTN_JSON")]
    json: bool,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, env = "SYMTN_THREADS")]
    threads: Option<usize>,
    /// Where to write the run manifest (default: next to the first output).
    #[arg(long, global = true, env = "SYMTN_MANIFEST")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Cmd {
    /// Build a model from constraints and seed bitstrings.
    Embed(EmbedArgs),
    /// Exact fixed-cardinality model (uniform over all weight-κ strings).
    Cardinality(CardinalityArgs),
    /// Exact one-hot assignment model.
    Assignment(AssignmentArgs),
    /// Two-site NLL training on a data file.
    Train(TrainArgs),
    /// Exact samples from a model.
    Sample(SampleArgs),
    /// List the bitstrings a model supports.
    Enumerate(EnumerateArgs),
    /// Generative optimisation loop.
    Geo(GeoArgs),
    /// Ground-truth solvers and counts.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Re-run a manifest and check that every output is reproduced exactly.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Serialize)]
struct EmbedArgs {
    #[arg(long, env = "SYMTN_CONSTRAINTS")]
    constraints: PathBuf,
    #[arg(long, env = "SYMTN_SEEDS")]
    seeds: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2), env = "SYMTN_METHOD")]
    method: u8,
    /// Raise every link sector to this degeneracy.
    #[arg(long, default_value_t = 1, env = "SYMTN_DEGENERACY")]
    degeneracy: usize,
    /// Scale of the random entries added by the degeneracy expansion.
    #[arg(long, default_value_t = 0.0, env = "SYMTN_NOISE")]
    noise: f64,
    #[arg(long, default_value_t = 0, env = "SYMTN_SEED")]
    seed: u64,
    #[arg(long, env = "SYMTN_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CardinalityArgs {
    #[arg(long, env = "SYMTN_SITES")]
    n: usize,
    #[arg(long, env = "SYMTN_KAPPA")]
    kappa: usize,
    #[arg(long, env = "SYMTN_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct AssignmentArgs {
    #[arg(long, env = "SYMTN_SITES")]
    n: usize,
    /// Groups of site indices, e.g. "0,1,2;3,4".
    #[arg(long, env = "SYMTN_GROUPS")]
    groups: String,
    #[arg(long, env = "SYMTN_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long, env = "SYMTN_MODEL")]
    model: PathBuf,
    /// Bitstrings, optionally followed by a cost (with --temperature) or a weight.
    #[arg(long, env = "SYMTN_DATA")]
    data: PathBuf,
    /// Softmax temperature applied to per-line costs.
    #[arg(long, env = "SYMTN_TEMPERATURE")]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 1, env = "SYMTN_SWEEPS")]
    sweeps: usize,
    #[arg(long, default_value_t = 30, env = "SYMTN_CHI")]
    chi: usize,
    #[arg(long, default_value_t = 0.02, env = "SYMTN_ALPHA")]
    alpha: f64,
    /// Drop singular values below this (in addition to --chi).
    #[arg(long, default_value_t = 0.0, env = "SYMTN_CUTOFF")]
    cutoff: f64,
    #[arg(long, env = "SYMTN_OUT")]
    out: PathBuf,
    /// Loss trace (default: `<out>.loss.csv`).
    #[arg(long, env = "SYMTN_LOSS_CSV")]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SampleArgs {
    #[arg(long, env = "SYMTN_MODEL")]
    model: PathBuf,
    #[arg(long, default_value_t = 1000, env = "SYMTN_NUM")]
    num: usize,
    #[arg(long, default_value_t = 0, env = "SYMTN_SEED")]
    seed: u64,
    /// Samples file (default: standard output).
    #[arg(long, env = "SYMTN_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EnumerateArgs {
    #[arg(long, env = "SYMTN_MODEL")]
    model: PathBuf,
    /// Refuse to list more than this many strings.
    #[arg(long, default_value_t = 1 << 20, env = "SYMTN_LIMIT")]
    limit: usize,
    #[arg(long, env = "SYMTN_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CostKind {
    /// Minus the largest gap between consecutive 1-bits.
    Negsep,
    /// A child process given by --cost-command.
    ExternalCommand,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StartKind {
    /// Cardinality constraints use the exact model; otherwise seeds.
    Auto,
    Cardinality,
    Seeds,
    Vanilla,
}

#[derive(Debug, Args, Serialize)]
struct GeoArgs {
    #[arg(long, env = "SYMTN_CONSTRAINTS")]
    constraints: PathBuf,
    #[arg(long, value_enum, default_value_t = CostKind::Negsep, env = "SYMTN_COST")]
    cost: CostKind,
    /// Shell command for `--cost external-command`.
    #[arg(long, env = "SYMTN_COST_COMMAND")]
    cost_command: Option<String>,
    #[arg(long, value_enum, default_value_t = StartKind::Auto, env = "SYMTN_START")]
    start: StartKind,
    /// Seed bitstrings for `--start seeds` (default: random search).
    #[arg(long, env = "SYMTN_SEEDS")]
    seeds: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000, env = "SYMTN_SEARCH_BUDGET")]
    search_budget: usize,
    #[arg(long, default_value_t = 10_000, env = "SYMTN_QUERIES")]
    queries: usize,
    #[arg(long, default_value_t = 100, env = "SYMTN_ELITES")]
    elites: usize,
    #[arg(long, default_value_t = 30, env = "SYMTN_CHI")]
    chi: usize,
    #[arg(long, default_value_t = 0.02, env = "SYMTN_ALPHA")]
    alpha: f64,
    #[arg(long, default_value_t = 1, env = "SYMTN_SWEEPS")]
    sweeps: usize,
    #[arg(long, default_value_t = 10, env = "SYMTN_MAX_ITERS")]
    max_iters: usize,
    /// Relative utility change that counts as converged.
    #[arg(long, default_value_t = 1e-6, env = "SYMTN_EPSILON")]
    epsilon: f64,
    /// Fixed softmax temperature (default: half the elites' cost std).
    #[arg(long, env = "SYMTN_TEMPERATURE")]
    temperature: Option<f64>,
    /// Choose elites from the batch together with the previous elites.
    #[arg(long, env = "SYMTN_UNION_ELITES")]
    union_elites: bool,
    #[arg(long, default_value_t = 0, env = "SYMTN_SEED")]
    seed: u64,
    /// Report JSON.
    #[arg(long, env = "SYMTN_OUT")]
    out: PathBuf,
    #[arg(long, env = "SYMTN_UTILITY_CSV")]
    utility_csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OracleCmd {
    /// All solutions by exhaustive search (N ≤ 26).
    Enumerate(OracleSolveArgs),
    /// Single equality by meet in the middle (N ≤ 40).
    Mitm(OracleSolveArgs),
    /// Single non-negative equality by dynamic programming.
    Dp(OracleSolveArgs),
    /// Number of weight-κ strings with negative-separation cost −N+κ+a−1.
    Degeneracy(DegeneracyArgs),
    /// Uniform random search filtered by the constraints.
    RandomSearch(RandomSearchArgs),
}

#[derive(Debug, Args, Serialize)]
struct OracleSolveArgs {
    #[arg(long, env = "SYMTN_CONSTRAINTS")]
    constraints: PathBuf,
    /// Maximum number of solutions to list.
    #[arg(long, default_value_t = 1 << 20, env = "SYMTN_LIMIT")]
    limit: usize,
    /// Solutions file; without it only the count is reported.
    #[arg(long, env = "SYMTN_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DegeneracyArgs {
    #[arg(long)]
    a: i64,
    #[arg(long, env = "SYMTN_KAPPA")]
    kappa: i64,
    #[arg(long, env = "SYMTN_SITES")]
    n: i64,
    /// Evaluate the binomial sums literally (triple counts at a = 0).
    #[arg(long)]
    as_printed: bool,
}

#[derive(Debug, Args, Serialize)]
struct RandomSearchArgs {
    #[arg(long, env = "SYMTN_CONSTRAINTS")]
    constraints: PathBuf,
    #[arg(long, default_value_t = 100_000, env = "SYMTN_SEARCH_BUDGET")]
    budget: usize,
    #[arg(long, default_value_t = 0, env = "SYMTN_SEED")]
    seed: u64,
    #[arg(long, env = "SYMTN_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    path: PathBuf,
}

/// What a command did, for the summary and the manifest.
#[derive(Default)]
struct Report {
    summary: Value,
    text: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

fn model_summary(mps: &SymMps) -> Value {
    json!({
        "sites": mps.num_sites(),
        "charges": mps.charge_len(),
        "bond_dims": mps.bond_dims(),
        "sector_counts": mps.bond_sector_counts(),
        "storage": mps.storage(),
    })
}

fn seeds_from_file(cs: &ConstraintSystem, path: &Path) -> CliResult<SeedSet> {
    let lines = format::read_bitstrings(path)?;
    if lines.is_empty() {
        return Err(CliError::Validation(format!("{}: no seed bitstrings", path.display())));
    }
    SeedSet::new(cs, lines.into_iter().map(|(x, _)| x)).map_err(|e| CliError::from(e).context(path))
}

fn cmd_embed(a: &EmbedArgs) -> CliResult<Report> {
    let cs = format::read_constraints(&a.constraints)?;
    let seeds = seeds_from_file(&cs, &a.seeds)?;
    let skeleton = if a.method == 1 { embed_method1(&cs, &seeds)? } else { embed_method2(&cs, &seeds)? };
    let support = Skeleton::from_mps(&skeleton)?.count_paths()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mps = if a.degeneracy > 1 { expand_degeneracy(&skeleton, a.degeneracy, a.noise, &mut rng)? } else { skeleton };
    format::write_model(&a.out, &mps)?;
    let mut summary = model_summary(&mps);
    summary["seeds"] = json!(seeds.len());
    summary["support_size"] = json!(support.to_string());
    Ok(Report {
        text: format!(
            "method {} embedding of {} seeds: bond dims {:?}, {} supported strings",
            a.method,
            seeds.len(),
            mps.bond_dims(),
            support
        ),
        summary,
        inputs: vec![a.constraints.clone(), a.seeds.clone()],
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
    })
}

fn exact_report(mps: SymMps, out: &Path, what: String) -> CliResult<Report> {
    format::write_model(out, &mps)?;
    Ok(Report {
        text: format!("{what}: bond dims {:?}", mps.bond_dims()),
        summary: model_summary(&mps),
        outputs: vec![out.to_path_buf()],
        ..Report::default()
    })
}

fn cmd_cardinality(a: &CardinalityArgs) -> CliResult<Report> {
    exact_report(build_cardinality_mps(a.n, a.kappa)?, &a.out, format!("cardinality N={} κ={}", a.n, a.kappa))
}

fn parse_groups(s: &str) -> CliResult<Vec<Vec<usize>>> {
    s.split(';')
        .map(|g| {
            g.split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|e| CliError::Validation(format!("bad site {v:?} in groups: {e}"))))
                .collect()
        })
        .collect()
}

fn cmd_assignment(a: &AssignmentArgs) -> CliResult<Report> {
    let groups = parse_groups(&a.groups)?;
    exact_report(build_assignment_mps(a.n, &groups)?, &a.out, format!("assignment over {} groups", groups.len()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs) -> CliResult<Report> {
    let mps = format::read_model(&a.model)?;
    let lines = format::read_bitstrings(&a.data)?;
    if lines.is_empty() {
        return Err(CliError::Validation(format!("{}: no training data", a.data.display())));
    }
    let numbers: Vec<f64> = lines.iter().filter_map(|l| l.1).collect();
    if !numbers.is_empty() && numbers.len() != lines.len() {
        return Err(CliError::Validation("either every data line carries a number or none does".into()));
    }
    let ts = match (a.temperature, numbers.is_empty()) {
        (Some(_), true) => return Err(CliError::Validation("--temperature needs a cost on every data line".into())),
        (Some(t), false) => WeightedTrainingSet::softmax(&lines.iter().map(|(x, c)| (x.clone(), c.unwrap())).collect::<Vec<_>>(), t)?,
        (None, true) => WeightedTrainingSet::uniform(lines.into_iter().map(|(x, _)| x))?,
        (None, false) => WeightedTrainingSet::new(lines.into_iter().map(|(x, w)| (x, w.unwrap())))?,
    };
    for (x, _) in ts.items() {
        if mps.amplitude(x)? == 0.0 {
            return Err(CliError::Validation(format!("training string {x} is outside the model's support")));
        }
    }
    let cfg = TrainConfig { learning_rate: a.alpha, chi_max: a.chi, sweeps: a.sweeps, cutoff: a.cutoff, ..TrainConfig::default() };
    let before = nll(&mps, &ts)?;
    let (trained, trace) = train(&mps, &ts, &cfg)?;
    format::write_model(&a.out, &trained)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &trace).map_err(|e| CliError::Io(e.to_string()))?;
    format::write(&loss_path, &csv)?;
    let after = trace.last().copied().unwrap_or(before);
    let mut summary = model_summary(&trained);
    summary["nll_before"] = json!(before);
    summary["nll_after"] = json!(after);
    summary["loss_trace"] = json!(trace);
    Ok(Report {
        text: format!("{} sweeps: NLL {before:.6} → {after:.6}, bond dims {:?}", a.sweeps, trained.bond_dims()),
        summary,
        inputs: vec![a.model.clone(), a.data.clone()],
        outputs: vec![a.out.clone(), loss_path],
        seed: None,
    })
}

fn cmd_sample(a: &SampleArgs) -> CliResult<Report> {
    let mps = format::read_model(&a.model)?;
    let batch = sample_batch(&mps, a.num, a.seed)?;
    let lines = format::bitstring_lines(&batch.bitstrings);
    let mut report = Report {
        summary: json!({ "samples": batch.len(), "distinct": batch.distinct(), "seed": a.seed }),
        inputs: vec![a.model.clone()],
        seed: Some(a.seed),
        ..Report::default()
    };
    match &a.out {
        Some(out) => {
            format::write(out, lines.as_bytes())?;
            report.outputs.push(out.clone());
            report.text = format!("{} samples ({} distinct) → {}", batch.len(), batch.distinct(), out.display());
        }
        None => report.text = lines.trim_end().to_string(),
    }
    Ok(report)
}

fn cmd_enumerate(a: &EnumerateArgs) -> CliResult<Report> {
    let mps = format::read_model(&a.model)?;
    let support = mps.support(a.limit, 0.0)?;
    let mut report = Report {
        summary: json!({ "support_size": support.len() }),
        inputs: vec![a.model.clone()],
        ..Report::default()
    };
    let lines = format::bitstring_lines(&support);
    match &a.out {
        Some(out) => {
            format::write(out, lines.as_bytes())?;
            report.outputs.push(out.clone());
            report.text = format!("{} supported strings → {}", support.len(), out.display());
        }
        None => report.text = format!("{}{} supported strings", lines, support.len()),
    }
    Ok(report)
}

fn is_cardinality(cs: &ConstraintSystem) -> Option<usize> {
    let kappa = *cs.rhs().first()?;
    let ok = cs.num_rows() == 1 && cs.rows()[0].iter().all(|&v| v == 1) && (0..=cs.num_sites() as i64).contains(&kappa);
    ok.then_some(kappa as usize)
}

fn cmd_geo(a: &GeoArgs) -> CliResult<Report> {
    let cs = format::read_constraints(&a.constraints)?;
    let mut inputs = vec![a.constraints.clone()];
    let external;
    let cost: &dyn CostFunction = match a.cost {
        CostKind::Negsep => &NegativeSeparation,
        CostKind::ExternalCommand => {
            let command = a.cost_command.clone().ok_or_else(|| {
                CliError::Validation("--cost external-command needs --cost-command".into())
            })?;
            external = ExternalCost { command };
            &external
        }
    };
    let seeds = |inputs: &mut Vec<PathBuf>| -> CliResult<SeedSet> {
        match &a.seeds {
            Some(p) => {
                inputs.push(p.clone());
                seeds_from_file(&cs, p)
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                let found = random_valid_search(&cs, a.search_budget, &mut rng)?;
                if found.is_empty() {
                    return Err(CliError::Validation(format!("random search found no valid string in {} draws", a.search_budget)));
                }
                Ok(found)
            }
        }
    };
    let start = match a.start {
        StartKind::Vanilla => GeoStart::Vanilla,
        StartKind::Seeds => GeoStart::Seeds(seeds(&mut inputs)?),
        StartKind::Cardinality => {
            let kappa = is_cardinality(&cs)
                .ok_or_else(|| CliError::Validation("constraints are not a single all-ones row".into()))?;
            GeoStart::Exact(build_cardinality_mps(cs.num_sites(), kappa)?)
        }
        StartKind::Auto => match (is_cardinality(&cs), &a.seeds) {
            (Some(kappa), None) => GeoStart::Exact(build_cardinality_mps(cs.num_sites(), kappa)?),
            _ => GeoStart::Seeds(seeds(&mut inputs)?),
        },
    };
    let cfg = GeoConfig {
        queries: a.queries,
        elite_count: a.elites,
        chi_max: a.chi,
        learning_rate: a.alpha,
        sweeps_per_iter: a.sweeps,
        max_iters: a.max_iters,
        epsilon_rel: a.epsilon,
        temperature: a.temperature.map_or(TemperaturePolicy::HalfStd, TemperaturePolicy::Fixed),
        union_elites: a.union_elites,
        seed: a.seed,
    };
    let outcome = geo_run(&cs, cost, &cfg, start)?;
    let report = json!({ "config": cfg, "outcome": outcome });
    format::write(&a.out, format!("{}\n", serde_json::to_string_pretty(&report).expect("report serialises")).as_bytes())?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.utility_csv {
        format::write(p, outcome.utility_csv().as_bytes())?;
        outputs.push(p.clone());
    }
    Ok(Report {
        text: format!(
            "best cost {} ({}) after {} iterations, stop: {:?}",
            outcome.best_cost,
            outcome.best,
            outcome.iterations.len() - 1,
            outcome.stop
        ),
        summary: json!({
            "best": outcome.best.to_string(),
            "best_cost": outcome.best_cost,
            "utility_trace": outcome.utility_trace,
            "iterations": outcome.iterations.len() - 1,
        }),
        inputs,
        outputs,
        seed: Some(a.seed),
    })
}

fn solutions_report(
    label: &str,
    count: String,
    listed: Option<&[Bitstring]>,
    complete: bool,
    a: &OracleSolveArgs,
) -> CliResult<Report> {
    let mut report = Report {
        summary: json!({ "count": count, "complete": complete }),
        text: format!("{label}: {count} solutions"),
        inputs: vec![a.constraints.clone()],
        ..Report::default()
    };
    if let (Some(out), Some(xs)) = (&a.out, listed) {
        format::write(out, format::bitstring_lines(xs).as_bytes())?;
        report.outputs.push(out.clone());
    }
    Ok(report)
}

fn single_row(cs: &ConstraintSystem) -> CliResult<(&[i64], i64)> {
    if cs.num_rows() != 1 {
        return Err(CliError::Validation(format!("this solver takes one equation, got {}", cs.num_rows())));
    }
    Ok((&cs.rows()[0], cs.rhs()[0]))
}

fn cmd_oracle(cmd: &OracleCmd) -> CliResult<Report> {
    match cmd {
        OracleCmd::Enumerate(a) => {
            let cs = format::read_constraints(&a.constraints)?;
            let sols = enumerate_solutions(&cs)?;
            let listed = &sols.bitstrings[..sols.len().min(a.limit)];
            solutions_report("enumeration", sols.len().to_string(), Some(listed), listed.len() == sols.len(), a)
        }
        OracleCmd::Mitm(a) => {
            let cs = format::read_constraints(&a.constraints)?;
            let (row, b) = single_row(&cs)?;
            let sols = solve_single_equality_mitm(row, b, a.limit)?;
            solutions_report("meet in the middle", sols.len().to_string(), Some(&sols.bitstrings), sols.complete, a)
        }
        OracleCmd::Dp(a) => {
            let cs = format::read_constraints(&a.constraints)?;
            let (row, b) = single_row(&cs)?;
            let (count, listed) = solve_single_equality_dp(row, b, a.out.as_ref().map(|_| a.limit))?;
            let complete = listed.as_ref().is_none_or(|s| s.complete);
            solutions_report("dynamic programming", count.to_string(), listed.as_ref().map(|s| &s.bitstrings[..]), complete, a)
        }
        OracleCmd::Degeneracy(a) => {
            let count =
                if a.as_printed { degeneracy_count_as_printed(a.a, a.kappa, a.n)? } else { degeneracy_count(a.a, a.kappa, a.n)? };
            let ratio = degeneracy_ratio(&count, a.n, a.kappa);
            Ok(Report {
                text: format!("{count} strings with cost {} (fraction {ratio:.3e})", -a.n + a.kappa + a.a - 1),
                summary: json!({ "count": count.to_string(), "cost": -a.n + a.kappa + a.a - 1, "fraction": ratio }),
                ..Report::default()
            })
        }
        OracleCmd::RandomSearch(a) => {
            let cs = format::read_constraints(&a.constraints)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let found = random_valid_search(&cs, a.budget, &mut rng)?;
            format::write(&a.out, format::bitstring_lines(found.bitstrings()).as_bytes())?;
            Ok(Report {
                text: format!("{} distinct valid strings in {} draws", found.len(), a.budget),
                summary: json!({ "found": found.len(), "budget": a.budget }),
                inputs: vec![a.constraints.clone()],
                outputs: vec![a.out.clone()],
                seed: Some(a.seed),
            })
        }
    }
}

fn cmd_replay(a: &ReplayArgs) -> CliResult<Report> {
    let recorded = RunManifest::read(&a.path)?;
    let argv = std::iter::once("symtn".to_string()).chain(recorded.argv.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Validation(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Cmd::Replay(_)) {
        return Err(CliError::Validation("a replay manifest cannot be replayed".into()));
    }
    for input in &recorded.inputs {
        if digest_file(&input.path)?.sha256 != input.sha256 {
            return Err(CliError::Validation(format!("input {} changed since the recorded run", input.path.display())));
        }
    }
    run(&cli.command)?;
    let bad = recorded.mismatched_outputs()?;
    if !bad.is_empty() {
        let names: Vec<String> = bad.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::Numerical(format!("outputs differ from the recorded run: {}", names.join(", "))));
    }
    Ok(Report {
        text: format!("reproduced {} output(s) of `{}` exactly", recorded.outputs.len(), recorded.command),
        summary: json!({ "reproduced": recorded.outputs.len() }),
        inputs: vec![a.path.clone()],
        ..Report::default()
    })
}

fn run(cmd: &Cmd) -> CliResult<Report> {
    match cmd {
        Cmd::Embed(a) => cmd_embed(a),
        Cmd::Cardinality(a) => cmd_cardinality(a),
        Cmd::Assignment(a) => cmd_assignment(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Enumerate(a) => cmd_enumerate(a),
        Cmd::Geo(a) => cmd_geo(a),
        Cmd::Oracle(c) => cmd_oracle(c),
        Cmd::Replay(a) => cmd_replay(a),
    }
}

fn command_name(cmd: &Cmd) -> String {
    let v = serde_json::to_value(cmd).expect("arguments serialise");
    let outer = v.as_object().and_then(|o| o.keys().next().cloned()).unwrap_or_default();
    match cmd {
        Cmd::Oracle(c) => {
            let inner = serde_json::to_value(c).expect("arguments serialise");
            let inner = inner.as_object().and_then(|o| o.keys().next().cloned()).unwrap_or_default();
            format!("{outer} {inner}").to_lowercase()
        }
        _ => outer.to_lowercase(),
    }
}

fn execute(cli: &Cli, argv: Vec<String>) -> CliResult<(Report, Option<PathBuf>)> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    }
    let clock = Instant::now();
    let report = run(&cli.command)?;
    let manifest_path = match (&cli.manifest, &cli.command) {
        (Some(p), _) => Some(p.clone()),
        (None, Cmd::Replay(_)) => None,
        (None, _) => report.outputs.first().map(|o| with_suffix(o, ".manifest.json")),
    };
    if let Some(path) = &manifest_path {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command_name(&cli.command),
            argv,
            config: serde_json::to_value(&cli.command).expect("arguments serialise"),
            rng_seed: report.seed,
            inputs: report.inputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
            outputs: report.outputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
            elapsed_ms: clock.elapsed().as_millis(),
        };
        manifest.write(path)?;
    }
    Ok((report, manifest_path))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match execute(&cli, argv) {
        Ok((report, manifest)) => {
            if cli.json {
                let mut out = json!({ "ok": true, "command": command_name(&cli.command), "result": report.summary });
                if let Some(m) = manifest {
                    out["manifest"] = json!(m);
                }
                println!("{}", serde_json::to_string_pretty(&out).expect("summary serialises"));
            } else if !report.text.is_empty() {
                println!("{}", report.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            if cli.json {
                println!("{}", json!({ "ok": false, "error": e.to_string(), "exit_code": code }));
            }
            eprintln!("error: {e}");
            ExitCode::from(code as u8)
        }
    }
}
