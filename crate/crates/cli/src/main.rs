use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use emobias_core::active_loop::{LoopConfig, SessionSources, SessionStore};
use emobias_core::analysis::{render_report, render_table, BiasReport, ReportFormat, DEFAULT_TOP_K};
use emobias_core::committee::{PretrainConfig, Pretrained};
use emobias_core::io::{load_av_csv, load_pool_with_cache, write_av_csv, write_feature_cache, write_pool};
use emobias_core::oracle::{profile_by_name, OracleProfile};
use emobias_core::simulate::{report_file_name, run_simulation, sweep, Persist};
use emobias_core::synth::{synthetic_pool_matrices, synthetic_records, SynthConfig};
use emobias_core::{build_report, SourceTypeNames, TrainParams};
use emobias_service::ServiceConfig;

#[derive(Parser)]
#[command(
    name = "emobias",
    version,
    about = "Personalized emotion recognition and Q2 bias audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic pool and rating dataset.
    Synth(SynthArgs),
    /// Feature extraction.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train the committee on a rating dataset.
    Pretrain(PretrainArgs),
    /// Run one simulated session and write its report.
    Simulate(SimulateArgs),
    /// Run simulated sessions over many seeds and aggregate.
    Sweep(SweepArgs),
    /// Serve the annotation API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the report of a persisted session.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; receives `pool/` and `ratings.csv`.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Aggregate every descriptor CSV of a pool into a feature cache.
    Build {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PretrainArgs {
    /// CSV of `song_id, valence, arousal, f0..`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 15)]
    members: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    midpoint: f64,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    min_child_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    committee: PathBuf,
    #[arg(long)]
    feature_cache: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = 10.0)]
    user_weight: f64,
}

impl Inputs {
    fn load(&self) -> Result<(Arc<Vec<emobias_core::Excerpt>>, Arc<Pretrained>)> {
        let pool = load_pool_with_cache(&self.pool, self.feature_cache.as_deref())
            .with_context(|| format!("loading pool {}", self.pool.display()))?;
        let base = Pretrained::load(&self.committee)
            .with_context(|| format!("loading committee {}", self.committee.display()))?;
        Ok((Arc::new(pool), Arc::new(base)))
    }

    fn loop_config(&self, seed: u64) -> LoopConfig {
        LoopConfig {
            seed,
            user_weight: self.user_weight,
            ..LoopConfig::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// `left`, `center`, `right`, or a JSON profile file.
    #[arg(long)]
    oracle: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report destination; defaults to `report-<oracle>-seed<n>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Persist the session's event log under this directory.
    #[arg(long)]
    sessions: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Repeatable; defaults to all shipped profiles.
    #[arg(long)]
    oracle: Vec<String>,
    /// `a..b` (exclusive) or a comma-separated list.
    #[arg(long, default_value = "0..20")]
    seeds: String,
    /// Directory for per-seed reports and aggregates.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Session directory (`<data_dir>/<session_id>`).
    #[arg(long)]
    session: PathBuf,
    /// Overrides the pool recorded at session creation.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Overrides the committee recorded at session creation.
    #[arg(long)]
    committee: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Features(FeaturesCommand::Build { pool, out }) => {
            let excerpts = load_pool_with_cache(&pool, None)?;
            let written = write_feature_cache(&out, &excerpts)?;
            println!("wrote {} feature vectors to {}", written.len(), out.display());
            Ok(())
        }
        Command::Pretrain(a) => pretrain(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(config.as_deref())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(emobias_service::serve(cfg))?;
            Ok(())
        }
        Command::Report(a) => report(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let pool_dir = a.out.join("pool");
    write_pool(&pool_dir, &synthetic_pool_matrices(&cfg))?;
    let ratings = a.out.join("ratings.csv");
    write_av_csv(&ratings, &synthetic_records(&cfg)?)?;
    fs::write(a.out.join("synth.toml"), toml::to_string(&cfg)?)?;
    println!("wrote {} and {}", pool_dir.display(), ratings.display());
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let records = load_av_csv(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    let dataset_id = a
        .dataset
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let cfg = PretrainConfig {
        members: a.members,
        seed: a.seed,
        midpoint: a.midpoint,
        params: TrainParams {
            rounds: a.rounds,
            learning_rate: a.learning_rate,
            max_depth: a.max_depth,
            min_child_weight: a.min_child_weight,
            lambda_l2: a.lambda,
            sample_weights: None,
        },
    };
    let pre = Pretrained::from_records(&dataset_id, &records, &cfg)?;
    pre.save(&a.out)?;
    println!(
        "trained {} members on {} songs into {}",
        pre.committee.members.len(),
        records.len(),
        a.out.display()
    );
    Ok(())
}

fn oracle(arg: &str) -> Result<OracleProfile> {
    if let Some(p) = profile_by_name(arg) {
        return Ok(p);
    }
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(OracleProfile::load(path)?);
    }
    bail!("unknown oracle `{arg}`: expected left, center, right or a profile file")
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let profile = oracle(&a.oracle)?;
    let (pool, base) = a.inputs.load()?;
    let store = a.sessions.as_ref().map(SessionStore::new).transpose()?;
    let sources = SessionSources {
        pool_dir: Some(std::path::absolute(&a.inputs.pool)?),
        committee_dir: Some(std::path::absolute(&a.inputs.committee)?),
    };
    let persist = store.as_ref().map(|store| Persist {
        store,
        sources: Some(&sources),
    });
    let run = run_simulation(
        pool,
        base,
        &profile,
        a.inputs.loop_config(a.seed),
        a.inputs.top_k,
        persist,
    )?;
    let out = a.out.unwrap_or_else(|| report_file_name(&profile, a.seed));
    fs::write(&out, run.report.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    print!(
        "{}",
        render_table(std::slice::from_ref(&run.report), &SourceTypeNames::default())
    );
    println!("report written to {}", out.display());
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        bail!("seed list `{s}` is empty");
    }
    Ok(seeds)
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let seeds = parse_seeds(&a.seeds)?;
    let profiles = if a.oracle.is_empty() {
        emobias_core::oracle::default_profiles()
    } else {
        a.oracle.iter().map(|o| oracle(o)).collect::<Result<_>>()?
    };
    let (pool, base) = a.inputs.load()?;
    fs::create_dir_all(&a.out)?;
    let mut firsts: Vec<BiasReport> = Vec::new();
    for profile in &profiles {
        let (reports, agg) = sweep(
            Arc::clone(&pool),
            Arc::clone(&base),
            profile,
            a.inputs.loop_config(0),
            &seeds,
            a.inputs.top_k,
        )?;
        for (seed, r) in &reports {
            fs::write(a.out.join(report_file_name(profile, *seed)), r.to_json()?)?;
        }
        fs::write(
            a.out.join(format!("aggregate-{}.json", profile.name)),
            serde_json::to_string_pretty(&agg)?,
        )?;
        println!(
            "{:<8} seeds={} type_a share mean {:.3} [{:.2}, {:.2}]  type_b share mean {:.3} [{:.2}, {:.2}]  mean |diff| {:.3}",
            profile.name,
            seeds.len(),
            agg.type_a_share.mean,
            agg.type_a_share.min,
            agg.type_a_share.max,
            agg.type_b_share.mean,
            agg.type_b_share.min,
            agg.type_b_share.max,
            agg.mean_abs_share_diff
        );
        firsts.extend(reports.into_iter().next().map(|(_, r)| r));
    }
    println!("\nfirst seed per profile:");
    print!("{}", render_table(&firsts, &SourceTypeNames::default()));
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let dir = a.session.as_path();
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .with_context(|| format!("{} is not a session directory", dir.display()))?;
    let root = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let store = SessionStore::new(root)?;
    let events = store.events(id)?;
    let recorded = match events.first() {
        Some(emobias_core::active_loop::SessionEvent::SessionCreated { sources, .. }) => sources.clone(),
        _ => bail!("{}: event log does not start with session creation", dir.display()),
    };
    let pool_dir = a
        .pool
        .or_else(|| recorded.as_ref().and_then(|s| s.pool_dir.clone()))
        .context("no pool recorded for this session; pass --pool")?;
    let committee_dir = a
        .committee
        .or_else(|| recorded.as_ref().and_then(|s| s.committee_dir.clone()))
        .context("no committee recorded for this session; pass --committee")?;
    let pool = Arc::new(load_pool_with_cache(&pool_dir, None)?);
    let base = Arc::new(Pretrained::load(&committee_dir)?);
    let session = store.open(id, pool, base)?;
    let model = session.session().finalize()?;
    let report = build_report(&model, a.top_k)?;
    emit(render_report(&report, a.format, &SourceTypeNames::default())?.trim_end())
}

/// Writes `text` to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
