//! End-to-end personalization runs driven by a simulated annotator.

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active_loop::{LabelSubmission, LoopConfig, Session, SessionSources, SessionStore, UserProfile, VoteIntent};
use crate::analysis::{build_report, BiasReport};
use crate::committee::{PretrainConfig, Pretrained};
use crate::error::{Error, Result};
use crate::oracle::{Alignment, OracleProfile};
use crate::synth::{swap_types, synthetic_pool, synthetic_records, SynthConfig};
use crate::types::{Annotation, Excerpt, SourceType};

/// Fixed clock for simulated sessions so their logs are reproducible.
fn sim_clock(step: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_600_000_000 + step, 0)
        .single()
        .expect("valid timestamp")
}

fn simulated_user(profile: &OracleProfile) -> UserProfile {
    UserProfile {
        display_name: format!("simulated-{}", profile.name),
        political_view: match profile.alignment {
            Alignment::Left => "left",
            Alignment::Center => "center",
            Alignment::Right => "right",
        }
        .to_string(),
        vote_intent: match profile.alignment {
            Alignment::Left => VoteIntent::LeftCandidate,
            Alignment::Center => VoteIntent::Blank,
            Alignment::Right => VoteIntent::RightCandidate,
        },
    }
}

pub fn session_id_for(profile: &OracleProfile, seed: u64) -> String {
    format!("sim-{}-seed{seed}", profile.name)
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub report: BiasReport,
    pub annotations: Vec<Annotation>,
    pub batches: Vec<Vec<String>>,
}

/// Where to persist a simulated session, if anywhere.
#[derive(Debug, Clone, Copy)]
pub struct Persist<'a> {
    pub store: &'a SessionStore,
    pub sources: Option<&'a SessionSources>,
}

/// Runs the whole loop with `profile` answering every query.
///
/// The oracle's label stream is keyed by `config.seed`, so one seed fixes
/// both the initial draw and the simulated answers.
pub fn run_simulation(
    pool: Arc<Vec<Excerpt>>,
    base: Arc<Pretrained>,
    profile: &OracleProfile,
    config: LoopConfig,
    top_k: usize,
    persist: Option<Persist<'_>>,
) -> Result<SimulationRun> {
    profile.validate()?;
    let oracle = profile.with_seed(config.seed);
    let session_id = session_id_for(profile, config.seed);
    let session = Session::new(
        session_id,
        simulated_user(profile),
        "pool",
        Arc::clone(&pool),
        base,
        config,
    )?;

    let answer = |session: &Session, batch: &[String]| -> Result<Vec<LabelSubmission>> {
        batch
            .iter()
            .map(|id| {
                let e = session.excerpt(id).ok_or_else(|| Error::NotFound {
                    kind: "excerpt",
                    id: id.clone(),
                })?;
                Ok(LabelSubmission::new(id.clone(), oracle.label(e)?))
            })
            .collect()
    };

    let mut batches = Vec::new();
    let model = match persist {
        Some(p) => {
            let mut ps = p.store.create(session, p.sources.cloned(), sim_clock(0))?;
            for step in 1..=config.max_iterations as i64 {
                let batch = ps.issue_batch()?;
                let labels = answer(ps.session(), &batch)?;
                ps.submit(&labels, sim_clock(step))?;
                batches.push(batch);
            }
            ps.finalize(sim_clock(config.max_iterations as i64 + 1))?
        }
        None => {
            let mut session = session;
            for step in 1..=config.max_iterations as i64 {
                let batch = session.issue_batch()?;
                let labels = answer(&session, &batch)?;
                session.submit_annotations(&labels, sim_clock(step))?;
                batches.push(batch);
            }
            session.finalize()?
        }
    };
    let report = build_report(&model, top_k)?;
    Ok(SimulationRun {
        report,
        annotations: model.annotations,
        batches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ShareStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub type_a_share: f64,
    pub type_b_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub profile: String,
    pub top_k: usize,
    pub seeds: Vec<u64>,
    pub type_a_share: ShareStats,
    pub type_b_share: ShareStats,
    /// Mean over seeds of `|share(A) - share(B)|`.
    pub mean_abs_share_diff: f64,
    pub per_seed: Vec<SeedOutcome>,
}

pub fn aggregate_reports(profile: &str, top_k: usize, reports: &[(u64, BiasReport)]) -> Result<SweepAggregate> {
    if reports.is_empty() {
        return Err(Error::validation("cannot aggregate an empty sweep"));
    }
    let per_seed: Vec<SeedOutcome> = reports
        .iter()
        .map(|(seed, r)| SeedOutcome {
            seed: *seed,
            type_a_share: r.share_of(SourceType::TypeA),
            type_b_share: r.share_of(SourceType::TypeB),
        })
        .collect();
    let a: Vec<f64> = per_seed.iter().map(|s| s.type_a_share).collect();
    let b: Vec<f64> = per_seed.iter().map(|s| s.type_b_share).collect();
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    Ok(SweepAggregate {
        profile: profile.to_string(),
        top_k,
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        type_a_share: ShareStats::of(&a).expect("non-empty"),
        type_b_share: ShareStats::of(&b).expect("non-empty"),
        mean_abs_share_diff: diff,
        per_seed,
    })
}

/// Runs one simulation per seed, in parallel, returning reports in seed order.
pub fn sweep(
    pool: Arc<Vec<Excerpt>>,
    base: Arc<Pretrained>,
    profile: &OracleProfile,
    config: LoopConfig,
    seeds: &[u64],
    top_k: usize,
) -> Result<(Vec<(u64, BiasReport)>, SweepAggregate)> {
    let reports = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LoopConfig { seed, ..config };
            run_simulation(Arc::clone(&pool), Arc::clone(&base), profile, cfg, top_k, None).map(|r| (seed, r.report))
        })
        .collect::<Result<Vec<_>>>()?;
    let agg = aggregate_reports(&profile.name, top_k, &reports)?;
    Ok((reports, agg))
}

/// Outcome of running `profile` on `pool` and its mirror on the swapped pool.
#[derive(Debug, Clone)]
pub struct MirrorCheck {
    pub original: BiasReport,
    pub mirrored: BiasReport,
}

impl MirrorCheck {
    /// True when the mirrored run equals the original with types exchanged.
    pub fn is_symmetric(&self) -> bool {
        let mut expect = self.original.type_swapped();
        expect.session_id.clone_from(&self.mirrored.session_id);
        expect == self.mirrored
    }
}

/// Runs `profile` on `pool` and `mirror` on the type-swapped pool with the
/// same seed. `mirror` is normally `profile.mirrored()` or its named twin.
pub fn mirror_check(
    pool: &[Excerpt],
    base: Arc<Pretrained>,
    profile: &OracleProfile,
    mirror: &OracleProfile,
    config: LoopConfig,
    top_k: usize,
) -> Result<MirrorCheck> {
    let original = run_simulation(Arc::new(pool.to_vec()), Arc::clone(&base), profile, config, top_k, None)?.report;
    let mirrored = run_simulation(Arc::new(swap_types(pool)), base, mirror, config, top_k, None)?.report;
    Ok(MirrorCheck { original, mirrored })
}

/// Synthetic pool plus a committee pretrained on synthetic ratings.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub pool: Arc<Vec<Excerpt>>,
    pub pretrained: Arc<Pretrained>,
}

impl SyntheticScenario {
    pub fn build(synth: &SynthConfig, pretrain: &PretrainConfig) -> Result<Self> {
        let pool = synthetic_pool(synth)?;
        let records = synthetic_records(synth)?;
        let pretrained = Pretrained::from_records("synthetic", &records, pretrain)?;
        Ok(Self {
            pool: Arc::new(pool),
            pretrained: Arc::new(pretrained),
        })
    }
}

/// Default output location names used by the CLI.
pub fn report_file_name(profile: &OracleProfile, seed: u64) -> PathBuf {
    PathBuf::from(format!("report-{}-seed{seed}.json", profile.name))
}
