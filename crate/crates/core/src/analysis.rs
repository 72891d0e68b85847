//! Bias audit of a finalized model: rank the test pool by p(Q2), count how
//! the head of the ranking splits across source types, and average p(Q2)
//! per type.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::active_loop::{LoopConfig, PersonalizedModel};
use crate::error::{Error, Result};
use crate::types::{Quadrant, SourceType, SourceTypeNames};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedExcerpt {
    pub excerpt_id: String,
    pub source_type: SourceType,
    pub p_q2: f64,
}

/// Per-type counts among the first `effective_k` ranked excerpts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKCounts {
    pub requested_k: usize,
    pub effective_k: usize,
    /// Set when the ranking was shorter than `requested_k`.
    pub clamped: bool,
    pub counts: BTreeMap<SourceType, usize>,
    pub share: BTreeMap<SourceType, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub schema_version: u32,
    pub session_id: String,
    pub top_k: usize,
    pub effective_k: usize,
    pub clamped: bool,
    pub ranking: Vec<RankedExcerpt>,
    pub counts: BTreeMap<SourceType, usize>,
    pub share: BTreeMap<SourceType, f64>,
    /// `None` when the test pool holds no excerpt of that type.
    pub mean_q2: BTreeMap<SourceType, Option<f64>>,
    pub n_annotations: usize,
    pub config: LoopConfig,
}

impl BiasReport {
    fn swap_keys<V: Copy>(m: &BTreeMap<SourceType, V>) -> BTreeMap<SourceType, V> {
        m.iter().map(|(k, v)| (k.swapped(), *v)).collect()
    }

    pub fn share_of(&self, t: SourceType) -> f64 {
        self.share.get(&t).copied().unwrap_or(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported report schema version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }

    /// The same report with the two source types exchanged.
    pub fn type_swapped(&self) -> Self {
        Self {
            ranking: self
                .ranking
                .iter()
                .map(|r| RankedExcerpt {
                    source_type: r.source_type.swapped(),
                    ..r.clone()
                })
                .collect(),
            counts: Self::swap_keys(&self.counts),
            share: Self::swap_keys(&self.share),
            mean_q2: Self::swap_keys(&self.mean_q2),
            ..self.clone()
        }
    }
}

/// Sorts scored excerpts by `p_q2` descending, ties by id ascending.
pub fn sort_ranking(mut scored: Vec<RankedExcerpt>) -> Result<Vec<RankedExcerpt>> {
    if let Some(bad) = scored.iter().find(|r| !(0.0..=1.0).contains(&r.p_q2)) {
        return Err(Error::validation(format!(
            "p_q2 {} for `{}` is not a probability",
            bad.p_q2, bad.excerpt_id
        )));
    }
    scored.sort_by(|a, b| b.p_q2.total_cmp(&a.p_q2).then_with(|| a.excerpt_id.cmp(&b.excerpt_id)));
    Ok(scored)
}

/// Scores every test excerpt with the committee's p(Q2) and sorts.
pub fn rank_q2(model: &PersonalizedModel) -> Result<Vec<RankedExcerpt>> {
    if model.test_pool.is_empty() {
        return Err(Error::validation("cannot rank an empty test pool"));
    }
    let q2 = Quadrant::Q2.index();
    let scored = model
        .test_pool
        .iter()
        .map(|e| {
            Ok(RankedExcerpt {
                excerpt_id: e.id.clone(),
                source_type: e.source_type,
                p_q2: model.committee.proba(&e.features)?[q2],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranking(scored)
}

pub fn top_k_counts(ranking: &[RankedExcerpt], top_k: usize) -> Result<TopKCounts> {
    if top_k == 0 {
        return Err(Error::validation("top_k must be at least 1"));
    }
    let effective_k = top_k.min(ranking.len());
    let clamped = effective_k < top_k;
    if clamped {
        tracing::warn!(top_k, effective_k, "top_k exceeds the ranking length; clamped");
    }
    let mut counts: BTreeMap<SourceType, usize> = SourceType::ALL.iter().map(|&t| (t, 0)).collect();
    for r in &ranking[..effective_k] {
        *counts.entry(r.source_type).or_default() += 1;
    }
    let share = counts
        .iter()
        .map(|(&t, &c)| {
            let s = if effective_k == 0 {
                0.0
            } else {
                c as f64 / effective_k as f64
            };
            (t, s)
        })
        .collect();
    Ok(TopKCounts {
        requested_k: top_k,
        effective_k,
        clamped,
        counts,
        share,
    })
}

pub fn mean_q2_by_type(ranking: &[RankedExcerpt]) -> BTreeMap<SourceType, Option<f64>> {
    SourceType::ALL
        .iter()
        .map(|&t| {
            let ps: Vec<f64> = ranking.iter().filter(|r| r.source_type == t).map(|r| r.p_q2).collect();
            let mean = (!ps.is_empty()).then(|| ps.iter().sum::<f64>() / ps.len() as f64);
            (t, mean)
        })
        .collect()
}

pub fn build_report(model: &PersonalizedModel, top_k: usize) -> Result<BiasReport> {
    let ranking = rank_q2(model)?;
    let head = top_k_counts(&ranking, top_k)?;
    Ok(BiasReport {
        schema_version: REPORT_SCHEMA_VERSION,
        session_id: model.session_id.clone(),
        top_k,
        effective_k: head.effective_k,
        clamped: head.clamped,
        mean_q2: mean_q2_by_type(&ranking),
        counts: head.counts,
        share: head.share,
        n_annotations: model.annotations.len(),
        config: model.config,
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "table" | "text" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            other => Err(Error::validation(format!(
                "unknown report format `{other}` (expected json, table or csv)"
            ))),
        }
    }
}

pub fn render_report(report: &BiasReport, format: ReportFormat, names: &SourceTypeNames) -> Result<String> {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Table => Ok(render_table(std::slice::from_ref(report), names)),
        ReportFormat::Csv => ranking_to_csv(&report.ranking),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.0}%", v * 100.0))
}

/// One row per session: top-K shares and p_avg(Q2) for each source type.
pub fn render_table(reports: &[BiasReport], names: &SourceTypeNames) -> String {
    let [a, b] = SourceType::ALL;
    let (na, nb) = (names.name(a), names.name(b));
    let k_label = match reports.iter().map(|r| r.top_k).min() {
        Some(lo) if reports.iter().all(|r| r.top_k == lo) => format!("Top {lo}"),
        _ => "Top K".to_string(),
    };
    let header = [
        "Session".to_string(),
        format!("{k_label} {na}"),
        format!("{k_label} {nb}"),
        format!("p_avg {na}"),
        format!("p_avg {nb}"),
    ];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.session_id.clone(),
                pct(Some(r.share_of(a))),
                pct(Some(r.share_of(b))),
                pct(r.mean_q2.get(&a).copied().flatten()),
                pct(r.mean_q2.get(&b).copied().flatten()),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "| {} |", parts.join(" | "));
    };
    line(&header, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for r in &rows {
        line(r, &mut out);
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    rank: usize,
    excerpt_id: String,
    source_type: SourceType,
    p_q2: f64,
}

pub fn ranking_to_csv(ranking: &[RankedExcerpt]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, r) in ranking.iter().enumerate() {
        w.serialize(CsvRow {
            rank: i + 1,
            excerpt_id: r.excerpt_id.clone(),
            source_type: r.source_type,
            p_q2: r.p_q2,
        })
        .map_err(|e| Error::validation(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::validation(e.to_string()))
}

pub fn ranking_from_csv(text: &str) -> Result<Vec<RankedExcerpt>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| Error::validation(format!("csv row {}: {e}", i + 2)))?;
            if row.rank != i + 1 {
                return Err(Error::validation(format!("csv row {} has rank {}", i + 2, row.rank)));
            }
            Ok(RankedExcerpt {
                excerpt_id: row.excerpt_id,
                source_type: row.source_type,
                p_q2: row.p_q2,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ranked(id: &str, t: SourceType, p: f64) -> RankedExcerpt {
        RankedExcerpt {
            excerpt_id: id.into(),
            source_type: t,
            p_q2: p,
        }
    }

    fn random_scores(seed: u64, n: usize) -> Vec<RankedExcerpt> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                // Coarse grid so ties occur.
                let p = rng.random_range(0..20) as f64 / 20.0;
                ranked(&format!("x{i:03}"), SourceType::ALL[rng.random_range(0..2)], p)
            })
            .collect()
    }

    fn report_from(ranking: Vec<RankedExcerpt>, k: usize) -> BiasReport {
        let head = top_k_counts(&ranking, k).unwrap();
        BiasReport {
            schema_version: REPORT_SCHEMA_VERSION,
            session_id: "s".into(),
            top_k: k,
            effective_k: head.effective_k,
            clamped: head.clamped,
            mean_q2: mean_q2_by_type(&ranking),
            counts: head.counts,
            share: head.share,
            n_annotations: 30,
            config: LoopConfig::default(),
            ranking,
        }
    }

    #[test]
    fn uniform_scores_rank_by_id() {
        let scored = vec![
            ranked("c", SourceType::TypeA, 0.25),
            ranked("a", SourceType::TypeB, 0.25),
            ranked("b", SourceType::TypeA, 0.25),
        ];
        let ids: Vec<String> = sort_ranking(scored)
            .unwrap()
            .into_iter()
            .map(|r| r.excerpt_id)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn sort_matches_insertion_oracle() {
        for seed in 0..30 {
            let scored = random_scores(seed, 70);
            let got = sort_ranking(scored.clone()).unwrap();
            let mut oracle: Vec<RankedExcerpt> = Vec::new();
            for r in scored {
                let pos = oracle
                    .iter()
                    .position(|o| r.p_q2 > o.p_q2 || (r.p_q2 == o.p_q2 && r.excerpt_id < o.excerpt_id))
                    .unwrap_or(oracle.len());
                oracle.insert(pos, r);
            }
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn table_one_shape_shares() {
        let mut ranking: Vec<RankedExcerpt> = (0..9)
            .map(|i| ranked(&format!("b{i}"), SourceType::TypeB, 0.9 - i as f64 * 0.01))
            .collect();
        ranking.push(ranked("a0", SourceType::TypeA, 0.5));
        ranking.push(ranked("a1", SourceType::TypeA, 0.1));
        let head = top_k_counts(&ranking, 10).unwrap();
        assert_eq!(head.counts[&SourceType::TypeA], 1);
        assert_eq!(head.counts[&SourceType::TypeB], 9);
        assert_eq!(head.share[&SourceType::TypeA], 0.1);
        assert_eq!(head.share[&SourceType::TypeB], 0.9);
        assert!(!head.clamped);
    }

    #[test]
    fn single_type_and_clamping() {
        let ranking: Vec<RankedExcerpt> = (0..4)
            .map(|i| ranked(&format!("a{i}"), SourceType::TypeA, 0.5))
            .collect();
        let head = top_k_counts(&ranking, 10).unwrap();
        assert!(head.clamped);
        assert_eq!(head.effective_k, 4);
        assert_eq!(head.share[&SourceType::TypeA], 1.0);
        assert_eq!(head.counts[&SourceType::TypeB], 0);
        let means = mean_q2_by_type(&ranking);
        assert_eq!(means[&SourceType::TypeA], Some(0.5));
        assert_eq!(means[&SourceType::TypeB], None);
        assert!(top_k_counts(&ranking, 0).is_err());
    }

    #[test]
    fn counts_and_means_match_brute_force() {
        for seed in 0..30 {
            let ranking = sort_ranking(random_scores(seed, 50)).unwrap();
            let k = 1 + seed as usize % 15;
            let head = top_k_counts(&ranking, k).unwrap();
            for t in SourceType::ALL {
                let mut c = 0;
                for r in ranking.iter().take(k) {
                    if r.source_type == t {
                        c += 1;
                    }
                }
                assert_eq!(head.counts[&t], c);
                assert_eq!(head.share[&t] * k as f64, c as f64);
                let (mut s, mut n) = (0.0, 0);
                for r in &ranking {
                    if r.source_type == t {
                        s += r.p_q2;
                        n += 1;
                    }
                }
                let m = mean_q2_by_type(&ranking)[&t].unwrap();
                assert!((m - s / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_probability_rejected() {
        assert!(sort_ranking(vec![ranked("a", SourceType::TypeA, 1.5)]).is_err());
        assert!(sort_ranking(vec![ranked("a", SourceType::TypeA, f64::NAN)]).is_err());
    }

    #[test]
    fn json_and_csv_round_trip() {
        let report = report_from(sort_ranking(random_scores(9, 70)).unwrap(), 10);
        let json = report.to_json().unwrap();
        assert_eq!(BiasReport::from_json(&json).unwrap(), report);
        let csv = render_report(&report, ReportFormat::Csv, &SourceTypeNames::default()).unwrap();
        assert_eq!(ranking_from_csv(&csv).unwrap(), report.ranking);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut odd: Vec<RankedExcerpt> = (0..20)
            .map(|i| ranked(&format!("id,{i}"), SourceType::TypeB, rng.random::<f64>()))
            .collect();
        odd.shuffle(&mut rng);
        assert_eq!(ranking_from_csv(&ranking_to_csv(&odd).unwrap()).unwrap(), odd);
    }

    #[test]
    fn unknown_format_rejected() {
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!("JSON".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
    }

    #[test]
    fn table_has_one_row_per_session() {
        let names = SourceTypeNames::default();
        let mut reports = Vec::new();
        for (i, name) in ["left", "center", "right"].iter().enumerate() {
            let mut r = report_from(sort_ranking(random_scores(i as u64, 70)).unwrap(), 10);
            r.session_id = name.to_string();
            reports.push(r);
        }
        let t = render_table(&reports, &names);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].contains("Top 10 FARC-songs") && lines[0].contains("p_avg AUC-songs"));
        for (line, name) in lines[2..].iter().zip(["left", "center", "right"]) {
            assert!(line.starts_with(&format!("| {name}")));
        }
    }

    #[test]
    fn swapping_twice_is_identity() {
        let report = report_from(sort_ranking(random_scores(4, 30)).unwrap(), 10);
        let s = report.type_swapped();
        assert_eq!(s.share_of(SourceType::TypeA), report.share_of(SourceType::TypeB));
        assert_eq!(s.type_swapped(), report);
    }

    proptest! {
        #[test]
        fn raising_type_b_never_lowers_its_count(
            seed in 0u64..10_000,
            delta in 0.001f64..0.5,
            k in 1usize..30,
        ) {
            let base = sort_ranking(random_scores(seed, 40)).unwrap();
            let raised: Vec<RankedExcerpt> = base
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    if r.source_type == SourceType::TypeB {
                        r.p_q2 = (r.p_q2 + delta).min(1.0);
                    }
                    r
                })
                .collect();
            let raised = sort_ranking(raised).unwrap();
            let before = top_k_counts(&base, k).unwrap().counts[&SourceType::TypeB];
            let after = top_k_counts(&raised, k).unwrap().counts[&SourceType::TypeB];
            prop_assert!(after >= before);
        }

        #[test]
        fn ranking_is_sorted_permutation(seed in 0u64..10_000, n in 1usize..80) {
            let scored = random_scores(seed, n);
            let ranking = sort_ranking(scored.clone()).unwrap();
            prop_assert_eq!(ranking.len(), n);
            prop_assert!(ranking.windows(2).all(|w| w[0].p_q2 >= w[1].p_q2));
            let mut a: Vec<&str> = scored.iter().map(|r| r.excerpt_id.as_str()).collect();
            let mut b: Vec<&str> = ranking.iter().map(|r| r.excerpt_id.as_str()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let head = top_k_counts(&ranking, 10).unwrap();
            prop_assert_eq!(head.counts.values().sum::<usize>(), n.min(10));
            prop_assert!((head.share.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
