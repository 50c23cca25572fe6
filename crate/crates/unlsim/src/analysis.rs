//! Batch running and reporting: severity presets, seeded sweeps, aggregate
//! statistics matching the plotted columns, cross-variant ratios, and
//! CSV/JSON emission.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{run_case, CaseResult, ConfigError, Mode, ScenarioConfig};
use crate::overlay::Variant;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("unknown severity '{0}'")]
    UnknownSeverity(String),
    #[error("batches are not comparable: {0}")]
    NotComparable(String),
    #[error("csv parse error: {0}")]
    CsvParse(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// The five severity bundles, in increasing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Ideal,
    RealWorld,
    Mild,
    ModerateSevere,
    VerySevere,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::Ideal,
        Severity::RealWorld,
        Severity::Mild,
        Severity::ModerateSevere,
        Severity::VerySevere,
    ];

    pub fn number(&self) -> u8 {
        match self {
            Severity::Ideal => 0,
            Severity::RealWorld => 1,
            Severity::Mild => 2,
            Severity::ModerateSevere => 3,
            Severity::VerySevere => 4,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Severity::Ideal => "Ideal",
            Severity::RealWorld => "RealWorld",
            Severity::Mild => "Mild",
            Severity::ModerateSevere => "ModerateSevere",
            Severity::VerySevere => "VerySevere",
        }
    }
}

impl std::str::FromStr for Severity {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ideal" | "0" => Ok(Severity::Ideal),
            "realworld" | "real" | "1" => Ok(Severity::RealWorld),
            "mild" | "2" => Ok(Severity::Mild),
            "moderatesevere" | "moderate" | "3" => Ok(Severity::ModerateSevere),
            "verysevere" | "severe" | "4" => Ok(Severity::VerySevere),
            other => Err(AnalysisError::UnknownSeverity(other.to_string())),
        }
    }
}

/// One severity row: malicious share, the network-issue latency factor
/// range, affected link/node shares, and the required network consensus
/// percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityPreset {
    pub name: Severity,
    pub pct_malicious: f64,
    pub min_lf: f64,
    pub max_lf: f64,
    pub pct_links: f64,
    pub pct_nodes: f64,
    pub ncp: f64,
}

/// Exact preset table.
pub fn severity_preset(name: Severity) -> SeverityPreset {
    match name {
        Severity::Ideal => SeverityPreset {
            name,
            pct_malicious: 0.0,
            min_lf: 0.0,
            max_lf: 0.0,
            pct_links: 0.0,
            pct_nodes: 100.0,
            ncp: 100.0,
        },
        Severity::RealWorld => SeverityPreset {
            name,
            pct_malicious: 20.0,
            min_lf: 1.5,
            max_lf: 2.0,
            pct_links: 25.0,
            pct_nodes: 100.0,
            ncp: 80.0,
        },
        Severity::Mild => SeverityPreset {
            name,
            pct_malicious: 40.0,
            min_lf: 3.0,
            max_lf: 3.5,
            pct_links: 50.0,
            pct_nodes: 100.0,
            ncp: 60.0,
        },
        Severity::ModerateSevere => SeverityPreset {
            name,
            pct_malicious: 60.0,
            min_lf: 4.5,
            max_lf: 5.0,
            pct_links: 75.0,
            pct_nodes: 100.0,
            ncp: 40.0,
        },
        Severity::VerySevere => SeverityPreset {
            name,
            pct_malicious: 80.0,
            min_lf: 6.5,
            max_lf: 7.0,
            pct_links: 75.0,
            pct_nodes: 100.0,
            ncp: 20.0,
        },
    }
}

/// Writes a preset's fields into a scenario. `baseline` keeps the network
/// issues and NCP but zeroes the malicious share.
pub fn apply_severity(config: &mut ScenarioConfig, preset: &SeverityPreset, baseline: bool) {
    config.percentage_malicious = if baseline { 0.0 } else { preset.pct_malicious };
    config.min_latency_factor_ni = preset.min_lf;
    config.max_latency_factor_ni = preset.max_lf;
    config.percent_links_affected_by_ni = preset.pct_links;
    config.percent_nodes_affected_by_ni = preset.pct_nodes;
    config.network_consensus_percent = preset.ncp;
}

/// Aggregates over one batch, one field per plotted column.
/// Time statistics cover successful cases only; distance statistics cover
/// cases where every genuine node was reachable; the rest cover all cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub cases: u64,
    pub avg_time: Option<f64>,
    pub sd_time: Option<f64>,
    /// Percentage of successful cases.
    pub psc: f64,
    pub avg_sent: f64,
    pub sd_sent: f64,
    pub avg_recvd: f64,
    pub sd_recvd: f64,
    pub avg_agn: f64,
    pub sd_agn: f64,
    pub avg_pct_malicious: f64,
    pub avg_dist: Option<f64>,
    pub sd_dist: Option<f64>,
    pub max_dist: Option<u32>,
    /// Percentage of Success₂ cases (mode 8 only).
    pub ps2c: Option<f64>,
    pub all_failed: bool,
}

/// Streaming mean/SD accumulator (population SD).
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    pub fn sd(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.m2 / self.n as f64).sqrt())
    }
}

/// Folds case results into [`BatchStats`], in case order.
pub fn aggregate(mode: Mode, results: &[CaseResult]) -> BatchStats {
    let mut time = Accumulator::default();
    let mut sent = Accumulator::default();
    let mut recvd = Accumulator::default();
    let mut agn = Accumulator::default();
    let mut pct_mal = Accumulator::default();
    let mut dist = Accumulator::default();
    let mut max_dist: Option<u32> = None;
    let mut successes = 0u64;
    let mut successes2 = 0u64;

    for r in results {
        if r.success {
            successes += 1;
            time.push(r.elapsed_ms);
        }
        if r.success2 {
            successes2 += 1;
        }
        sent.push(r.sent_msgs as f64);
        recvd.push(r.recvd_msgs as f64);
        agn.push(r.actual_genuine_nodes as f64);
        pct_mal.push(r.pct_malicious_realized);
        if let Some(d) = r.max_shortest_dist {
            dist.push(d as f64);
            max_dist = Some(max_dist.map_or(d, |m| m.max(d)));
        }
    }

    let cases = results.len() as u64;
    BatchStats {
        cases,
        avg_time: time.mean(),
        sd_time: time.sd(),
        psc: 100.0 * successes as f64 / cases.max(1) as f64,
        avg_sent: sent.mean().unwrap_or(0.0),
        sd_sent: sent.sd().unwrap_or(0.0),
        avg_recvd: recvd.mean().unwrap_or(0.0),
        sd_recvd: recvd.sd().unwrap_or(0.0),
        avg_agn: agn.mean().unwrap_or(0.0),
        sd_agn: agn.sd().unwrap_or(0.0),
        avg_pct_malicious: pct_mal.mean().unwrap_or(0.0),
        avg_dist: dist.mean(),
        sd_dist: dist.sd(),
        max_dist,
        ps2c: (mode == Mode::ShortestDistance)
            .then(|| 100.0 * successes2 as f64 / cases.max(1) as f64),
        all_failed: successes == 0,
    }
}

/// Number of seeded cases a batch of this config runs.
pub fn seed_max_for(config: &ScenarioConfig) -> u64 {
    config.seed_max.unwrap_or_else(|| config.mode.default_seed_max())
}

/// Runs `seed_max` cases with seeds `base_seed..base_seed+seed_max` and
/// aggregates them. Cases are independent; aggregation reduces in case
/// order, so the result is deterministic regardless of worker count.
pub fn run_batch(config: &ScenarioConfig, base_seed: u64) -> Result<BatchStats, AnalysisError> {
    let (stats, _) = run_batch_with_cases(config, base_seed, false)?;
    Ok(stats)
}

pub fn run_batch_with_cases(
    config: &ScenarioConfig,
    base_seed: u64,
    keep_cases: bool,
) -> Result<(BatchStats, Vec<CaseResult>), AnalysisError> {
    config.validate()?;
    let seed_max = seed_max_for(config);
    let results = run_cases(config, base_seed, seed_max);
    let stats = aggregate(config.mode, &results);
    Ok((stats, if keep_cases { results } else { Vec::new() }))
}

#[cfg(feature = "parallel")]
fn run_cases(config: &ScenarioConfig, base_seed: u64, seed_max: u64) -> Vec<CaseResult> {
    use rayon::prelude::*;
    (0..seed_max)
        .into_par_iter()
        .map(|i| run_case(config, base_seed + i).expect("config validated"))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_cases(config: &ScenarioConfig, base_seed: u64, seed_max: u64) -> Vec<CaseResult> {
    (0..seed_max)
        .map(|i| run_case(config, base_seed + i).expect("config validated"))
        .collect()
}

/// One labelled batch: the configuration it ran and its aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRun {
    pub label: String,
    pub config: ScenarioConfig,
    pub base_seed: u64,
    pub stats: BatchStats,
}

pub fn run_labelled(label: impl Into<String>, config: ScenarioConfig, base_seed: u64) -> Result<BatchRun, AnalysisError> {
    let stats = run_batch(&config, base_seed)?;
    Ok(BatchRun {
        label: label.into(),
        config,
        base_seed,
        stats,
    })
}

/// Cross-variant ratios against a reference batch (conventionally SimC).
/// `None` marks an undefined ratio (zero denominator or an all-failed side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reference: String,
    pub subject: String,
    /// reference avg time / subject avg time.
    pub speedup: Option<f64>,
    /// subject PSC / reference PSC.
    pub success_ratio: Option<f64>,
    /// subject avg sent / reference avg sent.
    pub sent_ratio: Option<f64>,
    /// subject avg received / reference avg received.
    pub recvd_ratio: Option<f64>,
    /// subject PS2C / reference PS2C (mode 8).
    pub hop3_ratio: Option<f64>,
}

/// Compares two batches that ran the same scenario apart from the variant.
pub fn compare(reference: &BatchRun, subject: &BatchRun) -> Result<ComparisonReport, AnalysisError> {
    let mut ref_cfg = reference.config.clone();
    let mut sub_cfg = subject.config.clone();
    ref_cfg.variant = Variant::SimC;
    sub_cfg.variant = Variant::SimC;
    if ref_cfg != sub_cfg || reference.base_seed != subject.base_seed {
        return Err(AnalysisError::NotComparable(format!(
            "'{}' vs '{}': configurations differ beyond the variant",
            reference.label, subject.label
        )));
    }
    let a = &reference.stats;
    let b = &subject.stats;
    let defined = |x: Option<f64>, failed: bool| x.filter(|_| !failed);
    let speedup = match (defined(a.avg_time, a.all_failed), defined(b.avg_time, b.all_failed)) {
        (Some(ta), Some(tb)) if tb > 0.0 => Some(ta / tb),
        _ => None,
    };
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    Ok(ComparisonReport {
        reference: reference.label.clone(),
        subject: subject.label.clone(),
        speedup,
        success_ratio: ratio(b.psc, a.psc),
        sent_ratio: ratio(b.avg_sent, a.avg_sent),
        recvd_ratio: ratio(b.avg_recvd, a.avg_recvd),
        hop3_ratio: match (a.ps2c, b.ps2c) {
            (Some(pa), Some(pb)) if pa > 0.0 => Some(pb / pa),
            _ => None,
        },
    })
}

pub const CSV_HEADER: &str =
    "AvTime,PSC,AvSM,AvRM,AvAGN,SDTime,SDSM,SDRM,SDAGN,AvPMN,AvD,SDD,MD,PS2C,all_failed";

fn csv_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "-1".to_string(),
    }
}

/// One stats row in the plot-column order. Undefined aggregates carry the
/// documented −1 sentinel.
pub fn emit_csv_row(stats: &BatchStats) -> String {
    let mut row = String::new();
    let _ = write!(
        row,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        csv_value(stats.avg_time),
        stats.psc,
        stats.avg_sent,
        stats.avg_recvd,
        stats.avg_agn,
        csv_value(stats.sd_time),
        stats.sd_sent,
        stats.sd_recvd,
        stats.sd_agn,
        stats.avg_pct_malicious,
        csv_value(stats.avg_dist),
        csv_value(stats.sd_dist),
        stats.max_dist.map_or(-1i64, |d| d as i64),
        csv_value(stats.ps2c),
        stats.all_failed,
    );
    row
}

/// Header plus one row per batch, UTF-8 with LF endings.
pub fn emit_csv(batches: &[&BatchStats]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for stats in batches {
        out.push_str(&emit_csv_row(stats));
        out.push('\n');
    }
    out
}

/// Parses [`emit_csv`] output back (case counts are not part of the format
/// and come back as zero).
pub fn parse_csv(text: &str) -> Result<Vec<BatchStats>, AnalysisError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| AnalysisError::CsvParse("empty input".into()))?;
    if header != CSV_HEADER {
        return Err(AnalysisError::CsvParse(format!("unexpected header '{header}'")));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(AnalysisError::CsvParse(format!(
                "line {}: expected 15 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64, AnalysisError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| AnalysisError::CsvParse(format!("line {}: field {i}: {e}", lineno + 2)))
        };
        let opt = |i: usize| -> Result<Option<f64>, AnalysisError> {
            let v = num(i)?;
            Ok((v >= 0.0).then_some(v))
        };
        out.push(BatchStats {
            cases: 0,
            avg_time: opt(0)?,
            psc: num(1)?,
            avg_sent: num(2)?,
            avg_recvd: num(3)?,
            avg_agn: num(4)?,
            sd_time: opt(5)?,
            sd_sent: num(6)?,
            sd_recvd: num(7)?,
            sd_agn: num(8)?,
            avg_pct_malicious: num(9)?,
            avg_dist: opt(10)?,
            sd_dist: opt(11)?,
            max_dist: {
                let v = num(12)?;
                (v >= 0.0).then_some(v as u32)
            },
            ps2c: opt(13)?,
            all_failed: fields[14] == "true",
        });
    }
    Ok(out)
}

/// One case as a JSON line: every result field plus the config hash and
/// seed.
#[derive(Debug, Serialize, Deserialize)]
pub struct CaseRecord {
    pub seed: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub result: CaseResult,
}

pub fn emit_case_records(config: &ScenarioConfig, base_seed: u64, results: &[CaseResult]) -> String {
    let hash = config.config_hash();
    let mut out = String::new();
    for (i, result) in results.iter().enumerate() {
        let record = CaseRecord {
            seed: base_seed + i as u64,
            config_hash: hash.clone(),
            result: result.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("serializable"));
        out.push('\n');
    }
    out
}

/// The default experiment grid mirroring the plotted figures: a severity
/// sweep with baseline companions for modes 1 and 2, a malicious-share
/// sweep with NCP = 100 − pm, eclipse sweeps for modes 5/6 and mode 8, and
/// a link-latency-factor grid for mode 1.
pub fn default_sweep_cells(mode: Mode) -> Vec<(String, ScenarioConfig)> {
    let mut cells = Vec::new();
    let variants = [Variant::SimC, Variant::SimRM, Variant::SimK];
    match mode {
        Mode::NetworkConsensus | Mode::NetworkPropagation => {
            for severity in Severity::ALL {
                let preset = severity_preset(severity);
                for baseline in [true, false] {
                    for variant in variants {
                        let mut config = ScenarioConfig {
                            variant,
                            mode,
                            ..ScenarioConfig::default()
                        };
                        apply_severity(&mut config, &preset, baseline);
                        let series = if baseline { "baseline" } else { "severity" };
                        cells.push((
                            format!("{}({})[{}][{}]", variant.as_str(), mode.number(), severity.as_str(), series),
                            config,
                        ));
                    }
                }
            }
            // Malicious-share sweep, NCP tied to the genuine share, no NI.
            for pm in [0.0f64, 20.0, 40.0, 60.0, 80.0] {
                for variant in variants {
                    let mut config = ScenarioConfig {
                        variant,
                        mode,
                        percentage_malicious: pm,
                        network_consensus_percent: 100.0 - pm,
                        ..ScenarioConfig::default()
                    };
                    config.min_latency_factor_ni = 0.0;
                    config.max_latency_factor_ni = 0.0;
                    cells.push((
                        format!("{}({})[pm={}]", variant.as_str(), mode.number(), pm),
                        config,
                    ));
                }
            }
        }
        Mode::TargetConsensus | Mode::TargetPropagation => {
            for severity in Severity::ALL {
                let preset = severity_preset(severity);
                for variant in variants {
                    let mut config = ScenarioConfig {
                        variant,
                        mode,
                        ..ScenarioConfig::default()
                    };
                    apply_severity(&mut config, &preset, false);
                    cells.push((
                        format!("{}({})[{}]", variant.as_str(), mode.number(), severity.as_str()),
                        config,
                    ));
                }
            }
        }
        Mode::EclipsedTargetConsensus | Mode::EclipsedTargetPropagation => {
            let preset = severity_preset(Severity::RealWorld);
            for eclipsed in [0.0f64, 5.0, 15.0, 25.0, 35.0] {
                for variant in variants {
                    let mut config = ScenarioConfig {
                        variant,
                        mode,
                        percentage_eclipsed: eclipsed,
                        ..ScenarioConfig::default()
                    };
                    apply_severity(&mut config, &preset, false);
                    cells.push((
                        format!("{}({})[ecl={}]", variant.as_str(), mode.number(), eclipsed),
                        config,
                    ));
                }
            }
        }
        Mode::ShortestDistance => {
            for eclipsed in [0.0f64, 100.0] {
                for variant in variants {
                    let config = ScenarioConfig {
                        variant,
                        mode,
                        percentage_eclipsed: eclipsed,
                        percentage_malicious: if eclipsed == 0.0 { 100.0 * 44.0 / 256.0 } else { 0.0 },
                        is_upper_limit_malicious_applicable: true,
                        ..ScenarioConfig::default()
                    };
                    cells.push((
                        format!("{}(8)[ecl={}]", variant.as_str(), eclipsed),
                        config,
                    ));
                }
            }
        }
    }
    cells
}

/// The {1,2,3} × {1,2,3} link-latency-factor grid for mode-1 comparisons.
/// SimC carries equal factors only.
pub fn llf_grid_cells() -> Vec<(String, ScenarioConfig)> {
    let mut cells = Vec::new();
    for k in [1.0f64, 2.0, 3.0] {
        for l in [1.0f64, 2.0, 3.0] {
            for variant in [Variant::SimC, Variant::SimRM, Variant::SimK] {
                if variant == Variant::SimC && k != l {
                    continue;
                }
                let mut config = ScenarioConfig {
                    variant,
                    mode: Mode::NetworkConsensus,
                    ..ScenarioConfig::default()
                };
                config.latency.unla_llf_max = k;
                config.latency.unlb_llf_max = l;
                cells.push((format!("{}(1)[llf={k},{l}]", variant.as_str()), config));
            }
        }
    }
    cells
}
