//! Pipelines behind each experiment kind and the artifact bundle they write.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::concrete::{bootstrap_noise, load_concrete_csv, power_law_summary, strength_summary, PowerLawSummary, StrengthSummary};
use super::config::{DataSource, ExperimentConfig, ExperimentKind};
use crate::diagnostics::{
    assumption_audit, local_limit_experiment, stability_replicates, tv_distance, weak_convergence_experiment,
    ConvergenceTrace,
};
use crate::error::{Result, ScpError};
use crate::map_model::QoiMap;
use crate::measures::{Measure, SampleSet};
use crate::pushforward::{bin_counts, make_partition, push_samples};
use crate::rng;
use crate::solver::{sample_solution, solve_cells, InputGrid, ScpSolution};

/// Number of solution power laws checked against the strength envelope.
pub const ENVELOPE_DRAWS: usize = 30;

/// Everything produced by one solve.
pub struct SolveOutput {
    pub prior: Measure,
    pub prior_samples: SampleSet,
    pub observed_q: Vec<f64>,
    pub solution: ScpSolution,
    pub solution_samples: SampleSet,
    /// TV between the binned pushforward of the solution samples and the observed histogram.
    pub tv_pushforward_consistency: f64,
}

fn observed_q(cfg: &ExperimentConfig, map: &QoiMap) -> Result<Vec<f64>> {
    match &cfg.data {
        DataSource::Synthetic { tgd } => {
            let m = Measure::new(tgd, &cfg.domain)?;
            push_samples(map, &m.sample(cfg.counts.observed, cfg.seeds.observed)?)
        }
        DataSource::Csv { path, age_range, r_range, bootstrap_count, noise_sd, .. } => {
            let recs = load_concrete_csv(path, *age_range, *r_range)?;
            bootstrap_noise(&recs, *bootstrap_count, *noise_sd, cfg.seeds.observed)
        }
    }
}

/// Solves on the config's prior samples for the given observed outputs.
pub fn solve_with(cfg: &ExperimentConfig, map: &QoiMap, prior: Measure, prior_samples: SampleSet, observed_q: Vec<f64>) -> Result<SolveOutput> {
    let prior_q = push_samples(map, &prior_samples)?;
    let mut all = prior_q;
    all.extend_from_slice(&observed_q);
    let partition = make_partition(&all, cfg.n_bins)?;
    let grid = InputGrid::new(&cfg.domain, cfg.grid.clone())?;
    let solution = solve_cells(&prior_samples, &observed_q, &partition, &grid, map)?;
    let solution_samples = sample_solution(&solution, &prior, cfg.counts.solution, cfg.seeds.solution)?;
    let sol_q = push_samples(map, &solution_samples)?;
    let (counts, _) = bin_counts(&sol_q, &partition);
    let sol_mass: Vec<f64> = counts.iter().map(|c| *c as f64 / sol_q.len() as f64).collect();
    let tv_pushforward_consistency = tv_distance(&sol_mass, &solution.observed.masses())?;
    Ok(SolveOutput { prior, prior_samples, observed_q, solution, solution_samples, tv_pushforward_consistency })
}

/// Full solve pipeline: observed data, prior samples, solution and solution samples.
pub fn solve_pipeline(cfg: &ExperimentConfig) -> Result<SolveOutput> {
    let map = cfg.build_map()?;
    let prior = Measure::new(&cfg.prior, &cfg.domain)?;
    let prior_samples = prior.sample(cfg.counts.prior, cfg.seeds.prior)?;
    let q = observed_q(cfg, &map)?;
    solve_with(cfg, &map, prior, prior_samples, q)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcreteSubset {
    pub age_range: [f64; 2],
    pub strengths: StrengthSummary,
    pub power_laws: PowerLawSummary,
    pub unassigned_mass: f64,
    pub tv_pushforward_consistency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcreteReport {
    pub r_range: [f64; 2],
    pub primary: ConcreteSubset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<ConcreteSubset>,
    /// Compare subset's b standard deviation is no larger than the primary one's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_sd_tightened: Option<bool>,
}

pub struct ConcreteOutput {
    pub report: ConcreteReport,
    pub primary: SolveOutput,
    pub compare: Option<SolveOutput>,
}

/// Solves the primary age window and, if configured, the comparison window
/// on the same prior samples.
pub fn concrete_pipeline(cfg: &ExperimentConfig) -> Result<ConcreteOutput> {
    let DataSource::Csv { path, age_range, r_range, compare_age_range, .. } = &cfg.data else {
        return Err(ScpError::Config("concrete experiments need a csv data source".into()));
    };
    let map = cfg.build_map()?;
    let prior = Measure::new(&cfg.prior, &cfg.domain)?;
    let prior_samples = prior.sample(cfg.counts.prior, cfg.seeds.prior)?;
    let subset = |ages: [f64; 2]| -> Result<(ConcreteSubset, SolveOutput)> {
        let mut sub = cfg.clone();
        if let DataSource::Csv { age_range, .. } = &mut sub.data {
            *age_range = ages;
        }
        let recs = load_concrete_csv(path, ages, *r_range)?;
        let strengths = strength_summary(&recs);
        let out = solve_with(&sub, &map, prior.clone(), prior_samples.clone(), observed_q(&sub, &map)?)?;
        let power_laws = power_law_summary(&out.solution_samples, &strengths, *r_range, ENVELOPE_DRAWS);
        let s = ConcreteSubset {
            age_range: ages,
            strengths,
            power_laws,
            unassigned_mass: out.solution.unassigned_mass,
            tv_pushforward_consistency: out.tv_pushforward_consistency,
        };
        Ok((s, out))
    };
    let (primary_s, primary) = subset(*age_range)?;
    let (compare_s, compare) = match compare_age_range {
        Some(ages) => {
            let (s, o) = subset(*ages)?;
            (Some(s), Some(o))
        }
        None => (None, None),
    };
    let b_sd_tightened = compare_s.as_ref().map(|c| c.power_laws.b_sd <= primary_s.power_laws.b_sd);
    Ok(ConcreteOutput {
        report: ConcreteReport { r_range: *r_range, primary: primary_s, compare: compare_s, b_sd_tightened },
        primary,
        compare,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub files: Vec<OutputFile>,
    pub diagnostics: Value,
}

struct Bundle {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Bundle {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    /// Writes via a temp file in the same directory and renames into place.
    fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&buf)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.dir.join(name)).map_err(|e| ScpError::Io(e.error))?;
        self.files.push(OutputFile { file: name.to_string(), bytes: buf.len(), sha256: hex(&Sha256::digest(&buf)) });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |b| {
            serde_json::to_writer_pretty(&mut *b, value)?;
            b.push(b'\n');
            Ok(())
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_samples(bundle: &mut Bundle, name: &str, samples: &SampleSet, map: &QoiMap) -> Result<()> {
    bundle.write(name, |b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header: Vec<String> = (1..=samples.dim()).map(|k| format!("l{k}")).collect();
        header.push("q".into());
        w.write_record(&header)?;
        for p in samples.iter() {
            let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            row.push(crate::map_model::evaluate(map, p)?.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn write_solve(bundle: &mut Bundle, out: &SolveOutput, suffix: &str) -> Result<()> {
    let s = &out.solution;
    bundle.write(&format!("heatmap{suffix}.csv"), |b| s.write_heatmap_csv(b))?;
    bundle.write(&format!("observed_pushforward{suffix}.csv"), |b| s.observed.write_csv(b))?;
    bundle.write(&format!("prior_pushforward{suffix}.csv"), |b| s.prior_pushforward.write_csv(b))?;
    write_samples(bundle, &format!("solution_samples{suffix}.csv"), &out.solution_samples, &s.map)
}

fn solve_summary(out: &SolveOutput) -> Value {
    let s = &out.solution;
    json!({
        "n_cells": s.grid.n_cells(),
        "n_bins": s.partition().n_bins(),
        "partition": [s.partition().min(), s.partition().max()],
        "unassigned_mass": s.unassigned_mass,
        "flagged_bins": s.flagged_bins,
        "n_solution_samples": out.solution_samples.len(),
        "tv_pushforward_consistency": out.tv_pushforward_consistency,
    })
}

fn trace_json(trace: &ConvergenceTrace) -> Value {
    let k = trace.metrics.len();
    json!({
        "trace": trace,
        "non_increasing_within_noise": (0..k).map(|i| trace.non_increasing_within_noise(i)).collect::<Vec<_>>(),
    })
}

/// Runs the pipeline for `kind` and writes the artifact bundle into `out_dir`.
pub fn run(cfg: &ExperimentConfig, kind: ExperimentKind, out_dir: &Path) -> Result<RunOutcome> {
    if let Some(k) = cfg.kind {
        if k != kind && !(k == ExperimentKind::Solve && kind == ExperimentKind::Concrete) {
            return Err(ScpError::Config(format!("config declares kind '{}' but '{}' was requested", k.as_str(), kind.as_str())));
        }
    }
    cfg.validate()?;
    let mut bundle = Bundle::new(out_dir)?;
    let diagnostics = match kind {
        ExperimentKind::Solve => {
            let out = solve_pipeline(cfg)?;
            write_solve(&mut bundle, &out, "")?;
            solve_summary(&out)
        }
        ExperimentKind::Concrete => {
            let out = concrete_pipeline(cfg)?;
            write_solve(&mut bundle, &out.primary, "")?;
            if let Some(c) = &out.compare {
                write_solve(&mut bundle, c, "_compare")?;
            }
            json!({ "solve": solve_summary(&out.primary), "concrete": out.report })
        }
        ExperimentKind::Stability => {
            let pairs = &cfg.stability.as_ref().ok_or_else(|| ScpError::Config("missing [stability] table".into()))?.pairs;
            let setup = cfg.setup()?;
            let mut results = Vec::new();
            for (i, p) in pairs.iter().enumerate() {
                let s = setup.with_seeds(rng::derive_seed(cfg.seeds.prior, i as u64), rng::derive_seed(cfg.seeds.observed, i as u64));
                let summary = stability_replicates(&p.a, &p.b, &s, cfg.replicates)?;
                results.push(json!({ "name": p.name, "summary": summary }));
            }
            json!({ "pairs": results })
        }
        ExperimentKind::LocalLimit => {
            let trace = local_limit_experiment(&cfg.stages()?, cfg.limit()?, &cfg.setup()?, cfg.replicates)?;
            bundle.write("trace.csv", |b| trace.write_csv(b))?;
            trace_json(&trace)
        }
        ExperimentKind::Weak => {
            let trace = weak_convergence_experiment(&cfg.stages()?, cfg.limit()?, &cfg.test_functions()?, &cfg.setup()?, cfg.replicates)?;
            bundle.write("trace.csv", |b| trace.write_csv(b))?;
            trace_json(&trace)
        }
        ExperimentKind::Audit => {
            let setup = cfg.setup()?;
            let report = assumption_audit(&setup.map, &cfg.domain, &cfg.prior, cfg.tgd()?, &setup)?;
            serde_json::to_value(report)?
        }
    };
    bundle.json("diagnostics.json", &diagnostics)?;

    let mut resolved = cfg.clone();
    resolved.kind = Some(kind);
    if let DataSource::Csv { path, .. } = &mut resolved.data {
        *path = std::fs::canonicalize(&*path)?;
    }
    let resolved_text = resolved.to_toml()?;
    bundle.write("config.resolved.toml", |b| {
        b.extend_from_slice(resolved_text.as_bytes());
        Ok(())
    })?;
    let manifest = json!({
        "kind": kind.as_str(),
        "version": env!("CARGO_PKG_VERSION"),
        "generator": rng::GENERATOR_NAME,
        "chunk": rng::CHUNK,
        "seeds": cfg.seeds,
        "counts": cfg.counts,
        "n_bins": cfg.n_bins,
        "grid": cfg.grid,
        "replicates": cfg.replicates,
        "config": "config.resolved.toml",
        "outputs": bundle.files,
    });
    bundle.json("manifest.json", &manifest)?;
    Ok(RunOutcome { kind, out_dir: out_dir.to_path_buf(), files: bundle.files, diagnostics })
}
