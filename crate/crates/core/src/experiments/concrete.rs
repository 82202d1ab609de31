//! Concrete compressive-strength data: loading, filtering by
//! water-to-binder ratio and age, bootstrap resampling and power-law
//! summaries of sampled `(a, b)` parameters.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, ScpError};
use crate::measures::SampleSet;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcreteRecord {
    pub cement: f64,
    pub slag: f64,
    pub fly_ash: f64,
    pub water: f64,
    /// Days.
    pub age: f64,
    /// Megapascals.
    pub strength: f64,
    /// Remaining source columns, untouched.
    pub extra: BTreeMap<String, String>,
}

impl ConcreteRecord {
    pub fn binder(&self) -> f64 {
        self.cement + self.slag + self.fly_ash
    }

    /// Water-to-binder ratio.
    pub fn ratio(&self) -> f64 {
        self.water / self.binder()
    }
}

// Normalized header prefixes accepted for each required field.
const ALIASES: [(&str, &[&str]); 6] = [
    ("cement", &["cement"]),
    ("slag", &["blast_furnace_slag", "slag"]),
    ("fly_ash", &["fly_ash", "flyash"]),
    ("water", &["water"]),
    ("age", &["age"]),
    ("strength", &["compressive_strength", "concrete_compressive_strength", "strength", "csmpa"]),
];

fn normalize(header: &str) -> String {
    header.trim().to_lowercase().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn column_map(headers: &csv::StringRecord) -> Result<[usize; 6]> {
    let norm: Vec<String> = headers.iter().map(normalize).collect();
    let mut idx = [0usize; 6];
    for (slot, (field, aliases)) in ALIASES.iter().enumerate() {
        idx[slot] = norm
            .iter()
            .position(|h| aliases.iter().any(|a| h.starts_with(a)))
            .ok_or_else(|| ScpError::Schema(format!("missing column '{field}'")))?;
    }
    Ok(idx)
}

/// Reads all records; fails on missing columns or physically invalid rows.
pub fn read_concrete_csv(path: &Path) -> Result<Vec<ConcreteRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = column_map(&headers)?;
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |slot: usize| -> Result<f64> {
            let raw = rec.get(idx[slot]).unwrap_or("").trim();
            raw.parse().map_err(|_| ScpError::Schema(format!("row {}: '{raw}' in column '{}' is not a number", row + 1, ALIASES[slot].0)))
        };
        let extra = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !idx.contains(i))
            .map(|(i, h)| (h.to_string(), rec.get(i).unwrap_or("").to_string()))
            .collect();
        let r = ConcreteRecord {
            cement: field(0)?,
            slag: field(1)?,
            fly_ash: field(2)?,
            water: field(3)?,
            age: field(4)?,
            strength: field(5)?,
            extra,
        };
        if !(r.strength > 0.0 && r.age >= 0.0 && r.binder() > 0.0) {
            return Err(ScpError::Schema(format!("row {}: need strength > 0, age >= 0 and positive binder", row + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Records with water-to-binder ratio in `r_range` and age in `age_range`, both closed.
pub fn load_concrete_csv(path: &Path, age_range: [f64; 2], r_range: [f64; 2]) -> Result<Vec<ConcreteRecord>> {
    let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
    let kept: Vec<ConcreteRecord> = read_concrete_csv(path)?
        .into_iter()
        .filter(|r| inside(r.age, age_range) && inside(r.ratio(), r_range))
        .collect();
    if kept.is_empty() {
        return Err(ScpError::EmptyFilter(format!("age in {age_range:?} and ratio in {r_range:?}")));
    }
    Ok(kept)
}

/// `count` strengths resampled uniformly with replacement, each plus independent `N(0, noise_sd^2)`.
pub fn bootstrap_noise(records: &[ConcreteRecord], count: usize, noise_sd: f64, seed: u64) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(ScpError::InvalidArgument("no records to resample".into()));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(ScpError::InvalidArgument(format!("noise sd {noise_sd}")));
    }
    rng::chunked(count, seed, |rng, len, out| {
        for _ in 0..len {
            let base = records[rng.random_range(0..records.len())].strength;
            let z: f64 = rng.sample(StandardNormal);
            out.push(base + noise_sd * z);
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StrengthSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
}

pub fn strength_summary(records: &[ConcreteRecord]) -> StrengthSummary {
    let s: Vec<f64> = records.iter().map(|r| r.strength).collect();
    let (mean, sd) = mean_sd(&s);
    StrengthSummary {
        n: s.len(),
        min: s.iter().copied().fold(f64::INFINITY, f64::min),
        max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        sd,
    }
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Number of ratio points checked per power law.
pub const ENVELOPE_POINTS: usize = 41;

/// True when `a * R^b` stays inside `[lo, hi]` on an even grid over `r_range`.
pub fn power_law_within(a: f64, b: f64, r_range: [f64; 2], envelope: [f64; 2]) -> bool {
    (0..ENVELOPE_POINTS).all(|k| {
        let r = r_range[0] + (r_range[1] - r_range[0]) * k as f64 / (ENVELOPE_POINTS - 1) as f64;
        let y = a * r.powf(b);
        y >= envelope[0] && y <= envelope[1]
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerLawSummary {
    pub n_samples: usize,
    pub a_mean: f64,
    pub a_sd: f64,
    pub b_mean: f64,
    pub b_sd: f64,
    /// `[min - 10, max + 10]` of the filtered strengths.
    pub envelope: [f64; 2],
    pub n_drawn: usize,
    pub n_within_envelope: usize,
}

/// Moments of `(a, b)` over all samples, and the envelope count over the first `n_drawn`.
pub fn power_law_summary(samples: &SampleSet, strengths: &StrengthSummary, r_range: [f64; 2], n_drawn: usize) -> PowerLawSummary {
    let a: Vec<f64> = samples.iter().map(|p| p[0]).collect();
    let b: Vec<f64> = samples.iter().map(|p| p[1]).collect();
    let (a_mean, a_sd) = mean_sd(&a);
    let (b_mean, b_sd) = mean_sd(&b);
    let envelope = [strengths.min - 10.0, strengths.max + 10.0];
    let n_drawn = n_drawn.min(samples.len());
    let n_within_envelope = samples.iter().take(n_drawn).filter(|p| power_law_within(p[0], p[1], r_range, envelope)).count();
    PowerLawSummary { n_samples: samples.len(), a_mean, a_sd, b_mean, b_sd, envelope, n_drawn, n_within_envelope }
}
