//! Densities on the output space: histogram estimates of pushforwards and
//! the contour surface-integral representation used to cross-check them.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, ScpError};
use crate::map_model::{evaluate, gram_factor, trace_contour, BoxDomain, QoiMap};
use crate::measures::{Measure, SampleSet};

/// Default contour resolution for surface integrals; convergence is checked
/// against twice this many points.
pub const SURFACE_POINTS: usize = 400;

/// Relative disagreement between the two contour resolutions that counts as
/// non-convergence.
pub const SURFACE_CONVERGENCE_TOL: f64 = 0.01;

/// Bins `[e_i, e_{i+1})` over the output range; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputPartition {
    edges: Vec<f64>,
}

impl OutputPartition {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(ScpError::InvalidArgument("partition needs at least two bins".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScpError::InvalidArgument("partition edges must be finite and strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn equal_width(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(ScpError::InvalidArgument(format!("n_bins must be >= 2, got {n_bins}")));
        }
        if !(hi > lo) {
            return Err(ScpError::DegenerateRange);
        }
        let w = (hi - lo) / n_bins as f64;
        let mut edges: Vec<f64> = (0..n_bins).map(|i| lo + i as f64 * w).collect();
        edges.push(hi);
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn min(&self) -> f64 {
        self.edges[0]
    }

    pub fn max(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Bin index of `q`, `None` outside the covered range.
    pub fn locate(&self, q: f64) -> Option<usize> {
        if !(q >= self.min() && q <= self.max()) {
            return None;
        }
        let idx = self.edges.partition_point(|e| *e <= q);
        Some(idx.saturating_sub(1).min(self.n_bins() - 1))
    }
}

/// Equal-width bins spanning the sample range.
pub fn make_partition(q_samples: &[f64], n_bins: usize) -> Result<OutputPartition> {
    if n_bins < 2 {
        return Err(ScpError::InvalidArgument(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let (lo, hi) = q_samples
        .iter()
        .filter(|q| q.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(*q), hi.max(*q)));
    if !(hi > lo) {
        return Err(ScpError::DegenerateRange);
    }
    OutputPartition::equal_width(lo, hi, n_bins)
}

/// Piecewise-constant density on an [`OutputPartition`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedDensity {
    pub partition: OutputPartition,
    pub values: Vec<f64>,
    pub counts: Vec<u64>,
    pub total_mass: f64,
    pub n_in_range: usize,
    pub out_of_range: usize,
}

impl BinnedDensity {
    pub fn masses(&self) -> Vec<f64> {
        self.values.iter().enumerate().map(|(i, v)| v * self.partition.width(i)).collect()
    }

    pub fn mass(&self, bin: usize) -> f64 {
        self.values[bin] * self.partition.width(bin)
    }

    /// Density height at `q`; zero outside the partition.
    pub fn height_at(&self, q: f64) -> f64 {
        self.partition.locate(q).map_or(0.0, |i| self.values[i])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left", "bin_right", "height"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.serialize((self.partition.edges[i], self.partition.edges[i + 1], v))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-bin counts; out-of-range samples are tallied separately.
pub(crate) fn bin_counts(q_samples: &[f64], partition: &OutputPartition) -> (Vec<u64>, usize) {
    let n_bins = partition.n_bins();
    q_samples
        .par_chunks(crate::rng::CHUNK)
        .map(|chunk| {
            let mut counts = vec![0u64; n_bins];
            let mut outside = 0usize;
            for q in chunk {
                match partition.locate(*q) {
                    Some(i) => counts[i] += 1,
                    None => outside += 1,
                }
            }
            (counts, outside)
        })
        .reduce(
            || (vec![0u64; n_bins], 0),
            |(mut a, oa), (b, ob)| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                (a, oa + ob)
            },
        )
}

/// Histogram estimate with heights `count_i / (N_in * width_i)`.
pub fn histogram_density(q_samples: &[f64], partition: &OutputPartition) -> Result<BinnedDensity> {
    let (counts, out_of_range) = bin_counts(q_samples, partition);
    let n_in: u64 = counts.iter().sum();
    if n_in == 0 {
        return Err(ScpError::EmptyHistogram { total: q_samples.len() });
    }
    let values: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(i, c)| *c as f64 / (n_in as f64 * partition.width(i)))
        .collect();
    let total_mass = values.iter().enumerate().map(|(i, v)| v * partition.width(i)).sum();
    Ok(BinnedDensity {
        partition: partition.clone(),
        values,
        counts,
        total_mass,
        n_in_range: n_in as usize,
        out_of_range,
    })
}

/// `Q` applied to every sample point.
pub fn push_samples(map: &QoiMap, samples: &SampleSet) -> Result<Vec<f64>> {
    let points: Vec<&[f64]> = samples.iter().collect();
    points.par_iter().map(|p| evaluate(map, p)).collect()
}

/// Monte Carlo estimate of the prior pushforward density on `partition`.
pub fn prior_pushforward_mc(
    prior: &Measure,
    map: &QoiMap,
    partition: &OutputPartition,
    n_samples: usize,
    seed: u64,
) -> Result<BinnedDensity> {
    if !prior.has_density() {
        return Err(ScpError::NoDensity);
    }
    let samples = prior.sample(n_samples, seed)?;
    histogram_density(&push_samples(map, &samples)?, partition)
}

/// Weight carried along a level set by [`surface_density_at`].
#[derive(Debug, Clone, Copy)]
pub enum SurfaceWeight<'a> {
    /// Unit weight: gives the density of the pushforward of Lebesgue measure.
    Lebesgue,
    /// Prior density weight: gives the prior pushforward density.
    Prior(&'a Measure),
}

/// Integral of `integrand / |grad Q|` over `Q^{-1}(q)` with `n_points`
/// contour points (trapezoid rule per segment).
pub fn contour_integral<F>(map: &QoiMap, domain: &BoxDomain, q: f64, n_points: usize, integrand: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let contour = trace_contour(map, domain, q, n_points)?;
    let mut total = 0.0;
    for branch in &contour.branches {
        let vals = branch
            .points
            .iter()
            .map(|p| Ok(integrand(p)? / gram_factor(map, p)?))
            .collect::<Result<Vec<f64>>>()?;
        let n = vals.len();
        for (k, (a, b)) in branch.segments().enumerate() {
            let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            total += 0.5 * len * (vals[k] + vals[(k + 1) % n]);
        }
    }
    Ok(total)
}

fn converged<F>(map: &QoiMap, domain: &BoxDomain, q: f64, integrand: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let coarse = contour_integral(map, domain, q, SURFACE_POINTS, &integrand)?;
    let fine = contour_integral(map, domain, q, 2 * SURFACE_POINTS, &integrand)?;
    let scale = fine.abs().max(coarse.abs());
    if scale > 0.0 && (fine - coarse).abs() > SURFACE_CONVERGENCE_TOL * scale {
        return Err(ScpError::Quadrature { coarse, fine });
    }
    Ok(fine)
}

/// Pushforward density at `q` as a surface integral over the level set.
pub fn surface_density_at(weight: SurfaceWeight<'_>, map: &QoiMap, domain: &BoxDomain, q: f64) -> Result<f64> {
    match weight {
        SurfaceWeight::Lebesgue => converged(map, domain, q, |_| Ok(1.0)),
        SurfaceWeight::Prior(prior) => converged(map, domain, q, |p| prior.density(p)),
    }
}

/// Expectation of `f` under the prior conditioned on `Q = q`, computed as
/// the ratio of the `f`-weighted and unweighted prior surface integrals.
pub fn conditional_expectation<F>(prior: &Measure, map: &QoiMap, domain: &BoxDomain, q: f64, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let num = converged(map, domain, q, |p| Ok(f(p) * prior.density(p)?))?;
    let den = converged(map, domain, q, |p| prior.density(p))?;
    if den <= 0.0 {
        return Err(ScpError::SupportMismatch(format!("prior pushforward density vanishes at q = {q}")));
    }
    Ok(num / den)
}
