//! The calibration solve: pointwise update density, gridded importance-sampling
//! cell masses, sampling from the solution, and contour-shell conditioning.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, ScpError};
use crate::map_model::{evaluate, BoxDomain, QoiMap};
use crate::measures::{Measure, SampleSet};
use crate::pushforward::{bin_counts, histogram_density, push_samples, BinnedDensity, OutputPartition};
use crate::rng;

/// Largest unassigned observed mass tolerated before a solve is rejected.
pub const MAX_UNASSIGNED_MASS: f64 = 0.2;

/// Minimum number of prior samples inside a conditioning shell.
pub const MIN_SHELL_SAMPLES: usize = 500;

const MIN_ACCEPTANCE: f64 = 1e-4;

/// Regular tiling of the parameter box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputGrid {
    domain: BoxDomain,
    counts: Vec<usize>,
}

impl InputGrid {
    pub fn new(domain: &BoxDomain, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != domain.dim() || counts.contains(&0) {
            return Err(ScpError::InvalidArgument(format!(
                "grid needs one positive cell count per axis, got {counts:?}"
            )));
        }
        Ok(Self { domain: domain.clone(), counts })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_cells(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.domain.width(axis) / self.counts[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.counts.len()).map(|k| self.cell_width(k)).product()
    }

    /// Row-major flat index of the cell holding `x`; upper faces belong to the last cell.
    pub fn cell_index(&self, x: &[f64]) -> Option<usize> {
        if !self.domain.contains(x) {
            return None;
        }
        let mut idx = 0;
        for (k, xk) in x.iter().enumerate() {
            let c = ((xk - self.domain.lower()[k]) / self.cell_width(k)) as usize;
            idx = idx * self.counts[k] + c.min(self.counts[k] - 1);
        }
        Some(idx)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.counts.len()];
        for k in (0..self.counts.len()).rev() {
            out[k] = flat % self.counts[k];
            flat /= self.counts[k];
        }
        out
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(k, i)| self.domain.lower()[k] + (*i as f64 + 0.5) * self.cell_width(k))
            .collect()
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.n_cells()).map(|c| self.cell_center(c)).collect()
    }
}

/// Gridded solution of the calibration problem.
#[derive(Debug, Clone)]
pub struct ScpSolution {
    pub grid: InputGrid,
    pub cell_mass: Vec<f64>,
    /// Observed pushforward histogram on the shared partition.
    pub observed: BinnedDensity,
    /// Prior pushforward histogram from the prior samples used in the solve.
    pub prior_pushforward: BinnedDensity,
    /// Output bins with observed mass but no prior samples.
    pub flagged_bins: Vec<usize>,
    /// Cells whose center maps into a flagged bin.
    pub flagged_cells: Vec<usize>,
    /// Observed mass that could not be assigned, before renormalization.
    pub unassigned_mass: f64,
    pub map: QoiMap,
}

impl ScpSolution {
    pub fn partition(&self) -> &OutputPartition {
        &self.observed.partition
    }

    /// Cell-averaged density `mass / volume`.
    pub fn cell_density(&self, cell: usize) -> f64 {
        self.cell_mass[cell] / self.grid.cell_volume()
    }

    /// Pointwise solution density through the update formula.
    pub fn density_at(&self, prior: &Measure, x: &[f64]) -> Result<f64> {
        update_density(x, prior, &self.observed, &self.prior_pushforward, &self.map)
    }

    /// Cell-center quadrature of `f` against the cell masses.
    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.cell_mass
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(c, m)| m * f(&self.grid.cell_center(c)))
            .sum()
    }

    /// Importance weight `rho_D / rho_pD` per output bin; zero on flagged bins.
    pub fn bin_ratios(&self) -> Vec<f64> {
        self.observed
            .values
            .iter()
            .zip(&self.prior_pushforward.values)
            .map(|(o, p)| if *p > 0.0 { o / p } else { 0.0 })
            .collect()
    }

    /// Heatmap CSV: `cell_i, cell_j, center_l1, center_l2, mass, density` (2-D grids).
    pub fn write_heatmap_csv<W: Write>(&self, out: W) -> Result<()> {
        if self.grid.counts().len() != 2 {
            return Err(ScpError::InvalidArgument("heatmap output needs a 2-D grid".into()));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell_i", "cell_j", "center_l1", "center_l2", "mass", "density"])?;
        for (c, m) in self.cell_mass.iter().enumerate() {
            let ij = self.grid.multi_index(c);
            let center = self.grid.cell_center(c);
            w.serialize((ij[0], ij[1], center[0], center[1], m, self.cell_density(c)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solution density `rho_D(Q(x)) rho_p(x) / rho_pD(Q(x))` with binned lookups.
pub fn update_density(
    x: &[f64],
    prior: &Measure,
    rho_d: &BinnedDensity,
    rho_pd: &BinnedDensity,
    map: &QoiMap,
) -> Result<f64> {
    if rho_d.partition != rho_pd.partition {
        return Err(ScpError::PartitionMismatch("observed and prior pushforwards use different partitions".into()));
    }
    let prior_density = prior.density(x)?;
    let q = evaluate(map, x)?;
    let Some(bin) = rho_d.partition.locate(q) else {
        return Ok(0.0);
    };
    let observed = rho_d.values[bin];
    if observed == 0.0 {
        return Ok(0.0);
    }
    let scale = rho_pd.values[bin];
    if scale == 0.0 {
        return Err(ScpError::SupportMismatch(format!(
            "prior pushforward vanishes at q = {q} where observed density is {observed}"
        )));
    }
    Ok(observed * prior_density / scale)
}

/// Importance-sampling estimate of the solution's cell masses:
/// `P(A) = sum_i P_prior(A | Q in D_i) * P_obs(D_i)`.
pub fn solve_cells(
    prior_samples: &SampleSet,
    observed_q: &[f64],
    partition: &OutputPartition,
    grid: &InputGrid,
    map: &QoiMap,
) -> Result<ScpSolution> {
    let n_bins = partition.n_bins();
    if prior_samples.len() < 10 * n_bins {
        return Err(ScpError::InvalidArgument(format!(
            "need at least {} prior samples for {n_bins} bins, got {}",
            10 * n_bins,
            prior_samples.len()
        )));
    }
    if observed_q.is_empty() {
        return Err(ScpError::InvalidArgument("observed data is empty".into()));
    }
    let prior_q = push_samples(map, prior_samples)?;
    let (prior_counts, _) = bin_counts(&prior_q, partition);
    let (obs_counts, obs_outside) = bin_counts(observed_q, partition);
    let n_obs = observed_q.len() as f64;

    let obs_mass: Vec<f64> = obs_counts.iter().map(|c| *c as f64 / n_obs).collect();
    let mut unassigned = obs_outside as f64 / n_obs;
    let mut flagged_bins = Vec::new();
    for i in 0..n_bins {
        if obs_counts[i] > 0 && prior_counts[i] == 0 {
            flagged_bins.push(i);
            unassigned += obs_mass[i];
        }
    }
    if unassigned > MAX_UNASSIGNED_MASS {
        return Err(ScpError::SupportMismatch(format!(
            "{:.1}% of the observed mass falls where the prior pushforward is empty",
            100.0 * unassigned
        )));
    }
    if unassigned >= 1.0 {
        return Err(ScpError::SupportMismatch("no observed mass can be assigned".into()));
    }

    let per_sample: Vec<f64> = obs_mass
        .iter()
        .zip(&prior_counts)
        .map(|(m, n)| if *n > 0 { m / *n as f64 } else { 0.0 })
        .collect();
    let mut cell_mass = vec![0.0; grid.n_cells()];
    for (p, q) in prior_samples.iter().zip(&prior_q) {
        if let (Some(bin), Some(cell)) = (partition.locate(*q), grid.cell_index(p)) {
            cell_mass[cell] += per_sample[bin];
        }
    }
    let total: f64 = cell_mass.iter().sum();
    cell_mass.iter_mut().for_each(|m| *m /= total);

    let flagged_cells = if flagged_bins.is_empty() {
        Vec::new()
    } else {
        (0..grid.n_cells())
            .filter(|c| {
                let q = map.eval_raw(&grid.cell_center(*c));
                partition.locate(q).is_some_and(|b| flagged_bins.binary_search(&b).is_ok())
            })
            .collect()
    };

    let observed = histogram_density(observed_q, partition)?;
    let prior_pushforward = histogram_density(&prior_q, partition)?;
    Ok(ScpSolution {
        grid: grid.clone(),
        cell_mass,
        observed,
        prior_pushforward,
        flagged_bins,
        flagged_cells,
        unassigned_mass: unassigned,
        map: map.clone(),
    })
}

/// Draws from the solution by accept-reject over fresh prior draws with
/// weight `rho_D(Q) / rho_pD(Q)`.
pub fn sample_solution(solution: &ScpSolution, prior: &Measure, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(ScpError::InvalidArgument("sample count must be >= 1".into()));
    }
    let ratios = solution.bin_ratios();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let prior_masses = solution.prior_pushforward.masses();
    let expected: f64 = ratios.iter().zip(&prior_masses).map(|(r, m)| r * m).sum::<f64>() / max_ratio.max(f64::MIN_POSITIVE);
    if !(max_ratio > 0.0) || expected < MIN_ACCEPTANCE {
        return Err(ScpError::WeightDegeneracy { rate: if max_ratio > 0.0 { expected } else { 0.0 } });
    }
    let partition = solution.partition();
    let map = &solution.map;
    let n = prior.domain().dim();
    let batch_chunks = rayon::current_num_threads().max(4) as u64;
    let mut accepted: Vec<f64> = Vec::with_capacity(count * n);
    let mut next_chunk = 0u64;
    let mut candidates = 0usize;
    while accepted.len() < count * n {
        let chunks: Vec<Result<Vec<f64>>> = (next_chunk..next_chunk + batch_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = rng::stream(seed, c);
                let mut out = Vec::new();
                let mut buf = Vec::with_capacity(n);
                for _ in 0..rng::CHUNK {
                    buf.clear();
                    prior.draw_into(&mut rng, &mut buf)?;
                    let u: f64 = rng.random();
                    let q = map.eval_raw(&buf);
                    let r = partition.locate(q).map_or(0.0, |b| ratios[b]);
                    if u * max_ratio < r {
                        out.extend_from_slice(&buf);
                    }
                }
                Ok(out)
            })
            .collect();
        for chunk in chunks {
            accepted.extend(chunk?);
        }
        next_chunk += batch_chunks;
        candidates += batch_chunks as usize * rng::CHUNK;
        let rate = accepted.len() as f64 / n as f64 / candidates as f64;
        if candidates >= 10_000_000 && rate < MIN_ACCEPTANCE {
            return Err(ScpError::WeightDegeneracy { rate });
        }
    }
    accepted.truncate(count * n);
    Ok(SampleSet::from_coords(n, accepted, seed, None))
}

/// Prior samples within `|Q - q_star| <= shell_width / 2`: an empirical stand-in
/// for the prior conditioned on the level set `Q = q_star`.
pub fn contour_conditional(prior_samples: &SampleSet, map: &QoiMap, q_star: f64, shell_width: f64) -> Result<SampleSet> {
    if !(shell_width > 0.0) {
        return Err(ScpError::InvalidArgument(format!("shell width must be positive, got {shell_width}")));
    }
    let half = 0.5 * shell_width;
    let shell = prior_samples.filter(|p| (map.eval_raw(p) - q_star).abs() <= half);
    if shell.len() < MIN_SHELL_SAMPLES {
        return Err(ScpError::ShellStarvation { q: q_star, found: shell.len(), required: MIN_SHELL_SAMPLES });
    }
    Ok(shell)
}
