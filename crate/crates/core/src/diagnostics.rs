//! Numerical checks of the solution operator's continuity properties:
//! total-variation stability, local-limit convergence, weak convergence
//! toward densities, point masses and their mixtures, and an audit of the
//! standing assumptions on the map, domain and prior.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Result, ScpError};
use crate::map_model::{evaluate, gram_factor, BoxDomain, QoiMap, DEGENERACY_THRESHOLD};
use crate::measures::{DensitySpec, Measure, SampleSet, WeightedSpec};
use crate::pushforward::{bin_counts, make_partition, push_samples, BinnedDensity, OutputPartition};
use crate::rng;
use crate::solver::{contour_conditional, solve_cells, InputGrid, ScpSolution};

/// `1/2 * sum |a_i - b_i|` over two mass vectors of equal length.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ScpError::PartitionMismatch(format!("{} vs {} cells", a.len(), b.len())));
    }
    let tv = 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

pub fn tv_binned(a: &BinnedDensity, b: &BinnedDensity) -> Result<f64> {
    if a.partition != b.partition {
        return Err(ScpError::PartitionMismatch("histograms use different partitions".into()));
    }
    tv_distance(&a.masses(), &b.masses())
}

pub fn tv_solutions(a: &ScpSolution, b: &ScpSolution) -> Result<f64> {
    if a.grid != b.grid {
        return Err(ScpError::PartitionMismatch("solutions use different grids".into()));
    }
    tv_distance(&a.cell_mass, &b.cell_mass)
}

/// Midpoint-rule cell masses of a measure with a density, normalized to one.
pub fn grid_masses(measure: &Measure, grid: &InputGrid) -> Result<Vec<f64>> {
    let vol = grid.cell_volume();
    let mut masses = (0..grid.n_cells())
        .map(|c| Ok(measure.density(&grid.cell_center(c))? * vol))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return Err(ScpError::SupportMismatch("measure puts no mass on grid cell centers".into()));
    }
    masses.iter_mut().for_each(|m| *m /= total);
    Ok(masses)
}

/// Shared configuration for the diagnostic experiments.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub domain: BoxDomain,
    pub map: QoiMap,
    pub prior: DensitySpec,
    pub n_bins: usize,
    pub grid: Vec<usize>,
    pub n_observed: usize,
    pub n_prior: usize,
    pub prior_seed: u64,
    pub observed_seed: u64,
}

impl ExperimentSetup {
    pub fn with_seeds(&self, prior_seed: u64, observed_seed: u64) -> Self {
        Self { prior_seed, observed_seed, ..self.clone() }
    }
}

/// Prior samples and grid prepared once per experiment.
pub struct Workbench {
    pub setup: ExperimentSetup,
    pub prior: Measure,
    pub prior_samples: SampleSet,
    pub prior_q: Vec<f64>,
    pub grid: InputGrid,
}

impl Workbench {
    pub fn new(setup: &ExperimentSetup) -> Result<Self> {
        let prior = Measure::new(&setup.prior, &setup.domain)?;
        if !prior.has_density() {
            return Err(ScpError::NoDensity);
        }
        let prior_samples = prior.sample(setup.n_prior, setup.prior_seed)?;
        let prior_q = push_samples(&setup.map, &prior_samples)?;
        let grid = InputGrid::new(&setup.domain, setup.grid.clone())?;
        Ok(Self { setup: setup.clone(), prior, prior_samples, prior_q, grid })
    }

    /// Pushforward sample of `n_observed` draws from `tgd`.
    pub fn observe(&self, tgd: &DensitySpec, seed: u64) -> Result<Vec<f64>> {
        let m = Measure::new(tgd, &self.setup.domain)?;
        push_samples(&self.setup.map, &m.sample(self.setup.n_observed, seed)?)
    }

    /// Equal-width partition covering the prior and all observed samples.
    pub fn partition(&self, observed: &[&[f64]]) -> Result<OutputPartition> {
        let mut all = self.prior_q.clone();
        for o in observed {
            all.extend_from_slice(o);
        }
        make_partition(&all, self.setup.n_bins)
    }

    pub fn solve(&self, observed_q: &[f64], partition: &OutputPartition) -> Result<ScpSolution> {
        solve_cells(&self.prior_samples, observed_q, partition, &self.grid, &self.setup.map)
    }
}

fn observed_masses(q: &[f64], partition: &OutputPartition) -> Vec<f64> {
    let (counts, _) = bin_counts(q, partition);
    counts.iter().map(|c| *c as f64 / q.len() as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub tv_solutions: f64,
    pub tv_pushforwards: f64,
    pub tv_tgds: f64,
    pub identity_gap: f64,
    pub inequality_slack: f64,
    pub unassigned_a: f64,
    pub unassigned_b: f64,
}

/// Solves for two trial-generating distributions on a common partition and
/// grid and compares solution, pushforward and input TV distances.
pub fn stability_experiment(
    tgd_a: &DensitySpec,
    tgd_b: &DensitySpec,
    setup: &ExperimentSetup,
    seeds: [u64; 2],
) -> Result<StabilityReport> {
    let bench = Workbench::new(setup)?;
    stability_on(&bench, tgd_a, tgd_b, seeds)
}

fn stability_on(bench: &Workbench, tgd_a: &DensitySpec, tgd_b: &DensitySpec, seeds: [u64; 2]) -> Result<StabilityReport> {
    let ma = Measure::new(tgd_a, &bench.setup.domain)?;
    let mb = Measure::new(tgd_b, &bench.setup.domain)?;
    if !ma.has_density() || !mb.has_density() {
        return Err(ScpError::NoDensity);
    }
    let qa = bench.observe(tgd_a, seeds[0])?;
    let qb = bench.observe(tgd_b, seeds[1])?;
    let partition = bench.partition(&[&qa, &qb])?;
    let sa = bench.solve(&qa, &partition)?;
    let sb = bench.solve(&qb, &partition)?;
    let tv_solutions = tv_solutions(&sa, &sb)?;
    let tv_pushforwards = tv_distance(&observed_masses(&qa, &partition), &observed_masses(&qb, &partition))?;
    let tv_tgds = tv_distance(&grid_masses(&ma, &bench.grid)?, &grid_masses(&mb, &bench.grid)?)?;
    Ok(StabilityReport {
        tv_solutions,
        tv_pushforwards,
        tv_tgds,
        identity_gap: (tv_solutions - tv_pushforwards).abs(),
        inequality_slack: tv_tgds - tv_pushforwards,
        unassigned_a: sa.unassigned_mass,
        unassigned_b: sb.unassigned_mass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySummary {
    pub replicates: Vec<StabilityReport>,
    pub identity_gap_mean: f64,
    pub identity_gap_max: f64,
    pub inequality_slack_min: f64,
    pub tv_solutions_mean: f64,
    pub tv_solutions_sd: f64,
}

/// Repeats [`stability_experiment`] with independent prior and observation seeds.
pub fn stability_replicates(
    tgd_a: &DensitySpec,
    tgd_b: &DensitySpec,
    setup: &ExperimentSetup,
    replicates: usize,
) -> Result<StabilitySummary> {
    let replicates = replicates.max(1);
    let mut reports = Vec::with_capacity(replicates);
    for r in 0..replicates as u64 {
        let s = setup.with_seeds(rng::derive_seed(setup.prior_seed, r), setup.observed_seed);
        let seeds = [rng::derive_seed(setup.observed_seed, 2 * r), rng::derive_seed(setup.observed_seed, 2 * r + 1)];
        reports.push(stability_experiment(tgd_a, tgd_b, &s, seeds)?);
    }
    let n = reports.len() as f64;
    let gaps: Vec<f64> = reports.iter().map(|r| r.identity_gap).collect();
    let tvs: Vec<f64> = reports.iter().map(|r| r.tv_solutions).collect();
    let tv_mean = tvs.iter().sum::<f64>() / n;
    let tv_sd = if reports.len() > 1 {
        (tvs.iter().map(|t| (t - tv_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(StabilitySummary {
        identity_gap_mean: gaps.iter().sum::<f64>() / n,
        identity_gap_max: gaps.iter().copied().fold(0.0, f64::max),
        inequality_slack_min: reports.iter().map(|r| r.inequality_slack).fold(f64::INFINITY, f64::min),
        tv_solutions_mean: tv_mean,
        tv_solutions_sd: tv_sd,
        replicates: reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    LocalLimit,
    Weak,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: usize,
    /// One value per entry of [`ConvergenceTrace::metrics`].
    pub values: Vec<f64>,
    /// Weak mode: stage integrals of each test function.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub integrals: Vec<f64>,
}

/// Per-stage distances (local-limit mode) or integral errors (weak mode).
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTrace {
    pub mode: TraceMode,
    pub metrics: Vec<String>,
    pub stages: Vec<StageRecord>,
    /// Seed-replication noise floor per metric.
    pub noise_floor: Vec<f64>,
    /// Weak mode: reference integrals of each test function under the limit solution.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reference: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn metric(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.metrics.iter().position(|m| m == name)?;
        Some(self.stages.iter().map(|s| s.values[k]).collect())
    }

    pub fn final_values(&self) -> &[f64] {
        self.stages.last().map_or(&[], |s| &s.values)
    }

    /// True when metric `k` never rises by more than its noise floor between stages.
    pub fn non_increasing_within_noise(&self, k: usize) -> bool {
        self.stages.windows(2).all(|w| w[1].values[k] <= w[0].values[k] + self.noise_floor[k])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "metric", "value"])?;
        for s in &self.stages {
            for (m, v) in self.metrics.iter().zip(&s.values) {
                w.serialize((s.stage, m, v))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-stage TV distance between each stage's solution and the limit's solution.
///
/// Metrics: `tv_solution` (the convergence quantity), `tv_pushforward`
/// (observed-histogram TV to the limit) and `identity_gap` (their difference).
pub fn local_limit_experiment(
    sequence: &[DensitySpec],
    limit: &DensitySpec,
    setup: &ExperimentSetup,
    replicates: usize,
) -> Result<ConvergenceTrace> {
    if sequence.is_empty() {
        return Err(ScpError::InvalidArgument("sequence is empty".into()));
    }
    if !limit.has_density() || sequence.iter().any(|s| !s.has_density()) {
        return Err(ScpError::NoDensity);
    }
    let bench = Workbench::new(setup)?;
    let limit_q = bench.observe(limit, rng::derive_seed(setup.observed_seed, 0))?;
    let stage_q = sequence
        .iter()
        .enumerate()
        .map(|(i, s)| bench.observe(s, rng::derive_seed(setup.observed_seed, 1 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let replicate_q = (0..replicates as u64)
        .map(|r| bench.observe(limit, rng::derive_seed(setup.observed_seed, 10_000 + r)))
        .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<&[f64]> = vec![&limit_q];
    all.extend(stage_q.iter().map(Vec::as_slice));
    all.extend(replicate_q.iter().map(Vec::as_slice));
    let partition = bench.partition(&all)?;

    let limit_sol = bench.solve(&limit_q, &partition)?;
    let limit_mass = observed_masses(&limit_q, &partition);
    let mut stages = Vec::with_capacity(sequence.len());
    for (i, q) in stage_q.iter().enumerate() {
        let sol = bench.solve(q, &partition)?;
        let tv_sol = tv_solutions(&sol, &limit_sol)?;
        let tv_push = tv_distance(&observed_masses(q, &partition), &limit_mass)?;
        stages.push(StageRecord { stage: i, values: vec![tv_sol, tv_push, (tv_sol - tv_push).abs()], integrals: vec![] });
    }
    let mut floor = vec![0.0; 3];
    for q in &replicate_q {
        let sol = bench.solve(q, &partition)?;
        let tv_sol = tv_solutions(&sol, &limit_sol)?;
        let tv_push = tv_distance(&observed_masses(q, &partition), &limit_mass)?;
        floor[0] = f64::max(floor[0], tv_sol);
        floor[1] = f64::max(floor[1], tv_push);
        floor[2] = f64::max(floor[2], (tv_sol - tv_push).abs());
    }
    Ok(ConvergenceTrace {
        mode: TraceMode::LocalLimit,
        metrics: vec!["tv_solution".into(), "tv_pushforward".into(), "identity_gap".into()],
        stages,
        noise_floor: floor,
        reference: vec![],
    })
}

/// Bounded continuous test function with a Lipschitz constant on the domain.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub lipschitz: f64,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).field("lipschitz", &self.lipschitz).finish()
    }
}

impl TestFunction {
    pub fn new<F>(name: &str, lipschitz: f64, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.to_string(), lipschitz, f: Arc::new(f) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// Coordinate projection `x -> x_k` (1-based name `lambda{k+1}`).
    pub fn coordinate(k: usize) -> Self {
        Self::new(&format!("lambda{}", k + 1), 1.0, move |x| x[k])
    }

    /// `x -> x1 * x2`, Lipschitz on the box with the largest corner norm.
    pub fn product(domain: &BoxDomain) -> Self {
        let corner = (0..2)
            .map(|k| domain.lower()[k].abs().max(domain.upper()[k].abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        Self::new("lambda1_lambda2", corner, |x| x[0] * x[1])
    }

    /// Gaussian bump `exp(-|x - c|^2 / (2 w^2))`.
    pub fn bump(center: Vec<f64>, width: f64) -> Self {
        let lipschitz = 1.0 / (width * std::f64::consts::E.sqrt());
        Self::new("bump", lipschitz, move |x| {
            let r2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / (2.0 * width * width)).exp()
        })
    }

    /// Bundled functions by name: `lambda1`, `lambda2`, `lambda1_lambda2`, `bump`.
    pub fn from_name(name: &str, domain: &BoxDomain) -> Result<Self> {
        match name {
            "lambda1" => Ok(Self::coordinate(0)),
            "lambda2" => Ok(Self::coordinate(1)),
            "lambda1_lambda2" => Ok(Self::product(domain)),
            "bump" => {
                let w = (0..domain.dim()).map(|k| domain.width(k)).fold(f64::INFINITY, f64::min) / 4.0;
                Ok(Self::bump(domain.center(), w))
            }
            other => Err(ScpError::Config(format!("unknown test function '{other}'"))),
        }
    }

    /// Worst-case error of cell-center quadrature against any measure on the grid.
    pub fn quadrature_bound(&self, grid: &InputGrid) -> f64 {
        let half_diag = (0..grid.counts().len()).map(|k| (0.5 * grid.cell_width(k)).powi(2)).sum::<f64>().sqrt();
        self.lipschitz * half_diag
    }
}

/// Splits a limit measure into its absolutely continuous part (weight and
/// normalized spec) and its weighted atoms.
pub fn decompose_limit(spec: &DensitySpec) -> (Option<(f64, DensitySpec)>, Vec<(f64, Vec<f64>)>) {
    let mut parts: Vec<WeightedSpec> = Vec::new();
    let mut atoms = Vec::new();
    fn walk(spec: &DensitySpec, w: f64, parts: &mut Vec<WeightedSpec>, atoms: &mut Vec<(f64, Vec<f64>)>) {
        match spec {
            DensitySpec::DiracMixture { atoms: a } => {
                atoms.extend(a.iter().filter(|x| x.weight > 0.0).map(|x| (w * x.weight, x.center.clone())));
            }
            DensitySpec::ConvexCombination { parts: p } => {
                for sub in p.iter().filter(|s| s.weight > 0.0) {
                    walk(&sub.spec, w * sub.weight, parts, atoms);
                }
            }
            other => parts.push(WeightedSpec { weight: w, spec: other.clone() }),
        }
    }
    walk(spec, 1.0, &mut parts, &mut atoms);
    let alpha: f64 = parts.iter().map(|p| p.weight).sum();
    let density = match parts.len() {
        0 => None,
        1 => Some((alpha, parts.remove(0).spec)),
        _ => {
            let parts = parts.into_iter().map(|p| WeightedSpec { weight: p.weight / alpha, spec: p.spec }).collect();
            Some((alpha, DensitySpec::ConvexCombination { parts }))
        }
    };
    (density, atoms)
}

/// Errors `|E_stage[f] - E_limit[f]|` for each stage and test function.
///
/// The limit solution is the direct solve for the absolutely continuous part
/// and the prior conditioned on the atom's level set (shell of one output bin
/// width) for each atom, mixed with the limit's weights.
pub fn weak_convergence_experiment(
    sequence: &[DensitySpec],
    limit: &DensitySpec,
    test_functions: &[TestFunction],
    setup: &ExperimentSetup,
    replicates: usize,
) -> Result<ConvergenceTrace> {
    if sequence.is_empty() || test_functions.is_empty() {
        return Err(ScpError::InvalidArgument("need a non-empty sequence and test function list".into()));
    }
    if sequence.iter().any(|s| !s.has_density()) {
        return Err(ScpError::NoDensity);
    }
    Measure::new(limit, &setup.domain)?;
    let bench = Workbench::new(setup)?;
    let (density_part, atoms) = decompose_limit(limit);

    let density_q = match &density_part {
        Some((_, spec)) => Some(bench.observe(spec, rng::derive_seed(setup.observed_seed, 0))?),
        None => None,
    };
    let stage_q = sequence
        .iter()
        .enumerate()
        .map(|(i, s)| bench.observe(s, rng::derive_seed(setup.observed_seed, 1 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let last = sequence.last().unwrap();
    let replicate_q = (0..replicates as u64)
        .map(|r| bench.observe(last, rng::derive_seed(setup.observed_seed, 10_000 + r)))
        .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<&[f64]> = stage_q.iter().map(Vec::as_slice).collect();
    all.extend(replicate_q.iter().map(Vec::as_slice));
    if let Some(q) = &density_q {
        all.push(q);
    }
    let partition = bench.partition(&all)?;
    let shell_width = partition.width(0);

    let n_f = test_functions.len();
    let mut reference = vec![0.0; n_f];
    let mut floor = vec![0.0; n_f];
    if let (Some((alpha, _)), Some(q)) = (&density_part, &density_q) {
        let sol = bench.solve(q, &partition)?;
        for (k, tf) in test_functions.iter().enumerate() {
            reference[k] += alpha * sol.expectation(|x| tf.eval(x));
        }
    }
    for (w, center) in &atoms {
        let q_star = evaluate(&setup.map, center)?;
        let shell = contour_conditional(&bench.prior_samples, &setup.map, q_star, shell_width)?;
        let n = shell.len() as f64;
        for (k, tf) in test_functions.iter().enumerate() {
            let vals: Vec<f64> = shell.iter().map(|p| tf.eval(p)).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            reference[k] += w * mean;
            floor[k] += w * 2.0 * (var / n).sqrt();
        }
    }

    let integrals = |q: &[f64]| -> Result<Vec<f64>> {
        let sol = bench.solve(q, &partition)?;
        Ok(test_functions.iter().map(|tf| sol.expectation(|x| tf.eval(x))).collect())
    };
    let mut stages = Vec::with_capacity(sequence.len());
    for (i, q) in stage_q.iter().enumerate() {
        let ints = integrals(q)?;
        let errs = ints.iter().zip(&reference).map(|(a, b)| (a - b).abs()).collect();
        stages.push(StageRecord { stage: i, values: errs, integrals: ints });
    }
    let final_ints = stages.last().unwrap().integrals.clone();
    let mut spread = vec![0.0f64; n_f];
    for q in &replicate_q {
        for (k, v) in integrals(q)?.iter().enumerate() {
            spread[k] = spread[k].max((v - final_ints[k]).abs());
        }
    }
    for k in 0..n_f {
        floor[k] += spread[k];
    }
    Ok(ConvergenceTrace {
        mode: TraceMode::Weak,
        metrics: test_functions.iter().map(|t| t.name.clone()).collect(),
        stages,
        noise_floor: floor,
        reference,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FlaggedBin {
    pub bin: usize,
    pub left: f64,
    pub right: f64,
    pub observed_mass: f64,
}

/// Empirical audit of the standing assumptions.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub dimension: usize,
    pub box_valid: bool,
    pub box_volume: f64,
    pub n_probes: usize,
    pub degenerate_fraction: f64,
    pub map_evaluation_failures: usize,
    pub prior_has_density: bool,
    /// Fraction of probe points where the prior density is positive.
    pub prior_positive_fraction: f64,
    pub tgd_has_density: bool,
    pub n_bins: usize,
    /// Bins without prior samples.
    pub prior_empty_bins: Vec<usize>,
    /// Bins without prior samples that nevertheless receive observed mass.
    pub flagged_bins: Vec<FlaggedBin>,
    pub flagged_observed_mass: f64,
    pub infinitely_many_k_clause: String,
    pub boundary_regularity: String,
}

pub const AUDIT_PROBES: usize = 10_000;

pub fn assumption_audit(
    map: &QoiMap,
    domain: &BoxDomain,
    prior: &DensitySpec,
    tgd: &DensitySpec,
    setup: &ExperimentSetup,
) -> Result<AuditReport> {
    let box_valid = BoxDomain::new(domain.lower().to_vec(), domain.upper().to_vec()).is_ok();
    let mut rng = rng::stream(setup.prior_seed, 1 << 41);
    let prior_m = Measure::new(prior, domain)?;
    let mut degenerate = 0usize;
    let mut failures = 0usize;
    let mut positive = 0usize;
    let mut x = vec![0.0; domain.dim()];
    for _ in 0..AUDIT_PROBES {
        for (k, xk) in x.iter_mut().enumerate() {
            *xk = domain.lower()[k] + rng.random::<f64>() * domain.width(k);
        }
        match gram_factor(map, &x) {
            Ok(g) if g >= DEGENERACY_THRESHOLD => {}
            Ok(_) | Err(ScpError::DegenerateJacobian { .. }) => degenerate += 1,
            Err(_) => failures += 1,
        }
        if prior_m.has_density() && prior_m.density(&x)? > 0.0 {
            positive += 1;
        }
    }

    let prior_samples = prior_m.sample(setup.n_prior, setup.prior_seed)?;
    let prior_q = push_samples(map, &prior_samples)?;
    let tgd_m = Measure::new(tgd, domain)?;
    let observed_q = push_samples(map, &tgd_m.sample(setup.n_observed, setup.observed_seed)?)?;
    let mut all = prior_q.clone();
    all.extend_from_slice(&observed_q);
    let partition = make_partition(&all, setup.n_bins)?;
    let (prior_counts, _) = bin_counts(&prior_q, &partition);
    let obs_mass = observed_masses(&observed_q, &partition);
    let prior_empty_bins: Vec<usize> = (0..partition.n_bins()).filter(|i| prior_counts[*i] == 0).collect();
    let flagged_bins: Vec<FlaggedBin> = prior_empty_bins
        .iter()
        .filter(|i| obs_mass[**i] > 0.0)
        .map(|&i| FlaggedBin {
            bin: i,
            left: partition.edges()[i],
            right: partition.edges()[i + 1],
            observed_mass: obs_mass[i],
        })
        .collect();
    let flagged_observed_mass = flagged_bins.iter().map(|b| b.observed_mass).fold(0.0, |a, b| a + b);

    Ok(AuditReport {
        dimension: domain.dim(),
        box_valid,
        box_volume: domain.volume(),
        n_probes: AUDIT_PROBES,
        degenerate_fraction: degenerate as f64 / AUDIT_PROBES as f64,
        map_evaluation_failures: failures,
        prior_has_density: prior_m.has_density(),
        prior_positive_fraction: positive as f64 / AUDIT_PROBES as f64,
        tgd_has_density: tgd.has_density(),
        n_bins: partition.n_bins(),
        prior_empty_bins,
        flagged_bins,
        flagged_observed_mass,
        infinitely_many_k_clause: "empirically untested".into(),
        boundary_regularity: "not checked beyond axis-aligned box domains".into(),
    })
}
