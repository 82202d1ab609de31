//! Probability measures on the parameter box: declarative specs, compiled
//! samplers/density evaluators, and shrinking sequences toward point masses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScpError};
use crate::map_model::{BoxBounds, BoxDomain};
use crate::rng::{self, StreamRng};

const WEIGHT_TOL: f64 = 1e-12;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// One Gaussian component of a truncated mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub center: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianComponent {
    pub fn isotropic(weight: f64, center: Vec<f64>, sd: f64) -> Self {
        let n = center.len();
        let covariance = (0..n)
            .map(|i| (0..n).map(|j| if i == j { sd * sd } else { 0.0 }).collect())
            .collect();
        Self { weight, center, covariance }
    }
}

/// A weighted point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSpec {
    pub weight: f64,
    pub spec: DensitySpec,
}

/// Declarative description of a probability measure on the parameter box.
///
/// Gaussian mixtures are mixtures of individually truncated components, so
/// each component keeps its own weight after truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    /// Uniform on the domain, or on `support` intersected with the domain.
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<BoxBounds>,
    },
    TruncatedGaussianMixture { components: Vec<GaussianComponent> },
    DiracMixture { atoms: Vec<Atom> },
    ConvexCombination { parts: Vec<WeightedSpec> },
}

impl DensitySpec {
    pub fn uniform() -> Self {
        DensitySpec::Uniform { support: None }
    }

    /// Single isotropic truncated Gaussian.
    pub fn gaussian(center: Vec<f64>, sd: f64) -> Self {
        DensitySpec::TruncatedGaussianMixture {
            components: vec![GaussianComponent::isotropic(1.0, center, sd)],
        }
    }

    /// Mixture of isotropic truncated Gaussians sharing one standard deviation.
    pub fn isotropic_mixture(atoms: &[(f64, Vec<f64>)], sd: f64) -> Self {
        DensitySpec::TruncatedGaussianMixture {
            components: atoms
                .iter()
                .map(|(w, c)| GaussianComponent::isotropic(*w, c.clone(), sd))
                .collect(),
        }
    }

    pub fn dirac(atoms: &[(f64, Vec<f64>)]) -> Self {
        DensitySpec::DiracMixture {
            atoms: atoms.iter().map(|(w, c)| Atom { weight: *w, center: c.clone() }).collect(),
        }
    }

    /// True when the measure is absolutely continuous (no Dirac part anywhere).
    pub fn has_density(&self) -> bool {
        match self {
            DensitySpec::Uniform { .. } | DensitySpec::TruncatedGaussianMixture { .. } => true,
            DensitySpec::DiracMixture { .. } => false,
            DensitySpec::ConvexCombination { parts } => {
                parts.iter().all(|p| p.weight == 0.0 || p.spec.has_density())
            }
        }
    }
}

/// Points drawn from a measure, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    coords: Vec<f64>,
    pub seed: u64,
    pub source: Option<DensitySpec>,
}

impl SampleSet {
    pub fn from_coords(dim: usize, coords: Vec<f64>, seed: u64, source: Option<DensitySpec>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "coordinate buffer does not match dimension");
        Self { dim, coords, seed, source }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Keeps the points for which `keep` holds.
    pub fn filter(&self, keep: impl Fn(&[f64]) -> bool) -> SampleSet {
        let coords = self.iter().filter(|p| keep(p)).flatten().copied().collect();
        SampleSet { dim: self.dim, coords, seed: self.seed, source: self.source.clone() }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (acc, x) in m.iter_mut().zip(p) {
                *acc += x;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

#[derive(Debug, Clone)]
struct CompiledGaussian {
    weight: f64,
    center: DVector<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
    box_mass: f64,
}

impl CompiledGaussian {
    fn new(c: &GaussianComponent, domain: &BoxDomain) -> Result<Self> {
        let n = domain.dim();
        if c.center.len() != n || c.covariance.len() != n || c.covariance.iter().any(|r| r.len() != n) {
            return Err(ScpError::InvalidSpec(format!("gaussian component must be {n}-dimensional")));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| c.covariance[i][j]);
        if (0..n).any(|i| (0..n).any(|j| (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * cov[(i, i)].abs().max(1.0))) {
            return Err(ScpError::InvalidSpec("covariance must be symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| ScpError::InvalidSpec("covariance must be positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let precision = chol.inverse();
        let log_norm = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        let mut g = CompiledGaussian {
            weight: c.weight,
            center: DVector::from_column_slice(&c.center),
            chol: l,
            precision,
            log_norm,
            box_mass: 1.0,
        };
        g.box_mass = g.mass_in_box(domain, &cov);
        Ok(g)
    }

    fn untruncated_density(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        let quad = (&self.precision * &d).dot(&d);
        (self.log_norm - 0.5 * quad).exp()
    }

    /// Probability of the box under the untruncated Gaussian.
    ///
    /// Tensor-product Gauss-Legendre on the box clipped to +-9 marginal
    /// standard deviations, with panels no wider than half the smallest
    /// principal standard deviation. Dimensions above three use a fixed-seed
    /// Monte Carlo estimate instead.
    fn mass_in_box(&self, domain: &BoxDomain, cov: &DMatrix<f64>) -> f64 {
        let n = domain.dim();
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for k in 0..n {
            let sd = cov[(k, k)].sqrt();
            lo.push(domain.lower()[k].max(self.center[k] - 9.0 * sd));
            hi.push(domain.upper()[k].min(self.center[k] + 9.0 * sd));
            if lo[k] >= hi[k] {
                return 0.0;
            }
        }
        if n > 3 {
            let mut rng = rng::stream(0x5eed, 0);
            let draws = 1_000_000;
            let mut inside = 0usize;
            for _ in 0..draws {
                let x = self.draw_untruncated(&mut rng);
                inside += domain.contains(x.as_slice()) as usize;
            }
            return inside as f64 / draws as f64;
        }
        let min_sd = cov.clone().symmetric_eigenvalues().min().max(0.0).sqrt();
        let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .map(|k| {
                let panels = (((hi[k] - lo[k]) / (0.5 * min_sd)).ceil() as usize).clamp(4, 400);
                gauss_legendre_panels(lo[k], hi[k], panels)
            })
            .collect();
        let mut total = 0.0;
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        loop {
            let mut w = 1.0;
            for k in 0..n {
                x[k] = axes[k].0[idx[k]];
                w *= axes[k].1[idx[k]];
            }
            total += w * self.untruncated_density(&x);
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < axes[k].0.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == n {
                    return total.min(1.0);
                }
            }
        }
    }

    fn draw_untruncated(&self, rng: &mut StreamRng) -> DVector<f64> {
        let n = self.center.len();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.center + &self.chol * z
    }
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

pub(crate) fn gauss_legendre_panels(lo: f64, hi: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 5);
    let mut weights = Vec::with_capacity(panels * 5);
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * h;
        for (t, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            nodes.push(mid + 0.5 * h * t);
            weights.push(0.5 * h * w);
        }
    }
    (nodes, weights)
}

#[derive(Debug, Clone)]
enum Compiled {
    Uniform { support: BoxDomain, inv_volume: f64 },
    Gaussian { components: Vec<CompiledGaussian>, cumulative: Vec<f64> },
    Dirac { atoms: Vec<Atom>, cumulative: Vec<f64> },
    Mixture { parts: Vec<(f64, Measure)>, cumulative: Vec<f64> },
}

/// A [`DensitySpec`] validated and compiled against a domain.
#[derive(Debug, Clone)]
pub struct Measure {
    spec: DensitySpec,
    domain: BoxDomain,
    compiled: Compiled,
}

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for w in weights {
        if !(0.0..=1.0).contains(&w) {
            return Err(ScpError::InvalidSpec(format!("weight {w} outside [0, 1]")));
        }
        acc += w;
        cumulative.push(acc);
    }
    if cumulative.is_empty() {
        return Err(ScpError::InvalidSpec("measure has no components".into()));
    }
    if (acc - 1.0).abs() > WEIGHT_TOL {
        return Err(ScpError::InvalidSpec(format!("weights sum to {acc}, expected 1")));
    }
    Ok(cumulative)
}

fn pick(cumulative: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
    cumulative.partition_point(|c| *c <= u).min(cumulative.len() - 1)
}

impl Measure {
    pub fn new(spec: &DensitySpec, domain: &BoxDomain) -> Result<Self> {
        let compiled = match spec {
            DensitySpec::Uniform { support } => {
                let support = match support {
                    None => domain.clone(),
                    Some(b) => {
                        let b = BoxDomain::new(b.lower.clone(), b.upper.clone())?;
                        domain.intersect(&b).ok_or_else(|| {
                            ScpError::InvalidSpec("uniform support does not overlap the domain".into())
                        })?
                    }
                };
                let inv_volume = 1.0 / support.volume();
                Compiled::Uniform { support, inv_volume }
            }
            DensitySpec::TruncatedGaussianMixture { components } => {
                let cumulative = check_weights(components.iter().map(|c| c.weight))?;
                let components = components
                    .iter()
                    .map(|c| CompiledGaussian::new(c, domain))
                    .collect::<Result<Vec<_>>>()?;
                for c in &components {
                    if c.weight > 0.0 && c.box_mass < MIN_ACCEPTANCE {
                        return Err(ScpError::Truncation { rate: c.box_mass });
                    }
                }
                Compiled::Gaussian { components, cumulative }
            }
            DensitySpec::DiracMixture { atoms } => {
                let cumulative = check_weights(atoms.iter().map(|a| a.weight))?;
                for a in atoms {
                    if !domain.contains(&a.center) {
                        return Err(ScpError::InvalidSpec(format!("atom {:?} lies outside the domain", a.center)));
                    }
                }
                Compiled::Dirac { atoms: atoms.clone(), cumulative }
            }
            DensitySpec::ConvexCombination { parts } => {
                let cumulative = check_weights(parts.iter().map(|p| p.weight))?;
                let parts = parts
                    .iter()
                    .map(|p| Ok((p.weight, Measure::new(&p.spec, domain)?)))
                    .collect::<Result<Vec<_>>>()?;
                Compiled::Mixture { parts, cumulative }
            }
        };
        Ok(Self { spec: spec.clone(), domain: domain.clone(), compiled })
    }

    pub fn spec(&self) -> &DensitySpec {
        &self.spec
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn has_density(&self) -> bool {
        self.spec.has_density()
    }

    /// Box-normalized density; zero outside the domain.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        if !self.has_density() {
            return Err(ScpError::NoDensity);
        }
        if !self.domain.contains(x) {
            return Ok(0.0);
        }
        Ok(self.density_inside(x))
    }

    fn density_inside(&self, x: &[f64]) -> f64 {
        match &self.compiled {
            Compiled::Uniform { support, inv_volume } => {
                if support.contains(x) {
                    *inv_volume
                } else {
                    0.0
                }
            }
            Compiled::Gaussian { components, .. } => components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| c.weight * c.untruncated_density(x) / c.box_mass)
                .sum(),
            Compiled::Dirac { .. } => f64::NAN,
            Compiled::Mixture { parts, .. } => parts
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, m)| w * m.density_inside(x))
                .sum(),
        }
    }

    /// Appends one draw to `out`.
    pub fn draw_into(&self, rng: &mut StreamRng, out: &mut Vec<f64>) -> Result<()> {
        match &self.compiled {
            Compiled::Uniform { support, .. } => {
                for k in 0..support.dim() {
                    out.push(support.lower()[k] + rng.random::<f64>() * support.width(k));
                }
            }
            Compiled::Gaussian { components, cumulative } => {
                let c = &components[pick(cumulative, rng)];
                let mut attempts = 0usize;
                loop {
                    let x = c.draw_untruncated(rng);
                    if self.domain.contains(x.as_slice()) {
                        out.extend(x.iter());
                        break;
                    }
                    attempts += 1;
                    if attempts > 100_000_000 {
                        return Err(ScpError::Truncation { rate: 1.0 / attempts as f64 });
                    }
                }
            }
            Compiled::Dirac { atoms, cumulative } => {
                out.extend_from_slice(&atoms[pick(cumulative, rng)].center);
            }
            Compiled::Mixture { parts, cumulative } => {
                parts[pick(cumulative, rng)].1.draw_into(rng, out)?;
            }
        }
        Ok(())
    }

    /// `count` i.i.d. draws, reproducible from `(spec, seed, count)`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<SampleSet> {
        if count == 0 {
            return Err(ScpError::InvalidArgument("sample count must be >= 1".into()));
        }
        let n = self.domain.dim();
        let coords = rng::chunked(count, seed, |rng, len, out: &mut Vec<f64>| {
            for _ in 0..len {
                self.draw_into(rng, out)?;
            }
            Ok(())
        })?;
        Ok(SampleSet::from_coords(n, coords, seed, Some(self.spec.clone())))
    }
}

/// Draws `count` points from `spec` restricted to `domain`.
pub fn sample(spec: &DensitySpec, domain: &BoxDomain, count: usize, seed: u64) -> Result<SampleSet> {
    Measure::new(spec, domain)?.sample(count, seed)
}

/// Density of `spec` at `x`, normalized over `domain`.
pub fn density_at(spec: &DensitySpec, domain: &BoxDomain, x: &[f64]) -> Result<f64> {
    Measure::new(spec, domain)?.density(x)
}

/// Gaussian mollifications of a weighted point set at decreasing scales.
///
/// `base` supplies the mollifier shape: a single zero-centered Gaussian whose
/// covariance is multiplied by `scale^2` at each stage.
pub fn shrinking_sequence(base: &DensitySpec, atoms: &[(f64, Vec<f64>)], scales: &[f64]) -> Result<Vec<DensitySpec>> {
    let shape = match base {
        DensitySpec::TruncatedGaussianMixture { components }
            if components.len() == 1 && components[0].center.iter().all(|c| *c == 0.0) =>
        {
            &components[0].covariance
        }
        _ => {
            return Err(ScpError::InvalidSpec(
                "mollifier must be a single zero-centered Gaussian component".into(),
            ))
        }
    };
    if scales.is_empty() || scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(ScpError::InvalidArgument("scales must be positive".into()));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ScpError::InvalidArgument("scales must be strictly decreasing".into()));
    }
    check_weights(atoms.iter().map(|a| a.0))?;
    if atoms.iter().any(|(_, c)| c.len() != shape.len()) {
        return Err(ScpError::InvalidSpec("atom dimension does not match the mollifier".into()));
    }
    Ok(scales
        .iter()
        .map(|s| DensitySpec::TruncatedGaussianMixture {
            components: atoms
                .iter()
                .map(|(w, c)| GaussianComponent {
                    weight: *w,
                    center: c.clone(),
                    covariance: shape.iter().map(|row| row.iter().map(|v| v * s * s).collect()).collect(),
                })
                .collect(),
        })
        .collect())
}

/// Standard-normal mollifier in `dim` dimensions, for [`shrinking_sequence`].
pub fn standard_mollifier(dim: usize) -> DensitySpec {
    DensitySpec::gaussian(vec![0.0; dim], 1.0)
}
