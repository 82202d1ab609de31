//! Parameter space, quantity-of-interest maps and their level sets.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScpError};

/// Gram factors below this value mark a rank-deficient Jacobian.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

/// Largest admissible `|Q(p) - q|` for a stored contour point.
pub const CONTOUR_RESIDUAL_TOL: f64 = 1e-8;

const NEWTON_MAX_ITER: usize = 50;

/// Compact axis-aligned box in R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxBounds", into = "BoxBounds")]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Serialized form of a [`BoxDomain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TryFrom<BoxBounds> for BoxDomain {
    type Error = ScpError;
    fn try_from(b: BoxBounds) -> Result<Self> {
        BoxDomain::new(b.lower, b.upper)
    }
}

impl From<BoxDomain> for BoxBounds {
    fn from(d: BoxDomain) -> Self {
        BoxBounds { lower: d.lower, upper: d.upper }
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(ScpError::InvalidDomain(format!(
                "bound vectors must be non-empty and equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ScpError::InvalidDomain(format!(
                    "axis {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub fn clamp(&self, point: &mut [f64]) {
        for (k, x) in point.iter_mut().enumerate() {
            *x = x.clamp(self.lower[k], self.upper[k]);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Intersection with another box, `None` when it has no interior.
    pub fn intersect(&self, other: &BoxDomain) -> Option<BoxDomain> {
        if other.dim() != self.dim() {
            return None;
        }
        let lower: Vec<f64> = self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect();
        let upper: Vec<f64> = self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect();
        BoxDomain::new(lower, upper).ok()
    }
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type Predicate = dyn Fn(&[f64]) -> bool + Send + Sync;

/// A scalar quantity-of-interest map `Q: R^n -> R` with optional analytic gradient.
#[derive(Clone)]
pub struct QoiMap {
    name: String,
    dim: usize,
    eval: Arc<ScalarFn>,
    grad: Option<Arc<GradFn>>,
    degenerate_locus: Option<Arc<Predicate>>,
    fd_step: f64,
}

impl fmt::Debug for QoiMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QoiMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_grad", &self.grad.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl QoiMap {
    pub fn new<F>(name: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            grad: None,
            degenerate_locus: None,
            fd_step: 1e-6,
        }
    }

    pub fn with_gradient<G>(mut self, grad: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_degenerate_locus<P>(mut self, locus: P) -> Self
    where
        P: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.degenerate_locus = Some(Arc::new(locus));
        self
    }

    /// Relative step for central differences; the step on axis k is
    /// `fd_step * (1 + |x_k|)`.
    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    /// `Q(x) = x1^2 + 3 x2^2`.
    pub fn ellipse() -> Self {
        QoiMap::new("ellipse", 2, |x| x[0] * x[0] + 3.0 * x[1] * x[1])
            .with_gradient(|x| vec![2.0 * x[0], 6.0 * x[1]])
            .with_degenerate_locus(|x| (4.0 * x[0] * x[0] + 36.0 * x[1] * x[1]).sqrt() < DEGENERACY_THRESHOLD)
    }

    /// `Q(a, b) = a * r^b` for a fixed ratio `r > 0`.
    pub fn powerlaw(r: f64) -> Self {
        let ln_r = r.ln();
        QoiMap::new("powerlaw", 2, move |x| x[0] * r.powf(x[1]))
            .with_gradient(move |x| {
                let rb = r.powf(x[1]);
                vec![rb, x[0] * rb * ln_r]
            })
            .with_degenerate_locus(move |x| {
                let rb = r.powf(x[1]);
                (rb * rb * (1.0 + x[0] * x[0] * ln_r * ln_r)).sqrt() < DEGENERACY_THRESHOLD
            })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn on_degenerate_locus(&self, x: &[f64]) -> bool {
        self.degenerate_locus.as_ref().is_some_and(|p| p(x))
    }

    /// Unchecked evaluation for hot loops where non-finite values are filtered later.
    pub(crate) fn eval_raw(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Central-difference gradient, ignoring any analytic gradient.
    pub fn fd_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut probe = x.to_vec();
        let mut g = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            let h = self.fd_step * (1.0 + x[k].abs());
            probe[k] = x[k] + h;
            let fp = evaluate(self, &probe)?;
            probe[k] = x[k] - h;
            let fm = evaluate(self, &probe)?;
            probe[k] = x[k];
            g.push((fp - fm) / (2.0 * h));
        }
        Ok(g)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.grad {
            Some(grad) => {
                let g = grad(x);
                if g.iter().all(|v| v.is_finite()) {
                    Ok(g)
                } else {
                    Err(ScpError::MapEvaluation { point: x.to_vec() })
                }
            }
            None => self.fd_gradient(x),
        }
    }
}

/// Returns `Q(x)`, rejecting non-finite output.
pub fn evaluate(map: &QoiMap, x: &[f64]) -> Result<f64> {
    let v = (map.eval)(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ScpError::MapEvaluation { point: x.to_vec() })
    }
}

/// `sqrt(det(J J^T))`; for scalar maps this is the gradient norm.
pub fn gram_factor(map: &QoiMap, x: &[f64]) -> Result<f64> {
    if map.on_degenerate_locus(x) {
        let factor = map.gradient(x).map(|g| norm(&g)).unwrap_or(0.0);
        return Err(ScpError::DegenerateJacobian { point: x.to_vec(), factor });
    }
    let factor = norm(&map.gradient(x)?);
    if factor < DEGENERACY_THRESHOLD {
        return Err(ScpError::DegenerateJacobian { point: x.to_vec(), factor });
    }
    Ok(factor)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Declarative map selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl MapSpec {
    pub fn named(id: &str) -> Self {
        Self { id: id.to_string(), params: BTreeMap::new() }
    }

    pub fn powerlaw(r: f64) -> Self {
        Self { id: "powerlaw".into(), params: BTreeMap::from([("r".to_string(), r)]) }
    }
}

type MapBuilder = Arc<dyn Fn(&BTreeMap<String, f64>) -> Result<QoiMap> + Send + Sync>;

/// Lookup table from string ids to map constructors.
#[derive(Clone)]
pub struct MapRegistry {
    builders: HashMap<String, MapBuilder>,
}

impl Default for MapRegistry {
    fn default() -> Self {
        let mut reg = MapRegistry { builders: HashMap::new() };
        reg.register("ellipse", |_| Ok(QoiMap::ellipse()));
        reg.register("powerlaw", |params| {
            let r = params.get("r").copied().unwrap_or(0.3);
            if !(r.is_finite() && r > 0.0) {
                return Err(ScpError::Config(format!("powerlaw map needs r > 0, got {r}")));
            }
            Ok(QoiMap::powerlaw(r))
        });
        reg
    }
}

impl MapRegistry {
    pub fn register<F>(&mut self, id: &str, builder: F)
    where
        F: Fn(&BTreeMap<String, f64>) -> Result<QoiMap> + Send + Sync + 'static,
    {
        self.builders.insert(id.to_string(), Arc::new(builder));
    }

    pub fn build(&self, spec: &MapSpec) -> Result<QoiMap> {
        let builder = self
            .builders
            .get(&spec.id)
            .ok_or_else(|| ScpError::Config(format!("unknown map id '{}'", spec.id)))?;
        builder(&spec.params)
    }

    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.builders.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }
}

/// One connected piece of a level set inside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourBranch {
    pub points: Vec<[f64; 2]>,
    /// Closed loops repeat no point; the closing segment is implicit.
    pub closed: bool,
}

impl ContourBranch {
    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        let count = if self.closed && n > 2 { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }
}

/// Polyline approximation of `Q^{-1}(q)` clipped to a 2-D box.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourPolyline {
    pub q_value: f64,
    pub branches: Vec<ContourBranch>,
}

impl ContourPolyline {
    pub fn points(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.branches.iter().flat_map(|b| b.points.iter())
    }

    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        self.branches.iter().flat_map(ContourBranch::segments)
    }

    pub fn arc_lengths(&self) -> Vec<f64> {
        self.segments().map(|(a, b)| dist(a, b)).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.arc_lengths().iter().sum()
    }

    pub fn n_points(&self) -> usize {
        self.branches.iter().map(|b| b.points.len()).sum()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum EdgeKey {
    /// Edge from node (i, j) to (i + 1, j).
    Horizontal(usize, usize),
    /// Edge from node (i, j) to (i, j + 1).
    Vertical(usize, usize),
}

/// Traces `Q^{-1}(q)` inside a 2-D box.
///
/// Branches are located with marching squares, crossing points are solved
/// exactly on grid edges, and each branch is then resampled at uniform arc
/// length and projected back onto the level set with Newton steps.
/// `n_points` is the total number of points across all branches.
pub fn trace_contour(map: &QoiMap, domain: &BoxDomain, q: f64, n_points: usize) -> Result<ContourPolyline> {
    if domain.dim() != 2 || map.dim() != 2 {
        return Err(ScpError::InvalidArgument("contour tracing needs a 2-D map and domain".into()));
    }
    if n_points < 8 {
        return Err(ScpError::InvalidArgument(format!("n_points must be >= 8, got {n_points}")));
    }
    let g = (n_points / 2).clamp(128, 1024);
    let (x0, y0) = (domain.lower()[0], domain.lower()[1]);
    let (hx, hy) = (domain.width(0) / g as f64, domain.width(1) / g as f64);
    let node = |i: usize, j: usize| -> [f64; 2] {
        let x = if i == g { domain.upper()[0] } else { x0 + i as f64 * hx };
        let y = if j == g { domain.upper()[1] } else { y0 + j as f64 * hy };
        [x, y]
    };

    let mut f = vec![0.0; (g + 1) * (g + 1)];
    for i in 0..=g {
        for j in 0..=g {
            f[i * (g + 1) + j] = evaluate(map, &node(i, j))? - q;
        }
    }
    let fv = |i: usize, j: usize| f[i * (g + 1) + j];
    let above = |i: usize, j: usize| fv(i, j) >= 0.0;

    // Segments as pairs of edge keys.
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..g {
        for j in 0..g {
            let bl = above(i, j) as u8;
            let br = above(i + 1, j) as u8;
            let tr = above(i + 1, j + 1) as u8;
            let tl = above(i, j + 1) as u8;
            let case = bl | (br << 1) | (tr << 2) | (tl << 3);
            let bottom = EdgeKey::Horizontal(i, j);
            let right = EdgeKey::Vertical(i + 1, j);
            let top = EdgeKey::Horizontal(i, j + 1);
            let left = EdgeKey::Vertical(i, j);
            match case {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 | 10 => {
                    let center = 0.25 * (fv(i, j) + fv(i + 1, j) + fv(i + 1, j + 1) + fv(i, j + 1));
                    // Separate the two corners whose sign differs from the center.
                    let center_above = center >= 0.0;
                    let bl_above = bl == 1;
                    if center_above == bl_above {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    if segments.is_empty() {
        return Err(ScpError::EmptyContour { q });
    }

    let crossing = |key: EdgeKey| -> Result<[f64; 2]> {
        let (a, b, fa, fb) = match key {
            EdgeKey::Horizontal(i, j) => (node(i, j), node(i + 1, j), fv(i, j), fv(i + 1, j)),
            EdgeKey::Vertical(i, j) => (node(i, j), node(i, j + 1), fv(i, j), fv(i, j + 1)),
        };
        root_on_segment(map, q, a, b, fa, fb)
    };

    let mut adjacency: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, (e1, e2)) in segments.iter().enumerate() {
        adjacency.entry(*e1).or_default().push(s);
        adjacency.entry(*e2).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut chains: Vec<(Vec<EdgeKey>, bool)> = Vec::new();

    let walk = |start_edge: EdgeKey, start_seg: usize, used: &mut Vec<bool>| -> (Vec<EdgeKey>, bool) {
        let mut edges = vec![start_edge];
        let mut seg = start_seg;
        let mut edge = start_edge;
        loop {
            used[seg] = true;
            let (e1, e2) = segments[seg];
            let next = if e1 == edge { e2 } else { e1 };
            if next == start_edge {
                return (edges, true);
            }
            edges.push(next);
            edge = next;
            match adjacency[&next].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => return (edges, false),
            }
        }
    };

    // Open branches start at boundary edges (degree one).
    let mut starts: Vec<EdgeKey> = adjacency
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(k, _)| *k)
        .collect();
    starts.sort_by_key(edge_order);
    for start in starts {
        let seg = adjacency[&start][0];
        if !used[seg] {
            chains.push(walk(start, seg, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let start = segments[s].0;
            chains.push(walk(start, s, &mut used));
        }
    }

    let mut raw: Vec<(Vec<[f64; 2]>, bool)> = Vec::with_capacity(chains.len());
    for (edges, closed) in chains {
        let pts = edges.into_iter().map(crossing).collect::<Result<Vec<_>>>()?;
        raw.push((pts, closed));
    }

    let lengths: Vec<f64> = raw.iter().map(|(p, closed)| polyline_length(p, *closed)).collect();
    let total: f64 = lengths.iter().sum();
    if total <= 0.0 {
        return Err(ScpError::EmptyContour { q });
    }
    let mut branches = Vec::with_capacity(raw.len());
    for ((pts, closed), len) in raw.into_iter().zip(lengths) {
        if len <= 0.0 {
            continue;
        }
        let k = ((n_points as f64 * len / total).round() as usize).max(3);
        let resampled = resample(&pts, closed, k);
        let last = resampled.len() - 1;
        let mut refined = Vec::with_capacity(resampled.len());
        for (idx, p) in resampled.into_iter().enumerate() {
            // Open-branch endpoints are exact boundary crossings already.
            if !closed && (idx == 0 || idx == last) {
                refined.push(p);
            } else {
                refined.push(newton_project(map, domain, q, p)?);
            }
        }
        branches.push(ContourBranch { points: refined, closed });
    }
    Ok(ContourPolyline { q_value: q, branches })
}

fn edge_order(k: &EdgeKey) -> (u8, usize, usize) {
    match *k {
        EdgeKey::Horizontal(i, j) => (0, i, j),
        EdgeKey::Vertical(i, j) => (1, i, j),
    }
}

fn polyline_length(p: &[[f64; 2]], closed: bool) -> f64 {
    let mut len: f64 = p.windows(2).map(|w| dist(w[0], w[1])).sum();
    if closed && p.len() > 2 {
        len += dist(p[p.len() - 1], p[0]);
    }
    len
}

/// Uniform arc-length resampling of a polyline into `k` points.
fn resample(p: &[[f64; 2]], closed: bool, k: usize) -> Vec<[f64; 2]> {
    let mut pts = p.to_vec();
    if closed {
        pts.push(p[0]);
    }
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    let denom = if closed { k as f64 } else { (k - 1) as f64 };
    let mut out = Vec::with_capacity(k);
    let mut seg = 0;
    for idx in 0..k {
        let s = total * idx as f64 / denom;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let t = if span > 0.0 { ((s - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    if !closed {
        *out.last_mut().unwrap() = *pts.last().unwrap();
    }
    out
}

/// Root of `Q - q` on the segment `[a, b]` given a sign change (Illinois method).
fn root_on_segment(map: &QoiMap, q: f64, a: [f64; 2], b: [f64; 2], fa: f64, fb: f64) -> Result<[f64; 2]> {
    let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let (mut t0, mut t1, mut f0, mut f1) = (0.0, 1.0, fa, fb);
    let mut side = 0i8;
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..200 {
        let t = (t0 * f1 - t1 * f0) / (f1 - f0);
        let ft = evaluate(map, &at(t))? - q;
        if ft.abs() < best.0 {
            best = (ft.abs(), t);
        }
        if ft.abs() <= 1e-13 * (1.0 + q.abs()) || (t1 - t0).abs() < 1e-15 {
            break;
        }
        if (ft > 0.0) == (f1 > 0.0) {
            t1 = t;
            f1 = ft;
            if side == 1 {
                f0 *= 0.5;
            }
            side = 1;
        } else {
            t0 = t;
            f0 = ft;
            if side == -1 {
                f1 *= 0.5;
            }
            side = -1;
        }
    }
    if best.0 > CONTOUR_RESIDUAL_TOL {
        return Err(ScpError::ContourTrace(format!("edge root residual {:e}", best.0)));
    }
    Ok(at(best.1))
}

fn newton_project(map: &QoiMap, domain: &BoxDomain, q: f64, p: [f64; 2]) -> Result<[f64; 2]> {
    let mut x = p;
    let mut r = evaluate(map, &x)? - q;
    for _ in 0..NEWTON_MAX_ITER {
        if r.abs() <= 1e-13 * (1.0 + q.abs()) {
            break;
        }
        let g = map.gradient(&x)?;
        let g2 = g[0] * g[0] + g[1] * g[1];
        if g2 < DEGENERACY_THRESHOLD * DEGENERACY_THRESHOLD {
            return Err(ScpError::ContourTrace(format!("vanishing gradient at {x:?}")));
        }
        let mut next = [x[0] - r * g[0] / g2, x[1] - r * g[1] / g2];
        domain.clamp(&mut next);
        x = next;
        r = evaluate(map, &x)? - q;
    }
    if r.abs() > CONTOUR_RESIDUAL_TOL {
        return Err(ScpError::ContourTrace(format!(
            "Newton refinement left residual {:e} at {x:?} after {NEWTON_MAX_ITER} iterations",
            r.abs()
        )));
    }
    Ok(x)
}
