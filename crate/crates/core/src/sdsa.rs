//! Stochastic Dual Simplex Algorithm.
//!
//! Two Nelder-Mead style simplexes are advanced side by side with randomly
//! drawn reflection, expansion and contraction coefficients. After each
//! move, the worst vertex of every simplex is offered a Gaussian
//! replacement aligned with the summed centroid of all simplexes; a
//! replacement is kept only when it improves on the vertex it replaces.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdsaError {
    #[error("objective returned NaN at {point:?}")]
    ObjectiveFailure { point: Vec<f64> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
}

/// Shrink factor used when neither reflection nor contraction improves.
const SHRINK: f64 = 0.5;

/// Normalized volume below which a simplex is considered collapsed.
pub const DEGENERACY_TOL: f64 = 1e-6;

/// Restart edge, as a fraction of `a_max`, used once every simplex has
/// converged while iterations remain.
pub const RESTART_SCALE: f64 = 0.1;

/// Regularization added to the vertex covariance.
const COVARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdsaConfig {
    /// Initial simplex edge length cap.
    pub a_max: f64,
    pub alpha_max: f64,
    pub gamma_max: f64,
    pub beta_max: f64,
    pub i_max: usize,
    pub n_simplexes: usize,
    pub seed: u64,
    /// Stop once every simplex is smaller than this diameter.
    pub tol_diameter: f64,
    pub stochastic_replacement: bool,
}

impl Default for SdsaConfig {
    fn default() -> Self {
        Self {
            a_max: 10.5907,
            alpha_max: 9.7323,
            gamma_max: 9.9185,
            beta_max: 0.4679,
            i_max: 979,
            n_simplexes: 2,
            seed: 0,
            tol_diameter: 1e-9,
            stochastic_replacement: true,
        }
    }
}

impl SdsaConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SdsaError> {
        let bad = |m: &str| Err(SdsaError::InvalidConfig(m.to_string()));
        if !(self.a_max > 0.0) {
            return bad("a_max must be > 0");
        }
        if !(self.alpha_max > 0.0) {
            return bad("alpha_max must be > 0");
        }
        if !(self.gamma_max > 1.0) {
            return bad("gamma_max must be > 1");
        }
        if !(0.0..=1.0).contains(&self.beta_max) || self.beta_max == 0.0 {
            return bad("beta_max must lie in (0, 1]");
        }
        if self.i_max < 1 {
            return bad("i_max must be >= 1");
        }
        if self.n_simplexes < 1 {
            return bad("need at least one simplex");
        }
        if !(self.tol_diameter >= 0.0) {
            return bad("tol_diameter must be >= 0");
        }
        Ok(())
    }
}

/// Axis-aligned search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SdsaError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(SdsaError::InvalidBounds("length mismatch or empty".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(SdsaError::InvalidBounds("each lower must be < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, SdsaError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

pub fn reflect(centroid: &[f64], worst: &[f64], alpha: f64) -> Vec<f64> {
    centroid
        .iter()
        .zip(worst)
        .map(|(c, h)| (1.0 + alpha) * c - alpha * h)
        .collect()
}

pub fn expand(reflected: &[f64], centroid: &[f64], gamma: f64) -> Vec<f64> {
    reflected
        .iter()
        .zip(centroid)
        .map(|(r, c)| gamma * r + (1.0 - gamma) * c)
        .collect()
}

pub fn contract(worst: &[f64], centroid: &[f64], beta: f64) -> Vec<f64> {
    worst
        .iter()
        .zip(centroid)
        .map(|(h, c)| beta * h + (1.0 - beta) * c)
        .collect()
}

/// `n + 1` vertices in `R^n` with their objective values.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    vertices: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Simplex {
    pub fn new(vertices: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self, SdsaError> {
        let n = vertices.first().map_or(0, Vec::len);
        if n == 0 || vertices.len() != n + 1 || values.len() != n + 1 {
            return Err(SdsaError::InvalidConfig("simplex needs n+1 vertices in R^n".into()));
        }
        if vertices.iter().any(|v| v.len() != n) {
            return Err(SdsaError::InvalidConfig("ragged simplex".into()));
        }
        Ok(Self { vertices, values })
    }

    fn evaluate<F>(vertices: Vec<Vec<f64>>, f: &F) -> Result<Self, SdsaError>
    where
        F: Fn(&[f64]) -> f64,
    {
        let values = vertices
            .iter()
            .map(|v| eval(f, v))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(vertices, values)
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn worst_index(&self) -> usize {
        argmax(&self.values)
    }

    pub fn best_index(&self) -> usize {
        argmin(&self.values)
    }

    pub fn best(&self) -> (&[f64], f64) {
        let i = self.best_index();
        (&self.vertices[i], self.values[i])
    }

    /// Centroid of all vertices except the worst.
    pub fn centroid(&self) -> Vec<f64> {
        self.centroid_excluding(self.worst_index())
    }

    fn centroid_excluding(&self, skip: usize) -> Vec<f64> {
        let n = self.dim();
        let mut c = vec![0.0; n];
        for (i, v) in self.vertices.iter().enumerate() {
            if i != skip {
                for (ci, vi) in c.iter_mut().zip(v) {
                    *ci += vi;
                }
            }
        }
        c.iter_mut().for_each(|ci| *ci /= n as f64);
        c
    }

    pub fn reflect(&self, alpha: f64) -> Vec<f64> {
        reflect(&self.centroid(), &self.vertices[self.worst_index()], alpha)
    }

    /// Largest vertex-to-vertex distance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max(dist(a, b));
            }
        }
        d
    }

    /// Volume of the simplex relative to that of a cube with side equal to
    /// the diameter; near zero when the vertices have collapsed onto a
    /// lower-dimensional subspace.
    pub fn normalized_volume(&self) -> f64 {
        let n = self.dim();
        let d = self.diameter();
        if d == 0.0 {
            return 0.0;
        }
        let v0 = &self.vertices[0];
        let edges = DMatrix::from_fn(n, n, |i, j| (self.vertices[j + 1][i] - v0[i]) / d);
        edges.determinant().abs()
    }

    fn replace(&mut self, i: usize, x: Vec<f64>, fx: f64) {
        self.vertices[i] = x;
        self.values[i] = fx;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut k = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[k] {
            k = i;
        }
    }
    k
}

fn argmin(v: &[f64]) -> usize {
    let mut k = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[k] {
            k = i;
        }
    }
    k
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Result<f64, SdsaError> {
    let v = f(x);
    if v.is_nan() {
        return Err(SdsaError::ObjectiveFailure { point: x.to_vec() });
    }
    Ok(v)
}

/// Operator coefficients for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Coefficients {
    pub const NELDER_MEAD: Coefficients = Coefficients {
        alpha: 1.0,
        gamma: 2.0,
        beta: 0.5,
    };

    /// Uniform draws in `(0, alpha_max]`, `(1, gamma_max]` and `(0, beta_max]`.
    pub fn sample<R: Rng>(config: &SdsaConfig, rng: &mut R) -> Self {
        let mut open_unit = || 1.0 - rng.random::<f64>();
        Self {
            alpha: config.alpha_max * open_unit(),
            gamma: 1.0 + (config.gamma_max - 1.0) * open_unit(),
            beta: config.beta_max * open_unit(),
        }
    }
}

/// Vertices of a regular simplex with unit edge, centred at the origin.
pub fn regular_simplex(n: usize) -> Vec<Vec<f64>> {
    let k = (1.0 - ((n + 1) as f64).sqrt()) / n as f64;
    let mut pts: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    pts.push(vec![k; n]);
    let mean: Vec<f64> = (0..n)
        .map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / (n + 1) as f64)
        .collect();
    let scale = 1.0 / 2f64.sqrt();
    pts.iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| (x - m) * scale).collect())
        .collect()
}

/// Regular simplex scaled per axis to `min(a_max, width/2)` and centred at a
/// uniform draw chosen so that every vertex lies inside the bounds.
pub fn initial_simplex<R: Rng>(bounds: &Bounds, a_max: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let n = bounds.dim();
    let unit = regular_simplex(n);
    let scales: Vec<f64> = (0..n)
        .map(|d| a_max.min(0.5 * (bounds.upper[d] - bounds.lower[d])))
        .collect();
    let center: Vec<f64> = (0..n)
        .map(|d| {
            let reach = unit.iter().map(|p| p[d].abs()).fold(0.0, f64::max) * scales[d];
            let lo = bounds.lower[d] + reach;
            let hi = bounds.upper[d] - reach;
            lo + (hi - lo) * rng.random::<f64>()
        })
        .collect();
    unit.iter()
        .map(|p| {
            let mut v: Vec<f64> = (0..n).map(|d| center[d] + p[d] * scales[d]).collect();
            bounds.clamp(&mut v);
            v
        })
        .collect()
}

/// Regular simplex with one vertex at `anchor`, per-axis edge
/// `min(edge, width/2)`, mirrored back into the bounds where needed.
pub fn simplex_around(anchor: &[f64], edge: f64, bounds: &Bounds) -> Vec<Vec<f64>> {
    let n = anchor.len();
    let unit = regular_simplex(n);
    unit.iter()
        .map(|p| {
            let mut x: Vec<f64> = (0..n)
                .map(|d| {
                    let e = edge.min(0.5 * (bounds.upper[d] - bounds.lower[d]));
                    let x = anchor[d] + (p[d] - unit[0][d]) * e;
                    if x < bounds.lower[d] || x > bounds.upper[d] {
                        2.0 * anchor[d] - x
                    } else {
                        x
                    }
                })
                .collect();
            bounds.clamp(&mut x);
            x
        })
        .collect()
}

/// Sample covariance of every vertex of every simplex plus a small ridge.
pub fn vertex_covariance(simplexes: &[Simplex]) -> DMatrix<f64> {
    let n = simplexes[0].dim();
    let pts: Vec<&Vec<f64>> = simplexes.iter().flat_map(|s| s.vertices.iter()).collect();
    let m = pts.len() as f64;
    let mean = pts
        .iter()
        .fold(DVector::zeros(n), |acc, p| acc + DVector::from_column_slice(p))
        / m;
    let mut cov = DMatrix::zeros(n, n);
    for p in &pts {
        let d = DVector::from_column_slice(p) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (m - 1.0).max(1.0);
    cov + DMatrix::identity(n, n) * COVARIANCE_FLOOR
}

/// Sum of the per-simplex centroids.
pub fn global_centroid(simplexes: &[Simplex]) -> Vec<f64> {
    let n = simplexes[0].dim();
    simplexes.iter().fold(vec![0.0; n], |mut acc, s| {
        for (a, c) in acc.iter_mut().zip(s.centroid()) {
            *a += c;
        }
        acc
    })
}

/// Draw `delta ~ N(0, cov)`.
pub fn gaussian_perturbation<R: Rng>(cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = cov.nrows();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let l = match cov.clone().cholesky() {
        Some(ch) => ch.l(),
        // Covariance is ridge-regularized; fall back to its diagonal anyway.
        None => DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(COVARIANCE_FLOOR).sqrt())),
    };
    l * z
}

/// Candidate replacement for the worst vertex of each simplex:
/// `x_h + (delta . c / |c|^2) c` with `c` the summed centroid, or
/// `x_h + delta` when `c` vanishes.
pub fn replacement_candidates<R: Rng>(simplexes: &[Simplex], rng: &mut R) -> Vec<Vec<f64>> {
    let cov = vertex_covariance(simplexes);
    let c = DVector::from_vec(global_centroid(simplexes));
    let c2 = c.norm_squared();
    simplexes
        .iter()
        .map(|s| {
            let delta = gaussian_perturbation(&cov, rng);
            let step = if c2 > 0.0 {
                &c * (delta.dot(&c) / c2)
            } else {
                delta
            };
            let h = &s.vertices[s.worst_index()];
            h.iter().zip(step.iter()).map(|(x, d)| x + d).collect()
        })
        .collect()
}

/// Greedy stochastic replacement of every simplex's worst vertex.
pub fn stochastic_replace<F, R>(
    simplexes: &mut [Simplex],
    objective: &F,
    bounds: &Bounds,
    rng: &mut R,
) -> Result<usize, SdsaError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng,
{
    let mut candidates = replacement_candidates(simplexes, rng);
    candidates.iter_mut().for_each(|x| bounds.clamp(x));
    let values = par_eval(objective, &candidates)?;
    let mut accepted = 0;
    for ((s, x), fx) in simplexes.iter_mut().zip(candidates).zip(values) {
        let h = s.worst_index();
        if fx < s.values[h] {
            s.replace(h, x, fx);
            accepted += 1;
        }
    }
    Ok(accepted)
}

fn par_eval<F>(objective: &F, points: &[Vec<f64>]) -> Result<Vec<f64>, SdsaError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    use rayon::prelude::*;
    points.par_iter().map(|x| eval(objective, x)).collect()
}

/// One reflection / expansion / contraction move on a simplex. When the
/// contraction fails the simplex either shrinks toward its best vertex or,
/// with `shrink == false`, is left for the next draw of coefficients.
fn simplex_move<F>(
    s: &mut Simplex,
    coeff: &Coefficients,
    shrink: bool,
    objective: &F,
    bounds: &Bounds,
) -> Result<(), SdsaError>
where
    F: Fn(&[f64]) -> f64,
{
    let n = s.dim();
    let h = s.worst_index();
    let l = s.best_index();
    let second_worst = (0..=n)
        .filter(|i| *i != h)
        .map(|i| s.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let centroid = s.centroid_excluding(h);

    let mut xr = reflect(&centroid, &s.vertices[h], coeff.alpha);
    bounds.clamp(&mut xr);
    let fr = eval(objective, &xr)?;

    if fr < s.values[l] {
        let mut xe = expand(&xr, &centroid, coeff.gamma);
        bounds.clamp(&mut xe);
        let fe = eval(objective, &xe)?;
        if fe < fr {
            s.replace(h, xe, fe);
        } else {
            s.replace(h, xr, fr);
        }
        return Ok(());
    }
    if fr < second_worst {
        s.replace(h, xr, fr);
        return Ok(());
    }
    if fr < s.values[h] {
        s.replace(h, xr, fr);
    }
    let mut xc = contract(&s.vertices[h], &centroid, coeff.beta);
    bounds.clamp(&mut xc);
    let fc = eval(objective, &xc)?;
    if fc < s.values[h] {
        s.replace(h, xc, fc);
        return Ok(());
    }
    if !shrink {
        return Ok(());
    }
    let best = s.vertices[l].clone();
    for i in 0..=n {
        if i == l {
            continue;
        }
        let x: Vec<f64> = best
            .iter()
            .zip(&s.vertices[i])
            .map(|(b, v)| b + SHRINK * (v - b))
            .collect();
        let fx = eval(objective, &x)?;
        s.replace(i, x, fx);
    }
    Ok(())
}

/// Replace a collapsed simplex by a regular one of the same diameter that
/// keeps the best vertex. Returns whether a rebuild happened.
fn restore_if_degenerate<F>(s: &mut Simplex, objective: &F, bounds: &Bounds) -> Result<bool, SdsaError>
where
    F: Fn(&[f64]) -> f64,
{
    let edge = s.diameter();
    if edge == 0.0 || s.normalized_volume() >= DEGENERACY_TOL {
        return Ok(false);
    }
    let l = s.best_index();
    let fbest = s.values[l];
    let vertices = simplex_around(&s.vertices[l].clone(), edge, bounds);
    let mut values = vec![fbest];
    for x in &vertices[1..] {
        values.push(eval(objective, x)?);
    }
    *s = Simplex { vertices, values };
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub evaluations: usize,
    pub best_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    IterationLimit,
    Converged,
    EvaluationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<HistoryEntry>,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Wraps an objective to count evaluations across threads.
struct Counted<'a, F> {
    f: &'a F,
    count: std::sync::atomic::AtomicUsize,
}

impl<'a, F: Fn(&[f64]) -> f64> Counted<'a, F> {
    fn new(f: &'a F) -> Self {
        Self {
            f,
            count: std::sync::atomic::AtomicUsize::new(0),
        }
    }

    fn call(&self, x: &[f64]) -> f64 {
        self.count.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        (self.f)(x)
    }

    fn count(&self) -> usize {
        self.count.load(std::sync::atomic::Ordering::Relaxed)
    }
}

/// Minimize `objective` over `bounds` with randomly initialized simplexes.
pub fn minimize<F>(objective: F, bounds: &Bounds, config: &SdsaConfig) -> Result<MinimizeResult, SdsaError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<Vec<f64>>> = (0..config.n_simplexes)
        .map(|_| initial_simplex(bounds, config.a_max, &mut rng))
        .collect();
    minimize_from(objective, bounds, config, starts, rng)
}

/// Minimize starting from the given simplex vertex sets (one per simplex).
pub fn minimize_from_simplexes<F>(
    objective: F,
    bounds: &Bounds,
    config: &SdsaConfig,
    starts: Vec<Vec<Vec<f64>>>,
) -> Result<MinimizeResult, SdsaError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    minimize_from(objective, bounds, config, starts, rng)
}

fn minimize_from<F>(
    objective: F,
    bounds: &Bounds,
    config: &SdsaConfig,
    starts: Vec<Vec<Vec<f64>>>,
    mut rng: ChaCha8Rng,
) -> Result<MinimizeResult, SdsaError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    use rayon::prelude::*;

    if starts.iter().flatten().any(|v| v.len() != bounds.dim()) {
        return Err(SdsaError::InvalidBounds("start dimension differs from bounds".into()));
    }
    let counted = Counted::new(&objective);
    let f = |x: &[f64]| counted.call(x);
    let mut simplexes = starts
        .into_par_iter()
        .map(|v| Simplex::evaluate(v, &f))
        .collect::<Result<Vec<_>, _>>()?;

    let best_of = |ss: &[Simplex]| -> (Vec<f64>, f64) {
        ss.iter()
            .map(|s| {
                let (x, v) = s.best();
                (x.to_vec(), v)
            })
            .fold((Vec::new(), f64::INFINITY), |acc, b| if b.1 < acc.1 || acc.0.is_empty() { b } else { acc })
    };

    let mut history = Vec::with_capacity(config.i_max + 1);
    let (mut best_point, mut best_value) = best_of(&simplexes);
    history.push(HistoryEntry {
        iteration: 0,
        evaluations: counted.count(),
        best_value,
    });
    let mut termination = Termination::IterationLimit;
    let mut last_restart = None;

    for iteration in 1..=config.i_max {
        let coeff = Coefficients::sample(config, &mut rng);
        simplexes
            .par_iter_mut()
            .try_for_each(|s| {
                simplex_move(s, &coeff, false, &f, bounds)?;
                restore_if_degenerate(s, &f, bounds).map(|_| ())
            })?;
        if config.stochastic_replacement {
            stochastic_replace(&mut simplexes, &f, bounds, &mut rng)?;
        }
        let (x, v) = best_of(&simplexes);
        if v < best_value {
            best_value = v;
            best_point = x;
        }
        history.push(HistoryEntry {
            iteration,
            evaluations: counted.count(),
            best_value,
        });
        if simplexes.iter().all(|s| s.diameter() < config.tol_diameter) {
            if last_restart == Some(best_value) {
                termination = Termination::Converged;
                break;
            }
            last_restart = Some(best_value);
            simplexes = simplexes
                .iter()
                .map(|s| {
                    let v = simplex_around(s.best().0, config.a_max * RESTART_SCALE, bounds);
                    Simplex::evaluate(v, &f)
                })
                .collect::<Result<Vec<_>, _>>()?;
        }
    }
    Ok(MinimizeResult {
        best_point,
        best_value,
        history,
        evaluations: counted.count(),
        termination,
    })
}

/// Single-simplex Nelder-Mead with fixed coefficients (1, 2, 0.5), used as a
/// baseline. Stops after `max_evaluations` objective calls or once the
/// simplex diameter drops below `tol_diameter`.
pub fn nelder_mead<F>(
    objective: F,
    bounds: &Bounds,
    a_max: f64,
    max_evaluations: usize,
    tol_diameter: f64,
    seed: u64,
) -> Result<MinimizeResult, SdsaError>
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counted = Counted::new(&objective);
    let f = |x: &[f64]| counted.call(x);
    let mut s = Simplex::evaluate(initial_simplex(bounds, a_max, &mut rng), &f)?;
    let mut history = vec![HistoryEntry {
        iteration: 0,
        evaluations: counted.count(),
        best_value: s.best().1,
    }];
    let mut iteration = 0;
    let mut termination = Termination::EvaluationLimit;
    while counted.count() < max_evaluations {
        if s.diameter() < tol_diameter {
            termination = Termination::Converged;
            break;
        }
        iteration += 1;
        simplex_move(&mut s, &Coefficients::NELDER_MEAD, true, &f, bounds)?;
        history.push(HistoryEntry {
            iteration,
            evaluations: counted.count(),
            best_value: s.best().1,
        });
    }
    let (x, v) = s.best();
    Ok(MinimizeResult {
        best_point: x.to_vec(),
        best_value: v,
        history,
        evaluations: counted.count(),
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect(&[1.0, 1.0], &[3.0, 0.0], 0.5), vec![0.0, 1.5]);
        let r = reflect(&[1.0, 2.0], &[4.0, -1.0], 1.0);
        assert_eq!(vec![(r[0] + 4.0) / 2.0, (r[1] - 1.0) / 2.0], vec![1.0, 2.0]);
        let same = reflect(&[0.3, 0.7], &[0.3, 0.7], 7.0);
        assert_relative_eq!(same[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(same[1], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn expand_examples() {
        assert_eq!(expand(&[1.0, 0.0], &[0.0, 0.0], 2.0), vec![2.0, 0.0]);
        assert_eq!(expand(&[0.5, 0.5], &[0.5, 0.5], 3.0), vec![0.5, 0.5]);
    }

    #[test]
    fn contract_examples() {
        let (h, c) = ([1.0, 1.0], [0.0, 0.0]);
        assert_eq!(contract(&h, &c, 0.0), c.to_vec());
        assert_eq!(contract(&h, &c, 1.0), h.to_vec());
        let x = contract(&h, &c, 0.4679);
        assert_relative_eq!(x[0], 0.4679);
        assert_relative_eq!(x[1], 0.4679);
    }

    #[test]
    fn regular_simplex_has_equal_edges() {
        for n in 1..7 {
            let pts = regular_simplex(n);
            assert_eq!(pts.len(), n + 1);
            for i in 0..=n {
                for j in i + 1..=n {
                    assert_relative_eq!(dist(&pts[i], &pts[j]), 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn initial_simplex_inside_bounds() {
        let b = Bounds::new(vec![0.0, 0.0, 0.005], vec![50.0, 30.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            for v in initial_simplex(&b, 10.5907, &mut rng) {
                for d in 0..3 {
                    assert!(v[d] >= b.lower[d] && v[d] <= b.upper[d]);
                }
            }
        }
    }

    #[test]
    fn coefficients_respect_caps() {
        let cfg = SdsaConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = Coefficients::sample(&cfg, &mut rng);
            assert!(c.alpha > 0.0 && c.alpha <= cfg.alpha_max);
            assert!(c.gamma > 1.0 && c.gamma <= cfg.gamma_max);
            assert!(c.beta > 0.0 && c.beta <= cfg.beta_max);
        }
    }

    #[test]
    fn degenerate_covariance_is_regularized() {
        let v = vec![vec![1.0, 2.0]; 3];
        let s = Simplex::new(v, vec![0.0; 3]).unwrap();
        let ss = vec![s.clone(), s];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for x in replacement_candidates(&ss, &mut rng) {
            assert!(x.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn gaussian_perturbation_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<DVector<f64>> = (0..1000).map(|_| gaussian_perturbation(&cov, &mut rng)).collect();
        let mean = draws.iter().fold(DVector::zeros(2), |a, d| a + d) / 1000.0;
        for k in 0..2 {
            let sigma = cov[(k, k)].sqrt();
            assert!(mean[k].abs() < 3.0 * sigma / 1000f64.sqrt(), "component {k}: {}", mean[k]);
        }
        let var0 = draws.iter().map(|d| (d[0] - mean[0]).powi(2)).sum::<f64>() / 999.0;
        assert!((var0 - 4.0).abs() < 0.5, "{var0}");
    }

    #[test]
    fn replacement_is_deterministic() {
        let b = Bounds::cube(3, -2.0, 2.0).unwrap();
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let ss: Vec<Simplex> = (0..2)
            .map(|_| Simplex::evaluate(initial_simplex(&b, 1.0, &mut r), &f).unwrap())
            .collect();
        let a = replacement_candidates(&ss, &mut ChaCha8Rng::seed_from_u64(42));
        let c = replacement_candidates(&ss, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, c);
    }

    #[test]
    fn nan_objective_is_reported() {
        let b = Bounds::cube(2, -1.0, 1.0).unwrap();
        let r = minimize(|x: &[f64]| if x[0] > 0.0 { f64::NAN } else { 0.0 }, &b, &SdsaConfig::default());
        assert!(matches!(r, Err(SdsaError::ObjectiveFailure { .. })));
    }

    #[test]
    fn constant_objective_terminates() {
        let b = Bounds::cube(3, -1.0, 1.0).unwrap();
        let r = minimize(|_: &[f64]| 4.0, &b, &SdsaConfig::default()).unwrap();
        assert_eq!(r.best_value, 4.0);
        assert_eq!(r.best_point.len(), 3);
    }

    #[test]
    fn config_validation() {
        let mut c = SdsaConfig::default();
        c.validate().unwrap();
        c.gamma_max = 1.0;
        assert!(c.validate().is_err());
        let c = SdsaConfig { i_max: 0, ..SdsaConfig::default() };
        assert!(c.validate().is_err());
    }
}
