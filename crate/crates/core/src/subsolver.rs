//! Per-cluster relaxed subproblem and its log-barrier Newton solver.
//!
//! Cluster `i` owns `p_i = (ε_i, d_i, y_i, x_i)` constrained to the convex set
//!
//! ```text
//!   y − 2 xᵀa_k + ‖a_k‖² = ε_k,   ε_k ≥ d_k²,  d_k ≥ 0,   y ≥ ‖x‖²
//! ```
//!
//! (the two PSD blocks of the relaxation in their scalar Schur form), and
//! minimizes the Gaussian log-likelihood cost
//! `f_i = Σ_k σ_k⁻² (ε_k − 2 d_k r_k + r_k²)` plus whatever coupling terms the
//! ADMM update adds: a linear dual term `gᵀx` and quadratic anchors
//! `Σ_j (w_j/2)‖x − z_j‖²`.
//!
//! The solver eliminates `ε` through the affine link, leaving `(x, y, d)`, and
//! follows the central path of `F + μΦ` with
//! `Φ = −Σ log(ε_k − d_k²) − Σ log d_k − log(y − ‖x‖²)`. Internally the problem
//! is translated to the sensor centroid (the relaxation is invariant under
//! `x ↦ x − c`, `y ↦ y − 2cᵀx + ‖c‖²`) and the objective is divided by `Σ_k w_k`,
//! so `μ` is relative to the data scale. The path end point is refined by
//! Newton on the cost with `d = √ε` substituted (see [`BarrierProblem::polish`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, MeasurementSet, Scenario};

/// Standard deviations below this are lifted when forming weights.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Feasibility tolerance used by [`verify_constraints`].
pub const FEASIBILITY_TOL: f64 = 1e-6;

pub fn weight_for_sigma(sigma: f64) -> f64 {
    sigma.max(SIGMA_FLOOR).powi(-2)
}

/// Relaxed local decision vector `p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub eps: Vec<f64>,
    pub d: Vec<f64>,
    pub y: f64,
    pub x: Vec<f64>,
}

impl LocalState {
    /// The all-zero vector used to seed ADMM.
    pub fn zeros(sensors: usize, dim: usize) -> Self {
        Self {
            eps: vec![0.0; sensors],
            d: vec![0.0; sensors],
            y: 0.0,
            x: vec![0.0; dim],
        }
    }

    /// `J_i p_i`: the position block of the local vector.
    pub fn position(&self) -> &[f64] {
        &self.x
    }

    /// Lift a position to the tight point of the relaxation using given ranges:
    /// `d = r`, `ε = d²`, `y = ‖x‖²`. Used for sanity checks and tests.
    pub fn tight(x: &[f64], ranges: &[f64]) -> Self {
        Self {
            eps: ranges.iter().map(|r| r * r).collect(),
            d: ranges.to_vec(),
            y: dot(x, x),
            x: x.to_vec(),
        }
    }
}

/// Sensor data a cluster head works with: positions, ranges and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalData {
    pub dim: usize,
    pub positions: Vec<Vec<f64>>,
    pub ranges: Vec<f64>,
    /// `σ⁻²` with `σ` floored at [`SIGMA_FLOOR`].
    pub weights: Vec<f64>,
}

impl LocalData {
    pub fn from_cluster(cluster: &Cluster, ranges: &[f64]) -> Result<Self> {
        if ranges.len() != cluster.len() {
            return Err(Error::InvalidInput(format!(
                "cluster {} has {} sensors but {} ranges",
                cluster.id,
                cluster.len(),
                ranges.len()
            )));
        }
        let dim = cluster.sensors.first().map_or(0, |s| s.position.len());
        Ok(Self {
            dim,
            positions: cluster.sensors.iter().map(|s| s.position.clone()).collect(),
            ranges: ranges.to_vec(),
            weights: cluster.sensors.iter().map(|s| weight_for_sigma(s.sigma)).collect(),
        })
    }

    /// Union of every cluster's sensors, for the centralized baseline.
    pub fn merged(scenario: &Scenario, measurements: &MeasurementSet) -> Result<Self> {
        let mut out = Self {
            dim: scenario.dimension,
            positions: Vec::new(),
            ranges: Vec::new(),
            weights: Vec::new(),
        };
        for (i, c) in scenario.clusters.iter().enumerate() {
            let part = Self::from_cluster(c, measurements.cluster(i))?;
            out.positions.extend(part.positions);
            out.ranges.extend(part.ranges);
            out.weights.extend(part.weights);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in &self.positions {
            axpy(&mut c, 1.0, p);
        }
        let n = self.positions.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    /// `Σ w_k (ε_k − 2 d_k r_k + r_k²)`.
    pub fn cost(&self, state: &LocalState) -> f64 {
        self.weights
            .iter()
            .zip(&self.ranges)
            .zip(state.eps.iter().zip(&state.d))
            .map(|((w, r), (e, d))| w * (e - 2.0 * d * r + r * r))
            .sum()
    }
}

/// Gaussian local cost `f_i` with the cluster's raw `σ` values.
///
/// A zero `σ` means infinite weight and is rejected; callers that want the
/// floored weights should use [`LocalData::cost`].
pub fn local_cost(cluster: &Cluster, ranges: &[f64], state: &LocalState) -> Result<f64> {
    let n = cluster.len();
    if ranges.len() != n || state.eps.len() != n || state.d.len() != n {
        return Err(Error::InvalidInput(format!(
            "cluster {} has {n} sensors; got {} ranges, {} eps, {} d",
            cluster.id,
            ranges.len(),
            state.eps.len(),
            state.d.len()
        )));
    }
    if let Some(s) = cluster.sensors.iter().find(|s| s.sigma <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "cluster {} sensor {} has sigma {}; floor it before evaluating the cost",
            cluster.id, s.id, s.sigma
        )));
    }
    Ok(cluster
        .sensors
        .iter()
        .zip(ranges)
        .zip(state.eps.iter().zip(&state.d))
        .map(|((s, r), (e, d))| (e - 2.0 * d * r + r * r) / (s.sigma * s.sigma))
        .sum())
}

/// Signed constraint residuals; positive entries are violations, except
/// `link` which should be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// `y − 2xᵀa_k + ‖a_k‖² − ε_k`.
    pub link: Vec<f64>,
    /// `d_k² − ε_k` (Schur form of `[[1, d], [d, ε]] ⪰ 0`).
    pub distance_schur: Vec<f64>,
    /// `−d_k`.
    pub distance_sign: Vec<f64>,
    /// `−ε_k`.
    pub eps_sign: Vec<f64>,
    /// `‖x‖² − y` (Schur form of `[[1, xᵀ], [x, y]] ⪰ 0`).
    pub position_schur: f64,
    /// `−y`.
    pub y_sign: f64,
    pub max_violation: f64,
    pub feasible: bool,
}

pub fn verify_constraints(positions: &[Vec<f64>], state: &LocalState) -> ConstraintReport {
    let link: Vec<f64> = positions
        .iter()
        .zip(&state.eps)
        .map(|(a, e)| state.y - 2.0 * dot(&state.x, a) + dot(a, a) - e)
        .collect();
    let distance_schur: Vec<f64> = state.d.iter().zip(&state.eps).map(|(d, e)| d * d - e).collect();
    let distance_sign: Vec<f64> = state.d.iter().map(|d| -d).collect();
    let eps_sign: Vec<f64> = state.eps.iter().map(|e| -e).collect();
    let position_schur = dot(&state.x, &state.x) - state.y;
    let y_sign = -state.y;
    let max_violation = link
        .iter()
        .map(|v| v.abs())
        .chain(distance_schur.iter().copied())
        .chain(distance_sign.iter().copied())
        .chain(eps_sign.iter().copied())
        .chain([position_schur, y_sign])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    ConstraintReport {
        link,
        distance_schur,
        distance_sign,
        eps_sign,
        position_schur,
        y_sign,
        max_violation,
        feasible: max_violation <= FEASIBILITY_TOL,
    }
}

/// How a cluster picks neighbour estimates within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateScheme {
    /// Sequential: lower-numbered neighbours have already published `t + 1`.
    GaussSeidel,
    /// Parallel: everyone uses iteration-`t` data, plus a proximal term.
    Jacobi,
}

/// Where a quadratic anchor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSource {
    /// Neighbour cluster (0-based) and the iteration stamp of its estimate.
    Neighbor { cluster: usize, iteration: usize },
    /// The cluster's own previous estimate (self term, merged with the
    /// proximal term for the Jacobi scheme).
    Own { iteration: usize },
}

/// `(w/2)‖x − target‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadAnchor {
    pub weight: f64,
    pub target: Vec<f64>,
    pub source: AnchorSource,
}

/// One cluster's update problem:
/// `f_i(p) + linearᵀx + constant + Σ (w_j/2)‖x − z_j‖²` over `P_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    /// 0-based cluster index (`usize::MAX` for the centralized problem).
    pub cluster: usize,
    pub data: LocalData,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub anchors: Vec<QuadAnchor>,
    pub scheme: Option<UpdateScheme>,
}

impl SubproblemSpec {
    /// The bare relaxation with no coupling terms.
    pub fn isolated(cluster: usize, data: LocalData) -> Self {
        let dim = data.dim;
        Self {
            cluster,
            data,
            linear: vec![0.0; dim],
            constant: 0.0,
            anchors: Vec::new(),
            scheme: None,
        }
    }

    pub fn objective(&self, state: &LocalState) -> f64 {
        let quad: f64 = self
            .anchors
            .iter()
            .map(|a| 0.5 * a.weight * dist2(&state.x, &a.target))
            .sum();
        self.data.cost(state) + dot(&self.linear, &state.x) + self.constant + quad
    }

    fn validate(&self) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::InvalidInput("subproblem has no sensors".into()));
        }
        let dim = self.data.dim;
        if self.linear.len() != dim
            || self.data.positions.iter().any(|p| p.len() != dim)
            || self.anchors.iter().any(|a| a.target.len() != dim)
            || self.data.weights.len() != self.data.len()
            || self.data.positions.len() != self.data.len()
        {
            return Err(Error::InvalidInput("subproblem dimensions are inconsistent".into()));
        }
        if let Some(a) = self.anchors.iter().find(|a| !(a.weight > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "anchor weight must be positive (got {})",
                a.weight
            )));
        }
        let finite = self.data.ranges.iter().all(|v| v.is_finite())
            && self.data.weights.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.linear.iter().all(|v| v.is_finite())
            && self.anchors.iter().all(|a| a.target.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidInput("subproblem contains non-finite data".into()));
        }
        Ok(())
    }
}

/// Supplies iteration-stamped neighbour estimates to the assembler.
pub trait EstimateSource {
    fn estimate(&self, cluster: usize, iteration: usize) -> Option<&[f64]>;
}

/// Coupling parameters of one ADMM update.
#[derive(Debug, Clone, Copy)]
pub struct Coupling {
    pub rho: f64,
    /// Proximal coefficient `γ_i`; ignored by the Gauss-Seidel scheme.
    pub gamma: f64,
    pub scheme: UpdateScheme,
    /// Current iteration `t`; the update produces `p_i^{t+1}`.
    pub iteration: usize,
}

/// Assemble cluster `i`'s update problem.
///
/// `neighbors` are the active neighbours `B_i` and `duals[n]` is the oriented
/// multiplier `λ_{i,j}` for `neighbors[n]`. Each neighbour contributes
/// `λ_{i,j}ᵀ(x − x_j) + (ρ/2)‖x − x_j‖²` using `x_j^{t+1}` for `j < i` under
/// Gauss-Seidel and `x_j^t` otherwise. The self term `(ρ/2)‖x − x_i^t‖²` is
/// always present; Jacobi adds `(ργ_i/2)‖x − x_i^t‖²` on top, merged into one
/// anchor of weight `ρ(1 + γ_i)`.
pub fn assemble_subproblem(
    cluster: usize,
    data: LocalData,
    neighbors: &[usize],
    duals: &[Vec<f64>],
    source: &dyn EstimateSource,
    coupling: Coupling,
) -> Result<SubproblemSpec> {
    if !(coupling.rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be positive (got {})", coupling.rho)));
    }
    if !(coupling.gamma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must be nonnegative (got {})",
            coupling.gamma
        )));
    }
    if duals.len() != neighbors.len() {
        return Err(Error::InvalidInput(format!(
            "{} neighbours but {} dual vectors",
            neighbors.len(),
            duals.len()
        )));
    }
    let dim = data.dim;
    let t = coupling.iteration;
    let rho = coupling.rho;
    let mut linear = vec![0.0; dim];
    let mut constant = 0.0;
    let mut anchors = Vec::with_capacity(neighbors.len() + 1);
    for (&j, lambda) in neighbors.iter().zip(duals) {
        let stamp = match coupling.scheme {
            UpdateScheme::GaussSeidel if j < cluster => t + 1,
            _ => t,
        };
        let xj = source.estimate(j, stamp).ok_or_else(|| {
            Error::Protocol(format!(
                "cluster {} is missing the iteration-{stamp} estimate of neighbour {}",
                cluster + 1,
                j + 1
            ))
        })?;
        if xj.len() != dim || lambda.len() != dim {
            return Err(Error::InvalidInput(format!(
                "neighbour {} estimate or dual has the wrong dimension",
                j + 1
            )));
        }
        axpy(&mut linear, 1.0, lambda);
        constant -= dot(lambda, xj);
        anchors.push(QuadAnchor {
            weight: rho,
            target: xj.to_vec(),
            source: AnchorSource::Neighbor { cluster: j, iteration: stamp },
        });
    }
    let own = source.estimate(cluster, t).ok_or_else(|| {
        Error::Protocol(format!(
            "cluster {} has no iteration-{t} estimate of its own",
            cluster + 1
        ))
    })?;
    let self_weight = match coupling.scheme {
        UpdateScheme::GaussSeidel => rho,
        UpdateScheme::Jacobi => rho * (1.0 + coupling.gamma),
    };
    anchors.push(QuadAnchor {
        weight: self_weight,
        target: own.to_vec(),
        source: AnchorSource::Own { iteration: t },
    });
    Ok(SubproblemSpec {
        cluster,
        data,
        linear,
        constant,
        anchors,
        scheme: Some(coupling.scheme),
    })
}

/// Path-following parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierSettings {
    pub mu0: f64,
    pub mu_shrink: f64,
    pub mu_min: f64,
    /// Centering stops when half the squared Newton decrement of `F/μ + Φ`
    /// is below this.
    pub newton_tol: f64,
    /// Newton iterations allowed per barrier weight.
    pub max_newton: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking factor.
    pub backtrack: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            mu_shrink: 0.2,
            mu_min: 1e-9,
            newton_tol: 1e-8,
            max_newton: 100,
            armijo: 0.3,
            backtrack: 0.5,
        }
    }
}

impl BarrierSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0 > 0.0
            && self.mu_min > 0.0
            && self.mu_min <= self.mu0
            && self.mu_shrink > 0.0
            && self.mu_shrink < 1.0
            && self.newton_tol > 0.0
            && self.max_newton > 0
            && self.armijo > 0.0
            && self.armijo < 0.5
            && self.backtrack > 0.0
            && self.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid barrier settings {self:?}")))
        }
    }
}

/// Diagnostics from one barrier solve.
#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub newton_steps: usize,
    /// `(μ, spec objective)` after each centering.
    pub path: Vec<(f64, f64)>,
}

/// Barrier objective over `z = (x − c, y', d)` in centered, scaled coordinates.
///
/// Exposed so derivative checks can be run against it.
#[derive(Debug, Clone)]
pub struct BarrierProblem {
    dim: usize,
    center: Vec<f64>,
    /// Centered sensor positions.
    a: Vec<Vec<f64>>,
    a2: Vec<f64>,
    ranges: Vec<f64>,
    /// Weights divided by `scale`.
    w: Vec<f64>,
    linear: Vec<f64>,
    anchors: Vec<(f64, Vec<f64>)>,
    scale: f64,
}

impl BarrierProblem {
    pub fn new(spec: &SubproblemSpec) -> Self {
        let data = &spec.data;
        let center = data.centroid();
        let scale: f64 = data.weights.iter().sum();
        let a: Vec<Vec<f64>> = data.positions.iter().map(|p| sub(p, &center)).collect();
        let a2 = a.iter().map(|v| dot(v, v)).collect();
        Self {
            dim: data.dim,
            a,
            a2,
            ranges: data.ranges.clone(),
            w: data.weights.iter().map(|w| w / scale).collect(),
            linear: spec.linear.iter().map(|g| g / scale).collect(),
            anchors: spec
                .anchors
                .iter()
                .map(|q| (q.weight / scale, sub(&q.target, &center)))
                .collect(),
            scale,
            center,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.dim + 1 + self.ranges.len()
    }

    /// Normalization applied to the objective.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn eps(&self, z: &[f64], k: usize) -> f64 {
        let x = &z[..self.dim];
        z[self.dim] - 2.0 * dot(x, &self.a[k]) + self.a2[k]
    }

    /// Strictly feasible starting point: centroid, a lift matching the mean
    /// squared range (at least 1), shrunken ranges.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.n_vars()];
        let n = self.ranges.len().max(1) as f64;
        let lift = self
            .ranges
            .iter()
            .zip(&self.a2)
            .map(|(r, a2)| r * r - a2)
            .sum::<f64>()
            / n;
        z[self.dim] = lift.max(1.0);
        for k in 0..self.ranges.len() {
            let e = self.eps(&z, k);
            z[self.dim + 1 + k] = self.ranges[k].max(1e-3).min(0.9 * e.sqrt());
        }
        z
    }

    /// Barrier parameter `ν = 2N + 1`.
    pub fn barrier_parameter(&self) -> f64 {
        (2 * self.ranges.len() + 1) as f64
    }

    /// Lower bound of the scaled objective over the feasible set: the data
    /// cost is nonnegative there, and the linear-plus-anchor part is a convex
    /// quadratic in `x`.
    fn objective_lower_bound(&self) -> Option<f64> {
        let total: f64 = self.anchors.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return self.linear.iter().all(|g| *g == 0.0).then_some(0.0);
        }
        let mut x = vec![0.0; self.dim];
        for (w, t) in &self.anchors {
            axpy(&mut x, w / total, t);
        }
        axpy(&mut x, -1.0 / total, &self.linear);
        let quad: f64 = self.anchors.iter().map(|(w, t)| 0.5 * w * dist2(&x, t)).sum();
        Some(dot(&self.linear, &x) + quad)
    }

    /// First barrier weight: at least `mu0`, and large enough that the start
    /// is within `ν` barrier units of optimal, which keeps damped Newton short.
    pub fn initial_mu(&self, z: &[f64], mu0: f64) -> f64 {
        let f0 = self.value(z, 0.0);
        match (f0, self.objective_lower_bound()) {
            (Some(f0), Some(lb)) => mu0.max((f0 - lb) / self.barrier_parameter()),
            _ => mu0,
        }
    }

    pub fn from_state(&self, state: &LocalState) -> Vec<f64> {
        let xc = sub(&state.x, &self.center);
        let mut z = xc.clone();
        z.push(state.y - dot(&state.x, &state.x) + dot(&xc, &xc));
        z.extend_from_slice(&state.d);
        z
    }

    pub fn to_state(&self, z: &[f64]) -> LocalState {
        let xc = &z[..self.dim];
        let x: Vec<f64> = xc.iter().zip(&self.center).map(|(a, b)| a + b).collect();
        // y − ‖x‖² is preserved exactly from the centered slack.
        let y = z[self.dim] - dot(xc, xc) + dot(&x, &x);
        LocalState {
            eps: (0..self.ranges.len()).map(|k| self.eps(z, k)).collect(),
            d: z[self.dim + 1..].to_vec(),
            y,
            x,
        }
    }

    /// Scaled objective plus `μΦ`, or `None` outside the strict interior.
    pub fn value(&self, z: &[f64], mu: f64) -> Option<f64> {
        let dim = self.dim;
        let x = &z[..dim];
        let y = z[dim];
        let q = y - dot(x, x);
        if !(q > 0.0) {
            return None;
        }
        let mut obj = dot(&self.linear, x);
        let mut bar = -q.ln();
        for k in 0..self.ranges.len() {
            let d = z[dim + 1 + k];
            let e = self.eps(z, k);
            let s = e - d * d;
            if !(d > 0.0) || !(s > 0.0) {
                return None;
            }
            let r = self.ranges[k];
            obj += self.w[k] * (e - 2.0 * d * r + r * r);
            bar -= s.ln() + d.ln();
        }
        for (w, t) in &self.anchors {
            obj += 0.5 * w * dist2(x, t);
        }
        Some(obj + mu * bar)
    }

    /// Analytic gradient and Hessian of [`Self::value`].
    pub fn gradient_hessian(&self, z: &[f64], mu: f64) -> (DVector<f64>, DMatrix<f64>) {
        let dim = self.dim;
        let n = self.n_vars();
        let yi = dim;
        let x = &z[..dim];
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);

        // Objective.
        for i in 0..dim {
            g[i] += self.linear[i];
        }
        for (w, t) in &self.anchors {
            for i in 0..dim {
                g[i] += w * (x[i] - t[i]);
                h[(i, i)] += w;
            }
        }
        for k in 0..self.ranges.len() {
            let w = self.w[k];
            for i in 0..dim {
                g[i] -= 2.0 * w * self.a[k][i];
            }
            g[yi] += w;
            g[dim + 1 + k] -= 2.0 * w * self.ranges[k];
        }

        // −μ log(y − ‖x‖²): ∇q = (−2x, 1), ∇²q = −2I on x.
        let q = z[yi] - dot(x, x);
        let mut dq = vec![0.0; dim + 1];
        for i in 0..dim {
            dq[i] = -2.0 * x[i];
        }
        dq[yi] = 1.0;
        for i in 0..=dim {
            g[i] -= mu * dq[i] / q;
            for j in 0..=dim {
                h[(i, j)] += mu * dq[i] * dq[j] / (q * q);
            }
        }
        for i in 0..dim {
            h[(i, i)] += mu * 2.0 / q;
        }

        // −μ log(ε_k − d_k²) − μ log d_k.
        let mut ds = vec![0.0; dim + 2];
        for k in 0..self.ranges.len() {
            let di = dim + 1 + k;
            let d = z[di];
            let s = self.eps(z, k) - d * d;
            for i in 0..dim {
                ds[i] = -2.0 * self.a[k][i];
            }
            ds[dim] = 1.0;
            ds[dim + 1] = -2.0 * d;
            let idx = |m: usize| if m <= dim { m } else { di };
            for a in 0..dim + 2 {
                g[idx(a)] -= mu * ds[a] / s;
                for b in 0..dim + 2 {
                    h[(idx(a), idx(b))] += mu * ds[a] * ds[b] / (s * s);
                }
            }
            h[(di, di)] += mu * 2.0 / s;
            g[di] -= mu / d;
            h[(di, di)] += mu / (d * d);
        }
        (g, h)
    }

    /// Scaled objective at `v = (x, y)` with every `d_k = √ε_k`, the optimal
    /// choice for fixed `ε`. `None` if some `ε_k ≤ 0`.
    fn reduced_value(&self, v: &[f64]) -> Option<f64> {
        let x = &v[..self.dim];
        let mut f = dot(&self.linear, x);
        for k in 0..self.ranges.len() {
            let e = self.eps(v, k);
            if !(e > 0.0) {
                return None;
            }
            f += self.w[k] * (e.sqrt() - self.ranges[k]).powi(2);
        }
        for (w, t) in &self.anchors {
            f += 0.5 * w * dist2(x, t);
        }
        Some(f)
    }

    /// Gradient and Hessian of [`Self::reduced_value`] in `(x, y)`.
    fn reduced_gradient_hessian(&self, v: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let dim = self.dim;
        let x = &v[..dim];
        let mut g = DVector::zeros(dim + 1);
        let mut h = DMatrix::zeros(dim + 1, dim + 1);
        for i in 0..dim {
            g[i] += self.linear[i];
        }
        for (w, t) in &self.anchors {
            for i in 0..dim {
                g[i] += w * (x[i] - t[i]);
                h[(i, i)] += w;
            }
        }
        let mut de = vec![0.0; dim + 1];
        for k in 0..self.ranges.len() {
            let e = self.eps(v, k);
            let s = e.sqrt();
            let (w, r) = (self.w[k], self.ranges[k]);
            for i in 0..dim {
                de[i] = -2.0 * self.a[k][i];
            }
            de[dim] = 1.0;
            let first = w * (1.0 - r / s);
            let second = 0.5 * w * r / (e * s);
            for i in 0..=dim {
                g[i] += first * de[i];
                for j in 0..=dim {
                    h[(i, j)] += second * de[i] * de[j];
                }
            }
        }
        (g, h)
    }

    /// Point `(x, y)` for polish variables `u`: `u = (x, y)` off the surface,
    /// `u = x` with `y = ‖x‖²` on it.
    fn lift(&self, u: &[f64], surface: bool) -> Vec<f64> {
        let mut v = u.to_vec();
        if surface {
            v.push(dot(u, u));
        }
        v
    }

    fn polish_derivatives(&self, u: &[f64], surface: bool) -> (DVector<f64>, DMatrix<f64>) {
        let (g, h) = self.reduced_gradient_hessian(&self.lift(u, surface));
        if !surface {
            return (g, h);
        }
        // Chain rule through y = ‖x‖²: ∂y/∂x = 2x, ∂²y/∂x² = 2I.
        let dim = self.dim;
        let mut jac = DMatrix::zeros(dim + 1, dim);
        for i in 0..dim {
            jac[(i, i)] = 1.0;
            jac[(dim, i)] = 2.0 * u[i];
        }
        let gu = jac.transpose() * &g;
        let mut hu = jac.transpose() * h * &jac;
        for i in 0..dim {
            hu[(i, i)] += 2.0 * g[dim];
        }
        (gu, hu)
    }

    /// Damped Newton on the reduced cost from `u`.
    fn polish_minimize(&self, mut u: Vec<f64>, surface: bool) -> Option<(Vec<f64>, f64)> {
        let mut f = self.reduced_value(&self.lift(&u, surface))?;
        for _ in 0..POLISH_STEPS {
            let (g, h) = self.polish_derivatives(&u, surface);
            let Some(du) = regularized_direction(&h, &g) else { break };
            let slope = g.dot(&du);
            if !(slope < 0.0) || -0.5 * slope <= POLISH_TOL * (1.0 + f.abs()) {
                break;
            }
            let mut t = 1.0;
            let mut next = None;
            while t > 1e-12 {
                let trial: Vec<f64> = u.iter().zip(du.iter()).map(|(a, b)| a + t * b).collect();
                if let Some(ft) = self.reduced_value(&self.lift(&trial, surface)) {
                    if ft <= f + 0.3 * t * slope {
                        next = Some((trial, ft));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((trial, ft)) = next else { break };
            u = trial;
            f = ft;
        }
        Some((self.lift(&u, surface), f))
    }

    /// Refine a barrier solution with `d = √ε` eliminated and no barrier.
    ///
    /// Near the optimum the barrier leaves an `O(√μ)` offset along poorly
    /// observed directions; the reduced problem has no `1/μ` curvature and
    /// resolves them to rounding. The unconstrained reduced minimizer is used
    /// when it satisfies `y ≥ ‖x‖²`; otherwise the optimum lies on `y = ‖x‖²`
    /// and is refined there. Returns `None` unless the result is no worse.
    pub fn polish(&self, z: &[f64]) -> Option<Vec<f64>> {
        let dim = self.dim;
        let baseline = self.reduced_value(&z[..=dim])?;
        // Slack of y ≥ ‖x‖², with rounding-level violations lifted away.
        let lifted = |mut v: Vec<f64>| {
            let q = v[dim] - dot(&v[..dim], &v[..dim]);
            if q >= -POLISH_SLACK * (1.0 + v[dim].abs()) {
                v[dim] -= q.min(0.0);
                self.reduced_value(&v).map(|f| (v, f))
            } else {
                None
            }
        };
        let free = self.polish_minimize(z[..=dim].to_vec(), false).and_then(|(v, _)| lifted(v));
        let (v, f) = match free {
            Some(c) => c,
            None => self.polish_minimize(z[..dim].to_vec(), true)?,
        };
        if !(f <= baseline) {
            return None;
        }
        // Step back into the strict interior by a rounding-sized margin.
        let mut out = v;
        let q = out[dim] - dot(&out[..dim], &out[..dim]);
        out[dim] += (POLISH_SLACK * (1.0 + out[dim].abs()) - q).max(0.0);
        let d: Vec<f64> = (0..self.ranges.len())
            .map(|k| self.eps(&out, k).sqrt() * (1.0 - POLISH_SLACK))
            .collect();
        out.extend(d);
        self.value(&out, 0.0).map(|_| out)
    }
}

/// Newton steps allowed in [`BarrierProblem::polish`].
const POLISH_STEPS: usize = 50;
/// Relative half squared Newton decrement that ends the polish.
const POLISH_TOL: f64 = 1e-20;
/// Relative violation of `y ≥ ‖x‖²` treated as rounding, and the relative
/// margin by which polished points are moved inside.
const POLISH_SLACK: f64 = 1e-12;

/// Solve a subproblem to a strictly feasible near-optimal [`LocalState`].
pub fn solve_subproblem(spec: &SubproblemSpec, settings: &BarrierSettings) -> Result<LocalState> {
    solve_subproblem_with_report(spec, settings).map(|(s, _)| s)
}

pub fn solve_subproblem_with_report(
    spec: &SubproblemSpec,
    settings: &BarrierSettings,
) -> Result<(LocalState, SolveReport)> {
    settings.validate()?;
    spec.validate()?;
    let problem = BarrierProblem::new(spec);
    let mut z = problem.initial_point();
    if problem.value(&z, settings.mu0).is_none() {
        return Err(Error::InfeasibleStart(format!(
            "initial point is not interior for cluster index {}",
            spec.cluster
        )));
    }
    let mut report = SolveReport::default();
    let mut mu = problem.initial_mu(&z, settings.mu0);
    loop {
        report.newton_steps += center(&problem, &mut z, mu, settings)?;
        report.path.push((mu, spec.objective(&problem.to_state(&z))));
        if mu <= settings.mu_min {
            break;
        }
        mu = (mu * settings.mu_shrink).max(settings.mu_min);
    }
    if let Some(polished) = problem.polish(&z) {
        z = polished;
    }
    Ok((problem.to_state(&z), report))
}

/// Half squared Newton decrement of `f/μ + Φ` below which steps are taken
/// undamped (decrement below 1/4).
const QUADRATIC_REGION: f64 = 1.0 / 32.0;

/// Damped Newton centering at fixed `μ`. Returns the number of steps taken.
fn center(problem: &BarrierProblem, z: &mut [f64], mu: f64, s: &BarrierSettings) -> Result<usize> {
    let n = z.len();
    let mut decrement_half = f64::INFINITY;
    for step in 0..s.max_newton {
        let (g, h) = problem.gradient_hessian(z, mu);
        let dz = newton_direction(&h, &g).ok_or_else(|| {
            Error::Numerical(format!("singular barrier Hessian at mu = {mu:e}"))
        })?;
        let slope = g.dot(&dz);
        decrement_half = -0.5 * slope;
        if decrement_half <= s.newton_tol * mu {
            return Ok(step);
        }
        let f0 = problem
            .value(z, mu)
            .expect("iterates stay strictly feasible");
        // Inside the quadratic-convergence region of the self-concordant
        // f/μ + Φ the full step is safe; value differences there can sit
        // below rounding, so Armijo is skipped.
        let quadratic = decrement_half <= QUADRATIC_REGION * mu;
        let mut t = 1.0;
        let mut trial = vec![0.0; n];
        let mut accepted = false;
        while t > 1e-16 {
            for i in 0..n {
                trial[i] = z[i] + t * dz[i];
            }
            if let Some(f1) = problem.value(&trial, mu) {
                if quadratic || f1 <= f0 + s.armijo * t * slope {
                    accepted = true;
                    break;
                }
            }
            t *= s.backtrack;
        }
        if !accepted {
            // No representable decrease left: the iterate is centered to
            // working precision.
            if decrement_half <= 1e-6 {
                return Ok(step);
            }
            return Err(Error::Numerical(format!(
                "line search stalled at mu = {mu:e} with Newton decrement {decrement_half:e}"
            )));
        }
        z.copy_from_slice(&trial);
    }
    Err(Error::Numerical(format!(
        "Newton cap of {} reached at mu = {mu:e}; residual decrement {decrement_half:e}",
        s.max_newton
    )))
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(-ch.solve(g));
    }
    // Rounding can cost definiteness deep on the path; regularize slightly.
    let ridge = 1e-12 * h.diagonal().amax().max(1.0);
    let mut hr = h.clone();
    for i in 0..hr.nrows() {
        hr[(i, i)] += ridge;
    }
    hr.cholesky().map(|ch| -ch.solve(g))
}

/// Newton direction with a growing ridge until the Hessian factors, so the
/// step descends even where the polish objective is not locally convex.
fn regularized_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..20 {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = hr.cholesky() {
            let d = -ch.solve(g);
            if g.dot(&d) < 0.0 {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 10.0 };
    }
    None
}

/// Centralized baseline: one relaxation over every sensor in the network.
pub fn solve_centralized(
    scenario: &Scenario,
    measurements: &MeasurementSet,
    settings: &BarrierSettings,
) -> Result<LocalState> {
    let data = LocalData::merged(scenario, measurements)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no sensors in the network".into()));
    }
    solve_subproblem(&SubproblemSpec::isolated(usize::MAX, data), settings)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(acc: &mut [f64], alpha: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += alpha * b;
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::Sensor;

    fn cluster(positions: &[[f64; 2]], sigma: f64) -> Cluster {
        Cluster {
            id: 1,
            sensors: positions
                .iter()
                .enumerate()
                .map(|(k, p)| Sensor {
                    id: k + 1,
                    position: p.to_vec(),
                    sigma,
                })
                .collect(),
        }
    }

    fn exact_ranges(positions: &[[f64; 2]], x: &[f64]) -> Vec<f64> {
        positions.iter().map(|a| dist2(a, x).sqrt()).collect()
    }

    struct Board(HashMap<(usize, usize), Vec<f64>>);

    impl EstimateSource for Board {
        fn estimate(&self, cluster: usize, iteration: usize) -> Option<&[f64]> {
            self.0.get(&(cluster, iteration)).map(Vec::as_slice)
        }
    }

    fn random_data(rng: &mut ChaCha8Rng) -> LocalData {
        let n = rng.random_range(1..=4);
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
        let positions: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let ranges = positions
            .iter()
            .map(|a| (dist2(a, &x).sqrt() + rng.random_range(-0.3..0.3)).max(0.05))
            .collect();
        let weights = (0..n).map(|_| rng.random_range(1.0..25.0)).collect();
        LocalData {
            dim: 2,
            positions,
            ranges,
            weights,
        }
    }

    fn random_spec(rng: &mut ChaCha8Rng) -> SubproblemSpec {
        let mut spec = SubproblemSpec::isolated(0, random_data(rng));
        spec.linear = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..rng.random_range(1..=3) {
            spec.anchors.push(QuadAnchor {
                weight: rng.random_range(0.1..2.0),
                target: (0..2).map(|_| rng.random_range(-5.0..5.0)).collect(),
                source: AnchorSource::Own { iteration: 0 },
            });
        }
        spec
    }

    /// Strictly interior point near the central region of the problem.
    fn random_interior(problem: &BarrierProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = problem.dim;
        let mut z = vec![0.0; problem.n_vars()];
        for v in z.iter_mut().take(dim) {
            *v = rng.random_range(-2.0..2.0);
        }
        z[dim] = dot(&z[..dim], &z[..dim]) + rng.random_range(0.5..3.0);
        for k in 0..problem.ranges.len() {
            let e = problem.eps(&z, k);
            z[dim + 1 + k] = e.sqrt() * rng.random_range(0.2..0.8);
        }
        z
    }

    #[test]
    fn local_cost_examples() {
        let one = |sigma| cluster(&[[0.0, 0.0]], sigma);
        let s = LocalState { eps: vec![4.0], d: vec![2.0], y: 0.0, x: vec![0.0, 0.0] };
        assert_eq!(local_cost(&one(1.0), &[2.0], &s).unwrap(), 0.0);
        let s = LocalState { eps: vec![1.0], d: vec![1.0], y: 0.0, x: vec![0.0, 0.0] };
        assert_eq!(local_cost(&one(0.5), &[2.0], &s).unwrap(), 4.0);
        assert!(matches!(local_cost(&one(0.0), &[2.0], &s), Err(Error::InvalidInput(_))));
        assert!(local_cost(&one(1.0), &[2.0, 1.0], &s).is_err());
    }

    #[test]
    fn cost_dominates_squared_residual_on_feasible_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cluster(&[[0.0, 0.0], [1.0, 0.0]], 0.5);
        for _ in 0..200 {
            let d: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..5.0)).collect();
            let eps: Vec<f64> = d.iter().map(|v| v * v + rng.random_range(0.0..2.0)).collect();
            let r = [rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
            let s = LocalState { eps, d: d.clone(), y: 0.0, x: vec![0.0, 0.0] };
            let bound: f64 = d.iter().zip(&r).map(|(d, r)| 4.0 * (d - r).powi(2)).sum();
            let f = local_cost(&c, &r, &s).unwrap();
            assert!(f >= bound - 1e-9 && f >= -1e-12);
        }
    }

    #[test]
    fn tight_state_is_exactly_feasible() {
        let pos = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let x = [1.0, 1.0];
        let mut s = LocalState::tight(&x, &exact_ranges(&pos, &x));
        // Exact link: ε = ‖x − a‖² computed the same way as the check.
        s.eps = pos.iter().map(|a| s.y - 2.0 * dot(&x, a) + dot(a, a)).collect();
        s.d = s.eps.iter().map(|e| e.sqrt()).collect();
        let report = verify_constraints(&pos.map(|p| p.to_vec()), &s);
        assert!(report.max_violation <= 1e-12, "{report:?}");
        assert!(report.feasible);
    }

    #[test]
    fn schur_violation_is_reported() {
        let s = LocalState { eps: vec![1.0], d: vec![2.0], y: 0.0, x: vec![0.0, 0.0] };
        let report = verify_constraints(&[vec![0.0, 0.0]], &s);
        assert_eq!(report.distance_schur, vec![3.0]);
        assert!(!report.feasible);
    }

    #[test]
    fn schur_form_matches_eigenvalue_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 1000 {
            let d: f64 = rng.random_range(-3.0..3.0);
            let eps: f64 = rng.random_range(-1.0..9.0);
            let lambda_min = Matrix2::new(1.0, d, d, eps).symmetric_eigenvalues().min();
            if lambda_min.abs() < 1e-9 {
                continue;
            }
            let s = LocalState { eps: vec![eps], d: vec![d], y: 0.0, x: vec![0.0, 0.0] };
            let r = verify_constraints(&[vec![0.0, 0.0]], &s);
            let schur_ok = r.distance_schur[0] <= 0.0 && r.eps_sign[0] <= 0.0;
            assert_eq!(schur_ok, lambda_min > 0.0, "d = {d}, eps = {eps}");
            checked += 1;
        }
    }

    fn board(entries: &[((usize, usize), [f64; 2])]) -> Board {
        Board(entries.iter().map(|(k, v)| (*k, v.to_vec())).collect())
    }

    fn sample_data() -> LocalData {
        let c = cluster(&[[0.0, 0.0], [4.0, 0.0]], 1.0);
        LocalData::from_cluster(&c, &[1.0, 3.0]).unwrap()
    }

    #[test]
    fn isolated_assembly_is_cost_plus_self_term() {
        let src = board(&[((0, 4), [1.0, 2.0])]);
        let coupling = Coupling { rho: 0.5, gamma: 0.0, scheme: UpdateScheme::GaussSeidel, iteration: 4 };
        let spec = assemble_subproblem(0, sample_data(), &[], &[], &src, coupling).unwrap();
        assert_eq!(spec.linear, vec![0.0, 0.0]);
        assert_eq!(spec.constant, 0.0);
        assert_eq!(spec.anchors.len(), 1);
        assert_eq!(spec.anchors[0].weight, 0.5);
        assert_eq!(spec.anchors[0].target, vec![1.0, 2.0]);
        assert_eq!(spec.anchors[0].source, AnchorSource::Own { iteration: 4 });
    }

    #[test]
    fn jacobi_anchor_weights() {
        let src = board(&[((0, 2), [0.0, 0.0]), ((1, 2), [1.0, 0.0]), ((2, 2), [0.0, 1.0])]);
        let (rho, gamma) = (0.1, 2.5);
        let coupling = Coupling { rho, gamma, scheme: UpdateScheme::Jacobi, iteration: 2 };
        let duals = vec![vec![0.0; 2]; 2];
        let spec = assemble_subproblem(1, sample_data(), &[0, 2], &duals, &src, coupling).unwrap();
        let w: Vec<f64> = spec.anchors.iter().map(|a| a.weight).collect();
        let expected = [rho, rho, rho + rho * gamma];
        assert!(w.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-15), "{w:?}");
        assert!(spec.anchors[..2]
            .iter()
            .all(|a| matches!(a.source, AnchorSource::Neighbor { iteration: 2, .. })));
    }

    #[test]
    fn gauss_seidel_and_jacobi_differ_only_by_proximal_weight() {
        let x = [0.5, -0.5];
        let src = board(&[((0, 3), x), ((1, 3), x), ((2, 3), x), ((0, 4), x)]);
        let duals = vec![vec![0.0; 2]; 2];
        let gamma = 0.7;
        let make = |scheme| {
            let c = Coupling { rho: 1e-2, gamma, scheme, iteration: 3 };
            assemble_subproblem(1, sample_data(), &[0, 2], &duals, &src, c).unwrap()
        };
        let (gs, j) = (make(UpdateScheme::GaussSeidel), make(UpdateScheme::Jacobi));
        assert_eq!(gs.linear, j.linear);
        assert_eq!(gs.constant, j.constant);
        assert_eq!(gs.anchors.len(), j.anchors.len());
        for (a, b) in gs.anchors.iter().zip(&j.anchors) {
            assert_eq!(a.target, b.target);
        }
        let last = gs.anchors.len() - 1;
        assert_eq!(gs.anchors[..last].iter().map(|a| a.weight).collect::<Vec<_>>(), vec![1e-2; 2]);
        assert!((j.anchors[last].weight - gs.anchors[last].weight - 1e-2 * gamma).abs() < 1e-15);
        // GS reads the fresh estimate of the lower-numbered neighbour only.
        assert_eq!(gs.anchors[0].source, AnchorSource::Neighbor { cluster: 0, iteration: 4 });
        assert_eq!(gs.anchors[1].source, AnchorSource::Neighbor { cluster: 2, iteration: 3 });
    }

    #[test]
    fn dual_terms_enter_linear_and_constant_parts() {
        let src = board(&[((1, 0), [2.0, 1.0]), ((0, 0), [0.0, 0.0])]);
        let c = Coupling { rho: 1.0, gamma: 0.0, scheme: UpdateScheme::Jacobi, iteration: 0 };
        let spec = assemble_subproblem(0, sample_data(), &[1], &[vec![0.5, -1.0]], &src, c).unwrap();
        assert_eq!(spec.linear, vec![0.5, -1.0]);
        assert_eq!(spec.constant, -(0.5 * 2.0 - 1.0));
    }

    #[test]
    fn missing_estimate_is_a_protocol_error() {
        let src = board(&[((1, 0), [0.0, 0.0])]);
        let c = Coupling { rho: 1.0, gamma: 0.0, scheme: UpdateScheme::GaussSeidel, iteration: 0 };
        let err = assemble_subproblem(1, sample_data(), &[0], &[vec![0.0; 2]], &src, c).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    /// Least-squares solution of the range-differenced linear system
    /// `2(a_k − a_0)ᵀx = ‖a_k‖² − ‖a_0‖² − r_k² + r_0²`.
    fn multilateration(positions: &[[f64; 2]], ranges: &[f64]) -> [f64; 2] {
        let n = positions.len() - 1;
        let a = DMatrix::from_fn(n, 2, |k, c| 2.0 * (positions[k + 1][c] - positions[0][c]));
        let b = DVector::from_fn(n, |k, _| {
            dot(&positions[k + 1], &positions[k + 1]) - dot(&positions[0], &positions[0])
                - ranges[k + 1].powi(2)
                + ranges[0].powi(2)
        });
        let sol = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b));
        [sol[0], sol[1]]
    }

    #[test]
    fn recovers_event_from_exact_ranges() {
        let pos = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let ranges = exact_ranges(&pos, &[1.0, 1.0]);
        let oracle = multilateration(&pos, &ranges);
        let data = LocalData::from_cluster(&cluster(&pos, 1.0), &ranges).unwrap();
        let s = solve_subproblem(&SubproblemSpec::isolated(0, data), &BarrierSettings::default()).unwrap();
        assert!(dist2(&s.x, &oracle).sqrt() < 1e-4, "{:?} vs {oracle:?}", s.x);
        assert!(dist2(&oracle, &[1.0, 1.0]).sqrt() < 1e-12);
    }

    #[test]
    fn resolves_the_bearing_of_a_small_distant_array() {
        // Aperture 4e-3 at range ~20: the bearing is observed with curvature
        // ~1e-8 relative to the range, far below what the barrier path reaches.
        let pos: Vec<[f64; 2]> = [[-1.0, -1.0], [1.0, -0.6], [0.7, 1.0], [-0.8, 0.9]]
            .iter()
            .map(|o| [-5.0 + 0.002 * o[0], -9.0 + 0.002 * o[1]])
            .collect();
        let event = [10.0, 9.0];
        let ranges = exact_ranges(&pos, &event);
        let oracle = multilateration(&pos, &ranges);
        let data = LocalData::from_cluster(&cluster(&pos, 0.0), &ranges).unwrap();
        let spec = SubproblemSpec::isolated(0, data);
        let s = solve_subproblem(&spec, &BarrierSettings::default()).unwrap();
        assert!(dist2(&s.x, &oracle).sqrt() < 1e-6, "{:?} vs {oracle:?}", s.x);
        let problem = BarrierProblem::new(&spec);
        assert!(problem.value(&problem.from_state(&s), 0.0).is_some(), "not strictly interior");
    }

    #[test]
    fn dominant_anchor_wins() {
        let pos = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let data = LocalData::from_cluster(&cluster(&pos, 1.0), &exact_ranges(&pos, &[1.0, 1.0])).unwrap();
        let mut spec = SubproblemSpec::isolated(0, data);
        spec.anchors.push(QuadAnchor {
            weight: 1e6,
            target: vec![5.0, 5.0],
            source: AnchorSource::Own { iteration: 0 },
        });
        let s = solve_subproblem(&spec, &BarrierSettings::default()).unwrap();
        assert!(dist2(&s.x, &[5.0, 5.0]).sqrt() < 1e-2, "{:?}", s.x);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..50 {
            let spec = random_spec(&mut rng);
            let problem = BarrierProblem::new(&spec);
            let z = random_interior(&problem, &mut rng);
            let mu = 10f64.powf(rng.random_range(-3.0..0.0));
            let (g, hess) = problem.gradient_hessian(&z, mu);
            let n = z.len();
            for i in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (problem.value(&zp, mu).unwrap() - problem.value(&zm, mu).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0), "grad {i}: {fd} vs {}", g[i]);
                let (gp, _) = problem.gradient_hessian(&zp, mu);
                let (gm, _) = problem.gradient_hessian(&zm, mu);
                for j in 0..n {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    let an = hess[(j, i)];
                    assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "hess ({j},{i}): {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn objective_is_monotone_along_the_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let spec = random_spec(&mut rng);
            let (_, report) = solve_subproblem_with_report(&spec, &BarrierSettings::default()).unwrap();
            for w in report.path.windows(2) {
                let tol = 1e-8 * w[0].1.abs().max(1.0);
                assert!(w[1].1 <= w[0].1 + tol, "{:?}", report.path);
            }
        }
    }

    #[test]
    fn returned_states_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let spec = random_spec(&mut rng);
            let s = solve_subproblem(&spec, &BarrierSettings::default()).unwrap();
            let r = verify_constraints(&spec.data.positions, &s);
            assert!(r.feasible, "{r:?}");
        }
    }

    #[test]
    fn optimum_is_below_the_true_position_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let pos: Vec<[f64; 2]> = (0..4)
                .map(|_| [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)])
                .collect();
            let ranges: Vec<f64> = exact_ranges(&pos, &x)
                .iter()
                .map(|r| (r + rng.random_range(-0.2..0.2)).max(0.01))
                .collect();
            let data = LocalData::from_cluster(&cluster(&pos, 0.1), &ranges).unwrap();
            let s = solve_subproblem(&SubproblemSpec::isolated(0, data.clone()), &BarrierSettings::default()).unwrap();
            let truth = LocalState::tight(&x, &exact_ranges(&pos, &x));
            assert!(data.cost(&s) <= data.cost(&truth) + 1e-6);
        }
    }

    #[test]
    fn centralized_single_cluster_matches_local_solve() {
        let pos = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
        let c = cluster(&pos, 0.1);
        let ranges = vec![1.5, 2.4, 2.1, 2.8];
        let scenario = Scenario {
            dimension: 2,
            clusters: vec![c.clone()],
            event: vec![1.0, 1.0],
            edges: vec![],
            seed: 0,
        };
        let meas = MeasurementSet { ranges: vec![ranges.clone()], floor: 0.0 };
        let settings = BarrierSettings::default();
        let central = solve_centralized(&scenario, &meas, &settings).unwrap();
        let local = solve_subproblem(
            &SubproblemSpec::isolated(0, LocalData::from_cluster(&c, &ranges).unwrap()),
            &settings,
        )
        .unwrap();
        assert_eq!(central, local);
    }

    #[test]
    fn centralized_recovers_event_without_noise() {
        let mut scenario = Scenario::reference(0.0);
        scenario.event = vec![-2.0, 5.0];
        let meas = MeasurementSet { ranges: scenario.true_distances(), floor: 0.0 };
        let s = solve_centralized(&scenario, &meas, &BarrierSettings::default()).unwrap();
        assert!(dist2(&s.x, &scenario.event).sqrt() < 1e-4, "{:?}", s.x);
    }

    #[test]
    fn rejects_bad_specs_and_settings() {
        let mut spec = SubproblemSpec::isolated(0, sample_data());
        spec.anchors.push(QuadAnchor { weight: 0.0, target: vec![0.0, 0.0], source: AnchorSource::Own { iteration: 0 } });
        assert!(solve_subproblem(&spec, &BarrierSettings::default()).is_err());
        let bad = BarrierSettings { mu_shrink: 1.0, ..BarrierSettings::default() };
        assert!(solve_subproblem(&SubproblemSpec::isolated(0, sample_data()), &bad).is_err());
    }
}
