//! ADMM orchestration over a simulated cluster-head message layer.
//!
//! Every round produces `p^{t+1}` from `p^t` and `λ^t`:
//!
//! * **GS** visits clusters in id order; cluster `i` reads `x_j^{t+1}` from
//!   neighbours `j < i` (already published this round) and `x_j^t` from the rest.
//! * **J** snapshots iteration `t`, solves every cluster independently (possibly
//!   on a thread pool) with an extra proximal weight `ργ_i`, and merges results
//!   in cluster order.
//!
//! After all primal updates the multipliers move by `λ_e += ρ(x_i − x_j)` for
//! each live edge `e = (i, j)`, `i < j`. Multipliers are stored once per edge;
//! `λ_{j,i} = −λ_{i,j}` is produced by [`DualState::oriented`].

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{incidence_matrix, ClusterGraph};
use crate::model::{MeasurementSet, Scenario};
use crate::subsolver::{
    assemble_subproblem, dist2, solve_centralized, solve_subproblem, AnchorSource,
    BarrierSettings, Coupling, EstimateSource, LocalData, LocalState, SubproblemSpec,
    UpdateScheme,
};

/// Safety margin added by [`select_gamma`].
pub const GAMMA_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Sequential Gauss-Seidel ADMM.
    Gs,
    /// Parallel proximal Jacobian ADMM.
    J,
    /// Isolated clusters, no communication.
    Scl,
    /// Centralized solve over all sensors.
    Tcl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gs, Variant::J, Variant::Scl, Variant::Tcl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gs => "gs",
            Variant::J => "j",
            Variant::Scl => "scl",
            Variant::Tcl => "tcl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gs" | "gs-admm" => Ok(Variant::Gs),
            "j" | "j-admm" => Ok(Variant::J),
            "scl" => Ok(Variant::Scl),
            "tcl" => Ok(Variant::Tcl),
            other => Err(Error::InvalidInput(format!("unknown variant '{other}'"))),
        }
    }
}

/// Proximal coefficients for the J variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Uniform(f64),
    PerCluster(Vec<f64>),
    /// Resolve with [`select_gamma`].
    Auto(AutoGamma),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoGamma {
    Auto,
}

impl GammaSpec {
    pub fn auto() -> Self {
        GammaSpec::Auto(AutoGamma::Auto)
    }

    pub fn resolve(&self, graph: &ClusterGraph) -> Result<Vec<f64>> {
        let m = graph.cluster_count();
        let gammas = match self {
            GammaSpec::Auto(_) => select_gamma(graph)?,
            GammaSpec::Uniform(g) => vec![*g; m],
            GammaSpec::PerCluster(v) => {
                if v.len() != m {
                    return Err(Error::InvalidInput(format!(
                        "{} gamma values for {m} clusters",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be finite and >= 0 (got {g})")));
        }
        Ok(gammas)
    }
}

impl fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSpec::Auto(_) => f.write_str("auto"),
            GammaSpec::Uniform(g) => write!(f, "{g}"),
            GammaSpec::PerCluster(v) => {
                let parts: Vec<String> = v.iter().map(|g| g.to_string()).collect();
                f.write_str(&parts.join(";"))
            }
        }
    }
}

/// A link that is down for rounds `first..=last` (round `r` produces `p^r`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkFailure {
    /// 1-based cluster ids.
    pub edge: (usize, usize),
    pub first: usize,
    pub last: usize,
}

impl LinkFailure {
    fn covers(&self, round: usize) -> bool {
        (self.first..=self.last).contains(&round)
    }
}

impl FromStr for LinkFailure {
    type Err = Error;

    /// `i-j@first:last`, e.g. `1-2@5:20`; `i-j` alone means every round.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("bad link failure '{s}', expected i-j@first:last"));
        let (edge, range) = match s.split_once('@') {
            Some((e, r)) => (e, Some(r)),
            None => (s, None),
        };
        let (i, j) = edge.split_once('-').ok_or_else(bad)?;
        let i: usize = i.trim().parse().map_err(|_| bad())?;
        let j: usize = j.trim().parse().map_err(|_| bad())?;
        let (first, last) = match range {
            None => (1, usize::MAX),
            Some(r) => {
                let (a, b) = r.split_once(':').ok_or_else(bad)?;
                (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
            }
        };
        if first > last {
            return Err(bad());
        }
        Ok(LinkFailure { edge: (i, j), first, last })
    }
}

impl fmt::Display for LinkFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}@{}:{}", self.edge.0, self.edge.1, self.first, self.last)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub rho: f64,
    pub gamma: GammaSpec,
    pub iterations: usize,
    pub barrier: BarrierSettings,
    pub failures: Vec<LinkFailure>,
    /// Solve J-round subproblems on the rayon pool.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gs,
            rho: 1e-3,
            gamma: GammaSpec::auto(),
            iterations: 50,
            barrier: BarrierSettings::default(),
            failures: Vec::new(),
            parallel: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidInput(format!("rho must be positive (got {})", self.rho)));
        }
        self.barrier.validate()
    }
}

/// Per-edge multipliers `λ_{i,j}`, `i < j`, in the graph's edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    edges: Vec<(usize, usize)>,
    lambda: Vec<Vec<f64>>,
}

impl DualState {
    pub fn zeros(graph: &ClusterGraph, dim: usize) -> Self {
        Self {
            edges: graph.edges().to_vec(),
            lambda: vec![vec![0.0; dim]; graph.edges().len()],
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Stored multipliers, one per edge.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    fn index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i.min(j), i.max(j))).ok()
    }

    /// `λ_{i,j}` for either orientation.
    pub fn oriented(&self, i: usize, j: usize) -> Option<Vec<f64>> {
        let e = self.index(i, j)?;
        let v = &self.lambda[e];
        Some(if i < j { v.clone() } else { v.iter().map(|x| -x).collect() })
    }

    /// Apply `λ_{i,j} += ρ(x_i − x_j)` with the pair in either orientation.
    pub fn update(&mut self, i: usize, j: usize, xi: &[f64], xj: &[f64], rho: f64) -> Result<()> {
        let e = self
            .index(i, j)
            .ok_or_else(|| Error::Protocol(format!("no link between {} and {}", i + 1, j + 1)))?;
        let (a, b) = if i < j { (xi, xj) } else { (xj, xi) };
        self.lambda[e] = dual_update(&self.lambda[e], a, b, rho);
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.lambda.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Stacked `λ` (edge-major), matching the row order of `C`.
    pub fn stacked(&self) -> Vec<f64> {
        self.lambda.iter().flatten().copied().collect()
    }
}

/// `λ' = λ + ρ(x_i − x_j)`.
pub fn dual_update(lambda: &[f64], xi: &[f64], xj: &[f64], rho: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(xi.iter().zip(xj))
        .map(|(l, (a, b))| l + rho * (a - b))
        .collect()
}

/// In-process mailbox of iteration-stamped position estimates.
#[derive(Debug, Clone, Default)]
pub struct Mailbox {
    slots: HashMap<(usize, usize), Vec<f64>>,
}

impl Mailbox {
    pub fn post(&mut self, cluster: usize, iteration: usize, x: Vec<f64>) {
        self.slots.insert((cluster, iteration), x);
    }

    /// Drop everything older than `iteration`.
    pub fn retire_before(&mut self, iteration: usize) {
        self.slots.retain(|&(_, t), _| t >= iteration);
    }
}

impl EstimateSource for Mailbox {
    fn estimate(&self, cluster: usize, iteration: usize) -> Option<&[f64]> {
        self.slots.get(&(cluster, iteration)).map(Vec::as_slice)
    }
}

/// Mutable ADMM state between rounds.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub t: usize,
    pub states: Vec<LocalState>,
    pub duals: DualState,
    mailbox: Mailbox,
}

impl AdmmState {
    /// `p⁰ = 0`, `λ⁰ = 0`.
    pub fn initial(data: &[LocalData], graph: &ClusterGraph) -> Self {
        let dim = data.first().map_or(0, |d| d.dim);
        let states: Vec<LocalState> = data.iter().map(|d| LocalState::zeros(d.len(), dim)).collect();
        let mut mailbox = Mailbox::default();
        for (i, s) in states.iter().enumerate() {
            mailbox.post(i, 0, s.x.clone());
        }
        Self {
            t: 0,
            states,
            duals: DualState::zeros(graph, dim),
            mailbox,
        }
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.x.clone()).collect()
    }
}

/// Fixed inputs of a round.
#[derive(Debug, Clone)]
pub struct RoundContext<'a> {
    pub data: &'a [LocalData],
    /// Links that are up during this round.
    pub graph: &'a ClusterGraph,
    pub rho: f64,
    pub gammas: &'a [f64],
    pub barrier: &'a BarrierSettings,
}

/// Which estimate stamps each cluster consumed in a round.
#[derive(Debug, Clone, Default)]
pub struct RoundTrace {
    pub sources: Vec<Vec<AnchorSource>>,
}

fn duals_for(state: &AdmmState, i: usize, neighbors: &[usize]) -> Vec<Vec<f64>> {
    neighbors
        .iter()
        .map(|&j| state.duals.oriented(i, j).expect("active link has a multiplier"))
        .collect()
}

fn assemble(ctx: &RoundContext, state: &AdmmState, i: usize, scheme: UpdateScheme) -> Result<SubproblemSpec> {
    let neighbors = ctx.graph.neighbors(i);
    let duals = duals_for(state, i, neighbors);
    assemble_subproblem(
        i,
        ctx.data[i].clone(),
        neighbors,
        &duals,
        &state.mailbox,
        Coupling {
            rho: ctx.rho,
            gamma: ctx.gammas.get(i).copied().unwrap_or(0.0),
            scheme,
            iteration: state.t,
        },
    )
    .map_err(|e| e.in_cluster(i + 1))
}

fn update_duals(ctx: &RoundContext, state: &mut AdmmState) -> Result<()> {
    for &(i, j) in ctx.graph.edges() {
        let (xi, xj) = (state.states[i].x.clone(), state.states[j].x.clone());
        state.duals.update(i, j, &xi, &xj, ctx.rho)?;
    }
    Ok(())
}

fn sources(spec: &SubproblemSpec) -> Vec<AnchorSource> {
    spec.anchors.iter().map(|a| a.source).collect()
}

/// One Gauss-Seidel round followed by the dual update.
pub fn gs_round(ctx: &RoundContext, state: &mut AdmmState) -> Result<RoundTrace> {
    let t = state.t;
    let mut trace = RoundTrace::default();
    for i in 0..ctx.data.len() {
        let spec = assemble(ctx, state, i, UpdateScheme::GaussSeidel)?;
        let next = solve_subproblem(&spec, ctx.barrier).map_err(|e| e.in_cluster(i + 1))?;
        trace.sources.push(sources(&spec));
        state.mailbox.post(i, t + 1, next.x.clone());
        state.states[i] = next;
    }
    update_duals(ctx, state)?;
    state.t = t + 1;
    state.mailbox.retire_before(t + 1);
    Ok(trace)
}

/// One Jacobian round followed by the dual update.
pub fn j_round(ctx: &RoundContext, state: &mut AdmmState, parallel: bool) -> Result<RoundTrace> {
    let m = ctx.data.len();
    let specs = (0..m)
        .map(|i| assemble(ctx, state, i, UpdateScheme::Jacobi))
        .collect::<Result<Vec<_>>>()?;
    let solve = |(i, spec): (usize, &SubproblemSpec)| {
        solve_subproblem(spec, ctx.barrier).map_err(|e| e.in_cluster(i + 1))
    };
    let solved: Vec<Result<LocalState>> = if parallel {
        specs.par_iter().enumerate().map(solve).collect()
    } else {
        specs.iter().enumerate().map(solve).collect()
    };
    let next = solved.into_iter().collect::<Result<Vec<_>>>()?;
    commit_jacobi(ctx, state, specs, next)
}

/// Jacobian round solving clusters in an explicit order; results are merged
/// by cluster id, so any permutation yields the same state.
pub fn j_round_ordered(ctx: &RoundContext, state: &mut AdmmState, order: &[usize]) -> Result<RoundTrace> {
    let m = ctx.data.len();
    let mut seen = vec![false; m];
    for &i in order {
        if i >= m || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidInput("order must be a permutation of the clusters".into()));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidInput("order must be a permutation of the clusters".into()));
    }
    let specs = (0..m)
        .map(|i| assemble(ctx, state, i, UpdateScheme::Jacobi))
        .collect::<Result<Vec<_>>>()?;
    let mut slots: Vec<Option<LocalState>> = vec![None; m];
    for &i in order {
        slots[i] = Some(solve_subproblem(&specs[i], ctx.barrier).map_err(|e| e.in_cluster(i + 1))?);
    }
    let next = slots.into_iter().map(|s| s.expect("every cluster solved")).collect();
    commit_jacobi(ctx, state, specs, next)
}

fn commit_jacobi(
    ctx: &RoundContext,
    state: &mut AdmmState,
    specs: Vec<SubproblemSpec>,
    next: Vec<LocalState>,
) -> Result<RoundTrace> {
    let t = state.t;
    for (i, s) in next.iter().enumerate() {
        state.mailbox.post(i, t + 1, s.x.clone());
    }
    state.states = next;
    update_duals(ctx, state)?;
    state.t = t + 1;
    state.mailbox.retire_before(t + 1);
    Ok(RoundTrace {
        sources: specs.iter().map(sources).collect(),
    })
}

/// `γ_i = max(0, α_max − |B_i| − 1) + margin`, so `|B_i| + 1 + γ_i ≥ α_max`.
pub fn select_gamma(graph: &ClusterGraph) -> Result<Vec<f64>> {
    let alpha = graph.alpha_max()?;
    Ok((0..graph.cluster_count())
        .map(|i| (alpha - graph.degree(i) as f64 - 1.0).max(0.0) + GAMMA_MARGIN)
        .collect())
}

/// `max_{(i,j) ∈ E} ‖x_i − x_j‖`, zero without edges.
pub fn consensus_gap(positions: &[Vec<f64>], graph: &ClusterGraph) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| dist2(&positions[i], &positions[j]).sqrt())
        .fold(0.0, f64::max)
}

/// Snapshot after iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// `x_i^t` per cluster.
    pub positions: Vec<Vec<f64>>,
    /// `f_i(p_i^t)` per cluster, with floored weights.
    pub objectives: Vec<f64>,
    pub consensus_gap: f64,
    pub dual_norm: f64,
    /// `λ_e^t` in edge order.
    pub duals: Vec<Vec<f64>>,
    /// Running mean `x̄_i^t` of `x_i^1 … x_i^t` (equal to `x_i^0` at `t = 0`).
    pub mean_positions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub gammas: Vec<f64>,
    /// 0-based edges of the nominal topology.
    pub edges: Vec<(usize, usize)>,
    /// Connected components of the nominal topology.
    pub components: Vec<Vec<usize>>,
    /// Entries for `t = 0..=T`.
    pub iterations: Vec<IterationRecord>,
    pub final_states: Vec<LocalState>,
}

impl RunRecord {
    pub fn last(&self) -> &IterationRecord {
        self.iterations.last().expect("record holds iteration 0")
    }

    /// Final position estimate of every cluster.
    pub fn estimates(&self) -> Vec<Vec<f64>> {
        self.last().positions.clone()
    }

    /// First `t ≥ 1` after which the consensus gap stays below `threshold` for
    /// the rest of the record.
    pub fn rounds_to_consensus(&self, threshold: f64) -> Option<usize> {
        let mut first = None;
        for rec in self.iterations.iter().skip(1) {
            if rec.consensus_gap < threshold {
                first.get_or_insert(rec.t);
            } else {
                first = None;
            }
        }
        first
    }
}

struct Recorder<'a> {
    data: &'a [LocalData],
    graph: &'a ClusterGraph,
    sums: Vec<Vec<f64>>,
    out: Vec<IterationRecord>,
}

impl<'a> Recorder<'a> {
    fn new(data: &'a [LocalData], graph: &'a ClusterGraph) -> Self {
        let dim = data.first().map_or(0, |d| d.dim);
        Self {
            data,
            graph,
            sums: vec![vec![0.0; dim]; data.len()],
            out: Vec::new(),
        }
    }

    fn push(&mut self, t: usize, states: &[LocalState], duals: &DualState) {
        let positions: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
        let mean_positions = if t == 0 {
            positions.clone()
        } else {
            for (acc, x) in self.sums.iter_mut().zip(&positions) {
                acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            }
            self.sums
                .iter()
                .map(|s| s.iter().map(|v| v / t as f64).collect())
                .collect()
        };
        self.out.push(IterationRecord {
            t,
            objectives: states.iter().zip(self.data).map(|(s, d)| d.cost(s)).collect(),
            consensus_gap: consensus_gap(&positions, self.graph),
            dual_norm: duals.norm(),
            duals: duals.values().to_vec(),
            positions,
            mean_positions,
        });
    }
}

/// Run the configured variant for `config.iterations` rounds.
pub fn run(scenario: &Scenario, measurements: &MeasurementSet, config: &RunConfig) -> Result<RunRecord> {
    scenario.validate()?;
    config.validate()?;
    let m = scenario.cluster_count();
    if measurements.ranges.len() != m {
        return Err(Error::InvalidInput(format!(
            "{} measurement groups for {m} clusters",
            measurements.ranges.len()
        )));
    }
    let graph = ClusterGraph::from_one_based(m, &scenario.edges)?;
    let data = scenario
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| LocalData::from_cluster(c, measurements.cluster(i)))
        .collect::<Result<Vec<_>>>()?;
    let gammas = match config.variant {
        Variant::J => config.gamma.resolve(&graph)?,
        _ => vec![0.0; m],
    };
    let failures = config
        .failures
        .iter()
        .map(|f| {
            let (a, b) = f.edge;
            if a == 0 || b == 0 || a > m || b > m {
                return Err(Error::InvalidInput(format!("failure references unknown link {f}")));
            }
            let e = (a.min(b) - 1, a.max(b) - 1);
            graph
                .edge_index(e.0, e.1)
                .ok_or_else(|| Error::InvalidInput(format!("failure references unknown link {f}")))?;
            Ok((e, *f))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut state = AdmmState::initial(&data, &graph);
    let mut recorder = Recorder::new(&data, &graph);
    recorder.push(0, &state.states, &state.duals);

    match config.variant {
        Variant::Gs | Variant::J => {
            for round in 1..=config.iterations {
                let down: Vec<(usize, usize)> = failures
                    .iter()
                    .filter(|(_, f)| f.covers(round))
                    .map(|(e, _)| *e)
                    .collect();
                let live = if down.is_empty() { graph.clone() } else { graph.without_edges(&down) };
                let ctx = RoundContext {
                    data: &data,
                    graph: &live,
                    rho: config.rho,
                    gammas: &gammas,
                    barrier: &config.barrier,
                };
                if config.variant == Variant::Gs {
                    gs_round(&ctx, &mut state)?;
                } else {
                    j_round(&ctx, &mut state, config.parallel)?;
                }
                recorder.push(round, &state.states, &state.duals);
            }
        }
        Variant::Scl => {
            let solve = |(i, d): (usize, &LocalData)| {
                solve_subproblem(&SubproblemSpec::isolated(i, d.clone()), &config.barrier)
                    .map_err(|e| e.in_cluster(i + 1))
            };
            let solved: Vec<Result<LocalState>> = if config.parallel {
                data.par_iter().enumerate().map(solve).collect()
            } else {
                data.iter().enumerate().map(solve).collect()
            };
            state.states = solved.into_iter().collect::<Result<Vec<_>>>()?;
            for round in 1..=config.iterations {
                recorder.push(round, &state.states, &state.duals);
            }
        }
        Variant::Tcl => {
            let central = solve_centralized(scenario, measurements, &config.barrier)?;
            // Broadcast the single estimate; each cluster keeps a consistent
            // local vector lifted from its own ranges.
            state.states = data
                .iter()
                .map(|d| lift_to_cluster(d, &central.x, central.y))
                .collect();
            for round in 1..=config.iterations {
                recorder.push(round, &state.states, &state.duals);
            }
        }
    }

    Ok(RunRecord {
        config: config.clone(),
        gammas,
        edges: graph.edges().to_vec(),
        components: graph.components(),
        iterations: recorder.out,
        final_states: state.states,
    })
}

/// Cluster-local vector for a broadcast `(x, y)`: `ε` from the affine link and
/// `d = √ε`.
fn lift_to_cluster(data: &LocalData, x: &[f64], y: f64) -> LocalState {
    let eps: Vec<f64> = data
        .positions
        .iter()
        .map(|a| y - 2.0 * a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + a.iter().map(|v| v * v).sum::<f64>())
        .collect();
    LocalState {
        d: eps.iter().map(|e| e.max(0.0).sqrt()).collect(),
        eps,
        y,
        x: x.to_vec(),
    }
}

/// Saddle-point proxy `(p*, λ*)` used by the Lagrangian-gap monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleReference {
    pub positions: Vec<Vec<f64>>,
    /// `f(p*)` summed over clusters.
    pub objective: f64,
    pub duals: Vec<Vec<f64>>,
}

impl SaddleReference {
    /// Take the final iterate of a (long) run as the reference.
    pub fn from_record(record: &RunRecord) -> Self {
        let last = record.last();
        Self {
            positions: last.positions.clone(),
            objective: last.objectives.iter().sum(),
            duals: last.duals.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `gap[t] = L(p̄^{t+1}, λ*) − L(p*, λ*)` for `t = 0..T−1`.
    pub gaps: Vec<f64>,
    /// Bound constant for the Gauss-Seidel scheme.
    pub c0: f64,
    /// Bound constant for the Jacobian scheme with the record's `γ`.
    pub c1: f64,
}

impl GapReport {
    /// Least-squares slope of `ln gap(t)` against `ln t` over `lo..=hi`,
    /// skipping non-positive gaps.
    pub fn log_log_slope(&self, lo: usize, hi: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = (lo..=hi.min(self.gaps.len().saturating_sub(1)))
            .filter(|&t| t > 0 && self.gaps[t] > 0.0)
            .map(|t| ((t as f64).ln(), self.gaps[t].ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// `L(p, λ) = f(p) + λᵀCJp`.
pub fn lagrangian(objective: f64, positions: &[Vec<f64>], duals: &[Vec<f64>], edges: &[(usize, usize)]) -> f64 {
    objective
        + edges
            .iter()
            .zip(duals)
            .map(|(&(i, j), l)| {
                l.iter()
                    .zip(positions[i].iter().zip(&positions[j]))
                    .map(|(lv, (a, b))| lv * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
}

/// Lagrangian-gap sequence of a run against a reference saddle point, with
/// the bound constants `c₀` and `c₁` evaluated from the run's `(p⁰, λ⁰)`.
///
/// `f` is linear in `p`, so `f(p̄^{t+1})` is the mean of `f(p^1) … f(p^{t+1})`.
pub fn lagrangian_gap(record: &RunRecord, reference: &SaddleReference) -> Result<GapReport> {
    let m = record.final_states.len();
    let graph = ClusterGraph::new(m, &record.edges)?;
    let dim = record.iterations[0].positions.first().map_or(0, Vec::len);
    let base = lagrangian(reference.objective, &reference.positions, &reference.duals, &record.edges);

    let mut gaps = Vec::with_capacity(record.iterations.len().saturating_sub(1));
    let mut f_sum = 0.0;
    for rec in record.iterations.iter().skip(1) {
        f_sum += rec.objectives.iter().sum::<f64>();
        let f_mean = f_sum / rec.t as f64;
        gaps.push(lagrangian(f_mean, &rec.mean_positions, &reference.duals, &record.edges) - base);
    }

    let first = &record.iterations[0];
    let dual_dev: f64 = first
        .duals
        .iter()
        .flatten()
        .zip(reference.duals.iter().flatten())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let rho = record.config.rho;
    let dx = DVector::from_iterator(
        m * dim,
        first
            .positions
            .iter()
            .flatten()
            .zip(reference.positions.iter().flatten())
            .map(|(a, b)| a - b),
    );
    let (h_term, dx2) = if graph.edges().is_empty() || dim == 0 {
        (0.0, dx.norm_squared())
    } else {
        let inc = incidence_matrix(&graph, dim)?;
        ((&inc.h * &dx).norm_squared(), dx.norm_squared())
    };
    let qbar2: f64 = (0..m)
        .map(|i| {
            let w = graph.degree(i) as f64 + 1.0 + record.gammas.get(i).copied().unwrap_or(0.0);
            w * dx.rows(i * dim, dim).norm_squared()
        })
        .sum();
    Ok(GapReport {
        gaps,
        c0: dual_dev / (2.0 * rho) + 0.5 * rho * (h_term + dx2),
        c1: dual_dev / (2.0 * rho) + 0.5 * rho * qbar2,
    })
}

/// Write the per-iteration trace: a `#`-prefixed header echoing the resolved
/// configuration, then CSV rows `(t, cluster_id, x…, objective,
/// consensus_gap, dual_norm, lagrangian_gap)`.
pub fn write_trace<W: Write>(
    mut out: W,
    record: &RunRecord,
    header: &[(String, String)],
    gaps: Option<&GapReport>,
) -> Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k} = {v}")?;
    }
    let dim = record.iterations[0].positions.first().map_or(0, Vec::len);
    let mut cols = vec!["t".to_string(), "cluster_id".to_string()];
    cols.extend((1..=dim).map(|k| format!("x{k}")));
    cols.extend(["objective", "consensus_gap", "dual_norm", "lagrangian_gap"].map(String::from));
    writeln!(out, "{}", cols.join(","))?;
    for rec in &record.iterations {
        let gap = match gaps {
            Some(g) if rec.t >= 1 => g.gaps.get(rec.t - 1).map(|v| v.to_string()).unwrap_or_default(),
            _ => String::new(),
        };
        for (i, x) in rec.positions.iter().enumerate() {
            let mut row = vec![rec.t.to_string(), (i + 1).to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row.push(rec.objectives[i].to_string());
            row.push(rec.consensus_gap.to_string());
            row.push(rec.dual_norm.to_string());
            row.push(gap.clone());
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
