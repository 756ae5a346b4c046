//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use clusterloc::subsolver::{AnchorSource, LocalData, QuadAnchor, SubproblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random subproblem with `D = 2`, `1 ≤ N ≤ 4`, a random dual vector and
/// zero to three proximal anchors.
pub fn random_subproblem(seed: u64) -> SubproblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let center = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
    let aperture: f64 = rng.random_range(0.1..3.0);
    let positions: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            vec![
                center[0] + aperture * rng.random_range(-1.0..1.0),
                center[1] + aperture * rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let event = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
    let ranges = positions
        .iter()
        .map(|a| {
            let r = ((a[0] - event[0]).powi(2) + (a[1] - event[1]).powi(2)).sqrt();
            (r + rng.random_range(-0.5..0.5)).max(1e-3)
        })
        .collect();
    let weights = (0..n).map(|_| rng.random_range(0.1f64..1.0).powi(-2)).collect();
    let linear = vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    let anchors = (0..rng.random_range(0..=3))
        .map(|k| QuadAnchor {
            weight: 10f64.powf(rng.random_range(-3.0..1.0)),
            target: vec![rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)],
            source: AnchorSource::Neighbor { cluster: k + 1, iteration: 0 },
        })
        .collect();
    SubproblemSpec {
        cluster: 0,
        data: LocalData { dim: 2, positions, ranges, weights },
        linear,
        constant: rng.random_range(-1.0..1.0),
        anchors,
        scheme: None,
    }
}

/// Stop when the objective improves by less than `STALL_TOL` (relative)
/// over `STALL_WINDOW` iterations.
const STALL_WINDOW: usize = 1000;
const STALL_TOL: f64 = 1e-13;

/// Result of [`projected_gradient`].
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x: Vec<f64>,
    pub y: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Minimize the subproblem by accelerated projected gradient on `(x, y)`
/// over `y ≥ ‖x‖²`, with `d = √ε` eliminated in closed form.
///
/// With `ε_k = y − 2xᵀa_k + ‖a_k‖²` affine and `−√ε` convex, the reduced cost
/// `Σ w(ε − 2r√ε + r²)` is convex on the paraboloid epigraph, so the method
/// needs no barrier. Coordinates are centered on the sensor centroid.
pub fn projected_gradient(spec: &SubproblemSpec, max_iter: usize, tol: f64) -> OracleSolution {
    let dim = spec.data.dim;
    let n = spec.data.len();
    let c: Vec<f64> = (0..dim)
        .map(|k| spec.data.positions.iter().map(|p| p[k]).sum::<f64>() / n as f64)
        .collect();
    let a: Vec<Vec<f64>> = spec
        .data
        .positions
        .iter()
        .map(|p| p.iter().zip(&c).map(|(u, v)| u - v).collect())
        .collect();
    let f = Reduced { spec, a: &a, c: &c };

    // Start on the tight surface above the centroid.
    let mut z = vec![0.0; dim + 1];
    z[dim] = spec.data.ranges.iter().map(|r| r * r).sum::<f64>() / n as f64 - a.iter().map(|v| norm2(v)).sum::<f64>() / n as f64;
    z[dim] = z[dim].max(1.0);
    let mut fz = f.value(&z);
    let mut v = z.clone();
    let mut theta: f64 = 1.0;
    let mut lip = 1.0;
    let mut iterations = 0;
    let mut checkpoint = fz;
    while iterations < max_iter {
        iterations += 1;
        if iterations % STALL_WINDOW == 0 {
            if checkpoint - fz <= STALL_TOL * fz.abs().max(1.0) {
                break;
            }
            checkpoint = fz;
        }
        let (fv, g) = f.value_grad(&v);
        let next = loop {
            let trial: Vec<f64> = v.iter().zip(&g).map(|(p, q)| p - q / lip).collect();
            let cand = project_epigraph(&trial, dim);
            let fc = f.value(&cand);
            let step: Vec<f64> = cand.iter().zip(&v).map(|(p, q)| p - q).collect();
            let model = fv + dot(&g, &step) + 0.5 * lip * norm2(&step);
            if fc <= model + 1e-15 * fv.abs().max(1.0) {
                break (cand, fc, step);
            }
            lip *= 2.0;
        };
        let (cand, fc, step) = next;
        let moved = norm2(&step).sqrt() * lip;
        if fc > fz {
            // Adaptive restart: drop momentum and retry from the last iterate.
            theta = 1.0;
            v = z.clone();
            continue;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        v = cand.iter().zip(&z).map(|(p, q)| p + beta * (p - q)).collect();
        z = cand;
        fz = fc;
        theta = theta_next;
        lip *= 0.95;
        if moved <= tol * (1.0 + fz.abs()) {
            break;
        }
    }
    OracleSolution {
        x: z[..dim].iter().zip(&c).map(|(p, q)| p + q).collect(),
        y: z[dim] + 2.0 * dot(&z[..dim], &c) + norm2(&c),
        objective: fz,
        iterations,
    }
}

struct Reduced<'a> {
    spec: &'a SubproblemSpec,
    a: &'a [Vec<f64>],
    c: &'a [f64],
}

impl Reduced<'_> {
    fn value(&self, z: &[f64]) -> f64 {
        self.value_grad(z).0
    }

    fn value_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let dim = self.c.len();
        let (x, y) = (&z[..dim], z[dim]);
        let mut g = vec![0.0; dim + 1];
        let mut f = self.spec.constant;
        let data = &self.spec.data;
        for ((a, r), w) in self.a.iter().zip(&data.ranges).zip(&data.weights) {
            let eps = (y - 2.0 * dot(x, a) + norm2(a)).max(1e-300);
            let s = eps.sqrt();
            f += w * (eps - 2.0 * r * s + r * r);
            let de = w * (1.0 - r / s);
            g[dim] += de;
            for k in 0..dim {
                g[k] -= 2.0 * de * a[k];
            }
        }
        let world: Vec<f64> = x.iter().zip(self.c).map(|(p, q)| p + q).collect();
        f += dot(&self.spec.linear, &world);
        for k in 0..dim {
            g[k] += self.spec.linear[k];
        }
        for anchor in &self.spec.anchors {
            let diff: Vec<f64> = world.iter().zip(&anchor.target).map(|(p, q)| p - q).collect();
            f += 0.5 * anchor.weight * norm2(&diff);
            for k in 0..dim {
                g[k] += anchor.weight * diff[k];
            }
        }
        (f, g)
    }
}

/// Euclidean projection onto `{(x, y) : y ≥ ‖x‖²}`.
///
/// On the boundary `x = x₀/(1+2τ)`, `y = y₀ + τ` with `τ ≥ 0` the root of the
/// increasing function `y₀ + τ − ‖x₀‖²/(1+2τ)²`.
pub fn project_epigraph(z: &[f64], dim: usize) -> Vec<f64> {
    let (x0, y0) = (&z[..dim], z[dim]);
    let q = norm2(x0);
    if y0 >= q {
        return z.to_vec();
    }
    let h = |t: f64| y0 + t - q / (1.0 + 2.0 * t).powi(2);
    let (mut lo, mut hi) = (0.0, q - y0);
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let ht = h(t);
        if ht.abs() <= 1e-15 * (1.0 + q) || hi - lo <= 1e-15 * (1.0 + hi) {
            break;
        }
        if ht > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - ht / (1.0 + 4.0 * q / (1.0 + 2.0 * t).powi(3));
        t = if newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
    }
    let mut out: Vec<f64> = x0.iter().map(|v| v / (1.0 + 2.0 * t)).collect();
    // Land exactly on or above the surface.
    out.push((y0 + t).max(norm2(&out)));
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Relative objective error with a unit floor on the scale.
pub fn relative_error(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1.0)
}
