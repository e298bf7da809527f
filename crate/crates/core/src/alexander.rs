//! Checks on `f(t, x) = m(t, 0, x)`: subadditivity, linear growth,
//! approximate geodesics, the gap to the homogenized metric, and the
//! two-dimensional cyclic-shift surgery that bounds `2 m(t, 0, x) - m(2t, 0, 2x)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::effective::EffectiveModel;
use crate::error::{domain, Error, Result};
use crate::lattice::{relax, LatticeBox, Layer};
use crate::metric::{extract_lattice_path, norm, round_into_cone, Cone, DiscretePath, MetricTable};

/// Space-time norm `sqrt(t^2 + |x|^2)`.
fn st_norm(t: f64, x: &[f64]) -> f64 {
    (t * t + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubadditivityReport {
    /// `max f(z + w) - f(z) - f(w)` over the tested pairs.
    pub max_violation: f64,
    pub worst: Option<((usize, Vec<i64>), (usize, Vec<i64>))>,
    pub pairs: usize,
    /// `2 dx Lip(m)`, with the Lipschitz constant taken over the inner half
    /// of the cone.
    pub bound: f64,
}

impl SubadditivityReport {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.bound
    }
}

fn finite_nodes(table: &MetricTable, k: usize) -> Vec<Vec<i64>> {
    let layer = table.layer(k);
    (0..layer.values.len())
        .map(|i| layer.bx.node(i))
        .filter(|z| table.value(k, z).is_finite())
        .collect()
}

/// Random lattice pairs plus every doubling pair `z = w` on integer-time
/// layers.
pub fn check_subadditivity(
    table: &MetricTable,
    sample_size: usize,
    seed: u64,
) -> SubadditivityReport {
    let k_max = table.horizon_steps();
    let steps = table.disc.steps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<((usize, Vec<i64>), (usize, Vec<i64>))> = Vec::new();
    let layers: Vec<Vec<Vec<i64>>> = (0..=k_max).map(|k| finite_nodes(table, k)).collect();
    if k_max >= 2 {
        for _ in 0..sample_size {
            let k1 = rng.gen_range(1..k_max);
            let k2 = rng.gen_range(1..=k_max - k1);
            if layers[k1].is_empty() || layers[k2].is_empty() {
                continue;
            }
            let z = layers[k1][rng.gen_range(0..layers[k1].len())].clone();
            let w = layers[k2][rng.gen_range(0..layers[k2].len())].clone();
            pairs.push(((k1, z), (k2, w)));
        }
    }
    let mut k = steps;
    while 2 * k <= k_max {
        for z in &layers[k] {
            pairs.push(((k, z.clone()), (k, z.clone())));
        }
        k += steps;
    }
    let scored: Vec<f64> = pairs
        .par_iter()
        .map(|((k1, z), (k2, w))| {
            let s: Vec<i64> = z.iter().zip(w).map(|(a, b)| a + b).collect();
            let fz = table.value(*k1, z);
            let fw = table.value(*k2, w);
            let fs = table.value(k1 + k2, &s);
            if fs.is_finite() {
                fs - fz - fw
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst = None;
    for (v, p) in scored.iter().zip(&pairs) {
        if *v > max_violation {
            max_violation = *v;
            worst = Some(p.clone());
        }
    }
    SubadditivityReport {
        max_violation,
        worst,
        pairs: pairs.len(),
        bound: 2.0 * table.disc.dx() * table.lipschitz_within(0.5),
    }
}

/// Recomputes `m(s, e, .)` from an integer source `e` and compares it with
/// the stored `m(s, 0, . - e)`; returns the largest difference.
pub fn check_periodicity(table: &MetricTable, source: &[i64], horizon_steps: usize) -> f64 {
    let n = table.disc.cells as i64;
    let e: Vec<i64> = source.iter().map(|v| v * n).collect();
    let costs = table.costs();
    let r = costs.stencil.radius;
    let mut layer = Layer::filled(
        LatticeBox {
            lo: e.clone(),
            hi: e.clone(),
        },
        0.0,
    );
    let mut worst: f64 = 0.0;
    for k in 1..=horizon_steps.min(table.horizon_steps()) {
        let bx = LatticeBox {
            lo: e.iter().map(|v| v - r * k as i64).collect(),
            hi: e.iter().map(|v| v + r * k as i64).collect(),
        };
        layer = relax(&layer, bx, costs);
        for i in 0..layer.values.len() {
            let z = layer.bx.node(i);
            let rel: Vec<i64> = z.iter().zip(&e).map(|(a, b)| a - b).collect();
            let a = table.value(k, &rel);
            let b = layer.values[i];
            if !a.is_finite() {
                continue;
            }
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    /// Smallest `K >= 1` with `|z|/K - K <= f(z) <= K|z| + K`.
    pub k: f64,
    pub k_upper: f64,
    pub k_lower: f64,
    /// `min f(t, x) - t` (nonnegative when `L >= 1`).
    pub min_excess_over_t: f64,
    pub points: usize,
}

/// Linear growth over integer-time nodes inside `within`.
pub fn check_linear_growth(table: &MetricTable, within: &Cone) -> GrowthReport {
    check_linear_growth_until(table, within, table.integer_horizon())
}

/// As [`check_linear_growth`], for integer times up to `t_max`.
pub fn check_linear_growth_until(table: &MetricTable, within: &Cone, t_max: i64) -> GrowthReport {
    let mut k_upper: f64 = 1.0;
    let mut k_lower: f64 = 1.0;
    let mut min_excess = f64::INFINITY;
    let mut points = 0;
    let dx = table.disc.dx();
    for t in 1..=t_max.min(table.integer_horizon()) {
        let k = t as usize * table.disc.steps;
        for z in finite_nodes(table, k) {
            let x: Vec<f64> = z.iter().map(|&v| v as f64 * dx).collect();
            if !within.contains(t as f64, &x) {
                continue;
            }
            let f = table.value(k, &z);
            let r = st_norm(t as f64, &x);
            k_upper = k_upper.max(f / (r + 1.0));
            k_lower = k_lower.max((-f + (f * f + 4.0 * r).sqrt()) / 2.0);
            min_excess = min_excess.min(f - t as f64);
            points += 1;
        }
    }
    GrowthReport {
        k: k_upper.max(k_lower),
        k_upper,
        k_lower,
        min_excess_over_t: min_excess,
        points,
    }
}

/// Integer space-time points along a minimizer with their additivity defect.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximateGeodesic {
    /// `(t_i, x_i)` with `x_0 = 0`, in integer units.
    pub nodes: Vec<(i64, Vec<i64>)>,
    /// `max |f(z_k - z_i) - f(z_k - z_j) - f(z_j - z_i)|`.
    pub defect: f64,
    /// Largest `|x_{i+1} - x_i|`.
    pub step_bound: f64,
    /// Time between consecutive nodes.
    pub block: i64,
}

/// Samples the minimizer for `m(t, 0, x)` at integer times (every `block`
/// units, the smallest block that keeps rounded increments in the cone).
pub fn extract_approximate_geodesic(
    table: &MetricTable,
    t: i64,
    x: &[i64],
) -> Result<ApproximateGeodesic> {
    if t < 1 || t > table.integer_horizon() {
        return domain(format!("t = {t} outside 1..={}", table.integer_horizon()));
    }
    let cells = table.disc.cells as i64;
    let steps = table.disc.steps;
    let z: Vec<i64> = x.iter().map(|v| v * cells).collect();
    let path = extract_lattice_path(table, t as usize * steps, &z)?;
    let unit_points: Vec<Vec<f64>> = (0..=t as usize).map(|i| path.position(i * steps)).collect();
    for block in 1..=t {
        let mut times: Vec<i64> = (0..=t).step_by(block as usize).collect();
        if *times.last().unwrap() != t {
            times.push(t);
        }
        let mut nodes = Vec::with_capacity(times.len());
        for &ti in &times {
            let p = &unit_points[ti as usize];
            let q = if ti == 0 {
                vec![0; p.len()]
            } else if ti == t {
                x.to_vec()
            } else {
                round_into_cone(ti as f64, p, &table.cone)?.1
            };
            nodes.push((ti, q));
        }
        let in_cone = nodes.windows(2).all(|w| {
            let inc: Vec<i64> = w[1].1.iter().zip(&w[0].1).map(|(a, b)| a - b).collect();
            table.f(w[1].0 - w[0].0, &inc).is_finite()
        });
        if !in_cone {
            continue;
        }
        let f = |a: &(i64, Vec<i64>), b: &(i64, Vec<i64>)| {
            let inc: Vec<i64> = b.1.iter().zip(&a.1).map(|(p, q)| p - q).collect();
            table.f(b.0 - a.0, &inc)
        };
        let n = nodes.len();
        let mut defect: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let v = (f(&nodes[i], &nodes[k])
                        - f(&nodes[j], &nodes[k])
                        - f(&nodes[i], &nodes[j]))
                    .abs();
                    if v.is_finite() {
                        defect = defect.max(v);
                    }
                }
            }
        }
        let step_bound = nodes
            .windows(2)
            .map(|w| {
                let inc: Vec<f64> = w[1]
                    .1
                    .iter()
                    .zip(&w[0].1)
                    .map(|(a, b)| (a - b) as f64)
                    .collect();
                norm(&inc)
            })
            .fold(0.0, f64::max);
        return Ok(ApproximateGeodesic {
            nodes,
            defect,
            step_bound,
            block,
        });
    }
    Err(Error::Resolution(
        "rounded geodesic pieces leave the cone at every block length".into(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    /// `(|(t, x)|, f(t, x) - m̄(t, 0, x))` along the sampled rays.
    pub samples: Vec<(f64, f64)>,
    pub min_gap: f64,
    pub max_gap: f64,
    /// Smallest `C >= 1` with `gap <= C log(C + |z|)` on every sample.
    pub envelope: f64,
}

/// Gap between `f` and `m̄(t, 0, x) = t L̄(x/t)` at `(n, n v)` for each
/// velocity `v` and integer `n` up to the horizon.
pub fn gap_vs_log_envelope(
    table: &MetricTable,
    model: &EffectiveModel,
    velocities: &[Vec<f64>],
) -> Result<EnvelopeReport> {
    let mut samples = Vec::new();
    for v in velocities {
        if v.len() != table.dim() {
            return domain("velocity dimension does not match the table");
        }
        let lbar = model.lbar_at(v);
        if !lbar.is_finite() {
            return domain(format!("velocity {v:?} outside the effective model"));
        }
        for n in 1..=table.integer_horizon() {
            let x: Vec<f64> = v.iter().map(|c| c * n as f64).collect();
            let f = match crate::metric::metric_point(table, n as f64, &vec![0.0; x.len()], &x) {
                Ok(f) => f,
                Err(Error::Unreachable(_)) => continue,
                Err(e) => return Err(e),
            };
            samples.push((st_norm(n as f64, &x), f - n as f64 * lbar));
        }
    }
    let min_gap = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let max_gap = samples
        .iter()
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let fits = |c: f64| samples.iter().all(|&(r, g)| g <= c * (c + r).ln());
    let (mut lo, mut hi) = (1.0, 2.0);
    while !fits(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    if fits(lo) {
        hi = lo;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(EnvelopeReport {
        samples,
        min_gap,
        max_gap,
        envelope: hi,
    })
}

/// Space-time polyline `s -> (s, x1, x2)` with uniform time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePath2D {
    pub dt: f64,
    pub nodes: Vec<[f64; 3]>,
}

impl SpaceTimePath2D {
    pub fn from_points(dt: f64, points: &[[f64; 2]]) -> Self {
        let nodes = points
            .iter()
            .enumerate()
            .map(|(i, p)| [i as f64 * dt, p[0], p[1]])
            .collect();
        SpaceTimePath2D { dt, nodes }
    }

    pub fn from_discrete(path: &DiscretePath) -> Result<Self> {
        if path.nodes.first().map_or(0, |n| n.len()) != 2 {
            return domain("space-time surgery needs a two-dimensional path");
        }
        let pts: Vec<[f64; 2]> = path.positions().iter().map(|p| [p[0], p[1]]).collect();
        Ok(SpaceTimePath2D::from_points(path.dt, &pts))
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn increments(&self) -> Vec<[f64; 2]> {
        self.nodes
            .windows(2)
            .map(|w| [w[1][1] - w[0][1], w[1][2] - w[0][2]])
            .collect()
    }

    /// Position at a real time by linear interpolation.
    pub fn at(&self, s: f64) -> [f64; 3] {
        let u = (s / self.dt).clamp(0.0, self.steps() as f64);
        let i = (u.floor() as usize).min(self.steps().saturating_sub(1));
        let a = u - i as f64;
        let p = self.nodes[i];
        let q = self.nodes[(i + 1).min(self.steps())];
        [s, p[1] + a * (q[1] - p[1]), p[2] + a * (q[2] - p[2])]
    }
}

/// `η^c(s) = η(c+s) - η(c)` for `c + s <= t`, else
/// `η(s - (t - c)) - η(0) + η(t) - η(c)`, so the shift is continuous for
/// paths that do not start at the origin; `c` is snapped to the time
/// lattice and the flag reports whether snapping moved it.
pub fn cyclic_shift(path: &SpaceTimePath2D, c: f64) -> Result<(SpaceTimePath2D, bool)> {
    let n = path.steps();
    if !(c >= -1e-12 && c <= path.duration() + 1e-12) {
        return domain(format!("shift {c} outside [0, {}]", path.duration()));
    }
    let ci = (c / path.dt).round() as usize;
    let snapped = (ci as f64 * path.dt - c).abs() > 1e-9;
    let ci = ci.min(n);
    let start = path.nodes[0];
    let end = path.nodes[n];
    let base = path.nodes[ci];
    let nodes = (0..=n)
        .map(|i| {
            if ci + i <= n {
                let p = path.nodes[ci + i];
                [i as f64 * path.dt, p[1] - base[1], p[2] - base[2]]
            } else {
                let p = path.nodes[ci + i - n];
                [
                    i as f64 * path.dt,
                    p[1] - start[1] + end[1] - base[1],
                    p[2] - start[2] + end[2] - base[2],
                ]
            }
        })
        .collect();
    Ok((SpaceTimePath2D { dt: path.dt, nodes }, snapped))
}

/// Result of the shift search.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    /// Shifts as node indices.
    pub c1: usize,
    pub c2: usize,
    /// Crossing time.
    pub s: f64,
    pub witness: [f64; 3],
    /// Spatial distance between the shifted paths at `s`.
    pub separation: f64,
    /// Winding of the separation direction for the two extremal
    /// configurations, in turns.
    pub winding_extremal: (f64, f64),
}

/// Prefix sums of the increments of a cyclically shifted path.
struct Shifts {
    prefix: Vec<[f64; 2]>,
}

impl Shifts {
    fn new(incs: &[[f64; 2]]) -> Self {
        let mut prefix = vec![[0.0; 2]; incs.len() + 1];
        for (i, j) in incs.iter().enumerate() {
            prefix[i + 1] = [prefix[i][0] + j[0], prefix[i][1] + j[1]];
        }
        Shifts { prefix }
    }

    fn at(&self, c: usize, s: usize) -> [f64; 2] {
        let n = self.prefix.len() - 1;
        let p = &self.prefix;
        if c + s <= n {
            [p[c + s][0] - p[c][0], p[c + s][1] - p[c][1]]
        } else {
            [
                p[n][0] - p[c][0] + p[c + s - n][0],
                p[n][1] - p[c][1] + p[c + s - n][1],
            ]
        }
    }
}

/// Distance from the origin to the segment `a -> b`, with the parameter.
fn segment_origin_distance(a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let dd = d[0] * d[0] + d[1] * d[1];
    let tau = if dd > 0.0 {
        (-(a[0] * d[0] + a[1] * d[1]) / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p = [a[0] + tau * d[0], a[1] + tau * d[1]];
    ((p[0] * p[0] + p[1] * p[1]).sqrt(), tau)
}

fn winding(sep: impl Fn(usize) -> [f64; 2], n: usize) -> f64 {
    let mut total = 0.0;
    let mut prev = sep(0);
    for s in 1..=n {
        let cur = sep(s);
        let a0 = prev[1].atan2(prev[0]);
        let a1 = cur[1].atan2(cur[0]);
        let mut da = a1 - a0;
        while da > std::f64::consts::PI {
            da -= 2.0 * std::f64::consts::PI;
        }
        while da < -std::f64::consts::PI {
            da += 2.0 * std::f64::consts::PI;
        }
        total += da;
        prev = cur;
    }
    total / (2.0 * std::f64::consts::PI)
}

/// Searches node shifts `(c1, c2)` for which `η¹(0) + η^{1,c1}(s)` and
/// `η²(0) + η^{2,c2}(s)` meet; accepts the closest approach if it is within
/// `tol`.
pub fn find_crossing(eta1: &SpaceTimePath2D, eta2: &SpaceTimePath2D, tol: f64) -> Result<Crossing> {
    let n = eta1.steps();
    if eta2.steps() != n || (eta1.dt - eta2.dt).abs() > 1e-12 || n == 0 {
        return domain("paths must share the time lattice");
    }
    let b1 = [eta1.nodes[0][1], eta1.nodes[0][2]];
    let b2 = [eta2.nodes[0][1], eta2.nodes[0][2]];
    let s1 = Shifts::new(&eta1.increments());
    let s2 = Shifts::new(&eta2.increments());
    let sep = |c1: usize, c2: usize, s: usize| {
        let p = s1.at(c1, s);
        let q = s2.at(c2, s);
        [b1[0] + p[0] - b2[0] - q[0], b1[1] + p[1] - b2[1] - q[1]]
    };
    // best (distance, c1, c2, segment, tau), scanning c1, then c2, then s
    let rows: Vec<(f64, usize, usize, usize, f64)> = (0..=n)
        .into_par_iter()
        .map(|c1| {
            let mut best = (f64::INFINITY, c1, 0, 0, 0.0);
            for c2 in 0..=n {
                let mut prev = sep(c1, c2, 0);
                if prev[0] == 0.0 && prev[1] == 0.0 {
                    if 0.0 < best.0 {
                        best = (0.0, c1, c2, 0, 0.0);
                    }
                    continue;
                }
                for s in 0..n {
                    let cur = sep(c1, c2, s + 1);
                    let (dist, tau) = segment_origin_distance(prev, cur);
                    if dist < best.0 {
                        best = (dist, c1, c2, s, tau);
                    }
                    prev = cur;
                }
            }
            best
        })
        .collect();
    let mut best = rows[0];
    for r in &rows[1..] {
        if r.0 < best.0 {
            best = *r;
        }
    }
    let (dist, c1, c2, seg, tau) = best;
    // extremal shifts along the direction normal to the midpoint defect
    let y = [
        0.5 * (s2.at(0, n)[0] - s1.at(0, n)[0]),
        0.5 * (s2.at(0, n)[1] - s1.at(0, n)[1]),
    ];
    let ny = norm(&y);
    let normal = if ny > 0.0 {
        [-y[1] / ny, y[0] / ny]
    } else {
        [0.0, 1.0]
    };
    let drift = [
        0.5 * (s1.at(0, n)[0] + s2.at(0, n)[0]) / n as f64,
        0.5 * (s1.at(0, n)[1] + s2.at(0, n)[1]) / n as f64,
    ];
    let height = |sh: &Shifts, c: usize| {
        let p = sh.at(0, c);
        (p[0] - drift[0] * c as f64) * normal[0] + (p[1] - drift[1] * c as f64) * normal[1]
    };
    let argext = |sh: &Shifts, max: bool| {
        let mut arg = 0;
        for c in 1..=n {
            let better = if max {
                height(sh, c) > height(sh, arg)
            } else {
                height(sh, c) < height(sh, arg)
            };
            if better {
                arg = c;
            }
        }
        arg
    };
    let w_lo = winding(|s| sep(argext(&s1, true), argext(&s2, false), s), n);
    let w_hi = winding(|s| sep(argext(&s1, false), argext(&s2, true), s), n);
    if dist > tol {
        return Err(Error::Resolution(format!(
            "no crossing within {tol}: closest approach {dist} at shifts ({c1}, {c2}); refine the time lattice"
        )));
    }
    let s = (seg as f64 + tau) * eta1.dt;
    let q0 = s2.at(c2, seg);
    let q1 = s2.at(c2, seg + 1);
    let witness = [
        s,
        b2[0] + q0[0] + tau * (q1[0] - q0[0]),
        b2[1] + q0[1] + tau * (q1[1] - q0[1]),
    ];
    Ok(Crossing {
        c1,
        c2,
        s,
        witness,
        separation: dist,
        winding_extremal: (w_lo, w_hi),
    })
}

/// One surgery instance for `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurgeryReport {
    pub t: i64,
    pub x: Vec<i64>,
    /// Minimizer for `m(2t, 0, 2x)`.
    pub gamma_cost: f64,
    /// Spliced path through `x` at time `t`.
    pub path: DiscretePath,
    pub path_cost: f64,
    /// `2 m(t, 0, x) - m(2t, 0, 2x)` from the table.
    pub lemma_gap: f64,
    pub crossing: Crossing,
    /// Increment ranges of the minimizer used by the first half (at most 4).
    pub segments: Vec<(usize, usize)>,
    /// Lattice units moved to land exactly on `x`.
    pub correction: i64,
}

impl SurgeryReport {
    /// `cost(spliced) - cost(γ)`, an upper bound for the lemma gap.
    pub fn excess(&self) -> f64 {
        self.path_cost - self.gamma_cost
    }
}

fn ranges(start: usize, len: usize, n: usize, offset: usize) -> Vec<(usize, usize)> {
    if len == 0 {
        return vec![];
    }
    if start + len <= n {
        vec![(offset + start, offset + start + len)]
    } else {
        vec![
            (offset + start, offset + n),
            (offset, offset + start + len - n),
        ]
    }
}

/// Splits the minimizer of `m(2t, 0, 2x)` into halves, finds crossing
/// shifts and splices a path through `x` at time `t`.
pub fn path_surgery(table: &MetricTable, t: i64, x: &[i64]) -> Result<SurgeryReport> {
    if table.dim() != 2 {
        return domain("path surgery is two-dimensional");
    }
    if t < 1 || 2 * t > table.integer_horizon() {
        return domain(format!("2t = {} exceeds the table horizon", 2 * t));
    }
    let cells = table.disc.cells as i64;
    let steps = table.disc.steps;
    let k = t as usize * steps;
    let z: Vec<i64> = x.iter().map(|v| v * cells).collect();
    let z2: Vec<i64> = z.iter().map(|v| 2 * v).collect();
    let gamma = extract_lattice_path(table, 2 * k, &z2)?;
    let incs = gamma.increments();
    let first: Vec<Vec<i64>> = incs[..k].to_vec();
    let second: Vec<Vec<i64>> = incs[k..].to_vec();
    let dx = table.disc.dx();
    let to_path = |inc: &[Vec<i64>], base: [f64; 2]| {
        let mut pts = vec![base];
        let mut p = base;
        for j in inc {
            p = [p[0] + j[0] as f64 * dx, p[1] + j[1] as f64 * dx];
            pts.push(p);
        }
        SpaceTimePath2D::from_points(gamma.dt, &pts)
    };
    // y = (γ²(t) - γ¹(t)) / 2; η¹ starts at y, η² at the origin
    let g1: Vec<i64> = (0..2).map(|a| first.iter().map(|j| j[a]).sum()).collect();
    let g2: Vec<i64> = (0..2).map(|a| second.iter().map(|j| j[a]).sum()).collect();
    let y = [
        0.5 * (g2[0] - g1[0]) as f64 * dx,
        0.5 * (g2[1] - g1[1]) as f64 * dx,
    ];
    let eta1 = to_path(&first, y);
    let eta2 = to_path(&second, [0.0, 0.0]);
    let max_inc = incs
        .iter()
        .map(|j| norm(&[j[0] as f64 * dx, j[1] as f64 * dx]))
        .fold(dx, f64::max);
    let crossing = find_crossing(&eta1, &eta2, max_inc)?;
    let s = (crossing.s / gamma.dt).round() as usize;
    let s = s.min(k);
    let (c1, c2) = (crossing.c1 % k.max(1), crossing.c2 % k.max(1));
    let shifted = |inc: &[Vec<i64>], c: usize, i: usize| inc[(c + i) % k].clone();
    let mut q1: Vec<Vec<i64>> = (0..s)
        .map(|i| shifted(&second, c2, i))
        .chain((s..k).map(|i| shifted(&first, c1, i)))
        .collect();
    let mut q2: Vec<Vec<i64>> = (0..s)
        .map(|i| shifted(&first, c1, i))
        .chain((s..k).map(|i| shifted(&second, c2, i)))
        .collect();
    let mut segments = ranges(c2, s, k, k);
    segments.extend(ranges((c1 + s) % k.max(1), k - s, k, 0));
    // land exactly on z by moving single lattice units between the halves
    let sum1: Vec<i64> = (0..2).map(|a| q1.iter().map(|j| j[a]).sum()).collect();
    let miss: Vec<i64> = sum1.iter().zip(&z).map(|(a, b)| a - b).collect();
    let stencil = &table.costs().stencil;
    let mut correction = 0;
    for a in 0..2 {
        let unit = -miss[a].signum();
        for _ in 0..miss[a].abs() {
            let mut moved = false;
            for i in 0..k {
                let mut u = q1[i].clone();
                u[a] += unit;
                if stencil.index_of(&u).is_none() {
                    continue;
                }
                for i2 in 0..k {
                    let mut w = q2[i2].clone();
                    w[a] -= unit;
                    if stencil.index_of(&w).is_some() {
                        q1[i] = u;
                        q2[i2] = w;
                        moved = true;
                        break;
                    }
                }
                if moved {
                    break;
                }
            }
            if !moved {
                return Err(Error::Resolution(
                    "no stencil room to absorb the splice offset".into(),
                ));
            }
            correction += 1;
        }
    }
    let mut nodes = vec![vec![0i64, 0]];
    for j in q1.iter().chain(&q2) {
        let last = nodes.last().unwrap();
        nodes.push(vec![last[0] + j[0], last[1] + j[1]]);
    }
    let mut path = DiscretePath {
        dt: gamma.dt,
        dx,
        nodes,
        cost: 0.0,
        quadrature: gamma.quadrature,
    };
    path.cost = path.cost_from_table(table.costs())?;
    let lemma_gap = 2.0 * table.value(k, &z) - table.value(2 * k, &z2);
    Ok(SurgeryReport {
        t,
        x: x.to_vec(),
        gamma_cost: gamma.cost,
        path_cost: path.cost,
        path,
        lemma_gap,
        crossing,
        segments,
        correction,
    })
}

/// Lemma gaps `2 m(t, 0, x) - m(2t, 0, 2x)` at `x = round(t v)` for each
/// `t` and velocity, with surgery on every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaGapReport {
    /// `(t, max gap, min gap)`.
    pub per_t: Vec<(i64, f64, f64)>,
    pub samples: usize,
    pub surgery_ok: usize,
    /// Largest `cost(spliced) - cost(γ) - gap`, negative when the surgery
    /// witness is looser than the table.
    pub instances: Vec<SurgeryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurgeryRow {
    pub t: i64,
    pub x: Vec<i64>,
    pub gap: f64,
    pub excess: Option<f64>,
    pub shifts: Option<(usize, usize)>,
    pub gamma_cost: f64,
    pub path_cost: Option<f64>,
}

impl LemmaGapReport {
    pub fn success_rate(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.surgery_ok as f64 / self.samples as f64
        }
    }

    /// `G(2t) <= factor * G(t) + tol` for consecutive entries.
    pub fn non_growing(&self, factor: f64, tol: f64) -> bool {
        self.per_t
            .windows(2)
            .all(|w| w[1].1 <= factor * w[0].1 + tol)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "# schema=homog-surgery-v1\nt,x1,x2,gap,c1,c2,cost_before,cost_after,excess\n",
        );
        for r in &self.instances {
            let (c1, c2) = r.shifts.map_or(("".into(), "".into()), |(a, b)| {
                (a.to_string(), b.to_string())
            });
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                r.x[0],
                r.x[1],
                r.gap,
                c1,
                c2,
                r.gamma_cost,
                r.path_cost.map_or(String::new(), |v| v.to_string()),
                r.excess.map_or(String::new(), |v| v.to_string())
            );
        }
        s
    }
}

pub fn lemma_gap_scan(
    table: &MetricTable,
    times: &[i64],
    velocities: &[Vec<f64>],
) -> Result<LemmaGapReport> {
    let mut per_t = Vec::new();
    let mut instances = Vec::new();
    let mut ok = 0;
    for &t in times {
        let rows: Vec<Result<SurgeryRow>> = velocities
            .par_iter()
            .map(|v| {
                let x: Vec<i64> = v.iter().map(|c| (c * t as f64).round() as i64).collect();
                let cells = table.disc.cells as i64;
                let k = t as usize * table.disc.steps;
                let z: Vec<i64> = x.iter().map(|c| c * cells).collect();
                let z2: Vec<i64> = z.iter().map(|c| 2 * c).collect();
                let gap = 2.0 * table.value(k, &z) - table.value(2 * k, &z2);
                let gamma_cost = table.value(2 * k, &z2);
                match path_surgery(table, t, &x) {
                    Ok(r) => Ok(SurgeryRow {
                        t,
                        x,
                        gap,
                        excess: Some(r.excess()),
                        shifts: Some((r.crossing.c1, r.crossing.c2)),
                        gamma_cost,
                        path_cost: Some(r.path_cost),
                    }),
                    Err(Error::Resolution(_)) => Ok(SurgeryRow {
                        t,
                        x,
                        gap,
                        excess: None,
                        shifts: None,
                        gamma_cost,
                        path_cost: None,
                    }),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        for r in rows {
            let r = r?;
            if !r.gap.is_finite() {
                return Err(Error::Unreachable(format!(
                    "sample {:?} at t = {t} is not reachable",
                    r.x
                )));
            }
            g_max = g_max.max(r.gap);
            g_min = g_min.min(r.gap);
            if r.excess.is_some() {
                ok += 1;
            }
            instances.push(r);
        }
        per_t.push((t, g_max, g_min));
    }
    Ok(LemmaGapReport {
        per_t,
        samples: instances.len(),
        surgery_ok: ok,
        instances,
    })
}

/// `max_k |f(t, x) - 2^{-k} f(2^k t, 2^k x)|` while `2^k t` fits the table.
pub fn geometric_gap(table: &MetricTable, t: i64, x: &[i64]) -> f64 {
    let base = table.f(t, x);
    let mut worst: f64 = 0.0;
    let mut s = 2;
    while s * t <= table.integer_horizon() {
        let xs: Vec<i64> = x.iter().map(|v| v * s).collect();
        let v = table.f(s * t, &xs) / s as f64;
        if v.is_finite() {
            worst = worst.max((base - v).abs());
        }
        s *= 2;
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianSpec;
    use crate::lattice::Discretization;
    use crate::legendre::build_lagrangian;
    use crate::metric::compute_metric_table;

    fn table(spec: &HamiltonianSpec, disc: Discretization, horizon: f64) -> MetricTable {
        let l = build_lagrangian(spec).unwrap();
        compute_metric_table(&l, horizon, Cone::new(disc.vmax).unwrap(), &disc).unwrap()
    }

    fn free2(horizon: f64) -> MetricTable {
        table(
            &HamiltonianSpec::constant(2, 1.0).unwrap(),
            Discretization::new(2, 2, 2, 4.0).unwrap(),
            horizon,
        )
    }

    fn osc2(horizon: f64) -> MetricTable {
        let spec = HamiltonianSpec::cosine(2, 3.0, &[(1.0, &[1, 0]), (1.0, &[0, 1])]).unwrap();
        table(&spec, Discretization::new(2, 2, 2, 3.0).unwrap(), horizon)
    }

    #[test]
    fn free_subadditivity_equality_cases() {
        let t = free2(2.0);
        // f(2, (4,0)) = f(1, (2,0)) * 2 in the free case
        assert!((t.f(2, &[4, 0]) - 2.0 * t.f(1, &[2, 0])).abs() < 1e-12);
        assert!(t.f(2, &[0, 0]) - 2.0 * t.f(1, &[0, 0]) <= 0.0);
        let r = check_subadditivity(&t, 500, 3);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrupted_table_fails_subadditivity() {
        let mut t = osc2(4.0);
        let k = t.disc.steps;
        t.corrupt(k, &[2, 0], -3.0);
        let r = check_subadditivity(&t, 100, 3);
        assert!(!r.passed(), "{r:?}");
    }

    #[test]
    fn periodicity_is_exact() {
        let t = osc2(3.0);
        assert_eq!(check_periodicity(&t, &[1, -2], 6), 0.0);
    }

    #[test]
    fn free_linear_growth() {
        let t = free2(4.0);
        let g = check_linear_growth(&t, &Cone::new(4.0).unwrap());
        assert!(g.k <= 5.0, "{g:?}");
        assert!(g.min_excess_over_t >= -1e-12);
    }

    #[test]
    fn free_geodesics_are_additive() {
        let t = free2(4.0);
        let g = extract_approximate_geodesic(&t, 4, &[4, 0]).unwrap();
        assert_eq!(
            g.nodes,
            (0..=4).map(|k| (k, vec![k, 0])).collect::<Vec<_>>()
        );
        assert!(g.defect < 1e-9);
        let s = extract_approximate_geodesic(&t, 4, &[0, 0]).unwrap();
        assert!(s.nodes.iter().all(|(_, x)| x == &vec![0, 0]));
        assert!(s.defect < 1e-9);
    }

    #[test]
    fn shift_identities() {
        let p =
            SpaceTimePath2D::from_points(0.5, &[[0.0, 0.0], [1.0, 0.5], [1.5, 2.0], [3.0, 2.5]]);
        let (s0, snapped) = cyclic_shift(&p, 0.0).unwrap();
        assert!(!snapped);
        assert_eq!(s0, p);
        let (st, _) = cyclic_shift(&p, p.duration()).unwrap();
        assert_eq!(st, p);
        let (s1, _) = cyclic_shift(&p, 0.5).unwrap();
        let mut a = p.increments();
        a.rotate_left(1);
        assert_eq!(s1.increments(), a);
        let (_, snapped) = cyclic_shift(&p, 0.7).unwrap();
        assert!(snapped);
        let line = SpaceTimePath2D::from_points(1.0, &[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(cyclic_shift(&line, 1.0).unwrap().0, line);
    }

    #[test]
    fn straight_lines_cross_in_the_middle() {
        let a = 2.0;
        let n = 8;
        let t = 4.0;
        let dt = t / n as f64;
        let e1: Vec<[f64; 2]> = (0..=n)
            .map(|i| [a * (1.0 - i as f64 / n as f64), 0.0])
            .collect();
        let e2: Vec<[f64; 2]> = (0..=n).map(|i| [a * i as f64 / n as f64, 0.0]).collect();
        let c = find_crossing(
            &SpaceTimePath2D::from_points(dt, &e1),
            &SpaceTimePath2D::from_points(dt, &e2),
            1e-9,
        )
        .unwrap();
        assert_eq!((c.c1, c.c2), (0, 0));
        assert!((c.s - t / 2.0).abs() < 1e-12);
        assert!((c.witness[1] - a / 2.0).abs() < 1e-12 && c.witness[2].abs() < 1e-12);
    }

    #[test]
    fn degenerate_crossing_is_immediate() {
        let e: Vec<[f64; 2]> = (0..=4).map(|i| [0.0, (i as f64).sin()]).collect();
        let p = SpaceTimePath2D::from_points(1.0, &e);
        let c = find_crossing(&p, &p, 1e-12).unwrap();
        assert_eq!(c.s, 0.0);
        assert_eq!(c.separation, 0.0);
    }

    #[test]
    fn translated_copies_need_a_shift() {
        // same bump profile in the normal direction, offset by delta
        let n = 16;
        let delta = 0.5;
        let bump = |i: usize| (std::f64::consts::PI * i as f64 / n as f64).sin();
        let e2: Vec<[f64; 2]> = (0..=n).map(|i| [0.0, bump(i)]).collect();
        let e1: Vec<[f64; 2]> = (0..=n).map(|i| [0.0, delta + bump(i)]).collect();
        let p1 = SpaceTimePath2D::from_points(0.25, &e1);
        let p2 = SpaceTimePath2D::from_points(0.25, &e2);
        let c = find_crossing(&p1, &p2, 1e-9).unwrap();
        assert!(c.separation <= 1e-9);
        assert!(c.c1 != c.c2);
    }

    #[test]
    fn free_surgery_returns_the_minimizer() {
        let t = free2(4.0);
        let r = path_surgery(&t, 2, &[2, 1]).unwrap();
        assert!(r.lemma_gap.abs() < 1e-9);
        assert!(r.excess().abs() < 1e-9);
        assert_eq!(r.path.nodes[2 * t.disc.steps], vec![4, 2]);
    }

    #[test]
    fn oscillatory_surgery_is_valid() {
        let t = osc2(8.0);
        let steps = t.disc.steps;
        for x in [[1i64, 0], [2, 1], [-1, 3], [3, -2]] {
            let r = path_surgery(&t, 4, &x).unwrap();
            let z: Vec<i64> = x.iter().map(|v| v * t.disc.cells as i64).collect();
            assert_eq!(r.path.nodes[4 * steps], z);
            assert_eq!(r.path.nodes.last().unwrap(), &vec![2 * z[0], 2 * z[1]]);
            assert!(r.lemma_gap >= -1e-9);
            assert!(
                r.excess() >= r.lemma_gap - 1e-9,
                "{} < {}",
                r.excess(),
                r.lemma_gap
            );
            assert!(r.segments.len() <= 4);
            let total: usize = r.segments.iter().map(|(a, b)| b - a).sum();
            assert_eq!(total, 4 * steps);
        }
    }
}
