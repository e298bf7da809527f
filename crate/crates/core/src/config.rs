//! Plain-text `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Numbers accept fractions such as `1/16`. Lists are comma separated, and
//! `potential.terms` and the momentum lists separate entries with `;`:
//!
//! ```text
//! dimension = 2
//! family = quadratic_minus_potential
//! potential.a0 = 3
//! potential.terms = 1,1,0; 1,0,1     # amplitude,k1,...,kd
//! grid.dx = 1/4
//! grid.dt = 1/4
//! sweep.eps = 1/4, 1/8, 1/16
//! ```
//!
//! `family = tabulated` reads `potential.n` (points per axis) and
//! `potential.values` (row-major samples on the unit torus) instead of the
//! cosine coefficients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hamiltonian::{Family, HamiltonianSpec, Potential, TabulatedPotential};
use crate::lattice::{Discretization, Quadrature};
use crate::solver::InitialData;

const KEYS: &[&str] = &[
    "dimension",
    "family",
    "potential.a0",
    "potential.terms",
    "potential.n",
    "potential.values",
    "momentum_cap",
    "grid.dx",
    "grid.dt",
    "vmax",
    "quadrature",
    "sweep.eps",
    "sweep.t",
    "sweep.probe",
    "targets.count",
    "targets.radius",
    "initial",
    "seed",
    "effective.n_max",
    "effective.velocity_box",
    "effective.momentum_box",
    "effective.momentum_points",
    "properties.horizon",
    "properties.pairs",
    "properties.samples",
    "properties.times",
    "properties.sizes",
    "properties.growth_horizon",
    "properties.oracle_p",
    "properties.oracle_time",
    "metric.horizon",
    "metric.stride",
];

#[derive(Debug, Clone)]
pub struct Config {
    /// Hamiltonian as written (not yet normalized).
    pub spec: HamiltonianSpec,
    pub disc: Discretization,
    pub sweep_eps: Vec<f64>,
    pub sweep_t: f64,
    pub probe: bool,
    pub targets_count: usize,
    /// Defaults to `2 t`.
    pub targets_radius: f64,
    pub initial: InitialData,
    pub seed: u64,
    pub n_max: usize,
    pub velocity_box: f64,
    pub momentum_box: f64,
    pub momentum_points: Option<usize>,
    pub properties: PropertyConfig,
    pub metric_horizon: f64,
    pub metric_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyConfig {
    pub horizon: f64,
    pub pairs: usize,
    pub samples: usize,
    pub times: Vec<i64>,
    pub sizes: Vec<i64>,
    pub growth_horizon: f64,
    pub oracle_p: Vec<Vec<f64>>,
    pub oracle_time: usize,
}

struct Entry {
    line: usize,
    value: String,
}

struct Raw {
    entries: BTreeMap<String, Entry>,
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().ok()?;
        let b: f64 = b.trim().parse().ok()?;
        if b == 0.0 {
            return None;
        }
        return Some(a / b);
    }
    s.parse().ok().filter(|v: &f64| v.is_finite())
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return parse_err(line, format!("expected key = value, found {content:?}"));
            };
            let key = k.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return parse_err(line, format!("unknown key {key:?}"));
            }
            if let Some(prev) = entries.get(&key) {
                let prev: &Entry = prev;
                return parse_err(
                    line,
                    format!("duplicate key {key:?} (first set on line {})", prev.line),
                );
            }
            entries.insert(
                key,
                Entry {
                    line,
                    value: v.trim().to_string(),
                },
            );
        }
        Ok(Raw { entries })
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn number(&self, key: &str, default: f64) -> Result<f64> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(e) => parse_number(&e.value).map_or_else(
                || parse_err(e.line, format!("{key}: not a number: {:?}", e.value)),
                Ok,
            ),
        }
    }

    fn opt_number(&self, key: &str) -> Result<Option<f64>> {
        if self.entries.contains_key(key) {
            self.number(key, 0.0).map(Some)
        } else {
            Ok(None)
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(e) => e.value.parse().or_else(|_| {
                parse_err(
                    e.line,
                    format!("{key}: not a nonnegative integer: {:?}", e.value),
                )
            }),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| parse_number(s).ok_or(()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .or_else(|_| {
                parse_err(
                    e.line,
                    format!("{key}: expected a comma separated list of numbers"),
                )
            })
    }

    fn int_list(&self, key: &str, default: &[i64]) -> Result<Vec<i64>> {
        let Some(e) = self.entries.get(key) else {
            return Ok(default.to_vec());
        };
        e.value
            .split(',')
            .map(|s| s.trim().parse::<i64>().ok().filter(|v| *v > 0).ok_or(()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .or_else(|_| parse_err(e.line, format!("{key}: expected positive integers")))
    }

    /// `;`-separated groups of comma separated numbers.
    fn groups(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        let mut out = Vec::new();
        for g in e.value.split(';').map(str::trim).filter(|g| !g.is_empty()) {
            let v: Option<Vec<f64>> = g.split(',').map(parse_number).collect();
            match v {
                Some(v) => out.push(v),
                None => return parse_err(e.line, format!("{key}: bad entry {g:?}")),
            }
        }
        Ok(Some(out))
    }
}

fn parse_initial(raw: &Raw, dim: usize) -> Result<InitialData> {
    let Some(e) = raw.entries.get("initial") else {
        return Ok(InitialData::cone(1.0));
    };
    let (kind, args) = e.value.split_once(':').unwrap_or((e.value.as_str(), ""));
    let nums: Option<Vec<f64>> = if args.trim().is_empty() {
        Some(vec![])
    } else {
        args.split(',').map(parse_number).collect()
    };
    let Some(nums) = nums else {
        return parse_err(e.line, format!("initial: bad arguments {args:?}"));
    };
    match (kind.trim(), nums.len()) {
        ("cone", 0) => Ok(InitialData::cone(1.0)),
        ("cone", 1) => Ok(InitialData::cone(nums[0])),
        ("zero", 0) => Ok(InitialData::zero()),
        ("affine", n) if n == dim => Ok(InitialData::affine(&nums)),
        _ => parse_err(
            e.line,
            format!(
                "initial: expected cone[:scale], zero or affine:p1,..,p{dim}, found {:?}",
                e.value
            ),
        ),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let raw = Raw::parse(text)?;
        let dim = raw.count("dimension", 1)?;
        if !(1..=3).contains(&dim) {
            return parse_err(
                raw.line("dimension"),
                format!("dimension must be 1, 2 or 3, got {dim}"),
            );
        }
        let family = raw
            .entries
            .get("family")
            .map_or("quadratic_minus_potential", |e| e.value.as_str());
        let potential = match family {
            "tabulated" => {
                let n = raw.count("potential.n", 0)?;
                let Some(values) = raw.list("potential.values")? else {
                    return parse_err(
                        raw.line("family"),
                        "tabulated family needs potential.values",
                    );
                };
                TabulatedPotential::new(n, dim, values)
                    .map(Potential::Tabulated)
                    .or_else(|e| parse_err(raw.line("potential.values"), e.to_string()))?
            }
            tag if Family::from_tag(tag).is_some() => {
                let a0 = raw.number("potential.a0", 1.0)?;
                let mut terms = Vec::new();
                for g in raw.groups("potential.terms")?.unwrap_or_default() {
                    if g.len() != dim + 1 {
                        return parse_err(
                            raw.line("potential.terms"),
                            format!("term {g:?} needs amplitude and {dim} wave components"),
                        );
                    }
                    if g[1..].iter().any(|k| k.fract() != 0.0) {
                        return parse_err(
                            raw.line("potential.terms"),
                            "wave vectors must be integers",
                        );
                    }
                    terms.push(crate::hamiltonian::CosineTerm {
                        amplitude: g[0],
                        wave: g[1..].iter().map(|&k| k as i64).collect(),
                    });
                }
                Potential::Cosine(crate::hamiltonian::CosineSeries { a0, terms })
            }
            other => return parse_err(raw.line("family"), format!("unknown family {other:?}")),
        };
        let mut spec = HamiltonianSpec::new(dim, potential)
            .or_else(|e| parse_err(raw.line("potential.terms"), e.to_string()))?;
        if let Some(cap) = raw.opt_number("momentum_cap")? {
            spec = spec
                .with_momentum_cap(cap)
                .or_else(|e| parse_err(raw.line("momentum_cap"), e.to_string()))?;
        }
        let dx = raw.number("grid.dx", 1.0 / 16.0)?;
        let dt = raw.number("grid.dt", 1.0 / 8.0)?;
        let (cells, steps) = ((1.0 / dx).round(), (1.0 / dt).round());
        if !(dx > 0.0 && (cells * dx - 1.0).abs() < 1e-9) {
            return parse_err(
                raw.line("grid.dx"),
                format!("grid.dx must be 1/n, got {dx}"),
            );
        }
        if !(dt > 0.0 && (steps * dt - 1.0).abs() < 1e-9) {
            return parse_err(
                raw.line("grid.dt"),
                format!("grid.dt must be 1/n, got {dt}"),
            );
        }
        let vmax = match raw.opt_number("vmax")? {
            Some(v) => v,
            None => 4.0 * (spec.max_potential() - spec.min_potential() + 1.0).sqrt(),
        };
        let quadrature = match raw.entries.get("quadrature") {
            None => Quadrature::default(),
            Some(e) => Quadrature::from_tag(&e.value).map_or_else(
                || parse_err(e.line, format!("unknown quadrature {:?}", e.value)),
                Ok,
            )?,
        };
        let disc = Discretization::new(dim, cells as usize, steps as usize, vmax)
            .or_else(|e| parse_err(raw.line("vmax").max(raw.line("grid.dt")), e.to_string()))?
            .with_quadrature(quadrature);
        let sweep_eps = raw
            .list("sweep.eps")?
            .unwrap_or_else(|| vec![0.25, 0.125, 0.0625, 0.03125, 0.015625]);
        if sweep_eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0))
            || sweep_eps.windows(2).any(|w| w[1] >= w[0])
        {
            return parse_err(
                raw.line("sweep.eps"),
                "sweep.eps must be strictly decreasing values in (0, 1]",
            );
        }
        let sweep_t = raw.number("sweep.t", 1.0)?;
        if !(sweep_t > 0.0) {
            return parse_err(raw.line("sweep.t"), "sweep.t must be positive");
        }
        let probe = match raw.entries.get("sweep.probe") {
            None => true,
            Some(e) => match e.value.as_str() {
                "true" => true,
                "false" => false,
                _ => return parse_err(e.line, "sweep.probe must be true or false"),
            },
        };
        let targets_count = raw.count("targets.count", 33)?;
        if targets_count == 0 {
            return parse_err(raw.line("targets.count"), "targets.count must be positive");
        }
        let targets_radius = raw.number("targets.radius", 2.0 * sweep_t)?;
        let initial = parse_initial(&raw, dim)?;
        let seed = raw.entries.get("seed").map_or(Ok(0), |e| {
            e.value
                .parse()
                .or_else(|_| parse_err(e.line, "seed must be a nonnegative integer"))
        })?;
        let n_max = raw.count("effective.n_max", 64)?;
        if n_max < 2 || !n_max.is_power_of_two() {
            return parse_err(
                raw.line("effective.n_max"),
                "effective.n_max must be a power of two >= 2",
            );
        }
        let velocity_box = raw.number("effective.velocity_box", vmax - 0.25)?;
        if !(velocity_box > 0.0 && velocity_box <= vmax) {
            return parse_err(
                raw.line("effective.velocity_box"),
                "effective.velocity_box must lie in (0, vmax]",
            );
        }
        let momentum_box = raw.number("effective.momentum_box", 2.5)?;
        let momentum_points = raw
            .entries
            .get("effective.momentum_points")
            .map(|_| raw.count("effective.momentum_points", 0))
            .transpose()?;
        let horizon = raw.number("properties.horizon", 16.0)?;
        let oracle_p = match raw.groups("properties.oracle_p")? {
            Some(g) => {
                if g.iter().any(|p| p.len() != dim) {
                    return parse_err(
                        raw.line("properties.oracle_p"),
                        format!("oracle momenta need {dim} components"),
                    );
                }
                g
            }
            None => {
                let mut p = vec![0.0; dim];
                let zero = p.clone();
                p[0] = 1.0;
                vec![zero, p]
            }
        };
        let properties = PropertyConfig {
            horizon,
            pairs: raw.count("properties.pairs", 1000)?,
            samples: raw.count("properties.samples", 24)?,
            times: raw.int_list("properties.times", &[4, 8, 16])?,
            sizes: raw.int_list("properties.sizes", &[4, 8, 16, 32])?,
            growth_horizon: raw.number("properties.growth_horizon", 4.0)?,
            oracle_p,
            oracle_time: raw.count("properties.oracle_time", 64)?,
        };
        Ok(Config {
            spec,
            disc,
            sweep_eps,
            sweep_t,
            probe,
            targets_count,
            targets_radius,
            initial,
            seed,
            n_max,
            velocity_box,
            momentum_box,
            momentum_points,
            properties,
            metric_horizon: raw.number("metric.horizon", 2.0)?,
            metric_stride: raw.count("metric.stride", 1)?.max(1),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_and_lists() {
        assert_eq!(parse_number("1/16"), Some(0.0625));
        assert_eq!(parse_number(" 2.5 "), Some(2.5));
        assert_eq!(parse_number("1/0"), None);
        let c = Config::parse("dimension = 2\npotential.a0 = 3\npotential.terms = 1,1,0; 1,0,1\nsweep.eps = 1/4, 1/8\n").unwrap();
        assert_eq!(c.spec.dimension, 2);
        assert_eq!(c.sweep_eps, vec![0.25, 0.125]);
        assert_eq!(c.spec.potential_at(&[0.0, 0.0]), 5.0);
        assert_eq!(c.properties.oracle_p, vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Config::parse("# header\ndimension = 1\nbogus = 3\n").unwrap_err();
        assert_eq!(
            e,
            Error::Parse {
                line: 3,
                message: "unknown key \"bogus\"".into()
            }
        );
        let e = Config::parse("dimension = 1\n\npotential.terms = 1,1,1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = Config::parse("grid.dx = 0.3\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = Config::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = Config::parse("dimension 2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = Config::parse("sweep.eps = 1/8, 1/4\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn tabulated_family() {
        let c = Config::parse("family = tabulated\npotential.n = 4\npotential.values = 1,2,3,2\n")
            .unwrap();
        assert_eq!(c.spec.potential_at(&[0.5]), 3.0);
        let e = Config::parse("family = tabulated\npotential.n = 4\npotential.values = 1,2,3\n")
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
    }
}
