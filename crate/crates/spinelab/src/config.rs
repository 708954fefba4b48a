//! Flat key-value experiment configuration with model sections.
//!
//! Syntax: `key = value` lines, `#` comments, and section headers `[bbm]`,
//! `[typed]`, `[ou]` scoping model parameters. Lists are whitespace- or
//! comma-separated; `linspace(a, b, n)` expands to an inclusive grid;
//! offspring laws are written `finite(p0, p1, ...)` or
//! `logtail(gamma=1.5, kmin=2)`. Matrices are row-major lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mc::Model;
use crate::multitype::TypedParams;
use crate::numeric::linspace;
use crate::offspring::OffspringDist;
use crate::outype::OuParams;
use crate::bbm::BbmParams;
use crate::sim::DEFAULT_POPULATION_CAP;

/// Which measure the `simulate` subcommand draws under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measure {
    P,
    Q,
}

/// A fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: Model,
    pub lambda: Option<f64>,
    pub p: Option<f64>,
    pub t: Option<f64>,
    pub time_grid: Option<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
    pub p_grid: Option<Vec<f64>>,
    pub reps: u64,
    pub subtree_reps: u64,
    pub seed: u64,
    pub cap: u64,
    pub step: f64,
    pub measure: Measure,
    pub out: Option<PathBuf>,
    /// Sorted `key = value` echo of everything that was set, for embedding
    /// in output headers.
    pub resolved: Vec<(String, String)>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Raw parsed file: `(section, key) -> value`, with `""` as the global
/// section.
struct RawConfig {
    entries: BTreeMap<(String, String), String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", lineno + 1)))?;
            entries.insert(
                (section.clone(), key.trim().to_string()),
                value.trim().to_string(),
            );
        }
        Ok(RawConfig { entries })
    }

    /// Model-section value, falling back to the global section.
    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .or_else(|| self.entries.get(&(String::new(), key.to_string())))
            .map(String::as_str)
    }

    fn global(&self, key: &str) -> Option<&str> {
        self.entries
            .get(&(String::new(), key.to_string()))
            .map(String::as_str)
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| cfg_err(format!("{key}: expected a number, got '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse::<u64>()
        .map_err(|_| cfg_err(format!("{key}: expected a nonnegative integer, got '{v}'")))
}

/// Lists are whitespace/comma separated; `linspace(a, b, n)` expands.
fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    let v = v.trim();
    if let Some(inner) = v
        .strip_prefix("linspace(")
        .and_then(|s| s.strip_suffix(')'))
    {
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(cfg_err(format!("{key}: linspace takes (start, stop, count)")));
        }
        let a = parse_f64(key, parts[0])?;
        let b = parse_f64(key, parts[1])?;
        let n = parse_u64(key, parts[2])? as usize;
        if n < 2 {
            return Err(cfg_err(format!("{key}: linspace needs count >= 2")));
        }
        return Ok(linspace(a, b, n));
    }
    let items: Vec<f64> = v
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(cfg_err(format!("{key}: empty list")));
    }
    Ok(items)
}

/// `finite(p0, p1, ...)` or `logtail(gamma=..., kmin=...)`.
pub fn parse_offspring(key: &str, v: &str) -> Result<OffspringDist> {
    let v = v.trim();
    if let Some(inner) = v.strip_prefix("finite(").and_then(|s| s.strip_suffix(')')) {
        let probs = parse_list(key, inner)?;
        return OffspringDist::finite(&probs);
    }
    if let Some(inner) = v.strip_prefix("logtail(").and_then(|s| s.strip_suffix(')')) {
        let mut gamma = None;
        let mut kmin = None;
        for part in inner.split(',') {
            let (k, val) = part
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("{key}: logtail takes gamma=..., kmin=...")))?;
            match k.trim() {
                "gamma" => gamma = Some(parse_f64(key, val.trim())?),
                "kmin" => kmin = Some(parse_u64(key, val.trim())? as u32),
                other => return Err(cfg_err(format!("{key}: unknown logtail field '{other}'"))),
            }
        }
        let gamma = gamma.ok_or_else(|| cfg_err(format!("{key}: logtail needs gamma")))?;
        let kmin = kmin.ok_or_else(|| cfg_err(format!("{key}: logtail needs kmin")))?;
        return OffspringDist::log_power_tail(gamma, kmin);
    }
    Err(cfg_err(format!(
        "{key}: expected finite(...) or logtail(gamma=..., kmin=...), got '{v}'"
    )))
}

fn require<'a>(raw: &'a RawConfig, section: &str, key: &str) -> Result<&'a str> {
    raw.get(section, key)
        .ok_or_else(|| cfg_err(format!("missing required key '{key}' (model {section})")))
}

fn build_model(raw: &RawConfig) -> Result<Model> {
    let name = raw
        .global("model")
        .ok_or_else(|| cfg_err("missing required key 'model' (bbm | typed | ou)"))?;
    match name {
        "bbm" => {
            let r = parse_f64("r", require(raw, "bbm", "r")?)?;
            let x0 = raw
                .get("bbm", "x0")
                .map(|v| parse_f64("x0", v))
                .transpose()?
                .unwrap_or(0.0);
            let offspring = parse_offspring("offspring", require(raw, "bbm", "offspring")?)?;
            Ok(Model::Bbm(BbmParams::new(r, offspring, x0)?))
        }
        "typed" => {
            let theta = parse_f64("theta", require(raw, "typed", "theta")?)?;
            let q_flat = parse_list("q", require(raw, "typed", "q")?)?;
            let n = (q_flat.len() as f64).sqrt().round() as usize;
            if n * n != q_flat.len() || n < 2 {
                return Err(cfg_err(format!(
                    "q: expected a square row-major rate matrix, got {} entries",
                    q_flat.len()
                )));
            }
            let q = DMatrix::from_row_slice(n, n, &q_flat);
            let pi = raw
                .get("typed", "pi")
                .map(|v| parse_list("pi", v))
                .transpose()?;
            let a = parse_list("a", require(raw, "typed", "a")?)?;
            let r = parse_list("r", require(raw, "typed", "r")?)?;
            let mut offspring = Vec::with_capacity(n);
            let default = raw
                .get("typed", "offspring")
                .map(|v| parse_offspring("offspring", v))
                .transpose()?;
            for y in 1..=n {
                let key = format!("offspring_{y}");
                let dist = match raw.get("typed", &key) {
                    Some(v) => parse_offspring(&key, v)?,
                    None => default.clone().ok_or_else(|| {
                        cfg_err(format!("missing offspring law for type {y} ('offspring' or '{key}')"))
                    })?,
                };
                offspring.push(dist);
            }
            let x0 = raw
                .get("typed", "x0")
                .map(|v| parse_f64("x0", v))
                .transpose()?
                .unwrap_or(0.0);
            let y0 = raw
                .get("typed", "y0")
                .map(|v| parse_u64("y0", v))
                .transpose()?
                .unwrap_or(1);
            if y0 < 1 || y0 as usize > n {
                return Err(cfg_err(format!("y0: type index must be in 1..={n}")));
            }
            Ok(Model::Typed(TypedParams::new(
                theta,
                q,
                pi,
                a,
                r,
                offspring,
                x0,
                y0 as usize - 1,
            )?))
        }
        "ou" => {
            let theta = parse_f64("theta", require(raw, "ou", "theta")?)?;
            let a = parse_f64("a", require(raw, "ou", "a")?)?;
            let r = parse_f64("r", require(raw, "ou", "r")?)?;
            let rho = parse_f64("rho", require(raw, "ou", "rho")?)?;
            let x0 = raw
                .get("ou", "x0")
                .map(|v| parse_f64("x0", v))
                .transpose()?
                .unwrap_or(0.0);
            let y0 = raw
                .get("ou", "y0")
                .map(|v| parse_f64("y0", v))
                .transpose()?
                .unwrap_or(0.0);
            Ok(Model::Ou(OuParams::new(theta, a, r, rho, x0, y0)?))
        }
        other => Err(cfg_err(format!("model: unknown model '{other}'"))),
    }
}

/// Parse and validate a configuration file's text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw = RawConfig::parse(text)?;
    let model = build_model(&raw)?;
    let section = model.name();

    let get_f64 = |key: &str| -> Result<Option<f64>> {
        raw.get(section, key).map(|v| parse_f64(key, v)).transpose()
    };
    let get_list = |key: &str| -> Result<Option<Vec<f64>>> {
        raw.get(section, key).map(|v| parse_list(key, v)).transpose()
    };

    let lambda = get_f64("lambda")?;
    let p = get_f64("p")?;
    let t = get_f64("t")?;
    let time_grid = get_list("time_grid")?;
    let lambda_grid = get_list("lambda_grid")?;
    let p_grid = get_list("p_grid")?;
    let reps = raw
        .global("reps")
        .map(|v| parse_u64("reps", v))
        .transpose()?
        .unwrap_or(10_000);
    let subtree_reps = raw
        .global("subtree_reps")
        .map(|v| parse_u64("subtree_reps", v))
        .transpose()?
        .unwrap_or(1000);
    let seed = raw
        .global("seed")
        .map(|v| parse_u64("seed", v))
        .transpose()?
        .unwrap_or(0);
    let cap = raw
        .global("cap")
        .map(|v| parse_u64("cap", v))
        .transpose()?
        .unwrap_or(DEFAULT_POPULATION_CAP);
    let step = get_f64("h")?.unwrap_or(crate::outype::DEFAULT_STEP);
    if !(step > 0.0) {
        return Err(cfg_err("h: step must be > 0"));
    }
    let measure = match raw.global("measure").unwrap_or("p") {
        "p" | "P" => Measure::P,
        "q" | "Q" => Measure::Q,
        other => return Err(cfg_err(format!("measure: expected p or q, got '{other}'"))),
    };
    let out = raw.global("out").map(PathBuf::from);

    let resolved = raw
        .entries
        .iter()
        .map(|((sec, key), value)| {
            let k = if sec.is_empty() {
                key.clone()
            } else {
                format!("{sec}.{key}")
            };
            (k, value.clone())
        })
        .collect();

    Ok(RunConfig {
        model,
        lambda,
        p,
        t,
        time_grid,
        lambda_grid,
        p_grid,
        reps,
        subtree_reps,
        seed,
        cap,
        step,
        measure,
        out,
        resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_bbm_config() {
        let cfg = parse_config(
            "model = bbm\nlambda = -0.5\nreps = 100\nseed = 7\n\n[bbm]\nr = 1.0\noffspring = finite(0.0, 1.0)\n",
        )
        .unwrap();
        assert_eq!(cfg.model.name(), "bbm");
        assert_eq!(cfg.lambda, Some(-0.5));
        assert_eq!(cfg.reps, 100);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn parses_typed_with_linspace_and_per_type_offspring() {
        let cfg = parse_config(
            "model = typed\nlambda_grid = linspace(-2, -0.1, 5)\n[typed]\ntheta = 1.0\n\
             q = -1 1 1 -1\na = 1 2\nr = 1 1\noffspring = finite(0, 1)\n\
             offspring_2 = finite(0.5, 0.5)\ny0 = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.lambda_grid.as_ref().unwrap().len(), 5);
        match &cfg.model {
            Model::Typed(p) => {
                assert_eq!(p.n(), 2);
                assert_eq!(p.y0(), 1);
                assert_eq!(p.offspring_mean(0), 1.0);
                assert_eq!(p.offspring_mean(1), 0.5);
            }
            _ => panic!("expected typed"),
        }
    }

    #[test]
    fn malformed_q_names_the_invariant() {
        let err = parse_config(
            "model = typed\n[typed]\ntheta = 1.0\nq = -1 0.5 1 -1\na = 1 1\nr = 1 1\n\
             offspring = finite(0, 1)\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("rows of Q sum to 0"), "{err}");
    }

    #[test]
    fn rejects_unknown_model_and_bad_lists() {
        assert!(parse_config("model = brownian\n").is_err());
        assert!(parse_config("model = bbm\n[bbm]\nr = one\noffspring = finite(1)\n").is_err());
        assert!(
            parse_config("model = bbm\n[bbm]\nr = 1\noffspring = finite(0.5, 0.6)\n").is_err()
        );
    }

    #[test]
    fn ou_config_round_trip() {
        let cfg = parse_config(
            "model = ou\nlambda = -0.5\n[ou]\ntheta = 10\na = 1\nr = 1\nrho = 1\ny0 = 0.5\nh = 0.005\n",
        )
        .unwrap();
        assert_eq!(cfg.step, 0.005);
        match cfg.model {
            Model::Ou(p) => assert_eq!(p.y0, 0.5),
            _ => panic!("expected ou"),
        }
    }
}
