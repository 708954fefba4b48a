//! Monte Carlo harness: replicate orchestration, estimators with standard
//! errors, and the cross-model verification experiments (martingale mean,
//! change-of-measure consistency, L^p growth curves, spine statistics,
//! left-most particle speed, spine-decomposition checks).
//!
//! Every replicate draws from its own counter-based stream derived from
//! `(seed, context, replicate)`, replicates are distributed over the current
//! rayon pool, and aggregation is pairwise over the replicate-ordered
//! buffer, so every estimate is reproducible bit for bit regardless of the
//! worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::bbm::{self, BbmParams};
use crate::error::{Error, Result};
use crate::multitype::{self, TypedParams};
use crate::numeric::{mean, ols_slope_with_se, pairwise_sum, sample_variance, variance_se};
use crate::outype::{self, OuParams};
use crate::rng::{stream, Context};
use crate::sim::DEFAULT_POPULATION_CAP;
use crate::trees::SpineRecord;

/// The three models, wrapped for uniform dispatch.
#[derive(Clone, Debug)]
pub enum Model {
    Bbm(BbmParams),
    Typed(TypedParams),
    Ou(OuParams),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Bbm(_) => "bbm",
            Model::Typed(_) => "typed",
            Model::Ou(_) => "ou",
        }
    }
}

/// Execution knobs shared by all experiments.
#[derive(Clone, Copy, Debug)]
pub struct McSettings {
    /// Population cap per replicate.
    pub cap: u64,
    /// Type-step for the OU model (unused by the exact models).
    pub step: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            cap: DEFAULT_POPULATION_CAP,
            step: outype::DEFAULT_STEP,
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub extinct_fraction: f64,
}

impl Estimate {
    fn from_values(values: &[f64], extinct: u64) -> Estimate {
        assert!(values.len() >= 2, "estimates need at least two replicates");
        let m = mean(values);
        let var = sample_variance(values, m);
        Estimate {
            mean: m,
            se: (var / values.len() as f64).sqrt(),
            n: values.len() as u64,
            extinct_fraction: extinct as f64 / values.len() as f64,
        }
    }
}

/// Flag used by reports: an estimate whose standard error dwarfs its mean
/// carries little information (heavy-tailed regimes).
pub fn high_relative_se(e: &Estimate) -> bool {
    e.se > 0.5 * e.mean.abs()
}

/// Difference of two estimates in combined standard errors.
pub fn z_score(a: &Estimate, b: &Estimate) -> f64 {
    let se = (a.se * a.se + b.se * b.se).sqrt();
    if se == 0.0 {
        if a.mean == b.mean {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a.mean - b.mean) / se
    }
}

fn ensure_reps(n_reps: u64) -> Result<()> {
    if n_reps < 2 {
        return Err(Error::Config("at least two replicates are required".into()));
    }
    Ok(())
}

/// Run one closure per replicate on the current rayon pool, preserving
/// replicate order; the lowest-index error wins, tagged with its replicate.
fn run_reps<T, F>(n_reps: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| f(rep).map_err(|e| e.with_replicate(rep)))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

/// One P-simulation replicate reduced to `(Z_lambda(t), |N_t|)`.
fn z_and_count_p(
    model: &Model,
    lambda: f64,
    t: f64,
    settings: &McSettings,
    rng: &mut crate::rng::StreamRng,
) -> Result<(f64, u64)> {
    let mut acc = 0.0;
    let mut count = 0u64;
    match model {
        Model::Bbm(p) => {
            let spec = bbm::bbm_spectral(p, lambda)?;
            bbm::walk_p_bbm(p, t, settings.cap, rng, &mut |_, x, _, _| {
                acc += (spec.lambda * x - spec.e_lambda * t).exp();
                count += 1;
            })?;
        }
        Model::Typed(p) => {
            let spec = multitype::typed_spectral(p, lambda)?;
            multitype::walk_p_typed(p, t, settings.cap, rng, &mut |_, x, y, _| {
                acc += spec.v_lambda[y] * (spec.lambda * x - spec.e_lambda * t).exp();
                count += 1;
            })?;
        }
        Model::Ou(p) => {
            let spec = outype::ou_spectral(p, lambda)?;
            outype::walk_p_ou(p, t, settings.step, settings.cap, rng, &mut |_, x, y, _| {
                acc += (spec.psi_minus * y * y + spec.lambda * x - spec.e_lambda * t).exp();
                count += 1;
            })?;
        }
    }
    Ok((acc, count))
}

/// Initial martingale value `Z_lambda(0)`.
pub fn z_initial(model: &Model, lambda: f64) -> Result<f64> {
    Ok(match model {
        Model::Bbm(p) => {
            bbm::bbm_spectral(p, lambda)?;
            (lambda * p.start_position()).exp()
        }
        Model::Typed(p) => {
            let spec = multitype::typed_spectral(p, lambda)?;
            spec.v_lambda[p.y0()] * (lambda * p.x0()).exp()
        }
        Model::Ou(p) => {
            let spec = outype::ou_spectral(p, lambda)?;
            (spec.psi_minus * p.y0 * p.y0 + lambda * p.x0).exp()
        }
    })
}

/// Monte Carlo mean of `Z_lambda(t)` under the original measure.
pub fn estimate_martingale_mean(
    model: &Model,
    lambda: f64,
    t: f64,
    n_reps: u64,
    seed: u64,
    settings: &McSettings,
) -> Result<Estimate> {
    ensure_reps(n_reps)?;
    z_initial(model, lambda)?; // validates lambda against the model up front
    let rows = run_reps(n_reps, |rep| {
        let mut rng = stream(seed, Context::PSimulation, rep);
        z_and_count_p(model, lambda, t, settings, &mut rng)
    })?;
    let values: Vec<f64> = rows.iter().map(|(z, _)| *z).collect();
    let extinct = rows.iter().filter(|(_, c)| *c == 0).count() as u64;
    Ok(Estimate::from_values(&values, extinct))
}

/// A time-indexed family of estimates of `E[Z_lambda(t)^p]` with a fitted
/// log-slope. The slope is fitted by least squares on `log(mean)` over the
/// grid times with positive means; its half-width is three propagated
/// standard errors. `max_share` reports the largest single-replicate
/// contribution to each estimate; a share above one half marks the point
/// unreliable rather than asserting anything from it.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthCurve {
    pub times: Vec<f64>,
    pub values: Vec<Estimate>,
    pub max_share: Vec<f64>,
    pub unreliable: Vec<bool>,
    pub log_slope: f64,
    pub log_slope_halfwidth: f64,
}

/// Monte Carlo estimates of `E[Z_lambda(t)^p]` on a time grid, with the
/// fitted growth rate of the log-mean.
pub fn estimate_p_moment_curve(
    model: &Model,
    lambda: f64,
    p: f64,
    times: &[f64],
    n_reps: u64,
    seed: u64,
    settings: &McSettings,
) -> Result<GrowthCurve> {
    ensure_reps(n_reps)?;
    bbm::validate_p(p)?;
    if times.is_empty() {
        return Err(Error::Config("time grid must be nonempty".into()));
    }
    z_initial(model, lambda)?;
    let mut values = Vec::with_capacity(times.len());
    let mut max_share = Vec::with_capacity(times.len());
    let mut unreliable = Vec::with_capacity(times.len());
    for (ti, &t) in times.iter().enumerate() {
        let rows = run_reps(n_reps, |rep| {
            let mut rng = stream(seed, Context::PSimulation, ti as u64 * n_reps + rep);
            let (z, count) = z_and_count_p(model, lambda, t, settings, &mut rng)?;
            Ok((z.powf(p), count))
        })?;
        let vals: Vec<f64> = rows.iter().map(|(v, _)| *v).collect();
        let extinct = rows.iter().filter(|(_, c)| *c == 0).count() as u64;
        let est = Estimate::from_values(&vals, extinct);
        let total = pairwise_sum(&vals);
        let share = if total > 0.0 {
            vals.iter().fold(0.0f64, |m, &v| m.max(v)) / total
        } else {
            0.0
        };
        values.push(est);
        max_share.push(share);
        unreliable.push(share > 0.5);
    }
    // Fit over the times with positive means.
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    let mut ses = Vec::new();
    for (i, est) in values.iter().enumerate() {
        if est.mean > 0.0 {
            ts.push(times[i]);
            logs.push(est.mean.ln());
            ses.push(est.se / est.mean);
        }
    }
    if ts.len() < 2 {
        return Err(Error::Config(
            "p-moment curve needs at least two grid times with positive means".into(),
        ));
    }
    if ts.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Config("time grid must contain distinct times".into()));
    }
    let (slope, slope_sd) = ols_slope_with_se(&ts, &logs, &ses);
    Ok(GrowthCurve {
        times: times.to_vec(),
        values,
        max_share,
        unreliable,
        log_slope: slope,
        log_slope_halfwidth: 3.0 * slope_sd,
    })
}

/// Two sides of the change-of-measure identity
/// `E_P[F Z_lambda(t)] / Z_lambda(0) = E_Q[F]` for `F = exp(-|N_t|)`,
/// with their discrepancy in combined standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct RnReport {
    pub p_side: Estimate,
    pub q_side: Estimate,
    pub z: f64,
}

/// Empirical fingerprint of the measure change: the bounded functional
/// `F = exp(-|N_t|)` integrated against `Z_lambda(t)/Z_lambda(0)` under P
/// must match its plain expectation under the spine construction.
pub fn rn_consistency(
    model: &Model,
    lambda: f64,
    t: f64,
    n_reps: u64,
    seed: u64,
    settings: &McSettings,
) -> Result<RnReport> {
    ensure_reps(n_reps)?;
    let z0 = z_initial(model, lambda)?;
    let p_rows = run_reps(n_reps, |rep| {
        let mut rng = stream(seed, Context::PSimulation, rep);
        let (z, count) = z_and_count_p(model, lambda, t, settings, &mut rng)?;
        Ok(((-(count as f64)).exp() * z / z0, count))
    })?;
    let p_vals: Vec<f64> = p_rows.iter().map(|(v, _)| *v).collect();
    let p_ext = p_rows.iter().filter(|(_, c)| *c == 0).count() as u64;

    let q_vals: Vec<f64> = match model {
        Model::Bbm(p) => run_reps(n_reps, |rep| {
            let mut rng = stream(seed, Context::QSimulation, rep);
            let mut count = 0u64;
            bbm::walk_q_bbm(p, lambda, t, settings.cap, true, &mut rng, &mut |_, _, _, _| {
                count += 1;
            })?;
            Ok((-(count as f64)).exp())
        })?,
        Model::Typed(p) => {
            let spec = multitype::typed_spectral(p, lambda)?;
            run_reps(n_reps, |rep| {
                let mut rng = stream(seed, Context::QSimulation, rep);
                let mut count = 0u64;
                multitype::walk_q_typed(
                    p,
                    &spec,
                    t,
                    settings.cap,
                    true,
                    0.0,
                    &mut rng,
                    &mut |_, _, _, _| count += 1,
                )?;
                Ok((-(count as f64)).exp())
            })?
        }
        Model::Ou(p) => {
            let spec = outype::ou_spectral(p, lambda)?;
            run_reps(n_reps, |rep| {
                let mut rng = stream(seed, Context::QSimulation, rep);
                let mut count = 0u64;
                outype::walk_q_ou(
                    p,
                    &spec,
                    t,
                    settings.step,
                    settings.cap,
                    true,
                    &mut rng,
                    &mut |_, _, _, _| count += 1,
                    &mut outype::NoObs,
                )?;
                Ok((-(count as f64)).exp())
            })?
        }
    };
    let p_side = Estimate::from_values(&p_vals, p_ext);
    let q_side = Estimate::from_values(&q_vals, 0);
    let z = z_score(&p_side, &q_side);
    Ok(RnReport { p_side, q_side, z })
}

/// One spine statistic compared against its changed-measure law.
#[derive(Clone, Debug, Serialize)]
pub struct SpineStat {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub se: f64,
    pub z: f64,
}

impl SpineStat {
    fn new(name: &str, observed: f64, expected: f64, se: f64) -> Self {
        let z = if se == 0.0 {
            if observed == expected {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (observed - expected) / se
        };
        SpineStat {
            name: name.to_string(),
            observed,
            expected,
            se,
            z,
        }
    }

    pub fn within_three_se(&self) -> bool {
        self.z.abs() <= 3.0
    }
}

/// Spine-law verification report: each statistic carries a 3-standard-error
/// verdict against its expected value.
#[derive(Clone, Debug, Serialize)]
pub struct SpineStatsReport {
    pub stats: Vec<SpineStat>,
}

impl SpineStatsReport {
    pub fn all_within_three_se(&self) -> bool {
        self.stats.iter().all(SpineStat::within_three_se)
    }
}

/// Monte Carlo statistics of the spine under the changed measure: fission
/// counts and terminal position for the single-type model, drift and type
/// occupation for the finite-type model, drift and stationary fission rate
/// for the OU model. Only the spine is simulated (no subtrees), so long
/// horizons are cheap. Stationarity checks discard a burn-in window.
pub fn spine_statistics(
    model: &Model,
    lambda: f64,
    t: f64,
    n_reps: u64,
    seed: u64,
    settings: &McSettings,
) -> Result<SpineStatsReport> {
    ensure_reps(n_reps)?;
    if !(t > 0.0) {
        return Err(Error::Config("spine statistics need t > 0".into()));
    }
    let mut stats = Vec::new();
    match model {
        Model::Bbm(p) => {
            bbm::bbm_spectral(p, lambda)?;
            let rows = run_reps(n_reps, |rep| {
                let mut rng = stream(seed, Context::QSimulation, rep);
                let rec =
                    bbm::walk_q_bbm(p, lambda, t, settings.cap, false, &mut rng, &mut |_,
                        _,
                        _,
                        _| {})?;
                Ok((rec.n_t() as f64, rec.terminal_position))
            })?;
            let counts: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let terms: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let m = p.offspring_mean();
            let rate_t = (1.0 + m) * p.fission_rate() * t;
            let cm = mean(&counts);
            let cv = sample_variance(&counts, cm);
            stats.push(SpineStat::new(
                "fission_count_mean",
                cm,
                rate_t,
                (cv / n_reps as f64).sqrt(),
            ));
            stats.push(SpineStat::new(
                "fission_count_var",
                cv,
                rate_t,
                variance_se(&counts, cm, cv),
            ));
            let tm = mean(&terms);
            let tv = sample_variance(&terms, tm);
            stats.push(SpineStat::new(
                "terminal_position_mean",
                tm,
                p.start_position() + lambda * t,
                (tv / n_reps as f64).sqrt(),
            ));
            stats.push(SpineStat::new(
                "terminal_position_var",
                tv,
                t,
                variance_se(&terms, tm, tv),
            ));
        }
        Model::Typed(p) => {
            let spec = multitype::typed_spectral(p, lambda)?;
            // Burn-in for the occupation statistic: five relaxation times of
            // the slowest state of the modified chain, capped at half the
            // horizon.
            let q_lambda = multitype::q_lambda_matrix(p, &spec).theta_q_lambda;
            let min_rate = (0..p.n())
                .map(|i| -q_lambda[(i, i)])
                .fold(f64::INFINITY, f64::min)
                .max(1e-9);
            let burn = (5.0 / min_rate).min(0.5 * t);
            let rows = run_reps(n_reps, |rep| {
                let mut rng = stream(seed, Context::QSimulation, rep);
                let out = multitype::walk_q_typed(
                    p,
                    &spec,
                    t,
                    settings.cap,
                    false,
                    burn,
                    &mut rng,
                    &mut |_, _, _, _| {},
                )?;
                Ok((out.record.terminal_position / t, out.occupation))
            })?;
            let drifts: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let dm = mean(&drifts);
            let dv = sample_variance(&drifts, dm);
            stats.push(SpineStat::new(
                "drift_mean",
                dm,
                spec.e_prime,
                (dv / n_reps as f64).sqrt(),
            ));
            let window = t - burn;
            for k in 0..p.n() {
                let occ: Vec<f64> = rows.iter().map(|r| r.1[k] / window).collect();
                let om = mean(&occ);
                let ov = sample_variance(&occ, om);
                let target = spec.v_lambda[k] * spec.v_lambda[k] * p.pi()[k];
                stats.push(SpineStat::new(
                    &format!("occupation_type_{}", k + 1),
                    om,
                    target,
                    (ov / n_reps as f64).sqrt(),
                ));
            }
        }
        Model::Ou(p) => {
            let spec = outype::ou_spectral(p, lambda)?;
            let burn = (5.0 / spec.mu).min(0.5 * t);
            let rows = run_reps(n_reps, |rep| {
                let mut rng = stream(seed, Context::QSimulation, rep);
                let rec = outype::walk_q_ou(
                    p,
                    &spec,
                    t,
                    settings.step,
                    settings.cap,
                    false,
                    &mut rng,
                    &mut |_, _, _, _| {},
                    &mut outype::NoObs,
                )?;
                let post_burn =
                    rec.fissions.iter().filter(|f| f.time >= burn).count() as f64;
                Ok((rec.terminal_position / t, post_burn / (t - burn)))
            })?;
            let drifts: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let dm = mean(&drifts);
            let dv = sample_variance(&drifts, dm);
            stats.push(SpineStat::new(
                "drift_mean",
                dm,
                spec.e_prime,
                (dv / n_reps as f64).sqrt(),
            ));
            let rates: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let rm = mean(&rates);
            let rv = sample_variance(&rates, rm);
            let target = 2.0 * (p.r * p.theta / (2.0 * spec.mu) + p.rho);
            stats.push(SpineStat::new(
                "fission_rate_stationary",
                rm,
                target,
                (rv / n_reps as f64).sqrt(),
            ));
        }
    }
    Ok(SpineStatsReport { stats })
}

/// Monte Carlo mean of `L(t)/t`, the left-most particle position over time.
/// Requires `p_0 = 0` for every offspring law (survival is then automatic
/// and no conditioning is involved) and supports the two exact models.
/// At `t = 0` the raw minimum (the start position) is reported.
pub fn lmp_estimate(
    model: &Model,
    t: f64,
    n_reps: u64,
    seed: u64,
    settings: &McSettings,
) -> Result<Estimate> {
    ensure_reps(n_reps)?;
    match model {
        Model::Bbm(p) => {
            if p.offspring().p_zero() > 0.0 {
                return Err(Error::Config(
                    "left-most particle estimation requires p_0 = 0 \
                     (conditioning on survival is out of scope)"
                        .into(),
                ));
            }
            let vals = run_reps(n_reps, |rep| {
                let mut rng = stream(seed, Context::PSimulation, rep);
                let mut min_pos = f64::INFINITY;
                bbm::walk_p_bbm(p, t, settings.cap, &mut rng, &mut |_, x, _, _| {
                    min_pos = min_pos.min(x);
                })?;
                Ok(if t > 0.0 { min_pos / t } else { min_pos })
            })?;
            Ok(Estimate::from_values(&vals, 0))
        }
        Model::Typed(p) => {
            for y in 0..p.n() {
                if p.offspring(y).p_zero() > 0.0 {
                    return Err(Error::Config(
                        "left-most particle estimation requires p_0 = 0 for every type \
                         (conditioning on survival is out of scope)"
                            .into(),
                    ));
                }
            }
            let vals = run_reps(n_reps, |rep| {
                let mut rng = stream(seed, Context::PSimulation, rep);
                let mut min_pos = f64::INFINITY;
                multitype::walk_p_typed(p, t, settings.cap, &mut rng, &mut |_, x, _, _| {
                    min_pos = min_pos.min(x);
                })?;
                Ok(if t > 0.0 { min_pos / t } else { min_pos })
            })?;
            Ok(Estimate::from_values(&vals, 0))
        }
        Model::Ou(_) => Err(Error::Config(
            "left-most particle estimation supports the bbm and typed models".into(),
        )),
    }
}

/// Spine-decomposition verification: one spine skeleton is frozen, the
/// non-spine subtrees are re-simulated `n_subtree_reps` times, and the
/// Monte Carlo mean of `Z_lambda(t)` conditional on the skeleton is
/// compared against the closed-form decomposition value.
#[derive(Clone, Debug, Serialize)]
pub struct SpineDecompReport {
    pub closed_form: f64,
    pub mc: Estimate,
    pub z: f64,
    pub fissions: u64,
}

pub fn spine_decomp_check(
    model: &Model,
    lambda: f64,
    t: f64,
    n_subtree_reps: u64,
    seed: u64,
    settings: &McSettings,
) -> Result<SpineDecompReport> {
    ensure_reps(n_subtree_reps)?;
    match model {
        Model::Bbm(p) => {
            let spec = bbm::bbm_spectral(p, lambda)?;
            let mut rng = stream(seed, Context::Skeleton, 0);
            let rec: SpineRecord<()> =
                bbm::walk_q_bbm(p, lambda, t, settings.cap, false, &mut rng, &mut |_, _, _, _| {})?;
            let closed = bbm::spine_decomposition_bbm(&rec, &spec);
            let spine_term =
                (spec.lambda * rec.terminal_position - spec.e_lambda * rec.horizon).exp();
            let vals = run_reps(n_subtree_reps, |rep| {
                let mut rng = stream(seed, Context::Subtree, rep);
                let mut total = spine_term;
                for f in &rec.fissions {
                    for _ in 0..f.extra_offspring {
                        let mut budget = crate::sim::Budget::new(settings.cap);
                        let mut path = Vec::new();
                        bbm::p_subtree(
                            p,
                            t,
                            &mut budget,
                            &mut rng,
                            &mut path,
                            f.time,
                            f.position,
                            1.0,
                            &mut |_, x, _, _| {
                                total += (spec.lambda * x - spec.e_lambda * t).exp();
                            },
                        )?;
                    }
                }
                Ok(total)
            })?;
            let mc = Estimate::from_values(&vals, 0);
            let z = if mc.se == 0.0 {
                if mc.mean == closed {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (mc.mean - closed) / mc.se
            };
            Ok(SpineDecompReport {
                closed_form: closed,
                mc,
                z,
                fissions: rec.n_t() as u64,
            })
        }
        Model::Typed(p) => {
            let spec = multitype::typed_spectral(p, lambda)?;
            let mut rng = stream(seed, Context::Skeleton, 0);
            let out = multitype::walk_q_typed(
                p,
                &spec,
                t,
                settings.cap,
                false,
                0.0,
                &mut rng,
                &mut |_, _, _, _| {},
            )?;
            let rec = out.record;
            let closed = multitype::spine_decomposition_typed(&rec, &spec);
            let spine_term = spec.v_lambda[rec.terminal_type]
                * (spec.lambda * rec.terminal_position - spec.e_lambda * rec.horizon).exp();
            let vals = run_reps(n_subtree_reps, |rep| {
                let mut rng = stream(seed, Context::Subtree, rep);
                let mut total = spine_term;
                for f in &rec.fissions {
                    for _ in 0..f.extra_offspring {
                        let mut budget = crate::sim::Budget::new(settings.cap);
                        let mut path = Vec::new();
                        multitype::p_subtree_typed(
                            p,
                            t,
                            &mut budget,
                            &mut rng,
                            &mut path,
                            f.time,
                            f.position,
                            f.type_value,
                            &mut |_, x, y, _| {
                                total += spec.v_lambda[y]
                                    * (spec.lambda * x - spec.e_lambda * t).exp();
                            },
                        )?;
                    }
                }
                Ok(total)
            })?;
            let mc = Estimate::from_values(&vals, 0);
            let z = if mc.se == 0.0 {
                if mc.mean == closed {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (mc.mean - closed) / mc.se
            };
            Ok(SpineDecompReport {
                closed_form: closed,
                mc,
                z,
                fissions: rec.n_t() as u64,
            })
        }
        Model::Ou(p) => {
            let spec = outype::ou_spectral(p, lambda)?;
            let mut rng = stream(seed, Context::Skeleton, 0);
            let rec = outype::walk_q_ou(
                p,
                &spec,
                t,
                settings.step,
                settings.cap,
                false,
                &mut rng,
                &mut |_, _, _, _| {},
                &mut outype::NoObs,
            )?;
            let closed = outype::spine_decomposition_ou(&rec, &spec);
            let v = |y: f64| (spec.psi_minus * y * y).exp();
            let spine_term = v(rec.terminal_type)
                * (spec.lambda * rec.terminal_position - spec.e_lambda * rec.horizon).exp();
            let vals = run_reps(n_subtree_reps, |rep| {
                let mut rng = stream(seed, Context::Subtree, rep);
                let mut total = spine_term;
                for f in &rec.fissions {
                    outype::p_subtree_from(
                        p,
                        t,
                        settings.step,
                        settings.cap,
                        &mut rng,
                        f.time,
                        f.position,
                        f.type_value,
                        &mut |_, x, y, _| {
                            total +=
                                v(y) * (spec.lambda * x - spec.e_lambda * t).exp();
                        },
                    )?;
                }
                Ok(total)
            })?;
            let mc = Estimate::from_values(&vals, 0);
            let z = if mc.se == 0.0 {
                if mc.mean == closed {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (mc.mean - closed) / mc.se
            };
            Ok(SpineDecompReport {
                closed_form: closed,
                mc,
                z,
                fissions: rec.n_t() as u64,
            })
        }
    }
}

/// Smallest root of `s = sum_i p_i s^{1+i}` in `[0, 1]` by fixed-point
/// iteration from 0 — the extinction probability of the embedded
/// Galton-Watson process with family sizes `1 + A`, `P(A = i) = probs[i]`.
/// Every individual leaves at least one child, so the root is 0 and
/// populations in these models never die out; the iteration confirms it.
pub fn gw_extinction_probability(probs: &[f64], tol: f64) -> f64 {
    let mut s: f64 = 0.0;
    for _ in 0..10_000 {
        let next: f64 = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| p * s.powi(1 + i as i32))
            .sum();
        if (next - s).abs() < tol {
            return next;
        }
        s = next;
    }
    s
}
