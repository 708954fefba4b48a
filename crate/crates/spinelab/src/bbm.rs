//! Single-type branching Brownian motion: spectral constants, exact
//! event-driven simulation under the original measure P and under the
//! spine change of measure, the additive martingale, its spine
//! decomposition, and the convergence classifier.
//!
//! Particles diffuse as driftless Brownian motions and split at constant
//! rate `r` into `1 + A` children. The additive martingale is
//! `Z_lambda(t) = sum_{u in N_t} exp(lambda X_u(t) - E_lambda t)` with
//! `E_lambda = lambda^2/2 + r m`. Under the changed measure the spine gains
//! drift `lambda`, splits at the accelerated rate `(1+m) r` with size-biased
//! family sizes, and all other particles behave as under P.
//!
//! Simulation is exact: waiting times are exponential and displacements
//! Gaussian over the exact inter-event intervals; there is no time
//! discretization in this module.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::offspring::OffspringDist;
use crate::rng::{stream, Context};
use crate::sim::Budget;
use crate::trees::{Label, ParticleState, Snapshot, SpineFission, SpineRecord};

/// Parameters of a single-type BBM.
#[derive(Clone, Debug)]
pub struct BbmParams {
    fission_rate: f64,
    offspring: OffspringDist,
    offspring_mean: f64,
    size_biased: OffspringDist,
    start_position: f64,
}

impl BbmParams {
    pub fn new(fission_rate: f64, offspring: OffspringDist, start_position: f64) -> Result<Self> {
        if !(fission_rate > 0.0) || !fission_rate.is_finite() {
            return Err(Error::Config("fission rate r must be > 0".into()));
        }
        let offspring_mean = offspring.mean();
        if !offspring_mean.is_finite() {
            return Err(Error::Config("offspring mean must be finite".into()));
        }
        let size_biased = offspring.size_bias();
        Ok(BbmParams {
            fission_rate,
            offspring,
            offspring_mean,
            size_biased,
            start_position,
        })
    }

    pub fn fission_rate(&self) -> f64 {
        self.fission_rate
    }

    pub fn offspring(&self) -> &OffspringDist {
        &self.offspring
    }

    /// Mean extra-offspring count `m = P(A)`.
    pub fn offspring_mean(&self) -> f64 {
        self.offspring_mean
    }

    pub fn size_biased_offspring(&self) -> &OffspringDist {
        &self.size_biased
    }

    pub fn start_position(&self) -> f64 {
        self.start_position
    }
}

/// Spectral constants of the BBM martingale family at one `lambda <= 0`.
#[derive(Clone, Debug, Serialize)]
pub struct BbmSpectral {
    pub lambda: f64,
    /// `E_lambda = lambda^2/2 + r m`.
    pub e_lambda: f64,
    /// Speed `c_lambda = -E_lambda / lambda`; undefined at `lambda = 0`.
    pub c_lambda: Option<f64>,
    /// `lambda_tilde = -sqrt(2 r m)`, the minimizer of `c_lambda`.
    pub lambda_tilde: f64,
}

/// Spectral data for the martingale `Z_lambda`. Rejects `lambda > 0`: the
/// models are spatially symmetric and the convention `lambda <= 0` is kept
/// visible rather than silently reflecting.
pub fn bbm_spectral(params: &BbmParams, lambda: f64) -> Result<BbmSpectral> {
    if lambda > 0.0 {
        return Err(Error::Config(
            "lambda must be <= 0; apply the space reflection for positive lambda".into(),
        ));
    }
    let rm = params.fission_rate * params.offspring_mean;
    let e_lambda = 0.5 * lambda * lambda + rm;
    Ok(BbmSpectral {
        lambda,
        e_lambda,
        c_lambda: (lambda < 0.0).then(|| -e_lambda / lambda),
        lambda_tilde: -(2.0 * rm).sqrt(),
    })
}

/// Convergence regimes of the additive martingale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VerdictTag {
    #[serde(rename = "AS_ZERO")]
    AsZero,
    #[serde(rename = "L1_CONVERGENT")]
    L1Convergent,
    #[serde(rename = "LP_CONVERGENT")]
    LpConvergent,
    #[serde(rename = "LP_UNBOUNDED")]
    LpUnbounded,
    #[serde(rename = "BOUNDARY_UNDETERMINED")]
    BoundaryUndetermined,
}

impl std::fmt::Display for VerdictTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VerdictTag::AsZero => "AS_ZERO",
            VerdictTag::L1Convergent => "L1_CONVERGENT",
            VerdictTag::LpConvergent => "LP_CONVERGENT",
            VerdictTag::LpUnbounded => "LP_UNBOUNDED",
            VerdictTag::BoundaryUndetermined => "BOUNDARY_UNDETERMINED",
        };
        write!(f, "{s}")
    }
}

/// A classification together with the clause that produced it. `code` is a
/// stable machine-readable branch identifier; `reason` is for humans.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceVerdict {
    pub tag: VerdictTag,
    pub code: &'static str,
    pub reason: &'static str,
}

impl ConvergenceVerdict {
    fn new(tag: VerdictTag, code: &'static str, reason: &'static str) -> Self {
        ConvergenceVerdict { tag, code, reason }
    }
}

/// Relative tolerance for boundary detection in the strict-inequality
/// classification clauses.
pub(crate) const BOUNDARY_TOL: f64 = 1e-9;

/// Shared L^p decision given the gap `p E_lambda - E_{p lambda}` (for the
/// single-type model this equals `(p-1)(mr - p lambda^2 / 2) ... ` evaluated
/// directly by the caller) and the offspring moment `P(A^p)`.
pub(crate) fn lp_verdict(gap: f64, gap_scale: f64, moment_finite: bool) -> ConvergenceVerdict {
    let tol = BOUNDARY_TOL * gap_scale.max(1.0);
    if !moment_finite {
        return ConvergenceVerdict::new(
            VerdictTag::LpUnbounded,
            "lp_unbounded_moment",
            "P(A^p) = ∞ — Z_λ is unbounded in L^p",
        );
    }
    if gap.abs() <= tol {
        ConvergenceVerdict::new(
            VerdictTag::BoundaryUndetermined,
            "boundary_gap",
            "pE_λ = E_{pλ} — both classification clauses are strict; no claim",
        )
    } else if gap > 0.0 {
        ConvergenceVerdict::new(
            VerdictTag::LpConvergent,
            "lp_convergent",
            "pE_λ − E_{pλ} > 0 and P(A^p) < ∞ — convergent a.s. and in L^p",
        )
    } else {
        ConvergenceVerdict::new(
            VerdictTag::LpUnbounded,
            "lp_unbounded_gap",
            "pE_λ − E_{pλ} < 0 — Z_λ is unbounded in L^p",
        )
    }
}

pub(crate) fn validate_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::Config(format!(
            "p must lie in (1, 2] (the L^p criteria are only stated there); got {p}"
        )));
    }
    Ok(())
}

/// Classify the convergence regime of `Z_lambda`. With `p` absent the
/// L¹ trichotomy applies; with `p` in `(1, 2]` the L^p criteria apply.
pub fn classify_bbm(
    params: &BbmParams,
    lambda: f64,
    p: Option<f64>,
) -> Result<ConvergenceVerdict> {
    if lambda > 0.0 {
        return Err(Error::Config("lambda must be <= 0".into()));
    }
    let spec = bbm_spectral(params, lambda)?;
    match p {
        None => {
            if lambda <= spec.lambda_tilde {
                Ok(ConvergenceVerdict::new(
                    VerdictTag::AsZero,
                    "as_zero_subcritical",
                    "λ ≤ λ̃ — the martingale limit is 0 a.s.",
                ))
            } else if params.offspring.xlogx().is_infinite() {
                Ok(ConvergenceVerdict::new(
                    VerdictTag::AsZero,
                    "as_zero_xlogx",
                    "λ ∈ (λ̃, 0] but P(A log⁺A) = ∞ — the limit is 0 a.s.",
                ))
            } else {
                Ok(ConvergenceVerdict::new(
                    VerdictTag::L1Convergent,
                    "l1_convergent",
                    "λ ∈ (λ̃, 0] and P(A log⁺A) < ∞ — convergent a.s. and in L¹",
                ))
            }
        }
        Some(p) => {
            validate_p(p)?;
            // p·lambda^2 < 2mr  <=>  p E_lambda - E_{p lambda} > 0.
            let rm = params.fission_rate * params.offspring_mean;
            let gap = (p - 1.0) * (rm - 0.5 * p * lambda * lambda);
            let moment_finite = params.offspring.p_moment(p).is_finite();
            Ok(lp_verdict(gap, rm, moment_finite))
        }
    }
}

fn exp_sample<R: Rng>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).unwrap().sample(rng)
}

fn normal_sample<R: Rng>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    Normal::new(mean, sd).unwrap().sample(rng)
}

/// Visitor over alive particles at the horizon. Receives the label path,
/// position, birth time and the ancestry weight `prod 1/(1+A_v)`.
pub(crate) type Visit<'v> = dyn FnMut(&[u64], f64, f64, f64) + 'v;

/// Depth-first exact walk of a P-subtree rooted at `(birth, pos)`.
pub(crate) fn p_subtree<R: Rng>(
    params: &BbmParams,
    horizon: f64,
    budget: &mut Budget,
    rng: &mut R,
    path: &mut Vec<u64>,
    birth: f64,
    pos: f64,
    weight: f64,
    visit: &mut Visit,
) -> Result<()> {
    let life = exp_sample(params.fission_rate, rng);
    let s = birth + life;
    if s > horizon {
        let dt = horizon - birth;
        let x = pos + normal_sample(0.0, dt.sqrt(), rng);
        visit(path, x, birth, weight);
        return Ok(());
    }
    let x = pos + normal_sample(0.0, life.sqrt(), rng);
    let a = params.offspring.sample(rng);
    budget.grow(a, s)?;
    let w = weight / (1.0 + a as f64);
    for i in 1..=(a + 1) {
        path.push(i);
        p_subtree(params, horizon, budget, rng, path, s, x, w, visit)?;
        path.pop();
    }
    Ok(())
}

/// Streaming exact P-simulation: calls `visit` once per alive particle at
/// the horizon.
pub(crate) fn walk_p_bbm<R: Rng>(
    params: &BbmParams,
    t: f64,
    cap: u64,
    rng: &mut R,
    visit: &mut Visit,
) -> Result<()> {
    let mut budget = Budget::new(cap);
    let mut path = Vec::new();
    p_subtree(
        params,
        t,
        &mut budget,
        rng,
        &mut path,
        0.0,
        params.start_position,
        1.0,
        visit,
    )
}

/// Streaming spine simulation under the changed measure. When
/// `include_subtrees` is false, only the spine is evolved (no population, no
/// cap pressure) — the spine record is exact either way.
pub(crate) fn walk_q_bbm<R: Rng>(
    params: &BbmParams,
    lambda: f64,
    t: f64,
    cap: u64,
    include_subtrees: bool,
    rng: &mut R,
    visit: &mut Visit,
) -> Result<SpineRecord<()>> {
    let m = params.offspring_mean;
    let spine_rate = (1.0 + m) * params.fission_rate;
    let mut budget = Budget::new(cap);
    let mut path: Vec<u64> = Vec::new();
    let mut fissions: Vec<SpineFission<()>> = Vec::new();
    let mut cur = 0.0;
    let mut pos = params.start_position;
    let mut weight = 1.0;
    loop {
        let life = exp_sample(spine_rate, rng);
        let s = cur + life;
        if s > t {
            let dt = t - cur;
            let xi = pos + normal_sample(lambda * dt, dt.sqrt(), rng);
            visit(&path, xi, cur, weight);
            return Ok(SpineRecord {
                horizon: t,
                fissions,
                terminal_position: xi,
                terminal_type: (),
                terminal_label: Label::from_path(path),
            });
        }
        pos += normal_sample(lambda * life, life.sqrt(), rng);
        cur = s;
        let a = params.size_biased.sample(rng);
        if include_subtrees {
            budget.grow(a, s)?;
        }
        let chosen = rng.gen_range(1..=a + 1);
        let w = weight / (1.0 + a as f64);
        for i in 1..=(a + 1) {
            if i != chosen {
                path.push(i);
                if include_subtrees {
                    p_subtree(params, t, &mut budget, rng, &mut path, s, pos, w, visit)?;
                }
                path.pop();
            }
        }
        fissions.push(SpineFission {
            time: s,
            position: pos,
            type_value: (),
            extra_offspring: a,
        });
        path.push(chosen);
        weight = w;
    }
}

/// Exact P-simulation to horizon `t`, materialized as a snapshot.
/// Deterministic given `seed`.
pub fn simulate_p_bbm(params: &BbmParams, t: f64, seed: u64, cap: u64) -> Result<Snapshot<()>> {
    if t < 0.0 {
        return Err(Error::Config("horizon t must be >= 0".into()));
    }
    let mut rng = stream(seed, Context::PSimulation, 0);
    let mut particles = Vec::new();
    walk_p_bbm(params, t, cap, &mut rng, &mut |path, x, birth, _w| {
        particles.push(ParticleState {
            label: Label::from_path(path),
            position: x,
            type_value: (),
            birth_time: birth,
        });
    })?;
    Ok(Snapshot {
        horizon: t,
        particles,
    })
}

/// Pathwise construction under the spine change of measure: snapshot of the
/// whole population plus the spine skeleton. Deterministic given `seed`.
pub fn simulate_q_bbm(
    params: &BbmParams,
    lambda: f64,
    t: f64,
    seed: u64,
    cap: u64,
) -> Result<(Snapshot<()>, SpineRecord<()>)> {
    if t < 0.0 {
        return Err(Error::Config("horizon t must be >= 0".into()));
    }
    if lambda > 0.0 {
        return Err(Error::Config("lambda must be <= 0".into()));
    }
    let mut rng = stream(seed, Context::QSimulation, 0);
    let mut particles = Vec::new();
    let record = walk_q_bbm(
        params,
        lambda,
        t,
        cap,
        true,
        &mut rng,
        &mut |path, x, birth, _w| {
            particles.push(ParticleState {
                label: Label::from_path(path),
                position: x,
                type_value: (),
                birth_time: birth,
            });
        },
    )?;
    Ok((
        Snapshot {
            horizon: t,
            particles,
        },
        record,
    ))
}

/// The additive martingale `Z_lambda(t)` evaluated on a snapshot.
pub fn z_lambda_bbm(snap: &Snapshot<()>, spec: &BbmSpectral) -> f64 {
    let terms: Vec<f64> = snap
        .particles
        .iter()
        .map(|p| (spec.lambda * p.position - spec.e_lambda * snap.horizon).exp())
        .collect();
    pairwise_sum(&terms)
}

/// The spine decomposition: the conditional expectation of `Z_lambda(t)`
/// given the full spine trajectory — birth contributions along the spine
/// plus the spine's own terminal term.
pub fn spine_decomposition_bbm(rec: &SpineRecord<()>, spec: &BbmSpectral) -> f64 {
    let sum: f64 = rec
        .fissions
        .iter()
        .map(|f| {
            f.extra_offspring as f64 * (spec.lambda * f.position - spec.e_lambda * f.time).exp()
        })
        .sum();
    sum + (spec.lambda * rec.terminal_position - spec.e_lambda * rec.horizon).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{chi2_critical, mean, sample_variance};
    use approx::assert_relative_eq;

    fn binary_params() -> BbmParams {
        BbmParams::new(1.0, OffspringDist::finite(&[0.0, 1.0]).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn spectral_examples() {
        let p = binary_params();
        let s = bbm_spectral(&p, -1.0).unwrap();
        assert_relative_eq!(s.e_lambda, 1.5);
        assert_relative_eq!(s.c_lambda.unwrap(), 1.5);
        assert_relative_eq!(s.lambda_tilde, -(2.0f64).sqrt(), epsilon = 1e-15);

        let s0 = bbm_spectral(&p, 0.0).unwrap();
        assert_relative_eq!(s0.e_lambda, 1.0);
        assert!(s0.c_lambda.is_none());

        // r = 2, m = 0.5 gives the same 2rm.
        let p2 = BbmParams::new(2.0, OffspringDist::finite(&[0.5, 0.5]).unwrap(), 0.0).unwrap();
        let s2 = bbm_spectral(&p2, -1.0).unwrap();
        assert_relative_eq!(s2.e_lambda, 1.5);
        assert_relative_eq!(s2.lambda_tilde, -(2.0f64).sqrt(), epsilon = 1e-15);

        assert!(bbm_spectral(&p, 0.5).is_err());
    }

    #[test]
    fn classifier_examples() {
        let p = binary_params();
        assert_eq!(
            classify_bbm(&p, -2.0, None).unwrap().tag,
            VerdictTag::AsZero
        );
        assert_eq!(
            classify_bbm(&p, -0.9, Some(2.0)).unwrap().tag,
            VerdictTag::LpConvergent
        );
        assert_eq!(
            classify_bbm(&p, -1.1, Some(2.0)).unwrap().tag,
            VerdictTag::LpUnbounded
        );
        // boundary p lambda^2 = 2 m r exactly
        assert_eq!(
            classify_bbm(&p, -1.0, Some(2.0)).unwrap().tag,
            VerdictTag::BoundaryUndetermined
        );
        assert!(classify_bbm(&p, -1.0, Some(2.5)).is_err());
        assert!(classify_bbm(&p, -1.0, Some(1.0)).is_err());
    }

    #[test]
    fn snapshot_at_time_zero_is_the_ancestor() {
        let p = BbmParams::new(1.0, OffspringDist::finite(&[0.0, 1.0]).unwrap(), 1.25).unwrap();
        let snap = simulate_p_bbm(&p, 0.0, 3, 1000).unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(snap.particles[0].label, Label::root());
        assert_relative_eq!(snap.particles[0].position, 1.25);
        assert!(!snap.extinct());
    }

    #[test]
    fn population_mean_matches_first_moment_oracle() {
        // E|N_t| = exp(m r t); binary offspring at r = 1, t = 2.
        let p = binary_params();
        let n_reps = 10_000u64;
        let counts: Vec<f64> = (0..n_reps)
            .map(|rep| {
                let mut rng = stream(2024, Context::PSimulation, rep);
                let mut n = 0.0;
                walk_p_bbm(&p, 2.0, 1 << 20, &mut rng, &mut |_, _, _, _| n += 1.0).unwrap();
                n
            })
            .collect();
        let mu = mean(&counts);
        let target = (2.0f64).exp();
        let se = (sample_variance(&counts, mu) / n_reps as f64).sqrt();
        assert!((mu - target).abs() < 3.0 * se, "mean {mu}, target {target}, se {se}");
    }

    #[test]
    fn ancestry_weights_sum_to_one() {
        // sum over alive particles of prod 1/(1+A_v) is exactly 1 on every
        // realized tree.
        let p = binary_params();
        for rep in 0..20 {
            let mut rng = stream(5, Context::PSimulation, rep);
            let mut total = 0.0;
            walk_p_bbm(&p, 3.0, 1 << 20, &mut rng, &mut |_, _, _, w| total += w).unwrap();
            assert_eq!(total, 1.0, "binary weights are exact dyadics");
        }
        let mixed = BbmParams::new(
            1.0,
            OffspringDist::finite(&[0.3, 0.4, 0.3]).unwrap(),
            0.0,
        )
        .unwrap();
        for rep in 0..20 {
            let mut rng = stream(6, Context::PSimulation, rep);
            let mut total = 0.0;
            walk_p_bbm(&mixed, 3.0, 1 << 20, &mut rng, &mut |_, _, _, w| total += w).unwrap();
            assert!((total - 1.0).abs() < 1e-9, "weight sum {total}");
        }
    }

    #[test]
    fn snapshot_labels_form_antichain() {
        let p = BbmParams::new(
            1.0,
            OffspringDist::finite(&[0.2, 0.5, 0.3]).unwrap(),
            0.0,
        )
        .unwrap();
        let snap = simulate_p_bbm(&p, 2.0, 9, 1 << 20).unwrap();
        assert!(snap.labels_form_antichain());
        assert!(snap.len() >= 1);
    }

    #[test]
    fn population_explosion_is_reported() {
        let p = binary_params();
        let err = simulate_p_bbm(&p, 12.0, 1, 64).unwrap_err();
        match err {
            Error::PopulationExplosion { cap, .. } => assert_eq!(cap, 64),
            other => panic!("expected explosion, got {other:?}"),
        }
    }

    #[test]
    fn q_simulation_time_zero() {
        let p = BbmParams::new(1.0, OffspringDist::finite(&[0.0, 1.0]).unwrap(), -0.5).unwrap();
        let (snap, rec) = simulate_q_bbm(&p, -1.0, 0.0, 4, 1000).unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(rec.n_t(), 0);
        assert_relative_eq!(rec.terminal_position, -0.5);
        assert!(rec.is_consistent());
    }

    #[test]
    fn spine_fission_count_is_accelerated_poisson() {
        // n_t ~ Poisson((1+m) r t) = Poisson(4) at lambda = -1, t = 2.
        let p = binary_params();
        let n_reps = 10_000u64;
        let mut counts = Vec::with_capacity(n_reps as usize);
        let mut terminals = Vec::with_capacity(n_reps as usize);
        for rep in 0..n_reps {
            let mut rng = stream(31, Context::QSimulation, rep);
            let rec = walk_q_bbm(&p, -1.0, 2.0, 1 << 20, false, &mut rng, &mut |_, _, _, _| {})
                .unwrap();
            counts.push(rec.n_t() as f64);
            terminals.push(rec.terminal_position);
        }
        let mu = mean(&counts);
        let var = sample_variance(&counts, mu);
        let se_mean = (var / n_reps as f64).sqrt();
        assert!((mu - 4.0).abs() < 3.0 * se_mean, "n_t mean {mu}");
        let se_var = crate::numeric::variance_se(&counts, mu, var);
        assert!((var - 4.0).abs() < 3.0 * se_var, "n_t var {var}");

        // terminal position ~ Normal(x0 + lambda t, t)
        let tm = mean(&terminals);
        let tv = sample_variance(&terminals, tm);
        let se_tm = (tv / n_reps as f64).sqrt();
        assert!((tm + 2.0).abs() < 3.0 * se_tm, "terminal mean {tm}");
        let se_tv = crate::numeric::variance_se(&terminals, tm, tv);
        assert!((tv - 2.0).abs() < 3.0 * se_tv, "terminal var {tv}");
    }

    #[test]
    fn spine_child_choice_is_uniform() {
        // chi-square on the chosen child index over >= 10^4 fissions at
        // significance 0.001 (binary splitting: two categories).
        let p = binary_params();
        let mut counts = [0u64; 2];
        let mut total = 0u64;
        let mut rep = 0u64;
        while total < 10_000 {
            let mut rng = stream(77, Context::QSimulation, rep);
            let rec = walk_q_bbm(&p, -1.0, 2.0, 1 << 20, false, &mut rng, &mut |_, _, _, _| {})
                .unwrap();
            for &i in rec.terminal_label.path() {
                counts[(i - 1) as usize] += 1;
                total += 1;
            }
            rep += 1;
        }
        let e = total as f64 / 2.0;
        let chi2 = counts
            .iter()
            .map(|&c| (c as f64 - e) * (c as f64 - e) / e)
            .sum::<f64>();
        assert!(chi2 < chi2_critical(1, 0.001), "chi2 {chi2}");
    }

    #[test]
    fn z_lambda_examples() {
        let p = BbmParams::new(1.0, OffspringDist::finite(&[0.0, 1.0]).unwrap(), 0.7).unwrap();
        let spec = bbm_spectral(&p, -0.5).unwrap();
        let snap = simulate_p_bbm(&p, 0.0, 1, 10).unwrap();
        assert_relative_eq!(z_lambda_bbm(&snap, &spec), (-0.5f64 * 0.7).exp(), epsilon = 1e-14);

        // lambda = 0, rm = 1, t = 1, two particles: 2 e^{-1}
        let spec0 = bbm_spectral(&p, 0.0).unwrap();
        let two = Snapshot {
            horizon: 1.0,
            particles: vec![
                ParticleState {
                    label: Label::from_path(vec![1]),
                    position: 0.3,
                    type_value: (),
                    birth_time: 0.5,
                },
                ParticleState {
                    label: Label::from_path(vec![2]),
                    position: -0.4,
                    type_value: (),
                    birth_time: 0.5,
                },
            ],
        };
        assert_relative_eq!(z_lambda_bbm(&two, &spec0), 2.0 * (-1.0f64).exp(), epsilon = 1e-12);

        let empty: Snapshot<()> = Snapshot {
            horizon: 1.0,
            particles: vec![],
        };
        assert_eq!(z_lambda_bbm(&empty, &spec0), 0.0);
        assert!(empty.extinct());
    }

    #[test]
    fn spine_decomposition_examples() {
        let p = binary_params();
        // n_t = 0, terminal at x0, t = 0: e^{lambda x0}
        let spec = bbm_spectral(&p, -1.0).unwrap();
        let rec = SpineRecord {
            horizon: 0.0,
            fissions: vec![],
            terminal_position: 0.25,
            terminal_type: (),
            terminal_label: Label::root(),
        };
        assert_relative_eq!(
            spine_decomposition_bbm(&rec, &spec),
            (-0.25f64).exp(),
            epsilon = 1e-14
        );

        // one fission at S_1 = 1 with A_1 = 1 at xi = 0; terminal 0 at t = 2;
        // lambda = 0, E_0 = 1: e^{-1} + e^{-2}.
        let spec0 = bbm_spectral(&p, 0.0).unwrap();
        let rec = SpineRecord {
            horizon: 2.0,
            fissions: vec![SpineFission {
                time: 1.0,
                position: 0.0,
                type_value: (),
                extra_offspring: 1,
            }],
            terminal_position: 0.0,
            terminal_type: (),
            terminal_label: Label::from_path(vec![1]),
        };
        assert_relative_eq!(
            spine_decomposition_bbm(&rec, &spec0),
            (-1.0f64).exp() + (-2.0f64).exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn martingale_mean_and_second_moment_match_closed_forms() {
        // E Z_lambda(t) = e^{lambda x0}; E Z^2 has the exact closed form
        // e^{-Dt} + (1+m) r Q~(A~) (1 - e^{-Dt})/D with D = mr - lambda^2.
        let p = binary_params();
        let lambda = -0.5;
        let t = 1.0;
        let spec = bbm_spectral(&p, lambda).unwrap();
        let n_reps = 10_000u64;
        let mut z = Vec::with_capacity(n_reps as usize);
        for rep in 0..n_reps {
            let mut rng = stream(99, Context::PSimulation, rep);
            let mut acc = 0.0;
            walk_p_bbm(&p, t, 1 << 20, &mut rng, &mut |_, x, _, _| {
                acc += (lambda * x - spec.e_lambda * t).exp();
            })
            .unwrap();
            z.push(acc);
        }
        let mu = mean(&z);
        let se = (sample_variance(&z, mu) / n_reps as f64).sqrt();
        assert!((mu - 1.0).abs() < 3.0 * se, "martingale mean {mu} se {se}");

        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        let mu2 = mean(&sq);
        let se2 = (sample_variance(&sq, mu2) / n_reps as f64).sqrt();
        let d = 1.0 - lambda * lambda;
        let qa = p.offspring().size_biased_q_moment(1.0);
        let target = (-d * t).exp() + (1.0 + 1.0) * 1.0 * qa * (1.0 - (-d * t).exp()) / d;
        assert!(
            (mu2 - target).abs() < 3.0 * se2,
            "second moment {mu2}, target {target}, se {se2}"
        );
    }
}
