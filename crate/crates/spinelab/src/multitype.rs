//! Finite-type branching diffusion: Perron-Frobenius spectral layer, speed
//! function, the spine's modified type chain, classifiers, exact simulators
//! under both measures, and the decay-rate / left-most-particle constants.
//!
//! A particle of type `y` diffuses with variance coefficient `a(y)`, changes
//! type by an irreducible time-reversible chain with Q-matrix `theta Q` and
//! invariant law `pi`, and splits at rate `r(y)` into `1 + A(y)` children of
//! its own type. The additive martingale weights each particle by the
//! Perron eigenvector: `Z_lambda(t) = sum v_lambda(Y_u) exp(lambda X_u -
//! E_lambda t)` where `(lambda^2 A / 2 + theta Q + M R) v_lambda = E_lambda
//! v_lambda` and `E_lambda` is the rightmost eigenvalue.
//!
//! Reversibility makes `D_pi^{1/2} H D_pi^{-1/2}` symmetric, so the spectral
//! layer is a dense symmetric eigensolve (the type count is capped at 32;
//! dense is correct and simple at that size).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::bbm::{lp_verdict, validate_p, ConvergenceVerdict, VerdictTag};
use crate::error::{Error, Result};
use crate::numeric::{bisect, pairwise_sum};
use crate::offspring::OffspringDist;
use crate::rng::{stream, Context};
use crate::sim::Budget;
use crate::trees::{Label, ParticleState, Snapshot, SpineFission, SpineRecord};

const MAX_TYPES: usize = 32;
const ROW_SUM_TOL: f64 = 1e-12;
const PI_TOL: f64 = 1e-10;
const DETAILED_BALANCE_TOL: f64 = 1e-10;
const EIGEN_RESIDUAL_TOL: f64 = 1e-10;

/// Parameters of the finite-type branching diffusion.
#[derive(Clone, Debug)]
pub struct TypedParams {
    theta: f64,
    q: DMatrix<f64>,
    pi: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    offspring: Vec<OffspringDist>,
    means: Vec<f64>,
    size_biased: Vec<OffspringDist>,
    x0: f64,
    y0: usize,
}

impl TypedParams {
    /// Validates every structural invariant; messages name the violated one.
    /// `pi` may be supplied or omitted; when omitted it is computed from `Q`,
    /// and when supplied it must agree with the computed one to 1e-8.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        theta: f64,
        q: DMatrix<f64>,
        pi: Option<Vec<f64>>,
        a: Vec<f64>,
        r: Vec<f64>,
        offspring: Vec<OffspringDist>,
        x0: f64,
        y0: usize,
    ) -> Result<Self> {
        let n = q.nrows();
        if n < 2 || q.ncols() != n {
            return Err(Error::Config("Q must be square with n >= 2 types".into()));
        }
        if n > MAX_TYPES {
            return Err(Error::Config(format!("at most {MAX_TYPES} types supported")));
        }
        if !(theta > 0.0) {
            return Err(Error::Config("theta must be > 0".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && q[(i, j)] < 0.0 {
                    return Err(Error::Config(format!(
                        "off-diagonals of Q must be >= 0 (Q[{i},{j}] = {})",
                        q[(i, j)]
                    )));
                }
            }
            let row: f64 = (0..n).map(|j| q[(i, j)]).sum();
            if row.abs() > ROW_SUM_TOL {
                return Err(Error::Config(format!(
                    "rows of Q sum to 0 violated: row {i} sums to {row}"
                )));
            }
        }
        if !irreducible(&q) {
            return Err(Error::Config("Q must be irreducible".into()));
        }
        if a.len() != n || r.len() != n || offspring.len() != n {
            return Err(Error::Config(
                "a, r and offspring must each have one entry per type".into(),
            ));
        }
        if a.iter().any(|&ai| !(ai > 0.0)) {
            return Err(Error::Config("diffusion coefficients a(y) must be > 0".into()));
        }
        if r.iter().any(|&ri| !(ri >= 0.0)) {
            return Err(Error::Config("fission rates r(y) must be >= 0".into()));
        }
        for (y, (&ry, off)) in r.iter().zip(&offspring).enumerate() {
            if ry == 0.0 && !off.is_point_mass_at_zero() {
                return Err(Error::Config(format!(
                    "r({y}) = 0 requires the offspring law at type {y} to be the point mass at 0"
                )));
            }
        }
        if y0 >= n {
            return Err(Error::Config(format!("initial type {y0} out of range")));
        }

        let computed_pi = invariant_row(&q)?;
        let pi = match pi {
            None => computed_pi,
            Some(given) => {
                if given.len() != n {
                    return Err(Error::Config("pi must have one entry per type".into()));
                }
                if given.iter().any(|&p| !(p > 0.0)) {
                    return Err(Error::Config("pi must be strictly positive".into()));
                }
                let total = pairwise_sum(&given);
                if (total - 1.0).abs() > 1e-10 {
                    return Err(Error::Config(format!("pi must sum to 1 (got {total})")));
                }
                for i in 0..n {
                    let balance: f64 = (0..n).map(|k| given[k] * q[(k, i)]).sum();
                    if balance.abs() > PI_TOL {
                        return Err(Error::Config(format!(
                            "pi Q = 0 violated at column {i} (residual {balance})"
                        )));
                    }
                    if (given[i] - computed_pi[i]).abs() > 1e-8 {
                        return Err(Error::Config(format!(
                            "supplied pi disagrees with the invariant row computed from Q \
                             at type {i} ({} vs {})",
                            given[i], computed_pi[i]
                        )));
                    }
                }
                given
            }
        };
        for i in 0..n {
            for j in 0..n {
                if (pi[i] * q[(i, j)] - pi[j] * q[(j, i)]).abs() > DETAILED_BALANCE_TOL {
                    return Err(Error::Config(format!(
                        "detailed balance pi_i Q(i,j) = pi_j Q(j,i) violated at ({i},{j})"
                    )));
                }
            }
        }

        let means: Vec<f64> = offspring.iter().map(|o| o.mean()).collect();
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("offspring means m(y) must be finite".into()));
        }
        let size_biased: Vec<OffspringDist> = offspring.iter().map(|o| o.size_bias()).collect();
        Ok(TypedParams {
            theta,
            q,
            pi,
            a,
            r,
            offspring,
            means,
            size_biased,
            x0,
            y0,
        })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn q_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }
    pub fn a(&self) -> &[f64] {
        &self.a
    }
    pub fn r(&self) -> &[f64] {
        &self.r
    }
    pub fn offspring(&self, y: usize) -> &OffspringDist {
        &self.offspring[y]
    }
    pub fn offspring_mean(&self, y: usize) -> f64 {
        self.means[y]
    }
    pub fn size_biased_offspring(&self, y: usize) -> &OffspringDist {
        &self.size_biased[y]
    }
    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> usize {
        self.y0
    }
}

/// Strong connectivity of the off-diagonal support graph.
fn irreducible(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    let reachable = |start: usize, transpose: bool| -> usize {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if transpose { q[(j, i)] } else { q[(i, j)] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count
    };
    reachable(0, false) == n && reachable(0, true) == n
}

/// Invariant probability row of a conservative Q-matrix, via a dense solve
/// of `Q^T x = 0` with the normalization row appended.
fn invariant_row(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    let mut m = q.transpose();
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = m.lu();
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::NonConverged("invariant row solve failed".into()))?;
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Config(
            "invariant row of Q has nonpositive entries; Q is not an irreducible rate matrix"
                .into(),
        ));
    }
    Ok(x.iter().copied().collect())
}

/// `<u, v>_pi = sum_i u_i v_i pi_i`.
pub fn pi_inner(u: &[f64], v: &[f64], pi: &[f64]) -> f64 {
    assert!(u.len() == v.len() && v.len() == pi.len());
    u.iter().zip(v).zip(pi).map(|((ui, vi), pii)| ui * vi * pii).sum()
}

/// Perron eigenpair data at one `lambda`.
#[derive(Clone, Debug)]
pub struct TypedSpectral {
    pub lambda: f64,
    /// Rightmost eigenvalue of `lambda^2 A / 2 + theta Q + M R`.
    pub e_lambda: f64,
    /// Strictly positive eigenvector, normalized to `<v, v>_pi = 1`.
    pub v_lambda: Vec<f64>,
    /// Speed `-E_lambda / lambda`; undefined at `lambda = 0`.
    pub c_lambda: Option<f64>,
    /// Closed-form derivative `E_lambda' = lambda <A v, v>_pi`.
    pub e_prime: f64,
    /// Achieved infinity-norm eigen residual.
    pub residual: f64,
}

/// Rightmost eigenvalue alone, valid for any real `lambda` (the matrix
/// depends on `lambda^2`).
fn rightmost_eigenvalue(params: &TypedParams, lambda: f64) -> Result<f64> {
    Ok(solve_eigen(params, lambda)?.0)
}

/// Symmetrized dense eigensolve; returns (E_lambda, v_lambda un-normalized).
fn solve_eigen(params: &TypedParams, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let n = params.n();
    let mut h = params.q.scale(params.theta);
    for i in 0..n {
        h[(i, i)] += 0.5 * lambda * lambda * params.a[i] + params.means[i] * params.r[i];
    }
    // Conjugate by D_pi^{1/2}; reversibility makes this exactly symmetric,
    // and any floating asymmetry is folded away before the solve.
    let sqrt_pi: Vec<f64> = params.pi.iter().map(|p| p.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = sqrt_pi[i] * h[(i, j)] / sqrt_pi[j];
        }
    }
    let sym = (&s + s.transpose()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut best = 0;
    for k in 1..n {
        if eig.eigenvalues[k] > eig.eigenvalues[best] {
            best = k;
        }
    }
    let e = eig.eigenvalues[best];
    let w = eig.eigenvectors.column(best);
    let v: Vec<f64> = (0..n).map(|i| w[i] / sqrt_pi[i]).collect();
    Ok((e, v))
}

/// Full spectral data: Perron eigenpair, sign-fixed and pi-normalized, with
/// the closed-form derivative. `NONCONVERGED` if the residual exceeds 1e-10
/// or the eigenvector is not strictly positive after sign fixing.
pub fn typed_spectral(params: &TypedParams, lambda: f64) -> Result<TypedSpectral> {
    if lambda > 0.0 {
        return Err(Error::Config(
            "lambda must be <= 0; apply the space reflection for positive lambda".into(),
        ));
    }
    let n = params.n();
    let (e, mut v) = solve_eigen(params, lambda)?;
    // Fix the sign so the largest-magnitude component is positive, then
    // demand strict positivity (Perron-Frobenius guarantees it for the true
    // rightmost pair; violations signal a numerical or input problem).
    let mut idx = 0;
    for i in 1..n {
        if v[i].abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        for vi in v.iter_mut() {
            *vi = -*vi;
        }
    }
    if v.iter().any(|&vi| !(vi > 0.0)) {
        return Err(Error::NonConverged(
            "Perron eigenvector is not strictly positive".into(),
        ));
    }
    let norm = pi_inner(&v, &v, &params.pi).sqrt();
    for vi in v.iter_mut() {
        *vi /= norm;
    }
    // Residual of the original (un-symmetrized) problem.
    let mut residual: f64 = 0.0;
    for i in 0..n {
        let mut hv = (0.5 * lambda * lambda * params.a[i] + params.means[i] * params.r[i]) * v[i];
        for j in 0..n {
            hv += params.theta * params.q[(i, j)] * v[j];
        }
        residual = residual.max((hv - e * v[i]).abs());
    }
    if residual > EIGEN_RESIDUAL_TOL {
        return Err(Error::NonConverged(format!(
            "eigen residual {residual} exceeds {EIGEN_RESIDUAL_TOL}"
        )));
    }
    let av: Vec<f64> = (0..n).map(|i| params.a[i] * v[i]).collect();
    let e_prime = lambda * pi_inner(&av, &v, &params.pi);
    Ok(TypedSpectral {
        lambda,
        e_lambda: e,
        v_lambda: v,
        c_lambda: (lambda < 0.0).then(|| -e / lambda),
        e_prime,
        residual,
    })
}

/// Independent derivative oracle: central finite difference of `E_lambda`.
/// The eigenvalue is even in `lambda`, so stencil points may cross zero.
pub fn e_prime_check(params: &TypedParams, lambda: f64, h: f64) -> Result<f64> {
    assert!(h > 0.0);
    let up = rightmost_eigenvalue(params, lambda + h)?;
    let down = rightmost_eigenvalue(params, lambda - h)?;
    Ok((up - down) / (2.0 * h))
}

/// Minimizer of the speed function `c_lambda = -E_lambda/lambda` on the
/// negative axis, solved as the root of `g(lambda) = E_lambda - lambda
/// E_lambda'` by bracketed bisection with a geometrically grown bracket.
pub fn lambda_tilde_typed(params: &TypedParams) -> Result<f64> {
    let g = |lambda: f64| -> f64 {
        let spec = typed_spectral(params, lambda).expect("spectral solve inside bracket");
        spec.e_lambda - lambda * spec.e_prime
    };
    let mut hi = -1e-3;
    if g(hi) <= 0.0 {
        // Extremely flat speed functions put the minimum closer to 0 than
        // the seed; shrink instead of growing.
        let mut inner = hi;
        while g(inner) <= 0.0 {
            inner *= 0.5;
            if inner > -1e-15 {
                return Err(Error::BracketFailure(
                    "no sign change of E - lambda E' near the origin".into(),
                ));
            }
        }
        return bisect(g, 2.0 * inner, inner, 1e-10)
            .ok_or_else(|| Error::BracketFailure("bisection lost its bracket".into()));
    }
    let mut lo = hi * 2.0;
    while g(lo) > 0.0 {
        hi = lo;
        lo *= 2.0;
        if lo < -1e3 {
            return Err(Error::BracketFailure(
                "no sign change of E - lambda E' for |lambda| <= 1e3; \
                 pathological parameters"
                    .into(),
            ));
        }
    }
    bisect(g, lo, hi, 1e-10).ok_or_else(|| Error::BracketFailure("bisection lost its bracket".into()))
}

/// The spine's modified type rate matrix `theta Q_lambda`.
///
/// Off-diagonals are `theta Q(i,j) v_j / v_i`. The closed diagonal form
/// `theta Q(i,i) + lambda^2 a(i)/2 - E_lambda + r(i)` zeroes the row sums
/// only when `m(i) = 1` (by the eigenvalue relation it misses by
/// `r(i)(1 - m(i))` otherwise); it is verified against the row sums and,
/// when it fails, the honest diagonal (negated off-diagonal row sum) is
/// used instead with the deviation reported rather than silently
/// discarded.
#[derive(Clone, Debug)]
pub struct QLambda {
    /// Honest rate matrix of the spine's type chain (includes the factor
    /// `theta`).
    pub theta_q_lambda: DMatrix<f64>,
    /// `max_i` |row sum with the closed diagonal form|; zero means that
    /// form was consistent and was used as-is.
    pub closed_diagonal_deviation: f64,
}

pub fn q_lambda_matrix(params: &TypedParams, spec: &TypedSpectral) -> QLambda {
    let n = params.n();
    let v = &spec.v_lambda;
    let mut m = DMatrix::zeros(n, n);
    let mut deviation: f64 = 0.0;
    for i in 0..n {
        let mut off_sum = 0.0;
        for j in 0..n {
            if i != j {
                let val = params.theta * params.q[(i, j)] * v[j] / v[i];
                m[(i, j)] = val;
                off_sum += val;
            }
        }
        let printed = params.theta * params.q[(i, i)] + 0.5 * spec.lambda * spec.lambda
            * params.a[i]
            - spec.e_lambda
            + params.r[i];
        deviation = deviation.max((printed + off_sum).abs());
        m[(i, i)] = -off_sum;
    }
    if deviation <= 1e-10 {
        // The closed form is consistent; keep it (it differs from the
        // negated row sum only by float noise).
        for i in 0..n {
            let printed = params.theta * params.q[(i, i)]
                + 0.5 * spec.lambda * spec.lambda * params.a[i]
                - spec.e_lambda
                + params.r[i];
            m[(i, i)] = printed;
        }
    }
    QLambda {
        theta_q_lambda: m,
        closed_diagonal_deviation: deviation,
    }
}

/// L¹/L^p classifier for the finite-type model.
pub fn classify_typed(
    params: &TypedParams,
    lambda: f64,
    p: Option<f64>,
) -> Result<ConvergenceVerdict> {
    if lambda > 0.0 {
        return Err(Error::Config("lambda must be <= 0".into()));
    }
    match p {
        None => {
            let tilde = lambda_tilde_typed(params)?;
            if lambda <= tilde {
                Ok(ConvergenceVerdict {
                    tag: VerdictTag::AsZero,
                    code: "as_zero_subcritical",
                    reason: "λ ≤ λ̃(θ) — the martingale limit is 0 a.s.",
                })
            } else if params.offspring.iter().any(|o| o.xlogx().is_infinite()) {
                Ok(ConvergenceVerdict {
                    tag: VerdictTag::AsZero,
                    code: "as_zero_xlogx",
                    reason: "P(A(y) log⁺A(y)) = ∞ for some type — the limit is 0 a.s.",
                })
            } else {
                Ok(ConvergenceVerdict {
                    tag: VerdictTag::L1Convergent,
                    code: "l1_convergent",
                    reason: "λ ∈ (λ̃(θ), 0] and P(A(y) log⁺A(y)) < ∞ for all types — \
                             convergent a.s. and in L¹",
                })
            }
        }
        Some(p) => {
            validate_p(p)?;
            let e = rightmost_eigenvalue(params, lambda)?;
            let ep = rightmost_eigenvalue(params, p * lambda)?;
            let gap = p * e - ep;
            let moment_finite = params
                .offspring
                .iter()
                .all(|o| o.p_moment(p).is_finite());
            Ok(lp_verdict(gap, (p * e).abs(), moment_finite))
        }
    }
}

/// Exponential decay-rate bound for `Z_lambda(t)` when `lambda` is strictly
/// below the speed minimizer: `lambda (c_tilde - c_lambda) > 0`.
pub fn decay_rate_typed(params: &TypedParams, lambda: f64) -> Result<f64> {
    let tilde = lambda_tilde_typed(params)?;
    if !(lambda < tilde) {
        return Err(Error::Config(format!(
            "decay rate is defined for lambda < lambda_tilde = {tilde}; got {lambda}"
        )));
    }
    let c_lambda = typed_spectral(params, lambda)?
        .c_lambda
        .expect("lambda < 0");
    let c_tilde = typed_spectral(params, tilde)?.c_lambda.expect("tilde < 0");
    Ok(lambda * (c_tilde - c_lambda))
}

/// Asymptotic speed of the left-most particle: `-c_{lambda_tilde}`.
pub fn lmp_speed_typed(params: &TypedParams) -> Result<f64> {
    let tilde = lambda_tilde_typed(params)?;
    let c_tilde = typed_spectral(params, tilde)?.c_lambda.expect("tilde < 0");
    Ok(-c_tilde)
}

fn exp_sample<R: Rng>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).unwrap().sample(rng)
}

fn normal_sample<R: Rng>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    Normal::new(mean, sd).unwrap().sample(rng)
}

/// Visitor over alive particles: (label path, position, type, birth time).
pub(crate) type TypedVisit<'v> = dyn FnMut(&[u64], f64, usize, f64) + 'v;

/// Exact subtree walk under P: competing exponentials for the type jump and
/// the fission, Gaussian displacement over each inter-event interval.
pub(crate) fn p_subtree_typed<R: Rng>(
    params: &TypedParams,
    horizon: f64,
    budget: &mut Budget,
    rng: &mut R,
    path: &mut Vec<u64>,
    birth: f64,
    x0: f64,
    y0: usize,
    visit: &mut TypedVisit,
) -> Result<()> {
    let mut cur = birth;
    let mut x = x0;
    let mut y = y0;
    loop {
        let jump_rate = -params.theta * params.q[(y, y)];
        let fission_rate = params.r[y];
        let total = jump_rate + fission_rate;
        let s = if total > 0.0 {
            cur + exp_sample(total, rng)
        } else {
            f64::INFINITY
        };
        if s > horizon {
            let dt = horizon - cur;
            let xt = x + normal_sample(0.0, (params.a[y] * dt).sqrt(), rng);
            visit(path, xt, y, birth);
            return Ok(());
        }
        let dt = s - cur;
        x += normal_sample(0.0, (params.a[y] * dt).sqrt(), rng);
        cur = s;
        let u: f64 = rng.gen();
        if u * total < jump_rate {
            y = jump_destination(&params.q, y, rng);
        } else {
            let a = params.offspring[y].sample(rng);
            budget.grow(a, s)?;
            for i in 1..=(a + 1) {
                path.push(i);
                p_subtree_typed(params, horizon, budget, rng, path, s, x, y, visit)?;
                path.pop();
            }
            return Ok(());
        }
    }
}

/// Destination of a type jump from `y`, proportional to the off-diagonal
/// rates of the given matrix row.
fn jump_destination<R: Rng>(rates: &DMatrix<f64>, y: usize, rng: &mut R) -> usize {
    let n = rates.nrows();
    let total: f64 = (0..n).filter(|&j| j != y).map(|j| rates[(y, j)]).sum();
    let mut u: f64 = rng.gen::<f64>() * total;
    let mut last = y;
    for j in 0..n {
        if j == y {
            continue;
        }
        let w = rates[(y, j)];
        if w <= 0.0 {
            continue;
        }
        if u < w {
            return j;
        }
        u -= w;
        last = j;
    }
    last
}

pub(crate) fn walk_p_typed<R: Rng>(
    params: &TypedParams,
    t: f64,
    cap: u64,
    rng: &mut R,
    visit: &mut TypedVisit,
) -> Result<()> {
    let mut budget = Budget::new(cap);
    let mut path = Vec::new();
    p_subtree_typed(
        params,
        t,
        &mut budget,
        rng,
        &mut path,
        0.0,
        params.x0,
        params.y0,
        visit,
    )
}

/// Spine walk result: the record plus the time the spine spent in each type
/// within `[occupation_from, t]` (stationarity checks discard a burn-in
/// window, so the accumulation start is a parameter).
pub(crate) struct QTypedOutcome {
    pub record: SpineRecord<usize>,
    pub occupation: Vec<f64>,
}

/// Spine walk under the changed measure. The type chain follows the honest
/// `theta Q_lambda`, the spatial motion gains drift `a(y) lambda`, fission
/// accelerates to `(1+m(y)) r(y)` with size-biased family sizes, and every
/// non-spine child roots an independent P-subtree when `include_subtrees`.
pub(crate) fn walk_q_typed<R: Rng>(
    params: &TypedParams,
    spec: &TypedSpectral,
    t: f64,
    cap: u64,
    include_subtrees: bool,
    occupation_from: f64,
    rng: &mut R,
    visit: &mut TypedVisit,
) -> Result<QTypedOutcome> {
    let n = params.n();
    let q_lambda = q_lambda_matrix(params, spec).theta_q_lambda;
    let mut budget = Budget::new(cap);
    let mut path: Vec<u64> = Vec::new();
    let mut fissions: Vec<SpineFission<usize>> = Vec::new();
    let mut occupation = vec![0.0; n];
    let mut cur = 0.0;
    let mut x = params.x0;
    let mut y = params.y0;
    let mut birth = 0.0;
    loop {
        let jump_rate = -q_lambda[(y, y)];
        let fission_rate = (1.0 + params.means[y]) * params.r[y];
        let total = jump_rate + fission_rate;
        let s = if total > 0.0 {
            cur + exp_sample(total, rng)
        } else {
            f64::INFINITY
        };
        if s > t {
            let dt = t - cur;
            occupation[y] += (t - cur.max(occupation_from)).max(0.0);
            let drift = params.a[y] * spec.lambda * dt;
            let xi = x + normal_sample(drift, (params.a[y] * dt).sqrt(), rng);
            visit(&path, xi, y, birth);
            return Ok(QTypedOutcome {
                record: SpineRecord {
                    horizon: t,
                    fissions,
                    terminal_position: xi,
                    terminal_type: y,
                    terminal_label: Label::from_path(path),
                },
                occupation,
            });
        }
        let dt = s - cur;
        occupation[y] += (s.min(t) - cur.max(occupation_from)).max(0.0);
        let drift = params.a[y] * spec.lambda * dt;
        x += normal_sample(drift, (params.a[y] * dt).sqrt(), rng);
        cur = s;
        let u: f64 = rng.gen();
        if u * total < jump_rate {
            y = jump_destination(&q_lambda, y, rng);
        } else {
            let a = params.size_biased[y].sample(rng);
            if include_subtrees {
                budget.grow(a, s)?;
            }
            let chosen = rng.gen_range(1..=a + 1);
            for i in 1..=(a + 1) {
                    if i != chosen {
                    path.push(i);
                    if include_subtrees {
                        p_subtree_typed(
                            params, t, &mut budget, rng, &mut path, s, x, y, visit,
                        )?;
                    }
                    path.pop();
                }
            }
            fissions.push(SpineFission {
                time: s,
                position: x,
                type_value: y,
                extra_offspring: a,
            });
            path.push(chosen);
            birth = s;
        }
    }
}

/// Exact P-simulation, materialized. Deterministic given `seed`.
pub fn simulate_p_typed(
    params: &TypedParams,
    t: f64,
    seed: u64,
    cap: u64,
) -> Result<Snapshot<usize>> {
    if t < 0.0 {
        return Err(Error::Config("horizon t must be >= 0".into()));
    }
    let mut rng = stream(seed, Context::PSimulation, 0);
    let mut particles = Vec::new();
    walk_p_typed(params, t, cap, &mut rng, &mut |path, x, y, birth| {
        particles.push(ParticleState {
            label: Label::from_path(path),
            position: x,
            type_value: y,
            birth_time: birth,
        });
    })?;
    Ok(Snapshot {
        horizon: t,
        particles,
    })
}

/// Spine construction under the changed measure, materialized.
pub fn simulate_q_typed(
    params: &TypedParams,
    lambda: f64,
    t: f64,
    seed: u64,
    cap: u64,
) -> Result<(Snapshot<usize>, SpineRecord<usize>)> {
    if t < 0.0 {
        return Err(Error::Config("horizon t must be >= 0".into()));
    }
    let spec = typed_spectral(params, lambda)?;
    let mut rng = stream(seed, Context::QSimulation, 0);
    let mut particles = Vec::new();
    let outcome = walk_q_typed(params, &spec, t, cap, true, 0.0, &mut rng, &mut |path, x, y, birth| {
        particles.push(ParticleState {
            label: Label::from_path(path),
            position: x,
            type_value: y,
            birth_time: birth,
        });
    })?;
    Ok((
        Snapshot {
            horizon: t,
            particles,
        },
        outcome.record,
    ))
}

/// The typed additive martingale `Z_lambda(t)` on a snapshot.
pub fn z_lambda_typed(snap: &Snapshot<usize>, spec: &TypedSpectral) -> f64 {
    let terms: Vec<f64> = snap
        .particles
        .iter()
        .map(|p| {
            spec.v_lambda[p.type_value]
                * (spec.lambda * p.position - spec.e_lambda * snap.horizon).exp()
        })
        .collect();
    pairwise_sum(&terms)
}

/// Spine decomposition for the typed model. Evaluated with `-E_lambda s`
/// exponents, which is algebraically identical to the `lambda(xi + c s)`
/// form since `lambda c_lambda = -E_lambda`.
pub fn spine_decomposition_typed(rec: &SpineRecord<usize>, spec: &TypedSpectral) -> f64 {
    let sum: f64 = rec
        .fissions
        .iter()
        .map(|f| {
            f.extra_offspring as f64
                * spec.v_lambda[f.type_value]
                * (spec.lambda * f.position - spec.e_lambda * f.time).exp()
        })
        .sum();
    sum + spec.v_lambda[rec.terminal_type]
        * (spec.lambda * rec.terminal_position - spec.e_lambda * rec.horizon).exp()
}
