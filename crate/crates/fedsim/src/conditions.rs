//! Hyperparameter admissibility checkers.
//!
//! Each convergence guarantee in this family comes with a sufficient
//! condition tying the learning rate eta, the averaging period E, the
//! participation count K, the smoothness L, the PL constant mu, the
//! gradient-diversity bound lambda, the variance constant C1 and (for the
//! networked variant) the spectral gap zeta. The checkers evaluate those
//! conditions exactly and solve for the binding eta (bisection to 1e-10
//! relative) and the largest admissible E (integer scan, capped at 1e6).
//!
//! Lambda is always the caller's responsibility; nothing here estimates it.

use serde::Serialize;

use crate::error::{FedError, Result};

/// Cap for the admissible-E integer scan. A reported max_e equal to the cap
/// means the scan never found a violation.
pub const MAX_E_SCAN_CAP: u64 = 1_000_000;

const BISECT_REL_TOL: f64 = 1e-10;

/// Outcome of one admissibility check.
///
/// `satisfied` holds exactly when `lhs <= rhs`. When present, `max_e`
/// satisfies the condition while `max_e + 1` does not, and `max_eta`
/// satisfies it while any relative increase of 1e-6 violates it. `min_e` is
/// the smallest admissible averaging period for conditions that lower-bound
/// E instead of upper-bounding it.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub binding_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_e: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_e: Option<u64>,
}

impl ConditionReport {
    fn new(lhs: f64, rhs: f64) -> Self {
        ConditionReport {
            satisfied: lhs <= rhs,
            lhs,
            rhs,
            binding_margin: rhs - lhs,
            max_e: None,
            max_eta: None,
            min_e: None,
        }
    }
}

/// Largest eta with `satisfies(eta)` true, assuming satisfaction is
/// monotone (true below the boundary, false above). `hi` need not violate;
/// it is doubled until it does, up to overflow of the search window.
fn bisect_max_eta(satisfies: impl Fn(f64) -> bool, mut hi: f64) -> f64 {
    let mut lo = 0.0;
    let mut expand = 0;
    while satisfies(hi) {
        lo = hi;
        hi *= 2.0;
        expand += 1;
        if expand > 200 {
            return lo;
        }
    }
    while hi - lo > BISECT_REL_TOL * hi.max(f64::MIN_POSITIVE) {
        let mid = 0.5 * (lo + hi);
        if satisfies(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Largest integer E in [1, cap] with `satisfies(E)` true, assuming
/// satisfaction is monotone decreasing in E. None when even E = 1 fails.
fn scan_max_e(satisfies: impl Fn(u64) -> bool) -> Option<u64> {
    if !satisfies(1) {
        return None;
    }
    let mut e = 1u64;
    while e < MAX_E_SCAN_CAP && satisfies(e + 1) {
        e += 1;
    }
    Some(e)
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(FedError::invalid(msg.to_string()))
    }
}

/// Left side of the full-gradient condition
/// eta (L + 4 E L^2 / (mu (1 - mu eta)^(E-1))) at fixed E.
fn lfgd_lhs(eta: f64, e: u64, l: f64, mu: f64) -> f64 {
    let contraction = (1.0 - mu * eta).powi((e - 1) as i32);
    eta * (l + 4.0 * e as f64 * l * l / (mu * contraction))
}

/// Variant with an extra condition-number factor on the E term,
/// eta (L + 4 kappa L E / (mu (1 - mu eta)^(E-1))); never weaker than
/// [`lfgd_lhs`] when mu <= 1.
fn lfgd_lhs_strict(eta: f64, e: u64, l: f64, mu: f64) -> f64 {
    let kappa = l / mu;
    let contraction = (1.0 - mu * eta).powi((e - 1) as i32);
    eta * (l + 4.0 * kappa * l * e as f64 / (mu * contraction))
}

fn check_lfgd_impl(
    eta: f64,
    e: u64,
    l: f64,
    mu: f64,
    lambda: f64,
    lhs_fn: fn(f64, u64, f64, f64) -> f64,
) -> Result<ConditionReport> {
    require(e >= 1, "E must be at least 1")?;
    require(l > 0.0 && l.is_finite(), "L must be positive")?;
    require(mu > 0.0 && mu.is_finite(), "mu must be positive")?;
    require(lambda >= 1.0, "lambda must be at least 1")?;
    require(eta > 0.0 && eta.is_finite(), "eta must be positive")?;
    if mu * eta >= 1.0 {
        return Err(FedError::invalid(
            "mu * eta must be below 1 (contraction factor would be non-positive)",
        ));
    }
    let rhs = 1.0 / lambda;
    let mut report = ConditionReport::new(lhs_fn(eta, e, l, mu), rhs);
    // The lhs is strictly increasing in eta on (0, 1/mu), so bisection over
    // that interval finds the binding rate.
    let cap = (1.0 / mu) * (1.0 - 1e-12);
    report.max_eta = Some(bisect_max_eta(
        |x| x <= cap && lhs_fn(x, e, l, mu) <= rhs,
        (cap / 2.0).min(1.0),
    ));
    report.max_e = scan_max_e(|ee| lfgd_max_e_probe(lhs_fn, eta, ee, l, mu) <= rhs);
    Ok(report)
}

fn lfgd_max_e_probe(lhs_fn: fn(f64, u64, f64, f64) -> f64, eta: f64, e: u64, l: f64, mu: f64) -> f64 {
    let v = lhs_fn(eta, e, l, mu);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Admissibility for local full-gradient descent with periodic averaging:
/// eta (L + 4 E L^2 / (mu (1 - mu eta)^(E-1))) <= 1 / lambda.
pub fn check_lfgd(eta: f64, e: u64, l: f64, mu: f64, lambda: f64) -> Result<ConditionReport> {
    check_lfgd_impl(eta, e, l, mu, lambda, lfgd_lhs)
}

/// Same check with the stricter condition-number coefficient.
pub fn check_lfgd_strict(eta: f64, e: u64, l: f64, mu: f64, lambda: f64) -> Result<ConditionReport> {
    check_lfgd_impl(eta, e, l, mu, lambda, lfgd_lhs_strict)
}

/// Admissibility for the decaying-rate PL analysis of local SGD.
///
/// The schedule eta_t = 4 / (mu (t + a)) with a = alpha E + 4 requires
/// alpha exp(-2/alpha) < kappa sqrt(192 lambda (K+1)/K), and E at least
/// 1 + (alpha^2 + 6 alpha)/D + sqrt(5)/sqrt(D) where
/// D = 192 lambda ((K+1)/K) kappa^2 e^{4/alpha} - alpha^2. The two
/// requirements are the same constraint: D > 0 exactly when the alpha
/// condition holds.
///
/// Report framing: lhs is the minimal admissible E (infinite when the alpha
/// condition fails), rhs is the given E.
pub fn check_lfsgd_pl(alpha: f64, e: u64, k: u64, lambda: f64, kappa: f64) -> Result<ConditionReport> {
    require(alpha > 0.0 && alpha.is_finite(), "alpha must be positive")?;
    require(e >= 1, "E must be at least 1")?;
    require(k >= 1, "K must be at least 1")?;
    require(lambda >= 1.0, "lambda must be at least 1")?;
    require(kappa >= 1.0, "kappa must be at least 1")?;

    let denom = lambda * ((k as f64 + 1.0) / k as f64) * 192.0 * kappa * kappa
        * (4.0 / alpha).exp()
        - alpha * alpha;
    let min_e_real = if denom > 0.0 {
        1.0 + (alpha * alpha + 6.0 * alpha) / denom + 5f64.sqrt() / denom.sqrt()
    } else {
        f64::INFINITY
    };
    let mut report = ConditionReport::new(min_e_real, e as f64);
    if denom > 0.0 {
        report.min_e = Some(min_e_real.ceil() as u64);
    }
    Ok(report)
}

/// Two additional inequalities the decaying-rate analysis needs at large
/// E, exposed as an optional strict-mode predicate:
/// 4 (a-3)^(E-1) L (C1 + K) <= (64 L^2 (K+1) / (mu K)) (E-1) E (a+1)^(E-2)
/// and C1 <= 2E. Evaluated in log space so large powers do not overflow.
pub fn lfsgd_pl_strict_inequalities(
    alpha: f64,
    e: u64,
    k: u64,
    l: f64,
    mu: f64,
    c1: f64,
) -> bool {
    if e < 2 {
        // The right sides vanish at E = 1 while the first left side stays
        // positive, so strict mode is never satisfied there.
        return false;
    }
    let a = alpha * e as f64 + 4.0;
    let ef = e as f64;
    let kf = k as f64;
    let lhs1 = (4.0 * l * (c1 + kf)).ln() + (ef - 1.0) * (a - 3.0).ln();
    let rhs1 = (64.0 * l * l * (kf + 1.0) / (mu * kf)).ln()
        + ((ef - 1.0) * ef).ln()
        + (ef - 2.0) * (a + 1.0).ln();
    lhs1 <= rhs1 && c1 <= 2.0 * ef
}

fn lfsgd_nonconvex_lhs(eta: f64, e: u64, k: u64, l: f64, lambda: f64, c1: f64) -> f64 {
    let ef = e as f64;
    let kf = k as f64;
    -eta / (2.0 * lambda)
        + (kf + 1.0) * l * l * eta.powi(3) * (2.0 * c1 + ef * (ef + 1.0)) / (2.0 * kf)
        + l * eta * eta * (c1 / kf + 1.0) / 2.0
}

/// Closed-form binding rate for the general nonconvex condition (positive
/// root of the quadratic obtained after dividing by eta).
fn lfsgd_nonconvex_max_eta(e: u64, k: u64, l: f64, lambda: f64, c1: f64) -> f64 {
    let ef = e as f64;
    let kf = k as f64;
    let poly = 2.0 * c1 + ef * (ef + 1.0);
    let b = l * (c1 / kf + 1.0);
    let disc = l * l * (c1 / kf + 1.0) * (c1 / kf + 1.0)
        + (4.0 / lambda) * ((kf + 1.0) / kf) * l * l * poly;
    let mut root = (-b + disc.sqrt()) / (2.0 * ((kf + 1.0) / kf) * l * l * poly);
    // Round the exact root down until it actually satisfies the inequality,
    // so max_eta keeps the satisfies/violates contract under fp round-off.
    for _ in 0..8 {
        if lfsgd_nonconvex_lhs(root, e, k, l, lambda, c1) <= 0.0 {
            break;
        }
        root *= 1.0 - 1e-12;
    }
    root
}

/// Admissibility for general nonconvex local SGD:
/// -eta/(2 lambda) + (K+1) L^2 eta^3 [2 C1 + E(E+1)]/(2K)
/// + L eta^2 (C1/K + 1)/2 <= 0.
pub fn check_lfsgd_nonconvex(
    eta: f64,
    e: u64,
    k: u64,
    l: f64,
    lambda: f64,
    c1: f64,
) -> Result<ConditionReport> {
    require(eta > 0.0 && eta.is_finite(), "eta must be positive")?;
    require(e >= 1, "E must be at least 1")?;
    require(k >= 1, "K must be at least 1")?;
    require(l > 0.0 && l.is_finite(), "L must be positive")?;
    require(lambda >= 1.0, "lambda must be at least 1")?;
    require(c1 >= 0.0, "C1 must be non-negative")?;

    let mut report = ConditionReport::new(lfsgd_nonconvex_lhs(eta, e, k, l, lambda, c1), 0.0);
    report.max_eta = Some(lfsgd_nonconvex_max_eta(e, k, l, lambda, c1));
    report.max_e = scan_max_e(|ee| lfsgd_nonconvex_lhs(eta, ee, k, l, lambda, c1) <= 0.0);
    Ok(report)
}

/// The nonconvex condition specialized to eta = (1/L) sqrt(K/T), rearranged
/// as E(E+1) <= T/K (K/(lambda (K+1)) - sqrt(K/T) (K+C1)/(K+1)) - 2 C1.
/// The smoothness constant cancels. lhs = E(E+1), rhs = that bound.
pub fn lfsgd_nonconvex_reduced(e: u64, k: u64, t: u64, lambda: f64, c1: f64) -> Result<ConditionReport> {
    require(e >= 1, "E must be at least 1")?;
    require(k >= 1, "K must be at least 1")?;
    require(t >= 1, "T must be at least 1")?;
    require(lambda >= 1.0, "lambda must be at least 1")?;
    require(c1 >= 0.0, "C1 must be non-negative")?;
    let ef = e as f64;
    let kf = k as f64;
    let tf = t as f64;
    let rhs = tf / kf * (kf / (lambda * (kf + 1.0)) - (kf / tf).sqrt() * (kf + c1) / (kf + 1.0))
        - 2.0 * c1;
    Ok(ConditionReport::new(ef * (ef + 1.0), rhs))
}

fn nfsgd_lhs(eta: f64, e: u64, p: u64, l: f64, c1: f64, zeta: f64) -> f64 {
    let ef = e as f64;
    let pf = p as f64;
    2.0 * l * l * eta * eta * c1 * ef / (1.0 - zeta * zeta)
        + l * l * eta * eta * ef * ef / (1.0 - zeta)
            * (2.0 * zeta * zeta / (1.0 + zeta) + 2.0 * zeta / (1.0 - zeta) + (ef - 1.0) / ef)
        + eta * l * (c1 / pf + 1.0)
}

/// Networked check extending [`ConditionReport`] with the simplified
/// sufficient form and the E cap implied at the prescribed rate
/// eta = (1/L) sqrt(p/T), namely E <= (1 - zeta) / (L eta sqrt(10 lambda)).
#[derive(Debug, Clone, Serialize)]
pub struct NfsgdReport {
    #[serde(flatten)]
    pub base: ConditionReport,
    /// eta L (C1/p + 2) + 5 eta^2 L^2 E^2 / (1 - zeta)^2.
    pub simplified_lhs: f64,
    pub simplified_satisfied: bool,
    pub e_bound_at_prescribed_rate: f64,
}

/// Admissibility for networked local SGD over a mixing matrix with spectral
/// gap parameter zeta:
/// 2 L^2 eta^2 C1 E/(1-zeta^2)
/// + L^2 eta^2 E^2/(1-zeta) (2 zeta^2/(1+zeta) + 2 zeta/(1-zeta) + (E-1)/E)
/// + eta L (C1/p + 1) <= 1/lambda.
pub fn check_nfsgd(
    eta: f64,
    e: u64,
    p: u64,
    l: f64,
    lambda: f64,
    c1: f64,
    zeta: f64,
) -> Result<ConditionReport> {
    Ok(check_nfsgd_full(eta, e, p, l, lambda, c1, zeta)?.base)
}

pub fn check_nfsgd_full(
    eta: f64,
    e: u64,
    p: u64,
    l: f64,
    lambda: f64,
    c1: f64,
    zeta: f64,
) -> Result<NfsgdReport> {
    require(eta > 0.0 && eta.is_finite(), "eta must be positive")?;
    require(e >= 1, "E must be at least 1")?;
    require(p >= 1, "p must be at least 1")?;
    require(l > 0.0 && l.is_finite(), "L must be positive")?;
    require(lambda >= 1.0, "lambda must be at least 1")?;
    require(c1 >= 0.0, "C1 must be non-negative")?;
    if !(0.0..1.0).contains(&zeta) {
        return Err(FedError::invalid(
            "zeta must lie in [0, 1); use a validated mixing matrix",
        ));
    }

    let rhs = 1.0 / lambda;
    let mut base = ConditionReport::new(nfsgd_lhs(eta, e, p, l, c1, zeta), rhs);
    base.max_eta = Some(bisect_max_eta(
        |x| nfsgd_lhs(x, e, p, l, c1, zeta) <= rhs,
        1.0 / l,
    ));
    base.max_e = scan_max_e(|ee| nfsgd_lhs(eta, ee, p, l, c1, zeta) <= rhs);

    let simplified_lhs = eta * l * (c1 / p as f64 + 2.0)
        + 5.0 * eta * eta * l * l * (e * e) as f64 / ((1.0 - zeta) * (1.0 - zeta));
    // E <= (1 - zeta) sqrt(T / (10 lambda p)) with T solved from
    // eta = (1/L) sqrt(p/T).
    let e_bound = (1.0 - zeta) / (l * eta * (10.0 * lambda).sqrt());
    Ok(NfsgdReport {
        simplified_satisfied: simplified_lhs <= rhs,
        simplified_lhs,
        e_bound_at_prescribed_rate: e_bound,
        base,
    })
}
