//! Black-Scholes formulas, jump-size laws, and the small-horizon
//! strike-crossing risk premiums.
//!
//! A crossing risk premium per unit horizon is
//! `lambda_p C_p(k) - lambda_q C_q(k)` with `C(k) = E (e^x - k)^+`, the
//! expected overshoot of a single jump starting at the money.

use serde::Serialize;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::model::{JumpLaw, Measure, RunConfig, Side, ValidatedConfig};
use crate::quadrature::integrate_with_breaks;
use crate::simulator::{PathSource, Simulator};
use crate::stats::Estimate;

/// Standard normal CDF, `erfc(-x / sqrt 2) / 2`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `ln N(x)`, accurate in the far left tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

// ---------------------------------------------------------------------------
// Black-Scholes

/// Which `d1` convention to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BsStyle {
    /// Spot index: `d1 = (ln(f/k) + r tau + sigma^2 tau / 2) / (sigma sqrt tau)`.
    Index,
    /// Futures (Black): `d1 = (ln(f/k) + sigma^2 tau / 2) / (sigma sqrt tau)`,
    /// premium discounted at `r`.
    Futures,
}

/// `k` is the strike level in the same units as `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BsInputs {
    pub f: f64,
    pub k: f64,
    pub sigma: f64,
    pub tau: f64,
    pub r: f64,
    pub style: BsStyle,
}

impl BsInputs {
    pub fn new(f: f64, k: f64, sigma: f64, tau: f64, r: f64, style: BsStyle) -> Self {
        BsInputs {
            f,
            k,
            sigma,
            tau,
            r,
            style,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.f > 0.0 && self.k > 0.0 && self.sigma >= 0.0 && self.tau >= 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Black-Scholes inputs need f, k > 0 and sigma, tau >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    fn d1(&self) -> f64 {
        let s = self.sigma * self.tau.sqrt();
        let carry = match self.style {
            BsStyle::Index => self.r * self.tau,
            BsStyle::Futures => 0.0,
        };
        ((self.f / self.k).ln() + carry + 0.5 * s * s) / s
    }

    fn total_vol(&self) -> f64 {
        self.sigma * self.tau.sqrt()
    }

    fn disc(&self) -> f64 {
        (-self.r * self.tau).exp()
    }

    /// Intrinsic value at zero volatility.
    fn intrinsic(&self, side: Side) -> f64 {
        let d = self.disc();
        match (self.style, side) {
            (BsStyle::Index, Side::Call) => (self.f - self.k * d).max(0.0),
            (BsStyle::Index, Side::Put) => (self.k * d - self.f).max(0.0),
            (BsStyle::Futures, Side::Call) => d * (self.f - self.k).max(0.0),
            (BsStyle::Futures, Side::Put) => d * (self.k - self.f).max(0.0),
        }
    }

    fn upper_bound(&self, side: Side) -> f64 {
        let d = self.disc();
        match (self.style, side) {
            (BsStyle::Index, Side::Call) => self.f,
            (BsStyle::Futures, Side::Call) => d * self.f,
            (_, Side::Put) => d * self.k,
        }
    }
}

pub fn bs_price(inp: &BsInputs, side: Side) -> Result<f64> {
    inp.check()?;
    if inp.total_vol() == 0.0 {
        return Ok(inp.intrinsic(side));
    }
    let d1 = inp.d1();
    let d2 = d1 - inp.total_vol();
    let disc = inp.disc();
    let price = match (inp.style, side) {
        (BsStyle::Index, Side::Call) => inp.f * norm_cdf(d1) - inp.k * disc * norm_cdf(d2),
        (BsStyle::Index, Side::Put) => inp.k * disc * norm_cdf(-d2) - inp.f * norm_cdf(-d1),
        (BsStyle::Futures, Side::Call) => disc * (inp.f * norm_cdf(d1) - inp.k * norm_cdf(d2)),
        (BsStyle::Futures, Side::Put) => disc * (inp.k * norm_cdf(-d2) - inp.f * norm_cdf(-d1)),
    };
    Ok(price.max(0.0))
}

/// Call delta `N(d1)`, put delta `-N(-d1)`; futures style carries `e^{-r tau}`.
pub fn bs_delta(inp: &BsInputs, side: Side) -> Result<f64> {
    inp.check()?;
    let scale = match inp.style {
        BsStyle::Index => 1.0,
        BsStyle::Futures => inp.disc(),
    };
    let n_d1 = if inp.total_vol() == 0.0 {
        let fwd_itm = match inp.style {
            BsStyle::Index => inp.f > inp.k * inp.disc(),
            BsStyle::Futures => inp.f > inp.k,
        };
        if fwd_itm {
            1.0
        } else {
            0.0
        }
    } else {
        norm_cdf(inp.d1())
    };
    Ok(match side {
        Side::Call => scale * n_d1,
        Side::Put => -scale * (1.0 - n_d1),
    })
}

pub const IV_LOWER: f64 = 1e-6;
pub const IV_UPPER: f64 = 5.0;

/// Volatility reproducing `price`, by bisection safeguarding secant steps on
/// `[IV_LOWER, IV_UPPER]`, to `|price error| <= 1e-10 f`. `inp.sigma` is ignored.
pub fn implied_vol(price: f64, inp: &BsInputs, side: Side) -> Result<f64> {
    inp.with_sigma(0.0).check()?;
    let lower = inp.intrinsic(side);
    let upper = inp.upper_bound(side);
    if !(price > lower && price < upper) {
        return Err(Error::NoImpliedVol(format!("price {price} outside ({lower}, {upper})")));
    }
    let tol = 1e-10 * inp.f;
    let g = |s: f64| bs_price(&inp.with_sigma(s), side).map(|p| p - price);
    let (mut a, mut b) = (IV_LOWER, IV_UPPER);
    let (mut fa, mut fb) = (g(a)?, g(b)?);
    if fa.abs() <= tol {
        return Ok(a);
    }
    if fb.abs() <= tol {
        return Ok(b);
    }
    if fa > 0.0 || fb < 0.0 {
        return Err(Error::NoImpliedVol(format!(
            "price {price} not bracketed by sigma in [{IV_LOWER}, {IV_UPPER}]"
        )));
    }
    // consecutive moves of the same endpoint force a bisection step
    let mut same_side = 0;
    let mut last_low = false;
    for _ in 0..200 {
        let secant = b - fb * (b - a) / (fb - fa);
        let mid = 0.5 * (a + b);
        let inside = secant > a + 0.01 * (b - a) && secant < b - 0.01 * (b - a);
        let x = if inside && same_side < 2 { secant } else { mid };
        let fx = g(x)?;
        if fx.abs() <= tol {
            return Ok(x);
        }
        let low = fx < 0.0;
        same_side = if low == last_low { same_side + 1 } else { 1 };
        last_low = low;
        if low {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        if b - a < 1e-15 {
            return Ok(0.5 * (a + b));
        }
    }
    Ok(0.5 * (a + b))
}

// ---------------------------------------------------------------------------
// Jump laws

/// Density of the price jump `x_s`.
pub fn jump_density(law: &JumpLaw, x: f64) -> f64 {
    match *law {
        JumpLaw::Merton { mu, sigma } => norm_pdf((x - (mu - 0.5 * sigma * sigma)) / sigma) / sigma,
        JumpLaw::Kou {
            p_plus,
            eta_plus,
            eta_minus,
        } => {
            if x >= 0.0 {
                p_plus * eta_plus * (-eta_plus * x).exp()
            } else {
                (1.0 - p_plus) * eta_minus * (eta_minus * x).exp()
            }
        }
        JumpLaw::Dps { .. } => dps_density(x, law),
    }
}

/// Marginal density of `x_s = beta0 + beta_sv x_v + sigma_sv Z` with
/// `x_v ~ Exp(mean mu_v)`. With `c = beta_sv mu_v` and `u = x - beta0`:
/// `(1/|c|) exp(-u/c + sigma^2/(2c^2)) N(sign(c) (u/sigma - sigma/c))`.
///
/// Returns NaN for a non-DPS law.
pub fn dps_density(x: f64, law: &JumpLaw) -> f64 {
    let JumpLaw::Dps {
        beta0,
        beta_sv,
        sigma_sv,
        mu_v,
    } = *law
    else {
        return f64::NAN;
    };
    let c = beta_sv * mu_v;
    let u = x - beta0;
    if c == 0.0 || (sigma_sv / c).abs() > 1e6 {
        return norm_pdf(u / sigma_sv) / sigma_sv;
    }
    let s = c.signum();
    let ln =
        -c.abs().ln() - u / c + sigma_sv * sigma_sv / (2.0 * c * c) + ln_norm_cdf(s * (u / sigma_sv - sigma_sv / c));
    ln.exp()
}

/// Points where the jump density has kinks or most of its mass.
fn law_breaks(law: &JumpLaw) -> Vec<f64> {
    match *law {
        JumpLaw::Merton { mu, sigma } => {
            let m = mu - 0.5 * sigma * sigma;
            (-8..=8).map(|i| m + i as f64 * sigma).collect()
        }
        JumpLaw::Kou {
            eta_plus, eta_minus, ..
        } => {
            let mut b = vec![0.0];
            for i in 1..=6 {
                b.push(5.0 * i as f64 / eta_plus);
                b.push(-5.0 * i as f64 / eta_minus);
            }
            b
        }
        JumpLaw::Dps {
            beta0,
            beta_sv,
            sigma_sv,
            mu_v,
        } => {
            let c = beta_sv * mu_v;
            let scale = sigma_sv + c.abs();
            let mut b: Vec<f64> = (-10..=10).map(|i| beta0 + i as f64 * scale).collect();
            b.push(beta0 + c);
            b
        }
    }
}

fn dps_mgf(beta0: f64, beta_sv: f64, sigma_sv: f64, mu_v: f64, u: f64) -> Option<f64> {
    let denom = 1.0 - u * beta_sv * mu_v;
    (denom > 0.0).then(|| (u * beta0 + 0.5 * u * u * sigma_sv * sigma_sv).exp() / denom)
}

/// `E e^{u x_s}` in closed form, `None` where it diverges.
pub fn jump_mgf(law: &JumpLaw, u: f64) -> Option<f64> {
    match *law {
        JumpLaw::Merton { mu, sigma } => Some((u * (mu - 0.5 * sigma * sigma) + 0.5 * u * u * sigma * sigma).exp()),
        JumpLaw::Kou {
            p_plus,
            eta_plus,
            eta_minus,
        } => (u < eta_plus && -u < eta_minus)
            .then(|| p_plus * eta_plus / (eta_plus - u) + (1.0 - p_plus) * eta_minus / (eta_minus + u)),
        JumpLaw::Dps {
            beta0,
            beta_sv,
            sigma_sv,
            mu_v,
        } => dps_mgf(beta0, beta_sv, sigma_sv, mu_v, u),
    }
}

/// `E e^{x_s}`: closed form for Merton and Kou, quadrature against the
/// marginal density for DPS.
pub fn expected_jump_factor(law: &JumpLaw) -> f64 {
    match *law {
        JumpLaw::Merton { mu, .. } => mu.exp(),
        JumpLaw::Kou {
            p_plus,
            eta_plus,
            eta_minus,
        } => p_plus * eta_plus / (eta_plus - 1.0) + (1.0 - p_plus) * eta_minus / (eta_minus + 1.0),
        JumpLaw::Dps { .. } => integrate_with_breaks(
            |x| x.exp() * dps_density(x, law),
            f64::NEG_INFINITY,
            f64::INFINITY,
            &law_breaks(law),
            1e-13,
        )
        .unwrap_or_else(|e| match e {
            Error::Quadrature { value, .. } => value,
            _ => f64::NAN,
        }),
    }
}

/// Generic quadrature of `E (e^x - k)^+ = int_{ln k}^inf (e^x - k) nu(x) dx`.
pub fn crossing_integral_quadrature(law: &JumpLaw, k: f64, tol: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("k must be positive, got {k}")));
    }
    let lk = k.ln();
    integrate_with_breaks(
        |x| (x.exp() - k) * jump_density(law, x),
        lk,
        f64::INFINITY,
        &law_breaks(law),
        tol,
    )
}

/// `E (e^x - k)^+` for any `k > 0`: closed form for Merton and Kou,
/// quadrature (1e-13 absolute) for DPS.
pub fn jump_call(law: &JumpLaw, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("k must be positive, got {k}")));
    }
    let lk = k.ln();
    Ok(match *law {
        JumpLaw::Merton { mu, sigma } => {
            let d1 = (-lk + mu + 0.5 * sigma * sigma) / sigma;
            mu.exp() * norm_cdf(d1) - k * norm_cdf(d1 - sigma)
        }
        JumpLaw::Kou {
            p_plus,
            eta_plus,
            eta_minus,
        } => {
            if lk >= 0.0 {
                p_plus * k.powf(1.0 - eta_plus) / (eta_plus - 1.0)
            } else {
                let up = p_plus * (eta_plus / (eta_plus - 1.0) - k);
                let down = (1.0 - p_plus)
                    * (eta_minus / (eta_minus + 1.0) * (1.0 - ((eta_minus + 1.0) * lk).exp())
                        - k * (1.0 - (eta_minus * lk).exp()));
                up + down
            }
        }
        JumpLaw::Dps { .. } => crossing_integral_quadrature(law, k, 1e-13)?,
    })
}

fn require_otm_call(k: f64) -> Result<()> {
    if !(k > 1.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("crossing premium needs k > 1, got {k}")));
    }
    Ok(())
}

/// `lam_p {e^{mu_p} N(d1_p) - k N(d2_p)} - lam_q {...}`, with
/// `d1 = (-ln k + mu + sigma^2/2) / sigma` and `d2 = d1 - sigma`.
pub fn merton_crossing_rp(k: f64, lam_p: f64, mu_p: f64, sig_p: f64, lam_q: f64, mu_q: f64, sig_q: f64) -> Result<f64> {
    require_otm_call(k)?;
    if !(sig_p > 0.0 && sig_q > 0.0) {
        return Err(Error::InvalidArgument("Merton sigma must be positive".into()));
    }
    let cp = jump_call(&JumpLaw::Merton { mu: mu_p, sigma: sig_p }, k)?;
    let cq = jump_call(&JumpLaw::Merton { mu: mu_q, sigma: sig_q }, k)?;
    Ok(lam_p * cp - lam_q * cq)
}

/// Parameters of the upside of a Kou law.
fn kou_upside(law: &JumpLaw) -> Result<(f64, f64)> {
    match *law {
        JumpLaw::Kou { p_plus, eta_plus, .. } => Ok((p_plus, eta_plus)),
        _ => Err(Error::InvalidArgument(format!(
            "expected a Kou law, got {}",
            law.name()
        ))),
    }
}

/// `lam_p p_p k^{1 - eta_p} / (eta_p - 1) - lam_q p_q k^{1 - eta_q} / (eta_q - 1)`.
pub fn kou_crossing_rp(k: f64, lam_p: f64, law_p: &JumpLaw, lam_q: f64, law_q: &JumpLaw) -> Result<f64> {
    require_otm_call(k)?;
    let (pp, ep) = kou_upside(law_p)?;
    let (pq, eq) = kou_upside(law_q)?;
    let lk = k.ln();
    Ok(lam_p * pp * (-lk * (ep - 1.0)).exp() / (ep - 1.0) - lam_q * pq * (-lk * (eq - 1.0)).exp() / (eq - 1.0))
}

/// DPS crossing premium by adaptive quadrature to 1e-9 absolute.
pub fn dps_crossing_rp(k: f64, lam_p: f64, law_p: &JumpLaw, lam_q: f64, law_q: &JumpLaw) -> Result<f64> {
    require_otm_call(k)?;
    for law in [law_p, law_q] {
        if !matches!(law, JumpLaw::Dps { .. }) {
            return Err(Error::InvalidArgument(format!(
                "expected a DPS law, got {}",
                law.name()
            )));
        }
    }
    let tol = 1e-9 / (2.0 * lam_p.max(lam_q).max(1.0));
    let cp = crossing_integral_quadrature(law_p, k, tol)?;
    let cq = crossing_integral_quadrature(law_q, k, tol)?;
    Ok(lam_p * cp - lam_q * cq)
}

/// Closed-form crossing premium for any pair of laws of the same family.
pub fn crossing_rp(k: f64, lam_p: f64, law_p: &JumpLaw, lam_q: f64, law_q: &JumpLaw) -> Result<f64> {
    match (law_p, law_q) {
        (JumpLaw::Merton { mu: mp, sigma: sp }, JumpLaw::Merton { mu: mq, sigma: sq }) => {
            merton_crossing_rp(k, lam_p, *mp, *sp, lam_q, *mq, *sq)
        }
        (JumpLaw::Kou { .. }, JumpLaw::Kou { .. }) => kou_crossing_rp(k, lam_p, law_p, lam_q, law_q),
        (JumpLaw::Dps { .. }, JumpLaw::Dps { .. }) => dps_crossing_rp(k, lam_p, law_p, lam_q, law_q),
        _ => Err(Error::InvalidArgument("P and Q laws must be of the same family".into())),
    }
}

/// Quadrature oracle for any crossing premium.
pub fn crossing_rp_quadrature(
    k: f64,
    lam_p: f64,
    law_p: &JumpLaw,
    lam_q: f64,
    law_q: &JumpLaw,
    tol: f64,
) -> Result<f64> {
    Ok(lam_p * crossing_integral_quadrature(law_p, k, tol)? - lam_q * crossing_integral_quadrature(law_q, k, tol)?)
}

// ---------------------------------------------------------------------------
// Small-horizon consistency

/// Jump intensities and laws under both measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct JumpPair {
    pub lam_p: f64,
    pub law_p: JumpLaw,
    pub lam_q: f64,
    pub law_q: JumpLaw,
}

impl JumpPair {
    /// Closed-form crossing premium per unit horizon at `k > 1`.
    pub fn crossing_rp(&self, k: f64) -> Result<f64> {
        crossing_rp(k, self.lam_p, &self.law_p, self.lam_q, &self.law_q)
    }

    /// Pure-jump configuration over `[0, dt]`: zero diffusion (`v0 = 0` held
    /// constant), no kernel diffusive loadings, `mu_jump = 0`, `r = 0`.
    pub fn pure_jump_config(&self, dt: f64) -> std::result::Result<ValidatedConfig, crate::error::ValidationErrors> {
        let mut c = RunConfig::default();
        c.params.p_measure.lambda_jump = self.lam_p;
        c.params.p_measure.jump_law = self.law_p;
        c.params.q_measure.lambda_jump = self.lam_q;
        c.params.q_measure.jump_law = self.law_q;
        c.params.constant_variance = true;
        c.state.v0 = 0.0;
        c.state.t0 = 0.0;
        c.state.t_o = dt;
        c.state.t_f = dt;
        c.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SmallDtComparison {
    pub k: f64,
    pub dt: f64,
    /// `(lambda_p C_p(k) - lambda_q C_q(k)) dt`.
    pub closed_form: f64,
    /// Exact expectation of the simulated one-step scheme (Poisson terms up
    /// to two jumps, with the compensator drift).
    pub exact_finite_dt: f64,
    /// `E^P a - E^Q a` by Monte Carlo over one-step pure-jump paths.
    pub monte_carlo: Estimate,
    /// `exact_finite_dt - closed_form`.
    pub discrepancy: f64,
}

/// `E a` at `k` for the one-step pure-jump scheme under one measure:
/// pre-jump level `g = exp(-lambda (E e^x - 1) dt)`, then `N ~ Poisson(lambda dt)` jumps.
pub fn one_step_crossing_expectation(lam: f64, law: &JumpLaw, k: f64, dt: f64) -> Result<f64> {
    if lam == 0.0 {
        return Ok(0.0);
    }
    let m = lam * dt;
    let g = (-lam * (expected_jump_factor(law) - 1.0) * dt).exp();
    if g > k {
        return Ok(0.0);
    }
    let kk = k / g;
    let c1 = jump_call(law, kk)?;
    let mut breaks = law_breaks(law);
    breaks.push(kk.ln());
    let c2 = integrate_with_breaks(
        |y| {
            let f = jump_density(law, y);
            if f == 0.0 {
                0.0
            } else {
                f * y.exp() * jump_call(law, kk * (-y).exp()).unwrap_or(f64::NAN)
            }
        },
        f64::NEG_INFINITY,
        f64::INFINITY,
        &breaks,
        1e-12,
    )?;
    Ok(g * (-m).exp() * (m * c1 + 0.5 * m * m * c2))
}

/// Monte Carlo crossing premium over a horizon `dt` against `closed form * dt`.
pub fn small_dt_consistency(pair: &JumpPair, k: f64, dt: f64, n_paths: usize, seed: u64) -> Result<SmallDtComparison> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let cfg = pair.pure_jump_config(dt)?;
    let closed_form = pair.crossing_rp(k)? * dt;
    let exact_finite_dt = one_step_crossing_expectation(pair.lam_p, &pair.law_p, k, dt)?
        - one_step_crossing_expectation(pair.lam_q, &pair.law_q, k, dt)?;
    let run = |m: Measure| -> Result<Estimate> {
        let sim = Simulator::new(&cfg, m, n_paths, 1, seed)?;
        let a = sim.map_paths(|p| crate::tanaka::crossing_terms(p, k).map(|t| t.a))?;
        Ok(Estimate::from_samples(&a.into_iter().collect::<Result<Vec<_>>>()?))
    };
    let monte_carlo = run(Measure::P)?.minus(&run(Measure::Q)?);
    Ok(SmallDtComparison {
        k,
        dt,
        closed_form,
        exact_finite_dt,
        monte_carlo,
        discrepancy: exact_finite_dt - closed_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kou(p: f64, a: f64, b: f64) -> JumpLaw {
        JumpLaw::Kou {
            p_plus: p,
            eta_plus: a,
            eta_minus: b,
        }
    }

    const DPS: JumpLaw = JumpLaw::Dps {
        beta0: -0.05,
        beta_sv: -0.5,
        sigma_sv: 0.1,
        mu_v: 0.02,
    };

    #[test]
    fn norm_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
        assert!((ln_norm_cdf(-29.9) - norm_cdf(-29.9).ln()).abs() < 1e-9);
        assert!((ln_norm_cdf(-30.1) - norm_cdf(-30.1).ln()).abs() < 1e-6);
    }

    #[test]
    fn expected_jump_factor_examples() {
        assert_eq!(expected_jump_factor(&JumpLaw::Merton { mu: 0.0, sigma: 0.1 }), 1.0);
        assert!((expected_jump_factor(&kou(0.5, 2.0, 2.0)) - 4.0 / 3.0).abs() < 1e-15);
        let via_mgf = jump_mgf(&DPS, 1.0).unwrap();
        assert!((expected_jump_factor(&DPS) - via_mgf).abs() < 1e-12);
    }

    #[test]
    fn intrinsic_and_atm() {
        let i = BsInputs::new(1.1, 1.0, 0.0, 0.25, 0.0, BsStyle::Futures);
        assert!((bs_price(&i, Side::Call).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(bs_price(&i, Side::Put).unwrap(), 0.0);
        let a = BsInputs::new(1.0, 1.0, 0.4, 0.25, 0.0, BsStyle::Index);
        let expect = norm_cdf(0.1) - norm_cdf(-0.1);
        assert!((bs_price(&a, Side::Call).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.079_655_674_554_057_96).abs() < 1e-15);
    }

    #[test]
    fn implied_vol_round_trip_and_bounds() {
        for style in [BsStyle::Index, BsStyle::Futures] {
            let i = BsInputs::new(100.0, 103.0, 0.23, 0.1, 0.03, style);
            for side in [Side::Call, Side::Put] {
                let p = bs_price(&i, side).unwrap();
                assert!((implied_vol(p, &i, side).unwrap() - 0.23).abs() < 1e-8);
            }
        }
        let i = BsInputs::new(110.0, 100.0, 0.2, 0.1, 0.0, BsStyle::Index);
        assert!(matches!(implied_vol(9.0, &i, Side::Call), Err(Error::NoImpliedVol(_))));
    }

    #[test]
    fn atm_delta_limit() {
        let i = BsInputs::new(1.0, 1.0, 1e-6, 0.01, 0.0, BsStyle::Index);
        assert!((bs_delta(&i, Side::Call).unwrap() - 0.5).abs() < 1e-6);
        let j = i.with_sigma(0.2);
        assert!((bs_delta(&j, Side::Call).unwrap() - norm_cdf(0.5 * 0.02)).abs() < 1e-15);
        assert!((bs_delta(&j, Side::Put).unwrap() + norm_cdf(-0.5 * 0.02)).abs() < 1e-15);
    }

    #[test]
    fn dps_normalizes() {
        let v = integrate_with_breaks(
            |x| dps_density(x, &DPS),
            f64::NEG_INFINITY,
            f64::INFINITY,
            &law_breaks(&DPS),
            1e-12,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        let pos = JumpLaw::Dps {
            beta0: 0.01,
            beta_sv: 0.8,
            sigma_sv: 0.03,
            mu_v: 0.05,
        };
        assert!(dps_density(0.05, &pos) > 0.0);
        assert!((expected_jump_factor(&pos) - jump_mgf(&pos, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn kou_example_value() {
        let rp = kou_crossing_rp(1.03, 1.0, &kou(0.4, 25.0, 20.0), 2.0, &kou(0.4, 20.0, 20.0)).unwrap();
        assert!((rp + 0.015_814).abs() < 5e-6, "{rp}");
    }

    #[test]
    fn kou_call_below_one_matches_quadrature() {
        let l = kou(0.3, 15.0, 8.0);
        for k in [0.7, 0.95, 1.0, 1.2] {
            let q = crossing_integral_quadrature(&l, k, 1e-14).unwrap();
            assert!((jump_call(&l, k).unwrap() - q).abs() < 1e-12, "k={k}");
        }
    }
}

#[cfg(test)]
mod small_dt_tests {
    use super::*;

    #[test]
    fn zero_intensity_is_exactly_zero() {
        let law = JumpLaw::Kou {
            p_plus: 0.4,
            eta_plus: 25.0,
            eta_minus: 20.0,
        };
        let pair = JumpPair {
            lam_p: 0.0,
            law_p: law,
            lam_q: 0.0,
            law_q: law,
        };
        let c = small_dt_consistency(&pair, 1.03, 1.0 / 3650.0, 1000, 3).unwrap();
        assert_eq!(c.closed_form, 0.0);
        assert_eq!(c.exact_finite_dt, 0.0);
        assert_eq!(c.monte_carlo.estimate, 0.0);
    }

    #[test]
    fn exact_value_approaches_closed_form() {
        let law = JumpLaw::Merton { mu: -0.02, sigma: 0.08 };
        let c = jump_call(&law, 1.03).unwrap();
        for dt in [1e-3, 1e-4] {
            let e = one_step_crossing_expectation(2.0, &law, 1.03, dt).unwrap();
            assert!(((e - 2.0 * c * dt) / (2.0 * c * dt)).abs() < 20.0 * dt);
        }
    }
}
