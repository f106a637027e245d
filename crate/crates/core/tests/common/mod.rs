//! Test-side oracles, written independently of the library routes they check.

#![allow(dead_code)]

use darkmatter::{JumpLaw, MarketState, ModelParams, RunConfig, ValidatedConfig};

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

pub fn npdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Normal CDF by tanh-sinh quadrature of the density.
pub fn ncdf(x: f64) -> f64 {
    if x.abs() > 40.0 {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    if x < 0.0 {
        return 1.0 - ncdf(-x);
    }
    0.5 + exp_sinh_finite(npdf, 0.0, x)
}

/// Tanh-sinh quadrature on a finite interval.
pub fn exp_sinh_finite(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (c, h2) = (0.5 * (a + b), 0.5 * (b - a));
    let step = 1.0 / 64.0;
    let mut acc = 0.0;
    for i in -380..=380 {
        let t = i as f64 * step;
        let u = 0.5 * std::f64::consts::PI * t.sinh();
        let x = u.tanh();
        let w = 0.5 * std::f64::consts::PI * t.cosh() / (u.cosh() * u.cosh());
        if w < 1e-300 {
            continue;
        }
        let p = c + h2 * x;
        if p <= a || p >= b {
            continue;
        }
        acc += w * f(p);
    }
    acc * h2 * step
}

/// Exp-sinh quadrature of `f` over `[a, inf)`.
pub fn exp_sinh(f: impl Fn(f64) -> f64, a: f64, scale: f64) -> f64 {
    let step = 1.0 / 64.0;
    let mut acc = 0.0;
    for i in -400..=300 {
        let t = i as f64 * step;
        let e = (0.5 * std::f64::consts::PI * t.sinh()).exp();
        let x = a + scale * e;
        let w = scale * e * 0.5 * std::f64::consts::PI * t.cosh();
        if !x.is_finite() || w == 0.0 {
            continue;
        }
        let v = f(x);
        assert!(v.is_finite(), "integrand not finite at {x}");
        acc += w * v;
    }
    acc * step
}

/// `E (e^x - k)^+` under a normal jump with mean `m` and sd `s`.
pub fn normal_jump_call(m: f64, s: f64, k: f64) -> f64 {
    let lk = k.ln();
    let d = (m - lk) / s;
    (m + 0.5 * s * s).exp() * ncdf(d + s) - k * ncdf(d)
}

/// `int_{ln k}^inf (e^x - k) nu(x) dx` by direct quadrature of the density.
pub fn crossing_integral(law: &JumpLaw, k: f64) -> f64 {
    let lk = k.ln();
    match *law {
        JumpLaw::Merton { mu, sigma } => {
            let m = mu - 0.5 * sigma * sigma;
            let log_dens = |x: f64| -0.5 * ((x - m) / sigma).powi(2) - (sigma * SQRT_2PI).ln();
            exp_sinh(|x| (x + log_dens(x)).exp() - k * log_dens(x).exp(), lk, sigma)
        }
        JumpLaw::Kou { p_plus, eta_plus, .. } => {
            // x >= ln k > 0 lies on the upside branch
            exp_sinh(
                |x| p_plus * eta_plus * (((1.0 - eta_plus) * x).exp() - k * (-eta_plus * x).exp()),
                lk,
                1.0 / eta_plus,
            )
        }
        JumpLaw::Dps {
            beta0,
            beta_sv,
            sigma_sv,
            mu_v,
        } => {
            // condition on the exponential variance jump
            let s = sigma_sv;
            exp_sinh(
                |xv| {
                    let m = beta0 + beta_sv * xv;
                    let d = (m - lk) / s;
                    let lw = -xv / mu_v - mu_v.ln();
                    (lw + m + 0.5 * s * s).exp() * ncdf(d + s) - k * lw.exp() * ncdf(d)
                },
                0.0,
                mu_v,
            )
        }
    }
}

pub fn crossing_rp_oracle(k: f64, lam_p: f64, law_p: &JumpLaw, lam_q: f64, law_q: &JumpLaw) -> f64 {
    lam_p * crossing_integral(law_p, k) - lam_q * crossing_integral(law_q, k)
}

/// Undiscounted Black-Scholes call on a unit forward.
pub fn bs_call_unit(k: f64, total_vol: f64) -> f64 {
    let d1 = (-k.ln() + 0.5 * total_vol * total_vol) / total_vol;
    ncdf(d1) - k * ncdf(d1 - total_vol)
}

/// Newey-West covariance by explicit sums: `B S B` with `B = (X'X)^{-1}`.
pub fn nw_bruteforce(x: &[Vec<f64>], e: &[f64], lag: usize) -> Vec<Vec<f64>> {
    let t = x.len();
    let k = x[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    for row in x {
        for a in 0..k {
            for b in 0..k {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let mut s = vec![vec![0.0; k]; k];
    for j in 0..=lag.min(t - 1) {
        let w = if j == 0 {
            1.0
        } else {
            1.0 - j as f64 / (lag as f64 + 1.0)
        };
        for i in j..t {
            for a in 0..k {
                for b in 0..k {
                    let g = x[i][a] * e[i] * x[i - j][b] * e[i - j];
                    if j == 0 {
                        s[a][b] += g;
                    } else {
                        s[a][b] += w * g;
                        s[b][a] += w * g;
                    }
                }
            }
        }
    }
    let inv = invert(&xtx);
    let mul = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| {
        let mut r = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    r[a][b] += p[a][c] * q[c][b];
                }
            }
        }
        r
    };
    mul(&mul(&inv, &s), &inv)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let d = a[c][c];
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let pivot = a[c].clone();
                for (v, pv) in a[r].iter_mut().zip(pivot) {
                    *v -= f * pv;
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn kou(p_plus: f64, eta_plus: f64, eta_minus: f64) -> JumpLaw {
    JumpLaw::Kou {
        p_plus,
        eta_plus,
        eta_minus,
    }
}

pub fn merton(mu: f64, sigma: f64) -> JumpLaw {
    JumpLaw::Merton { mu, sigma }
}

pub fn validated(params: ModelParams, state: MarketState) -> ValidatedConfig {
    RunConfig { params, state }.validate().expect("valid test config")
}

/// GBM with volatility `sigma` under both measures over `tau`.
pub fn gbm(sigma: f64, tau: f64) -> ValidatedConfig {
    let params = ModelParams {
        constant_variance: true,
        ..ModelParams::default()
    };
    let state = MarketState {
        v0: sigma * sigma,
        t_o: tau,
        t_f: tau,
        ..MarketState::default()
    };
    validated(params, state)
}

/// Applies the same jump intensity and law to both measures.
pub fn with_jumps(mut params: ModelParams, lam_p: f64, law_p: JumpLaw, lam_q: f64, law_q: JumpLaw) -> ModelParams {
    params.p_measure.lambda_jump = lam_p;
    params.p_measure.jump_law = law_p;
    params.q_measure.lambda_jump = lam_q;
    params.q_measure.jump_law = law_q;
    params
}
