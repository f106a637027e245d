mod common;

use common::*;
use darkmatter::closedform::{
    bs_delta, bs_price, crossing_rp, dps_crossing_rp, dps_density, implied_vol, kou_crossing_rp, merton_crossing_rp,
    small_dt_consistency, BsInputs, BsStyle, JumpPair,
};
use darkmatter::simulator::sample_jump;
use darkmatter::stats::ks_distance_cdf;
use darkmatter::{JumpLaw, Side};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dps(beta0: f64, beta_sv: f64, mu_v: f64) -> JumpLaw {
    JumpLaw::Dps {
        beta0,
        beta_sv,
        sigma_sv: 0.1,
        mu_v,
    }
}

#[test]
fn black_scholes_reference_values() {
    let zero = BsInputs::new(1.1, 1.0, 0.0, 0.5, 0.0, BsStyle::Index);
    assert!((bs_price(&zero, Side::Call).unwrap() - 0.1).abs() < 1e-15);
    assert_eq!(bs_price(&zero, Side::Put).unwrap(), 0.0);

    let atm = BsInputs::new(1.0, 1.0, 0.2, 1.0, 0.0, BsStyle::Index);
    let oracle = ncdf(0.1) - ncdf(-0.1);
    assert!((bs_price(&atm, Side::Call).unwrap() - oracle).abs() < 1e-14);
    assert!((oracle - 0.079_655_674_554_057_9).abs() < 1e-14);

    let tiny = BsInputs::new(1.0, 1.0, 1e-6, 1.0, 0.0, BsStyle::Index);
    assert!((bs_delta(&tiny, Side::Call).unwrap() - 0.5).abs() < 1e-6);

    let itm = BsInputs::new(1.2, 1.0, 0.2, 0.25, 0.0, BsStyle::Futures);
    assert!(implied_vol(0.15, &itm, Side::Call).is_err());
}

#[test]
fn put_call_parity_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..50 {
        let f = rng.random_range(50.0..150.0);
        let k = f * rng.random_range(0.7..1.3);
        let sigma = rng.random_range(0.05..0.8);
        let tau: f64 = rng.random_range(0.01..2.0);
        let r: f64 = rng.random_range(-0.01..0.08);
        let disc = (-r * tau).exp();
        for style in [BsStyle::Index, BsStyle::Futures] {
            let inp = BsInputs::new(f, k, sigma, tau, r, style);
            let gap = bs_price(&inp, Side::Call).unwrap() - bs_price(&inp, Side::Put).unwrap();
            let expect = match style {
                BsStyle::Index => f - k * disc,
                BsStyle::Futures => disc * (f - k),
            };
            assert!((gap - expect).abs() < 1e-10 * f, "{inp:?}");
        }
    }
}

#[test]
fn merton_example_and_sign() {
    let k = 1.03;
    let cf = merton_crossing_rp(k, 0.5, -0.02, 0.05, 1.0, -0.05, 0.08).unwrap();
    let oracle = crossing_rp_oracle(k, 0.5, &merton(-0.02, 0.05), 1.0, &merton(-0.05, 0.08));
    assert!(((cf - oracle) / oracle).abs() < 1e-8);
    assert!(cf < 0.0);
    assert_eq!(merton_crossing_rp(k, 1.0, -0.02, 0.05, 1.0, -0.02, 0.05).unwrap(), 0.0);
}

#[test]
fn kou_example_and_sign() {
    let (p, q) = (kou(0.4, 25.0, 20.0), kou(0.4, 20.0, 20.0));
    let cf = kou_crossing_rp(1.03, 1.0, &p, 2.0, &q).unwrap();
    let oracle = crossing_rp_oracle(1.03, 1.0, &p, 2.0, &q);
    assert!(((cf - oracle) / oracle).abs() < 1e-8);
    assert!((cf - -0.0158).abs() < 5e-5, "{cf}");
    assert_eq!(kou_crossing_rp(1.03, 2.0, &q, 2.0, &q).unwrap(), 0.0);
}

#[test]
fn dps_sign_claim() {
    let (p, q) = (dps(-0.05, -0.5, 0.02), dps(-0.07, -0.6, 0.03));
    let rp = dps_crossing_rp(1.03, 1.0, &p, 2.0, &q).unwrap();
    let oracle = crossing_rp_oracle(1.03, 1.0, &p, 2.0, &q);
    assert!(rp < 0.0 && (rp - oracle).abs() < 1e-6, "{rp} vs {oracle}");
    // the restrictions alone thin the Q upside; the sign needs a larger Q intensity
    assert!(dps_crossing_rp(1.03, 1.0, &p, 1.0, &q).unwrap() > 0.0);
}

#[test]
fn dps_density_matches_conditional_sampling() {
    for law in [dps(-0.05, -0.5, 0.02), dps(0.01, 0.8, 0.05)] {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let draws: Vec<f64> = (0..1_000_000).map(|_| sample_jump(&law, 0.0, &mut rng).0).collect();
        // cumulative trapezoid of the density on a fine grid
        let (lo, h, n) = (-1.5, 1e-4, 30_000);
        let mut cdf = vec![0.0; n + 1];
        let mut prev = dps_density(lo, &law);
        for i in 1..=n {
            let cur = dps_density(lo + i as f64 * h, &law);
            cdf[i] = cdf[i - 1] + 0.5 * h * (prev + cur);
            prev = cur;
        }
        assert!((cdf[n] - 1.0).abs() < 1e-6, "mass {}", cdf[n]);
        let interp = |x: f64| {
            let t = ((x - lo) / h).clamp(0.0, n as f64 - 1e-9);
            let i = t.floor() as usize;
            cdf[i] + (t - i as f64) * (cdf[i + 1] - cdf[i])
        };
        let ks = ks_distance_cdf(&draws, interp);
        assert!(ks < 0.005, "{law:?}: {ks}");
    }
}

#[test]
fn crossing_premium_falls_with_moneyness() {
    let (p, q) = (kou(0.4, 25.0, 20.0), kou(0.4, 20.0, 20.0));
    let ks: Vec<f64> = (0..40).map(|i| 1.005 + 0.01 * i as f64).collect();
    let rp: Vec<f64> = ks.iter().map(|&k| crossing_rp(k, 1.0, &p, 2.0, &q).unwrap()).collect();
    // Q dominates on the upside, so the premium is negative and shrinks toward 0
    assert!(rp.iter().all(|&x| x < 0.0));
    assert!(rp.windows(2).all(|w| w[1] > w[0]), "{rp:?}");
    let mag: Vec<f64> = rp.iter().map(|x| x.abs()).collect();
    assert!(mag.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn zero_intensity_small_dt_is_zero() {
    let pair = JumpPair {
        lam_p: 0.0,
        law_p: kou(0.4, 25.0, 20.0),
        lam_q: 0.0,
        law_q: kou(0.4, 20.0, 20.0),
    };
    let c = small_dt_consistency(&pair, 1.03, 1.0 / 3650.0, 1000, 1).unwrap();
    assert_eq!(c.closed_form, 0.0);
    assert_eq!(c.monte_carlo.estimate, 0.0);
}

proptest! {
    #[test]
    fn call_is_increasing_in_sigma_and_convex_in_strike(
        f in 50.0f64..150.0, m in 0.7f64..1.3, s in 0.05f64..0.8, tau in 0.05f64..2.0, r in 0.0f64..0.05
    ) {
        let k = f * m;
        let price = |k: f64, s: f64| bs_price(&BsInputs::new(f, k, s, tau, r, BsStyle::Index), Side::Call).unwrap();
        let time_value = price(k, s) - price(k, 0.0);
        prop_assert!(price(k, s * 1.05) >= price(k, s));
        if time_value > 1e-9 * f {
            prop_assert!(price(k, s * 1.05) > price(k, s));
        }
        let h = 0.01 * f;
        prop_assert!(price(k - h, s) + price(k + h, s) - 2.0 * price(k, s) >= -1e-10 * f);
    }

    #[test]
    fn implied_vol_recovers_sigma(f in 80.0f64..120.0, m in 0.8f64..1.2, s in 0.05f64..0.8, tau in 0.05f64..1.0) {
        let inp = BsInputs::new(f, f * m, s, tau, 0.01, BsStyle::Index);
        for side in [Side::Call, Side::Put] {
            let p = bs_price(&inp, side).unwrap();
            // sigma is unidentifiable once the price sits on its no-arbitrage floor
            let floor = bs_price(&inp.with_sigma(0.0), side).unwrap();
            prop_assume!(p - floor > 1e-7 * f);
            let iv = implied_vol(p, &inp, side).unwrap();
            let at = |x: f64| bs_price(&inp.with_sigma(x), side).unwrap();
            prop_assert!((at(iv) - p).abs() <= 1e-10 * f);
            let vega = (at(s + 1e-4) - at(s - 1e-4)) / 2e-4;
            prop_assert!((iv - s).abs() <= 1e-6f64.max(2e-10 * f / vega), "{side} {iv} vs {s}");
        }
    }
}
