//! P-minus-Q risk-premium decompositions built from Tanaka terms.
//!
//! With `D` the dark matter (local time plus the side-appropriate crossings)
//! and `SI` the indicator-strategy gains, every ramp payoff satisfies
//! `payoff = SI + D` pathwise, and `E^Q SI = 0`. Hence for an OTM call
//!
//! ```text
//! e^{r tau} (E^P payoff / E^Q payoff - 1) = e^{r tau} (E^P D - E^Q D + E^P SI) / E^Q D
//! ```
//!
//! and analogously for puts and the ATM straddle.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Measure, RunConfig, SimulatedPath};
use crate::simulator::PathSource;
use crate::stats::{ratio, Estimate};
use crate::tanaka::{crossing_terms, default_eps, local_time_band, stochastic_integral};

/// Named P-minus-Q components with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RiskPremiumReport {
    pub kind: String,
    pub k: f64,
    pub horizon: f64,
    pub eps: f64,
    pub components: BTreeMap<String, Estimate>,
}

impl RiskPremiumReport {
    fn new(kind: &str, k: f64, horizon: f64, eps: f64) -> Self {
        RiskPremiumReport {
            kind: kind.to_string(),
            k,
            horizon,
            eps,
            components: BTreeMap::new(),
        }
    }

    fn put(&mut self, name: &str, e: Estimate) {
        self.components.insert(name.to_string(), e);
    }

    /// Component by name; panics on an unknown name.
    pub fn get(&self, name: &str) -> Estimate {
        *self
            .components
            .get(name)
            .unwrap_or_else(|| panic!("no component {name} in {} report", self.kind))
    }

    pub fn try_get(&self, name: &str) -> Option<Estimate> {
        self.components.get(name).copied()
    }
}

/// Pathwise functionals at one moneyness level.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StrikeSample {
    pub local_time: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// `int 1{G- > k} dG`
    pub si_up: f64,
    /// `int 1{G- < k} dG` (unsigned)
    pub si_down: f64,
    pub call_payoff: f64,
    pub put_payoff: f64,
}

impl StrikeSample {
    /// Dark matter on the side selected by `k`: `c + d` below 1, `a + b` at or above.
    pub fn dark_matter(&self, k: f64) -> f64 {
        self.local_time + self.crossing(k)
    }

    pub fn crossing(&self, k: f64) -> f64 {
        if k < 1.0 {
            self.c + self.d
        } else {
            self.a + self.b
        }
    }

    fn compute(path: &SimulatedPath, k: f64, eps: f64) -> Result<Self> {
        let x = crossing_terms(path, k)?;
        let gt = path.terminal();
        Ok(StrikeSample {
            local_time: local_time_band(path, k, eps)?,
            a: x.a,
            b: x.b,
            c: x.c,
            d: x.d,
            si_up: stochastic_integral(path, k, crate::model::Side::Call)?,
            si_down: -stochastic_integral(path, k, crate::model::Side::Put)?,
            call_payoff: (gt - k).max(0.0),
            put_payoff: (k - gt).max(0.0),
        })
    }
}

/// Bandwidth actually used at `k`: the caller's value, or the scale-aware
/// default from the first path's `v0` and step.
pub fn resolve_eps(src: &impl PathSource, k: f64, eps: Option<f64>) -> Result<f64> {
    let e = match eps {
        Some(e) => e,
        None => {
            let g = src.grid();
            let v0 = src.path_at(0)?.v[0];
            default_eps(k, v0, g[1] - g[0])
        }
    };
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive (got {e}); pass eps explicitly when v0 = 0"
        )));
    }
    Ok(e)
}

/// Per-strike samples, `out[j][i]` for strike `j` and path `i`.
pub fn strike_samples(src: &impl PathSource, ks: &[f64], eps: &[f64]) -> Result<Vec<Vec<StrikeSample>>> {
    let per_path = src.map_paths(|p| {
        ks.iter()
            .zip(eps)
            .map(|(&k, &e)| StrikeSample::compute(p, k, e))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = vec![Vec::with_capacity(per_path.len()); ks.len()];
    for row in per_path {
        for (j, s) in row?.into_iter().enumerate() {
            out[j].push(s);
        }
    }
    Ok(out)
}

fn check_pair(p: &impl PathSource, q: &impl PathSource) -> Result<()> {
    if p.measure() != Measure::P {
        return Err(Error::WrongMeasure {
            expected: Measure::P,
            got: p.measure(),
        });
    }
    if q.measure() != Measure::Q {
        return Err(Error::WrongMeasure {
            expected: Measure::Q,
            got: q.measure(),
        });
    }
    if p.grid() != q.grid() || p.rate() != q.rate() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

fn est(xs: &[StrikeSample], f: impl Fn(&StrikeSample) -> f64) -> Estimate {
    let v: Vec<f64> = xs.iter().map(f).collect();
    Estimate::from_samples(&v)
}

/// `growth * (num / den - 1)`.
fn excess(growth: f64, num: &Estimate, den: &Estimate) -> Estimate {
    let q = ratio(num, den);
    Estimate {
        estimate: growth * (q.estimate - 1.0),
        se: growth * q.se,
        n_paths: q.n_paths,
    }
}

fn dark_matter_parts(rep: &mut RiskPremiumReport, ps: &[StrikeSample], qs: &[StrikeSample], k: f64) {
    let lt = est(ps, |s| s.local_time).minus(&est(qs, |s| s.local_time));
    let cr = est(ps, |s| s.crossing(k)).minus(&est(qs, |s| s.crossing(k)));
    let dm = est(ps, |s| s.dark_matter(k)).minus(&est(qs, |s| s.dark_matter(k)));
    rep.put("localTimeRP", lt);
    rep.put("crossingRP", cr);
    rep.put("darkMatterRP", dm);
    rep.put("pDarkMatter", est(ps, |s| s.dark_matter(k)));
    rep.put("qDenominator", est(qs, |s| s.dark_matter(k)));
}

fn dark_matter_report(ps: &[StrikeSample], qs: &[StrikeSample], k: f64, horizon: f64, eps: f64) -> RiskPremiumReport {
    let mut rep = RiskPremiumReport::new("darkMatter", k, horizon, eps);
    dark_matter_parts(&mut rep, ps, qs, k);
    rep
}

fn call_report(
    ps: &[StrikeSample],
    qs: &[StrikeSample],
    k: f64,
    horizon: f64,
    r: f64,
    eps: f64,
) -> Result<RiskPremiumReport> {
    let growth = (r * horizon).exp();
    let mut rep = RiskPremiumReport::new("call", k, horizon, eps);
    dark_matter_parts(&mut rep, ps, qs, k);
    let qp = est(qs, |s| s.call_payoff);
    if qp.estimate <= 0.0 {
        return Err(Error::DegenerateStrike(k));
    }
    rep.put("upsideRP", est(ps, |s| s.si_up));
    rep.put("callExcess", excess(growth, &est(ps, |s| s.call_payoff), &qp));
    rep.put(
        "callExcessRHS",
        excess(
            growth,
            &est(ps, |s| s.dark_matter(k) + s.si_up),
            &est(qs, |s| s.dark_matter(k)),
        ),
    );
    Ok(rep)
}

fn put_report(
    ps: &[StrikeSample],
    qs: &[StrikeSample],
    k: f64,
    horizon: f64,
    r: f64,
    eps: f64,
) -> Result<RiskPremiumReport> {
    let growth = (r * horizon).exp();
    let mut rep = RiskPremiumReport::new("put", k, horizon, eps);
    dark_matter_parts(&mut rep, ps, qs, k);
    let qp = est(qs, |s| s.put_payoff);
    if qp.estimate <= 0.0 {
        return Err(Error::DegenerateStrike(k));
    }
    rep.put("downsideRP", est(ps, |s| s.si_down));
    rep.put("putExcess", excess(growth, &est(ps, |s| s.put_payoff), &qp));
    rep.put(
        "putExcessRHS",
        excess(
            growth,
            &est(ps, |s| s.dark_matter(k) - s.si_down),
            &est(qs, |s| s.dark_matter(k)),
        ),
    );
    Ok(rep)
}

fn straddle_report(
    ps: &[StrikeSample],
    qs: &[StrikeSample],
    horizon: f64,
    r: f64,
    eps: f64,
) -> Result<RiskPremiumReport> {
    let growth = (r * horizon).exp();
    let mut rep = RiskPremiumReport::new("straddle", 1.0, horizon, eps);
    // at k = 1: c + d = a + b, the crossing term A[1]
    dark_matter_parts(&mut rep, ps, qs, 1.0);
    let payoff = |s: &StrikeSample| s.call_payoff + s.put_payoff;
    let qp = est(qs, payoff);
    if qp.estimate <= 0.0 {
        return Err(Error::DegenerateStrike(1.0));
    }
    let up = est(ps, |s| s.si_up);
    let down = est(ps, |s| s.si_down);
    rep.put("upsideRP", up);
    rep.put("downsideRP", down);
    rep.put("premiseDefect", est(ps, |s| s.si_up - s.si_down));
    rep.put("straddleExcess", excess(growth, &est(ps, payoff), &qp));
    let qd = est(qs, |s| s.dark_matter(1.0));
    rep.put(
        "straddleExcessRHS",
        excess(growth, &est(ps, |s| s.dark_matter(1.0)), &qd),
    );
    rep.put(
        "straddleExcessRHSExact",
        excess(
            growth,
            &est(ps, |s| s.dark_matter(1.0) + 0.5 * (s.si_up - s.si_down)),
            &qd,
        ),
    );
    Ok(rep)
}

struct Pair {
    ps: Vec<Vec<StrikeSample>>,
    qs: Vec<Vec<StrikeSample>>,
    eps: Vec<f64>,
    horizon: f64,
    r: f64,
}

fn sample_pair(p: &impl PathSource, q: &impl PathSource, ks: &[f64], eps: Option<f64>) -> Result<Pair> {
    check_pair(p, q)?;
    let eps = ks.iter().map(|&k| resolve_eps(q, k, eps)).collect::<Result<Vec<_>>>()?;
    Ok(Pair {
        ps: strike_samples(p, ks, &eps)?,
        qs: strike_samples(q, ks, &eps)?,
        eps,
        horizon: p.horizon(),
        r: p.rate(),
    })
}

/// `E^P(D) - E^Q(D)` with its local-time and crossing parts.
pub fn dark_matter_rp(p: &impl PathSource, q: &impl PathSource, k: f64, eps: Option<f64>) -> Result<RiskPremiumReport> {
    let s = sample_pair(p, q, &[k], eps)?;
    Ok(dark_matter_report(&s.ps[0], &s.qs[0], k, s.horizon, s.eps[0]))
}

/// OTM call (`k > 1`) excess return from payoffs and from the decomposition.
pub fn call_rp_decomposition(
    p: &impl PathSource,
    q: &impl PathSource,
    k: f64,
    eps: Option<f64>,
) -> Result<RiskPremiumReport> {
    if !(k > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "call decomposition needs k > 1, got {k}"
        )));
    }
    let s = sample_pair(p, q, &[k], eps)?;
    call_report(&s.ps[0], &s.qs[0], k, s.horizon, s.r, s.eps[0])
}

/// OTM put (`k < 1`) excess return from payoffs and from the decomposition.
pub fn put_rp_decomposition(
    p: &impl PathSource,
    q: &impl PathSource,
    k: f64,
    eps: Option<f64>,
) -> Result<RiskPremiumReport> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "put decomposition needs 0 < k < 1, got {k}"
        )));
    }
    let s = sample_pair(p, q, &[k], eps)?;
    put_report(&s.ps[0], &s.qs[0], k, s.horizon, s.r, s.eps[0])
}

/// ATM straddle excess return, its decomposition, and the premise defect.
pub fn straddle_rp_decomposition(
    p: &impl PathSource,
    q: &impl PathSource,
    eps: Option<f64>,
) -> Result<RiskPremiumReport> {
    let s = sample_pair(p, q, &[1.0], eps)?;
    straddle_report(&s.ps[0], &s.qs[0], s.horizon, s.r, s.eps[0])
}

/// Call, put and straddle reports (and dark matter at each strike) from one
/// pass over each ensemble.
pub fn premia_reports(
    p: &impl PathSource,
    q: &impl PathSource,
    k_call: f64,
    k_put: f64,
    eps: Option<f64>,
) -> Result<Vec<RiskPremiumReport>> {
    if !(k_call > 1.0 && k_put > 0.0 && k_put < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need k_call > 1 and 0 < k_put < 1, got {k_call}, {k_put}"
        )));
    }
    let s = sample_pair(p, q, &[k_call, k_put, 1.0], eps)?;
    Ok(vec![
        call_report(&s.ps[0], &s.qs[0], k_call, s.horizon, s.r, s.eps[0])?,
        put_report(&s.ps[1], &s.qs[1], k_put, s.horizon, s.r, s.eps[1])?,
        straddle_report(&s.ps[2], &s.qs[2], s.horizon, s.r, s.eps[2])?,
    ])
}

// ---------------------------------------------------------------------------
// Squared log contract

/// `omega(k) = 2 (1 - ln k) / k^2`, the replication weight of `(ln G)^2`.
pub fn omega(k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("omega needs k > 0, got {k}")));
    }
    Ok(2.0 * (1.0 - k.ln()) / (k * k))
}

/// Antiderivative `Omega(k) = 2 ln k / k` with `Omega(1) = 0`.
pub fn omega_antiderivative(k: f64) -> f64 {
    2.0 * k.ln() / k
}

/// Closed-form static replication of `(ln x)^2` by OTM ramps with strikes
/// restricted to `[k_min, k_max]`.
pub fn truncated_replication(x: f64, k_min: f64, k_max: f64) -> f64 {
    let m = x.clamp(k_min, k_max);
    let lm = m.ln();
    x * omega_antiderivative(m) - 2.0 * lm + lm * lm
}

/// Trapezoidal quadrature over `k_grid` of `omega(k)` times the OTM ramp at
/// `x` (put ramps below 1, call ramps above). The grid must contain 1.
pub fn omega_replication(x: f64, k_grid: &[f64]) -> Result<f64> {
    check_grid(k_grid)?;
    let ramp = |k: f64, upper: bool| if upper { (x - k).max(0.0) } else { (k - x).max(0.0) };
    let mut acc = 0.0;
    for w in k_grid.windows(2) {
        let upper = w[0] >= 1.0;
        acc += 0.5 * (w[1] - w[0]) * (omega(w[0])? * ramp(w[0], upper) + omega(w[1])? * ramp(w[1], upper));
    }
    Ok(acc)
}

fn check_grid(k_grid: &[f64]) -> Result<()> {
    if k_grid.len() < 3 || k_grid.windows(2).any(|w| !(w[1] > w[0])) || k_grid[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "kGrid must be positive and strictly increasing".into(),
        ));
    }
    if !(k_grid[0] < 1.0 && *k_grid.last().expect("non-empty") > 1.0) {
        return Err(Error::InvalidArgument("kGrid must bracket 1".into()));
    }
    if !k_grid.contains(&1.0) {
        return Err(Error::InvalidArgument("kGrid must contain 1 as a node".into()));
    }
    Ok(())
}

/// `n` log-uniform points on `[lo, hi]` with 1 inserted if absent.
pub fn log_uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    for x in g.iter_mut() {
        if (*x - 1.0).abs() < 1e-12 {
            *x = 1.0;
        }
    }
    if !g.contains(&1.0) {
        g.push(1.0);
        g.sort_by(f64::total_cmp);
    }
    g
}

/// Default strike grid: 81 log-uniform points on `[0.5, 2]`.
pub fn default_k_grid() -> Vec<f64> {
    log_uniform_grid(0.5, 2.0, 81)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VolUncertaintyDecomposition {
    pub k_grid: Vec<f64>,
    /// `E^P (ln G_T)^2 - E^Q (ln G_T)^2`.
    pub direct: Estimate,
    /// Trapezoid over the grid of `omega(k)` times the local-time RP.
    pub local_time_part: Estimate,
    /// Same for the crossing RP.
    pub crossing_part: Estimate,
    pub dark_matter_part: Estimate,
    /// `E^P int H(G-) dG` with `H(G) = Omega(clamp(G, kMin, kMax))`: minus the
    /// expected gain of the strategy holding `-2 ln G / G` (truncated).
    pub strategy_gain: Estimate,
    /// `E^P T(G_T) - E^Q T(G_T)` with `T = (ln x)^2 - truncated replication`.
    pub truncation_defect: Estimate,
    /// `dark_matter_part + strategy_gain + truncation_defect`.
    pub rhs: Estimate,
    /// `direct - rhs`.
    pub identity_gap: Estimate,
    pub dark_matter_rp_by_k: Vec<Estimate>,
}

struct LogSample {
    ln2: f64,
    trunc: f64,
    gain: f64,
    lt: f64,
    cross: f64,
}

fn log_sample(
    path: &SimulatedPath,
    k_grid: &[f64],
    om: &[f64],
    eps: &[f64],
    per_k: &mut Vec<f64>,
) -> Result<LogSample> {
    let (k_min, k_max) = (k_grid[0], k_grid[k_grid.len() - 1]);
    let gt = path.terminal();
    let l = gt.ln();
    let h = |g: f64| omega_antiderivative(g.clamp(k_min, k_max));
    let mut gain = 0.0;
    for i in 0..path.n_steps() {
        let (g0, pre, g1) = (path.g[i], path.g_pre[i + 1], path.g[i + 1]);
        gain += h(g0) * (pre - g0) + h(pre) * (g1 - pre);
    }
    let mut lt_k = Vec::with_capacity(k_grid.len());
    let mut cross_lo = Vec::with_capacity(k_grid.len());
    let mut cross_hi = Vec::with_capacity(k_grid.len());
    for (j, &k) in k_grid.iter().enumerate() {
        let x = crossing_terms(path, k)?;
        lt_k.push(local_time_band(path, k, eps[j])?);
        cross_lo.push(x.c + x.d);
        cross_hi.push(x.a + x.b);
    }
    let (mut lt, mut cross) = (0.0, 0.0);
    per_k.clear();
    per_k.resize(k_grid.len(), 0.0);
    for j in 0..k_grid.len() - 1 {
        let w = 0.5 * (k_grid[j + 1] - k_grid[j]);
        let c = if k_grid[j] >= 1.0 { &cross_hi } else { &cross_lo };
        lt += w * (om[j] * lt_k[j] + om[j + 1] * lt_k[j + 1]);
        cross += w * (om[j] * c[j] + om[j + 1] * c[j + 1]);
    }
    for j in 0..k_grid.len() {
        let c = if k_grid[j] >= 1.0 { cross_hi[j] } else { cross_lo[j] };
        per_k[j] = lt_k[j] + c;
    }
    Ok(LogSample {
        ln2: l * l,
        trunc: l * l - truncated_replication(gt, k_min, k_max),
        gain,
        lt,
        cross,
    })
}

/// Squared-log-contract risk premium: direct estimate against the
/// omega-weighted dark-matter RPs plus strategy gains plus truncation defect.
pub fn vol_uncertainty_rp(
    p: &impl PathSource,
    q: &impl PathSource,
    k_grid: &[f64],
    eps: Option<f64>,
) -> Result<VolUncertaintyDecomposition> {
    check_pair(p, q)?;
    check_grid(k_grid)?;
    let om = k_grid.iter().map(|&k| omega(k)).collect::<Result<Vec<_>>>()?;
    let eps = k_grid
        .iter()
        .map(|&k| resolve_eps(q, k, eps))
        .collect::<Result<Vec<_>>>()?;
    let collect = |s: &dyn SampleSource| {
        let rows = s.samples(k_grid, &om, &eps)?;
        let mut by_k = vec![Vec::with_capacity(rows.len()); k_grid.len()];
        let mut out = Vec::with_capacity(rows.len());
        for (ls, per_k) in rows {
            for (j, v) in per_k.into_iter().enumerate() {
                by_k[j].push(v);
            }
            out.push(ls);
        }
        Ok::<_, Error>((out, by_k))
    };
    let (ps, pk) = collect(&Src(p))?;
    let (qs, qk) = collect(&Src(q))?;
    let e = |xs: &[LogSample], f: fn(&LogSample) -> f64| Estimate::from_samples(&xs.iter().map(f).collect::<Vec<_>>());
    let direct = e(&ps, |s| s.ln2).minus(&e(&qs, |s| s.ln2));
    let local_time_part = e(&ps, |s| s.lt).minus(&e(&qs, |s| s.lt));
    let crossing_part = e(&ps, |s| s.cross).minus(&e(&qs, |s| s.cross));
    let dark_matter_part = e(&ps, |s| s.lt + s.cross).minus(&e(&qs, |s| s.lt + s.cross));
    let strategy_gain = e(&ps, |s| s.gain);
    let truncation_defect = e(&ps, |s| s.trunc).minus(&e(&qs, |s| s.trunc));
    let rhs_p = e(&ps, |s| s.lt + s.cross + s.gain + s.trunc);
    let rhs_q = e(&qs, |s| s.lt + s.cross + s.trunc);
    let rhs = rhs_p.minus(&rhs_q);
    let identity_gap =
        e(&ps, |s| s.ln2 - (s.lt + s.cross + s.gain + s.trunc)).minus(&e(&qs, |s| s.ln2 - (s.lt + s.cross + s.trunc)));
    let dark_matter_rp_by_k = pk
        .iter()
        .zip(&qk)
        .map(|(a, b)| Estimate::from_samples(a).minus(&Estimate::from_samples(b)))
        .collect();
    Ok(VolUncertaintyDecomposition {
        k_grid: k_grid.to_vec(),
        direct,
        local_time_part,
        crossing_part,
        dark_matter_part,
        strategy_gain,
        truncation_defect,
        rhs,
        identity_gap,
        dark_matter_rp_by_k,
    })
}

trait SampleSource {
    fn samples(&self, k_grid: &[f64], om: &[f64], eps: &[f64]) -> Result<Vec<(LogSample, Vec<f64>)>>;
}

struct Src<'a, S>(&'a S);

impl<S: PathSource> SampleSource for Src<'_, S> {
    fn samples(&self, k_grid: &[f64], om: &[f64], eps: &[f64]) -> Result<Vec<(LogSample, Vec<f64>)>> {
        self.0
            .map_paths(|path| {
                let mut per_k = Vec::new();
                log_sample(path, k_grid, om, eps, &mut per_k).map(|s| (s, per_k))
            })?
            .into_iter()
            .collect()
    }
}

// ---------------------------------------------------------------------------
// JSON report

/// SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(serde_json::to_vec(cfg).expect("RunConfig serializes"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PremiaRun {
    pub config_hash: String,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub common_random_numbers: bool,
    pub reports: Vec<RiskPremiumReport>,
}

impl PremiaRun {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
