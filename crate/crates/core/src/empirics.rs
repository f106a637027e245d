//! Expiration-cycle option excess returns, state variables, tercile-partitioned
//! means with Newey-West standard errors, and bootstrap confidence intervals.
//!
//! The pipeline is `build_cycles -> excess_returns -> state_variables ->
//! assign_partitions -> partitioned_means / bootstrap_ci`. [`run_pipeline`]
//! chains all of it from an [`EmpiricsConfig`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closedform::{bs_price, implied_vol, norm_cdf, BsInputs, BsStyle};
use crate::error::{Error, Result};
use crate::model::Side;
use crate::rng::{replicate_stream, substream};
use crate::stats::pairwise_sum;

pub type DailySeries = BTreeMap<NaiveDate, f64>;

pub const QUADRATIC_VARIATION: &str = "quadraticVariation";
pub const RISK_REVERSAL: &str = "riskReversal";
pub const CHANGE_IN_VOLATILITY: &str = "changeInVolatility";
pub const RECENT_MARKET: &str = "recentMarket";

// ---------------------------------------------------------------------------
// Records

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionChainRecord {
    pub obs_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub strike: f64,
    pub side: Side,
    pub bid: f64,
    pub ask: f64,
    pub underlying: f64,
    pub rate: f64,
}

impl OptionChainRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return bad("strike must be positive");
        }
        if !(self.bid >= 0.0) {
            return bad("bid must be nonnegative");
        }
        if !(self.ask >= self.bid && self.ask.is_finite()) {
            return bad("ask must be at least bid");
        }
        if !(self.underlying > 0.0 && self.underlying.is_finite()) {
            return bad("underlying must be positive");
        }
        if !self.rate.is_finite() {
            return bad("rate must be finite");
        }
        if self.expiry_date < self.obs_date {
            return bad("expiry_date precedes obs_date");
        }
        Ok(())
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// Reads a headered chain CSV, validating every row.
pub fn read_chains<R: Read>(reader: R) -> Result<Vec<OptionChainRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<OptionChainRecord>().enumerate() {
        let rec = row?;
        rec.validate()
            .map_err(|e| Error::InvalidArgument(format!("chain row {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_chains<W: Write>(writer: W, chains: &[OptionChainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for rec in chains {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize, Serialize)]
struct SeriesRow {
    date: NaiveDate,
    value: f64,
}

/// Reads a headered `date,value` CSV. Later duplicates overwrite earlier ones.
pub fn read_series<R: Read>(reader: R) -> Result<DailySeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = DailySeries::new();
    for row in rdr.deserialize::<SeriesRow>() {
        let row = row?;
        out.insert(row.date, row.value);
    }
    Ok(out)
}

pub fn write_series<W: Write>(writer: W, series: &DailySeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (&date, &value) in series {
        w.serialize(SeriesRow { date, value })?;
    }
    w.flush()?;
    Ok(())
}

/// Underlying level per observation date, from the first record on that date.
pub fn underlying_from_chains(chains: &[OptionChainRecord]) -> DailySeries {
    let mut out = DailySeries::new();
    for rec in chains {
        out.entry(rec.obs_date).or_insert(rec.underlying);
    }
    out
}

// ---------------------------------------------------------------------------
// Instruments and cycle specification

/// Table column. Percentages are log-moneyness in percent OTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Instrument {
    Put(u8),
    Call(u8),
    Straddle,
    CrashNeutral,
}

impl Instrument {
    pub fn label(&self) -> String {
        match self {
            Instrument::Put(p) => format!("put_-{p}"),
            Instrument::Call(p) => format!("call_{p}"),
            Instrument::Straddle => "straddle_atm".into(),
            Instrument::CrashNeutral => "straddle_cn".into(),
        }
    }

    pub fn default_set() -> Vec<Instrument> {
        vec![
            Instrument::Put(3),
            Instrument::Put(2),
            Instrument::Put(1),
            Instrument::Call(1),
            Instrument::Call(2),
            Instrument::Call(3),
            Instrument::Straddle,
            Instrument::CrashNeutral,
        ]
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let pct = |t: &str| {
            t.parse::<u8>()
                .ok()
                .filter(|&p| p > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown instrument {s:?}")))
        };
        match s {
            "straddle_atm" => Ok(Instrument::Straddle),
            "straddle_cn" => Ok(Instrument::CrashNeutral),
            _ => {
                if let Some(t) = s.strip_prefix("put_-") {
                    pct(t).map(Instrument::Put)
                } else if let Some(t) = s.strip_prefix("call_") {
                    pct(t).map(Instrument::Call)
                } else {
                    Err(Error::InvalidArgument(format!("unknown instrument {s:?}")))
                }
            }
        }
    }
}

impl TryFrom<String> for Instrument {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Instrument> for String {
    fn from(i: Instrument) -> String {
        i.label()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum CycleRule {
    /// Listed `(start, end)` pairs; overlap beyond the allowance is an error.
    #[serde(rename_all = "camelCase")]
    Explicit { cycles: Vec<(NaiveDate, NaiveDate)> },
    /// One cycle per listed expiry, starting on the quote date nearest to
    /// `days` before it. Cycles overlapping an earlier one are skipped.
    #[serde(rename_all = "camelCase")]
    Maturity {
        days: i64,
        tolerance_days: i64,
        start_weekday: Option<Weekday>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CycleSpec {
    pub rule: CycleRule,
    pub instruments: Vec<Instrument>,
    /// Short-put leg of the crash-neutral straddle at `k = e^{-x}`.
    pub crash_put_log_moneyness: f64,
    /// Risk-reversal IVs at `k = e^{-x}` (put) and `e^{x}` (call).
    pub risk_reversal_log_moneyness: f64,
    /// Days by which a cycle may start before the previous one ends.
    pub max_overlap_days: i64,
    /// Largest accepted `|K/S - k|`; `None` accepts the nearest strike.
    pub strike_tolerance: Option<f64>,
}

impl Default for CycleSpec {
    fn default() -> Self {
        CycleSpec::weekly()
    }
}

impl CycleSpec {
    fn preset(days: i64, crash: f64, rr: f64) -> Self {
        CycleSpec {
            rule: CycleRule::Maturity {
                days,
                tolerance_days: 2,
                start_weekday: None,
            },
            instruments: Instrument::default_set(),
            crash_put_log_moneyness: crash,
            risk_reversal_log_moneyness: rr,
            max_overlap_days: 1,
            strike_tolerance: None,
        }
    }

    pub fn weekly() -> Self {
        CycleSpec::preset(8, 0.03, 0.02)
    }

    pub fn monthly() -> Self {
        CycleSpec::preset(28, 0.05, 0.03)
    }

    pub fn quarterly() -> Self {
        CycleSpec::preset(88, 0.12, 0.03)
    }

    pub fn explicit(cycles: Vec<(NaiveDate, NaiveDate)>) -> Self {
        CycleSpec {
            rule: CycleRule::Explicit { cycles },
            ..CycleSpec::weekly()
        }
    }

    /// Quote label and target moneyness for every quote the spec needs.
    fn quote_targets(&self) -> Vec<(String, Side, f64)> {
        let mut out = Vec::new();
        for inst in &self.instruments {
            match *inst {
                Instrument::Put(p) => out.push((inst.label(), Side::Put, (-(p as f64) / 100.0).exp())),
                Instrument::Call(p) => out.push((inst.label(), Side::Call, (p as f64 / 100.0).exp())),
                Instrument::Straddle => {}
                Instrument::CrashNeutral => {
                    out.push((CRASH_PUT.into(), Side::Put, (-self.crash_put_log_moneyness).exp()))
                }
            }
        }
        let rr = self.risk_reversal_log_moneyness;
        out.push((RR_PUT.into(), Side::Put, (-rr).exp()));
        out.push((RR_CALL.into(), Side::Call, rr.exp()));
        out
    }
}

pub const ATM_CALL: &str = "atm_call";
pub const ATM_PUT: &str = "atm_put";
pub const CRASH_PUT: &str = "crash_put";
pub const RR_PUT: &str = "rr_put";
pub const RR_CALL: &str = "rr_call";

// ---------------------------------------------------------------------------
// Panel

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Quote {
    pub side: Side,
    pub target_k: f64,
    pub strike: f64,
    pub actual_k: f64,
    pub bid: f64,
    pub ask: f64,
    pub rate: f64,
}

impl Quote {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }

    fn payoff(&self, s_end: f64) -> f64 {
        match self.side {
            Side::Call => (s_end - self.strike).max(0.0),
            Side::Put => (self.strike - s_end).max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Cycle {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub s_start: f64,
    pub s_end: Option<f64>,
    pub rate: f64,
    /// Actual/365 year fraction.
    pub tau: f64,
    pub quotes: BTreeMap<String, Quote>,
    /// Every instrument label is present; `None` marks a logged exclusion.
    pub returns: BTreeMap<String, Option<f64>>,
    pub iv_atm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Bad,
    Normal,
    Good,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Bad, Regime::Normal, Regime::Good];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Bad => "bad",
            Regime::Normal => "normal",
            Regime::Good => "good",
        }
    }
}

/// Which tercile of a state variable is the bad state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
}

impl Direction {
    pub fn for_state(name: &str) -> Direction {
        match name {
            QUADRATIC_VARIATION | RISK_REVERSAL | CHANGE_IN_VOLATILITY => Direction::High,
            _ => Direction::Low,
        }
    }

    fn regime(&self, tercile: usize) -> Regime {
        match (self, tercile) {
            (_, 1) => Regime::Normal,
            (Direction::High, 2) | (Direction::Low, 0) => Regime::Bad,
            _ => Regime::Good,
        }
    }

    /// Row label (H/M/L) of a regime.
    pub fn tercile_label(&self, regime: Regime) -> &'static str {
        match (self, regime) {
            (_, Regime::Normal) => "M",
            (Direction::High, Regime::Bad) | (Direction::Low, Regime::Good) => "H",
            _ => "L",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Selection {
    pub start: NaiveDate,
    pub label: String,
    pub target_k: f64,
    pub strike: f64,
    pub actual_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Exclusion {
    pub start: Option<NaiveDate>,
    pub item: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LagChoice {
    pub state: String,
    pub instrument: String,
    pub lag: usize,
    pub automatic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BootstrapRecord {
    pub series: String,
    pub method: BootstrapMethod,
    pub seed: u64,
    pub n_boot: usize,
    pub block: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Audit {
    pub selections: Vec<Selection>,
    pub exclusions: Vec<Exclusion>,
    pub warnings: Vec<String>,
    pub lags: Vec<LagChoice>,
    pub bootstraps: Vec<BootstrapRecord>,
}

impl Audit {
    fn exclude(&mut self, start: Option<NaiveDate>, item: impl Into<String>, reason: impl Into<String>) {
        let e = Exclusion {
            start,
            item: item.into(),
            reason: reason.into(),
        };
        log::info!("excluded {} at {:?}: {}", e.item, e.start, e.reason);
        self.exclusions.push(e);
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CyclePanel {
    pub instruments: Vec<Instrument>,
    pub cycles: Vec<Cycle>,
    /// Per-cycle state values, aligned with `cycles`.
    pub states: BTreeMap<String, Vec<Option<f64>>>,
    pub partition: BTreeMap<String, Vec<Option<Regime>>>,
    pub audit: Audit,
}

impl CyclePanel {
    pub fn returns(&self, label: &str) -> Vec<Option<f64>> {
        self.cycles
            .iter()
            .map(|c| c.returns.get(label).copied().flatten())
            .collect()
    }

    pub fn write_audit<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.audit)?;
        Ok(())
    }

    /// One row per cycle: dates, levels, returns, states.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let labels: Vec<String> = self.instruments.iter().map(|i| i.label()).collect();
        let mut header: Vec<String> = ["start", "end", "sStart", "sEnd", "rate", "tau"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(labels.iter().cloned());
        header.extend(self.states.keys().cloned());
        w.write_record(&header)?;
        for (i, c) in self.cycles.iter().enumerate() {
            let mut row = vec![
                c.start.to_string(),
                c.end.to_string(),
                c.s_start.to_string(),
                opt(c.s_end),
                c.rate.to_string(),
                c.tau.to_string(),
            ];
            row.extend(labels.iter().map(|l| opt(c.returns.get(l).copied().flatten())));
            row.extend(self.states.values().map(|v| opt(v[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// buildCycles

fn check_cycle_order(cycles: &[(NaiveDate, NaiveDate)], max_overlap_days: i64) -> Result<()> {
    for (i, &(s, e)) in cycles.iter().enumerate() {
        if e <= s {
            return Err(Error::InvalidArgument(format!(
                "cycle {i} ends on or before its start ({s} to {e})"
            )));
        }
        if i > 0 {
            let (ps, pe) = cycles[i - 1];
            if s <= ps || e <= pe {
                return Err(Error::InvalidArgument(format!(
                    "cycle {i} is not ordered after cycle {}",
                    i - 1
                )));
            }
            if (pe - s).num_days() > max_overlap_days {
                return Err(Error::InvalidArgument(format!(
                    "cycles {} and {i} overlap ({ps}..{pe} and {s}..{e})",
                    i - 1
                )));
            }
        }
    }
    Ok(())
}

/// Record with strike nearest `target`; ties go to the lower strike, then to
/// the earlier record.
fn nearest<'a>(cands: impl Iterator<Item = &'a OptionChainRecord>, target: f64) -> Option<&'a OptionChainRecord> {
    let mut best: Option<&OptionChainRecord> = None;
    for r in cands {
        best = match best {
            None => Some(r),
            Some(b) => {
                let (db, dr) = ((b.strike - target).abs(), (r.strike - target).abs());
                if dr < db || (dr == db && r.strike < b.strike) {
                    Some(r)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

fn to_quote(r: &OptionChainRecord, target_k: f64, s: f64) -> Quote {
    Quote {
        side: r.side,
        target_k,
        strike: r.strike,
        actual_k: r.strike / s,
        bid: r.bid,
        ask: r.ask,
        rate: r.rate,
    }
}

fn resolve_cycles(
    by_key: &BTreeMap<(NaiveDate, NaiveDate), Vec<&OptionChainRecord>>,
    spec: &CycleSpec,
    audit: &mut Audit,
) -> Result<Vec<(NaiveDate, NaiveDate)>> {
    match &spec.rule {
        CycleRule::Explicit { cycles } => {
            check_cycle_order(cycles, spec.max_overlap_days)?;
            Ok(cycles.clone())
        }
        CycleRule::Maturity {
            days,
            tolerance_days,
            start_weekday,
        } => {
            if *days < 1 || *tolerance_days < 0 {
                return Err(Error::InvalidArgument(
                    "maturity days must be >= 1 and tolerance >= 0".into(),
                ));
            }
            let expiries: BTreeSet<NaiveDate> = by_key.keys().map(|&(_, e)| e).collect();
            let mut out: Vec<(NaiveDate, NaiveDate)> = Vec::new();
            for expiry in expiries {
                let target = expiry - Duration::days(*days);
                let lo = target - Duration::days(*tolerance_days);
                let hi = target + Duration::days(*tolerance_days);
                let start = by_key
                    .range((lo, expiry)..=(hi, expiry))
                    .map(|(&(o, e), _)| (o, e))
                    .filter(|&(o, e)| e == expiry && o < expiry)
                    .filter(|&(o, _)| start_weekday.is_none_or(|w| o.weekday() == w))
                    .min_by_key(|&(o, _)| ((o - target).num_days().abs(), o))
                    .map(|(o, _)| o);
                let Some(start) = start else { continue };
                if let Some(&(ps, pe)) = out.last() {
                    if start <= ps || (pe - start).num_days() > spec.max_overlap_days {
                        audit.exclude(Some(start), format!("cycle to {expiry}"), "overlaps the previous cycle");
                        continue;
                    }
                }
                out.push((start, expiry));
            }
            Ok(out)
        }
    }
}

/// Pairs cycle-start quotes with the settlement level and selects the quote
/// nearest each target moneyness. `daily` overrides levels taken from the chain.
pub fn build_cycles(chains: &[OptionChainRecord], daily: Option<&DailySeries>, spec: &CycleSpec) -> Result<CyclePanel> {
    for (i, r) in chains.iter().enumerate() {
        r.validate()
            .map_err(|e| Error::InvalidArgument(format!("chain record {i}: {e}")))?;
    }
    if spec.instruments.is_empty() {
        return Err(Error::InvalidArgument("no instruments requested".into()));
    }
    let mut levels = underlying_from_chains(chains);
    if let Some(d) = daily {
        levels.extend(d.iter().map(|(&k, &v)| (k, v)));
    }
    let mut by_key: BTreeMap<(NaiveDate, NaiveDate), Vec<&OptionChainRecord>> = BTreeMap::new();
    for r in chains {
        by_key.entry((r.obs_date, r.expiry_date)).or_default().push(r);
    }

    let mut audit = Audit::default();
    let dates = resolve_cycles(&by_key, spec, &mut audit)?;
    let targets = spec.quote_targets();
    let labels: Vec<String> = spec.instruments.iter().map(|i| i.label()).collect();
    let mut cycles = Vec::with_capacity(dates.len());

    for (start, end) in dates {
        let recs: &[&OptionChainRecord] = by_key.get(&(start, end)).map(|v| v.as_slice()).unwrap_or(&[]);
        let s_start = match recs
            .first()
            .map(|r| r.underlying)
            .or_else(|| levels.get(&start).copied())
        {
            Some(s) => s,
            None => {
                audit.exclude(
                    Some(start),
                    format!("cycle to {end}"),
                    "no quotes and no underlying level at start",
                );
                continue;
            }
        };
        if recs.is_empty() {
            audit.exclude(
                Some(start),
                format!("cycle to {end}"),
                "no quotes for this expiry at start",
            );
        }
        let s_end = levels.get(&end).copied();
        if s_end.is_none() {
            audit.exclude(Some(start), format!("cycle to {end}"), "no settlement level at expiry");
        }
        let mut quotes = BTreeMap::new();
        let within = |r: &OptionChainRecord, k: f64| {
            spec.strike_tolerance
                .is_none_or(|t| (r.strike / s_start - k).abs() <= t)
        };

        for (label, side, k) in &targets {
            match nearest(recs.iter().copied().filter(|r| r.side == *side), k * s_start) {
                Some(r) if within(r, *k) => {
                    quotes.insert(label.clone(), to_quote(r, *k, s_start));
                }
                Some(r) => audit.exclude(
                    Some(start),
                    label.clone(),
                    format!("nearest strike {} outside tolerance of k = {k}", r.strike),
                ),
                None => audit.exclude(Some(start), label.clone(), format!("no {side} quotes")),
            }
        }

        // ATM: nearest strike quoted on both sides.
        let calls: BTreeMap<u64, &OptionChainRecord> = recs
            .iter()
            .filter(|r| r.side == Side::Call)
            .rev()
            .map(|r| (r.strike.to_bits(), *r))
            .collect();
        let atm = nearest(
            recs.iter()
                .copied()
                .filter(|r| r.side == Side::Put && calls.contains_key(&r.strike.to_bits())),
            s_start,
        );
        match atm {
            Some(p) if within(p, 1.0) => {
                let c = calls[&p.strike.to_bits()];
                quotes.insert(ATM_CALL.into(), to_quote(c, 1.0, s_start));
                quotes.insert(ATM_PUT.into(), to_quote(p, 1.0, s_start));
            }
            _ => audit.exclude(Some(start), "atm", "no strike quoted on both sides near the money"),
        }

        for (label, q) in &quotes {
            audit.selections.push(Selection {
                start,
                label: label.clone(),
                target_k: q.target_k,
                strike: q.strike,
                actual_k: q.actual_k,
            });
        }
        let rate = quotes
            .get(ATM_CALL)
            .map(|q| q.rate)
            .or_else(|| recs.first().map(|r| r.rate))
            .unwrap_or(0.0);
        cycles.push(Cycle {
            start,
            end,
            s_start,
            s_end,
            rate,
            tau: (end - start).num_days() as f64 / 365.0,
            quotes,
            returns: labels.iter().map(|l| (l.clone(), None)).collect(),
            iv_atm: None,
        });
    }

    Ok(CyclePanel {
        instruments: spec.instruments.clone(),
        cycles,
        states: BTreeMap::new(),
        partition: BTreeMap::new(),
        audit,
    })
}

// ---------------------------------------------------------------------------
// excessReturns

/// Short-put margin: `premium + max(otm_fraction * S - (S - K), strike_fraction * K)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CollateralRule {
    pub otm_fraction: f64,
    pub strike_fraction: f64,
}

impl Default for CollateralRule {
    fn default() -> Self {
        CollateralRule {
            otm_fraction: 0.15,
            strike_fraction: 0.10,
        }
    }
}

impl CollateralRule {
    pub fn collateral(&self, premium: f64, s: f64, strike: f64) -> f64 {
        premium + (self.otm_fraction * s - (s - strike).max(0.0)).max(self.strike_fraction * strike)
    }
}

fn instrument_return(
    c: &Cycle,
    inst: Instrument,
    s_end: f64,
    rule: &CollateralRule,
) -> std::result::Result<f64, String> {
    let get = |l: &str| c.quotes.get(l).ok_or_else(|| format!("no {l} quote"));
    let growth = (c.rate * c.tau).exp();
    let priced = |cost: f64| {
        if cost > 0.0 {
            Ok(())
        } else {
            Err(format!("nonpositive ask {cost}"))
        }
    };
    match inst {
        Instrument::Put(_) | Instrument::Call(_) => {
            let q = get(&inst.label())?;
            priced(q.ask)?;
            Ok(q.payoff(s_end) / q.ask - growth)
        }
        Instrument::Straddle | Instrument::CrashNeutral => {
            let (call, put) = (get(ATM_CALL)?, get(ATM_PUT)?);
            priced(call.ask)?;
            priced(put.ask)?;
            let mut value = call.payoff(s_end) + put.payoff(s_end);
            let mut cost = call.ask + put.ask;
            if inst == Instrument::CrashNeutral {
                let short = get(CRASH_PUT)?;
                priced(short.ask)?;
                let margin = rule.collateral(short.ask, c.s_start, short.strike);
                value += margin - short.payoff(s_end);
                cost += margin - short.ask;
            }
            Ok(value / cost - growth)
        }
    }
}

/// Fills `q = payoff / ask - e^{r tau}` per instrument. The crash-neutral
/// straddle adds a short put financed by posted collateral.
pub fn excess_returns(panel: &mut CyclePanel, rule: &CollateralRule) {
    let CyclePanel {
        instruments,
        cycles,
        audit,
        ..
    } = panel;
    for c in cycles.iter_mut() {
        for inst in instruments.iter() {
            let label = inst.label();
            let q = match c.s_end {
                None => Err("no settlement level".to_string()),
                Some(s_end) => instrument_return(c, *inst, s_end, rule),
            };
            match q {
                Ok(v) => {
                    c.returns.insert(label, Some(v));
                }
                Err(reason) => {
                    audit.exclude(Some(c.start), label.clone(), reason);
                    c.returns.insert(label, None);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// stateVariables

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuoteBasis {
    Bid,
    Mid,
    Ask,
}

impl QuoteBasis {
    fn price(&self, q: &Quote) -> f64 {
        match self {
            QuoteBasis::Bid => q.bid,
            QuoteBasis::Mid => q.mid(),
            QuoteBasis::Ask => q.ask,
        }
    }
}

fn quote_iv(c: &Cycle, label: &str, basis: QuoteBasis) -> std::result::Result<f64, String> {
    let q = c.quotes.get(label).ok_or_else(|| format!("no {label} quote"))?;
    let inp = BsInputs::new(c.s_start, q.strike, 0.0, c.tau, c.rate, BsStyle::Index);
    implied_vol(basis.price(q), &inp, q.side).map_err(|e| format!("{label}: {e}"))
}

/// Squared log returns and log relative over `[start - L, start]`, `L` the
/// cycle length in days.
fn prior_window(c: &Cycle, daily: &DailySeries) -> Option<(f64, f64)> {
    let lo = c.start - (c.end - c.start);
    let pts: Vec<f64> = daily.range(lo..=c.start).map(|(_, &v)| v).collect();
    if pts.len() < 2 || pts.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let sq: Vec<f64> = pts.windows(2).map(|w| (w[1] / w[0]).ln().powi(2)).collect();
    Some((pairwise_sum(&sq), (pts[pts.len() - 1] / pts[0]).ln()))
}

/// Computes the built-in states plus every external series, joined on the
/// latest observation on or before each cycle start.
pub fn state_variables(
    panel: &mut CyclePanel,
    daily: &DailySeries,
    externals: &[(String, DailySeries)],
    basis: QuoteBasis,
) {
    let n = panel.cycles.len();
    let mut qv = vec![None; n];
    let mut rm = vec![None; n];
    let mut rr = vec![None; n];
    let mut cv = vec![None; n];
    let audit = &mut panel.audit;
    for (i, c) in panel.cycles.iter_mut().enumerate() {
        match prior_window(c, daily) {
            Some((q, m)) => {
                qv[i] = Some(q);
                rm[i] = Some(m);
            }
            None => {
                audit.exclude(
                    Some(c.start),
                    QUADRATIC_VARIATION,
                    "fewer than two levels in the prior window",
                );
                audit.exclude(
                    Some(c.start),
                    RECENT_MARKET,
                    "fewer than two levels in the prior window",
                );
            }
        }
        match (quote_iv(c, RR_PUT, basis), quote_iv(c, RR_CALL, basis)) {
            (Ok(p), Ok(k)) => rr[i] = Some((p / k).ln()),
            (Err(e), _) | (_, Err(e)) => audit.exclude(Some(c.start), RISK_REVERSAL, e),
        }
        match (quote_iv(c, ATM_CALL, basis), quote_iv(c, ATM_PUT, basis)) {
            (Ok(a), Ok(b)) => c.iv_atm = Some(0.5 * (a + b)),
            (Err(e), _) | (_, Err(e)) => {
                c.iv_atm = None;
                audit.exclude(Some(c.start), CHANGE_IN_VOLATILITY, e);
            }
        }
    }
    for i in 1..n {
        if let (Some(a), Some(b)) = (panel.cycles[i - 1].iv_atm, panel.cycles[i].iv_atm) {
            cv[i] = Some((b / a).ln());
        }
    }
    panel.states.insert(QUADRATIC_VARIATION.into(), qv);
    panel.states.insert(RECENT_MARKET.into(), rm);
    panel.states.insert(RISK_REVERSAL.into(), rr);
    panel.states.insert(CHANGE_IN_VOLATILITY.into(), cv);
    for (name, series) in externals {
        let vals: Vec<Option<f64>> = panel
            .cycles
            .iter()
            .map(|c| series.range(..=c.start).next_back().map(|(_, &v)| v))
            .collect();
        for (c, v) in panel.cycles.iter().zip(&vals) {
            if v.is_none() {
                panel
                    .audit
                    .exclude(Some(c.start), name.clone(), "no observation on or before start");
            }
        }
        panel.states.insert(name.clone(), vals);
    }
}

// ---------------------------------------------------------------------------
// Terciles and partitioned means

/// Tercile index (0 = lowest) of each value: stable rank `r`, tercile
/// `floor(3 r / n)`. Second element reports whether ties were present.
pub fn terciles(values: &[f64]) -> (Vec<usize>, bool) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let ties = order.windows(2).any(|w| values[w[0]] == values[w[1]]);
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = 3 * rank / n;
    }
    (out, ties)
}

/// Regime per cycle for one state; cycles without the state get `None`.
pub fn partition(values: &[Option<f64>], direction: Direction) -> (Vec<Option<Regime>>, bool) {
    let idx: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let present: Vec<f64> = idx.iter().map(|&i| values[i].unwrap()).collect();
    let (t, ties) = terciles(&present);
    let mut out = vec![None; values.len()];
    for (j, &i) in idx.iter().enumerate() {
        out[i] = Some(direction.regime(t[j]));
    }
    (out, ties)
}

/// Stores the regime series of each listed state.
pub fn assign_partitions(panel: &mut CyclePanel, states: &[(String, Direction)]) -> Result<()> {
    for (name, dir) in states {
        let vals = panel
            .states
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown state {name:?}")))?;
        let (p, ties) = partition(vals, *dir);
        if ties {
            panel
                .audit
                .warn(format!("state {name} has tied values; terciles use stable cycle order"));
        }
        panel.partition.insert(name.clone(), p);
    }
    Ok(())
}

/// `floor(4 (T/100)^{2/9})`.
pub fn automatic_lag(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct HacResult {
    pub cov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub lag: usize,
}

/// Bartlett-kernel HAC sandwich `(X'X)^{-1} S (X'X)^{-1}` for OLS residuals
/// `resid`. No small-sample correction. A lag at or above `T` is capped at `T - 1`.
pub fn newey_west(x: &DMatrix<f64>, resid: &[f64], lag: Option<usize>) -> Result<HacResult> {
    let t = x.nrows();
    if t < 2 {
        return Err(Error::InsufficientData(format!("Newey-West needs T >= 2, got {t}")));
    }
    if resid.len() != t {
        return Err(Error::InvalidArgument(
            "residual length differs from regressor rows".into(),
        ));
    }
    let lag = lag.unwrap_or_else(|| automatic_lag(t)).min(t - 1);
    let k = x.ncols();
    let mut scores = x.clone();
    for (mut row, &e) in scores.row_iter_mut().zip(resid) {
        row *= e;
    }
    let mut s = scores.transpose() * &scores;
    for j in 1..=lag {
        let w = 1.0 - j as f64 / (lag as f64 + 1.0);
        let lead = scores.rows(j, t - j);
        let lagged = scores.rows(0, t - j);
        let gamma = lead.transpose() * lagged;
        s += (&gamma + gamma.transpose()) * w;
    }
    let xtx = x.transpose() * x;
    let bread = xtx
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular regressor matrix".into()))?;
    let cov = &bread * s * &bread;
    let cov = (&cov + cov.transpose()) * 0.5;
    let se = (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(HacResult { cov, se, lag })
}

/// NW standard error of a sample mean.
pub fn newey_west_mean(series: &[f64], lag: Option<usize>) -> Result<(f64, HacResult)> {
    let t = series.len();
    if t < 2 {
        return Err(Error::InsufficientData(format!("Newey-West needs T >= 2, got {t}")));
    }
    let mean = pairwise_sum(series) / t as f64;
    let resid: Vec<f64> = series.iter().map(|y| y - mean).collect();
    let hac = newey_west(&DMatrix::from_element(t, 1, 1.0), &resid, lag)?;
    Ok((mean, hac))
}

fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        f64::NAN
    } else {
        2.0 * norm_cdf(-z.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupMean {
    pub regime: Regime,
    pub mean: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RegressionResult {
    pub state: String,
    pub instrument: String,
    pub direction: Direction,
    pub lag: usize,
    pub n_obs: usize,
    /// Bad, normal, good.
    pub groups: [GroupMean; 3],
}

impl RegressionResult {
    pub fn group(&self, r: Regime) -> &GroupMean {
        &self.groups[r as usize]
    }
}

/// Regresses `y` on the three regime indicators: coefficients are group
/// means, errors are Newey-West on the indicator residuals.
pub fn regime_regression(y: &[f64], regimes: &[Regime], lag: Option<usize>) -> Result<([GroupMean; 3], usize)> {
    let t = y.len();
    let mut rows: [Vec<f64>; 3] = Default::default();
    for (&v, &r) in y.iter().zip(regimes) {
        rows[r as usize].push(v);
    }
    if let Some(r) = Regime::ALL.iter().find(|r| rows[**r as usize].len() < 3) {
        return Err(Error::InsufficientData(format!(
            "{} regime has {} observations, need at least 3",
            r.name(),
            rows[*r as usize].len()
        )));
    }
    let means: Vec<f64> = rows.iter().map(|g| pairwise_sum(g) / g.len() as f64).collect();
    let mut x = DMatrix::zeros(t, 3);
    let mut resid = Vec::with_capacity(t);
    for (i, (&v, &r)) in y.iter().zip(regimes).enumerate() {
        x[(i, r as usize)] = 1.0;
        resid.push(v - means[r as usize]);
    }
    let hac = newey_west(&x, &resid, lag)?;
    let groups = Regime::ALL.map(|r| {
        let i = r as usize;
        let z = means[i] / hac.se[i];
        GroupMean {
            regime: r,
            mean: means[i],
            se: hac.se[i],
            t_stat: z,
            p_value: two_sided_p(z),
            n: rows[i].len(),
        }
    });
    Ok((groups, hac.lag))
}

/// Group means of `instrument` returns across the terciles of `state`.
/// Terciles are taken over every cycle carrying the state.
pub fn partitioned_means(
    panel: &CyclePanel,
    state: &str,
    instrument: &str,
    direction: Direction,
    lag: Option<usize>,
) -> Result<RegressionResult> {
    let vals = panel
        .states
        .get(state)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown state {state:?}")))?;
    let present = vals.iter().filter(|v| v.is_some()).count();
    if present < 9 {
        return Err(Error::InsufficientData(format!(
            "state {state} present on {present} cycles, need at least 9"
        )));
    }
    let (regimes, _) = partition(vals, direction);
    let returns = panel.returns(instrument);
    let (y, r): (Vec<f64>, Vec<Regime>) = returns
        .iter()
        .zip(&regimes)
        .filter_map(|(q, g)| Some(((*q)?, (*g)?)))
        .unzip();
    let (groups, lag_used) = regime_regression(&y, &r, lag)?;
    Ok(RegressionResult {
        state: state.to_string(),
        instrument: instrument.to_string(),
        direction,
        lag: lag_used,
        n_obs: y.len(),
        groups,
    })
}

// ---------------------------------------------------------------------------
// Bootstrap

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMethod {
    Iid,
    Stationary,
    Circular,
}

impl BootstrapMethod {
    pub const ALL: [BootstrapMethod; 3] = [
        BootstrapMethod::Iid,
        BootstrapMethod::Stationary,
        BootstrapMethod::Circular,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BootstrapMethod::Iid => "iid",
            BootstrapMethod::Stationary => "stationary",
            BootstrapMethod::Circular => "circular",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BootstrapResult {
    pub method: BootstrapMethod,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub sample_mean: f64,
    pub replicate_mean: f64,
    pub replicate_sd: f64,
    pub n_boot: usize,
    pub block: f64,
    pub seed: u64,
}

fn resample_indices<R: Rng>(rng: &mut R, t: usize, method: BootstrapMethod, block: f64, out: &mut Vec<usize>) {
    out.clear();
    match method {
        BootstrapMethod::Iid => out.extend((0..t).map(|_| rng.random_range(0..t))),
        BootstrapMethod::Stationary => {
            let p = 1.0 / block;
            let mut i = rng.random_range(0..t);
            out.push(i);
            while out.len() < t {
                // p = 1 draws no Bernoulli variate, so the stream matches iid
                let restart = p >= 1.0 || rng.random::<f64>() < p;
                i = if restart { rng.random_range(0..t) } else { (i + 1) % t };
                out.push(i);
            }
        }
        BootstrapMethod::Circular => {
            let len = (block.round() as usize).clamp(1, t);
            while out.len() < t {
                let s = rng.random_range(0..t);
                out.extend((0..len.min(t - out.len())).map(|j| (s + j) % t));
            }
        }
    }
}

fn check_bootstrap(series: &[f64], method: BootstrapMethod, n_boot: usize, block: f64) -> Result<()> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(
            "bootstrap needs at least 2 observations".into(),
        ));
    }
    if n_boot < 100 {
        return Err(Error::InvalidArgument(format!(
            "nBoot must be at least 100, got {n_boot}"
        )));
    }
    if method != BootstrapMethod::Iid && !(block >= 1.0 && block.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "block parameter must be >= 1, got {block}"
        )));
    }
    Ok(())
}

/// Replicate means; replicate `b` draws from its own `(seed, b)` stream.
pub fn bootstrap_replicates(
    series: &[f64],
    method: BootstrapMethod,
    n_boot: usize,
    block: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    check_bootstrap(series, method, n_boot, block)?;
    let t = series.len();
    Ok((0..n_boot as u64)
        .into_par_iter()
        .map_init(Vec::new, |idx, b| {
            let mut rng = replicate_stream(seed, b);
            resample_indices(&mut rng, t, method, block, idx);
            let draw: Vec<f64> = idx.iter().map(|&i| series[i]).collect();
            pairwise_sum(&draw) / t as f64
        })
        .collect())
}

/// Data-driven block parameter: the flat-top lag-window rule of Politis and
/// White with the Patton-Politis-White correction, clamped to
/// `[1, min(3 sqrt(T), T/3)]`. Returns 1 for the iid method.
pub fn optimal_block(series: &[f64], method: BootstrapMethod) -> f64 {
    let n = series.len();
    if method == BootstrapMethod::Iid || n < 4 {
        return 1.0;
    }
    let mean = pairwise_sum(series) / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let acov = |k: usize| dev[k..].iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let r0 = acov(0);
    if r0 <= 0.0 {
        return 1.0;
    }
    let nf = n as f64;
    let kn = 5usize.max(nf.log10().sqrt().ceil() as usize);
    let m_max = (nf.sqrt().ceil() as usize + kn).min(n - 1);
    let band = 2.0 * (nf.log10() / nf).sqrt();
    let rho: Vec<f64> = (0..=m_max).map(|k| acov(k) / r0).collect();
    // smallest m after which kn consecutive autocorrelations are insignificant
    let m_hat = (0..=m_max)
        .find(|&m| (1..=kn).all(|j| m + j > m_max || rho[m + j].abs() < band))
        .unwrap_or(m_max);
    let big_m = (2 * m_hat).min(m_max);
    let flat_top = |t: f64| {
        let t = t.abs();
        if t <= 0.5 {
            1.0
        } else if t <= 1.0 {
            2.0 * (1.0 - t)
        } else {
            0.0
        }
    };
    let (mut g, mut s0) = (0.0, r0);
    for k in 1..=big_m {
        let w = flat_top(k as f64 / big_m as f64) * acov(k);
        g += 2.0 * k as f64 * w;
        s0 += 2.0 * w;
    }
    let d = match method {
        BootstrapMethod::Circular => 4.0 / 3.0 * s0 * s0,
        _ => 2.0 * s0 * s0,
    };
    let b_max = (3.0 * nf.sqrt()).min(nf / 3.0).ceil();
    if !(d > 0.0) {
        return 1.0;
    }
    ((2.0 * g * g / d).cbrt() * nf.cbrt()).clamp(1.0, b_max.max(1.0))
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval of the bootstrap distribution of the sample mean.
pub fn bootstrap_ci(
    series: &[f64],
    method: BootstrapMethod,
    n_boot: usize,
    level: f64,
    block: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let mut reps = bootstrap_replicates(series, method, n_boot, block, seed)?;
    reps.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    let m = pairwise_sum(&reps) / n_boot as f64;
    let dev: Vec<f64> = reps.iter().map(|r| (r - m) * (r - m)).collect();
    Ok(BootstrapResult {
        method,
        lower: quantile_sorted(&reps, alpha),
        upper: quantile_sorted(&reps, 1.0 - alpha),
        level,
        sample_mean: pairwise_sum(series) / series.len() as f64,
        replicate_mean: m,
        replicate_sd: (pairwise_sum(&dev) / (n_boot as f64 - 1.0)).sqrt(),
        n_boot,
        block,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct BootstrapSpec {
    pub n_boot: usize,
    pub level: f64,
    /// Block parameter; `None` uses [`optimal_block`] of each subsample.
    pub block: Option<f64>,
    pub seed: u64,
    pub methods: Vec<BootstrapMethod>,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            n_boot: 10_000,
            level: 0.95,
            block: None,
            seed: 0,
            methods: BootstrapMethod::ALL.to_vec(),
        }
    }
}

/// Per-state, per-regime group means of every instrument.
pub fn conditional_table(
    panel: &mut CyclePanel,
    states: &[(String, Direction)],
    lag: Option<usize>,
) -> Result<Vec<RegressionResult>> {
    let labels: Vec<String> = panel.instruments.iter().map(|i| i.label()).collect();
    let mut out = Vec::new();
    for (state, dir) in states {
        for label in &labels {
            match partitioned_means(panel, state, label, *dir, lag) {
                Ok(r) => {
                    panel.audit.lags.push(LagChoice {
                        state: state.clone(),
                        instrument: label.clone(),
                        lag: r.lag,
                        automatic: lag.is_none(),
                    });
                    out.push(r);
                }
                Err(e @ Error::InsufficientData(_)) => {
                    panel
                        .audit
                        .warn(format!("no partitioned means for {state} / {label}: {e}"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Unconditional {
    pub mean: f64,
    pub se: f64,
    pub p_value: f64,
    pub sd: f64,
    pub fraction_positive: f64,
    pub n: usize,
    pub lag: usize,
}

/// Full-sample mean with its NW error, standard deviation and hit rate.
pub fn unconditional(series: &[f64], lag: Option<usize>) -> Result<Unconditional> {
    let n = series.len();
    let (mean, hac) = newey_west_mean(series, lag)?;
    let dev: Vec<f64> = series.iter().map(|y| (y - mean) * (y - mean)).collect();
    let se = hac.se[0];
    Ok(Unconditional {
        mean,
        se,
        p_value: two_sided_p(mean / se),
        sd: (pairwise_sum(&dev) / (n as f64 - 1.0)).sqrt(),
        fraction_positive: series.iter().filter(|&&y| y > 0.0).count() as f64 / n as f64,
        n,
        lag: hac.lag,
    })
}

fn present(xs: &[Option<f64>]) -> Vec<f64> {
    xs.iter().filter_map(|x| *x).collect()
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.10}")
    } else {
        String::new()
    }
}

/// Rows `state x regime` plus unconditional rows; per instrument a mean,
/// `_se` and `_p` column.
pub fn write_table_csv<W: Write>(
    writer: W,
    panel: &CyclePanel,
    states: &[(String, Direction)],
    results: &[RegressionResult],
    lag: Option<usize>,
) -> Result<()> {
    let labels: Vec<String> = panel.instruments.iter().map(|i| i.label()).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["state".to_string(), "tercile".into(), "regime".into()];
    for l in &labels {
        header.extend([l.clone(), format!("{l}_se"), format!("{l}_p"), format!("{l}_n")]);
    }
    w.write_record(&header)?;
    for (state, dir) in states {
        for regime in Regime::ALL {
            let mut row = vec![state.clone(), dir.tercile_label(regime).into(), regime.name().into()];
            for l in &labels {
                match results.iter().find(|r| &r.state == state && &r.instrument == l) {
                    Some(r) => {
                        let g = r.group(regime);
                        row.extend([num(g.mean), num(g.se), num(g.p_value), g.n.to_string()]);
                    }
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            w.write_record(&row)?;
        }
    }
    let unc: Vec<Option<Unconditional>> = labels
        .iter()
        .map(|l| unconditional(&present(&panel.returns(l)), lag).ok())
        .collect();
    let rows: [(&str, fn(&Unconditional) -> [String; 4]); 3] = [
        ("average", |u| [num(u.mean), num(u.se), num(u.p_value), u.n.to_string()]),
        ("sd", |u| [num(u.sd), String::new(), String::new(), u.n.to_string()]),
        ("positive", |u| {
            [num(u.fraction_positive), String::new(), String::new(), u.n.to_string()]
        }),
    ];
    for (name, f) in rows {
        let mut row = vec!["unconditional".to_string(), String::new(), name.to_string()];
        for u in &unc {
            match u {
                Some(u) => row.extend(f(u)),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DifferentialRow {
    pub state: String,
    pub regime: Regime,
    pub tercile: String,
    pub differential: String,
    pub mean: f64,
    pub p_value: f64,
    pub n: usize,
    pub intervals: Vec<BootstrapResult>,
}

/// Per-cycle `a - b` where both returns are present.
pub fn differential(panel: &CyclePanel, a: &str, b: &str) -> Vec<Option<f64>> {
    panel
        .returns(a)
        .iter()
        .zip(panel.returns(b))
        .map(|(x, y)| Some((*x)? - y?))
        .collect()
}

/// Regime-conditional return differentials with NW p-values and bootstrap
/// intervals. Every bootstrap call uses `spec.seed`.
pub fn differential_table(
    panel: &mut CyclePanel,
    states: &[(String, Direction)],
    pairs: &[(String, String)],
    lag: Option<usize>,
    spec: &BootstrapSpec,
) -> Result<Vec<DifferentialRow>> {
    let mut out = Vec::new();
    for (a, b) in pairs {
        let diff = differential(panel, a, b);
        let name = format!("{a}-{b}");
        for (state, dir) in states {
            let vals = panel
                .states
                .get(state)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown state {state:?}")))?;
            let (regimes, _) = partition(vals, *dir);
            for regime in Regime::ALL {
                let sub: Vec<f64> = diff
                    .iter()
                    .zip(&regimes)
                    .filter_map(|(d, g)| (*g == Some(regime)).then_some(*d).flatten())
                    .collect();
                if sub.len() < 3 {
                    panel.audit.warn(format!(
                        "{name} under {state}/{}: {} observations",
                        regime.name(),
                        sub.len()
                    ));
                    continue;
                }
                let (mean, hac) = newey_west_mean(&sub, lag)?;
                let mut intervals = Vec::new();
                for &m in &spec.methods {
                    let block = spec.block.unwrap_or_else(|| optimal_block(&sub, m));
                    intervals.push(bootstrap_ci(&sub, m, spec.n_boot, spec.level, block, spec.seed)?);
                    panel.audit.bootstraps.push(BootstrapRecord {
                        series: format!("{name}|{state}|{}", regime.name()),
                        method: m,
                        seed: spec.seed,
                        n_boot: spec.n_boot,
                        block,
                    });
                }
                out.push(DifferentialRow {
                    state: state.clone(),
                    regime,
                    tercile: dir.tercile_label(regime).into(),
                    differential: name.clone(),
                    mean,
                    p_value: two_sided_p(mean / hac.se[0]),
                    n: sub.len(),
                    intervals,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_differential_csv<W: Write>(writer: W, rows: &[DifferentialRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let methods: Vec<BootstrapMethod> = rows
        .first()
        .map(|r| r.intervals.iter().map(|i| i.method).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = ["differential", "state", "tercile", "regime", "n", "mean", "p"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in &methods {
        header.extend([format!("{}_lower", m.name()), format!("{}_upper", m.name())]);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            r.differential.clone(),
            r.state.clone(),
            r.tercile.clone(),
            r.regime.name().into(),
            r.n.to_string(),
            num(r.mean),
            num(r.p_value),
        ];
        for i in &r.intervals {
            row.extend([num(i.lower), num(i.upper)]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateChoice {
    pub name: String,
    #[serde(default)]
    pub direction: Option<Direction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EmpiricsConfig {
    pub cycles: CycleSpec,
    pub collateral: CollateralRule,
    pub iv_quote: QuoteBasis,
    /// Empty means the four built-in states.
    pub states: Vec<StateChoice>,
    pub hac_lag: Option<usize>,
    pub bootstrap: BootstrapSpec,
    pub differentials: Vec<(String, String)>,
}

impl Default for EmpiricsConfig {
    fn default() -> Self {
        EmpiricsConfig {
            cycles: CycleSpec::weekly(),
            collateral: CollateralRule::default(),
            iv_quote: QuoteBasis::Mid,
            states: Vec::new(),
            hac_lag: None,
            bootstrap: BootstrapSpec::default(),
            differentials: vec![("call_3".into(), "call_1".into()), ("call_3".into(), "put_-3".into())],
        }
    }
}

impl EmpiricsConfig {
    pub fn state_list(&self, externals: &[(String, DailySeries)]) -> Vec<(String, Direction)> {
        if self.states.is_empty() {
            let mut v: Vec<String> = externals.iter().map(|(n, _)| n.clone()).collect();
            v.extend([QUADRATIC_VARIATION, RISK_REVERSAL, CHANGE_IN_VOLATILITY, RECENT_MARKET].map(String::from));
            v.into_iter()
                .map(|n| {
                    let d = Direction::for_state(&n);
                    (n, d)
                })
                .collect()
        } else {
            self.states
                .iter()
                .map(|s| {
                    (
                        s.name.clone(),
                        s.direction.unwrap_or_else(|| Direction::for_state(&s.name)),
                    )
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricsOutput {
    pub panel: CyclePanel,
    pub states: Vec<(String, Direction)>,
    pub table: Vec<RegressionResult>,
    pub differentials: Vec<DifferentialRow>,
}

impl EmpiricsOutput {
    pub fn write_table_csv<W: Write>(&self, w: W, lag: Option<usize>) -> Result<()> {
        write_table_csv(w, &self.panel, &self.states, &self.table, lag)
    }
}

/// Runs every stage. `daily` defaults to the levels found in the chain.
pub fn run_pipeline(
    cfg: &EmpiricsConfig,
    chains: &[OptionChainRecord],
    daily: Option<&DailySeries>,
    externals: &[(String, DailySeries)],
) -> Result<EmpiricsOutput> {
    let mut levels = underlying_from_chains(chains);
    if let Some(d) = daily {
        levels.extend(d.iter().map(|(&k, &v)| (k, v)));
    }
    let mut panel = build_cycles(chains, Some(&levels), &cfg.cycles)?;
    excess_returns(&mut panel, &cfg.collateral);
    state_variables(&mut panel, &levels, externals, cfg.iv_quote);
    let states = cfg.state_list(externals);
    assign_partitions(&mut panel, &states)?;
    let table = conditional_table(&mut panel, &states, cfg.hac_lag)?;
    let differentials = if cfg.differentials.is_empty() {
        Vec::new()
    } else {
        differential_table(&mut panel, &states, &cfg.differentials, cfg.hac_lag, &cfg.bootstrap)?
    };
    Ok(EmpiricsOutput {
        panel,
        states,
        table,
        differentials,
    })
}

// ---------------------------------------------------------------------------
// Synthetic panels

/// GBM underlying under P, quotes priced by index-style Black-Scholes at a
/// separate Q volatility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SyntheticPanelSpec {
    pub start: NaiveDate,
    pub n_cycles: usize,
    pub cycle_days: i64,
    pub s0: f64,
    pub mu: f64,
    pub sigma_p: f64,
    pub sigma_q: f64,
    pub rate: f64,
    pub strike_step: f64,
    /// Strikes cover `S (1 +/- strike_span)`.
    pub strike_span: f64,
    /// Relative bid-ask spread around the model price.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticPanelSpec {
    fn default() -> Self {
        SyntheticPanelSpec {
            start: NaiveDate::from_ymd_opt(2011, 1, 13).unwrap(),
            n_cycles: 200,
            cycle_days: 8,
            s0: 1300.0,
            mu: 0.06,
            sigma_p: 0.15,
            sigma_q: 0.20,
            rate: 0.01,
            strike_step: 5.0,
            strike_span: 0.08,
            spread: 0.02,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPanel {
    pub chains: Vec<OptionChainRecord>,
    pub daily: DailySeries,
    pub cycles: Vec<(NaiveDate, NaiveDate)>,
}

/// Daily levels start one cycle before `start` so the first cycle has a
/// prior window.
pub fn synthetic_panel(spec: &SyntheticPanelSpec) -> Result<SyntheticPanel> {
    if !(spec.s0 > 0.0 && spec.sigma_p >= 0.0 && spec.sigma_q > 0.0 && spec.strike_step > 0.0)
        || spec.cycle_days < 1
        || !(spec.spread >= 0.0 && spec.spread < 2.0)
    {
        return Err(Error::InvalidArgument("invalid synthetic panel spec".into()));
    }
    let dt = 1.0 / 365.0;
    let first = spec.start - Duration::days(spec.cycle_days);
    let total_days = spec.cycle_days * (spec.n_cycles as i64 + 1);
    let mut rng = substream(spec.seed, 0);
    let mut daily = DailySeries::new();
    let mut s = spec.s0;
    for d in 0..=total_days {
        daily.insert(first + Duration::days(d), s);
        let z: f64 = rng.sample(StandardNormal);
        s *= ((spec.mu - 0.5 * spec.sigma_p * spec.sigma_p) * dt + spec.sigma_p * dt.sqrt() * z).exp();
    }
    let tau = spec.cycle_days as f64 * dt;
    let mut chains = Vec::new();
    let mut cycles = Vec::with_capacity(spec.n_cycles);
    for i in 0..spec.n_cycles as i64 {
        let start = spec.start + Duration::days(i * spec.cycle_days);
        let end = start + Duration::days(spec.cycle_days);
        cycles.push((start, end));
        let s = daily[&start];
        let lo = (s * (1.0 - spec.strike_span) / spec.strike_step).ceil() as i64;
        let hi = (s * (1.0 + spec.strike_span) / spec.strike_step).floor() as i64;
        for j in lo..=hi {
            let k = j as f64 * spec.strike_step;
            for side in [Side::Put, Side::Call] {
                let inp = BsInputs::new(s, k, spec.sigma_q, tau, spec.rate, BsStyle::Index);
                let p = bs_price(&inp, side)?;
                if p < 1e-4 {
                    continue;
                }
                chains.push(OptionChainRecord {
                    obs_date: start,
                    expiry_date: end,
                    strike: k,
                    side,
                    bid: p * (1.0 - 0.5 * spec.spread),
                    ask: p * (1.0 + 0.5 * spec.spread),
                    underlying: s,
                    rate: spec.rate,
                });
            }
        }
    }
    Ok(SyntheticPanel { chains, daily, cycles })
}
