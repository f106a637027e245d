//! Parameter, state and path types shared by the simulation and analytics code.
//!
//! The futures gross return `G = F_t / F_{t0}` is driven, under the physical
//! measure P, by
//!
//! ```text
//! dF/F-  = (alpha + lambda_vol v + mu_jump) dt + sqrt(v) dz + (e^xs - 1) dN - lambda E(e^xs - 1) dt
//! dv     = (phi - kappa v) dt + sigma_vol sqrt(v) (rho dz + sqrt(1 - rho^2) du) + xv dN
//! dM/M-  = -r dt + eta dz + theta du + (e^xm - 1) dN - lambda E(e^xm - 1) dt
//! eta    = -(alpha + lambda_vol v) / sqrt(v),   theta = -theta_lt sqrt(v)
//! ```
//!
//! Under Q the futures drift is only the jump compensator and the variance
//! drift uses the Q-measure `phi`/`kappa`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::error::{ValidationError, ValidationErrors};

/// Distribution of a price jump `x_s` (and, for [`JumpLaw::Dps`], of the
/// accompanying variance jump `x_v`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum JumpLaw {
    /// `x_s ~ N(mu - sigma^2/2, sigma^2)`, so that `E e^{x_s} = e^mu`.
    Merton { mu: f64, sigma: f64 },
    /// Asymmetric double exponential.
    Kou {
        #[serde(rename = "pPlus")]
        p_plus: f64,
        #[serde(rename = "etaPlus")]
        eta_plus: f64,
        #[serde(rename = "etaMinus")]
        eta_minus: f64,
    },
    /// Exponential variance jump `x_v` with mean `mu_v` and
    /// `x_s | x_v ~ N(beta0 + beta_sv x_v, sigma_sv^2)`.
    Dps {
        beta0: f64,
        #[serde(rename = "betaSV")]
        beta_sv: f64,
        #[serde(rename = "sigmaSV")]
        sigma_sv: f64,
        #[serde(rename = "muV")]
        mu_v: f64,
    },
}

impl JumpLaw {
    pub fn name(&self) -> &'static str {
        match self {
            JumpLaw::Merton { .. } => "merton",
            JumpLaw::Kou { .. } => "kou",
            JumpLaw::Dps { .. } => "dps",
        }
    }

    fn check(&self, path: &str, errs: &mut Vec<ValidationError>) {
        match *self {
            JumpLaw::Merton { mu, sigma } => {
                finite(path, "mu", mu, errs);
                if !(sigma > 0.0 && sigma.is_finite()) {
                    errs.push(ValidationError::new(format!("{path}.sigma"), "sigma must be positive"));
                }
            }
            JumpLaw::Kou {
                p_plus,
                eta_plus,
                eta_minus,
            } => {
                if !(p_plus > 0.0 && p_plus < 1.0) {
                    errs.push(ValidationError::new(format!("{path}.pPlus"), "pPlus must lie in (0,1)"));
                }
                if !(eta_plus > 1.0 && eta_plus.is_finite()) {
                    errs.push(ValidationError::new(format!("{path}.etaPlus"), "etaPlus must exceed 1"));
                }
                if !(eta_minus > 0.0 && eta_minus.is_finite()) {
                    errs.push(ValidationError::new(
                        format!("{path}.etaMinus"),
                        "etaMinus must be positive",
                    ));
                }
            }
            JumpLaw::Dps {
                beta0,
                beta_sv,
                sigma_sv,
                mu_v,
            } => {
                finite(path, "beta0", beta0, errs);
                finite(path, "betaSV", beta_sv, errs);
                if !(sigma_sv > 0.0 && sigma_sv.is_finite()) {
                    errs.push(ValidationError::new(
                        format!("{path}.sigmaSV"),
                        "sigmaSV must be positive",
                    ));
                }
                if !(mu_v > 0.0 && mu_v.is_finite()) {
                    errs.push(ValidationError::new(format!("{path}.muV"), "muV must be positive"));
                }
                if beta_sv * mu_v >= 1.0 {
                    errs.push(ValidationError::new(
                        format!("{path}.betaSV"),
                        "betaSV * muV must be below 1 for a finite mean of e^x",
                    ));
                }
            }
        }
    }
}

/// Per-measure dynamics: jump intensity and law, variance drift, variance jumps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MeasureParams {
    pub lambda_jump: f64,
    pub jump_law: JumpLaw,
    pub phi_vol: f64,
    pub kappa_vol: f64,
    /// Mean of the exponential variance jump for Merton/Kou laws. For the DPS
    /// law the variance jump comes from the law itself; this must then be 0 or
    /// equal to `muV`.
    #[serde(rename = "muVVarJump")]
    pub mu_v_var_jump: f64,
}

impl Default for MeasureParams {
    fn default() -> Self {
        MeasureParams {
            lambda_jump: 0.0,
            jump_law: JumpLaw::Merton { mu: -0.02, sigma: 0.05 },
            phi_vol: 0.08,
            kappa_vol: 2.0,
            mu_v_var_jump: 0.0,
        }
    }
}

impl MeasureParams {
    /// Mean of the variance jump attached to every price jump.
    pub fn variance_jump_mean(&self) -> f64 {
        match self.jump_law {
            JumpLaw::Dps { mu_v, .. } => mu_v,
            _ => self.mu_v_var_jump,
        }
    }

    fn check(&self, path: &str, errs: &mut Vec<ValidationError>) {
        if !(self.lambda_jump >= 0.0 && self.lambda_jump.is_finite()) {
            errs.push(ValidationError::new(
                format!("{path}.lambdaJump"),
                "lambdaJump must be non-negative",
            ));
        }
        self.jump_law.check(&format!("{path}.jumpLaw"), errs);
        if !(self.phi_vol >= 0.0 && self.phi_vol.is_finite()) {
            errs.push(ValidationError::new(
                format!("{path}.phiVol"),
                "phiVol must be non-negative",
            ));
        }
        if !(self.kappa_vol > 0.0 && self.kappa_vol.is_finite()) {
            errs.push(ValidationError::new(
                format!("{path}.kappaVol"),
                "kappaVol must be positive",
            ));
        }
        if !(self.mu_v_var_jump >= 0.0 && self.mu_v_var_jump.is_finite()) {
            errs.push(ValidationError::new(
                format!("{path}.muVVarJump"),
                "muVVarJump must be non-negative",
            ));
        }
        if let JumpLaw::Dps { mu_v, .. } = self.jump_law {
            if self.mu_v_var_jump != 0.0 && self.mu_v_var_jump != mu_v {
                errs.push(ValidationError::new(
                    format!("{path}.muVVarJump"),
                    "muVVarJump conflicts with the DPS law's muV",
                ));
            }
        }
    }
}

/// Full P/Q parameterization plus the pricing-kernel loadings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ModelParams {
    pub p_measure: MeasureParams,
    pub q_measure: MeasureParams,
    pub alpha_vol: f64,
    pub lambda_vol: f64,
    #[serde(rename = "thetaLT")]
    pub theta_lt: f64,
    pub sigma_vol: f64,
    pub rho_vol: f64,
    pub mu_jump: f64,
    /// Law of the kernel jump `x_m`; `None` is the degenerate `x_m = 0`.
    pub kernel_jump_law: Option<JumpLaw>,
    pub r: f64,
    /// Freeze the variance at `v0` (the variance dynamics are ignored).
    pub constant_variance: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            p_measure: MeasureParams::default(),
            q_measure: MeasureParams::default(),
            alpha_vol: 0.0,
            lambda_vol: 0.0,
            theta_lt: 0.0,
            sigma_vol: 0.3,
            rho_vol: -0.7,
            mu_jump: 0.0,
            kernel_jump_law: None,
            r: 0.0,
            constant_variance: false,
        }
    }
}

impl ModelParams {
    /// True iff `theta_lt = 0` and the kernel jump is degenerate at zero.
    pub fn no_unspanned_risks(&self) -> bool {
        self.theta_lt == 0.0 && self.kernel_jump_law.is_none()
    }

    pub fn measure(&self, m: Measure) -> &MeasureParams {
        match m {
            Measure::P => &self.p_measure,
            Measure::Q => &self.q_measure,
        }
    }

    /// Q variance drift implied by the P drift and the kernel loadings:
    /// `phi_q = phi_p - sigma rho alpha`,
    /// `kappa_q = kappa_p + sigma rho lambda_vol + sigma sqrt(1-rho^2) theta_lt`.
    pub fn implied_q_variance_drift(&self) -> (f64, f64) {
        let s = self.sigma_vol;
        let rho = self.rho_vol;
        let phi = self.p_measure.phi_vol - s * rho * self.alpha_vol;
        let kappa = self.p_measure.kappa_vol + s * rho * self.lambda_vol + s * (1.0 - rho * rho).sqrt() * self.theta_lt;
        (phi, kappa)
    }

    /// Jump premium drift that makes the P and Q futures drifts consistent:
    /// `lambda_p (E_p e^xs - 1) - lambda_q (E_q e^xs - 1)`.
    pub fn implied_mu_jump(&self) -> f64 {
        let p = &self.p_measure;
        let q = &self.q_measure;
        p.lambda_jump * (p.jump_law.expected_jump_factor() - 1.0)
            - q.lambda_jump * (q.jump_law.expected_jump_factor() - 1.0)
    }

    /// Copy with the Q variance drift and `mu_jump` replaced by the values the
    /// kernel implies.
    pub fn with_consistent_q(mut self) -> Self {
        let (phi, kappa) = self.implied_q_variance_drift();
        self.q_measure.phi_vol = phi;
        self.q_measure.kappa_vol = kappa;
        self.mu_jump = self.implied_mu_jump();
        self
    }

    /// Compares the configured Q dynamics with those implied by P and the kernel.
    pub fn consistency(&self) -> ConsistencyReport {
        let (phi, kappa) = self.implied_q_variance_drift();
        ConsistencyReport {
            phi_q_gap: self.q_measure.phi_vol - phi,
            kappa_q_gap: self.q_measure.kappa_vol - kappa,
            mu_jump_gap: self.mu_jump - self.implied_mu_jump(),
        }
    }

    fn check(&self, errs: &mut Vec<ValidationError>) {
        self.p_measure.check("params.pMeasure", errs);
        self.q_measure.check("params.qMeasure", errs);
        for (name, v) in [
            ("alphaVol", self.alpha_vol),
            ("lambdaVol", self.lambda_vol),
            ("thetaLT", self.theta_lt),
            ("muJump", self.mu_jump),
            ("r", self.r),
        ] {
            finite("params", name, v, errs);
        }
        if !(self.sigma_vol > 0.0 && self.sigma_vol.is_finite()) {
            errs.push(ValidationError::new("params.sigmaVol", "sigmaVol must be positive"));
        }
        if !(self.rho_vol.abs() <= 1.0) {
            errs.push(ValidationError::new("params.rhoVol", "rhoVol out of [-1,1]"));
        }
        if let Some(law) = &self.kernel_jump_law {
            law.check("params.kernelJumpLaw", errs);
            // the reciprocal kernel needs E e^{-x_m}
            let ok = match *law {
                JumpLaw::Kou { eta_minus, .. } => eta_minus > 1.0,
                JumpLaw::Dps { beta_sv, mu_v, .. } => beta_sv * mu_v > -1.0,
                JumpLaw::Merton { .. } => true,
            };
            if !ok {
                errs.push(ValidationError::new(
                    "params.kernelJumpLaw",
                    "kernel jump law must have a finite mean of e^{-x}",
                ));
            }
        }
    }
}

/// Gaps between configured and kernel-implied Q quantities (zero when consistent).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsistencyReport {
    pub phi_q_gap: f64,
    pub kappa_q_gap: f64,
    pub mu_jump_gap: f64,
}

impl ConsistencyReport {
    pub fn is_consistent(&self, tol: f64) -> bool {
        self.phi_q_gap.abs() <= tol && self.kappa_q_gap.abs() <= tol && self.mu_jump_gap.abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct MarketState {
    pub f0: f64,
    pub v0: f64,
    pub t0: f64,
    #[serde(rename = "tO")]
    pub t_o: f64,
    #[serde(rename = "tF")]
    pub t_f: f64,
}

impl Default for MarketState {
    fn default() -> Self {
        MarketState {
            f0: 100.0,
            v0: 0.04,
            t0: 0.0,
            t_o: 0.25,
            t_f: 0.25,
        }
    }
}

impl MarketState {
    pub fn horizon(&self) -> f64 {
        self.t_o - self.t0
    }

    fn check(&self, errs: &mut Vec<ValidationError>) {
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            errs.push(ValidationError::new("state.f0", "f0 must be positive"));
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            errs.push(ValidationError::new("state.v0", "v0 must be non-negative"));
        }
        if !(self.t0 <= self.t_o && self.t_o <= self.t_f) || !self.t_f.is_finite() {
            errs.push(ValidationError::new("state.tO", "times must satisfy t0 <= tO <= tF"));
        }
    }
}

/// The JSON document accepted by the CLI: `{"params": {...}, "state": {...}}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: ModelParams,
    pub state: MarketState,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunConfig serializes")
    }

    pub fn validate(self) -> Result<ValidatedConfig, ValidationErrors> {
        validate(self.params, self.state)
    }
}

/// A configuration whose every invariant has been checked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidatedConfig {
    params: ModelParams,
    state: MarketState,
}

impl ValidatedConfig {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn to_run_config(&self) -> RunConfig {
        RunConfig {
            params: self.params,
            state: self.state,
        }
    }
}

/// Checks every parameter and state invariant, collecting all violations.
pub fn validate(params: ModelParams, state: MarketState) -> Result<ValidatedConfig, ValidationErrors> {
    let mut errs = Vec::new();
    params.check(&mut errs);
    state.check(&mut errs);
    if errs.is_empty() {
        Ok(ValidatedConfig { params, state })
    } else {
        Err(ValidationErrors(errs))
    }
}

fn finite(path: &str, name: &str, v: f64, errs: &mut Vec<ValidationError>) {
    if !v.is_finite() {
        errs.push(ValidationError::new(
            format!("{path}.{name}"),
            format!("{name} must be finite"),
        ));
    }
}

/// Option side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Call,
    Put,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Call => f.write_str("call"),
            Side::Put => f.write_str("put"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    P,
    Q,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::P => f.write_str("P"),
            Measure::Q => f.write_str("Q"),
        }
    }
}

/// One composite discontinuity at grid index `index` (all jumps landing in the
/// step, composed multiplicatively).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct JumpMark {
    pub index: usize,
    pub x_s: f64,
    pub x_v: f64,
    pub x_m: f64,
    pub count: u32,
}

/// One discretized path of the gross futures return.
///
/// `g[i]` is the post-jump value at grid point `i`, `g_pre[i]` the value just
/// before any jump landing there (equal to `g[i]` otherwise). `dz`/`du` are the
/// Brownian increments of step `i` (from `grid[i]` to `grid[i+1]`) under the
/// simulation measure. The `rn_*` vectors are the cumulative reciprocal
/// Radon-Nikodym factors, each starting at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPath {
    pub grid: Arc<[f64]>,
    pub g: Vec<f64>,
    pub g_pre: Vec<f64>,
    pub v: Vec<f64>,
    pub jumps: Vec<JumpMark>,
    pub dz: Vec<f64>,
    pub du: Vec<f64>,
    pub rn_span: Vec<f64>,
    pub rn_unspan_diff: Vec<f64>,
    pub rn_unspan_jump: Vec<f64>,
}

impl SimulatedPath {
    pub fn n_steps(&self) -> usize {
        self.g.len() - 1
    }

    pub fn terminal(&self) -> f64 {
        *self.g.last().expect("non-empty path")
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.grid[i + 1] - self.grid[i]
    }

    /// Product of the three reciprocal kernel components at the terminal date.
    pub fn terminal_rn(&self) -> f64 {
        let n = self.n_steps();
        self.rn_span[n] * self.rn_unspan_diff[n] * self.rn_unspan_jump[n]
    }

    /// Realized quadratic variation `sum (g[i+1] - g[i])^2`.
    pub fn quadratic_variation(&self) -> f64 {
        self.g.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
    }

    /// Sum of squared jumps `sum (g[i] - g_pre[i])^2` at jump indices.
    pub fn jump_quadratic_variation(&self) -> f64 {
        self.jumps
            .iter()
            .map(|j| (self.g[j.index] - self.g_pre[j.index]).powi(2))
            .sum()
    }

    /// Realized squares of the diffusive increments, `sum (g_pre[i+1] - g[i])^2`.
    pub fn diffusive_quadratic_variation(&self) -> f64 {
        (0..self.n_steps())
            .map(|i| (self.g_pre[i + 1] - self.g[i]).powi(2))
            .sum()
    }

    /// Model continuous QV `sum v[i] g[i]^2 dt`.
    pub fn continuous_qv(&self) -> f64 {
        (0..self.n_steps())
            .map(|i| self.v[i] * self.g[i] * self.g[i] * self.dt(i))
            .sum()
    }

    /// Builds a path from explicit values; used for constructed test paths.
    /// Jumps are inferred wherever `g_pre[i] != g[i]`.
    pub fn from_values(grid: Vec<f64>, g: Vec<f64>, g_pre: Vec<f64>, v: Vec<f64>) -> Self {
        assert!(grid.len() == g.len() && g.len() == g_pre.len() && g.len() == v.len());
        let n = g.len() - 1;
        let jumps = (0..=n)
            .filter(|&i| g_pre[i] != g[i])
            .map(|i| JumpMark {
                index: i,
                x_s: (g[i] / g_pre[i]).ln(),
                x_v: 0.0,
                x_m: 0.0,
                count: 1,
            })
            .collect();
        SimulatedPath {
            grid: grid.into(),
            g,
            g_pre,
            v,
            jumps,
            dz: vec![0.0; n],
            du: vec![0.0; n],
            rn_span: vec![1.0; n + 1],
            rn_unspan_diff: vec![1.0; n + 1],
            rn_unspan_jump: vec![1.0; n + 1],
        }
    }
}

impl JumpLaw {
    /// `E e^{x_s}`.
    pub fn expected_jump_factor(&self) -> f64 {
        crate::closedform::expected_jump_factor(self)
    }

    /// `E e^{u x_s}`, when finite.
    pub fn mgf(&self, u: f64) -> Option<f64> {
        crate::closedform::jump_mgf(self, u)
    }
}
