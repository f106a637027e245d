//! Path generation under P or Q.
//!
//! Scheme per step `[t_i, t_{i+1}]`, with `v+ = max(v_i, 0)`:
//!
//! ```text
//! ln G-_{i+1} = ln G_i + (drift - v+/2) dt + sqrt(v+) dz
//! v_{i+1}     = v_i + (phi - kappa v+) dt + sigma sqrt(v+) (rho dz + sqrt(1-rho^2) du) + sum x_v
//! G_{i+1}     = G-_{i+1} exp(sum x_s)
//! ```
//!
//! where `drift = -lambda (E e^xs - 1)` under Q and
//! `alpha + lambda_vol v+ + mu_jump - lambda (E e^xs - 1)` under P. The stored
//! variance is `max(v, 0)`. Kernel loadings are taken at the left endpoint.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    JumpLaw, JumpMark, MarketState, Measure, MeasureParams, ModelParams, SimulatedPath, ValidatedConfig,
};
use crate::rng::path_streams;

pub const SCHEME: &str = "log-euler G, full-truncation euler v, step-end compound poisson jumps";

/// Anything that can hand out the paths of an ensemble in index order.
pub trait PathSource: Sync {
    fn measure(&self) -> Measure;
    fn n_paths(&self) -> usize;
    fn grid(&self) -> &[f64];
    /// Continuously compounded rate used for discounting.
    fn rate(&self) -> f64;
    fn horizon(&self) -> f64 {
        let g = self.grid();
        g[g.len() - 1] - g[0]
    }
    /// Path `index` on its own.
    fn path_at(&self, index: usize) -> Result<SimulatedPath>;
    /// Applies `f` to every path; output `i` belongs to path `i`.
    fn map_paths<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&SimulatedPath) -> T + Sync + Send;
}

/// Lazily generated ensemble. Path `i` is a pure function of
/// `(params, state, measure, n_steps, seed, i)`.
#[derive(Clone, Debug)]
pub struct Simulator {
    params: ModelParams,
    state: MarketState,
    measure: Measure,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    grid: Arc<[f64]>,
    mp: MeasureParams,
    comp_s: f64,
    kernel_comp: f64,
}

impl Simulator {
    pub fn new(cfg: &ValidatedConfig, measure: Measure, n_paths: usize, n_steps: usize, seed: u64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::ZeroSteps);
        }
        if n_paths == 0 {
            return Err(Error::ZeroPaths);
        }
        let params = *cfg.params();
        let state = *cfg.state();
        let tau = state.horizon();
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument("simulation needs tO > t0".into()));
        }
        let grid: Arc<[f64]> = (0..=n_steps)
            .map(|i| {
                if i == n_steps {
                    state.t_o
                } else {
                    state.t0 + tau * i as f64 / n_steps as f64
                }
            })
            .collect();
        let mp = *params.measure(measure);
        let comp_s = mp.lambda_jump * (mp.jump_law.expected_jump_factor() - 1.0);
        let kernel_comp = match (&params.kernel_jump_law, measure) {
            (None, _) => 0.0,
            (Some(law), Measure::Q) => -mp.lambda_jump * (law.mgf(-1.0).unwrap_or(f64::INFINITY) - 1.0),
            (Some(law), Measure::P) => mp.lambda_jump * (law.expected_jump_factor() - 1.0),
        };
        Ok(Simulator {
            params,
            state,
            measure,
            n_steps,
            n_paths,
            seed,
            grid,
            mp,
            comp_s,
            kernel_comp,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    /// Same configuration with a different path count.
    pub fn with_paths(mut self, n_paths: usize) -> Self {
        self.n_paths = n_paths.max(1);
        self
    }

    /// Generates path `index`.
    pub fn path(&self, index: usize) -> Result<SimulatedPath> {
        let n = self.n_steps;
        let p = &self.params;
        let (mut rd, mut rj) = path_streams(self.seed, index as u64);
        let rho = p.rho_vol;
        let rho_c = (1.0 - rho * rho).max(0.0).sqrt();
        let is_p = self.measure == Measure::P;
        let lam_dt_each: Vec<f64> = (0..n)
            .map(|i| self.mp.lambda_jump * (self.grid[i + 1] - self.grid[i]))
            .collect();

        let mut g = Vec::with_capacity(n + 1);
        let mut g_pre = Vec::with_capacity(n + 1);
        let mut vs = Vec::with_capacity(n + 1);
        let mut dzs = Vec::with_capacity(n);
        let mut dus = Vec::with_capacity(n);
        let mut rs = Vec::with_capacity(n + 1);
        let mut rd_ = Vec::with_capacity(n + 1);
        let mut rjv = Vec::with_capacity(n + 1);
        let mut jumps = Vec::new();

        let mut ln_g = 0.0f64;
        let mut v = self.state.v0;
        let (mut ls, mut ld, mut lj) = (0.0f64, 0.0f64, 0.0f64);
        g.push(1.0);
        g_pre.push(1.0);
        vs.push(v.max(0.0));
        rs.push(1.0);
        rd_.push(1.0);
        rjv.push(1.0);

        let non_finite = |quantity: &'static str, step: usize| Error::NonFinite {
            quantity,
            path: index,
            step,
        };

        for i in 0..n {
            let dt = self.grid[i + 1] - self.grid[i];
            let sdt = dt.sqrt();
            let vp = v.max(0.0);
            let sv = vp.sqrt();
            let z1: f64 = StandardNormal.sample(&mut rd);
            let z2: f64 = StandardNormal.sample(&mut rd);
            let dz = sdt * z1;
            let du = sdt * z2;

            let eta = if sv > 0.0 {
                -(p.alpha_vol + p.lambda_vol * vp) / sv
            } else if p.alpha_vol == 0.0 {
                0.0
            } else {
                return Err(non_finite("eta", i));
            };
            let theta = -p.theta_lt * sv;
            if is_p {
                ls += 0.5 * eta * eta * dt - eta * dz;
                ld += 0.5 * theta * theta * dt - theta * du;
            } else {
                ls += -0.5 * eta * eta * dt - eta * dz;
                ld += -0.5 * theta * theta * dt - theta * du;
            }
            lj += self.kernel_comp * dt;

            let drift = if is_p {
                p.alpha_vol + p.lambda_vol * vp + p.mu_jump - self.comp_s
            } else {
                -self.comp_s
            };
            ln_g += (drift - 0.5 * vp) * dt + sv * dz;
            let gp = ln_g.exp();

            if !p.constant_variance {
                v += (self.mp.phi_vol - self.mp.kappa_vol * vp) * dt + p.sigma_vol * sv * (rho * dz + rho_c * du);
            }

            let count = poisson_inverse(rj.random::<f64>(), lam_dt_each[i]);
            if count > 0 {
                let (mut xs, mut xv, mut xm) = (0.0, 0.0, 0.0);
                let var_mean = self.mp.variance_jump_mean();
                for _ in 0..count {
                    let (s, jv) = sample_jump(&self.mp.jump_law, var_mean, &mut rj);
                    xs += s;
                    xv += jv;
                    if let Some(law) = &p.kernel_jump_law {
                        xm += sample_jump(law, 0.0, &mut rj).0;
                    }
                }
                ln_g += xs;
                if !p.constant_variance {
                    v += xv;
                }
                lj -= xm;
                jumps.push(JumpMark {
                    index: i + 1,
                    x_s: xs,
                    x_v: xv,
                    x_m: xm,
                    count,
                });
            }
            let gi = ln_g.exp();
            if !(gi.is_finite() && gi > 0.0 && gp.is_finite() && gp > 0.0) {
                return Err(non_finite("G", i));
            }
            if !v.is_finite() {
                return Err(non_finite("v", i));
            }
            let (es, ed, ej) = (ls.exp(), ld.exp(), lj.exp());
            if !(es.is_finite() && ed.is_finite() && ej.is_finite()) {
                return Err(non_finite("kernel component", i));
            }
            g.push(gi);
            g_pre.push(gp);
            vs.push(if p.constant_variance { self.state.v0 } else { v.max(0.0) });
            dzs.push(dz);
            dus.push(du);
            rs.push(es);
            rd_.push(ed);
            rjv.push(ej);
        }
        Ok(SimulatedPath {
            grid: self.grid.clone(),
            g,
            g_pre,
            v: vs,
            jumps,
            dz: dzs,
            du: dus,
            rn_span: rs,
            rn_unspan_diff: rd_,
            rn_unspan_jump: rjv,
        })
    }

    /// Materializes the whole ensemble.
    pub fn materialize(&self) -> Result<PathEnsemble> {
        let paths = (0..self.n_paths)
            .into_par_iter()
            .map(|i| self.path(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(PathEnsemble {
            measure: self.measure,
            paths,
            seed: self.seed,
            n_steps: self.n_steps,
            scheme: SCHEME.to_string(),
            rate: self.params.r,
        })
    }
}

impl PathSource for Simulator {
    fn measure(&self) -> Measure {
        self.measure
    }

    fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn rate(&self) -> f64 {
        self.params.r
    }

    fn path_at(&self, index: usize) -> Result<SimulatedPath> {
        self.path(index)
    }

    fn map_paths<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&SimulatedPath) -> T + Sync + Send,
    {
        (0..self.n_paths)
            .into_par_iter()
            .map(|i| self.path(i).map(|p| f(&p)))
            .collect()
    }
}

/// A fully materialized ensemble sharing one time grid.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub measure: Measure,
    pub paths: Vec<SimulatedPath>,
    pub seed: u64,
    pub n_steps: usize,
    pub scheme: String,
    pub rate: f64,
}

impl PathSource for PathEnsemble {
    fn measure(&self) -> Measure {
        self.measure
    }

    fn n_paths(&self) -> usize {
        self.paths.len()
    }

    fn grid(&self) -> &[f64] {
        &self.paths[0].grid
    }

    fn rate(&self) -> f64 {
        self.rate
    }

    fn path_at(&self, index: usize) -> Result<SimulatedPath> {
        self.paths
            .get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no path {index}")))
    }

    fn map_paths<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&SimulatedPath) -> T + Sync + Send,
    {
        Ok(self.paths.par_iter().map(f).collect())
    }
}

impl PathEnsemble {
    /// Same paths under a different measure tag.
    pub fn relabel(mut self, measure: Measure) -> Self {
        self.measure = measure;
        self
    }

    /// One row per grid point per path.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "pathId",
            "t",
            "g",
            "gPre",
            "v",
            "jumpCount",
            "xS",
            "xV",
            "xM",
            "rnSpan",
            "rnUnspanDiff",
            "rnUnspanJump",
        ])?;
        for (id, p) in self.paths.iter().enumerate() {
            let mut jumps = p.jumps.iter().peekable();
            for i in 0..p.g.len() {
                let mark = match jumps.peek() {
                    Some(j) if j.index == i => jumps.next().copied(),
                    _ => None,
                };
                let (c, xs, xv, xm) = mark.map_or((0, 0.0, 0.0, 0.0), |j| (j.count, j.x_s, j.x_v, j.x_m));
                out.write_record([
                    id.to_string(),
                    p.grid[i].to_string(),
                    p.g[i].to_string(),
                    p.g_pre[i].to_string(),
                    p.v[i].to_string(),
                    c.to_string(),
                    xs.to_string(),
                    xv.to_string(),
                    xm.to_string(),
                    p.rn_span[i].to_string(),
                    p.rn_unspan_diff[i].to_string(),
                    p.rn_unspan_jump[i].to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Materialized ensemble of `n_paths` paths.
pub fn simulate(
    cfg: &ValidatedConfig,
    measure: Measure,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    Simulator::new(cfg, measure, n_paths, n_steps, seed)?.materialize()
}

/// Smallest `n` with `P(N <= n) > u` for `N ~ Poisson(mean)`.
pub fn poisson_inverse(u: f64, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut n = 0u32;
    while u >= cdf && n < 10_000 {
        n += 1;
        p *= mean / n as f64;
        let next = cdf + p;
        if next == cdf {
            break;
        }
        cdf = next;
    }
    n
}

/// Draws `(x_s, x_v)`; `var_mean` is the variance-jump mean for laws that do
/// not carry their own.
pub fn sample_jump(law: &JumpLaw, var_mean: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    match *law {
        JumpLaw::Merton { mu, sigma } => {
            let z: f64 = StandardNormal.sample(rng);
            let xv = exp_draw(var_mean, rng);
            (mu - 0.5 * sigma * sigma + sigma * z, xv)
        }
        JumpLaw::Kou {
            p_plus,
            eta_plus,
            eta_minus,
        } => {
            let up = rng.random::<f64>() < p_plus;
            let e = -(1.0 - rng.random::<f64>()).ln();
            let xv = exp_draw(var_mean, rng);
            (if up { e / eta_plus } else { -e / eta_minus }, xv)
        }
        JumpLaw::Dps {
            beta0,
            beta_sv,
            sigma_sv,
            mu_v,
        } => {
            let xv = exp_draw(mu_v, rng);
            let z: f64 = StandardNormal.sample(rng);
            (beta0 + beta_sv * xv + sigma_sv * z, xv)
        }
    }
}

fn exp_draw(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    if mean > 0.0 {
        -mean * (1.0 - rng.random::<f64>()).ln()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RunConfig;

    fn cfg() -> ValidatedConfig {
        let mut c = RunConfig::default();
        c.params.p_measure.lambda_jump = 2.0;
        c.params.q_measure.lambda_jump = 3.0;
        c.params.p_measure.mu_v_var_jump = 0.01;
        c.params.q_measure.mu_v_var_jump = 0.01;
        c.params.lambda_vol = 1.0;
        c.validate().unwrap()
    }

    #[test]
    fn poisson_inverse_counts() {
        assert_eq!(poisson_inverse(0.5, 0.0), 0);
        assert_eq!(poisson_inverse(0.0, 1.0), 0);
        assert_eq!(poisson_inverse(0.37, 1.0), 1);
        assert_eq!(poisson_inverse(0.99, 1.0), 4);
    }

    #[test]
    fn path_invariants() {
        let s = Simulator::new(&cfg(), Measure::Q, 50, 64, 1).unwrap();
        for i in 0..50 {
            let p = s.path(i).unwrap();
            assert_eq!(p.g[0], 1.0);
            assert!(p.g.iter().all(|&x| x > 0.0));
            assert!(p.v.iter().all(|&x| x >= 0.0));
            let mut jumped = vec![false; p.g.len()];
            for j in &p.jumps {
                jumped[j.index] = true;
                assert!((p.g[j.index] - p.g_pre[j.index] * j.x_s.exp()).abs() < 1e-12 * p.g[j.index]);
            }
            for (k, &jmp) in jumped.iter().enumerate() {
                if !jmp {
                    assert_eq!(p.g[k], p.g_pre[k]);
                }
            }
        }
    }

    #[test]
    fn path_is_order_independent() {
        let s = Simulator::new(&cfg(), Measure::P, 20, 16, 9).unwrap();
        let ens = s.materialize().unwrap();
        assert_eq!(ens.paths[13], s.path(13).unwrap());
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(
            Simulator::new(&cfg(), Measure::Q, 1, 0, 0),
            Err(Error::ZeroSteps)
        ));
    }

    #[test]
    fn kernel_loading_at_zero_variance() {
        let mut c = RunConfig::default();
        c.state.v0 = 0.0;
        c.params.constant_variance = true;
        c.params.alpha_vol = 0.1;
        let s = Simulator::new(&c.validate().unwrap(), Measure::P, 1, 4, 0).unwrap();
        assert!(matches!(s.path(0), Err(Error::NonFinite { quantity: "eta", .. })));
    }

    #[test]
    fn csv_dump_has_a_row_per_grid_point() {
        let ens = simulate(&cfg(), Measure::Q, 3, 5, 2).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 6);
    }
}
