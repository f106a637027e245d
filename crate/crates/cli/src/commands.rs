use std::fs;
use std::path::Path;

use darkmatter::closedform::{crossing_rp, crossing_rp_quadrature};
use darkmatter::empirics::{
    read_chains, read_series, run_pipeline, synthetic_panel, write_chains, write_differential_csv, write_series,
    EmpiricsConfig, SyntheticPanelSpec,
};
use darkmatter::premia::{config_hash, default_k_grid, premia_reports, resolve_eps, vol_uncertainty_rp, PremiaRun};
use darkmatter::tanaka::{decompose, write_csv as write_tanaka_csv};
use darkmatter::{JumpLaw, Measure, PathSource, RunConfig, Side, Simulator, ValidatedConfig};
use serde_json::json;

use crate::manifest::Outputs;
use crate::{Cli, CliError, Command, Common, LawArg, MeasureArg, SideArg};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let c = cli.common;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Compute(e.to_string()))?;
    }
    match cli.command {
        Command::Validate => validate(&c),
        Command::Simulate { measure } => simulate(&c, measure.into()),
        Command::TanakaCheck { measure, side } => tanaka_check(&c, measure.into(), side.into()),
        Command::Premia { k_put, squared_log } => premia(&c, k_put, squared_log),
        Command::ClosedForm { law, compare_oracle } => closed_form(&c, law, compare_oracle),
        Command::Empirics {
            chains,
            daily,
            synthetic,
            cycles,
        } => empirics(&c, chains.as_deref(), daily.as_deref(), synthetic, cycles),
    }
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::P => Measure::P,
            MeasureArg::Q => Measure::Q,
        }
    }
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Call => Side::Call,
            SideArg::Put => Side::Put,
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_config(c: &Common) -> Result<ValidatedConfig, CliError> {
    let raw = match &c.config {
        Some(path) => {
            RunConfig::from_json(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    raw.validate().map_err(|v| CliError::Config(format!("\n{v}")))
}

fn simulator(c: &Common, cfg: &ValidatedConfig, measure: Measure) -> Result<Simulator, CliError> {
    Ok(Simulator::new(cfg, measure, c.paths, c.steps, c.seed)?)
}

fn validate(c: &Common) -> Result<(), CliError> {
    let mut out = Outputs::new("validate", c.config.as_deref(), c.seed, &c.out)?;
    let cfg = out.time("validate", || load_config(c))?;
    let report = cfg.params().consistency();
    if !report.is_consistent(1e-12) {
        eprintln!("warning: Q-side drift terms are not implied by P and the kernel: {report:?}");
    }
    out.write("config.json", cfg.to_run_config().to_json().as_bytes())?;
    eprintln!("configuration is valid");
    out.finish()
}

fn simulate(c: &Common, measure: Measure) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let mut out = Outputs::new("simulate", c.config.as_deref(), c.seed, &c.out)?;
    let sim = simulator(c, &cfg, measure)?;
    let ens = out.time("simulate", || sim.materialize())?;
    let mut buf = Vec::new();
    ens.write_csv(&mut buf)?;
    out.write("paths.csv", &buf)?;
    let gt: f64 = ens.map_paths(|p| p.terminal())?.iter().sum::<f64>() / c.paths as f64;
    eprintln!(
        "{} paths x {} steps under {measure}; mean terminal G = {gt:.6}",
        c.paths, c.steps
    );
    out.finish()
}

fn tanaka_check(c: &Common, measure: Measure, side: Side) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let mut out = Outputs::new("tanaka-check", c.config.as_deref(), c.seed, &c.out)?;
    let sim = simulator(c, &cfg, measure)?;
    let eps = resolve_eps(&sim, c.k, c.eps)?;
    let rows = out.time("decompose", || sim.map_paths(|p| decompose(p, c.k, side, eps)))?;
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = rows.len() as f64;
    let mean_res = rows.iter().map(|d| d.residual.abs()).sum::<f64>() / n;
    let max_res = rows.iter().map(|d| d.residual.abs()).fold(0.0, f64::max);
    let mean_pay = rows.iter().map(|d| d.payoff_change.abs()).sum::<f64>() / n;
    let indexed: Vec<_> = rows.into_iter().enumerate().collect();
    let mut buf = Vec::new();
    write_tanaka_csv(&mut buf, &indexed)?;
    out.write("tanaka.csv", &buf)?;
    let summary = json!({
        "k": c.k,
        "side": side.to_string(),
        "measure": measure.to_string(),
        "eps": eps,
        "nPaths": c.paths,
        "nSteps": c.steps,
        "meanAbsResidual": mean_res,
        "maxAbsResidual": max_res,
        "meanAbsPayoffChange": mean_pay,
    });
    out.write(
        "tanaka_summary.json",
        serde_json::to_string_pretty(&summary).unwrap().as_bytes(),
    )?;
    eprintln!("mean |residual| {mean_res:.3e} against mean |payoff change| {mean_pay:.3e} (eps {eps:.3e})");
    out.finish()
}

fn premia(c: &Common, k_put: f64, squared_log: bool) -> Result<(), CliError> {
    if !(c.k > 1.0) {
        return Err(CliError::Usage(format!(
            "--k must exceed 1 for the call leg, got {}",
            c.k
        )));
    }
    if !(k_put > 0.0 && k_put < 1.0) {
        return Err(CliError::Usage(format!("--k-put must lie in (0, 1), got {k_put}")));
    }
    let cfg = load_config(c)?;
    let mut out = Outputs::new("premia", c.config.as_deref(), c.seed, &c.out)?;
    let p = simulator(c, &cfg, Measure::P)?;
    let q = simulator(c, &cfg, Measure::Q)?;
    let reports = out.time("decompose", || premia_reports(&p, &q, c.k, k_put, c.eps))?;
    for r in &reports {
        for (name, e) in &r.components {
            eprintln!("{:<9} {name:<22} {:>13.6e} (se {:.2e})", r.kind, e.estimate, e.se);
        }
    }
    let run = PremiaRun {
        config_hash: config_hash(&cfg.to_run_config()),
        seed: c.seed,
        n_paths: c.paths,
        n_steps: c.steps,
        common_random_numbers: true,
        reports,
    };
    out.write("premia.json", run.to_json().as_bytes())?;
    if squared_log {
        let v = out.time("squared-log", || vol_uncertainty_rp(&p, &q, &default_k_grid(), c.eps))?;
        eprintln!(
            "squared log: direct {:.6e} (se {:.2e}), decomposed {:.6e} (se {:.2e})",
            v.direct.estimate, v.direct.se, v.rhs.estimate, v.rhs.se
        );
        out.write("squared_log.json", serde_json::to_string_pretty(&v).unwrap().as_bytes())?;
    }
    out.finish()
}

fn law_family(law: &JumpLaw) -> LawArg {
    match law {
        JumpLaw::Merton { .. } => LawArg::Merton,
        JumpLaw::Kou { .. } => LawArg::Kou,
        JumpLaw::Dps { .. } => LawArg::Dps,
    }
}

/// Canned P/Q pairs with a heavier Q upside.
fn canned_pair(law: LawArg) -> (f64, JumpLaw, f64, JumpLaw) {
    match law {
        LawArg::Merton => (
            0.5,
            JumpLaw::Merton { mu: -0.02, sigma: 0.05 },
            1.0,
            JumpLaw::Merton { mu: -0.05, sigma: 0.08 },
        ),
        LawArg::Kou => (
            1.0,
            JumpLaw::Kou {
                p_plus: 0.4,
                eta_plus: 25.0,
                eta_minus: 20.0,
            },
            2.0,
            JumpLaw::Kou {
                p_plus: 0.4,
                eta_plus: 20.0,
                eta_minus: 20.0,
            },
        ),
        LawArg::Dps => (
            1.0,
            JumpLaw::Dps {
                beta0: -0.05,
                beta_sv: -0.5,
                sigma_sv: 0.1,
                mu_v: 0.02,
            },
            2.0,
            JumpLaw::Dps {
                beta0: -0.07,
                beta_sv: -0.6,
                sigma_sv: 0.1,
                mu_v: 0.03,
            },
        ),
    }
}

fn closed_form(c: &Common, law: Option<LawArg>, compare: bool) -> Result<(), CliError> {
    let (lp, law_p, lq, law_q) = match (&c.config, law) {
        (Some(_), _) => {
            let cfg = load_config(c)?;
            let (pm, qm) = (cfg.params().p_measure, cfg.params().q_measure);
            let family = law_family(&pm.jump_law);
            if law.is_some_and(|l| l != family) || law_family(&qm.jump_law) != family {
                return Err(CliError::Config("--law does not match the configured jump laws".into()));
            }
            (pm.lambda_jump, pm.jump_law, qm.lambda_jump, qm.jump_law)
        }
        (None, Some(l)) => canned_pair(l),
        (None, None) => return Err(CliError::Usage("closed-form needs --law or --config".into())),
    };
    let mut out = Outputs::new("closed-form", c.config.as_deref(), c.seed, &c.out)?;
    let ks: Vec<f64> = (1..=20).map(|i| 1.0 + 0.01 * i as f64).collect();
    let mut w = String::from(if compare {
        "k,closedForm,quadrature,absError,relError\n"
    } else {
        "k,closedForm\n"
    });
    let mut max_rel = 0.0f64;
    out.time("evaluate", || -> Result<(), CliError> {
        for &k in &ks {
            let cf = crossing_rp(k, lp, &law_p, lq, &law_q)?;
            if compare {
                let quad = crossing_rp_quadrature(k, lp, &law_p, lq, &law_q, 1e-12)?;
                let abs = (cf - quad).abs();
                let rel = if quad != 0.0 { abs / quad.abs() } else { abs };
                max_rel = max_rel.max(rel);
                w.push_str(&format!("{k},{cf:e},{quad:e},{abs:e},{rel:e}\n"));
            } else {
                w.push_str(&format!("{k},{cf:e}\n"));
            }
        }
        Ok(())
    })?;
    out.write("closed_form.csv", w.as_bytes())?;
    if compare {
        eprintln!("max relative error against quadrature: {max_rel:.3e}");
    }
    out.finish()
}

fn empirics(
    c: &Common,
    chains_path: Option<&Path>,
    daily_path: Option<&Path>,
    synthetic: bool,
    cycles: usize,
) -> Result<(), CliError> {
    let mut cfg: EmpiricsConfig = match &c.config {
        Some(path) => {
            serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => EmpiricsConfig::default(),
    };
    cfg.bootstrap.seed = c.seed;
    let mut out = Outputs::new("empirics", c.config.as_deref(), c.seed, &c.out)?;
    let (chains, mut daily) = if synthetic {
        let panel = synthetic_panel(&SyntheticPanelSpec {
            n_cycles: cycles,
            seed: c.seed,
            ..SyntheticPanelSpec::default()
        })?;
        let mut buf = Vec::new();
        write_chains(&mut buf, &panel.chains)?;
        out.write("chains.csv", &buf)?;
        let mut buf = Vec::new();
        write_series(&mut buf, &panel.daily)?;
        out.write("daily.csv", &buf)?;
        (panel.chains, Some(panel.daily))
    } else {
        let path = chains_path.expect("clap requires --chains without --synthetic");
        (read_chains(open(path)?)?, None)
    };
    if let Some(path) = daily_path {
        let extra = read_series(open(path)?)?;
        daily.get_or_insert_with(Default::default).extend(extra);
    }
    let result = out.time("pipeline", || run_pipeline(&cfg, &chains, daily.as_ref(), &[]))?;
    let mut buf = Vec::new();
    result.write_table_csv(&mut buf, cfg.hac_lag)?;
    out.write("table.csv", &buf)?;
    let mut buf = Vec::new();
    write_differential_csv(&mut buf, &result.differentials)?;
    out.write("differentials.csv", &buf)?;
    let audit = serde_json::to_string_pretty(&result.panel.audit).unwrap();
    out.write("audit.json", audit.as_bytes())?;
    eprintln!(
        "{} cycles, {} instruments, {} table rows",
        result.panel.cycles.len(),
        result.panel.instruments.len(),
        result.table.len()
    );
    out.finish()
}
