//! Subcommand implementations. Each returns the text for stdout and a
//! verdict; writing files and choosing exit codes is left to the caller.

use std::fmt::Write as _;
use std::path::Path;

use trimabs::abstraction::{
    build_over_catalog, build_symbolic_model, certificate_value, input_catalog, quantize_state, reduce_edges,
    restrict_to_quantized_inputs, spectral_tau, BuildOptions,
};
use trimabs::bisim::{
    check_near_completeness_sampled, check_result1_sampled, check_theorem1_sampled, SamplePlan, Theorem1Plan,
};
use trimabs::format::g9;
use trimabs::linalg::{min_real_part, vec_norm_inf, vec_sub};
use trimabs::stability::{default_divergence_offset, stabilizability_report, verify_divergence};
use trimabs::system::{quantize_feedback, reach, simulate, simulate_supervisory};
use trimabs::trimming::trim_box;
use trimabs::{AbstractionParams, CheckReport, PiecewiseConstantInput, SymbolicModel};

use crate::config::Config;
use crate::error::CliError;

/// Command-line settings that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub strict_eta_half: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    /// Warnings for stderr.
    pub notes: Vec<String>,
    /// False when a verification failed.
    pub verdict: bool,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome {
            stdout,
            notes: Vec::new(),
            verdict: true,
        }
    }
}

fn point(v: &[f64]) -> String {
    format!("({})", v.iter().map(|x| g9(*x)).collect::<Vec<_>>().join(","))
}

/// Parameters from the config: a fixed `tau` (override first, then the
/// config) is taken as given, otherwise `tau` is synthesized.
pub fn resolve_params(cfg: &Config, ov: &Overrides) -> Result<(AbstractionParams<f64>, &'static str), CliError> {
    let sys = cfg.system()?;
    let c = cfg.gain()?;
    let abs = &cfg.abstraction;
    let strict = ov.strict_eta_half || abs.strict_eta_half;
    let fixed = ov.tau.map(|t| (t, "override")).or(abs.tau.map(|t| (t, "config")));
    match fixed {
        Some((tau, source)) => {
            if tau <= 0.0 || !tau.is_finite() {
                return Err(CliError::Usage(format!("tau must be positive, got {tau}")));
            }
            match AbstractionParams::new(&sys, &c, abs.epsilon, abs.eta, tau, strict) {
                Ok(p) => Ok((p, source)),
                Err(_) => Ok((
                    AbstractionParams::uncertified(&sys, &c, abs.epsilon, abs.eta, tau)?,
                    source,
                )),
            }
        }
        None => Ok((
            AbstractionParams::synthesize(&sys, &c, abs.epsilon, abs.eta, abs.tau_step, abs.tau_max, strict)?,
            "synthesized",
        )),
    }
}

fn certificate_note(params: &AbstractionParams<f64>) -> Option<String> {
    (!params.is_certified()).then(|| {
        format!(
            "tau = {} is not certified (eps*||exp((A+BC)tau)|| = {} vs eta/2 = {}, hurwitz {}); results may fail verification",
            g9(params.tau()),
            g9(params.certificate_value()),
            g9(params.certificate_target()),
            params.is_hurwitz()
        )
    })
}

/// Parameters, certificate values and stability facts.
pub fn cmd_params(cfg: &Config, ov: &Overrides) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let c = cfg.gain()?;
    let abs = &cfg.abstraction;
    let (params, source) = resolve_params(cfg, ov)?;
    let mut out = String::new();
    writeln!(out, "epsilon {}", g9(params.epsilon())).unwrap();
    writeln!(out, "eta {}", g9(params.eta())).unwrap();
    writeln!(out, "rho {}", g9(params.rho())).unwrap();
    writeln!(out, "tau {}", g9(params.tau())).unwrap();
    writeln!(out, "tau_source {source}").unwrap();
    writeln!(out, "certificate_value {}", g9(params.certificate_value())).unwrap();
    writeln!(out, "certificate_target {}", g9(params.certificate_target())).unwrap();
    writeln!(out, "certified {}", params.is_certified()).unwrap();
    match spectral_tau(sys.a(), sys.b(), &c, abs.epsilon, abs.eta, abs.tau_step, abs.tau_max) {
        Ok(t) => {
            let v = certificate_value(sys.a(), sys.b(), &c, abs.epsilon, t)?;
            writeln!(
                out,
                "spectral_tau {} certificate {} {}",
                g9(t),
                g9(v),
                verdict_word(v < params.certificate_target())
            )
            .unwrap();
        }
        Err(e) => writeln!(out, "spectral_tau none ({e})").unwrap(),
    }
    for &t in &abs.compare_tau {
        let v = certificate_value(sys.a(), sys.b(), &c, abs.epsilon, t)?;
        writeln!(
            out,
            "compare_tau {} certificate {} {}",
            g9(t),
            g9(v),
            verdict_word(v < params.certificate_target())
        )
        .unwrap();
    }
    let trimmed = trim_box(sys.input_box(), params.rho())?;
    match (trimmed.lower(), trimmed.upper()) {
        (Some(l), Some(u)) => writeln!(out, "trimmed_inputs {} {}", point(l), point(u)).unwrap(),
        _ => writeln!(out, "trimmed_inputs empty").unwrap(),
    }
    let options = BuildOptions {
        segments: abs.segments,
        catalog_cap: abs.catalog_cap,
    };
    let catalog = input_catalog(&sys, params.rho(), params.tau(), &options)?;
    writeln!(out, "catalog_size {}", catalog.len()).unwrap();
    let n = sys.state_dim();
    let report = stabilizability_report(&sys, &c, &vec![0.0; n], &vec![0.0; sys.input_dim()])?;
    out.push_str(&report.to_text());
    let mut outcome = Outcome::ok(out);
    outcome.notes.extend(certificate_note(&params));
    Ok(outcome)
}

fn verdict_word(holds: bool) -> &'static str {
    if holds {
        "holds"
    } else {
        "fails"
    }
}

/// Output format of `build`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ModelFormat {
    #[default]
    Text,
    Dot,
}

/// The trimmed symbolic model restricted to quantized inputs, optionally
/// edge-reduced.
pub fn build_model(cfg: &Config, ov: &Overrides, reduce: bool) -> Result<(SymbolicModel<f64>, Vec<String>), CliError> {
    let sys = cfg.system()?;
    let c = cfg.gain()?;
    let region = cfg.region()?;
    let (params, _) = resolve_params(cfg, ov)?;
    let options = BuildOptions {
        segments: cfg.abstraction.segments,
        catalog_cap: cfg.abstraction.catalog_cap,
    };
    let model = if params.is_certified() {
        build_symbolic_model(&sys, &c, &params, &region, &options)?
    } else {
        let catalog = input_catalog(&sys, params.rho(), params.tau(), &options)?;
        build_over_catalog(&sys, &region, params.eta(), params.tau(), params.rho(), catalog)?
    };
    let model = restrict_to_quantized_inputs(&model, sys.quantized_inputs(), sys.input_box(), params.rho())?;
    let model = if reduce { reduce_edges(&model) } else { model };
    Ok((model, certificate_note(&params).into_iter().collect()))
}

pub fn cmd_build(cfg: &Config, ov: &Overrides, reduce: bool, format: ModelFormat) -> Result<Outcome, CliError> {
    let (model, notes) = build_model(cfg, ov, reduce)?;
    let stdout = match format {
        ModelFormat::Text => model.export_text(),
        ModelFormat::Dot => model.export_dot(),
    };
    Ok(Outcome {
        stdout,
        notes,
        verdict: true,
    })
}

/// Input given on the command line: one value per segment, segments
/// separated by `;`, coordinates by `,`. A single segment is held constant.
pub fn parse_input_spec(spec: &str) -> Result<Vec<Vec<f64>>, CliError> {
    spec.split(';')
        .map(|seg| {
            seg.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| CliError::Usage(format!("cannot read input value {v:?}")))
                })
                .collect()
        })
        .collect()
}

pub fn parse_point(spec: &str) -> Result<Vec<f64>, CliError> {
    let mut values = parse_input_spec(spec)?;
    if values.len() != 1 {
        return Err(CliError::Usage(format!("expected one point, got {spec:?}")));
    }
    Ok(values.remove(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateArgs {
    pub y0: Vec<f64>,
    pub x0: Vec<f64>,
    pub input: Vec<Vec<f64>>,
    /// Horizon; the abstraction's `tau` when absent.
    pub tau: Option<f64>,
    pub dt: f64,
}

/// Result of `simulate`: the summary for stdout and the trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub summary: String,
    pub csv: String,
    pub supervised_end: Vec<f64>,
    pub quantized_end: Vec<f64>,
    pub symbolic_successor: Vec<f64>,
    pub max_quantized_displacement: f64,
}

/// Reference run from `x0`, supervisory run from `y0` tracking it, and the
/// same supervisory input rounded to the quantized levels every `h`.
pub fn run_simulation(cfg: &Config, ov: &Overrides, args: &SimulateArgs) -> Result<Simulation, CliError> {
    let sys = cfg.system()?;
    let c = cfg.gain()?;
    let n = sys.state_dim();
    if args.x0.len() != n || args.y0.len() != n {
        return Err(CliError::Usage(format!("initial states need {n} coordinates")));
    }
    if args.input.iter().any(|v| v.len() != sys.input_dim()) {
        return Err(CliError::Usage(format!(
            "input values need {} coordinates",
            sys.input_dim()
        )));
    }
    for v in &args.input {
        if !sys.input_box().contains(v)? {
            return Err(CliError::Usage(format!(
                "input value {} lies outside the input box",
                point(v)
            )));
        }
    }
    let tau = match args.tau {
        Some(t) => t,
        None => resolve_params(cfg, ov)?.0.tau(),
    };
    if tau.is_nan() || tau <= 0.0 || args.dt.is_nan() || args.dt <= 0.0 {
        return Err(CliError::Usage("horizon and time step must be positive".into()));
    }
    let h = sys.h();
    let u = if args.input.len() == 1 {
        let segments = (tau / h).round().max(1.0) as usize;
        PiecewiseConstantInput::constant(args.input[0].clone(), h, segments)?
    } else {
        PiecewiseConstantInput::new(h, args.input.clone())?
    };
    let run = simulate_supervisory(&sys, &c, &args.y0, &args.x0, &u, tau, args.dt)?;
    let q = quantize_feedback(&run.plant, sys.quantized_inputs(), h)?;
    let quantized = simulate(&sys, &args.y0, &q, tau, args.dt)?;

    let eta = cfg.abstraction.eta;
    let successor = quantize_state(&reach(&sys, &args.x0, &u, tau)?, eta)?;
    let reference_end = run.reference.final_state().to_vec();
    let supervised_end = run.plant.final_state().to_vec();
    let quantized_end = quantized.final_state().to_vec();
    let max_disp = |inputs: &[Vec<f64>]| {
        inputs
            .iter()
            .zip(run.reference.inputs())
            .map(|(a, b)| vec_norm_inf(&vec_sub(a, b)))
            .fold(0.0, f64::max)
    };
    let max_sup = max_disp(run.plant.inputs());
    let max_q = max_disp(quantized.inputs());

    let mut summary = String::new();
    writeln!(summary, "tau {}", g9(tau)).unwrap();
    writeln!(summary, "reference_end {}", point(&reference_end)).unwrap();
    writeln!(summary, "supervised_end {}", point(&supervised_end)).unwrap();
    writeln!(summary, "quantized_end {}", point(&quantized_end)).unwrap();
    writeln!(summary, "symbolic_successor {}", point(&successor)).unwrap();
    writeln!(
        summary,
        "supervised_distance {}",
        g9(vec_norm_inf(&vec_sub(&supervised_end, &successor)))
    )
    .unwrap();
    writeln!(
        summary,
        "quantized_distance {}",
        g9(vec_norm_inf(&vec_sub(&quantized_end, &successor)))
    )
    .unwrap();
    writeln!(summary, "epsilon {}", g9(cfg.abstraction.epsilon)).unwrap();
    writeln!(summary, "max_supervisory_displacement {}", g9(max_sup)).unwrap();
    writeln!(summary, "max_quantized_displacement {}", g9(max_q)).unwrap();

    let mut csv = String::from("t");
    for prefix in ["x", "y", "z"] {
        for i in 1..=n {
            write!(csv, ",{prefix}{i}").unwrap();
        }
    }
    for prefix in ["u", "v", "w"] {
        for i in 1..=sys.input_dim() {
            write!(csv, ",{prefix}{i}").unwrap();
        }
    }
    csv.push('\n');
    for k in 0..run.reference.len() {
        let row: Vec<String> = std::iter::once(run.reference.times()[k])
            .chain(run.reference.states()[k].iter().copied())
            .chain(run.plant.states()[k].iter().copied())
            .chain(quantized.states()[k].iter().copied())
            .chain(run.reference.inputs()[k].iter().copied())
            .chain(run.plant.inputs()[k].iter().copied())
            .chain(quantized.inputs()[k].iter().copied())
            .map(g9)
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    Ok(Simulation {
        summary,
        csv,
        supervised_end,
        quantized_end,
        symbolic_successor: successor,
        max_quantized_displacement: max_q,
    })
}

/// Every verification the config supports, in a fixed order.
pub fn run_checks(cfg: &Config, ov: &Overrides) -> Result<(Vec<CheckReport>, Vec<String>), CliError> {
    let sys = cfg.system()?;
    let c = cfg.gain()?;
    let region = cfg.region()?;
    let chk = &cfg.check;
    let seed = ov.seed.unwrap_or(chk.seed);
    let (params, _) = resolve_params(cfg, ov)?;
    let mut notes: Vec<String> = certificate_note(&params).into_iter().collect();
    let mut reports = Vec::new();

    let mut plan = SamplePlan::new(chk.states, chk.inputs, seed);
    plan.corner_anchors = chk.corner_anchors;
    plan.dt = chk.dt;
    plan.cross_checks = chk.cross_checks;
    reports.push(check_result1_sampled(&sys, &c, &params, &region, &plan)?);

    let mut pairs = Theorem1Plan::new(chk.pairs, chk.pair_inputs, seed);
    pairs.dt = chk.dt;
    reports.push(check_theorem1_sampled(
        &sys,
        &c,
        params.epsilon(),
        params.tau(),
        &region,
        &pairs,
    )?);

    let narrow = region
        .lower()
        .iter()
        .zip(region.upper())
        .any(|(l, u)| u - l <= 2.0 * params.epsilon());
    if params.rho() <= 0.0 {
        notes.push("near-completeness skipped: the trimming radius is zero".into());
    } else if narrow {
        notes.push("near-completeness skipped: the region is not wider than 2 epsilon".into());
    } else {
        let mut nc = SamplePlan::new(chk.completeness_states, chk.completeness_inputs, seed);
        nc.corner_anchors = chk.corner_anchors.min(4);
        nc.dt = chk.dt;
        reports.push(check_near_completeness_sampled(&sys, &c, &params, &region, &nc)?);
    }

    if min_real_part(sys.a())? > 0.0 {
        let offset = default_divergence_offset(&sys, chk.horizon)?;
        let x0 = vec![0.0; sys.state_dim()];
        reports.push(verify_divergence(
            &sys,
            &x0,
            &offset,
            chk.horizon,
            chk.trials,
            seed,
            chk.dt,
        )?);
    }
    Ok((reports, notes))
}

/// Runs [`run_checks`]; reports go to stdout and, with `out_dir`, to
/// `<name>.txt` and `<name>.json` files.
pub fn cmd_check(cfg: &Config, ov: &Overrides, out_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let (reports, notes) = run_checks(cfg, ov)?;
    let mut stdout = String::new();
    for r in &reports {
        stdout.push_str(&r.to_text());
        stdout.push('\n');
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for r in &reports {
            for (ext, body) in [("txt", r.to_text()), ("json", r.to_json())] {
                let path = dir.join(format!("{}.{ext}", r.name()));
                std::fs::write(&path, body).map_err(|source| CliError::Io { path, source })?;
            }
        }
    }
    let verdict = reports.iter().all(|r| r.verdict());
    writeln!(stdout, "overall {}", if verdict { "PASS" } else { "FAIL" }).unwrap();
    Ok(Outcome { stdout, notes, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jordan() -> Config {
        Config::from_toml_str(include_str!("../configs/jordan.toml")).unwrap()
    }

    fn line<'a>(text: &'a str, key: &str) -> &'a str {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} ")))
            .unwrap_or_else(|| panic!("no {key} line in\n{text}"))
    }

    #[test]
    fn params_for_jordan_config() {
        let out = cmd_params(&jordan(), &Overrides::default()).unwrap();
        assert_eq!(line(&out.stdout, "rho"), "0.48");
        assert_eq!(line(&out.stdout, "tau"), "2.75");
        assert_eq!(line(&out.stdout, "tau_source"), "synthesized");
        assert_eq!(line(&out.stdout, "hurwitz"), "true");
        assert_eq!(line(&out.stdout, "divergence_radius"), "20");
        assert_eq!(line(&out.stdout, "local_radius"), "1.25");
        assert_eq!(line(&out.stdout, "catalog_size"), "91");
        assert!(line(&out.stdout, "compare_tau").starts_with("1 certificate 0.13"));
        assert!(line(&out.stdout, "compare_tau").ends_with("fails"));
        assert!(line(&out.stdout, "spectral_tau").ends_with("fails"));
        assert!(out.notes.is_empty());
    }

    #[test]
    fn tau_override_is_reported_uncertified() {
        let ov = Overrides {
            tau: Some(1.0),
            ..Default::default()
        };
        let out = cmd_params(&jordan(), &ov).unwrap();
        assert_eq!(line(&out.stdout, "certified"), "false");
        assert_eq!(line(&out.stdout, "tau_source"), "override");
        assert_eq!(out.notes.len(), 1);
    }

    #[test]
    fn zero_gain_means_no_trimming() {
        let cfg = Config::from_toml_str(include_str!("../configs/one_state.toml")).unwrap();
        let out = cmd_params(&cfg, &Overrides::default()).unwrap();
        assert_eq!(line(&out.stdout, "rho"), "0");
        assert_eq!(line(&out.stdout, "local_radius"), "inf");
        assert_eq!(line(&out.stdout, "divergence_radius"), "none");
    }

    #[test]
    fn oversized_epsilon_is_a_construction_error() {
        let mut cfg = jordan();
        cfg.abstraction.epsilon = 1.3;
        cfg.abstraction.eta = 0.1;
        let err = cmd_params(
            &cfg,
            &Overrides {
                tau: Some(5.0),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Core(trimabs::Error::Construction(_))), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn build_contains_worked_edge() {
        let mut cfg = jordan();
        cfg.abstraction.region_lower = vec![-1.0, -1.0];
        cfg.abstraction.region_upper = vec![2.0, 2.0];
        let ov = Overrides {
            tau: Some(1.0),
            ..Default::default()
        };
        let (model, _) = build_model(&cfg, &ov, false).unwrap();
        let src = model.find_state(&[2, -2]).unwrap();
        let dst = model.find_state(&[6, 14]).unwrap();
        let input = model.catalog().iter().position(|u| u.values()[0] == vec![1.1]).unwrap();
        assert!(model.edges().contains(&(src, input, dst)));
    }

    #[test]
    fn empty_region_builds_an_empty_model() {
        let mut cfg = jordan();
        cfg.abstraction.region_lower = vec![0.01, 0.01];
        cfg.abstraction.region_upper = vec![0.09, 0.09];
        let (model, _) = build_model(&cfg, &Overrides::default(), false).unwrap();
        assert_eq!(model.state_count(), 0);
        assert!(!model.export_text().contains("state "));
    }

    #[test]
    fn reduced_build_keeps_successors() {
        let mut cfg = jordan();
        cfg.abstraction.region_lower = vec![-0.3, -0.3];
        cfg.abstraction.region_upper = vec![0.3, 0.3];
        let ov = Overrides {
            tau: Some(0.5),
            ..Default::default()
        };
        let (full, _) = build_model(&cfg, &ov, false).unwrap();
        let (small, _) = build_model(&cfg, &ov, true).unwrap();
        assert!(small.edges().len() <= full.edges().len());
        for s in 0..full.state_count() {
            assert_eq!(full.successors(s), small.successors(s));
        }
    }

    #[test]
    fn input_specs() {
        assert_eq!(parse_input_spec("1.1").unwrap(), vec![vec![1.1]]);
        assert_eq!(
            parse_input_spec("1, 2; 3,4").unwrap(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0]]
        );
        assert!(parse_input_spec("x").is_err());
        assert!(parse_point("1;2").is_err());
    }

    #[test]
    fn simulate_worked_example() {
        let args = SimulateArgs {
            y0: vec![0.23, -0.24],
            x0: vec![0.2, -0.2],
            input: vec![vec![1.1]],
            tau: Some(1.0),
            dt: 1e-3,
        };
        let sim = run_simulation(&jordan(), &Overrides::default(), &args).unwrap();
        assert_eq!(sim.symbolic_successor, vec![0.6, 1.4]);
        assert!((sim.supervised_end[0] - 0.56).abs() < 5e-3);
        assert!((sim.supervised_end[1] - 1.35).abs() < 5e-3);
        assert!(vec_norm_inf(&vec_sub(&sim.quantized_end, &[0.6, 1.4])) < 0.12);
        assert!(sim.max_quantized_displacement < 0.48);
        assert!(sim.csv.starts_with("t,x1,x2,y1,y2,z1,z2,u1,v1,w1\n"));
        assert_eq!(sim.csv.lines().count(), 1002);
    }

    #[test]
    fn simulate_from_same_state_has_no_gap() {
        let args = SimulateArgs {
            y0: vec![0.2, -0.2],
            x0: vec![0.2, -0.2],
            input: vec![vec![1.1]],
            tau: Some(1.0),
            dt: 1e-3,
        };
        let sim = run_simulation(&jordan(), &Overrides::default(), &args).unwrap();
        let gap: f64 = line(&sim.summary, "max_supervisory_displacement").parse().unwrap();
        assert!(gap < 1e-9, "{gap}");
    }

    #[test]
    fn simulate_rejects_out_of_box_input() {
        let args = SimulateArgs {
            y0: vec![0.0, 0.0],
            x0: vec![0.0, 0.0],
            input: vec![vec![5.0]],
            tau: Some(1.0),
            dt: 1e-3,
        };
        let err = run_simulation(&jordan(), &Overrides::default(), &args).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn one_state_check_passes() {
        let cfg = Config::from_toml_str(include_str!("../configs/one_state.toml")).unwrap();
        let out = cmd_check(&cfg, &Overrides::default(), None).unwrap();
        assert!(out.verdict, "{}", out.stdout);
        assert!(out.notes.iter().any(|n| n.contains("near-completeness skipped")));
    }
}
