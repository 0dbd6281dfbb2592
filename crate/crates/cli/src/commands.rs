use crate::config::{
    load_config, resolve, ControllerFile, ExperimentConfig, GainsSource, LeaderSpec,
};
use crate::error::CliError;
use nalgebra::DVector;
use platoon_core::analysis::gamma_upper_bound;
use platoon_core::ingest::{
    read_trajectory_file, to_leader_trajectory, write_smoothed_csv, SmoothOptions,
    TrajectoryRecord,
};
use platoon_core::plant::{assemble_closed_loop, vehicle_model, FeedbackGains, VehicleModel};
use platoon_core::simulate::{
    simulate, summarize, write_trace_csv, DisturbanceProfile, LeaderTrajectory, TraceSummary,
};
use platoon_core::synthesis::{
    solve_lmi, synthesize_controller, verify_synthesis, SolveOptions, VerificationReport,
};
use platoon_core::topology::{
    build_coupling_matrix, check_lemma1, gershgorin_discs, spectral_factorization,
    DirectedPlatoonGraph, GraphFile, Lemma1Verdict, SeparationFailure, DEFAULT_SPECTRAL_TOL,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Gains ready for use plus the on-disk record describing where they came from.
struct ResolvedGains {
    gains: FeedbackGains,
    record: ControllerFile,
    synthesized: bool,
}

fn resolve_gains(
    cfg: &ExperimentConfig,
    base: &Path,
    model: &VehicleModel,
    lambda_min: f64,
) -> Result<ResolvedGains, CliError> {
    match &cfg.gains {
        GainsSource::Explicit { k, c } => {
            if !(*c > 0.0) {
                return Err(CliError::Parse(format!("gains.c = {c} must be positive")));
            }
            Ok(ResolvedGains {
                gains: FeedbackGains {
                    k_p: k[0],
                    k_v: k[1],
                    k_a: k[2],
                    c: *c,
                },
                record: ControllerFile {
                    tau: model.tau,
                    gamma_d: cfg.gamma_d,
                    k: *k,
                    alpha: None,
                    lambda_min,
                    c: *c,
                    margin: None,
                },
                synthesized: false,
            })
        }
        GainsSource::Synthesize { gamma_d } => {
            let sol = solve_lmi(model, *gamma_d, SolveOptions::default())?;
            let ctl = synthesize_controller(sol, model, lambda_min)?;
            let record = ControllerFile {
                tau: model.tau,
                gamma_d: *gamma_d,
                k: [ctl.gains.k_p, ctl.gains.k_v, ctl.gains.k_a],
                alpha: Some(ctl.solution.alpha),
                lambda_min,
                c: ctl.gains.c,
                margin: Some(ctl.solution.margin),
            };
            Ok(ResolvedGains {
                gains: ctl.gains,
                record,
                synthesized: true,
            })
        }
        GainsSource::ControllerFile { path } => {
            let p = resolve(base, path);
            let text = fs::read_to_string(&p)?;
            let file: ControllerFile = serde_json::from_str(&text)?;
            if (file.tau - model.tau).abs() > 1e-12 {
                return Err(CliError::Parse(format!(
                    "controller file tau {} does not match config tau {}",
                    file.tau, model.tau
                )));
            }
            let gains = FeedbackGains {
                k_p: file.k[0],
                k_v: file.k[1],
                k_a: file.k[2],
                c: file.c,
            };
            // keep the file's target and solver fields; lambda_min reflects this graph
            let record = ControllerFile { lambda_min, ..file };
            Ok(ResolvedGains {
                gains,
                record,
                synthesized: false,
            })
        }
    }
}

fn gains_label(src: &GainsSource) -> &'static str {
    match src {
        GainsSource::Explicit { .. } => "explicit",
        GainsSource::Synthesize { .. } => "synthesized",
        GainsSource::ControllerFile { .. } => "controller file",
    }
}

fn out_dir(flag: Option<&Path>, cfg_out: Option<&str>, base: &Path) -> Result<PathBuf, CliError> {
    let dir = match (flag, cfg_out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(rel)) => resolve(base, rel),
        (None, None) => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_verification(rep: &VerificationReport, gamma_d: f64) {
    println!("closed loop hurwitz: {}", rep.hurwitz);
    println!("spectral abscissa: {:.6}", rep.spectral_abscissa);
    if !rep.mode_norms.is_empty() {
        println!("mode norms (lambda: gamma):");
        for m in &rep.mode_norms {
            println!("  {:.6}: {:.6}", m.lambda, m.gamma);
        }
    }
    match rep.hinf {
        Some(g) => println!("hinf: {:.6} (target {gamma_d})", g),
        None => println!("hinf: unavailable (loop is not hurwitz)"),
    }
    println!("meets_target: {}", rep.meets_target);
}

#[derive(Serialize)]
struct DiscJson {
    node: usize,
    center: f64,
    radius: f64,
}

#[derive(Serialize)]
struct ModeJson {
    lambda: f64,
    gamma: f64,
}

#[derive(Serialize)]
struct AnalysisJson {
    topology: String,
    n_followers: usize,
    discs: Vec<DiscJson>,
    lemma1_satisfied: bool,
    ordering: Vec<usize>,
    eigenvalues: Vec<f64>,
    lambda_min: f64,
    residual: f64,
    cond_term: f64,
    gains: Option<ControllerFile>,
    amplification_bound: Option<f64>,
    mode_norms: Option<Vec<ModeJson>>,
    hurwitz: Option<bool>,
    spectral_abscissa: Option<f64>,
    hinf: Option<f64>,
    meets_target: Option<bool>,
}

pub fn analyze(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = fs::read_to_string(config)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let is_experiment = value.get("topology").is_some();
    let is_topology = value.get("n").is_some() && value.get("edges").is_some();
    if !is_experiment && !is_topology {
        return Err(CliError::Parse(
            "file is neither an experiment config (topology, tau, gains) \
             nor a topology (n, edges, self_weights, pinning)"
                .into(),
        ));
    }

    let (graph, topo_name, experiment) = if is_experiment {
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
        let graph = DirectedPlatoonGraph::load(&resolve(&base, &cfg.topology))?;
        let name = cfg.topology.clone();
        (graph, name, Some((cfg, base)))
    } else {
        let file: GraphFile = serde_json::from_str(&text)?;
        let graph = DirectedPlatoonGraph::from_file(&file)?;
        (graph, config.display().to_string(), None)
    };

    println!("topology: {topo_name} ({} followers)", graph.n_followers());
    let discs = gershgorin_discs(&graph);
    println!("discs (node: center, radius):");
    for d in &discs {
        println!("  {}: {:.6}, {:.6}", d.node, d.center, d.radius);
    }
    // the disc test is only sufficient, so a failure still gets the full
    // spectral report as diagnostics; the exit code signals it at the end
    let verdict = check_lemma1(&discs);
    let (ordering, disc_failure) = match &verdict {
        Lemma1Verdict::Satisfied { ordering } => {
            let order = ordering
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            println!("real-spectrum disc test: satisfied (centers ascending: {order})");
            (ordering.clone(), None)
        }
        Lemma1Verdict::NotSatisfied { nodes, reason } => {
            let msg = match reason {
                SeparationFailure::LeftmostNotPositive => {
                    format!("disc of node {} reaches the origin", nodes.0)
                }
                SeparationFailure::Overlap => {
                    format!("discs of nodes {} and {} overlap", nodes.0, nodes.1)
                }
            };
            println!("real-spectrum disc test: NOT satisfied ({msg})");
            (Vec::new(), Some(msg))
        }
    };

    let coupling = build_coupling_matrix(&graph);
    let f = spectral_factorization(&coupling, DEFAULT_SPECTRAL_TOL)?;
    let eigs = f
        .lambda
        .iter()
        .map(|l| format!("{l:.9}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!("coupling eigenvalues: {eigs}");
    println!("lambda_min: {:.9}", f.min_eigenvalue());
    println!("factorization residual: {:.3e}", f.reconstruction_residual);
    let cond_term = gamma_upper_bound(&f, 1.0).cond_term;
    println!("cond_term: {cond_term:.6}");

    let mut json = AnalysisJson {
        topology: topo_name,
        n_followers: graph.n_followers(),
        discs: discs
            .iter()
            .map(|d| DiscJson {
                node: d.node,
                center: d.center,
                radius: d.radius,
            })
            .collect(),
        lemma1_satisfied: disc_failure.is_none(),
        ordering,
        eigenvalues: f.lambda.iter().copied().collect(),
        lambda_min: f.min_eigenvalue(),
        residual: f.reconstruction_residual,
        cond_term,
        gains: None,
        amplification_bound: None,
        mode_norms: None,
        hurwitz: None,
        spectral_abscissa: None,
        hinf: None,
        meets_target: None,
    };

    if let Some((cfg, base)) = &experiment {
        let model = vehicle_model(cfg.tau)?;
        let r = resolve_gains(cfg, base, &model, f.min_eigenvalue())?;
        println!(
            "gains ({}): k = [{}, {}, {}], c = {:.6}",
            gains_label(&cfg.gains),
            r.gains.k_p,
            r.gains.k_v,
            r.gains.k_a,
            r.gains.c
        );
        // bound for the loop as configured: coupling folds into the position gain
        let bound = gamma_upper_bound(&f, r.gains.c * r.gains.k_p).bound;
        println!("worst-case amplification bound: {bound:.6}");
        let report = verify_synthesis(&graph, &model, &r.gains, Some(&f), r.record.gamma_d);
        print_verification(&report, r.record.gamma_d);
        json.amplification_bound = Some(bound);
        json.mode_norms = Some(
            report
                .mode_norms
                .iter()
                .map(|m| ModeJson {
                    lambda: m.lambda,
                    gamma: m.gamma,
                })
                .collect(),
        );
        json.hurwitz = Some(report.hurwitz);
        json.spectral_abscissa = Some(report.spectral_abscissa);
        json.hinf = report.hinf;
        json.meets_target = Some(report.meets_target);
        json.gains = Some(r.record);
    }

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let path = dir.join("analysis.json");
        write_json(&path, &json)?;
        println!("wrote {}", path.display());
    }
    match disc_failure {
        Some(msg) => Err(CliError::Lemma1(msg)),
        None => Ok(()),
    }
}

pub fn synthesize(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (cfg, base) = load_config(config)?;
    let model = vehicle_model(cfg.tau)?;
    let graph = DirectedPlatoonGraph::load(&resolve(&base, &cfg.topology))?;
    let coupling = build_coupling_matrix(&graph);
    let f = spectral_factorization(&coupling, DEFAULT_SPECTRAL_TOL)?;
    let r = resolve_gains(&cfg, &base, &model, f.min_eigenvalue())?;

    if r.synthesized {
        println!(
            "solver: alpha = {:.6}, margin = {:.3e}",
            r.record.alpha.unwrap(),
            r.record.margin.unwrap()
        );
    } else {
        println!("solver: skipped (gains supplied; verification only)");
    }
    println!("lambda_min: {:.9}", f.min_eigenvalue());
    println!(
        "k: [{}, {}, {}]",
        r.gains.k_p, r.gains.k_v, r.gains.k_a
    );
    println!("c: {:.6}", r.gains.c);
    let report = verify_synthesis(&graph, &model, &r.gains, Some(&f), r.record.gamma_d);
    print_verification(&report, r.record.gamma_d);

    let dir = out_dir(out, cfg.out.as_deref(), &base)?;
    let path = dir.join("controller.json");
    write_json(&path, &r.record)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Everything `report` needs to rebuild a table row, mirrored into summary.json.
#[derive(Serialize, Deserialize)]
pub struct RunSummary {
    pub topology: String,
    pub tau: f64,
    pub k: [f64; 3],
    pub c: f64,
    pub lambda_min: f64,
    pub gamma_d: f64,
    pub spacing_gap: f64,
    pub disturbance: DisturbanceProfile,
    pub summary: TraceSummary,
}

pub fn run_simulate(
    config: &Path,
    out: Option<&Path>,
    dt: Option<f64>,
    horizon: Option<f64>,
) -> Result<(), CliError> {
    let (mut cfg, base) = load_config(config)?;
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    let model = vehicle_model(cfg.tau)?;
    let graph = DirectedPlatoonGraph::load(&resolve(&base, &cfg.topology))?;
    let coupling = build_coupling_matrix(&graph);
    let f = spectral_factorization(&coupling, DEFAULT_SPECTRAL_TOL)?;
    let r = resolve_gains(&cfg, &base, &model, f.min_eigenvalue())?;
    let sys = assemble_closed_loop(&graph, &model, &r.gains);
    let leader = match &cfg.leader {
        LeaderSpec::ConstantSpeed { v0 } => LeaderTrajectory::ConstantSpeed { v0: *v0 },
        LeaderSpec::SampledFile { path } => {
            let text = fs::read_to_string(resolve(&base, path))?;
            serde_json::from_str(&text)?
        }
    };
    let x0 = DVector::zeros(3 * graph.n_followers());
    let trace = simulate(&sys, &cfg.disturbance, &leader, &x0, cfg.horizon, cfg.dt)?;

    // fit the decay only on a window that is cleanly past the disturbance
    let decay_window = match cfg.disturbance {
        DisturbanceProfile::Zero => None,
        DisturbanceProfile::SinePulse { end, .. } | DisturbanceProfile::Drag { end, .. } => {
            (cfg.horizon > end + 2.0).then_some((end + 1.0, cfg.horizon))
        }
    };
    let summary = summarize(&trace, decay_window);
    let run = RunSummary {
        topology: cfg.topology.clone(),
        tau: cfg.tau,
        k: [r.gains.k_p, r.gains.k_v, r.gains.k_a],
        c: r.gains.c,
        lambda_min: f.min_eigenvalue(),
        gamma_d: r.record.gamma_d,
        spacing_gap: cfg.spacing_gap,
        disturbance: cfg.disturbance,
        summary,
    };

    println!(
        "followers: {}, horizon: {} s, dt: {}",
        graph.n_followers(),
        cfg.horizon,
        cfg.dt
    );
    println!("gains ({}): c = {:.6}", gains_label(&cfg.gains), r.gains.c);
    println!("peak spacing error: {:.6}", run.summary.peak_spacing_error);
    println!("final state norm: {:.6e}", run.summary.final_state_norm);
    match run.summary.l2_gain {
        Some(g) => println!("observed gain: {g:.6}"),
        None => println!("observed gain: undefined (zero disturbance)"),
    }
    if let Some(rate) = run.summary.decay_rate {
        println!("post-disturbance decay rate: {rate:.6}");
    }

    let dir = out_dir(out, cfg.out.as_deref(), &base)?;
    let trace_path = dir.join("trace.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&trace_path)?);
    write_trace_csv(&trace, &mut w)?;
    w.flush()?;
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &run)?;
    println!("wrote {}", trace_path.display());
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn median_spacing(records: &[TrajectoryRecord]) -> Option<f64> {
    if records.len() < 2 {
        return None;
    }
    let mut diffs: Vec<f64> = records.windows(2).map(|w| w[1].t - w[0].t).collect();
    diffs.sort_by(f64::total_cmp);
    Some(diffs[diffs.len() / 2])
}

pub fn ingest(
    input: &Path,
    out: Option<&Path>,
    span: f64,
    iters: usize,
    dt: Option<f64>,
) -> Result<(), CliError> {
    let records = read_trajectory_file(input)?;
    let dt = match dt {
        Some(v) => v,
        None => median_spacing(&records).ok_or_else(|| {
            CliError::Parse("cannot infer dt from fewer than 2 samples; pass --dt".into())
        })?,
    };
    let opts = SmoothOptions {
        span,
        robustness_iters: iters,
    };
    let leader = to_leader_trajectory(&records, opts, dt)?;

    println!("rows in: {}", records.len());
    println!(
        "time range: [{}, {}]",
        leader.t[0],
        leader.t.last().unwrap()
    );
    println!("span: {span}, robustness iters: {iters}, dt: {dt}");
    println!("rows out: {}", leader.t.len());

    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("smoothed.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&csv_path)?);
    write_smoothed_csv(&leader, &mut w)?;
    w.flush()?;
    let leader_path = dir.join("leader.json");
    write_json(&leader_path, &LeaderTrajectory::Sampled(leader))?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", leader_path.display());
    Ok(())
}

pub fn report(dir: &Path) -> Result<(), CliError> {
    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    let own = dir.join("summary.json");
    if own.is_file() {
        entries.push((".".into(), own));
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    for sub in subs {
        let s = sub.join("summary.json");
        if s.is_file() {
            let name = sub
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| sub.display().to_string());
            entries.push((name, s));
        }
    }

    let mut rows: Vec<(String, RunSummary)> = Vec::new();
    let mut skipped = 0usize;
    for (name, path) in entries {
        let parsed = fs::read_to_string(&path)
            .map_err(CliError::from)
            .and_then(|t| serde_json::from_str::<RunSummary>(&t).map_err(CliError::from));
        match parsed {
            Ok(r) => rows.push((name, r)),
            Err(e) => {
                eprintln!("warning: {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Io(format!(
            "no completed runs (summary.json) under {}",
            dir.display()
        )));
    }

    println!(
        "{:<16} {:>2} {:>6} {:>24} {:>12} {:>8} {:>8} {:>10} {:>12}",
        "run", "n", "tau", "k", "lambda_min", "c", "gain", "peak", "final_norm"
    );
    for (name, r) in &rows {
        let k = format!("[{:.3}, {:.3}, {:.3}]", r.k[0], r.k[1], r.k[2]);
        let gain = r
            .summary
            .l2_gain
            .map(|g| format!("{g:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<16} {:>2} {:>6.3} {:>24} {:>12.6} {:>8.4} {:>8} {:>10.4} {:>12.3e}",
            name,
            r.summary.n_followers,
            r.tau,
            k,
            r.lambda_min,
            r.c,
            gain,
            r.summary.peak_spacing_error,
            r.summary.final_state_norm
        );
    }
    println!("{} run(s) reported, {} skipped", rows.len(), skipped);
    Ok(())
}
