use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use stokes_core::verify::{quick_suite, spatial_study, stability_mode, temporal_study};
use stokes_core::{
    check_stability, observed_orders, run, Forcing, GridSpec, Lcg64, ManufacturedCase, NoForcing, RunOutput,
    SchemeConfig, SchemeKind, SchemeState, SteadyForcing, StepReport, StokesError, VelocityField,
};

use crate::config::{Config, FieldSource};
use crate::output::{self, f};

#[derive(Debug, Clone, Copy)]
pub enum Which {
    Run,
    Converge,
    Stability,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    MonitorFailed,
}

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<StokesError> for Failure {
    fn from(e: StokesError) -> Self {
        match e {
            StokesError::InvalidGrid(_)
            | StokesError::InvalidPartition(_)
            | StokesError::InvalidConfig(_)
            | StokesError::SizeGuard { .. } => Failure::Config(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<Outcome, Failure>;

/// Convergence ratios that count as first order.
const RATIO_BAND: (f64, f64) = (1.7, 2.3);
const MIN_SPATIAL_ORDER: f64 = 0.8;
/// Post-projection divergence may exceed the CG target by this factor.
const DIVERGENCE_FACTOR: f64 = 1e2;

pub fn execute(which: Which, cfg: &Config) -> CmdResult {
    match which {
        Which::Run => cmd_run(cfg),
        Which::Converge => cmd_converge(cfg),
        Which::Stability => cmd_stability(cfg),
        Which::Verify => cmd_verify(cfg),
    }
}

fn out_dir(cfg: &Config) -> Result<PathBuf, Failure> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Config)?;
    Ok(dir)
}

struct Monitor {
    name: String,
    passed: bool,
    detail: String,
}

impl Monitor {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

fn report_monitors(monitors: &[Monitor]) -> Outcome {
    for m in monitors {
        println!("{} {}: {}", if m.passed { "PASS" } else { "FAIL" }, m.name, m.detail);
    }
    if monitors.iter().all(|m| m.passed) {
        Outcome::Passed
    } else {
        Outcome::MonitorFailed
    }
}

/// Writes the resolved config followed by run facts as comments, so the file
/// itself can be passed back through `--config`.
fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &Config,
    facts: &[(String, String)],
    outputs: &[String],
    started: Instant,
    monitors: &[Monitor],
) -> anyhow::Result<()> {
    let mut text = format!("# stokes-dd {command} manifest\n# rerun: stokes-dd {command} --config manifest.cfg\n");
    for (k, v) in facts {
        let _ = writeln!(text, "# {k}: {v}");
    }
    let _ = writeln!(text, "# outputs: {}", outputs.join(" "));
    let _ = writeln!(text, "# wall_clock_seconds: {:.3}", started.elapsed().as_secs_f64());
    for m in monitors {
        let _ = writeln!(
            text,
            "# monitor {}: {} ({})",
            m.name,
            if m.passed { "pass" } else { "fail" },
            m.detail
        );
    }
    text.push('\n');
    text.push_str(&cfg.render());
    output::write(&dir.join("manifest.cfg"), &text)
}

fn field(src: FieldSource, grid: &GridSpec, case: &ManufacturedCase, rng: &mut Lcg64) -> VelocityField {
    match src {
        FieldSource::Zero => VelocityField::zeros(grid),
        FieldSource::Manufactured => case.exact_velocity(grid, 0.0),
        FieldSource::Random => rng.velocity(grid),
    }
}

fn forcing(src: FieldSource, grid: &GridSpec, case: &ManufacturedCase, rng: &mut Lcg64) -> Arc<dyn Forcing> {
    match src {
        FieldSource::Zero => Arc::new(NoForcing),
        FieldSource::Manufactured => Arc::new(*case),
        FieldSource::Random => Arc::new(SteadyForcing(rng.velocity(grid))),
    }
}

/// Largest post-projection divergence relative to its allowed bound; `≤ 1`
/// passes.
fn divergence_excess(reports: &[StepReport], tau: f64, cfg: &SchemeConfig) -> f64 {
    let allowed = |before: f64| DIVERGENCE_FACTOR * (cfg.solver.rel_tol * before).max(tau * cfg.solver.abs_tol);
    let mut worst = 0.0_f64;
    for r in reports {
        if r.substep_divergence.is_empty() {
            worst = worst.max(r.div_residual / allowed(r.div_scale));
        }
        for &(after, before) in &r.substep_divergence {
            worst = worst.max(after / allowed(before));
        }
    }
    worst
}

fn describe_kind(kind: SchemeKind) -> String {
    match kind {
        SchemeKind::Monolithic => "monolithic".into(),
        SchemeKind::Decomposed { m, overlap } => format!("decomposed m={m} overlap={overlap}"),
    }
}

fn cmd_run(cfg: &Config) -> CmdResult {
    let started = Instant::now();
    let grid = cfg.grid()?;
    let solver = cfg.solver()?;
    let case = ManufacturedCase::new(&grid, cfg.nu);
    let mut rng = Lcg64::new(cfg.seed);
    let initial = field(cfg.initial, &grid, &case, &mut rng);
    let scheme = SchemeConfig {
        snapshot_every: cfg.snapshot_every,
        ..SchemeConfig::new(grid, cfg.tau, cfg.t_final, cfg.nu, cfg.kind())
            .with_initial(initial)
            .with_forcing(forcing(cfg.forcing, &grid, &case, &mut rng))
            .with_solver(solver)
    };
    scheme.validate()?;
    let dir = out_dir(cfg)?;

    let out = match run(&scheme) {
        Ok(o) => o,
        Err(aborted) => {
            output::write(&dir.join("steps.csv"), &output::steps_csv(&aborted.reports))?;
            return Err(aborted.error.into());
        }
    };
    let mut outputs = vec!["steps.csv".to_string()];
    output::write(&dir.join("steps.csv"), &output::steps_csv(&out.reports))?;
    outputs.extend(write_fields(&dir, &out)?);

    let tau = out.tau;
    let stab = check_stability(&out.reports, tau, stability_mode(&scheme)?);
    let excess = divergence_excess(&out.reports, tau, &scheme);
    let monitors = vec![
        Monitor::new(
            "energy estimate",
            stab.passed,
            format!(
                "worst relative margin {:e} at step {}, max growth {:e}",
                stab.worst_margin, stab.worst_step, stab.max_growth
            ),
        ),
        Monitor::new(
            "divergence",
            excess <= 1.0,
            format!("worst residual / bound {excess:e}"),
        ),
    ];
    if let Some(sharp) = stab.sharp_bound_ok {
        println!("info sharp monolithic bound held: {sharp}");
    }

    let mut facts = vec![
        ("scheme".to_string(), describe_kind(scheme.kind)),
        (
            "grid".to_string(),
            format!("{}x{} on [0,{}]x[0,{}]", grid.n1, grid.n2, grid.l1, grid.l2),
        ),
        ("tau_effective".to_string(), f(tau)),
        ("steps".to_string(), out.steps.to_string()),
    ];
    if let Some(p) = &out.partition {
        let extents: Vec<String> = (0..p.m()).map(|a| format!("{:?}", p.extent(a))).collect();
        facts.push(("partition_extents".into(), extents.join(" ")));
    }
    if cfg.initial == FieldSource::Manufactured && cfg.forcing == FieldSource::Manufactured {
        let exact = case.exact_velocity(&grid, out.steps as f64 * tau);
        let err = out.final_velocity.sub(&exact)?.norm();
        facts.push(("error_vs_manufactured".into(), f(err)));
    }
    let status = report_monitors(&monitors);
    write_manifest(&dir, "run", cfg, &facts, &outputs, started, &monitors)?;
    Ok(status)
}

fn write_fields(dir: &Path, out: &RunOutput) -> anyhow::Result<Vec<String>> {
    let mut names = Vec::new();
    for s in &out.snapshots {
        let name = if s.step == out.steps {
            "velocity_final.csv".to_string()
        } else {
            format!("velocity_step{:06}.csv", s.step)
        };
        output::write(&dir.join(&name), &output::velocity_csv(&s.velocity))?;
        names.push(name);
    }
    match &out.final_state {
        SchemeState::Monolithic { pressure, .. } => {
            output::write(&dir.join("pressure_final.csv"), &output::pressure_csv(pressure))?;
            names.push("pressure_final.csv".into());
        }
        SchemeState::Decomposed { pressures, .. } => {
            for (a, p) in pressures.iter().enumerate() {
                let name = format!("pressure_substep{}.csv", a + 1);
                output::write(&dir.join(&name), &output::pressure_csv(p))?;
                names.push(name);
            }
            if let Some(p) = &out.composite_pressure {
                // Σ η_α² p^(α): a display aid, not a quantity the scheme defines.
                let name = "pressure_composite_diagnostic.csv".to_string();
                output::write(&dir.join(&name), &output::pressure_csv(p))?;
                names.push(name);
            }
        }
    }
    Ok(names)
}

fn in_band(r: f64) -> bool {
    (RATIO_BAND.0..=RATIO_BAND.1).contains(&r)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn cmd_converge(cfg: &Config) -> CmdResult {
    let started = Instant::now();
    let solver = cfg.solver()?;
    let n_fine = *cfg
        .grids
        .iter()
        .max()
        .ok_or_else(|| Failure::Config(anyhow!("grids is empty")))?;
    let grid = GridSpec::unit_square(n_fine)?;
    let mut taus = cfg.conv_taus.clone();
    taus.sort_by(|a, b| b.total_cmp(a));
    let reference_tau = taus[taus.len() - 1] / cfg.reference_factor.max(1) as f64;
    let dir = out_dir(cfg)?;

    let mut kinds = vec![SchemeKind::Monolithic];
    if let k @ SchemeKind::Decomposed { .. } = cfg.kind() {
        kinds.push(k);
    }
    let mut monitors = Vec::new();
    let mut temporal = String::from("scheme,n,tau,error_reference,error_exact,ratio,order\n");
    let mut studies = Vec::new();
    for &kind in &kinds {
        let study = temporal_study(grid, cfg.nu, cfg.t_final, kind, &taus, reference_tau, solver)?;
        let ratios = study.ratios();
        let orders = study.orders();
        for (k, row) in study.rows.iter().enumerate() {
            let (ratio, order) = if k == 0 {
                (String::new(), String::new())
            } else {
                (f(ratios[k - 1]), f(orders[k - 1]))
            };
            let _ = writeln!(
                temporal,
                "{},{},{},{},{},{},{}",
                kind.name(),
                n_fine,
                f(row.tau),
                f(row.error_reference),
                f(row.error_exact),
                ratio,
                order
            );
        }
        monitors.push(Monitor::new(
            format!("temporal ratios ({})", describe_kind(kind)),
            ratios.iter().all(|&r| in_band(r)),
            format!("[{}] vs band [{}, {}]", fmt_list(&ratios), RATIO_BAND.0, RATIO_BAND.1),
        ));
        studies.push(study);
    }
    output::write(&dir.join("temporal.csv"), &temporal)?;
    let mut outputs = vec!["temporal.csv".to_string()];

    if let [mono, dd] = &studies[..] {
        let mut gap_csv = String::from("tau,gap,ratio,order\n");
        let gaps: Vec<f64> = mono
            .rows
            .iter()
            .zip(&dd.rows)
            .map(|(a, b)| a.velocity.sub(&b.velocity).map(|d| d.norm()))
            .collect::<Result<_, _>>()?;
        let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
        let orders = observed_orders(&taus, &gaps);
        for (k, (&tau, &gap)) in taus.iter().zip(&gaps).enumerate() {
            let (r, o) = if k == 0 {
                (String::new(), String::new())
            } else {
                (f(ratios[k - 1]), f(orders[k - 1]))
            };
            let _ = writeln!(gap_csv, "{},{},{},{}", f(tau), f(gap), r, o);
        }
        output::write(&dir.join("gap.csv"), &gap_csv)?;
        outputs.push("gap.csv".into());
        monitors.push(Monitor::new(
            "decomposed-vs-monolithic gap ratios",
            ratios.iter().all(|&r| in_band(r)),
            format!("[{}] vs band [{}, {}]", fmt_list(&ratios), RATIO_BAND.0, RATIO_BAND.1),
        ));
    }

    let mut grids = cfg.grids.clone();
    grids.sort_unstable();
    let rows = spatial_study(
        &grids,
        cfg.nu,
        cfg.t_final,
        cfg.spatial_tau,
        |_| SchemeKind::Monolithic,
        solver,
    )?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let orders = observed_orders(&hs, &errs);
    let mut spatial = String::from("n,h,tau,error,order\n");
    for (k, r) in rows.iter().enumerate() {
        let o = if k == 0 { String::new() } else { f(orders[k - 1]) };
        let _ = writeln!(
            spatial,
            "{},{},{},{},{}",
            r.n,
            f(r.h),
            f(cfg.spatial_tau),
            f(r.error),
            o
        );
    }
    output::write(&dir.join("spatial.csv"), &spatial)?;
    outputs.push("spatial.csv".into());
    monitors.push(Monitor::new(
        "spatial order (monolithic)",
        orders.iter().all(|&o| o >= MIN_SPATIAL_ORDER),
        format!("[{}] vs minimum {MIN_SPATIAL_ORDER}", fmt_list(&orders)),
    ));

    let status = report_monitors(&monitors);
    let facts = vec![
        ("temporal_grid".to_string(), format!("{n_fine}x{n_fine} unit square")),
        ("reference_tau".to_string(), f(reference_tau)),
        (
            "schemes".to_string(),
            kinds.iter().map(|&k| describe_kind(k)).collect::<Vec<_>>().join("; "),
        ),
    ];
    write_manifest(&dir, "converge", cfg, &facts, &outputs, started, &monitors)?;
    Ok(status)
}

fn cmd_stability(cfg: &Config) -> CmdResult {
    let started = Instant::now();
    let grid = cfg.grid()?;
    let solver = cfg.solver()?;
    let taus = if cfg.is_explicit("tau") && !cfg.is_explicit("taus") {
        vec![cfg.tau]
    } else {
        cfg.taus.clone()
    };
    // Random data and no forcing unless the config asks otherwise.
    let initial_src = if cfg.is_explicit("initial") {
        cfg.initial
    } else {
        FieldSource::Random
    };
    let forcing_src = if cfg.is_explicit("forcing") {
        cfg.forcing
    } else {
        FieldSource::Zero
    };
    if cfg.steps == 0 {
        return Err(Failure::Config(anyhow!("steps must be positive")));
    }
    let dir = out_dir(cfg)?;
    let case = ManufacturedCase::new(&grid, cfg.nu);

    let mut per_step = String::from("tau,step,norm_state,norm_end,bound_margin,relative_margin,non_increasing\n");
    let mut summary =
        String::from("tau,steps,passed,worst_margin,max_growth,monotone,integrated_ok,sharp_bound_ok,max_norm\n");
    let mut monitors = Vec::new();
    for &tau in &taus {
        let mut rng = Lcg64::new(cfg.seed);
        let initial = field(initial_src, &grid, &case, &mut rng);
        let scheme = SchemeConfig::new(grid, tau, tau * cfg.steps as f64, cfg.nu, cfg.kind())
            .with_initial(initial)
            .with_forcing(forcing(forcing_src, &grid, &case, &mut rng))
            .with_solver(solver);
        let out = run(&scheme).map_err(|a| Failure::Runtime(anyhow!("tau = {tau}: {}", a)))?;
        let chk = check_stability(&out.reports, out.tau, stability_mode(&scheme)?);
        for r in &out.reports {
            let bound = r.norm_end * r.norm_end + r.bound_margin;
            let rel = r.bound_margin / bound.max(r.norm_end * r.norm_end).max(f64::MIN_POSITIVE);
            let _ = writeln!(
                per_step,
                "{},{},{},{},{},{},{}",
                f(tau),
                r.step,
                f(r.norm_state),
                f(r.norm_end),
                f(r.bound_margin),
                f(rel),
                u8::from(r.norm_end <= r.norm_state)
            );
        }
        let max_norm = out.reports.iter().map(|r| r.norm_end).fold(0.0, f64::max);
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            f(tau),
            out.steps,
            u8::from(chk.passed),
            f(chk.worst_margin),
            f(chk.max_growth),
            u8::from(chk.monotone),
            u8::from(chk.integrated_ok),
            chk.sharp_bound_ok.map_or(String::new(), |b| u8::from(b).to_string()),
            f(max_norm)
        );
        monitors.push(Monitor::new(
            format!("stability tau={tau}"),
            chk.passed,
            format!(
                "worst relative margin {:e}, max growth {:e}, monotone {}",
                chk.worst_margin, chk.max_growth, chk.monotone
            ),
        ));
    }
    output::write(&dir.join("stability.csv"), &per_step)?;
    output::write(&dir.join("stability_summary.csv"), &summary)?;
    let status = report_monitors(&monitors);
    let facts = vec![
        ("scheme".to_string(), describe_kind(cfg.kind())),
        ("taus".to_string(), fmt_list(&taus)),
        ("initial".to_string(), format!("{initial_src:?}")),
        ("forcing".to_string(), format!("{forcing_src:?}")),
    ];
    let outputs = vec!["stability.csv".to_string(), "stability_summary.csv".to_string()];
    // Record the effective sweep so the manifest reruns it verbatim.
    let mut resolved = cfg.clone();
    resolved.set("initial", initial_src.as_str())?;
    resolved.set("forcing", forcing_src.as_str())?;
    resolved.taus = taus;
    write_manifest(&dir, "stability", &resolved, &facts, &outputs, started, &monitors)?;
    Ok(status)
}

fn cmd_verify(cfg: &Config) -> CmdResult {
    let outcomes = quick_suite(cfg.seed)?;
    let monitors: Vec<Monitor> = outcomes
        .into_iter()
        .map(|o| Monitor::new(o.name, o.passed, o.detail))
        .collect();
    Ok(report_monitors(&monitors))
}
