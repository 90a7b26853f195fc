//! Subcommand execution.

use std::io::Write;
use std::sync::Arc;

use bathysize_core::acceptance;
use bathysize_core::dtn::{assemble_dtn, dtn_spectrum, strip_eigenvalue, vertical_velocity, write_spectrum_csv};
use bathysize_core::geometry::hypothesis_report;
use bathysize_core::harness::{convergence_study, evaluate_pair, fit_by_datum, run_sweep, BottomPair, SweepPlan};
use bathysize_core::mesh::build_mesh;
use bathysize_core::report::{
    convergence_plot_from_csv, eta_plot_from_csv, line_plot, write_convergence_csv, write_fit_csv, write_sweep_csv,
    write_window_csv, PlotSpec, Series,
};
use bathysize_core::solver::{boundary_flux, energy, solve_potential, total_boundary_flux};
use bathysize_core::{BoundaryTag, CavityDescription, Profile, SurfaceTrace};

use crate::artifacts::Artifacts;
use crate::config::{Format, RunConfig, Subcommand};
use crate::error::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let canonical = cfg.canonical();
    let mut out = Artifacts::create(&cfg.output.directory, &cfg.output.formats, &canonical)?;
    log::info!("{} into {} (input sha256 {})", cfg.subcommand.name(), cfg.output.directory.display(), out.input_hash());
    out.write("config.toml", None, canonical.as_bytes())?;
    let stage = cfg.subcommand.name();
    match cfg.subcommand {
        Subcommand::Solve => solve(cfg, &mut out),
        Subcommand::Dtn => dtn(cfg, &mut out),
        Subcommand::Estimate => estimate(cfg, &mut out),
        Subcommand::Sweep => sweep(cfg, &mut out),
        Subcommand::Converge => converge(cfg, &mut out),
        Subcommand::Verify => verify(&mut out),
    }
    .map_err(|e| e.context(stage))
}

fn solve(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let d = &cfg.discretization;
    let mesh = Arc::new(build_mesh(&cfg.fluid_domain()?, d.nx, d.ny)?);
    out.write_with("mesh.txt", Some(Format::Txt), |w| mesh.write_text(w))?;
    let mut summary = Vec::new();
    writeln!(summary, "solve on {}x{} ({} nodes, {} triangles)", d.nx, d.ny, mesh.num_nodes(), mesh.triangles.len())?;
    for datum in &cfg.data {
        let name = datum.name();
        let psi = SurfaceTrace::top(&mesh, datum.values(mesh.column_xs(), cfg.domain.width)?)?;
        let phi = solve_potential(&mesh, std::slice::from_ref(&psi), cfg.solver())?;
        let flux = boundary_flux(&phi, BoundaryTag::Top)?;
        out.write_with(&format!("field_{name}.csv"), Some(Format::Csv), |w| {
            writeln!(w, "x,y,phi")?;
            for (p, v) in mesh.nodes.iter().zip(phi.values()) {
                writeln!(w, "{:.17e},{:.17e},{:.17e}", p[0], p[1], v)?;
            }
            Ok(())
        })?;
        out.write_with(&format!("trace_{name}.csv"), Some(Format::Csv), |w| write_trace(w, &psi, &flux))?;
        let svg = line_plot(
            &PlotSpec {
                title: format!("surface data and flux density ({name})"),
                x_label: "x".into(),
                y_label: "value".into(),
                log_x: false,
                log_y: false,
            },
            &[
                Series { name: "psi".into(), points: psi.xs.iter().copied().zip(psi.values.iter().copied()).collect() },
                Series { name: "flux".into(), points: flux.xs.iter().copied().zip(flux.values.iter().copied()).collect() },
            ],
        );
        out.write(&format!("trace_{name}.svg"), Some(Format::Svg), svg.as_bytes())?;
        let max_abs = phi.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        writeln!(summary, "datum {name}")?;
        writeln!(summary, "  energy               {:.10e}", energy(&phi))?;
        writeln!(summary, "  max |phi|            {max_abs:.10e}")?;
        writeln!(summary, "  relative residual    {:.3e}", phi.relative_residual().unwrap_or(f64::NAN))?;
        writeln!(summary, "  total boundary flux  {:.3e}", total_boundary_flux(&phi)?)?;
    }
    out.write("solve.txt", Some(Format::Txt), &summary)
}

fn write_trace(w: &mut Vec<u8>, psi: &SurfaceTrace, flux: &SurfaceTrace) -> std::io::Result<()> {
    writeln!(w, "x,arclength,weight,psi,flux")?;
    for i in 0..psi.len() {
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            psi.xs[i], psi.arclength[i], psi.weights[i], psi.values[i], flux.values[i]
        )?;
    }
    Ok(())
}

fn flat_depth(cfg: &RunConfig) -> Option<f64> {
    match (&cfg.domain.bottom, &cfg.domain.surface) {
        (Profile::Flat { level: b }, Profile::Flat { level: z }) => Some(z - b),
        _ => None,
    }
}

fn dtn(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let d = &cfg.discretization;
    let mesh = Arc::new(build_mesh(&cfg.fluid_domain()?, d.nx, d.ny)?);
    let g = assemble_dtn(&mesh, cfg.solver())?;
    out.write_with("dtn.csv", Some(Format::Csv), |w| g.write_csv(w))?;
    let pairs = dtn_spectrum(&g, cfg.k_max)?;
    let width = cfg.domain.width;
    let depth = flat_depth(cfg);
    let analytic = depth.map(|h| move |k: usize| strip_eigenvalue(k, width, h));
    out.write_with("spectrum.csv", Some(Format::Csv), |w| {
        write_spectrum_csv(w, &pairs, analytic.as_ref().map(|f| f as &dyn Fn(usize) -> f64))
    })?;
    let mut series = vec![Series {
        name: "discrete".into(),
        points: pairs.iter().enumerate().map(|(k, p)| (k as f64, p.value)).collect(),
    }];
    if let Some(f) = &analytic {
        series.push(Series { name: "strip".into(), points: (0..pairs.len()).map(|k| (k as f64, f(k))).collect() });
    }
    let spec = PlotSpec {
        title: "Dirichlet-to-Neumann spectrum".into(),
        x_label: "k".into(),
        y_label: "lambda".into(),
        log_x: false,
        log_y: false,
    };
    out.write("spectrum.svg", Some(Format::Svg), line_plot(&spec, &series).as_bytes())?;

    for datum in &cfg.data {
        let psi = SurfaceTrace::top(&mesh, datum.values(mesh.column_xs(), width)?)?;
        let gpsi = g.apply(&psi)?;
        let vy = vertical_velocity(&g, &psi, &cfg.domain.surface)?;
        out.write_with(&format!("velocity_{}.csv", datum.name()), Some(Format::Csv), |w| {
            writeln!(w, "x,psi,g_psi,phi_y")?;
            for i in 0..psi.len() {
                writeln!(w, "{:.17e},{:.17e},{:.17e},{:.17e}", psi.xs[i], psi.values[i], gpsi.values[i], vy.values[i])?;
            }
            Ok(())
        })?;
    }

    let (lo, hi) = (pairs.first().map(|p| p.value), pairs.last().map(|p| p.value));
    let mut s = Vec::new();
    writeln!(s, "Dirichlet-to-Neumann operator on {}x{}, {} surface nodes", d.nx, d.ny, g.dim())?;
    writeln!(s, "  asymmetry before symmetrization {:.3e}", g.asymmetry())?;
    writeln!(s, "  smallest / largest reported eigenvalue {:?} / {:?}", lo, hi)?;
    for (k, p) in pairs.iter().enumerate() {
        match &analytic {
            Some(f) => writeln!(s, "  k={k} lambda={:.10e} strip={:.10e}", p.value, f(k))?,
            None => writeln!(s, "  k={k} lambda={:.10e}", p.value)?,
        }
    }
    out.write("dtn.txt", Some(Format::Txt), &s)
}

fn estimate(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let second = cfg
        .domain
        .second_bottom
        .clone()
        .ok_or_else(|| CliError::Config("estimate needs domain.second_bottom".into()))?;
    let pair = BottomPair::classify(cfg.domain.width, cfg.domain.surface.clone(), cfg.domain.bottom.clone(), second)?;
    log::info!("bottoms classified as {}", pair.case);
    let d = &cfg.discretization;
    let rows: Vec<_> = cfg
        .data
        .iter()
        .map(|datum| evaluate_pair(&pair, 0.0, datum, (d.nx, d.ny), &cfg.windows, cfg.solver()))
        .collect();
    out.write_with("estimate.csv", Some(Format::Csv), |w| write_sweep_csv(w, &rows))?;
    if !cfg.windows.is_empty() {
        out.write_with("windows.csv", Some(Format::Csv), |w| write_window_csv(w, &rows))?;
    }

    let cavity = CavityDescription::new(pair.width, pair.reference.clone(), pair.perturbed.clone())?;
    let h = hypothesis_report(&cavity, cfg.report.r, cfg.report.fatness_h, 256);
    let mut s = Vec::new();
    writeln!(s, "hypotheses")?;
    if h.degenerate {
        writeln!(s, "  cavity is degenerate (|D| = {:.3e})", h.area)?;
    } else {
        writeln!(s, "  |D| {:.6e}  diameter {:.6e}  boundary slope {:.6e}", h.area, h.diameter, h.lipschitz)?;
        match h.diam_over_r {
            Some(v) => writeln!(s, "  diam(D) / r = {v:.6e}")?,
            None => writeln!(s, "  diam(D) / r not reported (set report.r)")?,
        }
        if let Some(f) = h.fatness {
            writeln!(s, "  fatness at h = {}: |D_h| / |D| = {:.4} ({})", f.h, f.ratio, if f.is_fat { "fat" } else { "not fat" })?;
        }
    }
    for r in &rows {
        r.write_text(&mut s)?;
    }
    out.write("estimate.txt", Some(Format::Txt), &s)?;
    print!("{}", String::from_utf8_lossy(&s));

    let failed: Vec<_> = rows.iter().filter_map(|r| r.error.as_deref()).collect();
    if failed.len() == rows.len() {
        return Err(CliError::Numerical(format!("every datum failed; first error: {}", failed[0])));
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let plan = SweepPlan {
        width: cfg.domain.width,
        surface: cfg.domain.surface.clone(),
        family: cfg.sweep.family.clone(),
        amplitudes: cfg.sweep.amplitudes.clone(),
        data: cfg.data.clone(),
        resolutions: cfg.sweep.resolutions.clone(),
        windows: cfg.windows.clone(),
        solver: cfg.solver(),
        output: None,
    };
    let rows = run_sweep(&plan)?;
    let mut table = Vec::new();
    write_sweep_csv(&mut table, &rows)?;
    out.write("sweep.csv", Some(Format::Csv), &table)?;
    if !cfg.windows.is_empty() {
        out.write_with("windows.csv", Some(Format::Csv), |w| write_window_csv(w, &rows))?;
    }
    let fits = fit_by_datum(&rows);
    out.write_with("fit.csv", Some(Format::Csv), |w| write_fit_csv(w, &fits))?;
    let svg = eta_plot_from_csv(&String::from_utf8_lossy(&table))?;
    out.write("eta.svg", Some(Format::Svg), svg.as_bytes())?;

    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let mut s = Vec::new();
    writeln!(s, "sweep of {} rows ({} failed), case {}", rows.len(), failed, plan.family.case())?;
    for (datum, fit) in &fits {
        match fit {
            Ok(f) => writeln!(
                s,
                "  {datum}: C_lower {:.6e}  C_upper {:.6e}  held-out violations {}  zero-area violations {}",
                f.c_lower,
                f.c_upper,
                f.held_out_violations(),
                f.zero_area_violations
            )?,
            Err(e) => writeln!(s, "  {datum}: no fit ({e})")?,
        }
    }
    out.write("sweep.txt", Some(Format::Txt), &s)?;
    print!("{}", String::from_utf8_lossy(&s));
    if failed == rows.len() {
        return Err(CliError::Numerical(format!(
            "every sweep row failed; first error: {}",
            rows[0].error.as_deref().unwrap_or("")
        )));
    }
    Ok(())
}

fn converge(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let domain = cfg.fluid_domain()?;
    let mut s = Vec::new();
    for datum in &cfg.data {
        let name = datum.name();
        let t = convergence_study(&domain, datum, &cfg.converge, cfg.solver())?;
        let mut table = Vec::new();
        write_convergence_csv(&mut table, &t)?;
        out.write(&format!("convergence_{name}.csv"), Some(Format::Csv), &table)?;
        let svg = convergence_plot_from_csv(&String::from_utf8_lossy(&table))?;
        out.write(&format!("convergence_{name}.svg"), Some(Format::Svg), svg.as_bytes())?;
        let (oh, of) = t.min_orders();
        writeln!(s, "convergence for {name} against {}", t.reference)?;
        for r in &t.rows {
            writeln!(
                s,
                "  {:>4}x{:<4} h={:.4e}  H1 {:.4e} ({})  flux {:.4e} ({}){}",
                r.nx,
                r.ny,
                r.h,
                r.error_h1,
                r.order_h1.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                r.error_flux,
                r.order_flux.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                if r.flagged { "  flagged" } else { "" }
            )?;
        }
        writeln!(s, "  minimum orders: H1 {oh:?}  flux {of:?}")?;
    }
    out.write("convergence.txt", Some(Format::Txt), &s)?;
    print!("{}", String::from_utf8_lossy(&s));
    Ok(())
}

fn verify(out: &mut Artifacts) -> Result<(), CliError> {
    let mut s = Vec::new();
    let outcomes = acceptance::run_all();
    for o in &outcomes {
        println!("{o}");
        writeln!(s, "{o}")?;
        for d in &o.details {
            writeln!(s, "    {d}")?;
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let line = format!("acceptance: {} passed, {} failed", outcomes.len() - failed, failed);
    println!("{line}");
    writeln!(s, "{line}")?;
    out.write("verify.txt", Some(Format::Txt), &s)?;
    if failed > 0 {
        let ids: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
        return Err(CliError::Numerical(format!("criteria {} failed", ids.join(", "))));
    }
    Ok(())
}
