//! Batch front end: config-driven commands with CSV artifacts and a run
//! manifest. Every command is a pure function of its config and seed, so
//! reruns produce byte-identical CSV files at any worker count. Wall time
//! is recorded only in the manifest, never in a CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{ControlClass, CostName, DatumKind, ModelName, RunConfig};
use crate::control;
use crate::energy::EnergyContext;
use crate::error::{Error, Result};
use crate::kernel::{self, KernelWeights};
use crate::model::{
    self, BoundaryDatum, BoxSet, ConditionSample, Control, CostIntegrand, Nonlinearity,
};
use crate::mpt::{self, MinimaxConfig};
use crate::space::{GridFunction, SpatialDomain, build_grid};
use crate::stability::{self, SweepConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Constants,
    CheckModel,
    Solve,
    Geometry,
    Stability,
    Control,
    Spectrum,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::CheckModel => "check-model",
            Command::Solve => "solve",
            Command::Geometry => "geometry",
            Command::Stability => "stability",
            Command::Control => "control",
            Command::Spectrum => "spectrum",
        }
    }
}

/// 17-significant-digit decimal formatting used by every CSV cell.
pub fn fmt_g(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

struct Built {
    space: Arc<SpatialDomain>,
    kernel: Arc<KernelWeights>,
    model: Arc<Nonlinearity>,
    control: Control,
    datum: BoundaryDatum,
    u_set: BoxSet,
}

fn build_model(cfg: &RunConfig) -> Result<Nonlinearity> {
    Ok(match cfg.model.name {
        ModelName::Example => model::example_nonlinearity(cfg.model.gamma),
        ModelName::Power => model::power_nonlinearity(cfg.model.p),
        ModelName::Quadratic => model::quadratic_nonlinearity(cfg.model.q, cfg.model.lin),
        ModelName::Table => {
            let path = cfg
                .model
                .table_file
                .as_ref()
                .ok_or_else(|| Error::Config("table model needs model.table_file".into()))?;
            load_table_model(Path::new(path))?
        }
    })
}

/// Table file format: first line `z: v1,v2,...`, second line `u: w1,...`,
/// then one row of G values per z line, comma-separated over u.
fn load_table_model(path: &Path) -> Result<Nonlinearity> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read table {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let parse_axis = |line: Option<&str>, tag: &str| -> Result<Vec<f64>> {
        let l = line.ok_or_else(|| Error::Config(format!("table missing {tag} axis")))?;
        let body = l
            .trim()
            .strip_prefix(&format!("{tag}:"))
            .ok_or_else(|| Error::Config(format!("table {tag} axis must start with '{tag}:'")))?;
        body.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number in table {tag} axis")))
            })
            .collect()
    };
    let z_grid = parse_axis(lines.next(), "z")?;
    let u_grid = parse_axis(lines.next(), "u")?;
    let mut values = Vec::new();
    for l in lines {
        for cell in l.split(',') {
            values.push(
                cell.trim()
                    .parse()
                    .map_err(|_| Error::Config("bad number in table body".into()))?,
            );
        }
    }
    model::table_nonlinearity(
        z_grid,
        u_grid,
        values,
        model::GrowthConstants {
            s: 2.0,
            p: 2.0,
            a: 0.0,
            big_r: 1.0,
            b: 0.0,
            zeta: 0.1,
        },
    )
}

fn datum_values(space: &SpatialDomain, kind: &DatumKind, amp: f64, center: &[f64], width: f64) -> Vec<f64> {
    match kind {
        DatumKind::Zero => vec![0.0; space.node_count()],
        DatumKind::Const => vec![amp; space.node_count()],
        DatumKind::Bump => (0..space.node_count())
            .map(|i| {
                let x = space.coord(i);
                let d2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                amp * (-d2 / (2.0 * width * width)).exp()
            })
            .collect(),
    }
}

fn build_all(cfg: &RunConfig) -> Result<Built> {
    let space = build_grid(
        cfg.grid.n,
        &cfg.grid.box_bounds,
        cfg.grid.h,
        cfg.grid.collar,
        cfg.grid.r_ext,
    )?;
    let kernel = Arc::new(kernel::assemble_weights(&space, cfg.alpha)?);
    let model = Arc::new(build_model(cfg)?);
    let u_set = BoxSet::new(cfg.model.u_lo.clone(), cfg.model.u_hi.clone())?;
    let control = Control::constant(
        Arc::clone(&space),
        &cfg.model.u_const,
        u_set.clone(),
        cfg.model.l2,
    )?;
    let vvals = datum_values(
        &space,
        &cfg.model.v_kind,
        cfg.model.v_amp,
        &cfg.model.v_center,
        cfg.model.v_width,
    );
    let v = GridFunction::new(Arc::clone(&space), vvals)?;
    let v_ref = v.clone();
    let datum = if cfg.model.project_v {
        BoundaryDatum::projected(&kernel, v, &v_ref, cfg.model.v_l1)?
    } else {
        BoundaryDatum::new(&kernel, v, &v_ref, cfg.model.v_l1)?
    };
    Ok(Built {
        space,
        kernel,
        model,
        control,
        datum,
        u_set,
    })
}

fn minimax_config(cfg: &RunConfig) -> MinimaxConfig {
    MinimaxConfig {
        eta: cfg.mpt.eta,
        path_nodes: cfg.mpt.path_nodes,
        tol_grad: cfg.mpt.tol_grad,
        tol_val: cfg.mpt.tol_val,
        max_iter: cfg.mpt.max_iter,
        geometry_samples: cfg.mpt.geometry_samples,
        seed: cfg.mpt.seed,
        ..MinimaxConfig::default()
    }
}

fn cost_integrand(cfg: &RunConfig) -> CostIntegrand {
    match cfg.control.cost {
        CostName::Unit => CostIntegrand::new("unit", Arc::new(|_, _, _| 1.0), 1.0, 2.0),
        CostName::Tracking => {
            let target = cfg.control.target;
            let reg = cfg.control.reg;
            CostIntegrand::new(
                "tracking",
                Arc::new(move |_x: &[f64], z: f64, u: &[f64]| {
                    let uu: f64 = u.iter().map(|v| v * v).sum();
                    (z - target) * (z - target) + reg * uu
                }),
                (1.0 + target * target) * 2.0 + reg,
                2.0,
            )
        }
    }
}

fn node_table(space: &SpatialDomain, values: &[f64]) -> String {
    let mut out = String::from("index");
    for d in 0..space.dim() {
        let _ = write!(out, ",x{d}");
    }
    out.push_str(",region,weight,value\n");
    for i in 0..space.node_count() {
        let _ = write!(out, "{i}");
        for c in space.coord(i) {
            let _ = write!(out, ",{}", fmt_g(*c));
        }
        let tag = match space.region(i) {
            crate::space::Region::Interior => "interior",
            crate::space::Region::Collar => "collar",
        };
        let _ = write!(out, ",{tag},{},{}\n", fmt_g(space.weight(i)), fmt_g(values[i]));
    }
    out
}

/// Run one command. Returns the process exit code; the manifest is written
/// even on failure paths.
pub fn run_command(
    cmd: Command,
    cfg: &RunConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
    workers_override: Option<usize>,
) -> i32 {
    let mut cfg = cfg.clone();
    if let Some(seed) = seed_override {
        cfg.mpt.seed = seed;
    }
    let workers = workers_override.unwrap_or(cfg.workers);
    let started = std::time::Instant::now();
    let outcome = crate::par::with_workers(workers, || dispatch(cmd, &cfg, out_dir));
    let (code, status) = match &outcome {
        Ok(code) => (*code, "ok".to_string()),
        Err(e) => (exit_code_for(e), format!("error: {e}")),
    };
    let manifest = format!(
        "command: {}\nversion: {}\nseed: {}\nworkers: {}\nstatus: {}\nwall_time_ms: {}\nconfig:\n{}\n",
        cmd.name(),
        env!("CARGO_PKG_VERSION"),
        cfg.mpt.seed,
        workers,
        status,
        started.elapsed().as_millis(),
        cfg.echo()
    );
    let _ = write_file(out_dir, "manifest.txt", &manifest);
    code
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParam(_)
        | Error::InvalidGrid(_)
        | Error::LengthMismatch { .. }
        | Error::Inadmissible(_) => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<i32> {
    match cmd {
        Command::Constants => cmd_constants(cfg, out),
        Command::CheckModel => cmd_check_model(cfg, out),
        Command::Solve => cmd_solve(cfg, out),
        Command::Geometry => cmd_geometry(cfg, out),
        Command::Stability => cmd_stability(cfg, out),
        Command::Control => cmd_control(cfg, out),
        Command::Spectrum => cmd_spectrum(cfg, out),
    }
}

fn cmd_constants(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let n = cfg.grid.n;
    let alpha = cfg.alpha;
    let c_a = kernel::normalizing_constant(n, alpha)?;
    let c_b = kernel::normalizing_constant_reflected(n, alpha)?;
    let rel = (c_a - c_b).abs() / c_a;
    let mut csv = String::from("n,alpha,c_gamma_form,c_reflected_form,rel_disagreement\n");
    let _ = writeln!(csv, "{n},{},{},{},{}", fmt_g(alpha), fmt_g(c_a), fmt_g(c_b), fmt_g(rel));
    write_file(out, "constants.csv", &csv)?;
    println!("c({n}, {alpha}) = {c_a:.17}");
    println!("reflected form = {c_b:.17}");
    println!("relative disagreement = {rel:.3e}");
    Ok(0)
}

fn condition_sample(cfg: &RunConfig, built: &Built) -> ConditionSample {
    ConditionSample::lattice(
        &built.space,
        &built.u_set,
        cfg.model.z_max,
        cfg.model.samples_z,
        cfg.model.samples_u,
    )
}

fn cmd_check_model(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let built = build_all(cfg)?;
    let sample = condition_sample(cfg, &built);
    let c_na = built.kernel.constant();
    let v0_at: Vec<f64> = (0..built.space.interior_count())
        .map(|i| built.datum.v.value(i))
        .collect();

    let c2 = model::check_c2(&built.model, &sample);
    let c3 = model::check_c3(&built.model, &sample);
    let c4 = model::check_c4(&built.model, &v0_at, c_na, &sample, 33);
    let c5 = model::check_c5(&built.model, &cfg.model.u_const, 1.0, &sample);
    let phi = cost_integrand(cfg);
    let c7 = model::check_c7(&phi, &sample);
    let star = model::estimate_star_constants(&built.model, &v0_at, c_na, &sample);

    let mut csv = String::from("condition,pass,fitted_constant,note\n");
    let _ = writeln!(csv, "c2,{},{},growth constant", c2.pass, fmt_g(c2.c_fit));
    let _ = writeln!(csv, "c3,{},{},min sampled p*G beyond threshold", c3.holds, fmt_g(c3.min_pg));
    let (c4_pass, c4_val) = match &c4 {
        Ok(r) => (r.holds, r.b_fit),
        Err(_) => (false, f64::NAN),
    };
    let _ = writeln!(csv, "c4,{c4_pass},{},fitted b vs c/2 = {}", fmt_g(c4_val), fmt_g(0.5 * c_na));
    let _ = writeln!(csv, "c5,{},{},parameter Lipschitz constant", c5.holds, fmt_g(c5.c_fit));
    let _ = writeln!(csv, "c7,{},{},cost growth constant", c7.holds, fmt_g(c7.c_fit));
    let (star_pass, a0, a1) = match &star {
        Ok(s) => (s.feasible, s.a0, s.a1),
        Err(_) => (false, f64::NAN, f64::NAN),
    };
    let _ = writeln!(csv, "star_lower,{star_pass},{},a1 = {}", fmt_g(a0), fmt_g(a1));
    write_file(out, "checks.csv", &csv)?;
    print!("{csv}");

    let all = c2.pass && c3.holds && c4_pass && c5.holds && c7.holds && star_pass;
    Ok(if all { 0 } else { 1 })
}

fn trace_csv(res: &mpt::MinimaxResult) -> String {
    let mut csv = String::from("iter,t_star,path_max_energy,grad_norm\n");
    for row in &res.trace {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.iter,
            row.t_star,
            fmt_g(row.path_max_energy),
            fmt_g(row.grad_norm)
        );
    }
    csv
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let built = build_all(cfg)?;
    let ctx = EnergyContext::new(
        Arc::clone(&built.kernel),
        Arc::clone(&built.model),
        built.control.clone(),
        built.datum.clone(),
    )?;
    let mpt_cfg = minimax_config(cfg);
    let dir = mpt::initial_direction(&ctx, cfg.mpt.direction, cfg.mpt.seed)?;
    let res = mpt::solve_mountain_pass(&ctx, &mpt_cfg, &dir)?;

    write_file(out, "trace.csv", &trace_csv(&res))?;

    let ps = mpt::palais_smale_diagnostic(&ctx, &res.snapshots);
    let sample = condition_sample(cfg, &built);
    let v0_at: Vec<f64> = (0..built.space.interior_count())
        .map(|i| built.datum.v.value(i))
        .collect();
    let star = model::estimate_star_constants(&built.model, &v0_at, built.kernel.constant(), &sample)?;
    let ball = mpt::apriori_ball_check(
        &ctx,
        &res.w_star.restrict_interior(),
        built.model.constants.p,
        res.c_star,
        &star,
    )?;
    let geom = res.geometry.as_ref().expect("pipeline attaches geometry");

    let mut csv = String::from(
        "c_star,grad_norm,iterations,converged,w_x0_norm,eta,sphere_infimum,f_omega1,\
         ps_tail_spread,ball_rho,ball_inside\n",
    );
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{},{},{},{},{}",
        fmt_g(res.c_star),
        fmt_g(res.grad_norm),
        res.iterations,
        res.converged,
        fmt_g(ball.w_norm),
        fmt_g(geom.eta),
        fmt_g(geom.sphere_infimum),
        fmt_g(geom.f_omega1),
        fmt_g(ps.tail_spread),
        fmt_g(ball.rho),
        ball.inside
    );
    write_file(out, "result.csv", &csv)?;
    print!("{csv}");

    write_file(out, "solution_w.txt", &node_table(&built.space, res.w_star.values()))?;
    let shifted = stability::corollary_shift(&built.kernel, &res.w_star, &built.datum.v)?;
    write_file(out, "solution_z.txt", &node_table(&built.space, shifted.z.values()))?;
    if cfg.output.dump_weights {
        let mut buf = Vec::new();
        built.kernel.write_weight_table(&mut buf)?;
        write_file(out, "weights.txt", &String::from_utf8_lossy(&buf))?;
        let mut gbuf = Vec::new();
        built.space.write_node_table(&mut gbuf)?;
        write_file(out, "grid.txt", &String::from_utf8_lossy(&gbuf))?;
    }
    Ok(if res.converged { 0 } else { 1 })
}

fn cmd_geometry(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let built = build_all(cfg)?;
    let ctx = EnergyContext::new(
        Arc::clone(&built.kernel),
        Arc::clone(&built.model),
        built.control.clone(),
        built.datum.clone(),
    )?;
    let dir = mpt::initial_direction(&ctx, cfg.mpt.direction, cfg.mpt.seed)?;
    let omega1 = mpt::find_far_point(&ctx, &dir, cfg.mpt.eta)?;
    let rep = mpt::verify_geometry(
        &ctx,
        &omega1,
        cfg.mpt.eta,
        cfg.mpt.geometry_samples,
        cfg.mpt.seed,
    )?;
    let mut csv = String::from("eta,sphere_infimum,f_omega1,f_zero,samples,pass\n");
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        fmt_g(rep.eta),
        fmt_g(rep.sphere_infimum),
        fmt_g(rep.f_omega1),
        fmt_g(rep.f_zero),
        rep.samples,
        rep.pass
    );
    write_file(out, "geometry.csv", &csv)?;
    print!("{csv}");
    Ok(if rep.pass { 0 } else { 1 })
}

fn cmd_stability(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let built = build_all(cfg)?;
    let n_int = built.space.interior_count();
    let m = built.u_set.dim();
    let mut du = vec![0.0; n_int * m];
    for i in 0..n_int {
        for c in 0..m {
            du[i * m + c] = cfg.stability.du.get(c).copied().unwrap_or(0.0);
        }
    }
    let dv_vals = datum_values(
        &built.space,
        &cfg.stability.dv_kind,
        cfg.stability.dv_amp,
        &cfg.stability.dv_center,
        cfg.stability.dv_width,
    );
    let dv = GridFunction::new(Arc::clone(&built.space), dv_vals)?;
    let sweep_cfg = SweepConfig {
        count: cfg.stability.count,
        rate_exp: cfg.stability.rate_exp,
        warm_start: cfg.stability.warm,
        multistart: cfg.stability.multistart,
        gap_samples: cfg.stability.gap_samples,
        gap_radius: cfg.stability.gap_radius,
        direction: cfg.mpt.direction,
    };
    let mpt_cfg = minimax_config(cfg);
    let sweep = stability::solve_sweep(
        &built.kernel,
        &built.model,
        built.control.clone(),
        &du,
        built.datum.clone(),
        &dv,
        &sweep_cfg,
        &mpt_cfg,
    )?;

    let mut csv =
        String::from("k,du_inf,dv_y,c_k,c_gap,dist_w0,grad_norm,converged\n");
    for row in &sweep.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            row.k,
            fmt_g(row.du_inf),
            fmt_g(row.dv_y),
            fmt_g(row.c_k),
            fmt_g(row.c_gap),
            fmt_g(row.dist_w0),
            fmt_g(row.grad_norm),
            row.converged
        );
    }
    write_file(out, "stability.csv", &csv)?;
    print!("{csv}");

    let mut gaps = String::from("k,gap_f,gap_grad\n");
    for row in &sweep.rows {
        let _ = writeln!(gaps, "{},{},{}", row.k, fmt_g(row.gap_f), fmt_g(row.gap_grad));
    }
    write_file(out, "gaps.csv", &gaps)?;

    let mut base = String::from("c_0,grad_norm,converged,representatives\n");
    let _ = writeln!(
        base,
        "{},{},{},{}",
        fmt_g(sweep.base.c_star),
        fmt_g(sweep.base.grad_norm),
        sweep.base.converged,
        sweep.reps.len()
    );
    write_file(out, "base.csv", &base)?;
    Ok(if sweep.complete { 0 } else { 1 })
}

fn control_parts(cfg: &RunConfig, space: &SpatialDomain) -> Result<Vec<Vec<(f64, f64)>>> {
    let axis = cfg.control.split_axis;
    if axis >= space.dim() {
        return Err(Error::Config(format!(
            "control.split_axis {axis} outside dimension {}",
            space.dim()
        )));
    }
    let r = cfg.control.r.max(1);
    let (lo, hi) = space.bounds()[axis];
    let mut parts = Vec::with_capacity(r);
    for i in 0..r {
        let a = lo + (hi - lo) * i as f64 / r as f64;
        let b = lo + (hi - lo) * (i + 1) as f64 / r as f64;
        let mut part: Vec<(f64, f64)> = space.bounds().to_vec();
        part[axis] = (a, b);
        parts.push(part);
    }
    Ok(parts)
}

fn cmd_control(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let built = build_all(cfg)?;
    let phi = cost_integrand(cfg);
    let mpt_cfg = minimax_config(cfg);
    let m = built.u_set.dim();
    let search = match cfg.control.class {
        ControlClass::Piecewise => {
            let parts = control_parts(cfg, &built.space)?;
            let shared: Vec<Vec<f64>> = if cfg.control.values.is_empty() {
                vec![built.u_set.midpoint()]
            } else if m == 1 {
                cfg.control.values.iter().map(|&v| vec![v]).collect()
            } else {
                cfg.control.values.chunks(m).map(|c| c.to_vec()).collect()
            };
            let grids: Vec<Vec<Vec<f64>>> = (0..parts.len())
                .map(|p| {
                    cfg.control
                        .values_per_part
                        .get(&p)
                        .map(|vals| {
                            if m == 1 {
                                vals.iter().map(|&v| vec![v]).collect()
                            } else {
                                vals.chunks(m).map(|c| c.to_vec()).collect()
                            }
                        })
                        .unwrap_or_else(|| shared.clone())
                })
                .collect();
            control::optimize_piecewise(
                &built.kernel,
                &built.model,
                &built.datum,
                &parts,
                &grids,
                &built.u_set,
                cfg.model.l2,
                &phi,
                &mpt_cfg,
                cfg.control.exhaustive_cap,
            )?
        }
        ControlClass::Lipschitz => control::optimize_lipschitz(
            &built.kernel,
            &built.model,
            &built.datum,
            cfg.control.lambda,
            cfg.control.anchors_per_axis,
            &built.u_set,
            cfg.model.l2,
            &phi,
            &mpt_cfg,
            cfg.control.max_evals,
        )?,
    };

    let mut csv = String::from("id,values,c_star,cost,residual,converged\n");
    for row in &search.rows {
        let vals = row
            .values
            .iter()
            .map(|v| fmt_g(*v))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.id,
            vals,
            fmt_g(row.c_star),
            fmt_g(row.cost),
            fmt_g(row.residual),
            row.converged
        );
    }
    write_file(out, "candidates.csv", &csv)?;

    let mut best = String::from("cost,c_star,residual\n");
    let _ = writeln!(
        best,
        "{},{},{}",
        fmt_g(search.best.cost),
        fmt_g(search.best.c_star),
        fmt_g(search.best.residual)
    );
    write_file(out, "best.csv", &best)?;
    print!("{best}");

    // node tables of the best pair
    let n_int = built.space.interior_count();
    let mut uvals = vec![0.0; built.space.node_count()];
    for i in 0..n_int {
        uvals[i] = search.best.control.value_at(i)[0];
    }
    write_file(out, "best_control.txt", &node_table(&built.space, &uvals))?;
    write_file(out, "best_state.txt", &node_table(&built.space, search.best.z.values()))?;
    Ok(0)
}

fn cmd_spectrum(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let built = build_all(cfg)?;
    let ctx = EnergyContext::new(
        Arc::clone(&built.kernel),
        Arc::clone(&built.model),
        built.control.clone(),
        built.datum.clone(),
    )?;
    let count = cfg.spectrum_count.min(built.space.interior_count());
    let ascent = stability::eigen_ray_ascent(&ctx, count)?;
    let mut csv = String::from("k,lambda,f_at_rho_k\n");
    for (k, lambda, f) in &ascent {
        let _ = writeln!(csv, "{k},{},{}", fmt_g(*lambda), fmt_g(*f));
    }
    write_file(out, "spectrum.csv", &csv)?;
    print!("{csv}");

    let pairs = kernel::eigenpairs(&built.kernel, 1)?;
    let ray = stability::eigen_ray_descent(&ctx, &pairs[0].rho, -1e6, 1e4)?;
    let mut rays = String::from("l,f_at_l_rho1\n");
    for (l, f) in &ray {
        let _ = writeln!(rays, "{},{}", fmt_g(*l), fmt_g(*f));
    }
    write_file(out, "rays.csv", &rays)?;
    write_file(out, "rho1.txt", &node_table(&built.space, pairs[0].rho.values()))?;
    if cfg.output.dump_weights {
        let mut buf = Vec::new();
        built.kernel.write_weight_table(&mut buf)?;
        write_file(out, "weights.txt", &String::from_utf8_lossy(&buf))?;
    }
    Ok(0)
}

/// Convenience wrapper used by the binary: parse, run, return exit code.
pub fn run_from_args(
    cmd: Command,
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> i32 {
    let cfg = match RunConfig::from_file(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            // manifest even on config failure
            let dir = out.unwrap_or_else(|| PathBuf::from("out"));
            let manifest = format!(
                "command: {}\nversion: {}\nstatus: error: {e}\n",
                cmd.name(),
                env!("CARGO_PKG_VERSION")
            );
            let _ = write_file(&dir, "manifest.txt", &manifest);
            return 2;
        }
    };
    let out_dir = out.unwrap_or_else(|| PathBuf::from(cfg.output.dir.clone()));
    run_command(cmd, &cfg, &out_dir, seed, workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUARTIC: &str = "
grid.n = 2
grid.box = 0,1,0,1
grid.h = 0.25
grid.collar = 0.25
grid.r_ext = 0.5
operator.alpha = 1.5
model.name = power
model.p = 4.0
model.u_const = 0.5
mpt.eta = 0.05
";

    #[test]
    fn solve_command_writes_artifacts_and_succeeds() {
        let cfg = RunConfig::from_str_content(QUARTIC).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let code = run_command(Command::Solve, &cfg, dir.path(), None, Some(1));
        assert_eq!(code, 0);
        for f in ["trace.csv", "result.csv", "solution_w.txt", "solution_z.txt", "manifest.txt"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = RunConfig::from_str_content(QUARTIC).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        assert_eq!(run_command(Command::Solve, &cfg, d1.path(), Some(7), Some(1)), 0);
        assert_eq!(run_command(Command::Solve, &cfg, d2.path(), Some(7), Some(2)), 0);
        for f in ["trace.csv", "result.csv"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs across worker counts");
        }
    }

    #[test]
    fn constants_and_geometry_commands() {
        let cfg = RunConfig::from_str_content(QUARTIC).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_command(Command::Constants, &cfg, dir.path(), None, Some(1)), 0);
        assert!(dir.path().join("constants.csv").exists());
        assert_eq!(run_command(Command::Geometry, &cfg, dir.path(), None, Some(1)), 0);
        assert!(dir.path().join("geometry.csv").exists());
    }

    #[test]
    fn check_model_flags_non_superlinear_models() {
        // quadratic G = z^2 has no superlinear structure: c3 fails, exit 1
        let text = QUARTIC
            .replace("model.name = power", "model.name = quadratic")
            .replace("model.p = 4.0", "model.q = 2.0");
        let cfg = RunConfig::from_str_content(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let code = run_command(Command::CheckModel, &cfg, dir.path(), None, Some(1));
        assert_eq!(code, 1);
        let csv = std::fs::read_to_string(dir.path().join("checks.csv")).unwrap();
        assert!(csv.lines().any(|l| l.starts_with("c3,false")));
    }

    #[test]
    fn manifest_written_on_failure() {
        // r_ext below the collar width: the grid builder refuses
        let text = QUARTIC.replace("grid.r_ext = 0.5", "grid.r_ext = 0.1");
        let cfg = RunConfig::from_str_content(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let code = run_command(Command::Solve, &cfg, dir.path(), None, Some(1));
        assert_eq!(code, 2);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("status: error"));
    }
}
