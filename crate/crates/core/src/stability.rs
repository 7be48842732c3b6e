//! Continuous-dependence experiments: converging parameter/boundary
//! sequences, per-term mountain-pass solves with warm starts, sampled
//! uniform-convergence gaps, distances to the limit solution set, and the
//! eigenfunction-ray unboundedness probes.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::energy::{EnergyContext, norm};
use crate::error::{Error, Result};
use crate::kernel::{self, KernelWeights};
use crate::model::{BoundaryDatum, Control, Nonlinearity};
use crate::mpt::{
    self, Direction, MinimaxConfig, MinimaxResult, x0_norm_vec,
};
use crate::space::GridFunction;

/// One perturbation sequence term.
pub struct SequenceTerm {
    pub k: usize,
    pub control: Control,
    pub datum: BoundaryDatum,
    /// Exact sup-norm distance of the control to the base term.
    pub du_inf: f64,
    /// Exact Y-norm distance of the datum to the base term.
    pub dv_y: f64,
}

/// Build `(u_k, v_k) = (u0 + du/k^rate, v0 + dv/k^rate)` for `k = 1..=K`.
/// Both endpoints must be admissible; intermediate terms then are by
/// convexity of the box/ball constraints.
pub fn make_sequences(
    kernel: &KernelWeights,
    u0: &Control,
    du: &[f64],
    v0: &BoundaryDatum,
    dv: &GridFunction,
    count: usize,
    rate_exp: f64,
) -> Result<Vec<SequenceTerm>> {
    // endpoint admissibility (k = 1)
    u0.shifted(du, 1.0)
        .map_err(|e| Error::Inadmissible(format!("u0 + du is inadmissible: {e}")))?;
    let v_end = v0.v.add(dv)?;
    BoundaryDatum::new(kernel, v_end, &v0.v, v0.l1)
        .map_err(|e| Error::Inadmissible(format!("v0 + dv is inadmissible: {e}")))?;

    let du_sup = du.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
    let dv_y = kernel::y_norm(kernel, dv)?;
    let mut terms = Vec::with_capacity(count);
    for k in 1..=count {
        let t = 1.0 / (k as f64).powf(rate_exp);
        let control = u0.shifted(du, t)?;
        let v_k = v0.v.add(&dv.scaled(t))?;
        let datum = BoundaryDatum {
            v: v_k,
            l1: v0.l1,
            projected: v0.projected,
        };
        terms.push(SequenceTerm {
            k,
            control,
            datum,
            du_inf: du_sup * t,
            dv_y: dv_y * t,
        });
    }
    Ok(terms)
}

/// Sampled uniform-convergence gap on the X_0 ball of radius `rho`:
/// suprema of `|F_k - F_0|` and of the gradient difference norm over
/// `samples` random points. The same seed reproduces the same sample set.
pub fn uniform_convergence_gap(
    ctx_k: &EnergyContext,
    ctx_0: &EnergyContext,
    rho: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if rho <= 0.0 {
        return Err(Error::InvalidParam("ball radius must be positive".into()));
    }
    let n = ctx_0.interior_count();
    if ctx_k.interior_count() != n {
        return Err(Error::GridMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67617073);
    let mut points = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xn = x0_norm_vec(ctx_0, &w);
        if xn == 0.0 {
            continue;
        }
        // uniform radius fraction keeps small and large vectors in the mix
        let frac: f64 = rand::Rng::random(&mut rng);
        let scale = rho * frac / xn;
        for v in w.iter_mut() {
            *v *= scale;
        }
        points.push(w);
    }
    let mut gap_f = 0.0f64;
    let mut gap_g = 0.0f64;
    for w in &points {
        gap_f = gap_f.max((ctx_k.shifted_action_vec(w) - ctx_0.shifted_action_vec(w)).abs());
        let gk = ctx_k.gradient_vec(w);
        let g0 = ctx_0.gradient_vec(w);
        let diff: Vec<f64> = gk.iter().zip(&g0).map(|(a, b)| a - b).collect();
        gap_g = gap_g.max(norm(&diff));
    }
    Ok((gap_f, gap_g))
}

/// Distance from a point to a finite set of representatives in the X_0
/// seminorm.
pub fn kuratowski_distance(
    kernel: &KernelWeights,
    w: &GridFunction,
    reps: &[GridFunction],
) -> Result<f64> {
    if reps.is_empty() {
        return Err(Error::InvalidParam("representative set is empty".into()));
    }
    let mut best = f64::INFINITY;
    for rep in reps {
        best = best.min(kernel::x0_seminorm(kernel, &w.sub(rep)?)?);
    }
    Ok(best)
}

/// Shift a homogenized solution back to the original problem.
pub struct ShiftedSolution {
    pub z: GridFunction,
    /// Whether the solution is distinct from the bare datum (`w != 0`).
    pub distinct_from_datum: bool,
}

pub fn corollary_shift(
    kernel: &KernelWeights,
    w: &GridFunction,
    v: &GridFunction,
) -> Result<ShiftedSolution> {
    if !w.is_x0() {
        return Err(Error::InvalidParam("solution shift needs an X_0 function".into()));
    }
    let z = w.add(v)?;
    let wn = kernel::x0_seminorm(kernel, w)?;
    Ok(ShiftedSolution {
        z,
        distinct_from_datum: wn > 0.0,
    })
}

/// Sweep controls.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub count: usize,
    pub rate_exp: f64,
    pub warm_start: bool,
    /// Extra random directions when collecting limit-set representatives.
    pub multistart: usize,
    pub gap_samples: usize,
    pub gap_radius: f64,
    pub direction: Direction,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            count: 16,
            rate_exp: 1.0,
            warm_start: true,
            multistart: 4,
            gap_samples: 50,
            gap_radius: 2.0,
            direction: Direction::EigenTilt,
        }
    }
}

/// One solved sweep term.
pub struct SweepRow {
    pub k: usize,
    pub du_inf: f64,
    pub dv_y: f64,
    pub c_k: f64,
    pub c_gap: f64,
    pub dist_w0: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub gap_f: f64,
    pub gap_grad: f64,
}

/// Completed sweep: the base solve, the limit-set representatives found by
/// multistart, and one row per sequence term.
pub struct StabilitySweep {
    pub base: MinimaxResult,
    pub reps: Vec<GridFunction>,
    pub rows: Vec<SweepRow>,
    /// False when some term failed to converge (reported, not fatal).
    pub complete: bool,
}

fn build_ctx(
    kernel: &Arc<KernelWeights>,
    model: &Arc<Nonlinearity>,
    control: Control,
    datum: BoundaryDatum,
) -> Result<EnergyContext> {
    EnergyContext::new(Arc::clone(kernel), Arc::clone(model), control, datum)
}

/// Collect limit-problem representatives: the pipeline solve plus
/// `multistart` seeded random directions, deduplicated in the X_0 norm.
pub fn limit_set_representatives(
    ctx: &EnergyContext,
    cfg: &MinimaxConfig,
    sweep: &SweepConfig,
    base: &MinimaxResult,
) -> Result<Vec<GridFunction>> {
    let mut reps: Vec<GridFunction> = vec![base.w_star.clone()];
    for s in 0..sweep.multistart {
        let dir = mpt::initial_direction(ctx, Direction::Random, cfg.seed.wrapping_add(s as u64 + 1))?;
        let res = match mpt::solve_mountain_pass(ctx, cfg, &dir) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if !res.converged {
            continue;
        }
        let dup = reps.iter().any(|r| {
            let d = res
                .w_star
                .sub(r)
                .and_then(|d| kernel::x0_seminorm(ctx.kernel(), &d));
            matches!(d, Ok(v) if v <= 1e-4)
        });
        if !dup {
            reps.push(res.w_star.clone());
        }
    }
    Ok(reps)
}

/// Run the full stability program: solve the limit problem, collect its
/// representatives, then solve every sequence term (warm-started from the
/// previous path when requested) and measure the distances of the sweep.
pub fn solve_sweep(
    kernel: &Arc<KernelWeights>,
    model: &Arc<Nonlinearity>,
    u0: Control,
    du: &[f64],
    v0: BoundaryDatum,
    dv: &GridFunction,
    sweep_cfg: &SweepConfig,
    mpt_cfg: &MinimaxConfig,
) -> Result<StabilitySweep> {
    let terms = make_sequences(kernel, &u0, du, &v0, dv, sweep_cfg.count, sweep_cfg.rate_exp)?;
    let ctx0 = build_ctx(kernel, model, u0, v0)?;
    let dir = mpt::initial_direction(&ctx0, sweep_cfg.direction, mpt_cfg.seed)?;
    let base = mpt::solve_mountain_pass(&ctx0, mpt_cfg, &dir)?;
    if !base.converged {
        return Err(Error::Numerical("limit problem did not converge".into()));
    }
    let reps = limit_set_representatives(&ctx0, mpt_cfg, sweep_cfg, &base)?;

    let mut rows = Vec::with_capacity(terms.len());
    let mut complete = true;
    let mut warm_path = base.path.clone();
    let mut warm_solution = base.w_star.restrict_interior();
    for term in terms {
        let ctx_k = build_ctx(kernel, model, term.control, term.datum)?;
        let res = if sweep_cfg.warm_start {
            // the previous solution may already be stationary for the
            // perturbed functional; keep it verbatim then
            let g_prev = ctx_k.gradient_vec(&warm_solution);
            let f_prev = ctx_k.shifted_action_vec(&warm_solution);
            if norm(&g_prev) <= mpt_cfg.tol_grad && f_prev > mpt_cfg.tol_val {
                MinimaxResult {
                    w_star: crate::space::extend_by_zero(&warm_solution, kernel.space())?,
                    c_star: f_prev,
                    grad_norm: norm(&g_prev),
                    geometry: None,
                    iterations: 0,
                    converged: true,
                    trace: Vec::new(),
                    snapshots: Vec::new(),
                    path: warm_path.clone(),
                }
            } else {
                // reuse the previous final path when its far endpoint is
                // still valid for the perturbed functional
                let far = warm_path.nodes[warm_path.segments()].clone();
                if ctx_k.shifted_action_vec(&far) < 0.0 {
                    mpt::minimax_solve_from_path(&ctx_k, warm_path.clone(), mpt_cfg)?
                } else {
                    let d = mpt::initial_direction(&ctx_k, sweep_cfg.direction, mpt_cfg.seed)?;
                    mpt::solve_mountain_pass(&ctx_k, mpt_cfg, &d)?
                }
            }
        } else {
            let d = mpt::initial_direction(&ctx_k, sweep_cfg.direction, mpt_cfg.seed)?;
            mpt::solve_mountain_pass(&ctx_k, mpt_cfg, &d)?
        };
        if sweep_cfg.warm_start && res.converged {
            warm_path = res.path.clone();
            warm_solution = res.w_star.restrict_interior();
        }
        complete &= res.converged;
        let dist_w0 = kuratowski_distance(kernel, &res.w_star, &reps)?;
        let (gap_f, gap_grad) = uniform_convergence_gap(
            &ctx_k,
            &ctx0,
            sweep_cfg.gap_radius,
            sweep_cfg.gap_samples,
            mpt_cfg.seed,
        )?;
        rows.push(SweepRow {
            k: term.k,
            du_inf: term.du_inf,
            dv_y: term.dv_y,
            c_k: res.c_star,
            c_gap: (res.c_star - base.c_star).abs(),
            dist_w0,
            grad_norm: res.grad_norm,
            converged: res.converged,
            gap_f,
            gap_grad,
        });
    }
    Ok(StabilitySweep {
        base,
        reps,
        rows,
        complete,
    })
}

/// Energies along the descent ray `l * rho_1`, with `l` doubling until the
/// action drops below `floor` (or `l_max` is reached).
pub fn eigen_ray_descent(
    ctx: &EnergyContext,
    rho1: &GridFunction,
    floor: f64,
    l_max: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut l = 1.0;
    loop {
        let f = ctx.action(&rho1.scaled(l))?;
        out.push((l, f));
        if f < floor || l >= l_max {
            break;
        }
        l *= 2.0;
    }
    Ok(out)
}

/// Action values along the L^2-normalized eigenfunction sequence.
pub fn eigen_ray_ascent(ctx: &EnergyContext, count: usize) -> Result<Vec<(usize, f64, f64)>> {
    let pairs = kernel::eigenpairs(ctx.kernel(), count)?;
    let mut out = Vec::with_capacity(count);
    for (k, ep) in pairs.iter().enumerate() {
        let f = ctx.action(&ep.rho)?;
        out.push((k + 1, ep.lambda, f));
    }
    Ok(out)
}
