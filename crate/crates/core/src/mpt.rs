//! Numerical mountain-pass machinery: far-point search along superlinear
//! rays, sampled geometry verification, path-deformation minimax descent
//! with a gradient-only saddle polish, critical-point refinement,
//! Palais-Smale diagnostics, and the a priori ball check.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::energy::{EnergyContext, dot, norm};
use crate::error::{Error, Result};
use crate::model::StarConstants;
use crate::par;
use crate::space::GridFunction;

/// Solver knobs. Defaults converge in seconds at desk scale.
#[derive(Clone, Debug)]
pub struct MinimaxConfig {
    /// Radius of the sphere around zero used by the geometry check.
    pub eta: f64,
    /// Number of path segments; the path has `path_nodes + 1` nodes.
    pub path_nodes: usize,
    pub tol_grad: f64,
    pub tol_val: f64,
    pub max_iter: usize,
    /// Gradient norm below which the tangent polish stage takes over.
    pub polish_switch: f64,
    pub polish_max_iter: usize,
    /// Abort threshold for runaway descent.
    pub energy_floor: f64,
    pub geometry_samples: usize,
    pub seed: u64,
    /// Keep every k-th deformation iterate for diagnostics.
    pub snapshot_stride: usize,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        MinimaxConfig {
            eta: 0.1,
            path_nodes: 33,
            tol_grad: 1e-8,
            tol_val: 1e-8,
            max_iter: 50_000,
            polish_switch: 1e-3,
            polish_max_iter: 20_000,
            energy_floor: -1e12,
            geometry_samples: 200,
            seed: 0,
            snapshot_stride: 10,
        }
    }
}

/// Outcome of the sampled mountain-pass geometry check.
#[derive(Clone, Debug)]
pub struct GeometryReport {
    pub eta: f64,
    pub sphere_infimum: f64,
    pub f_omega1: f64,
    pub f_zero: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Deformation path between the origin and the far point. Endpoints are
/// fixed for the lifetime of the path.
#[derive(Clone, Debug)]
pub struct Path {
    /// Interior coefficient vectors of the nodes `g_0 ... g_P`.
    pub nodes: Vec<Vec<f64>>,
}

impl Path {
    /// Straight segment from the origin to `omega1` with `p + 1` nodes.
    pub fn segment(omega1: &[f64], p: usize) -> Result<Path> {
        if p < 8 {
            return Err(Error::InvalidParam(format!("path needs at least 8 segments, got {p}")));
        }
        let nodes = (0..=p)
            .map(|t| {
                let s = t as f64 / p as f64;
                omega1.iter().map(|v| s * v).collect()
            })
            .collect();
        Ok(Path { nodes })
    }

    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// One row of the deformation trace.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub iter: usize,
    pub t_star: usize,
    pub path_max_energy: f64,
    pub grad_norm: f64,
    /// Whether the nodes were re-spread along the polyline this iteration.
    /// Re-spreading samples the same polyline more evenly, so the sampled
    /// maximum may tick up while the underlying path is unchanged.
    pub redistributed: bool,
}

/// Decimated iterate snapshot for Palais-Smale diagnostics.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub energy: f64,
    pub grad_norm: f64,
    pub w: Vec<f64>,
}

/// Result of a minimax run.
#[derive(Clone, Debug)]
pub struct MinimaxResult {
    pub w_star: GridFunction,
    pub c_star: f64,
    pub grad_norm: f64,
    pub geometry: Option<GeometryReport>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
    /// Final deformation path, reusable as a warm start.
    pub path: Path,
}

/// Sum-form Y norm of an interior coefficient vector.
pub fn y_norm_vec(ctx: &EnergyContext, w: &[f64]) -> f64 {
    let space = ctx.kernel().space();
    let l2 = (0..w.len())
        .map(|i| space.weight(i) * w[i] * w[i])
        .sum::<f64>()
        .sqrt();
    l2 + x0_norm_vec(ctx, w)
}

/// X_0 seminorm of an interior coefficient vector through the assembled
/// stiffness.
pub fn x0_norm_vec(ctx: &EnergyContext, w: &[f64]) -> f64 {
    let sw = ctx.matvec(w);
    (dot(w, &sw) / ctx.kernel().constant()).max(0.0).sqrt()
}

/// Scale the direction onto the superlinear ray and march until the action
/// turns negative beyond the geometry sphere. The crossing scale is
/// bracketed by doubling and refined by bisection to three digits.
pub fn find_far_point(ctx: &EnergyContext, direction: &[f64], eta: f64) -> Result<Vec<f64>> {
    if eta <= 0.0 {
        return Err(Error::InvalidParam("eta must be positive".into()));
    }
    let dn = y_norm_vec(ctx, direction);
    if dn == 0.0 {
        return Err(Error::InvalidParam("far-point direction must be nonzero".into()));
    }
    // already beyond the sphere with negative action: keep the input
    if ctx.shifted_action_vec(direction) < 0.0 && dn >= eta {
        return Ok(direction.to_vec());
    }
    let dir: Vec<f64> = direction.iter().map(|v| v / dn).collect();
    let eval = |l: f64| {
        let w: Vec<f64> = dir.iter().map(|v| l * v).collect();
        ctx.shifted_action_vec(&w)
    };
    let mut lo = eta;
    if eval(lo) < 0.0 {
        return Ok(dir.iter().map(|v| lo * v).collect());
    }
    let mut hi = (2.0 * eta).max(1.0);
    let mut doublings = 0;
    while eval(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 40 {
            return Err(Error::FarPointExhausted);
        }
    }
    // bisect the sign change to 3 digits, keeping the negative end
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if eval(mid) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(dir.iter().map(|v| hi * v).collect())
}

/// Sample random directions on the Y-sphere of radius `eta` and estimate
/// the infimum of the action there; verify the far point sits below zero.
pub fn verify_geometry(
    ctx: &EnergyContext,
    omega1: &[f64],
    eta: f64,
    samples: usize,
    seed: u64,
) -> Result<GeometryReport> {
    if eta <= 0.0 {
        return Err(Error::InvalidParam("eta must be positive".into()));
    }
    let n = ctx.interior_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67656f6d);
    let mut dirs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut d: Vec<f64> = (0..n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let yn = y_norm_vec(ctx, &d);
        if yn == 0.0 {
            continue;
        }
        for v in d.iter_mut() {
            *v *= eta / yn;
        }
        dirs.push(d);
    }
    let energies = par::map_collect(dirs.len(), |i| ctx.shifted_action_vec(&dirs[i]));
    let sphere_infimum = energies.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let f_omega1 = ctx.shifted_action_vec(omega1);
    let f_zero = ctx.shifted_action_vec(&vec![0.0; n]);
    Ok(GeometryReport {
        eta,
        sphere_infimum,
        f_omega1,
        f_zero,
        samples: dirs.len(),
        pass: sphere_infimum > 0.0 && f_omega1 < 0.0 && f_zero == 0.0,
    })
}

/// Hessian action on a vector by central differences of the gradient.
fn hessian_apply(ctx: &EnergyContext, w: &[f64], v: &[f64]) -> Vec<f64> {
    let vn = norm(v);
    if vn == 0.0 {
        return vec![0.0; v.len()];
    }
    let eps = 1e-6 * (1.0 + norm(w)) / vn;
    let wp: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let wm: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - eps * b).collect();
    let gp = ctx.gradient_vec(&wp);
    let gm = ctx.gradient_vec(&wm);
    gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * eps)).collect()
}

/// Largest curvature magnitude at `w`, by power iteration on the
/// finite-difference Hessian action.
fn curvature_bound(ctx: &EnergyContext, w: &[f64], seed_dir: &[f64]) -> f64 {
    let mut v: Vec<f64> = seed_dir.to_vec();
    let mut l = 1.0;
    for _ in 0..8 {
        let hv = hessian_apply(ctx, w, &v);
        let hn = norm(&hv);
        if hn == 0.0 {
            break;
        }
        l = hn / norm(&v).max(1e-300);
        let inv = 1.0 / hn;
        v = hv.iter().map(|x| x * inv).collect();
    }
    l.max(1e-12)
}

/// Gradient-only saddle refinement: track the most negative curvature mode
/// with inverse-shifted power iterations on finite-difference Hessian
/// actions, and step along the gradient reflected through that mode.
fn saddle_polish(
    ctx: &EnergyContext,
    w0: &[f64],
    tangent: &[f64],
    tol_grad: f64,
    max_iter: usize,
    energy_floor: f64,
) -> (Vec<f64>, f64, usize) {
    let n = w0.len();
    let mut w = w0.to_vec();
    let mut tau: Vec<f64> = {
        let tn = norm(tangent);
        if tn == 0.0 {
            let mut t = vec![0.0; n];
            t[0] = 1.0;
            t
        } else {
            tangent.iter().map(|v| v / tn).collect()
        }
    };
    let big_l = curvature_bound(ctx, &w, &tau);
    let mut best_w = w.clone();
    let mut best_gn = f64::INFINITY;
    let g0 = ctx.gradient_vec(&w);
    let gn0 = norm(&g0);
    for it in 0..max_iter {
        let g = ctx.gradient_vec(&w);
        let gn = norm(&g);
        if gn < best_gn {
            best_gn = gn;
            best_w = w.clone();
        }
        if gn <= tol_grad {
            return (w, gn, it);
        }
        if gn > 100.0 * gn0 + 1.0 || ctx.shifted_action_vec(&w) < energy_floor {
            break;
        }
        // track the minimum-curvature mode: iterate (L I - H) tau
        let mut kappa = 0.0;
        for _ in 0..2 {
            let ht = hessian_apply(ctx, &w, &tau);
            kappa = dot(&tau, &ht);
            let y: Vec<f64> = tau.iter().zip(&ht).map(|(t, h)| big_l * t - h).collect();
            let yn = norm(&y);
            if yn == 0.0 {
                break;
            }
            tau = y.iter().map(|v| v / yn).collect();
        }
        // reflect the gradient through the unstable mode when one exists
        let d: Vec<f64> = if kappa < 0.0 {
            let gt = dot(&g, &tau);
            g.iter().zip(&tau).map(|(gi, ti)| gi - 2.0 * gt * ti).collect()
        } else {
            g.clone()
        };
        let step = 1.0 / (big_l + kappa.abs());
        for i in 0..n {
            w[i] -= step * d[i];
        }
    }
    let gn = norm(&ctx.gradient_vec(&best_w));
    (best_w, gn, max_iter)
}

/// Gradient descent with backtracking line search until the residual drops
/// below `tol_grad`. Divergence below the energy floor is a hard error.
pub fn refine_critical(
    ctx: &EnergyContext,
    w0: &[f64],
    tol_grad: f64,
    max_iter: usize,
    energy_floor: f64,
) -> Result<(Vec<f64>, f64, usize)> {
    if tol_grad <= 0.0 {
        return Err(Error::InvalidParam("tol_grad must be positive".into()));
    }
    let mut w = w0.to_vec();
    let mut f = ctx.shifted_action_vec(&w);
    let mut step = 1.0f64;
    for it in 0..max_iter {
        if f < energy_floor {
            return Err(Error::Numerical(format!(
                "descent diverged below the energy floor ({f} < {energy_floor}): \
                 the start left the saddle basin"
            )));
        }
        let g = ctx.gradient_vec(&w);
        let gn = norm(&g);
        if gn <= tol_grad {
            return Ok((w, gn, it));
        }
        step = (2.0 * step).min(1.0);
        loop {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let fc = ctx.shifted_action_vec(&cand);
            let want = 1e-4 * step * gn * gn;
            // near stationarity the Armijo decrease falls below the
            // rounding of F itself; accept any non-increasing step there
            let noise = 4.0 * f64::EPSILON * (1.0 + f.abs());
            if fc <= f - want || (want <= noise && fc <= f + noise) {
                w = cand;
                f = fc;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                // no descent direction at working precision
                return Ok((w, gn, it));
            }
        }
    }
    let gn = norm(&ctx.gradient_vec(&w));
    Ok((w, gn, max_iter))
}

fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Re-spread the nodes at equal polyline arclength when the spacing has
/// become uneven. The polyline itself is unchanged (new nodes are convex
/// combinations of old neighbours), only the sampling moves. Returns
/// whether anything changed.
fn redistribute_by_arclength(path: &mut Path) -> bool {
    let p = path.segments();
    let seglen: Vec<f64> = (0..p)
        .map(|t| euclid_dist(&path.nodes[t], &path.nodes[t + 1]))
        .collect();
    let total: f64 = seglen.iter().sum();
    if total == 0.0 {
        return false;
    }
    let mean = total / p as f64;
    let max_seg = seglen.iter().fold(0.0f64, |a, &b| a.max(b));
    if max_seg <= 1.5 * mean {
        return false;
    }
    let mut cum = vec![0.0; p + 1];
    for t in 0..p {
        cum[t + 1] = cum[t] + seglen[t];
    }
    let mut new_nodes = Vec::with_capacity(p + 1);
    new_nodes.push(path.nodes[0].clone());
    let mut seg = 0usize;
    for k in 1..p {
        let target = total * k as f64 / p as f64;
        while seg < p - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let denom = seglen[seg].max(1e-300);
        let t = ((target - cum[seg]) / denom).clamp(0.0, 1.0);
        let node: Vec<f64> = path.nodes[seg]
            .iter()
            .zip(&path.nodes[seg + 1])
            .map(|(a, b)| a + t * (b - a))
            .collect();
        new_nodes.push(node);
    }
    new_nodes.push(path.nodes[p].clone());
    path.nodes = new_nodes;
    true
}

/// Path-deformation minimax: keep the polyline evenly sampled, descend the
/// highest node with damped gradient steps capped by the local spacing,
/// re-spread its neighbours, and hand over to the tangent polish once the
/// top node is nearly stationary.
pub fn minimax_solve(
    ctx: &EnergyContext,
    omega1: &[f64],
    cfg: &MinimaxConfig,
) -> Result<MinimaxResult> {
    let path = Path::segment(omega1, cfg.path_nodes)?;
    minimax_solve_from_path(ctx, path, cfg)
}

/// Same as [`minimax_solve`] but starting from a caller-supplied path
/// (used by warm-started sweeps). Endpoints are taken as-is.
pub fn minimax_solve_from_path(
    ctx: &EnergyContext,
    mut path: Path,
    cfg: &MinimaxConfig,
) -> Result<MinimaxResult> {
    if cfg.tol_grad <= 0.0 {
        return Err(Error::InvalidParam("tol_grad must be positive".into()));
    }
    if path.segments() < 8 {
        return Err(Error::InvalidParam("path needs at least 8 segments".into()));
    }
    let p = path.segments();
    let mut energies = par::map_collect(p + 1, |t| ctx.shifted_action_vec(&path.nodes[t]));

    let mut trace = Vec::new();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut accepted: Option<(Vec<f64>, f64)> = None;
    let mut next_polish = 0usize;
    let mut iterations = 0;
    let mut best_max = f64::INFINITY;
    let mut last_progress = 0usize;

    for iter in 0..cfg.max_iter {
        iterations = iter + 1;

        let redistributed = redistribute_by_arclength(&mut path);
        if redistributed {
            energies = par::map_collect(p + 1, |t| ctx.shifted_action_vec(&path.nodes[t]));
        }

        // highest interior node moves; ties break to the lowest index
        let (t_star, f_top) = par::max_with_index(p - 1, |k| energies[k + 1])
            .map(|(k, v)| (k + 1, v))
            .expect("path has interior nodes");
        let path_max = energies.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let g = ctx.gradient_vec(&path.nodes[t_star]);
        let gn = norm(&g);
        trace.push(TraceRow {
            iter,
            t_star,
            path_max_energy: path_max,
            grad_norm: gn,
            redistributed,
        });
        if iter % cfg.snapshot_stride == 0 {
            snapshots.push(Snapshot {
                energy: f_top,
                grad_norm: gn,
                w: path.nodes[t_star].clone(),
            });
        }
        if path_max < best_max - 1e-12 * (1.0 + path_max.abs()) {
            best_max = path_max;
            last_progress = iter;
        }
        let stalled = iter > last_progress + 100;

        if gn <= cfg.tol_grad && f_top > cfg.tol_val {
            accepted = Some((path.nodes[t_star].clone(), gn));
            break;
        }

        // tangent polish once the top node is close to stationarity or the
        // deformation has stopped making progress
        if (gn <= cfg.polish_switch || stalled) && iter >= next_polish {
            let tangent: Vec<f64> = path.nodes[t_star + 1]
                .iter()
                .zip(&path.nodes[t_star - 1])
                .map(|(a, b)| a - b)
                .collect();
            let (w, pgn, _) = saddle_polish(
                ctx,
                &path.nodes[t_star],
                &tangent,
                cfg.tol_grad,
                cfg.polish_max_iter,
                cfg.energy_floor,
            );
            let fw = ctx.shifted_action_vec(&w);
            // reject stationary points at or below zero value: those are
            // not of mountain-pass type
            if pgn <= cfg.tol_grad && fw > cfg.tol_val {
                snapshots.push(Snapshot {
                    energy: fw,
                    grad_norm: pgn,
                    w: w.clone(),
                });
                accepted = Some((w, pgn));
                break;
            }
            next_polish = iter + 200;
            last_progress = iter;
        }

        // damped descent of the top node (Armijo, factor 0.5), with the
        // trial step capped so the node cannot outrun the path sampling
        let spacing = (euclid_dist(&path.nodes[t_star - 1], &path.nodes[t_star])
            + euclid_dist(&path.nodes[t_star], &path.nodes[t_star + 1]))
            * 0.5;
        let mut step = if gn > 0.0 {
            (2.0 * spacing / gn).min(1.0)
        } else {
            1.0
        };
        let mut moved = false;
        while step >= 1e-18 {
            let cand: Vec<f64> = path.nodes[t_star]
                .iter()
                .zip(&g)
                .map(|(wi, gi)| wi - step * gi)
                .collect();
            let fc = ctx.shifted_action_vec(&cand);
            let want = 1e-4 * step * gn * gn;
            let noise = 4.0 * f64::EPSILON * (1.0 + f_top.abs());
            if fc <= f_top - want || (want <= noise && fc <= f_top + noise) {
                path.nodes[t_star] = cand;
                energies[t_star] = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // stuck at working precision; force a polish attempt next round
            next_polish = iter;
            continue;
        }
        if energies[t_star] < cfg.energy_floor {
            return Err(Error::Numerical(
                "path deformation diverged below the energy floor".into(),
            ));
        }

        // re-spread the neighbours toward local midpoints, never raising
        // the path maximum (endpoints stay fixed)
        let new_max = energies.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        for nb in [t_star.wrapping_sub(1), t_star + 1] {
            if nb == 0 || nb >= p {
                continue;
            }
            let cand: Vec<f64> = path.nodes[nb - 1]
                .iter()
                .zip(&path.nodes[nb + 1])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let fc = ctx.shifted_action_vec(&cand);
            if fc <= new_max {
                path.nodes[nb] = cand;
                energies[nb] = fc;
            }
        }
    }

    // final refinement from the best available point
    let (w_best, had_accept) = match accepted {
        Some(ref pair) => (pair.0.clone(), true),
        None => {
            let (t_star, _) = par::max_with_index(p - 1, |k| energies[k + 1])
                .map(|(k, v)| (k + 1, v))
                .expect("path has interior nodes");
            (path.nodes[t_star].clone(), false)
        }
    };
    let (w_star_vec, grad_norm, _) = refine_critical(
        ctx,
        &w_best,
        cfg.tol_grad,
        if had_accept { 100 } else { 2000 },
        cfg.energy_floor,
    )?;
    let c_star = ctx.shifted_action_vec(&w_star_vec);
    let w_norm = x0_norm_vec(ctx, &w_star_vec);
    let converged = grad_norm <= cfg.tol_grad && c_star > cfg.tol_val && w_norm > cfg.tol_val;
    let w_star = crate::space::extend_by_zero(&w_star_vec, ctx.kernel().space())?;
    Ok(MinimaxResult {
        w_star,
        c_star,
        grad_norm,
        geometry: None,
        iterations,
        converged,
        trace,
        snapshots,
        path,
    })
}

/// Initial ray for the far-point search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// First eigenfunction tilted by a deterministic ramp. The tilt breaks
    /// grid symmetries that would otherwise trap the deformation in a
    /// symmetric subspace above the lowest col.
    EigenTilt,
    /// Plain deterministic ramp, positive and asymmetric.
    Ramp,
    /// Seeded random direction.
    Random,
}

/// Build the initial direction vector for the pipeline.
pub fn initial_direction(ctx: &EnergyContext, kind: Direction, seed: u64) -> Result<Vec<f64>> {
    let n = ctx.interior_count();
    match kind {
        Direction::EigenTilt => {
            let pairs = crate::kernel::eigenpairs(ctx.kernel(), 1)?;
            let rho = pairs[0].rho.restrict_interior();
            Ok((0..n)
                .map(|i| rho[i] * (1.0 + 0.1 * (i + 1) as f64 / n as f64))
                .collect())
        }
        Direction::Ramp => Ok((0..n).map(|i| 1.0 + 0.05 * (i + 1) as f64).collect()),
        Direction::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64697265);
            Ok((0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        }
    }
}

/// Full pipeline: far point along the direction, sampled geometry check,
/// then the minimax deformation. Fails when the geometry check fails.
pub fn solve_mountain_pass(
    ctx: &EnergyContext,
    cfg: &MinimaxConfig,
    direction: &[f64],
) -> Result<MinimaxResult> {
    let omega1 = find_far_point(ctx, direction, cfg.eta)?;
    let geometry = verify_geometry(ctx, &omega1, cfg.eta, cfg.geometry_samples, cfg.seed)?;
    if !geometry.pass {
        return Err(Error::Numerical(format!(
            "mountain-pass geometry check failed: sphere infimum {:.3e}, F(omega1) {:.3e}",
            geometry.sphere_infimum, geometry.f_omega1
        )));
    }
    let mut res = minimax_solve(ctx, &omega1, cfg)?;
    res.geometry = Some(geometry);
    Ok(res)
}

/// Palais-Smale style diagnostic over a recorded iterate sequence.
#[derive(Clone, Debug)]
pub struct PsReport {
    pub energy_bound: f64,
    pub bounded: bool,
    pub selected: usize,
    pub tail_spread: f64,
    pub ps_like: bool,
}

/// Flag bounded-energy, vanishing-gradient subsequences and measure the
/// X_0-norm spread of their tail. A small spread is the numerical trace of
/// the compactness the Palais-Smale condition asserts.
pub fn palais_smale_diagnostic(ctx: &EnergyContext, snapshots: &[Snapshot]) -> PsReport {
    if snapshots.is_empty() {
        return PsReport {
            energy_bound: 0.0,
            bounded: false,
            selected: 0,
            tail_spread: f64::INFINITY,
            ps_like: false,
        };
    }
    let mut abs_e: Vec<f64> = snapshots.iter().map(|s| s.energy.abs()).collect();
    abs_e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = abs_e[abs_e.len() / 2];
    let energy_bound = 10.0 * (1.0 + median);
    let bounded = snapshots.iter().all(|s| s.energy.abs() <= energy_bound);

    let g_min = snapshots
        .iter()
        .map(|s| s.grad_norm)
        .fold(f64::INFINITY, f64::min);
    let g_max = snapshots
        .iter()
        .map(|s| s.grad_norm)
        .fold(0.0f64, f64::max);
    let threshold = (10.0 * g_min).max(1e-12 * (1.0 + g_max));
    let chosen: Vec<&Snapshot> = snapshots
        .iter()
        .filter(|s| s.grad_norm <= threshold && s.energy.abs() <= energy_bound)
        .collect();
    let tail_len = (chosen.len() / 5).max(5).min(chosen.len());
    let tail = &chosen[chosen.len() - tail_len..];
    let mut spread = 0.0f64;
    for i in 0..tail.len() {
        for j in (i + 1)..tail.len() {
            let diff: Vec<f64> = tail[i]
                .w
                .iter()
                .zip(&tail[j].w)
                .map(|(a, b)| a - b)
                .collect();
            spread = spread.max(x0_norm_vec(ctx, &diff));
        }
    }
    PsReport {
        energy_bound,
        bounded,
        selected: chosen.len(),
        tail_spread: spread,
        ps_like: bounded && !chosen.is_empty() && spread.is_finite(),
    }
}

/// A priori ball report: the critical point must lie inside the ball whose
/// radius is the positive root of the energy bound fitted from the star
/// constants and the boundary-datum seminorm.
#[derive(Clone, Debug)]
pub struct BallReport {
    pub rho: f64,
    pub inside: bool,
    pub d1_hat: f64,
    pub d2_hat: f64,
    pub w_norm: f64,
}

pub fn apriori_ball_check(
    ctx: &EnergyContext,
    w_star: &[f64],
    p: f64,
    c_bar: f64,
    star: &StarConstants,
) -> Result<BallReport> {
    if p <= 2.0 {
        return Err(Error::InvalidParam(format!("superlinearity exponent must exceed 2, got {p}")));
    }
    let c = ctx.kernel().constant();
    let kernel = ctx.kernel();
    let space = kernel.space();
    let v_semi = crate::kernel::x0_seminorm(kernel, &ctx.boundary().v)?;
    let d1_hat = c * (p - 2.0) * v_semi;

    // bounded remainder of the superlinearity defect on |z| <= R, sampled
    // on the nodes with the active control
    let big_r = ctx.model().constants.big_r;
    let mut m_r = 0.0f64;
    let nz = 41;
    for i in 0..space.interior_count() {
        let x = space.coord(i);
        let u = ctx.control().value_at(i);
        for k in 0..nz {
            let z = -big_r + 2.0 * big_r * k as f64 / (nz - 1) as f64;
            let defect = z * ctx.model().g_z(x, z, u) - p * ctx.model().g(x, z, u);
            m_r = m_r.max(defect.abs());
        }
    }
    let mut g_v_max = 0.0f64;
    let v = ctx.boundary().v.values();
    for i in 0..space.interior_count() {
        g_v_max = g_v_max.max(ctx.model().g(space.coord(i), v[i], ctx.control().value_at(i)).abs());
    }
    let omega_measure: f64 = (0..space.interior_count()).map(|i| space.weight(i)).sum();
    let _ = star; // star constants pin feasibility of the envelopes upstream
    let d2_hat = c * v_semi * v_semi + omega_measure * (m_r + p * g_v_max);

    let a = 0.5 * c * (p - 2.0);
    let disc = d1_hat * d1_hat + 4.0 * a * (d2_hat + p * c_bar);
    let rho = (d1_hat + disc.sqrt()) / (2.0 * a);
    let w_norm = x0_norm_vec(ctx, w_star);
    Ok(BallReport {
        rho,
        inside: w_norm <= rho,
        d1_hat,
        d2_hat,
        w_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::assemble_weights;
    use crate::model::{
        BoundaryDatum, BoxSet, Control, estimate_star_constants, power_nonlinearity,
        quadratic_nonlinearity, ConditionSample,
    };
    use crate::space::{GridFunction, build_grid};
    use std::sync::Arc;

    fn quartic_ctx() -> EnergyContext {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let k = Arc::new(assemble_weights(&g, 1.5).unwrap());
        let set = BoxSet::new(vec![0.0], vec![1.0]).unwrap();
        let u = Control::constant(Arc::clone(&g), &[0.0], set, 1.0).unwrap();
        let v0 = GridFunction::zeros(Arc::clone(&g));
        let bd = BoundaryDatum::new(&k, GridFunction::zeros(Arc::clone(&g)), &v0, 1.0).unwrap();
        EnergyContext::new(k, Arc::new(power_nonlinearity(4.0)), u, bd).unwrap()
    }

    #[test]
    fn far_point_has_negative_action_beyond_sphere() {
        let ctx = quartic_ctx();
        let n = ctx.interior_count();
        // small direction: the action is still positive here, so the
        // doubling scan has to run
        let dir: Vec<f64> = (0..n).map(|i| 0.02 * (1.0 + (i % 3) as f64 * 0.3)).collect();
        let eta = 0.05;
        let omega1 = find_far_point(&ctx, &dir, eta).unwrap();
        assert!(ctx.shifted_action_vec(&omega1) < 0.0);
        assert!(y_norm_vec(&ctx, &omega1) >= eta);
        // direction scaling leaves the far point unchanged
        let dir2: Vec<f64> = dir.iter().map(|v| 2.0 * v).collect();
        let omega2 = find_far_point(&ctx, &dir2, eta).unwrap();
        for (a, b) in omega1.iter().zip(&omega2) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
        // a far point fed back in returns unchanged
        let again = find_far_point(&ctx, &omega1, eta).unwrap();
        assert_eq!(again, omega1);
    }

    #[test]
    fn far_point_scan_matches_dense_ray_oracle() {
        let ctx = quartic_ctx();
        let n = ctx.interior_count();
        let dir: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.9).sin() + 1.2).collect();
        let eta = 0.05;
        let omega1 = find_far_point(&ctx, &dir, eta).unwrap();
        let l0 = y_norm_vec(&ctx, &omega1);
        // dense scan: the action along the normalized ray changes sign
        // inside [l0 * 0.995, l0]
        let dn = y_norm_vec(&ctx, &dir);
        let unit: Vec<f64> = dir.iter().map(|v| v / dn).collect();
        let f_at = |l: f64| {
            let w: Vec<f64> = unit.iter().map(|v| l * v).collect();
            ctx.shifted_action_vec(&w)
        };
        assert!(f_at(l0) < 0.0);
        let mut bracket_ok = false;
        for k in 0..200 {
            let l = l0 * (1.0 - 0.005 * k as f64 / 200.0);
            if f_at(l) >= 0.0 {
                bracket_ok = true;
                break;
            }
        }
        assert!(bracket_ok, "sign change not within 0.5% below l0");
    }

    #[test]
    fn geometry_passes_for_definite_quadratic() {
        // G = (q/2) z^2 with q < 0 keeps the action positive definite
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let k = Arc::new(assemble_weights(&g, 1.5).unwrap());
        let c = k.constant();
        let set = BoxSet::new(vec![0.0], vec![1.0]).unwrap();
        let u = Control::constant(Arc::clone(&g), &[0.0], set, 1.0).unwrap();
        let v0 = GridFunction::zeros(Arc::clone(&g));
        let bd = BoundaryDatum::new(&k, GridFunction::zeros(Arc::clone(&g)), &v0, 1.0).unwrap();
        // G = -(c/2) z^2 + (b/2) z^2 with b = 0.4 c
        let b = 0.4 * c;
        let model = quadratic_nonlinearity(b - c, 0.0);
        let ctx = EnergyContext::new(Arc::clone(&k), Arc::new(model), u, bd).unwrap();
        let eta = 0.3;
        let n = ctx.interior_count();
        // no far point exists (the action is coercive); verify the sphere
        // infimum estimate directly against the quadratic lower bound
        let fake_omega: Vec<f64> = vec![0.0; n];
        let rep = verify_geometry(&ctx, &fake_omega, eta, 200, 7).unwrap();
        assert!(rep.sphere_infimum > 0.0);
        let lemma_bound = (0.5 * c - b) * eta * eta;
        assert!(
            rep.sphere_infimum >= lemma_bound * 0.95,
            "inf {} below the estimate {}",
            rep.sphere_infimum,
            lemma_bound
        );
        assert!(verify_geometry(&ctx, &fake_omega, 0.0, 10, 7).is_err());
    }

    #[test]
    fn minimax_finds_positive_critical_value_on_quartic() {
        let ctx = quartic_ctx();
        let n = ctx.interior_count();
        let dir: Vec<f64> = (0..n).map(|i| 1.0 + 0.05 * (i + 1) as f64).collect();
        let cfg = MinimaxConfig {
            eta: 0.05,
            ..MinimaxConfig::default()
        };
        let omega1 = find_far_point(&ctx, &dir, cfg.eta).unwrap();
        let geom = verify_geometry(&ctx, &omega1, cfg.eta, 100, cfg.seed).unwrap();
        assert!(geom.pass, "{geom:?}");
        let res = minimax_solve(&ctx, &omega1, &cfg).unwrap();
        assert!(res.converged, "grad {}", res.grad_norm);
        assert!(res.c_star > 0.0);
        assert!(res.grad_norm <= cfg.tol_grad);
        assert!(x0_norm_vec(&ctx, &res.w_star.restrict_interior()) > 1e-3);
        // damped descent keeps the sampled path max non-increasing except
        // where re-spreading refined the sampling of the same polyline
        for win in res.trace.windows(2) {
            if win[1].redistributed {
                continue;
            }
            assert!(
                win[1].path_max_energy
                    <= win[0].path_max_energy + 1e-10 * (1.0 + win[0].path_max_energy.abs()),
                "path max increased at iter {}",
                win[1].iter
            );
        }
        // endpoints never moved
        assert!(res.path.nodes[0].iter().all(|&v| v == 0.0));
        for (a, b) in res.path.nodes[res.path.segments()].iter().zip(&omega1) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn minimax_is_deterministic() {
        let ctx = quartic_ctx();
        let n = ctx.interior_count();
        let dir: Vec<f64> = (0..n).map(|i| 1.0 + 0.05 * (i + 1) as f64).collect();
        let cfg = MinimaxConfig {
            eta: 0.05,
            ..MinimaxConfig::default()
        };
        let omega1 = find_far_point(&ctx, &dir, cfg.eta).unwrap();
        let r1 = par::with_workers(1, || minimax_solve(&ctx, &omega1, &cfg).unwrap());
        let r2 = par::with_workers(4, || minimax_solve(&ctx, &omega1, &cfg).unwrap());
        assert_eq!(r1.c_star.to_bits(), r2.c_star.to_bits());
        assert_eq!(r1.iterations, r2.iterations);
        for (a, b) in r1
            .w_star
            .values()
            .iter()
            .zip(r2.w_star.values())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn refine_critical_solves_convex_quadratic() {
        // G = (q/2) z^2 + lin z with q < 0: strictly convex action
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let k = Arc::new(assemble_weights(&g, 1.5).unwrap());
        let set = BoxSet::new(vec![0.0], vec![1.0]).unwrap();
        let u = Control::constant(Arc::clone(&g), &[0.0], set, 1.0).unwrap();
        let v0 = GridFunction::zeros(Arc::clone(&g));
        let bd = BoundaryDatum::new(&k, GridFunction::zeros(Arc::clone(&g)), &v0, 1.0).unwrap();
        let (q, lin) = (-0.5, 0.3);
        let ctx =
            EnergyContext::new(Arc::clone(&k), Arc::new(quadratic_nonlinearity(q, lin)), u, bd)
                .unwrap();
        let n = ctx.interior_count();

        // oracle: direct linear solve
        let mut a = ctx.stiffness().clone();
        let mut rhs = nalgebra::DVector::zeros(n);
        for i in 0..n {
            a[(i, i)] -= g.weight(i) * q;
            rhs[i] = g.weight(i) * lin;
        }
        let oracle = a.lu().solve(&rhs).unwrap();

        let start: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let (w, gn, _) = refine_critical(&ctx, &start, 1e-10, 100_000, -1e12).unwrap();
        assert!(gn <= 1e-10);
        for i in 0..n {
            assert!((w[i] - oracle[i]).abs() < 1e-8, "node {i}");
        }
        // starting at the solution returns immediately
        let (w2, _, iters) = refine_critical(&ctx, oracle.as_slice(), 1e-8, 100, -1e12).unwrap();
        assert_eq!(iters, 0);
        assert_eq!(w2, oracle.as_slice().to_vec());
        assert!(refine_critical(&ctx, &start, 0.0, 10, -1e12).is_err());
    }

    #[test]
    fn ps_diagnostic_flags() {
        let ctx = quartic_ctx();
        let n = ctx.interior_count();
        let w = vec![0.3; n];
        // constant sequence: zero spread
        let snaps: Vec<Snapshot> = (0..20)
            .map(|_| Snapshot {
                energy: 1.0,
                grad_norm: 0.0,
                w: w.clone(),
            })
            .collect();
        let rep = palais_smale_diagnostic(&ctx, &snaps);
        assert!(rep.ps_like);
        assert_eq!(rep.tail_spread, 0.0);

        // diverging energies are not a PS sequence
        let bad: Vec<Snapshot> = (0..20)
            .map(|k| Snapshot {
                energy: 10f64.powi(k),
                grad_norm: 1.0,
                w: w.clone(),
            })
            .collect();
        let rep = palais_smale_diagnostic(&ctx, &bad);
        assert!(!rep.ps_like);
    }

    #[test]
    fn ball_check_degenerate_formula_and_containment() {
        // v = 0 and G = |z|^p / p: both fitted constants vanish and the
        // radius reduces to sqrt(2 p c_bar / (c (p-2)))
        let ctx = quartic_ctx();
        let p = 4.0;
        let sample = ConditionSample::lattice(
            ctx.kernel().space(),
            &ctx.control().set,
            6.0,
            41,
            3,
        );
        let v0 = vec![0.0; sample.xs.len()];
        let star =
            estimate_star_constants(ctx.model(), &v0, ctx.kernel().constant(), &sample).unwrap();
        let n = ctx.interior_count();
        let dir: Vec<f64> = (0..n).map(|i| 1.0 + 0.05 * (i + 1) as f64).collect();
        let omega1 = find_far_point(&ctx, &dir, 0.05).unwrap();
        let res = minimax_solve(&ctx, &omega1, &MinimaxConfig { eta: 0.05, ..Default::default() })
            .unwrap();
        let c_bar = res.c_star * 1.5;
        let rep = apriori_ball_check(&ctx, &res.w_star.restrict_interior(), p, c_bar, &star)
            .unwrap();
        let c = ctx.kernel().constant();
        let expect = (2.0 * p * c_bar / (c * (p - 2.0))).sqrt();
        assert!((rep.d1_hat).abs() < 1e-12);
        assert!((rep.d2_hat).abs() < 1e-9);
        assert!((rep.rho - expect).abs() / expect < 1e-9);
        assert!(rep.inside, "w norm {} vs rho {}", rep.w_norm, rep.rho);
        assert!(apriori_ball_check(&ctx, &res.w_star.restrict_interior(), 2.0, c_bar, &star).is_err());
    }
}
