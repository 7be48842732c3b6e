// temporary debug harness
use fracpass::energy::EnergyContext;
use fracpass::kernel::assemble_weights;
use fracpass::model::{BoundaryDatum, BoxSet, Control, power_nonlinearity};
use fracpass::mpt::*;
use fracpass::space::{GridFunction, build_grid};
use std::sync::Arc;

fn main() {
    let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
    let k = Arc::new(assemble_weights(&g, 1.5).unwrap());
    let set = BoxSet::new(vec![0.0], vec![1.0]).unwrap();
    let u = Control::constant(Arc::clone(&g), &[0.0], set, 1.0).unwrap();
    let v0 = GridFunction::zeros(Arc::clone(&g));
    let bd = BoundaryDatum::new(&k, GridFunction::zeros(Arc::clone(&g)), &v0, 1.0).unwrap();
    let ctx = EnergyContext::new(k, Arc::new(power_nonlinearity(4.0)), u, bd).unwrap();
    let n = ctx.interior_count();
    let dirs: Vec<(&str, Vec<f64>)> = vec![
        ("generic-ramp", (0..n).map(|i| 1.0 + 0.05 * (i as f64 + 1.0)).collect()),
        ("corner-spike", { let mut d = vec![0.1; n]; d[0] = 1.0; d }),
        ("sin-mix", (0..n).map(|i| 1.0 + 0.3 * ((i as f64) * 1.7).sin()).collect()),
    ];
    for (name, dir) in dirs {
        let cfg = MinimaxConfig { eta: 0.05, max_iter: 50000, ..MinimaxConfig::default() };
        let omega1 = find_far_point(&ctx, &dir, cfg.eta).unwrap();
        let t0 = std::time::Instant::now();
        let res = minimax_solve(&ctx, &omega1, &cfg).unwrap();
        println!("{name}: c*={:.9} gn={:.2e} iters={} conv={} time={:?}",
            res.c_star, res.grad_norm, res.iterations, res.converged, t0.elapsed());
    }
}
