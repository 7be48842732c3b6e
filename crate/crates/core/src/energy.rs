//! Action functionals and their gradients through the weak formulation.
//!
//! The shifted functional evaluated here is the homogenized one: for an X_0
//! argument `w` and exterior datum `v`,
//! `F(w) = (c/2) B(w,w) + c B(v,w) - int (G(x, w+v, u) - G(x, v, u))`,
//! which vanishes at `w = 0` exactly. `action` is the unshifted functional
//! on arbitrary grid functions.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{self, KernelWeights};
use crate::model::{BoundaryDatum, Control, Nonlinearity};
use crate::par;
use crate::space::GridFunction;

/// Shared evaluation context: kernel, model, control and boundary datum on
/// one grid, with the interior stiffness and boundary load assembled once.
pub struct EnergyContext {
    kernel: Arc<KernelWeights>,
    model: Arc<Nonlinearity>,
    control: Control,
    boundary: BoundaryDatum,
    /// `c(n,alpha) * B(e_i, e_j)` on the interior basis, tail included.
    stiff: DMatrix<f64>,
    /// `c(n,alpha) * B(v, e_i)` per interior node.
    load_v: Vec<f64>,
    /// Cached potential of the boundary datum: `sum_i q_i G(x_i, v_i, u_i)`.
    g_at_v: f64,
}

impl EnergyContext {
    pub fn new(
        kernel: Arc<KernelWeights>,
        model: Arc<Nonlinearity>,
        control: Control,
        boundary: BoundaryDatum,
    ) -> Result<Self> {
        let space = kernel.space();
        if !space.compatible(control.space()) || !space.compatible(boundary.v.space()) {
            return Err(Error::GridMismatch);
        }
        let c = kernel.constant();
        let mut stiff = kernel::x0_stiffness_raw(&kernel);
        stiff.scale_mut(c);
        let load_v: Vec<f64> = kernel::raw_rows(&kernel, boundary.v.values())
            .into_iter()
            .map(|r| c * r)
            .collect();
        let g_at_v = {
            let v = boundary.v.values();
            par::chunked_sum(space.interior_count(), |i| {
                space.weight(i) * model.g(space.coord(i), v[i], control.value_at(i))
            })
        };
        Ok(EnergyContext {
            kernel,
            model,
            control,
            boundary,
            stiff,
            load_v,
            g_at_v,
        })
    }

    pub fn kernel(&self) -> &Arc<KernelWeights> {
        &self.kernel
    }

    pub fn model(&self) -> &Arc<Nonlinearity> {
        &self.model
    }

    pub fn control(&self) -> &Control {
        &self.control
    }

    pub fn boundary(&self) -> &BoundaryDatum {
        &self.boundary
    }

    pub fn interior_count(&self) -> usize {
        self.kernel.space().interior_count()
    }

    /// Cached `int G(x, v, u)`.
    pub fn boundary_potential(&self) -> f64 {
        self.g_at_v
    }

    /// Quadrature of `G(x, z, u)` over interior nodes for an arbitrary
    /// full-grid argument.
    pub fn potential_of(&self, z: &GridFunction) -> f64 {
        let space = self.kernel.space();
        let vals = z.values();
        par::chunked_sum(space.interior_count(), |i| {
            space.weight(i) * self.model.g(space.coord(i), vals[i], self.control.value_at(i))
        })
    }

    /// The unshifted action `(c/2) B(z,z) - int G(x, z, u)` on an arbitrary
    /// grid function.
    pub fn action(&self, z: &GridFunction) -> Result<f64> {
        let q = kernel::bilinear_form(&self.kernel, z, z)?;
        Ok(0.5 * self.kernel.constant() * q - self.potential_of(z))
    }

    /// Shifted action on interior coefficients (fast path).
    pub fn shifted_action_vec(&self, w: &[f64]) -> f64 {
        let space = self.kernel.space();
        let sw = self.matvec(w);
        let quad: f64 = 0.5 * dot(w, &sw) + dot(w, &self.load_v);
        let v = self.boundary.v.values();
        let pot = par::chunked_sum(space.interior_count(), |i| {
            let u = self.control.value_at(i);
            let x = space.coord(i);
            space.weight(i) * (self.model.g(x, w[i] + v[i], u) - self.model.g(x, v[i], u))
        });
        quad - pot
    }

    /// Shifted action of an X_0-tagged grid function.
    pub fn shifted_action(&self, w: &GridFunction) -> Result<f64> {
        self.check_x0(w)?;
        Ok(self.shifted_action_vec(&w.values()[..self.interior_count()]))
    }

    /// Euclidean gradient of the shifted action with respect to interior
    /// nodal values:
    /// `r_i = c B(w + v, e_i) - q_i G_z(x_i, w_i + v_i, u_i)`.
    pub fn gradient_vec(&self, w: &[f64]) -> Vec<f64> {
        let space = self.kernel.space();
        let sw = self.matvec(w);
        let v = self.boundary.v.values();
        par::map_collect(self.interior_count(), |i| {
            sw[i] + self.load_v[i]
                - space.weight(i)
                    * self
                        .model
                        .g_z(space.coord(i), w[i] + v[i], self.control.value_at(i))
        })
    }

    /// Gradient as an X_0-tagged grid function (the Riesz residual of the
    /// weak formulation against the nodal basis).
    pub fn gradient(&self, w: &GridFunction) -> Result<GridFunction> {
        self.check_x0(w)?;
        let r = self.gradient_vec(&w.values()[..self.interior_count()]);
        crate::space::extend_by_zero(&r, self.kernel.space())
    }

    /// Euclidean norm of the gradient; zero characterizes discrete weak
    /// solutions.
    pub fn weak_residual_norm(&self, w: &GridFunction) -> Result<f64> {
        self.check_x0(w)?;
        Ok(norm(&self.gradient_vec(&w.values()[..self.interior_count()])))
    }

    pub fn matvec(&self, w: &[f64]) -> Vec<f64> {
        let n = self.interior_count();
        debug_assert_eq!(w.len(), n);
        par::map_collect(n, |i| {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.stiff[(i, j)] * w[j];
            }
            acc
        })
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiff
    }

    pub fn boundary_load(&self) -> &[f64] {
        &self.load_v
    }

    fn check_x0(&self, w: &GridFunction) -> Result<()> {
        if !self.kernel.space().compatible(w.space()) {
            return Err(Error::GridMismatch);
        }
        if !w.is_x0() {
            return Err(Error::InvalidParam("argument must be X_0-tagged".into()));
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    par::chunked_sum(a.len(), |i| a[i] * b[i])
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::assemble_weights;
    use crate::model::{BoxSet, quadratic_nonlinearity, zero_nonlinearity};
    use crate::space::{GridFunction, build_grid, extend_by_zero};

    fn ctx_1d(model: Nonlinearity, v_vals: Option<Vec<f64>>) -> EnergyContext {
        let g = build_grid(1, &[(0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let k = Arc::new(assemble_weights(&g, 0.7).unwrap());
        let set = BoxSet::new(vec![0.0], vec![1.0]).unwrap();
        let u = Control::constant(Arc::clone(&g), &[0.5], set, 1.0).unwrap();
        let v = match v_vals {
            Some(vals) => GridFunction::new(Arc::clone(&g), vals).unwrap(),
            None => GridFunction::zeros(Arc::clone(&g)),
        };
        let v0 = GridFunction::zeros(Arc::clone(&g));
        let bd = BoundaryDatum::new(&k, v, &v0, 100.0).unwrap();
        EnergyContext::new(k, Arc::new(model), u, bd).unwrap()
    }

    use crate::model::Nonlinearity;

    #[test]
    fn zero_model_zero_function_gives_zero_action() {
        let ctx = ctx_1d(zero_nonlinearity(), None);
        let z = GridFunction::zeros(Arc::clone(ctx.kernel().space()));
        assert_eq!(ctx.action(&z).unwrap(), 0.0);
    }

    #[test]
    fn zero_model_action_is_pure_quadratic() {
        let ctx = ctx_1d(zero_nonlinearity(), None);
        let g = ctx.kernel().space();
        let vals: Vec<f64> = (0..g.interior_count()).map(|i| (i as f64 - 1.0) * 0.3).collect();
        let z = extend_by_zero(&vals, g).unwrap();
        let f1 = ctx.action(&z).unwrap();
        let f2 = ctx.action(&z.scaled(2.0)).unwrap();
        assert!((f2 - 4.0 * f1).abs() < 1e-12 * f1.abs().max(1.0));
    }

    #[test]
    fn action_hand_oracle_with_quadratic_g() {
        // 1D grid, alpha = 0.5: interior 0.5, collar -0.5 and 1.5,
        // K_(0,±1) = 0.25, T_0 = 2 (see the kernel hand oracle).
        let g = build_grid(1, &[(0.0, 1.0)], 0.5, 0.5, 1.0).unwrap();
        let k = Arc::new(assemble_weights(&g, 0.5).unwrap());
        let set = BoxSet::new(vec![0.0], vec![1.0]).unwrap();
        let u = Control::constant(Arc::clone(&g), &[0.0], set, 1.0).unwrap();
        let v0 = GridFunction::zeros(Arc::clone(&g));
        let bd = BoundaryDatum::new(&k, GridFunction::zeros(Arc::clone(&g)), &v0, 1.0).unwrap();
        // G = z^2
        let model = quadratic_nonlinearity(2.0, 0.0);
        let ctx = EnergyContext::new(Arc::clone(&k), Arc::new(model), u, bd).unwrap();
        let z = GridFunction::new(Arc::clone(&g), vec![2.0, 1.0, -1.0]).unwrap();
        // B(z,z) = 0.25*(2-1)^2 + 0.25*(2+1)^2 + 2*4 = 0.25 + 2.25 + 8 = 10.5
        // potential = q_0 * z_0^2 = 0.5 * 4 = 2
        let expect = 0.5 * k.constant() * 10.5 - 2.0;
        let got = ctx.action(&z).unwrap();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn shifted_action_vanishes_at_zero_for_any_datum() {
        let g = build_grid(1, &[(0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let vals: Vec<f64> = (0..g.node_count()).map(|i| 0.1 * (i as f64).sin()).collect();
        let ctx = ctx_1d(crate::model::example_nonlinearity(1.0), Some(vals));
        let w = vec![0.0; ctx.interior_count()];
        assert_eq!(ctx.shifted_action_vec(&w), 0.0);
    }

    #[test]
    fn shifted_action_with_zero_datum_matches_unshifted() {
        let ctx = ctx_1d(quadratic_nonlinearity(-0.8, 0.3), None);
        let g = ctx.kernel().space();
        let vals: Vec<f64> = (0..g.interior_count()).map(|i| 0.4 - 0.2 * i as f64).collect();
        let w = extend_by_zero(&vals, g).unwrap();
        let a = ctx.shifted_action(&w).unwrap();
        let b = ctx.action(&w).unwrap(); // G(x,0,u) = 0 for this model
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn offset_identity_is_constant_in_w() {
        // shifted(w) - action(w + v) must not depend on w
        let g = build_grid(1, &[(0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let vvals: Vec<f64> = (0..g.node_count()).map(|i| 0.2 * ((i * 7 % 5) as f64) - 0.3).collect();
        let ctx = ctx_1d(crate::model::example_nonlinearity(1.0), Some(vvals));
        let gsp = ctx.kernel().space();
        let mut offsets = Vec::new();
        for trial in 0..10 {
            let vals: Vec<f64> = (0..gsp.interior_count())
                .map(|i| ((i + trial) as f64 * 0.77).sin())
                .collect();
            let w = extend_by_zero(&vals, gsp).unwrap();
            let z = w.add(&ctx.boundary().v).unwrap();
            offsets.push(ctx.shifted_action(&w).unwrap() - ctx.action(&z).unwrap());
        }
        let mean: f64 = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let var: f64 = offsets.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>();
        assert!(var < 1e-10, "offset varies: {offsets:?}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = build_grid(1, &[(0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let vvals: Vec<f64> = (0..g.node_count()).map(|i| 0.05 * (i as f64 + 1.0).cos()).collect();
        let ctx = ctx_1d(crate::model::example_nonlinearity(1.0), Some(vvals));
        let n = ctx.interior_count();
        let w: Vec<f64> = (0..n).map(|i| 0.8 * ((i as f64) * 1.1).sin() + 0.3).collect();
        let grad = ctx.gradient_vec(&w);
        let h = 1e-5;
        for trial in 0..5 {
            let dir: Vec<f64> = (0..n).map(|i| (((i + trial) * 31 % 13) as f64) / 13.0 - 0.4).collect();
            let mut wp = w.clone();
            let mut wm = w.clone();
            for i in 0..n {
                wp[i] += h * dir[i];
                wm[i] -= h * dir[i];
            }
            let fd = (ctx.shifted_action_vec(&wp) - ctx.shifted_action_vec(&wm)) / (2.0 * h);
            let an = dot(&grad, &dir);
            assert!((fd - an).abs() / an.abs().max(1e-8) < 1e-6, "fd {fd} vs {an}");
        }
    }

    #[test]
    fn gradient_is_linear_for_zero_model() {
        let ctx = ctx_1d(zero_nonlinearity(), None);
        let n = ctx.interior_count();
        let w1: Vec<f64> = (0..n).map(|i| i as f64 - 1.0).collect();
        let w2: Vec<f64> = (0..n).map(|i| 0.5 * i as f64 + 0.2).collect();
        let wsum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let g1 = ctx.gradient_vec(&w1);
        let g2 = ctx.gradient_vec(&w2);
        let gs = ctx.gradient_vec(&wsum);
        for i in 0..n {
            assert!((gs[i] - g1[i] - g2[i]).abs() < 1e-12);
        }
        // and equals the stiffness action on w
        let sw = ctx.matvec(&w1);
        for i in 0..n {
            assert!((g1[i] - sw[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_zero_exactly_at_linear_solve_solution() {
        // convex quadratic model: G = (q/2) z^2 + lin z with q < 0
        let (q, lin) = (-0.9, 0.4);
        let ctx = ctx_1d(quadratic_nonlinearity(q, lin), None);
        let n = ctx.interior_count();
        let gsp = Arc::clone(ctx.kernel().space());
        // solve (S - q M) w = q_i lin... gradient = S w - q_i (q w_i + lin)
        let mut a = ctx.stiffness().clone();
        let mut rhs = nalgebra::DVector::zeros(n);
        for i in 0..n {
            a[(i, i)] -= gsp.weight(i) * q;
            rhs[i] = gsp.weight(i) * lin;
        }
        let w = a.lu().solve(&rhs).unwrap();
        let wf = extend_by_zero(w.as_slice(), &gsp).unwrap();
        let res = ctx.weak_residual_norm(&wf).unwrap();
        assert!(res <= 1e-9, "residual {res}");
        // positive residual away from the solution
        let zero = GridFunction::zeros(gsp);
        assert!(ctx.weak_residual_norm(&zero).unwrap() > 1e-3);
    }

    #[test]
    fn residual_is_nonlinear_in_the_argument() {
        let ctx = ctx_1d(crate::model::power_nonlinearity(4.0), None);
        let g = ctx.kernel().space();
        let vals: Vec<f64> = (0..g.interior_count()).map(|i| 0.5 + 0.1 * i as f64).collect();
        let w = extend_by_zero(&vals, g).unwrap();
        let r1 = ctx.weak_residual_norm(&w).unwrap();
        let r2 = ctx.weak_residual_norm(&w.scaled(2.0)).unwrap();
        assert!((r2 - 2.0 * r1).abs() > 1e-6);
    }

    #[test]
    fn rejects_non_x0_arguments() {
        let ctx = ctx_1d(zero_nonlinearity(), None);
        let g = ctx.kernel().space();
        let bad = GridFunction::new(Arc::clone(g), vec![1.0; g.node_count()]).unwrap();
        assert!(ctx.shifted_action(&bad).is_err());
        assert!(ctx.gradient(&bad).is_err());
    }
}
