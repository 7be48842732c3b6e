//! Nonlocal machinery for the kernel `|x|^{-(n+alpha)}`: the normalizing
//! constant, the discrete pairwise weight table over the admissible pair set
//! (pairs with at least one interior endpoint), analytic tail corrections for
//! the truncated exterior, the induced bilinear form and norms, operator
//! application, projection onto the complement of X_0, and discrete
//! eigenpairs.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::par;
use crate::space::{GridFunction, RegionSel, SpatialDomain, lp_norm};

/// Normalizing constant `c(n, alpha)` in the form
/// `alpha * Gamma((n+alpha)/2) / (Gamma(1-alpha/2) * pi^(n/2) * 2^(2-alpha))`.
pub fn normalizing_constant(n: usize, alpha: f64) -> Result<f64> {
    check_order(n, alpha)?;
    let num = alpha * libm::tgamma((n as f64 + alpha) / 2.0);
    let den = libm::tgamma(1.0 - alpha / 2.0)
        * std::f64::consts::PI.powf(n as f64 / 2.0)
        * 2f64.powf(2.0 - alpha);
    Ok(num / den)
}

/// Same constant via the reflected form
/// `Gamma((n+alpha)/2) / (|Gamma(-alpha/2)| * pi^(n/2) * 2^(1-alpha))`.
///
/// Evaluating the gamma function at the negative argument takes a different
/// floating-point path, so agreement with [`normalizing_constant`] is a real
/// consistency check rather than an identity.
pub fn normalizing_constant_reflected(n: usize, alpha: f64) -> Result<f64> {
    check_order(n, alpha)?;
    let num = libm::tgamma((n as f64 + alpha) / 2.0);
    let den = libm::tgamma(-alpha / 2.0).abs()
        * std::f64::consts::PI.powf(n as f64 / 2.0)
        * 2f64.powf(1.0 - alpha);
    Ok(num / den)
}

fn check_order(n: usize, alpha: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParam("dimension must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParam(format!(
            "fractional order must lie in (0, 2), got {alpha}"
        )));
    }
    Ok(())
}

/// Surface measure of the unit sphere S^(n-1): `2 pi^(n/2) / Gamma(n/2)`.
pub fn unit_sphere_measure(n: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(n as f64 / 2.0) / libm::tgamma(n as f64 / 2.0)
}

/// One stored unordered node pair. `i` is always an interior node and
/// `i < j` in the grid ordering.
#[derive(Clone, Copy, Debug)]
pub struct Pair {
    pub i: u32,
    pub j: u32,
    pub w: f64,
}

/// Pairwise weights discretizing the nonlocal double integral over the
/// admissible pair set, plus per-interior-node tail corrections for the
/// region beyond the truncation radius.
#[derive(Debug)]
pub struct KernelWeights {
    space: Arc<SpatialDomain>,
    alpha: f64,
    c_nalpha: f64,
    pairs: Vec<Pair>,
    /// Tail weight per interior node:
    /// `w_i * sigma_{n-1} * R_ext^(-alpha) / alpha`.
    tail: Vec<f64>,
}

impl KernelWeights {
    pub fn space(&self) -> &Arc<SpatialDomain> {
        &self.space
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn constant(&self) -> f64 {
        self.c_nalpha
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn tail(&self) -> &[f64] {
        &self.tail
    }

    /// Critical exponent `2n/(n - alpha)` for the active grid dimension.
    pub fn critical_exponent(&self) -> f64 {
        let n = self.space.dim() as f64;
        2.0 * n / (n - self.alpha)
    }

    /// Plain-text dump: pair triples `(i, j, weight)` followed by the tail
    /// weight table, for external cross-checks.
    pub fn write_weight_table<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "i,j,weight")?;
        for p in &self.pairs {
            writeln!(out, "{},{},{:.16e}", p.i, p.j, p.w)?;
        }
        writeln!(out, "tail_node,tail_weight")?;
        for (i, t) in self.tail.iter().enumerate() {
            writeln!(out, "{i},{t:.16e}")?;
        }
        Ok(())
    }
}

/// Assemble the pairwise weight table and tail corrections for a grid.
pub fn assemble_weights(space: &Arc<SpatialDomain>, alpha: f64) -> Result<KernelWeights> {
    check_order(space.dim(), alpha)?;
    if space.dim() as f64 <= alpha {
        return Err(Error::InvalidParam(format!(
            "need n > alpha, got n = {}, alpha = {alpha}",
            space.dim()
        )));
    }
    let h = space.spacing();
    if space.truncation_radius() - space.collar_width() < h - 1e-12 * h {
        return Err(Error::InvalidGrid(format!(
            "tail formula needs R_ext - collar >= h (R_ext = {}, collar = {}, h = {})",
            space.truncation_radius(),
            space.collar_width(),
            h
        )));
    }

    let c_nalpha = normalizing_constant(space.dim(), alpha)?;
    let n_int = space.interior_count();
    let n_all = space.node_count();
    let exponent = -(space.dim() as f64 + alpha);

    // Interior nodes come first, so every admissible unordered pair (i, j)
    // with i < j has an interior i. One row of pairs per interior node keeps
    // the flattened order fixed regardless of worker count.
    let rows: Vec<Vec<Pair>> = par::map_collect(n_int, |i| {
        let wi = space.weight(i);
        let mut row = Vec::with_capacity(n_all - i - 1);
        for j in (i + 1)..n_all {
            let d = space.node_distance(i, j);
            let w = wi * space.weight(j) * d.powf(exponent);
            row.push(Pair {
                i: i as u32,
                j: j as u32,
                w,
            });
        }
        row
    });
    let pairs: Vec<Pair> = rows.into_iter().flatten().collect();

    let sigma = unit_sphere_measure(space.dim());
    let r_ext = space.truncation_radius();
    let tail_factor = sigma * r_ext.powf(-alpha) / alpha;
    let tail: Vec<f64> = (0..n_int).map(|i| space.weight(i) * tail_factor).collect();

    Ok(KernelWeights {
        space: Arc::clone(space),
        alpha,
        c_nalpha,
        pairs,
        tail,
    })
}

fn check_grid(k: &KernelWeights, z: &GridFunction) -> Result<()> {
    if !k.space.compatible(z.space()) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Discrete bilinear form of the nonlocal inner product:
/// `sum_pairs K_ij (z1_i - z1_j)(z2_i - z2_j) + sum_i T_i z1_i z2_i`.
///
/// The tail term treats both functions as zero beyond the truncation radius.
pub fn bilinear_form(k: &KernelWeights, z1: &GridFunction, z2: &GridFunction) -> Result<f64> {
    check_grid(k, z1)?;
    check_grid(k, z2)?;
    let a = z1.values();
    let b = z2.values();
    let pairs = k.pairs();
    let pair_part = par::chunked_sum(pairs.len(), |p| {
        let Pair { i, j, w } = pairs[p];
        let (i, j) = (i as usize, j as usize);
        w * (a[i] - a[j]) * (b[i] - b[j])
    });
    let tail = k.tail();
    let tail_part = par::chunked_sum(tail.len(), |i| tail[i] * a[i] * b[i]);
    Ok(pair_part + tail_part)
}

/// Gagliardo-type seminorm: square root of the self bilinear form.
pub fn x0_seminorm(k: &KernelWeights, z: &GridFunction) -> Result<f64> {
    let q = bilinear_form(k, z, z)?;
    if q < -1e-12 {
        return Err(Error::Numerical(format!(
            "bilinear self-value {q} is negative beyond tolerance: assembly bug"
        )));
    }
    Ok(q.max(0.0).sqrt())
}

/// Norm on X: `||z||_{L^2(interior)} + [z]`.
pub fn x_norm(k: &KernelWeights, z: &GridFunction) -> Result<f64> {
    Ok(lp_norm(z, 2.0, RegionSel::Interior)? + x0_seminorm(k, z)?)
}

/// Norm on Y: `||z||_{L^2(all nodes)} + [z]`.
pub fn y_norm(k: &KernelWeights, z: &GridFunction) -> Result<f64> {
    Ok(lp_norm(z, 2.0, RegionSel::All)? + x0_seminorm(k, z)?)
}

/// Inner product on Y: L^2 pairing over all nodes plus the bilinear form.
pub fn y_inner(k: &KernelWeights, z1: &GridFunction, z2: &GridFunction) -> Result<f64> {
    check_grid(k, z1)?;
    check_grid(k, z2)?;
    let a = z1.values();
    let b = z2.values();
    let space = k.space();
    let l2 = par::chunked_sum(space.node_count(), |i| space.weight(i) * a[i] * b[i]);
    Ok(l2 + bilinear_form(k, z1, z2)?)
}

/// Accumulate `row_i(z) = sum_j K_ij (z_i - z_j) + T_i z_i` for every
/// interior node i. This is the raw (unscaled) bilinear action of `z`
/// against each nodal basis function.
pub fn raw_rows(k: &KernelWeights, z: &[f64]) -> Vec<f64> {
    let n_int = k.space.interior_count();
    let mut out = vec![0.0; n_int];
    for p in &k.pairs {
        let (i, j) = (p.i as usize, p.j as usize);
        let d = z[i] - z[j];
        out[i] += p.w * d;
        if j < n_int {
            out[j] -= p.w * d;
        }
    }
    for (i, t) in k.tail.iter().enumerate() {
        out[i] += t * z[i];
    }
    out
}

/// Apply the discrete operator: interior values of `A z` defined by duality,
/// `<A z, phi>_{L^2} = c(n,alpha) * B(z, phi)` for every X_0 basis function.
pub fn apply_operator(k: &KernelWeights, z: &GridFunction) -> Result<GridFunction> {
    check_grid(k, z)?;
    let rows = raw_rows(k, z.values());
    let space = k.space();
    let mut vals = vec![0.0; space.node_count()];
    for (i, r) in rows.iter().enumerate() {
        vals[i] = k.c_nalpha * r / space.weight(i);
    }
    GridFunction::new(Arc::clone(space), vals)
}

/// Dense raw stiffness matrix on the interior (X_0) basis, tail included.
/// Entry (i, j) equals `B(e_i, e_j)` without the `c(n, alpha)` factor.
pub fn x0_stiffness_raw(k: &KernelWeights) -> DMatrix<f64> {
    let n_int = k.space.interior_count();
    let mut a = DMatrix::zeros(n_int, n_int);
    for p in &k.pairs {
        let (i, j) = (p.i as usize, p.j as usize);
        a[(i, i)] += p.w;
        if j < n_int {
            a[(j, j)] += p.w;
            a[(i, j)] -= p.w;
            a[(j, i)] -= p.w;
        }
    }
    for (i, t) in k.tail.iter().enumerate() {
        a[(i, i)] += t;
    }
    a
}

/// Project onto the orthogonal complement of X_0 in Y: returns
/// `v_perp = v - P v` where `P v` is the X_0 component in the Y inner
/// product. The Gram system is solved by a dense Cholesky factorization;
/// a singular Gram matrix is a hard error.
pub fn project_complement(k: &KernelWeights, v: &GridFunction) -> Result<GridFunction> {
    check_grid(k, v)?;
    let space = k.space();
    let n_int = space.interior_count();
    // Gram_ij = y_inner(e_i, e_j) = quad_i delta_ij + B(e_i, e_j)
    let mut gram = x0_stiffness_raw(k);
    for i in 0..n_int {
        gram[(i, i)] += space.weight(i);
    }
    // rhs_i = y_inner(v, e_i) = quad_i v_i + row_i(v)
    let rows = raw_rows(k, v.values());
    let rhs = nalgebra::DVector::from_iterator(
        n_int,
        (0..n_int).map(|i| space.weight(i) * v.value(i) + rows[i]),
    );
    let chol = nalgebra::linalg::Cholesky::new(gram)
        .ok_or_else(|| Error::LinearSolve("singular Gram matrix in X_0 projection".into()))?;
    let coeff = chol.solve(&rhs);
    let mut vals = v.values().to_vec();
    for i in 0..n_int {
        vals[i] -= coeff[i];
    }
    GridFunction::new(Arc::clone(space), vals)
}

/// One discrete eigenpair of the generalized problem
/// `c(n,alpha) B(rho, phi) = lambda <rho, phi>_{L^2(interior)}` over X_0.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    /// X_0-tagged eigenfunction, L^2-normalized on the interior.
    pub rho: GridFunction,
}

/// Lowest `count` eigenpairs in ascending eigenvalue order.
pub fn eigenpairs(k: &KernelWeights, count: usize) -> Result<Vec<EigenPair>> {
    let space = k.space();
    let n_int = space.interior_count();
    if count > n_int {
        return Err(Error::InvalidParam(format!(
            "requested {count} eigenpairs but the grid has {n_int} interior nodes"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    // Generalized symmetric problem S rho = lambda M rho with diagonal M:
    // transform to the standard problem for D^{-1/2} S D^{-1/2}.
    let mut b = x0_stiffness_raw(k);
    b.scale_mut(k.c_nalpha);
    let dinv: Vec<f64> = (0..n_int).map(|i| 1.0 / space.weight(i).sqrt()).collect();
    for i in 0..n_int {
        for j in 0..n_int {
            b[(i, j)] *= dinv[i] * dinv[j];
        }
    }
    // kill rounding asymmetry before factorizing
    let bt = b.transpose();
    let sym = (b + bt).scale(0.5);
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigen("symmetric QR iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..n_int).collect();
    order.sort_by(|&a, &bb| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[bb])
            .unwrap()
            .then(a.cmp(&bb))
    });

    let mut out = Vec::with_capacity(count);
    for &col in order.iter().take(count) {
        let y = eig.eigenvectors.column(col);
        let mut vals = vec![0.0; n_int];
        for i in 0..n_int {
            vals[i] = dinv[i] * y[i];
        }
        // sign convention: entry of largest magnitude is positive
        let (imax, _) = par::max_with_index(n_int, |i| vals[i].abs()).unwrap();
        if vals[imax] < 0.0 {
            for v in vals.iter_mut() {
                *v = -*v;
            }
        }
        // normalize in the nodal L^2 norm
        let norm = (0..n_int)
            .map(|i| space.weight(i) * vals[i] * vals[i])
            .sum::<f64>()
            .sqrt();
        for v in vals.iter_mut() {
            *v /= norm;
        }
        out.push(EigenPair {
            lambda: eig.eigenvalues[col],
            rho: crate::space::extend_by_zero(&vals, space)?,
        });
    }
    Ok(out)
}

/// Empirical embedding ratio `||z||_{L^s(interior)} / [z]` for X_0 functions.
pub fn embedding_ratio(k: &KernelWeights, z: &GridFunction, s: f64) -> Result<f64> {
    check_grid(k, z)?;
    if !z.is_x0() {
        return Err(Error::InvalidParam("embedding ratio needs an X_0 function".into()));
    }
    if s < 1.0 || s >= k.critical_exponent() {
        return Err(Error::InvalidParam(format!(
            "exponent {s} outside [1, {})",
            k.critical_exponent()
        )));
    }
    let denom = x0_seminorm(k, z)?;
    if denom == 0.0 {
        return Err(Error::InvalidParam("zero function has no embedding ratio".into()));
    }
    Ok(lp_norm(z, s, RegionSel::Interior)? / denom)
}
