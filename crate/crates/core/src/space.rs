//! Geometry and discretization: uniform lattices over a box domain plus a
//! truncated exterior collar, region tags, nodal quadrature weights and plain
//! L^p norms.
//!
//! Nodes are the lattice points `a_i + k*h` strictly inside the open box
//! (interior) or strictly outside its closure within Euclidean distance
//! `collar` of the box (exterior collar). Lattice points that fall exactly on
//! the boundary belong to neither region and are dropped. Every node carries
//! the nodal quadrature weight `h^n`.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::par;

/// Region tag of a grid node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Interior,
    Collar,
}

/// Node selector for norms and integrals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionSel {
    Interior,
    Collar,
    All,
}

/// Uniform grid over a box together with its truncated exterior collar.
#[derive(Debug)]
pub struct SpatialDomain {
    n: usize,
    bounds: Vec<(f64, f64)>,
    h: f64,
    collar: f64,
    r_ext: f64,
    /// Node coordinates, node-major (`n` entries per node). Interior nodes
    /// come first in lexicographic lattice order, then collar nodes.
    coords: Vec<f64>,
    region: Vec<Region>,
    weight: Vec<f64>,
    n_interior: usize,
}

impl SpatialDomain {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn collar_width(&self) -> f64 {
        self.collar
    }

    pub fn truncation_radius(&self) -> f64 {
        self.r_ext
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn node_count(&self) -> usize {
        self.region.len()
    }

    pub fn interior_count(&self) -> usize {
        self.n_interior
    }

    pub fn collar_count(&self) -> usize {
        self.node_count() - self.n_interior
    }

    pub fn region(&self, node: usize) -> Region {
        self.region[node]
    }

    pub fn weight(&self, node: usize) -> f64 {
        self.weight[node]
    }

    pub fn coord(&self, node: usize) -> &[f64] {
        &self.coords[node * self.n..(node + 1) * self.n]
    }

    /// Euclidean distance between two nodes.
    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        let xa = self.coord(a);
        let xb = self.coord(b);
        xa.iter()
            .zip(xb)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    }

    /// Analytic volume of the box.
    pub fn box_volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Two domains are compatible when grid operations may mix their data.
    pub fn compatible(&self, other: &SpatialDomain) -> bool {
        self.n == other.n
            && self.node_count() == other.node_count()
            && self.n_interior == other.n_interior
            && self.h == other.h
            && self.bounds == other.bounds
    }

    /// Plain-text node table: index, coordinates, region, weight.
    pub fn write_node_table<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header = String::from("index");
        for d in 0..self.n {
            header.push_str(&format!(",x{d}"));
        }
        header.push_str(",region,weight");
        writeln!(out, "{header}")?;
        for i in 0..self.node_count() {
            let mut line = format!("{i}");
            for c in self.coord(i) {
                line.push_str(&format!(",{c:.16e}"));
            }
            let tag = match self.region(i) {
                Region::Interior => "interior",
                Region::Collar => "collar",
            };
            line.push_str(&format!(",{tag},{:.16e}", self.weight(i)));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn dist_to_box(x: &[f64], bounds: &[(f64, f64)]) -> f64 {
    x.iter()
        .zip(bounds)
        .map(|(&xi, &(lo, hi))| {
            let over = (lo - xi).max(xi - hi).max(0.0);
            over * over
        })
        .sum::<f64>()
        .sqrt()
}

/// Build a uniform grid over `box_bounds` with spacing `h`, an exterior
/// collar of the given width and tail-truncation radius `r_ext`.
pub fn build_grid(
    n: usize,
    box_bounds: &[(f64, f64)],
    h: f64,
    collar: f64,
    r_ext: f64,
) -> Result<Arc<SpatialDomain>> {
    if !(1..=3).contains(&n) {
        return Err(Error::InvalidParam(format!("dimension must be 1..=3, got {n}")));
    }
    if box_bounds.len() != n {
        return Err(Error::InvalidGrid(format!(
            "expected {n} box intervals, got {}",
            box_bounds.len()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParam(format!("spacing must be positive, got {h}")));
    }
    if collar < 0.0 {
        return Err(Error::InvalidParam(format!("collar width must be >= 0, got {collar}")));
    }
    if r_ext < collar {
        return Err(Error::InvalidParam(format!(
            "truncation radius {r_ext} must be >= collar width {collar}"
        )));
    }
    for &(lo, hi) in box_bounds {
        if !(hi > lo) {
            return Err(Error::InvalidGrid(format!("empty box interval [{lo}, {hi}]")));
        }
        if h > hi - lo {
            return Err(Error::InvalidGrid(format!(
                "spacing {h} exceeds box edge {}",
                hi - lo
            )));
        }
    }

    let eps = 1e-9 * h;
    // Per-axis lattice index ranges covering the box plus the collar.
    let ranges: Vec<(i64, i64)> = box_bounds
        .iter()
        .map(|&(lo, hi)| {
            let k_lo = -((collar / h) + 1e-9).floor() as i64;
            let k_hi = (((hi - lo) + collar) / h + 1e-9).floor() as i64;
            (k_lo, k_hi)
        })
        .collect();

    #[derive(PartialEq)]
    enum Class {
        Interior,
        Collar,
        Dropped,
    }

    let classify = |x: &[f64]| -> Class {
        let mut inside_open = true;
        let mut outside = false;
        for (&xi, &(lo, hi)) in x.iter().zip(box_bounds) {
            if xi < lo - eps || xi > hi + eps {
                outside = true;
                inside_open = false;
            } else if xi < lo + eps || xi > hi - eps {
                inside_open = false;
            }
        }
        if inside_open {
            Class::Interior
        } else if outside && dist_to_box(x, box_bounds) <= collar + eps {
            Class::Collar
        } else {
            Class::Dropped
        }
    };

    let mut interior_coords = Vec::new();
    let mut collar_coords = Vec::new();
    let mut idx = vec![0i64; n];
    // Lexicographic walk over the lattice.
    let mut walk = |coords_int: &mut Vec<f64>, coords_col: &mut Vec<f64>| {
        for d in 0..n {
            idx[d] = ranges[d].0;
        }
        loop {
            let x: Vec<f64> = (0..n)
                .map(|d| box_bounds[d].0 + idx[d] as f64 * h)
                .collect();
            match classify(&x) {
                Class::Interior => coords_int.extend_from_slice(&x),
                Class::Collar => coords_col.extend_from_slice(&x),
                Class::Dropped => {}
            }
            // advance the multi-index, last axis fastest
            let mut d = n;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] <= ranges[d].1 {
                    break;
                }
                idx[d] = ranges[d].0;
                if d == 0 {
                    return;
                }
            }
        }
    };
    walk(&mut interior_coords, &mut collar_coords);

    let n_interior = interior_coords.len() / n;
    let n_collar = collar_coords.len() / n;
    let mut coords = interior_coords;
    coords.extend_from_slice(&collar_coords);
    let mut region = vec![Region::Interior; n_interior];
    region.extend(std::iter::repeat(Region::Collar).take(n_collar));
    let weight = vec![h.powi(n as i32); n_interior + n_collar];

    Ok(Arc::new(SpatialDomain {
        n,
        bounds: box_bounds.to_vec(),
        h,
        collar,
        r_ext,
        coords,
        region,
        weight,
        n_interior,
    }))
}

/// A real-valued function sampled on every node of a grid.
#[derive(Clone, Debug)]
pub struct GridFunction {
    space: Arc<SpatialDomain>,
    values: Vec<f64>,
    x0: bool,
}

impl GridFunction {
    /// Wrap raw nodal values. The function is X_0-tagged when every exterior
    /// value is exactly zero.
    pub fn new(space: Arc<SpatialDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.node_count() {
            return Err(Error::LengthMismatch {
                expected: space.node_count(),
                got: values.len(),
            });
        }
        let x0 = values[space.interior_count()..].iter().all(|&v| v == 0.0);
        Ok(GridFunction { space, values, x0 })
    }

    pub fn zeros(space: Arc<SpatialDomain>) -> Self {
        let values = vec![0.0; space.node_count()];
        GridFunction { space, values, x0: true }
    }

    pub fn space(&self) -> &Arc<SpatialDomain> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_x0(&self) -> bool {
        self.x0
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Values on interior nodes, in node order.
    pub fn restrict_interior(&self) -> Vec<f64> {
        self.values[..self.space.interior_count()].to_vec()
    }

    pub fn scaled(&self, t: f64) -> GridFunction {
        GridFunction {
            space: Arc::clone(&self.space),
            values: self.values.iter().map(|v| t * v).collect(),
            x0: self.x0,
        }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if !self.space.compatible(&other.space) {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction {
            space: Arc::clone(&self.space),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            x0: self.x0 && other.x0,
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        if !self.space.compatible(&other.space) {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction {
            space: Arc::clone(&self.space),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            x0: self.x0 && other.x0,
        })
    }
}

/// Extend interior nodal values by zero to the whole grid. The result is
/// X_0-tagged by construction.
pub fn extend_by_zero(interior_values: &[f64], space: &Arc<SpatialDomain>) -> Result<GridFunction> {
    if interior_values.len() != space.interior_count() {
        return Err(Error::LengthMismatch {
            expected: space.interior_count(),
            got: interior_values.len(),
        });
    }
    let mut values = vec![0.0; space.node_count()];
    values[..interior_values.len()].copy_from_slice(interior_values);
    Ok(GridFunction {
        space: Arc::clone(space),
        values,
        x0: true,
    })
}

/// Nodal-quadrature L^s norm over a region: `(sum_i w_i |z_i|^s)^(1/s)`.
pub fn lp_norm(z: &GridFunction, s: f64, region: RegionSel) -> Result<f64> {
    if s < 1.0 {
        return Err(Error::InvalidParam(format!("L^s norm needs s >= 1, got {s}")));
    }
    let space = z.space();
    let (lo, hi) = match region {
        RegionSel::Interior => (0, space.interior_count()),
        RegionSel::Collar => (space.interior_count(), space.node_count()),
        RegionSel::All => (0, space.node_count()),
    };
    let vals = z.values();
    let total = par::chunked_sum(hi - lo, |k| {
        let i = lo + k;
        space.weight(i) * vals[i].abs().powf(s)
    });
    Ok(total.powf(1.0 / s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_1d_single_interior_node() {
        let g = build_grid(1, &[(0.0, 1.0)], 0.5, 0.5, 0.5).unwrap();
        assert_eq!(g.interior_count(), 1);
        assert_eq!(g.collar_count(), 2);
        assert!((g.coord(0)[0] - 0.5).abs() < 1e-12);
        let mut collars: Vec<f64> = (1..3).map(|i| g.coord(i)[0]).collect();
        collars.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((collars[0] + 0.5).abs() < 1e-12);
        assert!((collars[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn grid_2d_three_by_three() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        assert_eq!(g.interior_count(), 9);
        // one-layer collar without the diagonal corners
        assert_eq!(g.collar_count(), 20);
    }

    #[test]
    fn grid_3d_example_box() {
        // independent count: lattice points k/5 strictly inside (0,1)^3
        let g = build_grid(3, &[(0.0, 1.0); 3], 0.2, 0.2, 0.4).unwrap();
        let mut oracle = 0;
        for i in -2i32..10 {
            for j in -2i32..10 {
                for k in -2i32..10 {
                    let x = [0.2 * i as f64, 0.2 * j as f64, 0.2 * k as f64];
                    if x.iter().all(|&c| c > 1e-12 && c < 1.0 - 1e-12) {
                        oracle += 1;
                    }
                }
            }
        }
        assert_eq!(oracle, 64);
        assert_eq!(g.interior_count(), 64);
    }

    #[test]
    fn interior_weights_approximate_box_volume() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 2.0)], 0.25, 0.25, 0.5).unwrap();
        let sum: f64 = (0..g.interior_count()).map(|i| g.weight(i)).sum();
        // exact lattice value: (1 - h)(2 - h)
        assert!((sum - 0.75 * 1.75).abs() < 1e-12);
        assert!((g.box_volume() - sum).abs() < 2.0 * 0.25 * g.box_volume());
    }

    #[test]
    fn node_coordinates_are_unique() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.5, 0.5).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..g.node_count() {
            let key: Vec<i64> = g.coord(i).iter().map(|c| (c / 0.25).round() as i64).collect();
            assert!(seen.insert(key), "duplicate node {i}");
        }
    }

    #[test]
    fn interior_nodes_strictly_inside_collar_nodes_outside() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.5, 0.75).unwrap();
        for i in 0..g.node_count() {
            let x = g.coord(i);
            let d = dist_to_box(x, g.bounds());
            match g.region(i) {
                Region::Interior => {
                    assert!(x.iter().zip(g.bounds()).all(|(&c, &(lo, hi))| c > lo && c < hi));
                }
                Region::Collar => {
                    assert!(d > 0.0 && d <= g.truncation_radius() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_grid(1, &[(0.0, 1.0)], 1.5, 0.0, 0.0).is_err()); // h > edge
        assert!(build_grid(1, &[(0.0, 1.0)], 0.5, 0.5, 0.25).is_err()); // r_ext < collar
        assert!(build_grid(4, &[(0.0, 1.0); 4], 0.5, 0.5, 0.5).is_err());
        assert!(build_grid(1, &[(1.0, 1.0)], 0.5, 0.5, 0.5).is_err()); // empty box
    }

    #[test]
    fn lp_norm_examples() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.25, 0.5).unwrap();
        let zero = GridFunction::zeros(Arc::clone(&g));
        assert_eq!(lp_norm(&zero, 2.0, RegionSel::All).unwrap(), 0.0);

        let ones = extend_by_zero(&vec![1.0; g.interior_count()], &g).unwrap();
        let full = lp_norm(&ones, 2.0, RegionSel::Interior).unwrap();
        // sum of interior weights is (1-h)^2
        assert!((full - 0.75f64).abs() < 1e-12);

        // single spike of amplitude a: a * h^(n/s)
        let a = 3.7;
        let mut vals = vec![0.0; g.interior_count()];
        vals[4] = a;
        let spike = extend_by_zero(&vals, &g).unwrap();
        let got = lp_norm(&spike, 2.0, RegionSel::Interior).unwrap();
        assert!((got - a * 0.25f64).abs() < 1e-12); // h^{n/2} = 0.25 for n=2, h=0.25
    }

    #[test]
    fn lp_norm_rejects_s_below_one() {
        let g = build_grid(1, &[(0.0, 1.0)], 0.5, 0.5, 0.5).unwrap();
        let z = GridFunction::zeros(g);
        assert!(lp_norm(&z, 0.5, RegionSel::All).is_err());
    }

    #[test]
    fn extend_by_zero_roundtrip_and_length_check() {
        let g = build_grid(1, &[(0.0, 1.0)], 0.25, 0.25, 0.25).unwrap();
        let vals: Vec<f64> = (0..g.interior_count()).map(|i| i as f64 - 1.0).collect();
        let z = extend_by_zero(&vals, &g).unwrap();
        assert!(z.is_x0());
        assert_eq!(z.restrict_interior(), vals);
        assert!(extend_by_zero(&[1.0], &g).is_err());
    }

    #[test]
    fn lp_norm_refinement_stays_within_order_h() {
        // fixed smooth profile sampled on h and h/2 grids
        let profile = |x: &[f64]| (std::f64::consts::PI * x[0]).sin();
        let mut norms = Vec::new();
        for h in [0.1, 0.05] {
            let g = build_grid(1, &[(0.0, 1.0)], h, 0.0, 0.0).unwrap();
            let vals: Vec<f64> = (0..g.interior_count()).map(|i| profile(g.coord(i))).collect();
            let z = extend_by_zero(&vals, &g).unwrap();
            norms.push(lp_norm(&z, 2.0, RegionSel::Interior).unwrap());
        }
        // exact L2 norm of sin(pi x) on (0,1) is sqrt(1/2)
        let exact = 0.5f64.sqrt();
        assert!((norms[0] - exact).abs() < 0.1 * 2.0);
        assert!((norms[1] - norms[0]).abs() < 2.0 * 0.1);
    }
}
