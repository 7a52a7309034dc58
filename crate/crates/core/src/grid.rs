//! Discretized domains and the operators every other module is built on.
//!
//! Cartesian grids use the 5-point Laplacian with Dirichlet zero at masked
//! neighbours. Curved domains are staircase masks computed in integer
//! coordinates, so the mask is exactly invariant under the dihedral group of
//! the bounding square. Radial lines discretize `(1/r^{N-1})(r^{N-1}u')'`
//! in flux form with cell-volume weights, which makes the operator
//! self-adjoint in the weighted inner product and gives `u'(0)=0` at the
//! origin for free.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg;

const EIGEN_MAX_ITER: usize = 10_000;
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum GridKind {
    Rectangle { lx: f64, ly: f64 },
    Disk { radius: f64 },
    Annulus { r_in: f64, r_out: f64 },
    RadialLine { dim: usize, r_max: f64 },
}

impl GridKind {
    /// Token used in grid dumps and reports.
    pub fn token(&self) -> String {
        match self {
            GridKind::Rectangle { .. } => "rectangle2d".into(),
            GridKind::Disk { .. } => "disk2d".into(),
            GridKind::Annulus { .. } => "annulus2d".into(),
            GridKind::RadialLine { dim, .. } => format!("radialLine{dim}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    kind: GridKind,
    nx: usize,
    ny: usize,
    h: f64,
    origin: [f64; 2],
    interior: Vec<bool>,
    weight: Vec<f64>,
    /// Radial lines only: `c_N r_{k+1/2}^{N-1} / h` for the face between k and k+1.
    faces: Vec<f64>,
    restricted: bool,
    mu1: OnceLock<f64>,
}

impl Grid {
    /// `[0, lx] x [0, ly]` with `n` points along x; `ly` must be a multiple of the spacing.
    pub fn rectangle(lx: f64, ly: f64, n: usize) -> Result<Self> {
        Self::rectangle_at(lx, ly, n, [0.0, 0.0])
    }

    /// Rectangle centred at the origin.
    pub fn rectangle_centered(lx: f64, ly: f64, n: usize) -> Result<Self> {
        Self::rectangle_at(lx, ly, n, [-0.5 * lx, -0.5 * ly])
    }

    fn rectangle_at(lx: f64, ly: f64, n: usize, origin: [f64; 2]) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Geometry(format!("rectangle sides must be positive, got {lx} x {ly}")));
        }
        if n < 3 {
            return Err(Error::Geometry("need at least 3 points per axis".into()));
        }
        let h = lx / (n - 1) as f64;
        let cells_y = (ly / h).round();
        if cells_y < 2.0 || ((cells_y * h) - ly).abs() > 1e-9 * ly {
            return Err(Error::Geometry(format!(
                "ly = {ly} is not a multiple of the spacing h = {h}"
            )));
        }
        let (nx, ny) = (n, cells_y as usize + 1);
        let mut interior = vec![false; nx * ny];
        let mut weight = vec![0.0; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let k = iy * nx + ix;
                let edge_x = ix == 0 || ix == nx - 1;
                let edge_y = iy == 0 || iy == ny - 1;
                interior[k] = !edge_x && !edge_y;
                let fx = if edge_x { 0.5 } else { 1.0 };
                let fy = if edge_y { 0.5 } else { 1.0 };
                weight[k] = fx * fy * h * h;
            }
        }
        Ok(Self::planar(GridKind::Rectangle { lx, ly }, nx, ny, h, origin, interior, weight))
    }

    pub fn disk(radius: f64, n: usize) -> Result<Self> {
        if !(radius > 0.0) || n < 5 {
            return Err(Error::Geometry("disk needs radius > 0 and n >= 5".into()));
        }
        let span = (n - 1) as i64;
        // a node is interior when it sits at least half a cell inside the boundary
        Ok(Self::centered_mask(GridKind::Disk { radius }, radius, n, |rr| rr < (span - 1) * (span - 1)))
    }

    pub fn annulus(r_in: f64, r_out: f64, n: usize) -> Result<Self> {
        if !(0.0 < r_in && r_in < r_out) || n < 5 {
            return Err(Error::Geometry(format!(
                "annulus needs 0 < r_in < r_out and n >= 5, got ({r_in}, {r_out})"
            )));
        }
        let span = (n - 1) as i64;
        // doubled integer coordinates: r = sqrt(X^2+Y^2) * h/2, with R_out = span * h/2;
        // interior nodes keep half a cell away from both circles
        let rho_in = r_in / r_out * span as f64;
        let g = Self::centered_mask(
            GridKind::Annulus { r_in, r_out },
            r_out,
            n,
            |rr| rr < (span - 1) * (span - 1) && (rr as f64) > (rho_in + 1.0) * (rho_in + 1.0),
        );
        if g.interior_count() == 0 {
            return Err(Error::Geometry("annulus has no interior nodes at this resolution".into()));
        }
        Ok(g)
    }

    fn centered_mask(
        kind: GridKind,
        half_width: f64,
        n: usize,
        inside: impl Fn(i64) -> bool,
    ) -> Self {
        let h = 2.0 * half_width / (n - 1) as f64;
        let span = (n - 1) as i64;
        let mut interior = vec![false; n * n];
        let mut weight = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let x2 = 2 * ix as i64 - span;
                let y2 = 2 * iy as i64 - span;
                let k = iy * n + ix;
                if inside(x2 * x2 + y2 * y2) {
                    interior[k] = true;
                    weight[k] = h * h;
                }
            }
        }
        Self::planar(kind, n, n, h, [-half_width, -half_width], interior, weight)
    }

    fn planar(
        kind: GridKind,
        nx: usize,
        ny: usize,
        h: f64,
        origin: [f64; 2],
        interior: Vec<bool>,
        weight: Vec<f64>,
    ) -> Self {
        Self {
            kind,
            nx,
            ny,
            h,
            origin,
            interior,
            weight,
            faces: Vec::new(),
            restricted: false,
            mu1: OnceLock::new(),
        }
    }

    /// Radial line `r_k = k h`, `k = 0..n-1`, Dirichlet zero at `r_max`.
    pub fn radial_line(dim: usize, r_max: f64, n: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Geometry(format!("radial lines support N = 2, 3, got {dim}")));
        }
        if !(r_max > 0.0) || n < 4 {
            return Err(Error::Geometry("radial line needs r_max > 0 and n >= 4".into()));
        }
        let h = r_max / (n - 1) as f64;
        let c = sphere_area(dim);
        let nf = dim as f64;
        let edge = |k: usize| -> f64 {
            // r_{k-1/2}, clamped to [0, r_max]
            if k == 0 {
                0.0
            } else {
                ((k as f64 - 0.5) * h).min(r_max)
            }
        };
        let mut weight = vec![0.0; n];
        for (k, w) in weight.iter_mut().enumerate() {
            let lo = edge(k);
            let hi = if k + 1 == n { r_max } else { edge(k + 1) };
            *w = c * (hi.powi(dim as i32) - lo.powi(dim as i32)) / nf;
        }
        let faces = (0..n - 1)
            .map(|k| c * ((k as f64 + 0.5) * h).powi(dim as i32 - 1) / h)
            .collect();
        let mut interior = vec![true; n];
        interior[n - 1] = false;
        Ok(Self {
            kind: GridKind::RadialLine { dim, r_max },
            nx: n,
            ny: 1,
            h,
            origin: [0.0, 0.0],
            interior,
            weight,
            faces,
            restricted: false,
            mu1: OnceLock::new(),
        })
    }

    /// Same layout with the mask intersected with `keep(x, y)`; used for sub-domains.
    pub fn restrict(&self, keep: impl Fn(f64, f64) -> bool) -> Result<Self> {
        if self.is_radial_line() {
            return Err(Error::Geometry("radial lines cannot be restricted".into()));
        }
        let mut g = self.clone();
        g.mu1 = OnceLock::new();
        g.restricted = true;
        for k in 0..g.len() {
            if g.interior[k] {
                let [x, y] = g.coords(k);
                if !keep(x, y) {
                    g.interior[k] = false;
                    g.weight[k] = 0.0;
                }
            }
        }
        if g.interior_count() == 0 {
            return Err(Error::Geometry("restricted sub-domain has empty interior".into()));
        }
        Ok(g)
    }

    pub fn kind(&self) -> &GridKind {
        &self.kind
    }
    /// Points along the first axis.
    pub fn n(&self) -> usize {
        self.nx
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn is_restricted(&self) -> bool {
        self.restricted
    }
    pub fn is_radial_line(&self) -> bool {
        matches!(self.kind, GridKind::RadialLine { .. })
    }
    /// Disk or annulus: the grids on which reflections through the centre are node permutations.
    pub fn is_radially_symmetric(&self) -> bool {
        matches!(self.kind, GridKind::Disk { .. } | GridKind::Annulus { .. }) && !self.restricted
    }
    pub fn interior(&self) -> &[bool] {
        &self.interior
    }
    pub fn is_interior(&self, k: usize) -> bool {
        self.interior[k]
    }
    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }
    pub fn weights(&self) -> &[f64] {
        &self.weight
    }
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
    pub fn node(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    /// Physical coordinates of node `k` (`[r, 0]` on radial lines).
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let (ix, iy) = self.node(k);
        [
            self.origin[0] + ix as f64 * self.h,
            self.origin[1] + iy as f64 * self.h,
        ]
    }

    /// Radius of the domain's inscribed scale: half the short side, the disk radius, `r_out`, or `r_max`.
    pub fn outer_radius(&self) -> f64 {
        match self.kind {
            GridKind::Rectangle { lx, ly } => 0.5 * lx.min(ly),
            GridKind::Disk { radius } => radius,
            GridKind::Annulus { r_out, .. } => r_out,
            GridKind::RadialLine { r_max, .. } => r_max,
        }
    }

    /// Geometric centre of the bounding box (origin for radial lines).
    pub fn center(&self) -> [f64; 2] {
        if self.is_radial_line() {
            return [0.0, 0.0];
        }
        [
            self.origin[0] + 0.5 * (self.nx - 1) as f64 * self.h,
            self.origin[1] + 0.5 * (self.ny - 1) as f64 * self.h,
        ]
    }

    /// x-range `[min, max]` of the bounding box.
    pub fn x_extent(&self) -> [f64; 2] {
        [self.origin[0], self.origin[0] + (self.nx - 1) as f64 * self.h]
    }

    pub fn volume(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Same node layout and mask; the cheap check behind every grid/field pairing.
    pub fn compatible(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other)
            || (self.nx == other.nx
                && self.ny == other.ny
                && self.h == other.h
                && self.kind == other.kind
                && self.origin == other.origin
                && self.interior == other.interior)
    }

    pub(crate) fn check(&self, u: &ScalarField) -> Result<()> {
        if self.compatible(&u.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Writes `-Δu` into `out` (zero on masked nodes). Slices must have `len()` entries.
    pub fn neg_laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.len());
        debug_assert_eq!(out.len(), self.len());
        if self.is_radial_line() {
            let n = self.nx;
            for k in 0..n {
                if !self.interior[k] {
                    out[k] = 0.0;
                    continue;
                }
                let mut flux = self.faces[k] * (u[k] - u[k + 1]);
                if k > 0 {
                    flux += self.faces[k - 1] * (u[k] - u[k - 1]);
                }
                out[k] = flux / self.weight[k];
            }
            return;
        }
        let nx = self.nx;
        let inv_h2 = 1.0 / (self.h * self.h);
        let val = |k: usize| if self.interior[k] { u[k] } else { 0.0 };
        for k in 0..self.len() {
            if !self.interior[k] {
                out[k] = 0.0;
                continue;
            }
            // interior nodes never touch the bounding box edge
            let s = val(k - 1) + val(k + 1) + val(k - nx) + val(k + nx);
            out[k] = (4.0 * u[k] - s) * inv_h2;
        }
    }

    pub(crate) fn neg_laplacian_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.neg_laplacian_into(u, &mut out);
        out
    }

    /// Weighted sum `Σ w a b`.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// Discrete Dirichlet energy `∫|∇u|²`, i.e. `Σ w u (-Δu)`.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        self.dot(u, &self.neg_laplacian_vec(u))
    }

    /// `-Δu` as a field.
    pub fn laplacian_apply(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check(u)?;
        Ok(ScalarField {
            grid: u.grid.clone(),
            values: self.neg_laplacian_vec(&u.values),
        })
    }

    /// Lower bound that `λ` must exceed for `⟨·,·⟩_λ` to be a norm.
    pub fn lambda_floor(&self) -> Result<f64> {
        if self.is_radial_line() {
            Ok(0.0)
        } else {
            Ok(-self.first_eigenvalue_cached()?)
        }
    }

    pub fn check_lambda(&self, lambda: f64) -> Result<()> {
        // μ₁ > 0, so nonnegative λ needs no eigenvalue solve on bounded grids
        if !self.is_radial_line() && lambda >= 0.0 {
            return Ok(());
        }
        let bound = self.lambda_floor()?;
        if lambda > bound {
            Ok(())
        } else {
            Err(Error::NormNotEquivalent { lambda, bound })
        }
    }

    /// `⟨u, v⟩_λ = ∫ ∇u·∇v + λ u v`.
    pub fn inner_product(&self, u: &ScalarField, v: &ScalarField, lambda: f64) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        self.check_lambda(lambda)?;
        Ok(self.inner_product_raw(&u.values, &v.values, lambda))
    }

    pub(crate) fn inner_product_raw(&self, u: &[f64], v: &[f64], lambda: f64) -> f64 {
        let lv = self.neg_laplacian_vec(v);
        self.dot(u, &lv) + lambda * self.dot(u, v)
    }

    pub fn lp_norm(&self, u: &ScalarField, p: f64) -> Result<f64> {
        self.check(u)?;
        self.lp_norm_raw(&u.values, p)
    }

    pub(crate) fn lp_norm_raw(&self, u: &[f64], p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::InvalidArgument(format!("Lp norm needs p >= 1, got {p}")));
        }
        // sorted summation: the result depends only on the multiset of terms,
        // so node permutations (reflections, polarizations) preserve it bit for bit
        let mut terms: Vec<f64> = self
            .weight
            .iter()
            .zip(u)
            .map(|(w, x)| w * x.abs().powf(p))
            .collect();
        terms.sort_unstable_by(f64::total_cmp);
        let s: f64 = terms.iter().sum();
        Ok(s.powf(1.0 / p))
    }

    /// `∫ u⁴`, used everywhere in the quartic terms.
    pub(crate) fn quartic(&self, u: &[f64]) -> f64 {
        self.weight.iter().zip(u).map(|(w, x)| w * x * x * x * x).sum()
    }

    /// Solves `(-Δ + shift) x = rhs` on the interior (tridiagonal on radial lines, CG otherwise).
    pub fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.is_radial_line() {
            Ok(linalg::radial_tridiagonal_solve(self, &self.faces, shift, rhs))
        } else {
            linalg::cg_solve(self, shift, rhs, 1e-12, 20 * self.len().max(100))
        }
    }

    /// First Dirichlet eigenvalue by inverse power iteration.
    pub fn first_eigenvalue(&self, tol: f64) -> Result<f64> {
        if self.is_radial_line() {
            return Err(Error::Geometry("first eigenvalue needs a bounded-domain grid".into()));
        }
        let c = self.center();
        let scale = self.outer_radius();
        let mut x: Vec<f64> = (0..self.len())
            .map(|k| {
                if !self.interior[k] {
                    return 0.0;
                }
                let [px, py] = self.coords(k);
                let r2 = ((px - c[0]).powi(2) + (py - c[1]).powi(2)) / (scale * scale);
                (-r2).exp()
            })
            .collect();
        normalize_l2(self, &mut x);
        let mut prev = f64::INFINITY;
        for _ in 0..EIGEN_MAX_ITER {
            let mut y = linalg::cg_solve(self, 0.0, &x, 1e-13, 20 * self.len().max(100))?;
            normalize_l2(self, &mut y);
            let rq = self.dot(&y, &self.neg_laplacian_vec(&y));
            x = y;
            if (rq - prev).abs() < tol * rq.abs() {
                return Ok(rq);
            }
            prev = rq;
        }
        Err(Error::Convergence { what: "inverse power iteration", iterations: EIGEN_MAX_ITER })
    }

    pub fn first_eigenvalue_cached(&self) -> Result<f64> {
        if let Some(&mu) = self.mu1.get() {
            return Ok(mu);
        }
        let mu = self.first_eigenvalue(DEFAULT_EIGEN_TOL)?;
        Ok(*self.mu1.get_or_init(|| mu))
    }
}

fn normalize_l2(g: &Grid, x: &mut [f64]) {
    let n = g.dot(x, x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Surface area of the unit sphere in ℝ^N (N = 2, 3).
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("only N = 2, 3 are supported"),
    }
}

/// A real function on the nodes of a grid, zero on masked nodes.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    /// Masked entries are forced to zero.
    pub fn new(grid: Arc<Grid>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        for (v, &inside) in values.iter_mut().zip(grid.interior()) {
            if !inside {
                *v = 0.0;
            }
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` on interior nodes (`f(r, 0)` on radial lines).
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                if grid.is_interior(k) {
                    let [x, y] = grid.coords(k);
                    f(x, y)
                } else {
                    0.0
                }
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
