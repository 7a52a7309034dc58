//! The energy functional, its gradient, group aggregates and set memberships.

use std::sync::Arc;

use crate::coupling::{CouplingSpec, Decomposition};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-8;

/// A `d`-component grid function sharing one grid.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    comps: Vec<Vec<f64>>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.grid.compatible(&other.grid) && self.comps == other.comps
    }
}

impl Field {
    pub fn zeros(grid: Arc<Grid>, d: usize) -> Self {
        let n = grid.len();
        Self { grid, comps: vec![vec![0.0; n]; d] }
    }

    /// Masked entries are forced to zero.
    pub fn new(grid: Arc<Grid>, mut comps: Vec<Vec<f64>>) -> Result<Self> {
        for c in &mut comps {
            if c.len() != grid.len() {
                return Err(Error::GridMismatch);
            }
            for (v, &inside) in c.iter_mut().zip(grid.interior()) {
                if !inside {
                    *v = 0.0;
                }
            }
        }
        Ok(Self { grid, comps })
    }

    pub fn from_components(comps: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = comps.first() else {
            return Err(Error::InvalidArgument("a field needs at least one component".into()));
        };
        let grid = first.grid().clone();
        if comps.iter().any(|c| !grid.compatible(c.grid())) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, comps: comps.into_iter().map(ScalarField::into_values).collect() })
    }

    pub fn from_fn(grid: Arc<Grid>, d: usize, f: impl Fn(usize, f64, f64) -> f64) -> Self {
        let comps = (0..d)
            .map(|i| ScalarField::from_fn(grid.clone(), |x, y| f(i, x, y)).into_values())
            .collect();
        Self { grid, comps }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn d(&self) -> usize {
        self.comps.len()
    }
    pub fn comp(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }
    pub fn comp_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.comps[i]
    }
    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn component(&self, i: usize) -> ScalarField {
        ScalarField::new(self.grid.clone(), self.comps[i].clone()).expect("component lives on the field grid")
    }

    pub fn l4_norms(&self) -> Vec<f64> {
        self.comps.iter().map(|c| self.grid.quartic(c).powf(0.25)).collect()
    }

    pub fn clamp_nonnegative(&mut self) {
        self.comps.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
    }

    pub fn is_nonnegative(&self) -> bool {
        self.comps.iter().flatten().all(|&v| v >= 0.0)
    }

    /// Multiplies every component in `group` by `c`.
    pub fn scale_components(&mut self, group: std::ops::Range<usize>, c: f64) {
        for i in group {
            self.comps[i].iter_mut().for_each(|v| *v *= c);
        }
    }

    /// `self + c · other`, component-wise.
    pub fn axpy(&self, c: f64, other: &Field) -> Result<Field> {
        self.check_same(other)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + c * y).collect())
            .collect();
        Ok(Field { grid: self.grid.clone(), comps })
    }

    /// `Σ_i Σ w a_i b_i`.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.comps.iter().zip(&other.comps).map(|(a, b)| self.grid.dot(a, b)).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if self.d() != other.d() || !self.grid.compatible(&other.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// `‖u_h‖²_h`, `M_B(u)` and `G_h(u) = ‖u_h‖²_h − Σ_k M_B(u)_{hk}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub group_norms: Vec<f64>,
    pub mb: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

impl GroupStats {
    pub fn m(&self) -> usize {
        self.group_norms.len()
    }

    /// `min_h (MB_hh − Σ_{k≠h} |MB_hk|)`; positive iff strictly diagonally dominant.
    pub fn dominance_margin(&self) -> f64 {
        (0..self.m())
            .map(|h| {
                let off: f64 = (0..self.m()).filter(|&k| k != h).map(|k| self.mb[h][k].abs()).sum();
                self.mb[h][h] - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `J` after scaling group `h` by `√t_h`: `½ Σ n_h t_h − ¼ tᵀ MB t`.
    pub fn psi(&self, t: &[f64]) -> f64 {
        let m = self.m();
        let lin: f64 = (0..m).map(|h| self.group_norms[h] * t[h]).sum();
        let quad: f64 = (0..m).map(|h| (0..m).map(|k| self.mb[h][k] * t[h] * t[k]).sum::<f64>()).sum();
        0.5 * lin - 0.25 * quad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    /// On the Nehari set: every group nonzero and `G_h = 0`.
    pub in_n: bool,
    /// `G_h ≤ 0` for every group, i.e. no group lies beyond its Nehari scaling.
    pub in_ntilde: bool,
    /// `M_B` strictly diagonally dominant.
    pub in_e: bool,
}

/// Coupling data together with a decomposition: everything `J` needs besides the field.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    spec: CouplingSpec,
    dec: Decomposition,
}

impl System {
    pub fn new(spec: CouplingSpec, dec: Decomposition) -> Result<Self> {
        if spec.d() != dec.d() {
            return Err(Error::InvalidArgument(format!(
                "coupling has {} components, decomposition has {}",
                spec.d(),
                dec.d()
            )));
        }
        Ok(Self { spec, dec })
    }

    pub fn spec(&self) -> &CouplingSpec {
        &self.spec
    }
    pub fn dec(&self) -> &Decomposition {
        &self.dec
    }
    pub fn d(&self) -> usize {
        self.spec.d()
    }
    pub fn m(&self) -> usize {
        self.dec.m()
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.d() != self.d() {
            return Err(Error::InvalidArgument(format!(
                "field has {} components, system has {}",
                u.d(),
                self.d()
            )));
        }
        Ok(())
    }

    /// `‖u_i‖²_i` for every component.
    pub fn component_norms(&self, u: &Field) -> Result<Vec<f64>> {
        self.check(u)?;
        let g = u.grid();
        Ok(u.comps
            .iter()
            .zip(self.spec.lambda())
            .map(|(c, &l)| g.inner_product_raw(c, c, l))
            .collect())
    }

    /// `Q_ij = ∫ u_i² u_j²` (unweighted by `β`).
    pub fn quartic_matrix(&self, u: &Field) -> Result<Vec<Vec<f64>>> {
        self.check(u)?;
        let g = u.grid();
        let d = self.d();
        let sq: Vec<Vec<f64>> = u.comps.iter().map(|c| c.iter().map(|v| v * v).collect()).collect();
        let mut q = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let v = g.dot(&sq[i], &sq[j]);
                q[i][j] = v;
                q[j][i] = v;
            }
        }
        Ok(q)
    }

    /// `J(u) = ½ Σ ‖u_i‖²_i − ¼ Σ β_ij ∫ u_i² u_j²`.
    pub fn energy(&self, u: &Field) -> Result<f64> {
        let norms = self.component_norms(u)?;
        let q = self.quartic_matrix(u)?;
        let d = self.d();
        let mut quartic = 0.0;
        for i in 0..d {
            for j in 0..d {
                quartic += self.spec.beta_ij(i, j) * q[i][j];
            }
        }
        Ok(0.5 * norms.iter().sum::<f64>() - 0.25 * quartic)
    }

    /// Same value as [`System::energy`], assembled from the group aggregates.
    pub fn energy_via_groups(&self, u: &Field) -> Result<f64> {
        let st = self.group_stats(u)?;
        Ok(st.psi(&vec![1.0; self.m()]))
    }

    /// `g_i = −Δu_i + λ_i u_i − Σ_j β_ij u_j² u_i`, the L²-gradient in the grid quadrature.
    pub fn gradient(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        let g = u.grid();
        let d = self.d();
        let n = g.len();
        let mut comps = Vec::with_capacity(d);
        for i in 0..d {
            let mut out = vec![0.0; n];
            g.neg_laplacian_into(&u.comps[i], &mut out);
            let l = self.spec.lambda()[i];
            for k in 0..n {
                if !g.is_interior(k) {
                    continue;
                }
                let ui = u.comps[i][k];
                let mut coupling = 0.0;
                for j in 0..d {
                    let uj = u.comps[j][k];
                    coupling += self.spec.beta_ij(i, j) * uj * uj;
                }
                out[k] += l * ui - coupling * ui;
            }
            comps.push(out);
        }
        Ok(Field { grid: g.clone(), comps })
    }

    pub fn group_stats(&self, u: &Field) -> Result<GroupStats> {
        let norms = self.component_norms(u)?;
        let q = self.quartic_matrix(u)?;
        Ok(self.group_stats_from(&norms, &q))
    }

    pub(crate) fn group_stats_from(&self, norms: &[f64], q: &[Vec<f64>]) -> GroupStats {
        let groups = self.dec.groups();
        let m = groups.len();
        let group_norms: Vec<f64> = groups.iter().map(|r| r.clone().map(|i| norms[i]).sum()).collect();
        let mut mb = vec![vec![0.0; m]; m];
        for h in 0..m {
            for k in h..m {
                let mut s = 0.0;
                for i in groups[h].clone() {
                    for j in groups[k].clone() {
                        s += self.spec.beta_ij(i, j) * q[i][j];
                    }
                }
                mb[h][k] = s;
                mb[k][h] = s;
            }
        }
        let g = (0..m).map(|h| group_norms[h] - mb[h].iter().sum::<f64>()).collect();
        GroupStats { group_norms, mb, g }
    }

    pub fn membership(&self, u: &Field, tol: f64) -> Result<Membership> {
        Ok(membership_of(&self.group_stats(u)?, tol))
    }

    /// `d²J(u)[v,v] = Σ‖v_i‖²_i − Σ β_ij ∫u_i²v_j² − 2 Σ β_ij ∫u_i u_j v_i v_j`.
    pub fn second_variation(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        u.check_same(v)?;
        let g = u.grid();
        let d = self.d();
        let norms: f64 = self.component_norms(v)?.iter().sum();
        let mut quartic = 0.0;
        for k in 0..g.len() {
            let w = g.weights()[k];
            if w == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for i in 0..d {
                let (ui, vi) = (u.comps[i][k], v.comps[i][k]);
                for j in 0..d {
                    let (uj, vj) = (u.comps[j][k], v.comps[j][k]);
                    s += self.spec.beta_ij(i, j) * (ui * ui * vj * vj + 2.0 * ui * uj * vi * vj);
                }
            }
            quartic += w * s;
        }
        Ok(norms - quartic)
    }
}

pub fn membership_of(st: &GroupStats, tol: f64) -> Membership {
    let nonzero = st.group_norms.iter().all(|&n| n > tol);
    let in_n = nonzero && st.g.iter().zip(&st.group_norms).all(|(g, n)| g.abs() <= tol * n);
    let in_ntilde = nonzero && st.g.iter().zip(&st.group_norms).all(|(g, n)| *g <= tol * n);
    let in_e = st.dominance_margin() > 0.0;
    Membership { in_n, in_ntilde, in_e }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_succeeds;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize) -> Arc<Grid> {
        Arc::new(Grid::rectangle(1.0, 1.0, n).unwrap())
    }

    fn random_field(g: &Arc<Grid>, d: usize, rng: &mut ChaCha8Rng) -> Field {
        let comps = (0..d).map(|_| (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        Field::new(g.clone(), comps).unwrap()
    }

    fn system(beta: Vec<Vec<f64>>, lambda: Vec<f64>, a: Vec<usize>) -> System {
        System::new(CouplingSpec::new(beta, lambda).unwrap(), Decomposition::new(a).unwrap()).unwrap()
    }

    fn sys3() -> System {
        system(
            vec![vec![1.0, 2.0, -0.3], vec![2.0, 1.5, 0.2], vec![-0.3, 0.2, 0.8]],
            vec![1.0, 0.5, 2.0],
            vec![0, 2, 3],
        )
    }

    /// Node-by-node evaluation with explicit finite differences, independent of the grid operators.
    fn brute_force_energy(sys: &System, u: &Field) -> f64 {
        let g = u.grid();
        let (n, h) = (g.nx(), g.h());
        let val = |c: &[f64], ix: usize, iy: usize| {
            let k = iy * n + ix;
            if g.is_interior(k) {
                c[k]
            } else {
                0.0
            }
        };
        let mut total = 0.0;
        for i in 0..sys.d() {
            let c = u.comp(i);
            // forward-difference edge sums reproduce the 5-point Dirichlet form
            let mut grad = 0.0;
            let mut mass = 0.0;
            for iy in 0..n {
                for ix in 0..n {
                    let here = val(c, ix, iy);
                    if ix + 1 < n {
                        grad += (val(c, ix + 1, iy) - here).powi(2);
                    }
                    if iy + 1 < n {
                        grad += (val(c, ix, iy + 1) - here).powi(2);
                    }
                    mass += here * here * h * h;
                }
            }
            total += 0.5 * (grad + sys.spec().lambda()[i] * mass);
        }
        for k in 0..g.len() {
            if !g.is_interior(k) {
                continue;
            }
            for i in 0..sys.d() {
                for j in 0..sys.d() {
                    let (a, b) = (u.comp(i)[k], u.comp(j)[k]);
                    total -= 0.25 * sys.spec().beta_ij(i, j) * a * a * b * b * h * h;
                }
            }
        }
        total
    }

    #[test]
    fn zero_field() {
        let g = square(9);
        let sys = sys3();
        let u = Field::zeros(g, 3);
        assert_eq!(sys.energy(&u).unwrap(), 0.0);
        assert!(sys.gradient(&u).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn scalar_paths_agree() {
        let g = square(17);
        let sys = system(vec![vec![1.3]], vec![0.7], vec![0, 1]);
        let u = Field::from_fn(g.clone(), 1, |_, x, y| (x * (1.0 - x) * y * (1.0 - y)) * 9.0);
        let direct = sys.energy(&u).unwrap();
        let c = u.comp(0);
        let closed = 0.5 * g.inner_product_raw(c, c, 0.7) - 0.25 * 1.3 * g.quartic(c);
        let via = sys.energy_via_groups(&u).unwrap();
        assert!((direct - closed).abs() < 1e-12 * direct.abs());
        assert!((direct - via).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn energy_matches_brute_force() {
        let g = square(13);
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = random_field(&g, 3, &mut rng);
            let a = sys.energy(&u).unwrap();
            let b = brute_force_energy(&sys, &u);
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn group_stats_structure() {
        let g = square(17);
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(&g, 3, &mut rng);
        let st = sys.group_stats(&u).unwrap();
        assert_eq!(st.mb[0][1], st.mb[1][0]);
        for h in 0..2 {
            let expect = st.group_norms[h] - st.mb[h][0] - st.mb[h][1];
            assert!((st.g[h] - expect).abs() < 1e-12 * st.group_norms[h]);
        }
        // disjoint supports across groups kill the off-diagonal block
        let sys2 = system(vec![vec![1.0, -3.0], vec![-3.0, 1.0]], vec![1.0, 1.0], vec![0, 1, 2]);
        let u = Field::from_fn(g.clone(), 2, |i, x, _| if (i == 0) == (x < 0.5) { x * (1.0 - x) } else { 0.0 });
        let st = sys2.group_stats(&u).unwrap();
        assert_eq!(st.mb[0][1], 0.0);
        assert!(membership_of(&st, 1e-8).in_e);
    }

    #[test]
    fn scalar_group_stats() {
        let g = square(17);
        let sys = system(vec![vec![2.0]], vec![1.0], vec![0, 1]);
        let u = Field::from_fn(g.clone(), 1, |_, x, y| x * y * (1.0 - x) * (1.0 - y));
        let st = sys.group_stats(&u).unwrap();
        let c = u.comp(0);
        assert!((st.mb[0][0] - 2.0 * g.quartic(c)).abs() < 1e-15);
        assert!(membership_of(&st, 1e-8).in_e);
    }

    #[test]
    fn second_variation_at_zero_is_the_norm() {
        let g = square(17);
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_field(&g, 3, &mut rng);
        let zero = Field::zeros(g, 3);
        let s = sys.second_variation(&zero, &v).unwrap();
        let norms: f64 = sys.component_norms(&v).unwrap().iter().sum();
        assert!(s > 0.0 && (s - norms).abs() < 1e-12 * norms);
    }

    #[test]
    fn second_variation_matches_second_difference() {
        let g = square(17);
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u = random_field(&g, 3, &mut rng);
            let v = random_field(&g, 3, &mut rng);
            let eps = 1e-3;
            let jp = sys.energy(&u.axpy(eps, &v).unwrap()).unwrap();
            let j0 = sys.energy(&u).unwrap();
            let jm = sys.energy(&u.axpy(-eps, &v).unwrap()).unwrap();
            let fd = (jp - 2.0 * j0 + jm) / (eps * eps);
            let exact = sys.second_variation(&u, &v).unwrap();
            assert!((fd - exact).abs() <= 1e-4 * exact.abs().max(1.0), "{fd} {exact}");
        }
    }

    #[test]
    fn semi_trivial_variation_sign() {
        // (u_1, 0) with the variation v = (0, u_1): d²J = ‖u_1‖²_2 − β_12 ∫u_1⁴
        let g = square(17);
        let sys = system(vec![vec![1.0, 3.0], vec![3.0, 1.0]], vec![1.0, 1.0], vec![0, 2]);
        let bump = Field::from_fn(g.clone(), 2, |i, x, y| if i == 0 { 4.0 * x * y * (1.0 - x) * (1.0 - y) } else { 0.0 });
        let v = Field::from_fn(g.clone(), 2, |i, x, y| if i == 1 { 4.0 * x * y * (1.0 - x) * (1.0 - y) } else { 0.0 });
        let c = bump.comp(0);
        let expect = g.inner_product_raw(c, c, 1.0) - 3.0 * g.quartic(c);
        let got = sys.second_variation(&bump, &v).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    proptest::proptest! {
        #[test]
        fn gradient_is_the_derivative(seed in 0u64..10_000) {
            let g = square(11);
            let sys = sys3();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_field(&g, 3, &mut rng);
            let v = random_field(&g, 3, &mut rng);
            let eps = 1e-5;
            let fd = (sys.energy(&u.axpy(eps, &v).unwrap()).unwrap()
                - sys.energy(&u.axpy(-eps, &v).unwrap()).unwrap()) / (2.0 * eps);
            let exact = sys.gradient(&u).unwrap().dot(&v).unwrap();
            proptest::prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0));
        }

        #[test]
        fn membership_n_implies_ntilde(seed in 0u64..10_000, tol in 1e-10f64..1e-2) {
            let g = square(9);
            let sys = sys3();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_field(&g, 3, &mut rng).axpy(0.0, &Field::zeros(g.clone(), 3)).unwrap();
            let m = sys.membership(&u, tol).unwrap();
            proptest::prop_assert!(!m.in_n || m.in_ntilde);
        }

        #[test]
        fn dominance_implies_cholesky(seed in 0u64..10_000) {
            let g = square(9);
            let sys = sys3();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_field(&g, 3, &mut rng);
            let st = sys.group_stats(&u).unwrap();
            if membership_of(&st, 1e-8).in_e {
                proptest::prop_assert!(cholesky_succeeds(&st.mb));
            }
        }
    }
}
