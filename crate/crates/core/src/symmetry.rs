//! Polarization with respect to grid-compatible half-spaces and foliated
//! Schwarz symmetry diagnostics.
//!
//! Only the eight half-spaces whose reflection maps nodes onto nodes are
//! used: normals along the axes and the diagonals. Reflections are computed
//! in doubled integer coordinates centred on the grid, so they are exact
//! permutations whenever the mask is invariant.

use std::f64::consts::PI;

use crate::energy::Field;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Default angular tolerance for axis pairing, in radians.
pub const DEFAULT_ANGLE_TOL: f64 = 5.0 * PI / 180.0;
/// Default relative violation tolerance.
pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-3;

/// Closed half-space `{x : (x − c)·n ≥ 0}` through the grid centre `c`, with
/// `n` one of the eight axis or diagonal directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HalfSpace {
    n: [i8; 2],
}

impl HalfSpace {
    /// Normal `(a, b)` with entries in `{-1, 0, 1}`, not both zero.
    pub fn new(a: i8, b: i8) -> Result<Self> {
        if !(-1..=1).contains(&a) || !(-1..=1).contains(&b) || (a == 0 && b == 0) {
            return Err(Error::Geometry(format!("({a}, {b}) is not a grid-compatible normal")));
        }
        Ok(Self { n: [a, b] })
    }

    /// The eight grid-compatible half-spaces, counter-clockwise from `(1, 0)`.
    pub fn all() -> [HalfSpace; 8] {
        [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)].map(|(a, b)| HalfSpace { n: [a, b] })
    }

    pub fn normal(&self) -> [f64; 2] {
        let (a, b) = (self.n[0] as f64, self.n[1] as f64);
        let len = (a * a + b * b).sqrt();
        [a / len, b / len]
    }

    pub fn angle(&self) -> f64 {
        (self.n[1] as f64).atan2(self.n[0] as f64)
    }

    /// The complementary half-space `Ĥ`.
    pub fn complement(&self) -> HalfSpace {
        HalfSpace { n: [-self.n[0], -self.n[1]] }
    }

    fn diagonal(&self) -> bool {
        self.n[0] != 0 && self.n[1] != 0
    }

    /// Node permutation `σ_H` together with the side of every node (+1 in H, −1 outside, 0 on ∂H).
    pub fn reflection(&self, g: &Grid) -> Result<(Vec<usize>, Vec<i8>)> {
        if g.is_radial_line() {
            return Err(Error::Geometry("reflections need a planar grid".into()));
        }
        let (nx, ny) = (g.nx(), g.ny());
        if self.diagonal() && nx != ny {
            return Err(Error::Geometry("diagonal reflections need a square grid".into()));
        }
        let mut perm = Vec::with_capacity(g.len());
        let mut side = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            let (ix, iy) = g.node(k);
            let x = 2 * ix as i64 - (nx as i64 - 1);
            let y = 2 * iy as i64 - (ny as i64 - 1);
            let (rx, ry) = match (self.n[0], self.n[1]) {
                (_, 0) => (-x, y),
                (0, _) => (x, -y),
                (a, b) if a == b => (-y, -x),
                _ => (y, x),
            };
            let jx = ((rx + nx as i64 - 1) / 2) as usize;
            let jy = ((ry + ny as i64 - 1) / 2) as usize;
            let j = g.index(jx, jy);
            if g.is_interior(k) != g.is_interior(j) {
                return Err(Error::Geometry("mask is not invariant under this reflection".into()));
            }
            perm.push(j);
            side.push((self.n[0] as i64 * x + self.n[1] as i64 * y).signum() as i8);
        }
        Ok((perm, side))
    }
}

/// `u_H`: the larger of `u(x)`, `u(σ_H x)` on `H`, the smaller on the complement.
pub fn polarize(u: &ScalarField, hs: &HalfSpace) -> Result<ScalarField> {
    let g = u.grid();
    let (perm, side) = hs.reflection(g)?;
    ScalarField::new(g.clone(), polarize_values(u.values(), &perm, &side))
}

fn polarize_values(u: &[f64], perm: &[usize], side: &[i8]) -> Vec<f64> {
    (0..u.len())
        .map(|k| {
            let (a, b) = (u[k], u[perm[k]]);
            match side[k] {
                1 => a.max(b),
                -1 => a.min(b),
                _ => a,
            }
        })
        .collect()
}

/// Polarizes each component of a field; components `split..` use the complementary half-space.
pub fn polarize_field(u: &Field, hs: &HalfSpace, split: usize) -> Result<Field> {
    let g = u.grid();
    let (perm, side) = hs.reflection(g)?;
    let flipped: Vec<i8> = side.iter().map(|s| -s).collect();
    let comps = (0..u.d())
        .map(|i| polarize_values(u.comp(i), &perm, if i < split { &side } else { &flipped }))
        .collect();
    Field::new(g.clone(), comps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationChecks {
    /// `|u_H|_{Lᵖ} == |u|_{Lᵖ}` bit for bit for `p = 2, 4`.
    pub lp_exact: bool,
    /// `(∫|∇u_H|² − ∫|∇u|²) / ∫|∇u|²`.
    pub gradient_rel_change: f64,
    /// `(∫u_H²v_H² − ∫u²v²) / scale`, nonnegative when the first inequality holds.
    pub same_side_slack: f64,
    /// `(∫u²v² − ∫u_H²v_Ĥ²) / scale`, nonnegative when the second inequality holds.
    pub opposite_side_slack: f64,
}

/// Norm, gradient and product comparisons between `(u, v)` and their polarizations.
pub fn polarization_invariants(u: &ScalarField, v: &ScalarField, hs: &HalfSpace) -> Result<PolarizationChecks> {
    let g = u.grid();
    g.check(v)?;
    let uh = polarize(u, hs)?;
    let vh = polarize(v, hs)?;
    let vhat = polarize(v, &hs.complement())?;
    let mut lp_exact = true;
    for p in [2.0, 4.0] {
        lp_exact &= g.lp_norm(&uh, p)? == g.lp_norm(u, p)? && g.lp_norm(&vh, p)? == g.lp_norm(v, p)?;
    }
    let grad = g.dirichlet_energy(u.values());
    let grad_h = g.dirichlet_energy(uh.values());
    let gradient_rel_change = (grad_h - grad) / grad.abs().max(f64::MIN_POSITIVE);
    let prod = |a: &ScalarField, b: &ScalarField| -> f64 {
        let a2: Vec<f64> = a.values().iter().map(|x| x * x).collect();
        let b2: Vec<f64> = b.values().iter().map(|x| x * x).collect();
        g.dot(&a2, &b2)
    };
    let base = prod(u, v);
    let same = prod(&uh, &vh);
    let opposite = prod(&uh, &vhat);
    let scale = base.abs().max(same.abs()).max(opposite.abs()).max(f64::MIN_POSITIVE);
    Ok(PolarizationChecks {
        lp_exact,
        gradient_rel_change,
        same_side_slack: (same - base) / scale,
        opposite_side_slack: (base - opposite) / scale,
    })
}

/// Candidate axes every degree.
pub fn default_candidates() -> Vec<f64> {
    (0..360).map(|k| k as f64 * PI / 180.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoliatedFit {
    /// Axis angle in radians, in `[0, 2π)`.
    pub axis: f64,
    /// Worst relative violation over the half-spaces containing the axis.
    pub violation: f64,
}

/// Relative violation of `u ≥ u∘σ_H` on `H`, for each of the eight half-spaces.
fn halfspace_violations(u: &ScalarField) -> Result<[f64; 8]> {
    let g = u.grid();
    if !g.is_radially_symmetric() {
        return Err(Error::Geometry("symmetry tests need a disk or annulus grid".into()));
    }
    let scale = u.max_abs();
    let mut out = [0.0; 8];
    if scale == 0.0 {
        return Ok(out);
    }
    let vals = u.values();
    for (slot, hs) in out.iter_mut().zip(HalfSpace::all()) {
        let (perm, side) = hs.reflection(g)?;
        let worst = (0..vals.len())
            .filter(|&k| side[k] == 1)
            .map(|k| vals[perm[k]] - vals[k])
            .fold(0.0f64, f64::max);
        *slot = worst / scale;
    }
    Ok(out)
}

fn violation_at(hv: &[f64; 8], theta: f64) -> f64 {
    let p = [theta.cos(), theta.sin()];
    HalfSpace::all()
        .iter()
        .zip(hv)
        .filter(|(hs, _)| {
            let n = hs.normal();
            n[0] * p[0] + n[1] * p[1] > 1e-12
        })
        .map(|(_, &v)| v)
        .fold(0.0, f64::max)
}

/// Angle of the first moment `∫ (x − c) u`, if it is nonzero.
fn moment_angle(u: &[f64], g: &Grid) -> Option<f64> {
    let c = g.center();
    let (mut mx, mut my) = (0.0, 0.0);
    for k in 0..g.len() {
        let [x, y] = g.coords(k);
        let w = g.weights()[k] * u[k];
        mx += w * (x - c[0]);
        my += w * (y - c[1]);
    }
    (mx != 0.0 || my != 0.0).then(|| my.atan2(mx))
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Among candidates whose violation is within `tol` of the best, the one nearest `preferred`.
fn pick_axis(candidates: &[f64], violations: &[f64], tol: f64, preferred: Option<f64>) -> Result<FoliatedFit> {
    let best = violations.iter().cloned().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::InvalidArgument("no candidate directions".into()));
    }
    let mut chosen: Option<(usize, f64)> = None;
    for (idx, (&theta, &v)) in candidates.iter().zip(violations).enumerate() {
        if v > best + tol {
            continue;
        }
        let key = match preferred {
            Some(p) => angular_distance(theta, p),
            None => v,
        };
        if chosen.is_none_or(|(_, k)| key < k) {
            chosen = Some((idx, key));
        }
    }
    let (idx, _) = chosen.expect("the best candidate is always admissible");
    Ok(FoliatedFit { axis: candidates[idx].rem_euclid(2.0 * PI), violation: violations[idx] })
}

/// Best axis for `u ≥ u∘σ_H` on every compatible `H` whose normal has positive component along the axis.
/// Ties (within `1e-9`) are broken towards the direction of the first moment.
pub fn foliated_schwarz_test(u: &ScalarField, candidates: &[f64]) -> Result<FoliatedFit> {
    foliated_schwarz_test_tol(u, candidates, 1e-9)
}

pub fn foliated_schwarz_test_tol(u: &ScalarField, candidates: &[f64], tie_tol: f64) -> Result<FoliatedFit> {
    let hv = halfspace_violations(u)?;
    let v: Vec<f64> = candidates.iter().map(|&t| violation_at(&hv, t)).collect();
    pick_axis(candidates, &v, tie_tol, moment_angle(u.values(), u.grid()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryReport {
    pub per_component_axis: Vec<f64>,
    pub per_component_violation: Vec<f64>,
    /// Components `split..` are tested against the antipodal direction; `split = d` is the same-direction audit.
    pub split: usize,
    /// Joint axis of components `..split`.
    pub axis: f64,
    /// Worst violation at the joint axis (antipode for the second block).
    pub joint_violation: f64,
    /// Largest angular deviation of a non-radial component from its required direction.
    pub angle_deviation: f64,
    /// Components whose violation stays below `tol` for every candidate.
    pub radial: Vec<bool>,
    pub pairing_ok: bool,
    pub passes: bool,
}

/// Checks that components `..split` share an axis `p` and components `split..` share `−p`.
pub fn antipodal_audit(u: &Field, split: usize, tol: f64, angle_tol: f64) -> Result<SymmetryReport> {
    let d = u.d();
    if split == 0 || split > d {
        return Err(Error::InvalidArgument(format!("split must lie in 1..={d}, got {split}")));
    }
    let g = u.grid();
    let cands = default_candidates();
    let hvs: Vec<[f64; 8]> = (0..d).map(|i| halfspace_violations(&u.component(i))).collect::<Result<_>>()?;
    let viol = |i: usize, theta: f64| violation_at(&hvs[i], if i < split { theta } else { theta + PI });
    let radial: Vec<bool> = (0..d).map(|i| cands.iter().all(|&t| viol(i, t) <= tol)).collect();
    // joint axis, preferring the direction from the second block's mass to the first's
    let joint: Vec<f64> = cands.iter().map(|&t| (0..d).map(|i| viol(i, t)).fold(0.0, f64::max)).collect();
    let signed: Vec<f64> = (0..g.len())
        .map(|k| (0..d).map(|i| if i < split { u.comp(i)[k] } else { -u.comp(i)[k] }).sum())
        .collect();
    let fit = pick_axis(&cands, &joint, 1e-9, moment_angle(&signed, g))?;
    let mut per_component_axis = Vec::with_capacity(d);
    let mut per_component_violation = Vec::with_capacity(d);
    let mut deviation: f64 = 0.0;
    for i in 0..d {
        let f = foliated_schwarz_test(&u.component(i), &cands)?;
        per_component_axis.push(f.axis);
        per_component_violation.push(f.violation);
        if !radial[i] {
            let target = if i < split { fit.axis } else { fit.axis + PI };
            deviation = deviation.max(angular_distance(f.axis, target));
        }
    }
    let pairing_ok = deviation <= angle_tol;
    Ok(SymmetryReport {
        per_component_axis,
        per_component_violation,
        split,
        axis: fit.axis,
        joint_violation: fit.violation,
        angle_deviation: deviation,
        radial,
        pairing_ok,
        passes: pairing_ok && fit.violation <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk(n: usize) -> Arc<Grid> {
        Arc::new(Grid::disk(1.0, n).unwrap())
    }

    fn bump(g: &Arc<Grid>, c: [f64; 2], w: f64) -> ScalarField {
        ScalarField::from_fn(g.clone(), |x, y| (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (w * w)).exp())
    }

    fn random_nonnegative(g: &Arc<Grid>, rng: &mut ChaCha8Rng) -> ScalarField {
        ScalarField::new(g.clone(), (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn reflections_are_involutions() {
        let g = Grid::annulus(0.3, 1.0, 31).unwrap();
        for hs in HalfSpace::all() {
            let (perm, side) = hs.reflection(&g).unwrap();
            for k in 0..g.len() {
                assert_eq!(perm[perm[k]], k);
                assert_eq!(side[perm[k]], -side[k]);
            }
        }
    }

    #[test]
    fn diagonal_reflection_on_non_square_grid_is_rejected() {
        let g = Grid::rectangle(2.0, 1.0, 21).unwrap();
        assert!(HalfSpace::new(1, 1).unwrap().reflection(&g).is_err());
        assert!(HalfSpace::new(1, 0).unwrap().reflection(&g).is_ok());
        assert!(HalfSpace::new(0, 0).is_err());
    }

    #[test]
    fn polarizing_minus_x_flips_it() {
        let g = disk(33);
        let u = ScalarField::from_fn(g.clone(), |x, _| -x);
        let p = polarize(&u, &HalfSpace::new(1, 0).unwrap()).unwrap();
        let expect = ScalarField::from_fn(g.clone(), |x, _| x);
        for (a, b) in p.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-13, "{a} {b}");
        }
    }

    #[test]
    fn already_ordered_field_is_fixed() {
        let g = disk(33);
        let u = bump(&g, [0.4, 0.0], 0.3);
        let hs = HalfSpace::new(1, 0).unwrap();
        assert_eq!(polarize(&u, &hs).unwrap().values(), u.values());
    }

    #[test]
    fn symmetric_field_gives_equalities() {
        let g = disk(33);
        let u = bump(&g, [0.0, 0.0], 0.4);
        let v = bump(&g, [0.0, 0.0], 0.6);
        for hs in HalfSpace::all() {
            let c = polarization_invariants(&u, &v, &hs).unwrap();
            assert!(c.lp_exact);
            assert_eq!(c.gradient_rel_change, 0.0);
            assert_eq!(c.same_side_slack, 0.0);
            assert_eq!(c.opposite_side_slack, 0.0);
        }
    }

    #[test]
    fn identical_fields_make_the_first_inequality_an_equality() {
        let g = disk(33);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_nonnegative(&g, &mut rng);
        let c = polarization_invariants(&u, &u, &HalfSpace::new(0, 1).unwrap()).unwrap();
        assert!(c.same_side_slack.abs() < 1e-13);
    }

    #[test]
    fn mirrored_disjoint_bumps_are_strict() {
        // u on the right, v its mirror on the left: ∫u²v² = 0, polarization moves v onto u
        let g = disk(33);
        let u = bump(&g, [0.5, 0.0], 0.15);
        let v = bump(&g, [-0.5, 0.0], 0.15);
        let c = polarization_invariants(&v, &u, &HalfSpace::new(1, 0).unwrap()).unwrap();
        assert!(c.same_side_slack > 0.1);
        let c2 = polarization_invariants(&u, &u, &HalfSpace::new(1, 0).unwrap()).unwrap();
        assert!(c2.opposite_side_slack > 0.1);
    }

    #[test]
    fn radial_function_has_no_violation() {
        let g = disk(33);
        let u = bump(&g, [0.0, 0.0], 0.5);
        let hv = halfspace_violations(&u).unwrap();
        assert!(hv.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn off_centre_bump_has_axis_zero() {
        let g = disk(41);
        let u = bump(&g, [0.4, 0.0], 0.3);
        let fit = foliated_schwarz_test(&u, &default_candidates()).unwrap();
        assert!(angular_distance(fit.axis, 0.0) < 1e-12, "{}", fit.axis);
        assert!(fit.violation <= 1e-12);
    }

    #[test]
    fn antipodal_bumps_violate_everywhere() {
        let g = disk(41);
        let a = bump(&g, [0.5, 0.0], 0.2);
        let b = bump(&g, [-0.5, 0.0], 0.2);
        let u = ScalarField::new(g.clone(), a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect()).unwrap();
        let hv = halfspace_violations(&u).unwrap();
        for t in default_candidates() {
            assert!(violation_at(&hv, t) > 0.5);
        }
    }

    #[test]
    fn non_radial_grid_is_rejected() {
        let g = Arc::new(Grid::rectangle(1.0, 1.0, 9).unwrap());
        let u = ScalarField::zeros(g);
        assert!(matches!(foliated_schwarz_test(&u, &default_candidates()), Err(Error::Geometry(_))));
    }

    #[test]
    fn antipodal_audit_on_constructed_pair() {
        let g = disk(41);
        let a = bump(&g, [0.0, 0.4], 0.3).into_values();
        let b = bump(&g, [0.0, -0.4], 0.3).into_values();
        let f = Field::new(g.clone(), vec![a.clone(), b.clone()]).unwrap();
        let r = antipodal_audit(&f, 1, DEFAULT_SYMMETRY_TOL, DEFAULT_ANGLE_TOL).unwrap();
        assert!(r.passes, "{r:?}");
        assert!(angular_distance(r.axis, PI / 2.0) < 1e-12);
        let same = Field::new(g.clone(), vec![a.clone(), a]).unwrap();
        assert!(antipodal_audit(&same, 2, DEFAULT_SYMMETRY_TOL, DEFAULT_ANGLE_TOL).unwrap().passes);
        assert!(!antipodal_audit(&f, 2, DEFAULT_SYMMETRY_TOL, DEFAULT_ANGLE_TOL).unwrap().passes);
    }

    #[test]
    fn radial_components_pair_vacuously() {
        let g = disk(33);
        let a = bump(&g, [0.0, 0.0], 0.5).into_values();
        let f = Field::new(g, vec![a.clone(), a]).unwrap();
        let r = antipodal_audit(&f, 1, DEFAULT_SYMMETRY_TOL, DEFAULT_ANGLE_TOL).unwrap();
        assert!(r.radial.iter().all(|&b| b) && r.passes);
    }

    proptest::proptest! {
        #[test]
        fn polarization_is_an_idempotent_selection(seed in 0u64..2_000, which in 0usize..8) {
            let g = disk(21);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_nonnegative(&g, &mut rng);
            let hs = HalfSpace::all()[which];
            let p = polarize(&u, &hs).unwrap();
            let pp = polarize(&p, &hs).unwrap();
            proptest::prop_assert_eq!(pp.values(), p.values());
            proptest::prop_assert!(p.values().iter().all(|&v| v >= 0.0));
            let mut a: Vec<f64> = u.values().to_vec();
            let mut b: Vec<f64> = p.values().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn polarization_never_raises_the_gradient(seed in 0u64..2_000, which in 0usize..8) {
            let g = disk(21);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_nonnegative(&g, &mut rng);
            let v = random_nonnegative(&g, &mut rng);
            let c = polarization_invariants(&u, &v, &HalfSpace::all()[which]).unwrap();
            proptest::prop_assert!(c.lp_exact);
            proptest::prop_assert!(c.gradient_rel_change <= 1e-12);
            proptest::prop_assert!(c.same_side_slack >= -1e-12 && c.opposite_side_slack >= -1e-12);
        }

        #[test]
        fn violations_rotate_with_the_field(seed in 0u64..500) {
            // a quarter turn (x, y) → (−y, x) maps nodes to nodes on a disk grid
            let g = disk(21);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_nonnegative(&g, &mut rng);
            let n = g.nx();
            let mut rot = vec![0.0; g.len()];
            for k in 0..g.len() {
                let (ix, iy) = g.node(k);
                rot[g.index(n - 1 - iy, ix)] = u.values()[k];
            }
            let r = ScalarField::new(g.clone(), rot).unwrap();
            let hv = halfspace_violations(&u).unwrap();
            let hr = halfspace_violations(&r).unwrap();
            for t in [0.1, 1.0, 2.5, 4.0] {
                proptest::prop_assert_eq!(violation_at(&hv, t), violation_at(&hr, t + PI / 2.0));
            }
        }
    }
}
