//! Whole-space experiments on truncated radial lines: group ground levels,
//! tail decay, and the energy of separated translates.

use std::sync::Arc;

use rayon::prelude::*;

use crate::coupling::{validate_regime, CouplingSpec, Decomposition, Theorem};
use crate::energy::{membership_of, Field, System, DEFAULT_MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridKind};
use crate::nehari::solve_scaling_from_stats;
use crate::solver::{minimize_with_constants, SolverConfig};

/// Truncation radius `12 / √(min λ)`.
pub fn default_r_max(min_lambda: f64) -> f64 {
    12.0 / min_lambda.sqrt()
}

/// Radial line of dimension `dim` up to `r_max` with spacing close to `h`.
pub fn radial_grid(dim: usize, r_max: f64, h: f64) -> Result<Arc<Grid>> {
    let n = (r_max / h).ceil() as usize + 1;
    Ok(Arc::new(Grid::radial_line(dim, r_max, n)?))
}

#[derive(Debug, Clone)]
pub struct SubsystemLevel {
    /// Zero-based group index.
    pub h: usize,
    pub level: f64,
    /// Group components on the radial grid.
    pub profile: Field,
    /// `−slope` of the default tail fit, `NaN` when the tail is below the floor.
    pub decay_rate: f64,
    pub grad_residual: f64,
}

/// Least energy of group `h`'s sub-system in ℝ^N, computed on a radial line.
pub fn subsystem_level(
    spec: &CouplingSpec,
    dec: &Decomposition,
    h: usize,
    grid: Arc<Grid>,
    cfg: &SolverConfig,
) -> Result<SubsystemLevel> {
    if !grid.is_radial_line() {
        return Err(Error::Geometry("sub-system levels are computed on radial lines".into()));
    }
    if h >= dec.m() || dec.d() != spec.d() {
        return Err(Error::InvalidArgument(format!("group {} does not exist", h + 1)));
    }
    let range = dec.group(h);
    for i in range.clone() {
        if !(spec.lambda()[i] > 0.0) {
            return Err(Error::Precondition(format!("lambda_{} must be positive in R^N", i + 1)));
        }
        for j in range.clone() {
            if !(spec.beta_ij(i, j) > 0.0) {
                return Err(Error::Precondition(format!(
                    "beta_{}{} must be positive inside group {}",
                    i + 1,
                    j + 1,
                    h + 1
                )));
            }
        }
    }
    let sub = spec.restrict(range.clone())?;
    let sub_dec = Decomposition::single(range.len())?;
    let res = minimize_with_constants(grid, &sub_dec, &sub, cfg, None)?;
    let min_lambda = sub.lambda().iter().cloned().fold(f64::INFINITY, f64::min);
    let decay_rate = decay_fit(&res.field, 0, min_lambda, 0.81).map(|f| -f.slope).unwrap_or(f64::NAN);
    Ok(SubsystemLevel { h, level: res.energy, profile: res.field, decay_rate, grad_residual: res.grad_residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub component: usize,
    /// Least-squares slope of `log u` against `r`.
    pub slope: f64,
    /// `−√(betaFraction · min λ) · 0.95`.
    pub required: f64,
    pub window: (f64, f64),
    pub passes: bool,
}

const DECAY_FLOOR: f64 = 1e-14;

fn decay_fit(profile: &Field, component: usize, min_lambda: f64, beta_fraction: f64) -> Result<DecayFit> {
    let g = profile.grid();
    let GridKind::RadialLine { r_max, .. } = *g.kind() else {
        return Err(Error::Geometry("decay fits need a radial profile".into()));
    };
    let required = -(beta_fraction * min_lambda).sqrt() * 0.95;
    let u = profile.comp(component);
    let (mut lo, mut hi) = (0.5 * r_max, 0.9 * r_max);
    for _ in 0..12 {
        let pts: Vec<(f64, f64)> = (0..g.len())
            .filter(|&k| g.is_interior(k))
            .map(|k| (g.coords(k)[0], u[k]))
            .filter(|&(r, v)| r >= lo && r <= hi && v > DECAY_FLOOR)
            .map(|(r, v)| (r, v.ln()))
            .collect();
        if pts.len() >= 3 {
            let slope = least_squares_slope(&pts);
            return Ok(DecayFit { component, slope, required, window: (lo, hi), passes: slope <= required });
        }
        lo *= 0.8;
        hi *= 0.8;
    }
    Err(Error::Truncation(format!(
        "component {} is below {DECAY_FLOOR:e} on every tail window",
        component + 1
    )))
}

/// Slope of the least-squares line through `(x, y)` points.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Tail fit on `[0.5, 0.9]·R_max` for every component of the level's profile.
pub fn decay_audit(lev: &SubsystemLevel, lambda: &[f64], beta_fraction: f64) -> Result<Vec<DecayFit>> {
    if !(beta_fraction > 0.0 && beta_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("betaFraction must lie in (0, 1), got {beta_fraction}")));
    }
    let min_lambda = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    (0..lev.profile.d()).map(|i| decay_fit(&lev.profile, i, min_lambda, beta_fraction)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingConfig {
    /// Spacing of the planar grid.
    pub h: f64,
    /// Half side of the centred square; chosen to fit the largest separation when absent.
    pub half_width: Option<f64>,
}

impl Default for SplittingConfig {
    fn default() -> Self {
        Self { h: 0.1, half_width: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingRow {
    pub r: f64,
    pub energy: f64,
    pub sum_lh: f64,
    /// `Σ_{h≠k} |M_B(u^R)_{hk}|`.
    pub off_diag_mass: f64,
    pub t: Vec<f64>,
    /// The scaled field lies on the Nehari set.
    pub in_n: bool,
}

/// Places each group's radial profile at `R·e_h` (angle `2πh/m`) on a planar grid and
/// evaluates the energy after rescaling onto the Nehari set.
///
/// Each embedded group is first rescaled onto its own single-group Nehari set, so the
/// scaling factors tend to one exactly as the translates separate.
pub fn splitting_experiment(
    spec: &CouplingSpec,
    dec: &Decomposition,
    levels: &[SubsystemLevel],
    radii: &[f64],
    split: &SplittingConfig,
) -> Result<Vec<SplittingRow>> {
    let m = dec.m();
    if m < 2 {
        return Err(Error::Precondition("splitting needs at least two groups".into()));
    }
    let verdict = validate_regime(dec, spec, None, Theorem::NonexistenceRn);
    if !verdict.holds {
        return Err(Error::Precondition(format!("non-existence hypotheses fail: {}", verdict.failing().join(", "))));
    }
    if levels.len() != m {
        return Err(Error::InvalidArgument(format!("{} levels given for {m} groups", levels.len())));
    }
    let mut r_profile: f64 = 0.0;
    for lev in levels {
        match *lev.profile.grid().kind() {
            GridKind::RadialLine { dim: 2, r_max } => r_profile = r_profile.max(r_max),
            _ => return Err(Error::InvalidArgument("splitting embeds N = 2 radial profiles".into())),
        }
    }
    let hp = split.h;
    let r_far = radii.iter().cloned().fold(0.0f64, f64::max);
    let need = r_far + r_profile + 2.0 * hp;
    let half = match split.half_width {
        Some(w) if w < need => {
            return Err(Error::Truncation(format!(
                "profiles reach radius {:.3} but the planar grid has half-width {w}",
                r_far + r_profile
            )))
        }
        Some(w) => w,
        None => need,
    };
    let cells = (half / hp).ceil() as usize;
    let grid = Arc::new(Grid::rectangle_centered(2.0 * cells as f64 * hp, 2.0 * cells as f64 * hp, 2 * cells + 1)?);
    let sys = System::new(spec.clone(), dec.clone())?;
    let sum_lh: f64 = levels.iter().map(|l| l.level).sum();
    radii
        .par_iter()
        .map(|&r| splitting_row(&sys, &grid, levels, r, cells, sum_lh))
        .collect()
}

fn splitting_row(
    sys: &System,
    grid: &Arc<Grid>,
    levels: &[SubsystemLevel],
    r: f64,
    cells: usize,
    sum_lh: f64,
) -> Result<SplittingRow> {
    let m = sys.m();
    let hp = grid.h();
    let mut field = Field::zeros(grid.clone(), sys.d());
    for (h, lev) in levels.iter().enumerate() {
        let theta = 2.0 * std::f64::consts::PI * (h + 1) as f64 / m as f64;
        let ox = (r * theta.cos() / hp).round() as i64;
        let oy = (r * theta.sin() / hp).round() as i64;
        let range = sys.dec().group(h);
        let mut patch = Field::zeros(grid.clone(), range.len());
        for (local, _) in range.clone().enumerate() {
            embed(&lev.profile, local, grid, cells, ox, oy, patch.comp_mut(local));
        }
        // rescale the isolated patch onto its own Nehari set
        let sub = System::new(sys.spec().restrict(range.clone())?, Decomposition::single(range.len())?)?;
        let st = sub.group_stats(&patch)?;
        let s = solve_scaling_from_stats(&st)?;
        if !s.all_positive {
            return Err(Error::SingularScaling);
        }
        let c = s.t[0].sqrt();
        for (local, i) in range.enumerate() {
            let dst = field.comp_mut(i);
            for (d, v) in dst.iter_mut().zip(patch.comp(local)) {
                *d = c * v;
            }
        }
    }
    let st = sys.group_stats(&field)?;
    let sr = solve_scaling_from_stats(&st)?;
    if !sr.solvable {
        return Err(Error::SingularScaling);
    }
    if let Some(h) = sr.t.iter().position(|&t| !(t > 0.0)) {
        return Err(Error::ProjectionLeavesOrthant { group: h + 1 });
    }
    let energy = st.psi(&sr.t);
    let mut scaled = field;
    for (h, range) in sys.dec().groups().into_iter().enumerate() {
        scaled.scale_components(range, sr.t[h].sqrt());
    }
    let in_n = membership_of(&sys.group_stats(&scaled)?, DEFAULT_MEMBERSHIP_TOL).in_n;
    let off_diag_mass = (0..m)
        .flat_map(|h| (0..m).filter(move |&k| k != h).map(move |k| (h, k)))
        .map(|(h, k)| st.mb[h][k].abs())
        .sum();
    Ok(SplittingRow { r, energy, sum_lh, off_diag_mass, t: sr.t, in_n })
}

/// Linear-in-`r` interpolation of a radial profile centred at node offset `(ox, oy)` from the grid centre.
fn embed(profile: &Field, comp: usize, grid: &Grid, cells: usize, ox: i64, oy: i64, out: &mut [f64]) {
    let pg = profile.grid();
    let ph = pg.h();
    let u = profile.comp(comp);
    let last = pg.len() - 1;
    let hp = grid.h();
    for k in 0..grid.len() {
        if !grid.is_interior(k) {
            continue;
        }
        let (ix, iy) = grid.node(k);
        let dx = (ix as i64 - cells as i64 - ox) as f64 * hp;
        let dy = (iy as i64 - cells as i64 - oy) as f64 * hp;
        let s = (dx * dx + dy * dy).sqrt() / ph;
        let j = s.floor() as usize;
        out[k] = if j >= last {
            0.0
        } else {
            let f = s - j as f64;
            (1.0 - f) * u[j] + f * u[j + 1]
        };
    }
}
