//! Group scaling: `Ψ(t) = J(√t_1 u_1, …, √t_m u_m)`, its critical point, and projection onto 𝒩.

use crate::energy::{Field, GroupStats, System};
use crate::error::{Error, Result};
use crate::linalg::dense_solve;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    pub t: Vec<f64>,
    pub solvable: bool,
    pub all_positive: bool,
    /// Diagonal-dominance margin of `M_B`.
    pub conditioning: f64,
}

/// `Ψ(t)`, evaluated from the group aggregates of `u`.
pub fn scaling_energy(sys: &System, u: &Field, t: &[f64]) -> Result<f64> {
    if t.len() != sys.m() {
        return Err(Error::InvalidArgument(format!("t has {} entries, expected {}", t.len(), sys.m())));
    }
    if let Some(bad) = t.iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::InvalidArgument(format!("scaling factors must be nonnegative, got {bad}")));
    }
    Ok(sys.group_stats(u)?.psi(t))
}

/// Solves `M_B t = (‖u_h‖²_h)_h`.
pub fn solve_scaling(sys: &System, u: &Field) -> Result<ScalingResult> {
    solve_scaling_from_stats(&sys.group_stats(u)?)
}

pub fn solve_scaling_from_stats(st: &GroupStats) -> Result<ScalingResult> {
    if let Some(h) = st.group_norms.iter().position(|&n| !(n > 0.0)) {
        return Err(Error::Precondition(format!("group {} is identically zero", h + 1)));
    }
    let conditioning = st.dominance_margin();
    Ok(match dense_solve(&st.mb, &st.group_norms) {
        Some(t) => {
            let all_positive = t.iter().all(|&x| x > 0.0);
            ScalingResult { t, solvable: true, all_positive, conditioning }
        }
        None => ScalingResult { t: vec![0.0; st.m()], solvable: false, all_positive: false, conditioning },
    })
}

/// Rescales group `h` by `√t_h` so that every `G_h` vanishes.
pub fn project_to_n(sys: &System, u: &Field) -> Result<Field> {
    let st = sys.group_stats(u)?;
    let (field, _) = project_with_stats(sys, u, &st)?;
    Ok(field)
}

/// Projection plus the energy of the projected field, `Ψ(t) = ¼ Σ_h n_h t_h`.
pub(crate) fn project_with_stats(sys: &System, u: &Field, st: &GroupStats) -> Result<(Field, f64)> {
    let sr = solve_scaling_from_stats(st)?;
    if !sr.solvable {
        return Err(Error::SingularScaling);
    }
    if let Some(h) = sr.t.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ProjectionLeavesOrthant { group: h + 1 });
    }
    let mut out = u.clone();
    for (h, range) in sys.dec().groups().into_iter().enumerate() {
        out.scale_components(range, sr.t[h].sqrt());
    }
    Ok((out, st.psi(&sr.t)))
}

/// `‖∇J(u)‖` in the quadrature norm.
pub fn natural_constraint_residual(sys: &System, u: &Field) -> Result<f64> {
    let g = sys.gradient(u)?;
    Ok(g.dot(&g)?.sqrt())
}
