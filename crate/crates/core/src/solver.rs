//! Nehari-projected gradient descent in the nonnegative cone.
//!
//! Each iteration takes a (preconditioned) gradient step, clamps negative
//! values, and rescales every group back onto the Nehari set. Steps that
//! raise the energy or leave the positive orthant are halved. When the step
//! collapses because a group keeps vanishing, that group is reseeded from a
//! fresh bump and the restart is counted.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coupling::{
    constants_report, sobolev_constants, validate_regime, ConstantsReport, CouplingSpec, Decomposition, Theorem,
    DEFAULT_SOBOLEV_TOL,
};
use crate::energy::{membership_of, Field, GroupStats, System, DEFAULT_MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridKind};
use crate::nehari::project_with_stats;
use crate::symmetry::{default_candidates, foliated_schwarz_test};

const MAX_RESTARTS: usize = 20;
const STEP_GROWTH: f64 = 1.1;
const STEP_CAP: f64 = 4.0;
const PRECONDITIONED_STEP: f64 = 0.5;
const ENERGY_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// One Gaussian per component near the domain centre.
    Bumps,
    /// Group `h` centred at angle `directions[h]` (default `2πh/m`) on half the domain radius.
    GroupSeparatedBumps { directions: Option<Vec<f64>> },
    /// A previously written grid dump.
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tol_grad: f64,
    pub tol_energy: f64,
    pub step: Step,
    pub precondition: bool,
    pub seed: u64,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            tol_grad: 1e-6,
            tol_energy: 1e-10,
            step: Step::Auto,
            precondition: true,
            seed: 0,
            init: Init::Bumps,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol_grad > 0.0) || !(self.tol_energy > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if let Step::Fixed(t) = self.step {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument("fixed step must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub field: Field,
    pub energy: f64,
    pub grad_residual: f64,
    /// `G_h` at the returned field.
    pub nehari_residual: Vec<f64>,
    pub iterations: usize,
    /// Energies of accepted iterates since the last restart.
    pub energy_trace: Vec<f64>,
    /// `|u_i|_{L⁴}` per component.
    pub component_l4: Vec<f64>,
    pub semi_trivial: bool,
    pub constants: Option<ConstantsReport>,
    pub restarts: usize,
    pub converged: bool,
    /// Set when the existence hypotheses are not confirmed for this data.
    pub exploration: bool,
}

/// Minimizes `J` over the Nehari set. Constants are computed on bounded grids.
pub fn minimize(g: Arc<Grid>, dec: &Decomposition, spec: &CouplingSpec, cfg: &SolverConfig) -> Result<SolveResult> {
    let constants = if g.is_radial_line() { None } else { Some(constants_report(&g, dec, spec)?) };
    minimize_with_constants(g, dec, spec, cfg, constants)
}

/// As [`minimize`] with a precomputed (or deliberately absent) constants snapshot.
pub fn minimize_with_constants(
    g: Arc<Grid>,
    dec: &Decomposition,
    spec: &CouplingSpec,
    cfg: &SolverConfig,
    constants: Option<ConstantsReport>,
) -> Result<SolveResult> {
    cfg.validate()?;
    spec.check_against(&g)?;
    let sys = System::new(spec.clone(), dec.clone())?;
    let exploration = !validate_regime(dec, spec, constants.as_ref(), Theorem::Existence).holds;
    let delta = match &constants {
        Some(c) => c.delta,
        None => sobolev_constants(&g, spec, DEFAULT_SOBOLEV_TOL)?.0 / (2.0 * spec.d() as f64),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = initial_field(&g, &sys, cfg, &mut rng)?;
    let mut run = Descent::new(&g, &sys, cfg, rng);
    let mut state = run.project_with_restarts(start)?;
    let outcome = run.iterate(&mut state);
    let res = run.finish(state, constants, delta, exploration);
    match outcome {
        Ok(()) => Ok(res),
        Err(()) => Err(Error::NonConvergence(Box::new(res))),
    }
}

struct State {
    u: Field,
    stats: GroupStats,
    energy: f64,
}

struct Descent<'a> {
    g: &'a Arc<Grid>,
    sys: &'a System,
    cfg: &'a SolverConfig,
    rng: ChaCha8Rng,
    restarts: usize,
    iterations: usize,
    trace: Vec<f64>,
    converged: bool,
}

impl<'a> Descent<'a> {
    fn new(g: &'a Arc<Grid>, sys: &'a System, cfg: &'a SolverConfig, rng: ChaCha8Rng) -> Self {
        Self { g, sys, cfg, rng, restarts: 0, iterations: 0, trace: Vec::new(), converged: false }
    }

    fn initial_step(&self) -> f64 {
        match self.cfg.step {
            Step::Fixed(t) => t,
            Step::Auto if self.cfg.precondition => PRECONDITIONED_STEP,
            Step::Auto => {
                let lmax = self.sys.spec().lambda().iter().fold(0.0f64, |m, l| m.max(l.abs()));
                1.0 / (lmax + 8.0 / (self.g.h() * self.g.h()))
            }
        }
    }

    /// Projects `u`, reseeding any group for which the projection leaves the orthant.
    fn project_with_restarts(&mut self, mut u: Field) -> Result<State> {
        loop {
            let stats = self.sys.group_stats(&u)?;
            match project_with_stats(self.sys, &u, &stats) {
                Ok((p, energy)) => {
                    let stats = self.sys.group_stats(&p)?;
                    return Ok(State { u: p, stats, energy });
                }
                Err(Error::ProjectionLeavesOrthant { group }) => {
                    self.reseed_group(&mut u, group - 1)?;
                }
                Err(Error::Precondition(_)) | Err(Error::SingularScaling) => {
                    let h = stats.group_norms.iter().position(|&n| !(n > 0.0)).unwrap_or(self.sys.m() - 1);
                    self.reseed_group(&mut u, h)?;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn reseed_group(&mut self, u: &mut Field, h: usize) -> Result<()> {
        self.restarts += 1;
        if self.restarts > MAX_RESTARTS {
            return Err(Error::Convergence { what: "group reinitialization", iterations: self.restarts });
        }
        let r = self.g.outer_radius();
        let (cx, cy) = if self.g.is_radial_line() {
            (0.0, 0.0)
        } else {
            let c = self.g.center();
            let rho = self.rng.gen_range(0.0..0.5) * r;
            let theta = self.rng.gen_range(0.0..2.0 * PI);
            (c[0] + rho * theta.cos(), c[1] + rho * theta.sin())
        };
        let width = 0.25 * r;
        for i in self.sys.dec().group(h) {
            let amp = self.rng.gen_range(0.9..1.1);
            let b = gaussian(self.g, [cx, cy], width, amp);
            u.comp_mut(i).copy_from_slice(&b);
        }
        self.trace.clear();
        Ok(())
    }

    fn direction(&self, grad: &Field) -> Result<Field> {
        if !self.cfg.precondition {
            return Ok(grad.clone());
        }
        let mut dir = grad.clone();
        for (i, &l) in self.sys.spec().lambda().iter().enumerate() {
            let shift = if l > 0.0 { l } else { 1.0 };
            let solved = self.g.solve_shifted(shift, grad.comp(i))?;
            dir.comp_mut(i).copy_from_slice(&solved);
        }
        Ok(dir)
    }

    fn residual(&self, u: &Field) -> f64 {
        self.sys.gradient(u).and_then(|g| g.dot(&g)).map(f64::sqrt).unwrap_or(f64::INFINITY)
    }

    fn iterate(&mut self, st: &mut State) -> std::result::Result<(), ()> {
        let mut tau = self.initial_step();
        let tau_floor = 1e-14 * tau;
        let mut last_change = f64::INFINITY;
        self.trace.push(st.energy);
        loop {
            let grad = match self.sys.gradient(&st.u) {
                Ok(g) => g,
                Err(_) => return Err(()),
            };
            let gres = grad.dot(&grad).map(f64::sqrt).unwrap_or(f64::INFINITY);
            let energy_settled = self.trace.len() <= 1 || last_change < self.cfg.tol_energy;
            if gres < self.cfg.tol_grad && energy_settled {
                self.converged = true;
                return Ok(());
            }
            if self.iterations >= self.cfg.max_iter {
                return Err(());
            }
            self.iterations += 1;
            let Ok(dir) = self.direction(&grad) else { return Err(()) };
            let mut failed_group = None;
            let accepted = loop {
                if tau < tau_floor {
                    break None;
                }
                let Ok(mut trial) = st.u.axpy(-tau, &dir) else { return Err(()) };
                trial.clamp_nonnegative();
                let Ok(stats) = self.sys.group_stats(&trial) else { return Err(()) };
                match project_with_stats(self.sys, &trial, &stats) {
                    Ok((p, e)) => {
                        // energy differences at roundoff level cannot rank iterates, the residual can
                        let noise = ENERGY_NOISE * st.energy.abs();
                        let accept = if (e - st.energy).abs() <= noise {
                            self.residual(&p) < gres
                        } else {
                            e < st.energy
                        };
                        if accept {
                            break Some((p, e));
                        }
                        failed_group = None;
                    }
                    Err(Error::ProjectionLeavesOrthant { group }) => failed_group = Some(group - 1),
                    Err(_) => failed_group = None,
                }
                tau *= 0.5;
            };
            match accepted {
                Some((p, e)) => {
                    last_change = (st.energy - e).abs();
                    let Ok(stats) = self.sys.group_stats(&p) else { return Err(()) };
                    *st = State { u: p, stats, energy: e };
                    self.trace.push(e);
                    tau = (tau * STEP_GROWTH).min(STEP_CAP);
                }
                None => {
                    // no admissible decrease left: reseed a vanishing group, otherwise stop
                    let Some(h) = failed_group else { return Err(()) };
                    let mut u = st.u.clone();
                    if self.reseed_group(&mut u, h).is_err() {
                        return Err(());
                    }
                    match self.project_with_restarts(u) {
                        Ok(s) => *st = s,
                        Err(_) => return Err(()),
                    }
                    self.trace.push(st.energy);
                    tau = self.initial_step();
                    last_change = f64::INFINITY;
                }
            }
        }
    }

    fn finish(self, st: State, constants: Option<ConstantsReport>, delta: f64, exploration: bool) -> SolveResult {
        let grad_residual = self
            .sys
            .gradient(&st.u)
            .and_then(|g| g.dot(&g))
            .map(f64::sqrt)
            .unwrap_or(f64::INFINITY);
        let component_l4 = st.u.l4_norms();
        let semi_trivial = semi_trivial_flags(self.sys, &component_l4, delta).iter().any(|&b| b);
        SolveResult {
            energy: st.energy,
            grad_residual,
            nehari_residual: st.stats.g.clone(),
            iterations: self.iterations,
            energy_trace: self.trace,
            component_l4,
            semi_trivial,
            constants,
            restarts: self.restarts,
            converged: self.converged,
            exploration,
            field: st.u,
        }
    }
}

/// Component `i` is flagged when `|u_i|_{L⁴} < 1e-4 · δ / max_{j,k ∈ I_h} β_jk`.
pub fn semi_trivial_flags(sys: &System, l4: &[f64], delta: f64) -> Vec<bool> {
    let dec = sys.dec();
    (0..sys.d())
        .map(|i| {
            let r = dec.group(dec.group_of(i));
            let bmax = r
                .clone()
                .flat_map(|j| r.clone().map(move |k| (j, k)))
                .map(|(j, k)| sys.spec().beta_ij(j, k))
                .fold(f64::NEG_INFINITY, f64::max);
            l4[i] < 1e-4 * delta / bmax
        })
        .collect()
}

fn gaussian(g: &Grid, c: [f64; 2], width: f64, amp: f64) -> Vec<f64> {
    (0..g.len())
        .map(|k| {
            if !g.is_interior(k) {
                return 0.0;
            }
            let [x, y] = g.coords(k);
            amp * (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (width * width)).exp()
        })
        .collect()
}

fn initial_field(g: &Arc<Grid>, sys: &System, cfg: &SolverConfig, rng: &mut ChaCha8Rng) -> Result<Field> {
    let d = sys.d();
    let r = g.outer_radius();
    let c = g.center();
    let comps = match &cfg.init {
        Init::FromFile(path) => return crate::io::read_grid_dump(path, g.clone(), d),
        Init::Bumps => (0..d)
            .map(|_| {
                let (dx, dy) = if g.is_radial_line() {
                    (0.0, 0.0)
                } else {
                    let rho = rng.gen_range(0.0..0.1) * r;
                    let theta = rng.gen_range(0.0..2.0 * PI);
                    (rho * theta.cos(), rho * theta.sin())
                };
                let amp = rng.gen_range(0.9..1.1);
                gaussian(g, [c[0] + dx, c[1] + dy], 0.3 * r, amp)
            })
            .collect(),
        Init::GroupSeparatedBumps { directions } => {
            let m = sys.m();
            if let Some(dirs) = directions {
                if dirs.len() != m {
                    return Err(Error::InvalidArgument(format!(
                        "{} directions given for {m} groups",
                        dirs.len()
                    )));
                }
            }
            if g.is_radial_line() {
                return Err(Error::Geometry("separated bumps need a planar grid".into()));
            }
            let rho = match g.kind() {
                GridKind::Annulus { r_in, r_out } => 0.5 * (r_in + r_out),
                _ => 0.5 * r,
            };
            (0..d)
                .map(|i| {
                    let h = sys.dec().group_of(i);
                    let theta = directions.as_ref().map_or(2.0 * PI * h as f64 / m as f64, |v| v[h]);
                    let amp = rng.gen_range(0.9..1.1);
                    gaussian(g, [c[0] + rho * theta.cos(), c[1] + rho * theta.sin()], 0.25 * r, amp)
                })
                .collect()
        }
    };
    Field::new(g.clone(), comps)
}

/// Per-component positivity and per-group mass lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityAudit {
    /// Minimum over interior nodes.
    pub component_min: Vec<f64>,
    pub component_positive: Vec<bool>,
    /// `max_{i,j∈I_h} β_ij · Σ_{i∈I_h} |u_i|²_{L⁴}`.
    pub group_mass: Vec<f64>,
    pub group_bound: Vec<bool>,
    pub delta: f64,
    pub all_pass: bool,
}

impl PositivityAudit {
    /// Verdict for component `i`: positive and its group meets the bound.
    pub fn component_pass(&self, dec: &Decomposition, i: usize) -> bool {
        self.component_positive[i] && self.group_bound[dec.group_of(i)]
    }
}

pub fn positivity_audit(res: &SolveResult, dec: &Decomposition, spec: &CouplingSpec, report: &ConstantsReport) -> PositivityAudit {
    let u = &res.field;
    let g = u.grid();
    let component_min: Vec<f64> = (0..u.d())
        .map(|i| {
            u.comp(i)
                .iter()
                .zip(g.interior())
                .filter(|(_, &inside)| inside)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let component_positive: Vec<bool> = component_min.iter().map(|&m| m > 0.0).collect();
    let l4 = u.l4_norms();
    let group_mass: Vec<f64> = dec
        .groups()
        .into_iter()
        .map(|r| {
            let bmax = r
                .clone()
                .flat_map(|i| r.clone().map(move |j| (i, j)))
                .map(|(i, j)| spec.beta_ij(i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            bmax * r.map(|i| l4[i] * l4[i]).sum::<f64>()
        })
        .collect();
    let group_bound: Vec<bool> = group_mass.iter().map(|&m| m >= report.delta).collect();
    let all_pass = component_positive.iter().all(|&b| b) && group_bound.iter().all(|&b| b);
    PositivityAudit { component_min, component_positive, group_mass, group_bound, delta: report.delta, all_pass }
}

/// Which entry of the coupling data a sweep axis varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// `β_ij = β_ji` (zero-based).
    Beta(usize, usize),
    /// `λ_i` (zero-based).
    Lambda(usize),
}

impl SweepParam {
    pub fn name(&self) -> String {
        match self {
            SweepParam::Beta(i, j) => format!("beta_{}{}", i + 1, j + 1),
            SweepParam::Lambda(i) => format!("lambda_{}", i + 1),
        }
    }
}

/// A sweep value, either absolute or a multiple of the row's `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Abs(f64),
    TimesK(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    NonConvergence,
    Failed(String),
}

impl RowStatus {
    pub fn label(&self) -> String {
        match self {
            RowStatus::Ok => "ok".into(),
            RowStatus::NonConvergence => "nonconvergence".into(),
            RowStatus::Failed(msg) => format!("error: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub row: usize,
    /// Resolved parameter values, in axis order.
    pub params: Vec<f64>,
    pub k: Option<f64>,
    pub status: RowStatus,
    pub result: Option<SolveResult>,
    pub regime_existence: bool,
    /// `(axis angle, violation)` per component on disk and annulus grids.
    pub symmetry: Option<Vec<(f64, f64)>>,
}

/// Number of rows in the Cartesian product; zero when there are no axes or an axis is empty.
pub fn sweep_len(axes: &[SweepAxis]) -> usize {
    if axes.is_empty() {
        return 0;
    }
    axes.iter().map(|a| a.values.len()).product()
}

/// Seed for row `r`; row 0 uses the configured seed.
pub fn row_seed(seed: u64, row: usize) -> u64 {
    seed.wrapping_add((row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One minimization per point of the parameter product. Rows never abort the sweep.
pub fn sweep(
    g: Arc<Grid>,
    dec: &Decomposition,
    template: &CouplingSpec,
    axes: &[SweepAxis],
    cfg: &SolverConfig,
    threads: Option<usize>,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let total = sweep_len(axes);
    let run = || (0..total).into_par_iter().map(|row| sweep_row(&g, dec, template, axes, cfg, row)).collect();
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

fn indices(axes: &[SweepAxis], mut row: usize) -> Vec<usize> {
    let mut idx = vec![0; axes.len()];
    for (a, axis) in axes.iter().enumerate().rev() {
        idx[a] = row % axis.values.len();
        row /= axis.values.len();
    }
    idx
}

fn sweep_row(
    g: &Arc<Grid>,
    dec: &Decomposition,
    template: &CouplingSpec,
    axes: &[SweepAxis],
    cfg: &SolverConfig,
    row: usize,
) -> SweepRow {
    let idx = indices(axes, row);
    let mut out = SweepRow {
        row,
        params: vec![f64::NAN; axes.len()],
        k: None,
        status: RowStatus::Ok,
        result: None,
        regime_existence: false,
        symmetry: None,
    };
    let fail = |mut out: SweepRow, e: Error| {
        out.status = RowStatus::Failed(e.to_string());
        out
    };
    // absolute entries first; K depends only on λ and the diagonal of β
    let mut spec = template.clone();
    for (a, axis) in axes.iter().enumerate() {
        if let SweepValue::Abs(v) = axis.values[idx[a]] {
            let updated = match axis.param {
                SweepParam::Beta(i, j) => spec.clone().with_beta(i, j, v),
                SweepParam::Lambda(i) => spec.clone().with_lambda(i, v),
            };
            match updated {
                Ok(s) => spec = s,
                Err(e) => return fail(out, e),
            }
            out.params[a] = v;
        }
    }
    let constants = if g.is_radial_line() {
        None
    } else {
        match constants_report(g, dec, &spec) {
            Ok(c) => Some(c),
            Err(e) => return fail(out, e),
        }
    };
    out.k = constants.as_ref().map(|c| c.k);
    for (a, axis) in axes.iter().enumerate() {
        if let SweepValue::TimesK(c) = axis.values[idx[a]] {
            let (SweepParam::Beta(i, j), Some(k)) = (axis.param, out.k) else {
                return fail(out, Error::InvalidArgument("K multiples apply to off-diagonal couplings on bounded grids".into()));
            };
            if i == j {
                return fail(out, Error::InvalidArgument("K multiples apply to off-diagonal couplings".into()));
            }
            match spec.clone().with_beta(i, j, c * k) {
                Ok(s) => spec = s,
                Err(e) => return fail(out, e),
            }
            out.params[a] = c * k;
        }
    }
    // refresh Kcoop, which depends on the off-diagonal signs
    let constants = constants.map(|c| crate::coupling::assemble_report(c.s, c.s_i, c.cbar, &spec));
    out.regime_existence = validate_regime(dec, &spec, constants.as_ref(), Theorem::Existence).holds;
    let row_cfg = SolverConfig { seed: row_seed(cfg.seed, row), ..cfg.clone() };
    let result = match minimize_with_constants(g.clone(), dec, &spec, &row_cfg, constants) {
        Ok(r) => r,
        Err(Error::NonConvergence(r)) => {
            out.status = RowStatus::NonConvergence;
            *r
        }
        Err(e) => return fail(out, e),
    };
    if g.is_radially_symmetric() {
        let cands = default_candidates();
        let sym: Result<Vec<(f64, f64)>> = (0..result.field.d())
            .map(|i| foliated_schwarz_test(&result.field.component(i), &cands).map(|f| (f.axis, f.violation)))
            .collect();
        out.symmetry = sym.ok();
    }
    out.result = Some(result);
    out
}

/// Membership flags of a result at the default tolerance.
pub fn result_membership(sys: &System, res: &SolveResult) -> Result<crate::energy::Membership> {
    Ok(membership_of(&sys.group_stats(&res.field)?, DEFAULT_MEMBERSHIP_TOL))
}
