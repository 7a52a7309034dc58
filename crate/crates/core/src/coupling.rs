//! Decompositions, coupling data, the explicit admissibility constants and
//! regime checks against each existence / symmetry / non-existence result.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Upper bound on the number of components.
pub const MAX_COMPONENTS: usize = 16;
const SOBOLEV_MAX_ITER: usize = 2_000;
pub const DEFAULT_SOBOLEV_TOL: f64 = 1e-10;

/// `a = (a_0, …, a_m)` with `0 = a_0 < a_1 < … < a_m = d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    a: Vec<usize>,
}

impl Decomposition {
    pub fn new(a: Vec<usize>) -> Result<Self> {
        if a.len() < 2 || a[0] != 0 {
            return Err(Error::InvalidArgument(format!(
                "decomposition must start at 0 and have at least one group, got {a:?}"
            )));
        }
        if a.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "decomposition must be strictly increasing, got {a:?}"
            )));
        }
        if *a.last().unwrap() > MAX_COMPONENTS {
            return Err(Error::InvalidArgument(format!(
                "at most {MAX_COMPONENTS} components are supported"
            )));
        }
        Ok(Self { a })
    }

    /// Every component in its own group (`m = d`).
    pub fn full(d: usize) -> Result<Self> {
        Self::new((0..=d).collect())
    }

    /// A single group holding all components (`m = 1`).
    pub fn single(d: usize) -> Result<Self> {
        Self::new(vec![0, d])
    }

    pub fn a(&self) -> &[usize] {
        &self.a
    }
    pub fn d(&self) -> usize {
        *self.a.last().unwrap()
    }
    pub fn m(&self) -> usize {
        self.a.len() - 1
    }

    /// Zero-based component ranges `I_1, …, I_m`.
    pub fn groups(&self) -> Vec<Range<usize>> {
        self.a.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn group(&self, h: usize) -> Range<usize> {
        self.a[h]..self.a[h + 1]
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.a.windows(2).position(|w| w[0] <= i && i < w[1]).expect("component index in range")
    }
}

/// Membership of an off-diagonal pair in `𝒦₁` (same group) or `𝒦₂` (different groups).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    SameGroup,
    CrossGroup,
}

/// Labels every ordered off-diagonal pair `(i, j)`, zero-based.
pub fn classify_pairs(dec: &Decomposition) -> BTreeMap<(usize, usize), PairClass> {
    let d = dec.d();
    let mut out = BTreeMap::new();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let class = if dec.group_of(i) == dec.group_of(j) {
                    PairClass::SameGroup
                } else {
                    PairClass::CrossGroup
                };
                out.insert((i, j), class);
            }
        }
    }
    out
}

/// Symmetric coupling matrix `β` with positive diagonal, plus the linear coefficients `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    beta: Vec<Vec<f64>>,
    lambda: Vec<f64>,
}

impl CouplingSpec {
    pub fn new(beta: Vec<Vec<f64>>, lambda: Vec<f64>) -> Result<Self> {
        let d = lambda.len();
        if d == 0 || d > MAX_COMPONENTS {
            return Err(Error::InvalidArgument(format!(
                "need 1..={MAX_COMPONENTS} components, got {d}"
            )));
        }
        if beta.len() != d || beta.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidArgument(format!("beta must be {d}x{d}")));
        }
        for i in 0..d {
            if !(beta[i][i] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "beta[{i}][{i}] must be positive, got {}",
                    beta[i][i]
                )));
            }
            for j in 0..i {
                let (a, b) = (beta[i][j], beta[j][i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "beta is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        if lambda.iter().any(|l| !l.is_finite()) || beta.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self { beta, lambda })
    }

    pub fn d(&self) -> usize {
        self.lambda.len()
    }
    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }
    pub fn beta_ij(&self, i: usize, j: usize) -> f64 {
        self.beta[i][j]
    }
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Sets `β_ij = β_ji = value` (off-diagonal) or `β_ii` (diagonal, must stay positive).
    pub fn with_beta(mut self, i: usize, j: usize, value: f64) -> Result<Self> {
        self.beta[i][j] = value;
        self.beta[j][i] = value;
        Self::new(self.beta, self.lambda)
    }

    pub fn with_lambda(mut self, i: usize, value: f64) -> Result<Self> {
        self.lambda[i] = value;
        Self::new(self.beta, self.lambda)
    }

    /// `λ_i > -μ₁` on bounded grids, `λ_i > 0` on radial lines.
    pub fn check_against(&self, g: &Grid) -> Result<()> {
        for &l in &self.lambda {
            g.check_lambda(l)?;
        }
        Ok(())
    }

    /// The sub-system of one group: its components, couplings and coefficients.
    pub fn restrict(&self, range: Range<usize>) -> Result<Self> {
        let beta = range
            .clone()
            .map(|i| range.clone().map(|j| self.beta[i][j]).collect())
            .collect();
        Self::new(beta, self.lambda[range].to_vec())
    }

    pub fn off_diagonal_all_positive(&self) -> bool {
        let d = self.d();
        (0..d).all(|i| (0..d).all(|j| i == j || self.beta[i][j] > 0.0))
    }
}

/// `inf ‖u‖²_λ / |u|²_{L⁴}` on `g`, by Sobolev-gradient descent on the quotient with
/// L⁴ renormalization each step, started from a positive Gaussian bump.
pub fn sobolev_quotient(g: &Grid, lambda: f64, tol: f64) -> Result<f64> {
    g.check_lambda(lambda)?;
    let mut u = centered_bump(g);
    let mut q = normalize_l4(g, lambda, &mut u)?;
    let mut tau: f64 = 1.0;
    for _ in 0..SOBOLEV_MAX_ITER {
        // fixed point of u = q (-Δ + λ)^{-1} u³ is a critical point at level q
        let cube: Vec<f64> = u.iter().map(|v| v * v * v).collect();
        let z = g.solve_shifted(lambda, &cube)?;
        let mut accepted = None;
        while tau > 1e-12 {
            let mut trial: Vec<f64> = u
                .iter()
                .zip(&z)
                .map(|(a, b)| ((1.0 - tau) * a + tau * q * b).max(0.0))
                .collect();
            let q_trial = normalize_l4(g, lambda, &mut trial)?;
            if q_trial <= q * (1.0 + 1e-15) {
                accepted = Some((trial, q_trial));
                break;
            }
            tau *= 0.5;
        }
        let Some((next, q_next)) = accepted else {
            // no descent left at machine precision
            return Ok(q);
        };
        let change = (q - q_next).abs();
        u = next;
        q = q_next;
        tau = (tau * 1.5).min(1.0);
        if change < tol * q {
            return Ok(q);
        }
    }
    Err(Error::Convergence { what: "Sobolev quotient descent", iterations: SOBOLEV_MAX_ITER })
}

fn centered_bump(g: &Grid) -> Vec<f64> {
    let (mut cx, mut cy, mut count) = (0.0, 0.0, 0.0);
    for k in 0..g.len() {
        if g.is_interior(k) {
            let [x, y] = g.coords(k);
            cx += x;
            cy += y;
            count += 1.0;
        }
    }
    let c = if g.is_radial_line() { [0.0, 0.0] } else { [cx / count, cy / count] };
    let s2 = (0.5 * g.outer_radius()).powi(2);
    (0..g.len())
        .map(|k| {
            if !g.is_interior(k) {
                return 0.0;
            }
            let [x, y] = g.coords(k);
            (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / s2).exp()
        })
        .collect()
}

/// Rescales to `|u|_{L⁴} = 1` and returns `‖u‖²_λ` afterwards (i.e. the quotient).
fn normalize_l4(g: &Grid, lambda: f64, u: &mut [f64]) -> Result<f64> {
    let l4 = g.quartic(u).powf(0.25);
    if !(l4 > 0.0) {
        return Err(Error::Convergence { what: "Sobolev quotient descent (collapsed)", iterations: 0 });
    }
    u.iter_mut().for_each(|v| *v /= l4);
    Ok(g.inner_product_raw(u, u, lambda))
}

/// `S_i` for every component (one solve per distinct `λ_i`) and `S = min_i S_i`.
pub fn sobolev_constants(g: &Grid, spec: &CouplingSpec, tol: f64) -> Result<(f64, Vec<f64>)> {
    spec.check_against(g)?;
    let mut cache: Vec<(f64, f64)> = Vec::new();
    let mut per = Vec::with_capacity(spec.d());
    for &l in spec.lambda() {
        let s = match cache.iter().find(|(lam, _)| *lam == l) {
            Some(&(_, s)) => s,
            None => {
                let s = sobolev_quotient(g, l, tol)?;
                cache.push((l, s));
                s
            }
        };
        per.push(s);
    }
    let s = per.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((s, per))
}

/// `S = inf_i inf_u ‖u‖²_i / |u|²_{L⁴}`.
pub fn sobolev_constant(g: &Grid, spec: &CouplingSpec, tol: f64) -> Result<f64> {
    Ok(sobolev_constants(g, spec, tol)?.0)
}

/// `m` equal vertical slabs of the bounding box intersected with the domain; nodes on
/// slab interfaces are dropped so the pieces are disjoint open sets.
pub fn slab_partition(g: &Grid, m: usize) -> Result<Vec<Grid>> {
    if g.is_radial_line() {
        return Err(Error::Geometry("slab partition needs a bounded planar grid".into()));
    }
    let [x0, x1] = g.x_extent();
    let width = (x1 - x0) / m as f64;
    let eps = 1e-9 * g.h();
    (0..m)
        .map(|h| {
            let lo = x0 + h as f64 * width;
            let hi = x0 + (h + 1) as f64 * width;
            g.restrict(|x, _| x > lo + eps && x < hi - eps).map_err(|_| {
                Error::Geometry(format!("slab {} of {m} has empty interior", h + 1))
            })
        })
        .collect()
}

/// `¼ · max_h min_{i∈I_h} (1+λ_i)²/β_ii · Σ_h S(Ω_h)²` for a given disjoint partition,
/// with `S(Ω_h)` measured in the unit-weight norm `∫|∇u|² + u²`.
pub fn cbar_for_partition(dec: &Decomposition, spec: &CouplingSpec, parts: &[Grid], tol: f64) -> Result<f64> {
    if parts.len() != dec.m() {
        return Err(Error::InvalidArgument(format!(
            "partition has {} pieces, decomposition has {} groups",
            parts.len(),
            dec.m()
        )));
    }
    let factor = dec
        .groups()
        .into_iter()
        .map(|r| {
            r.map(|i| (1.0 + spec.lambda()[i]).powi(2) / spec.beta_ij(i, i))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for p in parts {
        let s = sobolev_quotient(p, 1.0, tol)?;
        sum += s * s;
    }
    Ok(0.25 * factor * sum)
}

/// Upper bound `C̄ ≥ c` using equal vertical slabs as the partition.
pub fn upper_bound_cbar(g: &Grid, dec: &Decomposition, spec: &CouplingSpec) -> Result<f64> {
    let parts = slab_partition(g, dec.m())?;
    cbar_for_partition(dec, spec, &parts, DEFAULT_SOBOLEV_TOL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsReport {
    pub s: f64,
    pub s_i: Vec<f64>,
    pub cbar: f64,
    /// `S² / (16 C̄)`
    pub k: f64,
    /// Cooperative constant, only when every off-diagonal coupling is positive.
    pub k_coop: Option<f64>,
    /// `S / (2d)`
    pub delta: f64,
}

impl ConstantsReport {
    /// Flat `key = value` block.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "S = {}", crate::io::fmt_f64(self.s));
        for (i, s) in self.s_i.iter().enumerate() {
            let _ = writeln!(out, "S_{} = {}", i + 1, crate::io::fmt_f64(*s));
        }
        let _ = writeln!(out, "Cbar = {}", crate::io::fmt_f64(self.cbar));
        let _ = writeln!(out, "K = {}", crate::io::fmt_f64(self.k));
        match self.k_coop {
            Some(k) => {
                let _ = writeln!(out, "Kcoop = {}", crate::io::fmt_f64(k));
            }
            None => {
                let _ = writeln!(out, "Kcoop = none");
            }
        }
        let _ = writeln!(out, "delta = {}", crate::io::fmt_f64(self.delta));
        out
    }
}

/// `min_i S_i² / (2 Σ_j S_j²/β_jj)`.
pub fn cooperative_k(s_i: &[f64], spec: &CouplingSpec) -> f64 {
    let min_sq = s_i.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
    let denom: f64 = s_i
        .iter()
        .enumerate()
        .map(|(j, s)| s * s / spec.beta_ij(j, j))
        .sum();
    min_sq / (2.0 * denom)
}

pub fn constants_report(g: &Grid, dec: &Decomposition, spec: &CouplingSpec) -> Result<ConstantsReport> {
    if dec.d() != spec.d() {
        return Err(Error::InvalidArgument("decomposition and coupling disagree on d".into()));
    }
    let (s, s_i) = sobolev_constants(g, spec, DEFAULT_SOBOLEV_TOL)?;
    let cbar = upper_bound_cbar(g, dec, spec)?;
    Ok(assemble_report(s, s_i, cbar, spec))
}

pub(crate) fn assemble_report(s: f64, s_i: Vec<f64>, cbar: f64, spec: &CouplingSpec) -> ConstantsReport {
    let d = spec.d() as f64;
    let k_coop = spec.off_diagonal_all_positive().then(|| cooperative_k(&s_i, spec));
    ConstantsReport { s, k: s * s / (16.0 * cbar), delta: s / (2.0 * d), s_i, cbar, k_coop }
}

/// Results whose hypotheses can be checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theorem {
    /// Nonnegative minimizer on the group Nehari set.
    Existence,
    /// Every component its own group, all couplings below `K`.
    CoopWeak,
    /// Strong cooperation inside groups, uniform weak coupling across groups.
    StrongCoop1,
    /// Strong cooperation inside groups with margin `α > 1`, small cross couplings.
    StrongCoop2 { alpha: f64 },
    /// Non-attainment of the non-radial level in ℝ^N.
    NonexistenceRn,
}

impl Theorem {
    pub fn name(&self) -> String {
        match self {
            Theorem::Existence => "existence".into(),
            Theorem::CoopWeak => "coopWeak".into(),
            Theorem::StrongCoop1 => "strongCoop1".into(),
            Theorem::StrongCoop2 { alpha } => format!("strongCoop2({alpha})"),
            Theorem::NonexistenceRn => "nonexistenceRN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeVerdict {
    pub theorem: Theorem,
    pub holds: bool,
    pub checks: Vec<HypothesisCheck>,
}

impl RegimeVerdict {
    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect()
    }

    pub fn check(&self, name: &str) -> Option<bool> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.holds)
    }
}

struct Pairs<'a> {
    dec: &'a Decomposition,
    spec: &'a CouplingSpec,
}

impl Pairs<'_> {
    fn same(&self) -> impl Iterator<Item = f64> + '_ {
        let d = self.dec.d();
        (0..d).flat_map(move |i| {
            (0..d)
                .filter(move |&j| j != i && self.dec.group_of(i) == self.dec.group_of(j))
                .map(move |j| self.spec.beta_ij(i, j))
        })
    }

    fn cross(&self) -> impl Iterator<Item = f64> + '_ {
        let d = self.dec.d();
        (0..d).flat_map(move |i| {
            (0..d)
                .filter(move |&j| self.dec.group_of(i) != self.dec.group_of(j))
                .map(move |j| self.spec.beta_ij(i, j))
        })
    }

    /// Uniform in-group coupling `β_h` exceeding `factor · max_{i∈I_h} β_ii` (singleton groups pass).
    fn strong_in_groups(&self, factor: f64) -> bool {
        self.dec.groups().into_iter().all(|r| {
            if r.len() < 2 {
                return true;
            }
            let bh = self.spec.beta_ij(r.start, r.start + 1);
            let uniform = r.clone().all(|i| r.clone().all(|j| i == j || self.spec.beta_ij(i, j) == bh));
            let max_diag = r.clone().map(|i| self.spec.beta_ij(i, i)).fold(f64::NEG_INFINITY, f64::max);
            uniform && bh > factor * max_diag
        })
    }

    fn equal_lambda_in_groups(&self) -> bool {
        self.dec.groups().into_iter().all(|r| {
            let l0 = self.spec.lambda()[r.start];
            r.clone().all(|i| self.spec.lambda()[i] == l0)
        })
    }
}

/// Checks exactly the listed hypotheses of `theorem`; never errors.
pub fn validate_regime(
    dec: &Decomposition,
    spec: &CouplingSpec,
    report: Option<&ConstantsReport>,
    theorem: Theorem,
) -> RegimeVerdict {
    let mut checks = Vec::new();
    let mut push = |name: &str, holds: bool| checks.push(HypothesisCheck { name: name.into(), holds });
    if dec.d() != spec.d() {
        push("consistent dimensions", false);
        return RegimeVerdict { theorem, holds: false, checks };
    }
    let pairs = Pairs { dec, spec };
    let k = report.map(|r| r.k);
    let below_k = |b: f64| k.is_some_and(|k| b < k);
    match theorem {
        Theorem::Existence => {
            push("β≥0 on 𝒦₁", pairs.same().all(|b| b >= 0.0));
            push("β<K on 𝒦₂", pairs.cross().all(below_k));
        }
        Theorem::CoopWeak => {
            push("m=d", dec.m() == dec.d());
            let d = spec.d();
            let all = (0..d).all(|i| (0..d).all(|j| i == j || below_k(spec.beta_ij(i, j))));
            push("β<K off-diagonal", all);
        }
        Theorem::StrongCoop1 => {
            push("uniform β_h > max β_ii in group", pairs.strong_in_groups(1.0));
            let cross: Vec<f64> = pairs.cross().collect();
            let uniform = cross.windows(2).all(|w| w[0] == w[1]);
            push("uniform b<K on 𝒦₂", uniform && cross.iter().all(|&b| below_k(b)));
            push("equal λ per group", pairs.equal_lambda_in_groups());
        }
        Theorem::StrongCoop2 { alpha } => {
            push("α>1", alpha > 1.0);
            let factor = if alpha > 1.0 { alpha / (alpha - 1.0) } else { f64::INFINITY };
            push("uniform β_h > α/(α−1)·max β_ii", pairs.strong_in_groups(factor));
            let d2 = (dec.d() * dec.d()) as f64;
            let bound = k.map(|k| k / (alpha * d2));
            push(
                "|β|≤K/(αd²) on 𝒦₂",
                pairs.cross().all(|b| bound.is_some_and(|bd| b.abs() <= bd)),
            );
            push("equal λ per group", pairs.equal_lambda_in_groups());
        }
        Theorem::NonexistenceRn => {
            push("β≥0 on 𝒦₁", pairs.same().all(|b| b >= 0.0));
            push("β≤0 on 𝒦₂", pairs.cross().all(|b| b <= 0.0));
            let groups = dec.groups();
            let strict = groups.iter().enumerate().any(|(h1, r1)| {
                groups.iter().enumerate().any(|(h2, r2)| {
                    h1 != h2
                        && r1.clone().all(|i| r2.clone().all(|j| spec.beta_ij(i, j) < 0.0))
                })
            });
            push("strictly negative group pair", strict);
        }
    }
    let holds = checks.iter().all(|c| c.holds);
    RegimeVerdict { theorem, holds, checks }
}
