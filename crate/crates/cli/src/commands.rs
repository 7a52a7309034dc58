use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nehari::coupling::{classify_pairs, constants_report, validate_regime, ConstantsReport, PairClass, Theorem};
use nehari::energy::{Field, System};
use nehari::io::{csv_line, fmt_f64, key_values, write_atomic, write_grid_dump};
use nehari::radial::{decay_audit, splitting_experiment, subsystem_level, SplittingConfig};
use nehari::solver::{minimize_with_constants, positivity_audit, sweep, SolveResult};
use nehari::symmetry::antipodal_audit;
use nehari::Error;

use crate::config::{Domain, RunConfig};

/// Non-error outcomes that still map to a nonzero exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NonConvergence,
    RegimeGuard,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::NonConvergence => 2,
            Status::RegimeGuard => 3,
        }
    }
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out.join(name);
    write_atomic(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn bounded_constants(cfg: &RunConfig, g: &nehari::Grid) -> Result<Option<ConstantsReport>> {
    if g.is_radial_line() {
        return Ok(None);
    }
    Ok(Some(constants_report(g, &cfg.dec, &cfg.spec)?))
}

/// First audit block: the configured split, otherwise `d` when no cross-group coupling is negative,
/// otherwise the first group.
fn default_split(cfg: &RunConfig) -> usize {
    if let Some(l) = cfg.task.split {
        return l;
    }
    let competitive = classify_pairs(&cfg.dec)
        .into_iter()
        .any(|((i, j), class)| class == PairClass::CrossGroup && cfg.spec.beta_ij(i, j) < 0.0);
    if competitive {
        cfg.dec.a()[1]
    } else {
        cfg.spec.d()
    }
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ")
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let g = cfg.grid()?;
    cfg.spec.check_against(&g)?;
    let constants = bounded_constants(cfg, &g)?;
    let verdict = validate_regime(&cfg.dec, &cfg.spec, constants.as_ref(), Theorem::Existence);
    if !verdict.holds {
        eprintln!("warning: existence hypotheses fail ({}); running in exploration mode", verdict.failing().join(", "));
    }
    let (res, status) = match minimize_with_constants(g.clone(), &cfg.dec, &cfg.spec, &cfg.solver, constants.clone()) {
        Ok(r) => (r, Status::Ok),
        Err(Error::NonConvergence(r)) => {
            eprintln!(
                "minimization did not converge after {} iterations (gradient residual {:.3e})",
                r.iterations, r.grad_residual
            );
            (*r, Status::NonConvergence)
        }
        Err(e) => return Err(e.into()),
    };
    prepare(out)?;
    let mut summary: Vec<(String, String)> = vec![
        ("status".into(), if status == Status::Ok { "converged" } else { "nonconvergence" }.into()),
        ("energy".into(), fmt_f64(res.energy)),
        ("grad_residual".into(), fmt_f64(res.grad_residual)),
        ("iterations".into(), res.iterations.to_string()),
        ("restarts".into(), res.restarts.to_string()),
        ("seed".into(), cfg.solver.seed.to_string()),
        ("semi_trivial".into(), bool_str(res.semi_trivial).into()),
        ("exploration".into(), bool_str(res.exploration).into()),
        ("regime_existence".into(), bool_str(verdict.holds).into()),
    ];
    for (h, gh) in res.nehari_residual.iter().enumerate() {
        summary.push((format!("nehari_residual_{}", h + 1), fmt_f64(*gh)));
    }
    for (i, l4) in res.component_l4.iter().enumerate() {
        summary.push((format!("l4_{}", i + 1), fmt_f64(*l4)));
    }
    let mut text = key_values(&summary);
    if let Some(rep) = &constants {
        text.push_str(&rep.to_key_values());
        let audit = positivity_audit(&res, &cfg.dec, &cfg.spec, rep);
        let mut pairs: Vec<(String, String)> = vec![("positivity_all_pass".into(), bool_str(audit.all_pass).into())];
        for i in 0..cfg.spec.d() {
            pairs.push((format!("positivity_component_{}", i + 1), bool_str(audit.component_pass(&cfg.dec, i)).into()));
            pairs.push((format!("component_min_{}", i + 1), fmt_f64(audit.component_min[i])));
        }
        for (h, m) in audit.group_mass.iter().enumerate() {
            pairs.push((format!("group_mass_{}", h + 1), fmt_f64(*m)));
        }
        text.push_str(&key_values(&pairs));
    }
    if g.is_radially_symmetric() {
        let split = default_split(cfg);
        let rep = antipodal_audit(&res.field, split, cfg.task.symmetry_tol, cfg.task.angle_tol.to_radians())?;
        let mut pairs: Vec<(String, String)> = vec![
            ("symmetry_split".into(), split.to_string()),
            ("symmetry_axis".into(), fmt_f64(rep.axis)),
            ("symmetry_violation".into(), fmt_f64(rep.joint_violation)),
            ("symmetry_angle_deviation".into(), fmt_f64(rep.angle_deviation)),
            ("symmetry_pairing".into(), bool_str(rep.pairing_ok).into()),
            ("symmetry_pass".into(), bool_str(rep.passes).into()),
        ];
        for (i, (a, v)) in rep.per_component_axis.iter().zip(&rep.per_component_violation).enumerate() {
            pairs.push((format!("axis_{}", i + 1), fmt_f64(*a)));
            pairs.push((format!("violation_{}", i + 1), fmt_f64(*v)));
        }
        text.push_str(&key_values(&pairs));
    }
    write(out, "summary.txt", &text)?;
    write_grid_dump(&out.join("field.dump"), &res.field).context("cannot write field.dump")?;
    write(out, "diagnostics.csv", &diagnostics_csv(&res))?;
    let sys = System::new(cfg.spec.clone(), cfg.dec.clone())?;
    write(out, "groupstats.csv", &groupstats_csv(&sys, &res.field)?)?;
    write_slices(out, &res.field)?;
    Ok(status)
}

fn diagnostics_csv(res: &SolveResult) -> String {
    let mut s = csv_line(&["step", "energy"]) + "\n";
    for (k, e) in res.energy_trace.iter().enumerate() {
        s.push_str(&csv_line(&[k.to_string(), fmt_f64(*e)]));
        s.push('\n');
    }
    s
}

fn groupstats_csv(sys: &System, u: &Field) -> Result<String> {
    let st = sys.group_stats(u)?;
    let m = st.m();
    let mut header = vec!["group".to_string(), "group_norm".into(), "G".into()];
    header.extend((1..=m).map(|k| format!("MB_{k}")));
    let mut s = csv_line(&header) + "\n";
    for h in 0..m {
        let mut row = vec![(h + 1).to_string(), fmt_f64(st.group_norms[h]), fmt_f64(st.g[h])];
        row.extend(st.mb[h].iter().map(|&x| fmt_f64(x)));
        s.push_str(&csv_line(&row));
        s.push('\n');
    }
    Ok(s)
}

/// Whitespace-separated columns along the two mid-lines, or the profile on a radial line.
fn write_slices(out: &Path, u: &Field) -> Result<()> {
    let g = u.grid();
    let d = u.d();
    let header = |coord: &str| {
        let mut h = format!("# {coord}");
        for i in 1..=d {
            let _ = write!(h, " u_{i}");
        }
        h + "\n"
    };
    let column = |nodes: &mut dyn Iterator<Item = (f64, usize)>, coord: &str| {
        let mut s = header(coord);
        for (c, k) in nodes {
            let _ = write!(s, "{}", fmt_f64(c));
            for i in 0..d {
                let _ = write!(s, " {}", fmt_f64(u.comp(i)[k]));
            }
            s.push('\n');
        }
        s
    };
    if g.is_radial_line() {
        let s = column(&mut (0..g.len()).map(|k| (g.coords(k)[0], k)), "r");
        return write(out, "profile.dat", &s);
    }
    let (nx, ny) = (g.nx(), g.ny());
    let sx = column(&mut (0..nx).map(|ix| (g.coords(g.index(ix, ny / 2))[0], g.index(ix, ny / 2))), "x");
    let sy = column(&mut (0..ny).map(|iy| (g.coords(g.index(nx / 2, iy))[1], g.index(nx / 2, iy))), "y");
    write(out, "slice_x.dat", &sx)?;
    write(out, "slice_y.dat", &sy)
}

pub fn sweep_cmd(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<Status> {
    let g = cfg.grid()?;
    let rows = sweep(g.clone(), &cfg.dec, &cfg.spec, &cfg.task.sweep, &cfg.solver, threads)?;
    prepare(out)?;
    let d = cfg.spec.d();
    let mut header: Vec<String> = vec!["row".into()];
    header.extend(cfg.task.sweep.iter().map(|a| a.param.name()));
    header.extend(["K", "status", "energy", "gradResidual", "iterations", "semiTrivial"].map(String::from));
    header.extend((1..=d).map(|i| format!("l4_{i}")));
    header.push("regimeVerdict".into());
    if g.is_radially_symmetric() {
        for i in 1..=d {
            header.push(format!("axis_{i}"));
            header.push(format!("violation_{i}"));
        }
    }
    let mut csv = csv_line(&header) + "\n";
    let mut manifest = csv_line(&["row", "status", "field"]) + "\n";
    if !rows.is_empty() {
        fs::create_dir_all(out.join("rows")).context("cannot create rows directory")?;
    }
    for row in &rows {
        let mut f: Vec<String> = vec![row.row.to_string()];
        f.extend(row.params.iter().map(|&p| fmt_f64(p)));
        f.push(row.k.map(fmt_f64).unwrap_or_default());
        f.push(row.status.label());
        match &row.result {
            Some(r) => {
                f.push(fmt_f64(r.energy));
                f.push(fmt_f64(r.grad_residual));
                f.push(r.iterations.to_string());
                f.push(bool_str(r.semi_trivial).into());
                f.extend(r.component_l4.iter().map(|&x| fmt_f64(x)));
            }
            None => f.extend(std::iter::repeat_n(String::new(), 4 + d)),
        }
        f.push(bool_str(row.regime_existence).into());
        if g.is_radially_symmetric() {
            match &row.symmetry {
                Some(sym) => {
                    for (a, v) in sym {
                        f.push(fmt_f64(*a));
                        f.push(fmt_f64(*v));
                    }
                }
                None => f.extend(std::iter::repeat_n(String::new(), 2 * d)),
            }
        }
        csv.push_str(&csv_line(&f));
        csv.push('\n');
        let file = match &row.result {
            Some(r) => {
                let name = format!("rows/row_{:04}.dump", row.row);
                write_grid_dump(&out.join(&name), &r.field).with_context(|| format!("cannot write {name}"))?;
                name
            }
            None => String::new(),
        };
        manifest.push_str(&csv_line(&[row.row.to_string(), row.status.label(), file]));
        manifest.push('\n');
    }
    write(out, "sweep.csv", &csv)?;
    write(out, "manifest.csv", &manifest)?;
    let failed = rows.iter().filter(|r| r.result.is_none()).count();
    if failed > 0 {
        eprintln!("{failed} of {} sweep rows failed; see sweep.csv", rows.len());
    }
    Ok(Status::Ok)
}

pub fn constants(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    let g = cfg.grid()?;
    if g.is_radial_line() {
        bail!("constants are defined on bounded domains; domain.kind = radial has none");
    }
    cfg.spec.check_against(&g)?;
    let rep = constants_report(&g, &cfg.dec, &cfg.spec)?;
    let text = rep.to_key_values();
    print!("{text}");
    if let Some(out) = out {
        prepare(out)?;
        write(out, "constants.txt", &text)?;
    }
    Ok(Status::Ok)
}

pub fn radial(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let Domain::Radial { dim, .. } = cfg.domain else {
        bail!("the radial command needs domain.kind = radial");
    };
    let m = cfg.dec.m();
    if m >= 2 {
        let verdict = validate_regime(&cfg.dec, &cfg.spec, None, Theorem::NonexistenceRn);
        if !verdict.holds {
            eprintln!(
                "non-existence hypotheses fail ({}); the splitting experiment is meaningless for this data",
                verdict.failing().join(", ")
            );
            return Ok(Status::RegimeGuard);
        }
        if dim != 2 {
            bail!("the splitting experiment embeds planar profiles; set domain.dim = 2");
        }
    }
    let g = cfg.grid()?;
    let mut levels = Vec::with_capacity(m);
    for h in 0..m {
        match subsystem_level(&cfg.spec, &cfg.dec, h, g.clone(), &cfg.solver) {
            Ok(l) => levels.push(l),
            Err(Error::NonConvergence(r)) => {
                eprintln!(
                    "group {} level did not converge after {} iterations (gradient residual {:.3e})",
                    h + 1,
                    r.iterations,
                    r.grad_residual
                );
                return Ok(Status::NonConvergence);
            }
            Err(e) => return Err(e.into()),
        }
    }
    prepare(out)?;
    let mut lv = csv_line(&["group", "level", "gradResidual", "decayRate"]) + "\n";
    let mut dc = csv_line(&["group", "component", "slope", "required", "windowStart", "windowEnd", "passes"]) + "\n";
    for lev in &levels {
        lv.push_str(&csv_line(&[
            (lev.h + 1).to_string(),
            fmt_f64(lev.level),
            fmt_f64(lev.grad_residual),
            fmt_f64(lev.decay_rate),
        ]));
        lv.push('\n');
        let range = cfg.dec.group(lev.h);
        let lambda = &cfg.spec.lambda()[range.clone()];
        match decay_audit(lev, lambda, cfg.task.beta_fraction) {
            Ok(fits) => {
                for (fit, i) in fits.iter().zip(range) {
                    dc.push_str(&csv_line(&[
                        (lev.h + 1).to_string(),
                        (i + 1).to_string(),
                        fmt_f64(fit.slope),
                        fmt_f64(fit.required),
                        fmt_f64(fit.window.0),
                        fmt_f64(fit.window.1),
                        bool_str(fit.passes).to_string(),
                    ]));
                    dc.push('\n');
                }
            }
            Err(e @ Error::Truncation(_)) => eprintln!("group {}: {e}", lev.h + 1),
            Err(e) => return Err(e.into()),
        }
        write_slices_named(out, &format!("profile_{}.dat", lev.h + 1), &lev.profile)?;
    }
    write(out, "levels.csv", &lv)?;
    write(out, "decay.csv", &dc)?;
    let sum: f64 = levels.iter().map(|l| l.level).sum();
    let mut summary = vec![("groups".to_string(), m.to_string()), ("sum_levels".to_string(), fmt_f64(sum))];
    if m >= 2 {
        let scale = 1.0 / cfg.min_lambda().sqrt();
        let radii = cfg.task.radii.clone().unwrap_or_else(|| [4.0, 6.0, 8.0, 10.0, 12.0].map(|r| r * scale).to_vec());
        let split = SplittingConfig { h: cfg.task.splitting_h, half_width: None };
        let rows = splitting_experiment(&cfg.spec, &cfg.dec, &levels, &radii, &split)?;
        let mut header = vec!["R".to_string(), "energy".into(), "sumLevels".into(), "offDiagonalMass".into()];
        header.extend((1..=m).map(|h| format!("t_{h}")));
        header.push("inN".into());
        let mut s = csv_line(&header) + "\n";
        for r in &rows {
            let mut f = vec![fmt_f64(r.r), fmt_f64(r.energy), fmt_f64(r.sum_lh), fmt_f64(r.off_diag_mass)];
            f.extend(r.t.iter().map(|&t| fmt_f64(t)));
            f.push(bool_str(r.in_n).into());
            s.push_str(&csv_line(&f));
            s.push('\n');
        }
        write(out, "splitting.csv", &s)?;
        if let Some(last) = rows.last() {
            summary.push(("splitting_energy_at_max_radius".into(), fmt_f64(last.energy)));
            summary.push(("splitting_t_at_max_radius".into(), list(&last.t)));
        }
    }
    write(out, "summary.txt", &key_values(&summary))?;
    Ok(Status::Ok)
}

fn write_slices_named(out: &Path, name: &str, profile: &Field) -> Result<()> {
    let g = profile.grid();
    let mut s = String::from("# r");
    for i in 1..=profile.d() {
        let _ = write!(s, " u_{i}");
    }
    s.push('\n');
    for k in 0..g.len() {
        let _ = write!(s, "{}", fmt_f64(g.coords(k)[0]));
        for i in 0..profile.d() {
            let _ = write!(s, " {}", fmt_f64(profile.comp(i)[k]));
        }
        s.push('\n');
    }
    write(out, name, &s)
}
