//! Line-oriented `section.key = value` run configuration.
//!
//! ```text
//! # unit disk, two competing components
//! domain.kind = disk
//! domain.n = 41
//! system.d = 2
//! system.lambda = 1, 1
//! system.beta.row_1 = 1, -1
//! system.beta.row_2 = -1, 1
//! decomposition.a = 0, 1, 2
//! solver.init = separated
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use nehari::coupling::{CouplingSpec, Decomposition};
use nehari::grid::Grid;
use nehari::radial::{default_r_max, radial_grid};
use nehari::solver::{Init, SolverConfig, Step, SweepAxis, SweepParam, SweepValue};

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Rectangle { lx: f64, ly: f64, n: usize },
    Disk { radius: f64, n: usize },
    Annulus { r_in: f64, r_out: f64, n: usize },
    /// Radial line; `r_max` defaults to `12/√(min λ)`.
    Radial { dim: usize, r_max: Option<f64>, h: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// Size of the first block in the antipodal audit.
    pub split: Option<usize>,
    pub symmetry_tol: f64,
    /// Degrees.
    pub angle_tol: f64,
    pub sweep: Vec<SweepAxis>,
    /// Splitting radii; defaults to `{4, 6, 8, 10, 12}/√(min λ)`.
    pub radii: Option<Vec<f64>>,
    pub beta_fraction: f64,
    pub splitting_h: f64,
}

impl Default for Task {
    fn default() -> Self {
        Self {
            split: None,
            symmetry_tol: nehari::symmetry::DEFAULT_SYMMETRY_TOL,
            angle_tol: nehari::symmetry::DEFAULT_ANGLE_TOL.to_degrees(),
            sweep: Vec::new(),
            radii: None,
            beta_fraction: 0.81,
            splitting_h: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: Domain,
    pub spec: CouplingSpec,
    pub dec: Decomposition,
    pub solver: SolverConfig,
    pub task: Task,
}

const SCALAR_KEYS: &[&str] = &[
    "domain.kind",
    "domain.lx",
    "domain.ly",
    "domain.radius",
    "domain.r_in",
    "domain.r_out",
    "domain.n",
    "domain.dim",
    "domain.r_max",
    "domain.h",
    "system.d",
    "system.lambda",
    "decomposition.a",
    "solver.max_iter",
    "solver.tol_grad",
    "solver.tol_energy",
    "solver.step",
    "solver.precondition",
    "solver.seed",
    "solver.init",
    "solver.init_file",
    "solver.directions",
    "task.split",
    "task.symmetry_tol",
    "task.angle_tol",
    "task.radii",
    "task.beta_fraction",
    "task.splitting_h",
];

struct Entry {
    line: usize,
    value: String,
}

/// Raw entries in file order, keyed by their full dotted name.
struct Raw {
    entries: BTreeMap<String, Entry>,
    order: Vec<String>,
    base: PathBuf,
}

impl Raw {
    fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut order = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line_no = k + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `section.key = value`, found `{content}`"))?;
            let key = key.trim().to_string();
            if !known_key(&key) {
                bail!("line {line_no}: unknown key `{key}`");
            }
            if let Some(prev) = entries.get(&key) {
                let prev: &Entry = prev;
                bail!("line {line_no}: `{key}` already set on line {}", prev.line);
            }
            order.push(key.clone());
            entries.insert(key, Entry { line: line_no, value: value.trim().to_string() });
        }
        Ok(Self { entries, order, base: base.to_path_buf() })
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn str_or(&self, key: &str, default: &str) -> String {
        self.get(key).map(|e| e.value.clone()).unwrap_or_else(|| default.to_string())
    }

    fn parse_with<T>(&self, key: &str, f: impl Fn(&str) -> Option<T>, what: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .ok_or_else(|| anyhow!("line {}: `{key}` expects {what}, found `{}`", e.line, e.value)),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, |s| s.parse::<f64>().ok().filter(|x| x.is_finite()), "a number")
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, |s| s.parse().ok(), "a nonnegative integer")
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.parse_with(key, parse_list, "a comma-separated list of numbers")
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| anyhow!("missing required key `{key}`"))
    }
}

fn known_key(key: &str) -> bool {
    if SCALAR_KEYS.contains(&key) {
        return true;
    }
    if let Some(i) = key.strip_prefix("system.beta.row_") {
        return i.parse::<usize>().is_ok();
    }
    if let Some(p) = key.strip_prefix("task.sweep.") {
        return parse_sweep_param(p).is_some();
    }
    false
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|t| t.trim().parse::<f64>().ok().filter(|x| x.is_finite())).collect()
}

/// `beta_<i>_<j>` or `lambda_<i>`, one-based, into a zero-based parameter.
fn parse_sweep_param(p: &str) -> Option<SweepParam> {
    if let Some(rest) = p.strip_prefix("beta_") {
        let (i, j) = rest.split_once('_')?;
        let (i, j): (usize, usize) = (i.parse().ok()?, j.parse().ok()?);
        return (i >= 1 && j >= 1).then(|| SweepParam::Beta(i - 1, j - 1));
    }
    let i: usize = p.strip_prefix("lambda_")?.parse().ok()?;
    (i >= 1).then(|| SweepParam::Lambda(i - 1))
}

/// `0.5`, `-1e-2` or a multiple of `K` such as `0.5K`.
fn parse_sweep_value(s: &str) -> Option<SweepValue> {
    let s = s.trim();
    match s.strip_suffix('K') {
        Some(c) => c.trim().parse::<f64>().ok().filter(|x| x.is_finite()).map(SweepValue::TimesK),
        None => s.parse::<f64>().ok().filter(|x| x.is_finite()).map(SweepValue::Abs),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw = Raw::parse(text, base)?;
        let domain = parse_domain(&raw)?;
        let d = raw.require("system.d", raw.usize("system.d")?)?;
        let lambda = raw.require("system.lambda", raw.list("system.lambda")?)?;
        if lambda.len() != d {
            bail!("system.lambda has {} entries but system.d = {d}", lambda.len());
        }
        let mut beta = Vec::with_capacity(d);
        for i in 1..=d {
            let key = format!("system.beta.row_{i}");
            let row = raw.require(&key, raw.list(&key)?)?;
            if row.len() != d {
                bail!("{key} has {} entries but system.d = {d}", row.len());
            }
            beta.push(row);
        }
        if let Some(extra) = raw.order.iter().find(|k| {
            k.strip_prefix("system.beta.row_").and_then(|i| i.parse::<usize>().ok()).is_some_and(|i| i == 0 || i > d)
        }) {
            bail!("`{extra}` is outside 1..={d}");
        }
        let spec = CouplingSpec::new(beta, lambda)?;
        let a: Vec<usize> = match raw.get("decomposition.a") {
            None => vec![0, d],
            Some(e) => e
                .value
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| anyhow!("line {}: decomposition.a expects integers, found `{}`", e.line, e.value))?,
        };
        if a.last() != Some(&d) {
            bail!("decomposition.a must end at system.d = {d}");
        }
        let dec = Decomposition::new(a)?;
        let solver = parse_solver(&raw)?;
        let task = parse_task(&raw, d)?;
        Ok(Self { domain, spec, dec, solver, task })
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(match self.domain {
            Domain::Rectangle { lx, ly, n } => Arc::new(Grid::rectangle(lx, ly, n)?),
            Domain::Disk { radius, n } => Arc::new(Grid::disk(radius, n)?),
            Domain::Annulus { r_in, r_out, n } => Arc::new(Grid::annulus(r_in, r_out, n)?),
            Domain::Radial { dim, r_max, h } => {
                let r = r_max.unwrap_or_else(|| default_r_max(self.min_lambda()));
                radial_grid(dim, r, h)?
            }
        })
    }

    pub fn min_lambda(&self) -> f64 {
        self.spec.lambda().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn parse_domain(raw: &Raw) -> Result<Domain> {
    let kind = raw.require("domain.kind", raw.get("domain.kind").map(|e| e.value.clone()))?;
    let n = || -> Result<usize> { raw.require("domain.n", raw.usize("domain.n")?) };
    Ok(match kind.as_str() {
        "rectangle" => Domain::Rectangle {
            lx: raw.f64("domain.lx")?.unwrap_or(1.0),
            ly: raw.f64("domain.ly")?.unwrap_or(1.0),
            n: n()?,
        },
        "disk" => Domain::Disk { radius: raw.f64("domain.radius")?.unwrap_or(1.0), n: n()? },
        "annulus" => Domain::Annulus {
            r_in: raw.require("domain.r_in", raw.f64("domain.r_in")?)?,
            r_out: raw.f64("domain.r_out")?.unwrap_or(1.0),
            n: n()?,
        },
        "radial" => {
            let dim = raw.usize("domain.dim")?.unwrap_or(2);
            if dim != 2 && dim != 3 {
                bail!("domain.dim must be 2 or 3, found {dim}");
            }
            let h = raw.f64("domain.h")?.unwrap_or(0.02);
            if !(h > 0.0) {
                bail!("domain.h must be positive");
            }
            Domain::Radial { dim, r_max: raw.f64("domain.r_max")?, h }
        }
        other => bail!("domain.kind must be rectangle, disk, annulus or radial, found `{other}`"),
    })
}

fn parse_solver(raw: &Raw) -> Result<SolverConfig> {
    let defaults = SolverConfig::default();
    let step = match raw.str_or("solver.step", "auto").as_str() {
        "auto" => Step::Auto,
        s => Step::Fixed(s.parse().map_err(|_| anyhow!("solver.step expects `auto` or a number, found `{s}`"))?),
    };
    let precondition = raw
        .parse_with("solver.precondition", parse_bool, "true or false")?
        .unwrap_or(defaults.precondition);
    let directions = raw.list("solver.directions")?;
    let init = match raw.str_or("solver.init", "bumps").as_str() {
        "bumps" => Init::Bumps,
        "separated" => Init::GroupSeparatedBumps { directions },
        "file" => {
            let file = raw.require("solver.init_file", raw.get("solver.init_file").map(|e| e.value.clone()))?;
            Init::FromFile(raw.base.join(file))
        }
        other => bail!("solver.init must be bumps, separated or file, found `{other}`"),
    };
    let cfg = SolverConfig {
        max_iter: raw.usize("solver.max_iter")?.unwrap_or(defaults.max_iter),
        tol_grad: raw.f64("solver.tol_grad")?.unwrap_or(defaults.tol_grad),
        tol_energy: raw.f64("solver.tol_energy")?.unwrap_or(defaults.tol_energy),
        step,
        precondition,
        seed: raw.parse_with("solver.seed", |s| s.parse::<u64>().ok(), "a nonnegative integer")?.unwrap_or(0),
        init,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_task(raw: &Raw, d: usize) -> Result<Task> {
    let defaults = Task::default();
    let split = raw.usize("task.split")?;
    if let Some(l) = split {
        if l == 0 || l > d {
            bail!("task.split must lie in 1..={d}");
        }
    }
    let mut sweep = Vec::new();
    for key in raw.order.iter().filter(|k| k.starts_with("task.sweep.")) {
        let e = raw.get(key).expect("ordered keys are present");
        let param = parse_sweep_param(&key["task.sweep.".len()..]).expect("validated when parsed");
        let in_range = match param {
            SweepParam::Beta(i, j) => i < d && j < d,
            SweepParam::Lambda(i) => i < d,
        };
        if !in_range {
            bail!("line {}: `{key}` refers to a component outside 1..={d}", e.line);
        }
        let values = if e.value.trim().is_empty() {
            Vec::new()
        } else {
            e.value
                .split(',')
                .map(parse_sweep_value)
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| anyhow!("line {}: `{key}` expects numbers or K multiples, found `{}`", e.line, e.value))?
        };
        sweep.push(SweepAxis { param, values });
    }
    Ok(Task {
        split,
        symmetry_tol: raw.f64("task.symmetry_tol")?.unwrap_or(defaults.symmetry_tol),
        angle_tol: raw.f64("task.angle_tol")?.unwrap_or(defaults.angle_tol),
        sweep,
        radii: raw.list("task.radii")?,
        beta_fraction: raw.f64("task.beta_fraction")?.unwrap_or(defaults.beta_fraction),
        splitting_h: raw.f64("task.splitting_h")?.unwrap_or(defaults.splitting_h),
    })
}
