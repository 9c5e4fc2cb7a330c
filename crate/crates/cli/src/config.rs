//! Run configuration read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use inflap::dirichlet::{Method, ProblemParams, SolveOptions};
use inflap::geometry::{build_domain, load_mask, DomainSpec, GridDomain, Shape, WeightField};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub eigen: EigenConfig,
    #[serde(default)]
    pub radial: RadialConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Output directory, relative to the config file.
    pub output: Option<PathBuf>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Disk,
    Annulus,
    Rectangle,
    Mask,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    #[serde(default)]
    pub center: [f64; 2],
    pub radius: Option<f64>,
    pub inner: Option<f64>,
    pub outer: Option<f64>,
    pub corner: Option<[f64; 2]>,
    pub widths: Option<[f64; 2]>,
    /// Bitmap file for mask domains.
    pub file: Option<PathBuf>,
    /// Grid spacing; a mask file's header value is used when absent.
    pub h: Option<f64>,
    #[serde(default = "default_stencil")]
    pub stencil: u32,
}

fn default_stencil() -> u32 {
    3
}

/// Exactly one of `value`, `expr` (over r, x, y) or `file` (CSV with a
/// value in the last column of each row, nodes in field order).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub value: Option<f64>,
    pub expr: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "one")]
    pub delta: f64,
    /// Boundary data b(x, y); overrides `delta`.
    pub boundary: Option<String>,
    /// Right-hand side h(x, y).
    pub rhs: Option<String>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { lambda: 0.0, delta: 1.0, boundary: None, rhs: None }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub cap: Option<f64>,
    pub method: Option<Method>,
    pub threads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenConfig {
    #[serde(default = "default_tol_lambda")]
    pub tol_lambda: f64,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default)]
    pub accelerate: bool,
    /// Level-set thresholds in (0, 1).
    #[serde(default)]
    pub thresholds: Vec<f64>,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self { tol_lambda: default_tol_lambda(), delta: 1.0, accelerate: false, thresholds: Vec::new() }
    }
}

fn default_tol_lambda() -> f64 {
    1e-2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialConfig {
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default = "default_radial_tol")]
    pub tol_lambda: f64,
    pub dr: Option<f64>,
    /// Periods of the reflected extension to write; 0 skips it.
    #[serde(default)]
    pub periods: usize,
}

impl Default for RadialConfig {
    fn default() -> Self {
        Self { radius: 1.0, tol_lambda: default_radial_tol(), dr: None, periods: 0 }
    }
}

fn default_radial_tol() -> f64 {
    1e-8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Tolerance constant C in C·h^{1/3}.
    #[serde(default = "one")]
    pub c: f64,
    /// Exponent for the power-transform suite.
    #[serde(default = "default_q")]
    pub q: f64,
    /// Residual sign claimed for the power-transform input.
    #[serde(default = "default_claim")]
    pub claim: String,
    /// λ̂ for the sign suite when the input does not carry one.
    pub lambda_hat: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { c: 1.0, q: default_q(), claim: default_claim(), lambda_hat: None }
    }
}

fn default_q() -> f64 {
    0.5
}

fn default_claim() -> String {
    "super".into()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.check_files()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn check_files(&self) -> Result<()> {
        let files = self.domain.as_ref().and_then(|d| d.file.as_ref()).into_iter().chain(self.weight.file.as_ref());
        for f in files {
            let p = self.resolve(f);
            if !p.exists() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.output) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.resolve(p),
            (None, None) => PathBuf::from("."),
        }
    }

    pub fn domain_spec(&self, h_flag: Option<f64>) -> Result<DomainSpec> {
        let d = self.domain.as_ref().ok_or_else(|| anyhow!("missing [domain] section"))?;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| anyhow!("domain.{name} is required for this kind"));
        let mut spec = match d.kind {
            DomainKind::Mask => {
                let file = d.file.as_ref().ok_or_else(|| anyhow!("domain.file is required for masks"))?;
                load_mask(&self.resolve(file))?
            }
            kind => {
                let h = h_flag.or(d.h).ok_or_else(|| anyhow!("domain.h is required"))?;
                let shape = match kind {
                    DomainKind::Disk => Shape::Disk { center: d.center, radius: need(d.radius, "radius")? },
                    DomainKind::Annulus => Shape::Annulus {
                        center: d.center,
                        inner: need(d.inner, "inner")?,
                        outer: need(d.outer, "outer")?,
                    },
                    DomainKind::Rectangle => Shape::Rectangle {
                        corner: d.corner.ok_or_else(|| anyhow!("domain.corner is required"))?,
                        widths: d.widths.ok_or_else(|| anyhow!("domain.widths is required"))?,
                    },
                    DomainKind::Mask => unreachable!(),
                };
                DomainSpec { shape, spacing: h, stencil_width: d.stencil }
            }
        };
        if let Some(h) = h_flag.or(d.h) {
            spec.spacing = h;
        }
        spec.stencil_width = d.stencil;
        Ok(spec)
    }

    pub fn domain(&self, h_flag: Option<f64>) -> Result<Arc<GridDomain>> {
        Ok(build_domain(&self.domain_spec(h_flag)?)?)
    }

    pub fn weight(&self, domain: &GridDomain) -> Result<WeightField> {
        let w = &self.weight;
        match (w.value, &w.expr, &w.file) {
            (None, None, None) => Ok(WeightField::constant(domain, 1.0)?),
            (Some(v), None, None) => Ok(WeightField::constant(domain, v)?),
            (None, Some(e), None) => {
                let f = Expr::parse(e)?;
                let values = domain.positions().into_iter().map(|p| f.eval_at(p)).collect::<Result<Vec<_>>>()?;
                Ok(WeightField::new(values)?)
            }
            (None, None, Some(file)) => {
                let text = std::fs::read_to_string(self.resolve(file))?;
                let values = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .filter_map(|l| l.rsplit(',').next())
                    // Non-numeric rows are headers.
                    .filter_map(|v| v.trim().parse::<f64>().ok())
                    .collect::<Vec<_>>();
                if values.len() != domain.n_nodes() {
                    bail!("weight file has {} values, domain has {} nodes", values.len(), domain.n_nodes());
                }
                Ok(WeightField::new(values)?)
            }
            _ => bail!("give exactly one of weight.value, weight.expr, weight.file"),
        }
    }

    /// Weight as a function of r for radial commands.
    pub fn radial_weight(&self) -> Result<Box<dyn Fn(f64) -> f64>> {
        let w = &self.weight;
        match (w.value, &w.expr, &w.file) {
            (None, None, None) => Ok(Box::new(|_| 1.0)),
            (Some(v), None, None) => Ok(Box::new(move |_| v)),
            (None, Some(e), None) => {
                let f = Expr::parse(e)?;
                f.eval_at([0.0, 0.0])?;
                Ok(Box::new(move |r| f.eval_at([r, 0.0]).unwrap_or(f64::NAN)))
            }
            _ => bail!("radial commands take weight.value or weight.expr"),
        }
    }

    pub fn params(&self, domain: &GridDomain, weight: WeightField) -> Result<ProblemParams> {
        let p = &self.problem;
        let mut params = ProblemParams::constant_boundary(domain, p.lambda, weight, p.delta);
        if let Some(e) = &p.boundary {
            let f = Expr::parse(e)?;
            params.boundary = domain.boundary_points().iter().map(|b| f.eval_at(b.position)).collect::<Result<_>>()?;
        }
        if let Some(e) = &p.rhs {
            let f = Expr::parse(e)?;
            params.rhs = (0..domain.n_interior()).map(|k| f.eval_at(domain.position(k))).collect::<Result<_>>()?;
        }
        Ok(params)
    }

    pub fn solve_options(&self, threads: Option<usize>) -> SolveOptions {
        let s = &self.solver;
        let d = SolveOptions::default();
        SolveOptions {
            tol: s.tol,
            cap: s.cap,
            max_iters: s.max_iters.unwrap_or(d.max_iters),
            method: s.method.unwrap_or(d.method),
            threads: threads.or(s.threads).unwrap_or(1),
            ..d
        }
    }
}

/// Arithmetic expression in r, x, y.
pub struct Expr {
    slab: fasteval::Slab,
    compiled: fasteval::Instruction,
    source: String,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        use fasteval::Compiler;
        let mut slab = fasteval::Slab::new();
        let parsed = fasteval::Parser::new()
            .parse(source, &mut slab.ps)
            .map_err(|e| anyhow!("bad expression '{source}': {e}"))?;
        let compiled = parsed.from(&slab.ps).compile(&slab.ps, &mut slab.cs);
        Ok(Self { slab, compiled, source: source.to_string() })
    }

    pub fn eval_at(&self, p: [f64; 2]) -> Result<f64> {
        use fasteval::Evaler;
        let mut vars: BTreeMap<String, f64> = BTreeMap::new();
        vars.insert("x".into(), p[0]);
        vars.insert("y".into(), p[1]);
        vars.insert("r".into(), p[0].hypot(p[1]));
        let v = self
            .compiled
            .eval(&self.slab, &mut vars)
            .map_err(|e| anyhow!("evaluating '{}': {e}", self.source))?;
        if !v.is_finite() {
            bail!("expression '{}' is not finite at ({}, {})", self.source, p[0], p[1]);
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions() {
        let e = Expr::parse("1 + r^2 / 2 - x*y").unwrap();
        assert!((e.eval_at([3.0, 4.0]).unwrap() - (1.0 + 12.5 - 12.0)).abs() < 1e-12);
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("z").unwrap().eval_at([0.0, 0.0]).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[domain]\nkind = \"disk\"\nradius = 1\nh = 0.1\ncolour = 3\n").is_err());
        let cfg: RunConfig = toml::from_str("[domain]\nkind = \"disk\"\nradius = 1.0\nh = 0.25\n").unwrap();
        assert_eq!(cfg.domain(None).unwrap().spacing(), 0.25);
    }
}
