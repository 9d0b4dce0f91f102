//! TOML experiment configuration: schema, validation, and resolution into
//! measures, processes, and scenarios.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{ConvergenceSource, GSource, Scenario, Side, Theorem, Theorem3Variant};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::measures::{make_gaussian, make_gibbs_1d, make_product, MeasureSpec};
use crate::moment_map::{solve_moment_map_product, GridSpec};
use crate::sde::{Diffusion, Drift, Process};
use crate::stein::{kernel_closed_form_1d, kernel_from_moment_map, stein_sde, SteinKernelField};

/// A number, or an expression over `[params]` such as `"sqrt(s)"`.
/// The strings `"inf"` and `"infinity"` denote +∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Value(f64),
    Expr(String),
}

impl Num {
    pub fn resolve(&self, params: &BTreeMap<String, f64>, field: &str) -> Result<f64> {
        match self {
            Num::Value(v) => Ok(*v),
            Num::Expr(s) if matches!(s.trim(), "inf" | "infinity") => Ok(f64::INFINITY),
            Num::Expr(s) => Expr::constant(s, params).map_err(|e| Error::Config(format!("{field}: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureDecl {
    /// `N(mean, cov)`; `variance` instead of `cov` gives `variance · I`.
    Gaussian {
        mean: Vec<Num>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<Num>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<Num>,
    },
    /// `exp(-V(x))` in one variable `x`, optionally tensorised `copies` times.
    Gibbs1d {
        expr: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<Num>,
        #[serde(default = "one_usize")]
        copies: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftDecl {
    /// `a(x) = c·x`
    Linear(Num),
    /// One expression per coordinate in `x` (1D) or `x1..xd`.
    Expr(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSource {
    MomentMap,
    ClosedForm,
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionDecl {
    /// `√τ = c·I`
    Scalar(Num),
    /// Diagonal `√τ`, one expression per coordinate.
    Diagonal(Vec<String>),
    /// `√τ` from the Stein kernel of the process law.
    Stein(KernelSource),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDecl {
    /// Name of the invariant law in `[measures]`.
    pub law: String,
    #[serde(default = "default_drift")]
    pub drift: DriftDecl,
    pub diffusion: DiffusionDecl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDecl {
    pub init: Vec<f64>,
    pub times: Vec<f64>,
    pub n_traj: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvergenceDecl {
    Analytic { kappa: Num, c_h: Num },
    Fit(FitDecl),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GDecl {
    Value(Num),
    /// Number of `μ` samples for the empirical witness.
    Lusin(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDecl {
    pub theorem: u8,
    /// Reference process (carries the regularity and convergence assumptions).
    pub mu: String,
    pub nu: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Theorem3Variant>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Num>,
    #[serde(default = "default_p")]
    pub p: Num,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<Num>,
    #[serde(rename = "C", default = "default_c")]
    pub c: Num,
    #[serde(default = "default_lhs_samples")]
    pub lhs_samples: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_beta_samples")]
    pub beta_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<GDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDecl {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub measures: BTreeMap<String, MeasureDecl>,
    #[serde(default)]
    pub processes: BTreeMap<String, ProcessDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepDecl>,
}

fn one_usize() -> usize {
    1
}
fn default_drift() -> DriftDecl {
    DriftDecl::Linear(Num::Value(-1.0))
}
fn default_p() -> Num {
    Num::Expr("inf".into())
}
fn default_c() -> Num {
    Num::Value(1.0)
}
fn default_lhs_samples() -> usize {
    500
}
fn default_replicates() -> usize {
    8
}
fn default_beta_samples() -> usize {
    20_000
}

impl ExperimentConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        // toml errors carry line and column of the offending key
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src).map_err(|e| e.context(path.display().to_string()))
    }

    /// The config with every default filled in, as TOML.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.resolved_toml()?.as_bytes())))
    }

    /// Copy with `params[name] = value`.
    pub fn with_param(&self, name: &str, value: f64) -> Self {
        let mut c = self.clone();
        c.params.insert(name.to_string(), value);
        c.sweep = None;
        c
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in &self.processes {
            if !self.measures.contains_key(&p.law) {
                return Err(Error::Config(format!("processes.{name}.law: unknown measure '{}'", p.law)));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::Config("sweep.values: empty sweep".into()));
            }
            if self.scenario.is_none() {
                return Err(Error::Config("sweep: needs a [scenario]".into()));
            }
        }
        let Some(sc) = &self.scenario else { return Ok(()) };
        for (field, name) in [("scenario.mu", &sc.mu), ("scenario.nu", &sc.nu)] {
            if !self.processes.contains_key(name) {
                return Err(Error::Config(format!("{field}: unknown process '{name}'")));
            }
        }
        if !(1..=3).contains(&sc.theorem) {
            return Err(Error::Config(format!("scenario.theorem: {} is not one of 1, 2, 3", sc.theorem)));
        }
        // sweeps validate R per value at resolution time
        let params = self.params_for_validation();
        if sc.theorem == 1 {
            let r = sc.r.as_ref().ok_or_else(|| Error::Config("scenario.R: theorem 1 needs R".into()))?;
            if let Some(params) = &params {
                let r = r.resolve(params, "scenario.R")?;
                check_theorem1_r(r)?;
            }
            if sc.g.is_none() {
                return Err(Error::Config("scenario.g: theorem 1 needs a g-norm source".into()));
            }
        }
        if sc.theorem != 3 && sc.convergence.is_none() {
            return Err(Error::Config(format!("scenario.convergence: theorem {} needs kappa and C_H", sc.theorem)));
        }
        if sc.theorem == 2 && sc.lipschitz.is_none() {
            return Err(Error::Config("scenario.lipschitz: theorem 2 needs L".into()));
        }
        if sc.theorem == 3 && sc.variant == Some(Theorem3Variant::Lipschitz) && sc.lipschitz.is_none() {
            return Err(Error::Config("scenario.lipschitz: the Lipschitz variant needs L".into()));
        }
        if sc.replicates < 2 || sc.lhs_samples < 2 || sc.beta_samples < 2 {
            return Err(Error::Config("scenario: lhs_samples, replicates and beta_samples must be at least 2".into()));
        }
        Ok(())
    }

    fn params_for_validation(&self) -> Option<BTreeMap<String, f64>> {
        match &self.sweep {
            Some(sw) if !self.params.contains_key(&sw.param) => None,
            _ => Some(self.params.clone()),
        }
    }
}

pub fn check_theorem1_r(r: f64) -> Result<()> {
    if r > 1.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "scenario.R = {r}: theorem 1 holds \"for any R > 1\", so R must exceed 1"
        )))
    }
}

fn variables(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".into()]
    } else {
        (1..=d).map(|i| format!("x{i}")).collect()
    }
}

fn parse_fields(srcs: &[String], d: usize, params: &BTreeMap<String, f64>, field: &str) -> Result<Vec<Expr>> {
    if srcs.len() != d {
        return Err(Error::Config(format!("{field}: {} expressions for dimension {d}", srcs.len())));
    }
    let vars = variables(d);
    let vars: Vec<&str> = vars.iter().map(String::as_str).collect();
    srcs.iter()
        .map(|s| Expr::parse(s, &vars, params).map_err(|e| Error::Config(format!("{field}: {e}"))))
        .collect()
}

/// Vector field from one expression per output component over `x`/`x1..xd`.
pub fn expr_field(srcs: &[String], d: usize, params: &BTreeMap<String, f64>) -> Result<Vec<Expr>> {
    let vars = variables(d);
    let vars: Vec<&str> = vars.iter().map(String::as_str).collect();
    srcs.iter().map(|s| Expr::parse(s, &vars, params)).collect()
}

/// Measures, kernels, and processes resolved from a config.
pub struct Resolved {
    pub params: BTreeMap<String, f64>,
    pub measures: BTreeMap<String, MeasureSpec>,
    pub notes: Vec<String>,
}

impl Resolved {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut measures = BTreeMap::new();
        for (name, decl) in &cfg.measures {
            let m = build_measure(decl, &cfg.params).map_err(|e| e.context(format!("measures.{name}")))?;
            measures.insert(name.clone(), m);
        }
        Ok(Resolved { params: cfg.params.clone(), measures, notes: vec![] })
    }

    pub fn measure(&self, name: &str) -> Result<&MeasureSpec> {
        self.measures.get(name).ok_or_else(|| Error::Config(format!("unknown measure '{name}'")))
    }

    pub fn kernel(&mut self, measure: &str, source: KernelSource) -> Result<SteinKernelField> {
        let m = self.measure(measure)?.clone();
        let k = match source {
            KernelSource::Gaussian => SteinKernelField::gaussian(&m)?,
            KernelSource::ClosedForm => kernel_closed_form_1d(&m)?,
            KernelSource::MomentMap => {
                let map = solve_moment_map_product(&m, GridSpec::default())?;
                self.notes.push(format!(
                    "moment map of '{measure}': Monge-Ampere residual {:.2e}, pushforward residual {:.2e}",
                    map.monge_ampere_residual(),
                    map.pushforward_residual()
                ));
                kernel_from_moment_map(&map)?
            }
        };
        Ok(k)
    }

    pub fn process(&mut self, cfg: &ExperimentConfig, name: &str) -> Result<Side> {
        let decl = cfg.processes.get(name).ok_or_else(|| Error::Config(format!("unknown process '{name}'")))?;
        let field = |f: &str| format!("processes.{name}.{f}");
        let law = self.measure(&decl.law)?.clone();
        let d = law.dim();
        let drift = match &decl.drift {
            DriftDecl::Linear(c) => Drift::Linear(c.resolve(&self.params, &field("drift"))?),
            DriftDecl::Expr(srcs) => {
                let exprs = parse_fields(srcs, d, &self.params, &field("drift"))?;
                Drift::Field(Arc::new(move |x: &[f64], out: &mut [f64]| {
                    for (o, e) in out.iter_mut().zip(&exprs) {
                        *o = e.eval(x);
                    }
                }))
            }
        };
        let diffusion = match &decl.diffusion {
            DiffusionDecl::Scalar(c) => Diffusion::Scalar(c.resolve(&self.params, &field("diffusion"))?),
            DiffusionDecl::Diagonal(srcs) => {
                let exprs = parse_fields(srcs, d, &self.params, &field("diffusion"))?;
                Diffusion::Diagonal(Arc::new(move |x: &[f64], out: &mut [f64]| {
                    for (o, e) in out.iter_mut().zip(&exprs) {
                        *o = e.eval(x);
                    }
                }))
            }
            DiffusionDecl::Stein(src) => {
                let k = self.kernel(&decl.law, *src).map_err(|e| e.context(field("diffusion")))?;
                stein_sde(&k)?.process.diffusion
            }
        };
        Ok(Side { law, process: Process { drift, diffusion } })
    }

    /// The verification scenario; `theorem` overrides the configured one.
    pub fn scenario(&mut self, cfg: &ExperimentConfig, theorem: Option<u8>) -> Result<Scenario> {
        let sc = cfg.scenario.as_ref().ok_or_else(|| Error::Config("no [scenario] section".into()))?;
        let number = theorem.unwrap_or(sc.theorem);
        let p = &self.params;
        let num = |n: &Num, f: &str| n.resolve(p, &format!("scenario.{f}"));
        let opt = |n: &Option<Num>, f: &str| n.as_ref().map(|n| num(n, f)).transpose();
        let r = opt(&sc.r, "R")?;
        let theorem = match number {
            1 => {
                check_theorem1_r(r.ok_or_else(|| Error::Config("scenario.R: theorem 1 needs R".into()))?)?;
                Theorem::One
            }
            2 => Theorem::Two,
            3 => Theorem::Three(sc.variant.unwrap_or(Theorem3Variant::General)),
            n => return Err(Error::Config(format!("theorem {n} is not one of 1, 2, 3"))),
        };
        let convergence = match &sc.convergence {
            None if number != 3 => {
                return Err(Error::Config(format!("scenario.convergence: theorem {number} needs kappa and C_H")))
            }
            None => ConvergenceSource::Given { kappa: f64::NAN, c_h: f64::NAN, source: "unused".into() },
            Some(ConvergenceDecl::Analytic { kappa, c_h }) => ConvergenceSource::Given {
                kappa: num(kappa, "convergence.kappa")?,
                c_h: num(c_h, "convergence.c_h")?,
                source: "analytic (config)".into(),
            },
            Some(ConvergenceDecl::Fit(f)) => ConvergenceSource::Fitted {
                init: f.init.clone(),
                times: f.times.clone(),
                n_traj: f.n_traj,
                dt: f.dt,
            },
        };
        let g = match &sc.g {
            Some(GDecl::Value(v)) => GSource::Given { value: num(v, "g")?, source: "analytic (config)".into() },
            Some(GDecl::Lusin(n)) => GSource::Lusin { n_points: *n },
            None => GSource::Given { value: 1.0, source: "unused".into() },
        };
        let (delta, lipschitz, pexp, c3) =
            (opt(&sc.delta, "delta")?, opt(&sc.lipschitz, "lipschitz")?, num(&sc.p, "p")?, num(&sc.c, "C")?);
        let mu = self.process(cfg, &sc.mu)?;
        let nu = self.process(cfg, &sc.nu)?;
        Ok(Scenario {
            name: cfg.name.clone(),
            theorem,
            mu,
            nu,
            p: pexp,
            r,
            delta,
            convergence,
            g,
            lipschitz,
            c3,
            lhs_samples: sc.lhs_samples,
            replicates: sc.replicates,
            beta_samples: sc.beta_samples,
            seed: cfg.seed,
        })
    }
}

fn build_measure(decl: &MeasureDecl, params: &BTreeMap<String, f64>) -> Result<MeasureSpec> {
    match decl {
        MeasureDecl::Gaussian { mean, cov, variance } => {
            let mean: Vec<f64> = mean.iter().map(|v| v.resolve(params, "mean")).collect::<Result<_>>()?;
            let d = mean.len();
            let cov = match (cov, variance) {
                (Some(rows), None) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(Error::Config(format!("cov: expected a {d}x{d} matrix")));
                    }
                    let flat: Vec<f64> = rows.iter().flatten().map(|v| v.resolve(params, "cov")).collect::<Result<_>>()?;
                    DMatrix::from_row_slice(d, d, &flat)
                }
                (None, Some(v)) => DMatrix::identity(d, d) * v.resolve(params, "variance")?,
                _ => return Err(Error::Config("give exactly one of cov and variance".into())),
            };
            make_gaussian(DVector::from_vec(mean), cov)
        }
        MeasureDecl::Gibbs1d { expr, alpha, copies } => {
            if *copies == 0 {
                return Err(Error::Config("copies must be positive".into()));
            }
            let v = Expr::parse(expr, &["x"], params).map_err(|e| Error::Config(format!("expr: {e}")))?;
            let m = make_gibbs_1d(v)?;
            if let Some(a) = alpha {
                let declared = a.resolve(params, "alpha")?;
                let actual = m.convexity_alpha().unwrap_or(0.0);
                if declared > actual + 1e-9 {
                    return Err(Error::Config(format!(
                        "alpha: declared {declared} exceeds the convexity {actual:.6} of the potential"
                    )));
                }
            }
            if *copies == 1 {
                return Ok(m);
            }
            let f = m.factors().expect("Gibbs measures are products");
            make_product(std::iter::repeat_n(f[0].clone(), *copies).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"
name = "ou"
seed = 3
[params]
s = 0.25
[measures.mu]
kind = "gaussian"
mean = [0.0, 0.0]
variance = 1.0
[measures.nu]
kind = "gaussian"
mean = [0.0, 0.0]
variance = "s"
[processes.x]
law = "mu"
diffusion = { scalar = 1.0 }
[processes.y]
law = "nu"
diffusion = { scalar = "sqrt(s)" }
[scenario]
theorem = 2
mu = "x"
nu = "y"
lipschitz = 1
convergence = { analytic = { kappa = 1, c_h = 1 } }
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::from_toml(OU).unwrap();
        let mut r = Resolved::new(&cfg).unwrap();
        let sc = r.scenario(&cfg, None).unwrap();
        assert_eq!(sc.theorem, Theorem::Two);
        assert!(matches!(sc.nu.process.diffusion, Diffusion::Scalar(v) if v == 0.5));
        assert!(sc.p.is_infinite());
        // defaults are echoed and the round trip is stable
        let resolved = cfg.resolved_toml().unwrap();
        assert!(resolved.contains("lhs_samples = 500"));
        let again = ExperimentConfig::from_toml(&resolved).unwrap();
        assert_eq!(again.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = OU.replace("lipschitz = 1", "lipschitz = 1\nlipshitz = 2");
        let e = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("lipshitz") && e.contains("line"), "{e}");
        let bad = OU.replace("variance = 1.0", "variance = 1.0\nsd = 1.0");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn theorem1_needs_r_above_one() {
        let cfg = OU.replace("theorem = 2", "theorem = 1\nR = 1.0\ng = { value = 1 }");
        let e = ExperimentConfig::from_toml(&cfg).unwrap_err().to_string();
        assert!(e.contains("for any R > 1"), "{e}");
        let ok = OU.replace("theorem = 2", "theorem = 1\nR = 2.0\ng = { value = 1 }");
        assert!(ExperimentConfig::from_toml(&ok).is_ok());
    }

    #[test]
    fn declared_alpha_is_checked() {
        let d = MeasureDecl::Gibbs1d { expr: "x^2/2 + 0.3*logcosh(x)".into(), alpha: Some(Num::Value(0.9)), copies: 2 };
        assert!(build_measure(&d, &BTreeMap::new()).is_err());
        let d = MeasureDecl::Gibbs1d { expr: "x^2/2 + 0.3*logcosh(x)".into(), alpha: Some(Num::Value(0.7)), copies: 2 };
        assert_eq!(build_measure(&d, &BTreeMap::new()).unwrap().dim(), 2);
    }
}
