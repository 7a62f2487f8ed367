//! Flat key=value run configuration with `#` comments and command-line
//! overrides. Unknown keys are hard errors so typos cannot silently
//! change a run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ChdbcError, Result};
use crate::grid::{laplacian_neumann, BulkField, Mesh, State};
use crate::io::read_state;
use crate::potential::ModelParams;
use crate::scheme::{SchemeKind, SchemeParams};

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    Cosine(f64),
    Random(f64),
    Snapshot(PathBuf),
}

impl InitialCondition {
    fn parse(v: &str) -> Result<InitialCondition> {
        let (kind, arg) = v.split_once(':').ok_or_else(|| {
            ChdbcError::Config(format!(
                "initial '{v}' must be preset:value or snapshot:path"
            ))
        })?;
        let amp = |a: &str| -> Result<f64> {
            a.parse()
                .map_err(|_| ChdbcError::Config(format!("bad initial amplitude '{a}'")))
        };
        match kind {
            "constant" => Ok(InitialCondition::Constant(amp(arg)?)),
            "cosine" => Ok(InitialCondition::Cosine(amp(arg)?)),
            "random" => Ok(InitialCondition::Random(amp(arg)?)),
            "snapshot" => Ok(InitialCondition::Snapshot(PathBuf::from(arg))),
            other => Err(ChdbcError::Config(format!("unknown initial preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub theta0: f64,
    pub scheme: SchemeKind,
    /// BDF2 stabilizers; `None` means the theta0^2/16 default.
    pub stab_a: Option<f64>,
    pub stab_b: Option<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub initial: InitialCondition,
    pub output_every: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| ChdbcError::Config(format!("bad value '{v}' for key '{key}'")))
}

impl RunConfig {
    /// Parse config text, then apply `key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ChdbcError::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        for ov in overrides {
            let (k, v) = ov.split_once('=').ok_or_else(|| {
                ChdbcError::Config(format!("override '{ov}' must be key=value"))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }

        let mut n = None;
        let mut dt = None;
        let mut t_final = None;
        let mut epsilon = None;
        let mut kappa = None;
        let mut theta0 = None;
        let mut scheme = None;
        let mut stab_a = None;
        let mut stab_b = None;
        let mut newton_tol = 1e-11;
        let mut newton_max_iter = 50usize;
        let mut initial = None;
        let mut output_every = 10usize;
        let mut output_dir = PathBuf::from("out");
        let mut seed = 0u64;

        for (k, v) in &entries {
            match k.as_str() {
                "N" => n = Some(parse_num::<usize>(k, v)?),
                "dt" => dt = Some(parse_num::<f64>(k, v)?),
                "t_final" => t_final = Some(parse_num::<f64>(k, v)?),
                "epsilon" => epsilon = Some(parse_num::<f64>(k, v)?),
                "kappa" => kappa = Some(parse_num::<f64>(k, v)?),
                "theta0" => theta0 = Some(parse_num::<f64>(k, v)?),
                "scheme" => scheme = Some(v.parse::<SchemeKind>()?),
                "A" => stab_a = Some(parse_num::<f64>(k, v)?),
                "B" => stab_b = Some(parse_num::<f64>(k, v)?),
                "newton_tol" => newton_tol = parse_num(k, v)?,
                "newton_max_iter" => newton_max_iter = parse_num(k, v)?,
                "initial" => initial = Some(InitialCondition::parse(v)?),
                "output_every" => output_every = parse_num(k, v)?,
                "output_dir" => output_dir = PathBuf::from(v),
                "seed" => seed = parse_num(k, v)?,
                other => {
                    return Err(ChdbcError::Config(format!("unknown config key '{other}'")))
                }
            }
        }

        let require = |name: &str| ChdbcError::Config(format!("missing required key '{name}'"));
        let cfg = RunConfig {
            n: n.ok_or_else(|| require("N"))?,
            dt: dt.ok_or_else(|| require("dt"))?,
            t_final: t_final.ok_or_else(|| require("t_final"))?,
            epsilon: epsilon.ok_or_else(|| require("epsilon"))?,
            kappa: kappa.ok_or_else(|| require("kappa"))?,
            theta0: theta0.ok_or_else(|| require("theta0"))?,
            scheme: scheme.ok_or_else(|| require("scheme"))?,
            stab_a,
            stab_b,
            newton_tol,
            newton_max_iter,
            initial: initial.ok_or_else(|| require("initial"))?,
            output_every,
            output_dir,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ChdbcError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, overrides)
    }

    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ChdbcError::Config(m));
        if self.n < 4 {
            return err(format!("N must be at least 4, got {}", self.n));
        }
        if !(self.dt > 0.0) {
            return err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0) {
            return err(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.epsilon > 0.0) {
            return err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.kappa < 0.0 {
            return err(format!("kappa must be nonnegative, got {}", self.kappa));
        }
        if self.theta0 < 0.0 {
            return err(format!("theta0 must be nonnegative, got {}", self.theta0));
        }
        if !(self.newton_tol > 0.0) {
            return err(format!("newton_tol must be positive, got {}", self.newton_tol));
        }
        if self.newton_max_iter == 0 {
            return err("newton_max_iter must be positive".to_string());
        }
        if self.output_every == 0 {
            return err("output_every must be positive".to_string());
        }
        if let Some(a) = self.stab_a {
            if a < 0.0 {
                return err(format!("A must be nonnegative, got {a}"));
            }
        }
        if let Some(b) = self.stab_b {
            if b < 0.0 {
                return err(format!("B must be nonnegative, got {b}"));
            }
        }
        if self.scheme == SchemeKind::Cs1 && (self.stab_a.is_some() || self.stab_b.is_some()) {
            eprintln!("warning: stabilizers A/B are ignored by the cs1 scheme");
        }
        match &self.initial {
            InitialCondition::Constant(c) | InitialCondition::Cosine(c)
            | InitialCondition::Random(c) => {
                if c.abs() >= 1.0 {
                    return err(format!("initial amplitude must satisfy |a| < 1, got {c}"));
                }
            }
            InitialCondition::Snapshot(_) => {}
        }
        Ok(())
    }

    pub fn model(&self) -> ModelParams {
        ModelParams::new(self.epsilon, self.kappa, self.theta0)
    }

    pub fn scheme_params(&self) -> SchemeParams {
        let default_stab = self.theta0 * self.theta0 / 16.0;
        let (a, b) = match self.scheme {
            SchemeKind::Cs1 => (0.0, 0.0),
            SchemeKind::Bdf2 => (
                self.stab_a.unwrap_or(default_stab),
                self.stab_b.unwrap_or(default_stab),
            ),
        };
        SchemeParams {
            dt: self.dt,
            stab_a: a,
            stab_b: b,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            safeguard_fraction: 0.9,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }

    /// Build the initial state from the preset or snapshot.
    pub fn initial_state(&self) -> Result<State> {
        let mesh = Mesh::new(self.n);
        let two_pi = 2.0 * std::f64::consts::PI;
        let pi = std::f64::consts::PI;
        match &self.initial {
            InitialCondition::Constant(c) => {
                let c = *c;
                Ok(State::from_bulk(BulkField::from_fn(&mesh, |_, _| c)))
            }
            InitialCondition::Cosine(a) => {
                let a = *a;
                Ok(State::from_bulk(BulkField::from_fn(&mesh, |x, y| {
                    a * (two_pi * x).cos() * (pi * y).cos()
                })))
            }
            InitialCondition::Random(a) => Ok(State::from_bulk(random_field(&mesh, *a, self.seed))),
            InitialCondition::Snapshot(path) => {
                let s = read_state(path)?;
                if s.mesh().n != self.n {
                    return Err(ChdbcError::Config(format!(
                        "snapshot N={} does not match config N={}",
                        s.mesh().n,
                        self.n
                    )));
                }
                Ok(s)
            }
        }
    }
}

/// Uniform noise in [-a, a] smoothed by one Jacobi relaxation sweep of the
/// reflected Laplacian (a convex averaging, so values stay in [-a, a]).
fn random_field(mesh: &Arc<Mesh>, a: f64, seed: u64) -> BulkField {
    let n = mesh.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = BulkField::zeros(mesh);
    for j in 0..=n {
        for i in 0..n {
            f.set(i, j, rng.gen_range(-a..=a));
        }
    }
    let h2 = mesh.h * mesh.h;
    f.axpy(0.25 * h2, &laplacian_neumann(&f))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
# sample run
N = 8
dt = 1e-3
t_final = 1e-2
epsilon = 0.1
kappa = 1.0
theta0 = 3.0
scheme = cs1
initial = cosine:0.3
";

    #[test]
    fn parses_base_config() {
        let cfg = RunConfig::parse(BASE, &[]).unwrap();
        assert_eq!(cfg.n, 8);
        assert_eq!(cfg.scheme, SchemeKind::Cs1);
        assert_eq!(cfg.initial, InitialCondition::Cosine(0.3));
        assert_eq!(cfg.steps(), 10);
        assert_eq!(cfg.newton_tol, 1e-11);
        let p = cfg.scheme_params();
        assert_eq!(p.stab_a, 0.0);
    }

    #[test]
    fn overrides_win() {
        let cfg =
            RunConfig::parse(BASE, &["dt=2e-3".into(), "scheme=bdf2".into()]).unwrap();
        assert_eq!(cfg.dt, 2e-3);
        assert_eq!(cfg.scheme, SchemeKind::Bdf2);
        // BDF2 stabilizer default is theta0^2/16.
        let p = cfg.scheme_params();
        assert!((p.stab_a - 9.0 / 16.0).abs() < 1e-15);
        assert!((p.stab_b - 9.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse(&format!("{BASE}\nbogus=1\n"), &[]).is_err());
        assert!(RunConfig::parse(BASE, &["dt=fast".into()]).is_err());
        assert!(RunConfig::parse(BASE, &["dt=-1".into()]).is_err());
        assert!(RunConfig::parse(BASE, &["initial=constant:1.5".into()]).is_err());
        assert!(RunConfig::parse(BASE, &["initial=vortex:0.3".into()]).is_err());
    }

    #[test]
    fn missing_required_key_is_an_error() {
        let text = BASE.replace("epsilon = 0.1\n", "");
        let e = RunConfig::parse(&text, &[]).unwrap_err();
        assert!(e.to_string().contains("epsilon"));
    }

    #[test]
    fn random_preset_is_deterministic_and_bounded() {
        let cfg = RunConfig::parse(BASE, &["initial=random:0.2".into(), "seed=7".into()]).unwrap();
        let a = cfg.initial_state().unwrap();
        let b = cfg.initial_state().unwrap();
        for (x, y) in a.phi.data().iter().zip(b.phi.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert!(a.phi.data().iter().all(|v| v.abs() <= 0.2));
        let c = RunConfig::parse(BASE, &["initial=random:0.2".into(), "seed=8".into()])
            .unwrap()
            .initial_state()
            .unwrap();
        assert!(a.phi.data().iter().zip(c.phi.data()).any(|(x, y)| x != y));
    }
}
