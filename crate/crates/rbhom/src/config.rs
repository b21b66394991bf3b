//! Run configuration: flat key=value files with command-line overrides.
//!
//! Defaults pin the reference experiment: delta = 0.1, theta0 = 0.99,
//! 50 training parameters, and a cell mesh of 12 intervals per side (the
//! closest multiple of four to the reference spacing of one tenth).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::param::{CellParam, ParamBox};

/// Parameter field selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Default,
    Constant,
}

impl FieldKind {
    pub fn label(self) -> &'static str {
        match self {
            FieldKind::Default => "default",
            FieldKind::Constant => "constant",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n_per_side: usize,
    pub delta: f64,
    pub theta0: f64,
    pub p: usize,
    pub n_max: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub h_hom: f64,
    pub epsilon: f64,
    pub field: FieldKind,
    /// Constant-field parameter; when absent, the reference geometry with
    /// contrast -theta0/2 is used.
    pub const_param: Option<CellParam>,
    pub corrector_grid: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_per_side: 12,
            delta: 0.1,
            theta0: 0.99,
            p: 50,
            n_max: 40,
            rel_tol: 1e-8,
            seed: 7,
            h_hom: 0.03,
            epsilon: 0.02,
            field: FieldKind::Default,
            const_param: None,
            corrector_grid: 200,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

impl RunConfig {
    /// Parse a flat key=value file. Lines starting with `#` are comments.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {path:?}: {e}")))?;
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{path:?}:{}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_per_side" => self.n_per_side = parse_num(key, value)?,
            "delta" => self.delta = parse_num(key, value)?,
            "theta0" => self.theta0 = parse_num(key, value)?,
            "p" => self.p = parse_num(key, value)?,
            "n_max" => self.n_max = parse_num(key, value)?,
            "rel_tol" => self.rel_tol = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "h_hom" => self.h_hom = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "corrector_grid" => self.corrector_grid = parse_num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "field" => {
                self.field = match value {
                    "default" => FieldKind::Default,
                    "constant" => FieldKind::Constant,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown field {other:?} (expected default or constant)"
                        )))
                    }
                }
            }
            "const_b1" | "const_c1" | "const_b2" | "const_c2" | "const_theta" => {
                let mut p = self.const_param.unwrap_or(CellParam {
                    b1: 0.25,
                    c1: 0.75,
                    b2: 0.25,
                    c2: 0.75,
                    theta: -self.theta0 / 2.0,
                });
                let v: f64 = parse_num(key, value)?;
                match key {
                    "const_b1" => p.b1 = v,
                    "const_c1" => p.c1 = v,
                    "const_b2" => p.b2 = v,
                    "const_c2" => p.c2 = v,
                    _ => p.theta = v,
                }
                self.const_param = Some(p);
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Admissible box described by this configuration.
    pub fn param_box(&self) -> Result<ParamBox> {
        ParamBox::new(self.delta, self.theta0)
    }

    /// Constant-field parameter (configured or the pinned default).
    pub fn constant_param(&self) -> CellParam {
        self.const_param.unwrap_or(CellParam {
            b1: 0.25,
            c1: 0.75,
            b2: 0.25,
            c2: 0.75,
            theta: -self.theta0 / 2.0,
        })
    }

    /// Macro mesh resolution implied by `h_hom`.
    pub fn macro_cells(&self) -> usize {
        (1.0 / self.h_hom).round().max(1.0) as usize
    }

    /// Validate every downstream invariant at parse time.
    pub fn validate(&self) -> Result<()> {
        if self.n_per_side < 4 || self.n_per_side % 4 != 0 {
            return Err(Error::Config(format!(
                "n_per_side = {} must be a positive multiple of 4",
                self.n_per_side
            )));
        }
        self.param_box()?;
        if self.p == 0 {
            return Err(Error::Config("p must be positive".into()));
        }
        if self.n_max == 0 || self.n_max > 2 * self.p {
            return Err(Error::Config(format!(
                "n_max = {} must lie in [1, 2 p] = [1, {}]",
                self.n_max,
                2 * self.p
            )));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::Config("rel_tol must be nonnegative".into()));
        }
        if !(self.h_hom > 0.0 && self.h_hom <= 1.0) {
            return Err(Error::Config(format!("h_hom = {} must lie in (0, 1]", self.h_hom)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.corrector_grid == 0 {
            return Err(Error::Config("corrector_grid must be positive".into()));
        }
        if self.field == FieldKind::Constant {
            let p = self.constant_param();
            if self.theta0 > 0.0 || p.theta != 0.0 {
                p.validate()
                    .map_err(|e| Error::Config(format!("constant field parameter: {e}")))?;
            }
            if !self.param_box()?.contains(&p) {
                return Err(Error::Config(format!(
                    "constant field parameter {p:?} lies outside the configured box"
                )));
            }
        }
        Ok(())
    }

    /// Resolved configuration as sorted key=value lines, echoed into every
    /// output file header.
    pub fn echo_lines(&self) -> Vec<String> {
        let mut map = BTreeMap::new();
        map.insert("n_per_side", self.n_per_side.to_string());
        map.insert("delta", self.delta.to_string());
        map.insert("theta0", self.theta0.to_string());
        map.insert("p", self.p.to_string());
        map.insert("n_max", self.n_max.to_string());
        map.insert("rel_tol", self.rel_tol.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("h_hom", self.h_hom.to_string());
        map.insert("epsilon", self.epsilon.to_string());
        map.insert("field", self.field.label().to_string());
        map.insert("corrector_grid", self.corrector_grid.to_string());
        map.insert("out", self.out_dir.display().to_string());
        if let Some(p) = self.const_param {
            map.insert("const_b1", p.b1.to_string());
            map.insert("const_c1", p.c1.to_string());
            map.insert("const_b2", p.b2.to_string());
            map.insert("const_c2", p.c2.to_string());
            map.insert("const_theta", p.theta.to_string());
        }
        map.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }
}
