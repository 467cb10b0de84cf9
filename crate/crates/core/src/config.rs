//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::coefficient::{Feature, Preset};
use crate::error::{Error, Result};
use crate::grid::Rect;
use crate::offline::PouKind;
use crate::online::{RieszForm, Strategy};
use crate::space::Assembly;

/// Where `kappa` comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    File {
        path: PathBuf,
        shift: bool,
    },
    Preset {
        preset: Preset,
        contrast: f64,
    },
    Features {
        features: Vec<Feature>,
        contrast: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub domain: Rect,
    /// Coarse blocks in x and y.
    pub coarse: (usize, usize),
    /// Fine cells per block in x and y.
    pub fine: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub gamma: f64,
    pub pou: PouKind,
    /// Initial eigenfunctions per node.
    pub layers: usize,
    /// Give boundary nodes initial basis functions too.
    pub include_boundary: bool,
    pub assembly: Assembly,
    /// Constant right-hand side `f`.
    pub source: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub strategy: Strategy,
    pub riesz: RieszForm,
    /// Compute `eta^2` and `theta~` every sub-iteration.
    pub certified: bool,
    /// Multiplies `eta^2`; values below 1 are only useful to test the checks.
    pub bound_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopConfig {
    pub target_error: Option<f64>,
    pub max_iterations: usize,
    pub dof_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub eigens: bool,
    pub field: bool,
    pub indicators: bool,
    /// Record wall time in the history; off gives byte-identical reruns.
    pub timings: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub field: FieldSource,
    pub solver: SolverConfig,
    pub online: OnlineConfig,
    pub stop: StopConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Defaults around a given field source.
    pub fn with_field(field: FieldSource) -> Self {
        RunConfig {
            seed: 0,
            grid: GridConfig {
                domain: Rect::unit(),
                coarse: (10, 10),
                fine: (10, 10),
            },
            field,
            solver: SolverConfig {
                gamma: 2.0,
                pou: PouKind::Bilinear,
                layers: 2,
                include_boundary: true,
                assembly: Assembly::Reassemble,
                source: 1.0,
            },
            online: OnlineConfig {
                strategy: Strategy::All,
                riesz: RieszForm::Energy,
                certified: false,
                bound_scale: 1.0,
            },
            stop: StopConfig {
                target_error: None,
                max_iterations: 10,
                dof_budget: None,
            },
            output: OutputConfig {
                eigens: false,
                field: false,
                indicators: false,
                timings: true,
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).with_context(format!("reading {}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::default().run(text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                line: 0,
                key: key.into(),
                message,
            })
        };
        let g = &self.grid;
        if g.coarse.0 == 0 || g.coarse.1 == 0 {
            return bad("grid.coarse", "block counts must be positive".into());
        }
        if g.fine.0 == 0 || g.fine.1 == 0 {
            return bad("grid.fine", "cell counts must be positive".into());
        }
        if !(g.domain.width() > 0.0 && g.domain.height() > 0.0) {
            return bad("grid.domain", "domain must have positive size".into());
        }
        match &self.field {
            FieldSource::Preset { contrast, .. } | FieldSource::Features { contrast, .. }
                if !(*contrast >= 1.0 && contrast.is_finite()) =>
            {
                return bad("field.contrast", format!("must be >= 1, got {contrast}"));
            }
            _ => {}
        }
        let s = &self.solver;
        if !(s.gamma > 0.0 && s.gamma.is_finite()) {
            return bad("solver.gamma", format!("must be positive, got {}", s.gamma));
        }
        if !s.source.is_finite() {
            return bad("solver.source", "must be finite".into());
        }
        if let Err(e) = self.online.strategy.validate() {
            return bad("online.strategy", e.to_string());
        }
        if !(self.online.bound_scale > 0.0 && self.online.bound_scale.is_finite()) {
            return bad("online.bound_scale", "must be positive".into());
        }
        if let Some(t) = self.stop.target_error {
            if !(t > 0.0 && t.is_finite()) {
                return bad("stop.target_error", format!("must be positive, got {t}"));
            }
        }
        if self.stop.dof_budget == Some(0) {
            return bad("stop.dof_budget", "must be positive".into());
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.grid.domain;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "\n[grid]");
        let _ = writeln!(s, "domain = {} {} {} {}", d.x0, d.y0, d.x1, d.y1);
        let _ = writeln!(s, "coarse = {} {}", self.grid.coarse.0, self.grid.coarse.1);
        let _ = writeln!(s, "fine = {} {}", self.grid.fine.0, self.grid.fine.1);
        let _ = writeln!(s, "\n[field]");
        match &self.field {
            FieldSource::File { path, shift } => {
                let _ = writeln!(s, "file = {}", path.display());
                let _ = writeln!(s, "shift = {shift}");
            }
            FieldSource::Preset { preset, contrast } => {
                let _ = writeln!(s, "preset = {}", preset.name());
                let _ = writeln!(s, "contrast = {contrast}");
            }
            FieldSource::Features { features, contrast } => {
                let list: Vec<String> = features.iter().map(|f| f.to_string()).collect();
                let _ = writeln!(s, "features = {}", list.join("; "));
                let _ = writeln!(s, "contrast = {contrast}");
            }
        }
        let so = &self.solver;
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "gamma = {}", so.gamma);
        let _ = writeln!(s, "pou = {}", so.pou.name());
        let _ = writeln!(s, "layers = {}", so.layers);
        let _ = writeln!(s, "include_boundary = {}", so.include_boundary);
        let _ = writeln!(s, "assembly = {}", assembly_name(so.assembly));
        let _ = writeln!(s, "source = {}", so.source);
        let on = &self.online;
        let _ = writeln!(s, "\n[online]");
        let _ = writeln!(s, "strategy = {}", on.strategy);
        let _ = writeln!(s, "riesz = {}", on.riesz.name());
        let _ = writeln!(s, "certified = {}", on.certified);
        let _ = writeln!(s, "bound_scale = {}", on.bound_scale);
        let st = &self.stop;
        let _ = writeln!(s, "\n[stop]");
        let _ = writeln!(
            s,
            "target_error = {}",
            opt(st.target_error.map(|v| v.to_string()))
        );
        let _ = writeln!(s, "max_iterations = {}", st.max_iterations);
        let _ = writeln!(
            s,
            "dof_budget = {}",
            opt(st.dof_budget.map(|v| v.to_string()))
        );
        let o = &self.output;
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "eigens = {}", o.eigens);
        let _ = writeln!(s, "field = {}", o.field);
        let _ = writeln!(s, "indicators = {}", o.indicators);
        let _ = writeln!(s, "timings = {}", o.timings);
        s
    }
}

pub fn assembly_name(a: Assembly) -> &'static str {
    match a {
        Assembly::Reassemble => "reassemble",
        Assembly::Incremental => "incremental",
    }
}

#[derive(Default)]
struct Parser {
    seed: Option<u64>,
    domain: Option<Rect>,
    coarse: Option<(usize, usize)>,
    fine: Option<(usize, usize)>,
    file: Option<(usize, PathBuf)>,
    shift: Option<bool>,
    preset: Option<(usize, Preset)>,
    features: Option<(usize, Vec<Feature>)>,
    contrast: Option<(usize, f64)>,
    gamma: Option<f64>,
    pou: Option<PouKind>,
    layers: Option<usize>,
    include_boundary: Option<bool>,
    assembly: Option<Assembly>,
    source: Option<f64>,
    strategy: Option<Strategy>,
    riesz: Option<RieszForm>,
    certified: Option<bool>,
    bound_scale: Option<f64>,
    target_error: Option<Option<f64>>,
    max_iterations: Option<usize>,
    dof_budget: Option<Option<usize>>,
    eigens: Option<bool>,
    field_dump: Option<bool>,
    indicators: Option<bool>,
    timings: Option<bool>,
}

fn e<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("expected a {}, got `{v}`", std::any::type_name::<T>()))
}

fn parse_pair(v: &str) -> std::result::Result<(usize, usize), String> {
    let t: Vec<&str> = v.split_whitespace().collect();
    match t.as_slice() {
        [a] => {
            let n = parse_num(a)?;
            Ok((n, n))
        }
        [a, b] => Ok((parse_num(a)?, parse_num(b)?)),
        _ => Err(format!("expected one or two integers, got `{v}`")),
    }
}

fn parse_opt<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
    if v == "none" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

impl Parser {
    fn run(mut self, text: &str) -> Result<RunConfig> {
        let mut section = String::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                    line,
                    key: content.into(),
                    message: "unterminated section header".into(),
                })?;
                let name = name.trim();
                if !["grid", "field", "solver", "online", "stop", "output"].contains(&name) {
                    return Err(Error::Config {
                        line,
                        key: name.into(),
                        message: "unknown section".into(),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                key: content.into(),
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.set(line, &full, value)
                .map_err(|message| Error::Config {
                    line,
                    key: full.clone(),
                    message,
                })?;
        }
        self.finish()
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = Some(parse_num(v)?),
            "grid.domain" => {
                let t: Vec<f64> = v
                    .split_whitespace()
                    .map(parse_num)
                    .collect::<std::result::Result<_, _>>()?;
                if t.len() != 4 {
                    return Err(format!("expected `x0 y0 x1 y1`, got `{v}`"));
                }
                self.domain = Some(Rect::new(t[0], t[1], t[2], t[3]));
            }
            "grid.coarse" => self.coarse = Some(parse_pair(v)?),
            "grid.fine" => self.fine = Some(parse_pair(v)?),
            "field.file" => self.file = Some((line, PathBuf::from(v))),
            "field.shift" => self.shift = Some(parse_bool(v)?),
            "field.preset" => self.preset = Some((line, e(Preset::parse(v))?)),
            "field.features" => {
                let list = v
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(Feature::parse)
                    .collect::<Result<Vec<_>>>();
                self.features = Some((line, e(list)?));
            }
            "field.contrast" => self.contrast = Some((line, parse_num(v)?)),
            "solver.gamma" => self.gamma = Some(parse_num(v)?),
            "solver.pou" => self.pou = Some(e(PouKind::parse(v))?),
            "solver.layers" => self.layers = Some(parse_num(v)?),
            "solver.include_boundary" => self.include_boundary = Some(parse_bool(v)?),
            "solver.assembly" => {
                self.assembly = Some(match v {
                    "reassemble" => Assembly::Reassemble,
                    "incremental" => Assembly::Incremental,
                    _ => return Err(format!("expected `reassemble` or `incremental`, got `{v}`")),
                })
            }
            "solver.source" => self.source = Some(parse_num(v)?),
            "online.strategy" => self.strategy = Some(e(Strategy::parse(v))?),
            "online.riesz" => self.riesz = Some(e(RieszForm::parse(v))?),
            "online.certified" => self.certified = Some(parse_bool(v)?),
            "online.bound_scale" => self.bound_scale = Some(parse_num(v)?),
            "stop.target_error" => self.target_error = Some(parse_opt(v)?),
            "stop.max_iterations" => self.max_iterations = Some(parse_num(v)?),
            "stop.dof_budget" => self.dof_budget = Some(parse_opt(v)?),
            "output.eigens" => self.eigens = Some(parse_bool(v)?),
            "output.field" => self.field_dump = Some(parse_bool(v)?),
            "output.indicators" => self.indicators = Some(parse_bool(v)?),
            "output.timings" => self.timings = Some(parse_bool(v)?),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn finish(self) -> Result<RunConfig> {
        let sources = [
            self.file.as_ref().map(|x| x.0),
            self.preset.as_ref().map(|x| x.0),
            self.features.as_ref().map(|x| x.0),
        ];
        let given: Vec<usize> = sources.iter().flatten().copied().collect();
        if given.len() > 1 {
            return Err(Error::Config {
                line: given[1],
                key: "field".into(),
                message: "give exactly one of `file`, `preset`, `features`".into(),
            });
        }
        let need_contrast = |line: usize| {
            self.contrast.map(|c| c.1).ok_or_else(|| Error::Config {
                line,
                key: "field.contrast".into(),
                message: "required with a generated field".into(),
            })
        };
        let field = if let Some((_, path)) = self.file.clone() {
            if let Some((line, _)) = self.contrast {
                return Err(Error::Config {
                    line,
                    key: "field.contrast".into(),
                    message: "not used with a field file".into(),
                });
            }
            FieldSource::File {
                path,
                shift: self.shift.unwrap_or(false),
            }
        } else if let Some((line, preset)) = self.preset {
            FieldSource::Preset {
                preset,
                contrast: need_contrast(line)?,
            }
        } else if let Some((line, features)) = self.features.clone() {
            FieldSource::Features {
                features,
                contrast: need_contrast(line)?,
            }
        } else {
            return Err(Error::Config {
                line: 0,
                key: "field".into(),
                message: "missing field source: set `file`, `preset` or `features` in [field]"
                    .into(),
            });
        };
        let mut c = RunConfig::with_field(field);
        c.seed = self.seed.unwrap_or(c.seed);
        c.grid.domain = self.domain.unwrap_or(c.grid.domain);
        c.grid.coarse = self.coarse.unwrap_or(c.grid.coarse);
        c.grid.fine = self.fine.unwrap_or(c.grid.fine);
        c.solver.gamma = self.gamma.unwrap_or(c.solver.gamma);
        c.solver.pou = self.pou.unwrap_or(c.solver.pou);
        c.solver.layers = self.layers.unwrap_or(c.solver.layers);
        c.solver.include_boundary = self.include_boundary.unwrap_or(c.solver.include_boundary);
        c.solver.assembly = self.assembly.unwrap_or(c.solver.assembly);
        c.solver.source = self.source.unwrap_or(c.solver.source);
        c.online.strategy = self.strategy.unwrap_or(c.online.strategy);
        c.online.riesz = self.riesz.unwrap_or(c.online.riesz);
        c.online.certified = self.certified.unwrap_or(c.online.certified);
        c.online.bound_scale = self.bound_scale.unwrap_or(c.online.bound_scale);
        c.stop.target_error = self.target_error.unwrap_or(c.stop.target_error);
        c.stop.max_iterations = self.max_iterations.unwrap_or(c.stop.max_iterations);
        c.stop.dof_budget = self.dof_budget.unwrap_or(c.stop.dof_budget);
        c.output.eigens = self.eigens.unwrap_or(c.output.eigens);
        c.output.field = self.field_dump.unwrap_or(c.output.field);
        c.output.indicators = self.indicators.unwrap_or(c.output.indicators);
        c.output.timings = self.timings.unwrap_or(c.output.timings);
        c.validate()?;
        Ok(c)
    }
}
