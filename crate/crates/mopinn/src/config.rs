//! TOML run configuration with built-in presets for the five benchmarks.
//!
//! ```toml
//! preset = "poisson2d"
//!
//! [training]
//! iterations = 5000
//! combiner = "surgery"
//!
//! [aux]
//! source = "noisy"
//! noise_std = 0.1
//! ```
//!
//! Every section overlays the preset; without a preset, `[problem] kind`
//! selects the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mopinn_core::multiobjective::{AnnealMode, AuxSchedule, DEFAULT_FLOOR};
use mopinn_core::network::{Activation, InputTransform, NetworkSpec};
use mopinn_core::problems::{CollocationLayout, Domain, ProblemKind, ProblemSpec};

use crate::experiment::{AuxConfig, AuxSource, Combiner, InitScheme, SchedulerConfig, TrialConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<SchedulerSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxSection>,
    #[serde(default)]
    pub collocation: CollocationSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: Option<String>,
    /// Interval or rectangle corners.
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub half_width: Option<f64>,
    pub hole_radius: Option<f64>,
    pub youngs_modulus: Option<f64>,
    pub poisson_ratio: Option<f64>,
    pub sigma0: Option<f64>,
    pub k11: Option<f64>,
    pub k12: Option<f64>,
    pub k22: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub input_transform: Option<String>,
    /// `xavier`, `gaussian` or `zeros`.
    pub init: Option<String>,
    pub init_std: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub iterations: Option<u64>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub combiner: Option<String>,
    pub vald_every: Option<u64>,
    pub normalize: Option<bool>,
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    /// `false` keeps the learning rate constant.
    pub enabled: Option<bool>,
    pub patience: Option<u32>,
    pub factor: Option<f64>,
    pub min_lr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSection {
    /// `fem`, `noisy`, `zeros`, `analytic`, `file:<path>` or `off`.
    pub source: Option<String>,
    pub noise_std: Option<f64>,
    /// `halving` or `cutoff`.
    pub mode: Option<String>,
    pub t_aux: Option<u64>,
    pub delta_t: Option<u64>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationSection {
    pub pde: Option<usize>,
    pub pde_radial: Option<usize>,
    pub dbc: Option<usize>,
    pub nbc: Option<usize>,
    pub aux: Option<usize>,
    pub vald: Option<usize>,
    pub seed: Option<u64>,
}

pub const PRESETS: [&str; 5] = [
    "poisson1d",
    "heat1d_mixed",
    "poisson2d",
    "elasticity_hole",
    "inverse_poisson2d",
];

/// Default trial for a benchmark.
pub fn preset(kind: ProblemKind) -> TrialConfig {
    let problem = ProblemSpec::preset(kind);
    let (d_in, d_out) = (kind.dim(), kind.output_fields().len());
    let mlp = |h: usize, act: Activation| {
        NetworkSpec::mlp(d_in, h, 3, d_out, act).expect("preset network")
    };
    let plateau = |factor: f64, min_lr: f64| {
        Some(SchedulerConfig {
            patience: 50,
            factor,
            min_lr,
        })
    };
    let base = TrialConfig {
        problem,
        network: mlp(10, Activation::Tanh),
        init: InitScheme::Xavier,
        seed: 0,
        iterations: 20_000,
        lr: 1e-3,
        scheduler: None,
        combiner: Combiner::Sum,
        aux: None,
        layout: CollocationLayout::preset(kind),
        vald_every: 100,
        normalize: true,
        checkpoint_every: 0,
    };
    match kind {
        ProblemKind::Poisson1d => TrialConfig {
            lr: 5e-4,
            aux: Some(AuxConfig {
                source: AuxSource::Coarse,
                schedule: AuxSchedule::halving(5000, 200),
            }),
            ..base
        },
        ProblemKind::Heat1dMixed => TrialConfig {
            network: mlp(4, Activation::Silu),
            init: InitScheme::Gaussian { std: 2.0 },
            iterations: 5000,
            ..base
        },
        ProblemKind::Poisson2d => TrialConfig {
            network: mlp(80, Activation::Tanh),
            iterations: 30_000,
            scheduler: plateau(0.8, 1e-6),
            aux: Some(AuxConfig {
                source: AuxSource::Coarse,
                schedule: AuxSchedule::halving(2000, 200),
            }),
            ..base
        },
        ProblemKind::ElasticityHole => TrialConfig {
            network: mlp(40, Activation::Tanh)
                .with_input_transform(InputTransform::CartesianToPolar)
                .expect("2D input"),
            scheduler: plateau(0.8, 1e-5),
            combiner: Combiner::Surgery,
            aux: Some(AuxConfig {
                source: AuxSource::Coarse,
                schedule: AuxSchedule::cutoff(5000),
            }),
            ..base
        },
        ProblemKind::InversePoisson2d => TrialConfig {
            iterations: 5000,
            scheduler: plateau(0.9, 1e-6),
            combiner: Combiner::Surgery,
            aux: Some(AuxConfig {
                source: AuxSource::Analytic,
                schedule: AuxSchedule::cutoff(0),
            }),
            ..base
        },
    }
}

pub fn preset_by_name(name: &str) -> Option<TrialConfig> {
    ProblemKind::from_name(name).map(preset)
}

/// 1-based line of byte offset `pos`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Line on which `key` is assigned inside `[section]` (top level when empty).
fn locate(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            if current == section && key.is_empty() {
                return i + 1;
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    0
}

/// The key a TOML error points at: the word before `=` on the offending
/// line, or the section name of a header.
fn key_on_line(text: &str, line: usize) -> String {
    let l = text
        .lines()
        .nth(line.saturating_sub(1))
        .unwrap_or("")
        .trim();
    if l.starts_with('[') {
        return l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
    }
    l.split_once('=').map_or(l, |(k, _)| k).trim().to_string()
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        Error::Config {
            key: full,
            line: locate(self.text, section, key),
            message: message.into(),
        }
    }
}

pub fn parse_config_str(text: &str) -> Result<TrialConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        match e.span() {
            Some(span) => {
                let line = line_of(text, span.start);
                Error::Config {
                    key: key_on_line(text, line),
                    line,
                    message,
                }
            }
            None => Error::ConfigSyntax(message),
        }
    })?;
    resolve(&file, text)
}

pub fn parse_config(path: &Path) -> Result<TrialConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

fn parse_aux_source(s: &str) -> Option<Option<AuxSource>> {
    Some(Some(match s {
        "off" | "none" => return Some(None),
        "fem" | "coarse" => AuxSource::Coarse,
        "noisy" => AuxSource::Noisy { std: 2.0 },
        "zeros" => AuxSource::Zeros,
        "analytic" => AuxSource::Analytic,
        _ => AuxSource::File(PathBuf::from(s.strip_prefix("file:")?)),
    }))
}

/// Applies `--aux` style overrides (`fem`, `noisy`, `zeros`, `analytic`,
/// `file:<path>`, `off`), keeping the preset schedule when one exists.
pub fn set_aux_source(config: &mut TrialConfig, source: &str) -> Result<()> {
    let parsed = parse_aux_source(source)
        .ok_or_else(|| Error::Invalid(format!("unknown aux source `{source}`")))?;
    config.aux = match parsed {
        None => None,
        Some(src) => {
            let schedule = config
                .aux
                .as_ref()
                .map_or_else(|| default_schedule(config.problem.kind), |a| a.schedule);
            Some(AuxConfig {
                source: src,
                schedule,
            })
        }
    };
    Ok(())
}

fn default_schedule(kind: ProblemKind) -> AuxSchedule {
    preset(kind)
        .aux
        .map_or_else(|| AuxSchedule::halving(5000, 200), |a| a.schedule)
}

fn resolve(file: &ConfigFile, text: &str) -> Result<TrialConfig> {
    let cx = Ctx { text };
    let kind_name = match (&file.preset, &file.problem.kind) {
        (Some(p), Some(k)) if p != k => {
            return Err(cx.err(
                "problem",
                "kind",
                format!("kind `{k}` contradicts preset `{p}`"),
            ));
        }
        (Some(p), _) => p.clone(),
        (None, Some(k)) => k.clone(),
        (None, None) => {
            return Err(Error::Config {
                key: "preset".into(),
                line: 1,
                message: format!(
                    "set `preset` or `[problem] kind`; presets are {}",
                    PRESETS.join(", ")
                ),
            })
        }
    };
    let kind = ProblemKind::from_name(&kind_name).ok_or_else(|| {
        let (sec, key) = if file.preset.is_some() {
            ("", "preset")
        } else {
            ("problem", "kind")
        };
        cx.err(
            sec,
            key,
            format!(
                "unknown problem `{kind_name}`; expected one of {}",
                PRESETS.join(", ")
            ),
        )
    })?;
    let mut c = preset(kind);

    let p = &file.problem;
    match &mut c.problem.domain {
        Domain::Interval { lo, hi } => {
            for (key, v, slot) in [("lo", &p.lo, lo), ("hi", &p.hi, hi)] {
                if let Some(v) = v {
                    if v.len() != 1 {
                        return Err(cx.err("problem", key, "a 1D problem takes one coordinate"));
                    }
                    *slot = v[0];
                }
            }
        }
        Domain::Rectangle { lo, hi } => {
            for (key, v, slot) in [("lo", &p.lo, lo), ("hi", &p.hi, hi)] {
                if let Some(v) = v {
                    *slot = <[f64; 2]>::try_from(v.as_slice()).map_err(|_| {
                        cx.err("problem", key, "a 2D problem takes two coordinates")
                    })?;
                }
            }
        }
        Domain::QuarterPlate {
            half_width,
            hole_radius,
        } => {
            if let Some(v) = p.half_width {
                *half_width = v;
            }
            if let Some(v) = p.hole_radius {
                *hole_radius = v;
            }
        }
    }
    let geometric = match c.problem.domain {
        Domain::QuarterPlate { .. } => p.lo.is_some() || p.hi.is_some(),
        _ => p.half_width.is_some() || p.hole_radius.is_some(),
    };
    if geometric {
        let key = if p.lo.is_some() {
            "lo"
        } else if p.hi.is_some() {
            "hi"
        } else if p.half_width.is_some() {
            "half_width"
        } else {
            "hole_radius"
        };
        return Err(cx.err("problem", key, format!("does not apply to {}", kind.name())));
    }
    let m = &mut c.problem.material;
    for (key, v, slot) in [
        ("youngs_modulus", p.youngs_modulus, &mut m.youngs_modulus),
        ("poisson_ratio", p.poisson_ratio, &mut m.poisson_ratio),
        ("sigma0", p.sigma0, &mut m.sigma0),
    ] {
        if let Some(v) = v {
            if kind != ProblemKind::ElasticityHole {
                return Err(cx.err("problem", key, format!("does not apply to {}", kind.name())));
            }
            *slot = v;
        }
    }
    let k = &mut c.problem.k_exact;
    for (key, v, slot) in [
        ("k11", p.k11, &mut k.k11),
        ("k12", p.k12, &mut k.k12),
        ("k22", p.k22, &mut k.k22),
    ] {
        if let Some(v) = v {
            if kind != ProblemKind::InversePoisson2d {
                return Err(cx.err("problem", key, format!("does not apply to {}", kind.name())));
            }
            *slot = v;
        }
    }
    c.problem
        .validate()
        .map_err(|e| cx.err("problem", "kind", e.to_string()))?;

    let n = &file.network;
    let mut widths = c.network.layer_widths.clone();
    if let Some(h) = &n.hidden {
        if h.is_empty() || h.contains(&0) {
            return Err(cx.err(
                "network",
                "hidden",
                "hidden widths must be positive and non-empty",
            ));
        }
        widths = std::iter::once(kind.dim())
            .chain(h.iter().copied())
            .chain([kind.output_fields().len()])
            .collect();
    }
    let activation = match &n.activation {
        Some(a) => Activation::from_name(a)
            .ok_or_else(|| cx.err("network", "activation", format!("unknown activation `{a}`")))?,
        None => c.network.activation,
    };
    let transform = match &n.input_transform {
        Some(t) => InputTransform::from_name(t).ok_or_else(|| {
            cx.err(
                "network",
                "input_transform",
                format!("unknown input transform `{t}`"),
            )
        })?,
        None => c.network.input_transform,
    };
    c.network = NetworkSpec::new(widths, activation, transform)
        .map_err(|e| cx.err("network", "input_transform", e.to_string()))?;
    c.init = match n.init.as_deref() {
        None => match (c.init, n.init_std) {
            (InitScheme::Gaussian { .. }, Some(std)) => InitScheme::Gaussian { std },
            (_, Some(_)) => {
                return Err(cx.err("network", "init_std", "only used with init = \"gaussian\""))
            }
            (i, None) => i,
        },
        Some("xavier") => InitScheme::Xavier,
        Some("zeros") => InitScheme::Zeros,
        Some("gaussian") => InitScheme::Gaussian {
            std: n.init_std.unwrap_or(1.0),
        },
        Some(other) => return Err(cx.err("network", "init", format!("unknown init `{other}`"))),
    };
    if let InitScheme::Gaussian { std } = c.init {
        if !(std > 0.0 && std.is_finite()) {
            return Err(cx.err("network", "init_std", "must be positive"));
        }
    }

    let t = &file.training;
    if let Some(v) = t.iterations {
        if v == 0 {
            return Err(cx.err("training", "iterations", "must be at least 1"));
        }
        c.iterations = v;
    }
    if let Some(v) = t.lr {
        if !(v > 0.0 && v.is_finite()) {
            return Err(cx.err("training", "lr", "must be positive"));
        }
        c.lr = v;
    }
    if let Some(v) = t.seed {
        c.seed = v;
    }
    if let Some(v) = &t.combiner {
        c.combiner = Combiner::from_name(v).ok_or_else(|| {
            cx.err(
                "training",
                "combiner",
                format!("expected `sum` or `surgery`, got `{v}`"),
            )
        })?;
    }
    if let Some(v) = t.vald_every {
        if v == 0 {
            return Err(cx.err("training", "vald_every", "must be at least 1"));
        }
        c.vald_every = v;
    }
    if let Some(v) = t.normalize {
        c.normalize = v;
    }
    if let Some(v) = t.checkpoint_every {
        c.checkpoint_every = v;
    }

    if let Some(s) = &file.scheduler {
        if s.enabled == Some(false) {
            if s.patience.is_some() || s.factor.is_some() || s.min_lr.is_some() {
                return Err(cx.err(
                    "scheduler",
                    "enabled",
                    "a disabled scheduler takes no parameters",
                ));
            }
            c.scheduler = None;
        } else {
            let mut sc = c.scheduler.unwrap_or(SchedulerConfig {
                patience: 50,
                factor: 0.8,
                min_lr: 1e-6,
            });
            if let Some(v) = s.patience {
                sc.patience = v;
            }
            if let Some(v) = s.factor {
                if !(v > 0.0 && v < 1.0) {
                    return Err(cx.err("scheduler", "factor", "must lie in (0, 1)"));
                }
                sc.factor = v;
            }
            if let Some(v) = s.min_lr {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(cx.err("scheduler", "min_lr", "must be non-negative"));
                }
                sc.min_lr = v;
            }
            c.scheduler = Some(sc);
        }
    }

    if let Some(a) = &file.aux {
        if let Some(src) = &a.source {
            let parsed = parse_aux_source(src)
                .ok_or_else(|| cx.err("aux", "source", format!("unknown aux source `{src}`")))?;
            c.aux = parsed.map(|source| AuxConfig {
                source,
                schedule: c
                    .aux
                    .as_ref()
                    .map_or_else(|| default_schedule(kind), |x| x.schedule),
            });
        }
        match &mut c.aux {
            None => {
                let stray = [
                    ("noise_std", a.noise_std.is_some()),
                    ("mode", a.mode.is_some()),
                    ("t_aux", a.t_aux.is_some()),
                    ("delta_t", a.delta_t.is_some()),
                    ("floor", a.floor.is_some()),
                ];
                if let Some((key, _)) = stray.iter().find(|(_, set)| *set) {
                    return Err(cx.err("aux", key, "auxiliary labels are off"));
                }
            }
            Some(aux) => {
                if let Some(std) = a.noise_std {
                    match &mut aux.source {
                        AuxSource::Noisy { std: s } => {
                            if !(std >= 0.0 && std.is_finite()) {
                                return Err(cx.err("aux", "noise_std", "must be non-negative"));
                            }
                            *s = std;
                        }
                        _ => {
                            return Err(cx.err(
                                "aux",
                                "noise_std",
                                "only used with source = \"noisy\"",
                            ))
                        }
                    }
                }
                let sch = &mut aux.schedule;
                match a.mode.as_deref() {
                    None => {}
                    Some("halving") => {
                        if sch.mode != AnnealMode::Halving {
                            *sch = AuxSchedule::halving(sch.t_aux, 200);
                        }
                    }
                    Some("cutoff") => *sch = AuxSchedule::cutoff(sch.t_aux),
                    Some(other) => {
                        return Err(cx.err(
                            "aux",
                            "mode",
                            format!("expected `halving` or `cutoff`, got `{other}`"),
                        ))
                    }
                }
                if let Some(v) = a.t_aux {
                    sch.t_aux = v;
                }
                if let Some(v) = a.delta_t {
                    if v == 0 {
                        return Err(cx.err("aux", "delta_t", "must be at least 1"));
                    }
                    sch.delta_t = v;
                }
                if let Some(v) = a.floor {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(cx.err("aux", "floor", "must lie in (0, 1)"));
                    }
                    sch.floor = v;
                }
            }
        }
    }
    if kind == ProblemKind::Heat1dMixed && c.aux.is_some() {
        return Err(cx.err("aux", "source", "heat1d_mixed takes no auxiliary labels"));
    }
    if kind.requires_labels() && c.aux.is_none() {
        return Err(cx.err(
            "aux",
            "source",
            format!("{} needs measurement data", kind.name()),
        ));
    }

    let l = &file.collocation;
    for (v, slot) in [
        (l.pde, &mut c.layout.pde),
        (l.pde_radial, &mut c.layout.pde_radial),
        (l.dbc, &mut c.layout.dbc),
        (l.nbc, &mut c.layout.nbc),
        (l.aux, &mut c.layout.aux),
        (l.vald, &mut c.layout.vald),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(v) = l.seed {
        c.layout.seed = v;
    }
    mopinn_core::problems::generate_collocation(&c.problem, &c.layout)
        .map_err(|e| cx.err("collocation", "", e.to_string()))?;
    Ok(c)
}

/// Fully explicit file form of `config` (no preset key).
pub fn to_file(c: &TrialConfig) -> ConfigFile {
    let kind = c.problem.kind;
    let mut problem = ProblemSection {
        kind: Some(kind.name().into()),
        ..Default::default()
    };
    match c.problem.domain {
        Domain::Interval { lo, hi } => {
            problem.lo = Some(vec![lo]);
            problem.hi = Some(vec![hi]);
        }
        Domain::Rectangle { lo, hi } => {
            problem.lo = Some(lo.to_vec());
            problem.hi = Some(hi.to_vec());
        }
        Domain::QuarterPlate {
            half_width,
            hole_radius,
        } => {
            problem.half_width = Some(half_width);
            problem.hole_radius = Some(hole_radius);
        }
    }
    if kind == ProblemKind::ElasticityHole {
        let m = c.problem.material;
        problem.youngs_modulus = Some(m.youngs_modulus);
        problem.poisson_ratio = Some(m.poisson_ratio);
        problem.sigma0 = Some(m.sigma0);
    }
    if kind == ProblemKind::InversePoisson2d {
        let k = c.problem.k_exact;
        problem.k11 = Some(k.k11);
        problem.k12 = Some(k.k12);
        problem.k22 = Some(k.k22);
    }
    let w = &c.network.layer_widths;
    let (init, init_std) = match c.init {
        InitScheme::Xavier => ("xavier", None),
        InitScheme::Gaussian { std } => ("gaussian", Some(std)),
        InitScheme::Zeros => ("zeros", None),
    };
    let aux = Some(match &c.aux {
        None => AuxSection {
            source: Some("off".into()),
            ..Default::default()
        },
        Some(a) => AuxSection {
            source: Some(a.source.name()),
            noise_std: match a.source {
                AuxSource::Noisy { std } => Some(std),
                _ => None,
            },
            mode: Some(
                match a.schedule.mode {
                    AnnealMode::Halving => "halving",
                    AnnealMode::Cutoff => "cutoff",
                }
                .into(),
            ),
            t_aux: Some(a.schedule.t_aux),
            delta_t: (a.schedule.mode == AnnealMode::Halving).then_some(a.schedule.delta_t),
            floor: (a.schedule.floor != DEFAULT_FLOOR).then_some(a.schedule.floor),
        },
    });
    ConfigFile {
        preset: None,
        problem,
        network: NetworkSection {
            hidden: Some(w[1..w.len() - 1].to_vec()),
            activation: Some(c.network.activation.name().into()),
            input_transform: Some(c.network.input_transform.name().into()),
            init: Some(init.into()),
            init_std,
        },
        training: TrainingSection {
            iterations: Some(c.iterations),
            lr: Some(c.lr),
            seed: Some(c.seed),
            combiner: Some(c.combiner.name().into()),
            vald_every: Some(c.vald_every),
            normalize: Some(c.normalize),
            checkpoint_every: Some(c.checkpoint_every),
        },
        scheduler: Some(match c.scheduler {
            None => SchedulerSection {
                enabled: Some(false),
                ..Default::default()
            },
            Some(s) => SchedulerSection {
                enabled: None,
                patience: Some(s.patience),
                factor: Some(s.factor),
                min_lr: Some(s.min_lr),
            },
        }),
        aux,
        collocation: CollocationSection {
            pde: Some(c.layout.pde),
            pde_radial: Some(c.layout.pde_radial),
            dbc: Some(c.layout.dbc),
            nbc: Some(c.layout.nbc),
            aux: Some(c.layout.aux),
            vald: Some(c.layout.vald),
            seed: Some(c.layout.seed),
        },
    }
}

pub fn to_toml(c: &TrialConfig) -> String {
    toml::to_string(&to_file(c)).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_poisson1d() {
        let c = parse_config_str("preset = \"poisson1d\"\n").unwrap();
        assert_eq!(c.network.layer_widths, vec![1, 10, 10, 10, 1]);
        assert_eq!(c.network.activation, Activation::Tanh);
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.layout.pde, 60);
    }

    #[test]
    fn preset_poisson2d() {
        let c = parse_config_str("preset = \"poisson2d\"").unwrap();
        assert_eq!(c.network.layer_widths, vec![2, 80, 80, 80, 1]);
        assert_eq!(c.lr, 1e-3);
        let s = c.scheduler.unwrap();
        assert_eq!((s.patience, s.factor, s.min_lr), (50, 0.8, 1e-6));
    }

    #[test]
    fn empty_file_demands_a_preset() {
        let e = parse_config_str("").unwrap_err();
        assert!(e.to_string().contains("preset"), "{e}");
        assert!(e.is_usage());
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let e = parse_config_str(
            "preset = \"poisson1d\"\n\n[training]\nlr = 1e-3\nlearning_rate = 2\n",
        )
        .unwrap_err();
        match e {
            Error::Config { key, line, .. } => {
                assert_eq!((key.as_str(), line), ("learning_rate", 5))
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn type_mismatch_names_key_and_line() {
        let e = parse_config_str("preset = \"poisson1d\"\n[training]\niterations = \"many\"\n")
            .unwrap_err();
        match e {
            Error::Config { key, line, .. } => assert_eq!((key.as_str(), line), ("iterations", 3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invariant_violation_names_key_and_line() {
        let e = parse_config_str("preset = \"poisson2d\"\n[training]\nseed = 1\nlr = -1.0\n")
            .unwrap_err();
        match e {
            Error::Config { key, line, .. } => assert_eq!((key.as_str(), line), ("training.lr", 4)),
            other => panic!("{other}"),
        }
        let e =
            parse_config_str("preset = \"heat1d_mixed\"\n[aux]\nsource = \"fem\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = parse_config_str("preset = \"nope\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
    }

    #[test]
    fn overlays_apply() {
        let text = "preset = \"poisson1d\"\n[aux]\nsource = \"noisy\"\nnoise_std = 0.5\n[training]\ncombiner = \"surgery\"\n";
        let c = parse_config_str(text).unwrap();
        assert_eq!(c.combiner, Combiner::Surgery);
        let aux = c.aux.unwrap();
        assert_eq!(aux.source, AuxSource::Noisy { std: 0.5 });
        assert_eq!(aux.schedule, AuxSchedule::halving(5000, 200));
        let c = parse_config_str("preset = \"poisson1d\"\n[aux]\nsource = \"off\"\n").unwrap();
        assert!(c.aux.is_none());
        let c = parse_config_str("preset = \"poisson1d\"\n[aux]\nsource = \"file:data/t.csv\"\n")
            .unwrap();
        assert_eq!(c.aux.unwrap().source, AuxSource::File("data/t.csv".into()));
    }

    #[test]
    fn every_preset_round_trips() {
        for name in PRESETS {
            let c = parse_config_str(&format!("preset = \"{name}\"")).unwrap();
            let text = to_toml(&c);
            let back = parse_config_str(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"));
            assert_eq!(back, c, "{name}");
            assert_eq!(to_toml(&back), text);
        }
    }
}
