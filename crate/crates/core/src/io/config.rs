//! Run configuration files: UTF-8 `key = value` lines, `#` comments, dotted
//! keys grouped by module. Unknown and repeated keys are rejected;
//! missing keys keep their defaults.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{ColorMode, EvalProtocol};
use crate::odesolver::{Method, SolverConfig};
use crate::training::TrainConfig;
use crate::vectorfield::VectorFieldConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub field: VectorFieldConfig,
    /// Step size and method shared by training, inference and evaluation.
    pub solver: SolverConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        RunConfig {
            field: VectorFieldConfig::default(),
            solver,
            train: TrainConfig {
                solver,
                ..TrainConfig::default()
            },
            eval: EvalProtocol::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "vectorfield.depth",
    "vectorfield.hidden_channels",
    "vectorfield.kernel_size",
    "vectorfield.image_channels",
    "vectorfield.init_seed",
    "solver.max_step",
    "solver.method",
    "train.scale_set",
    "train.patch_size",
    "train.batch_size",
    "train.total_steps",
    "train.lr_initial",
    "train.lr_halve_every",
    "train.seed",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.zero_init_last",
    "train.record_every",
    "train.log_wall_time",
    "eval.color_mode",
    "eval.border_shave",
    "eval.peak",
    "eval.modcrop",
];

fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn join<V: Display>(vals: &[V]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (f, tr, ev) = (&mut self.field, &mut self.train, &mut self.eval);
        match key {
            "vectorfield.depth" => f.depth = num(key, value)?,
            "vectorfield.hidden_channels" => f.hidden_channels = num(key, value)?,
            "vectorfield.kernel_size" => f.kernel_size = num(key, value)?,
            "vectorfield.image_channels" => f.image_channels = num(key, value)?,
            "vectorfield.init_seed" => f.init_seed = num(key, value)?,
            "solver.max_step" => self.solver.max_step = num(key, value)?,
            "solver.method" => {
                self.solver.method = Method::parse(value)
                    .ok_or_else(|| Error::Config(format!("{key}: expected rk4 or euler, got {value:?}")))?
            }
            "train.scale_set" => {
                tr.scale_set = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "train.patch_size" => tr.patch_size = num(key, value)?,
            "train.batch_size" => tr.batch_size = num(key, value)?,
            "train.total_steps" => tr.total_steps = num(key, value)?,
            "train.lr_initial" => tr.lr_initial = num(key, value)?,
            "train.lr_halve_every" => tr.lr_halve_every = num(key, value)?,
            "train.seed" => tr.seed = num(key, value)?,
            "train.adam_beta1" => tr.adam.beta1 = num(key, value)?,
            "train.adam_beta2" => tr.adam.beta2 = num(key, value)?,
            "train.adam_eps" => tr.adam.eps = num(key, value)?,
            "train.zero_init_last" => tr.zero_init_last = num(key, value)?,
            "train.record_every" => tr.record_every = num(key, value)?,
            "train.log_wall_time" => tr.log_wall_time = num(key, value)?,
            "eval.color_mode" => {
                ev.color_mode = ColorMode::parse(value).ok_or_else(|| {
                    Error::Config(format!("{key}: expected rgb or y_channel, got {value:?}"))
                })?
            }
            "eval.border_shave" => {
                ev.border_shave = if value == "auto" { None } else { Some(num(key, value)?) }
            }
            "eval.peak" => ev.peak = num(key, value)?,
            "eval.modcrop" => ev.modcrop = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let (f, tr, ev) = (&self.field, &self.train, &self.eval);
        match key {
            "vectorfield.depth" => f.depth.to_string(),
            "vectorfield.hidden_channels" => f.hidden_channels.to_string(),
            "vectorfield.kernel_size" => f.kernel_size.to_string(),
            "vectorfield.image_channels" => f.image_channels.to_string(),
            "vectorfield.init_seed" => f.init_seed.to_string(),
            "solver.max_step" => self.solver.max_step.to_string(),
            "solver.method" => self.solver.method.name().to_string(),
            "train.scale_set" => join(&tr.scale_set),
            "train.patch_size" => tr.patch_size.to_string(),
            "train.batch_size" => tr.batch_size.to_string(),
            "train.total_steps" => tr.total_steps.to_string(),
            "train.lr_initial" => tr.lr_initial.to_string(),
            "train.lr_halve_every" => tr.lr_halve_every.to_string(),
            "train.seed" => tr.seed.to_string(),
            "train.adam_beta1" => tr.adam.beta1.to_string(),
            "train.adam_beta2" => tr.adam.beta2.to_string(),
            "train.adam_eps" => tr.adam.eps.to_string(),
            "train.zero_init_last" => tr.zero_init_last.to_string(),
            "train.record_every" => tr.record_every.to_string(),
            "train.log_wall_time" => tr.log_wall_time.to_string(),
            "eval.color_mode" => ev.color_mode.name().to_string(),
            "eval.border_shave" => ev
                .border_shave
                .map_or_else(|| "auto".to_string(), |s| s.to_string()),
            "eval.peak" => ev.peak.to_string(),
            "eval.modcrop" => ev.modcrop.to_string(),
            _ => unreachable!("key table and getters agree"),
        }
    }

    /// Parses a config file body. `train.lr_halve_every` defaults to a third
    /// of `train.total_steps` when absent.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        if !seen.contains("train.lr_halve_every") {
            cfg.train.lr_halve_every = (cfg.train.total_steps / 3).max(1);
        }
        cfg.train.solver = cfg.solver;
        cfg.field.validate()?;
        cfg.train.validate(&cfg.field)?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        RunConfig::parse(&text)
    }

    /// Every key with its effective value, in a fixed order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k)))
            .collect()
    }
}
