//! Resolved run configuration: defaults, then the key-value file, then
//! `--set` pairs, then dedicated flags.

use std::fs;
use std::path::Path;

use sthcss_core::data::{parse_groups, SplitRatios, SynthConfig, TargetKind};
use sthcss_core::model::ModelConfig;
use sthcss_core::pipeline::RunSpec;
use sthcss_core::train::TrainConfig;
use sthcss_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub ratios: SplitRatios,
    pub stride: usize,
    pub target: String,
    pub ridge_lambda: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            ratios: SplitRatios::default(),
            stride: 1,
            target: "y".into(),
            ridge_lambda: 1.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for key {key:?}"))),
    }
}

impl RunConfig {
    /// Applies one `key=value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                let s: u64 = parse(key, v)?;
                self.model.init_seed = s;
                self.train.seed = s;
                self.synth.seed = s;
            }
            "window" => self.model.window = parse(key, v)?,
            "mixer_blocks" => self.model.mixer_blocks = parse(key, v)?,
            "kernel_size" => self.model.kernel_size = parse(key, v)?,
            "dilation" => self.model.dilation = parse(key, v)?,
            "st_blocks" => self.model.st_blocks = parse(key, v)?,
            "channels" => self.model.channels = parse(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "readout_hidden" => self.model.readout_hidden = parse(key, v)?,
            "knn_k" => self.model.knn_k = parse(key, v)?,
            "degree_mode" => self.model.degree_mode = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "patience" => {
                self.train.patience = match v {
                    "off" | "none" | "0" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "sensors" => self.synth.sensors = parse(key, v)?,
            "groups" => self.synth.groups = parse_groups(v)?,
            "length" => self.synth.length = parse(key, v)?,
            "noise_std" => self.synth.noise_std = parse(key, v)?,
            "nonlinear_sensors" => self.synth.nonlinear_sensors = parse_bool(key, v)?,
            "identity_response" => self.synth.identity_response = parse_bool(key, v)?,
            "target_kind" => {
                self.synth.target = match v {
                    "nonlinear" => TargetKind::Nonlinear,
                    "linear" => TargetKind::Linear,
                    _ => return Err(Error::Config(format!("target_kind {v:?} must be nonlinear or linear"))),
                }
            }
            "target_lag" => self.synth.target_lag = parse(key, v)?,
            "segments" => self.synth.segments = parse(key, v)?,
            "train_ratio" => self.ratios.train = parse(key, v)?,
            "val_ratio" => self.ratios.val = parse(key, v)?,
            "test_ratio" => self.ratios.test = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "target" => {
                if v.is_empty() {
                    return Err(Error::Config("target column name must not be empty".into()));
                }
                self.target = v.to_string()
            }
            "ridge_lambda" => self.ridge_lambda = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Reads `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value, got {line:?}", path.display(), i + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    /// Every effective setting, in a stable order. The output parses back
    /// through [`RunConfig::apply_file`].
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let groups: Vec<String> = self.synth.groups.iter().map(|g| g.to_string()).collect();
        vec![
            ("seed", self.train.seed.to_string()),
            ("window", self.model.window.to_string()),
            ("mixer_blocks", self.model.mixer_blocks.to_string()),
            ("kernel_size", self.model.kernel_size.to_string()),
            ("dilation", self.model.dilation.to_string()),
            ("st_blocks", self.model.st_blocks.to_string()),
            ("channels", self.model.channels.to_string()),
            ("dropout", self.model.dropout.to_string()),
            ("readout_hidden", self.model.readout_hidden.to_string()),
            ("knn_k", self.model.knn_k.to_string()),
            ("degree_mode", self.model.degree_mode.to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("lr", self.train.lr.to_string()),
            ("patience", self.train.patience.map_or("off".into(), |p| p.to_string())),
            ("sensors", self.synth.sensors.to_string()),
            ("groups", groups.join(",")),
            ("length", self.synth.length.to_string()),
            ("noise_std", self.synth.noise_std.to_string()),
            ("nonlinear_sensors", self.synth.nonlinear_sensors.to_string()),
            ("identity_response", self.synth.identity_response.to_string()),
            (
                "target_kind",
                match self.synth.target {
                    TargetKind::Nonlinear => "nonlinear".into(),
                    TargetKind::Linear => "linear".into(),
                },
            ),
            ("target_lag", self.synth.target_lag.to_string()),
            ("segments", self.synth.segments.to_string()),
            ("train_ratio", self.ratios.train.to_string()),
            ("val_ratio", self.ratios.val.to_string()),
            ("test_ratio", self.ratios.test.to_string()),
            ("stride", self.stride.to_string()),
            ("target", self.target.clone()),
            ("ridge_lambda", self.ridge_lambda.to_string()),
        ]
    }

    /// The pipeline spec for data with `sensors` columns.
    pub fn run_spec(&self, sensors: usize) -> RunSpec {
        RunSpec {
            model: ModelConfig {
                sensors,
                ..self.model.clone()
            },
            train: self.train.clone(),
            ratios: self.ratios,
            stride: self.stride,
        }
    }
}

/// Comma-separated positive integers; empty lists are rejected.
pub fn parse_list(flag: &str, s: &str) -> Result<Vec<usize>> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config(format!("{flag} needs at least one value")));
    }
    items
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{flag}: {p:?} is not a positive integer")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip_through_set() {
        let mut a = RunConfig::default();
        a.set("seed", "7").unwrap();
        a.set("groups", "2,3").unwrap();
        a.set("sensors", "5").unwrap();
        a.set("patience", "4").unwrap();
        a.set("target_kind", "linear").unwrap();
        let mut b = RunConfig::default();
        for (k, v) in a.pairs() {
            b.set(k, &v).unwrap();
        }
        assert_eq!(a.pairs(), b.pairs());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("windw", "3"), Err(Error::Config(_))));
        assert!(matches!(c.set("window", "x"), Err(Error::Config(_))));
        assert!(matches!(c.set("groups", "4,,4"), Err(Error::Config(_))));
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("--kernel", "3, 5,7").unwrap(), vec![3, 5, 7]);
        assert!(parse_list("--kernel", "").is_err());
        assert!(parse_list("--kernel", "3,0").is_err());
    }
}
