//! Plain-text run configuration: `key=value` lines, `#` comments, unknown
//! keys rejected, missing keys take the documented defaults.

use std::path::Path;

use geofuse_core::fcn::FcnConfig;
use geofuse_core::fusion::ConstraintThresholds;
use geofuse_core::pso::SwarmConfig;
use geofuse_core::raster::Modality;
use geofuse_core::{Error, Result};

/// Which scene portion an evaluation scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    All,
    Train,
    Val,
    Test,
}

impl EvalSplit {
    fn parse(s: &str) -> Result<EvalSplit> {
        match s {
            "all" => Ok(EvalSplit::All),
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "test" => Ok(EvalSplit::Test),
            other => Err(Error::InvalidConfig(format!(
                "eval_split must be all|train|val|test, got '{other}'"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::All => "all",
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
        }
    }
}

/// Union of model, split, swarm, threshold and budget settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Modality,
    pub num_classes: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub l1: f64,
    pub seed: u64,

    pub train_frac: f64,
    pub val_frac: f64,
    pub denoise: bool,
    pub dataset_label: String,
    pub align_tolerance: f64,
    pub eval_split: EvalSplit,

    pub swarm_particles: usize,
    pub swarm_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub w_max: f64,
    pub w_min: f64,
    pub convergence_eps: f64,
    pub patience: usize,
    pub v_clamp_frac: f64,
    pub lambda_p: f64,
    pub tune_space: Vec<String>,
    pub tune_epochs: usize,
    pub tune_train_tiles: usize,
    pub tune_val_tiles: usize,

    pub budget_seconds: Option<f64>,
    pub budget_macs: Option<u64>,

    pub thresholds: ConstraintThresholds,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let fcn = FcnConfig::default();
        RunConfig {
            input: Modality::Fused,
            num_classes: fcn.num_classes,
            base_filters: fcn.base_filters,
            depth: fcn.depth,
            learning_rate: fcn.learning_rate,
            batch_size: fcn.batch_size,
            epochs: fcn.epochs,
            l2: fcn.l2,
            l1: fcn.l1,
            seed: fcn.seed,
            train_frac: 0.70,
            val_frac: 0.15,
            denoise: false,
            dataset_label: "synthetic".into(),
            align_tolerance: f64::INFINITY,
            eval_split: EvalSplit::All,
            swarm_particles: 10,
            swarm_iters: 15,
            c1: 1.5,
            c2: 1.5,
            w_max: 0.9,
            w_min: 0.4,
            convergence_eps: 1e-6,
            patience: 10,
            v_clamp_frac: 0.2,
            lambda_p: 0.0,
            tune_space: vec!["learning_rate".into(), "l2".into()],
            tune_epochs: 3,
            tune_train_tiles: 20,
            tune_val_tiles: 10,
            budget_seconds: None,
            budget_macs: None,
            thresholds: ConstraintThresholds::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::InvalidConfig(format!(
            "key '{key}': expected a boolean, got '{other}'"
        ))),
    }
}

impl RunConfig {
    /// Apply one `key = value` pair; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = value.parse()?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "base_filters" => self.base_filters = parse_num(key, value)?,
            "depth" => self.depth = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "l2" => self.l2 = parse_num(key, value)?,
            "l1" => self.l1 = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "train_frac" => self.train_frac = parse_num(key, value)?,
            "val_frac" => self.val_frac = parse_num(key, value)?,
            "denoise" => self.denoise = parse_bool(key, value)?,
            "dataset_label" => self.dataset_label = value.to_string(),
            "align_tolerance" => self.align_tolerance = parse_num(key, value)?,
            "eval_split" => self.eval_split = EvalSplit::parse(value)?,
            "swarm_particles" => self.swarm_particles = parse_num(key, value)?,
            "swarm_iters" => self.swarm_iters = parse_num(key, value)?,
            "c1" => self.c1 = parse_num(key, value)?,
            "c2" => self.c2 = parse_num(key, value)?,
            "w_max" => self.w_max = parse_num(key, value)?,
            "w_min" => self.w_min = parse_num(key, value)?,
            "convergence_eps" => self.convergence_eps = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "v_clamp_frac" => self.v_clamp_frac = parse_num(key, value)?,
            "lambda_p" => self.lambda_p = parse_num(key, value)?,
            "tune_space" => {
                self.tune_space = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if self.tune_space.is_empty() {
                    return Err(Error::InvalidConfig("tune_space must name at least one dimension".into()));
                }
            }
            "tune_epochs" => self.tune_epochs = parse_num(key, value)?,
            "tune_train_tiles" => self.tune_train_tiles = parse_num(key, value)?,
            "tune_val_tiles" => self.tune_val_tiles = parse_num(key, value)?,
            "budget_seconds" => {
                self.budget_seconds = match value {
                    "inf" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "budget_macs" => {
                self.budget_macs = match value {
                    "inf" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "threshold_completeness" => self.thresholds.completeness_min = parse_num(key, value)?,
            "threshold_consistency" => self.thresholds.consistency_max = parse_num(key, value)?,
            "threshold_noise" => self.thresholds.noise_max = parse_num(key, value)?,
            "threshold_convergence" => self.thresholds.convergence_max = parse_num(key, value)?,
            "threshold_grad_norm" => self.thresholds.grad_norm_max = parse_num(key, value)?,
            "threshold_accuracy_min" => self.thresholds.accuracy_min = parse_num(key, value)?,
            "threshold_test_error" => self.thresholds.test_error_max = parse_num(key, value)?,
            "threshold_reg_bound" => self.thresholds.reg_bound = parse_num(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            config
                .apply(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.to_fcn_config(self.input_channels_hint()).validate()?;
        self.to_swarm_config().validate()?;
        self.thresholds.validate()?;
        if !(self.train_frac >= 0.0 && self.val_frac >= 0.0 && self.train_frac + self.val_frac <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "train_frac {} + val_frac {} must be non-negative and sum to at most 1",
                self.train_frac, self.val_frac
            )));
        }
        if !(self.align_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("align_tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Channel count implied by the input modality for the synthetic scenes.
    pub fn input_channels_hint(&self) -> usize {
        match self.input {
            Modality::Lidar | Modality::Sar => 1,
            Modality::Optical => 3,
            Modality::Fused => 5,
        }
    }

    pub fn to_fcn_config(&self, in_channels: usize) -> FcnConfig {
        FcnConfig {
            in_channels,
            num_classes: self.num_classes,
            base_filters: self.base_filters,
            depth: self.depth,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            l2: self.l2,
            l1: self.l1,
            seed: self.seed,
        }
    }

    pub fn to_swarm_config(&self) -> SwarmConfig {
        SwarmConfig {
            n_particles: self.swarm_particles,
            max_iters: self.swarm_iters,
            c1: self.c1,
            c2: self.c2,
            w_max: self.w_max,
            w_min: self.w_min,
            convergence_eps: self.convergence_eps,
            patience: self.patience,
            v_clamp_frac: self.v_clamp_frac,
            seed: self.seed,
            cost_penalty: self.lambda_p,
        }
    }

    /// Full resolved dump, one pair per line, stable order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| kv.push((k.to_string(), v));
        push("input", self.input.name().into());
        push("num_classes", self.num_classes.to_string());
        push("base_filters", self.base_filters.to_string());
        push("depth", self.depth.to_string());
        push("learning_rate", format!("{}", self.learning_rate));
        push("batch_size", self.batch_size.to_string());
        push("epochs", self.epochs.to_string());
        push("l2", format!("{}", self.l2));
        push("l1", format!("{}", self.l1));
        push("seed", self.seed.to_string());
        push("train_frac", format!("{}", self.train_frac));
        push("val_frac", format!("{}", self.val_frac));
        push("denoise", self.denoise.to_string());
        push("dataset_label", self.dataset_label.clone());
        push("align_tolerance", format!("{}", self.align_tolerance));
        push("eval_split", self.eval_split.name().into());
        push("swarm_particles", self.swarm_particles.to_string());
        push("swarm_iters", self.swarm_iters.to_string());
        push("c1", format!("{}", self.c1));
        push("c2", format!("{}", self.c2));
        push("w_max", format!("{}", self.w_max));
        push("w_min", format!("{}", self.w_min));
        push("convergence_eps", format!("{}", self.convergence_eps));
        push("patience", self.patience.to_string());
        push("v_clamp_frac", format!("{}", self.v_clamp_frac));
        push("lambda_p", format!("{}", self.lambda_p));
        push("tune_space", self.tune_space.join(","));
        push("tune_epochs", self.tune_epochs.to_string());
        push("tune_train_tiles", self.tune_train_tiles.to_string());
        push("tune_val_tiles", self.tune_val_tiles.to_string());
        push(
            "budget_seconds",
            self.budget_seconds.map_or("inf".into(), |v| format!("{v}")),
        );
        push(
            "budget_macs",
            self.budget_macs.map_or("inf".into(), |v| v.to_string()),
        );
        push("threshold_completeness", format!("{}", self.thresholds.completeness_min));
        push("threshold_consistency", format!("{}", self.thresholds.consistency_max));
        push("threshold_noise", format!("{}", self.thresholds.noise_max));
        push("threshold_convergence", format!("{}", self.thresholds.convergence_max));
        push("threshold_grad_norm", format!("{}", self.thresholds.grad_norm_max));
        push("threshold_accuracy_min", format!("{}", self.thresholds.accuracy_min));
        push("threshold_test_error", format!("{}", self.thresholds.test_error_max));
        push("threshold_reg_bound", format!("{}", self.thresholds.reg_bound));
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_kv() {
        let config = RunConfig::default();
        let mut rebuilt = RunConfig::default();
        for (k, v) in config.to_kv() {
            rebuilt.apply(&k, &v).unwrap();
        }
        assert_eq!(config, rebuilt);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let text = "\n# a comment\nlearning_rate = 0.5  # trailing comment\nseed=7\ninput=lidar\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.learning_rate, 0.5);
        assert_eq!(config.seed, 7);
        assert_eq!(config.input, Modality::Lidar);
        assert_eq!(config.epochs, RunConfig::default().epochs);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            RunConfig::parse("nonsense = 1\n"),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert!(RunConfig::parse("just some words\n").is_err());
        assert!(RunConfig::parse("learning_rate: 0.5\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("learning_rate = snail\n").is_err());
        assert!(RunConfig::parse("learning_rate = -1\n").is_err());
        assert!(RunConfig::parse("train_frac = 0.9\nval_frac = 0.3\n").is_err());
        assert!(RunConfig::parse("input = radar\n").is_err());
        assert!(RunConfig::parse("denoise = maybe\n").is_err());
    }

    #[test]
    fn budget_keys_accept_inf() {
        let config = RunConfig::parse("budget_seconds = inf\nbudget_macs = 1000\n").unwrap();
        assert_eq!(config.budget_seconds, None);
        assert_eq!(config.budget_macs, Some(1000));
    }
}
