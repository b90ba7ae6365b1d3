//! Flat key-value pipeline configuration.
//!
//! One `key = value` pair per line; `#` lines are comments. Command
//! line `--set key=value` overrides file values. Unknown keys are
//! fatal: a typo should fail loudly, not silently fall back to a
//! default. Defaults for session handling depend on the dataset mode;
//! everything else has a mode-independent default.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use crate::diversity::MetricConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::ingest::SessionRules;
use crate::sampler::{SamplerConfig, WalkParams};
use crate::training::optimizer::Algorithm;
use crate::training::{OptimizerConfig, TrainConfig, WeightMode};
use crate::types::{DatasetMode, Relation, View};

/// Parsed but untyped configuration: file contents plus overrides.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    map: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
        Self::from_reader(std::io::BufReader::new(file), path)
    }

    pub fn from_reader(r: impl BufRead, path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display(), e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    no + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RawConfig { map })
    }

    /// Apply `key=value` overrides on top of the file contents.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for kv in overrides {
            let Some((key, value)) = kv.split_once('=') else {
                return Err(Error::Config(format!(
                    "override '{kv}' is not of the form key=value"
                )));
            };
            self.map
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    /// Resolve into a typed, validated configuration.
    pub fn build(&self) -> Result<PipelineConfig> {
        PipelineConfig::from_map(&self.map)
    }
}

/// Everything the pipeline commands need, fully defaulted.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: DatasetMode,
    pub views: Vec<View>,
    pub relations: Vec<Relation>,
    pub seed: u64,
    pub threads: usize,
    /// Raw interaction log; required by ingest only.
    pub input_log: Option<PathBuf>,
    /// Comma-separated column names for the log schema.
    pub input_columns: String,
    pub input_delimiter: char,
    /// Events at or after this timestamp become evaluation ground
    /// truth instead of training data.
    pub split_cutoff: Option<i64>,
    pub session: SessionRules,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
    pub metric: MetricConfig,
    /// Sessions per user counted as "recent" for the novelty metric.
    pub novelty_history_sessions: usize,
    pub out_dir: PathBuf,
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value '{value}' for {key}: expected true or false"
        ))),
    }
}

/// `none` disables an optional setting.
fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_as(key, value).map(Some)
    }
}

fn parse_delimiter(value: &str) -> Result<char> {
    match value {
        "tab" => Ok('\t'),
        "comma" => Ok(','),
        "space" => Ok(' '),
        v if v.chars().count() == 1 => Ok(v.chars().next().unwrap()),
        v => Err(Error::Config(format!(
            "bad input.delimiter '{v}': use tab, comma, space or a single character"
        ))),
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::from_map(&BTreeMap::new()).expect("defaults are valid")
    }
}

impl PipelineConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        // Mode first: session defaults and the default column list
        // depend on it.
        let mode: DatasetMode = match map.get("mode") {
            Some(v) => parse_as("mode", v)?,
            None => DatasetMode::Clicks,
        };
        let default_columns = match mode {
            DatasetMode::Clicks => "user_id,item_id,category_id,shop_id,timestamp,dwell_ms",
            DatasetMode::Ratings => "user_id,item_id,category_id,timestamp,rating",
        };
        let mut cfg = PipelineConfig {
            mode,
            views: vec![View::Item, View::Category],
            relations: vec![Relation::new(View::Item, View::Category)?],
            seed: 42,
            threads: 1,
            input_log: None,
            input_columns: default_columns.to_string(),
            input_delimiter: '\t',
            split_cutoff: None,
            session: match mode {
                DatasetMode::Clicks => SessionRules::clicks(),
                DatasetMode::Ratings => SessionRules::ratings(),
            },
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            optimizer: OptimizerConfig::default(),
            eval: EvalConfig::default(),
            metric: MetricConfig::default(),
            novelty_history_sessions: 5,
            out_dir: PathBuf::from("build"),
        };
        let mut walks_per_node: Option<usize> = None;
        let mut walk_length: Option<usize> = None;
        for (key, value) in map {
            match key.as_str() {
                "mode" => {}
                "views" => {
                    cfg.views = value
                        .split(',')
                        .map(|v| v.trim().parse())
                        .collect::<Result<_>>()?;
                }
                "relations" => {
                    cfg.relations = value
                        .split(',')
                        .map(|v| v.trim().parse())
                        .collect::<Result<_>>()?;
                }
                "seed" => cfg.seed = parse_as(key, value)?,
                "threads" => cfg.threads = parse_as(key, value)?,
                "input.log" => cfg.input_log = Some(PathBuf::from(value)),
                "input.columns" => cfg.input_columns = value.clone(),
                "input.delimiter" => cfg.input_delimiter = parse_delimiter(value)?,
                "split.cutoff" => cfg.split_cutoff = parse_opt(key, value)?,
                "session.min_dwell_ms" => cfg.session.min_dwell_ms = parse_as(key, value)?,
                "session.min_rating" => cfg.session.min_rating = parse_as(key, value)?,
                "session.idle_split_s" => cfg.session.idle_split_s = parse_as(key, value)?,
                "session.merge_gap_s" => cfg.session.merge_gap_s = parse_opt(key, value)?,
                "session.max_len" => cfg.session.max_len = parse_opt(key, value)?,
                "sampler.window" => cfg.sampler.window = parse_as(key, value)?,
                "sampler.negatives" => cfg.sampler.negatives_k = parse_as(key, value)?,
                "sampler.noise_power" => cfg.sampler.noise_power = parse_as(key, value)?,
                "sampler.batch_size" => cfg.sampler.batch_size = parse_as(key, value)?,
                "sampler.epochs" => cfg.sampler.epochs = parse_as(key, value)?,
                "sampler.inter_uniform" => cfg.sampler.inter_uniform = parse_bool(key, value)?,
                "sampler.walks_per_node" => walks_per_node = parse_opt(key, value)?,
                "sampler.walk_length" => walk_length = parse_opt(key, value)?,
                "train.dim" => cfg.train.dim = parse_as(key, value)?,
                "train.relational_dim" => cfg.train.relational_dim = parse_opt(key, value)?,
                "train.weighting" => {
                    cfg.train.weighting = match value.as_str() {
                        "adaptive" => WeightMode::Adaptive,
                        "static" => WeightMode::uniform(),
                        v => {
                            return Err(Error::Config(format!(
                                "bad train.weighting '{v}': expected adaptive or static"
                            )))
                        }
                    };
                }
                "train.floor_var" => cfg.train.floor_var = parse_as(key, value)?,
                "train.inter_log_sigmoid" => {
                    cfg.train.inter_log_sigmoid = parse_bool(key, value)?
                }
                "train.history_every" => cfg.train.history_every = parse_as(key, value)?,
                "opt.algorithm" => {
                    cfg.optimizer.algorithm = match value.as_str() {
                        "sgd" => Algorithm::Sgd,
                        "adam" => Algorithm::Adam,
                        v => {
                            return Err(Error::Config(format!(
                                "bad opt.algorithm '{v}': expected sgd or adam"
                            )))
                        }
                    };
                }
                "opt.learning_rate" => cfg.optimizer.learning_rate = parse_as(key, value)?,
                "opt.clip_norm" => cfg.optimizer.clip_norm = parse_as(key, value)?,
                "opt.beta1" => cfg.optimizer.beta1 = parse_as(key, value)?,
                "opt.beta2" => cfg.optimizer.beta2 = parse_as(key, value)?,
                "opt.epsilon" => cfg.optimizer.epsilon = parse_as(key, value)?,
                "eval.k" => cfg.eval.k = parse_as(key, value)?,
                "eval.trigger_window" => cfg.eval.trigger_window = parse_opt(key, value)?,
                "eval.exclude_seen" => cfg.eval.exclude_seen = parse_bool(key, value)?,
                "metric.margin" => cfg.metric.margin = parse_as(key, value)?,
                "metric.batch_size" => cfg.metric.batch_size = parse_as(key, value)?,
                "metric.epochs" => cfg.metric.epochs = parse_as(key, value)?,
                "metric.window" => cfg.metric.window = parse_as(key, value)?,
                "metric.negative_ratio" => cfg.metric.negative_ratio = parse_as(key, value)?,
                "novelty.history_sessions" => {
                    cfg.novelty_history_sessions = parse_as(key, value)?
                }
                "paths.out" => cfg.out_dir = PathBuf::from(value),
                other => {
                    return Err(Error::Config(format!("unknown config key '{other}'")));
                }
            }
        }
        match (walks_per_node, walk_length) {
            (None, None) => {}
            (Some(n), Some(l)) => {
                cfg.sampler.walks = Some(WalkParams {
                    walks_per_node: n,
                    walk_length: l,
                });
            }
            _ => {
                return Err(Error::Config(
                    "sampler.walks_per_node and sampler.walk_length must be set together"
                        .into(),
                ))
            }
        }
        cfg.train.threads = cfg.threads;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Config("views must not be empty".into()));
        }
        if !self.views.contains(&View::Item) {
            return Err(Error::Config("views must include item".into()));
        }
        for (i, v) in self.views.iter().enumerate() {
            if self.views[..i].contains(v) {
                return Err(Error::Config(format!("view {v} declared twice")));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            if self.relations[..i].contains(r) {
                return Err(Error::Config(format!("relation {r} declared twice")));
            }
            if !self.views.contains(&r.from) || !self.views.contains(&r.to) {
                return Err(Error::Config(format!(
                    "relation {r} references an undeclared view"
                )));
            }
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.novelty_history_sessions < 1 {
            return Err(Error::Config("novelty.history_sessions must be >= 1".into()));
        }
        self.session.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        self.optimizer.validate()?;
        self.eval.validate()?;
        self.metric.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn build(text: &str) -> Result<PipelineConfig> {
        let raw = RawConfig::from_reader(text.as_bytes(), &PathBuf::from("<test>"))?;
        raw.build()
    }

    #[test]
    fn empty_config_yields_defaults() {
        let cfg = build("").unwrap();
        assert_eq!(cfg.mode, DatasetMode::Clicks);
        assert_eq!(cfg.views, vec![View::Item, View::Category]);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.sampler.batch_size, 2048);
        assert_eq!(cfg.sampler.epochs, 10);
        assert_eq!(cfg.sampler.negatives_k, 10);
        assert_eq!(cfg.sampler.window, 9);
        assert_eq!(cfg.train.dim, 64);
        assert_eq!(cfg.train.floor_var, 0.05);
        assert_eq!(cfg.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.optimizer.clip_norm, 1.0);
        assert_eq!(cfg.eval.k, 50);
        assert_eq!(cfg.metric.margin, 1.0);
        assert_eq!(cfg.session.min_dwell_ms, 2000);
        assert_eq!(cfg.session.merge_gap_s, Some(1800));
    }

    #[test]
    fn ratings_mode_switches_session_defaults() {
        let cfg = build("mode = ratings").unwrap();
        assert_eq!(cfg.session.min_rating, 3.0);
        assert_eq!(cfg.session.merge_gap_s, None);
        assert_eq!(cfg.session.max_len, Some(50));
        assert!(cfg.input_columns.contains("rating"));
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let cfg = build(
            "# a comment\n\n  seed =  7\nthreads=3\n  # another\ntrain.dim = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.threads, 3);
        assert_eq!(cfg.train.threads, 3);
        assert_eq!(cfg.train.dim, 16);
    }

    #[test]
    fn unknown_key_is_fatal() {
        let err = build("sampler.windw = 9").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("sampler.windw"));
    }

    #[test]
    fn three_view_declaration() {
        let cfg = build(
            "views = item,category,shop\nrelations = item-category,item-shop\n",
        )
        .unwrap();
        assert_eq!(cfg.views.len(), 3);
        assert_eq!(cfg.relations.len(), 2);
    }

    #[test]
    fn relation_to_undeclared_view_is_rejected() {
        let err = build("views = item,category\nrelations = item-shop\n").unwrap_err();
        assert!(err.to_string().contains("undeclared view"));
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut raw =
            RawConfig::from_reader("seed = 1\n".as_bytes(), &PathBuf::from("<test>")).unwrap();
        raw.apply_overrides(&["seed=9".to_string(), "eval.k=10".to_string()])
            .unwrap();
        let cfg = raw.build().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.eval.k, 10);
        assert!(raw
            .apply_overrides(&["nonsense".to_string()])
            .is_err());
    }

    #[test]
    fn optional_values_accept_none() {
        let cfg = build(
            "session.merge_gap_s = none\nsession.max_len = 10\neval.trigger_window = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.session.merge_gap_s, None);
        assert_eq!(cfg.session.max_len, Some(10));
        assert_eq!(cfg.eval.trigger_window, Some(4));
    }

    #[test]
    fn walk_params_must_come_in_pairs() {
        assert!(build("sampler.walks_per_node = 5").is_err());
        let cfg =
            build("sampler.walks_per_node = 5\nsampler.walk_length = 11\n").unwrap();
        assert_eq!(
            cfg.sampler.walks,
            Some(WalkParams {
                walks_per_node: 5,
                walk_length: 11
            })
        );
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = build("threads = many").unwrap_err();
        assert!(err.to_string().contains("threads"));
        let err = build("train.weighting = magic").unwrap_err();
        assert!(err.to_string().contains("train.weighting"));
        let err = build("input.delimiter = ab").unwrap_err();
        assert!(err.to_string().contains("input.delimiter"));
    }

    #[test]
    fn delimiter_spellings() {
        assert_eq!(build("input.delimiter = tab").unwrap().input_delimiter, '\t');
        assert_eq!(build("input.delimiter = comma").unwrap().input_delimiter, ',');
        assert_eq!(build("input.delimiter = |").unwrap().input_delimiter, '|');
    }
}
