//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rdner::crf::TrainConfig;
use rdner::embeddings::OovPolicy;
use rdner::neural::{FitConfig, HeadKind};

/// Directory searched for relative config paths that do not exist as given.
pub const CONFIG_DIR_ENV: &str = "RDNER_CONFIG_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Crf,
    BiLstm,
    BiLstmCrf,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Crf => "crf",
            ModelKind::BiLstm => "bilstm",
            ModelKind::BiLstmCrf => "bilstm-crf",
        }
    }

    pub fn head(self) -> Option<HeadKind> {
        match self {
            ModelKind::Crf => None,
            ModelKind::BiLstm => Some(HeadKind::Softmax),
            ModelKind::BiLstmCrf => Some(HeadKind::Crf),
        }
    }
}

impl FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crf" => Ok(ModelKind::Crf),
            "bilstm" => Ok(ModelKind::BiLstm),
            "bilstm-crf" => Ok(ModelKind::BiLstmCrf),
            other => bail!("unknown model_kind `{other}` (expected crf, bilstm or bilstm-crf)"),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    /// Uniform random table over the training vocabulary.
    Random { dim: usize },
    /// GloVe or word2vec text file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSettings {
    Crf(TrainConfig),
    Neural {
        fit: FitConfig,
        embedding: EmbeddingSource,
        train_embeddings: bool,
        oov_policy: OovPolicy,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_kind: ModelKind,
    pub train: PathBuf,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Model file; the manifest and history are written next to it.
    pub output: PathBuf,
    pub seed: u64,
    pub settings: ModelSettings,
    /// Every key as written, for the manifest.
    pub echo: BTreeMap<String, String>,
}

const COMMON_KEYS: &[&str] = &["model_kind", "train", "validation", "test", "output", "seed"];
const CRF_KEYS: &[&str] = &[
    "l2",
    "l1",
    "max_iterations",
    "convergence_tol",
    "convergence_period",
    "lbfgs_memory",
    "window_radius",
];
const NEURAL_KEYS: &[&str] = &[
    "embedding",
    "embedding_dim",
    "train_embeddings",
    "oov_policy",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "max_epochs",
    "patience",
    "batch_size",
    "hidden_dim",
    "gradient_clip_norm",
    "dropout",
];

/// Locate a config file: as given, else under `$RDNER_CONFIG_DIR`.
pub fn resolve_config_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match std::env::var_os(CONFIG_DIR_ENV) {
        Some(dir) => Path::new(&dir).join(path),
        None => path.to_path_buf(),
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", idx + 1))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), (idx + 1, v.trim().to_string())).is_some() {
            bail!("line {}: duplicate key `{key}`", idx + 1);
        }
    }
    Ok(out)
}

struct Values {
    map: BTreeMap<String, (usize, String)>,
}

impl Values {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("line {line}: bad value for `{key}`: {e}")),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parse and validate; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let map = parse_pairs(text)?;
        let echo = map.iter().map(|(k, (_, v))| (k.clone(), v.clone())).collect();
        let unknown: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| !COMMON_KEYS.contains(k) && !CRF_KEYS.contains(k) && !NEURAL_KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let mut values = Values { map };
        let model_kind: ModelKind = values
            .take("model_kind")?
            .ok_or_else(|| anyhow!("missing required key `model_kind`"))?;
        let foreign = if model_kind == ModelKind::Crf { NEURAL_KEYS } else { CRF_KEYS };
        let misplaced: Vec<&str> = foreign
            .iter()
            .copied()
            .filter(|k| values.map.contains_key(*k))
            .collect();
        if !misplaced.is_empty() {
            bail!("keys not valid for model_kind {model_kind}: {}", misplaced.join(", "));
        }

        let path = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let train = path(
            values
                .take::<String>("train")?
                .ok_or_else(|| anyhow!("missing required key `train`"))?,
        );
        let output = path(
            values
                .take::<String>("output")?
                .ok_or_else(|| anyhow!("missing required key `output`"))?,
        );
        let validation = values.take::<String>("validation")?.map(path);
        let test = values.take::<String>("test")?.map(path);
        let seed = values.take("seed")?.unwrap_or(0u64);

        let settings = if model_kind == ModelKind::Crf {
            let mut c = TrainConfig::default();
            values.set("l2", &mut c.l2)?;
            values.set("l1", &mut c.l1)?;
            values.set("max_iterations", &mut c.max_iterations)?;
            values.set("convergence_tol", &mut c.convergence_tol)?;
            values.set("convergence_period", &mut c.convergence_period)?;
            values.set("lbfgs_memory", &mut c.lbfgs_memory)?;
            values.set("window_radius", &mut c.window_radius)?;
            c.validate()?;
            ModelSettings::Crf(c)
        } else {
            let mut f = FitConfig {
                seed,
                ..Default::default()
            };
            values.set("learning_rate", &mut f.learning_rate)?;
            values.set("beta1", &mut f.beta1)?;
            values.set("beta2", &mut f.beta2)?;
            values.set("epsilon", &mut f.epsilon)?;
            values.set("max_epochs", &mut f.max_epochs)?;
            values.set("patience", &mut f.patience)?;
            values.set("batch_size", &mut f.batch_size)?;
            values.set("hidden_dim", &mut f.hidden_dim)?;
            values.set("gradient_clip_norm", &mut f.gradient_clip_norm)?;
            values.set("dropout", &mut f.dropout)?;
            f.validate()?;
            let dim: Option<usize> = values.take("embedding_dim")?;
            let embedding = match values.take::<String>("embedding")?.as_deref() {
                None | Some("random") => EmbeddingSource::Random {
                    dim: dim.unwrap_or(100),
                },
                Some(p) => {
                    if dim.is_some() {
                        bail!("`embedding_dim` only applies to random embeddings");
                    }
                    EmbeddingSource::File(path(p.to_string()))
                }
            };
            if matches!(embedding, EmbeddingSource::Random { dim: 0 }) {
                bail!("embedding_dim must be positive");
            }
            let random = matches!(embedding, EmbeddingSource::Random { .. });
            let train_embeddings = values.take("train_embeddings")?.unwrap_or(random);
            let oov_policy = values
                .take::<OovPolicy>("oov_policy")?
                .unwrap_or_default();
            ModelSettings::Neural {
                fit: f,
                embedding,
                train_embeddings,
                oov_policy,
            }
        };
        debug_assert!(values.map.is_empty(), "unconsumed keys {:?}", values.map);

        let config = RunConfig {
            model_kind,
            train,
            validation,
            test,
            output,
            seed,
            settings,
            echo,
        };
        config.check_files()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path = resolve_config_path(path);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    fn check_files(&self) -> Result<()> {
        let mut required = vec![("train", &self.train)];
        if let Some(v) = &self.validation {
            required.push(("validation", v));
        }
        if let Some(t) = &self.test {
            required.push(("test", t));
        }
        if let ModelSettings::Neural {
            embedding: EmbeddingSource::File(p),
            ..
        } = &self.settings
        {
            required.push(("embedding", p));
        }
        for (key, p) in required {
            if !p.is_file() {
                bail!("`{key}` file not found: {}", p.display());
            }
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        sibling(&self.output, "manifest.json")
    }

    pub fn history_path(&self) -> PathBuf {
        sibling(&self.output, "history.csv")
    }
}

/// `dir/model.bin` → `dir/model.bin.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}
