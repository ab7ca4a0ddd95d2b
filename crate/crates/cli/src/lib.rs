//! Pipeline commands behind the `rdner` binary.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rdner::brat::{load_brat_dir, resolve_overlaps, BratOptions, OffsetUnit};
use rdner::container::{peek_kind, write_atomic};
use rdner::crf::{self, CrfModel};
use rdner::embeddings::{load_text_format, random_table};
use rdner::iob::{encode, IobError};
use rdner::metrics::{entity_level, render, token_level, EvalReport, ReportFormat};
use rdner::neural::{fit, fit_with_validator, BiLstmTagger, History};
use rdner::synthetic::{write_corpus, SyntheticConfig};
use rdner::tokenizer::{ingest_conll, tokenize_document, write_conll, ConllSentence};
use rdner::{EntityType, IobTag, Sentence, TaggedSentence};
use serde_json::json;

use config::{EmbeddingSource, ModelSettings, RunConfig};

#[derive(Debug, Clone, Default)]
pub struct ConvertOptions {
    pub lenient: bool,
    pub skip_unpaired: bool,
    pub utf16_offsets: bool,
    /// `(label in .ann files, entity type)`.
    pub aliases: Vec<(String, EntityType)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConvertSummary {
    pub documents: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub entities: BTreeMap<EntityType, usize>,
    /// Annotations dropped by overlap resolution.
    pub overlaps_dropped: usize,
    /// Discontinuous annotations tagged as one mention.
    pub discontinuous_flattened: usize,
    /// Annotations dropped because they share a token with an earlier one.
    pub token_conflicts: usize,
    pub warnings: usize,
    pub unpaired: Vec<PathBuf>,
}

impl ConvertSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "documents\t{}", self.documents).unwrap();
        writeln!(out, "sentences\t{}", self.sentences).unwrap();
        writeln!(out, "tokens\t{}", self.tokens).unwrap();
        for (t, n) in &self.entities {
            writeln!(out, "entities[{t}]\t{n}").unwrap();
        }
        writeln!(out, "overlaps_dropped\t{}", self.overlaps_dropped).unwrap();
        writeln!(out, "discontinuous_flattened\t{}", self.discontinuous_flattened).unwrap();
        writeln!(out, "token_conflicts\t{}", self.token_conflicts).unwrap();
        writeln!(out, "warnings\t{}", self.warnings).unwrap();
        if !self.unpaired.is_empty() {
            writeln!(out, "skipped_unpaired\t{}", self.unpaired.len()).unwrap();
        }
        out
    }
}

/// Brat directory → CoNLL with `surface, lemma, pos, tag` columns.
pub fn convert(input: &Path, output: &Path, options: &ConvertOptions) -> Result<ConvertSummary> {
    let brat = BratOptions {
        lenient: options.lenient,
        offset_unit: if options.utf16_offsets {
            OffsetUnit::Utf16
        } else {
            OffsetUnit::CodePoint
        },
        aliases: options.aliases.iter().cloned().collect(),
    };
    let loaded = load_brat_dir(input, &brat).with_context(|| format!("loading {}", input.display()))?;
    if !loaded.unpaired.is_empty() && !options.skip_unpaired {
        let list: Vec<String> = loaded.unpaired.iter().map(|p| p.display().to_string()).collect();
        bail!("unpaired files (use --skip-unpaired to ignore):\n  {}", list.join("\n  "));
    }
    if loaded.documents.is_empty() {
        bail!("no .txt/.ann pairs in {}", input.display());
    }
    for (doc, w) in &loaded.warnings {
        eprintln!("warning: {doc} line {}: {}", w.line, w.message);
    }

    let mut summary = ConvertSummary {
        documents: loaded.documents.len(),
        warnings: loaded.warnings.len(),
        unpaired: loaded.unpaired.clone(),
        entities: EntityType::ALL.iter().map(|&t| (t, 0)).collect(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for doc in loaded.documents {
        let resolved = resolve_overlaps(doc);
        summary.overlaps_dropped += resolved.log.len();
        let doc = resolved.document;
        let mut entities = doc.entities.clone();
        for sentence in tokenize_document(doc.text()) {
            let tagged = loop {
                match encode(&sentence, &entities) {
                    Ok(t) => break t,
                    Err(IobError::TokenConflict { second, .. }) => {
                        summary.token_conflicts += 1;
                        entities.retain(|e| e.id != second);
                    }
                }
            };
            summary.sentences += 1;
            summary.tokens += sentence.len();
            rows.push(ConllSentence {
                doc_id: Some(doc.doc_id.clone()),
                comments: Vec::new(),
                tags: Some(tagged.tags.iter().map(ToString::to_string).collect()),
                sentence,
            });
        }
        for e in &entities {
            *summary.entities.entry(e.entity_type).or_default() += 1;
            if e.is_discontinuous() {
                summary.discontinuous_flattened += 1;
            }
        }
    }
    write_atomic(output, write_conll(&rows).as_bytes())?;
    Ok(summary)
}

/// Read a CoNLL file; every sentence must carry tags from the 9-label set.
/// Unknown labels are reported together.
pub fn read_tagged(path: &Path) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = ingest_conll(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut unknown = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let tags = row
            .tags
            .ok_or_else(|| anyhow!("{} has no tag column", path.display()))?;
        let parsed: Vec<IobTag> = tags
            .iter()
            .filter_map(|t| match t.parse() {
                Ok(tag) => Some(tag),
                Err(_) => {
                    unknown.insert(t.clone());
                    None
                }
            })
            .collect();
        out.push(TaggedSentence {
            tokens: row.sentence.tokens,
            tags: parsed,
        });
    }
    if !unknown.is_empty() {
        let list: Vec<String> = unknown.into_iter().collect();
        bail!(
            "labels in {} are not in the model label set: {}",
            path.display(),
            list.join(", ")
        );
    }
    Ok(out)
}

/// A loaded model of either family.
pub enum Tagger {
    Crf(Box<CrfModel>),
    Neural(Box<BiLstmTagger>),
}

impl Tagger {
    pub fn load(path: &Path) -> Result<Self> {
        let kind = peek_kind(path).with_context(|| format!("reading model {}", path.display()))?;
        Ok(match kind.as_str() {
            rdner::crf::MODEL_KIND => Tagger::Crf(Box::new(CrfModel::load(path)?)),
            "bilstm" | "bilstm-crf" => Tagger::Neural(Box::new(BiLstmTagger::load(path)?)),
            other => bail!("unknown model kind `{other}` in {}", path.display()),
        })
    }

    /// IOB2-constrained decoding where the model has transitions.
    pub fn tag(&self, sentence: &Sentence) -> Result<Vec<IobTag>> {
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        Ok(match self {
            Tagger::Crf(m) => m.tag(sentence, true)?,
            Tagger::Neural(n) => n.predict(&sentence.tokens, true)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub manifest_path: PathBuf,
    pub history_path: PathBuf,
    pub manifest: serde_json::Value,
}

fn read_split(path: &Option<PathBuf>) -> Result<Vec<TaggedSentence>> {
    match path {
        Some(p) => read_tagged(p),
        None => Ok(Vec::new()),
    }
}

fn entity_scores(tagger: &Tagger, data: &[TaggedSentence]) -> Result<serde_json::Value> {
    let gold: Vec<Vec<IobTag>> = data.iter().map(|s| s.tags.clone()).collect();
    let pred = data
        .iter()
        .map(|s| tagger.tag(&s.sentence()))
        .collect::<Result<Vec<_>>>()?;
    let r = entity_level(&gold, &pred)?;
    Ok(json!({
        "entity_micro_precision": r.micro.precision,
        "entity_micro_recall": r.micro.recall,
        "entity_micro_f1": r.micro.f1,
        "entity_macro_f1": r.macro_avg.f1,
    }))
}

/// Train as configured. `validator`, when given, replaces the validation
/// loss that drives early stopping of neural models.
pub fn train(config: &RunConfig, validator: Option<&mut dyn FnMut(&BiLstmTagger) -> f64>) -> Result<TrainOutcome> {
    let started = Instant::now();
    let train_data = read_tagged(&config.train)?;
    let validation = read_split(&config.validation)?;
    let test = read_split(&config.test)?;
    if train_data.is_empty() {
        bail!("{} holds no sentences", config.train.display());
    }
    let load_secs = started.elapsed().as_secs_f64();

    let fit_started = Instant::now();
    let (tagger, history_csv, details) = match &config.settings {
        ModelSettings::Crf(c) => {
            let mut data = train_data.clone();
            data.extend(validation.iter().cloned());
            let (model, trace) = crf::train_with_trace(&data, c)?;
            let mut csv = String::from("iteration,objective\n");
            for (i, v) in trace.objective.iter().enumerate() {
                writeln!(csv, "{i},{v}").unwrap();
            }
            let details = json!({
                "iterations": trace.iterations,
                "termination": format!("{:?}", trace.termination),
                "num_features": trace.num_features,
                "final_objective": trace.objective.last(),
                "training_sentences": data.len(),
            });
            (Tagger::Crf(Box::new(model)), csv, details)
        }
        ModelSettings::Neural {
            fit: fit_config,
            embedding,
            train_embeddings,
            oov_policy,
        } => {
            let table = match embedding {
                EmbeddingSource::File(p) => load_text_format(p)
                    .with_context(|| format!("loading embeddings {}", p.display()))?,
                EmbeddingSource::Random { dim } => {
                    let mut vocab: Vec<String> = Vec::new();
                    let mut seen = BTreeSet::new();
                    for s in train_data.iter().chain(&validation) {
                        for t in &s.tokens {
                            if seen.insert(t.surface.clone()) {
                                vocab.push(t.surface.clone());
                            }
                        }
                    }
                    random_table(&vocab, *dim, config.seed)?
                }
            }
            .with_oov(*oov_policy, config.seed);
            let head = config.model_kind.head().expect("neural kind");
            let mut tagger = BiLstmTagger::new(table, *train_embeddings, fit_config.hidden_dim, head, config.seed);
            let history: History = match validator {
                Some(v) => fit_with_validator(&mut tagger, &train_data, fit_config, v)?,
                None => fit(&mut tagger, &train_data, &validation, fit_config)?,
            };
            let details = json!({
                "best_epoch": history.best_epoch,
                "stopped_epoch": history.stopped_epoch,
                "embedding_oov_rate": tagger.embedding.oov_rate(),
            });
            (Tagger::Neural(Box::new(tagger)), history.to_csv(), details)
        }
    };
    let fit_secs = fit_started.elapsed().as_secs_f64();

    match &tagger {
        Tagger::Crf(m) => m.save(&config.output)?,
        Tagger::Neural(n) => n.save(&config.output)?,
    }
    let history_path = config.history_path();
    write_atomic(&history_path, history_csv.as_bytes())?;

    let mut metrics = serde_json::Map::new();
    if !validation.is_empty() {
        metrics.insert("validation".into(), entity_scores(&tagger, &validation)?);
    }
    if !test.is_empty() {
        metrics.insert("test".into(), entity_scores(&tagger, &test)?);
    }
    let manifest = json!({
        "model_kind": config.model_kind.as_str(),
        "model": config.output.display().to_string(),
        "seed": config.seed,
        "config": config.echo,
        "training": details,
        "durations_secs": {
            "load": load_secs,
            "fit": fit_secs,
            "total": started.elapsed().as_secs_f64(),
        },
        "final_metrics": metrics,
    });
    let manifest_path = config.manifest_path();
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(TrainOutcome {
        model_path: config.output.clone(),
        manifest_path,
        history_path,
        manifest,
    })
}

/// Tag every sentence of a CoNLL file (an existing tag column is replaced).
pub fn predict(model: &Path, input: &Path) -> Result<String> {
    let tagger = Tagger::load(model)?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut rows = ingest_conll(&text).with_context(|| format!("parsing {}", input.display()))?;
    for row in &mut rows {
        let tags = tagger.tag(&row.sentence)?;
        row.tags = Some(tags.iter().map(ToString::to_string).collect());
    }
    Ok(write_conll(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Token,
    Entity,
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "token" => Ok(Level::Token),
            "entity" => Ok(Level::Entity),
            other => Err(format!("unknown level `{other}` (expected token or entity)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub rendered: String,
    /// `(metric, value, threshold)` for every `--min` that was not met.
    pub failures: Vec<(String, f64, f64)>,
}

/// Parse `metric=value`.
pub fn parse_threshold(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected metric=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("bad threshold in `{s}`"))?;
    Ok((k.trim().to_string(), v))
}

pub fn evaluate(
    model: &Path,
    data: &Path,
    level: Level,
    format: ReportFormat,
    thresholds: &[(String, f64)],
) -> Result<Evaluation> {
    let tagger = Tagger::load(model)?;
    let gold_data = read_tagged(data)?;
    let gold: Vec<Vec<IobTag>> = gold_data.iter().map(|s| s.tags.clone()).collect();
    let pred = gold_data
        .iter()
        .map(|s| tagger.tag(&s.sentence()))
        .collect::<Result<Vec<_>>>()?;
    let report = match level {
        Level::Token => token_level(&gold, &pred)?,
        Level::Entity => entity_level(&gold, &pred)?,
    };
    let mut failures = Vec::new();
    for (name, min) in thresholds {
        let value = report
            .metric(name)
            .ok_or_else(|| anyhow!("unknown metric `{name}` for this report"))?;
        if value < *min {
            failures.push((name.clone(), value, *min));
        }
    }
    Ok(Evaluation {
        rendered: render(&report, format),
        report,
        failures,
    })
}

pub fn gen_synthetic(config: &SyntheticConfig, out: &Path) -> Result<usize> {
    if config.size == 0 {
        bail!("size must be at least 1");
    }
    for (name, f) in [
        ("discontinuous fraction", config.discontinuous_fraction),
        ("overlap fraction", config.overlap_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            bail!("{name} must lie in [0, 1]");
        }
    }
    write_corpus(config, out).with_context(|| format!("writing {}", out.display()))
}

/// Parse `LABEL=TYPE` for `--alias`.
pub fn parse_alias(s: &str) -> Result<(String, EntityType), String> {
    let (label, ty) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LABEL=TYPE, got `{s}`"))?;
    let ty: EntityType = ty.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((label.trim().to_string(), ty))
}

/// Load the config at `path` and train.
pub fn train_from_path(path: &Path) -> Result<TrainOutcome> {
    let config = RunConfig::load(path)?;
    train(&config, None)
}
