//! File formats: JSONL corpora and splits, block caches, checkpoints, logs
//! and analysis outputs.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use misc_core::checkpoint::Checkpoint;
use misc_core::commonsense::{BlockCache, CacheRecord};
use misc_core::corpus::Dialogue;
use misc_core::metrics::StageHistogram;
use misc_core::model::{ModelConfig, SupportModel};
use misc_core::strategy::StrategyId;
use misc_core::train::LogRow;
use misc_core::vocab::Vocabulary;

/// Reads one JSON value per non-blank line. Errors name the file and the
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| misc_core::Error::Schema {
            line: Some(i + 1),
            message: format!("{}: {e}", path.display()),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Dialogues, validated and whitespace-normalized.
pub fn read_dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    let raw: Vec<Dialogue> = read_jsonl(path)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, d)| {
            d.normalized()
                .map_err(|e| anyhow!("{}: dialogue {}: {e}", path.display(), i + 1))
        })
        .collect()
}

pub fn read_cache(path: &Path) -> Result<BlockCache> {
    let records: Vec<CacheRecord> = read_jsonl(path)?;
    Ok(BlockCache::from_records(records))
}

pub fn write_cache(path: &Path, cache: &BlockCache) -> Result<()> {
    write_jsonl(path, cache.records())
}

/// One token per line, reserved tokens first.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Vocabulary::from_tokens(text.lines().map(str::to_string).collect())?)
}

/// Checkpoint metadata keys.
const META_CONFIG: &str = "model_config";
const META_VOCAB: &str = "vocabulary";

/// Writes model weights together with the config and vocabulary needed to
/// rebuild the model.
pub fn save_model(path: &Path, model: &SupportModel<f32>, params: &misc_core::ParamStore<f32>, vocab: &Vocabulary) -> Result<()> {
    let ckpt = Checkpoint::new(params.clone())
        .with_meta(META_CONFIG, serde_json::to_string(&model.config)?)
        .with_meta(META_VOCAB, serde_json::to_string(vocab.tokens())?);
    fs::write(path, ckpt.encode()).with_context(|| format!("writing {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<(SupportModel<f32>, Vocabulary)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let ckpt = Checkpoint::<f32>::decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    let config: ModelConfig = serde_json::from_str(ckpt.meta(META_CONFIG).ok_or_else(|| anyhow!("checkpoint lacks {META_CONFIG}"))?)?;
    let tokens: Vec<String> = serde_json::from_str(ckpt.meta(META_VOCAB).ok_or_else(|| anyhow!("checkpoint lacks {META_VOCAB}"))?)?;
    let vocab = Vocabulary::from_tokens(tokens)?;
    let mut model = SupportModel::new(config, 0)?;
    model.params.load_from(&ckpt.params)?;
    Ok((model, vocab))
}

/// One line of a generations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub example_id: String,
    pub generated: String,
    pub gold: String,
    pub predicted_strategy_logits: Vec<f64>,
}

pub const LOG_HEADER: [&str; 6] = ["step", "lr", "L_r", "L_g", "L", "dev_ppl"];

/// Training log as CSV; `dev_ppl` is blank on rows without a dev evaluation.
pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            format!("{:e}", r.lr),
            format!("{:.8}", r.loss.l_r),
            format!("{:.8}", r.loss.l_g),
            format!("{:.8}", r.loss.l),
            r.dev_ppl.map(|p| format!("{p:.8}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `bin,lo,hi,strategy,count,proportion`, one row per bin and strategy.
pub fn write_stage_csv(path: &Path, hist: &StageHistogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["bin", "lo", "hi", "strategy", "count", "proportion"])?;
    for b in 0..hist.bins() {
        let (lo, hi) = hist.interval(b);
        let props = hist.proportions(b);
        for s in StrategyId::ALL {
            w.write_record([
                b.to_string(),
                format!("{lo:.4}"),
                format!("{hi:.4}"),
                s.name().to_string(),
                hist.counts[b][s.index()].to_string(),
                format!("{:.6}", props[s.index()]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "{\"event\":\"e\",\"relation\":\"xReact\",\"tails\":[]}\n\n{\"event\":1}\n").unwrap();
        let err = read_jsonl::<CacheRecord>(&p).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.jsonl");
        let mut cache = BlockCache::new();
        cache.insert("i lost my job", misc_core::commonsense::Relation::XReact, ["sad".to_string()]);
        cache.insert("i lost my job", misc_core::commonsense::Relation::XWant, ["a new job".to_string()]);
        write_cache(&p, &cache).unwrap();
        assert_eq!(read_cache(&p).unwrap(), cache);
    }
}
