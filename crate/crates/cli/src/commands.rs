//! Subcommands of the `misc` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use misc_core::commonsense::{BlockCache, Relation, SyntheticProvider};
use misc_core::corpus::{self, Chunking, Dialogue, Example, PreprocessConfig, Speaker, SplitLevel};
use misc_core::gradcheck::{grad_check, spread_parameters, GradCheckConfig, GradCheckReport};
use misc_core::metrics::{self, AttentionDump, MetricReport, MetricVariants, StageHistogram};
use misc_core::model::layers::Pass;
use misc_core::model::strategy_head::argmax;
use misc_core::model::{EncodedExample, SupportModel};
use misc_core::rng;
use misc_core::sampling::{GenerationConfig, Stage};
use misc_core::strategy::StrategyId;
use misc_core::train::{self, Control};
use misc_core::vocab::{self, Vocabulary};

use crate::config::RunConfig;
use crate::io::{self, GenerationRecord};

#[derive(Debug, Parser)]
#[command(name = "misc", version, about = "Strategy-conditioned emotional-support dialogue model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a dialogue corpus into train/dev/test example files and a vocabulary.
    PrepareData(PrepareData),
    /// Write or extend a block cache for every event in the prepared splits.
    BuildCache(BuildCache),
    /// Train a model; writes the best checkpoint and a CSV loss log.
    Train(Train),
    /// Generate responses for a split.
    Generate(Generate),
    /// Score a generations file.
    Evaluate(Evaluate),
    /// Strategy counts per conversation stage.
    AnalyzeStages(AnalyzeStages),
    /// Refinement attention and strategy distribution for one example.
    InspectAttention(InspectAttention),
    /// Finite-difference check of every parameter gradient.
    GradCheck(GradCheck),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ChunkingArg {
    Disjoint,
    Sliding,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Example,
    Dialogue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    RepetitionPenalty,
    Temperature,
    TopK,
    TopP,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::RepetitionPenalty => Stage::RepetitionPenalty,
            StageArg::Temperature => Stage::Temperature,
            StageArg::TopK => Stage::TopK,
            StageArg::TopP => Stage::TopP,
        }
    }
}

#[derive(Debug, Args)]
pub struct PrepareData {
    /// Dialogue corpus, one JSON object per line.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate this many templated two-turn dialogues instead of reading a corpus.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "disjoint")]
    pub chunking: ChunkingArg,
    #[arg(long, value_enum, default_value = "example")]
    pub split_level: SplitArg,
    /// Minimum training-split frequency for a vocabulary entry.
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BuildCache {
    /// Directory written by prepare-data.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Existing cache files whose entries take precedence.
    #[arg(long)]
    pub merge: Vec<PathBuf>,
    /// Only merge; do not fill missing entries with synthetic tails.
    #[arg(long)]
    pub no_synthetic: bool,
    #[arg(long, default_value_t = 2)]
    pub tails_per_relation: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Train {
    /// Flat JSON config; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config step cap.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Sampling {
    /// Argmax decoding.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, default_value_t = 0.3)]
    pub top_p: f64,
    #[arg(long, default_value_t = 30)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1.03)]
    pub repetition_penalty: f64,
    #[arg(long, default_value_t = 40)]
    pub max_length: usize,
    /// Order of the logit transformations; stages left out are skipped.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "repetition-penalty,temperature,top-k,top-p"
    )]
    pub order: Vec<StageArg>,
}

impl Sampling {
    pub fn config(&self) -> GenerationConfig {
        let base = if self.greedy {
            GenerationConfig::greedy(self.max_length)
        } else {
            GenerationConfig {
                top_p: self.top_p,
                top_k: self.top_k,
                temperature: self.temperature,
                repetition_penalty: self.repetition_penalty,
                max_length: self.max_length,
                ..Default::default()
            }
        };
        GenerationConfig {
            order: self.order.iter().map(|&s| s.into()).collect(),
            ..base
        }
    }
}

#[derive(Debug, Args)]
pub struct Generate {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Example file, e.g. `test.jsonl` from prepare-data.
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Generate for at most this many examples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub sampling: Sampling,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub generations: PathBuf,
    /// Example file holding the gold strategies.
    #[arg(long)]
    pub examples: PathBuf,
    /// With `--cache`, also reports perplexity of this model on the examples.
    #[arg(long, requires = "cache")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// ROUGE-L F-measure beta.
    #[arg(long, default_value_t = 1.0)]
    pub rouge_beta: f64,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnalyzeStages {
    /// Dialogue corpus: every labelled supporter turn counts.
    #[arg(long, conflicts_with = "examples", required_unless_present = "examples")]
    pub dialogues: Option<PathBuf>,
    /// Example file: one record per example at its response position.
    #[arg(long)]
    pub examples: Option<PathBuf>,
    /// Use predicted strategies from this generations file instead of gold labels.
    #[arg(long, requires = "examples")]
    pub generations: Option<PathBuf>,
    #[arg(long, default_value_t = metrics::STAGE_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InspectAttention {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub example_id: String,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradCheck {
    /// Model sizes; defaults to a 32-wide, 2-layer model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 6)]
    pub samples_per_param: usize,
    /// Report file (JSON); printed to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData(a) => prepare_data(&a),
        Command::BuildCache(a) => build_cache(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Generate(a) => generate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::AnalyzeStages(a) => analyze_stages(&a),
        Command::InspectAttention(a) => inspect_attention(&a),
        Command::GradCheck(a) => {
            let report = grad_check_cmd(&a)?;
            if !report.passed() {
                bail!("gradient check failed: max relative error {:.3e}", report.max_rel_error());
            }
            Ok(())
        }
    }
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

fn split_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.jsonl"))
}

/// Texts the vocabulary is built from.
pub fn example_texts(examples: &[Example]) -> Vec<&str> {
    let mut out = Vec::new();
    for e in examples {
        out.push(e.situation.as_str());
        out.extend(e.context.iter().map(|u| u.text.as_str()));
        out.push(e.response.as_str());
    }
    out
}

pub fn prepare_data(a: &PrepareData) -> Result<()> {
    let dialogues = match (&a.input, a.synthetic) {
        (Some(p), _) => io::read_dialogues(p)?,
        (None, Some(n)) => corpus::synthetic_dialogues(n, a.seed),
        (None, None) => bail!("either --input or --synthetic is required"),
    };
    let config = PreprocessConfig {
        window: a.window,
        seed: a.seed,
        chunking: match a.chunking {
            ChunkingArg::Disjoint => Chunking::Disjoint,
            ChunkingArg::Sliding => Chunking::Sliding,
        },
        split: match a.split_level {
            SplitArg::Example => SplitLevel::Example,
            SplitArg::Dialogue => SplitLevel::Dialogue,
        },
    };
    let splits = corpus::preprocess(&dialogues, config)?;
    fs::create_dir_all(&a.output_dir)?;
    if a.synthetic.is_some() {
        io::write_jsonl(&a.output_dir.join("dialogues.jsonl"), &dialogues)?;
    }
    for (name, part) in SPLITS.iter().zip([&splits.train, &splits.dev, &splits.test]) {
        io::write_jsonl(&split_path(&a.output_dir, name), part)?;
    }
    let vocab = Vocabulary::build(example_texts(&splits.train), a.min_freq);
    io::write_vocab(&a.output_dir.join("vocab.txt"), &vocab)?;
    io::write_json(&a.output_dir.join("report.json"), &splits.report)?;
    println!(
        "{} dialogues -> {} examples (train {}, dev {}, test {}); vocabulary {}",
        splits.report.dialogues,
        splits.report.examples,
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        vocab.len()
    );
    Ok(())
}

fn read_all_splits(dir: &Path) -> Result<Vec<Example>> {
    let mut all = Vec::new();
    for name in SPLITS {
        let p = split_path(dir, name);
        if p.exists() {
            all.extend(io::read_jsonl::<Example>(&p)?);
        }
    }
    Ok(all)
}

pub fn build_cache(a: &BuildCache) -> Result<()> {
    let examples = read_all_splits(&a.data_dir)?;
    let mut events: Vec<&str> = Vec::new();
    for e in &examples {
        for ev in [e.situation.as_str(), e.last_post.as_str()] {
            if !events.contains(&ev) {
                events.push(ev);
            }
        }
    }
    let mut cache = BlockCache::new();
    for p in &a.merge {
        for r in io::read_cache(p)?.records() {
            if !cache.contains(&r.event, r.relation) {
                cache.insert(&r.event, r.relation, r.tails.iter().cloned());
            }
        }
    }
    let merged = cache.len();
    if !a.no_synthetic {
        let vocab = io::read_vocab(&a.data_dir.join("vocab.txt"))?;
        let provider = SyntheticProvider::new(a.seed, &vocab, a.tails_per_relation);
        let extra = provider.materialize(events.iter().copied());
        for r in extra.records() {
            if !cache.contains(&r.event, r.relation) {
                cache.insert(&r.event, r.relation, r.tails.iter().cloned());
            }
        }
    }
    io::write_cache(&a.output, &cache)?;
    let covered = events.iter().filter(|e| Relation::ALL.iter().any(|&r| cache.contains(e, r))).count();
    println!(
        "{} cache entries ({} merged); {}/{} events covered",
        cache.len(),
        merged,
        covered,
        events.len()
    );
    Ok(())
}

fn encode_all<P: misc_core::commonsense::BlockProvider>(
    model: &SupportModel<f32>,
    vocab: &Vocabulary,
    provider: &P,
    examples: &[Example],
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| model.encode_example(vocab, provider, e).map_err(|err| anyhow!("example {}: {err}", e.id)))
        .collect()
}

pub fn train_cmd(a: &Train) -> Result<()> {
    let mut config: RunConfig = match &a.config {
        Some(p) => io::read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if let Some(m) = a.max_steps {
        config.train.max_steps = Some(m);
    }
    let vocab = io::read_vocab(&a.data_dir.join("vocab.txt"))?;
    let cache = io::read_cache(&a.cache)?;
    let train_ex: Vec<Example> = io::read_jsonl(&split_path(&a.data_dir, "train"))?;
    let dev_ex: Vec<Example> = io::read_jsonl(&split_path(&a.data_dir, "dev"))?;
    let mut model = SupportModel::<f32>::new(config.model_config(vocab.len()), config.train.seed)?;
    let train_set = encode_all(&model, &vocab, &cache, &train_ex)?;
    let dev_set = encode_all(&model, &vocab, &cache, &dev_ex)?;
    fs::create_dir_all(&a.output_dir)?;
    io::write_json(&a.output_dir.join("config.json"), &config)?;
    let outcome = train::train(&mut model, &train_set, &dev_set, &config.train, |row, _, _| {
        if let Some(p) = row.dev_ppl {
            println!("step {:>6}  L_r {:.4}  L_g {:.4}  dev ppl {:.3}", row.step, row.loss.l_r, row.loss.l_g, p);
        }
        Control::Continue
    })?;
    io::write_log_csv(&a.output_dir.join("metrics.csv"), &outcome.log)?;
    io::save_model(&a.output_dir.join("model.ckpt"), &model, &outcome.best, &vocab)?;
    println!(
        "{} steps; best dev ppl {:.3} after epoch {}",
        outcome.steps,
        outcome.best_dev_ppl,
        outcome.best_epoch + 1
    );
    Ok(())
}

/// Metric tokens: the corpus tokenizer, lowercased.
pub fn tokens_of(text: &str) -> Vec<String> {
    vocab::tokenize(text)
}

pub fn generate(a: &Generate) -> Result<()> {
    let (model, vocab) = io::load_model(&a.checkpoint)?;
    let cache = io::read_cache(&a.cache)?;
    let mut examples: Vec<Example> = io::read_jsonl(&a.examples)?;
    if let Some(n) = a.limit {
        examples.truncate(n);
    }
    let gen_config = a.sampling.config();
    let order: Vec<&str> = gen_config.order.iter().map(|s| stage_name(*s)).collect();
    println!(
        "sampling: {} (top_p {}, top_k {}, temperature {}, repetition penalty {})",
        order.join(" -> "),
        gen_config.top_p,
        gen_config.top_k,
        gen_config.temperature,
        gen_config.repetition_penalty
    );
    let mut records = Vec::with_capacity(examples.len());
    for e in &examples {
        let enc = model.encode_example(&vocab, &cache, e)?;
        let mut r = rng::derive(a.seed, &e.id);
        let g = model.generate(&model.params, &enc, &gen_config, &mut r)?;
        records.push(GenerationRecord {
            example_id: e.id.clone(),
            generated: vocab.decode(&g.tokens),
            gold: vocab::canonical(&e.response),
            predicted_strategy_logits: g.strategy_logits,
        });
    }
    io::write_jsonl(&a.output, &records)?;
    println!("{} generations written to {}", records.len(), a.output.display());
    Ok(())
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::RepetitionPenalty => "repetition-penalty",
        Stage::Temperature => "temperature",
        Stage::TopK => "top-k",
        Stage::TopP => "top-p",
    }
}

fn index_examples(examples: Vec<Example>) -> std::collections::BTreeMap<String, Example> {
    examples.into_iter().map(|e| (e.id.clone(), e)).collect()
}

pub fn evaluate(a: &Evaluate) -> Result<()> {
    let gens: Vec<GenerationRecord> = io::read_jsonl(&a.generations)?;
    let examples: Vec<Example> = io::read_jsonl(&a.examples)?;
    let by_id = index_examples(examples.clone());
    let mut golds = Vec::with_capacity(gens.len());
    for g in &gens {
        let e = by_id
            .get(&g.example_id)
            .ok_or_else(|| anyhow!("example {} not found in {}", g.example_id, a.examples.display()))?;
        golds.push(e.strategy);
    }
    let ppl = match (&a.checkpoint, &a.cache) {
        (Some(ck), Some(cache)) => {
            let (model, vocab) = io::load_model(ck)?;
            let cache = io::read_cache(cache)?;
            let enc = encode_all(&model, &vocab, &cache, &examples)?;
            Some(train::evaluate_split(&model, &model.params, &enc, 50)?.perplexity())
        }
        _ => None,
    };
    let generated: Vec<Vec<String>> = gens.iter().map(|g| tokens_of(&g.generated)).collect();
    let gold: Vec<Vec<String>> = gens.iter().map(|g| tokens_of(&g.gold)).collect();
    let logits: Vec<Vec<f64>> = gens.iter().map(|g| g.predicted_strategy_logits.clone()).collect();
    let variants = MetricVariants {
        rouge_beta: a.rouge_beta,
        ..Default::default()
    };
    let report = MetricReport::compute(&generated, &gold, &logits, &golds, ppl, variants)?;
    io::write_json(&a.output, &report)?;
    println!(
        "acc {:.4}  ppl {}  B-2 {:.2}  B-4 {:.2}  R-L {:.2}  M {:.2}  D-1 {:.2}  D-2 {:.2}",
        report.acc,
        report.ppl.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into()),
        report.bleu2,
        report.bleu4,
        report.rouge_l,
        report.meteor,
        report.distinct1,
        report.distinct2
    );
    Ok(())
}

/// `(progress, strategy)` for every labelled supporter turn.
pub fn dialogue_stage_records(dialogues: &[Dialogue]) -> Vec<(f64, StrategyId)> {
    let mut out = Vec::new();
    for d in dialogues {
        let n = d.utterances.len() as f64;
        for (i, u) in d.utterances.iter().enumerate() {
            if let (Speaker::Supporter, Some(s)) = (u.speaker, u.strategy) {
                out.push((i as f64 / n, s));
            }
        }
    }
    out
}

pub fn stage_histogram(a: &AnalyzeStages) -> Result<StageHistogram> {
    let records = if let Some(p) = &a.dialogues {
        dialogue_stage_records(&io::read_dialogues(p)?)
    } else {
        let path = a.examples.as_ref().expect("clap requires one input");
        let examples: Vec<Example> = io::read_jsonl(path)?;
        match &a.generations {
            None => examples.iter().map(|e| (e.progress(), e.strategy)).collect(),
            Some(g) => {
                let by_id = index_examples(examples);
                let gens: Vec<GenerationRecord> = io::read_jsonl(g)?;
                gens.iter()
                    .map(|g| {
                        let e = by_id.get(&g.example_id).ok_or_else(|| anyhow!("example {} not found", g.example_id))?;
                        if g.predicted_strategy_logits.len() != StrategyId::ALL.len() {
                            bail!("example {}: expected 8 strategy logits", g.example_id);
                        }
                        Ok((e.progress(), StrategyId::ALL[argmax(&g.predicted_strategy_logits)]))
                    })
                    .collect::<Result<_>>()?
            }
        }
    };
    Ok(metrics::stage_distribution(&records, a.bins)?)
}

pub fn analyze_stages(a: &AnalyzeStages) -> Result<()> {
    let hist = stage_histogram(a)?;
    io::write_stage_csv(&a.output, &hist)?;
    let totals: Vec<String> = (0..hist.bins()).map(|b| hist.total(b).to_string()).collect();
    println!("turns per stage: {}", totals.join(" "));
    Ok(())
}

pub fn inspect_attention(a: &InspectAttention) -> Result<()> {
    let (model, vocab) = io::load_model(&a.checkpoint)?;
    let cache = io::read_cache(&a.cache)?;
    let examples: Vec<Example> = io::read_jsonl(&a.examples)?;
    let e = examples
        .iter()
        .find(|e| e.id == a.example_id)
        .ok_or_else(|| anyhow!("example {} not found in {}", a.example_id, a.examples.display()))?;
    let enc = model.encode_example(&vocab, &cache, e)?;
    let weights = model.attention_weights(&model.params, &enc)?;
    let mut context_tokens: Vec<String> = enc
        .context
        .ids
        .iter()
        .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
        .collect();
    if !model.config.refine_include_cls {
        context_tokens.remove(0);
    }
    let dump = AttentionDump::new(&e.id, context_tokens, &enc.situation_blocks, &enc.post_blocks, weights);
    io::write_json(&a.output, &dump)?;
    println!(
        "{}: {} situation and {} post blocks; top strategy {}",
        e.id,
        dump.situation.len(),
        dump.post.len(),
        StrategyId::ALL[argmax(&dump.strategy_distribution)]
    );
    Ok(())
}

/// Small synthetic batch and a double-precision model for gradient checks.
pub fn grad_check_fixture(config: &RunConfig, seed: u64) -> Result<(SupportModel<f64>, Vec<EncodedExample>)> {
    let dialogues = corpus::synthetic_dialogues(2, seed);
    let examples: Vec<Example> = dialogues
        .iter()
        .enumerate()
        .flat_map(|(i, d)| corpus::dialogue_examples(d, i, 10, Chunking::Disjoint).0)
        .collect();
    let vocab = Vocabulary::build(example_texts(&examples), 1);
    let provider = ProviderSubset {
        inner: SyntheticProvider::new(seed, &vocab, 1),
        relations: &[Relation::XReact, Relation::XWant, Relation::OReact],
    };
    let mut model = SupportModel::<f64>::new(config.model_config(vocab.len()), seed)?;
    spread_parameters(&mut model.params, 10.0, 0.1, &mut rng::derive(seed, "grad-check-point"));
    let batch = examples
        .iter()
        .map(|e| model.encode_example(&vocab, &provider, e))
        .collect::<misc_core::Result<Vec<_>>>()?;
    Ok((model, batch))
}

/// Restricts a provider to a few relations to keep the check small.
struct ProviderSubset<'a, P> {
    inner: P,
    relations: &'a [Relation],
}

impl<P: misc_core::commonsense::BlockProvider> misc_core::commonsense::BlockProvider for ProviderSubset<'_, P> {
    fn tails(&self, event: &str, relation: Relation) -> Vec<String> {
        if self.relations.contains(&relation) {
            self.inner.tails(event, relation)
        } else {
            Vec::new()
        }
    }
}

/// Gradient check of the joint loss over every parameter.
pub fn run_grad_check(config: &RunConfig, check: GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let (model, batch) = grad_check_fixture(config, seed)?;
    let mut r = rng::derive(seed, "grad-check");
    let report = grad_check(
        &model.params,
        |store, tape| Ok(model.batch_loss(tape, store, &batch, &mut Pass::eval())?.loss),
        check,
        &mut r,
    )?;
    Ok(report)
}

pub fn grad_check_default_config() -> RunConfig {
    RunConfig {
        model_dim: 32,
        heads: 2,
        ffn_dim: 64,
        encoder_layers: 2,
        decoder_layers: 2,
        strategy_hidden: 32,
        max_positions: 64,
        max_decoder_positions: 48,
        ..RunConfig::default()
    }
}

pub fn grad_check_cmd(a: &GradCheck) -> Result<GradCheckReport> {
    let config = match &a.config {
        Some(p) => io::read_json(p).with_context(|| format!("reading {}", p.display()))?,
        None => grad_check_default_config(),
    };
    let check = GradCheckConfig {
        step: a.step,
        tolerance: a.tolerance,
        samples_per_param: a.samples_per_param,
    };
    let report = run_grad_check(&config, check, a.seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.output {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    let worst = report
        .params
        .iter()
        .max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error))
        .map(|p| p.name.as_str())
        .unwrap_or("-");
    eprintln!(
        "{} parameters checked; max relative error {:.3e} ({worst}); {}",
        report.params.len(),
        report.max_rel_error(),
        if report.passed() { "pass" } else { "FAIL" }
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampling(args: &[&str]) -> GenerationConfig {
        let mut argv = vec!["misc", "generate", "--checkpoint", "m", "--examples", "e", "--cache", "c", "--output", "o"];
        argv.extend_from_slice(args);
        match Cli::parse_from(argv).command {
            Command::Generate(g) => g.sampling.config(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn default_order_matches_the_library() {
        assert_eq!(sampling(&[]), GenerationConfig::default());
    }

    #[test]
    fn order_flag_reorders_and_drops_stages() {
        let c = sampling(&["--order", "top-p,temperature"]);
        assert_eq!(c.order, [Stage::TopP, Stage::Temperature]);
        let g = sampling(&["--greedy", "--order", "top-k"]);
        assert_eq!((g.top_k, g.order), (1, vec![Stage::TopK]));
    }
}
