//! Command-line entry points. Every subcommand writes into `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classifier::RegConfig;
use crate::diffcore::checkpoint;
use crate::error::{Error, Result};
use crate::eval::{self, ResultsRecord, ShotThresholds};
use crate::exec::Exec;
use crate::graphdata::{generate_synthetic, Dataset};
use crate::retrieval::{mine_pairs, CorpusIndex, Retriever, RetrieverConfig, RetrieverTrainConfig};
use crate::rng::{self, Stream};
use crate::trainer::{self, ModelState, RetrievalContext, TrainConfig, TrainHistory};

#[derive(Debug, Parser)]
#[command(name = "tailgraph", version, about = "Long-tailed graph classification")]
pub struct Cli {
    /// Run seed; overrides the seed in `--config` when given.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training configuration (JSON with `TrainConfig` field names).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a balanced synthetic motif dataset (`dataset.jsonl`).
    GenData {
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 0.55)]
        noise: f64,
    },
    /// Subsample to an exponential long-tailed profile (`longtail.jsonl`).
    Longtail {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        imbalance_factor: f64,
        /// Head class size; defaults to the largest feasible.
        #[arg(long)]
        head: Option<usize>,
    },
    /// Stratified 60/20/20 split (`train.jsonl`, `val.jsonl`, `test.jsonl`).
    Split {
        #[arg(long)]
        data: PathBuf,
    },
    /// Mine certified triples and train the subgraph-matching retriever.
    TrainRetriever {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        pairs_per_query: usize,
        #[arg(long, default_value_t = 0.5)]
        margin: f64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Embed a corpus with a trained retriever into an index directory.
    BuildIndex {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `train-retriever`.
        #[arg(long)]
        retriever: PathBuf,
    },
    /// Top-q neighbors of one corpus graph.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        graph: usize,
        #[arg(long, default_value_t = 10)]
        top_q: usize,
    },
    /// Stage-1 training into a run directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Index over `--data`; required when retrieval is enabled.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Stage-2 classifier re-balancing of a run directory.
    Finetune {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        delta: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
    },
    /// Metrics of a run on a test set.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training set, for the shot groups.
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        shots: ShotArgs,
    },
    /// Label-distribution report and multi-seed aggregation.
    Report {
        #[command(flatten)]
        args: ReportArgs,
    },
    /// Graph embeddings of a run as CSV.
    ExportEmbeddings {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ShotArgs {
    #[arg(long, default_value_t = 20)]
    pub many_threshold: usize,
    #[arg(long, default_value_t = 5)]
    pub few_threshold: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Training set for the label-distribution report.
    #[arg(long, requires = "index")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_q: usize,
    /// `metrics.json` files (or run directories) to aggregate.
    #[arg(long, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
}

/// Written next to the checkpoint so a run directory is self-describing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub data_fingerprint: String,
    pub retriever_fingerprint: Option<String>,
    pub finetuned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub overall_acc: eval::SeedSummary,
    pub balanced_acc: eval::SeedSummary,
    pub many_acc: Option<eval::SeedSummary>,
    pub med_acc: Option<eval::SeedSummary>,
    pub few_acc: Option<eval::SeedSummary>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn parse_history(path: &Path) -> Result<TrainHistory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut history = TrainHistory::default();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = |m: &str| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("bad number"));
        history.records.push(trainer::EpochRecord {
            epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
            stage: 1,
            losses: trainer::LossRecord {
                l_base: num(1)?,
                l_ret: num(2)?,
                l_con: num(3)?,
                l_total: num(4)?,
            },
            val_acc: num(5)?,
            seconds: if f[6].is_empty() { 0.0 } else { num(6)? },
        });
    }
    Ok(history)
}

struct Run {
    cfg: TrainConfig,
    meta: RunMeta,
    model: ModelState,
}

fn load_run(dir: &Path) -> Result<Run> {
    let cfg: TrainConfig = read_json(&dir.join("config.json"))?;
    let meta: RunMeta = read_json(&dir.join("meta.json"))?;
    let mut model = ModelState::load(&dir.join("model.json"), meta.feature_dim, meta.num_classes, &cfg)?;
    model.retriever_fingerprint = meta.retriever_fingerprint.clone();
    Ok(Run { cfg, meta, model })
}

impl Cli {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Runs the subcommand and returns a one-line summary for stdout.
    pub fn run(&self) -> Result<String> {
        let out = &self.out;
        let exec = self.exec();
        match &self.command {
            Command::GenData { classes, per_class, noise } => {
                let ds = generate_synthetic(*classes, *per_class, *noise, self.seed())?;
                let path = out.join("dataset.jsonl");
                write(&path, &ds.to_jsonl())?;
                Ok(format!("wrote {} graphs to {}", ds.len(), path.display()))
            }
            Command::Longtail { data, imbalance_factor, head } => {
                let ds = Dataset::load(data)?;
                let (lt, profile) = match head {
                    Some(h) => ds.make_longtail_with_head(*imbalance_factor, *h, self.seed())?,
                    None => ds.make_longtail(*imbalance_factor, self.seed())?,
                };
                write(&out.join("longtail.jsonl"), &lt.to_jsonl())?;
                write(&out.join("longtail.json"), &to_json(&profile)?)?;
                Ok(format!("class counts {:?}", profile.counts))
            }
            Command::Split { data } => {
                let (tr, va, te) = Dataset::load(data)?.split(self.seed())?;
                for (name, d) in [("train", &tr), ("val", &va), ("test", &te)] {
                    write(&out.join(format!("{name}.jsonl")), &d.to_jsonl())?;
                }
                Ok(format!("train {} val {} test {}", tr.len(), va.len(), te.len()))
            }
            Command::TrainRetriever { data, pairs_per_query, margin, epochs, lr } => {
                let ds = Dataset::load(data)?;
                let seed = self.seed();
                let mined = mine_pairs(&ds, *pairs_per_query, &mut rng::stream(seed, Stream::Mining))?;
                let config = RetrieverConfig {
                    margin: *margin,
                    ..RetrieverConfig::new(ds.feature_dim())
                };
                let mut retriever = Retriever::new(config, &mut rng::stream(seed, Stream::Retrieval))?;
                let opts = RetrieverTrainConfig {
                    epochs: *epochs,
                    lr: *lr,
                    ..RetrieverTrainConfig::default()
                };
                let losses = retriever.train(&mined.triples, opts, seed, exec)?;
                let acc = retriever.ranking_accuracy(&mined.triples, exec)?;
                write(&out.join("retriever.json"), &to_json(&retriever.config)?)?;
                write(&out.join("params.json"), &checkpoint::to_json(&retriever.store))?;
                let mut csv = String::from("epoch,loss\n");
                for (i, l) in losses.iter().enumerate() {
                    csv += &format!("{},{l}\n", i + 1);
                }
                write(&out.join("retriever_loss.csv"), &csv)?;
                Ok(format!(
                    "{} triples ({} skipped), training ranking accuracy {acc}",
                    mined.triples.len(),
                    mined.skipped
                ))
            }
            Command::BuildIndex { data, retriever } => {
                let ds = Dataset::load(data)?;
                let config: RetrieverConfig = read_json(&retriever.join("retriever.json"))?;
                let params = retriever.join("params.json");
                let text = fs::read_to_string(&params).map_err(|e| Error::io(&params, e))?;
                let r = Retriever::from_checkpoint(config, &text)?;
                let index = CorpusIndex::build(&r, &ds, exec)?;
                index.save(&r, out)?;
                Ok(format!("indexed {} graphs into {}", index.len(), out.display()))
            }
            Command::Query { index, graph, top_q } => {
                let (r, idx) = CorpusIndex::load(index)?;
                let res = idx.retrieve_topq(&r, *graph, *top_q)?;
                let text = to_json(&res)?;
                write(&out.join(format!("query_{graph}.json")), &text)?;
                Ok(text.trim_end().to_string())
            }
            Command::Train { data, val, index } => {
                let cfg = self.train_config()?;
                let train = Dataset::load(data)?;
                let val = Dataset::load(val)?;
                let ctx = match (cfg.use_retrieval, index) {
                    (true, Some(dir)) => {
                        let (r, idx) = CorpusIndex::load(dir)?;
                        Some(RetrievalContext::from_index(&r, &idx, &train, cfg.top_q, exec)?)
                    }
                    (true, None) if cfg.eta_ret > 0.0 => {
                        return Err(Error::InvalidState("use_retrieval is set but no --index was given".into()))
                    }
                    _ => None,
                };
                let (model, history) = trainer::train_stage1(&train, &val, &cfg, ctx.as_ref(), exec)?;
                save_run(out, &cfg, &model, &train, &history, false)?;
                Ok(format!(
                    "stage 1 done; best epoch {} (val acc {})",
                    history.best_stage1_epoch,
                    history.records[history.best_stage1_epoch - 1].val_acc
                ))
            }
            Command::Finetune { run, data, val, delta, lambda } => {
                let Run { cfg, mut model, .. } = load_run(run)?;
                let train = Dataset::load(data)?;
                let val = Dataset::load(val)?;
                let mut history = parse_history(&run.join("history.csv"))?;
                let reg = RegConfig {
                    delta: *delta,
                    lambda: *lambda,
                };
                trainer::finetune_classifier(&mut model, &train, &val, &cfg, &reg, &mut history, exec)?;
                save_run(out, &cfg, &model, &train, &history, true)?;
                write(&out.join("reg.json"), &to_json(&reg)?)?;
                Ok(format!("stage 2 done; best epoch {:?}", history.best_stage2_epoch))
            }
            Command::Eval { run, data, train, shots } => {
                let Run { cfg, meta, model } = load_run(run)?;
                let test = Dataset::load(data)?;
                let train = Dataset::load(train)?;
                let thresholds = ShotThresholds {
                    many: shots.many_threshold,
                    few: shots.few_threshold,
                };
                let groups = eval::shot_split(&train.class_counts(), thresholds);
                let metrics = eval::evaluate(&model, &test, &groups, exec)?;
                write(&out.join("metrics.json"), &metrics.to_json()?)?;
                write(&out.join("per_class.csv"), &metrics.per_class_csv(&groups, &train.class_counts()))?;
                write(&out.join("confusion.csv"), &metrics.confusion_csv())?;
                let record = ResultsRecord {
                    config: serde_json::to_value(&cfg)?,
                    seed: cfg.seed,
                    data_fingerprint: meta.data_fingerprint,
                    metrics: metrics.clone(),
                    retrieved_label_histogram: None,
                    timestamps: None,
                };
                write(&out.join("results.json"), &to_json(&record)?)?;
                Ok(format!(
                    "overall {} balanced {} many {:?} med {:?} few {:?}",
                    metrics.overall_acc, metrics.balanced_acc, metrics.many_acc, metrics.med_acc, metrics.few_acc
                ))
            }
            Command::Report { args } => report(args, out, exec),
            Command::ExportEmbeddings { run, data } => {
                let Run { model, .. } = load_run(run)?;
                let ds = Dataset::load(data)?;
                let path = out.join("embeddings.csv");
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                eval::export_embeddings(&model, &ds, &path, exec)?;
                Ok(format!("wrote {} embeddings to {}", ds.len(), path.display()))
            }
        }
    }
}

fn save_run(
    out: &Path,
    cfg: &TrainConfig,
    model: &ModelState,
    train: &Dataset,
    history: &TrainHistory,
    finetuned: bool,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("config.json"), &to_json(cfg)?)?;
    let meta = RunMeta {
        feature_dim: train.feature_dim(),
        num_classes: model.num_classes,
        data_fingerprint: train.fingerprint(),
        retriever_fingerprint: model.retriever_fingerprint.clone(),
        finetuned,
    };
    write(&out.join("meta.json"), &to_json(&meta)?)?;
    model.save(&out.join("model.json"))?;
    history.save_csv(&out.join("history.csv"), cfg.record_wall_time)
}

fn report(args: &ReportArgs, out: &Path, exec: Exec) -> Result<String> {
    let mut lines = Vec::new();
    if let (Some(train), Some(index)) = (&args.train, &args.index) {
        let train = Dataset::load(train)?;
        let (r, idx) = CorpusIndex::load(index)?;
        let neighbors = if args.top_q == 0 {
            Vec::new()
        } else {
            RetrievalContext::from_index(&r, &idx, &train, args.top_q, exec)?.neighbors
        };
        let rep = eval::label_distribution_report(&train, &neighbors)?;
        write(&out.join("label_dist.csv"), &rep.to_csv())?;
        lines.push(format!("KL original {} augmented {}", rep.kl_original, rep.kl_augmented));
    }
    if !args.metrics.is_empty() {
        let ms: Vec<eval::Metrics> = args
            .metrics
            .iter()
            .map(|p| read_json(&if p.is_dir() { p.join("metrics.json") } else { p.clone() }))
            .collect::<Result<_>>()?;
        let pick = |f: &dyn Fn(&eval::Metrics) -> Option<f64>| -> Result<Option<eval::SeedSummary>> {
            let v: Vec<f64> = ms.iter().filter_map(f).collect();
            if v.is_empty() { Ok(None) } else { eval::summarize(&v).map(Some) }
        };
        let agg = Aggregate {
            runs: ms.len(),
            overall_acc: eval::summarize(&ms.iter().map(|m| m.overall_acc).collect::<Vec<_>>())?,
            balanced_acc: eval::summarize(&ms.iter().map(|m| m.balanced_acc).collect::<Vec<_>>())?,
            many_acc: pick(&|m| m.many_acc)?,
            med_acc: pick(&|m| m.med_acc)?,
            few_acc: pick(&|m| m.few_acc)?,
        };
        write(&out.join("summary.json"), &to_json(&agg)?)?;
        lines.push(format!(
            "{} runs: balanced median {} mean {} std {}",
            agg.runs, agg.balanced_acc.median, agg.balanced_acc.mean, agg.balanced_acc.std
        ));
    }
    if lines.is_empty() {
        return Err(Error::InvalidArgument("report needs --train/--index or --metrics".into()));
    }
    Ok(lines.join("\n"))
}
