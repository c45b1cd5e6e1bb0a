use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use price_core::catalog::Catalog;
use price_core::eval::{evaluate, BaselineEstimator, ErrorReport, ModelEstimator};
use price_core::model::{
    finetune, load_checkpoint, save_checkpoint, train_corpora, Corpus, Hyper, Model, ModelConfig,
};
use price_core::serve::{serve_listener, serve_stream, Service};
use price_core::stats::StatsStore;
use price_core::synth::{generate, write_dir, Shape, SynthConfig};
use price_core::workload::{
    generate_workload_with, load_workload, save_workload, WorkloadOptions, DEFAULT_SUBGRAPH_CAP,
};
use price_core::{Error, Result};

#[derive(Parser)]
#[command(name = "price", version, about = "Learned cardinality estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a correlated synthetic database (schema.json + CSVs)
    Synth(SynthArgs),
    /// Load a schema and its CSV tables into a catalog file
    Ingest {
        #[arg(long)]
        schema: PathBuf,
        /// Directory holding <table>.csv for every table
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build statistics for a catalog
    Stats {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled workload
    Genwork {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Redraw queries with an empty result
        #[arg(long)]
        non_empty: bool,
        #[arg(long, default_value_t = DEFAULT_SUBGRAPH_CAP)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a model on one or more corpora
    Train {
        /// CATALOG,STATS,WORKLOAD (repeatable)
        #[arg(long = "corpus", required = true)]
        corpora: Vec<String>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training a checkpoint on one corpus
    Finetune {
        #[arg(long)]
        from: PathBuf,
        /// CATALOG,STATS,WORKLOAD
        #[arg(long)]
        corpus: String,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate one query and print {log_card, card, baseline}
    Estimate {
        #[command(flatten)]
        loaded: LoadArgs,
        #[arg(long)]
        query: String,
    },
    /// Evaluate an estimator on a workload
    Eval {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Model checkpoint; omit together with --baseline to score the histogram baseline
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        baseline: bool,
        #[arg(long)]
        report: PathBuf,
        /// Per-query CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Answer newline-delimited JSON requests
    Serve {
        #[command(flatten)]
        loaded: LoadArgs,
        /// Listen address; standard input/output when omitted
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    name: String,
    #[arg(long, default_value = "chain")]
    shape: Shape,
    #[arg(long, default_value_t = 3)]
    tables: usize,
    #[arg(long, default_value_t = 5000)]
    rows: usize,
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 0.7)]
    correlation: f64,
    #[arg(long, default_value_t = 0.02)]
    null_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LoadArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    stats: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Reduced widths (d=64, FFN 128, MLP 128-128)
    #[arg(long)]
    small: bool,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    ffn_hidden: Option<usize>,
    /// Comma-separated head MLP widths
    #[arg(long, value_delimiter = ',')]
    mlp_hidden: Option<Vec<usize>>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    output_scale: Option<f64>,
    #[arg(long, default_value_t = 42)]
    model_seed: u64,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        let mut c = if self.small {
            ModelConfig::small()
        } else {
            ModelConfig::default()
        };
        c.embed_dim = self.embed_dim.unwrap_or(c.embed_dim);
        c.heads = self.heads.unwrap_or(c.heads);
        c.blocks_per_stage = self.blocks.unwrap_or(c.blocks_per_stage);
        c.ffn_hidden = self.ffn_hidden.unwrap_or(c.ffn_hidden);
        c.mlp_hidden = self.mlp_hidden.clone().unwrap_or(c.mlp_hidden);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.output_scale = self.output_scale.unwrap_or(c.output_scale);
        c.seed = self.model_seed;
        c
    }
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    step_size: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Train on full queries only, ignoring sub-query labels
    #[arg(long)]
    full_only: bool,
}

impl HyperArgs {
    fn hyper(&self, base: Hyper) -> Hyper {
        Hyper {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch: self.batch.unwrap_or(base.batch),
            lr: self.lr.unwrap_or(base.lr),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            step_size: self.step_size.unwrap_or(base.step_size),
            gamma: self.gamma.unwrap_or(base.gamma),
            seed: self.seed,
            subqueries: !self.full_only,
        }
    }
}

struct LoadedCorpus {
    catalog: Catalog,
    stats: StatsStore,
    records: Vec<price_core::workload::WorkloadRecord>,
}

impl LoadedCorpus {
    fn load(spec: &str) -> Result<LoadedCorpus> {
        let parts: Vec<&str> = spec.split(',').collect();
        let [catalog, stats, workload] = parts[..] else {
            return Err(Error::Config(format!(
                "corpus `{spec}` must be CATALOG,STATS,WORKLOAD"
            )));
        };
        let catalog = Catalog::load(catalog)?;
        let stats = StatsStore::load(stats)?;
        if !stats.matches(&catalog) {
            return Err(Error::CorruptStats(format!(
                "statistics in `{spec}` do not belong to catalog `{}`",
                catalog.name
            )));
        }
        Ok(LoadedCorpus {
            catalog,
            stats,
            records: load_workload(workload)?,
        })
    }

    fn corpus(&self) -> Corpus<'_> {
        Corpus {
            catalog: &self.catalog,
            stats: &self.stats,
            records: &self.records,
        }
    }
}

fn write_report(report: &ErrorReport, json: &Path, csv: Option<&PathBuf>) -> Result<()> {
    fs::write(json, report.to_json()).map_err(|e| Error::io(json, e))?;
    if let Some(path) = csv {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        report.write_csv(io::BufWriter::new(file))?;
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth(a) => {
            let cfg = SynthConfig {
                name: a.name,
                shape: a.shape,
                tables: a.tables,
                rows: a.rows,
                skew: a.skew,
                correlation: a.correlation,
                null_fraction: a.null_fraction,
                seed: a.seed,
            };
            write_dir(&generate(&cfg)?, &a.out)?;
        }
        Cmd::Ingest { schema, data, out } => {
            let mut catalog = Catalog::load_schema(&schema)?;
            catalog.ingest_dir(&data)?;
            catalog.save(&out)?;
            log::info!(
                "ingested {} tables into {}",
                catalog.tables.len(),
                out.display()
            );
        }
        Cmd::Stats { catalog, out } => {
            let catalog = Catalog::load(&catalog)?;
            StatsStore::build(&catalog)?.save(&out)?;
        }
        Cmd::Genwork {
            catalog,
            n,
            seed,
            non_empty,
            cap,
            out,
        } => {
            let catalog = Catalog::load(&catalog)?;
            let opts = WorkloadOptions {
                subgraph_cap: cap,
                non_empty,
                ..WorkloadOptions::default()
            };
            save_workload(&generate_workload_with(&catalog, n, seed, &opts)?, &out)?;
        }
        Cmd::Train {
            corpora,
            model,
            hyper,
            out,
        } => {
            let loaded = corpora
                .iter()
                .map(|s| LoadedCorpus::load(s))
                .collect::<Result<Vec<_>>>()?;
            let views: Vec<Corpus> = loaded.iter().map(LoadedCorpus::corpus).collect();
            let hyper = hyper.hyper(Hyper::default());
            let (m, history) = train_corpora(&views, model.config(), &hyper)?;
            log::info!("final loss {:?}", history.epoch_loss.last());
            save_checkpoint(&m, &out)?;
        }
        Cmd::Finetune {
            from,
            corpus,
            hyper,
            out,
        } => {
            let base = load_checkpoint(&from)?;
            let loaded = LoadedCorpus::load(&corpus)?;
            let hyper = hyper.hyper(Hyper::default().for_finetune());
            let (m, _) = finetune(&base, loaded.corpus(), &hyper)?;
            save_checkpoint(&m, &out)?;
        }
        Cmd::Estimate { loaded, query } => {
            let svc = Service::load(&loaded.checkpoint, &loaded.catalog, &loaded.stats)?;
            let e = svc.estimate_sql(&query)?;
            let out =
                serde_json::json!({"log_card": e.log_card, "card": e.card, "baseline": e.baseline});
            println!("{out}");
        }
        Cmd::Eval {
            catalog,
            stats,
            workload,
            checkpoint,
            baseline: _,
            report,
            csv,
        } => {
            let catalog = Catalog::load(&catalog)?;
            let stats = StatsStore::load(&stats)?;
            let records = load_workload(&workload)?;
            let result = match checkpoint {
                Some(path) => {
                    let model: Model = load_checkpoint(&path)?;
                    evaluate(
                        &records,
                        &catalog,
                        &ModelEstimator {
                            model: &model,
                            catalog: &catalog,
                            stats: &stats,
                        },
                    )
                }
                None => evaluate(
                    &records,
                    &catalog,
                    &BaselineEstimator {
                        catalog: &catalog,
                        stats: &stats,
                    },
                ),
            };
            write_report(&result, &report, csv.as_ref())?;
            if result.skipped > 0 {
                log::warn!("{} queries skipped", result.skipped);
            }
        }
        Cmd::Serve { loaded, addr } => {
            let svc = Service::load(&loaded.checkpoint, &loaded.catalog, &loaded.stats)?;
            match addr {
                Some(addr) => {
                    let listener = std::net::TcpListener::bind(&addr)
                        .map_err(|e| Error::Invalid(format!("bind {addr}: {e}")))?;
                    log::info!("listening on {addr}");
                    serve_listener(Arc::new(svc), listener)
                        .map_err(|e| Error::Invalid(e.to_string()))?;
                }
                None => {
                    let stdin = io::stdin();
                    serve_stream(&svc, stdin.lock(), io::stdout().lock())
                        .map_err(|e| Error::Invalid(e.to_string()))?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRICE_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(if e.is_model_error() { 3 } else { 2 })
        }
    }
}
