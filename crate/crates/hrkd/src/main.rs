use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use hrkd::checkpoint;
use hrkd::config::{config_digest, Ablations, Mode, RunConfig};
use hrkd::corpus::{self, Corpus, GenConfig};
use hrkd::grad_suite;
use hrkd::metrics;
use hrkd::train::{self, DistillOptions, Split};

/// Environment variable naming the metrics/checkpoint output directory.
const OUT_DIR_ENV: &str = "HRKD_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "hrkd",
    version,
    about = "Multi-domain knowledge distillation with domain-relational re-weighting"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-domain corpus as TSV files.
    GenData(GenDataArgs),
    /// Train the multi-task teacher on hard labels.
    TrainTeacher(TrainTeacherArgs),
    /// Distill a student from a teacher checkpoint.
    Distill(DistillArgs),
    /// Evaluate a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Summarize one or more metrics files.
    Report(ReportArgs),
    /// Run the finite-difference gradient suite.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct OutDirArg {
    /// Output directory (falls back to $HRKD_OUT_DIR, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutDirArg {
    fn resolve(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    out: OutDirArg,
    #[arg(long, default_value_t = 3)]
    domains: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 512)]
    vocab: usize,
    /// Fraction of pattern/noise vocabulary shared across domains, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    sharing: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 300)]
    dev: usize,
    #[arg(long, default_value_t = 300)]
    test: usize,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding corpus.{train,dev,test}.tsv (defaults to the output directory).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch count of the model being trained.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the learning rate of the model being trained.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the batch size.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct TrainTeacherArgs {
    #[command(flatten)]
    out: OutDirArg,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    out: OutDirArg,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Teacher checkpoint (defaults to <out>/teacher.ckpt).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Objective: hrkd or base_kd.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Comma-separated ablations: no_self_attention, no_comp_agg,
    /// no_hierarchical, no_domain_rel.
    #[arg(long)]
    ablate: Option<String>,
    /// Train on the first fraction of each domain's training split.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Sever gradients from the relational machinery into the encoder.
    #[arg(long)]
    detach_prototypes: bool,
    /// Suffix for output file names (student<tag>.ckpt, metrics<tag>.jsonl).
    #[arg(long, default_value = "")]
    tag: String,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    out: OutDirArg,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    /// dev or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Also dump `domain<TAB>prediction<TAB>label` rows here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics files to summarize.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// Also write the machine-readable summary here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Relative tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let mut run = match &args.config {
        Some(path) => RunConfig::load_toml(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    if let Some(batch) = args.batch_size {
        run.batch_size = batch;
    }
    Ok(run)
}

fn corpus_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join("corpus.train.tsv"),
        dir.join("corpus.dev.tsv"),
        dir.join("corpus.test.tsv"),
    )
}

fn load_corpus(dir: &Path) -> anyhow::Result<Corpus> {
    let (train, dev, test) = corpus_paths(dir);
    Ok(corpus::ingest_tsv(&train, &dev, &test).with_context(|| {
        format!(
            "loading corpus from {} (run `hrkd gen-data` first?)",
            dir.display()
        )
    })?)
}

fn data_dir(cfg: &ConfigArgs, out: &Path) -> PathBuf {
    cfg.data.clone().unwrap_or_else(|| out.to_path_buf())
}

fn fmt_acc(acc: &[f64]) -> String {
    let cells: Vec<String> = acc.iter().map(|v| format!("{v:.3}")).collect();
    format!("[{}]", cells.join(", "))
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData(args) => {
            let out = args.out.resolve();
            std::fs::create_dir_all(&out)?;
            let gen = GenConfig {
                num_domains: args.domains,
                classes: args.classes,
                vocab: args.vocab,
                sharing: args.sharing,
                seed: args.seed,
                train_per_domain: args.train,
                dev_per_domain: args.dev,
                test_per_domain: args.test,
                ..GenConfig::default()
            };
            let corpus = corpus::generate_synthetic_corpus(&gen)?;
            let (train, dev, test) = corpus_paths(&out);
            corpus::write_tsv(&corpus, &train, &dev, &test)?;
            println!(
                "wrote {} domains x {} train / {} dev / {} test to {}",
                args.domains,
                args.train,
                args.dev,
                args.test,
                out.display()
            );
        }

        Cmd::TrainTeacher(args) => {
            let out = args.out.resolve();
            std::fs::create_dir_all(&out)?;
            let mut run = load_config(&args.cfg)?;
            if let Some(epochs) = args.cfg.epochs {
                run.teacher_epochs = epochs;
            }
            if let Some(lr) = args.cfg.lr {
                run.teacher_lr = lr;
            }
            let corpus = load_corpus(&data_dir(&args.cfg, &out))?;
            let corpus = corpus::subsample(&corpus, run.sample_rate)?;
            let outcome = train::train_teacher(&run, &corpus)?;
            for (epoch, acc) in outcome.dev_accuracy.iter().enumerate() {
                println!("epoch {}: dev accuracy {}", epoch + 1, fmt_acc(acc));
            }
            let path = out.join("teacher.ckpt");
            checkpoint::save(&path, &config_digest(&run.teacher), &outcome.params)?;
            println!("teacher checkpoint: {}", path.display());
        }

        Cmd::Distill(args) => {
            let out = args.out.resolve();
            std::fs::create_dir_all(&out)?;
            let mut run = load_config(&args.cfg)?;
            if let Some(epochs) = args.cfg.epochs {
                run.student_epochs = epochs;
            }
            if let Some(lr) = args.cfg.lr {
                run.student_lr = lr;
            }
            if let Some(mode) = args.mode {
                run.mode = mode;
            }
            if let Some(list) = &args.ablate {
                run.ablations = Ablations::parse_list(list)?;
            }
            if let Some(rate) = args.sample_rate {
                run.sample_rate = rate;
            }
            if args.detach_prototypes {
                run.detach_prototypes = true;
            }
            let teacher_path = args
                .teacher
                .clone()
                .unwrap_or_else(|| out.join("teacher.ckpt"));
            let (digest, teacher) = checkpoint::load(&teacher_path)?;
            if digest != config_digest(&run.teacher) {
                bail!(
                    "{}: teacher checkpoint was written under a different encoder config",
                    teacher_path.display()
                );
            }
            let corpus = load_corpus(&data_dir(&args.cfg, &out))?;
            let corpus = corpus::subsample(&corpus, run.sample_rate)?;

            let tag = &args.tag;
            let metrics_path = out.join(format!("metrics{tag}.jsonl"));
            let ckpt_path = out.join(format!("student{tag}.ckpt"));
            let summary_path = out.join(format!("summary{tag}.json"));
            let outcome = train::distill_student(
                &run,
                &corpus,
                &teacher,
                DistillOptions {
                    metrics_path: Some(metrics_path.clone()),
                    checkpoint_path: Some(ckpt_path.clone()),
                    on_step: None,
                },
            )?;
            std::fs::write(
                &summary_path,
                serde_json::to_string_pretty(&outcome.summary)?,
            )?;
            println!(
                "distilled {} steps, loss {:.4} -> {:.4}, dev accuracy {}",
                outcome.summary.steps,
                outcome.summary.first_total_loss,
                outcome.summary.final_total_loss,
                fmt_acc(&outcome.summary.final_dev_accuracy)
            );
            println!("student checkpoint: {}", ckpt_path.display());
            println!("metrics: {}", metrics_path.display());
        }

        Cmd::Eval(args) => {
            let out = args.out.resolve();
            let run = load_config(&args.cfg)?;
            let corpus = load_corpus(&data_dir(&args.cfg, &out))?;
            let (digest, params) = checkpoint::load(&args.ckpt)?;
            let cfg = if digest == config_digest(&run.student) {
                &run.student
            } else if digest == config_digest(&run.teacher) {
                &run.teacher
            } else {
                bail!(
                    "{}: checkpoint matches neither the student nor the teacher config",
                    args.ckpt.display()
                );
            };
            let result = train::evaluate(&params, cfg, &corpus, args.split, &run)?;
            for (d, acc) in result.per_domain.iter().enumerate() {
                println!("{}: {acc:.4}", corpus.domains[d].name);
            }
            println!("macro average: {:.4}", result.macro_avg);
            if let Some(dump) = &args.dump {
                let mut text = String::new();
                for (d, preds) in result.predictions.iter().enumerate() {
                    for (pred, label) in preds {
                        text.push_str(&format!(
                            "{}\t{pred}\t{label}\n",
                            corpus.domains[d].name
                        ));
                    }
                }
                std::fs::write(dump, text)?;
                println!("predictions: {}", dump.display());
            }
        }

        Cmd::Report(args) => {
            let report = metrics::build_report(&args.metrics)?;
            print!("{}", report.to_text());
            if let Some(path) = &args.json {
                std::fs::write(path, report.to_json())?;
                println!("json report: {}", path.display());
            }
        }

        Cmd::GradCheck(args) => {
            let entries = grad_suite::run_gradient_suite(args.step, args.tol)?;
            let mut failed = false;
            for e in &entries {
                println!(
                    "{}: max relative deviation {:.3e} (tol {:.1e}) {}",
                    e.name,
                    e.max_rel_dev,
                    e.tol,
                    if e.passed { "PASS" } else { "FAIL" }
                );
                failed |= !e.passed;
            }
            if failed {
                bail!("gradient suite failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
