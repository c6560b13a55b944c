//! The `ts3dcnn` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbone::TapPoint;
use crate::checkpoint::Checkpoint;
use crate::config::{parse_config, RunConfig};
use crate::data::{stratified_kfold, stratified_split, write_cohort, Dataset, Sample};
use crate::error::{Error, Result};
use crate::gradsuite::run_suite;
use crate::model::Modality;
use crate::train::{
    cross_validate, evaluate, experiment_matrix, predict, train, CvOptions, ExperimentOptions,
};

#[derive(Debug, Parser)]
#[command(name = "ts3dcnn", version, about = "Two-stream 3D CNN for nodule malignancy from paired CT scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic paired-scan cohort.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_studies: Option<usize>,
        #[arg(long)]
        n_malignant: Option<usize>,
        /// Start from the `[synth]` section of this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on the training portion of a cohort and save a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        mode: Option<Modality>,
        #[arg(long)]
        tap: Option<TapPoint>,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Per-epoch `epoch,train_loss,val_loss,val_f1` CSV.
        #[arg(long)]
        history_out: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation on the training portion.
    Crossval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        mode: Option<Modality>,
        #[arg(long)]
        tap: Option<TapPoint>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Score a checkpoint on one portion of a cohort.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        roc_out: Option<PathBuf>,
        /// Full metrics as JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Malignancy probability and label for one study manifest.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Cross-validate every modality and tap, retrain the best tap per
    /// modality and score it on the test portion.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
        /// Full report as JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Restrict to these taps (comma separated).
        #[arg(long, value_delimiter = ',')]
        taps: Vec<TapPoint>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Finite-difference gradient checks of every layer.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a checkpoint manifest.
    InspectCkpt {
        ckpt: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory or `cohort.json`; overrides `data.cohort_path`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on usage or validation errors, 2 on
/// runtime failures.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::UnknownConfigKey(_) | Error::ConfigParse(_) | Error::ConfigValue { .. } | Error::InvalidArgument { .. } => 1,
        _ => 2,
    }
}

fn usage(reason: impl Into<String>) -> Error {
    Error::invalid("usage", reason)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_cohort(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    let path = data
        .or(cfg.data.cohort_path.as_deref())
        .ok_or_else(|| usage("no cohort given; pass --data or set data.cohort_path"))?;
    Dataset::load_cohort(path, cfg.data.patch_size)
}

/// `(train portion, test portion)` of the configured stratified split.
fn split(cfg: &RunConfig, data: &Dataset) -> Result<(Dataset, Dataset)> {
    let plan = stratified_split(&data.ids(), &data.classes(), cfg.data.split_fraction, cfg.data.split_seed)?;
    Ok((data.subset(&plan.train_ids)?, data.subset(&plan.test_ids)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(command: Command) -> Result<i32> {
    let mut out = std::io::stdout().lock();
    let mut say = |line: String| {
        let _ = writeln!(out, "{line}");
    };
    match command {
        Command::Synth {
            out,
            seed,
            n_studies,
            n_malignant,
            config,
        } => {
            let mut synth = load_config(config.as_deref())?.synth;
            if let Some(s) = seed {
                synth.seed = s;
            }
            if let Some(n) = n_studies {
                synth.n_studies = n;
            }
            if let Some(n) = n_malignant {
                synth.n_malignant = n;
            }
            synth.validate().map_err(|e| usage(e.to_string()))?;
            let index = write_cohort(&synth, &out)?;
            say(format!(
                "wrote {} studies ({} malignant) to {}",
                index.manifests.len(),
                synth.n_malignant,
                out.display()
            ));
        }
        Command::Train {
            run,
            mode,
            tap,
            out_ckpt,
            history_out,
        } => {
            let mut cfg = load_config(run.config.as_deref())?;
            if let Some(m) = mode {
                cfg.model.mode = m;
            }
            if let Some(t) = tap {
                cfg.model.tap = t;
            }
            let data = load_cohort(&cfg, run.data.as_deref())?;
            let (train_part, _) = split(&cfg, &data)?;
            let spec = cfg.model_spec()?;
            let mut model = spec.build(cfg.train.dropout)?;
            let (train_set, val_set) = if cfg.train.overfit_probe {
                (train_part.clone(), train_part)
            } else {
                let plan = stratified_kfold(&train_part.ids(), &train_part.classes(), cfg.data.kfolds, cfg.data.split_seed)?;
                let (t, v) = plan.fold(0);
                (train_part.subset(&t)?, train_part.subset(&v)?)
            };
            let outcome = train(&mut model, spec.modality, &train_set, Some(&val_set), &cfg.train)?;
            Checkpoint::from_model(&model, &spec, Some(&cfg))?.write(&out_ckpt)?;
            if let Some(p) = history_out {
                write_text(&p, &outcome.history.to_csv())?;
            }
            let val = evaluate(&model, spec.modality, &val_set, 0.5)?;
            say(format!(
                "{} ({}, {}): {} epochs, best epoch {}, validation F1 {:.3}",
                spec.modality.model_name(),
                spec.modality,
                spec.tap,
                outcome.epochs_run,
                outcome.best_epoch,
                val.f1
            ));
            say(format!("checkpoint written to {}", out_ckpt.display()));
        }
        Command::Crossval {
            run,
            folds,
            mode,
            tap,
            workers,
        } => {
            let mut cfg = load_config(run.config.as_deref())?;
            if let Some(k) = folds {
                cfg.data.kfolds = k;
            }
            if let Some(m) = mode {
                cfg.model.mode = m;
            }
            if let Some(t) = tap {
                cfg.model.tap = t;
            }
            cfg.validate()?;
            let data = load_cohort(&cfg, run.data.as_deref())?;
            let (train_part, _) = split(&cfg, &data)?;
            let opts = CvOptions {
                k: cfg.data.kfolds,
                fold_seed: cfg.data.split_seed,
                workers,
            };
            let report = cross_validate(&train_part, &cfg.model_spec()?, &cfg.train, &opts)?;
            say("fold,train_f1,val_f1,best_epoch,epochs_run".into());
            for f in &report.folds {
                say(format!("{},{:.4},{:.4},{},{}", f.fold, f.train_f1, f.val_f1, f.best_epoch, f.epochs_run));
            }
            say(format!("train F1 {}  val F1 {}", report.train_f1, report.val_f1));
        }
        Command::Eval {
            ckpt,
            data,
            split: which,
            roc_out,
            report_out,
            threshold,
        } => {
            let ckpt = Checkpoint::read(&ckpt)?;
            let (model, _) = ckpt.restore_model()?;
            let cfg = ckpt.manifest.config.clone().unwrap_or_default();
            let cohort = load_cohort(&cfg, data.as_deref())?;
            let set = match which {
                SplitArg::All => cohort,
                SplitArg::Train => split(&cfg, &cohort)?.0,
                SplitArg::Test => split(&cfg, &cohort)?.1,
            };
            let modality = ckpt.manifest.model.modality;
            let report = evaluate(&model, modality, &set, threshold)?;
            say(format!("studies    {}", set.len()));
            say(format!("tp/fp/tn/fn {}/{}/{}/{}", report.tp, report.fp, report.tn, report.fn_));
            say(format!("precision  {:.4}", report.precision));
            say(format!("recall     {:.4}", report.recall));
            say(format!("f1         {:.4}", report.f1));
            match report.auc {
                Some(auc) => say(format!("auc        {auc:.4}")),
                None => say("auc        undefined (one class)".into()),
            }
            if let Some(p) = roc_out {
                write_text(&p, &report.roc_csv())?;
            }
            if let Some(p) = report_out {
                write_text(&p, &serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::Predict { ckpt, study, threshold } => {
            let ckpt = Checkpoint::read(&ckpt)?;
            let (model, _) = ckpt.restore_model()?;
            let sample = Sample::from_manifest(&study, ckpt.manifest.model.patch_extent)?;
            let set = Dataset::new(vec![sample])?;
            let p = predict(&model, ckpt.manifest.model.modality, &set)?[0];
            let label = if p >= threshold { "malignant" } else { "benign" };
            say(format!("{p:.6}\t{label}"));
        }
        Command::Experiment {
            run,
            report_out,
            taps,
            workers,
        } => {
            let cfg = load_config(run.config.as_deref())?;
            let data = load_cohort(&cfg, run.data.as_deref())?;
            let (train_part, test) = split(&cfg, &data)?;
            let opts = ExperimentOptions {
                modalities: Modality::ALL.to_vec(),
                taps: if taps.is_empty() { TapPoint::ALL.to_vec() } else { taps },
                cv: CvOptions {
                    k: cfg.data.kfolds,
                    fold_seed: cfg.data.split_seed,
                    workers,
                },
            };
            let report = experiment_matrix(&train_part, &test, &cfg.model_spec()?, &cfg.train, &opts)?;
            say(report.table());
            if let Some(p) = report_out {
                write_text(&p, &serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::Gradcheck { seed } => {
            let reports = run_suite(seed)?;
            for r in &reports {
                say(r.to_string());
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", reports.len());
                return Ok(2);
            }
        }
        Command::InspectCkpt { ckpt } => {
            let ckpt = Checkpoint::read(&ckpt)?;
            say(serde_json::to_string_pretty(&ckpt.manifest)?);
        }
    }
    Ok(0)
}
