use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use physfuse::config::{RunConfig, TINY_SYNTHETIC};
use physfuse::dataset::{
    generate_synthetic, load_manifest, write_signal, SegmentTable, SyntheticSpec, Target, MANIFEST_FILE,
};
use physfuse::dsp::{filter_and_decimate, segment, FilterPreset, Modality, TARGET_RATE, WINDOW_SECONDS};
use physfuse::gradcheck::{run_suite, TOLERANCE};
use physfuse::metrics::{accuracy, emit_report, macro_f1, read_report, ConfusionCounts, RunReport};
use physfuse::model::{load_model, save_fused, save_model, FusedModel, Mode, SingleModalityModel};
use physfuse::training::{
    classify_logits, finetune_emotion, fold_rows, fused_logits, load_fusion_backbones, pretrain_mvp,
    run_cross_validation, train_fused, FoldRows, FusionItem, Phase, RunLog,
};
use physfuse::{Error, Result, Scalar};

#[derive(Debug, Parser)]
#[command(name = "physfuse", version, about = "ECG/EEG emotion recognition: pre-training, fine-tuning, late fusion")]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides eval.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for cross-validation folds.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Precision::P32)]
    precision: Precision,
    /// Output directory; overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Precision {
    #[value(name = "32")]
    P32,
    #[value(name = "64")]
    P64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic ECG/EEG dataset.
    SynthGen {
        /// Generator settings (TOML); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Filter and resample a dataset to 128 Hz and write it as a new manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "amigos")]
        preset: String,
    },
    /// Masked-value pre-training on every segment of the dataset.
    Pretrain {
        #[arg(long)]
        modality: Modality,
    },
    /// Fine-tune one modality for one target on the first fold's split.
    Finetune {
        #[arg(long)]
        modality: Modality,
        #[arg(long)]
        target: Target,
        /// Pre-trained checkpoint to start from; from scratch when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train the fusion head on two fine-tuned checkpoints.
    FuseTrain {
        #[arg(long)]
        target: Target,
        #[arg(long)]
        ecg: Option<PathBuf>,
        #[arg(long)]
        eeg: Option<PathBuf>,
    },
    /// Full cross-validation protocol.
    Evaluate,
    /// Finite-difference gradient checks.
    Gradcheck,
    /// Re-emit tables from a run directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print the bundled tiny synthetic configuration.
    ExampleConfig,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::ConfigMismatch { .. } => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.precision {
        Precision::P32 => run::<f32>(&cli),
        Precision::P64 => run::<f64>(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.eval.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    cfg.echo()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, fallback: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn run<T: Scalar>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthGen { spec } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    toml::from_str::<SyntheticSpec>(&text)
                        .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
                }
                None => SyntheticSpec::default(),
            };
            let out = out_dir(cli, "synthetic");
            let m = generate_synthetic(&spec, cli.seed.unwrap_or(0), &out)?;
            println!("wrote {} trials to {}", m.entries.len(), out.join(MANIFEST_FILE).display());
            Ok(())
        }
        Command::Preprocess { manifest, preset } => preprocess(manifest, preset, &out_dir(cli, "preprocessed")),
        Command::Pretrain { modality } => pretrain::<T>(&load_config(cli)?, *modality),
        Command::Finetune { modality, target, init } => {
            finetune::<T>(&load_config(cli)?, *modality, *target, init.as_deref())
        }
        Command::FuseTrain { target, ecg, eeg } => fuse::<T>(&load_config(cli)?, *target, ecg.clone(), eeg.clone()),
        Command::Evaluate => evaluate::<T>(&load_config(cli)?, cli.jobs),
        Command::Gradcheck => gradcheck(cli.seed.unwrap_or(0)),
        Command::Report { dir } => {
            let report = read_report(dir)?;
            emit_report(&report, dir)?;
            print_summary(&report)
        }
        Command::ExampleConfig => {
            print!("{TINY_SYNTHETIC}");
            Ok(())
        }
    }
}

fn preprocess(manifest: &Path, preset: &str, out: &Path) -> Result<()> {
    let src = load_manifest(manifest)?;
    let filters = FilterPreset::named(preset)?;
    let mut dst = src.clone();
    dst.sample_rate = TARGET_RATE;
    let mut windows = 0;
    for (e, d) in src.entries.iter().zip(dst.entries.iter_mut()) {
        for &m in &src.modalities {
            let rec = filter_and_decimate(&src.read_record(e, m)?, &filters)?;
            windows += segment(&rec, WINDOW_SECONDS)?.len();
            let rel = PathBuf::from("signals").join(format!("{}_{}_{m}.f32", e.subject_id, e.trial_id));
            write_signal(&out.join(&rel), &rec.channels, rec.sample_rate)?;
            d.files.set(m, rel);
        }
    }
    dst.save(&out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} trials at {TARGET_RATE} Hz ({windows} windows of {WINDOW_SECONDS} s) to {}",
        dst.entries.len(),
        out.display()
    );
    Ok(())
}

fn to_t<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::from_f64).collect()
}

fn rows_input<T: Scalar>(
    table: &SegmentTable,
    m: Modality,
    rows: &[usize],
    norm: &physfuse::dataset::NormTable,
) -> Result<Vec<Vec<T>>> {
    rows.iter().map(|&r| table.normalized(m, r, norm).map(to_t)).collect()
}

fn require(table: &SegmentTable, m: Modality) -> Result<()> {
    if table.raw.contains_key(&m) {
        Ok(())
    } else {
        Err(Error::Contract(format!("dataset has no {m} signals")))
    }
}

fn pretrain<T: Scalar>(cfg: &RunConfig, m: Modality) -> Result<()> {
    let table = cfg.table()?;
    require(&table, m)?;
    let rows: Vec<usize> = (0..table.len()).collect();
    let norm = table.fit_norm(&rows)?;
    let data = rows_input::<T>(&table, m, &rows, &norm)?;
    let tc = cfg.train_config(Phase::Pretrain)?;
    let mut model = SingleModalityModel::<T>::new(m, cfg.model.for_modality(m).clone(), Mode::Pretrain, tc.seed)?;
    let dir = &cfg.output.dir;
    let mut log = RunLog::to_file(&dir.join(format!("pretrain_{m}.jsonl")))?;
    pretrain_mvp(&mut model, &data, &tc, &mut log)?;
    let ckpt = dir.join(format!("pretrain_{m}.phfu"));
    save_model(&model, None, &ckpt)?;
    log.set_checkpoint(&ckpt)?;
    println!(
        "pre-trained {m} on {} segments; final loss {:.5}; checkpoint {}",
        data.len(),
        log.losses().last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

/// First fold of the configured plan, used by the single-run commands.
fn first_fold(cfg: &RunConfig, table: &SegmentTable) -> Result<FoldRows> {
    let mut rows = fold_rows(table, cfg.eval.folds, cfg.eval.seed)?;
    let f = rows.swap_remove(0);
    f.check_leakage()?;
    Ok(f)
}

fn labeled(table: &SegmentTable, rows: &[usize], target: Target) -> (Vec<usize>, Vec<u8>) {
    rows.iter()
        .filter_map(|&r| table.label(r, target).map(|y| (r, y)))
        .unzip()
}

fn finetune<T: Scalar>(cfg: &RunConfig, m: Modality, target: Target, init: Option<&Path>) -> Result<()> {
    let table = cfg.table()?;
    require(&table, m)?;
    let fold = first_fold(cfg, &table)?;
    let norm = table.fit_norm(&fold.pretrain)?;
    let mut tc = cfg.train_config(Phase::Finetune)?;
    tc.target = Some(target);
    let config = cfg.model.for_modality(m);
    let mut model = match init {
        Some(p) => {
            let (pre, _) = load_model::<T>(p, Some((m, config)))?;
            if pre.mode == Mode::Pretrain {
                pre.into_finetune(tc.seed)
            } else {
                pre
            }
        }
        None => SingleModalityModel::<T>::new(m, config.clone(), Mode::Finetune, tc.seed)?,
    };
    let (tr, ytr) = labeled(&table, &fold.train, target);
    let (va, yva) = labeled(&table, &fold.validation, target);
    let (te, yte) = labeled(&table, &fold.test, target);
    if tr.is_empty() {
        return Err(Error::Contract(format!("no {target} labels in the training split")));
    }
    let dir = &cfg.output.dir;
    let mut log = RunLog::to_file(&dir.join(format!("finetune_{m}_{target}.jsonl")))?;
    let summary = finetune_emotion(
        &mut model,
        (&rows_input(&table, m, &tr, &norm)?, &ytr),
        (&rows_input(&table, m, &va, &norm)?, &yva),
        &tc,
        &mut log,
    )?;
    let ckpt = dir.join(format!("finetune_{m}_{target}.phfu"));
    save_model(&model, Some(target), &ckpt)?;
    log.set_checkpoint(&ckpt)?;
    let logits = classify_logits(&model, &rows_input(&table, m, &te, &norm)?)?;
    let c = ConfusionCounts::from_logits(&yte, &logits)?;
    println!(
        "{m} {target}: best epoch {}, test accuracy {:.4}, macro-F1 {:.4} on {} segments; checkpoint {}",
        summary.best_epoch,
        accuracy(&c)?,
        macro_f1(&c)?,
        yte.len(),
        ckpt.display()
    );
    Ok(())
}

fn fuse<T: Scalar>(cfg: &RunConfig, target: Target, ecg: Option<PathBuf>, eeg: Option<PathBuf>) -> Result<()> {
    let dir = &cfg.output.dir;
    let ecg = ecg.unwrap_or_else(|| dir.join(format!("finetune_ecg_{target}.phfu")));
    let eeg = eeg.unwrap_or_else(|| dir.join(format!("finetune_eeg_{target}.phfu")));
    let (e, g, t) = load_fusion_backbones::<T>(&ecg, &eeg)?;
    if t != target {
        return Err(Error::Contract(format!("checkpoints were fine-tuned for {t}, not {target}")));
    }
    let table = cfg.table()?;
    require(&table, Modality::Ecg)?;
    require(&table, Modality::Eeg)?;
    let fold = first_fold(cfg, &table)?;
    let norm = table.fit_norm(&fold.pretrain)?;
    let mut tc = cfg.train_config(Phase::Fuse)?;
    tc.target = Some(target);
    let mut model = FusedModel::new(target, e, g, &cfg.model.fusion_hidden, tc.dropout, tc.seed)?;
    let prepared = |rows: &[usize]| -> Result<Vec<Prepared<T>>> {
        let (rs, ys) = labeled(&table, rows, target);
        rs.iter()
            .zip(ys)
            .map(|(&r, y)| {
                Ok((
                    r,
                    to_t(table.normalized(Modality::Ecg, r, &norm)?),
                    to_t(table.normalized(Modality::Eeg, r, &norm)?),
                    y,
                ))
            })
            .collect()
    };
    let items = |p| fusion_items(&table, p);
    let (tr, va, te) = (prepared(&fold.train)?, prepared(&fold.validation)?, prepared(&fold.test)?);
    let mut log = RunLog::to_file(&dir.join(format!("fuse_{target}.jsonl")))?;
    let (summary, _) = train_fused(&mut model, &items(&tr), &items(&va), &tc, &mut log)?;
    let ckpt = dir.join(format!("fused_{target}.phfu"));
    save_fused(&model, &ckpt)?;
    log.set_checkpoint(&ckpt)?;
    let test = items(&te);
    let logits = fused_logits(&model, &test)?;
    let labels: Vec<u8> = test.iter().map(|i| i.label).collect();
    let c = ConfusionCounts::from_logits(&labels, &logits)?;
    println!(
        "fused {target}: best epoch {}, test accuracy {:.4}, macro-F1 {:.4}; checkpoint {}",
        summary.best_epoch,
        accuracy(&c)?,
        macro_f1(&c)?,
        ckpt.display()
    );
    Ok(())
}

type Prepared<T> = (usize, Vec<T>, Vec<T>, u8);

fn fusion_items<'a, T: Scalar>(table: &'a SegmentTable, p: &'a [Prepared<T>]) -> Vec<FusionItem<'a, T>> {
    p.iter()
        .map(|(r, a, b, y)| FusionItem {
            key: &table.keys[*r],
            ecg: a,
            eeg: b,
            label: *y,
        })
        .collect()
}

fn evaluate<T: Scalar>(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let table = cfg.table()?;
    let opts = cfg.cv_options(jobs)?;
    let outcome = run_cross_validation::<T>(&table, &opts)?;
    emit_report(&outcome.report, &cfg.output.dir)?;
    print_summary(&outcome.report)?;
    println!("report written to {}", cfg.output.dir.display());
    Ok(())
}

fn print_summary(report: &RunReport) -> Result<()> {
    println!("{:<6} {:<8} {:<9} {:>6} {:>8} {:>8}", "model", "target", "metric", "folds", "mean", "ci95±");
    for a in report.aggregate()? {
        println!(
            "{:<6} {:<8} {:<9} {:>6} {:>8.4} {:>8.4}",
            a.model.name(),
            a.target.name(),
            a.metric.name(),
            a.folds,
            a.mean,
            a.ci95_half_width
        );
    }
    Ok(())
}

fn gradcheck(seed: u64) -> Result<()> {
    let (reports, secs) = run_suite(seed)?;
    let mut worst = 0.0f64;
    for r in &reports {
        println!(
            "{:<20} probes {:>4}  max rel error {:.3e}  ({})",
            r.name, r.probes, r.max_rel_error, r.worst
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:.3e} (threshold {TOLERANCE:e}) in {secs:.2} s");
    if worst < TOLERANCE {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed: {worst:.3e} ≥ {TOLERANCE:e}")))
    }
}
