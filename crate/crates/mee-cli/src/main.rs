//! The `mee` experiment harness for robust-regression losses under covariate
//! shift: seeded sweeps, the kernel-size study, the noise table, the
//! dependence diagnostic, transfer runs, pretraining, and CSV ingestion
//! checks.
//!
//! Reports are CSV files; one-line human summaries go to stderr. Exit code
//! 0 on success, 2 when `--assert` checks fail, 1 on error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use mee_core::config::RawConfig;
use mee_core::experiments::{
    self, HistSpec, IngestConfig, LossKind, Metric, SweepConfig, SweepReport, TransferConfig,
};
use mee_core::ingest;
use mee_core::models::ModelSpec;
use mee_core::synthdata::{DatasetRole, NoiseKind};
use mee_core::training::{self, TrainConfig};
use mee_core::Loss;

#[derive(Parser)]
#[command(name = "mee", version, about = "Robust-regression and transfer-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per loss on source data, evaluate across a grid of
    /// covariate shifts, and write the sweep CSV.
    ShiftSweep(SweepArgs),
    /// Train the entropy loss with scaled median-rule kernel widths and
    /// report residual spread and histograms.
    KernelStudy(KernelArgs),
    /// Fixed-shift noise-robustness comparison; writes mean +- std per arm.
    NoiseTable(NoiseTableArgs),
    /// Paired input/residual dependence study at zero shift.
    Dependence(SweepArgs),
    /// Pretrain on source data, adapt on target data, evaluate on target
    /// test data.
    Transfer(TransferArgs),
    /// Train a single model and save it.
    Pretrain(PretrainArgs),
    /// Load the configured CSVs, window them, and print shapes.
    IngestCheck(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Configuration file: `key = value` lines under `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions (overrides the config file).
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated loss arms, e.g. `mse,mae,mee`.
    #[arg(long)]
    loss: Option<String>,
    /// Noise family: shifted_exponential | mixed_gaussian | laplace.
    #[arg(long)]
    noise: Option<String>,
    /// Evaluate the built-in ordering assertions; exit 2 when they fail.
    #[arg(long, default_value_t = false)]
    assert: bool,
}

impl CommonArgs {
    fn raw_config(&self) -> anyhow::Result<RawConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::from_path(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => RawConfig::default(),
        };
        if let Some(seed) = self.seed {
            raw.set("sweep", "seed", seed.to_string());
            raw.set("transfer", "seed", seed.to_string());
        }
        if let Some(reps) = self.reps {
            raw.set("sweep", "repetitions", reps.to_string());
            raw.set("transfer", "repetitions", reps.to_string());
        }
        if let Some(loss) = &self.loss {
            raw.set("sweep", "losses", loss.clone());
        }
        if let Some(noise) = &self.noise {
            raw.set("scenario", "noise", noise.clone());
        }
        Ok(raw)
    }

    fn out_path(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated shift magnitudes (overrides the config grid).
    #[arg(long)]
    mu_grid: Option<String>,
}

#[derive(Args)]
struct KernelArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated kernel-width multipliers.
    #[arg(long, default_value = "0.1,1,10")]
    multipliers: String,
}

#[derive(Args)]
struct NoiseTableArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Shift magnitude of the comparison.
    #[arg(long, default_value_t = 2.0)]
    shift: f64,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// finetune | probe.
    #[arg(long)]
    procedure: Option<String>,
    /// Loss for the pretraining phase.
    #[arg(long)]
    pretrain_loss: Option<String>,
    /// Loss for the adaptation phase.
    #[arg(long)]
    adapt_loss: Option<String>,
    /// Saved source model to adapt from (skips pretraining).
    #[arg(long)]
    source_model: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Where to store the trained model.
    #[arg(long, default_value = "model.txt")]
    model_out: PathBuf,
    /// Optional per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::ShiftSweep(args) => shift_sweep(args),
        Command::KernelStudy(args) => kernel_study(args),
        Command::NoiseTable(args) => noise_table(args),
        Command::Dependence(args) => dependence(args),
        Command::Transfer(args) => transfer(args),
        Command::Pretrain(args) => pretrain(args),
        Command::IngestCheck(args) => ingest_check(args),
    }
}

fn parse_f64_list(s: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .with_context(|| format!("bad {what} entry `{tok}`"))
        })
        .collect()
}

fn sweep_config(args: &SweepArgs) -> anyhow::Result<SweepConfig> {
    let mut raw = args.common.raw_config()?;
    if let Some(grid) = &args.mu_grid {
        raw.set("sweep", "mu_grid", grid.clone());
    }
    Ok(SweepConfig::from_raw(&raw)?)
}

fn summarize_sweep(report: &SweepReport, mu_grid: &[f64]) {
    for arm in report.arms() {
        let mut line = format!("arm {arm}: mean test_mse");
        for &mu in mu_grid {
            match report.mean(&arm, mu, Metric::TestMse) {
                Some(m) => line.push_str(&format!(" mu={mu}:{m:.4}")),
                None => line.push_str(&format!(" mu={mu}:-")),
            }
        }
        eprintln!("{line}");
    }
}

fn shift_sweep(args: SweepArgs) -> anyhow::Result<bool> {
    let cfg = sweep_config(&args)?;
    let report = experiments::run_shift_sweep(&cfg)?;
    let out = args.common.out_path("shift_sweep.csv");
    report.write_csv(&out)?;
    summarize_sweep(&report, &cfg.mu_grid);
    eprintln!("wrote {}", out.display());

    if !args.common.assert {
        return Ok(true);
    }
    let mee = LossKind::MeeMatrix.name();
    let mse = LossKind::Mse.name();
    let max_mu = cfg.mu_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pairs = report.paired(mee, mse, max_mu, Metric::TestMse);
    if pairs.is_empty() {
        bail!("--assert needs both `mee` and `mse` arms in the sweep");
    }
    let rate = experiments::win_rate(&pairs);
    let mean_mee = report.mean(mee, max_mu, Metric::TestMse).unwrap_or(f64::NAN);
    let mean_mse = report.mean(mse, max_mu, Metric::TestMse).unwrap_or(f64::NAN);
    let mut ok = true;
    if !(mean_mee < mean_mse && rate >= 0.8) {
        eprintln!(
            "ASSERT FAIL: at mu={max_mu} expected mee below mse (means {mean_mee:.4} vs {mean_mse:.4}) with win rate >= 0.8, got {rate:.2}"
        );
        ok = false;
    } else {
        eprintln!(
            "assert ok: mee {mean_mee:.4} < mse {mean_mse:.4} at mu={max_mu}, win rate {rate:.2}"
        );
    }
    Ok(ok)
}

fn kernel_study(args: KernelArgs) -> anyhow::Result<bool> {
    let raw = args.common.raw_config()?;
    let mut cfg = SweepConfig::from_raw(&raw)?;
    if args.common.noise.is_none() && raw.get("scenario", "noise").is_none() {
        cfg.scenario.noise = NoiseKind::Laplace;
    }
    let multipliers = match raw.get("kernel_study", "multipliers") {
        Some(m) => parse_f64_list(m, "multiplier")?,
        None => parse_f64_list(&args.multipliers, "multiplier")?,
    };
    let hist = HistSpec {
        lo: raw.parse_f64("kernel_study", "hist_min", -10.0)?,
        hi: raw.parse_f64("kernel_study", "hist_max", 10.0)?,
        bins: raw.parse_usize("kernel_study", "hist_bins", 64)?,
    };
    let report = experiments::run_kernel_size_study(&cfg, &multipliers, hist)?;

    let out = args.common.out_path("kernel_study.csv");
    std::fs::write(&out, report.stats_csv())?;
    let hist_out = sibling(&out, "_hist");
    std::fs::write(&hist_out, report.hist_csv())?;
    for &m in &multipliers {
        eprintln!(
            "multiplier {m}: mean residual std {:.4}, mean IQR {:.4}",
            report.mean_std(m).unwrap_or(f64::NAN),
            report.mean_iqr(m).unwrap_or(f64::NAN)
        );
    }
    eprintln!("wrote {} and {}", out.display(), hist_out.display());

    if !args.common.assert {
        return Ok(true);
    }
    if !multipliers.contains(&1.0) {
        bail!("--assert needs multiplier 1.0 in the list");
    }
    let base = report.mean_iqr(1.0).unwrap_or(f64::NAN);
    let mut ok = true;
    for &m in &multipliers {
        if m != 1.0 {
            let other = report.mean_iqr(m).unwrap_or(f64::NAN);
            let minimized = base <= other; // NaN counts as a failure
            if !minimized {
                eprintln!("ASSERT FAIL: IQR at multiplier 1 ({base:.4}) not below multiplier {m} ({other:.4})");
                ok = false;
            }
        }
    }
    if ok {
        eprintln!("assert ok: residual IQR minimized at multiplier 1 ({base:.4})");
    }
    Ok(ok)
}

fn noise_table(args: NoiseTableArgs) -> anyhow::Result<bool> {
    let raw = args.common.raw_config()?;
    let mut cfg = SweepConfig::from_raw(&raw)?;
    if args.common.loss.is_none() && raw.get("sweep", "losses").is_none() {
        cfg.losses = experiments::noise_table_losses();
    }
    let noises = match &args.common.noise {
        Some(n) => vec![NoiseKind::parse(n)?],
        None => vec![NoiseKind::Laplace, NoiseKind::MixedGaussian],
    };
    let (detail, summary) = experiments::run_noise_table(&cfg, &noises, args.shift)?;

    let out = args.common.out_path("noise_table.csv");
    summary.write_csv(&out)?;
    let detail_out = sibling(&out, "_detail");
    detail.write_csv(&detail_out)?;
    for row in &summary.rows {
        eprintln!(
            "{} {}: mean {} std {}",
            row.noise,
            row.loss,
            row.mean_mse.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
            row.std_mse.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
        );
    }
    eprintln!("wrote {} and {}", out.display(), detail_out.display());

    if !args.common.assert {
        return Ok(true);
    }
    let mut ok = true;
    let mee = LossKind::MeeMatrix.name();
    if let (Some(mee_m), Some(mae_m)) = (
        summary.mean_of("mixed_gaussian", mee),
        summary.mean_of("mixed_gaussian", "mae"),
    ) {
        let below = mee_m < mae_m; // NaN counts as a failure
        if !below {
            eprintln!("ASSERT FAIL: mixed_gaussian mee mean {mee_m:.4} not below mae {mae_m:.4}");
            ok = false;
        }
    }
    if let (Some(mae_m), Some(mee_m), Some(huber_m)) = (
        summary.mean_of("laplace", "mae"),
        summary.mean_of("laplace", mee),
        summary.mean_of("laplace", "huber"),
    ) {
        if !(mae_m <= mee_m && mee_m <= huber_m) {
            eprintln!(
                "ASSERT FAIL: laplace ordering mae {mae_m:.4} <= mee {mee_m:.4} <= huber {huber_m:.4} violated"
            );
            ok = false;
        }
    }
    if ok {
        eprintln!("assert ok: noise-table orderings hold");
    }
    Ok(ok)
}

fn dependence(args: SweepArgs) -> anyhow::Result<bool> {
    let cfg = sweep_config(&args)?;
    let report = experiments::run_dependence_study(&cfg)?;
    let out = args.common.out_path("dependence.csv");
    report.write_csv(&out)?;

    let pairs = report.paired("mee_matrix", "mse", 0.0, Metric::HsicXe);
    let rate = experiments::win_rate(&pairs);
    eprintln!(
        "dependence diagnostic: mee below mse in {:.0}% of {} paired reps",
        rate * 100.0,
        pairs.len()
    );
    eprintln!("wrote {}", out.display());

    if !args.common.assert {
        return Ok(true);
    }
    if rate >= 0.7 {
        eprintln!("assert ok: dependence win rate {rate:.2} >= 0.70");
        Ok(true)
    } else {
        eprintln!("ASSERT FAIL: dependence win rate {rate:.2} below 0.70");
        Ok(false)
    }
}

fn transfer(args: TransferArgs) -> anyhow::Result<bool> {
    let mut raw = args.common.raw_config()?;
    if let Some(p) = &args.procedure {
        raw.set("transfer", "procedure", p.clone());
    }
    if let Some(l) = &args.pretrain_loss {
        raw.set("transfer", "pretrain_loss", l.clone());
    }
    if let Some(l) = &args.adapt_loss {
        raw.set("transfer", "adapt_loss", l.clone());
    }
    if let Some(path) = &args.source_model {
        raw.set("transfer", "source_model", path.display().to_string());
    }
    let cfg = TransferConfig::from_raw(&raw)?;

    let report = if raw.get("ingest", "source_path").is_some() {
        let ing = IngestConfig::from_raw(&raw)?;
        let (source, target_train, target_test) = load_ingest(&ing)?;
        experiments::run_transfer_datasets(&cfg, &source, &target_train, &target_test, "csv")?
    } else {
        experiments::run_transfer(&cfg)?
    };

    let out = args.common.out_path("transfer.csv");
    report.write_csv(&out)?;
    let values = report.test_mse_values();
    if values.is_empty() {
        eprintln!("transfer: no finite results");
    } else {
        eprintln!(
            "{} {}-{}: target test mse {:.4} +- {:.4} over {} reps",
            cfg.procedure.name(),
            cfg.pretrain_loss.name(),
            cfg.adapt_loss.name(),
            mee_core::stats::mean(&values),
            mee_core::stats::sample_std(&values),
            values.len()
        );
    }
    eprintln!("wrote {}", out.display());
    Ok(true)
}

fn load_ingest(
    cfg: &IngestConfig,
) -> anyhow::Result<(mee_core::Dataset, mee_core::Dataset, mee_core::Dataset)> {
    let mut source = ingest::load_csv(Path::new(&cfg.source_path), &cfg.window)?;
    let mut target_train = ingest::load_csv(Path::new(&cfg.target_train_path), &cfg.window)?;
    let mut target_test = ingest::load_csv(Path::new(&cfg.target_test_path), &cfg.window)?;
    source.role = DatasetRole::Source;
    target_train.role = DatasetRole::TargetTrain;
    target_test.role = DatasetRole::TargetTest;
    if cfg.standardize {
        let stats = ingest::fit_standardize(source.x.view())?;
        source.x = ingest::apply_standardize(&stats, source.x.view())?;
        target_train.x = ingest::apply_standardize(&stats, target_train.x.view())?;
        target_test.x = ingest::apply_standardize(&stats, target_test.x.view())?;
    }
    Ok((source, target_train, target_test))
}

fn pretrain(args: PretrainArgs) -> anyhow::Result<bool> {
    let raw = args.common.raw_config()?;
    let sweep = SweepConfig::from_raw(&raw)?;
    let loss_kind = match &args.common.loss {
        Some(names) => LossKind::parse(names.split(',').next().unwrap_or("mse").trim())?,
        None => LossKind::Mse,
    };
    let loss: Loss = sweep.params.build(loss_kind)?;

    let (data, spec) = if raw.get("ingest", "source_path").is_some() {
        let ing = IngestConfig::from_raw(&raw)?;
        let (source, _, _) = load_ingest(&ing)?;
        let spec = ModelSpec::linear(source.dim());
        (source, spec)
    } else {
        let scenario = sweep.scenario.build(sweep.seed);
        (scenario.gen_source(0), ModelSpec::linear(sweep.scenario.dim))
    };

    let train_cfg = TrainConfig {
        seed: sweep.seed,
        ..sweep.train.clone()
    };
    let trained = training::pretrain(&data, &spec, &loss, &train_cfg)?;
    let mut model = trained.model;
    if loss.is_translation_invariant() {
        training::apply_bias_correction(&mut model, &data)?;
    }
    model.save(&args.model_out)?;
    if let Some(history_path) = &args.history {
        std::fs::write(history_path, trained.history.to_csv())?;
    }
    eprintln!(
        "pretrained {} on {} samples; final train loss {:.6}; saved to {}",
        loss.name(),
        data.n(),
        trained.history.final_train_loss().unwrap_or(f64::NAN),
        args.model_out.display()
    );
    Ok(true)
}

fn ingest_check(args: CommonArgs) -> anyhow::Result<bool> {
    let raw = args.raw_config()?;
    let cfg = IngestConfig::from_raw(&raw)?;
    for (label, path) in [
        ("source", &cfg.source_path),
        ("target_train", &cfg.target_train_path),
        ("target_test", &cfg.target_test_path),
    ] {
        let data = ingest::load_csv(Path::new(path), &cfg.window)?;
        let mean = mee_core::stats::mean(&data.y);
        let std = mee_core::stats::std_dev(&data.y);
        println!(
            "{label}: {} windows x {} features from {path}; label mean {mean:.4} std {std:.4}",
            data.n(),
            data.dim()
        );
    }
    Ok(true)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}
