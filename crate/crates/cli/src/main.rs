use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msrc::config::ExperimentConfig;
use msrc::error::StageContext;
use msrc::eval;
use msrc::experiment::{self, Export};
use msrc::nn::checkpoint::Checkpoint;
use msrc::plot;
use msrc::residual_net::Msrc;
use msrc::{Error, Result};

/// Multi-scale residual classifier for network-traffic anomaly detection.
///
/// Every command reads the same TOML config. Any config key can be
/// overridden after the command as `--section.key value` or
/// `--section.key=value`.
#[derive(Parser, Debug)]
#[command(name = "msrc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Config overrides, e.g. `--wavelet.sw 64 --experiment.seed=7`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean, encode and normalise both splits and write them as CSV.
    Preprocess(Common),
    /// Train on the training split, evaluate on the test split, save the model.
    Train(Common),
    /// Score the test split with a saved model.
    Eval {
        /// Checkpoint to load; defaults to model.ckpt in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Stratified k-fold cross-validation on the training split.
    Cv(Common),
    /// Window size by level grid.
    Sweep(Common),
    /// Summarise the results in the output directory and redraw the heat map.
    Report(Common),
    /// Write a synthetic dataset in NSL-KDD layout.
    Synth {
        /// Output directory for train.csv and test.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8000)]
        train_records: usize,
        #[arg(long, default_value_t = 4000)]
        test_records: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg.trim_start_matches('-');
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else if arg.starts_with("--") {
            let v = it
                .next()
                .ok_or_else(|| Error::Config(format!("override {arg} has no value")))?;
            out.push((key.to_string(), v.clone()));
        } else {
            return Err(Error::Config(format!("unexpected argument {arg:?}; overrides look like --section.key value")));
        }
    }
    Ok(out)
}

/// Report only reads the output directory, so it skips validation.
fn load_config(common: &Common, validate: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in parse_overrides(&common.overrides)? {
        cfg.set(&k, &v)?;
    }
    if validate {
        cfg.validate()?;
    }
    log::info!("config hash {}", cfg.hash());
    Ok(cfg)
}

fn print_written(paths: &[PathBuf]) {
    if paths.is_empty() {
        println!("nothing to export");
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn preprocess(cfg: &ExperimentConfig) -> Result<()> {
    let data = experiment::load_data(cfg).stage("ingest")?;
    let mut export = Export::new(&cfg.experiment.output_dir, "preprocess", cfg);
    export.add("train_features.csv", data.train.to_csv());
    if let Some(test) = &data.test {
        export.add("test_features.csv", test.to_csv());
    }
    export.note(format!("source: {}", data.source));
    print_written(&export.finish().stage("export")?);
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let data = experiment::load_data(cfg).stage("ingest")?;
    let outcome = experiment::run_pipeline(cfg, &data)?;
    let m = &outcome.test_report.metrics;
    println!(
        "test: accuracy {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}  AUC {}",
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        fmt_opt(outcome.test_report.auc)
    );
    print_written(&experiment::export_pipeline(&outcome, cfg, &cfg.experiment.output_dir)?);
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, model: Option<PathBuf>) -> Result<()> {
    let path = model.unwrap_or_else(|| cfg.experiment.output_dir.join("model.ckpt"));
    let model = Checkpoint::load(&path)
        .and_then(|c| Msrc::from_checkpoint(&c))
        .stage("load model")?;
    let data = experiment::load_data(cfg).stage("ingest")?;
    let test = data
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("data.test is required for eval".into()))
        .stage("ingest")?;
    let windows = experiment::make_windows(cfg, test).stage("window")?;
    let report = experiment::evaluate_windows(&model, &windows.iter().collect::<Vec<_>>()).stage("evaluate")?;
    println!(
        "test: accuracy {:.4}  F1 {:.4}  AUC {}",
        report.metrics.accuracy,
        report.metrics.f1,
        fmt_opt(report.auc)
    );
    let mut export = Export::new(&cfg.experiment.output_dir, "eval", cfg);
    experiment::add_reports(&mut export, "eval_", &[("test".into(), &report)]);
    print_written(&export.finish().stage("export")?);
    Ok(())
}

fn cv(cfg: &ExperimentConfig) -> Result<()> {
    let data = experiment::load_data(cfg).stage("ingest")?;
    let summary = experiment::run_experiment1(cfg, &data)?;
    print!("{}", summary.to_csv());
    let notes = experiment::cv_notes(cfg, &summary);
    for n in &notes {
        log::info!("{n}");
    }
    print_written(&experiment::export_cv(&summary, cfg, &cfg.experiment.output_dir, &notes)?);
    Ok(())
}

fn sweep(cfg: &ExperimentConfig) -> Result<()> {
    let data = experiment::load_data(cfg).stage("ingest")?;
    let outcome = experiment::run_sweep(cfg, &data)?;
    print!("{}", outcome.to_csv());
    println!("spearman(k, accuracy): {}", fmt_opt(outcome.level_trend()));
    print_written(&experiment::export_sweep(&outcome, cfg, &cfg.experiment.output_dir)?);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |v| format!("{v:.4}"))
}

fn report(cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.experiment.output_dir;
    let mut found = false;
    if let Ok(text) = std::fs::read_to_string(dir.join("cv_results.csv")) {
        found = true;
        println!("cross-validation ({}):", dir.join("cv_results.csv").display());
        print!("{text}");
    }
    let mut export = Export::new(dir, "report", cfg);
    if let Ok(text) = std::fs::read_to_string(dir.join("sweep.csv")) {
        found = true;
        let cells = parse_sweep(&text).stage("report")?;
        let ran: Vec<(f64, f64)> = cells.iter().filter_map(|c| c.2.map(|a| (c.1 as f64, a))).collect();
        let (k, acc): (Vec<f64>, Vec<f64>) = ran.into_iter().unzip();
        println!("sweep: {} cells, spearman(k, accuracy) {}", cells.len(), fmt_opt(eval::spearman(&k, &acc)));
        export.add(
            "sweep_heatmap.svg",
            plot::heatmap_svg("Mean test accuracy by window size and level", &cells),
        );
    }
    if !found {
        println!("no results in {}", dir.display());
    }
    print_written(&export.finish().stage("export")?);
    Ok(())
}

fn parse_sweep(text: &str) -> Result<Vec<plot::HeatCell>> {
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::MalformedRow {
            row: i + 1,
            message: format!("unexpected sweep row {line:?}"),
        };
        if f.len() < 4 {
            return Err(bad());
        }
        let sw = f[0].parse().map_err(|_| bad())?;
        let k = f[1].parse().map_err(|_| bad())?;
        let acc = if f[3].is_empty() { None } else { Some(f[3].parse().map_err(|_| bad())?) };
        cells.push((sw, k, acc));
    }
    Ok(cells)
}

fn synth(out: &Path, train: usize, test: usize, seed: u64) -> Result<()> {
    use msrc::experiment::SURROGATE_ANOMALY_FRACTION;
    use msrc::synthetic::{nsl_kdd_like, write_records};
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut records = nsl_kdd_like(train + test, SURROGATE_ANOMALY_FRACTION, seed);
    let tail = records.split_off(train);
    write_records(out.join("train.csv"), &records)?;
    write_records(out.join("test.csv"), &tail)?;
    println!("wrote {} and {}", out.join("train.csv").display(), out.join("test.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => preprocess(&load_config(&c, true).stage("config")?),
        Command::Train(c) => train(&load_config(&c, true).stage("config")?),
        Command::Eval { model, common } => evaluate(&load_config(&common, true).stage("config")?, model),
        Command::Cv(c) => cv(&load_config(&c, true).stage("config")?),
        Command::Sweep(c) => sweep(&load_config(&c, true).stage("config")?),
        Command::Report(c) => report(&load_config(&c, false).stage("config")?),
        Command::Synth {
            out,
            train_records,
            test_records,
            seed,
        } => synth(&out, train_records, test_records, seed).stage("synth"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_accept_both_spellings() {
        let parsed = parse_overrides(&strings(&["--wavelet.sw", "64", "--experiment.seed=7", "sweep.repeats=2"])).unwrap();
        assert_eq!(
            parsed,
            vec![
                ("wavelet.sw".into(), "64".into()),
                ("experiment.seed".into(), "7".into()),
                ("sweep.repeats".into(), "2".into()),
            ]
        );
    }

    #[test]
    fn dangling_override_is_an_error() {
        assert!(parse_overrides(&strings(&["--wavelet.sw"])).is_err());
        assert!(parse_overrides(&strings(&["stray"])).is_err());
    }

    #[test]
    fn sweep_rows_parse_back() {
        let cells = parse_sweep("sw,levels,status,mean_accuracy,repeats\n4,6,skipped: too deep,,0\n64,2,ok,0.5,1\n").unwrap();
        assert_eq!(cells, vec![(4, 6, None), (64, 2, Some(0.5))]);
        assert!(parse_sweep("h\n1,2\n").is_err());
    }
}
