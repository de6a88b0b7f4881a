//! `kinn`: run paired baseline/KINN forecasting experiments, export plot data
//! and check input series.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kinn_core::dataset::WindowSpec;
use kinn_core::evaluation::Arm;
use kinn_core::experiment::{emit_plot_data, run_experiment, validate_data, RunConfig};

#[derive(Parser)]
#[command(name = "kinn", version, about = "Kinematic-informed neural network forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every architecture × arm × session and write reports.
    Run(RunArgs),
    /// Concatenate a finished run's prediction traces into one plot CSV.
    Plot(PlotArgs),
    /// Check a series file and report the sessions it supports.
    ValidateData(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Series CSV with `date,value` columns.
    #[arg(long)]
    data: Option<String>,
    /// Comma-separated architectures, each optionally suffixed `:norm` or `:raw`.
    #[arg(long = "arch")]
    architectures: Option<String>,
    /// Per-architecture normalization overrides, e.g. `rbf=false,kgate=true`.
    #[arg(long)]
    normalize: Option<String>,
    /// baseline, kinn or both.
    #[arg(long)]
    arms: Option<String>,
    #[arg(long)]
    session_len: Option<String>,
    #[arg(long)]
    t_past: Option<String>,
    #[arg(long)]
    t_future: Option<String>,
    /// Training windows per session.
    #[arg(long)]
    train_obs: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, env = "KINN_OUTPUT_DIR")]
    output_dir: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<String>,
    /// Add the supervised velocity term to the kinematic loss.
    #[arg(long)]
    velocity_supervision: Option<String>,
    /// Weight of the velocity-consistency term.
    #[arg(long)]
    consistency_weight: Option<String>,
    /// Only run the first N session pairs.
    #[arg(long)]
    max_sessions: Option<String>,
    /// Write every training window to `windows.jsonl`.
    #[arg(long)]
    dump_windows: bool,
    #[arg(long)]
    rbf_centers: Option<String>,
    #[arg(long)]
    gmdh_select_k: Option<String>,
    #[arg(long)]
    gmdh_max_layers: Option<String>,
    #[arg(long)]
    gmdh_candidate_cap: Option<String>,
    #[arg(long)]
    gmdh_candidate_epochs: Option<String>,
    #[arg(long)]
    attention_width: Option<String>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        // architectures before normalize so the map applies to the final list
        let overrides = [
            ("data", self.data),
            ("architectures", self.architectures),
            ("normalize", self.normalize),
            ("arms", self.arms),
            ("session_len", self.session_len),
            ("t_past", self.t_past),
            ("t_future", self.t_future),
            ("train_obs", self.train_obs),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("lr", self.lr),
            ("seed", self.seed),
            ("output_dir", self.output_dir),
            ("threads", self.threads),
            ("velocity_supervision", self.velocity_supervision),
            ("consistency_weight", self.consistency_weight),
            ("max_sessions", self.max_sessions),
            ("rbf_centers", self.rbf_centers),
            ("gmdh_select_k", self.gmdh_select_k),
            ("gmdh_max_layers", self.gmdh_max_layers),
            ("gmdh_candidate_cap", self.gmdh_candidate_cap),
            ("gmdh_candidate_epochs", self.gmdh_candidate_epochs),
            ("attention_width", self.attention_width),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.dump_windows {
            cfg.dump_windows = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PlotArgs {
    /// Output directory of a finished run.
    #[arg(long, env = "KINN_OUTPUT_DIR", default_value = "kinn-output")]
    output_dir: PathBuf,
    /// Model label as written in summary.csv, e.g. `kgate_norm`.
    #[arg(long)]
    model: String,
    /// ann or kinn.
    #[arg(long, value_parser = parse_arm)]
    arm: Arm,
}

fn parse_arm(s: &str) -> Result<Arm, String> {
    match s {
        "ann" | "baseline" => Ok(Arm::Ann),
        "kinn" => Ok(Arm::Kinn),
        other => Err(format!("unknown arm `{other}` (ann, kinn)")),
    }
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "data/djia_2005_2022.csv")]
    data: PathBuf,
    #[arg(long, default_value_t = 120)]
    session_len: usize,
    #[arg(long, default_value_t = 30)]
    t_past: usize,
    #[arg(long, default_value_t = 30)]
    t_future: usize,
    #[arg(long, default_value_t = 30)]
    train_obs: usize,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.5}")
    }
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.into_config()?;
    eprintln!(
        "running {} architecture(s), arms {:?}, {} epochs, seed {} -> {}",
        cfg.architectures.len(),
        cfg.arms,
        cfg.epochs,
        cfg.seed,
        cfg.output_dir.display()
    );
    let report = run_experiment(&cfg)?;
    println!("{:<24} {:>20} {:>20} {:>10}  flags", "model", "ANN mape", "KINN mape", "p");
    for t in &report.tables {
        println!(
            "{:<24} {:>9} ± {:<8} {:>9} ± {:<8} {:>10}  {}",
            t.model,
            fmt_num(t.ann_summary.mean),
            fmt_num(t.ann_summary.std),
            fmt_num(t.kinn_summary.mean),
            fmt_num(t.kinn_summary.std),
            t.wilcoxon.map_or("-".into(), |w| format!("{:.5}", w.p_value)),
            t.flags.join(";")
        );
    }
    println!("{} session pair(s); reports in {}", report.sessions.len(), report.output_dir.display());
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let path = emit_plot_data(&args.output_dir, &args.model, args.arm)
        .with_context(|| format!("exporting {} {}", args.model, args.arm))?;
    println!("{}", path.display());
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let spec = WindowSpec {
        session_len: args.session_len,
        t_past: args.t_past,
        t_future: args.t_future,
        train_obs: args.train_obs,
    };
    let s = validate_data(&args.data, &spec).with_context(|| format!("validating {}", args.data.display()))?;
    println!("rows: {}", s.rows);
    println!("dates: {} .. {}", s.first_date, s.last_date);
    println!("full sessions: {}", s.full_sessions);
    println!("session pairs: {}", s.session_pairs);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Plot(a) => plot(a),
        Command::ValidateData(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
