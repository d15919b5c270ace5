use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geosplat::dataset::load_trajectory;
use geosplat::pipeline::{self, format_report, RunConfig};
use geosplat::Error;

#[derive(Parser)]
#[command(name = "geosplat", version, about = "RGBD SLAM with GICP tracking and pixel-aligned Gaussian maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track and map a sequence into a run directory.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from the frames already persisted in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Recompute metrics of a completed run directory.
    Eval {
        /// Run directory.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Write a synthetic preset to disk in the generic layout.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Re-render the saved maps of a run along a trajectory file.
    Render {
        /// Run directory holding the maps.
        #[arg(long)]
        run: PathBuf,
        /// TUM-format pose file.
        #[arg(long)]
        poses: PathBuf,
        /// Directory for the rendered PNGs.
        #[arg(long, short)]
        output: PathBuf,
        /// Nearest maps combined per view.
        #[arg(long, default_value_t = 2)]
        maps: usize,
    },
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set mapper.iters=50`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
}

impl Common {
    fn build(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for s in &self.set {
            cfg.set_assignment(s)?;
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(m) = self.max_frames {
            cfg.max_frames = Some(m);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<bool, Error> {
    match command {
        Command::Run { common, resume } => {
            let mut cfg = common.build()?;
            cfg.resume |= resume;
            let outcome = pipeline::run_slam(&cfg)?;
            let failures = outcome.tracking_failures();
            eprintln!(
                "processed {} frames ({} resumed) in {:.1} s, {} tracking failures; outputs in {}",
                outcome.records.len(),
                outcome.resumed_frames,
                outcome.elapsed_s,
                failures,
                outcome.run_dir.display()
            );
            if let Some(report) = &outcome.report {
                print!("{}", summary_lines(&format_report(report)));
            }
            Ok(failures == 0)
        }
        Command::Eval { output } => {
            let report = pipeline::run_eval(&output)?;
            print!("{}", summary_lines(&format_report(&report)));
            Ok(report.tracking_failures == 0)
        }
        Command::Synth { common } => {
            let cfg = common.build()?;
            let n = pipeline::write_synthetic(&cfg, &cfg.output)?;
            eprintln!("wrote {n} frames of {} to {}", cfg.dataset, cfg.output.display());
            Ok(true)
        }
        Command::Render { run, poses, output, maps } => {
            let poses: Vec<_> = load_trajectory(&poses)?.into_iter().map(|(_, p)| p).collect();
            let n = pipeline::render_views(&run, &poses, &output, maps)?;
            eprintln!("rendered {n} views into {}", output.display());
            Ok(true)
        }
    }
}

/// The aggregate lines of a report, without the per-frame entries.
fn summary_lines(report: &str) -> String {
    report.lines().filter(|l| !l.starts_with("frame.")).map(|l| format!("{l}\n")).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
