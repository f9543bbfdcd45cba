use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use splat_align::cli::{self, RunConfig};
use splat_align::Result;

#[derive(Parser)]
#[command(name = "splat-align", version, about = "Proxy-to-partial Gaussian splat alignment and synthetic benchmark")]
struct Cli {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dotted config override, e.g. `--set degrade.drop_fraction=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene bundle.
    Synth,
    /// Greedy input-view selection over the training views.
    SelectViews {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        object: usize,
    },
    /// Segment an object from the degraded scene by weight voting.
    SegmentVote {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        object: usize,
    },
    /// Rendered-descriptor correspondences in every training view.
    Match {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        object: usize,
        /// Cloud to match instead of the bundle proxy (same primitive order).
        #[arg(long)]
        gen: Option<PathBuf>,
    },
    /// Coarse and iterative alignment of the proxy onto the partial object.
    Align {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        object: usize,
    },
    /// Appearance refinement of an aligned cloud.
    Refine {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        object: usize,
    },
    /// Render a cloud through a camera list.
    Render {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
    },
    /// CD, EMD and test-view mIoU against the bundle's ground truth.
    Eval {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        object: usize,
    },
    /// Print the effective configuration.
    Config,
}

fn print<T: Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    // a closed stdout (e.g. piped into `head`) is not a failure of the command
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn run(args: Cli) -> Result<()> {
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;
    if args.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let out = &args.out;
    match args.command {
        Command::Synth => {
            let m = cli::cmd_synth(&cfg, out)?;
            print(&serde_json::json!({ "bundle": out, "objects": m.n_objects, "train": m.train, "test": m.test }))
        }
        Command::SelectViews { bundle, object } => print(&cli::cmd_select_views(&bundle, object, &cfg, out)?),
        Command::SegmentVote { bundle, object } => {
            let r = cli::cmd_segment_vote(&bundle, object, &cfg, out)?;
            print(&serde_json::json!({ "selected": r.selected.len(), "precision": r.precision, "recall": r.recall }))
        }
        Command::Match { bundle, object, gen } => {
            let f = cli::cmd_match(&bundle, object, gen.as_deref(), &cfg, out)?;
            print(&serde_json::json!({ "pairs": f.pairs.len() }))
        }
        Command::Align { bundle, object } => print(&cli::cmd_align(&bundle, object, &cfg, out)?.transform),
        Command::Refine { cloud, bundle, object } => print(&cli::cmd_refine(&cloud, &bundle, object, &cfg, out)?),
        Command::Render { cloud, cameras } => {
            let n = cli::cmd_render(&cloud, &cameras, out)?;
            print(&serde_json::json!({ "views": n }))
        }
        Command::Eval { cloud, bundle, object } => print(&cli::cmd_eval(&cloud, &bundle, object, &cfg, out)?),
        Command::Config => print(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
