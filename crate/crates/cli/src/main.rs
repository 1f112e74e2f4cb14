use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lattice_eit_cli::commands::{self, MethodArg};
use lattice_eit_cli::server::{self, ServeConfig};
use lattice_eit_core::service::Method;

#[derive(Parser)]
#[command(name = "lattice-eit", version, about = "Lattice EIT tactile sensor twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the measurement protocol table.
    Protocol(commands::ProtocolArgs),
    /// Simulate one touch frame.
    Simulate(commands::SimulateArgs),
    /// Relative-sensitivity sweep over channel width and layer thickness.
    Sweep(commands::SweepArgs),
    /// Generate the reconstruction dataset (split and augmented).
    GenData(commands::GenDataArgs),
    /// Fit a reconstruction model.
    Fit(commands::FitArgs),
    /// Reconstruct images from difference frames.
    Reconstruct(commands::ReconstructArgs),
    /// Synthesize a gesture set.
    GenGestures(commands::GenGesturesArgs),
    /// Train the gesture classifier.
    Train(commands::TrainArgs),
    /// Evaluate a classifier or reconstruction model on held-out data.
    Eval(commands::EvalArgs),
    /// Run the live session server.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "LATTICE_EIT_PORT")]
    port: Option<u16>,
    /// Server configuration (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Reconstruction model container.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    tick_hz: Option<f64>,
}

fn progress(label: &'static str) -> impl FnMut(usize, usize) {
    let mut last = 0;
    move |k, n| {
        let pct = k * 100 / n.max(1);
        if pct / 10 != last / 10 || k == n {
            last = pct;
            eprint!("\r{label}: {k}/{n}");
            if k == n {
                eprintln!();
            }
            let _ = std::io::stderr().flush();
        }
    }
}

fn serve_config(args: ServeArgs) -> Result<ServeConfig> {
    let mut config = match &args.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => ServeConfig::default(),
    };
    if let Some(p) = args.port {
        config.port = p;
    }
    if let Some(g) = &args.geometry {
        config.session.geometry = commands::load_geometry(Some(g))?;
    }
    if let Some(m) = args.method {
        config.session.method = match m {
            MethodArg::Tikhonov => Method::Tikhonov,
            MethodArg::Linear => Method::Linear,
        };
    }
    if let Some(hz) = args.tick_hz {
        config.session.tick_hz = hz;
    }
    config.model = args.model.or(config.model);
    config.classifier = args.classifier.or(config.classifier);
    config.rules = args.rules.or(config.rules);
    Ok(config)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Protocol(a) => print!("{}", commands::protocol(&a)?),
        Command::Simulate(a) => {
            let f = commands::simulate(&a)?;
            println!("V_rel {:.6e}, written to {}", f.v_rel, a.out.display());
        }
        Command::Sweep(a) => print!("{}", commands::sweep(&a)?),
        Command::GenData(a) => print!("{}", commands::gen_data(&a, progress("phantoms"))?),
        Command::Fit(a) => println!("{}", commands::fit(&a)?),
        Command::Reconstruct(a) => {
            let images = commands::reconstruct(&a)?;
            println!("{} images written to {}", images.len(), a.out.display());
        }
        Command::GenGestures(a) => {
            let m = commands::gen_gestures(&a, progress("gestures"))?;
            println!("{} samples, sha256 {}", m.samples, m.sha256);
        }
        Command::Train(a) => {
            let model = commands::train(&a, progress("gestures"))?;
            let best = model.log.iter().find(|e| e.epoch == model.best_epoch);
            if let Some(e) = best {
                println!("best epoch {} (validation accuracy {:.4})", e.epoch, e.val_accuracy);
            }
            println!("sha256 {}", model.checksum());
        }
        Command::Eval(a) => print!("{}", commands::eval(&a)?),
        Command::Serve(a) => {
            let config = serve_config(a)?;
            tokio::runtime::Runtime::new()?.block_on(server::serve(config))?;
        }
    }
    Ok(())
}
