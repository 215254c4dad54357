use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fishbone::deform::Edit;
use fishbone::dynamics::{ForceSchedule, SimConfig};
use fishbone::rig::ExtractConfig;
use fishbone::rig_store::load_rig;
use fishbone::skinning::WeightCache;
use fishbone_cli::augment::{run_augment, SamplerSpec};
use fishbone_cli::batch::{
    animate_capture, animate_render, read_json, run_deform, run_extract, simulate_files, with_overrides,
};
use fishbone_cli::server::{serve, AppState};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "fishbone", version, about = "Rib-spine rigs for triangle meshes")]
struct Cli {
    /// JSON file of parameter overrides for the subcommand (extraction
    /// parameters for extract/serve, simulation parameters for simulate).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a rig from an .obj or mesh-json file.
    Extract {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Skip the weight cache (FISHBONE_CACHE sets its location).
        #[arg(long)]
        no_cache: bool,
    },
    /// Apply a JSON list of edits to a rig.
    Deform {
        rig: PathBuf,
        #[arg(long)]
        edits: PathBuf,
        #[arg(long)]
        out_rig: Option<PathBuf>,
        #[arg(long)]
        out_mesh: Option<PathBuf>,
    },
    /// Run the reduced dynamics and write a JSON-lines trace.
    Simulate {
        rig: PathBuf,
        /// Force schedule: wind, gravity, impulses.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 120)]
        frames: usize,
        #[arg(long)]
        trace: PathBuf,
        /// Add a per-frame digest of the lifted mesh to each record.
        #[arg(long)]
        vertex_hash: bool,
        #[arg(long)]
        out_mesh: Option<PathBuf>,
    },
    /// Keyframe tracks.
    Animate {
        #[command(subcommand)]
        action: Animate,
    },
    /// Write randomized deformed variants of a rig.
    Augment {
        rig: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the HTTP session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory holding .fbr rigs; session logs go to <root>/sessions.
        #[arg(long, default_value = ".")]
        rig_root: PathBuf,
    },
}

#[derive(Subcommand)]
enum Animate {
    /// Store a rig's current pose in a track file at `time`.
    Capture {
        rig: PathBuf,
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        time: f64,
        #[arg(long = "loop")]
        looping: Option<bool>,
    },
    /// Write evenly spaced frames of a track as .obj files.
    Render {
        rig: PathBuf,
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn overrides(path: Option<&Path>) -> Result<Option<Value>> {
    path.map(read_json::<Value>).transpose()
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let over = overrides(cli.config.as_deref())?;
    match cli.command {
        Command::Extract { input, output, no_cache } => {
            let config: ExtractConfig = with_overrides(over.as_ref()).context("extraction config")?;
            let cache = (!no_cache).then(WeightCache::from_env);
            print_json(&run_extract(&input, &output, &config, cache.as_ref())?)
        }
        Command::Deform { rig, edits, out_rig, out_mesh } => {
            let edits: Vec<Edit> = read_json(&edits)?;
            run_deform(&rig, &edits, out_rig.as_deref(), out_mesh.as_deref())
        }
        Command::Simulate { rig, scenario, frames, trace, vertex_hash, out_mesh } => {
            let config: SimConfig = with_overrides(over.as_ref()).context("simulation config")?;
            let forces: ForceSchedule = scenario.as_deref().map(read_json).transpose()?.unwrap_or_default();
            print_json(&simulate_files(&rig, config, forces, frames, vertex_hash, &trace, out_mesh.as_deref())?)
        }
        Command::Animate { action } => match action {
            Animate::Capture { rig, track, time, looping } => {
                let t = animate_capture(&rig, &track, time, looping)?;
                print_json(&serde_json::json!({ "times": t.times(), "loop": t.looping }))
            }
            Animate::Render { rig, track, frames, out_dir } => {
                let written = animate_render(&rig, &track, frames, &out_dir)?;
                print_json(&serde_json::json!({ "frames": written.len() }))
            }
        },
        Command::Augment { rig, spec, count, out_dir, seed } => {
            let rig = load_rig(&rig)?;
            let spec: SamplerSpec = read_json(&spec)?;
            let written = run_augment(&rig, &spec, count, seed, &out_dir)?;
            print_json(&serde_json::json!({ "files": written.len(), "seed": seed }))
        }
        Command::Serve { port, host, rig_root } => {
            let addr = format!("{host}:{port}").parse().context("listen address")?;
            let state = AppState::new(rig_root, Some(WeightCache::from_env()));
            tokio::runtime::Runtime::new()?.block_on(serve(addr, state))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
