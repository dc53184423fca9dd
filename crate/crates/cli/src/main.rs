use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fleetslam::checkpoint::{export_checkpoint, resume_checkpoint};
use fleetslam::runner::{run_scenario, RunOptions, Transport};
use fleetslam::ScenarioConfig;
use fleetslam_core::grid::{export_map, import_map};
use fleetslam_core::merge::{merge_maps, MergeConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fleetslam", version, about = "Simulated quadruped fleet mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// directory for maps, trajectories and metrics.json
        #[arg(long)]
        out: Option<PathBuf>,
        /// drive every robot from `<ns>/cmd_vel` in real time
        #[arg(long)]
        teleop: bool,
        #[arg(long, value_enum, default_value_t = Transport::Inproc)]
        transport: Transport,
    },
    /// Merge exported maps (.yaml) into one
    Merge {
        #[arg(required = true)]
        maps: Vec<PathBuf>,
        #[arg(long, default_value = "merged")]
        out: PathBuf,
    },
    /// Run one graph-backend robot part way and save its pose graph
    ExportGraph {
        scenario: PathBuf,
        #[arg(long)]
        robot: String,
        /// simulated time of the checkpoint (s)
        #[arg(long)]
        at: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a saved pose graph to the end of its scenario
    ResumeGraph {
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            scenario,
            seed,
            out,
            teleop,
            transport,
        } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let opts = RunOptions {
                seed,
                out: out.clone(),
                transport,
                teleop,
                record_scans: false,
            };
            let run = run_scenario(&cfg, &opts)?;
            println!("{}", serde_json::to_string_pretty(&run.metrics)?);
            log::info!("finished in {:.1} s", run.wall_time.as_secs_f64());
            if let Some(out) = out {
                log::info!("artifacts in {}", out.display());
            }
        }
        Command::Merge { maps, out } => {
            let grids = maps
                .iter()
                .map(|p| import_map(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let merged = merge_maps(&grids, &MergeConfig::default())?;
            for (p, t) in maps.iter().zip(&merged.transforms) {
                match t {
                    Some(t) => println!(
                        "{}: x={:.3} y={:.3} theta={:.4} inliers={} confidence={:.2}",
                        p.display(),
                        t.transform.x,
                        t.transform.y,
                        t.transform.theta,
                        t.inlier_count,
                        t.confidence
                    ),
                    None => println!("{}: excluded", p.display()),
                }
            }
            export_map(&merged.grid, &out)?;
            if merged.excluded.len() == grids.len() - 1 && grids.len() > 1 {
                bail!("no map could be aligned with the first one");
            }
        }
        Command::ExportGraph {
            scenario,
            robot,
            at,
            seed,
            out,
        } => {
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let side = export_checkpoint(&cfg, &robot, at, &out)?;
            println!("{} at step {} -> {}", side.namespace, side.step, out.display());
        }
        Command::ResumeGraph { graph, out } => {
            let r = resume_checkpoint(&graph)?;
            println!("{}", serde_json::to_string_pretty(&r.metrics)?);
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                export_map(&r.map, out.join("map"))?;
                std::fs::write(out.join("graph.fspg"), &r.graph)?;
            }
        }
    }
    Ok(())
}
