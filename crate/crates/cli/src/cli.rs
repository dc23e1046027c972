//! Command-line arguments. Flags mirror [`RunConfig`]; a `--config` file
//! supplies the base and flags override it.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mcpm_core::analysis::Threshold;
use mcpm_core::mcpm::SpawnMode;
use mcpm_core::{Dims, Metric};

use crate::commands::{cmd_cluster, cmd_export, cmd_fit, cmd_probe, cmd_rank, parse_axis};
use crate::config::{parse_pos, parse_threshold, Query, RunConfig};
use crate::error::Result;
use crate::server::cmd_serve;

#[derive(Debug, Parser)]
#[command(name = "mcpm", version, about = "Fit and explore trace networks over 3D embeddings")]
pub struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration used as the base.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, env = "MCPM_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McpmArgs {
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Lattice resolution per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub sense_distance: Option<f32>,
    #[arg(long)]
    pub sense_angle: Option<f32>,
    #[arg(long)]
    pub move_distance: Option<f32>,
    #[arg(long)]
    pub decay: Option<f32>,
    #[arg(long)]
    pub trace_window: Option<usize>,
    /// Spawn agents uniformly in the cube instead of at data points.
    #[arg(long)]
    pub uniform_spawn: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub probe_steps: Option<usize>,
    #[arg(long)]
    pub probe_sense_distance: Option<f32>,
    #[arg(long)]
    pub probe_sense_angle: Option<f32>,
    #[arg(long)]
    pub probe_move_distance: Option<f32>,
    #[arg(long)]
    pub discovery_radius: Option<f32>,
    /// Independent probe runs averaged per ranking.
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Seed token surface.
    #[arg(long, conflicts_with = "pos")]
    pub token: Option<String>,
    /// Seed position `x,y,z` in the unit cube.
    #[arg(long, value_parser = parse_pos)]
    pub pos: Option<[f32; 3]>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the trace network to a point cloud.
    Fit {
        #[command(flatten)]
        common: Common,
        /// `surface x y z [meta]` TSV with a header row.
        #[arg(long, conflicts_with = "vectors")]
        points: Option<PathBuf>,
        /// word2vec text vectors.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Project vectors to 3D with PCA.
        #[arg(long)]
        pca: bool,
        #[arg(long)]
        margin: Option<f32>,
        #[command(flatten)]
        mcpm: McpmArgs,
    },
    /// Rank tokens by probe reachability and compare with the baselines.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Directory written by `fit`.
        #[arg(long = "run")]
        run_dir: Option<PathBuf>,
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write one ranking for a token.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long = "run")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        token: Option<String>,
        #[arg(long, default_value = "mcpm")]
        metric: Metric,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Label connected components of the thresholded trace.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long = "run")]
        run_dir: Option<PathBuf>,
        /// `auto` or an absolute trace value.
        #[arg(long, value_parser = parse_threshold)]
        tau: Option<Threshold>,
        /// Mass share kept by `--tau auto`.
        #[arg(long)]
        mass_fraction: Option<f64>,
        /// In voxels.
        #[arg(long)]
        assign_radius: Option<f32>,
    },
    /// Write an axis-aligned field slice as CSV.
    Export {
        #[arg(long = "run")]
        run_dir: PathBuf,
        #[arg(long, default_value = "trace")]
        field: String,
        #[arg(long, value_parser = parse_axis, default_value = "z")]
        axis: usize,
        #[arg(long)]
        index: usize,
        #[arg(long, env = "MCPM_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Serve the REST API for a fitted run.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long = "run")]
        run_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Concurrent probe computations.
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[command(flatten)]
        probe: ProbeArgs,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Common {
    fn base(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        Ok(cfg)
    }
}

impl McpmArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.mcpm;
        set(&mut p.n_agents, self.agents);
        set(&mut p.n_steps, self.steps);
        set(&mut p.grid_res, self.grid.map(Dims::cube));
        set(&mut p.sense_distance, self.sense_distance);
        set(&mut p.sense_angle, self.sense_angle);
        set(&mut p.move_distance, self.move_distance);
        set(&mut p.decay, self.decay);
        set(&mut p.trace_window, self.trace_window);
        if self.uniform_spawn {
            p.spawn = SpawnMode::Uniform;
        }
    }
}

impl ProbeArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.probe;
        set(&mut p.n_probes, self.probes);
        set(&mut p.n_steps, self.probe_steps);
        set(&mut p.sense_distance, self.probe_sense_distance);
        set(&mut p.sense_angle, self.probe_sense_angle);
        set(&mut p.move_distance, self.probe_move_distance);
        set(&mut p.discovery_radius, self.discovery_radius);
        set(&mut cfg.analysis.n_repeats, self.repeats);
    }
}

fn set_run_dir(cfg: &mut RunConfig, dir: &Option<PathBuf>) {
    if dir.is_some() {
        cfg.run_dir = dir.clone();
    }
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            common,
            points,
            vectors,
            pca,
            margin,
            mcpm,
        } => {
            let mut cfg = common.base()?;
            if points.is_some() || vectors.is_some() {
                cfg.points = points;
                cfg.vectors = vectors;
            }
            cfg.pca |= pca;
            set(&mut cfg.margin, margin);
            mcpm.apply(&mut cfg);
            let out = cmd_fit(&cfg)?;
            println!("{}", out.display());
        }
        Command::Probe {
            common,
            run_dir,
            query,
            probe,
            top_k,
        } => {
            let mut cfg = common.base()?;
            set_run_dir(&mut cfg, &run_dir);
            if let Some(t) = query.token {
                cfg.query = Some(Query::Token(t));
            } else if let Some(p) = query.pos {
                cfg.query = Some(Query::Pos(p));
            }
            probe.apply(&mut cfg);
            set(&mut cfg.analysis.top_k, top_k);
            let out = cmd_probe(&cfg)?;
            println!("{}", out.display());
        }
        Command::Rank {
            common,
            run_dir,
            token,
            metric,
            probe,
        } => {
            let mut cfg = common.base()?;
            set_run_dir(&mut cfg, &run_dir);
            if let Some(t) = token {
                cfg.query = Some(Query::Token(t));
            }
            probe.apply(&mut cfg);
            let out = cmd_rank(&cfg, metric)?;
            println!("{}", out.display());
        }
        Command::Cluster {
            common,
            run_dir,
            tau,
            mass_fraction,
            assign_radius,
        } => {
            let mut cfg = common.base()?;
            set_run_dir(&mut cfg, &run_dir);
            set(&mut cfg.analysis.threshold, tau);
            if let Some(f) = mass_fraction {
                cfg.analysis.threshold = Threshold::Auto { mass_fraction: f };
            }
            set(&mut cfg.analysis.assign_radius, assign_radius);
            let out = cmd_cluster(&cfg)?;
            println!("{}", out.display());
        }
        Command::Export {
            run_dir,
            field,
            axis,
            index,
            out,
        } => {
            let cfg = RunConfig {
                run_dir: Some(run_dir),
                out,
                ..Default::default()
            };
            let path = cmd_export(&cfg, &field, axis, index)?;
            println!("{}", path.display());
        }
        Command::Serve {
            common,
            run_dir,
            host,
            port,
            workers,
            probe,
        } => {
            let mut cfg = common.base()?;
            set_run_dir(&mut cfg, &run_dir);
            if cfg.seed.is_none() {
                if let Some(fit) = cfg.run_dir.as_ref().and_then(|d| RunConfig::load(d.join(crate::config::RESOLVED_CONFIG)).ok()) {
                    cfg.seed = fit.seed;
                }
            }
            probe.apply(&mut cfg);
            cmd_serve(cfg, &host, port, workers)?;
        }
    }
    Ok(())
}
