//! Command-line front end: every subcommand is a thin call into
//! `hsi_core::pipeline`.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hsi_core::cvae::{ModelConfig, TrainOptions};
use hsi_core::geometry::UpAxis;
use hsi_core::pipeline::{self, GenDataConfig, TrainConfig, DEFAULT_SDF_RESOLUTION};
use hsi_core::placement::{PlaceSettings, PlacementOptions, PlacementWeights, RefineMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "hsi", version, about = "Body-centric contact maps and automatic body placement in 3D scenes")]
pub struct Cli {
    /// Root seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). One thread gives bit-identical runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Up axis of input and output mesh files.
    #[arg(long, global = true, default_value = "z", value_parser = ["y", "z"])]
    pub up_axis: String,
    /// Print a machine-readable JSON summary to stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate rooms, posed bodies and a training dataset.
    GenData {
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize a scene into a signed distance field.
    BuildSdf {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SDF_RESOLUTION)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contact and semantic labels of a body against a scene.
    ExtractFeatures {
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the conditional VAE.
    Train(TrainArgs),
    /// Sample feature maps for a body.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        body: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place a body in a scene.
    Place(PlaceArgs),
    /// Plausibility and diversity of a directory of placements.
    Eval {
        #[arg(long)]
        placements: PathBuf,
        #[arg(long)]
        sdf: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP and WebSocket API.
    Serve {
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint (default: <data>/model.ckpt).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 16)]
    pub micro_batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Stop once training contact accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Train on every frame instead of holding out a validation split.
    #[arg(long)]
    pub no_validation: bool,
    #[arg(long, default_value_t = 256)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub conv_width: usize,
    #[arg(long, default_value_t = 512)]
    pub fc_width: usize,
    #[arg(long, default_value_t = 4)]
    pub decoder_convs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum ModeArg {
    Full,
    FixedPose,
}

#[derive(Debug, Args, Serialize)]
pub struct PlaceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub body: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub sdf: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 64)]
    pub n_seeds: usize,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1)]
    pub refine_per_map: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_contact: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_semantic: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_pen: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_reg: f64,
    /// Weight each vertex's semantic term by its predicted contact.
    #[arg(long)]
    pub semantic_gating: bool,
}

impl PlaceArgs {
    pub fn settings(&self) -> PlaceSettings {
        PlaceSettings {
            weights: PlacementWeights {
                contact: self.lambda_contact,
                semantic: self.lambda_semantic,
                penetration: self.lambda_pen,
                regularization: self.lambda_reg,
            },
            options: PlacementOptions {
                iterations: self.iterations,
                refine_per_map: self.refine_per_map,
                semantic_gating: self.semantic_gating,
                ..Default::default()
            },
            mode: match self.mode {
                ModeArg::Full => RefineMode::Full,
                ModeArg::FixedPose => RefineMode::FixedPose,
            },
            n_samples: self.n_samples,
            n_seeds: self.n_seeds,
        }
    }
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                latent_dim: self.latent_dim,
                conv_width: self.conv_width,
                fc_width: self.fc_width,
                decoder_convs: self.decoder_convs,
                alpha: self.alpha,
                ..Default::default()
            },
            options: TrainOptions {
                epochs: self.epochs,
                batch_size: self.batch_size,
                micro_batch: self.micro_batch,
                lr: self.lr,
                validation: !self.no_validation,
                max_steps: self.max_steps,
                target_contact_accuracy: self.target_accuracy,
                ..Default::default()
            },
        }
    }
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string(value).expect("summary serializes"));
    } else {
        println!("{}", human());
    }
}

fn execute(cli: &Cli) -> pipeline::Result<()> {
    let up: UpAxis = cli.up_axis.parse().map_err(pipeline::PipelineError::Invalid)?;
    let seed = cli.seed;
    match &cli.command {
        Command::GenData { frames, scenes, out } => {
            let s = pipeline::gen_data(&GenDataConfig { frames: *frames, scenes: *scenes, seed }, out)?;
            emit(cli.json, &s, || {
                format!("{} frames ({} skipped), {} scenes, {} bodies in {}", s.frames, s.skipped.len(), s.scenes.len(), s.bodies.len(), out.display())
            });
        }
        Command::BuildSdf { scene, res, out } => {
            let s = pipeline::build_sdf_file(scene, *res, out, up)?;
            emit(cli.json, &s, || format!("sdf {:?} cells of {:.4} m -> {}", s.dims, s.cell_size, out.display()));
        }
        Command::ExtractFeatures { body, scene, threshold, out } => {
            let r = pipeline::extract_features_file(body, scene, *threshold, up)?;
            pipeline::write_json(&r, out)?;
            let summary = serde_json::json!({ "vertices": r.contact.len(), "contact_vertices": r.contact_count, "out": out });
            emit(cli.json, &summary, || format!("{} of {} vertices in contact -> {}", r.contact_count, r.contact.len(), out.display()));
        }
        Command::Train(args) => {
            let meta = pipeline::train_file(&args.data, &args.config(), seed, &args.out, |e| {
                log::info!("epoch {} train loss {:.5} val loss {:?} val accuracy {:?}", e.epoch, e.train_loss, e.val_loss, e.val_contact_accuracy);
            })?;
            let summary = serde_json::json!({
                "steps": meta.steps,
                "epochs": meta.epochs_completed,
                "final_loss": meta.step_losses.last(),
                "final_contact_accuracy": meta.final_contact_accuracy,
                "out": args.out,
            });
            emit(cli.json, &summary, || format!("{} steps, final loss {:?} -> {}", meta.steps, meta.step_losses.last(), args.out.display()));
        }
        Command::Sample { model, body, n, out } => {
            let r = pipeline::sample_file(model, body, *n, seed, up)?;
            pipeline::write_json(&r, out)?;
            let counts: Vec<usize> = r.maps.iter().map(|m| m.contact.iter().filter(|&&c| c >= 0.5).count()).collect();
            let summary = serde_json::json!({ "maps": r.maps.len(), "contact_vertices": counts, "out": out });
            emit(cli.json, &summary, || format!("{} maps, contact vertices {counts:?} -> {}", r.maps.len(), out.display()));
        }
        Command::Place(args) => {
            let r = pipeline::place_file(&args.model, &args.body, &args.scene, &args.sdf, &args.settings(), seed, &args.out, up)?;
            emit(cli.json, &r, || {
                format!(
                    "translation {:?} yaw {:.4} energy {:.6} ({} alternatives) -> {}",
                    r.transform.translation,
                    r.transform.yaw,
                    r.energies.total,
                    r.alternatives.len(),
                    args.out.display()
                )
            });
        }
        Command::Eval { placements, sdf, k, out } => {
            let r = pipeline::eval_dir(placements, sdf, *k, seed)?;
            pipeline::write_json(&r, out)?;
            emit(cli.json, &r, || {
                format!(
                    "non-collision {:.4}, contact {:.4}, entropy {:?}, cluster size {:?} over {} placements",
                    r.non_collision_mean,
                    r.contact_mean,
                    r.entropy,
                    r.cluster_size,
                    r.placements.len()
                )
            });
        }
        Command::Serve { data, model, port, host } => {
            let model = model.clone().unwrap_or_else(|| data.join("model.ckpt"));
            let catalog = hsi_service::Catalog::load(data, &model, up)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| pipeline::PipelineError::Invalid(format!("bad address: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| pipeline::PipelineError::Io("runtime".into(), e))?;
            rt.block_on(hsi_service::serve(catalog, addr))
                .map_err(|e| pipeline::PipelineError::Io(addr.to_string(), e))?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("HSI_LOG", "info")).try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    log::info!("config {}", serde_json::to_string(&cli).unwrap_or_default());
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
