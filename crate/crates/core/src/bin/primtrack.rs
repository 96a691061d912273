use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use primtrack::config::{BackendKind, RunConfig};
use primtrack::environment::{EsdfGrid, PointCloud};
use primtrack::experiments::{
    bench, compare_backends, planner_for, prepare_all, run_navigation_batch, run_tracking_batch, success_count,
    EpisodeOutcome, TrainingWorld,
};
use primtrack::gradcheck::{run_grad_check, Category};
use primtrack::policy::{dataset_loss, load_frames, save_frames, train, Optimizer, PolicyHead, TrainingEnv};
use primtrack::simulator::{build_world, world_geometry, write_log_csv, write_relative_positions};
use primtrack::Result;

#[derive(Parser)]
#[command(name = "primtrack", version, about = "Anchor-lattice planning, tracking and simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only these seeds (repeatable).
    #[arg(long)]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a forest point cloud and its distance field.
    GenerateEnv(Common),
    /// Closed-loop pursuit of an evader, one episode per seed.
    RunTracking(Common),
    /// Goal-directed flight, one episode per seed.
    RunNav(Common),
    /// Write randomized training frames and their point cloud.
    MakeDataset(Common),
    /// Train the policy head.
    Train {
        #[command(flatten)]
        common: Common,
        /// Frame directory from `make-dataset`; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a saved head.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Finite-difference check of every analytic gradient.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Time full planning cycles.
    Bench(Common),
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !c.seed.is_empty() {
        cfg.seeds = c.seed.clone();
    }
    if let Some(o) = &c.out {
        cfg.output = o.clone();
    }
    if let Some(b) = c.backend {
        cfg.backend = b;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output)?;
    Ok(cfg)
}

fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn generate_env(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seeds.first().copied().unwrap_or(cfg.world.forest.seed);
    let world = build_world(&cfg.world, seed, &[])?;
    world.forest.cloud.save(cfg.output.join("cloud.txt"))?;
    world.grid.save(cfg.output.join("esdf.bin"))?;
    let g = world.grid.geometry();
    println!("seed {seed}: {} trees, {} cloud points", world.forest.trunks.len(), world.forest.cloud.len());
    println!(
        "grid {}x{}x{} at {} m, origin ({:.2}, {:.2}, {:.2}), truncation {} m",
        g.dims[0], g.dims[1], g.dims[2], g.resolution, g.origin.x, g.origin.y, g.origin.z, world.grid.d_trunc()
    );
    Ok(())
}

fn write_outcomes(cfg: &RunConfig, name: &str, outcomes: &[EpisodeOutcome]) -> Result<()> {
    let mut w = create(cfg.output.join(format!("{name}_metrics.csv")))?;
    writeln!(
        w,
        "seed,success,failure,min_clearance,smoothness,fov_fraction,band_2_6,mean_latency_ms,path_length,duration,estops"
    )?;
    for o in outcomes {
        let m = &o.metrics;
        writeln!(
            w,
            "{},{},{},{:.4},{:.6e},{:.4},{:.4},{:.4},{:.3},{:.3},{}",
            o.seed,
            m.success,
            m.failure.as_str(),
            m.min_clearance,
            m.smoothness,
            m.fov_fraction,
            m.distance_band_fraction(2.0, 6.0),
            m.mean_latency_ms,
            m.path_length,
            m.duration,
            m.estops
        )?;
        write_log_csv(&o.log, create(cfg.output.join(format!("{name}_seed{}_log.csv", o.seed)))?)?;
        std::fs::write(cfg.output.join(format!("{name}_seed{}_summary.txt", o.seed)), m.summary())?;
        if !m.relative_positions.is_empty() {
            write_relative_positions(m, create(cfg.output.join(format!("{name}_seed{}_relative.csv", o.seed)))?)?;
        }
    }
    w.flush()?;
    let n = success_count(outcomes);
    println!("{name}: {n}/{} successful ({:.0}%)", outcomes.len(), 100.0 * n as f64 / outcomes.len() as f64);
    let lat: f64 = outcomes.iter().map(|o| o.metrics.mean_latency_ms).sum::<f64>() / outcomes.len() as f64;
    println!("mean planning latency {lat:.3} ms per cycle");
    Ok(())
}

fn dataset_grid(cfg: &RunConfig, cloud_path: &Path) -> Result<EsdfGrid> {
    let cloud = PointCloud::load(cloud_path)?;
    EsdfGrid::build(&cloud, world_geometry(&cfg.world)?, cfg.world.truncation)
}

fn make_dataset(cfg: &RunConfig) -> Result<()> {
    let tw = TrainingWorld::new(cfg)?;
    let (frames, _) = tw.frames(&RunConfig { train: primtrack::config::TrainBlock { holdout_frames: 0, ..cfg.train.clone() }, ..cfg.clone() })?;
    let cloud = cfg.output.join("cloud.txt");
    tw.world.forest.cloud.save(&cloud)?;
    save_frames(&cfg.output.join("frames"), &frames, Path::new("../cloud.txt"))?;
    let targets = frames.iter().filter(|f| f.target.is_some()).count();
    println!("{} frames ({targets} with targets) in {}", frames.len(), cfg.output.join("frames").display());
    Ok(())
}

fn run_train(cfg: &RunConfig, data: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let tw = TrainingWorld::new(cfg)?;
    let (frames, held, grid_owned) = match data {
        Some(dir) => {
            let (frames, cloud) = load_frames(dir)?;
            let grid = dataset_grid(cfg, &cloud)?;
            (frames, Vec::new(), Some(grid))
        }
        None => {
            let (f, h) = tw.frames(cfg)?;
            (f, h, None)
        }
    };
    let mut env: TrainingEnv<'_> = tw.env(cfg)?;
    if let Some(g) = &grid_owned {
        env.grid = g;
    }
    let prepared = prepare_all(&env, &frames)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut head = match resume {
        Some(p) => PolicyHead::load(p)?,
        None => PolicyHead::random(&PolicyHead::default_sizes(), cfg.train.schedule.init_output_scale, &mut rng)?,
    };
    println!("initial dataset loss {:.6}", dataset_loss(&head, &env, &prepared)?);
    let mut optimizer = Optimizer::new(cfg.train.optimizer)?;
    let curve = train(&mut head, &mut optimizer, &env, &prepared, &cfg.train.schedule, &mut rng, |e, l| {
        if e % 20 == 0 {
            println!("epoch {e:4} loss {l:.4}");
        }
    })?;
    let mut w = create(cfg.output.join("loss_curve.csv"))?;
    writeln!(w, "epoch,loss")?;
    for (e, l) in curve.iter().enumerate() {
        writeln!(w, "{e},{l:.9e}")?;
    }
    w.flush()?;
    let path = cfg.output.join("head.bin");
    head.save(&path)?;
    println!("final dataset loss {:.6}", dataset_loss(&head, &env, &prepared)?);
    println!("head saved to {}", path.display());
    if !held.is_empty() {
        let held = prepare_all(&env, &held)?;
        let (hc, rc, hs, rs) = compare_backends(&env, &head, &held, &cfg.planner.refiner)?;
        println!("held-out mean candidate cost: head {hc:.4}, refiner {rc:.4} (ratio {:.3})", hc / rc);
        println!("held-out selected candidate cost: head {hs:.4}, refiner {rs:.4}");
    }
    Ok(())
}

fn grad_check(cfg: &RunConfig, corrupt: Option<&str>) -> Result<bool> {
    let mut gc = cfg.grad_check;
    if let Some(name) = corrupt {
        gc.corrupt = Category::ALL.into_iter().find(|c| c.as_str() == name);
        if gc.corrupt.is_none() {
            return Err(primtrack::Error::InvalidArgument(format!("unknown category {name:?}")));
        }
    }
    let clock = std::time::Instant::now();
    let report = run_grad_check(&gc)?;
    report.save_csv(cfg.output.join("grad_check.csv"))?;
    print!("{}", report.summary(&gc));
    println!("{:.2} s", clock.elapsed().as_secs_f64());
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenerateEnv(c) => generate_env(&load_config(&c)?)?,
        Command::RunTracking(c) => {
            let cfg = load_config(&c)?;
            let outcomes = run_tracking_batch(&cfg, &planner_for(&cfg)?)?;
            write_outcomes(&cfg, "tracking", &outcomes)?;
        }
        Command::RunNav(c) => {
            let cfg = load_config(&c)?;
            let outcomes = run_navigation_batch(&cfg, &planner_for(&cfg)?)?;
            write_outcomes(&cfg, "navigation", &outcomes)?;
        }
        Command::MakeDataset(c) => make_dataset(&load_config(&c)?)?,
        Command::Train { common, data, resume } => run_train(&load_config(&common)?, data.as_deref(), resume.as_deref())?,
        Command::GradCheck { common, corrupt } => {
            if !grad_check(&load_config(&common)?, corrupt.as_deref())? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench(c) => {
            let cfg = load_config(&c)?;
            let r = bench(&cfg, &planner_for(&cfg)?)?;
            println!(
                "{} cycles: mean {:.3} ms, p95 {:.3} ms, max {:.3} ms (deployed network reference: 3 ms)",
                r.cycles, r.mean_ms, r.p95_ms, r.max_ms
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
