use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use posegraf::checkpoint;
use posegraf::error::{Error, Result};
use posegraf::gradcheck::{self, GRADCHECK_TOL};
use posegraf::io::dataset::{pose3d_to_rows, read_dataset, write_dataset};
use posegraf::io::synth::{generate_synthetic, SyntheticGenConfig};
use posegraf::io::RunConfig;
use posegraf::train::{evaluate, predict_with_flip_ensemble, train, LOSS_LOG_HEADER};
use posegraf::{Matrix, PoseGrafModel, SkeletonTopology};

#[derive(Parser)]
#[command(name = "posegraf", version, about = "2D to 3D human pose lifting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and a loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Lift one 2D pose file to 3D.
    Predict(PredictArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Finite-difference gradient checks on the toy configuration.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    /// Evaluated after every epoch when given.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Topology JSON; the 17-joint Human3.6M layout by default.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_flip: bool,
    /// Also write a checkpoint every N epochs.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Skip test-time flip ensembling.
    #[arg(long)]
    no_flip: bool,
    /// Print a per-action table instead of key=value lines.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON array of `[u, v]` pixel coordinates, one per joint.
    #[arg(long)]
    input: PathBuf,
    /// JSON array of `[x, y, z]` millimetres.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    no_flip: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    max_angle: f64,
    #[arg(long, default_value_t = 1000.0)]
    focal: f64,
    #[arg(long, default_value_t = 5000.0)]
    camera_distance: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::Shape { .. } | Error::Axis(_) | Error::Parse { .. } | Error::Input(_) => 4,
        Error::NonFiniteLoss { .. } => 5,
        Error::Topology(_) | Error::Checkpoint(_) => 6,
        Error::NonScalarLoss { .. } | Error::DegenerateReference => 1,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_topology(path: Option<&Path>) -> Result<SkeletonTopology> {
    match path {
        Some(p) => SkeletonTopology::load(p),
        None => Ok(SkeletonTopology::human36m()),
    }
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.profile {
        // A command-line profile replaces the file's model settings.
        cfg.set("profile", p)?;
    }
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.lr = a.lr.unwrap_or(t.lr);
    t.gamma = a.gamma.unwrap_or(t.gamma);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.seed = a.seed.unwrap_or(t.seed);
    t.flip_augment &= !a.no_flip;
    cfg.model.validate()?;
    cfg.train.validate()?;

    let topo = load_topology(a.topology.as_deref())?;
    let train_data = read_dataset(&a.train, &topo)?;
    let eval_data = match &a.eval {
        Some(p) => read_dataset(p, &topo)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;

    let mut manifest = cfg.to_key_values();
    if let Some(p) = &cfg.profile {
        manifest.insert_str(0, &format!("profile = {p}\n"));
    }
    manifest.push_str(&format!("train_samples = {}\n", train_data.len()));
    manifest.push_str(&format!("eval_samples = {}\n", eval_data.len()));
    write_file(&a.out.join("run_manifest.txt"), manifest.as_bytes())?;

    let mut model = PoseGrafModel::new(cfg.model.clone(), topo, cfg.train.seed)?;
    let log_path = a.out.join("loss_log.csv");
    let mut log = format!("{LOSS_LOG_HEADER}\n");
    write_file(&log_path, log.as_bytes())?;
    let every = a.checkpoint_every;
    let out = a.out.clone();
    train(&mut model, &train_data, &eval_data, &cfg.train, |row, m| {
        log.push_str(&row.csv_line());
        log.push('\n');
        write_file(&log_path, log.as_bytes())?;
        println!("{}", row.csv_line());
        if every > 0 && row.epoch % every == 0 {
            checkpoint::save(m, &out.join(format!("epoch_{:03}.ckpt", row.epoch)))?;
        }
        Ok(())
    })?;
    checkpoint::save(&model, &a.out.join("model.ckpt"))
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let data = read_dataset(&a.data, model.topology())?;
    let report = evaluate(&model, &data, !a.no_flip)?;
    if a.table {
        print!("{}", report.to_table());
    } else {
        print!("{}", report.to_key_values());
    }
    Ok(())
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let text = fs::read_to_string(&a.input).map_err(|e| Error::Io {
        path: a.input.clone(),
        source: e,
    })?;
    let rows: Vec<[f64; 2]> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: a.input.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let n = model.topology().num_joints();
    if rows.len() != n {
        return Err(Error::Input(format!("{} joints in input, model expects {n}", rows.len())));
    }
    let x = Matrix::from_fn(n, 2, |r, c| rows[r][c]);
    let y = if a.no_flip {
        model.predict(&x)?
    } else {
        predict_with_flip_ensemble(&model, &x)?
    };
    let json = serde_json::to_string(&pose3d_to_rows(&y)).map_err(|e| Error::Input(e.to_string()))?;
    write_file(&a.output, format!("{json}\n").as_bytes())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let topo = SkeletonTopology::human36m();
    let cfg = SyntheticGenConfig {
        max_joint_angle_rad: a.max_angle,
        focal_px: a.focal,
        camera_distance_mm: a.camera_distance,
        ..SyntheticGenConfig::human36m(a.seed, a.count)
    };
    write_dataset(&a.out, &generate_synthetic(&cfg, &topo)?)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let checks = gradcheck::run_suite(a.seed)?;
    let mut stdout = std::io::stdout().lock();
    let mut ok = true;
    for c in &checks {
        ok &= c.passed();
        let _ = writeln!(
            stdout,
            "{:<10} max_rel_err={:.3e} entries={} {}",
            c.module,
            c.report.max_rel_err,
            c.report.checked,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let _ = writeln!(stdout, "tolerance={GRADCHECK_TOL:e}");
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run_train(a).map(|_| true),
        Command::Eval(a) => run_eval(a).map(|_| true),
        Command::Predict(a) => run_predict(a).map(|_| true),
        Command::Synth(a) => run_synth(a).map(|_| true),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check above tolerance");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
