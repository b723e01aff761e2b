//! Command-line front end for the topology-optimization surrogate pipeline.
//!
//! Subcommands: `gen` (dataset generation), `train` (surrogate training with
//! resumable checkpoints), `predict` (single-problem inference, optionally
//! compared against the optimizer), `eval` (metrics over a test split or
//! freshly generated problems) and `sweep` (accuracy vs. sample count).
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O
//! failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use topopt::dataset::{
    generate, make_split, read_dataset, read_split, split_path, BcKind, Dataset,
    GenConfig,
};
use topopt::eval::{
    evaluate_set, generate_problems, problems_from_dataset, threshold_sensitivity, write_pgm,
    MetricsRecord, Summary,
};
use topopt::fem::{DensityMap, Material, MeshSpec};
use topopt::nn::{Algorithm, OptimizerConfig};
use topopt::simp::{self, SimpConfig};
use topopt::unet::{
    load_checkpoint, predict, save_checkpoint, train_epochs, ArchitectureConfig, TrainConfig,
    TrainEvent, TrainState,
};
use topopt::util::stream_rng;

mod errors;
use errors::{CliError, Fallible};

#[derive(Parser)]
#[command(name = "topopt", version, about = "SIMP topology optimization and a CNN surrogate")]
struct Cli {
    /// Worker threads (0 = all cores). Serial runs reproduce parallel output.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of optimized layouts with an 8:1:1 split
    Gen(GenArgs),
    /// Train the surrogate on a generated dataset
    Train(TrainArgs),
    /// Predict a single layout from a checkpoint
    Predict(PredictArgs),
    /// Evaluate a checkpoint over a test split or fresh problems
    Eval(EvalArgs),
    /// Train at several sample counts and report accuracy convergence
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BcArg {
    Cantilever,
    SimplySupported,
    Continuous,
}

impl From<BcArg> for BcKind {
    fn from(v: BcArg) -> Self {
        match v {
            BcArg::Cantilever => BcKind::Cantilever,
            BcArg::SimplySupported => BcKind::SimplySupported,
            BcArg::Continuous => BcKind::ContinuousBeam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

/// Base directory for outputs given as relative paths.
fn out_base() -> PathBuf {
    std::env::var_os("TOPOPT_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_base().join(path)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset file
    #[arg(long, default_value = "dataset.topd")]
    out: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 1000)]
    count: u32,
    #[arg(long, default_value_t = 80)]
    nelx: usize,
    #[arg(long, default_value_t = 40)]
    nely: usize,
    #[arg(long, value_enum, default_value_t = BcArg::Cantilever)]
    bc: BcArg,
    /// Master seed; identical seeds reproduce identical files
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Input channels: 6 (displacements, strains, volume fraction) or 3
    #[arg(long, default_value_t = 6)]
    channels: u32,
    /// Volume-constraint penalty exponent
    #[arg(long, default_value_t = 3.0)]
    penalty: f64,
    /// Density filter radius in element units
    #[arg(long, default_value_t = 1.5)]
    rmin: f64,
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let mesh = MeshSpec::new(args.nelx, args.nely).numeric()?;
    let config = GenConfig {
        mesh,
        bc: args.bc.into(),
        count: args.count,
        master_seed: args.seed,
        channels: args.channels,
        material: Material::default(),
        simp: SimpConfig { penalty: args.penalty, filter_radius: args.rmin, ..SimpConfig::default() },
    };
    let path = resolve(&args.out);
    let t0 = Instant::now();
    let mut iter_sum = 0u64;
    let mut n_done_before = 0u32;
    let data = generate(&config, &path, |p| {
        iter_sum += u64::from(p.last_iterations);
        if n_done_before == 0 {
            n_done_before = p.completed.saturating_sub(1);
        }
        if p.completed % 25 == 0 || p.completed == p.total {
            let fresh = p.completed - n_done_before;
            println!(
                "gen {}/{} ({} optimizer iterations/sample avg, {} redraws, {:.1}s)",
                p.completed,
                p.total,
                if fresh > 0 { iter_sum / u64::from(fresh) } else { 0 },
                p.redraws,
                t0.elapsed().as_secs_f64()
            );
        }
    })
    .fallible()?;
    println!(
        "wrote {} samples to {} (split: {})",
        data.samples.len(),
        path.display(),
        split_path(&path).display()
    );
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file from `gen`
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for checkpoints and the training log
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: u32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// L2 penalty weight on convolution kernels
    #[arg(long, default_value_t = 1e-5)]
    l2: f64,
    /// Use plain SGD instead of Adam
    #[arg(long)]
    sgd: bool,
    /// Input channels (3 views a 6-channel dataset as ux/uy/vf)
    #[arg(long)]
    channels: Option<usize>,
    /// Standardize inputs per channel with training-split statistics
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn train_log_csv(state: &TrainState<f32>, path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,train_loss,val_loss,learning_rate")?;
    for r in &state.history {
        let val = r.val_total.map_or(String::new(), |v| format!("{v}"));
        writeln!(f, "{},{},{},{}", r.epoch, r.train_total, val, r.learning_rate)?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let dataset_path = resolve(&args.dataset);
    let data = read_dataset(&dataset_path).fallible()?;
    let split = read_split(&split_path(&dataset_path)).fallible()?;
    let out_dir = resolve(&args.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(CliError::io)?;
    let last_path = out_dir.join("last.ckpt");
    let best_path = out_dir.join("best.ckpt");
    let log_path = out_dir.join("train_log.csv");

    let optimizer = OptimizerConfig {
        algorithm: if args.sgd { Algorithm::Sgd } else { Algorithm::Adam },
        learning_rate: args.lr,
        l2_weight: args.l2,
        ..OptimizerConfig::default()
    };
    let channels = args.channels.unwrap_or(data.channels as usize);
    let mut state = if last_path.exists() {
        let state = load_checkpoint(&last_path).fallible()?;
        println!("resuming from {} at epoch {}", last_path.display(), state.epoch);
        state
    } else {
        let arch = ArchitectureConfig {
            input_channels: channels,
            standardize: args.standardize,
            ..ArchitectureConfig::default()
        };
        TrainState::new(arch, args.seed, &optimizer).numeric()?
    };

    let tcfg = TrainConfig { epochs: args.epochs, batch_size: args.batch_size, optimizer };
    let t0 = Instant::now();
    let mut result = Ok(());
    train_epochs(&mut state, &data, &split, &tcfg, |event, st| {
        if result.is_err() {
            return;
        }
        match event {
            TrainEvent::EpochEnd(r) => {
                let val = r.val_total.map_or("-".to_string(), |v| format!("{v:.5}"));
                println!(
                    "epoch {:>4}  train {:.5}  val {}  lr {:.2e}  ({:.1}s)",
                    r.epoch,
                    r.train_total,
                    val,
                    r.learning_rate,
                    t0.elapsed().as_secs_f64()
                );
                result = save_checkpoint(st, &last_path)
                    .map_err(CliError::from)
                    .and_then(|_| train_log_csv(st, &log_path).map_err(CliError::io));
            }
            TrainEvent::NewBest(_) => {
                result = save_checkpoint(st, &best_path).map_err(CliError::from);
            }
        }
    })
    .fallible()?;
    result?;
    if !best_path.exists() {
        // No validation split: the last state is the best available.
        save_checkpoint(&state, &best_path).fallible()?;
    }
    println!("checkpoints: {} (last), {} (best)", last_path.display(), best_path.display());
    Ok(())
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint from `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Take the input from a dataset sample instead of sampling conditions
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sample index within --dataset
    #[arg(long, default_value_t = 0)]
    index: u32,
    /// Boundary condition for a freshly sampled problem
    #[arg(long, value_enum, default_value_t = BcArg::Cantilever)]
    bc: BcArg,
    /// Seed for the freshly sampled problem
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override the sampled volume fraction
    #[arg(long)]
    vf: Option<f64>,
    #[arg(long, default_value_t = 80)]
    nelx: usize,
    #[arg(long, default_value_t = 40)]
    nely: usize,
    /// Output density map (CSV grid)
    #[arg(long, default_value = "prediction.csv")]
    out: PathBuf,
    /// Also export an image (.pgm or .png by extension)
    #[arg(long)]
    image: Option<PathBuf>,
    /// Run the optimizer on the same problem and report both timings
    #[arg(long)]
    compare: bool,
}

fn write_map_csv(map: &DensityMap, path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for row in map.values().chunks(map.nelx()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

fn export_image(map: &DensityMap, path: &Path) -> Result<(), CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let bytes: Vec<u8> = map
            .values()
            .iter()
            .map(|&v| (255.0 * (1.0 - v)).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::GrayImage::from_raw(map.nelx() as u32, map.nely() as u32, bytes)
            .expect("buffer size matches dimensions");
        img.save(path).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
    } else {
        write_pgm(map, path).fallible()
    }
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let mut state = load_checkpoint(&resolve(&args.checkpoint)).fallible()?;
    let channels = state.model.config.input_channels as u32;
    let material = Material::default();
    let simp_cfg = SimpConfig::default();

    // Problem definition: dataset sample or freshly sampled conditions.
    let (mesh, bc, f, loads, input, stored_target) = match &args.dataset {
        Some(ds_path) => {
            let data = read_dataset(&resolve(ds_path)).fallible()?;
            let sample = data
                .samples
                .get(args.index as usize)
                .ok_or_else(|| CliError::Config(format!("sample {} out of range", args.index)))?
                .clone();
            let input = if channels == 3 && data.channels == 6 {
                sample.input.three_channel_view()
            } else {
                sample.input.clone()
            };
            let target = DensityMap::from_values(
                &data.mesh,
                sample.target.iter().map(|&v| f64::from(v).clamp(1e-3, 1.0)).collect(),
            )
            .numeric()?;
            (data.mesh, data.bc, sample.meta.volume_fraction, sample.meta.loads, input, Some(target))
        }
        None => {
            let mesh = MeshSpec::new(args.nelx, args.nely).numeric()?;
            let bc: BcKind = args.bc.into();
            let boundary = bc.boundary_condition();
            let mut rng = stream_rng(args.seed, "predict-problem", 0);
            let (mut f, loads) = topopt::dataset::sample_conditions(&mesh, &boundary, &mut rng);
            if let Some(vf) = args.vf {
                f = vf;
            }
            let input = topopt::dataset::build_input(
                &mesh,
                &boundary,
                &material,
                f,
                &loads,
                channels,
                simp_cfg.penalty,
            )
            .numeric()?;
            (mesh, bc, f, loads, input, None)
        }
    };

    let t0 = Instant::now();
    let map = predict(&mut state.model, &input).numeric()?;
    let predict_seconds = t0.elapsed().as_secs_f64();
    let out = resolve(&args.out);
    write_map_csv(&map, &out).map_err(CliError::io)?;
    println!(
        "prediction ({}x{}, f={f:.3}, {} loads) -> {} in {predict_seconds:.4}s",
        map.nely(),
        map.nelx(),
        loads.loads.len(),
        out.display()
    );
    if let Some(image_path) = &args.image {
        let p = resolve(image_path);
        export_image(&map, &p)?;
        println!("image -> {}", p.display());
    }

    if args.compare {
        let boundary = bc.boundary_condition();
        let config = SimpConfig { volume_fraction: f, ..simp_cfg };
        let (target, simp_seconds, iters) = match stored_target {
            Some(t) => (t, None, None),
            None => {
                let t0 = Instant::now();
                let r = simp::optimize(&mesh, &boundary, &loads, &material, &config).numeric()?;
                (r.densities, Some(t0.elapsed().as_secs_f64()), Some(r.iterations))
            }
        };
        let (pix_err, pix_acc) = topopt::eval::pixel_metrics(&map, &target).fallible()?;
        let vf_err = topopt::eval::volume_fraction_error(&map, &target);
        let outcome = topopt::eval::compliance_error(
            &map, &target, &mesh, &boundary, &loads, &material, config.penalty, 0.5,
        )
        .fallible()?;
        match outcome {
            topopt::eval::ComplianceOutcome::Error(e) => {
                println!("compliance error: {:.2}%", 100.0 * e)
            }
            topopt::eval::ComplianceOutcome::Disconnected => {
                println!("compliance error: n/a (structural disconnection)")
            }
        }
        println!("pixel values error: {:.2}%  pixel accuracy: {:.2}%", 100.0 * pix_err, 100.0 * pix_acc);
        println!("volume fraction error: {:.2}%", 100.0 * vf_err);
        if let (Some(st), Some(it)) = (simp_seconds, iters) {
            println!(
                "optimizer: {st:.3}s ({it} iterations)  surrogate: {predict_seconds:.4}s  speedup: {:.0}x",
                st / predict_seconds
            );
        }
    }
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate over a stored dataset split
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Or: generate fresh problems for this boundary condition
    #[arg(long, value_enum)]
    bc: Option<BcArg>,
    /// Number of fresh problems (with --bc)
    #[arg(long, default_value_t = 100)]
    count: u32,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    nelx: usize,
    #[arg(long, default_value_t = 40)]
    nely: usize,
    /// Binarization threshold for compliance evaluation
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value = "eval")]
    out_dir: PathBuf,
}

fn metrics_csv_header() -> &'static str {
    "index,volume_fraction,disconnected,compliance_error,pixel_values_error,pixel_accuracy,volume_fraction_error,simp_seconds,predict_seconds"
}

fn metrics_csv_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.index,
        r.volume_fraction,
        r.disconnected,
        r.compliance_error.map_or(String::new(), |v| v.to_string()),
        r.pixel_values_error,
        r.pixel_accuracy,
        r.volume_fraction_error,
        r.simp_seconds.map_or(String::new(), |v| v.to_string()),
        r.predict_seconds
    )
}

fn summary_table(label: &str, s: &Summary) -> String {
    format!(
        "{:<20} {:>16} {:>19} {:>22} {:>15}\n{:<20} {:>15.2}% {:>18.2}% {:>21.2}% {:>14.2}%\n",
        "Condition",
        "Compliance error",
        "Pixel values error",
        "Volume fraction error",
        "Disconnection",
        format!("{label} (n={})", s.count),
        100.0 * s.mean_abs_compliance_error,
        100.0 * s.mean_pixel_values_error,
        100.0 * s.mean_volume_fraction_error,
        100.0 * s.disconnection_pct,
    )
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    use std::io::Write;
    let mut state = load_checkpoint(&resolve(&args.checkpoint)).fallible()?;
    let material = Material::default();
    let simp_cfg = SimpConfig::default();
    let channels = state.model.config.input_channels as u32;

    let (mesh, bc, problems, label) = match (&args.dataset, args.bc) {
        (Some(ds_path), None) => {
            let data = read_dataset(&resolve(ds_path)).fallible()?;
            let split = read_split(&split_path(&resolve(ds_path))).fallible()?;
            let indices = match args.split {
                SplitArg::Train => &split.train,
                SplitArg::Validation => &split.validation,
                SplitArg::Test => &split.test,
            };
            let problems = problems_from_dataset(&data, indices);
            (data.mesh, data.bc, problems, format!("{} {:?}", data.bc.name(), args.split))
        }
        (None, Some(bc_arg)) => {
            let mesh = MeshSpec::new(args.nelx, args.nely).numeric()?;
            let bc: BcKind = bc_arg.into();
            println!("generating {} fresh {} problems...", args.count, bc.name());
            let problems = generate_problems(
                &mesh,
                bc,
                &material,
                &simp_cfg,
                channels,
                args.count,
                args.seed,
                |done, total| {
                    if done % 10 == 0 || done == total {
                        println!("  optimizer {done}/{total}");
                    }
                },
            )
            .fallible()?;
            (mesh, bc, problems, bc.name().to_string())
        }
        _ => {
            return Err(CliError::Config(
                "pass exactly one of --dataset or --bc".into(),
            ))
        }
    };

    let out_dir = resolve(&args.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(CliError::io)?;
    let csv_path = out_dir.join("metrics.csv");
    let mut csv = std::fs::File::create(&csv_path).map_err(CliError::io)?;
    writeln!(csv, "{}", metrics_csv_header()).map_err(CliError::io)?;

    let (records, summary) = evaluate_set(
        &mut state.model,
        &mesh,
        bc,
        &material,
        simp_cfg.penalty,
        args.threshold,
        &problems,
        |r| {
            // Flush per record so partial results survive failures.
            let _ = writeln!(csv, "{}", metrics_csv_row(r));
            let _ = csv.flush();
        },
    )
    .fallible()?;

    let table = summary_table(&label, &summary);
    print!("{table}");
    let pairs: Vec<(DensityMap, DensityMap)> = problems
        .iter()
        .map(|p| {
            let pred = predict(&mut state.model, &p.input).unwrap();
            (pred, p.target.clone())
        })
        .collect();
    let mut sens = String::from("threshold sensitivity (pixel accuracy):\n");
    for (t, acc) in threshold_sensitivity(&pairs, &[0.3, 0.5, 0.7]) {
        sens.push_str(&format!("  threshold {t:.1}: {:.2}%\n", 100.0 * acc));
    }
    print!("{sens}");
    if let Some(t) = summary.mean_simp_seconds {
        println!(
            "mean optimizer time {t:.3}s, mean surrogate time {:.4}s (speedup {:.0}x)",
            summary.mean_predict_seconds,
            t / summary.mean_predict_seconds
        );
    }
    std::fs::write(out_dir.join("summary.txt"), format!("{table}{sens}")).map_err(CliError::io)?;
    println!("wrote {} rows to {}", records.len(), csv_path.display());
    Ok(())
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated sample counts
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 250, 500, 1000])]
    counts: Vec<u32>,
    /// Replicates per count (averaged, as in the convergence study)
    #[arg(long, default_value_t = 3)]
    reps: u32,
    #[arg(long, default_value_t = 50)]
    epochs: u32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 80)]
    nelx: usize,
    #[arg(long, default_value_t = 40)]
    nely: usize,
    #[arg(long, value_enum, default_value_t = BcArg::Cantilever)]
    bc: BcArg,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    channels: u32,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// Working directory for the generated dataset
    #[arg(long, default_value = "sweep-work")]
    work_dir: PathBuf,
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    use std::io::Write;
    if args.counts.is_empty() {
        return Err(CliError::Config("at least one count required".into()));
    }
    let max_count = *args.counts.iter().max().unwrap();
    let mesh = MeshSpec::new(args.nelx, args.nely).numeric()?;
    let work = resolve(&args.work_dir);
    std::fs::create_dir_all(&work).map_err(CliError::io)?;
    let config = GenConfig {
        mesh,
        bc: args.bc.into(),
        count: max_count,
        master_seed: args.seed,
        channels: args.channels,
        material: Material::default(),
        simp: SimpConfig::default(),
    };
    println!("generating {} samples once (all counts reuse prefixes)...", max_count);
    let data = generate(&config, &work.join("sweep.topd"), |p| {
        if p.completed % 100 == 0 || p.completed == p.total {
            println!("  gen {}/{}", p.completed, p.total);
        }
    })
    .fallible()?;

    let out = resolve(&args.out);
    let mut csv = std::fs::File::create(&out).map_err(CliError::io)?;
    let rep_headers: Vec<String> =
        (0..args.reps).map(|r| format!("rep{r}_accuracy")).collect();
    writeln!(csv, "count,{},mean,spread", rep_headers.join(",")).map_err(CliError::io)?;

    let mut means = Vec::new();
    for &count in &args.counts {
        let subset = Dataset {
            mesh: data.mesh,
            channels: data.channels,
            master_seed: data.master_seed,
            bc: data.bc,
            samples: data.samples[..count as usize].to_vec(),
        };
        let mut accs = Vec::new();
        for rep in 0..args.reps {
            let rep_seed = args.seed ^ (u64::from(count) << 20) ^ u64::from(rep);
            let split = make_split(count, rep_seed);
            let optimizer = OptimizerConfig::default();
            let mut state = TrainState::new(
                ArchitectureConfig::with_channels(args.channels as usize),
                rep_seed,
                &optimizer,
            )
            .numeric()?;
            let tcfg =
                TrainConfig { epochs: args.epochs, batch_size: args.batch_size, optimizer };
            train_epochs(&mut state, &subset, &split, &tcfg, |_, _| {}).fallible()?;
            let mut agree = 0usize;
            let mut total = 0usize;
            for &i in &split.validation {
                let sample = &subset.samples[i as usize];
                let input = if state.model.config.input_channels == 3 && subset.channels == 6 {
                    sample.input.three_channel_view()
                } else {
                    sample.input.clone()
                };
                let pred = predict(&mut state.model, &input).numeric()?;
                for (p, &t) in pred.values().iter().zip(sample.target.iter()) {
                    agree += usize::from((*p >= 0.5) == (f64::from(t) >= 0.5));
                    total += 1;
                }
            }
            let acc = agree as f64 / total.max(1) as f64;
            println!("count {count} rep {rep}: validation pixel accuracy {:.2}%", 100.0 * acc);
            accs.push(acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let spread = accs.iter().fold(0.0_f64, |m, &a| m.max((a - mean).abs()));
        means.push((count, mean));
        let cells: Vec<String> = accs.iter().map(|a| a.to_string()).collect();
        writeln!(csv, "{count},{},{mean},{spread}", cells.join(",")).map_err(CliError::io)?;
    }
    for pair in means.windows(2) {
        if pair[1].1 < pair[0].1 {
            println!(
                "warning: mean accuracy decreased from count {} ({:.3}) to {} ({:.3}); training at small sample counts is unstable",
                pair[0].0, pair[0].1, pair[1].0, pair[1].1
            );
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("rayon pool initialized once");
    }
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
