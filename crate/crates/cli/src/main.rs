use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use lgad_core::config::parse_override;
use lgad_core::data::{export_dataset, write_grid};
use lgad_core::eval::{
    constant_baseline, default_taus, evaluate_reconstruction, export_latent_magnitudes, invariance,
    magnitudes_csv, predict_transformed, probe_all, probe_inputs, swap_latents, sweep_tau,
};
use lgad_core::experiment::{run_ablation, Prepared};
use lgad_core::rng::derive_seed;
use lgad_core::training::train_with;
use lgad_core::{load_checkpoint_for, prepare, save_checkpoint, Model, TrainingConfig};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

mod manifest;

use manifest::Outputs;

#[derive(Parser, Debug)]
#[command(name = "lgad", version, about = "Train and evaluate masked group-action autoencoders")]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Trained checkpoint, required by every command that evaluates a model.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq)]
enum Command {
    /// Write the train and test images as PGM files with a CSV manifest.
    GenData,
    /// Train a model and save its checkpoint.
    Train,
    /// Reconstruction metrics of T_g(x) on the held-out pairs.
    Eval,
    /// Linear probes on z, z_v and z_i.
    Probe,
    /// Probe accuracy of z_v across mask thresholds.
    SweepTau,
    /// Decode swapped variant and invariant parts of two test images.
    Swap {
        #[arg(long, default_value_t = 0)]
        first: usize,
        #[arg(long, default_value_t = 1)]
        second: usize,
    },
    /// Per-dimension latent magnitudes and rotation variance.
    ExportLatents {
        #[arg(long, default_value_t = 32)]
        references: usize,
        #[arg(long, default_value_t = 16)]
        rotations: usize,
    },
    /// Train and score the invariance-only, consistency-only and full losses.
    Ablate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Probe => "probe",
            Command::SweepTau => "sweep-tau",
            Command::Swap { .. } => "swap",
            Command::ExportLatents { .. } => "export-latents",
            Command::Ablate => "ablate",
        }
    }

    fn needs_checkpoint(self) -> bool {
        !matches!(self, Command::GenData | Command::Train | Command::Ablate)
    }
}

type CliResult<T> = Result<T, String>;

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(reason) => {
            eprintln!("error: {}", reason.lines().next().unwrap_or("unknown failure"));
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<TrainingConfig> {
    let mut overrides = cli
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    if let Some(dir) = &cli.output_dir {
        overrides.push(("output_dir".into(), dir.display().to_string()));
    }
    TrainingConfig::load(cli.config.as_deref(), &overrides).map_err(fail)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let cmd = cli.command;
    let checkpoint = match (&cli.checkpoint, cmd.needs_checkpoint()) {
        (None, true) => return Err(format!("`{}` needs --checkpoint", cmd.name())),
        (Some(p), true) if !p.is_file() => return Err(format!("checkpoint {} not found", p.display())),
        (c, _) => c.clone(),
    };

    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create output dir {}: {e}", dir.display()))?;
    let mut out = Outputs::new(&dir);
    out.write("config.resolved", cfg.resolved().as_bytes())?;

    let start = Instant::now();
    let prepared = prepare(&cfg).map_err(fail)?;
    let model = match &checkpoint {
        Some(p) => Some(load_model(p, &cfg, &prepared)?),
        None => None,
    };
    let model = model.as_ref();

    match cmd {
        Command::GenData => gen_data(&prepared, &mut out)?,
        Command::Train => train_cmd(&cfg, &prepared, &mut out)?,
        Command::Eval => eval_cmd(&cfg, &prepared, model.unwrap(), &mut out)?,
        Command::Probe => probe_cmd(&cfg, &prepared, model.unwrap(), &mut out)?,
        Command::SweepTau => sweep_cmd(&cfg, &prepared, model.unwrap(), &mut out)?,
        Command::Swap { first, second } => swap_cmd(&cfg, &prepared, model.unwrap(), first, second, &mut out)?,
        Command::ExportLatents { references, rotations } => {
            latents_cmd(&cfg, &prepared, model.unwrap(), references, rotations, &mut out)?
        }
        Command::Ablate => ablate_cmd(&cfg, &prepared, &mut out)?,
    }

    let timing = json!({ "command": cmd.name(), "wall_time_s": start.elapsed().as_secs_f64() });
    std::fs::write(dir.join("timing.json"), pretty(&timing)?).map_err(|e| format!("{}: {e}", dir.display()))?;
    out.finish(cmd.name(), &cfg)
}

fn load_model(path: &Path, cfg: &TrainingConfig, p: &Prepared) -> CliResult<Model<f32>> {
    let arch = cfg.architecture(p.train.height, p.train.width);
    Ok(load_checkpoint_for(path, &arch).map_err(fail)?.0)
}

fn pretty(v: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(fail)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn gen_data(p: &Prepared, out: &mut Outputs) -> CliResult<()> {
    for (name, ds) in [("train", &p.train), ("test", &p.test)] {
        let dir = out.dir().join(name);
        export_dataset(ds, &dir).map_err(fail)?;
        out.track_dir(name)?;
    }
    let n = p.train.len().min(40);
    let images: Vec<&[f32]> = (0..n).map(|i| p.train.image(i)).collect();
    let grid = out.dir().join("grid.pgm");
    write_grid(&grid, p.train.height, p.train.width, &images, 10).map_err(fail)?;
    out.track("grid.pgm")?;
    let metrics = json!({
        "train_images": p.train.len(),
        "test_images": p.test.len(),
        "classes": p.train.num_classes,
        "train_class_counts": p.train.class_counts(),
    });
    out.write("metrics.json", &pretty(&metrics)?)
}

fn train_cmd(cfg: &TrainingConfig, p: &Prepared, out: &mut Outputs) -> CliResult<()> {
    let trained = train_with(cfg, &p.train, |r| {
        eprintln!(
            "epoch {:>3}  total {:.5}  recon {:.5}  inv {:.5}  const {:.5}  variant {:.3}",
            r.epoch, r.total, r.recon, r.inv, r.consistency, r.variant_fraction
        )
    })
    .map_err(fail)?;
    let ckpt = out.dir().join("checkpoint.lgad");
    save_checkpoint(&ckpt, &trained.model, &trained.optimizer).map_err(fail)?;
    out.track("checkpoint.lgad")?;
    out.write("report.csv", trained.report.to_csv().as_bytes())?;
    out.write("report.json", trained.report.to_json().map_err(fail)?.as_bytes())?;

    let m = evaluate_reconstruction(&trained.model, &p.test_pairs, &cfg.mask()).map_err(fail)?;
    let base = constant_baseline(&p.test_pairs).map_err(fail)?;
    let last = trained.report.epochs.last();
    let metrics = json!({
        "psnr": m.psnr_mean,
        "ssim": m.ssim_mean,
        "rmse": m.rmse_mean,
        "baseline_psnr": base.psnr_mean,
        "final_loss": last.map(|r| r.total),
        "variant_fraction": last.map(|r| r.variant_fraction),
    });
    out.write("metrics.json", &pretty(&metrics)?)
}

fn eval_cmd(cfg: &TrainingConfig, p: &Prepared, model: &Model<f32>, out: &mut Outputs) -> CliResult<()> {
    let mask = cfg.mask();
    let m = evaluate_reconstruction(model, &p.test_pairs, &mask).map_err(fail)?;
    let base = constant_baseline(&p.test_pairs).map_err(fail)?;
    let inv = invariance(model, &p.test_pairs, &mask).map_err(fail)?;

    let mut csv = String::from("pair,psnr,ssim,rmse\n");
    for i in 0..m.count {
        csv.push_str(&format!("{i},{},{},{}\n", m.psnr[i], m.ssim[i], m.rmse[i]));
    }
    out.write("report.csv", csv.as_bytes())?;

    // Inputs, targets and predictions of the first pairs, one row each.
    let n = p.test_pairs.len().min(10);
    let idx: Vec<usize> = (0..n).collect();
    let batch = p.test_pairs.batch(&idx);
    let pred = predict_transformed(model, &batch.x, &batch.g, &mask).map_err(fail)?;
    let rows: Vec<&[f32]> = (0..n)
        .map(|i| batch.x.row(i))
        .chain((0..n).map(|i| batch.x_t.row(i)))
        .chain((0..n).map(|i| pred.row(i)))
        .collect();
    write_grid(out.dir().join("predictions.pgm"), p.test.height, p.test.width, &rows, n).map_err(fail)?;
    out.track("predictions.pgm")?;

    let metrics = json!({
        "psnr": m.psnr_mean,
        "ssim": m.ssim_mean,
        "rmse": m.rmse_mean,
        "count": m.count,
        "baseline_psnr": base.psnr_mean,
        "baseline_ssim": base.ssim_mean,
        "invariance": inv,
    });
    out.write("metrics.json", &pretty(&metrics)?)
}

fn probe_cmd(cfg: &TrainingConfig, p: &Prepared, model: &Model<f32>, out: &mut Outputs) -> CliResult<()> {
    let (images, labels) = probe_inputs(&p.test_pairs);
    let seed = derive_seed(cfg.seed, "probe");
    let reports = probe_all(model, &images, &labels, p.test.num_classes, &cfg.mask(), seed).map_err(fail)?;
    let mut csv = String::from("representation,accuracy,precision,recall,f1,auc\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.representation, r.accuracy, r.precision, r.recall, r.f1, r.auc
        ));
    }
    out.write("report.csv", csv.as_bytes())?;
    out.write("metrics.json", &pretty(&reports)?)
}

fn sweep_cmd(cfg: &TrainingConfig, p: &Prepared, model: &Model<f32>, out: &mut Outputs) -> CliResult<()> {
    let (images, labels) = probe_inputs(&p.test_pairs);
    let seed = derive_seed(cfg.seed, "probe");
    let sweep = sweep_tau(
        model,
        &images,
        &labels,
        p.test.num_classes,
        &default_taus(),
        cfg.pair_aligned_mask,
        seed,
    )
    .map_err(fail)?;
    out.write("report.csv", sweep.to_csv().as_bytes())?;
    out.write("metrics.json", &pretty(&sweep)?)
}

fn swap_cmd(
    cfg: &TrainingConfig,
    p: &Prepared,
    model: &Model<f32>,
    first: usize,
    second: usize,
    out: &mut Outputs,
) -> CliResult<()> {
    let n = p.test.len();
    if first >= n || second >= n {
        return Err(format!("swap indices {first},{second} outside 0..{n}"));
    }
    let (x1, x2) = (p.test.image(first), p.test.image(second));
    let s = swap_latents(model, x1, x2, &cfg.mask()).map_err(fail)?;
    let mut tiles: Vec<&[f32]> = vec![x1, x2];
    tiles.extend(s.images.iter().map(Vec::as_slice));
    write_grid(out.dir().join("swap.pgm"), p.test.height, p.test.width, &tiles, 6).map_err(fail)?;
    out.track("swap.pgm")?;
    let metrics = json!({
        "first": first,
        "second": second,
        "first_class": p.test.label(first),
        "second_class": p.test.label(second),
        "tiles": ["x1", "x2", "v1+i1", "v2+i2", "v1+i2", "v2+i1"],
    });
    out.write("metrics.json", &pretty(&metrics)?)
}

fn latents_cmd(
    cfg: &TrainingConfig,
    p: &Prepared,
    model: &Model<f32>,
    references: usize,
    rotations: usize,
    out: &mut Outputs,
) -> CliResult<()> {
    let idx: Vec<usize> = (0..p.test.len()).collect();
    let images = p.test.batch(&idx);
    let rows = export_latent_magnitudes(
        model,
        &images,
        &cfg.mask(),
        references,
        rotations,
        derive_seed(cfg.seed, "latents"),
    )
    .map_err(fail)?;
    out.write("report.csv", magnitudes_csv(&rows).as_bytes())?;
    let variant = rows.iter().filter(|r| r.mask == 1).count();
    let metrics = json!({ "latent_dim": rows.len(), "variant_dims": variant });
    out.write("metrics.json", &pretty(&metrics)?)
}

fn ablate_cmd(cfg: &TrainingConfig, p: &Prepared, out: &mut Outputs) -> CliResult<()> {
    let table = run_ablation(
        cfg,
        p,
        |_, _| None,
        |r| eprintln!("{:<10} psnr {:.3}  ssim {:.4}  rmse {:.4}", r.name, r.psnr, r.ssim, r.rmse),
    )
    .map_err(fail)?;
    out.write("report.csv", table.to_csv().as_bytes())?;
    out.write("metrics.json", &pretty(&table)?)
}

/// `sha256("blob <len>\0" ‖ bytes)`, the object id git uses in sha256 repositories.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the resolved configuration without `output_dir`, which only says
/// where results go.
fn config_hash(cfg: &TrainingConfig) -> String {
    let text: String = cfg
        .resolved()
        .lines()
        .filter(|l| !l.starts_with("output_dir="))
        .map(|l| format!("{l}\n"))
        .collect();
    hex(&Sha256::digest(text.as_bytes()))
}

fn manifest_value(command: &str, cfg: &TrainingConfig, outputs: &[(String, String)]) -> Value {
    json!({
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "outputs": outputs
            .iter()
            .map(|(file, hash)| json!({ "file": file, "hash": hash }))
            .collect::<Vec<_>>(),
    })
}
