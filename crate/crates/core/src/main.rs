use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spa_denoise::experiment::{
    ablate, heldout_pairs, run_training, FULL_SCALE_LEVEL_PSNR, HELDOUT_COUNT, HELDOUT_SIZE,
};
use spa_denoise::gradcheck::{run_suite, Suite, SuiteOptions};
use spa_denoise::io::{
    load_named_pairs, read_checkpoint, read_image_or_tensor, read_run_config, read_tensor_file,
    write_checkpoint, write_image, write_loss_log, write_tensor_file, RunConfig,
};
use spa_denoise::metrics::{fmt_db, psnr, ssim, MetricReport};
use spa_denoise::network::{denoise_image, ModelWeights};
use spa_denoise::training::synthetic_pairs;
use spa_denoise::wavelet::{build_pyramid, dwt2, idwt2, reconstruct_pyramid, Dwt2Bands, SubbandPyramid, SubbandSet};
use spa_denoise::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "spa", version, about = "Sub-band pyramid attention denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One-level Haar transform of an image or tensor file.
    Dwt {
        input: PathBuf,
        /// Output directory for ll.spat and l1_{lh,hl,hh}.spat.
        #[arg(long)]
        out: PathBuf,
    },
    /// Inverts `dwt`: reads a band directory, writes an image or tensor.
    Idwt {
        bands: PathBuf,
        /// `.pgm`/`.ppm` writes an image, anything else a tensor file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-level decomposition, or reconstruction with --reconstruct.
    Pyramid {
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        /// Treat INPUT as a band directory and rebuild the image.
        #[arg(long)]
        reconstruct: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of the hand-written backward passes.
    Gradcheck {
        #[arg(long, default_value = "layers")]
        module: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip the sign of one analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Trains a model; writes model.ckpt, loss.tsv and config.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Denoises one image with a checkpoint.
    Denoise {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM over DIR/clean and DIR/noisy, optionally after denoising.
    Eval {
        dir: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// 1 compares in [0, 1]; 255 compares 8-bit values.
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
    },
    /// Trains one model per SPA level and prints a level/PSNR table.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        levels: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config; the desk-scale defaults are used without one.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write one checkpoint and loss log per level here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes synthetic DIR/clean and DIR/noisy image pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config supplying the channel count and noise model.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm")
    )
}

fn write_output(path: &Path, t: &Tensor<f64>) -> Result<()> {
    if is_image_path(path) {
        write_image(path, t)
    } else {
        write_tensor_file(path, t)
    }
}

fn band_path(dir: &Path, level: usize, band: &str) -> PathBuf {
    dir.join(format!("l{level}_{band}.spat"))
}

fn write_pyramid(dir: &Path, p: &SubbandPyramid<f64>) -> Result<()> {
    create_dir(dir)?;
    write_tensor_file(&dir.join("ll.spat"), &p.top_ll)?;
    for (i, set) in p.highs.iter().enumerate() {
        write_tensor_file(&band_path(dir, i + 1, "lh"), &set.lh)?;
        write_tensor_file(&band_path(dir, i + 1, "hl"), &set.hl)?;
        write_tensor_file(&band_path(dir, i + 1, "hh"), &set.hh)?;
    }
    Ok(())
}

fn read_pyramid(dir: &Path) -> Result<SubbandPyramid<f64>> {
    let top_ll = read_tensor_file(&dir.join("ll.spat"))?.into_tensor();
    let mut highs = Vec::new();
    for level in 1.. {
        if !band_path(dir, level, "lh").exists() {
            break;
        }
        let band = |b: &str| Ok::<_, Error>(read_tensor_file(&band_path(dir, level, b))?.into_tensor());
        highs.push(SubbandSet {
            lh: band("lh")?,
            hl: band("hl")?,
            hh: band("hh")?,
        });
    }
    Ok(SubbandPyramid { top_ll, highs })
}

fn load_run(config: Option<&Path>) -> Result<RunConfig> {
    config.map_or_else(|| Ok(RunConfig::default()), read_run_config)
}

fn print_metrics(label: &str, r: &MetricReport, names: &[String]) {
    for line in r.to_kv(names).lines() {
        println!("{label} {line}");
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Dwt { input, out } => {
            let x = read_image_or_tensor(&input)?;
            let Dwt2Bands { ll, lh, hl, hh } = dwt2(&x)?;
            let p = SubbandPyramid {
                top_ll: ll,
                highs: vec![SubbandSet { lh, hl, hh }],
            };
            write_pyramid(&out, &p)?;
        }
        Command::Idwt { bands, out } => {
            let mut p = read_pyramid(&bands)?;
            if p.highs.len() != 1 {
                return Err(Error::MalformedPyramid(format!(
                    "{} holds {} levels; `idwt` expects exactly one (see `pyramid --reconstruct`)",
                    bands.display(),
                    p.highs.len()
                )));
            }
            let set = p.highs.pop().expect("one level");
            let bands = Dwt2Bands::from_parts(p.top_ll, set);
            write_output(&out, &idwt2(&bands)?)?;
        }
        Command::Pyramid {
            input,
            levels,
            reconstruct,
            out,
        } => {
            if reconstruct {
                let p = read_pyramid(&input)?;
                write_output(&out, &reconstruct_pyramid(&p)?)?;
            } else {
                let x = read_image_or_tensor(&input)?;
                write_pyramid(&out, &build_pyramid(&x, levels)?)?;
            }
        }
        Command::Gradcheck { module, seed, corrupt } => {
            let reports = run_suite(module, seed, SuiteOptions { corrupt })?;
            let mut ok = true;
            for r in &reports {
                let status = match &r.worst_failure {
                    None => "ok".to_string(),
                    Some(what) => {
                        ok = false;
                        format!("FAIL {what}")
                    }
                };
                println!(
                    "{:<36} checked={:<5} max_rel={:.3e} max_abs={:.3e} {status}",
                    r.group, r.checked, r.max_relative, r.max_absolute
                );
            }
            if !ok {
                eprintln!("gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Train { config, out, seed } => {
            let mut run = read_run_config(&config)?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            create_dir(&out)?;
            let every = (run.train.iterations / 20).max(1);
            let outcome = run_training(&run, |e| {
                if e.iteration % every == 0 {
                    eprintln!("iter {:>6}  lr {:.2e}  loss {:.6}", e.iteration, e.lr, e.loss);
                }
            })?;
            write_checkpoint(&out.join("model.ckpt"), &outcome.weights)?;
            write_loss_log(&out.join("loss.tsv"), &outcome.log)?;
            spa_denoise::io::write_bytes(&out.join("config.txt"), run.to_text().as_bytes())?;
            if let Some(reason) = outcome.aborted {
                eprintln!("training aborted: {reason}; last good weights saved");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Denoise { input, checkpoint, out } => {
            let w: ModelWeights<f64> = read_checkpoint(&checkpoint)?;
            let x = read_image_or_tensor(&input)?;
            write_output(&out, &denoise_image(&x, &w)?)?;
        }
        Command::Eval { dir, checkpoint, peak } => {
            let pairs = load_named_pairs::<f64>(&dir)?;
            let weights: Option<ModelWeights<f64>> = checkpoint.as_deref().map(read_checkpoint).transpose()?;
            let scale = peak;
            let names: Vec<String> = pairs.iter().map(|(n, _, _)| n.clone()).collect();
            let mut noisy = Vec::new();
            let mut denoised = Vec::new();
            for (_, clean, input) in &pairs {
                let clean_s = clean.scale(scale);
                noisy.push((psnr(&input.scale(scale), &clean_s, peak)?, ssim(&input.scale(scale), &clean_s, peak)?));
                if let Some(w) = &weights {
                    let y = denoise_image(input, w)?.scale(scale);
                    denoised.push((psnr(&y, &clean_s, peak)?, ssim(&y, &clean_s, peak)?));
                }
            }
            print_metrics("noisy", &MetricReport::new(noisy), &names);
            if weights.is_some() {
                print_metrics("denoised", &MetricReport::new(denoised), &names);
            }
        }
        Command::Ablate {
            levels,
            seed,
            config,
            out,
        } => {
            let mut run = load_run(config.as_deref())?;
            run.train.seed = seed;
            let held = heldout_pairs(&run, HELDOUT_COUNT, HELDOUT_SIZE)?;
            let every = (run.train.iterations / 10).max(1);
            let rows = ablate(&run, &levels, &held, |level, e| {
                if e.iteration % every == 0 {
                    eprintln!("level {level}  iter {:>6}  loss {:.6}", e.iteration, e.loss);
                }
            })?;
            println!("level\tpsnr_db\tssim\tnoisy_psnr_db\tfull_scale_db");
            for r in &rows {
                let reference = FULL_SCALE_LEVEL_PSNR
                    .get(r.level)
                    .map_or("-".to_string(), |v| format!("{v:.2}"));
                println!(
                    "{}\t{}\t{:.4}\t{}\t{reference}",
                    r.level,
                    fmt_db(r.denoised.mean_psnr),
                    r.denoised.mean_ssim,
                    fmt_db(r.noisy.mean_psnr)
                );
            }
            if let Some(dir) = out {
                create_dir(&dir)?;
                for r in &rows {
                    write_checkpoint(&dir.join(format!("level{}.ckpt", r.level)), &r.weights)?;
                    write_loss_log(&dir.join(format!("level{}.tsv", r.level)), &r.log)?;
                }
            }
            if rows.iter().any(|r| r.aborted.is_some()) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Synth {
            out,
            count,
            size,
            seed,
            config,
        } => {
            let run = load_run(config.as_deref())?;
            let pairs = synthetic_pairs::<f64>(run.model.input_channels, count, size, &run.data.noise, seed)?;
            let ext = if run.model.input_channels == 1 { "pgm" } else { "ppm" };
            create_dir(&out.join("clean"))?;
            create_dir(&out.join("noisy"))?;
            for (i, (clean, noisy)) in pairs.iter().enumerate() {
                let name = format!("{i:04}.{ext}");
                write_image(&out.join("clean").join(&name), clean)?;
                write_image(&out.join("noisy").join(&name), noisy)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
