use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cseg::blobpipe::{BlobMap, RefineParams};
use cseg::consensus::{gradcheck, LossConfig, LossKind};
use cseg::grid::Grid;
use cseg::harness::synth::read_manifest;
use cseg::harness::{self, ExperimentConfig, FullFace, Split};
use cseg::net::descriptor::{appendix_descriptor, param_count, read_descriptor, receptive_field, shape_check};
use cseg::tensor::Tensor;
use cseg::{Error, Result};

/// Receptive field claimed for the appendix architecture.
const CLAIMED_APPENDIX_RF: f64 = 121.0;

#[derive(Parser)]
#[command(name = "cseg", version, about = "Consensus segmentation loss toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value config file; unset keys keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set beta=0`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DescriptorArgs {
    /// Descriptor file, one layer per line
    #[arg(long, conflicts_with = "appendix")]
    descriptor: Option<PathBuf>,
    /// Use the built-in appendix architecture
    #[arg(long)]
    appendix: bool,
}

impl DescriptorArgs {
    fn load(&self) -> Result<Vec<cseg::net::LayerSpec>> {
        match (&self.descriptor, self.appendix) {
            (Some(p), false) => read_descriptor(p),
            (None, true) => Ok(appendix_descriptor()),
            _ => Err(Error::Config("pass exactly one of --descriptor or --appendix".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic occlusion dataset
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full-face mask + teacher mask to label and blob maps
    Pipeline {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, conflicts_with = "pose", required_unless_present = "pose")]
        full: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the desk network on a generated dataset
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Face vs non-face scoring
        #[arg(long)]
        merged: bool,
        #[arg(long, default_value = "model")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of a loss on a random instance
    Gradcheck {
        #[arg(long, default_value = "consensus")]
        loss: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        blobs: u32,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Per-layer receptive field
    Rf {
        #[command(flatten)]
        desc: DescriptorArgs,
    },
    /// Per-layer output shapes and parameter count
    Shapes {
        #[command(flatten)]
        desc: DescriptorArgs,
        /// Input dims as C,H,W
        #[arg(long, default_value = "3,128,128")]
        input: String,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize)> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("bad dims {s:?}"))))
        .collect::<Result<_>>()?;
    match v.as_slice() {
        &[c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Config(format!("expected C,H,W, got {s:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out } => harness::synth_generate(&cfg.resolve()?, &out),
        Command::Pipeline {
            teacher,
            full,
            pose,
            out,
        } => {
            let source = match (&full, &pose) {
                (Some(f), None) => FullFace::Mask(f),
                (None, Some(p)) => FullFace::Pose(p),
                _ => return Err(Error::Config("pass exactly one of --full or --pose".into())),
            };
            let f = harness::pipeline_run(source, &teacher, &out, &RefineParams::default())?;
            println!("blobs {}", f.blobs.n_blobs());
            Ok(())
        }
        Command::Train { cfg, data, out } => {
            let s = harness::train(&cfg.resolve()?, &data, &out)?;
            println!("best epoch {} val mean recall {:.6}", s.best_epoch, s.best_val_recall);
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            merged,
            method,
            out,
        } => {
            let split = Split::parse(&split)?;
            let n = split.size(&read_manifest(&data)?);
            let row = harness::eval(&checkpoint, &data, split, n, merged, &method, &out)?;
            println!("{}", row.to_csv());
            Ok(())
        }
        Command::Gradcheck {
            loss,
            seed,
            size,
            blobs,
            step,
            tol,
        } => {
            let kind = LossKind::parse(&loss)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = LossConfig::default();
            let k = cfg.num_classes;
            let z = Tensor::new(
                vec![k, size, size],
                (0..k * size * size).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )?;
            let b = BlobMap::new(Grid::from_fn(size, size, |_, _| rng.random_range(0..blobs.max(1))));
            let classes: Vec<u8> = (0..blobs.max(1)).map(|_| rng.random_range(0..k as u8)).collect();
            let y = b.ids().map(|&id| classes[id as usize]);
            let report = gradcheck(|z| kind.evaluate(z, &y, &b, &cfg), &z, step, tol)?;
            println!(
                "{} checked {} max_rel_err {:.3e} {}",
                kind.name(),
                report.checked,
                report.max_rel_err,
                if report.passed() { "PASS" } else { "FAIL" }
            );
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Invalid(format!(
                    "{} coordinates above tolerance",
                    report.failures.len()
                )))
            }
        }
        Command::Rf { desc } => {
            let specs = desc.load()?;
            let steps = receptive_field(&specs)?;
            println!("layer,kind,rf,jump");
            for (i, (s, st)) in specs.iter().zip(&steps).enumerate() {
                println!("{},{},{},{}", i + 1, s.kind.name(), st.rf, st.jump);
            }
            let rf = steps.last().map_or(1.0, |s| s.rf);
            println!("final rf {rf}");
            if desc.appendix {
                println!("claimed rf {CLAIMED_APPENDIX_RF} delta {}", rf - CLAIMED_APPENDIX_RF);
            }
            Ok(())
        }
        Command::Shapes { desc, input } => {
            let specs = desc.load()?;
            let shapes = shape_check(&specs, parse_dims(&input)?)?;
            println!("layer,kind,params,c,h,w");
            for (i, (s, (c, h, w))) in specs.iter().zip(&shapes).enumerate() {
                println!("{},{},{},{c},{h},{w}", i + 1, s.kind.name(), s.param_count());
            }
            println!("total params {}", param_count(&specs));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            ExitCode::FAILURE
        }
    }
}
