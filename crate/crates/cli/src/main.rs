use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use econv::densify::{densify_named, dpoa_transfer, receptive_fields, recover_plan};
use econv::nettext::{parse_net, render_net};
use econv::network::LossKind;
use econv::synthdata::{gen_dataset, load_dataset, save_dataset, SynthConfig};
use econv::train::{evaluate, train, TrainConfig};
use econv::verify::check_equivalence;
use econv::{Error, NetworkSpec, ParamStore64, Rng, Tensor64};

#[derive(Parser)]
#[command(name = "econv", version, about = "Dense-equivalent CNN engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Pixel,
    Global,
}

#[derive(Subcommand)]
enum Command {
    /// Print the receptive field of every layer.
    Rf { net: PathBuf },
    /// Rewrite a network into its dense equivalent.
    Densify {
        net: PathBuf,
        /// Name of the first pooling layer to convert.
        #[arg(long)]
        from_pool: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check that a dense network reproduces the original on the stride grid.
    Verify {
        net: PathBuf,
        dense: PathBuf,
        params: PathBuf,
        /// Square input size; defaults to the size in the network file.
        #[arg(long)]
        input_size: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// Train with minibatch SGD on a directory of samples.
    Train {
        net: PathBuf,
        data: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        lr: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "pixel")]
        loss: Loss,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// Start from these parameters instead of a seeded initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Report pixel accuracy and mean IoU on a directory of samples.
    Eval {
        net: PathBuf,
        params: PathBuf,
        data: PathBuf,
        /// Defaults to the channel count of the network output.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Check dense-network parameters against the original network and copy them.
    Transfer {
        dense_params: PathBuf,
        net: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate a synthetic pixel-labeling dataset.
    Gen {
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 48)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        min_shapes: usize,
        #[arg(long, default_value_t = 3)]
        max_shapes: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        seed: u64,
    },
}

enum Failure {
    Verification(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn read_net(path: &Path) -> Result<NetworkSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    parse_net(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_params(path: &Path) -> Result<ParamStore64, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    ParamStore64::from_bytes(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_params(path: &Path, params: &ParamStore64) -> Result<(), Failure> {
    let mut file = fs::File::create(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    params.write_to(&mut file)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Rf { net } => {
            let net = read_net(&net)?;
            let shapes = net.infer_shapes()?;
            for ((l, rf), d) in net.layers.iter().zip(receptive_fields(&net)?).zip(shapes) {
                println!(
                    "layer={} out={} size={}x{} step={}x{} offset={},{}",
                    l.name, d, rf.size.0, rf.size.1, rf.step.0, rf.step.1, rf.offset.0, rf.offset.1
                );
            }
        }
        Command::Densify { net, from_pool, out } => {
            let net = read_net(&net)?;
            let (dense, plan) = densify_named(&net, &from_pool)?;
            dense.infer_shapes()?;
            fs::write(&out, render_net(&dense)).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
            println!("grid_stride={}", plan.grid_stride());
        }
        Command::Verify { net, dense, params, input_size, seed, tolerance } => {
            if !(tolerance >= 0.0 && tolerance.is_finite()) {
                return Err(Failure::Usage(format!("tolerance must be finite and non-negative, got {tolerance}")));
            }
            let mut net = read_net(&net)?;
            let mut dense = read_net(&dense)?;
            if let Some(n) = input_size {
                net = net.with_input((n, n, net.input_dims.c));
                dense = dense.with_input((n, n, dense.input_dims.c));
            }
            let params = read_params(&params)?;
            let plan = recover_plan(&net, &dense)?;
            let input = Tensor64::rand_uniform(net.input_dims, &mut Rng::new(seed), -1.0, 1.0)?;
            let report = check_equivalence(&net, &dense, &plan, &params, &input, tolerance)?;
            println!("{report}");
            if !report.pass {
                return Err(Failure::Verification(format!("max abs diff {} exceeds {tolerance}", report.max_abs_diff)));
            }
        }
        Command::Train { net, data, epochs, lr, seed, loss, batch_size, init, out } => {
            let net = read_net(&net)?;
            let samples = load_dataset(&data)?;
            let mut params = match init {
                Some(p) => read_params(&p)?,
                None => ParamStore64::init(&net, &mut Rng::new(seed))?,
            };
            let loss = match loss {
                Loss::Pixel => LossKind::PixelSoftmaxCe,
                Loss::Global => LossKind::GlobalSoftmaxCe,
            };
            let cfg = TrainConfig { epochs, lr, batch_size, seed, loss };
            train(&net, &mut params, &samples, &cfg, |e, l| println!("epoch={e} loss={l}"))?;
            write_params(&out, &params)?;
        }
        Command::Eval { net, params, data, classes } => {
            let net = read_net(&net)?;
            let params = read_params(&params)?;
            let samples = load_dataset(&data)?;
            let classes = match classes {
                Some(k) => k,
                None => net.output_dims()?.c,
            };
            let r = evaluate(&net, &params, &samples, classes)?;
            println!("pixel_accuracy={} mean_iou={}", r.pixel_accuracy, r.mean_iou);
        }
        Command::Transfer { dense_params, net, out } => {
            let net = read_net(&net)?;
            let params = dpoa_transfer(&read_params(&dense_params)?, &net)?;
            write_params(&out, &params)?;
        }
        Command::Gen { out, count, size, classes, min_shapes, max_shapes, noise, seed } => {
            let cfg = SynthConfig {
                image_size: size,
                num_classes: classes,
                shapes_per_image: (min_shapes, max_shapes),
                noise_sigma: noise,
                seed,
            };
            let samples = gen_dataset::<f64>(&cfg, count)?;
            save_dataset(&out, &samples)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("econv: verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("econv: {msg}");
            ExitCode::from(2)
        }
    }
}
