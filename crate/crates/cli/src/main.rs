mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const ACTIVATIONS: [&str; 5] = ["sgelu", "gelu", "relu", "elu", "lisht"];
const TRAINED: [&str; 3] = ["sgelu", "gelu", "lisht"];

fn activation_name(s: &str) -> Result<String, String> {
    let n = s.to_ascii_lowercase();
    if ACTIVATIONS.contains(&n.as_str()) {
        Ok(n)
    } else {
        Err(format!("expected one of {}", ACTIVATIONS.join(", ")))
    }
}

fn trained_name(s: &str) -> Result<String, String> {
    let n = s.to_ascii_lowercase();
    if TRAINED.contains(&n.as_str()) {
        Ok(n)
    } else {
        Err(format!("expected one of {}", TRAINED.join(", ")))
    }
}

/// SGELU activation experiments: tabulation, MNIST training, weight analysis.
#[derive(Parser, Debug)]
#[command(name = "sgelu", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate an activation and its derivative on a uniform grid.
    Tabulate(TabulateArgs),
    /// Train MNIST classifiers, one per seed.
    TrainClassify(TrainArgs),
    /// Train 784-128-784 MNIST auto-encoders, one per seed.
    TrainAutoencoder(TrainArgs),
    /// Train SGELU, GELU and LiSHT over all seeds and write median curves.
    Suite(SuiteArgs),
    /// KS normality tests and histograms of saved network weights.
    AnalyzeWeights(AnalyzeArgs),
    /// Compare backpropagated gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Gradient descent on a single neuron from a fixed starting weight.
    DemoUpdate(DemoArgs),
    /// Time batch-norm and min-max forward passes.
    TimeNorm(TimeNormArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Directory for CSV and JSON artifacts [default: out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overwrite existing artifacts
    #[arg(long)]
    force: bool,
    /// Flat JSON object of option values; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TabulateArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Activation: sgelu, gelu, relu, elu or lisht [default: sgelu]
    #[arg(long = "fn", visible_alias = "activation", value_parser = activation_name)]
    function: Option<String>,
    /// SGELU scale, or ELU alpha when --fn elu [default: 0.1 / 1.0]
    #[arg(long)]
    alpha: Option<f64>,
    /// Grid start [default: -4]
    #[arg(long, allow_negative_numbers = true)]
    min: Option<f64>,
    /// Grid end [default: 4]
    #[arg(long, allow_negative_numbers = true)]
    max: Option<f64>,
    /// Number of grid points [default: 801]
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainOpts {
    /// Directory with the MNIST IDX files [default: data/mnist]
    #[arg(long, env = "SGELU_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// SGELU scale [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Training epochs [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 128]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden layer count [default: 8 for classification, 1 for the auto-encoder]
    #[arg(long)]
    hidden_layers: Option<usize>,
    /// Hidden layer width [default: 128]
    #[arg(long)]
    width: Option<usize>,
    /// Comma-separated seeds [default: 1,2,3,4,5]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Leading training examples used [default: 51200]
    #[arg(long)]
    train_samples: Option<usize>,
    /// Leading test examples used [default: 6400]
    #[arg(long)]
    test_samples: Option<usize>,
    /// Dropout probability after each hidden layer [default: 0]
    #[arg(long)]
    dropout: Option<f64>,
    /// Concurrent training runs [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write every trained network as JSON
    #[arg(long)]
    save_networks: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    train: TrainOpts,
    /// Activation: sgelu, gelu or lisht [default: sgelu]
    #[arg(long = "fn", visible_alias = "activation", value_parser = trained_name)]
    function: Option<String>,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    train: TrainOpts,
    /// Which experiment [default: classify]
    #[arg(long, value_parser = ["classify", "autoencode"])]
    task: Option<String>,
    /// Comma-separated activations to compare [default: sgelu,gelu,lisht]
    #[arg(long, value_delimiter = ',', value_parser = trained_name)]
    activations: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Network JSON files written by --save-networks
    #[arg(long = "network", num_args = 1..)]
    networks: Vec<PathBuf>,
    /// Histogram bins per layer [default: 50]
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Activation: sgelu, gelu, relu, elu or lisht [default: sgelu]
    #[arg(long = "fn", visible_alias = "activation", value_parser = activation_name)]
    function: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// none, batchnorm, minmax, or auto for the activation's usual pairing [default: auto]
    #[arg(long, value_parser = ["auto", "none", "batchnorm", "minmax"])]
    normalizer: Option<String>,
    /// Comma-separated layer widths from input to output [default: 4,8,8,3]
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    /// Batch rows [default: 16]
    #[arg(long)]
    batch: Option<usize>,
    /// Finite-difference step [default: 1e-5]
    #[arg(long)]
    h: Option<f64>,
    /// Seed for weights and data [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Largest acceptable relative error [default: 1e-4]
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Comma-separated activations [default: sgelu,gelu]
    #[arg(long = "fn", visible_alias = "activation", value_delimiter = ',', value_parser = activation_name)]
    functions: Option<Vec<String>>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Starting weight [default: -4]
    #[arg(long, allow_negative_numbers = true)]
    w0: Option<f64>,
    /// Neuron input [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    x: Option<f64>,
    /// Target output [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    target: Option<f64>,
    /// Step size [default: 1]
    #[arg(long)]
    lr: Option<f64>,
    /// Descent steps [default: 100]
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct TimeNormArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Comma-separated layer widths [default: 128]
    #[arg(long, value_delimiter = ',')]
    width: Option<Vec<usize>>,
    /// Batch rows [default: 128]
    #[arg(long)]
    batch: Option<usize>,
    /// Timed repetitions; the median is reported [default: 101]
    #[arg(long)]
    iters: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tabulate(a) => commands::tabulate(a),
        Command::TrainClassify(a) => commands::train(a, sgelu_core::network::Task::Classify),
        Command::TrainAutoencoder(a) => commands::train(a, sgelu_core::network::Task::Autoencode),
        Command::Suite(a) => commands::suite(a),
        Command::AnalyzeWeights(a) => commands::analyze_weights(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::DemoUpdate(a) => commands::demo_update(a),
        Command::TimeNorm(a) => commands::time_norm(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
