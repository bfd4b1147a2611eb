//! Command-line pipeline: generate synthetic multiview data, train a
//! model, encode and score new samples, and evaluate rankings with
//! 11-point average precision. All outputs are deterministic for a fixed
//! seed so runs can be diffed byte for byte.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use nalgebra::DMatrix;

use mhdsc::dataset::{
    self, Manifold, MultiviewDataset, Normalization, SynthSpec,
};
use mhdsc::eval::{average_precision, mean_ap, RankedPredictions};
use mhdsc::inference::{encode_batch, EncodeConfig};
use mhdsc::io;
use mhdsc::solver::{self, Hyperparams, RegularizerChoice};
use mhdsc::Error;

#[derive(Parser)]
#[command(
    name = "mhdsc",
    about = "Multiview Hessian discriminative sparse coding",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multiview dataset
    Synth(SynthArgs),
    /// Learn dictionaries, codes, and view weights from a dataset
    Train(TrainArgs),
    /// Encode samples of a dataset against a trained model
    Encode(EncodeArgs),
    /// Encode samples and emit per-class label scores
    Predict(EncodeArgs),
    /// Score a predictions file against dataset labels
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// number of feature views
    #[arg(long, default_value_t = 2)]
    views: usize,
    /// comma-separated feature dimension per view; a single value applies
    /// to every view
    #[arg(long, default_value = "8")]
    dims: String,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// number of samples
    #[arg(long, default_value_t = 60)]
    n: usize,
    /// atoms in the generating dictionaries
    #[arg(long, default_value_t = 8)]
    atoms_true: usize,
    /// nonzeros per generated code column
    #[arg(long, default_value_t = 2)]
    sparsity: usize,
    /// additive noise standard deviation
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// manifold structure of the codes: none, grid2d, or swissroll
    #[arg(long, default_value = "none")]
    manifold: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// dataset output path
    #[arg(long)]
    out: PathBuf,
    /// optional ground-truth output path
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// dataset path
    #[arg(long)]
    data: PathBuf,
    /// model output path
    #[arg(long)]
    out: PathBuf,
    /// optional objective-trace TSV output path
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    gamma1: f64,
    #[arg(long, default_value_t = 0.01)]
    gamma2: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma3: f64,
    /// view-weight sharpness exponent (> 1)
    #[arg(long, default_value_t = 5.0)]
    r: f64,
    /// dictionary atom count
    #[arg(long, default_value_t = 10)]
    atoms: usize,
    /// neighbors per sample for graph construction (the source method
    /// used 100 at full image-corpus scale)
    #[arg(long, default_value_t = 10)]
    neighbors: usize,
    /// manifold regularizer: hessian, laplacian, or none
    #[arg(long, default_value = "hessian")]
    regularizer: String,
    /// keep only this fraction of the labelled samples labelled
    #[arg(long)]
    labelled_fraction: Option<f64>,
    /// feature normalization: unit, zscore, or none
    #[arg(long, default_value = "none")]
    normalize: String,
    /// tangent dimension of the local Hessian fits
    #[arg(long, default_value_t = 2)]
    tangent_dim: usize,
    #[arg(long, default_value_t = 1e-6)]
    hessian_ridge: f64,
    #[arg(long, default_value_t = 500)]
    inner_iters: usize,
    #[arg(long, default_value_t = 100)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    inner_tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    outer_tol: f64,
    /// include the zero-padded label view in the manifold term
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    label_view_manifold: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EncodeArgs {
    /// trained model path
    #[arg(long)]
    model: PathBuf,
    /// dataset path
    #[arg(long)]
    data: PathBuf,
    /// output path (one row per sample)
    #[arg(long)]
    out: PathBuf,
    /// sparsity weight for encoding; defaults to the model's gamma1
    #[arg(long)]
    gamma1_infer: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// feature normalization applied before encoding: unit, zscore, or none
    #[arg(long, default_value = "none")]
    normalize: String,
}

#[derive(Args)]
struct EvalArgs {
    /// scores path (one row per sample, one column per class)
    #[arg(long)]
    scores: PathBuf,
    /// dataset path providing the ground-truth labels
    #[arg(long)]
    data: PathBuf,
    /// metrics TSV output path
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a, false),
        Command::Predict(a) => cmd_encode(a, true),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn parse_dims(s: &str, views: usize) -> Result<Vec<usize>, Error> {
    let parts: Vec<&str> = s.split(',').collect();
    let dims: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad dimension '{p}'")))
        })
        .collect::<Result<_, _>>()?;
    if dims.len() == 1 {
        Ok(vec![dims[0]; views])
    } else if dims.len() == views {
        Ok(dims)
    } else {
        Err(Error::Invalid(format!(
            "{} dimensions given for {views} views",
            dims.len()
        )))
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        n_views: a.views,
        view_dims: parse_dims(&a.dims, a.views)?,
        n_classes: a.classes,
        n_samples: a.n,
        n_atoms_true: a.atoms_true,
        sparsity: a.sparsity,
        noise_sigma: a.noise,
        manifold: Manifold::parse(&a.manifold)?,
        seed: a.seed,
    };
    let (data, gt) = dataset::synth_multiview(&spec)?;
    dataset::save_dataset(&data, &a.out)?;
    if let Some(path) = a.ground_truth {
        dataset::save_ground_truth(&gt, path)?;
    }
    Ok(())
}

fn load_normalized(path: &PathBuf, normalize: &str) -> Result<MultiviewDataset, Error> {
    let data = dataset::load_dataset(path)?;
    Ok(dataset::normalize_views(&data, Normalization::parse(normalize)?))
}

fn format_trace(trace: &[solver::ObjectiveBreakdown]) -> String {
    let mut out =
        String::from("iter\trecon_labelled\trecon_unlabelled\tsparsity_w\tsparsity_d\tmanifold\ttotal\n");
    for (i, bd) in trace.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}\t{}\t{}",
            bd.recon_labelled,
            bd.recon_unlabelled,
            bd.sparsity_w,
            bd.sparsity_d,
            bd.manifold,
            bd.total
        );
    }
    out
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let mut data = load_normalized(&a.data, &a.normalize)?;
    if let Some(fraction) = a.labelled_fraction {
        data = dataset::split_labelled(&data, fraction, a.seed)?;
    }
    let hp = Hyperparams {
        gamma1: a.gamma1,
        gamma2: a.gamma2,
        gamma3: a.gamma3,
        r: a.r,
        n_atoms: a.atoms,
        inner_max_iters: a.inner_iters,
        outer_max_iters: a.outer_iters,
        inner_tol: a.inner_tol,
        outer_tol: a.outer_tol,
        regularizer: RegularizerChoice::parse(&a.regularizer)?,
        neighbors: a.neighbors,
        tangent_dim: a.tangent_dim,
        hessian_ridge: a.hessian_ridge,
        label_view_manifold: a.label_view_manifold,
    };
    let fitted = solver::fit(&data, &hp, a.seed)?;
    solver::save_model(&fitted.state, &hp, &a.out)?;
    if let Some(path) = a.trace {
        std::fs::write(path, format_trace(&fitted.trace))?;
    }
    Ok(())
}

fn cmd_encode(a: EncodeArgs, predict: bool) -> Result<(), Error> {
    let (state, hp) = solver::load_model(&a.model)?;
    let data = load_normalized(&a.data, &a.normalize)?;
    if data.n_views() != state.n_feature_views() {
        return Err(Error::Dimension(format!(
            "dataset has {} views but the model has {}",
            data.n_views(),
            state.n_feature_views()
        )));
    }
    let cfg = EncodeConfig {
        gamma1: a.gamma1_infer.unwrap_or(hp.gamma1),
        max_iters: a.max_iters,
        tol: a.tol,
    };
    let codes = encode_batch(&data.views, state.feature_dictionaries(), &cfg)?;
    let out: DMatrix<f64> = if predict {
        (state.label_dictionary() * &codes).transpose()
    } else {
        codes.transpose()
    };
    io::write_matrix(&out, &a.out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let scores = io::read_matrix(&a.scores)?;
    let data = dataset::load_dataset(&a.data)?;
    let labels = &data.labels.values;
    let l = data.labelled_count;
    // score rows must cover either the labelled block or the whole
    // dataset; only the labelled block is evaluated
    if scores.nrows() != l && scores.nrows() != data.n_samples() {
        return Err(Error::Dimension(format!(
            "scores file has {} rows, expected {l} (labelled) or {} (all samples)",
            scores.nrows(),
            data.n_samples()
        )));
    }
    if scores.ncols() != data.n_classes() {
        return Err(Error::Dimension(format!(
            "scores file has {} columns for {} classes",
            scores.ncols(),
            data.n_classes()
        )));
    }
    let mut out = String::from("class\tAP\n");
    let mut aps = Vec::new();
    for c in 0..data.n_classes() {
        let relevance: Vec<bool> = (0..l).map(|j| labels[(c, j)] == 1.0).collect();
        if relevance.iter().all(|&r| !r) {
            eprintln!("warning: class {c} has no positive samples; excluded from mAP");
            let _ = writeln!(out, "{c}\tNA");
            continue;
        }
        let class_scores: Vec<f64> = (0..l).map(|j| scores[(j, c)]).collect();
        let ap = average_precision(&RankedPredictions::new(class_scores, relevance)?)?;
        let _ = writeln!(out, "{c}\t{ap}");
        aps.push(ap);
    }
    let map = mean_ap(&aps)?;
    let _ = writeln!(out, "mAP\t{map}");
    std::fs::write(&a.out, out)?;
    Ok(())
}
