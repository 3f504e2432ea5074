//! Command-line front end for the `cgeom` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::descent::{minimize_all, DescentConfig};
use crate::distgeo::{certify, realize_euclidean, realize_spherical};
use crate::error::{Error, Result};
use crate::experiments::{
    run_imbalanced_supcon, run_kernel_pca, run_quasi_optima, run_yaware_sphere, ImbalancedSupconConfig,
    KernelPcaConfig, QuasiOptimaConfig, YAwareSphereConfig,
};
use crate::infonce::{entropic_bound, loss_gap};
use crate::io::{read_json, read_matrix, write_json, write_json_lines, write_matrix};
use crate::matrices::{
    weights_to_dissimilarity, ClassPartition, DissimilarityMatrix, Embedding, Similarity, WeightMatrix,
};
use crate::metrics::full_report;
use crate::weights::SchemeConfig;

#[derive(Debug, Parser)]
#[command(
    name = "cgeom",
    version,
    about = "Weighted InfoNCE optima as distance geometry"
)]
pub struct Cli {
    /// Worker threads for parallel restarts and pair loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weight matrix construction.
    #[command(subcommand)]
    Weights(WeightsCommand),
    /// Loss evaluation.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Print the entropic lower bound of a weight matrix.
    Bound {
        #[arg(long)]
        weights: PathBuf,
    },
    /// Certify a dissimilarity matrix as Euclidean and/or spherical.
    Certify {
        #[command(flatten)]
        input: DissimilarityInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classical realization of a dissimilarity matrix.
    Realize {
        #[command(flatten)]
        input: DissimilarityInput,
        #[arg(long)]
        q: usize,
        /// Realize on the sphere for `s = cos / tau`.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimize the loss over embeddings by gradient descent.
    Optimize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        tau: Option<f64>,
        /// Descent settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Gap and geometric agreement of an embedding with a target.
    Metrics {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        /// Class sizes for the per-class Procrustes score, e.g. `4,4,8`.
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the bundled experiments.
    Experiment {
        name: ExperimentName,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, `results/<name>` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum WeightsCommand {
    /// Build a weight matrix from a JSON scheme description.
    Build {
        #[arg(long)]
        config: PathBuf,
        /// CSV or `.json` output; stdout CSV when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    /// Loss, bound and gap of an embedding.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        /// Spherical similarity temperature; Euclidean when absent.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DissimilarityInput {
    #[arg(long)]
    dissimilarity: Option<PathBuf>,
    /// Use `-ln W` off the diagonal.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl DissimilarityInput {
    fn load(&self) -> Result<DissimilarityMatrix> {
        match (&self.dissimilarity, &self.weights) {
            (Some(d), _) => DissimilarityMatrix::new(read_matrix(d)?),
            (None, Some(w)) => weights_to_dissimilarity(&load_weights(w)?),
            (None, None) => Err(Error::BadParameter("no input matrix".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    ImbalancedSupcon,
    YawareSphere,
    KernelPca,
    QuasiOptima,
}

impl ExperimentName {
    fn as_str(self) -> &'static str {
        match self {
            ExperimentName::ImbalancedSupcon => "imbalanced-supcon",
            ExperimentName::YawareSphere => "yaware-sphere",
            ExperimentName::KernelPca => "kernel-pca",
            ExperimentName::QuasiOptima => "quasi-optima",
        }
    }
}

fn load_weights(path: &Path) -> Result<WeightMatrix> {
    WeightMatrix::new(read_matrix(path)?)
}

fn similarity(tau: Option<f64>) -> Result<Similarity> {
    tau.map_or(Ok(Similarity::Euclidean), Similarity::spherical)
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    write_stdout(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    Ok(out.flush()?)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    if let Some(out) = out {
        write_json(out, value)?;
    }
    print_json(value)
}

/// Parses `args` (program name first) and executes the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::BadParameter(e.to_string()))?;
    }
    execute(cli.command)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Weights(WeightsCommand::Build { config, out }) => {
            let scheme: SchemeConfig = read_json(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let w = scheme.build(base)?;
            match out {
                Some(out) => write_matrix(&out, w.as_matrix()),
                None => write_stdout(&crate::io::csv_string(w.as_matrix())),
            }
        }
        Command::Loss(LossCommand::Eval {
            weights,
            embedding,
            tau,
            out,
        }) => {
            let w = load_weights(&weights)?;
            let z = Embedding::new(read_matrix(&embedding)?);
            emit(&loss_gap(&w, &z, similarity(tau)?)?, out.as_deref())
        }
        Command::Bound { weights } => {
            write_stdout(&format!("{}\n", entropic_bound(&load_weights(&weights)?)))
        }
        Command::Certify { input, out } => emit(&certify(&input.load()?), out.as_deref()),
        Command::Realize { input, q, tau, out } => {
            let d = input.load()?;
            let z = match tau {
                Some(tau) => realize_spherical(&d, tau, q)?,
                None => realize_euclidean(&d, q)?,
            };
            write_matrix(&out, z.as_matrix())
        }
        Command::Optimize {
            weights,
            q,
            tau,
            config,
            seed,
            out,
        } => {
            let w = load_weights(&weights)?;
            let mut cfg: DescentConfig = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let runs = minimize_all(&w, similarity(tau)?, q, &cfg)?;
            let best =
                runs.iter().enumerate().fold(
                    0,
                    |b, (i, r)| if r.report.loss < runs[b].report.loss { i } else { b },
                );
            let trace: Vec<serde_json::Value> = runs
                .iter()
                .flat_map(|r| {
                    r.checkpoints.iter().map(move |c| {
                        serde_json::json!({"restart": r.restart, "step": c.step, "loss": c.loss,
                                           "gap": c.gap, "grad_norm": c.grad_norm})
                    })
                })
                .collect();
            let b = &runs[best];
            write_matrix(&out.join("embedding.csv"), b.embedding.as_matrix())?;
            write_json_lines(&out.join("trace.jsonl"), &trace)?;
            let report = serde_json::json!({
                "best_restart": b.restart,
                "loss": b.report.loss,
                "bound": b.report.bound,
                "gap": b.report.gap,
                "absolute_gap": b.report.absolute_gap,
                "ratio_undefined": b.report.ratio_undefined,
                "grad_norm": b.grad_norm,
                "steps": b.steps_taken,
                "converged": b.converged,
                "config": cfg,
            });
            emit(&report, Some(&out.join("report.json")))
        }
        Command::Metrics {
            weights,
            embedding,
            target,
            tau,
            groups,
            out,
        } => {
            let w = load_weights(&weights)?;
            let z = Embedding::new(read_matrix(&embedding)?);
            let zstar = Embedding::new(read_matrix(&target)?);
            let groups = groups.as_deref().map(ClassPartition::from_sizes).transpose()?;
            let r = full_report(&w, &z, &zstar, similarity(tau)?, groups.as_ref())?;
            if let Some(out) = out {
                write_json(&out, &r)?;
            }
            let local = r.r2_proc_local.map_or("-".to_string(), |v| format!("{v:.10}"));
            let rows = [
                ("delta_w", format!("{:.6e}", r.delta_w)),
                ("absolute_gap", format!("{:.6e}", r.absolute_gap)),
                ("ratio_undefined", r.ratio_undefined.to_string()),
                ("r2_ssim", format!("{:.10}", r.r2_ssim)),
                ("r2_proc_rigid", format!("{:.10}", r.r2_proc_rigid)),
                ("r2_proc_linear", format!("{:.10}", r.r2_proc_linear)),
                ("r2_proc_local", local),
            ];
            let table: String = rows.iter().map(|(k, v)| format!("{k:<16} {v}\n")).collect();
            write_stdout(&table)
        }
        Command::Experiment {
            name,
            config,
            seed,
            out,
        } => {
            let out = out.unwrap_or_else(|| Path::new("results").join(name.as_str()));
            let config = config.as_deref();
            match name {
                ExperimentName::ImbalancedSupcon => {
                    let mut cfg: ImbalancedSupconConfig = load_config(config)?;
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    print_json(&run_imbalanced_supcon(&cfg, Some(&out))?)
                }
                ExperimentName::YawareSphere => {
                    let mut cfg: YAwareSphereConfig = load_config(config)?;
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    print_json(&run_yaware_sphere(&cfg, Some(&out))?)
                }
                ExperimentName::KernelPca => {
                    let mut cfg: KernelPcaConfig = load_config(config)?;
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    print_json(&run_kernel_pca(&cfg, Some(&out))?)
                }
                ExperimentName::QuasiOptima => {
                    let cfg: QuasiOptimaConfig = load_config(config)?;
                    print_json(&run_quasi_optima(&cfg, Some(&out))?)
                }
            }
        }
    }
}

/// Entry point for the binary: runs and maps errors to exit code 1.
pub fn main() -> ExitCode {
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
