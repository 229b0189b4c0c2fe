use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use turtleshell::bench::{self, Methods, SIM_FAMILIES};
use turtleshell::data::{load_csv_excluding, sniff_header, LabelColumn};
use turtleshell::export::{read_label_column, write_dataset, write_labels, write_model, write_posteriors, write_trace, ModelExport};
use turtleshell::init::{InitConfig, Scheme};
use turtleshell::metrics::{ari, Partition};
use turtleshell::sim::{Family, SimSpec};
use turtleshell::{fit, FitConfig, Result};

#[derive(Parser)]
#[command(name = "turtleshell", version, about = "Mutual-information clustering with Gaussian/uniform clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a CSV file and write labels, posteriors, model and trace.
    Fit(FitArgs),
    /// Write one simulated dataset with its labels.
    Simulate {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the adjusted Rand index of a labelling against a reference.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "label")]
        pred_col: String,
        #[arg(long, default_value = "label")]
        truth_col: String,
    },
    /// Replicate studies or dataset ARI comparisons against GMM-EM baselines.
    Benchmark {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 25)]
        replicates: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Directory of labelled CSVs for the datasets suite.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Sims,
    Datasets,
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Label column by zero-based index or header name. Further comma-separated
    /// columns are also left out of the features.
    #[arg(long, value_delimiter = ',')]
    label_col: Vec<LabelColumn>,
    #[arg(long, default_value_t = 25)]
    knn: usize,
    #[arg(long, value_enum, default_value = "graph")]
    scheme: Scheme,
    #[arg(long, value_delimiter = ',')]
    lambda1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambda2: Option<Vec<f64>>,
    /// Minimum cluster share before removal.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 10)]
    nstarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let header = sniff_header(&a.input)?;
    let (label, exclude) = match a.label_col.split_first() {
        Some((l, rest)) => (Some(l), rest),
        None => (None, &[][..]),
    };
    let ds = load_csv_excluding(&a.input, header, label, exclude, !a.no_standardize)?;
    let defaults = FitConfig::default();
    let cfg = FitConfig {
        init: InitConfig { scheme: a.scheme, k: a.knn, n_starts: a.nstarts, ..InitConfig::default() },
        lambda1_grid: a.lambda1.clone().unwrap_or(defaults.lambda1_grid),
        lambda2_grid: a.lambda2.clone().unwrap_or(defaults.lambda2_grid),
        removal_threshold: a.threshold,
        seed: a.seed,
        ..FitConfig::default()
    };
    let res = fit(&ds.x, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    write_labels(&a.out.join("labels.csv"), &res.labels)?;
    write_posteriors(&a.out.join("posteriors.csv"), &res.responsibilities)?;
    write_model(&a.out.join("model.json"), &ModelExport::from_fit(&res, ds.standardizer.as_ref()))?;
    write_trace(&a.out.join("trace.csv"), &res.objective_trace)?;
    eprintln!("k={} asw={:?} lambda1={} lambda2={}", res.k(), res.asw, res.hyper.lambda1, res.hyper.lambda2);
    Ok(())
}

fn run_simulate(family: Family, seed: u64, replicate: u64, out: &Path) -> Result<()> {
    let sim = SimSpec { family, seed, replicate }.generate();
    let labels = sim.data.true_labels.clone().unwrap_or_default();
    let mut cols: Vec<(&str, &[usize])> = vec![("label", &labels)];
    if let Some(i) = &sim.intuitive {
        cols.push(("intuitive", i));
    }
    write_dataset(out, &sim.data.x, &cols)
}

fn run_evaluate(pred: &Path, truth: &Path, pred_col: &str, truth_col: &str) -> Result<()> {
    let p = read_label_column(pred, pred_col)?;
    let t = read_label_column(truth, truth_col)?;
    let score = ari(&p, &t)?;
    println!("ari={score:?} k={}", Partition::compact(&p).k);
    Ok(())
}

fn run_benchmark(suite: Suite, replicates: u64, seed: u64, out: &Path, data_dir: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match suite {
        Suite::Sims => {
            let mut reps = Vec::new();
            for family in SIM_FAMILIES {
                for r in 0..replicates {
                    let row = bench::sim_replicate(family, seed, r, Methods::ALL)?;
                    eprintln!("{family:?} replicate {r}: k={:?} bic={:?} icl={:?}", row.turtle_k, row.bic_k, row.icl_k);
                    reps.push(row);
                }
            }
            bench::write_rows(&out.join("sims_replicates.csv"), &reps)?;
            bench::write_rows(&out.join("sims_frequencies.csv"), &bench::frequency_table(&reps))
        }
        Suite::Datasets => {
            let dir = data_dir.map_or_else(bench::bundled_data_dir, Path::to_path_buf);
            let mut rows = Vec::new();
            for ds in bench::labelled_datasets(&dir)? {
                let r = bench::dataset_rows(&ds, seed)?;
                for row in &r {
                    eprintln!("{} {}: k={} ari={:.3}", row.dataset, row.method, row.k, row.ari);
                }
                rows.extend(r);
            }
            bench::write_rows(&out.join("datasets_ari.csv"), &rows)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate { family, seed, replicate, out } => run_simulate(*family, *seed, *replicate, out),
        Command::Evaluate { pred, truth, pred_col, truth_col } => run_evaluate(pred, truth, pred_col, truth_col),
        Command::Benchmark { suite, replicates, seed, out, data_dir } => {
            run_benchmark(*suite, *replicates, *seed, out, data_dir.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
