use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reticulum::data::{
    cross_validate, generate_cross, generate_sphere, load_csv, load_features, log_loss, write_atomic, CsvOptions,
    Delimiter, LabelColumn, SphereLabel,
};
use reticulum::optimizer::Coordinates;
use reticulum::{fit, Error, ModelFile, SurfaceGrid, TrainConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_INGESTION: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

/// Grow, inspect and apply Bayesian reticula (soft oblique decision trees).
#[derive(Parser)]
#[command(name = "reticulum", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Fit a model to a labelled CSV file.
    Fit(FitArgs),
    /// Write p(y = 1 | x) for every row of a CSV file.
    Predict(PredictArgs),
    /// Report log-loss and node count of a model on labelled data.
    Evaluate(EvaluateArgs),
    /// k-fold cross-validation of a training configuration.
    Cv(CvArgs),
    /// Evaluate a 2-d model on a regular grid.
    Surface(SurfaceArgs),
    /// Describe a model's hyperplanes and leaves in plain text.
    Explain(ExplainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sphere,
    Cross,
}

#[derive(Clone, Copy, ValueEnum)]
enum SphereVariant {
    /// Probability driven by the distance to the unit circle.
    Distance,
    /// Probability driven by the raw norm of the point.
    RawNorm,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Labelling rule for the sphere data.
    #[arg(long, value_enum, default_value = "distance")]
    sphere_label: SphereVariant,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct CsvArgs {
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
    /// Label column, by header name or zero-based index (default: last column).
    #[arg(long)]
    label_column: Option<String>,
    /// Columns are separated by runs of whitespace instead of commas.
    #[arg(long)]
    whitespace: bool,
}

impl CsvArgs {
    fn options(&self) -> CsvOptions {
        let label = match &self.label_column {
            None => LabelColumn::Last,
            Some(s) => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.clone()),
            },
        };
        CsvOptions {
            has_header: !self.no_header,
            label,
            delimiter: if self.whitespace { Delimiter::Whitespace } else { Delimiter::Comma },
        }
    }
}

/// Training settings. Values given here override the config file, which
/// overrides the built-in defaults.
#[derive(Args, Clone)]
struct TrainArgs {
    /// TOML file with any of the fields below (snake_case names).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Deepest level a leaf may reach (the root is level 0).
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    prior_alpha: Option<f64>,
    #[arg(long)]
    prior_beta: Option<f64>,
    #[arg(long)]
    initial_stiffness: Option<f64>,
    /// Adam step size.
    #[arg(long)]
    step_size: Option<f64>,
    /// Gradient steps per extension, split between the local and the global phase.
    #[arg(long)]
    total_gradient_steps: Option<usize>,
    /// Between 1 and 1.2; larger values prune more.
    #[arg(long)]
    pruning_factor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optimize hyperplanes in polar coordinates.
    #[arg(long)]
    polar: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $flag:expr),* $(,)?) => {
                $(if let Some(v) = $flag { config.$field = v; })*
            };
        }
        set!(
            max_attempts <- self.max_attempts,
            max_depth <- self.max_depth,
            prior_alpha <- self.prior_alpha,
            prior_beta <- self.prior_beta,
            initial_stiffness <- self.initial_stiffness,
            step_size <- self.step_size,
            total_gradient_steps <- self.total_gradient_steps,
            pruning_factor <- self.pruning_factor,
            rng_seed <- self.seed,
        );
        if self.polar {
            config.coordinates = Coordinates::Polar;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    model_out: PathBuf,
    /// Construction trace, one JSON record per line.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    /// Every column of the input is a feature.
    #[arg(long)]
    unlabelled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Seed for the fold assignment.
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Range of the first feature, as LO:HI.
    #[arg(long, default_value = "-2:2", value_parser = parse_range, allow_hyphen_values = true)]
    x_range: (f64, f64),
    /// Range of the second feature, as LO:HI.
    #[arg(long, default_value = "-2:2", value_parser = parse_range, allow_hyphen_values = true)]
    y_range: (f64, f64),
    /// Grid points per axis, as N or NXxNY.
    #[arg(long, default_value = "100", value_parser = parse_resolution)]
    resolution: (usize, usize),
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound {hi:?}"))?;
    if !(lo < hi) {
        return Err("lower bound must be below upper bound".into());
    }
    Ok((lo, hi))
}

fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad resolution {t:?}"));
    let (nx, ny) = match s.split_once(['x', 'X']) {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if nx == 0 || ny == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((nx, ny))
}

fn load_model(path: &Path) -> Result<reticulum::Reticulum, Error> {
    ModelFile::load(path)?.to_tree()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(a) => {
            let data = match a.kind {
                Kind::Cross => generate_cross(a.n, a.seed),
                Kind::Sphere => {
                    let label = match a.sphere_label {
                        SphereVariant::Distance => SphereLabel::DistanceToCircle,
                        SphereVariant::RawNorm => SphereLabel::RawNorm,
                    };
                    generate_sphere(a.n, a.seed, label)
                }
            };
            data.write_csv(&a.out)?;
            eprintln!("wrote {} rows to {}", data.len(), a.out.display());
        }
        Command::Fit(a) => {
            let config = a.train.resolve()?;
            let data = load_csv(&a.data, &a.csv.options())?;
            let (tree, trace) = fit(&data, &config)?;
            ModelFile::from_tree(&tree, Some(&config), Some(&data))?.save(&a.model_out)?;
            if let Some(path) = &a.trace_out {
                write_atomic(path, trace.to_jsonl()?.as_bytes())?;
            }
            println!(
                "internal nodes: {}\nleaves: {}\nbound: {:.6}",
                tree.internal_count(),
                tree.leaf_count(),
                tree.potential_sum()
            );
        }
        Command::Predict(a) => {
            let tree = load_model(&a.model)?;
            let points = if a.unlabelled {
                let (dim, x) = load_features(&a.data, &a.csv.options())?;
                if dim != tree.dim() {
                    return Err(Error::Dimension {
                        expected: tree.dim(),
                        got: dim,
                    });
                }
                x
            } else {
                let data = load_csv(&a.data, &a.csv.options())?;
                if data.dim() != tree.dim() {
                    return Err(Error::Dimension {
                        expected: tree.dim(),
                        got: data.dim(),
                    });
                }
                data.features().to_vec()
            };
            let mut out = String::from("p\n");
            for p in tree.predict_many(&points)? {
                out.push_str(&format!("{p:?}\n"));
            }
            write_atomic(&a.out, out.as_bytes())?;
        }
        Command::Evaluate(a) => {
            let tree = load_model(&a.model)?;
            let data = load_csv(&a.data, &a.csv.options())?;
            if data.dim() != tree.dim() {
                return Err(Error::Dimension {
                    expected: tree.dim(),
                    got: data.dim(),
                });
            }
            let loss = log_loss(&tree.predict_many(data.features())?, data.labels())?;
            println!("log_loss: {loss:.6}\ninternal nodes: {}\npoints: {}", tree.internal_count(), data.len());
        }
        Command::Cv(a) => {
            let config = a.train.resolve()?;
            let data = load_csv(&a.data, &a.csv.options())?;
            let cv = cross_validate(&data, &config, a.k, a.fold_seed)?;
            for f in &cv.folds {
                println!("fold {}: log_loss {:.6}, internal nodes {}", f.fold, f.log_loss, f.node_count);
            }
            println!("mean log_loss: {:.6}\nmean internal nodes: {:.2}", cv.mean_log_loss, cv.mean_node_count);
        }
        Command::Surface(a) => {
            let tree = load_model(&a.model)?;
            SurfaceGrid::evaluate(&tree, a.x_range, a.y_range, a.resolution)?.write_csv(&a.out)?;
        }
        Command::Explain(a) => {
            print!("{}", ModelFile::load(&a.model)?.explain());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_ingestion() => EXIT_INGESTION,
        _ => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
