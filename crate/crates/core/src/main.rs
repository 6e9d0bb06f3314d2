use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use plsivc::bodyfat::{fit_bodyfat, load_bodyfat, BodyFatConfig, CleaningRules, Preprocessing};
use plsivc::estimator::{fit_penalized_from, fit_unpenalized, FitConfig};
use plsivc::io::{dataset_from_table, read_table, to_json, write_numeric_csv, ColumnRoles, FitReport, Names};
use plsivc::manifest::RunManifest;
use plsivc::penalty::PenaltyFamily;
use plsivc::simulation::{run_monte_carlo, Method, SimConfig, SimSummary, Truth};
use plsivc::tuning::{adaptive_lambdas, default_knot_candidates, select, LambdaGrid, TuningGrid};
use plsivc::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "plsivc", version, about = "Penalized partially linear single-index varying-coefficient models")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Format of the main result file.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for Monte Carlo replications (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    Scad,
    Lasso,
}

impl Family {
    fn penalty(self) -> PenaltyFamily {
        match self {
            Family::Scad => PenaltyFamily::default(),
            Family::Lasso => PenaltyFamily::Lasso,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo campaign on the sparse simulation design.
    Simulate(SimulateArgs),
    /// Fit a CSV dataset with a column-role mapping.
    Fit(FitArgs),
    /// Cross-validation grid report for a CSV dataset.
    Cv(CvArgs),
    /// Body-fat analysis.
    Bodyfat(BodyfatArgs),
    /// Curve and boxplot CSVs from a saved campaign.
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with a full simulation configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated subset of scad, lasso, oracle.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodArg>>,
    /// Number of λ candidates in the scaled grid.
    #[arg(long)]
    lambda_count: Option<usize>,
    /// Comma-separated knot counts.
    #[arg(long, value_delimiter = ',')]
    knots: Option<Vec<usize>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Scad,
    Lasso,
    Oracle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Scad => Method::Scad,
            MethodArg::Lasso => Method::Lasso,
            MethodArg::Oracle => Method::Oracle,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    /// Response column.
    #[arg(long)]
    y: String,
    /// Linear covariates.
    #[arg(long, value_delimiter = ',', default_values_t = Vec::<String>::new())]
    u: Vec<String>,
    /// Index covariates.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<String>,
    /// Covariates multiplying the varying coefficients; `1` is an intercept.
    #[arg(long, value_delimiter = ',', required = true)]
    z: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2)]
    knots: usize,
    /// Base tuning parameter; omitted means an unpenalized fit.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value_t = Family::Scad)]
    family: Family,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    knots: Option<Vec<usize>>,
    /// Explicit λ candidates; default is the scaled grid.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    lambda_count: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = Family::Scad)]
    family: Family,
}

#[derive(Args)]
struct BodyfatArgs {
    #[arg(long)]
    input: PathBuf,
    /// Largest tolerated Siri discrepancy.
    #[arg(long, default_value_t = 4.0)]
    tau: f64,
    #[arg(long)]
    raw_x: bool,
    #[arg(long)]
    raw_u: bool,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 20)]
    lambda_count: usize,
    #[arg(long, value_enum, default_value_t = Family::Scad)]
    family: Family,
}

#[derive(Args)]
struct PlotDataArgs {
    /// `campaign.json` written by `simulate`.
    #[arg(long)]
    campaign: PathBuf,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn create(path: &Path) -> plsivc::Result<File> {
    Ok(File::create(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> plsivc::Result<()> {
    fs::write(path, to_json(value)? + "\n")?;
    Ok(())
}

fn sim_config(args: &SimulateArgs) -> plsivc::Result<SimConfig> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<SimConfig>(&fs::read_to_string(path)?)
            .map_err(|e| usage(format!("invalid simulation config: {e}")))?,
        None => SimConfig::new(200, 0.5, 100, 0),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(s) = args.sigma {
        cfg.sigma = s;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.iter().map(|&a| a.into()).collect();
    }
    if let Some(c) = args.lambda_count {
        cfg.lambdas = LambdaGrid::Scaled { count: c, lo: 1e-3, hi: 2.0 };
    }
    if let Some(k) = &args.knots {
        cfg.knots = k.clone();
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(g) = args.grid_points {
        cfg.grid_points = g;
    }
    Ok(cfg)
}

const SUMMARY_HEADERS: [&str; 16] = [
    "method", "mean", "bias", "sd", "c_beta", "i_beta", "gmse", "c_theta", "i_theta", "c_g", "i_g", "rase1", "rase2",
    "rase", "replications", "failures",
];

fn write_summary_csv(path: &Path, summary: &SimSummary) -> plsivc::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SUMMARY_HEADERS)?;
    for m in &summary.methods {
        let f = plsivc::io::fmt_f64;
        w.write_record([
            m.method.name().to_string(),
            f(m.mean),
            f(m.bias),
            f(m.sd),
            f(m.c_beta),
            f(m.i_beta),
            f(m.gmse),
            f(m.c_theta),
            f(m.i_theta),
            f(m.c_g),
            f(m.i_g),
            f(m.rase1),
            f(m.rase2),
            f(m.rase),
            m.replications.to_string(),
            m.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replication RASE values, the boxplot source.
fn write_rase_csv(path: &Path, summary: &SimSummary) -> plsivc::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["rep", "method", "rase1", "rase2", "rase"])?;
    for o in &summary.outcomes {
        if let Some(r) = &o.record {
            w.write_record([
                r.rep.to_string(),
                r.method.name().to_string(),
                plsivc::io::fmt_f64(r.rase1),
                plsivc::io::fmt_f64(r.rase2),
                plsivc::io::fmt_f64(r.rase()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean fitted curves against the truth, one file per method.
fn write_curves(dir: &Path, summary: &SimSummary) -> plsivc::Result<Vec<String>> {
    let truth = Truth::standard();
    let mut files = Vec::new();
    for m in &summary.methods {
        let name = format!("curves_{}.csv", m.method.name().to_ascii_lowercase());
        let rows: Vec<Vec<f64>> = summary
            .grid
            .iter()
            .enumerate()
            .map(|(j, &u)| vec![u, truth.g(0, u), m.g1_mean[j], truth.g(1, u), m.g2_mean[j]])
            .collect();
        write_numeric_csv(
            create(&dir.join(&name))?,
            &["u", "g1_true", "g1_hat_mean", "g2_true", "g2_hat_mean"],
            &rows,
        )?;
        files.push(name);
    }
    Ok(files)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> plsivc::Result<()> {
    let mut cfg = sim_config(args)?;
    cfg.seed = cli.seed;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| usage(e.to_string()))?;
    let summary = pool.install(|| run_monte_carlo(&cfg))?;
    let dir = &cli.out_dir;
    let mut outputs = vec!["campaign.json".to_string()];
    write_json(&dir.join("campaign.json"), &summary)?;
    match cli.format {
        Format::Csv => {
            write_summary_csv(&dir.join("summary.csv"), &summary)?;
            outputs.push("summary.csv".into());
        }
        Format::Json => {
            write_json(&dir.join("summary.json"), &summary.methods)?;
            outputs.push("summary.json".into());
        }
    }
    write_rase_csv(&dir.join("rase.csv"), &summary)?;
    outputs.push("rase.csv".into());
    outputs.extend(write_curves(dir, &summary)?);
    let mut manifest = RunManifest::new("simulate", cli.seed, &cfg)?;
    manifest.outputs = outputs;
    manifest.write(dir)?;
    for m in &summary.methods {
        println!(
            "{:<6} mean={:.5} sd={:.5} C(β)={:.3} I(β)={:.3} GMSE={:.5} C(θ)={:.3} I(θ)={:.3} RASE={:.4} failures={}",
            m.method.name(),
            m.mean,
            m.sd,
            m.c_beta,
            m.i_beta,
            m.gmse,
            m.c_theta,
            m.i_theta,
            m.rase,
            m.failures
        );
    }
    Ok(())
}

fn roles(args: &DataArgs) -> ColumnRoles {
    ColumnRoles {
        y: args.y.clone(),
        u: args.u.clone(),
        x: args.x.clone(),
        z: args.z.clone(),
    }
}

fn write_fit(cli: &Cli, report: &FitReport) -> plsivc::Result<String> {
    match cli.format {
        Format::Json => {
            write_json(&cli.out_dir.join("fit.json"), report)?;
            Ok("fit.json".into())
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(create(&cli.out_dir.join("fit.csv"))?);
            w.write_record(["component", "name", "value"])?;
            for (n, v) in report.names.x.iter().zip(&report.beta) {
                w.write_record(["beta", n, &plsivc::io::fmt_f64(*v)])?;
            }
            for (n, v) in report.names.u.iter().zip(&report.theta) {
                w.write_record(["theta", n, &plsivc::io::fmt_f64(*v)])?;
            }
            for (n, g) in report.names.z.iter().zip(&report.gamma) {
                for (j, v) in g.iter().enumerate() {
                    w.write_record(["gamma", &format!("{n}[{j}]"), &plsivc::io::fmt_f64(*v)])?;
                }
            }
            w.write_record(["rss", "", &plsivc::io::fmt_f64(report.rss)])?;
            w.write_record(["objective", "", &plsivc::io::fmt_f64(report.objective)])?;
            w.flush()?;
            Ok("fit.csv".into())
        }
    }
}

#[derive(Serialize)]
struct FitCommandConfig<'a> {
    roles: &'a ColumnRoles,
    knots: usize,
    lambda: Option<f64>,
    family: PenaltyFamily,
    fit: &'a FitConfig,
}

fn fit(cli: &Cli, args: &FitArgs) -> plsivc::Result<()> {
    let roles = roles(&args.data);
    let data = dataset_from_table(&read_table(&args.data.input)?, &roles)?;
    let config = FitConfig::default().with_knots(args.knots);
    let unpenalized = fit_unpenalized(&data, &config, None)?;
    let result = match args.lambda {
        Some(lambda) if !(lambda >= 0.0) => return Err(usage("λ must be non-negative")),
        Some(lambda) => {
            let spec = adaptive_lambdas(lambda, args.family.penalty(), &unpenalized);
            fit_penalized_from(&data, &config.clone().with_penalty(Some(spec)), &unpenalized)?
        }
        None => unpenalized,
    };
    let report = FitReport::new(&result, &Names::from_roles(&roles));
    let out = write_fit(cli, &report)?;
    let cfg = FitCommandConfig {
        roles: &roles,
        knots: args.knots,
        lambda: args.lambda,
        family: args.family.penalty(),
        fit: &config,
    };
    let mut manifest = RunManifest::new("fit", cli.seed, &cfg)?.with_input(&args.data.input)?;
    manifest.outputs = vec![out];
    manifest.write(&cli.out_dir)?;
    println!("converged={} iterations={} rss={:.6}", report.converged, report.iterations, report.rss);
    Ok(())
}

#[derive(Serialize)]
struct CvCommandConfig<'a> {
    roles: &'a ColumnRoles,
    grid: &'a TuningGrid,
    family: PenaltyFamily,
    fit: &'a FitConfig,
}

fn cv(cli: &Cli, args: &CvArgs) -> plsivc::Result<()> {
    let roles = roles(&args.data);
    let data = dataset_from_table(&read_table(&args.data.input)?, &roles)?;
    let grid = TuningGrid {
        lambdas: match &args.lambdas {
            Some(v) => LambdaGrid::Explicit(v.clone()),
            None => LambdaGrid::Scaled { count: args.lambda_count, lo: 1e-3, hi: 2.0 },
        },
        knots: args.knots.clone().unwrap_or_else(|| default_knot_candidates(data.n())),
        folds: args.folds,
    };
    let config = FitConfig::default();
    let selection = select(&data, &grid, args.family.penalty(), &config, cli.seed)?;
    let grid_file = match cli.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(create(&cli.out_dir.join("cv.csv"))?);
            w.write_record(["knots", "lambda", "score", "error"])?;
            for g in &selection.scores {
                w.write_record([
                    g.knots.to_string(),
                    plsivc::io::fmt_f64(g.lambda),
                    g.score.map(plsivc::io::fmt_f64).unwrap_or_default(),
                    g.error.clone().unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            "cv.csv"
        }
        Format::Json => {
            write_json(&cli.out_dir.join("cv.json"), &selection.scores)?;
            "cv.json"
        }
    };
    let report = FitReport::new(&selection.fit, &Names::from_roles(&roles));
    write_json(&cli.out_dir.join("fit.json"), &report)?;
    let cfg = CvCommandConfig {
        roles: &roles,
        grid: &grid,
        family: args.family.penalty(),
        fit: &config,
    };
    let mut manifest = RunManifest::new("cv", cli.seed, &cfg)?.with_input(&args.data.input)?;
    manifest.outputs = vec![grid_file.into(), "fit.json".into()];
    manifest.write(&cli.out_dir)?;
    println!("K={} lambda={:.6e}", selection.knots, selection.lambda);
    Ok(())
}

#[derive(Serialize)]
struct BodyfatCommandConfig<'a> {
    rules: CleaningRules,
    preprocessing: Preprocessing,
    config: &'a BodyFatConfig,
}

fn bodyfat(cli: &Cli, args: &BodyfatArgs) -> plsivc::Result<()> {
    let rules = CleaningRules {
        siri_tolerance: args.tau,
        ..CleaningRules::default()
    };
    let prep = Preprocessing {
        standardize_x: !args.raw_x,
        standardize_u: !args.raw_u,
    };
    let (data, exclusions) = load_bodyfat(&args.input, &rules, prep)?;
    let mut config = BodyFatConfig::new(data.n(), cli.seed);
    config.family = args.family.penalty();
    config.grid.folds = args.folds;
    config.grid.lambdas = LambdaGrid::Scaled { count: args.lambda_count, lo: 1e-3, hi: 2.0 };
    let report = fit_bodyfat(&data, &config)?;
    let dir = &cli.out_dir;
    fs::write(dir.join("bodyfat.txt"), report.table())?;
    let main = match cli.format {
        Format::Json => {
            write_json(&dir.join("bodyfat.json"), &report)?;
            "bodyfat.json"
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(create(&dir.join("bodyfat.csv"))?);
            w.write_record(["covariate", "estimate"])?;
            for c in &report.coefficients {
                w.write_record([c.name.clone(), plsivc::io::fmt_f64(c.estimate)])?;
            }
            w.write_record(["R2".to_string(), plsivc::io::fmt_f64(report.r_squared)])?;
            w.write_record(["LM_R2".to_string(), plsivc::io::fmt_f64(report.lm_r_squared)])?;
            w.flush()?;
            "bodyfat.csv"
        }
    };
    let mut w = csv::Writer::from_writer(create(&dir.join("exclusions.csv"))?);
    w.write_record(["row", "reason"])?;
    for e in &exclusions.excluded {
        w.write_record([e.row.to_string(), e.reason.clone()])?;
    }
    w.flush()?;
    let cfg = BodyfatCommandConfig {
        rules,
        preprocessing: prep,
        config: &config,
    };
    let mut manifest = RunManifest::new("bodyfat", cli.seed, &cfg)?.with_input(&args.input)?;
    manifest.outputs = vec!["bodyfat.txt".into(), main.into(), "exclusions.csv".into()];
    manifest.write(dir)?;
    println!("retained {} of {} records", exclusions.retained, exclusions.total);
    print!("{}", report.table());
    Ok(())
}

fn plot_data(cli: &Cli, args: &PlotDataArgs) -> plsivc::Result<()> {
    let summary: SimSummary = serde_json::from_str(&fs::read_to_string(&args.campaign)?)?;
    let mut outputs = write_curves(&cli.out_dir, &summary)?;
    write_rase_csv(&cli.out_dir.join("rase.csv"), &summary)?;
    outputs.push("rase.csv".into());
    let mut manifest = RunManifest::new("plot-data", summary.config.seed, &summary.config)?.with_input(&args.campaign)?;
    manifest.outputs = outputs;
    manifest.write(&cli.out_dir)?;
    Ok(())
}

fn run(cli: &Cli) -> plsivc::Result<()> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Cv(a) => cv(cli, a),
        Command::Bodyfat(a) => bodyfat(cli, a),
        Command::PlotData(a) => plot_data(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Usage => ("usage", 1),
                ErrorKind::Data => ("data", 2),
                ErrorKind::Numerical => ("numerical", 3),
            };
            eprintln!("{}", serde_json::json!({ "error": kind, "message": e.to_string() }));
            ExitCode::from(code)
        }
    }
}
