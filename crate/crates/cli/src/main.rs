use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tracing_subscriber::EnvFilter;

use countylens_core::bundle::{write_assignments, AnalysisBundle, BundleError};
use countylens_core::config::RunConfig;
use countylens_core::interpret::{county_gap, FeatureImportance, InterpretError};
use countylens_core::pipeline::{run, run_ingest, run_sweep, write_ingest};
use countylens_core::Error as CoreError;
use countylens_serve::{bind, load_bundle, router, serve, ServeError};

/// County clustering: ingest, reduce, cluster, explain and serve.
#[derive(Debug, Parser)]
#[command(name = "countylens", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output / bundle directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Machine-readable output, and errors as JSON on stderr.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, aggregate and join the datasets; write master.csv.
    Ingest,
    /// Run the full pipeline and write the analysis bundle.
    Cluster {
        /// Final cluster count instead of the elbow recommendation.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Print inertia and silhouette for every k in the configured range.
    Sweep,
    /// Print the most important features of a bundle.
    Importance {
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Space::Features)]
        space: Space,
    },
    /// Print per-cluster feature profiles of a bundle.
    Profile {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write assignments.json into the bundle directory.
    Export,
    /// Serve the bundle over HTTP.
    Serve {
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        /// Static files served under /ui/.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Standardized per-feature differences between two counties.
    Gap {
        a: String,
        b: String,
        #[arg(long)]
        top: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Space {
    /// Standardized input features.
    Features,
    /// The space the model was fitted in.
    Clustered,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data { code: &'static str, error: anyhow::Error },
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data { .. } => 1,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data { code, .. } => code,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Data { error, .. } => format!("{error:#}"),
        }
    }
}

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure::Data {
        code: "data",
        error: error.into(),
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(c) => Failure::Usage(c.to_string()),
            CoreError::Bundle(b) => b.into(),
            other => data(other),
        }
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        let code = match e {
            BundleError::NotFound(_) | BundleError::Incomplete { .. } => "missing_bundle",
            BundleError::UnknownCounty(_) => "unknown_county",
            BundleError::UnknownFeature(_) => "unknown_feature",
            _ => "data",
        };
        Failure::Data {
            code,
            error: e.into(),
        }
    }
}

impl From<ServeError> for Failure {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Bundle(b) => b.into(),
            ServeError::BundleNotFound(_) => Failure::Data {
                code: "missing_bundle",
                error: e.into(),
            },
            ServeError::PortInUse(_) => Failure::Data {
                code: "port_in_use",
                error: e.into(),
            },
            other => data(other),
        }
    }
}

fn report(json: bool, failure: &Failure) {
    let mut err = std::io::stderr().lock();
    if json {
        let body = json!({ "code": failure.code(), "message": failure.message() });
        let _ = writeln!(err, "{body}");
    } else {
        let _ = writeln!(err, "error: {}", failure.message());
    }
}

fn main() -> ExitCode {
    let json_requested = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let failure = Failure::Usage(e.render().to_string().trim_end().to_string());
            if json_requested {
                report(true, &failure);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(failure.exit_code());
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            report(cli.json, &failure);
            ExitCode::from(failure.exit_code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest => ingest(cli),
        Command::Cluster { k } => cluster(cli, *k),
        Command::Sweep => sweep(cli),
        Command::Importance { top, format, space } => importance(cli, *top, *format, *space),
        Command::Profile { format } => profile(cli, *format),
        Command::Export => export(cli),
        Command::Serve { port, host, ui } => serve_bundle(cli, SocketAddr::new(*host, *port), ui),
        Command::Gap { a, b, top } => gap(cli, a, b, *top),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn bundle_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    match (&cli.out, &cli.config) {
        (Some(out), _) => Ok(out.clone()),
        (None, Some(_)) => Ok(load_config(cli)?.output_dir),
        (None, None) => Ok(PathBuf::from("out")),
    }
}

fn load(cli: &Cli) -> Result<AnalysisBundle, Failure> {
    Ok(AnalysisBundle::read(&bundle_dir(cli)?)?)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value).map_err(data)?);
    Ok(())
}

fn ingest(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let output = run_ingest(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(data)?;
    write_ingest(&output, &cfg.output_dir)?;
    let r = &output.report;
    if cli.json {
        return print_json(r);
    }
    println!(
        "ingested {} datasets: {} counties, {} features",
        r.datasets.len(),
        output.master.n_rows(),
        output.master.features().len()
    );
    for d in &r.dropped_columns {
        println!("dropped column {} ({:.1}% missing)", d.name, 100.0 * d.missing_fraction);
    }
    println!("dropped rows: {}", r.row_filter.removed.len());
    println!("duplicate rows removed: {}", r.join.dedup.len());
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn cluster(cli: &Cli, k: Option<usize>) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    if k.is_some() {
        cfg.k = k;
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let bundle = run(&cfg)?;
    bundle.write(&cfg.output_dir)?;
    let summary = bundle.cluster_summary();
    if cli.json {
        return print_json(&summary);
    }
    println!(
        "k = {} (elbow recommends {}), inertia {:.6}, silhouette {}",
        summary.k,
        summary.recommended_k,
        summary.inertia,
        summary
            .silhouette
            .map_or("n/a".to_string(), |s| format!("{s:.4}"))
    );
    for (c, size) in summary.sizes.iter().enumerate() {
        let label = summary.labels[c].as_deref().unwrap_or("unlabeled");
        println!("cluster {c}: {size} counties, {label}");
    }
    for flag in &bundle.report.states.flagged {
        println!(
            "state {} has {:.0}% of its counties in cluster {}",
            flag.state,
            100.0 * flag.fraction,
            flag.cluster
        );
    }
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn sweep(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let report = run_sweep(&cfg)?;
    if cli.json {
        return print_json(&report);
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn importance(cli: &Cli, top: usize, format: Format, space: Space) -> Result<(), Failure> {
    let bundle = load(cli)?;
    let report = &bundle.report;
    let source = match space {
        Space::Features => report.feature_importance(),
        Space::Clustered => &report.importance,
    };
    let listing = FeatureImportance {
        features: source.top_features(top).to_vec(),
        ..source.clone()
    };
    if cli.json || format == Format::Json {
        return print_json(&json!({ "method": report.method, "importance": listing }));
    }
    print!("{}", listing.to_csv());
    Ok(())
}

fn profile(cli: &Cli, format: Format) -> Result<(), Failure> {
    let bundle = load(cli)?;
    let report = &bundle.report;
    if cli.json || format == Format::Json {
        return print_json(&json!({ "profile": report.profile, "labeling": report.labeling }));
    }
    print!("{}", report.profile.to_csv());
    Ok(())
}

fn export(cli: &Cli) -> Result<(), Failure> {
    let dir = bundle_dir(cli)?;
    let bundle = AnalysisBundle::read(&dir)?;
    let path = write_assignments(&bundle, &dir)?;
    if cli.json {
        return print_json(&json!({ "path": path, "counties": bundle.master.n_rows() }));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn serve_bundle(cli: &Cli, addr: SocketAddr, ui: &Option<PathBuf>) -> Result<(), Failure> {
    let bundle = load_bundle(&bundle_dir(cli)?)?;
    let app = router(bundle, ui.as_deref())?;
    let runtime = tokio::runtime::Runtime::new().map_err(data)?;
    runtime.block_on(async {
        let listener = bind(addr).await?;
        let local = listener.local_addr().map_err(ServeError::from)?;
        if cli.json {
            println!("{}", json!({ "addr": local.to_string(), "port": local.port() }));
        } else {
            println!("listening on http://{local}");
        }
        let _ = std::io::stdout().flush();
        serve(listener, app).await
    })?;
    Ok(())
}

fn gap(cli: &Cli, a: &str, b: &str, top: Option<usize>) -> Result<(), Failure> {
    let bundle = load(cli)?;
    let mut result = county_gap(&bundle.master, a, b, &bundle.scaler).map_err(|e| {
        let code = match e {
            InterpretError::UnknownCounty(_) => "unknown_county",
            _ => "data",
        };
        Failure::Data {
            code,
            error: e.into(),
        }
    })?;
    if let Some(n) = top {
        result.features.truncate(n);
    }
    if cli.json {
        return print_json(&result);
    }
    println!("{} vs {}: distance {:.4}", result.fips_a, result.fips_b, result.total_distance);
    println!("feature,gap,{},{}", result.fips_a, result.fips_b);
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for f in &result.features {
        println!("{},{:.6},{},{}", f.feature, f.gap, cell(f.raw_a), cell(f.raw_b));
    }
    Ok(())
}
