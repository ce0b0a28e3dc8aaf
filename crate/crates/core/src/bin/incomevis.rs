use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use incomevis_core::agestd::AgeMode;
use incomevis_core::deflate;
use incomevis_core::error::{Error, Result};
use incomevis_core::ingest::{self, SynthConfig, SynthTruth};
use incomevis_core::layout::{BenchmarkMode, BootstrapMeta};
use incomevis_core::metrics::{gini, GiniMethod, GiniOptions};
use incomevis_core::model::{SubpopulationFilter, Variant, YearRange};
use incomevis_core::pipeline::{self, RunConfig};
use incomevis_core::segment::BucketScheme;

#[derive(Parser)]
#[command(name = "incomevis", version, about = "State income-distribution keyframes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic microdata extract and price tables.
    Synth(SynthArgs),
    /// Fit the parity backcast and write the deflator set.
    Backcast(BackcastArgs),
    /// Run the full pipeline and write keyframe bundles.
    Pipeline(PipelineArgs),
    /// Run the pipeline again from a `run_config.json` echo.
    Rerun(RerunArgs),
    /// Gini coefficients of a CSV column, grouped.
    Gini(GiniArgs),
    /// Serve an output directory over HTTP for the explorer.
    ServeData(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::DEMO_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    states: usize,
    #[arg(long, default_value_t = YearRange::default())]
    years: YearRange,
    /// Households per state-year at the default scale; state sizes scale with it.
    #[arg(long, default_value_t = SynthConfig::DEFAULT_HOUSEHOLDS)]
    households: usize,
    /// Standard deviation of the parity recursion noise.
    #[arg(long, default_value_t = 0.0)]
    rpp_noise: f64,
}

#[derive(Args)]
struct BackcastArgs {
    /// Data directory or extract spec file.
    #[arg(long, env = "INCOMEVIS_DATA_DIR")]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    years: Option<YearRange>,
    /// Generating truth from `synth`, to report recovery error.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Data directory or extract spec file.
    #[arg(long, env = "INCOMEVIS_DATA_DIR")]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Precomputed deflators from `backcast`.
    #[arg(long)]
    deflators: Option<PathBuf>,
    #[arg(long)]
    years: Option<YearRange>,
    /// Repeatable; all four by default.
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    /// Repeatable; all named filters by default.
    #[arg(long = "filter")]
    filters: Vec<String>,
    #[arg(long, default_value_t = BucketScheme::default())]
    scheme: BucketScheme,
    #[arg(long, default_value_t = BenchmarkMode::default())]
    benchmark: BenchmarkMode,
    #[arg(long, default_value_t = deflate::REFERENCE_YEAR)]
    reference_year: i32,
    #[arg(long, default_value_t = AgeMode::default())]
    age_mode: AgeMode,
    #[arg(long)]
    age_seed: Option<u64>,
    /// Bootstrap replicates for block standard errors.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, requires = "bootstrap")]
    bootstrap_seed: Option<u64>,
    /// Restrict parity variants to years with observed parity.
    #[arg(long)]
    no_backcast: bool,
    /// Also write full-precision bundles under `full/`.
    #[arg(long)]
    full_precision: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct GiniArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "income")]
    value: String,
    #[arg(long)]
    weight: Option<String>,
    /// Comma-separated grouping columns; empty for one overall row.
    #[arg(long, default_value = "state,year")]
    by: String,
    #[arg(long, default_value_t = GiniMethod::default())]
    method: GiniMethod,
    #[arg(long)]
    allow_negative: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "INCOMEVIS_DATA_DIR")]
    dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8000)]
    port: u16,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Backcast(a) => backcast(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Rerun(a) => rerun(a),
        Command::Gini(a) => gini_table(a),
        Command::ServeData(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut config = SynthConfig::demo(a.seed, a.states, a.years, a.households);
    config.rpp_model.noise_sd = a.rpp_noise;
    let dataset = ingest::generate_synthetic(&config)?;
    ingest::write_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} households for {} states, {} to {}",
        dataset.records.len(),
        config.states.len(),
        config.years,
        a.out.display()
    );
    Ok(())
}

fn backcast(a: BackcastArgs) -> Result<()> {
    let mut spec = pipeline::resolve_spec(&a.data)?;
    if let Some(years) = a.years {
        spec.years = years;
    }
    let prices = ingest::load_price_tables(&spec)?;
    let deflators = deflate::build_deflators(&prices, spec.years, true)?;
    let model = deflators.model.as_ref().expect("backcast fits a model");
    let truth = match &a.truth {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(serde_json::from_str::<SynthTruth>(&text)?)
        }
        None => None,
    };
    let report = pipeline::backcast_report(model, &deflators, truth.as_ref());

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write(&a.out.join(pipeline::DEFLATORS_FILE), &deflators.to_json()?)?;
    write(
        &a.out.join("backcast_report.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    let mut fe = String::from("state,fixed_effect\n");
    for (state, v) in &model.fixed_effects {
        fe.push_str(&format!("{state},{v}\n"));
    }
    write(&a.out.join("fixed_effects.csv"), &fe)?;

    let d = &model.diagnostics;
    println!("parity backcast: {} rows, {} parameters", d.n, d.parameters);
    println!("  alpha          {:>12.6}", model.alpha);
    println!("  rent           {:>12.6}", model.beta_rent);
    println!("  rent (t+1)     {:>12.6}", model.beta_rent_lead);
    println!("  parity (t+1)   {:>12.6}", model.beta_rpp_lead);
    println!("  R^2            {:>12.6}", d.r_squared);
    println!("  residual sd    {:>12.6}", d.residual_sd);
    println!("  reference      {:>12}", model.reference_state);
    for (state, v) in &model.fixed_effects {
        println!("  fe {state}          {v:>12.6}");
    }
    if let Some(r) = &report.recovery {
        println!("recovery error: alpha {:.3e}, betas {:.3e} {:.3e} {:.3e}, fe {:.3e}, parity {:.3e}",
            r.alpha, r.beta_rent, r.beta_rent_lead, r.beta_rpp_lead, r.max_fixed_effect, r.max_parity);
    }
    println!(
        "{} observed and {} backcast cells written to {}",
        report.observed_cells,
        report.backcast_cells,
        a.out.join(pipeline::DEFLATORS_FILE).display()
    );
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> Result<()> {
    let mut config = RunConfig::new(&a.data, &a.out);
    config.deflators = a.deflators;
    config.years = a.years;
    if !a.variants.is_empty() {
        config.variants = a.variants;
    }
    if !a.filters.is_empty() {
        for name in &a.filters {
            if SubpopulationFilter::by_name(name).is_none() {
                let known: Vec<&str> = SubpopulationFilter::named().iter().map(|f| f.0).collect();
                return Err(Error::Usage(format!(
                    "unknown filter `{name}`; expected one of {}",
                    known.join(", ")
                )));
            }
        }
        config.filters = a.filters;
    }
    config.scheme = a.scheme;
    config.benchmark = a.benchmark;
    config.reference_year = a.reference_year;
    config.age_mode = a.age_mode;
    config.age_seed = a.age_seed;
    config.bootstrap = match (a.bootstrap, a.bootstrap_seed) {
        (None, _) => None,
        (Some(_), None) => return Err(Error::MissingSeed),
        (Some(replicates), Some(seed)) => Some(BootstrapMeta { replicates, seed }),
    };
    config.backcast = !a.no_backcast;
    config.full_precision = a.full_precision;
    config.jobs = a.jobs;
    execute(&config)
}

fn rerun(a: RerunArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let mut config = RunConfig::from_json(&text)?;
    config.jobs = a.jobs;
    execute(&config)
}

fn execute(config: &RunConfig) -> Result<()> {
    let summary = pipeline::run(config)?;
    println!(
        "{} rows read, {} accepted; {} bundles for {} written to {}",
        summary.ingest.rows,
        summary.ingest.accepted,
        summary.manifest.bundles.len(),
        summary.years,
        config.output.display()
    );
    Ok(())
}

fn gini_table(a: GiniArgs) -> Result<()> {
    let path = &a.input;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.clone(),
                column: name.to_string(),
            })
    };
    let value = index(&a.value)?;
    let weight = a.weight.as_deref().map(index).transpose()?;
    let by: Vec<&str> = a.by.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let keys = by.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<Vec<String>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let parse = |i: usize, what: &str| -> Result<f64> {
            let field = row.get(i).unwrap_or("");
            field.trim().parse().map_err(|_| {
                Error::Spec(format!(
                    "{}: row {}: {what} `{field}` is not a number",
                    path.display(),
                    line + 2
                ))
            })
        };
        let key: Vec<String> = keys.iter().map(|&i| row.get(i).unwrap_or("").to_string()).collect();
        let x = parse(value, &a.value)?;
        let w = weight.map(|i| parse(i, "weight")).transpose()?.unwrap_or(1.0);
        let entry = groups.entry(key).or_default();
        entry.0.push(x);
        entry.1.push(w);
    }

    let options = GiniOptions {
        allow_negative: a.allow_negative,
    };
    let mut out = std::io::stdout().lock();
    let header: Vec<&str> = by.iter().copied().chain(["gini", "n"]).collect();
    writeln!(out, "{}", header.join("\t")).ok();
    for (key, (x, w)) in &groups {
        let r = gini(x, weight.map(|_| w.as_slice()), a.method, options)?;
        let mut cells = key.clone();
        cells.push(format!("{:.6}", r.g));
        cells.push(r.n.to_string());
        writeln!(out, "{}", cells.join("\t")).ok();
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn serve(a: ServeArgs) -> Result<()> {
    let root = fs::canonicalize(&a.dir).map_err(|e| Error::io(&a.dir, e))?;
    let addr = format!("{}:{}", a.host, a.port);
    let listener = TcpListener::bind(&addr).map_err(|e| Error::io(Path::new(&addr), e))?;
    println!("serving {} on http://{addr}/", root.display());
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                if let Err(e) = respond(&root, s) {
                    log::warn!("request failed: {e}");
                }
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

/// Maps a request path to a file under `root`, refusing anything that could
/// escape it.
fn resolve(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next()?.trim_start_matches('/');
    let path = if path.is_empty() { "manifest.json" } else { path };
    let rel = Path::new(path);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let full = root.join(rel);
    full.is_file().then_some(full)
}

fn respond(root: &Path, mut stream: TcpStream) -> std::io::Result<()> {
    let mut line = String::new();
    BufReader::new(&stream).read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("");
    let target = parts.next().unwrap_or("/");
    let (status, body, kind) = if method != "GET" {
        ("405 Method Not Allowed", b"method not allowed\n".to_vec(), "text/plain")
    } else {
        match resolve(root, target) {
            Some(path) => {
                let kind = match path.extension().and_then(|e| e.to_str()) {
                    Some("json") => "application/json",
                    Some("csv") => "text/csv",
                    Some("html") => "text/html",
                    Some("js") => "text/javascript",
                    _ => "application/octet-stream",
                };
                ("200 OK", fs::read(path)?, kind)
            }
            None => ("404 Not Found", b"not found\n".to_vec(), "text/plain"),
        }
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {kind}\r\nContent-Length: {}\r\nAccess-Control-Allow-Origin: *\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(&body)?;
    stream.flush()
}
