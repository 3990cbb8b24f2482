use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pwl_core::asymptotics::{correction_profile, delta_quadrature, scale_guard, QuadratureConfig};
use pwl_core::exact::{evolve_free, evolve_perturbed};
use pwl_core::kernels::moments;
use pwl_core::montecarlo::{drift_estimate, sample};
use pwl_core::verify::{run_suite, SuiteConfig};
use pwl_core::{validate, BoxPolicy, ValidatedSpec, WalkSpec};
use serde_json::json;

/// Exact and asymptotic analysis of lattice walks perturbed at the origin.
#[derive(Parser)]
#[command(name = "pwl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a kernel file and print its moments.
    Validate {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Exact values and every correction form over a box of sites.
    Profile(ProfileArgs),
    /// Remainder `n^{nu/2} |exact - quadrature|` along a ladder of n.
    Sweep(ProfileArgs),
    /// Run the verification suite.
    Verify {
        /// Exact checks with n <= 64 and one Monte Carlo run only.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 20240611)]
        seed: u64,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the endpoint distribution.
    Sample {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    kernel: PathBuf,
    /// Number of steps; `sweep` takes a comma-separated ladder.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, allow_hyphen_values = true)]
    x_min: i64,
    #[arg(long, allow_hyphen_values = true)]
    x_max: i64,
    /// Fixed box radius for the exact fields (must cover n steps).
    #[arg(long)]
    radius: Option<usize>,
    #[command(flatten)]
    quad: QuadArgs,
    /// Allow sites beyond sqrt(n) ln n.
    #[arg(long)]
    unsafe_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct QuadArgs {
    #[arg(long, default_value_t = 1e-12)]
    tol_abs: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol_rel: f64,
}

impl QuadArgs {
    fn config(&self) -> Result<QuadratureConfig, Failure> {
        QuadratureConfig::new(self.tol_abs, self.tol_rel, QuadratureConfig::default().max_subdivisions)
            .map_err(|e| Failure::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Exit code 1: validation or verification failure; exit code 2: I/O or configuration.
enum Failure {
    Check(String),
    Config(String),
}

impl From<pwl_core::Error> for Failure {
    fn from(e: pwl_core::Error) -> Self {
        Failure::Check(format!("{}: {e}", e.name()))
    }
}

fn load(path: &Path) -> Result<ValidatedSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(validate(WalkSpec::from_json(&text)?)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_scale(spec: &ValidatedSpec, n: usize, lo: i64, hi: i64, unsafe_scale: bool) -> Result<(), Failure> {
    let reach = lo.abs().max(hi.abs()) as f64 * (spec.dim() as f64).sqrt();
    if reach > scale_guard(n) {
        let msg = format!("sites reach |x| = {reach:.1}, beyond sqrt(n) ln n = {:.1} for n = {n}", scale_guard(n));
        if !unsafe_scale {
            return Err(Failure::Config(format!("{msg}; pass --unsafe-scale to proceed")));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

fn policy(radius: Option<usize>) -> BoxPolicy {
    radius.map_or(BoxPolicy::Exact, BoxPolicy::Strict)
}

fn cmd_validate(path: &Path, format: Format) -> Result<(), Failure> {
    let spec = load(path)?;
    let periodic = spec.is_periodic();
    let m = moments(&spec)?;
    let b: Vec<Vec<f64>> = m.covariance().row_iter().map(|r| r.iter().copied().collect()).collect();
    let d: Vec<f64> = m.drift().iter().copied().collect();
    match format {
        Format::Json => {
            let report = json!({
                "valid": true,
                "dim": spec.dim(),
                "free_support": spec.free().iter().count(),
                "a_support": spec.anti().iter().count(),
                "s_support": spec.sym().iter().count(),
                "epsilon": spec.epsilon(),
                "B": b,
                "d": d,
                "periodic": periodic,
                "kernel": spec.hash_hex(),
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Format::Csv => {
            let mut s = String::new();
            writeln!(s, "valid kernel {}", spec.hash_hex()).unwrap();
            writeln!(s, "dim = {}", spec.dim()).unwrap();
            writeln!(
                s,
                "support sizes: P {}, a {}, s {} (epsilon = {})",
                spec.free().iter().count(),
                spec.anti().iter().count(),
                spec.sym().iter().count(),
                spec.epsilon()
            )
            .unwrap();
            writeln!(s, "B = {b:?}").unwrap();
            writeln!(s, "d = {d:?}").unwrap();
            writeln!(s, "P symmetric, a antisymmetric, s symmetric: ok").unwrap();
            if periodic {
                writeln!(s, "warning: free kernel is periodic; asymptotic commands will refuse it").unwrap();
            }
            print!("{s}");
        }
    }
    Ok(())
}

fn cmd_profile(args: &ProfileArgs) -> Result<(), Failure> {
    let spec = load(&args.kernel)?;
    let [n] = args.n[..] else {
        return Err(Failure::Config("profile takes a single --n".into()));
    };
    check_scale(&spec, n, args.x_min, args.x_max, args.unsafe_scale)?;
    let cfg = args.quad.config()?;
    let profile = correction_profile(&spec, n, args.x_min, args.x_max, policy(args.radius), &cfg)?;
    let text = match args.format {
        Format::Csv => profile.to_csv(),
        Format::Json => serde_json::to_string_pretty(&profile).expect("serializable") + "\n",
    };
    emit(&args.out, &text)
}

fn cmd_sweep(args: &ProfileArgs) -> Result<(), Failure> {
    let spec = load(&args.kernel)?;
    spec.require_aperiodic()?;
    let smallest = *args.n.iter().min().expect("clap requires --n");
    if smallest == 0 {
        return Err(Failure::Config("n must be at least 1".into()));
    }
    check_scale(&spec, smallest, args.x_min, args.x_max, args.unsafe_scale)?;
    let cfg = args.quad.config()?;
    let m = moments(&spec)?;
    let dim = spec.dim();
    let sites = pwl_core::asymptotics::box_sites(dim, args.x_min, args.x_max);
    let mut rows = Vec::new();
    for &n in &args.n {
        let corr = evolve_perturbed(&spec, n, policy(args.radius))?.minus(&evolve_free(&spec, n, policy(args.radius))?);
        let scale = (n as f64).powf(dim as f64 / 2.0);
        for x in &sites {
            let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
            let q = delta_quadrature(&m, n, &xf, &cfg)?;
            let e = corr.get(x);
            rows.push((n, x.clone(), e, q, scale * (e - q).abs()));
        }
    }
    let text = match args.format {
        Format::Csv => {
            let mut s = String::new();
            writeln!(s, "# dim={dim}").unwrap();
            writeln!(s, "# kernel={}", spec.hash_hex()).unwrap();
            let cols: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
            writeln!(s, "n,{},exact_correction,delta_quadrature,scaled_remainder", cols.join(",")).unwrap();
            for (n, x, e, q, r) in &rows {
                let xs: Vec<String> = x.iter().map(|c| c.to_string()).collect();
                writeln!(s, "{n},{},{e:e},{q:e},{r:e}", xs.join(",")).unwrap();
            }
            s
        }
        Format::Json => {
            let rows: Vec<_> = rows
                .iter()
                .map(|(n, x, e, q, r)| {
                    json!({"n": n, "x": x, "exact_correction": e, "delta_quadrature": q, "scaled_remainder": r})
                })
                .collect();
            serde_json::to_string_pretty(&json!({"dim": dim, "kernel": spec.hash_hex(), "rows": rows})).unwrap() + "\n"
        }
    };
    emit(&args.out, &text)
}

fn cmd_verify(quick: bool, seed: u64, quad: &QuadArgs, out: &Option<PathBuf>) -> Result<(), Failure> {
    let cfg = SuiteConfig { quick, quadrature: quad.config()?, seed };
    let report = run_suite(&cfg);
    for c in &report.checks {
        eprintln!("{}", c.line());
    }
    emit(out, &(serde_json::to_string_pretty(&report).expect("serializable") + "\n"))?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_sample(path: &Path, n: usize, samples: u64, seed: u64, out: &Option<PathBuf>, format: Format) -> Result<(), Failure> {
    let spec = load(path)?;
    let field = sample(&spec, n, samples, seed)?;
    let text = match format {
        Format::Csv => field.to_csv(&spec.hash_hex()),
        Format::Json => {
            let sites: Vec<_> = field
                .counts
                .iter()
                .map(|(x, c)| {
                    json!({"x": x, "count": c, "value": field.estimate(x.coords()), "stderr": field.stderr(x.coords())})
                })
                .collect();
            let report = json!({
                "dim": field.dim, "n": n, "samples": samples, "seed": seed,
                "kernel": spec.hash_hex(), "drift": drift_estimate(&field), "sites": sites,
            });
            serde_json::to_string_pretty(&report).unwrap() + "\n"
        }
    };
    emit(out, &text)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("PWL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Config(format!("PWL_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Validate { kernel, format } => cmd_validate(kernel, *format),
        Command::Profile(args) => cmd_profile(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify { quick, seed, quad, out } => cmd_verify(*quick, *seed, quad, out),
        Command::Sample { kernel, n, samples, seed, out, format } => {
            cmd_sample(kernel, *n, *samples, *seed, out, *format)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
