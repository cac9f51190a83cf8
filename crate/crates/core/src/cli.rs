//! Command-line front end.
//!
//! Every subcommand resolves its options from three layers: built-in
//! defaults, an optional `--config` TOML file whose keys are the long flag
//! names, and the flags themselves (flags win). The resolved options are
//! written to `run_config.toml` in the output directory, and feeding that
//! file back through `--config` reproduces the run.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 explosion,
//! 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use num_complex::Complex64 as C;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Params, StateX, StateY};
use crate::ergodic::{compare_measures, occupation_measure, OccupationHistogram, Window};
use crate::fokker_planck::{self as fp, DensityField, PdeGrid, SolverKind};
use crate::girsanov::{self, GirsanovReport, TestFunction, ThetaSpec};
use crate::integrate::{self, InitialState, IntegratorConfig, Method, NoiseConfig, Verdict};
use crate::rng::RngStream;
use crate::sweep::{self, Axis, GridSpec};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_EXPLODED: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "blowuplab", version, about = "Blow-up, noise stabilization and invariant measures of a complex quadratic system")]
pub struct Cli {
    /// Worker threads for batch commands.
    #[arg(long, global = true, env = "BLOWUPLAB_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and report whether it explodes.
    Simulate(SimulateOpts),
    /// Classify a 2-D grid of initial conditions.
    Sweep(SweepOpts),
    /// Monte Carlo checks of the change of measure.
    Girsanov(GirsanovOpts),
    /// Occupation histogram of one long complex trajectory.
    Invariant(InvariantOpts),
    /// Solve the stationary Fokker-Planck equation on the disk.
    Fpe(FpeOpts),
    /// Distance between a density dump and a histogram dump.
    Compare(CompareOpts),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelOpts {
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StepOpts {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Norm at which a trajectory counts as exploded.
    #[arg(long)]
    pub radius: Option<f64>,
    /// euler, rk4 or exact-flow.
    #[arg(long)]
    pub method: Option<String>,
    /// Record every k-th step.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NoiseOpts {
    /// none, main-sde, im-z or general.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Eight numbers, the 4x2 y-frame matrix row by row (noise = general).
    #[arg(long, allow_hyphen_values = true)]
    pub sigma_matrix: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub step: StepOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub noise: NoiseOpts,
    /// Initial state in y-coordinates, `y1,y2,y3,y4`.
    #[arg(long, allow_hyphen_values = true)]
    pub y0: Option<String>,
    /// Initial state in x-coordinates, `x1,x2,x3,x4`.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub step: StepOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub noise: NoiseOpts,
    /// Two fixed coordinates, e.g. `y3=0.5,y4=0`.
    #[arg(long, allow_hyphen_values = true)]
    pub fixed: Option<String>,
    /// Varying coordinate `name=min:max:step`; give it twice.
    #[arg(long, allow_hyphen_values = true)]
    pub vary: Option<Vec<String>>,
    /// Replicates per cell when noise is on.
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GirsanovOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelOpts,
    /// Horizon.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// `re,im`
    #[arg(long, allow_hyphen_values = true)]
    pub z0: Option<String>,
    /// `re,im`
    #[arg(long, allow_hyphen_values = true)]
    pub w0: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated test functions: gaussian, arctan-re.
    #[arg(long)]
    pub f: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InvariantOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelOpts,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Bins per axis.
    #[arg(long)]
    pub bins: Option<usize>,
    /// `y1_min,y1_max,y3_min,y3_max`
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
    /// `re,im`
    #[arg(long, allow_hyphen_values = true)]
    pub z0: Option<String>,
    /// Forcing amplitude `re,im`; `0,0` gives the autonomous equation.
    #[arg(long, allow_hyphen_values = true)]
    pub w0: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FpeOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelOpts,
    /// Nodes per axis.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long)]
    pub sigma3: Option<f64>,
    #[arg(long)]
    pub boundary_value: Option<f64>,
    #[arg(long)]
    pub half_width: Option<f64>,
    #[arg(long)]
    pub disk_radius: Option<f64>,
    /// auto, direct or iterative.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub normalize: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CompareOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Density CSV written by `fpe`.
    #[arg(long)]
    pub fpe: Option<PathBuf>,
    /// Histogram CSV written by `invariant`.
    #[arg(long)]
    pub hist: Option<PathBuf>,
    /// `y1_min,y1_max,y3_min,y3_max`
    #[arg(long, allow_hyphen_values = true)]
    pub region: Option<String>,
}

const MODEL_DEFAULTS: &str = "nu = 1.0\nalpha = 1.0\nbeta = 1.0\n";
const SIMULATE_DEFAULTS: &str = "dt = 1e-3\nt-max = 20.0\nradius = 1e6\nmethod = \"euler\"\nstride = 1\nnoise = \"none\"\nsigma = 1.0\nseed = 0\n";
const SWEEP_DEFAULTS: &str = "dt = 1e-3\nt-max = 20.0\nradius = 1e6\nmethod = \"euler\"\nstride = 1\nnoise = \"none\"\nsigma = 1.0\nseed = 0\nreps = 100\n";
const GIRSANOV_DEFAULTS: &str =
    "t = 2.0\npaths = 10000\nz0 = \"0,0\"\nw0 = \"1,0\"\nsigma = 1.0\ndt = 1e-3\nmethod = \"euler\"\nseed = 0\nf = \"gaussian,arctan-re\"\n";
const INVARIANT_DEFAULTS: &str = "horizon = 10000.0\nburn-in = 1000.0\nbins = 40\nwindow = \"-4,4,-4,4\"\nz0 = \"0,0\"\nw0 = \"0,0\"\nsigma = 1.0\ndt = 1e-3\nmethod = \"exact-flow\"\nstride = 100\nseed = 0\n";
const FPE_DEFAULTS: &str = "n = 257\nsigma1 = 1.0\nsigma3 = 1.0\nboundary-value = 0.1\nhalf-width = 4.0\ndisk-radius = 4.0\nsolver = \"auto\"\nnormalize = true\n";
const COMPARE_DEFAULTS: &str = "region = \"-3,3,-3,3\"\n";

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Exploded { .. } => EXIT_EXPLODED,
        Error::Numerical(_) | Error::Solver { .. } | Error::NonFiniteState { .. } => EXIT_NUMERICAL,
        Error::InvalidParams(_) | Error::Config(_) | Error::Parse(_) | Error::Geometry(_) | Error::Io { .. } => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        // Ignored if a pool already exists (repeated calls in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate(o) => cmd_simulate(o),
        Command::Sweep(o) => cmd_sweep(o),
        Command::Girsanov(o) => cmd_girsanov(o),
        Command::Invariant(o) => cmd_invariant(o),
        Command::Fpe(o) => cmd_fpe(o),
        Command::Compare(o) => cmd_compare(o),
    }
}

/// Long flag names accepted by a subcommand, which are also its config keys.
fn known_keys<T: Args>() -> Vec<String> {
    T::augment_args(clap::Command::new("keys"))
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_owned))
        .filter(|k| k != "config" && k != "out")
        .collect()
}

/// Layers `defaults < config file < flags` and deserializes the result.
fn resolve<T>(flags: &T, config: Option<&Path>, defaults: &[&str]) -> Result<T>
where
    T: Args + Serialize + DeserializeOwned,
{
    let mut table = toml::Table::new();
    for d in defaults {
        table.extend(toml::from_str::<toml::Table>(d).expect("built-in defaults parse"));
    }
    if let Some(path) = config {
        let text = crate::io::read_text(path)?;
        let file: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let known = known_keys::<T>();
        if let Some(bad) = file.keys().find(|k| !known.contains(k)) {
            return Err(Error::Config(format!("{}: unknown key '{bad}'", path.display())));
        }
        table.extend(file);
    }
    let given = toml::Table::try_from(flags).map_err(|e| Error::Config(e.to_string()))?;
    table.extend(given);
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn persist<T: Serialize>(dir: &Path, resolved: &T) -> Result<()> {
    let text = toml::to_string(resolved).map_err(|e| Error::Config(e.to_string()))?;
    crate::io::write_text(dir.join("run_config.toml"), &text)
}

fn req<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing --{name}")))
}

fn parse_list(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number in {what} '{s}'"))))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(Error::Parse(format!("{what} needs {n} numbers, got '{s}'")));
    }
    Ok(v)
}

fn parse_complex(s: &str, what: &str) -> Result<C> {
    let v = parse_list(s, 2, what)?;
    Ok(C::new(v[0], v[1]))
}

fn model(o: &ModelOpts) -> Result<Params> {
    Params::new(req(&o.nu, "nu")?, req(&o.alpha, "alpha")?, req(&o.beta, "beta")?)
}

fn method(s: &Option<String>) -> Result<Method> {
    req(s, "method")?.parse()
}

fn integrator(o: &StepOpts) -> Result<IntegratorConfig> {
    let cfg = IntegratorConfig {
        dt: req(&o.dt, "dt")?,
        t_max: req(&o.t_max, "t-max")?,
        blowup_radius: req(&o.radius, "radius")?,
        method: method(&o.method)?,
        record_stride: req(&o.stride, "stride")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn noise(o: &NoiseOpts) -> Result<NoiseConfig> {
    let n = match req(&o.noise, "noise")?.as_str() {
        "none" => NoiseConfig::None,
        "main-sde" => NoiseConfig::MainSde { sigma: req(&o.sigma, "sigma")? },
        "im-z" => NoiseConfig::ImZ,
        "general" => {
            let v = parse_list(&req(&o.sigma_matrix, "sigma-matrix")?, 8, "sigma-matrix")?;
            let mut m = [[0.0; 2]; 4];
            for (k, x) in v.into_iter().enumerate() {
                m[k / 2][k % 2] = x;
            }
            NoiseConfig::General { sigma_matrix: m }
        }
        other => return Err(Error::Parse(format!("unknown noise '{other}' (none, main-sde, im-z, general)"))),
    };
    n.validate()?;
    Ok(n)
}

fn out_dir(o: &Option<PathBuf>, name: &str) -> PathBuf {
    o.clone().unwrap_or_else(|| PathBuf::from("out").join(name))
}

fn cmd_simulate(flags: SimulateOpts) -> Result<i32> {
    let o = resolve(&flags, flags.config.as_deref(), &[MODEL_DEFAULTS, SIMULATE_DEFAULTS])?;
    let dir = out_dir(&flags.out, "simulate");
    let p = model(&o.model)?;
    let cfg = integrator(&o.step)?;
    let nz = noise(&o.noise)?;
    let x0: InitialState = match (&o.y0, &o.x0) {
        (Some(y), None) => StateY::from_array(parse_list(y, 4, "y0")?.try_into().unwrap())?.into(),
        (None, Some(x)) => StateX::from_array(parse_list(x, 4, "x0")?.try_into().unwrap())?.into(),
        _ => return Err(Error::Config("give exactly one of --y0 and --x0".into())),
    };
    let seed = req(&o.noise.seed, "seed")?;
    persist(&dir, &o)?;
    let tr = if nz.is_none() {
        integrate::integrate_ode(x0, &p, &cfg)?
    } else {
        integrate::integrate_sde(x0, &p, &cfg, &nz, RngStream::new(seed, 0))?
    };
    tr.write_csv(dir.join("trajectory.csv"))?;
    crate::io::write_json(dir.join("verdict.json"), &tr.verdict)?;
    match tr.verdict {
        Verdict::Survived => {
            println!("survived to t={}", cfg.t_max);
            Ok(EXIT_OK)
        }
        Verdict::Exploded { time } => {
            println!("exploded at t={time}");
            Ok(EXIT_EXPLODED)
        }
    }
}

fn cmd_sweep(flags: SweepOpts) -> Result<i32> {
    let o = resolve(&flags, flags.config.as_deref(), &[MODEL_DEFAULTS, SWEEP_DEFAULTS])?;
    let dir = out_dir(&flags.out, "sweep");
    let p = model(&o.model)?;
    let cfg = integrator(&o.step)?;
    let nz = noise(&o.noise)?;
    let (frame, fixed) = GridSpec::parse_fixed(&req(&o.fixed, "fixed")?)?;
    let vary = req(&o.vary, "vary")?;
    if vary.len() != 2 {
        return Err(Error::Config(format!("--vary must be given twice, got {}", vary.len())));
    }
    let mut axes: Vec<Axis> = Vec::new();
    for v in &vary {
        let (f, a) = GridSpec::parse_axis(v)?;
        if f != frame {
            return Err(Error::Config("fixed and varying coordinates must use the same frame".into()));
        }
        axes.push(a);
    }
    let g = GridSpec::new(frame, fixed, [axes[0], axes[1]])?;
    persist(&dir, &o)?;
    let sr = if nz.is_none() {
        sweep::sweep_ode(&g, &p, &cfg)?
    } else {
        sweep::sweep_sde(&g, &p, &cfg, &nz, req(&o.reps, "reps")?, req(&o.noise.seed, "seed")?)?
    };
    sr.write_outputs(&dir)?;
    let (n1, n2) = g.dims();
    println!("{n1}x{n2} cells, {} with explosions, min survival {}", sr.explosions(), sr.min_survival());
    Ok(EXIT_OK)
}

fn cmd_girsanov(flags: GirsanovOpts) -> Result<i32> {
    let o = resolve(&flags, flags.config.as_deref(), &[MODEL_DEFAULTS, GIRSANOV_DEFAULTS])?;
    let dir = out_dir(&flags.out, "girsanov");
    let p = model(&o.model)?;
    let (t, paths, sigma, dt, seed) = (req(&o.t, "t")?, req(&o.paths, "paths")?, req(&o.sigma, "sigma")?, req(&o.dt, "dt")?, req(&o.seed, "seed")?);
    let z0 = parse_complex(&req(&o.z0, "z0")?, "z0")?;
    let w0 = parse_complex(&req(&o.w0, "w0")?, "w0")?;
    let fs: Vec<TestFunction> = req(&o.f, "f")?.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
    let cfg = IntegratorConfig { dt, t_max: t, method: method(&o.method)?, ..Default::default() };
    cfg.validate()?;
    persist(&dir, &o)?;
    let spec = ThetaSpec::from_params(&p, w0, sigma)?;
    let moments = girsanov::check_moments_with(&spec, t, dt, paths, seed)?;
    println!(
        "E[M]={:.6} (se {:.2e}) pass={}  E[M^2]={:.6} vs {:.6} (se {:.2e}) pass={}",
        moments.mean_m.value, moments.mean_m.se, moments.pass_mean_m, moments.mean_m2.value, moments.closed_form_m2, moments.mean_m2.se, moments.pass_mean_m2
    );
    let mut equivalence = Vec::new();
    for f in fs {
        let r = girsanov::law_equivalence(z0, w0, &p, sigma, t, f, paths, seed, &cfg)?;
        println!(
            "{f:?}: weighted {:.6} vs autonomous {:.6} pass={}  unweighted {:.6} separated={}",
            r.lhs.value, r.rhs.value, r.pass, r.unweighted.value, r.control_separated
        );
        equivalence.push(r);
    }
    let report = GirsanovReport { spec, theta_l2_infinity: girsanov::theta_l2(&spec, f64::INFINITY), moments, equivalence };
    report.write_json(dir.join("girsanov.json"))?;
    Ok(EXIT_OK)
}

fn cmd_invariant(flags: InvariantOpts) -> Result<i32> {
    let o = resolve(&flags, flags.config.as_deref(), &[MODEL_DEFAULTS, INVARIANT_DEFAULTS])?;
    let dir = out_dir(&flags.out, "invariant");
    let p = model(&o.model)?;
    let bins = req(&o.bins, "bins")?;
    let window = Window::parse(&req(&o.window, "window")?)?;
    let z0 = parse_complex(&req(&o.z0, "z0")?, "z0")?;
    let w0 = parse_complex(&req(&o.w0, "w0")?, "w0")?;
    let (sigma, seed, burn_in) = (req(&o.sigma, "sigma")?, req(&o.seed, "seed")?, req(&o.burn_in, "burn-in")?);
    let cfg = IntegratorConfig {
        dt: req(&o.dt, "dt")?,
        t_max: req(&o.horizon, "horizon")?,
        method: method(&o.method)?,
        record_stride: req(&o.stride, "stride")?,
        ..Default::default()
    };
    cfg.validate()?;
    persist(&dir, &o)?;
    let tr = integrate::integrate_ztilde(z0, w0, &p, sigma, &cfg, RngStream::new(seed, 0))?;
    let h = occupation_measure(&tr, window, (bins, bins), burn_in)?;
    h.write_outputs(&dir, serde_json::json!({ "params": p, "sigma": sigma, "z0": z0, "w0": w0, "seed": seed, "burn_in": burn_in }))?;
    println!("histogram {bins}x{bins} over {window:?}, outside mass {:.4}", h.outside_mass);
    Ok(EXIT_OK)
}

fn cmd_fpe(flags: FpeOpts) -> Result<i32> {
    let o = resolve(&flags, flags.config.as_deref(), &[MODEL_DEFAULTS, FPE_DEFAULTS])?;
    let dir = out_dir(&flags.out, "fpe");
    let p = model(&o.model)?;
    let grid = PdeGrid::new(req(&o.n, "n")?, req(&o.half_width, "half-width")?, req(&o.disk_radius, "disk-radius")?)?;
    let (s1, s3, bv) = (req(&o.sigma1, "sigma1")?, req(&o.sigma3, "sigma3")?, req(&o.boundary_value, "boundary-value")?);
    let solver: SolverKind = req(&o.solver, "solver")?.parse()?;
    persist(&dir, &o)?;
    let op = fp::build_adjoint(&p, s1, s3, &grid)?;
    let mut f = fp::solve_stationary_with(&op, bv, solver)?;
    if req(&o.normalize, "normalize")? {
        f = fp::normalize(&f)?;
    }
    f.write_outputs(&dir, serde_json::json!({ "params": p, "sigma1": s1, "sigma3": s3, "boundary_value": bv, "peclet_max": op.peclet_max }))?;
    let m = f.mode();
    println!(
        "n={} unknowns={} symmetry residual {:.2e}, mode at ({:.4}, {:.4}), max Peclet {:.3}",
        grid.n,
        op.n_unknowns(),
        f.symmetry_residual(),
        m.y1,
        m.y3,
        op.peclet_max
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct CompareReport {
    l1: f64,
    tv: f64,
    region: Window,
    /// Distance between the field binned over the whole histogram window and
    /// the histogram, counting mass outside the window.
    full_window_l1: f64,
}

fn cmd_compare(flags: CompareOpts) -> Result<i32> {
    let o = resolve(&flags, flags.config.as_deref(), &[COMPARE_DEFAULTS])?;
    let dir = out_dir(&flags.out, "compare");
    let fpe = req(&o.fpe, "fpe")?;
    let hist_path = req(&o.hist, "hist")?;
    let region = Window::parse(&req(&o.region, "region")?)?;
    persist(&dir, &o)?;
    // Extent comes from the sidecar when present; the default disk otherwise.
    let (mut hw, mut radius) = (4.0, 4.0);
    if let Ok(meta) = crate::io::read_text(fpe.with_file_name("density.json")) {
        let v: serde_json::Value = serde_json::from_str(&meta).map_err(|e| Error::Parse(e.to_string()))?;
        hw = v["half_width"].as_f64().unwrap_or(hw);
        radius = v["radius"].as_f64().unwrap_or(radius);
    }
    let f = DensityField::from_csv(&crate::io::read_text(&fpe)?, hw, radius)?;
    let h = OccupationHistogram::from_csv(&crate::io::read_text(&hist_path)?)?;
    let l1 = fp::pde_vs_histogram(&f, &h, region)?;
    let binned = f.to_histogram(h.window, h.bins)?;
    let full = compare_measures(&binned, &h)?;
    let report = CompareReport { l1, tv: l1 / 2.0, region, full_window_l1: full.l1 };
    crate::io::write_json(dir.join("compare.json"), &report)?;
    println!("L1 {l1:.4}  TV {:.4}  over {region:?}", l1 / 2.0);
    Ok(EXIT_OK)
}

/// Checks the derive definitions; used by the test suite.
pub fn verify_cli() {
    Cli::command().debug_assert();
}
