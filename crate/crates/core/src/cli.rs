//! Command-line driver: run configuration, benchmark runs and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    convergence_study, error_norms, estimate_constants_eigen, extract_slice, sample_field,
    PointValue, RateTable, SliceSample,
};
use crate::assembly::{BcMode, Discretization, SpaceConfig, SubscaleModel};
use crate::error::{Error, Result};
use crate::problem::{
    advancing_front_problem, benchmark, constant, manufactured_problem, skew_problem_with_jump,
    BenchmarkSpec,
};
use crate::solver::{run_transient, solve_steady, SolutionState, TimeIntegratorConfig};

#[derive(Debug, Parser)]
#[command(name = "subscale", version, about = "Advection-diffusion with discontinuous subscales")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Transient,
    Converge,
    Constants,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady solve; writes slice and field CSVs.
    Solve(RunArgs),
    /// Generalized-alpha run; writes slice and field CSVs per snapshot.
    Transient(RunArgs),
    /// Mesh refinement study; writes a rate table.
    Converge(RunArgs),
    /// Trace and inverse constants of the polynomial spaces.
    Constants(RunArgs),
}

/// Flags shared by all subcommands; every value may also come from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub problem: Option<String>,
    /// Coarse degree, or a comma list for `converge`.
    #[arg(long)]
    pub p: Option<String>,
    /// Subscale degree, or a comma list for `converge`.
    #[arg(long)]
    pub pf: Option<String>,
    /// Elements per direction; `converge` also takes lists and `a..b` doubling ranges.
    #[arg(long)]
    pub nel: Option<String>,
    #[arg(long)]
    pub bc: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dt: Option<String>,
    #[arg(long = "t-final")]
    pub t_final: Option<String>,
    /// Comma-separated output times.
    #[arg(long)]
    pub snapshots: Option<String>,
    #[arg(long)]
    pub kappa: Option<String>,
    #[arg(long)]
    pub cpen: Option<String>,
    #[arg(long)]
    pub cnitsche: Option<String>,
    #[arg(long)]
    pub ctau: Option<String>,
    #[arg(long)]
    pub cart: Option<String>,
    #[arg(long = "rho-inf")]
    pub rho_inf: Option<String>,
    /// Advection angle of the skew and front problems, in degrees.
    #[arg(long)]
    pub theta: Option<String>,
    /// Height of the inflow discontinuity on the left edge (skew, front).
    #[arg(long)]
    pub jump: Option<String>,
    /// Samples along the slice line.
    #[arg(long)]
    pub samples: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Flat key=value file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const KEYS: [&str; 20] = [
    "problem", "p", "pf", "nel", "bc", "model", "dt", "t-final", "snapshots", "kappa", "cpen",
    "cnitsche", "ctau", "cart", "rho-inf", "theta", "jump", "samples", "out", "seed",
];

impl RunArgs {
    fn flags(&self) -> [(&'static str, &Option<String>); 20] {
        [
            ("problem", &self.problem),
            ("p", &self.p),
            ("pf", &self.pf),
            ("nel", &self.nel),
            ("bc", &self.bc),
            ("model", &self.model),
            ("dt", &self.dt),
            ("t-final", &self.t_final),
            ("snapshots", &self.snapshots),
            ("kappa", &self.kappa),
            ("cpen", &self.cpen),
            ("cnitsche", &self.cnitsche),
            ("ctau", &self.ctau),
            ("cart", &self.cart),
            ("rho-inf", &self.rho_inf),
            ("theta", &self.theta),
            ("jump", &self.jump),
            ("samples", &self.samples),
            ("out", &self.out),
            ("seed", &self.seed),
        ]
    }
}

/// Parses a `key = value` file with `#` comments, rejecting unknown keys.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim().replace('_', "-");
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key '{k}'", n + 1)));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub problem: String,
    pub p: Vec<usize>,
    pub pf: Vec<usize>,
    pub nel: Vec<usize>,
    pub bc: BcMode,
    pub model: SubscaleModel,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub snapshots: Vec<f64>,
    pub kappa: Option<f64>,
    pub c_pen: Option<f64>,
    pub c_nitsche: Option<f64>,
    pub c_tau: Option<f64>,
    pub c_art: Option<f64>,
    pub rho_inf: f64,
    pub theta: f64,
    pub jump: f64,
    pub samples: usize,
    pub out: PathBuf,
    pub seed: u64,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

/// Element counts: `8`, `8,16,32` or the doubling range `2..128`.
pub fn parse_nel(v: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = v.split_once("..") {
        let (mut a, b): (usize, usize) = (parse_num("nel", a)?, parse_num("nel", b)?);
        if a == 0 || b < a {
            return Err(Error::Config(format!("invalid element range '{v}'")));
        }
        let mut out = Vec::new();
        while a <= b {
            out.push(a);
            a *= 2;
        }
        Ok(out)
    } else {
        parse_list("nel", v)
    }
}

/// Merges flags, an optional config file and catalog defaults, in that order of precedence.
pub fn resolve(command: CommandKind, args: &RunArgs) -> Result<RunConfig> {
    let mut map = match &args.config {
        Some(path) => parse_config_file(&fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?)?,
        None => BTreeMap::new(),
    };
    for (k, v) in args.flags() {
        if let Some(v) = v {
            map.insert(k.to_string(), v.clone());
        }
    }
    let get = |k: &str| map.get(k).map(String::as_str);
    let problem = match (get("problem"), command) {
        (Some(p), _) => p.to_string(),
        (None, CommandKind::Constants) => "manufactured".to_string(),
        (None, _) => return Err(Error::Config("missing --problem".into())),
    };
    let spec = benchmark(&problem)?;
    let rec = &spec.recommended;
    let p = get("p").map(|v| parse_list("p", v)).transpose()?.unwrap_or(vec![rec.p]);
    let pf = get("pf").map(|v| parse_list("pf", v)).transpose()?.unwrap_or(vec![rec.pf]);
    let default_nel = if command == CommandKind::Converge { vec![8, 16, 32, 64] } else { vec![rec.n_el] };
    let nel = get("nel").map(parse_nel).transpose()?.unwrap_or(default_nel);
    if p.is_empty() || pf.is_empty() || nel.is_empty() {
        return Err(Error::Config("empty degree or mesh list".into()));
    }
    if command != CommandKind::Converge && command != CommandKind::Constants && (p.len() > 1 || pf.len() > 1 || nel.len() > 1) {
        return Err(Error::Config("lists of p, pf or nel are only accepted by converge".into()));
    }
    let opt = |k: &str| get(k).map(|v| parse_num::<f64>(k, v)).transpose();
    let cfg = RunConfig {
        command,
        problem,
        p,
        pf,
        nel,
        bc: get("bc").map(str::parse).transpose()?.unwrap_or(rec.bc),
        model: get("model").map(str::parse).transpose()?.unwrap_or(rec.model),
        dt: opt("dt")?.or(rec.dt),
        t_final: opt("t-final")?.or(rec.t_final),
        snapshots: get("snapshots").map(|v| parse_list("snapshots", v)).transpose()?.unwrap_or_default(),
        kappa: opt("kappa")?,
        c_pen: opt("cpen")?,
        c_nitsche: opt("cnitsche")?,
        c_tau: opt("ctau")?,
        c_art: opt("cart")?,
        rho_inf: opt("rho-inf")?.unwrap_or(0.5),
        theta: opt("theta")?.unwrap_or(45.0),
        jump: opt("jump")?.unwrap_or(0.2),
        samples: get("samples").map(|v| parse_num("samples", v)).transpose()?.unwrap_or(1024),
        out: PathBuf::from(get("out").unwrap_or("out")),
        seed: get("seed").map(|v| parse_num("seed", v)).transpose()?.unwrap_or(0),
    };
    cfg.benchmark()?;
    Ok(cfg)
}

/// Parses an argument list (program name first) into a resolved configuration.
pub fn parse_config<I, T>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    let (kind, a) = match &cli.command {
        Command::Solve(a) => (CommandKind::Solve, a),
        Command::Transient(a) => (CommandKind::Transient, a),
        Command::Converge(a) => (CommandKind::Converge, a),
        Command::Constants(a) => (CommandKind::Constants, a),
    };
    resolve(kind, a)
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "default".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// The catalog problem with the configured overrides applied.
    pub fn benchmark(&self) -> Result<BenchmarkSpec> {
        let mut spec = match self.problem.as_str() {
            "manufactured" => manufactured_problem(self.kappa.unwrap_or(1e-6))?,
            "skew" => skew_problem_with_jump(self.theta, self.jump)?,
            "front" => {
                let base = advancing_front_problem();
                let mut s = skew_problem_with_jump(self.theta, self.jump)?;
                s.name = base.name;
                s.problem.steady = false;
                s.recommended = base.recommended;
                s
            }
            other => benchmark(other)?,
        };
        if let Some(k) = self.kappa {
            if !(k > 0.0) {
                return Err(Error::Config(format!("kappa must be positive, got {k}")));
            }
            spec.problem.diffusivity = constant(k);
        }
        Ok(spec)
    }

    pub fn space_config(&self, p: usize, pf: usize, n_el: usize) -> SpaceConfig {
        let mut c = SpaceConfig::new(p, pf, n_el).with_bc(self.bc).with_model(self.model);
        c.c_pen = self.c_pen;
        c.c_nitsche = self.c_nitsche;
        c.c_tau = self.c_tau;
        c.c_art = self.c_art;
        c
    }

    /// One-line record of every resolved setting.
    pub fn describe(&self) -> String {
        let cmd = match self.command {
            CommandKind::Solve => "solve",
            CommandKind::Transient => "transient",
            CommandKind::Converge => "converge",
            CommandKind::Constants => "constants",
        };
        format!(
            "command={cmd} problem={} p={} pf={} nel={} bc={} model={} dt={} t-final={} snapshots={} kappa={} cpen={} cnitsche={} ctau={} cart={} rho-inf={} theta={} jump={} samples={} seed={}",
            self.problem,
            join(&self.p),
            join(&self.pf),
            join(&self.nel),
            self.bc,
            self.model,
            show(self.dt),
            show(self.t_final),
            join(&self.snapshots),
            show(self.kappa),
            show(self.c_pen),
            show(self.c_nitsche),
            show(self.c_tau),
            show(self.c_art),
            self.rho_inf,
            self.theta,
            self.jump,
            self.samples,
            self.seed,
        )
    }
}

/// Float formatting used in every CSV: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn csv_head(cfg: &RunConfig, header: &str) -> String {
    format!("# config: {}\n{header}\n", cfg.describe())
}

pub fn rates_csv(cfg: &RunConfig, table: &RateTable) -> String {
    let mut s = csv_head(cfg, "problem,p,pf,nel,h,err_l2_coarse,norm_l2_subscale,err_supg,slope_pair");
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.problem,
            r.p,
            r.pf,
            r.nel,
            fmt_f64(r.h),
            fmt_f64(r.err_l2_coarse),
            fmt_f64(r.norm_l2_subscale),
            fmt_f64(r.err_supg),
            fmt_f64(r.slope_pair.unwrap_or(f64::NAN)),
        );
    }
    s
}

pub fn slice_csv(cfg: &RunConfig, samples: &[SliceSample]) -> String {
    let mut s = csv_head(cfg, "s,x,y,coarse,subscale");
    for p in samples {
        let v = &p.value;
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(p.s),
            fmt_f64(v.x[0]),
            fmt_f64(v.x[1]),
            fmt_f64(v.coarse),
            fmt_f64(v.subscale)
        );
    }
    s
}

pub fn field_csv(cfg: &RunConfig, points: &[PointValue]) -> String {
    let mut s = csv_head(cfg, "x,y,coarse,subscale");
    for v in points {
        let _ = writeln!(s, "{},{},{},{}", fmt_f64(v.x[0]), fmt_f64(v.x[1]), fmt_f64(v.coarse), fmt_f64(v.subscale));
    }
    s
}

pub fn constants_csv(cfg: &RunConfig) -> Result<String> {
    let mut s = csv_head(cfg, "degree,h,c_trace,c_inv_grad,c_inv_lap");
    let mut degrees: Vec<usize> = cfg.p.iter().chain(&cfg.pf).copied().collect();
    degrees.sort_unstable();
    degrees.dedup();
    for d in degrees {
        for h in [1.0, 0.5, 0.25] {
            let r = estimate_constants_eigen(d, h, h)?;
            let _ = writeln!(s, "{d},{},{},{},{}", fmt_f64(h), fmt_f64(r.c_trace), fmt_f64(r.c_inv_grad), fmt_f64(r.c_inv_lap));
        }
    }
    Ok(s)
}

fn write(path: &Path, text: &str) -> Result<PathBuf> {
    fs::write(path, text)?;
    Ok(path.to_path_buf())
}

fn write_state(cfg: &RunConfig, spec: &BenchmarkSpec, disc: &Discretization, state: &SolutionState, tag: &str) -> Result<Vec<PathBuf>> {
    let slice = extract_slice(disc, state, &spec.recommended.slice, cfg.samples)?;
    let field = sample_field(disc, state, 4)?;
    Ok(vec![
        write(&cfg.out.join(format!("{}{tag}_slice.csv", cfg.problem)), &slice_csv(cfg, &slice))?,
        write(&cfg.out.join(format!("{}{tag}_field.csv", cfg.problem)), &field_csv(cfg, &field))?,
    ])
}

/// Executes a resolved configuration and returns the files written.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out)?;
    let spec = cfg.benchmark()?;
    let (p, pf, n) = (cfg.p[0], cfg.pf[0], cfg.nel[0]);
    match cfg.command {
        CommandKind::Constants => Ok(vec![write(&cfg.out.join("constants.csv"), &constants_csv(cfg)?)?]),
        CommandKind::Converge => {
            let pairs: Vec<(usize, usize)> = cfg.p.iter().flat_map(|&p| cfg.pf.iter().map(move |&f| (p, f))).collect();
            let table = convergence_study(&spec, &cfg.space_config(p, pf, n), &pairs, &cfg.nel)?;
            Ok(vec![write(&cfg.out.join(format!("{}_rates.csv", cfg.problem)), &rates_csv(cfg, &table))?])
        }
        CommandKind::Solve => {
            let disc = Discretization::new(spec.patch(p, n)?, &spec.problem, &cfg.space_config(p, pf, n))?;
            let sol = solve_steady(&disc)?;
            eprintln!("relative block residual {:.3e}", sol.residual);
            if let Some(ex) = &spec.exact {
                let r = error_norms(&disc, &spec.problem, &sol.state, Some(ex))?;
                eprintln!("L2 error {:.6e}, SUPG error {:.6e}", r.l2_coarse, r.supg_norm);
            }
            write_state(cfg, &spec, &disc, &sol.state, "")
        }
        CommandKind::Transient => {
            let dt = cfg.dt.ok_or_else(|| Error::Config("transient run needs --dt".into()))?;
            let snaps = cfg.snapshots.clone();
            // snapshots, when given, decide how far to integrate
            let t_final = snaps
                .iter()
                .cloned()
                .reduce(f64::max)
                .or(cfg.t_final)
                .ok_or_else(|| Error::Config("transient run needs --t-final or --snapshots".into()))?;
            let tc = TimeIntegratorConfig::new(dt, cfg.rho_inf, t_final)?;
            let disc = Discretization::new(spec.patch(p, n)?, &spec.problem, &cfg.space_config(p, pf, n))?;
            let times = if snaps.is_empty() { vec![t_final] } else { snaps };
            let states = run_transient(&disc, &spec.problem, tc, &times)?;
            let mut files = Vec::new();
            for (t, s) in times.iter().zip(&states) {
                files.extend(write_state(cfg, &spec, &disc, s, &format!("_t{t:.4}"))?);
            }
            Ok(files)
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, a) = match &cli.command {
        Command::Solve(a) => (CommandKind::Solve, a),
        Command::Transient(a) => (CommandKind::Transient, a),
        Command::Converge(a) => (CommandKind::Converge, a),
        Command::Constants(a) => (CommandKind::Constants, a),
    };
    let result = resolve(kind, a).and_then(|cfg| run(&cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                eprintln!("run with --help for usage");
            }
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig> {
        parse_config(std::iter::once("subscale").chain(args.iter().copied()))
    }

    #[test]
    fn weak_skew_run() {
        let c = parse(&["solve", "--problem", "skew", "--p", "2", "--pf", "1", "--nel", "64", "--bc", "weak"]).unwrap();
        assert_eq!((c.p[0], c.pf[0], c.nel[0], c.bc), (2, 1, 64, BcMode::Weak));
        assert_eq!(c.model, SubscaleModel::Dynamic);
    }

    #[test]
    fn missing_problem_is_an_error() {
        assert!(parse(&["solve", "--p", "2"]).is_err());
        assert!(parse(&["solve", "--problem", "nope"]).is_err());
        assert!(parse(&["solve", "--problem", "skew", "--bc", "sideways"]).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nproblem = manufactured\np=1  # trailing\nnel = 8\n").unwrap();
        let c = parse(&["solve", "--config", path.to_str().unwrap(), "--p", "2"]).unwrap();
        assert_eq!(c.p, vec![2]);
        assert_eq!(c.nel, vec![8]);
        fs::write(&path, "colour = blue\n").unwrap();
        assert!(parse(&["solve", "--config", path.to_str().unwrap(), "--problem", "skew"]).is_err());
    }

    #[test]
    fn catalog_defaults_fill_gaps() {
        let c = parse(&["transient", "--problem", "hill"]).unwrap();
        assert_eq!(c.model, SubscaleModel::QuasiStatic);
        assert_eq!((c.dt, c.t_final, c.nel[0]), (Some(0.005), Some(6.28), 64));
    }

    #[test]
    fn element_ranges() {
        assert_eq!(parse_nel("2..128").unwrap(), vec![2, 4, 8, 16, 32, 64, 128]);
        assert_eq!(parse_nel("3,5").unwrap(), vec![3, 5]);
        assert!(parse_nel("8..4").is_err());
        let c = parse(&["converge", "--problem", "manufactured", "--p", "1,2", "--pf", "1,2", "--nel", "2..128"]).unwrap();
        assert_eq!(c.nel.len(), 7);
        assert!(parse(&["solve", "--problem", "skew", "--p", "1,2"]).is_err());
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn constants_output() {
        let dir = tempfile::tempdir().unwrap();
        let c = parse(&["constants", "--p", "2", "--pf", "1", "--out", dir.path().to_str().unwrap()]).unwrap();
        let files = run(&c).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config: command=constants"));
        assert_eq!(lines[1], "degree,h,c_trace,c_inv_grad,c_inv_lap");
        assert_eq!(lines.len(), 2 + 6);
        let row: Vec<&str> = lines[5].split(',').collect();
        assert_eq!(&row[..2], &["2", "1.0000000000000000e0"]);
        assert!((row[2].parse::<f64>().unwrap() - 24.0).abs() < 1e-10);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let c = parse(&["solve", "--problem", "annulus", "--nel", "6", "--samples", "33", "--out", out]).unwrap();
        let a: Vec<String> = run(&c).unwrap().iter().map(|f| fs::read_to_string(f).unwrap()).collect();
        let b: Vec<String> = run(&c).unwrap().iter().map(|f| fs::read_to_string(f).unwrap()).collect();
        assert_eq!(a, b);
        assert_eq!(a[0].lines().count(), 2 + 33);
        assert_eq!(a[1].lines().count(), 2 + 24 * 24);
    }
}
