//! Command-line front end: `inner`, `stabilize` and `spectrum`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use faer::{c64, MatRef};
use serde::{Deserialize, Serialize};

use crate::eigen::eigenvalues;
use crate::error::{Result, StabError};
use crate::functional::{FunctionalKind, StabConfig};
use crate::gallery::{self, write_matrix_market, GalleryEntry, Provenance};
use crate::inner::{inner_iteration, ConvergedReason, InnerParams, InnerResult, RankMode};
use crate::outer::{certify, outer_iteration, Certificate, OuterParams, OuterResult, OuterStep};
use crate::structure::{SparsityMask, StructureKind, StructurePattern};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNSTABILIZABLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "nearstab",
    version,
    about = "Nearest delta-stable matrix by low-rank gradient flows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the functional at a fixed perturbation size.
    Inner(InnerArgs),
    /// Search for the smallest stabilizing perturbation size.
    Stabilize(StabilizeArgs),
    /// Classified eigenvalues of a matrix or of a saved run.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionalArg {
    #[value(name = "F", alias = "f")]
    F,
    #[value(name = "hermite", alias = "phi")]
    Hermite,
}

impl From<FunctionalArg> for FunctionalKind {
    fn from(f: FunctionalArg) -> Self {
        match f {
            FunctionalArg::F => FunctionalKind::F,
            FunctionalArg::Hermite => FunctionalKind::Hermite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    None,
    Pattern,
    Toeplitz,
    Real,
}

#[derive(Debug, Clone, Args)]
pub struct MatrixArgs {
    /// Gallery name or `mm:<path>` for a Matrix Market file.
    #[arg(long)]
    pub matrix: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Subtract `shift * I` before solving.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    /// Hermite blend end; defaults to `2 delta`.
    #[arg(long)]
    pub delta2: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "F")]
    pub functional: FunctionalArg,
    /// `adaptive` or `fixed:<r>`.
    #[arg(long, default_value = "adaptive")]
    pub rank: RankMode,
    #[arg(long, value_enum, default_value = "none")]
    pub structure: StructureArg,
    #[arg(long, default_value_t = 1e-8)]
    pub tau_rank: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_inner: f64,
    #[arg(long, default_value_t = 250)]
    pub maxit_inner: usize,
    #[arg(long, default_value_t = 0.1)]
    pub h0: f64,
    /// Non-monotone probe length after a rejected step; 0 disables it.
    #[arg(long, default_value_t = 10)]
    pub watchdog: usize,
    /// Directory for the record, CSV histories and perturbation.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InnerArgs {
    #[command(flatten)]
    pub matrix: MatrixArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub eps: f64,
}

#[derive(Debug, Clone, Args)]
pub struct StabilizeArgs {
    #[command(flatten)]
    pub matrix: MatrixArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_outer: f64,
    #[arg(long, default_value_t = 300)]
    pub maxit_outer: usize,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub eps_max: Option<f64>,
    /// Also write the perturbation `eps* E*` as `delta.mtx` under `--out`.
    #[arg(long, requires = "out")]
    pub write_delta: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    /// A record written by `inner` or `stabilize`.
    #[arg(long, conflicts_with = "matrix")]
    pub record: Option<PathBuf>,
    #[arg(long, required_unless_present = "record")]
    pub matrix: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,
    /// Classification threshold; a record supplies its own.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixInfo {
    pub source: String,
    pub name: String,
    pub n: usize,
    pub seed: u64,
    pub shift: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunParams {
    pub config: StabConfig,
    pub structure: String,
    pub inner: InnerParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<OuterParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InnerReport {
    pub eps: f64,
    pub value: f64,
    pub rank: usize,
    pub max_rank: usize,
    pub iterations: usize,
    pub rejected: usize,
    pub probe_steps: usize,
    pub converged_reason: ConvergedReason,
    pub stationarity: Option<f64>,
    pub grad_norm: f64,
    pub rank_history: Vec<(usize, usize)>,
    pub value_history: Vec<f64>,
}

impl InnerReport {
    fn new(eps: f64, r: &InnerResult) -> Self {
        Self {
            eps,
            value: r.value,
            rank: r.rank(),
            max_rank: r.max_rank,
            iterations: r.iterations,
            rejected: r.rejected,
            probe_steps: r.probe_steps,
            converged_reason: r.converged_reason,
            stationarity: r.stationarity,
            grad_norm: r.grad_norm,
            rank_history: r.rank_history.clone(),
            value_history: r.value_history.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OuterReport {
    pub eps_star: f64,
    pub rank_at_star: usize,
    pub final_value: f64,
    pub converged: bool,
    pub certificate: Certificate,
    pub history: Vec<OuterStep>,
    pub cpu_seconds: f64,
}

impl OuterReport {
    fn new(r: &OuterResult) -> Self {
        Self {
            eps_star: r.eps_star,
            rank_at_star: r.rank_at_star,
            final_value: r.final_value,
            converged: r.converged,
            certificate: r.certificate,
            history: r.history.clone(),
            cpu_seconds: r.cpu_seconds,
        }
    }
}

/// Self-contained report of one run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub command: Vec<String>,
    pub matrix: MatrixInfo,
    pub params: RunParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner: Option<InnerReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<OuterReport>,
    /// Eigenvalues as `[re, im]`, sorted by descending real part.
    pub original_spectrum: Vec<[f64; 2]>,
    pub perturbed_spectrum: Vec<[f64; 2]>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumClass {
    /// `Re < -delta`.
    Green,
    /// `-delta <= Re <= 0`.
    Orange,
    /// `Re > 0`.
    Red,
}

impl SpectrumClass {
    pub fn of(re: f64, delta: f64) -> Self {
        if re < -delta {
            Self::Green
        } else if re <= 0.0 {
            Self::Orange
        } else {
            Self::Red
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Green => "green",
            Self::Orange => "orange",
            Self::Red => "red",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPoint {
    pub set: &'static str,
    pub re: f64,
    pub im: f64,
    pub class: SpectrumClass,
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let echo: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let outcome = match cli.command {
        Command::Inner(a) => cmd_inner(&a, echo).and_then(|r| emit_record(&r, a.solver.out.as_deref())),
        Command::Stabilize(a) => cmd_stabilize(&a, echo).and_then(|(r, res)| {
            emit_record(&r, a.solver.out.as_deref())?;
            match (&a.solver.out, a.write_delta) {
                (Some(dir), true) => write_delta(dir, &r, &res),
                _ => Ok(()),
            }
        }),
        Command::Spectrum(a) => cmd_spectrum(&a).and_then(|pts| emit_spectrum(&pts, a.out.as_deref())),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        // a closed reader (e.g. `| head`) is not a failure
        Err(StabError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                StabError::Unstabilizable { .. } => EXIT_UNSTABILIZABLE,
                _ => EXIT_SOLVER,
            }
        }
    }
}

/// Gallery matrix or `mm:<path>` file, shifted by `shift`.
pub fn load_matrix(spec: &str, n: Option<usize>, seed: u64, shift: f64) -> Result<GalleryEntry> {
    let mut entry = match spec.strip_prefix("mm:") {
        Some(path) => gallery::read_matrix_market(path)?,
        None => gallery::by_name(spec, n, seed)?,
    };
    if shift != 0.0 {
        entry.matrix = gallery::shift(entry.matrix.as_ref(), shift);
        entry.name = format!("{} - {shift} I", entry.name);
    }
    Ok(entry)
}

/// Structure for `arg` on `entry`; the pattern choice covers the stored
/// pattern and every nonzero of the (possibly shifted) matrix.
pub fn resolve_structure(arg: StructureArg, entry: &GalleryEntry) -> Result<Option<StructurePattern>> {
    Ok(match arg {
        StructureArg::None => None,
        StructureArg::Toeplitz => Some(StructurePattern::toeplitz()),
        StructureArg::Real => Some(StructurePattern::real_entries()),
        StructureArg::Pattern => {
            let a = entry.matrix.as_ref();
            let mut pairs: Vec<(usize, usize)> = SparsityMask::of(a).entries().to_vec();
            if let Some(StructureKind::Sparsity { mask }) = entry.default_structure.as_ref().map(|p| &p.kind) {
                pairs.extend_from_slice(mask.entries());
            }
            Some(StructurePattern::sparsity(SparsityMask::from_entries(
                a.nrows(),
                pairs,
            )?))
        }
    })
}

fn config(m: &MatrixArgs) -> Result<StabConfig> {
    let cfg = StabConfig {
        delta: m.delta,
        delta1: m.delta,
        delta2: m.delta2.unwrap_or(2.0 * m.delta),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn inner_params(s: &SolverArgs) -> InnerParams {
    InnerParams {
        tol_inner: s.tol_inner,
        maxit: s.maxit_inner,
        tau_rank: s.tau_rank,
        h0: s.h0,
        functional: s.functional.into(),
        rank_mode: s.rank,
        watchdog: s.watchdog,
        ..Default::default()
    }
}

fn matrix_info(m: &MatrixArgs, entry: &GalleryEntry) -> MatrixInfo {
    MatrixInfo {
        source: m.matrix.clone(),
        name: entry.name.clone(),
        n: entry.matrix.nrows(),
        seed: m.seed,
        shift: m.shift,
        provenance: entry.provenance,
    }
}

fn structure_label(p: Option<&StructurePattern>) -> String {
    p.map_or_else(|| "none".to_string(), |p| p.description.clone())
}

fn pairs(values: &[c64]) -> Vec<[f64; 2]> {
    values.iter().map(|z| [z.re, z.im]).collect()
}

fn sorted_eigenvalues(a: MatRef<'_, c64>) -> Result<Vec<[f64; 2]>> {
    Ok(pairs(&eigenvalues(a)?))
}

pub fn cmd_inner(args: &InnerArgs, command: Vec<String>) -> Result<RunRecord> {
    let start = Instant::now();
    let cfg = config(&args.matrix)?;
    let m = &args.matrix;
    let entry = load_matrix(&m.matrix, m.n, m.seed, m.shift)?;
    let structure = resolve_structure(args.solver.structure, &entry)?;
    let params = inner_params(&args.solver);
    let a = entry.matrix.as_ref();
    let res = inner_iteration(a, args.eps, None, &cfg, &params, structure.as_ref())?;
    let perturbed = crate::functional::perturbed(a, args.eps, res.e.as_ref());
    Ok(RunRecord {
        command,
        matrix: matrix_info(m, &entry),
        params: RunParams {
            config: cfg,
            structure: structure_label(structure.as_ref()),
            inner: params,
            outer: None,
            eps: Some(args.eps),
        },
        inner: Some(InnerReport::new(args.eps, &res)),
        outer: None,
        original_spectrum: sorted_eigenvalues(a)?,
        perturbed_spectrum: sorted_eigenvalues(perturbed.as_ref())?,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn cmd_stabilize(args: &StabilizeArgs, command: Vec<String>) -> Result<(RunRecord, OuterResult)> {
    let start = Instant::now();
    let cfg = config(&args.matrix)?;
    let m = &args.matrix;
    let entry = load_matrix(&m.matrix, m.n, m.seed, m.shift)?;
    let structure = resolve_structure(args.solver.structure, &entry)?;
    let params = inner_params(&args.solver);
    let outer = OuterParams {
        tol_outer: args.tol_outer,
        maxit: args.maxit_outer,
        eps0: args.eps0,
        eps_max: args.eps_max,
    };
    let a = entry.matrix.as_ref();
    let res = outer_iteration(a, &cfg, &params, &outer, structure.as_ref())?;
    // the record is only written for a perturbation that passes both
    // certificates when checked afresh
    let (cert, _) = certify(a, res.eps_star, res.e.as_ref(), &cfg, structure.as_ref())?;
    if !cert.passed() {
        return Err(StabError::Precondition(format!(
            "certificate failed at eps* = {:.6e}: max Re(lambda) = {:.6e}, structure exact = {:?}",
            res.eps_star, cert.max_real_part, cert.structure_exact
        )));
    }
    let record = RunRecord {
        command,
        matrix: matrix_info(m, &entry),
        params: RunParams {
            config: cfg,
            structure: structure_label(structure.as_ref()),
            inner: params,
            outer: Some(outer),
            eps: None,
        },
        inner: None,
        outer: Some(OuterReport::new(&res)),
        original_spectrum: sorted_eigenvalues(a)?,
        perturbed_spectrum: pairs(&res.stabilized_eigenvalues),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((record, res))
}

pub fn cmd_spectrum(args: &SpectrumArgs) -> Result<Vec<SpectrumPoint>> {
    let (original, perturbed, delta) = match (&args.record, &args.matrix) {
        (Some(path), _) => {
            let rec = read_record(path)?;
            let delta = args.delta.unwrap_or(rec.params.config.delta);
            (rec.original_spectrum, Some(rec.perturbed_spectrum), delta)
        }
        (None, Some(spec)) => {
            let entry = load_matrix(spec, args.n, args.seed, args.shift)?;
            (
                sorted_eigenvalues(entry.matrix.as_ref())?,
                None,
                args.delta.unwrap_or(1e-3),
            )
        }
        (None, None) => return Err(StabError::Precondition("need --record or --matrix".into())),
    };
    let classify = |set: &'static str, v: &[[f64; 2]]| -> Vec<SpectrumPoint> {
        v.iter()
            .map(|&[re, im]| SpectrumPoint {
                set,
                re,
                im,
                class: SpectrumClass::of(re, delta),
            })
            .collect()
    };
    let mut pts = classify("original", &original);
    if let Some(p) = perturbed {
        pts.extend(classify("stabilized", &p));
    }
    Ok(pts)
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| StabError::Precondition(format!("cannot parse record {}: {e}", path.display())))
}

fn json(record: &RunRecord) -> Result<String> {
    serde_json::to_string_pretty(record).map_err(|e| StabError::Precondition(format!("cannot serialize record: {e}")))
}

fn csv_error(e: csv::Error) -> StabError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => StabError::Io(e),
        other => StabError::Precondition(format!("csv: {other:?}")),
    }
}

fn say(line: &str) -> Result<()> {
    writeln!(std::io::stdout().lock(), "{line}")?;
    Ok(())
}

/// Print the record, or with `out` write `record.json` plus CSV histories.
pub fn emit_record(record: &RunRecord, out: Option<&Path>) -> Result<()> {
    let text = json(record)?;
    let Some(dir) = out else {
        return say(&text);
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("record.json"), text + "\n")?;
    if let Some(inner) = &record.inner {
        let mut w = csv::Writer::from_path(dir.join("inner_history.csv")).map_err(csv_error)?;
        w.write_record(["iteration", "rank", "value"]).map_err(csv_error)?;
        for (&(it, rank), value) in inner.rank_history.iter().zip(&inner.value_history) {
            w.write_record([it.to_string(), rank.to_string(), format!("{value:e}")])
                .map_err(csv_error)?;
        }
        w.flush()?;
    }
    if let Some(outer) = &record.outer {
        let mut w = csv::Writer::from_path(dir.join("outer_history.csv")).map_err(csv_error)?;
        w.write_record([
            "step",
            "branch",
            "eps",
            "phi",
            "phi_prime",
            "reliable",
            "inner_reason",
            "rank",
        ])
        .map_err(csv_error)?;
        for (k, h) in outer.history.iter().enumerate() {
            w.write_record([
                k.to_string(),
                h.branch.to_string(),
                format!("{:e}", h.eps),
                format!("{:e}", h.phi),
                format!("{:e}", h.phi_prime),
                h.reliable.to_string(),
                h.inner_reason.to_string(),
                h.rank.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
    }
    say(&dir.join("record.json").display().to_string())
}

fn write_delta(dir: &Path, record: &RunRecord, res: &OuterResult) -> Result<()> {
    let mut f = fs::File::create(dir.join("delta.mtx"))?;
    let comment = format!(
        "perturbation eps* E* for {} (eps* = {:e})",
        record.matrix.name, res.eps_star
    );
    write_matrix_market(&mut f, res.delta().as_ref(), &comment)?;
    f.flush()?;
    Ok(())
}

fn emit_spectrum(points: &[SpectrumPoint], out: Option<&Path>) -> Result<()> {
    let write = |w: &mut dyn Write| -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["set", "re", "im", "class"]).map_err(csv_error)?;
        for p in points {
            w.write_record([p.set, &format!("{:e}", p.re), &format!("{:e}", p.im), p.class.as_str()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    };
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("spectrum.csv"))?;
            write(&mut f)?;
            say(&dir.join("spectrum.csv").display().to_string())
        }
        None => write(&mut std::io::stdout().lock()),
    }
}
