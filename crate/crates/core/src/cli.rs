//! Command-line front end.
//!
//! Exit codes: 0 ok, 2 argument, 3 I/O, 4 geometry, 5 join.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ddim::{cascade_reface, CascadeConfig, ConditionEcho, Denoiser, FixedTarget, SlabSpec};
use crate::deface::{quickshear, DEFAULT_BUFFER_MM, QUICKSHEAR_VERSION};
use crate::error::{Error, Result};
use crate::mask::HEAD_MASK_VERSION;
use crate::phantom::{generate_cohort, generate_cohort_with, member_seed, Phantom, PhantomParams};
use crate::quality::{quality_report, QualityReport, PEAK_CONVENTION};
use crate::stats::{
    bootstrap_mean, correlation_report, significance_stars, wilcoxon_signed_rank, ObservationTable, PredictionTable,
    StatSummary,
};
use crate::surface::{face_distance_report, MasdMode};
use crate::volume::{downsample, nifti, BinaryMask, Volume3D};
use crate::{parallel, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ARGUMENT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_GEOMETRY: i32 = 4;
pub const EXIT_JOIN: i32 = 5;
pub const THREADS_ENV: &str = "REFAUDIT_THREADS";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. }
        | Error::Format(_)
        | Error::Unsupported(_)
        | Error::Corruption(_)
        | Error::Csv(_)
        | Error::Json(_) => EXIT_IO,
        Error::Geometry(_) => EXIT_GEOMETRY,
        Error::Join(_) => EXIT_JOIN,
        Error::Range(_) | Error::Argument(_) | Error::Degenerate(_) | Error::Fit(_) | Error::Schedule(_) => {
            EXIT_ARGUMENT
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "refaudit", version, about = "Defacing/refacing risk audit for head MRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom cohort (NIfTI + geometry JSON).
    Phantom(PhantomArgs),
    /// Face-surface MASD between an original and a candidate image.
    Masd(MasdArgs),
    /// Whole-head and changed-area PSNR/SSIM.
    Quality(QualityArgs),
    /// Spearman correlation of predictions with mixed-model residuals.
    Correlate(CorrelateArgs),
    /// End-to-end run: phantom, defacing, cascade refacing, metrics.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid size per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Isotropic voxel size in mm.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Also write the brain mask of each phantom.
    #[arg(long)]
    pub with_brain: bool,
}

#[derive(Debug, Args)]
pub struct MasdArgs {
    pub original: Option<PathBuf>,
    pub candidate: Option<PathBuf>,
    /// CSV with columns subject_id,method,original,candidate.
    #[arg(long, conflicts_with_all = ["original", "candidate"])]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub subject_id: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// One-directional distance (candidate vertices to original surface).
    #[arg(long)]
    pub directed: bool,
    /// Bootstrap replicates for the per-method aggregate.
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Method compared against every other by paired Wilcoxon over subjects.
    #[arg(long, requires = "pairs")]
    pub reference_method: Option<String>,
    /// With --boot, also write per-subject rows here.
    #[arg(long)]
    pub rows_out: Option<PathBuf>,
    /// Decimal places for per-subject distances.
    #[arg(long, default_value_t = 3)]
    pub decimals: usize,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long, required_unless_present = "batch")]
    pub original: Option<PathBuf>,
    #[arg(long, required_unless_present = "batch")]
    pub defaced: Option<PathBuf>,
    #[arg(long, required_unless_present = "batch")]
    pub refaced: Option<PathBuf>,
    /// Change mask as `name=path` (or a bare path); repeat to intersect.
    #[arg(long = "mask")]
    pub masks: Vec<String>,
    /// CSV with columns subject_id,original,defaced,refaced,masks where
    /// masks is a `;`-separated list of `name=path`.
    #[arg(long, conflicts_with_all = ["original", "defaced", "refaced"])]
    pub batch: Option<PathBuf>,
    #[arg(long)]
    pub subject_id: Option<String>,
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    pub observations: PathBuf,
    pub predictions: PathBuf,
    #[arg(long, default_value_t = crate::stats::DEFAULT_N_BOOT)]
    pub boot: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    /// Returns the true pre-defacing image at each stage.
    Oracle,
    /// Stage 1 returns a population-average template, stage 2 echoes the
    /// upsampled stage-1 image.
    Stub,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 8)]
    pub slab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub overlap: usize,
    /// Stage-1 downsampling factor, `f` or `fx,fy,fz`.
    #[arg(long, default_value = "2,2,2", value_parser = parse_factor)]
    pub downsample: [usize; 3],
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = DenoiserKind::Oracle)]
    pub denoiser: DenoiserKind,
    #[arg(long, default_value_t = DEFAULT_BUFFER_MM)]
    pub buffer_mm: f64,
    #[arg(long)]
    pub directed: bool,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

fn parse_factor(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad factor {p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let f = match parts[..] {
        [a] => [a; 3],
        [a, b, c] => [a, b, c],
        _ => return Err("expected one or three comma-separated factors".into()),
    };
    if f.contains(&0) {
        return Err("factors must be >= 1".into());
    }
    Ok(f)
}

/// Fixed-point text with "inf"/"-inf"/"nan" for non-finite values.
pub fn fmt_num(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        let s = format!("{v:.decimals$}");
        if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
            s[1..].to_string()
        } else {
            s
        }
    }
}

/// Parses `args` (program name first) and runs the command, writing reports
/// to `out` and diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGUMENT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        parallel::init_thread_pool(n);
    }
    let result = match cli.command {
        Command::Phantom(a) => cmd_phantom(&a, out),
        Command::Masd(a) => cmd_masd(&a, out),
        Command::Quality(a) => cmd_quality(&a, out),
        Command::Correlate(a) => cmd_correlate(&a, out),
        Command::Demo(a) => cmd_demo(&a, out).map(|_| ()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "refaudit: {e}");
            exit_code(&e)
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    if dir.exists() && !dir.is_dir() {
        return Err(Error::Argument(format!("output path {} is not a directory", dir.display())));
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Argument(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn cmd_phantom(a: &PhantomArgs, out: &mut dyn Write) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let mut params = PhantomParams::default();
    if let Some(g) = a.grid {
        params.grid = [g; 3];
    }
    if let Some(s) = a.spacing {
        params.spacing_mm = s;
    }
    params.validate()?;
    let cohort = generate_cohort_with(a.n, a.seed, &params)?;
    for (i, p) in cohort.iter().enumerate() {
        let stem = format!("phantom-{i:03}");
        nifti::save(&p.volume, a.out.join(format!("{stem}.nii.gz")))?;
        write_json(&a.out.join(format!("{stem}.json")), &p.record)?;
        if a.with_brain {
            nifti::save_mask(&p.brain, a.out.join(format!("{stem}_brain.nii.gz")))?;
        }
        writeln!(out, "{}", a.out.join(format!("{stem}.nii.gz")).display()).map_err(io_out)?;
    }
    Ok(())
}

fn file_stem(p: &Path) -> String {
    let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
}

#[derive(Debug, Clone, Deserialize)]
struct PairRow {
    subject_id: String,
    method: String,
    original: PathBuf,
    candidate: PathBuf,
}

/// One per-subject MASD result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasdRow {
    pub subject_id: String,
    pub method: String,
    pub masd_mm: f64,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Per-method bootstrap aggregate; optionally with a paired comparison
/// against a reference method over shared subjects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodAggregate {
    pub method: String,
    pub n: usize,
    pub summary: Option<StatSummary>,
    pub p_vs_reference: Option<f64>,
}

pub fn aggregate_masd(
    rows: &[MasdRow],
    boot: usize,
    seed: u64,
    reference: Option<&str>,
) -> Result<Vec<MethodAggregate>> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    if let Some(refm) = reference {
        if !methods.contains(&refm) {
            return Err(Error::Argument(format!("reference method {refm:?} not present")));
        }
    }
    let mut out = Vec::new();
    for m in &methods {
        let vals: Vec<f64> = rows.iter().filter(|r| r.method == *m).map(|r| r.masd_mm).collect();
        let summary = if vals.len() >= 2 { Some(bootstrap_mean(&vals, boot, seed)?) } else { None };
        let p = match reference {
            Some(refm) if refm != *m => Some(paired_p(rows, refm, m)?),
            _ => None,
        };
        out.push(MethodAggregate { method: m.to_string(), n: vals.len(), summary, p_vs_reference: p });
    }
    Ok(out)
}

/// Wilcoxon p over subjects that have both methods (per-subject pairing).
fn paired_p(rows: &[MasdRow], reference: &str, method: &str) -> Result<f64> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in rows.iter().filter(|r| r.method == reference) {
        if let Some(o) = rows.iter().find(|o| o.method == method && o.subject_id == r.subject_id) {
            a.push(r.masd_mm);
            b.push(o.masd_mm);
        }
    }
    match wilcoxon_signed_rank(&a, &b) {
        Ok(w) => Ok(w.p_two_sided),
        Err(Error::Degenerate(_)) => Ok(1.0),
        Err(e) => Err(e),
    }
}

pub fn cmd_masd(a: &MasdArgs, out: &mut dyn Write) -> Result<()> {
    let mode = if a.directed { MasdMode::Directed } else { MasdMode::Symmetric };
    let rows: Vec<MasdRow> = if let Some(pairs) = &a.pairs {
        let base = pairs.parent().unwrap_or(Path::new("."));
        let pairs_rows: Vec<PairRow> = read_csv_rows(pairs)?;
        let results = parallel::map_slice(&pairs_rows, |p| -> Result<MasdRow> {
            let o = nifti::load(resolve(base, &p.original))?;
            let c = nifti::load(resolve(base, &p.candidate))?;
            Ok(MasdRow {
                subject_id: p.subject_id.clone(),
                method: p.method.clone(),
                masd_mm: face_distance_report(&o, &c, mode)?,
            })
        });
        results.into_iter().collect::<Result<_>>()?
    } else {
        let (Some(op), Some(cp)) = (&a.original, &a.candidate) else {
            return Err(Error::Argument("need ORIGINAL and CANDIDATE paths or --pairs".into()));
        };
        let o = nifti::load(op)?;
        let c = nifti::load(cp)?;
        vec![MasdRow {
            subject_id: a.subject_id.clone().unwrap_or_else(|| file_stem(op)),
            method: a.method.clone().unwrap_or_else(|| file_stem(cp)),
            masd_mm: face_distance_report(&o, &c, mode)?,
        }]
    };
    let rows_csv = |w: &mut dyn Write| -> std::io::Result<()> {
        writeln!(w, "subject_id,method,masd_mm")?;
        for r in &rows {
            writeln!(w, "{},{},{}", r.subject_id, r.method, fmt_num(r.masd_mm, a.decimals))?;
        }
        Ok(())
    };
    match a.boot {
        None => rows_csv(out).map_err(io_out),
        Some(boot) => {
            if let Some(p) = &a.rows_out {
                let mut buf = Vec::new();
                rows_csv(&mut buf).map_err(io_out)?;
                write_file(p, &buf)?;
            }
            let agg = aggregate_masd(&rows, boot, a.seed, a.reference_method.as_deref())?;
            writeln!(out, "method,n,masd_mm,mean,ci_low,ci_high,n_boot,seed,p_vs_reference,significance")
                .map_err(io_out)?;
            for m in agg {
                let (cell, mean, lo, hi) = match &m.summary {
                    Some(s) => (s.cell(), fmt_num(s.mean, 6), fmt_num(s.ci_low, 6), fmt_num(s.ci_high, 6)),
                    None => (String::new(), String::new(), String::new(), String::new()),
                };
                let (p, stars) = match m.p_vs_reference {
                    Some(p) => (format!("{p:e}"), significance_stars(p).to_string()),
                    None => (String::new(), String::new()),
                };
                writeln!(out, "{},{},\"{cell}\",{mean},{lo},{hi},{boot},{},{p},{stars}", m.method, m.n, a.seed)
                    .map_err(io_out)?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct QualityBatchRow {
    subject_id: String,
    original: PathBuf,
    defaced: PathBuf,
    refaced: PathBuf,
    masks: String,
}

fn parse_mask_spec(arg: &str, base: &Path) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((n, p)) => (n.trim().to_string(), resolve(base, Path::new(p.trim()))),
        None => {
            let p = resolve(base, Path::new(arg.trim()));
            (file_stem(&p), p)
        }
    }
}

/// PSNR/SSIM row for one subject.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityRow {
    pub subject_id: String,
    pub report: QualityReport,
}

fn quality_for(
    subject_id: &str,
    original: &Path,
    defaced: &Path,
    refaced: &Path,
    masks: &[(String, PathBuf)],
) -> Result<QualityRow> {
    let o = nifti::load(original)?;
    let d = nifti::load(defaced)?;
    let r = nifti::load(refaced)?;
    if masks.is_empty() {
        return Err(Error::Argument("at least one change mask is required".into()));
    }
    let loaded: Vec<(String, BinaryMask)> =
        masks.iter().map(|(n, p)| Ok((n.clone(), BinaryMask::from_volume(&nifti::load(p)?)))).collect::<Result<_>>()?;
    let named: Vec<(&str, &BinaryMask)> = loaded.iter().map(|(n, m)| (n.as_str(), m)).collect();
    Ok(QualityRow { subject_id: subject_id.to_string(), report: quality_report(&o, &d, &r, &named)? })
}

pub const QUALITY_METRICS: [&str; 4] = ["psnr_head", "psnr_face", "ssim_head", "ssim_face"];

pub fn quality_metric(r: &QualityReport, name: &str) -> f64 {
    match name {
        "psnr_head" => r.head.psnr,
        "psnr_face" => r.face.psnr,
        "ssim_head" => r.head.ssim,
        _ => r.face.ssim,
    }
}

pub fn cmd_quality(a: &QualityArgs, out: &mut dyn Write) -> Result<()> {
    let rows: Vec<QualityRow> = if let Some(batch) = &a.batch {
        let base = batch.parent().unwrap_or(Path::new("."));
        let batch_rows: Vec<QualityBatchRow> = read_csv_rows(batch)?;
        let res = parallel::map_slice(&batch_rows, |b| {
            let masks: Vec<(String, PathBuf)> =
                b.masks.split(';').filter(|s| !s.trim().is_empty()).map(|s| parse_mask_spec(s, base)).collect();
            quality_for(
                &b.subject_id,
                &resolve(base, &b.original),
                &resolve(base, &b.defaced),
                &resolve(base, &b.refaced),
                &masks,
            )
        });
        res.into_iter().collect::<Result<_>>()?
    } else {
        let (o, d, r) = (a.original.as_ref().unwrap(), a.defaced.as_ref().unwrap(), a.refaced.as_ref().unwrap());
        let masks: Vec<(String, PathBuf)> = a.masks.iter().map(|s| parse_mask_spec(s, Path::new(""))).collect();
        let id = a.subject_id.clone().unwrap_or_else(|| file_stem(o));
        vec![quality_for(&id, o, d, r, &masks)?]
    };
    match a.boot {
        None => {
            writeln!(out, "subject_id,psnr_head,psnr_face,ssim_head,ssim_face,face_masks").map_err(io_out)?;
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.subject_id,
                    fmt_num(r.report.head.psnr, 4),
                    fmt_num(r.report.face.psnr, 4),
                    fmt_num(r.report.head.ssim, 6),
                    fmt_num(r.report.face.ssim, 6),
                    r.report.face_masks.join(";")
                )
                .map_err(io_out)?;
            }
        }
        Some(boot) => {
            writeln!(out, "metric,n,cell,mean,ci_low,ci_high,n_boot,seed").map_err(io_out)?;
            for m in QUALITY_METRICS {
                let vals: Vec<f64> = rows.iter().map(|r| quality_metric(&r.report, m)).collect();
                let line = if vals.iter().all(|v| v.is_finite()) && vals.len() >= 2 {
                    let s = bootstrap_mean(&vals, boot, a.seed)?;
                    format!(
                        "\"{}\",{},{},{}",
                        s.cell(),
                        fmt_num(s.mean, 6),
                        fmt_num(s.ci_low, 6),
                        fmt_num(s.ci_high, 6)
                    )
                } else {
                    // undefined aggregate: infinite PSNR or a single subject
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    format!("\"{}\",{},,", fmt_num(mean, 2), fmt_num(mean, 6))
                };
                writeln!(out, "{m},{},{line},{boot},{}", vals.len(), a.seed).map_err(io_out)?;
            }
        }
    }
    Ok(())
}

pub fn cmd_correlate(a: &CorrelateArgs, out: &mut dyn Write) -> Result<()> {
    let obs = ObservationTable::read_csv(&a.observations)?;
    let pred = PredictionTable::read_csv(&a.predictions)?;
    let report = correlation_report(&pred, &obs, a.boot, a.seed)?;
    match &a.out {
        Some(p) => write_json(p, &report),
        None => {
            let s = serde_json::to_string_pretty(&report)?;
            writeln!(out, "{s}").map_err(io_out)
        }
    }
}

/// Per-subject outcome of the demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSubject {
    pub subject_id: String,
    pub phantom_seed: u64,
    pub removed_voxels: usize,
    #[serde(with = "crate::json_float")]
    pub masd_defaced_mm: f64,
    #[serde(with = "crate::json_float")]
    pub masd_refaced_mm: f64,
    #[serde(with = "crate::json_float")]
    pub psnr_head: f64,
    #[serde(with = "crate::json_float")]
    pub psnr_face: f64,
    #[serde(with = "crate::json_float")]
    pub ssim_head: f64,
    #[serde(with = "crate::json_float")]
    pub ssim_face: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub n: usize,
    pub denoiser: DenoiserKind,
    pub buffer_mm: f64,
    pub masd_mode: MasdMode,
    pub sampler: CascadeConfig,
    pub conventions: DemoConventions,
    pub subjects: Vec<DemoSubject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConventions {
    pub head_mask: String,
    pub defacer: String,
    pub psnr_peak: String,
    pub composite: String,
    pub template: String,
}

pub const TEMPLATE_COHORT: usize = 4;

fn template_seed(seed: u64) -> u64 {
    // stream 0 is not used by cohort members
    ChaCha8Rng::seed_from_u64(seed).random()
}

/// Voxelwise mean of an independent cohort (the population-average image).
pub fn population_template(seed: u64, grid_like: &Volume3D) -> Result<Volume3D> {
    let cohort = generate_cohort(TEMPLATE_COHORT, template_seed(seed))?;
    let mut data = vec![0.0; grid_like.data.len()];
    for p in &cohort {
        grid_like.geometry.ensure_matches(&p.volume.geometry, "template member")?;
        for (d, v) in data.iter_mut().zip(&p.volume.data) {
            *d += v / TEMPLATE_COHORT as f64;
        }
    }
    grid_like.with_data(data)
}

fn run_subject(
    i: usize,
    p: &Phantom,
    template: Option<&Volume3D>,
    a: &DemoArgs,
    cfg: &CascadeConfig,
    mode: MasdMode,
) -> Result<(DemoSubject, Volume3D, Volume3D, BinaryMask)> {
    let orig = &p.volume;
    let cut = quickshear(orig, &p.brain, a.buffer_mm)?;
    let cfg = CascadeConfig { seed: member_seed(cfg.seed, i), ..cfg.clone() };
    let (s1, s2): (Box<dyn Denoiser>, Box<dyn Denoiser>) = match (a.denoiser, template) {
        (DenoiserKind::Oracle, _) => {
            (Box::new(FixedTarget::new(downsample(orig, cfg.downsample)?)), Box::new(FixedTarget::new(orig.clone())))
        }
        (DenoiserKind::Stub, Some(t)) => {
            (Box::new(FixedTarget::new(downsample(t, cfg.downsample)?)), Box::new(ConditionEcho { index: 1 }))
        }
        (DenoiserKind::Stub, None) => unreachable!(),
    };
    let out = cascade_reface(&cut.volume, &cut.removed, s1.as_ref(), s2.as_ref(), &cfg)?;
    let masd_defaced = face_distance_report(orig, &cut.volume, mode)?;
    let masd_refaced = face_distance_report(orig, &out.refaced, mode)?;
    let q = if cut.removed.is_empty() {
        None
    } else {
        Some(quality_report(orig, &cut.volume, &out.refaced, &[("quickshear", &cut.removed)])?)
    };
    let nan = f64::NAN;
    let subject = DemoSubject {
        subject_id: format!("sub-{:02}", i + 1),
        phantom_seed: p.record.seed,
        removed_voxels: cut.removed.count(),
        masd_defaced_mm: masd_defaced,
        masd_refaced_mm: masd_refaced,
        psnr_head: q.as_ref().map_or(nan, |q| q.head.psnr),
        psnr_face: q.as_ref().map_or(nan, |q| q.face.psnr),
        ssim_head: q.as_ref().map_or(nan, |q| q.head.ssim),
        ssim_face: q.as_ref().map_or(nan, |q| q.face.ssim),
    };
    Ok((subject, cut.volume, out.refaced, cut.removed))
}

pub fn cmd_demo(a: &DemoArgs, out: &mut dyn Write) -> Result<DemoManifest> {
    ensure_out_dir(&a.out)?;
    if !(a.buffer_mm >= 0.0) {
        return Err(Error::Argument("--buffer-mm must be >= 0".into()));
    }
    let cfg = CascadeConfig {
        steps: a.sampler.steps,
        eta: a.sampler.eta,
        slab: SlabSpec::new(a.sampler.slab_size, a.sampler.overlap)?,
        downsample: a.sampler.downsample,
        seed: a.seed,
        ..CascadeConfig::default()
    };
    let mode = if a.directed { MasdMode::Directed } else { MasdMode::Symmetric };
    let cohort = generate_cohort(a.n, a.seed)?;
    let template = match a.denoiser {
        DenoiserKind::Stub => Some(population_template(a.seed, &cohort[0].volume)?),
        DenoiserKind::Oracle => None,
    };
    let mut subjects = Vec::new();
    for (i, p) in cohort.iter().enumerate() {
        let (s, defaced, refaced, removed) = run_subject(i, p, template.as_ref(), a, &cfg, mode)?;
        let stem = a.out.join(&s.subject_id);
        let name = |suffix: &str| PathBuf::from(format!("{}_{suffix}", stem.display()));
        nifti::save(&p.volume, name("original.nii.gz"))?;
        nifti::save(&defaced, name("defaced.nii.gz"))?;
        nifti::save(&refaced, name("refaced.nii.gz"))?;
        nifti::save_mask(&removed, name("removed.nii.gz"))?;
        nifti::save_mask(&p.brain, name("brain.nii.gz"))?;
        write_json(&name("geometry.json"), &p.record)?;
        subjects.push(s);
    }
    if let Some(t) = &template {
        nifti::save(t, a.out.join("template.nii.gz"))?;
    }
    let mut csv = String::from("subject_id,masd_defaced_mm,masd_refaced_mm,psnr_head,psnr_face,ssim_head,ssim_face\n");
    for s in &subjects {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.subject_id,
            fmt_num(s.masd_defaced_mm, 3),
            fmt_num(s.masd_refaced_mm, 3),
            fmt_num(s.psnr_head, 4),
            fmt_num(s.psnr_face, 4),
            fmt_num(s.ssim_head, 6),
            fmt_num(s.ssim_face, 6)
        ));
    }
    write_file(&a.out.join("results.csv"), csv.as_bytes())?;
    let manifest = DemoManifest {
        tool: "refaudit".into(),
        version: VERSION.into(),
        seed: a.seed,
        n: a.n,
        denoiser: a.denoiser,
        buffer_mm: a.buffer_mm,
        masd_mode: mode,
        sampler: cfg,
        conventions: DemoConventions {
            head_mask: HEAD_MASK_VERSION.into(),
            defacer: QUICKSHEAR_VERSION.into(),
            psnr_peak: PEAK_CONVENTION.into(),
            composite: "generated voxels kept inside the removed mask only".into(),
            template: format!("voxelwise mean of {TEMPLATE_COHORT} independent phantoms"),
        },
        subjects,
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    out.write_all(csv.as_bytes()).map_err(io_out)?;
    Ok(manifest)
}
