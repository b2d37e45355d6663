//! Command-line interface: `segment`, `pd`, `ot-match`, `eval`, `synth`, `bench`.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure. The log
//! level is read from `TOPOOT_LOG` (default `warn`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::chaining::{Aggregate, ChainConfig};
use crate::error::{Error, Result};
use crate::filtration::{build_complex, FiltrationTag, ScheduleMode};
use crate::grid_io::{
    blob_corpus, decode_raw_f32, encode_raw_f32, load_grid, load_mask, save_mask, synth, BinaryMask,
    GridFormat, ScoreGrid, SyntheticSpec,
};
use crate::metrics::{aggregate, score, threshold_baseline, PixelScores, DEFAULT_THR_C};
use crate::persistence::{compute_h0, compute_h1, from_csv, to_csv};
use crate::pipeline::{bench, scores_csv, segment_grid, CandidateRecord, PipelineConfig, Sample, StageTiming};
use crate::rng::sample_seed;
use crate::transport::{augment, exact_ot, sinkhorn, SinkhornConfig, Slot, EXACT_MAX_SLOTS};
use crate::ttt::TttConfig;

pub const LOG_ENV: &str = "TOPOOT_LOG";

#[derive(Debug, Parser)]
#[command(name = "topoot", version, about = "Topology-guided anomaly segmentation of score maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one or more score grids and write masks plus a run manifest.
    Segment(SegmentArgs),
    /// Dump H0/H1 persistence diagrams as CSV.
    Pd(PdArgs),
    /// Transport plan between two diagram CSVs.
    OtMatch(OtMatchArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Generate synthetic score grids with ground-truth masks.
    Synth(SynthArgs),
    /// Segment and evaluate a corpus against the threshold baseline.
    Bench(BenchArgs),
}

/// Every pipeline knob, shared by `segment` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Number of thresholds in the schedule.
    #[arg(long, default_value_t = 10)]
    pub thresholds: usize,
    #[arg(long, value_enum, default_value_t = ScheduleMode::Uniform)]
    pub threshold_mode: ScheduleMode,
    /// Weight of persistence in the stability score.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Candidates kept after cross-level ranking.
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    /// Chains kept per filtration.
    #[arg(long, default_value_t = 8)]
    pub top_m: usize,
    #[arg(long, default_value_t = 0.2)]
    pub delta_sub: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delta_sup: f64,
    /// Keep only the connected component containing each candidate's birth cell.
    #[arg(long)]
    pub restrict_component: bool,
    #[arg(long, value_enum, default_value_t = Aggregate::Sum)]
    pub aggregate: Aggregate,
    /// Entropic regularization.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Weight of the contrastive term.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.4)]
    pub margin: f64,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Pixel pairs sampled per optimizer step.
    #[arg(long, default_value_t = 256)]
    pub pairs: usize,
    /// Pixels per optimizer step.
    #[arg(long, default_value_t = 32)]
    pub batch_pixels: usize,
    /// Emit the backprojected pseudo-label without test-time training.
    #[arg(long)]
    pub skip_ttt: bool,
    /// Global seed; per-sample seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl PipelineArgs {
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            thresholds: self.thresholds,
            threshold_mode: self.threshold_mode,
            chain: ChainConfig {
                alpha: self.alpha,
                top_m: self.top_m,
                top_k: self.top_k,
                delta_sub: self.delta_sub,
                delta_sup: self.delta_sup,
                aggregate: self.aggregate,
                restrict_component: self.restrict_component,
            },
            sinkhorn: SinkhornConfig {
                epsilon: self.epsilon,
                max_iter: self.max_iter,
                tol: self.tol,
            },
            ttt: TttConfig {
                lambda: self.lambda,
                margin: self.margin,
                epochs: self.epochs,
                lr: self.lr,
                pairs: self.pairs,
                batch_pixels: self.batch_pixels,
                seed: self.seed,
            },
            skip_ttt: self.skip_ttt,
        }
    }

    fn validated(&self) -> Result<PipelineConfig> {
        let cfg = self.config();
        cfg.validate().map_err(as_usage)?;
        if self.jobs == Some(0) {
            return Err(Error::Usage("--jobs must be >= 1".into()));
        }
        Ok(cfg)
    }
}

fn as_usage(e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::Usage(m),
        other => other,
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Score grids (PGM, PNG, raw-f32 or CSV).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<GridFormat>,
    /// Per-pixel feature file (raw-f32, any channel count); single input only.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Also write the pseudo-label mask.
    #[arg(long)]
    pub save_pseudo: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TagChoice {
    Sub,
    Sup,
    Both,
}

#[derive(Debug, Args)]
pub struct PdArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<GridFormat>,
    #[arg(long, value_enum, default_value_t = TagChoice::Both)]
    pub tag: TagChoice,
    /// Output CSV (stdout when omitted).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OtMatchArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Also solve the unregularized problem (small instances only).
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Thr,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted masks (`<name>.mask.png`, `<name>.png` or `<name>.pgm`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth masks (`<name>.gt.png`, `<name>.png`, ...).
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory of score grids, needed by the baseline.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Baseline threshold is `μ + c·σ`.
    #[arg(long, default_value_t = DEFAULT_THR_C)]
    pub c: f64,
    /// Directory for `per_sample.csv`, `aggregate.csv` and `report.md`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// JSON description of one grid; a blob corpus is generated when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Corpus directory of score grids with `<name>.gt.png` masks.
    pub corpus: PathBuf,
    /// Directory for `report.md` and `report.csv`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THR_C)]
    pub c: f64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment(a) => cmd_segment(&a),
        Command::Pd(a) => cmd_pd(&a),
        Command::OtMatch(a) => cmd_ot_match(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

/// Files written as `<path>.partial` and renamed once every write succeeded.
#[derive(Default)]
struct Staged {
    files: Vec<PathBuf>,
}

impl Staged {
    fn partial(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".partial");
        PathBuf::from(name)
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        let tmp = Self::partial(&path);
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        self.files.push(path);
        Ok(())
    }

    fn mask(&mut self, path: PathBuf, mask: &BinaryMask) -> Result<()> {
        save_mask(mask, &Self::partial(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn commit(self) -> Result<()> {
        for path in self.files {
            let tmp = Self::partial(&path);
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_input(path: &Path, format: Option<GridFormat>) -> Result<ScoreGrid> {
    load_grid(path, format.unwrap_or_else(|| GridFormat::from_path(path)))
}

/// File name without its final extension, and without a `.mask`/`.gt` tag.
pub fn sample_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    stem.strip_suffix(".mask")
        .or_else(|| stem.strip_suffix(".gt"))
        .unwrap_or(stem)
        .to_string()
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))
}

#[derive(Serialize)]
struct SampleManifest {
    input: PathBuf,
    name: String,
    seed: u64,
    height: usize,
    width: usize,
    thresholds: Vec<f64>,
    candidates: Vec<CandidateRecord>,
    pseudo_pixels: usize,
    mask_pixels: usize,
    final_loss: Option<f64>,
    timings: Vec<StageTiming>,
    mask: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    versions: BTreeMap<&'static str, &'static str>,
    config: &'a PipelineConfig,
    global_seed: u64,
    jobs: Option<usize>,
    seed_rule: &'static str,
    features: Option<&'a Path>,
    samples: Vec<SampleManifest>,
}

fn versions() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([("topoot", env!("CARGO_PKG_VERSION")), ("manifest", "1")])
}

fn cmd_segment(a: &SegmentArgs) -> Result<()> {
    let cfg = a.pipeline.validated()?;
    if a.features.is_some() && a.inputs.len() != 1 {
        return Err(Error::Usage("--features requires exactly one input".into()));
    }
    let mut inputs = a.inputs.clone();
    inputs.sort();
    let mut names: Vec<String> = inputs.iter().map(|p| sample_name(p)).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Usage("inputs must have distinct file stems".into()));
    }
    ensure_dir(&a.out)?;
    let features = match &a.features {
        Some(p) => Some(decode_raw_f32(&fs::read(p).map_err(|e| Error::io(p, e))?)?),
        None => None,
    };
    let pool = thread_pool(a.pipeline.jobs)?;
    let results: Vec<Result<_>> = pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let grid = load_input(path, a.format)?;
                let seed = sample_seed(a.pipeline.seed, i as u64);
                let seg = segment_grid(&grid, features.as_ref(), &cfg, seed)?;
                Ok((path, grid, seed, seg))
            })
            .collect()
    });

    let mut staged = Staged::default();
    let mut samples = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok((path, grid, seed, seg)) => {
                let name = sample_name(path);
                let mask_path = a.out.join(format!("{name}.mask.png"));
                staged.mask(mask_path.clone(), &seg.mask)?;
                if a.save_pseudo {
                    staged.mask(a.out.join(format!("{name}.pseudo.png")), &seg.pseudo)?;
                }
                samples.push(SampleManifest {
                    input: path.clone(),
                    name,
                    seed,
                    height: grid.height(),
                    width: grid.width(),
                    thresholds: seg.taus,
                    candidates: seg.candidates,
                    pseudo_pixels: seg.pseudo.count(),
                    mask_pixels: seg.mask.count(),
                    final_loss: seg.loss_trace.last().copied(),
                    timings: seg.timings,
                    mask: mask_path,
                });
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let manifest = RunManifest {
        tool: "topoot",
        versions: versions(),
        config: &cfg,
        global_seed: a.pipeline.seed,
        jobs: a.pipeline.jobs,
        seed_rule: "sample_seed = mix64(global_seed ^ mix64(index + 1)), index in sorted input order",
        features: a.features.as_deref(),
        samples,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    staged.write(a.out.join("manifest.json"), json.as_bytes())?;
    if let Some(e) = first_err {
        return Err(e);
    }
    staged.commit()
}

fn cmd_pd(a: &PdArgs) -> Result<()> {
    let grid = load_input(&a.input, a.format)?;
    let tags: &[FiltrationTag] = match a.tag {
        TagChoice::Sub => &[FiltrationTag::Sublevel],
        TagChoice::Sup => &[FiltrationTag::Superlevel],
        TagChoice::Both => &[FiltrationTag::Sublevel, FiltrationTag::Superlevel],
    };
    let mut diagrams = Vec::new();
    for &tag in tags {
        let complex = build_complex(&grid, tag);
        let sentinel = complex.max_value() + 1.0;
        for mut d in [compute_h0(&complex), compute_h1(&complex)] {
            d.sort();
            diagrams.push(d.clamped(sentinel));
        }
    }
    let text = to_csv(&diagrams);
    match &a.out {
        Some(path) => {
            let mut staged = Staged::default();
            staged.write(path.clone(), text.as_bytes())?;
            staged.commit()
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(from_csv(&text)?.into_iter().map(|p| (p.birth, p.death)).collect())
}

fn clamp_infinite(sets: &mut [&mut Vec<(f64, f64)>]) {
    let finite_max = sets
        .iter()
        .flat_map(|s| s.iter())
        .flat_map(|&(b, d)| [b, d])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    for s in sets.iter_mut() {
        for p in s.iter_mut() {
            if p.1.is_infinite() {
                p.1 = finite_max + 1.0;
            }
        }
    }
}

fn cmd_ot_match(a: &OtMatchArgs) -> Result<()> {
    let mut p = read_points(&a.first)?;
    let mut q = read_points(&a.second)?;
    clamp_infinite(&mut [&mut p, &mut q]);
    let (ma, mb) = augment(&p, &q)?;
    if ma.is_empty() {
        println!("both diagrams are empty; transport cost 0");
        return Ok(());
    }
    let plan = sinkhorn(&ma, &mb, a.epsilon, a.max_iter, a.tol).map_err(as_usage)?;
    let label = |s: &Slot, j: usize| match s {
        Slot::Point { .. } => format!("q{j}"),
        Slot::Diagonal { .. } => format!("diag{}", j - q.len()),
    };
    let mut out = String::new();
    let _ = writeln!(out, "transport cost: {:.10}", plan.transport_cost());
    let _ = writeln!(
        out,
        "iterations: {}, converged: {}, marginal error: {:.3e}",
        plan.iterations, plan.converged, plan.marginal_error
    );
    if a.exact {
        if ma.len() <= EXACT_MAX_SLOTS {
            let (cost, _) = exact_ot(&ma, &mb)?;
            let _ = writeln!(out, "exact cost: {cost:.10}");
        } else {
            let _ = writeln!(out, "exact cost: skipped (more than {EXACT_MAX_SLOTS} slots)");
        }
    }
    let _ = writeln!(out, "\nplan:");
    let header: Vec<String> = mb.support.iter().enumerate().map(|(j, s)| label(s, j)).collect();
    let _ = writeln!(out, "row,{}", header.join(","));
    for i in 0..plan.rows {
        let row: Vec<String> = plan.row(i).iter().map(|v| format!("{v:.6e}")).collect();
        let name = if i < p.len() { format!("p{i}") } else { format!("diag{}", i - p.len()) };
        let _ = writeln!(out, "{name},{}", row.join(","));
    }
    let _ = writeln!(out, "\nbest partners:");
    let _ = writeln!(out, "point,birth,death,partner,mass,cost,stability");
    for (i, &(b, d)) in p.iter().enumerate() {
        let j = (0..plan.cols)
            .max_by(|&x, &y| {
                let s = |j: usize| plan.get(i, j) / (1.0 + plan.cost.get(i, j).sqrt());
                s(x).total_cmp(&s(y)).then(y.cmp(&x))
            })
            .expect("plan has columns");
        let stab = crate::chaining::pair_score(&plan, i, d - b, a.alpha);
        let _ = writeln!(
            out,
            "p{i},{b},{d},{},{:.6e},{:.6e},{:.6e}",
            label(&mb.support[j], j),
            plan.get(i, j),
            plan.cost.get(i, j),
            stab
        );
    }
    print!("{out}");
    Ok(())
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn has_ext(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn is_tagged(path: &Path, tag: &str) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with(tag))
}

fn find_mask(dir: &Path, name: &str) -> Option<PathBuf> {
    ["gt.png", "gt.pgm", "png", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
}

/// Score grids in `dir`, keyed by sample name. Mask files are ignored.
fn grid_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for path in list_dir(dir)? {
        if !has_ext(&path, &["f32", "raw", "csv", "pgm", "png"]) {
            continue;
        }
        if is_tagged(&path, ".gt") || is_tagged(&path, ".mask") || is_tagged(&path, ".pseudo") {
            continue;
        }
        let name = sample_name(&path);
        if out.insert(name.clone(), path).is_some() {
            return Err(Error::Structural(format!("two grid files for sample {name}")));
        }
    }
    Ok(out)
}

pub fn load_corpus(dir: &Path) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (name, path) in grid_files(dir)? {
        let grid = load_input(&path, None)?;
        let gt_path = ["gt.png", "gt.pgm"]
            .iter()
            .map(|ext| dir.join(format!("{name}.{ext}")))
            .find(|p| p.is_file());
        let gt = gt_path.map(|p| load_mask(&p)).transpose()?;
        samples.push(Sample { name, grid, gt });
    }
    Ok(samples)
}

fn markdown_row(name: &str, s: &crate::metrics::MeanScores) -> String {
    format!(
        "| {name} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
        s.precision, s.recall, s.f1, s.iou
    )
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if a.baseline.is_some() && a.grids.is_none() {
        return Err(Error::Usage("--baseline requires --grids".into()));
    }
    let grids = a.grids.as_deref().map(grid_files).transpose()?;
    let mut per_sample = String::from("sample,method,tp,fp,fn,tn,precision,recall,f1,iou\n");
    let mut ours: Vec<PixelScores> = Vec::new();
    let mut base: Vec<PixelScores> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for path in list_dir(&a.pred)? {
        if !has_ext(&path, &["png", "pgm"]) || is_tagged(&path, ".pseudo") {
            continue;
        }
        let name = sample_name(&path);
        if !seen.insert(name.clone()) {
            continue;
        }
        let Some(gt_path) = find_mask(&a.gt, &name) else {
            log::warn!("no ground truth for {name}; skipped");
            continue;
        };
        let gt = load_mask(&gt_path)?;
        let s = score(&load_mask(&path)?, &gt)?;
        let _ = writeln!(per_sample, "{name},topoot,{}", scores_csv(&s));
        ours.push(s);
        if a.baseline == Some(Baseline::Thr) {
            let grid_path = grids
                .as_ref()
                .and_then(|g| g.get(&name))
                .ok_or_else(|| Error::Structural(format!("no score grid for {name}")))?;
            let b = score(&threshold_baseline(&load_input(grid_path, None)?, a.c), &gt)?;
            let _ = writeln!(per_sample, "{name},thr,{}", scores_csv(&b));
            base.push(b);
        }
    }
    let mean = aggregate(&ours)?;
    let mut agg = String::from("method,count,precision,recall,f1,iou\n");
    let mut md = String::from("| Method | Prec. | Rec. | F1 | IoU |\n|---|---|---|---|---|\n");
    let _ = writeln!(
        agg,
        "topoot,{},{},{},{},{}",
        mean.count, mean.precision, mean.recall, mean.f1, mean.iou
    );
    md.push_str(&markdown_row("TopoOT", &mean));
    if !base.is_empty() {
        let m = aggregate(&base)?;
        let _ = writeln!(agg, "thr,{},{},{},{},{}", m.count, m.precision, m.recall, m.f1, m.iou);
        md.push_str(&markdown_row(&format!("THR (μ + {}σ)", a.c), &m));
    }
    print!("{md}");
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        let mut staged = Staged::default();
        staged.write(out.join("per_sample.csv"), per_sample.as_bytes())?;
        staged.write(out.join("aggregate.csv"), agg.as_bytes())?;
        staged.write(out.join("report.md"), md.as_bytes())?;
        staged.commit()?;
    }
    Ok(())
}

fn write_sample(staged: &mut Staged, dir: &Path, name: &str, spec: &SyntheticSpec) -> Result<()> {
    let (grid, gt) = synth(spec)?;
    let bytes = encode_raw_f32(grid.height(), grid.width(), 1, grid.values());
    staged.write(dir.join(format!("{name}.f32")), &bytes)?;
    staged.mask(dir.join(format!("{name}.gt.png")), &gt)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    let mut staged = Staged::default();
    match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| {
                Error::format(0, format!("{}: {e}", path.display()))
            })?;
            write_sample(&mut staged, &a.out, &sample_name(path), &spec)?;
        }
        None => {
            if a.count == 0 {
                return Err(Error::Usage("--count must be >= 1".into()));
            }
            if a.size < 8 {
                return Err(Error::Usage("--size must be >= 8".into()));
            }
            for (i, spec) in blob_corpus(a.count, a.size, a.seed).iter().enumerate() {
                write_sample(&mut staged, &a.out, &format!("sample_{i:03}"), spec)?;
            }
        }
    }
    staged.commit()
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.pipeline.validated()?;
    let samples = load_corpus(&a.corpus)?;
    if samples.is_empty() {
        return Err(Error::Empty(format!("no score grids in {}", a.corpus.display())));
    }
    let report = bench(samples, &cfg, a.pipeline.seed, a.c, a.pipeline.jobs)?;
    let md = report.markdown();
    print!("{md}");
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        let mut staged = Staged::default();
        staged.write(out.join("report.md"), md.as_bytes())?;
        staged.write(out.join("report.csv"), report.csv().as_bytes())?;
        let config = serde_json::to_string_pretty(&cfg).expect("config serializes");
        staged.write(out.join("config.json"), config.as_bytes())?;
        staged.commit()?;
    }
    Ok(())
}
