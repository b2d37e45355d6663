//! End-to-end segmentation of one score grid, and corpus benchmarking.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaining::{
    backproject, backprojection_level, chain_filtration, cross_level_rank, sort_chains, ChainConfig,
    FeatureChain, ScoredCandidate,
};
use crate::error::{Error, Result};
use crate::filtration::{build_complex, make_schedule, FiltrationTag, ScheduleMode};
use crate::grid_io::{BinaryMask, RawGrid, ScoreGrid};
use crate::metrics::{aggregate, score, threshold_baseline, MeanScores, PixelScores};
use crate::persistence::{compute_h0, compute_h1, diagram_at, PersistenceDiagram};
use crate::rng::sample_seed;
use crate::transport::SinkhornConfig;
use crate::ttt::{adapt, binarize, build_features, TttConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub thresholds: usize,
    pub threshold_mode: ScheduleMode,
    pub chain: ChainConfig,
    pub sinkhorn: SinkhornConfig,
    pub ttt: TttConfig,
    pub skip_ttt: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            thresholds: 10,
            threshold_mode: ScheduleMode::Uniform,
            chain: ChainConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            ttt: TttConfig::default(),
            skip_ttt: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds < 2 {
            return Err(Error::Validation(format!(
                "at least 2 thresholds are required, got {}",
                self.thresholds
            )));
        }
        if !(self.sinkhorn.epsilon > 0.0) || self.sinkhorn.max_iter == 0 {
            return Err(Error::Validation("epsilon must be > 0 and max_iter >= 1".into()));
        }
        self.chain.validate()?;
        self.ttt.validate()
    }
}

/// A selected feature as written to run manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub tag: FiltrationTag,
    pub dim: usize,
    /// On the filtration's own axis.
    pub birth: f64,
    pub death: f64,
    /// On the positive score axis.
    pub birth_score: f64,
    pub death_score: f64,
    pub score: f64,
    pub tau_bp: f64,
    pub birth_cell: (usize, usize),
    pub span: usize,
}

impl CandidateRecord {
    pub fn new(cand: &ScoredCandidate, cfg: &ChainConfig) -> Self {
        let rep = &cand.chain.representative;
        let (birth_score, death_score) = cand.chain.common_axis();
        Self {
            tag: cand.chain.tag,
            dim: cand.chain.dim,
            birth: rep.birth,
            death: rep.death,
            birth_score,
            death_score,
            score: cand.score,
            tau_bp: backprojection_level(&cand.chain, cfg),
            birth_cell: rep.birth_cell,
            span: cand.chain.span(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub taus: Vec<f64>,
    /// Full diagrams: sub H0, sub H1, sup H0, sup H1.
    pub diagrams: Vec<PersistenceDiagram>,
    pub sub_chains: Vec<FeatureChain>,
    pub sup_chains: Vec<FeatureChain>,
    /// Every survivor ranked by cross-level score, before Top-K truncation.
    pub ranked: Vec<ScoredCandidate>,
    pub candidates: Vec<CandidateRecord>,
    pub pseudo: BinaryMask,
    pub mask: BinaryMask,
    pub loss_trace: Vec<f64>,
    pub timings: Vec<StageTiming>,
}

impl Segmentation {
    /// Pseudo-label from the best `k` ranked candidates.
    pub fn pseudo_for_k(&self, grid: &ScoreGrid, cfg: &ChainConfig, k: usize) -> BinaryMask {
        backproject(&self.ranked[..k.min(self.ranked.len())], grid, cfg)
    }
}

struct Clock {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

fn survivors(
    grid: &ScoreGrid,
    tag: FiltrationTag,
    levels: &[f64],
    cfg: &PipelineConfig,
    diagrams: &mut Vec<PersistenceDiagram>,
) -> Result<Vec<FeatureChain>> {
    let complex = build_complex(grid, tag);
    let full = [compute_h0(&complex), compute_h1(&complex)];
    let mut chains = Vec::new();
    for d in &full {
        let per_level: Vec<PersistenceDiagram> = levels.iter().map(|&t| diagram_at(d, t)).collect();
        chains.extend(chain_filtration(&per_level, &cfg.chain, &cfg.sinkhorn)?);
    }
    sort_chains(&mut chains);
    chains.truncate(cfg.chain.top_m);
    diagrams.extend(full);
    Ok(chains)
}

/// Schedule, both filtrations, chaining, cross-level Top-K, backprojection,
/// then (unless skipped) test-time adaptation and binarization.
pub fn segment_grid(
    grid: &ScoreGrid,
    features: Option<&RawGrid>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Segmentation> {
    cfg.validate()?;
    let mut clock = Clock::new();
    let schedule = make_schedule(grid, cfg.thresholds, cfg.threshold_mode)?;
    clock.lap("schedule");

    let mut diagrams = Vec::with_capacity(4);
    let sub_chains = survivors(
        grid,
        FiltrationTag::Sublevel,
        &schedule.axis_levels(FiltrationTag::Sublevel),
        cfg,
        &mut diagrams,
    )?;
    let sup_chains = survivors(
        grid,
        FiltrationTag::Superlevel,
        &schedule.axis_levels(FiltrationTag::Superlevel),
        cfg,
        &mut diagrams,
    )?;
    clock.lap("persistence+chaining");

    let ranked = cross_level_rank(&sub_chains, &sup_chains, &cfg.chain, &cfg.sinkhorn)?;
    let selected = &ranked[..cfg.chain.top_k.min(ranked.len())];
    let candidates = selected.iter().map(|c| CandidateRecord::new(c, &cfg.chain)).collect();
    let pseudo = backproject(selected, grid, &cfg.chain);
    clock.lap("cross-level+backprojection");

    let (mask, loss_trace) = if cfg.skip_ttt {
        (pseudo.clone(), Vec::new())
    } else {
        let feats = build_features(grid, features)?;
        let ttt = TttConfig { seed, ..cfg.ttt.clone() };
        let adapted = adapt(&feats, &pseudo, &ttt)?;
        (binarize(&feats, &adapted.params), adapted.trace)
    };
    clock.lap("ttt");

    Ok(Segmentation {
        taus: schedule.taus().to_vec(),
        diagrams,
        sub_chains,
        sup_chains,
        ranked,
        candidates,
        pseudo,
        mask,
        loss_trace,
        timings: clock.timings,
    })
}

/// One corpus entry; samples without ground truth are skipped.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub grid: ScoreGrid,
    pub gt: Option<BinaryMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub seed: u64,
    pub topoot: PixelScores,
    pub thr: PixelScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub skipped: Vec<String>,
    pub topoot: MeanScores,
    pub thr: MeanScores,
    pub thr_c: f64,
}

/// Segment and score every sample against the `μ + cσ` baseline.
///
/// Samples are ordered by name before seeds are derived, so the report does
/// not depend on input order or on the degree of parallelism.
pub fn bench(
    samples: Vec<Sample>,
    cfg: &PipelineConfig,
    global_seed: u64,
    thr_c: f64,
    jobs: Option<usize>,
) -> Result<BenchReport> {
    cfg.validate()?;
    let mut samples = samples;
    samples.sort_by(|a, b| a.name.cmp(&b.name));
    let mut skipped = Vec::new();
    let mut work = Vec::new();
    for (i, s) in samples.into_iter().enumerate() {
        match s.gt {
            Some(gt) => work.push((i as u64, s.name, s.grid, gt)),
            None => {
                log::warn!("sample {} has no ground truth; skipped", s.name);
                skipped.push(s.name);
            }
        }
    }
    if work.is_empty() {
        return Err(Error::Empty("corpus has no samples with ground truth".into()));
    }
    let run = |(idx, name, grid, gt): &(u64, String, ScoreGrid, BinaryMask)| -> Result<BenchRow> {
        let seed = sample_seed(global_seed, *idx);
        let seg = segment_grid(grid, None, cfg, seed)?;
        Ok(BenchRow {
            name: name.clone(),
            seed,
            topoot: score(&seg.mask, gt)?,
            thr: score(&threshold_baseline(grid, thr_c), gt)?,
        })
    };
    let rows: Vec<BenchRow> = match jobs {
        Some(1) => work.iter().map(run).collect::<Result<_>>()?,
        _ => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
            pool.install(|| work.par_iter().map(run).collect::<Result<_>>())?
        }
    };
    let topoot = aggregate(&rows.iter().map(|r| r.topoot).collect::<Vec<_>>())?;
    let thr = aggregate(&rows.iter().map(|r| r.thr).collect::<Vec<_>>())?;
    Ok(BenchReport {
        rows,
        skipped,
        topoot,
        thr,
        thr_c,
    })
}

impl BenchReport {
    pub fn markdown(&self) -> String {
        let mut out = String::from("| Method | Prec. | Rec. | F1 | IoU |\n|---|---|---|---|---|\n");
        for (name, m) in [
            ("TopoOT".to_string(), &self.topoot),
            (format!("THR (μ + {}σ)", self.thr_c), &self.thr),
        ] {
            out.push_str(&format!(
                "| {name} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                m.precision, m.recall, m.f1, m.iou
            ));
        }
        out.push_str(&format!("\n{} samples", self.rows.len()));
        if !self.skipped.is_empty() {
            out.push_str(&format!(", {} skipped without ground truth", self.skipped.len()));
        }
        out.push('\n');
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("sample,method,tp,fp,fn,tn,precision,recall,f1,iou\n");
        for r in &self.rows {
            for (method, s) in [("topoot", &r.topoot), ("thr", &r.thr)] {
                out.push_str(&format!("{},{method},{}\n", r.name, scores_csv(s)));
            }
        }
        out
    }
}

pub fn scores_csv(s: &PixelScores) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        s.tp, s.fp, s.fn_, s.tn, s.precision, s.recall, s.f1, s.iou
    )
}
