//! OT chaining: cross-threshold chains within one filtration, cross-level
//! fusion of sub- and superlevel survivors, Top-K selection and backprojection.
//!
//! Superlevel features live on the negated axis `-A`. For cross-level
//! comparison and backprojection they are moved to the positive axis
//! `v ↦ 1 + v`, where a superlevel death `d̃` becomes `1 - |d̃|`.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtration::FiltrationTag;
use crate::grid_io::{BinaryMask, ScoreGrid};
use crate::persistence::{PersistenceDiagram, PersistencePoint};
use crate::transport::{sinkhorn_diagrams, SinkhornConfig, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub alpha: f64,
    pub top_m: usize,
    pub top_k: usize,
    pub delta_sub: f64,
    pub delta_sup: f64,
    pub aggregate: Aggregate,
    pub restrict_component: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            top_m: 8,
            top_k: 1,
            delta_sub: 0.2,
            delta_sup: 0.2,
            aggregate: Aggregate::Sum,
            restrict_component: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Validation(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.top_m == 0 || self.top_k == 0 {
            return Err(Error::Validation("top_m and top_k must be positive".into()));
        }
        if self.top_k > self.top_m {
            return Err(Error::Validation(format!(
                "top_k = {} exceeds top_m = {}",
                self.top_k, self.top_m
            )));
        }
        for (name, d) in [("delta_sub", self.delta_sub), ("delta_sup", self.delta_sup)] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Validation(format!("{name} must lie in [0,1], got {d}")));
            }
        }
        Ok(())
    }
}

/// A feature tracked through consecutive per-threshold diagrams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureChain {
    pub tag: FiltrationTag,
    pub dim: usize,
    /// Index into each per-threshold diagram, `None` outside the chain's span.
    pub members: Vec<Option<usize>>,
    pub score: f64,
    /// Member from the last diagram containing the chain.
    pub representative: PersistencePoint,
    first: usize,
}

impl FeatureChain {
    pub fn first_threshold(&self) -> usize {
        self.first
    }

    pub fn span(&self) -> usize {
        self.members.iter().filter(|m| m.is_some()).count()
    }

    pub fn persistence(&self) -> f64 {
        self.representative.persistence()
    }

    /// Representative `(birth, death)` on the positive score axis.
    pub fn common_axis(&self) -> (f64, f64) {
        let p = &self.representative;
        match self.tag {
            FiltrationTag::Sublevel => (p.birth, p.death),
            FiltrationTag::Superlevel => (1.0 + p.birth, 1.0 + p.death),
        }
    }
}

/// Stability of row `idx`: `max_j Π(i,j) / (1 + sqrt C(i,j)) · α · pers`,
/// diagonal columns included.
pub fn pair_score(plan: &TransportPlan, idx: usize, pers: f64, alpha: f64) -> f64 {
    let best = (0..plan.cols)
        .map(|j| plan.get(idx, j) / (1.0 + plan.cost.get(idx, j).sqrt()))
        .fold(0.0, f64::max);
    best * alpha * pers
}

fn coords(d: &PersistenceDiagram) -> Vec<(f64, f64)> {
    d.points.iter().map(|p| (p.birth, p.death)).collect()
}

fn rank_order(a: (f64, f64, (usize, usize)), b: (f64, f64, (usize, usize))) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(b.1.total_cmp(&a.1))
        .then(a.2.cmp(&b.2))
}

struct Building {
    members: Vec<Option<usize>>,
    first: usize,
    last: usize,
    sum: f64,
    steps: usize,
}

/// Chain per-threshold diagrams of one filtration and dimension (ordered by threshold).
pub fn chain_filtration(
    diagrams: &[PersistenceDiagram],
    cfg: &ChainConfig,
    sinkhorn_cfg: &SinkhornConfig,
) -> Result<Vec<FeatureChain>> {
    let n = diagrams.len();
    let Some(first) = diagrams.first() else {
        return Ok(vec![]);
    };
    let (tag, dim) = (first.tag, first.dim);
    if diagrams.iter().any(|d| d.tag != tag || d.dim != dim) {
        return Err(Error::Validation("diagrams in one chain must share tag and dim".into()));
    }

    let nonempty: Vec<usize> = (0..n).filter(|&k| !diagrams[k].is_empty()).collect();
    let mut built: Vec<Building> = Vec::new();
    if nonempty.len() < 2 {
        if let Some(&k) = nonempty.first() {
            for (i, p) in diagrams[k].points.iter().enumerate() {
                let mut members = vec![None; n];
                members[k] = Some(i);
                built.push(Building {
                    members,
                    first: k,
                    last: k,
                    sum: cfg.alpha * p.persistence(),
                    steps: 1,
                });
            }
        }
    } else {
        // chain id of each point in the current diagram
        let mut active: Vec<Option<usize>> = Vec::new();
        let start = |built: &mut Vec<Building>, k: usize, i: usize| {
            let mut members = vec![None; n];
            members[k] = Some(i);
            built.push(Building {
                members,
                first: k,
                last: k,
                sum: 0.0,
                steps: 0,
            });
            built.len() - 1
        };
        for i in 0..diagrams[0].len() {
            active.push(Some(start(&mut built, 0, i)));
        }
        for k in 0..n - 1 {
            let (p, q) = (&diagrams[k], &diagrams[k + 1]);
            let mut next: Vec<Option<usize>> = vec![None; q.len()];
            if !p.is_empty() {
                let plan = sinkhorn_diagrams(&coords(p), &coords(q), sinkhorn_cfg)?;
                let mut eligible = Vec::new();
                for (i, point) in p.points.iter().enumerate() {
                    let chain = active[i].expect("every point belongs to a chain");
                    built[chain].sum += pair_score(&plan, i, point.persistence(), cfg.alpha);
                    built[chain].steps += 1;
                    let argmax = (0..plan.cols)
                        .max_by(|&a, &b| plan.get(i, a).total_cmp(&plan.get(i, b)).then(b.cmp(&a)))
                        .expect("plan has columns");
                    if argmax < q.len() {
                        eligible.push(i);
                    }
                }
                let mut candidates: Vec<(f64, usize, usize)> = eligible
                    .iter()
                    .flat_map(|&i| (0..q.len()).map(move |j| (i, j)))
                    .map(|(i, j)| (plan.get(i, j), i, j))
                    .collect();
                candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut row_used = vec![false; p.len()];
                for (_, i, j) in candidates {
                    if row_used[i] || next[j].is_some() {
                        continue;
                    }
                    row_used[i] = true;
                    let chain = active[i].expect("active");
                    built[chain].members[k + 1] = Some(j);
                    built[chain].last = k + 1;
                    next[j] = Some(chain);
                }
            }
            for (j, slot) in next.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = Some(start(&mut built, k + 1, j));
                }
            }
            active = next;
        }
    }

    let mut chains: Vec<FeatureChain> = built
        .into_iter()
        .map(|b| {
            let idx = b.members[b.last].expect("last member present");
            let score = match cfg.aggregate {
                Aggregate::Sum => b.sum,
                Aggregate::Mean if b.steps > 0 => b.sum / b.steps as f64,
                Aggregate::Mean => 0.0,
            };
            FeatureChain {
                tag,
                dim,
                members: b.members,
                score,
                representative: diagrams[b.last].points[idx],
                first: b.first,
            }
        })
        .collect();
    sort_chains(&mut chains);
    chains.truncate(cfg.top_m);
    Ok(chains)
}

/// Descending score, then persistence, then birth cell.
pub fn sort_chains(chains: &mut [FeatureChain]) {
    chains.sort_by(|a, b| {
        rank_order(
            (a.score, a.persistence(), a.representative.birth_cell),
            (b.score, b.persistence(), b.representative.birth_cell),
        )
        .then(a.dim.cmp(&b.dim))
        .then(a.first.cmp(&b.first))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub chain: FeatureChain,
    pub score: f64,
}

/// Cross-level scores for every chain on both sides, ranked best first.
pub fn cross_level_rank(
    sub_chains: &[FeatureChain],
    sup_chains: &[FeatureChain],
    cfg: &ChainConfig,
    sinkhorn_cfg: &SinkhornConfig,
) -> Result<Vec<ScoredCandidate>> {
    if sub_chains.is_empty() && sup_chains.is_empty() {
        return Ok(vec![]);
    }
    let sub: Vec<(f64, f64)> = sub_chains.iter().map(FeatureChain::common_axis).collect();
    let sup: Vec<(f64, f64)> = sup_chains.iter().map(FeatureChain::common_axis).collect();
    let plan = sinkhorn_diagrams(&sub, &sup, sinkhorn_cfg)?;
    let back = plan.transposed();
    let mut out: Vec<ScoredCandidate> = sub_chains
        .iter()
        .enumerate()
        .map(|(i, c)| ScoredCandidate {
            chain: c.clone(),
            score: pair_score(&plan, i, c.persistence(), cfg.alpha),
        })
        .chain(sup_chains.iter().enumerate().map(|(j, c)| ScoredCandidate {
            chain: c.clone(),
            score: pair_score(&back, j, c.persistence(), cfg.alpha),
        }))
        .collect();
    out.sort_by(|a, b| {
        rank_order(
            (a.score, a.chain.persistence(), a.chain.representative.birth_cell),
            (b.score, b.chain.persistence(), b.chain.representative.birth_cell),
        )
        .then(a.chain.tag.cmp(&b.chain.tag))
        .then(a.chain.dim.cmp(&b.chain.dim))
    });
    Ok(out)
}

/// The final candidate set: best `top_k` of [`cross_level_rank`].
pub fn cross_level_select(
    sub_chains: &[FeatureChain],
    sup_chains: &[FeatureChain],
    cfg: &ChainConfig,
    sinkhorn_cfg: &SinkhornConfig,
) -> Result<Vec<ScoredCandidate>> {
    let mut ranked = cross_level_rank(sub_chains, sup_chains, cfg, sinkhorn_cfg)?;
    ranked.truncate(cfg.top_k);
    Ok(ranked)
}

/// `τ_bp(c) = max(0, d_c - δ_f(c))` with `d_c` on the positive score axis.
pub fn backprojection_level(chain: &FeatureChain, cfg: &ChainConfig) -> f64 {
    let (_, death) = chain.common_axis();
    let delta = match chain.tag {
        FiltrationTag::Sublevel => cfg.delta_sub,
        FiltrationTag::Superlevel => cfg.delta_sup,
    };
    (death - delta).max(0.0)
}

/// 4-connected component of `mask` containing `seed`; empty if the seed is outside it.
fn component_of(mask: &BinaryMask, seed: (usize, usize)) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let mut out = BinaryMask::empty(h, w);
    if !mask.get(seed.0, seed.1) {
        return out;
    }
    let mut queue = VecDeque::from([seed]);
    out.set(seed.0, seed.1, true);
    while let Some((r, c)) = queue.pop_front() {
        let mut push = |rr: usize, cc: usize| {
            if mask.get(rr, cc) && !out.get(rr, cc) {
                out.set(rr, cc, true);
                queue.push_back((rr, cc));
            }
        };
        if r > 0 {
            push(r - 1, c);
        }
        if r + 1 < h {
            push(r + 1, c);
        }
        if c > 0 {
            push(r, c - 1);
        }
        if c + 1 < w {
            push(r, c + 1);
        }
    }
    out
}

/// Union of the pixel supports `{A >= τ_bp(c)}` of the candidates.
pub fn backproject(candidates: &[ScoredCandidate], grid: &ScoreGrid, cfg: &ChainConfig) -> BinaryMask {
    let mut mask = BinaryMask::empty(grid.height(), grid.width());
    for cand in candidates {
        let level = backprojection_level(&cand.chain, cfg);
        let support = grid.superlevel(level);
        if cfg.restrict_component {
            mask.union_with(&component_of(&support, cand.chain.representative.birth_cell));
        } else {
            mask.union_with(&support);
        }
    }
    mask
}
