#![allow(dead_code)]

use topoot::filtration::FiltrationTag;
use topoot::grid_io::ScoreGrid;
use topoot::persistence::{PersistenceDiagram, PersistencePoint};
use topoot::rng::SplitMix64;
use topoot::ttt::{build_features, loss_and_grad, HeadParams};

pub fn random_grid(h: usize, w: usize, seed: u64) -> ScoreGrid {
    let mut rng = SplitMix64::new(seed);
    ScoreGrid::new(h, w, (0..h * w).map(|_| rng.next_f64() as f32).collect()).unwrap()
}

/// Values drawn from `{0, 1/levels, ..., 1}`, so ties are common.
pub fn quantized_grid(h: usize, w: usize, levels: u64, seed: u64) -> ScoreGrid {
    let mut rng = SplitMix64::new(seed);
    ScoreGrid::new(
        h,
        w,
        (0..h * w)
            .map(|_| ((rng.next_u64() % (levels + 1)) as f64 / levels as f64) as f32)
            .collect(),
    )
    .unwrap()
}

/// Filtration value of each pixel on the tag's axis.
pub fn axis_values(grid: &ScoreGrid, tag: FiltrationTag) -> Vec<f64> {
    grid.values().iter().map(|&v| tag.to_axis(v as f64)).collect()
}

pub fn random_points(rng: &mut SplitMix64, max_points: usize) -> Vec<(f64, f64)> {
    let n = (rng.next_u64() % (max_points as u64 + 1)) as usize;
    (0..n)
        .map(|_| {
            let b = rng.next_f64();
            (b, b + rng.next_f64() * (1.0 - b))
        })
        .collect()
}

pub fn diagram(tag: FiltrationTag, dim: usize, pts: &[(f64, f64)]) -> PersistenceDiagram {
    PersistenceDiagram {
        tag,
        dim,
        points: pts
            .iter()
            .map(|&(birth, death)| PersistencePoint {
                birth,
                death,
                dim,
                tag,
                birth_cell: (0, 0),
            })
            .collect(),
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).unwrap();
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
}

/// Components of `{v <= level}` under 4-connectivity; `None` outside the set.
pub fn components(values: &[f64], h: usize, w: usize, level: f64) -> Vec<Option<usize>> {
    let mut label = vec![None; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if values[start] > level || label[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        label[start] = Some(next);
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            let mut nbrs = Vec::with_capacity(4);
            if r > 0 {
                nbrs.push(p - w);
            }
            if r + 1 < h {
                nbrs.push(p + w);
            }
            if c > 0 {
                nbrs.push(p - 1);
            }
            if c + 1 < w {
                nbrs.push(p + 1);
            }
            for q in nbrs {
                if values[q] <= level && label[q].is_none() {
                    label[q] = Some(next);
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    label
}

/// H0 pairs by flood fill at every distinct value. A component's age is its
/// lowest `(value, row, col)` pixel; the oldest survives each merge.
pub fn h0_oracle(values: &[f64], h: usize, w: usize) -> Vec<(f64, f64, (usize, usize))> {
    let mut levels: Vec<f64> = values.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let key = |p: usize| (values[p], p);
    // creator pixel of the component each active pixel belonged to at the previous level
    let mut prev_creator: Vec<Option<usize>> = vec![None; h * w];
    let mut pairs = Vec::new();
    for &t in &levels {
        let label = components(values, h, w, t);
        let n_comp = label.iter().flatten().max().map_or(0, |m| m + 1);
        let mut creators: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
        let mut oldest_pixel: Vec<Option<usize>> = vec![None; n_comp];
        for p in 0..h * w {
            if let Some(c) = label[p] {
                if let Some(cr) = prev_creator[p] {
                    if !creators[c].contains(&cr) {
                        creators[c].push(cr);
                    }
                }
                if oldest_pixel[c].is_none_or(|o| key(p) < key(o)) {
                    oldest_pixel[c] = Some(p);
                }
            }
        }
        let mut survivor = vec![0; n_comp];
        for c in 0..n_comp {
            if creators[c].is_empty() {
                survivor[c] = oldest_pixel[c].unwrap();
                continue;
            }
            creators[c].sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
            survivor[c] = creators[c][0];
            for &dead in &creators[c][1..] {
                if values[dead] < t {
                    pairs.push((values[dead], t, (dead / w, dead % w)));
                }
            }
        }
        for p in 0..h * w {
            prev_creator[p] = label[p].map(|c| survivor[c]);
        }
    }
    let mut alive: Vec<usize> = prev_creator.iter().flatten().copied().collect();
    alive.sort();
    alive.dedup();
    for a in alive {
        pairs.push((values[a], f64::INFINITY, (a / w, a % w)));
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pairs
}

/// Worst relative error of the analytic gradient against central differences.
pub fn gradient_error(seed: u64, lambda: f64, with_ot: bool) -> f64 {
    let g = random_grid(8, 8, seed);
    let feats = build_features(&g, None).unwrap();
    assert_eq!(feats.channels, 6);
    let mut rng = SplitMix64::new(seed ^ 0xABCD);
    let mut pseudo: Vec<bool> = (0..64).map(|_| rng.next_f64() < 0.3).collect();
    pseudo[0] = true;
    pseudo[1] = false;
    let fg: Vec<usize> = (0..64).filter(|&p| pseudo[p]).collect();
    let bg: Vec<usize> = (0..64).filter(|&p| !pseudo[p]).collect();
    let pick = |rng: &mut SplitMix64, v: &[usize]| v[(rng.next_u64() % v.len() as u64) as usize];
    let mut pairs = Vec::new();
    for k in 0..24 {
        let (p, q) = match k % 3 {
            0 => (pick(&mut rng, &fg), pick(&mut rng, &bg)),
            1 => (pick(&mut rng, &bg), pick(&mut rng, &bg)),
            _ => (pick(&mut rng, &fg), pick(&mut rng, &fg)),
        };
        if p != q {
            pairs.push((p, q));
        }
    }
    let pixels: Vec<usize> = if with_ot { (0..64).collect() } else { Vec::new() };
    let margin = 0.4;
    let params = HeadParams::init(&feats, seed);
    let (_, grad) = loss_and_grad(&params, &feats, &pseudo, &pixels, &pairs, lambda, margin);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..params.theta.len() {
        let mut plus = params.clone();
        plus.theta[i] += h;
        let mut minus = params.clone();
        minus.theta[i] -= h;
        let fp = loss_and_grad(&plus, &feats, &pseudo, &pixels, &pairs, lambda, margin).0.total;
        let fm = loss_and_grad(&minus, &feats, &pseudo, &pixels, &pairs, lambda, margin).0.total;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}
