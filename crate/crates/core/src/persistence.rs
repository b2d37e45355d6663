//! Persistence diagrams of the lower-star cubical filtration.
//!
//! H0 comes from a union-find sweep with the elder rule, H1 from a Z/2
//! reduction of the square boundary columns. Pairs with zero persistence are
//! not reported. Essential classes carry `death = +inf` until they are
//! clamped for export or transport.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtration::{CellKind, CubicalComplex, FiltrationTag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePoint {
    pub birth: f64,
    pub death: f64,
    pub dim: usize,
    pub tag: FiltrationTag,
    /// Pixel `(row, col)` of the vertex whose entry created the class.
    pub birth_cell: (usize, usize),
}

impl PersistencePoint {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_essential(&self) -> bool {
        self.death.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub tag: FiltrationTag,
    pub dim: usize,
    pub points: Vec<PersistencePoint>,
}

impl PersistenceDiagram {
    pub fn empty(tag: FiltrationTag, dim: usize) -> Self {
        Self {
            tag,
            dim,
            points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Replace infinite deaths by `sentinel`.
    pub fn clamped(&self, sentinel: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            if p.death.is_infinite() {
                p.death = sentinel;
            }
        }
        out
    }

    /// Canonical order: (birth, death, birth_cell).
    pub fn sort(&mut self) {
        self.points.sort_by(|a, b| {
            a.birth
                .total_cmp(&b.birth)
                .then(a.death.total_cmp(&b.death))
                .then(a.birth_cell.cmp(&b.birth_cell))
        });
    }

    /// Betti number at `level`: classes with `birth <= level < death`.
    pub fn betti_at(&self, level: f64) -> usize {
        self.points
            .iter()
            .filter(|p| p.birth <= level && level < p.death)
            .count()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Vertex indices in filtration order: by value, then row-major position.
fn vertex_order(complex: &CubicalComplex) -> Vec<usize> {
    let vals = complex.vertex_values();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
    order
}

pub fn compute_h0(complex: &CubicalComplex) -> PersistenceDiagram {
    let (h, w) = (complex.height(), complex.width());
    let vals = complex.vertex_values();
    let order = vertex_order(complex);
    let mut rank = vec![usize::MAX; vals.len()];
    for (k, &v) in order.iter().enumerate() {
        rank[v] = k;
    }
    let mut uf = UnionFind::new(vals.len());
    // Creating vertex of each root; the elder is the one with the smaller rank.
    let mut creator = vec![usize::MAX; vals.len()];
    let mut points = Vec::new();
    let tag = complex.tag();
    let mut roots: Vec<usize> = Vec::with_capacity(4);

    for &v in &order {
        let (r, c) = (v / w, v % w);
        roots.clear();
        let mut visit = |u: usize, uf: &mut UnionFind| {
            if rank[u] < rank[v] {
                let root = uf.find(u);
                if !roots.contains(&root) {
                    roots.push(root);
                }
            }
        };
        if r > 0 {
            visit(v - w, &mut uf);
        }
        if r + 1 < h {
            visit(v + w, &mut uf);
        }
        if c > 0 {
            visit(v - 1, &mut uf);
        }
        if c + 1 < w {
            visit(v + 1, &mut uf);
        }
        if roots.is_empty() {
            creator[v] = v;
            continue;
        }
        let elder = *roots
            .iter()
            .min_by_key(|&&root| rank[creator[root]])
            .expect("nonempty");
        let value = vals[v];
        for &root in roots.iter() {
            if root == elder {
                continue;
            }
            let born = creator[root];
            if vals[born] < value {
                points.push(PersistencePoint {
                    birth: vals[born],
                    death: value,
                    dim: 0,
                    tag,
                    birth_cell: (born / w, born % w),
                });
            }
            uf.parent[root] = elder;
        }
        uf.parent[v] = elder;
    }
    // Every surviving root is an essential component.
    for v in 0..vals.len() {
        if uf.find(v) == v {
            points.push(PersistencePoint {
                birth: vals[creator[v]],
                death: f64::INFINITY,
                dim: 0,
                tag,
                birth_cell: (creator[v] / w, creator[v] % w),
            });
        }
    }
    let mut d = PersistenceDiagram {
        tag,
        dim: 0,
        points,
    };
    d.sort();
    d
}

/// Symmetric difference of two sorted index columns.
fn xor_into(target: &mut Vec<u32>, other: &[u32], scratch: &mut Vec<u32>) {
    scratch.clear();
    let (mut i, mut j) = (0, 0);
    while i < target.len() && j < other.len() {
        match target[i].cmp(&other[j]) {
            Ordering::Less => {
                scratch.push(target[i]);
                i += 1;
            }
            Ordering::Greater => {
                scratch.push(other[j]);
                j += 1;
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    scratch.extend_from_slice(&target[i..]);
    scratch.extend_from_slice(&other[j..]);
    std::mem::swap(target, scratch);
}

pub fn compute_h1(complex: &CubicalComplex) -> PersistenceDiagram {
    let tag = complex.tag();
    let w = complex.width();
    let vals = complex.vertex_values();
    let edges: Vec<_> = complex.edges().collect();
    let squares: Vec<_> = complex.squares().collect();

    let by_filtration = |a: &crate::filtration::Cell, b: &crate::filtration::Cell| {
        a.value
            .total_cmp(&b.value)
            .then(a.lattice().cmp(&b.lattice()))
    };
    let mut edge_order: Vec<usize> = (0..edges.len()).collect();
    edge_order.sort_by(|&a, &b| by_filtration(&edges[a], &edges[b]));
    let mut edge_rank = vec![0u32; edges.len()];
    for (k, &e) in edge_order.iter().enumerate() {
        edge_rank[e] = k as u32;
    }
    let mut square_order: Vec<usize> = (0..squares.len()).collect();
    square_order.sort_by(|&a, &b| by_filtration(&squares[a], &squares[b]));

    let mut pivot_owner: Vec<Option<usize>> = vec![None; edges.len()];
    let mut reduced: Vec<Vec<u32>> = Vec::with_capacity(squares.len());
    let mut scratch = Vec::new();
    let mut points = Vec::new();

    for &s in &square_order {
        let sq = &squares[s];
        let (r, c) = (sq.row, sq.col);
        let mut col: Vec<u32> = [
            complex.edge_index(CellKind::HorizontalEdge, r, c),
            complex.edge_index(CellKind::HorizontalEdge, r + 1, c),
            complex.edge_index(CellKind::VerticalEdge, r, c),
            complex.edge_index(CellKind::VerticalEdge, r, c + 1),
        ]
        .iter()
        .map(|&e| edge_rank[e])
        .collect();
        col.sort_unstable();
        while let Some(&pivot) = col.last() {
            match pivot_owner[pivot as usize] {
                Some(owner) => xor_into(&mut col, &reduced[owner], &mut scratch),
                None => break,
            }
        }
        let slot = reduced.len();
        if let Some(&pivot) = col.last() {
            pivot_owner[pivot as usize] = Some(slot);
            let edge = &edges[edge_order[pivot as usize]];
            if edge.value < sq.value {
                // The later endpoint (in vertex order) creates the edge.
                let cell = edge
                    .vertices()
                    .into_iter()
                    .max_by(|a, b| {
                        let ia = a.0 * w + a.1;
                        let ib = b.0 * w + b.1;
                        vals[ia].total_cmp(&vals[ib]).then(ia.cmp(&ib))
                    })
                    .expect("edge has vertices");
                points.push(PersistencePoint {
                    birth: edge.value,
                    death: sq.value,
                    dim: 1,
                    tag,
                    birth_cell: cell,
                });
            }
        }
        reduced.push(col);
    }
    let mut d = PersistenceDiagram {
        tag,
        dim: 1,
        points,
    };
    d.sort();
    d
}

/// Features born by `tau`, observed up to `tau`; zero-length observations dropped.
pub fn diagram_at(full: &PersistenceDiagram, tau: f64) -> PersistenceDiagram {
    let points = full
        .points
        .iter()
        .filter(|p| p.birth <= tau)
        .map(|p| PersistencePoint {
            death: p.death.min(tau),
            ..*p
        })
        .filter(|p| p.birth < p.death)
        .collect();
    PersistenceDiagram {
        tag: full.tag,
        dim: full.dim,
        points,
    }
}

#[inline]
fn linf(a: &PersistencePoint, b: &PersistencePoint) -> f64 {
    (a.birth - b.birth).abs().max((a.death - b.death).abs())
}

/// Is there a perfect matching of the diagonal-augmented bipartite graph at radius `r`?
fn matchable(a: &[PersistencePoint], b: &[PersistencePoint], r: f64) -> bool {
    let (m, n) = (a.len(), b.len());
    let size = m + n;
    // Left: a_0..a_m, then diagonal copies of b. Right: b_0..b_n, then diagonal copies of a.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); size];
    for i in 0..m {
        for j in 0..n {
            if linf(&a[i], &b[j]) <= r {
                adj[i].push(j);
            }
        }
        if a[i].persistence() / 2.0 <= r {
            adj[i].push(n + i);
        }
    }
    for j in 0..n {
        if b[j].persistence() / 2.0 <= r {
            adj[m + j].push(j);
        }
        adj[m + j].extend(n..n + m);
    }
    let mut match_right: Vec<Option<usize>> = vec![None; size];
    fn augment(
        u: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        match_right: &mut [Option<usize>],
    ) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if match_right[v].is_none_or(|w| augment(w, adj, seen, match_right)) {
                match_right[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut seen = vec![false; size];
    for u in 0..size {
        seen.iter_mut().for_each(|s| *s = false);
        if !augment(u, &adj, &mut seen, &mut match_right) {
            return false;
        }
    }
    true
}

/// Exact bottleneck distance (L∞ ground metric, diagonal allowed).
pub fn bottleneck(d1: &PersistenceDiagram, d2: &PersistenceDiagram) -> f64 {
    let (mut ess1, fin1): (Vec<_>, Vec<_>) = d1.points.iter().copied().partition(|p| p.is_essential());
    let (mut ess2, fin2): (Vec<_>, Vec<_>) = d2.points.iter().copied().partition(|p| p.is_essential());
    if ess1.len() != ess2.len() {
        return f64::INFINITY;
    }
    ess1.sort_by(|a, b| a.birth.total_cmp(&b.birth));
    ess2.sort_by(|a, b| a.birth.total_cmp(&b.birth));
    let essential = ess1
        .iter()
        .zip(&ess2)
        .map(|(a, b)| (a.birth - b.birth).abs())
        .fold(0.0, f64::max);

    let mut candidates = vec![0.0];
    for p in &fin1 {
        candidates.push(p.persistence() / 2.0);
        for q in &fin2 {
            candidates.push(linf(p, q));
        }
    }
    candidates.extend(fin2.iter().map(|q| q.persistence() / 2.0));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // The largest candidate always admits the all-diagonal matching.
    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if matchable(&fin1, &fin2, candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    essential.max(candidates[lo])
}

pub const CSV_HEADER: &str = "dim,tag,birth,death,birth_row,birth_col";

/// CSV with `CSV_HEADER`; values on the filtration axis, infinite deaths written as given.
pub fn to_csv<'a>(diagrams: impl IntoIterator<Item = &'a PersistenceDiagram>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for d in diagrams {
        for p in &d.points {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.dim,
                p.tag.as_str(),
                p.birth,
                p.death,
                p.birth_cell.0,
                p.birth_cell.1
            )
            .expect("writing to a String");
        }
    }
    out
}

/// Parse diagram CSV (header optional). Accepts `inf` deaths.
pub fn from_csv(text: &str) -> Result<Vec<PersistencePoint>> {
    let mut points = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let content = line.trim();
        if content.is_empty() || content.starts_with("dim") {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::format(start, format!("expected 6 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::format(start, format!("bad number {s:?}")))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::format(start, format!("bad integer {s:?}")))
        };
        let tag = FiltrationTag::parse(fields[1])
            .ok_or_else(|| Error::format(start, format!("bad tag {:?}", fields[1])))?;
        let p = PersistencePoint {
            dim: int(fields[0])?,
            tag,
            birth: num(fields[2])?,
            death: num(fields[3])?,
            birth_cell: (int(fields[4])?, int(fields[5])?),
        };
        if p.death < p.birth || p.birth.is_nan() {
            return Err(Error::format(start, "death precedes birth"));
        }
        points.push(p);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::build_complex;
    use crate::grid_io::ScoreGrid;

    fn grid(h: usize, w: usize, v: &[f32]) -> ScoreGrid {
        ScoreGrid::new(h, w, v.to_vec()).unwrap()
    }

    fn pairs(d: &PersistenceDiagram) -> Vec<(f64, f64)> {
        d.points.iter().map(|p| (p.birth, p.death)).collect()
    }

    fn f(x: f32) -> f64 {
        x as f64
    }

    #[test]
    fn constant_grid_single_essential() {
        let k = build_complex(&grid(3, 4, &[0.4; 12]), FiltrationTag::Sublevel);
        assert_eq!(pairs(&compute_h0(&k)), vec![(f(0.4), f64::INFINITY)]);
        assert!(compute_h1(&k).is_empty());
    }

    #[test]
    fn one_by_three_h0() {
        let k = build_complex(&grid(1, 3, &[0.1, 0.9, 0.2]), FiltrationTag::Sublevel);
        let d = compute_h0(&k);
        assert_eq!(pairs(&d), vec![(f(0.1), f64::INFINITY), (f(0.2), f(0.9))]);
        assert_eq!(d.points[1].birth_cell, (0, 2));
    }

    #[test]
    fn ring_h1() {
        let k = build_complex(
            &grid(3, 3, &[0.1, 0.1, 0.1, 0.1, 0.9, 0.1, 0.1, 0.1, 0.1]),
            FiltrationTag::Sublevel,
        );
        assert_eq!(pairs(&compute_h1(&k)), vec![(f(0.1), f(0.9))]);
        // Euler bookkeeping: at 0.1 the ring has V=8, E=8, F=0 so χ=0=β0-β1.
        assert_eq!(k.euler_characteristic_at(f(0.1)), 0);
    }

    #[test]
    fn monotone_gradient_has_no_loops() {
        let v: Vec<f32> = (0..20).map(|i| i as f32 / 19.0).collect();
        let k = build_complex(&grid(4, 5, &v), FiltrationTag::Sublevel);
        assert!(compute_h1(&k).is_empty());
        assert_eq!(compute_h0(&k).len(), 1);
    }

    #[test]
    fn truncation() {
        let full = PersistenceDiagram {
            tag: FiltrationTag::Sublevel,
            dim: 0,
            points: vec![PersistencePoint {
                birth: 0.1,
                death: f64::INFINITY,
                dim: 0,
                tag: FiltrationTag::Sublevel,
                birth_cell: (0, 0),
            }],
        };
        assert_eq!(pairs(&diagram_at(&full, 0.5)), vec![(0.1, 0.5)]);
        let late = PersistenceDiagram {
            points: vec![PersistencePoint {
                birth: 0.2,
                death: 0.9,
                ..full.points[0]
            }],
            ..full.clone()
        };
        assert!(diagram_at(&late, 0.15).is_empty());

        let k = build_complex(&grid(1, 3, &[0.1, 0.9, 0.2]), FiltrationTag::Sublevel);
        assert_eq!(pairs(&diagram_at(&compute_h0(&k), 0.5)), vec![(f(0.1), 0.5), (f(0.2), 0.5)]);
    }

    fn pt(b: f64, d: f64) -> PersistencePoint {
        PersistencePoint {
            birth: b,
            death: d,
            dim: 0,
            tag: FiltrationTag::Sublevel,
            birth_cell: (0, 0),
        }
    }

    fn diag(points: Vec<PersistencePoint>) -> PersistenceDiagram {
        PersistenceDiagram {
            tag: FiltrationTag::Sublevel,
            dim: 0,
            points,
        }
    }

    #[test]
    fn bottleneck_basics() {
        let a = diag(vec![pt(0.0, 1.0), pt(0.2, 0.3)]);
        assert_eq!(bottleneck(&a, &a), 0.0);
        assert_eq!(bottleneck(&diag(vec![pt(0.0, 1.0)]), &diag(vec![])), 0.5);
        assert_eq!(bottleneck(&diag(vec![]), &diag(vec![])), 0.0);
        let e1 = diag(vec![pt(0.0, f64::INFINITY)]);
        let e2 = diag(vec![pt(0.25, f64::INFINITY)]);
        assert_eq!(bottleneck(&e1, &e2), 0.25);
        assert_eq!(bottleneck(&e1, &diag(vec![])), f64::INFINITY);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let d = diag(vec![pt(0.1, 0.5), pt(0.0, f64::INFINITY)]);
        let text = to_csv([&d]);
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(from_csv(&text).unwrap(), d.points);
        assert!(matches!(from_csv("0,sub,0.1\n"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            from_csv("dim,tag,birth,death,birth_row,birth_col\n0,xx,0,1,0,0\n"),
            Err(Error::Format { offset: 40, .. })
        ));
    }
}
