//! Threshold schedules and lower-star cubical complexes on the pixel lattice.
//!
//! Vertices sit on pixels, edges join 4-neighbours and squares fill each 2×2
//! block. The superlevel filtration of `A` is the sublevel filtration of `-A`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_io::ScoreGrid;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum FiltrationTag {
    Sublevel,
    Superlevel,
}

impl FiltrationTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FiltrationTag::Sublevel => "sub",
            FiltrationTag::Superlevel => "sup",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "sub" | "sublevel" => Some(FiltrationTag::Sublevel),
            "sup" | "superlevel" => Some(FiltrationTag::Superlevel),
            _ => None,
        }
    }

    /// Score level mapped onto this filtration's axis.
    #[inline]
    pub fn to_axis(self, score: f64) -> f64 {
        match self {
            FiltrationTag::Sublevel => score,
            FiltrationTag::Superlevel => -score,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            FiltrationTag::Sublevel => FiltrationTag::Superlevel,
            FiltrationTag::Superlevel => FiltrationTag::Sublevel,
        }
    }
}

impl fmt::Display for FiltrationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Uniform,
    Quantile,
}

/// Strictly increasing thresholds `τ_1 < … < τ_N` on the score axis, `N >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    taus: Vec<f64>,
}

impl ThresholdSchedule {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.len() < 2 {
            return Err(Error::DegenerateSchedule(format!(
                "need at least 2 thresholds, got {}",
                taus.len()
            )));
        }
        if taus.iter().any(|t| !t.is_finite()) || taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateSchedule(
                "thresholds must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Thresholds on the filtration axis of `tag`, in filtration order.
    ///
    /// For superlevel sets this is `-τ_N < … < -τ_1`, i.e. decreasing score.
    pub fn axis_levels(&self, tag: FiltrationTag) -> Vec<f64> {
        match tag {
            FiltrationTag::Sublevel => self.taus.clone(),
            FiltrationTag::Superlevel => self.taus.iter().rev().map(|t| -t).collect(),
        }
    }
}

pub fn make_schedule(grid: &ScoreGrid, n: usize, mode: ScheduleMode) -> Result<ThresholdSchedule> {
    if n < 2 {
        return Err(Error::Validation(format!("need n >= 2 thresholds, got {n}")));
    }
    let (lo, hi) = grid.min_max();
    if hi <= lo {
        return Err(Error::DegenerateSchedule("constant grid has no interior thresholds".into()));
    }
    let taus = match mode {
        ScheduleMode::Uniform => {
            let step = (hi - lo) / (n + 1) as f64;
            (1..=n).map(|k| lo + k as f64 * step).collect()
        }
        ScheduleMode::Quantile => {
            let mut sorted: Vec<f64> = grid.values().iter().map(|&v| v as f64).collect();
            sorted.sort_by(f64::total_cmp);
            let mut taus: Vec<f64> = (1..=n)
                .map(|k| quantile_sorted(&sorted, k as f64 / (n + 1) as f64))
                .collect();
            taus.dedup();
            taus
        }
    };
    ThresholdSchedule::new(taus)
}

/// Linear-interpolation quantile on a sorted slice (position `q·(n-1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellKind {
    Vertex,
    HorizontalEdge,
    VerticalEdge,
    Square,
}

impl CellKind {
    pub fn dim(self) -> usize {
        match self {
            CellKind::Vertex => 0,
            CellKind::HorizontalEdge | CellKind::VerticalEdge => 1,
            CellKind::Square => 2,
        }
    }
}

/// One elementary cube anchored at pixel `(row, col)`; edges and squares
/// extend right and/or down from the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub kind: CellKind,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Cell {
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Position on the doubled lattice, used for deterministic tie-breaking.
    pub fn lattice(&self) -> (usize, usize) {
        let (r, c) = (2 * self.row, 2 * self.col);
        match self.kind {
            CellKind::Vertex => (r, c),
            CellKind::HorizontalEdge => (r, c + 1),
            CellKind::VerticalEdge => (r + 1, c),
            CellKind::Square => (r + 1, c + 1),
        }
    }

    /// Vertices of this cube as pixel coordinates.
    pub fn vertices(&self) -> Vec<(usize, usize)> {
        let (r, c) = (self.row, self.col);
        match self.kind {
            CellKind::Vertex => vec![(r, c)],
            CellKind::HorizontalEdge => vec![(r, c), (r, c + 1)],
            CellKind::VerticalEdge => vec![(r, c), (r + 1, c)],
            CellKind::Square => vec![(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)],
        }
    }
}

/// Full lower-star cubical complex of a grid.
#[derive(Debug, Clone)]
pub struct CubicalComplex {
    height: usize,
    width: usize,
    tag: FiltrationTag,
    vertex: Vec<f64>,
}

impl CubicalComplex {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tag(&self) -> FiltrationTag {
        self.tag
    }

    pub fn vertex_values(&self) -> &[f64] {
        &self.vertex
    }

    #[inline]
    pub fn vertex_value(&self, row: usize, col: usize) -> f64 {
        self.vertex[row * self.width + col]
    }

    pub fn max_value(&self) -> f64 {
        self.vertex.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn n_vertices(&self) -> usize {
        self.height * self.width
    }

    pub fn n_horizontal_edges(&self) -> usize {
        self.height * (self.width - 1)
    }

    pub fn n_vertical_edges(&self) -> usize {
        (self.height - 1) * self.width
    }

    pub fn n_edges(&self) -> usize {
        self.n_horizontal_edges() + self.n_vertical_edges()
    }

    pub fn n_squares(&self) -> usize {
        (self.height - 1) * (self.width - 1)
    }

    fn cell(&self, kind: CellKind, row: usize, col: usize) -> Cell {
        let value = match kind {
            CellKind::Vertex => self.vertex_value(row, col),
            CellKind::HorizontalEdge => self.vertex_value(row, col).max(self.vertex_value(row, col + 1)),
            CellKind::VerticalEdge => self.vertex_value(row, col).max(self.vertex_value(row + 1, col)),
            CellKind::Square => self
                .vertex_value(row, col)
                .max(self.vertex_value(row, col + 1))
                .max(self.vertex_value(row + 1, col))
                .max(self.vertex_value(row + 1, col + 1)),
        };
        Cell {
            kind,
            row,
            col,
            value,
        }
    }

    pub fn vertices(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| self.cell(CellKind::Vertex, r, c)))
    }

    /// Horizontal edges first, then vertical edges, each row-major.
    pub fn edges(&self) -> impl Iterator<Item = Cell> + '_ {
        let h = (0..self.height).flat_map(move |r| {
            (0..self.width - 1).map(move |c| self.cell(CellKind::HorizontalEdge, r, c))
        });
        let v = (0..self.height - 1)
            .flat_map(move |r| (0..self.width).map(move |c| self.cell(CellKind::VerticalEdge, r, c)));
        h.chain(v)
    }

    pub fn squares(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height - 1)
            .flat_map(move |r| (0..self.width - 1).map(move |c| self.cell(CellKind::Square, r, c)))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.vertices().chain(self.edges()).chain(self.squares())
    }

    /// Index of an edge in the [`edges`](Self::edges) order.
    #[inline]
    pub fn edge_index(&self, kind: CellKind, row: usize, col: usize) -> usize {
        match kind {
            CellKind::HorizontalEdge => row * (self.width - 1) + col,
            CellKind::VerticalEdge => self.n_horizontal_edges() + row * self.width + col,
            _ => panic!("not an edge: {kind:?}"),
        }
    }

    /// Codimension-one faces of a cell.
    pub fn faces(&self, cell: &Cell) -> Vec<Cell> {
        let (r, c) = (cell.row, cell.col);
        match cell.kind {
            CellKind::Vertex => vec![],
            CellKind::HorizontalEdge => vec![
                self.cell(CellKind::Vertex, r, c),
                self.cell(CellKind::Vertex, r, c + 1),
            ],
            CellKind::VerticalEdge => vec![
                self.cell(CellKind::Vertex, r, c),
                self.cell(CellKind::Vertex, r + 1, c),
            ],
            CellKind::Square => vec![
                self.cell(CellKind::HorizontalEdge, r, c),
                self.cell(CellKind::HorizontalEdge, r + 1, c),
                self.cell(CellKind::VerticalEdge, r, c),
                self.cell(CellKind::VerticalEdge, r, c + 1),
            ],
        }
    }

    /// Euler characteristic `V - E + F` of the subcomplex with values `<= level`.
    pub fn euler_characteristic_at(&self, level: f64) -> i64 {
        let count = |it: &mut dyn Iterator<Item = Cell>| it.filter(|c| c.value <= level).count() as i64;
        count(&mut self.vertices()) - count(&mut self.edges()) + count(&mut self.squares())
    }
}

pub fn build_complex(grid: &ScoreGrid, tag: FiltrationTag) -> CubicalComplex {
    CubicalComplex {
        height: grid.height(),
        width: grid.width(),
        tag,
        vertex: grid.values().iter().map(|&v| tag.to_axis(v as f64)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn grid(h: usize, w: usize, v: &[f32]) -> ScoreGrid {
        ScoreGrid::new(h, w, v.to_vec()).unwrap()
    }

    fn random_grid(h: usize, w: usize, seed: u64) -> ScoreGrid {
        let mut rng = SplitMix64::new(seed);
        grid(h, w, &(0..h * w).map(|_| rng.next_f64() as f32).collect::<Vec<_>>())
    }

    #[test]
    fn uniform_schedule() {
        let g = grid(1, 2, &[0.0, 1.0]);
        assert_eq!(make_schedule(&g, 3, ScheduleMode::Uniform).unwrap().taus(), &[0.25, 0.5, 0.75]);
        let two = make_schedule(&g, 2, ScheduleMode::Uniform).unwrap();
        assert!((two.taus()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((two.taus()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_schedule_matches_sorted_oracle() {
        let g = random_grid(7, 9, 11);
        let s = make_schedule(&g, 4, ScheduleMode::Quantile).unwrap();
        let mut sorted: Vec<f64> = g.values().iter().map(|&v| v as f64).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len() as f64;
        for (k, tau) in s.taus().iter().enumerate() {
            let pos = (k + 1) as f64 / 5.0 * (n - 1.0);
            let (i, f) = (pos.floor() as usize, pos.fract());
            let expect = sorted[i] * (1.0 - f) + sorted[(i + 1).min(sorted.len() - 1)] * f;
            assert!((tau - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_schedules() {
        let flat = grid(2, 2, &[0.3; 4]);
        assert!(matches!(
            make_schedule(&flat, 4, ScheduleMode::Quantile),
            Err(Error::DegenerateSchedule(_))
        ));
        assert!(make_schedule(&flat, 4, ScheduleMode::Uniform).is_err());
        // Two-valued grid: every quantile collapses to 0 or 1 and only two remain.
        let binary = grid(1, 10, &[0., 0., 0., 0., 0., 1., 1., 1., 1., 1.]);
        let s = make_schedule(&binary, 2, ScheduleMode::Quantile).unwrap();
        assert_eq!(s.len(), 2);
        let mostly_zero = grid(1, 10, &[0., 0., 0., 0., 0., 0., 0., 0., 0., 1.]);
        assert!(matches!(
            make_schedule(&mostly_zero, 3, ScheduleMode::Quantile),
            Err(Error::DegenerateSchedule(_))
        ));
        assert!(make_schedule(&binary, 1, ScheduleMode::Uniform).is_err());
    }

    #[test]
    fn superlevel_axis_levels() {
        let s = ThresholdSchedule::new(vec![0.2, 0.5, 0.7]).unwrap();
        assert_eq!(s.axis_levels(FiltrationTag::Superlevel), vec![-0.7, -0.5, -0.2]);
    }

    #[test]
    fn one_by_two_complex() {
        let g = grid(1, 2, &[0.2, 0.8]);
        let sub = build_complex(&g, FiltrationTag::Sublevel);
        let v: Vec<f64> = sub.vertices().map(|c| c.value).collect();
        assert_eq!(v, vec![0.2f32 as f64, 0.8f32 as f64]);
        let e: Vec<f64> = sub.edges().map(|c| c.value).collect();
        assert_eq!(e, vec![0.8f32 as f64]);
        assert_eq!(sub.squares().count(), 0);

        let sup = build_complex(&g, FiltrationTag::Superlevel);
        let v: Vec<f64> = sup.vertices().map(|c| c.value).collect();
        assert_eq!(v, vec![-(0.2f32 as f64), -(0.8f32 as f64)]);
        assert_eq!(sup.edges().next().unwrap().value, -(0.2f32 as f64));
    }

    #[test]
    fn random_3x3_monotone_exhaustive() {
        let g = random_grid(3, 3, 5);
        for tag in [FiltrationTag::Sublevel, FiltrationTag::Superlevel] {
            let k = build_complex(&g, tag);
            let cells: Vec<Cell> = k.cells().collect();
            assert_eq!(cells.len(), 25);
            for cell in &cells {
                for face in k.faces(cell) {
                    assert!(face.value <= cell.value);
                }
                let vmax = cell
                    .vertices()
                    .iter()
                    .map(|&(r, c)| k.vertex_value(r, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(vmax, cell.value);
            }
        }
    }

    #[test]
    fn cell_counts() {
        let k = build_complex(&random_grid(4, 7, 1), FiltrationTag::Sublevel);
        assert_eq!(k.vertices().count(), 28);
        assert_eq!(k.edges().count(), 4 * 6 + 7 * 3);
        assert_eq!(k.squares().count(), 3 * 6);
        for (i, e) in k.edges().enumerate() {
            assert_eq!(k.edge_index(e.kind, e.row, e.col), i);
        }
    }

    #[test]
    fn sublevel_equals_shifted_superlevel_of_complement() {
        let g = random_grid(5, 5, 9);
        let inv = grid(5, 5, &g.values().iter().map(|v| 1.0 - v).collect::<Vec<_>>());
        let sub = build_complex(&g, FiltrationTag::Sublevel);
        let sup = build_complex(&inv, FiltrationTag::Superlevel);
        for (a, b) in sub.cells().zip(sup.cells()) {
            assert!((a.value - 1.0 - b.value).abs() < 1e-6);
        }
    }
}
