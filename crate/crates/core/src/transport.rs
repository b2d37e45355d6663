//! Entropic optimal transport between diagonal-augmented persistence diagrams.
//!
//! Each diagram is extended with one diagonal slot per point of the other
//! diagram, so both sides carry `|P| + |Q|` slots of mass `1 / (|P| + |Q|)`.
//! Any point may be sent to any diagonal slot at the squared distance to the
//! diagonal, `pers² / 2`; diagonal slots exchange mass for free.
//!
//! Sinkhorn runs on log potentials; the regularized objective uses
//! `H(Π) = Σ Π (log Π - 1)`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Slot {
    Point { birth: f64, death: f64 },
    /// Diagonal projection of a point of the opposite diagram.
    Diagonal { birth: f64, death: f64 },
}

impl Slot {
    pub fn is_diagonal(&self) -> bool {
        matches!(self, Slot::Diagonal { .. })
    }

    pub fn coords(&self) -> (f64, f64) {
        match *self {
            Slot::Point { birth, death } => (birth, death),
            Slot::Diagonal { birth, death } => {
                let mid = 0.5 * (birth + death);
                (mid, mid)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramMeasure {
    pub support: Vec<Slot>,
    pub weights: Vec<f64>,
}

impl DiagramMeasure {
    pub fn new(support: Vec<Slot>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::Structural(format!(
                "{} support slots but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation("weights must be finite and nonnegative".into()));
        }
        if !weights.is_empty() {
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("weights sum to {total}, not 1")));
            }
        }
        for s in &support {
            let (b, d) = match *s {
                Slot::Point { birth, death } | Slot::Diagonal { birth, death } => (birth, death),
            };
            if !b.is_finite() || !d.is_finite() {
                return Err(Error::Validation(
                    "diagram coordinates must be finite; clamp essential classes first".into(),
                ));
            }
        }
        Ok(Self { support, weights })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Number of real (non-diagonal) slots; they always come first.
    pub fn n_points(&self) -> usize {
        self.support.iter().filter(|s| !s.is_diagonal()).count()
    }
}

/// Balanced pair of measures for diagrams `p` and `q` given as `(birth, death)`.
pub fn augment(p: &[(f64, f64)], q: &[(f64, f64)]) -> Result<(DiagramMeasure, DiagramMeasure)> {
    let n = p.len() + q.len();
    let w = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    let side = |own: &[(f64, f64)], other: &[(f64, f64)]| {
        let support: Vec<Slot> = own
            .iter()
            .map(|&(birth, death)| Slot::Point { birth, death })
            .chain(
                other
                    .iter()
                    .map(|&(birth, death)| Slot::Diagonal { birth, death }),
            )
            .collect();
        DiagramMeasure::new(support, vec![w; n])
    };
    Ok((side(p, q)?, side(q, p)?))
}

/// Row-major `rows × cols` ground cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

fn half_pers_sq((b, d): (f64, f64)) -> f64 {
    0.5 * (d - b) * (d - b)
}

pub fn ground_cost(a: &DiagramMeasure, b: &DiagramMeasure) -> CostMatrix {
    let mut values = Vec::with_capacity(a.len() * b.len());
    for sa in &a.support {
        for sb in &b.support {
            let c = match (sa, sb) {
                (Slot::Point { birth: b1, death: d1 }, Slot::Point { birth: b2, death: d2 }) => {
                    (b1 - b2).powi(2) + (d1 - d2).powi(2)
                }
                (Slot::Point { .. }, Slot::Diagonal { .. }) => half_pers_sq(sa.coords()),
                (Slot::Diagonal { .. }, Slot::Point { .. }) => half_pers_sq(sb.coords()),
                (Slot::Diagonal { .. }, Slot::Diagonal { .. }) => 0.0,
            };
            values.push(c);
        }
    }
    CostMatrix {
        rows: a.len(),
        cols: b.len(),
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub plan: Vec<f64>,
    pub cost: CostMatrix,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    /// L1 violation of both marginals at exit.
    pub marginal_error: f64,
}

impl TransportPlan {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.plan[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    /// `⟨C, Π⟩`.
    pub fn transport_cost(&self) -> f64 {
        self.plan
            .iter()
            .zip(&self.cost.values)
            .map(|(p, c)| p * c)
            .sum()
    }

    pub fn transposed(&self) -> Self {
        let mut plan = Vec::with_capacity(self.plan.len());
        let mut cost = Vec::with_capacity(self.plan.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                plan.push(self.get(i, j));
                cost.push(self.cost.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            plan,
            cost: CostMatrix {
                rows: self.cols,
                cols: self.rows,
                values: cost,
            },
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

/// `log Σ_k exp(x_k + y_k)`.
fn log_sum_exp(x: &[f64], y: &[f64]) -> f64 {
    let max = x.iter().zip(y).map(|(a, b)| a + b).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + x.iter().zip(y).map(|(a, b)| (a + b - max).exp()).sum::<f64>().ln()
}

/// Exchangeable slots. Diagonal slots of equal weight have identical cost
/// rows, so their potentials stay equal under Sinkhorn and one representative
/// per class suffices. Returns (class of each slot, representative of each class).
fn slot_classes(m: &DiagramMeasure) -> (Vec<usize>, Vec<usize>) {
    let mut class_of = Vec::with_capacity(m.len());
    let mut reps = Vec::new();
    let mut diagonal: Vec<(u64, usize)> = Vec::new();
    for (i, slot) in m.support.iter().enumerate() {
        let c = if slot.is_diagonal() {
            let key = m.weights[i].to_bits();
            match diagonal.iter().find(|(k, _)| *k == key) {
                Some(&(_, c)) => c,
                None => {
                    diagonal.push((key, reps.len()));
                    reps.push(i);
                    reps.len() - 1
                }
            }
        } else {
            reps.push(i);
            reps.len() - 1
        };
        class_of.push(c);
    }
    (class_of, reps)
}

/// Log-domain Sinkhorn. Non-convergence is reported through `converged`.
pub fn sinkhorn(
    a: &DiagramMeasure,
    b: &DiagramMeasure,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Validation(format!("epsilon must be positive, got {epsilon}")));
    }
    let cost = ground_cost(a, b);
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        if m + n != 0 {
            return Err(Error::Validation(
                "cannot transport mass to or from an empty measure".into(),
            ));
        }
        return Ok(TransportPlan {
            rows: 0,
            cols: 0,
            plan: vec![],
            cost,
            epsilon,
            iterations: 0,
            converged: true,
            marginal_error: 0.0,
        });
    }

    let (row_class, row_reps) = slot_classes(a);
    let (col_class, col_reps) = slot_classes(b);
    let (r, s) = (row_reps.len(), col_reps.len());
    let mut row_mult = vec![0.0f64; r];
    row_class.iter().for_each(|&c| row_mult[c] += 1.0);
    let mut col_mult = vec![0.0f64; s];
    col_class.iter().for_each(|&c| col_mult[c] += 1.0);
    let wa: Vec<f64> = row_reps.iter().map(|&i| a.weights[i]).collect();
    let wb: Vec<f64> = col_reps.iter().map(|&j| b.weights[j]).collect();
    let log_wa: Vec<f64> = wa.iter().map(|w| w.ln()).collect();
    let log_wb: Vec<f64> = wb.iter().map(|w| w.ln()).collect();
    // -C/ε on class representatives, row-major and column-major
    let kern: Vec<f64> = row_reps
        .iter()
        .flat_map(|&i| col_reps.iter().map(move |&j| (i, j)))
        .map(|(i, j)| -cost.get(i, j) / epsilon)
        .collect();
    let kern_t: Vec<f64> = (0..s)
        .flat_map(|q| (0..r).map(move |p| (p, q)))
        .map(|(p, q)| kern[p * s + q])
        .collect();

    // Scaling iterations on the kernel `exp((f ⊕ g - C)/ε)`; the scalings
    // `u, v` are folded back into the log potentials `f, g` whenever they
    // leave [1/ABSORB, ABSORB], and rows or columns whose kernel underflows
    // entirely are updated with an exact log-sum-exp.
    const ABSORB: f64 = 1e3;
    let log_row_mult: Vec<f64> = row_mult.iter().map(|v| v.ln()).collect();
    let log_col_mult: Vec<f64> = col_mult.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; r];
    let mut g = vec![0.0; s];
    let mut u = vec![1.0; r];
    let mut v = vec![1.0; s];
    let mut kernel = vec![0.0; r * s];
    let rebuild_row = |kernel: &mut [f64], f: &[f64], g: &[f64], p: usize| {
        for q in 0..s {
            kernel[p * s + q] = ((f[p] + g[q]) / epsilon + kern[p * s + q]).exp();
        }
    };
    for p in 0..r {
        rebuild_row(&mut kernel, &f, &g, p);
    }
    let mut weighted = vec![0.0; s.max(r)];
    let mut kv = vec![0.0; r];
    let mut ktu = vec![0.0; s];
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    loop {
        for q in 0..s {
            weighted[q] = col_mult[q] * v[q];
        }
        for p in 0..r {
            kv[p] = kernel[p * s..(p + 1) * s]
                .iter()
                .zip(&weighted[..s])
                .map(|(k, w)| k * w)
                .sum();
        }
        if iterations > 0 {
            // L1 row violation of the current plan
            err = (0..r).map(|p| row_mult[p] * (u[p] * kv[p] - wa[p]).abs()).sum();
            if err < tol || err.is_nan() {
                break;
            }
        }
        if iterations == max_iter {
            break;
        }
        iterations += 1;

        for p in 0..r {
            if !(kv[p] > 0.0 && kv[p].is_finite()) && wa[p] > 0.0 {
                let shifted: Vec<f64> = (0..s)
                    .map(|q| log_col_mult[q] + (g[q] + epsilon * v[q].ln()) / epsilon)
                    .collect();
                f[p] = epsilon * (log_wa[p] - log_sum_exp(&kern[p * s..(p + 1) * s], &shifted));
                rebuild_row(&mut kernel, &f, &g, p);
                kv[p] = kernel[p * s..(p + 1) * s]
                    .iter()
                    .zip(&weighted[..s])
                    .map(|(k, w)| k * w)
                    .sum();
            }
            u[p] = if wa[p] > 0.0 { wa[p] / kv[p] } else { 0.0 };
        }

        ktu.iter_mut().for_each(|x| *x = 0.0);
        for p in 0..r {
            let w = row_mult[p] * u[p];
            if w == 0.0 {
                continue;
            }
            for (acc, k) in ktu.iter_mut().zip(&kernel[p * s..(p + 1) * s]) {
                *acc += k * w;
            }
        }
        for q in 0..s {
            if !(ktu[q] > 0.0 && ktu[q].is_finite()) && wb[q] > 0.0 {
                let shifted: Vec<f64> = (0..r)
                    .map(|p| log_row_mult[p] + (f[p] + epsilon * u[p].ln()) / epsilon)
                    .collect();
                g[q] = epsilon * (log_wb[q] - log_sum_exp(&kern_t[q * r..(q + 1) * r], &shifted));
                ktu[q] = 0.0;
                for p in 0..r {
                    kernel[p * s + q] = ((f[p] + g[q]) / epsilon + kern[p * s + q]).exp();
                    ktu[q] += kernel[p * s + q] * row_mult[p] * u[p];
                }
            }
            v[q] = if wb[q] > 0.0 { wb[q] / ktu[q] } else { 0.0 };
        }

        let out_of_range = |x: &f64| *x != 0.0 && !(1.0 / ABSORB..=ABSORB).contains(x);
        if u.iter().any(out_of_range) || v.iter().any(out_of_range) {
            for p in 0..r {
                f[p] += epsilon * u[p].ln();
                u[p] = 1.0;
            }
            for q in 0..s {
                g[q] += epsilon * v[q].ln();
                v[q] = 1.0;
            }
            for p in 0..r {
                rebuild_row(&mut kernel, &f, &g, p);
            }
        }
    }

    let compressed: Vec<f64> = (0..r * s)
        .map(|k| u[k / s] * kernel[k] * v[k % s])
        .collect();
    if compressed.iter().any(|v| v.is_nan()) || err.is_nan() {
        return Err(Error::Numeric("Sinkhorn produced NaN entries".into()));
    }
    let mut plan = Vec::with_capacity(m * n);
    for &p in &row_class {
        plan.extend(col_class.iter().map(|&q| compressed[p * s + q]));
    }
    let mut out = TransportPlan {
        rows: m,
        cols: n,
        plan,
        cost,
        epsilon,
        iterations,
        converged: err < tol,
        marginal_error: 0.0,
    };
    let col_err: f64 = out
        .col_sums()
        .iter()
        .zip(&b.weights)
        .map(|(s, w)| (s - w).abs())
        .sum();
    out.marginal_error = err + col_err;
    Ok(out)
}

/// Sinkhorn between two diagrams after diagonal augmentation.
pub fn sinkhorn_diagrams(
    p: &[(f64, f64)],
    q: &[(f64, f64)],
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (a, b) = augment(p, q)?;
    sinkhorn(&a, &b, cfg.epsilon, cfg.max_iter, cfg.tol)
}

pub const EXACT_MAX_SLOTS: usize = 12;

/// Exact optimal transport for uniform balanced measures (assignment on the
/// augmented bipartite graph). Returns the cost and a permutation plan.
pub fn exact_ot(a: &DiagramMeasure, b: &DiagramMeasure) -> Result<(f64, TransportPlan)> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::Validation(format!(
            "exact OT needs equal sizes, got {} and {}",
            n,
            b.len()
        )));
    }
    if n > EXACT_MAX_SLOTS {
        return Err(Error::Size(format!(
            "exact OT supports at most {EXACT_MAX_SLOTS} slots per side, got {n}"
        )));
    }
    let uniform = |m: &DiagramMeasure| m.weights.iter().all(|w| (w - 1.0 / n as f64).abs() <= 1e-12);
    if !uniform(a) || !uniform(b) {
        return Err(Error::Validation("exact OT requires uniform weights".into()));
    }
    let cost = ground_cost(a, b);
    let assignment = hungarian(&cost.values, n);
    let mut plan = vec![0.0; n * n];
    let mut total = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        plan[i * n + j] = 1.0 / n as f64;
        total += cost.get(i, j) / n as f64;
    }
    Ok((
        total,
        TransportPlan {
            rows: n,
            cols: n,
            plan,
            cost,
            epsilon: 0.0,
            iterations: 0,
            converged: true,
            marginal_error: 0.0,
        },
    ))
}

/// Minimum-cost perfect assignment on a square matrix; returns column of each row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    if n == 0 {
        return vec![];
    }
    // Potentials formulation, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(b: f64, d: f64) -> DiagramMeasure {
        DiagramMeasure::new(vec![Slot::Point { birth: b, death: d }], vec![1.0]).unwrap()
    }

    #[test]
    fn ground_cost_cases() {
        let c = ground_cost(&single(0.3, 0.6), &single(0.3, 0.6));
        assert_eq!(c.values, vec![0.0]);
        assert_eq!(ground_cost(&single(0.0, 0.0), &single(1.0, 1.0)).values, vec![2.0]);
        let (a, b) = augment(&[(0.2, 0.8)], &[]).unwrap();
        let c = ground_cost(&a, &b);
        assert!((c.values[0] - 0.18).abs() < 1e-15);
        let (a, b) = augment(&[(0.2, 0.8)], &[(0.1, 0.4)]).unwrap();
        let c = ground_cost(&a, &b);
        // diagonal slot of a vs diagonal slot of b
        assert_eq!(c.get(1, 1), 0.0);
    }

    #[test]
    fn single_point_plan() {
        let t = sinkhorn(&single(0.1, 0.5), &single(0.2, 0.4), 0.05, 200, 1e-12).unwrap();
        assert_eq!(t.plan.len(), 1);
        assert!((t.plan[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_epsilon_and_sizes() {
        let a = single(0.0, 1.0);
        assert!(sinkhorn(&a, &a, 0.0, 10, 1e-9).is_err());
        assert!(sinkhorn(&a, &a, f64::NAN, 10, 1e-9).is_err());
        let empty = DiagramMeasure::new(vec![], vec![]).unwrap();
        assert!(sinkhorn(&a, &empty, 0.1, 10, 1e-9).is_err());
        let t = sinkhorn(&empty, &empty, 0.1, 10, 1e-9).unwrap();
        assert!(t.converged && t.plan.is_empty());
        assert!(DiagramMeasure::new(vec![Slot::Point { birth: 0.0, death: f64::INFINITY }], vec![1.0]).is_err());
    }

    #[test]
    fn empty_side_is_all_diagonal() {
        let p = [(0.1, 0.5), (0.2, 0.9)];
        let (a, b) = augment(&p, &[]).unwrap();
        let t = sinkhorn(&a, &b, 0.05, 200, 1e-12).unwrap();
        let expect: f64 = p.iter().map(|&(b, d)| 0.5 * 0.5 * (d - b) * (d - b)).sum();
        assert!((t.transport_cost() - expect).abs() < 1e-12);
    }

    #[test]
    fn nonconvergence_is_flagged() {
        let (a, b) = augment(&[(0.1, 0.5), (0.2, 0.9), (0.3, 0.35)], &[(0.0, 0.6), (0.5, 0.9)]).unwrap();
        let t = sinkhorn(&a, &b, 1e-3, 1, 0.0).unwrap();
        assert!(!t.converged);
        assert_eq!(t.iterations, 1);
    }

    #[test]
    fn identical_two_point_measures_match_identically() {
        let p = [(0.1, 0.6), (0.3, 0.9)];
        let (a, b) = augment(&p, &p).unwrap();
        let t = sinkhorn(&a, &b, 1e-3, 10_000, 1e-12).unwrap();
        assert!(t.get(0, 0) > 0.25 - 1e-6);
        assert!(t.get(1, 1) > 0.25 - 1e-6);
        assert!(t.transport_cost() < 1e-9);
        let (exact, _) = exact_ot(&a, &b).unwrap();
        assert_eq!(exact, 0.0);
    }

    #[test]
    fn exact_sends_extra_point_to_diagonal() {
        let (a, b) = augment(&[(0.0, 1.0)], &[(0.0, 1.0), (0.5, 0.6)]).unwrap();
        let (cost, plan) = exact_ot(&a, &b).unwrap();
        let expect = (1.0 / 3.0) * (0.1f64 * 0.1 / 2.0);
        assert!((cost - expect).abs() < 1e-15);
        assert!((plan.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_size_limit() {
        let p: Vec<(f64, f64)> = (0..7).map(|i| (0.0, 0.1 * i as f64 + 0.1)).collect();
        let (a, b) = augment(&p, &p[..6]).unwrap();
        assert!(matches!(exact_ot(&a, &b), Err(Error::Size(_))));
    }

    #[test]
    fn hungarian_small() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&c, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn transpose_roundtrip() {
        let (a, b) = augment(&[(0.1, 0.5)], &[(0.2, 0.4), (0.0, 0.9)]).unwrap();
        let t = sinkhorn(&a, &b, 0.05, 200, 1e-9).unwrap();
        assert_eq!(t.transposed().transposed(), t);
    }
}
