//! Per-sample test-time training of a small per-pixel head on pseudo-labels.
//!
//! The head maps standardized pixel features through `D → 32 → 16 → 1` dense
//! layers with exact GELU between them. The 16-wide pre-logit activation,
//! L2-normalized, is the pixel embedding used by the contrastive term.
//!
//! Objective per optimizer step, over a mini-batch `S` of pixels and a set of
//! sampled pairs:
//!
//! ```text
//! L = sqrt(mean_{p in S} (σ(logit_p) - y_p)^2)
//!   + λ · mean_{(p,q)} [ (1 - y_pq) |z_p - z_q|^2 + y_pq · max(0, m - |z_p - z_q|)^2 ]
//! ```
//!
//! with `y_pq = 1` when the two pseudo-labels differ. Gradients are analytic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_io::{BinaryMask, RawGrid, ScoreGrid};

pub const HIDDEN: usize = 32;
pub const EMBED: usize = 16;
pub const BLUR_RADII: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Builtin,
    ExternalFile,
}

/// Per-pixel feature vectors, pixel-major (`values[p * channels + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatures {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl PixelFeatures {
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }

    pub fn channel(&self, k: usize) -> Vec<f64> {
        (0..self.n_pixels()).map(|p| self.values[p * self.channels + k]).collect()
    }
}

/// Mean over the `(2r+1)²` window clipped to the grid.
pub fn box_blur(grid: &ScoreGrid, radius: usize) -> Vec<f64> {
    let (h, w) = (grid.height(), grid.width());
    // integral image with a zero border
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += grid.get(r, c);
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(h));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(w));
            let s = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0]
                + sat[r0 * (w + 1) + c0];
            out.push(s / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    out
}

/// Builtin features `[A, blur1, blur2, blur4, row/H, col/W]`, or an external
/// raw-f32 grid passed through unchanged.
pub fn build_features(grid: &ScoreGrid, external: Option<&RawGrid>) -> Result<PixelFeatures> {
    let (h, w) = (grid.height(), grid.width());
    if let Some(ext) = external {
        if ext.height != h || ext.width != w {
            return Err(Error::Structural(format!(
                "feature grid is {}x{}, score grid is {h}x{w}",
                ext.height, ext.width
            )));
        }
        return Ok(PixelFeatures {
            height: h,
            width: w,
            channels: ext.channels,
            values: ext.values.iter().map(|&v| v as f64).collect(),
            provenance: Provenance::ExternalFile,
        });
    }
    let blurs: Vec<Vec<f64>> = BLUR_RADII.iter().map(|&r| box_blur(grid, r)).collect();
    let channels = 1 + blurs.len() + 2;
    let mut values = Vec::with_capacity(h * w * channels);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            values.push(grid.get(r, c));
            values.extend(blurs.iter().map(|b| b[p]));
            values.push(r as f64 / h as f64);
            values.push(c as f64 / w as f64);
        }
    }
    Ok(PixelFeatures {
        height: h,
        width: w,
        channels,
        values,
        provenance: Provenance::Builtin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TttConfig {
    pub lambda: f64,
    pub margin: f64,
    pub epochs: usize,
    pub lr: f64,
    pub pairs: usize,
    /// Pixels per optimizer step; each epoch visits every pixel once.
    pub batch_pixels: usize,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            margin: 0.4,
            epochs: 5,
            lr: 1e-3,
            pairs: 256,
            batch_pixels: 32,
            seed: 0,
        }
    }
}

impl TttConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Validation(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.lr > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Validation("lr must be > 0 and lambda >= 0".into()));
        }
        if self.batch_pixels == 0 {
            return Err(Error::Validation("batch_pixels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trainable head plus the fixed per-channel input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub in_dim: usize,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// `[W1 (32×D), b1, W2 (16×32), b2, w3 (16), b3]`, row-major.
    pub theta: Vec<f64>,
}

struct Layout {
    d: usize,
}

impl Layout {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        HIDDEN * self.d
    }
    fn w2(&self) -> usize {
        self.b1() + HIDDEN
    }
    fn b2(&self) -> usize {
        self.w2() + EMBED * HIDDEN
    }
    fn w3(&self) -> usize {
        self.b2() + EMBED
    }
    fn b3(&self) -> usize {
        self.w3() + EMBED
    }
    fn len(&self) -> usize {
        self.b3() + 1
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Forward {
    x: Vec<f64>,
    u1: [f64; HIDDEN],
    a1: [f64; HIDDEN],
    u2: [f64; EMBED],
    a2: [f64; EMBED],
    logit: f64,
}

impl HeadParams {
    pub fn init(features: &PixelFeatures, seed: u64) -> Self {
        let d = features.channels;
        let n = features.n_pixels() as f64;
        let mut input_mean = vec![0.0; d];
        let mut input_scale = vec![1.0; d];
        for k in 0..d {
            let ch = features.channel(k);
            let mean = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            input_mean[k] = mean;
            if var > 1e-12 {
                input_scale[k] = 1.0 / var.sqrt();
            }
        }
        let layout = Layout { d };
        let mut theta = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut theta[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w1()..layout.w2(), d);
        fill(layout.w2()..layout.w3(), HIDDEN);
        fill(layout.w3()..layout.len(), EMBED);
        Self {
            in_dim: d,
            input_mean,
            input_scale,
            theta,
        }
    }

    fn layout(&self) -> Layout {
        Layout { d: self.in_dim }
    }

    fn forward(&self, x_raw: &[f64]) -> Forward {
        let l = self.layout();
        let d = self.in_dim;
        let t = &self.theta;
        let x: Vec<f64> = x_raw
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        let mut u1 = [0.0; HIDDEN];
        let mut a1 = [0.0; HIDDEN];
        for h in 0..HIDDEN {
            let row = &t[l.w1() + h * d..l.w1() + (h + 1) * d];
            u1[h] = t[l.b1() + h] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
            a1[h] = gelu(u1[h]);
        }
        let mut u2 = [0.0; EMBED];
        let mut a2 = [0.0; EMBED];
        for e in 0..EMBED {
            let row = &t[l.w2() + e * HIDDEN..l.w2() + (e + 1) * HIDDEN];
            u2[e] = t[l.b2() + e] + row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>();
            a2[e] = gelu(u2[e]);
        }
        let logit = t[l.b3()] + (0..EMBED).map(|e| t[l.w3() + e] * a2[e]).sum::<f64>();
        Forward {
            x,
            u1,
            a1,
            u2,
            a2,
            logit,
        }
    }

    /// Accumulate `∂L/∂θ` given `∂L/∂logit` and `∂L/∂a2` for one pixel.
    fn backward(&self, fw: &Forward, d_logit: f64, d_a2_in: &[f64; EMBED], grad: &mut [f64]) {
        let l = self.layout();
        let d = self.in_dim;
        let t = &self.theta;
        let mut d_a2 = *d_a2_in;
        if d_logit != 0.0 {
            grad[l.b3()] += d_logit;
            for e in 0..EMBED {
                grad[l.w3() + e] += d_logit * fw.a2[e];
                d_a2[e] += d_logit * t[l.w3() + e];
            }
        }
        let mut d_a1 = [0.0; HIDDEN];
        for e in 0..EMBED {
            let du = d_a2[e] * gelu_grad(fw.u2[e]);
            if du == 0.0 {
                continue;
            }
            grad[l.b2() + e] += du;
            let base = l.w2() + e * HIDDEN;
            for h in 0..HIDDEN {
                grad[base + h] += du * fw.a1[h];
                d_a1[h] += du * t[base + h];
            }
        }
        for h in 0..HIDDEN {
            let du = d_a1[h] * gelu_grad(fw.u1[h]);
            if du == 0.0 {
                continue;
            }
            grad[l.b1() + h] += du;
            let base = l.w1() + h * d;
            for k in 0..d {
                grad[base + k] += du * fw.x[k];
            }
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).logit
    }

    /// L2-normalized pre-logit embedding.
    pub fn embedding(&self, x: &[f64]) -> [f64; EMBED] {
        normalize(&self.forward(x).a2).0
    }
}

/// Returns the unit vector and the input norm; a zero vector stays zero.
fn normalize(v: &[f64; EMBED]) -> ([f64; EMBED], f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut z = [0.0; EMBED];
    if norm > 1e-12 {
        for (zi, vi) in z.iter_mut().zip(v) {
            *zi = vi / norm;
        }
    }
    (z, norm)
}

/// `sqrt(mean((pred - pseudo)^2))`.
pub fn loss_ot(pred: &[f64], pseudo: &[bool]) -> f64 {
    assert_eq!(pred.len(), pseudo.len());
    if pred.is_empty() {
        return 0.0;
    }
    let sq: f64 = pred
        .iter()
        .zip(pseudo)
        .map(|(p, &y)| (p - if y { 1.0 } else { 0.0 }).powi(2))
        .sum();
    (sq / pred.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveLoss {
    pub value: f64,
    /// The pseudo-label has a single class; the term was not evaluated.
    pub skipped: bool,
}

fn pair_term(zp: &[f64], zq: &[f64], differ: bool, margin: f64) -> f64 {
    let dist_sq: f64 = zp.iter().zip(zq).map(|(a, b)| (a - b).powi(2)).sum();
    if differ {
        (margin - dist_sq.sqrt()).max(0.0).powi(2)
    } else {
        dist_sq
    }
}

/// Mean margin contrastive loss over `pairs` of pixel indices.
/// `embeddings` is pixel-major with `dim` entries per pixel.
pub fn loss_contrastive(
    embeddings: &[f64],
    dim: usize,
    pseudo: &[bool],
    pairs: &[(usize, usize)],
    margin: f64,
) -> ContrastiveLoss {
    let fg = pseudo.iter().filter(|b| **b).count();
    if fg == 0 || fg == pseudo.len() {
        log::warn!("pseudo-label has a single class; contrastive term skipped");
        return ContrastiveLoss {
            value: 0.0,
            skipped: true,
        };
    }
    if pairs.is_empty() {
        return ContrastiveLoss {
            value: 0.0,
            skipped: false,
        };
    }
    let total: f64 = pairs
        .iter()
        .map(|&(p, q)| {
            pair_term(
                &embeddings[p * dim..(p + 1) * dim],
                &embeddings[q * dim..(q + 1) * dim],
                pseudo[p] != pseudo[q],
                margin,
            )
        })
        .sum();
    ContrastiveLoss {
        value: total / pairs.len() as f64,
        skipped: false,
    }
}

/// Half same-label pairs (class chosen by a fair coin), half cross-label pairs.
/// `None` when the mask has a single class.
pub fn sample_pairs(pseudo: &[bool], count: usize, rng: &mut impl Rng) -> Option<Vec<(usize, usize)>> {
    let fg: Vec<usize> = (0..pseudo.len()).filter(|&p| pseudo[p]).collect();
    let bg: Vec<usize> = (0..pseudo.len()).filter(|&p| !pseudo[p]).collect();
    if fg.is_empty() || bg.is_empty() {
        return None;
    }
    let mut pairs = Vec::with_capacity(count);
    let same = count / 2;
    for _ in 0..same {
        let mut class = if rng.random_bool(0.5) { &fg } else { &bg };
        if class.len() < 2 {
            class = if std::ptr::eq(class, &fg) { &bg } else { &fg };
        }
        if class.len() < 2 {
            break;
        }
        let i = rng.random_range(0..class.len());
        let mut j = rng.random_range(0..class.len() - 1);
        if j >= i {
            j += 1;
        }
        pairs.push((class[i], class[j]));
    }
    for _ in same..count {
        pairs.push((fg[rng.random_range(0..fg.len())], bg[rng.random_range(0..bg.len())]));
    }
    Some(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub ot: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// Objective and its analytic gradient over the pixel set `pixels` and the given pairs.
pub fn loss_and_grad(
    params: &HeadParams,
    features: &PixelFeatures,
    pseudo: &[bool],
    pixels: &[usize],
    pairs: &[(usize, usize)],
    lambda: f64,
    margin: f64,
) -> (LossParts, Vec<f64>) {
    let mut grad = vec![0.0; params.theta.len()];
    let zero = [0.0; EMBED];

    // consistency term
    let forwards: Vec<Forward> = pixels.iter().map(|&p| params.forward(features.pixel(p))).collect();
    let probs: Vec<f64> = forwards.iter().map(|f| sigmoid(f.logit)).collect();
    let labels: Vec<bool> = pixels.iter().map(|&p| pseudo[p]).collect();
    let ot = loss_ot(&probs, &labels);
    if ot > 0.0 {
        let scale = 1.0 / (pixels.len() as f64 * ot);
        for ((fw, &prob), &y) in forwards.iter().zip(&probs).zip(&labels) {
            let target = if y { 1.0 } else { 0.0 };
            let d_logit = scale * (prob - target) * prob * (1.0 - prob);
            params.backward(fw, d_logit, &zero, &mut grad);
        }
    }

    // contrastive term
    let mut contrastive = 0.0;
    if lambda > 0.0 && !pairs.is_empty() {
        let weight = lambda / pairs.len() as f64;
        for &(p, q) in pairs {
            let fp = params.forward(features.pixel(p));
            let fq = params.forward(features.pixel(q));
            let (zp, np) = normalize(&fp.a2);
            let (zq, nq) = normalize(&fq.a2);
            let differ = pseudo[p] != pseudo[q];
            contrastive += pair_term(&zp, &zq, differ, margin);
            let diff: Vec<f64> = zp.iter().zip(&zq).map(|(a, b)| a - b).collect();
            let dist = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            // ∂term/∂z_p; ∂/∂z_q is its negation
            let coef = if differ {
                if dist < margin && dist > 0.0 {
                    -2.0 * (margin - dist) / dist
                } else {
                    0.0
                }
            } else {
                2.0
            };
            if coef == 0.0 {
                continue;
            }
            let mut gz = [0.0; EMBED];
            for e in 0..EMBED {
                gz[e] = weight * coef * diff[e];
            }
            for (fw, z, norm, sign) in [(&fp, &zp, np, 1.0), (&fq, &zq, nq, -1.0)] {
                if norm <= 1e-12 {
                    continue;
                }
                let dot: f64 = (0..EMBED).map(|e| z[e] * gz[e] * sign).sum();
                let mut d_a2 = [0.0; EMBED];
                for e in 0..EMBED {
                    d_a2[e] = (sign * gz[e] - z[e] * dot) / norm;
                }
                params.backward(fw, 0.0, &d_a2, &mut grad);
            }
        }
        contrastive /= pairs.len() as f64;
    }
    (
        LossParts {
            ot,
            contrastive,
            total: ot + lambda * contrastive,
        },
        grad,
    )
}

/// Bias-corrected first/second-moment adaptive steps.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adapted {
    pub params: HeadParams,
    /// Total loss before each optimizer step.
    pub trace: Vec<f64>,
    pub contrastive_skipped: bool,
}

pub fn adapt(features: &PixelFeatures, pseudo: &BinaryMask, cfg: &TttConfig) -> Result<Adapted> {
    cfg.validate()?;
    if pseudo.height() != features.height || pseudo.width() != features.width {
        return Err(Error::Structural("pseudo-label and features differ in size".into()));
    }
    let labels = pseudo.bits();
    let mut params = HeadParams::init(features, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_F42D_4C95_7F2D);
    let mut adam = Adam::new(params.theta.len(), cfg.lr);
    let mut order: Vec<usize> = (0..features.n_pixels()).collect();
    let mut trace = Vec::new();
    let single_class = labels.iter().all(|b| *b) || labels.iter().all(|b| !*b);
    if single_class && cfg.lambda > 0.0 {
        log::warn!("pseudo-label has a single class; contrastive term skipped");
    }
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_pixels) {
            let pairs = if cfg.lambda > 0.0 && cfg.pairs > 0 {
                sample_pairs(labels, cfg.pairs, &mut rng).unwrap_or_default()
            } else {
                Vec::new()
            };
            let (loss, grad) =
                loss_and_grad(&params, features, labels, batch, &pairs, cfg.lambda, cfg.margin);
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {} (lr = {}); lower the learning rate",
                    trace.len(),
                    cfg.lr
                )));
            }
            trace.push(loss.total);
            adam.step(&mut params.theta, &grad);
        }
    }
    Ok(Adapted {
        params,
        trace,
        contrastive_skipped: single_class,
    })
}

pub fn predict_proba(features: &PixelFeatures, params: &HeadParams) -> Vec<f64> {
    (0..features.n_pixels())
        .map(|p| sigmoid(params.logit(features.pixel(p))))
        .collect()
}

/// `σ(logit) >= 0.5` per pixel.
pub fn binarize(features: &PixelFeatures, params: &HeadParams) -> BinaryMask {
    let bits = predict_proba(features, params).into_iter().map(|p| p >= 0.5).collect();
    BinaryMask::new(features.height, features.width, bits).expect("feature dims are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_io::encode_raw_f32;

    fn grid(h: usize, w: usize, v: Vec<f32>) -> ScoreGrid {
        ScoreGrid::new(h, w, v).unwrap()
    }

    #[test]
    fn builtin_features_of_constant_grid() {
        let f = build_features(&grid(4, 5, vec![0.3; 20]), None).unwrap();
        assert_eq!(f.channels, 6);
        assert_eq!(f.provenance, Provenance::Builtin);
        for k in 0..4 {
            assert!(f.channel(k).iter().all(|v| (v - 0.3f32 as f64).abs() < 1e-12));
        }
        let rows = f.channel(4);
        assert_eq!(rows[0], 0.0);
        assert_eq!(rows[19], 3.0 / 4.0);
        assert_eq!(f.channel(5)[4], 4.0 / 5.0);
    }

    #[test]
    fn blur_of_single_pixel() {
        let mut v = vec![0.0; 49];
        v[24] = 1.0;
        let b = box_blur(&grid(7, 7, v), 1);
        for r in 0..7 {
            for c in 0..7 {
                let inside = (2..=4).contains(&r) && (2..=4).contains(&c);
                let expect = if inside { 1.0 / 9.0 } else { 0.0 };
                assert!((b[r * 7 + c] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn external_features_pass_through() {
        let vals: Vec<f32> = (0..3 * 2 * 8).map(|i| i as f32 * 0.5 - 3.0).collect();
        let raw = crate::grid_io::decode_raw_f32(&encode_raw_f32(3, 2, 8, &vals)).unwrap();
        let f = build_features(&grid(3, 2, vec![0.0; 6]), Some(&raw)).unwrap();
        assert_eq!(f.channels, 8);
        assert_eq!(f.values, vals.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let bad = build_features(&grid(2, 3, vec![0.0; 6]), Some(&raw));
        assert!(matches!(bad, Err(Error::Structural(_))));
    }

    #[test]
    fn ot_loss_values() {
        assert_eq!(loss_ot(&[1.0, 0.0], &[true, false]), 0.0);
        assert_eq!(loss_ot(&[0.5; 4], &[true; 4]), 0.5);
    }

    #[test]
    fn contrastive_values() {
        let mut emb = vec![0.0; 3 * 2];
        emb[0] = 1.0; // pixel 0 = (1, 0)
        emb[2] = 1.0; // pixel 1 = (1, 0)
        emb[4] = -1.0; // pixel 2 = (-1, 0)
        let pseudo = [false, false, true];
        let same = loss_contrastive(&emb, 2, &pseudo, &[(0, 1)], 0.4);
        assert_eq!(same.value, 0.0);
        let pseudo2 = [false, true, true];
        let hinge = loss_contrastive(&emb, 2, &pseudo2, &[(0, 1)], 0.4);
        assert!((hinge.value - 0.16).abs() < 1e-15);
        let far = loss_contrastive(&emb, 2, &pseudo2, &[(0, 2)], 0.4);
        assert_eq!(far.value, 0.0);
        let single = loss_contrastive(&emb, 2, &[true; 3], &[(0, 2)], 0.4);
        assert!(single.skipped);
        assert_eq!(single.value, 0.0);
    }

    #[test]
    fn pair_sampling_balance() {
        let mut pseudo = vec![false; 100];
        pseudo[3] = true;
        pseudo[40] = true;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = sample_pairs(&pseudo, 256, &mut rng).unwrap();
        assert_eq!(pairs.len(), 256);
        let cross = pairs.iter().filter(|&&(p, q)| pseudo[p] != pseudo[q]).count();
        assert_eq!(cross, 128);
        assert!(pairs.iter().all(|(p, q)| p != q));
        assert!(sample_pairs(&[true; 5], 10, &mut rng).is_none());
    }

    #[test]
    fn zero_logit_is_foreground() {
        let f = build_features(&grid(2, 2, vec![0.1, 0.2, 0.3, 0.4]), None).unwrap();
        let mut params = HeadParams::init(&f, 3);
        let l = params.layout();
        for v in &mut params.theta[l.w3()..] {
            *v = 0.0;
        }
        assert!(binarize(&f, &params).bits().iter().all(|b| *b));
        let b3 = params.layout().b3();
        params.theta[b3] = -10.0;
        assert_eq!(binarize(&f, &params).count(), 0);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let f = build_features(&grid(3, 3, (0..9).map(|i| i as f32 / 8.0).collect()), None).unwrap();
        let params = HeadParams::init(&f, 9);
        for p in 0..9 {
            let z = params.embedding(f.pixel(p));
            let n: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TttConfig::default().validate().is_ok());
        assert!(TttConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TttConfig { margin: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn nan_loss_aborts() {
        let g = grid(4, 4, (0..16).map(|i| i as f32 / 15.0).collect());
        let f = build_features(&g, None).unwrap();
        let cfg = TttConfig {
            lr: f64::INFINITY,
            epochs: 3,
            ..Default::default()
        };
        let pseudo = g.superlevel(0.5);
        assert!(matches!(adapt(&f, &pseudo, &cfg), Err(Error::Numeric(_))));
    }
}
