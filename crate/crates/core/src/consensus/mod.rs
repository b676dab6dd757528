//! Segmentation losses with exact gradients with respect to the logits.
//!
//! * [`pixelwise_ce`]: softmax cross-entropy averaged over every pixel.
//! * [`blob_marginalized_ce`]: the same per-pixel loss, re-weighted so that
//!   background, face and every occlusion blob count equally regardless of
//!   their pixel area.
//! * [`consensus_loss`]: per blob, `alpha * -log pbar[k*]` pulls the blob's
//!   mean prediction `pbar` to its label and
//!   `beta / |c| * sum_s KL(pbar || p_s)` pulls every pixel toward that mean;
//!   blobs are averaged with a single `1 / N_C`.

mod gradcheck;

pub use gradcheck::{gradcheck, relative_error, GradcheckReport};

use std::fmt::Write as _;

use crate::blobpipe::{blob_classes, Blob, BlobMap, BACKGROUND, FACE};
use crate::error::{dim_err, Error, Result};
use crate::grid::LabelMap;
use crate::tensor::{log_softmax_channels, softmax_channels, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub num_classes: usize,
    /// Lower clamp on probabilities inside logarithms.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 10.0,
            beta: 5.0,
            num_classes: 3,
            epsilon: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || self.alpha + self.beta <= 0.0 {
            return Err(Error::Config(format!(
                "need alpha, beta >= 0 with alpha + beta > 0 (got {}, {})",
                self.alpha, self.beta
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(Error::Config(format!("epsilon {} outside (0, 1e-6]", self.epsilon)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Mean prediction over one blob.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobStats {
    pub blob_id: u32,
    pub size: usize,
    pub mean_prob: Vec<f64>,
}

/// Contribution of one blob, before the `1 / N_C` average.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobTerm {
    pub blob_id: u32,
    pub class: u8,
    pub size: usize,
    pub term1: f64,
    pub term2: f64,
}

#[derive(Clone, Debug)]
pub struct LossResult {
    pub loss: f64,
    /// dL/dz, same dims as the logits.
    pub grad: Tensor,
    pub blobs: Vec<BlobTerm>,
}

impl LossResult {
    /// CSV rows `blob_id,class,size,term1,term2` with a header line.
    pub fn breakdown_csv(&self) -> String {
        let mut out = String::from("blob_id,class,size,term1,term2\n");
        for b in &self.blobs {
            let _ = writeln!(
                out,
                "{},{},{},{:.17e},{:.17e}",
                b.blob_id, b.class, b.size, b.term1, b.term2
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Pixelwise,
    BlobMarginalized,
    Consensus,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pixelwise" => Ok(LossKind::Pixelwise),
            "blob_marginalized" => Ok(LossKind::BlobMarginalized),
            "consensus" => Ok(LossKind::Consensus),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (pixelwise | blob_marginalized | consensus)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Pixelwise => "pixelwise",
            LossKind::BlobMarginalized => "blob_marginalized",
            LossKind::Consensus => "consensus",
        }
    }

    pub fn evaluate(self, z: &Tensor, y: &LabelMap, blobs: &BlobMap, cfg: &LossConfig) -> Result<LossResult> {
        match self {
            LossKind::Pixelwise => pixelwise_ce(z, y, cfg),
            LossKind::BlobMarginalized => blob_marginalized_ce(z, y, blobs, cfg),
            LossKind::Consensus => consensus_loss(z, y, blobs, cfg),
        }
    }
}

fn check_inputs(z: &Tensor, y: &LabelMap, cfg: &LossConfig) -> Result<(usize, usize, usize)> {
    let (k, h, w) = z.chw()?;
    if k != cfg.num_classes {
        return Err(dim_err!("logits have {k} classes, config says {}", cfg.num_classes));
    }
    if y.dims() != (h, w) {
        return Err(dim_err!("labels {:?} vs logits {h}x{w}", y.dims()));
    }
    if let Some(&bad) = y.as_slice().iter().find(|&&c| c as usize >= k) {
        return Err(Error::Invalid(format!("class id {bad} out of range for K = {k}")));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok((k, h, w))
}

/// Per-pixel cross-entropy `-log p_s[y_s]` and softmax.
fn per_pixel_ce(z: &Tensor, y: &LabelMap) -> Result<(Vec<f64>, Tensor)> {
    let logp = log_softmax_channels(z)?;
    let p = softmax_channels(z)?;
    let plane = y.len();
    let ce = y
        .as_slice()
        .iter()
        .enumerate()
        .map(|(s, &c)| -logp.data()[c as usize * plane + s])
        .collect();
    Ok((ce, p))
}

/// Cross-entropy with per-pixel weights; gradient `w_s (p_s - onehot)`.
fn weighted_ce(z: &Tensor, y: &LabelMap, weights: &[f64]) -> Result<(f64, Tensor)> {
    let (ce, p) = per_pixel_ce(z, y)?;
    let plane = y.len();
    let k = z.dims()[0];
    let mut grad = p.into_data();
    let mut loss = 0.0;
    for s in 0..plane {
        let w = weights[s];
        loss += w * ce[s];
        for c in 0..k {
            grad[c * plane + s] *= w;
        }
        grad[y.as_slice()[s] as usize * plane + s] -= w;
    }
    Ok((loss, Tensor::new(z.dims().to_vec(), grad)?))
}

/// `-(1/HW) sum_s log p_s[y_s]`.
pub fn pixelwise_ce(z: &Tensor, y: &LabelMap, cfg: &LossConfig) -> Result<LossResult> {
    let (_, h, w) = check_inputs(z, y, cfg)?;
    let weights = vec![1.0 / (h * w) as f64; h * w];
    let (loss, grad) = weighted_ce(z, y, &weights)?;
    Ok(LossResult {
        loss,
        grad,
        blobs: Vec::new(),
    })
}

/// Face term + background term + mean over occlusion blobs of their inner
/// means. Classes other than background and face are treated like the
/// occlusion class: one inner mean per blob, averaged over that class's
/// blobs. Absent classes contribute nothing.
pub fn blob_marginalized_ce(z: &Tensor, y: &LabelMap, blobs: &BlobMap, cfg: &LossConfig) -> Result<LossResult> {
    let (k, _, _) = check_inputs(z, y, cfg)?;
    let groups = blob_classes(y, blobs)?;

    let mut class_pixels = vec![0usize; k];
    let mut class_blobs = vec![0usize; k];
    for b in &groups {
        class_pixels[b.class as usize] += b.pixels.len();
        class_blobs[b.class as usize] += 1;
    }
    let mut weights = vec![0.0; y.len()];
    for b in &groups {
        let wgt = if b.class == BACKGROUND || b.class == FACE {
            1.0 / class_pixels[b.class as usize] as f64
        } else {
            1.0 / (class_blobs[b.class as usize] * b.pixels.len()) as f64
        };
        for &s in &b.pixels {
            weights[s] = wgt;
        }
    }
    let (ce, _) = per_pixel_ce(z, y)?;
    let terms = groups
        .iter()
        .map(|b| BlobTerm {
            blob_id: b.id,
            class: b.class,
            size: b.pixels.len(),
            term1: b.pixels.iter().map(|&s| weights[s] * ce[s]).sum(),
            term2: 0.0,
        })
        .collect();
    let (loss, grad) = weighted_ce(z, y, &weights)?;
    Ok(LossResult {
        loss,
        grad,
        blobs: terms,
    })
}

/// Arithmetic mean of the softmax columns over `pixels`.
pub fn blob_mean_prob(p: &Tensor, blob_id: u32, pixels: &[usize]) -> Result<BlobStats> {
    let (k, h, w) = p.chw()?;
    if pixels.is_empty() {
        return Err(Error::Invalid(format!("blob {blob_id} is empty")));
    }
    let plane = h * w;
    if let Some(&bad) = pixels.iter().find(|&&s| s >= plane) {
        return Err(dim_err!("pixel index {bad} outside {h}x{w}"));
    }
    let n = pixels.len() as f64;
    let mean_prob = (0..k)
        .map(|c| pixels.iter().map(|&s| p.data()[c * plane + s]).sum::<f64>() / n)
        .collect();
    Ok(BlobStats {
        blob_id,
        size: pixels.len(),
        mean_prob,
    })
}

/// Structure-via-consensus objective averaged over all non-empty blobs.
///
/// Gradient, per blob of size `n` with target `k*`, writing `g` for
/// dL/dpbar:
///
/// ```text
/// g_k       = -alpha [k = k*] / pbar_k* + beta (log pbar_k + 1) - beta/n sum_s log p_s,k
/// dL/dz_s   = J_s^T g / n  +  (a_s - p_s sum_k a_s,k),   a_s,k = -beta/n pbar_k
/// ```
///
/// where `J_s` is the softmax Jacobian at pixel `s` and the second part is
/// the direct path through `log p_s` (zero on clamped entries).
pub fn consensus_loss(z: &Tensor, y: &LabelMap, blobs: &BlobMap, cfg: &LossConfig) -> Result<LossResult> {
    cfg.validate()?;
    let (k, h, w) = check_inputs(z, y, cfg)?;
    let groups = blob_classes(y, blobs)?;
    let plane = h * w;
    let p = softmax_channels(z)?;
    let logp = log_softmax_channels(z)?;
    let log_eps = cfg.epsilon.ln();
    let n_blobs = groups.len() as f64;

    let mut grad = vec![0.0; k * plane];
    let mut terms = Vec::with_capacity(groups.len());
    let mut loss = 0.0;

    let mut g = vec![0.0; k];
    let mut a = vec![0.0; k];
    for Blob { id, class, pixels } in &groups {
        let stats = blob_mean_prob(&p, *id, pixels)?;
        let pbar = &stats.mean_prob;
        let n = pixels.len() as f64;
        let target = *class as usize;

        let log_pbar: Vec<f64> = pbar.iter().map(|&v| v.max(cfg.epsilon).ln()).collect();
        let term1 = -cfg.alpha * log_pbar[target];

        // sum_s log p_s,k (clamped) per class, and the KL sum
        let mut sum_logp = vec![0.0; k];
        let mut kl_sum = 0.0;
        for &s in pixels {
            for c in 0..k {
                let lp = logp.data()[c * plane + s].max(log_eps);
                sum_logp[c] += lp;
                kl_sum += pbar[c] * (log_pbar[c] - lp);
            }
        }
        let term2 = cfg.beta / n * kl_sum;
        loss += term1 + term2;
        terms.push(BlobTerm {
            blob_id: *id,
            class: *class,
            size: pixels.len(),
            term1,
            term2,
        });

        for c in 0..k {
            g[c] = cfg.beta * (log_pbar[c] + 1.0) - cfg.beta / n * sum_logp[c];
        }
        if pbar[target] > cfg.epsilon {
            g[target] -= cfg.alpha / pbar[target];
        }

        for &s in pixels {
            // path through pbar
            let gp: f64 = (0..k).map(|c| p.data()[c * plane + s] * g[c]).sum();
            // direct path through log p_s
            let mut a_sum = 0.0;
            for c in 0..k {
                let clamped = logp.data()[c * plane + s] < log_eps;
                a[c] = if clamped { 0.0 } else { -cfg.beta / n * pbar[c] };
                a_sum += a[c];
            }
            for c in 0..k {
                let ps = p.data()[c * plane + s];
                let via_mean = ps * (g[c] - gp) / n;
                let direct = a[c] - ps * a_sum;
                grad[c * plane + s] = (via_mean + direct) / n_blobs;
            }
        }
    }

    Ok(LossResult {
        loss: loss / n_blobs,
        grad: Tensor::new(z.dims().to_vec(), grad)?,
        blobs: terms,
    })
}
