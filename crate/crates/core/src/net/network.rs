//! Trainable layer stack with cached forward and exact backward passes.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};

use super::conv::{elu, pixel_shuffle, pixel_unshuffle, reflect_pad, reflect_pad_backward, Conv2d, ConvCache};
use super::descriptor::{format_descriptor, parse_descriptor, LayerKind, LayerSpec};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    ReflectPad(usize),
    Conv(Conv2d),
    Elu,
    Shuffle(usize),
}

enum LayerCache {
    Pad((usize, usize, usize)),
    Conv(ConvCache),
    Elu(Tensor),
    Shuffle,
    Dropout(Vec<f64>),
}

/// Forward activations needed by [`Network::backward`].
pub struct ForwardCache {
    caches: Vec<LayerCache>,
}

/// Inverted dropout applied to the output of one layer during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub after_layer: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    dropout: Option<Dropout>,
}

/// Parameter gradients in [`Network::params`] order (weight, bias per conv).
pub type Gradients = Vec<Vec<f64>>;

impl Network {
    /// Zero-weight network for a descriptor of trainable layer kinds.
    pub fn from_specs(specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| match s.kind {
                LayerKind::Pad => Ok(Layer::ReflectPad(s.pad)),
                LayerKind::Conv | LayerKind::Classifier => {
                    if s.kernel_h != s.kernel_w {
                        return Err(Error::Invalid(format!("layer {}: non-square kernel", i + 1)));
                    }
                    Ok(Layer::Conv(Conv2d::zeros(
                        s.cin, s.cout, s.kernel_h, s.stride, s.dilation, s.pad,
                    )))
                }
                LayerKind::Elu => Ok(Layer::Elu),
                LayerKind::Shuffle => Ok(Layer::Shuffle(s.ratio)),
                other => Err(Error::Invalid(format!(
                    "layer {}: {} is descriptor-only and cannot be trained",
                    i + 1,
                    other.name()
                ))),
            })
            .collect::<Result<_>>()?;
        Ok(Network {
            specs: specs.to_vec(),
            layers,
            dropout: None,
        })
    }

    /// Small trainable stack: three conv-ELU blocks (plain, stride 2,
    /// dilation 2), a 1x1 classifier to `4 K` channels and a x2 shuffle.
    pub fn desk_specs(num_classes: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::pad(3, 1),
            LayerSpec::conv(3, 16, 3, 1, 1),
            LayerSpec::elu(16),
            LayerSpec::pad(16, 1),
            LayerSpec::conv(16, 32, 3, 2, 1),
            LayerSpec::elu(32),
            LayerSpec::pad(32, 2),
            LayerSpec::conv(32, 32, 3, 1, 2),
            LayerSpec::elu(32),
            LayerSpec::classifier(32, 4 * num_classes, 1, 0),
            LayerSpec::shuffle(4 * num_classes, 2),
        ]
    }

    /// Desk stack with Glorot-uniform weights; dropout (if `rate > 0`) acts
    /// on the penultimate activation, the input of the classifier.
    pub fn desk(num_classes: usize, dropout_rate: f64, rng: &mut impl RngCore) -> Result<Self> {
        let specs = Self::desk_specs(num_classes);
        let mut net = Self::from_specs(&specs)?;
        net.init_glorot(rng);
        if dropout_rate > 0.0 {
            net.set_dropout(Some(Dropout {
                after_layer: 8,
                rate: dropout_rate,
            }))?;
        }
        Ok(net)
    }

    pub fn set_dropout(&mut self, dropout: Option<Dropout>) -> Result<()> {
        if let Some(d) = dropout {
            if d.after_layer >= self.layers.len() || !(0.0..1.0).contains(&d.rate) {
                return Err(Error::Config(format!("invalid dropout {d:?}")));
            }
        }
        self.dropout = dropout;
        Ok(())
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn init_glorot(&mut self, rng: &mut impl RngCore) {
        for layer in &mut self.layers {
            if let Layer::Conv(c) = layer {
                let area = c.kernel * c.kernel;
                let limit = (6.0 / ((c.cin + c.cout) * area) as f64).sqrt();
                for w in &mut c.weight {
                    *w = rng.random_range(-limit..limit);
                }
                c.bias.fill(0.0);
            }
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some([c.weight.as_slice(), c.bias.as_slice()]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            if let Layer::Conv(c) = l {
                out.push(c.weight.as_mut_slice());
                out.push(c.bias.as_mut_slice());
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Gradients {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Evaluation forward pass (no dropout).
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_impl(x, None)?.0)
    }

    /// Forward pass caching activations. `rng` enables training-mode
    /// dropout; `None` runs in evaluation mode.
    pub fn forward(&self, x: &Tensor, rng: Option<&mut dyn RngCore>) -> Result<(Tensor, ForwardCache)> {
        self.forward_impl(x, rng)
    }

    fn forward_impl(&self, x: &Tensor, mut rng: Option<&mut dyn RngCore>) -> Result<(Tensor, ForwardCache)> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len() + 1);
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::ReflectPad(p) => {
                    let dims = cur.chw()?;
                    caches.push(LayerCache::Pad(dims));
                    reflect_pad(&cur, *p)?
                }
                Layer::Conv(c) => {
                    let (out, cache) = c.forward(&cur)?;
                    caches.push(LayerCache::Conv(cache));
                    out
                }
                Layer::Elu => {
                    let mut out = cur;
                    out.data_mut().iter_mut().for_each(|v| *v = elu(*v));
                    caches.push(LayerCache::Elu(out.clone()));
                    out
                }
                Layer::Shuffle(r) => {
                    caches.push(LayerCache::Shuffle);
                    pixel_shuffle(&cur, *r)?
                }
            };
            if let (Some(d), Some(rng)) = (self.dropout, rng.as_deref_mut()) {
                if d.after_layer == idx {
                    let keep = 1.0 - d.rate;
                    let mask: Vec<f64> = (0..cur.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    cur.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    caches.push(LayerCache::Dropout(mask));
                }
            }
        }
        Ok((cur, ForwardCache { caches }))
    }

    /// Backpropagate `dout`, accumulating parameter gradients into `grads`.
    /// Returns dL/dinput when `need_input_grad` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dout: &Tensor,
        grads: &mut Gradients,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        if grads.len() != self.params().len() {
            return Err(dim_err!(
                "gradient buffer has {} slots, need {}",
                grads.len(),
                self.params().len()
            ));
        }
        let mut g = dout.clone();
        let mut ci = cache.caches.len();
        let mut pi = grads.len();
        let first_conv = self.layers.iter().position(|l| matches!(l, Layer::Conv(_)));
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if let Some(d) = self.dropout {
                if d.after_layer == idx {
                    if let Some(LayerCache::Dropout(mask)) = ci.checked_sub(1).and_then(|i| cache.caches.get(i)) {
                        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                        ci -= 1;
                    }
                }
            }
            ci = ci
                .checked_sub(1)
                .ok_or_else(|| Error::Invalid("forward cache is missing layers".into()))?;
            let lc = &cache.caches[ci];
            // below the first conv nothing needs the gradient unless asked
            let needed = need_input_grad || first_conv.is_some_and(|f| idx > f);
            g = match (layer, lc) {
                (Layer::ReflectPad(p), LayerCache::Pad(dims)) => {
                    if !needed {
                        break;
                    }
                    reflect_pad_backward(&g, *p, *dims)?
                }
                (Layer::Conv(c), LayerCache::Conv(cc)) => {
                    pi -= 2;
                    let (head, tail) = grads.split_at_mut(pi + 1);
                    let dx = c.backward(cc, &g, &mut head[pi], &mut tail[0], needed)?;
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::Elu, LayerCache::Elu(out)) => {
                    if !needed {
                        break;
                    }
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                        if y <= 0.0 {
                            *d *= y + 1.0;
                        }
                    }
                    dx
                }
                (Layer::Shuffle(r), LayerCache::Shuffle) => pixel_unshuffle(&g, *r)?,
                _ => return Err(Error::Invalid("forward cache does not match network".into())),
            };
        }
        Ok(need_input_grad.then_some(g))
    }

    /// Checkpoint layout:
    ///
    /// ```text
    /// "CSEK" | 0x01 | desc_len: u32 | descriptor text | count: u32 |
    /// count x offset: u64 (from the start of the tensor area) | CSEG tensors
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = format_descriptor(&self.specs).into_bytes();
        let tensors: Vec<Vec<u8>> = self
            .params()
            .iter()
            .map(|p| {
                Tensor::new(vec![p.len()], p.to_vec())
                    .expect("non-empty param")
                    .to_bytes()
            })
            .collect();
        let mut out = b"CSEK".to_vec();
        out.push(1);
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(&desc);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        let mut off = 0u64;
        for t in &tensors {
            out.extend_from_slice(&off.to_le_bytes());
            off += t.len() as u64;
        }
        for t in &tensors {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt_err = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 9 || &bytes[..4] != b"CSEK" || bytes[4] != 1 {
            return Err(fmt_err("bad magic or version"));
        }
        let read_u32 = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| fmt_err("truncated header"))
        };
        let desc_len = read_u32(5)? as usize;
        let desc = bytes
            .get(9..9 + desc_len)
            .ok_or_else(|| fmt_err("truncated descriptor"))?;
        let desc = std::str::from_utf8(desc).map_err(|_| fmt_err("descriptor is not UTF-8"))?;
        let mut net = Network::from_specs(&parse_descriptor(desc)?)?;
        let mut pos = 9 + desc_len;
        let count = read_u32(pos)? as usize;
        pos += 4;
        if count != net.params().len() {
            return Err(fmt_err("tensor count does not match descriptor"));
        }
        let mut offsets = Vec::with_capacity(count);
        for _ in 0..count {
            let b = bytes.get(pos..pos + 8).ok_or_else(|| fmt_err("truncated index"))?;
            offsets.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
            pos += 8;
        }
        let area = &bytes[pos..];
        for (param, off) in net.params_mut().into_iter().zip(offsets) {
            let slice = area.get(off..).ok_or_else(|| fmt_err("offset past end"))?;
            let (t, _) = Tensor::from_bytes_prefix(slice)?;
            if t.len() != param.len() {
                return Err(fmt_err("parameter size mismatch"));
            }
            param.copy_from_slice(t.data());
        }
        Ok(net)
    }

    /// Write via a temporary file and rename, so a crash never leaves a
    /// half-written checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
