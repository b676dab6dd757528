//! Layer descriptors: shape propagation, parameter counts and receptive
//! fields, independent of any weights.
//!
//! Text form, one layer per line (`#` starts a comment):
//!
//! ```text
//! kind k h w stride dilation cin cout ratio
//! ```
//!
//! * `kind`: `pad | conv | elu | bn | shuffle | classifier | concat`
//! * `k`: padding: reflection amount for `pad`, implicit zero padding for
//!   `conv` / `classifier`; 0 otherwise
//! * `h w`: kernel height and width (0 for weight-free layers)
//! * `ratio`: upscaling ratio for `shuffle`; for `concat`, the 1-based line
//!   number whose output is concatenated (channel-wise) to the running map
//!
//! Unused columns are 0 (or 1 for stride / dilation).

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Pad,
    Conv,
    Elu,
    BatchNorm,
    Shuffle,
    Classifier,
    Concat,
}

impl LayerKind {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "pad" => LayerKind::Pad,
            "conv" => LayerKind::Conv,
            "elu" => LayerKind::Elu,
            "bn" => LayerKind::BatchNorm,
            "shuffle" => LayerKind::Shuffle,
            "classifier" => LayerKind::Classifier,
            "concat" => LayerKind::Concat,
            other => return Err(Error::Format(format!("unknown layer kind {other:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Pad => "pad",
            LayerKind::Conv => "conv",
            LayerKind::Elu => "elu",
            LayerKind::BatchNorm => "bn",
            LayerKind::Shuffle => "shuffle",
            LayerKind::Classifier => "classifier",
            LayerKind::Concat => "concat",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Classifier)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub pad: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub cin: usize,
    pub cout: usize,
    pub ratio: usize,
}

impl LayerSpec {
    fn base(kind: LayerKind, c: usize) -> Self {
        LayerSpec {
            kind,
            pad: 0,
            kernel_h: 0,
            kernel_w: 0,
            stride: 1,
            dilation: 1,
            cin: c,
            cout: c,
            ratio: 0,
        }
    }

    pub fn pad(c: usize, amount: usize) -> Self {
        LayerSpec {
            pad: amount,
            ..Self::base(LayerKind::Pad, c)
        }
    }

    pub fn conv(cin: usize, cout: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            pad: 0,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            dilation,
            cin,
            cout,
            ratio: 0,
        }
    }

    pub fn classifier(cin: usize, cout: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Classifier,
            pad: padding,
            ..Self::conv(cin, cout, kernel, 1, 1)
        }
    }

    pub fn elu(c: usize) -> Self {
        Self::base(LayerKind::Elu, c)
    }

    pub fn bn(c: usize) -> Self {
        Self::base(LayerKind::BatchNorm, c)
    }

    pub fn shuffle(cin: usize, ratio: usize) -> Self {
        LayerSpec {
            cout: cin / (ratio * ratio).max(1),
            ratio,
            ..Self::base(LayerKind::Shuffle, cin)
        }
    }

    /// Concatenate the output of 1-based layer `source` onto the running map.
    pub fn concat(cin: usize, cout: usize, source: usize) -> Self {
        LayerSpec {
            cin,
            cout,
            ratio: source,
            ..Self::base(LayerKind::Concat, cin)
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::Classifier => self.cin * self.cout * self.kernel_h * self.kernel_w + self.cout,
            LayerKind::BatchNorm => 2 * self.cout,
            _ => 0,
        }
    }

    fn validate(&self, line: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Format(format!("layer {line}: {msg}")));
        if self.stride == 0 || self.dilation == 0 {
            return bad("stride and dilation must be >= 1".into());
        }
        match self.kind {
            LayerKind::Conv | LayerKind::Classifier => {
                if self.kernel_h == 0 || self.kernel_w == 0 || self.cin == 0 || self.cout == 0 {
                    return bad("conv needs positive kernel and channels".into());
                }
            }
            LayerKind::Shuffle => {
                if self.ratio == 0 || self.cin != self.cout * self.ratio * self.ratio {
                    return bad(format!(
                        "shuffle {} -> {} is not C*r^2 -> C with r = {}",
                        self.cin, self.cout, self.ratio
                    ));
                }
            }
            LayerKind::Concat => {
                if self.ratio == 0 || self.ratio >= line {
                    return bad(format!("concat source {} must be an earlier layer", self.ratio));
                }
            }
            LayerKind::Pad | LayerKind::Elu | LayerKind::BatchNorm => {
                if self.cin != self.cout {
                    return bad("channel-preserving layer changes channels".into());
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {} {} {}",
            self.kind.name(),
            self.pad,
            self.kernel_h,
            self.kernel_w,
            self.stride,
            self.dilation,
            self.cin,
            self.cout,
            self.ratio
        )
    }
}

pub fn parse_descriptor(text: &str) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(Error::Format(format!(
                "descriptor line needs 9 fields, got {}: {raw:?}",
                f.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad descriptor field {s:?}")))
        };
        let spec = LayerSpec {
            kind: LayerKind::parse(f[0])?,
            pad: num(f[1])?,
            kernel_h: num(f[2])?,
            kernel_w: num(f[3])?,
            stride: num(f[4])?,
            dilation: num(f[5])?,
            cin: num(f[6])?,
            cout: num(f[7])?,
            ratio: num(f[8])?,
        };
        spec.validate(specs.len() + 1)?;
        specs.push(spec);
    }
    Ok(specs)
}

pub fn format_descriptor(specs: &[LayerSpec]) -> String {
    let mut out = String::from("# kind k h w stride dilation cin cout ratio\n");
    for s in specs {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    out
}

pub fn read_descriptor(path: impl AsRef<Path>) -> Result<Vec<LayerSpec>> {
    let path = path.as_ref();
    parse_descriptor(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Output `(C, H, W)` of every layer for an input of `input` dims.
pub fn shape_check(specs: &[LayerSpec], input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
    let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(specs.len());
    let mut cur = input;
    for (idx, s) in specs.iter().enumerate() {
        let (c, h, w) = cur;
        let expect_cin = |cin: usize| -> Result<()> {
            if cin != c {
                return Err(dim_err!("layer {}: expects {cin} channels, got {c}", idx + 1));
            }
            Ok(())
        };
        cur = match s.kind {
            LayerKind::Pad => {
                expect_cin(s.cin)?;
                (c, h + 2 * s.pad, w + 2 * s.pad)
            }
            LayerKind::Conv | LayerKind::Classifier => {
                expect_cin(s.cin)?;
                let span_h = s.dilation * (s.kernel_h - 1) + 1;
                let span_w = s.dilation * (s.kernel_w - 1) + 1;
                let (hp, wp) = (h + 2 * s.pad, w + 2 * s.pad);
                if hp < span_h || wp < span_w {
                    return Err(dim_err!("layer {}: kernel larger than input {hp}x{wp}", idx + 1));
                }
                (s.cout, (hp - span_h) / s.stride + 1, (wp - span_w) / s.stride + 1)
            }
            LayerKind::Elu | LayerKind::BatchNorm => {
                expect_cin(s.cin)?;
                cur
            }
            LayerKind::Shuffle => {
                expect_cin(s.cin)?;
                (s.cout, h * s.ratio, w * s.ratio)
            }
            LayerKind::Concat => {
                expect_cin(s.cin)?;
                let src = shapes[s.ratio - 1];
                if (src.1, src.2) != (h, w) {
                    return Err(dim_err!(
                        "layer {}: concat of {}x{} onto {h}x{w}",
                        idx + 1,
                        src.1,
                        src.2
                    ));
                }
                if c + src.0 != s.cout {
                    return Err(dim_err!(
                        "layer {}: concat gives {} channels, not {}",
                        idx + 1,
                        c + src.0,
                        s.cout
                    ));
                }
                (s.cout, h, w)
            }
        };
        shapes.push(cur);
    }
    Ok(shapes)
}

pub fn param_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::param_count).sum()
}

/// Receptive field after one layer: extent in input pixels and the spacing
/// (in input pixels) between adjacent outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldStep {
    pub rf: f64,
    pub jump: f64,
}

/// How one layer maps an output position back to the positions it reads.
#[derive(Clone, Copy)]
enum Back {
    Window { stride: i64, lo: i64, hi: i64 },
    Split(i64),
    Join(usize),
    Same,
}

/// Lowest (`upper == false`) or highest input position read by position
/// `p` of the output of the first `n` layers.
fn reach(back: &[Back], n: usize, p: i64, upper: bool) -> i64 {
    if n == 0 {
        return p;
    }
    match back[n - 1] {
        Back::Window { stride, lo, hi } => reach(back, n - 1, p * stride + if upper { hi } else { lo }, upper),
        Back::Split(r) => reach(back, n - 1, p.div_euclid(r), upper),
        Back::Join(src) => {
            let (a, b) = (reach(back, n - 1, p, upper), reach(back, src, p, upper));
            if upper {
                a.max(b)
            } else {
                a.min(b)
            }
        }
        Back::Same => reach(back, n - 1, p, upper),
    }
}

/// Per-layer receptive field, measured exactly: the widest span of input
/// positions any single output position depends on, away from the borders.
/// Without shuffles this is the usual `rf' = rf + (k_eff - 1) * jump`
/// with `k_eff = 1 + (k - 1) * dilation`. After a shuffle the span is
/// rounded up to whole source cells, so it can exceed that recurrence.
/// `jump' = jump * stride`, and a shuffle divides the jump by its ratio.
pub fn receptive_field(specs: &[LayerSpec]) -> Result<Vec<FieldStep>> {
    let mut steps: Vec<FieldStep> = Vec::with_capacity(specs.len());
    let mut back = Vec::with_capacity(specs.len());
    let mut jump = 1.0;
    // the span pattern repeats with this period in output positions
    let mut period = 1i64;
    for (idx, s) in specs.iter().enumerate() {
        let b = match s.kind {
            LayerKind::Conv | LayerKind::Classifier => {
                if s.kernel_h != s.kernel_w {
                    return Err(Error::Invalid(format!(
                        "layer {}: receptive field needs square kernels",
                        idx + 1
                    )));
                }
                jump *= s.stride as f64;
                let pad = s.pad as i64;
                Back::Window {
                    stride: s.stride as i64,
                    lo: -pad,
                    hi: -pad + ((s.kernel_h - 1) * s.dilation) as i64,
                }
            }
            LayerKind::Pad => Back::Window {
                stride: 1,
                lo: -(s.pad as i64),
                hi: -(s.pad as i64),
            },
            LayerKind::Shuffle => {
                jump /= s.ratio as f64;
                period *= s.ratio as i64;
                Back::Split(s.ratio as i64)
            }
            LayerKind::Elu | LayerKind::BatchNorm => Back::Same,
            LayerKind::Concat => {
                if steps[s.ratio - 1].jump != jump {
                    return Err(Error::Invalid(format!(
                        "layer {}: concat of maps with different jumps",
                        idx + 1
                    )));
                }
                Back::Join(s.ratio)
            }
        };
        back.push(b);
        let n = back.len();
        let rf = (0..period)
            .map(|p| reach(&back, n, p, true) - reach(&back, n, p, false) + 1)
            .max()
            .unwrap_or(1);
        steps.push(FieldStep { rf: rf as f64, jump });
    }
    Ok(steps)
}

/// The 128x128 encoder / sub-encoder / decoder table, one spec per row,
/// with the concat of rows 19 and 27 as its own row after row 27.
pub fn appendix_descriptor() -> Vec<LayerSpec> {
    let block = |cin: usize, cout: usize, pad: usize, stride: usize, dilation: usize, bn: bool| {
        let mut v = vec![
            LayerSpec::pad(cin, pad),
            LayerSpec::conv(cin, cout, 3, stride, dilation),
            LayerSpec::elu(cout),
        ];
        if bn {
            v.push(LayerSpec::bn(cout));
        }
        v
    };
    let mut s = Vec::new();
    // encoder
    s.extend(block(3, 64, 1, 1, 1, false));
    s.extend(block(64, 128, 1, 2, 1, true));
    s.extend(block(128, 128, 1, 1, 1, true));
    s.extend(block(128, 128, 1, 1, 1, true));
    s.extend(block(128, 256, 1, 2, 1, true)); // row 19
                                              // sub-encoder
    s.extend(block(256, 256, 4, 1, 4, true));
    s.extend(block(256, 256, 3, 1, 3, true)); // row 27
    s.push(LayerSpec::concat(256, 512, 19));
    // decoder
    s.extend(block(512, 512, 1, 1, 1, true));
    s.push(LayerSpec::shuffle(512, 2));
    s.extend(block(128, 128, 1, 1, 1, true));
    s.extend(block(128, 128, 1, 1, 1, true));
    s.push(LayerSpec::shuffle(128, 2));
    s.extend(block(32, 32, 1, 1, 1, false));
    s.extend(block(32, 32, 1, 1, 1, false));
    s.push(LayerSpec::classifier(32, 3, 3, 1));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_rf() {
        let rf = receptive_field(&[LayerSpec::conv(1, 1, 3, 1, 1)]).unwrap();
        assert_eq!(rf[0].rf, 3.0);
    }

    #[test]
    fn two_conv_rf() {
        let rf = receptive_field(&[LayerSpec::conv(1, 1, 3, 1, 1), LayerSpec::conv(1, 1, 3, 2, 1)]).unwrap();
        assert_eq!(rf[0].rf, 3.0);
        assert_eq!(rf[1].rf, 5.0);
        assert_eq!(rf[1].jump, 2.0);
    }

    #[test]
    fn shuffle_rounds_up_to_source_cells() {
        // a 2-tap conv after stride 2 and shuffle 2 straddles two source
        // cells at odd positions
        let specs = [
            LayerSpec::conv(4, 4, 1, 2, 1),
            LayerSpec::shuffle(4, 2),
            LayerSpec::conv(1, 1, 2, 1, 1),
        ];
        let rf = receptive_field(&specs).unwrap();
        assert_eq!(rf[1].rf, 1.0);
        assert_eq!(rf[1].jump, 1.0);
        assert_eq!(rf[2].rf, 3.0);
    }

    #[test]
    fn concat_takes_wider_field() {
        let specs = [
            LayerSpec::conv(1, 1, 3, 1, 1),
            LayerSpec::pad(1, 2),
            LayerSpec::conv(1, 1, 5, 1, 1),
            LayerSpec::concat(1, 2, 1),
        ];
        let rf = receptive_field(&specs).unwrap();
        assert_eq!(rf[3].rf, 7.0);
    }

    #[test]
    fn empty_stack_keeps_shape() {
        assert!(shape_check(&[], (3, 8, 8)).unwrap().is_empty());
        assert_eq!(param_count(&[]), 0);
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let specs = appendix_descriptor();
        let text = format_descriptor(&specs);
        assert_eq!(parse_descriptor(&text).unwrap(), specs);
        assert!(parse_descriptor("conv 0 3 3 1 1 3").is_err());
        assert!(parse_descriptor("warp 0 3 3 1 1 3 3 0").is_err());
        assert!(parse_descriptor("conv 0 3 3 0 1 3 3 0").is_err());
        assert!(parse_descriptor("shuffle 0 0 0 1 1 6 3 2").is_err());
        assert!(parse_descriptor("concat 0 0 0 1 1 3 6 1").is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let specs = [LayerSpec::conv(3, 4, 3, 1, 1), LayerSpec::conv(5, 4, 3, 1, 1)];
        assert!(shape_check(&specs, (3, 8, 8)).is_err());
        assert!(shape_check(&[LayerSpec::conv(3, 4, 9, 1, 1)], (3, 4, 4)).is_err());
    }
}
