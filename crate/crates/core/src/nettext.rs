//! Line-oriented network description.
//!
//! ```text
//! # comment
//! input 20 20 1
//! conv c1 k=3x3 out=4 stride=1 pad=0
//! relu r1
//! pool p1 k=2x2 stride=2 pad=0
//! conv c2 k=3x3 out=4 stride=1 pad=0 est=2 bias=0
//! gap g
//! ```
//!
//! Convolution input channels follow from the preceding layers.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

use crate::layers::{ConvSpec, PoolSpec};
use crate::network::{LayerOp, LayerSpec, NetworkSpec};
use crate::{Dims, Error, Result};

fn perr(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse { line, detail: detail.into() }
}

fn number(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| perr(line, format!("`{key}` expects a non-negative integer, found `{v}`")))
}

struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, tokens: &[&'a str], allowed: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in tokens {
            let (k, v) = t.split_once('=').ok_or_else(|| perr(line, format!("expected key=value, found `{t}`")))?;
            if !allowed.contains(&k) {
                return Err(perr(line, format!("unknown field `{k}`")));
            }
            if map.insert(k, v).is_some() {
                return Err(perr(line, format!("field `{k}` given twice")));
            }
        }
        Ok(Fields { line, map })
    }

    fn required(&self, key: &str) -> Result<usize> {
        let v = self.map.get(key).ok_or_else(|| perr(self.line, format!("missing field `{key}`")))?;
        number(self.line, key, v)
    }

    fn optional(&self, key: &str, default: usize) -> Result<usize> {
        self.map.get(key).map_or(Ok(default), |v| number(self.line, key, v))
    }

    fn kernel(&self) -> Result<(usize, usize)> {
        let v = self.map.get("k").ok_or_else(|| perr(self.line, "missing field `k`"))?;
        let (h, w) = v.split_once('x').ok_or_else(|| perr(self.line, format!("`k` expects HxW, found `{v}`")))?;
        Ok((number(self.line, "k", h)?, number(self.line, "k", w)?))
    }
}

pub fn parse_net(text: &str) -> Result<NetworkSpec> {
    let mut input: Option<Dims> = None;
    let mut layers = Vec::new();
    let mut names = HashSet::new();
    let mut channels = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let Some((&directive, rest)) = tokens.split_first() else {
            continue;
        };
        if directive == "input" {
            if input.is_some() {
                return Err(perr(line, "`input` given twice"));
            }
            if !layers.is_empty() {
                return Err(perr(line, "`input` must precede all layers"));
            }
            let [h, w, c] = rest else {
                return Err(perr(line, "`input` expects H W C"));
            };
            let d = Dims::new(number(line, "H", h)?, number(line, "W", w)?, number(line, "C", c)?);
            if d.is_empty() {
                return Err(perr(line, "input dims must be positive"));
            }
            channels = d.c;
            input = Some(d);
            continue;
        }
        if input.is_none() {
            return Err(perr(line, "missing `input` line before the first layer"));
        }
        if !matches!(directive, "conv" | "pool" | "relu" | "gap") {
            return Err(perr(line, format!("unknown directive `{directive}`")));
        }
        let (&name, fields) = rest.split_first().ok_or_else(|| perr(line, format!("`{directive}` needs a name")))?;
        if name.contains('=') {
            return Err(perr(line, format!("`{directive}` needs a name before its fields")));
        }
        if !names.insert(name.to_string()) {
            return Err(perr(line, format!("duplicate layer name `{name}`")));
        }
        let layer = match directive {
            "conv" => {
                let f = Fields::parse(line, fields, &["k", "out", "stride", "pad", "est", "bias"])?;
                let (kh, kw) = f.kernel()?;
                let bias = match f.optional("bias", 1)? {
                    0 => false,
                    1 => true,
                    b => return Err(perr(line, format!("`bias` must be 0 or 1, found {b}"))),
                };
                let spec = ConvSpec::new(kh, kw, channels, f.required("out")?)
                    .with_stride(f.required("stride")?)
                    .with_pad(f.required("pad")?)
                    .with_est(f.optional("est", 1)?)
                    .with_bias(bias);
                spec.validate().map_err(|e| perr(line, e.to_string()))?;
                channels = spec.out_channels;
                LayerSpec::conv(name, spec)
            }
            "pool" => {
                let f = Fields::parse(line, fields, &["k", "stride", "pad", "est"])?;
                let (kh, kw) = f.kernel()?;
                let spec = PoolSpec::new(kh, kw, f.required("stride")?)
                    .with_pad(f.required("pad")?)
                    .with_est(f.optional("est", 1)?);
                if kh == 0 || kw == 0 || spec.stride == 0 || spec.est == 0 {
                    return Err(perr(line, "pool kernel, stride and est must be positive"));
                }
                LayerSpec::pool(name, spec)
            }
            other => {
                if !fields.is_empty() {
                    return Err(perr(line, format!("`{other}` takes no fields")));
                }
                if other == "relu" {
                    LayerSpec::relu(name)
                } else {
                    LayerSpec::gap(name)
                }
            }
        };
        layers.push(layer);
    }
    let input = input.ok_or_else(|| perr(text.lines().count().max(1), "missing `input` line"))?;
    NetworkSpec::new(input, layers).map_err(|e| perr(0, e.to_string()))
}

/// Canonical text: `est` and `bias` appear only when not at their defaults.
pub fn render_net(net: &NetworkSpec) -> String {
    let d = net.input_dims;
    let mut out = format!("input {} {} {}\n", d.h, d.w, d.c);
    for l in &net.layers {
        match &l.op {
            LayerOp::Conv(c) => {
                let _ = write!(
                    out,
                    "conv {} k={}x{} out={} stride={} pad={}",
                    l.name, c.kernel_h, c.kernel_w, c.out_channels, c.stride, c.pad
                );
                if c.est != 1 {
                    let _ = write!(out, " est={}", c.est);
                }
                if !c.has_bias {
                    out.push_str(" bias=0");
                }
            }
            LayerOp::Pool(p) => {
                let _ = write!(out, "pool {} k={}x{} stride={} pad={}", l.name, p.kernel_h, p.kernel_w, p.stride, p.pad);
                if p.est != 1 {
                    let _ = write!(out, " est={}", p.est);
                }
            }
            LayerOp::Relu => {
                let _ = write!(out, "relu {}", l.name);
            }
            LayerOp::Gap => {
                let _ = write!(out, "gap {}", l.name);
            }
        }
        out.push('\n');
    }
    out
}
