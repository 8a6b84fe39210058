//! Architecture strings in the paper's notation, e.g.
//! `conv32 3x3; conv32 3x3 str(2,2); drop.8; full 1,000; full500; drop.3`.
//!
//! Tokens are separated by `;`. A spatial layer takes an optional
//! `str(a,b)` and `pad(a,b)`; padding defaults to 1 for strided layers and
//! 0 otherwise. The linear output layer is appended automatically.

use qagrel_core::{Activation, LayerSpec};

use crate::{HarnessError, Result};

fn spec_error(token: &str, e: qagrel_core::Error) -> HarnessError {
    HarnessError::Config(format!("{token:?}: {e}"))
}

fn parse_count(s: &str, token: &str) -> Result<usize> {
    let digits: String = s.chars().filter(|c| !matches!(c, ',' | ' ' | '_')).collect();
    digits
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad unit count {s:?} in {token:?}")))
}

fn parse_pair(s: &str, token: &str) -> Result<(usize, usize)> {
    let bad = || HarnessError::Config(format!("bad pair {s:?} in {token:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

struct Spatial {
    filters: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
}

fn parse_spatial(rest: &str, token: &str) -> Result<Spatial> {
    let mut words = rest.split_whitespace();
    let filters = parse_count(words.next().unwrap_or(""), token)?;
    let kernel = words
        .next()
        .and_then(|k| k.split_once('x'))
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .ok_or_else(|| HarnessError::Config(format!("missing kernel like 3x3 in {token:?}")))?;
    let mut stride = (1, 1);
    let mut pad = None;
    for w in words {
        if let Some(inner) = w.strip_prefix("str(").and_then(|w| w.strip_suffix(')')) {
            stride = parse_pair(inner, token)?;
        } else if let Some(inner) = w.strip_prefix("pad(").and_then(|w| w.strip_suffix(')')) {
            pad = Some(parse_pair(inner, token)?);
        } else {
            return Err(HarnessError::Config(format!("unexpected {w:?} in {token:?}")));
        }
    }
    let pad = pad.unwrap_or((usize::from(stride.0 > 1), usize::from(stride.1 > 1)));
    Ok(Spatial {
        filters,
        kernel,
        stride,
        pad,
    })
}

/// Builds the layer stack for inputs of `input_shape` (`[h, w, c]`) with a
/// linear output layer of `num_classes` units.
pub fn parse_architecture(arch: &str, input_shape: &[usize], num_classes: usize) -> Result<Vec<LayerSpec>> {
    let mut specs: Vec<LayerSpec> = Vec::new();
    let mut shape = input_shape.to_vec();
    for token in arch.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let spec = if let Some(rest) = token.strip_prefix("loccon") {
            let s = parse_spatial(rest, token)?;
            LayerSpec::locally_connected(&shape, s.filters, s.kernel, s.stride, s.pad).map_err(|e| spec_error(token, e))?
        } else if let Some(rest) = token.strip_prefix("conv") {
            let s = parse_spatial(rest, token)?;
            LayerSpec::conv2d(&shape, s.filters, s.kernel, s.stride, s.pad).map_err(|e| spec_error(token, e))?
        } else if let Some(rest) = token.strip_prefix("full") {
            LayerSpec::fully_connected(&shape, parse_count(rest.trim(), token)?, Activation::Relu)
        } else if let Some(rest) = token.strip_prefix("drop") {
            let rate: f64 = rest
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad drop rate in {token:?}")))?;
            LayerSpec::dropout(&shape, rate).map_err(|e| spec_error(token, e))?
        } else {
            return Err(HarnessError::Config(format!("unknown layer {token:?}")));
        };
        shape = spec.out_shape.clone();
        specs.push(spec);
    }
    specs.push(LayerSpec::fully_connected(&shape, num_classes, Activation::Linear));
    Ok(specs)
}
