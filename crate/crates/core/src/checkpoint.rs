//! Self-describing text container for trained networks.
//!
//! ```text
//! ilpo-checkpoint 1
//! kind <kind>
//! meta <key> <value>
//! net <name> <layer count>
//! layer <fan_in> <fan_out> <activation>
//! w <fan_out * fan_in values, row-major>
//! b <fan_out values>
//! end
//! ```
//!
//! Floats carry 17 significant digits and round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experts::format_float;
use crate::nn::{Activation, Layer, Mlp, Tensor};

const MAGIC: &str = "ilpo-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    meta: Vec<(String, String)>,
    nets: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            meta: Vec::new(),
            nets: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Config(format!("checkpoint lacks '{key}'")))
    }

    pub fn meta_as<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("checkpoint field '{key}' has bad value '{raw}'")))
    }

    pub fn push_net(&mut self, name: impl Into<String>, net: &Mlp) {
        self.nets.push((name.into(), net.clone()));
    }

    pub fn net(&self, name: &str) -> Result<&Mlp> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks network '{name}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "kind {}", self.kind).unwrap();
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for (name, net) in &self.nets {
            writeln!(out, "net {name} {}", net.layers().len()).unwrap();
            for l in net.layers() {
                writeln!(out, "layer {} {} {}", l.fan_in(), l.fan_out(), l.activation.tag()).unwrap();
                write_values(&mut out, "w", l.weight.data());
                write_values(&mut out, "b", l.bias.data());
            }
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let err = |line: usize, msg: &str| Error::parse(source, line, msg);
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(err(1, "not a checkpoint file")),
        }
        let (ln, kind_line) = lines.next().ok_or_else(|| err(2, "missing kind"))?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| err(ln, "expected 'kind'"))?
            .to_string();
        let mut ck = Checkpoint::new(kind);
        loop {
            let (ln, line) = lines.next().ok_or_else(|| err(0, "missing 'end'"))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("end") => return Ok(ck),
                Some("meta") => {
                    let k = parts.next().ok_or_else(|| err(ln, "meta without key"))?;
                    let v: Vec<&str> = parts.collect();
                    ck.meta.push((k.to_string(), v.join(" ")));
                }
                Some("net") => {
                    let name = parts.next().ok_or_else(|| err(ln, "net without name"))?.to_string();
                    let count: usize = parts
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| err(ln, "net without layer count"))?;
                    let mut layers = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (ln, header) = lines.next().ok_or_else(|| err(ln, "truncated net"))?;
                        let f: Vec<&str> = header.split_whitespace().collect();
                        if f.len() != 4 || f[0] != "layer" {
                            return Err(err(ln, "expected 'layer <in> <out> <activation>'"));
                        }
                        let fan_in: usize = f[1].parse().map_err(|_| err(ln, "bad fan-in"))?;
                        let fan_out: usize = f[2].parse().map_err(|_| err(ln, "bad fan-out"))?;
                        let activation = Activation::from_tag(f[3]).ok_or_else(|| err(ln, "unknown activation"))?;
                        let (ln, wl) = lines.next().ok_or_else(|| err(ln, "missing weights"))?;
                        let w = read_values(wl, "w", fan_in * fan_out).map_err(|m| err(ln, &m))?;
                        let (ln, bl) = lines.next().ok_or_else(|| err(ln, "missing bias"))?;
                        let b = read_values(bl, "b", fan_out).map_err(|m| err(ln, &m))?;
                        layers.push(Layer {
                            weight: Tensor::new(vec![fan_out, fan_in], w)?,
                            bias: Tensor::new(vec![fan_out], b)?,
                            activation,
                        });
                    }
                    ck.nets.push((name, Mlp::from_layers(layers)?));
                }
                _ => return Err(err(ln, "unexpected line")),
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn write_values(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for &v in values {
        out.push(' ');
        out.push_str(&format_float(v));
    }
    out.push('\n');
}

fn read_values(line: &str, tag: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(format!("expected '{tag}' row"));
    }
    let values = parts
        .map(|p| p.parse::<f64>().map_err(|_| format!("bad number '{p}'")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!("expected {expected} values, got {}", values.len()));
    }
    Ok(values)
}
