//! Directory checkpoints: `manifest.txt` names every buffer with its shape
//! and byte offset into `params.bin`, a little-endian f64 blob.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Model, ModelConfig, ModelError, Result};
use crate::tensor::{Adam, AdamConfig, ParamStore};

const MAGIC: &str = "posemae-checkpoint 1";
pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "params.bin";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<Adam>,
    /// Free-form `key value` pairs; keys and values must not contain whitespace.
    pub meta: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn join(ws: &[usize]) -> String {
    ws.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn save_checkpoint(dir: &Path, model: &Model, adam: Option<&Adam>, meta: &BTreeMap<String, String>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfg = model.config();
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{MAGIC}");
    let _ = writeln!(manifest, "encoder_widths {}", join(&cfg.encoder_widths));
    let _ = writeln!(manifest, "decoder_widths {}", join(&cfg.decoder_widths));
    let _ = writeln!(manifest, "norm_eps {:?}", cfg.norm_eps);
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains(char::is_whitespace) {
            return Err(bad(format!("meta entry {k:?} = {v:?} contains whitespace")));
        }
        let _ = writeln!(manifest, "meta {k} {v}");
    }

    let mut blob: Vec<u8> = Vec::new();
    let mut entry = |manifest: &mut String, name: &str, shape: &[usize], data: &[f64]| {
        let dims = shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ =
            writeln!(manifest, "param {name} {} f64 {}", if dims.is_empty() { "-".into() } else { dims }, blob.len());
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    let store = model.params();
    for slot in 0..store.len() {
        entry(&mut manifest, &store.names()[slot], store.shape(slot), store.values(slot));
    }
    if let Some(adam) = adam {
        let c = adam.config;
        let _ = writeln!(manifest, "adam {} {:?} {:?} {:?} {:?}", adam.step, c.lr, c.beta1, c.beta2, c.eps);
        for slot in 0..store.len() {
            entry(&mut manifest, &format!("adam.m.{}", store.names()[slot]), store.shape(slot), &adam.m[slot]);
            entry(&mut manifest, &format!("adam.v.{}", store.names()[slot]), store.shape(slot), &adam.v[slot]);
        }
    }
    std::fs::write(dir.join(MANIFEST), manifest)?;
    std::fs::write(dir.join(BLOB), blob)?;
    Ok(())
}

fn parse_widths<const N: usize>(toks: &[&str], key: &str) -> Result<[usize; N]> {
    let ws: Vec<usize> =
        toks.iter().map(|t| t.parse().map_err(|_| bad(format!("bad {key} entry {t:?}")))).collect::<Result<_>>()?;
    ws.try_into().map_err(|_| bad(format!("{key} needs {N} values")))
}

fn parse_f64(t: &str) -> Result<f64> {
    t.parse().map_err(|_| bad(format!("bad number {t:?}")))
}

/// Loads a checkpoint, validating every parameter name and shape against a
/// model built from the stored widths.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = std::fs::read_to_string(dir.join(MANIFEST))?;
    let blob = std::fs::read(dir.join(BLOB))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing checkpoint header"));
    }
    let mut enc = None;
    let mut dec = None;
    let mut eps = None;
    let mut meta = BTreeMap::new();
    let mut adam_header: Option<(u64, AdamConfig)> = None;
    let mut buffers: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["encoder_widths", rest @ ..] => enc = Some(parse_widths::<3>(rest, "encoder_widths")?),
            ["decoder_widths", rest @ ..] => dec = Some(parse_widths::<4>(rest, "decoder_widths")?),
            ["norm_eps", v] => eps = Some(parse_f64(v)?),
            ["meta", k, v] => {
                meta.insert(k.to_string(), v.to_string());
            }
            ["adam", step, lr, b1, b2, e] => {
                let step = step.parse().map_err(|_| bad("bad adam step"))?;
                let cfg =
                    AdamConfig { lr: parse_f64(lr)?, beta1: parse_f64(b1)?, beta2: parse_f64(b2)?, eps: parse_f64(e)? };
                adam_header = Some((step, cfg));
            }
            ["param", name, dims, "f64", offset] => {
                let shape: Vec<usize> = if *dims == "-" {
                    Vec::new()
                } else {
                    dims.split(',')
                        .map(|d| d.parse().map_err(|_| bad(format!("bad shape {dims:?} for {name}"))))
                        .collect::<Result<_>>()?
                };
                let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset for {name}")))?;
                let count: usize = shape.iter().product();
                let end = offset + 8 * count;
                if end > blob.len() {
                    return Err(bad(format!("{name} extends past the end of {BLOB}")));
                }
                let data = blob[offset..end]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect();
                buffers.push((name.to_string(), shape, data));
            }
            _ => return Err(bad(format!("unrecognized manifest line {line:?}"))),
        }
    }
    let config = ModelConfig {
        encoder_widths: enc.ok_or_else(|| bad("missing encoder_widths"))?,
        decoder_widths: dec.ok_or_else(|| bad("missing decoder_widths"))?,
        norm_eps: eps.ok_or_else(|| bad("missing norm_eps"))?,
    };

    let mut by_name: BTreeMap<String, (Vec<usize>, Vec<f64>)> =
        buffers.into_iter().map(|(n, s, d)| (n, (s, d))).collect();
    let reference = Model::new(config.clone(), 0)?;
    let names = reference.params().names().to_vec();
    let mut store = ParamStore::new();
    for (slot, name) in names.iter().enumerate() {
        let (shape, data) = by_name.remove(name).ok_or_else(|| bad(format!("missing parameter {name}")))?;
        if shape != reference.params().shape(slot) {
            return Err(bad(format!(
                "parameter {name} has shape {shape:?}, expected {:?}",
                reference.params().shape(slot)
            )));
        }
        store.add(name.clone(), &shape, data);
    }
    let adam = match adam_header {
        None => None,
        Some((step, cfg)) => {
            let mut adam = Adam::new(cfg, &store);
            adam.step = step;
            for (slot, name) in names.iter().enumerate() {
                for (prefix, target) in [("adam.m.", &mut adam.m[slot]), ("adam.v.", &mut adam.v[slot])] {
                    let (shape, data) = by_name
                        .remove(&format!("{prefix}{name}"))
                        .ok_or_else(|| bad(format!("missing optimizer state {prefix}{name}")))?;
                    if shape != store.shape(slot) {
                        return Err(bad(format!("optimizer state {prefix}{name} has the wrong shape")));
                    }
                    *target = data;
                }
            }
            Some(adam)
        }
    };
    if let Some(extra) = by_name.keys().next() {
        return Err(bad(format!("unexpected buffer {extra}")));
    }
    Ok(Checkpoint { model: Model::from_parts(config, store)?, adam, meta })
}
