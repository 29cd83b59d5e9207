//! Flat `key = value` run configuration.
//!
//! Files may contain blank lines and `#` comments. Command-line flags are
//! merged over file keys, and the merged map, expanded with every default,
//! is what a run persists as its snapshot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;
use crate::uq::{FlipSet, Method};

pub type KvMap = BTreeMap<String, String>;

pub const TRAIN_KEYS: &[&str] = &[
    "alpha",
    "base_lr",
    "base_seed",
    "batch_size",
    "beta1",
    "beta2",
    "bottleneck_channels",
    "crop",
    "dropout_rate",
    "enc_channels",
    "epochs",
    "eps",
    "flip_prob",
    "flips",
    "heads",
    "input_size",
    "lambda",
    "log10_mode",
    "lr_multiplier",
    "max_depth",
    "method",
    "micro_batch",
    "model_name",
    "power",
    "samples",
    "seed",
    "variance_floor",
    "weight_decay",
];

pub fn parse_kv(text: &str, origin: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value, got {line:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("{origin}:{}: empty key", i + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("{origin}:{}: duplicate key {k:?}", i + 1)));
        }
    }
    Ok(map)
}

/// Parses a single `key=value` override.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn format_kv(map: &KvMap) -> String {
    let mut s = String::new();
    for (k, v) in map {
        writeln!(s, "{k} = {v}").unwrap();
    }
    s
}

fn val<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match v.split_once('x') {
        Some((a, b)) => Ok((val(key, a.trim())?, val(key, b.trim())?)),
        None => {
            let n = val(key, v)?;
            Ok((n, n))
        }
    }
}

pub fn parse_flips(v: &str) -> Result<FlipSet> {
    let mut f = FlipSet {
        horizontal: false,
        vertical: false,
    };
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "h" | "hflip" => f.horizontal = true,
            "v" | "vflip" => f.vertical = true,
            "none" => {}
            _ => return Err(Error::Config(format!("unknown flip {part:?} (expected h, v or none)"))),
        }
    }
    Ok(f)
}

pub fn format_flips(f: FlipSet) -> String {
    match (f.horizontal, f.vertical) {
        (true, true) => "h,v".into(),
        (true, false) => "h".into(),
        (false, true) => "v".into(),
        (false, false) => "none".into(),
    }
}

pub fn default_model_name(cfg: &TrainConfig) -> String {
    let enc: Vec<String> = cfg.model.enc_channels.iter().map(|c| c.to_string()).collect();
    format!("c{}-b{}", enc.join("-"), cfg.model.bottleneck_channels)
}

/// Builds a training configuration from merged keys. The model's head
/// count and output channels follow the method.
pub fn train_config_from_kv(map: &KvMap) -> Result<(TrainConfig, String)> {
    if let Some(k) = map.keys().find(|k| !TRAIN_KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config key {k:?}; known keys: {}", TRAIN_KEYS.join(", "))));
    }
    let method: Method = map.get("method").map(|m| m.parse()).transpose()?.unwrap_or(Method::Baseline);
    let mut c = TrainConfig::for_method(method);
    for (k, v) in map {
        let v = v.as_str();
        match k.as_str() {
            "alpha" => c.loss.alpha = val(k, v)?,
            "base_lr" => c.base_lr = val(k, v)?,
            "base_seed" => c.uq.base_seed = val(k, v)?,
            "batch_size" => c.batch_size = val(k, v)?,
            "beta1" => c.betas.0 = val(k, v)?,
            "beta2" => c.betas.1 = val(k, v)?,
            "bottleneck_channels" => c.model.bottleneck_channels = val(k, v)?,
            "crop" => c.crop = pair(k, v)?,
            "dropout_rate" => c.model.dropout_rate = val(k, v)?,
            "enc_channels" => {
                c.model.enc_channels = v.split(',').map(|p| val(k, p.trim())).collect::<Result<_>>()?;
            }
            "epochs" => c.epochs = val(k, v)?,
            "eps" => c.eps = val(k, v)?,
            "flip_prob" => c.flip_prob = val(k, v)?,
            "flips" => c.uq.flips = parse_flips(v)?,
            "heads" => c.uq.heads = val(k, v)?,
            "input_size" => c.model.input_size = pair(k, v)?,
            "lambda" => c.loss.lambda = val(k, v)?,
            "log10_mode" => c.log10_mode = v.parse()?,
            "lr_multiplier" => c.lr_multiplier = val(k, v)?,
            "max_depth" => c.model.max_depth = val(k, v)?,
            "micro_batch" => {
                c.micro_batch = match v {
                    "none" | "0" => None,
                    _ => Some(val(k, v)?),
                }
            }
            "power" => c.power = val(k, v)?,
            "samples" => c.uq.samples = val(k, v)?,
            "seed" => c.seed = val(k, v)?,
            "variance_floor" => c.loss.variance_floor = val(k, v)?,
            "weight_decay" => c.weight_decay = val(k, v)?,
            _ => {}
        }
    }
    c.model.seed = c.seed;
    c.sync_model_to_method();
    let name = map.get("model_name").cloned().unwrap_or_else(|| default_model_name(&c));
    if name.is_empty() || name.contains([',', '\n', '\r']) {
        return Err(Error::Config(format!("model_name {name:?} must be non-empty without commas or newlines")));
    }
    c.validate()?;
    Ok((c, name))
}

/// Full snapshot of every key, defaults included.
pub fn train_config_to_kv(c: &TrainConfig, model_name: &str) -> KvMap {
    let enc: Vec<String> = c.model.enc_channels.iter().map(|v| v.to_string()).collect();
    let entries: [(&str, String); 28] = [
        ("alpha", c.loss.alpha.to_string()),
        ("base_lr", c.base_lr.to_string()),
        ("base_seed", c.uq.base_seed.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("beta1", c.betas.0.to_string()),
        ("beta2", c.betas.1.to_string()),
        ("bottleneck_channels", c.model.bottleneck_channels.to_string()),
        ("crop", format!("{}x{}", c.crop.0, c.crop.1)),
        ("dropout_rate", c.model.dropout_rate.to_string()),
        ("enc_channels", enc.join(",")),
        ("epochs", c.epochs.to_string()),
        ("eps", c.eps.to_string()),
        ("flip_prob", c.flip_prob.to_string()),
        ("flips", format_flips(c.uq.flips)),
        ("heads", c.uq.heads.to_string()),
        ("input_size", format!("{}x{}", c.model.input_size.0, c.model.input_size.1)),
        ("lambda", c.loss.lambda.to_string()),
        ("log10_mode", c.log10_mode.name().to_string()),
        ("lr_multiplier", c.lr_multiplier.to_string()),
        ("max_depth", c.model.max_depth.to_string()),
        ("method", c.uq.method.name().to_string()),
        ("micro_batch", c.micro_batch.map_or("none".to_string(), |m| m.to_string())),
        ("model_name", model_name.to_string()),
        ("power", c.power.to_string()),
        ("samples", c.uq.samples.to_string()),
        ("seed", c.seed.to_string()),
        ("variance_floor", c.loss.variance_floor.to_string()),
        ("weight_decay", c.weight_decay.to_string()),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_garbage() {
        let m = parse_kv("# run\nmethod = gnll  # K=2\n\nepochs=3\n", "f").unwrap();
        assert_eq!(m["method"], "gnll");
        assert_eq!(m["epochs"], "3");
        assert!(parse_kv("epochs 3", "f").is_err());
        assert!(parse_kv("a=1\na=2", "f").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut m = KvMap::new();
        m.insert("method".into(), "se".into());
        m.insert("heads".into(), "4".into());
        m.insert("crop".into(), "16".into());
        let (c, name) = train_config_from_kv(&m).unwrap();
        assert_eq!(c.model.num_heads, 4);
        assert_eq!(name, "c16-32-b64");
        let snap = train_config_to_kv(&c, &name);
        assert_eq!(snap.len(), TRAIN_KEYS.len());
        assert!(snap.keys().map(String::as_str).eq(TRAIN_KEYS.iter().copied()));
        let text = format_kv(&snap);
        let (c2, name2) = train_config_from_kv(&parse_kv(&text, "snap").unwrap()).unwrap();
        assert_eq!((c2, name2), (c, name));
    }

    #[test]
    fn method_sets_head_shape() {
        let m: KvMap = [("method".to_string(), "gnll".to_string())].into();
        assert_eq!(train_config_from_kv(&m).unwrap().0.model.head_out_channels, 2);
        let bad: KvMap = [("colour".to_string(), "red".to_string())].into();
        assert!(matches!(train_config_from_kv(&bad), Err(Error::Config(_))));
    }
}
