//! Plain-text `key = value` configuration files and `--key value` overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::Site;
use crate::train::TrainConfig;

/// Every key accepted in a config file or as a `--key` override.
pub const KEYS: &[&str] = &[
    "dataset_root",
    "encoder_kind",
    "stages",
    "base_width",
    "in_channels",
    "ae_enabled",
    "ae_sites",
    "downscale_mode",
    "gradient_mode",
    "schedule",
    "alpha0",
    "zero_from",
    "epochs",
    "learning_rate",
    "optimizer",
    "seed",
    "checkpoint_out",
    "metrics_out",
    "momentum",
    "beta1",
    "beta2",
];

pub fn is_key(key: &str) -> bool {
    KEYS.contains(&key)
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.into(),
                detail: format!("line {}: expected `key = value`, got `{line}`", n + 1),
            });
        };
        let key = k.trim();
        if !is_key(key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parsed<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value `{value}` for {key}, expected true or false"
        ))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

/// Applies one key to `config`.
pub fn apply(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "dataset_root" => config.dataset_root = PathBuf::from(value),
        "encoder_kind" => config.network.encoder_kind = value.parse()?,
        "stages" => config.network.stages = parsed(key, value)?,
        "base_width" => config.network.base_width = parsed(key, value)?,
        "in_channels" => config.network.in_channels = parsed(key, value)?,
        "ae_enabled" => config.ae_enabled = parse_bool(key, value)?,
        "ae_sites" => config.network.ae_sites = Site::parse_list(value)?,
        "downscale_mode" => config.downscale_mode = value.parse()?,
        "gradient_mode" => config.gradient_mode = value.parse()?,
        "schedule" => config.schedule = value.parse()?,
        "alpha0" => config.alpha0 = parsed(key, value)?,
        "zero_from" => {
            config.zero_from = if value.is_empty() || value == "auto" {
                None
            } else {
                Some(parsed(key, value)?)
            }
        }
        "epochs" => config.epochs = parsed(key, value)?,
        "learning_rate" => config.learning_rate = parsed(key, value)?,
        "optimizer" => config.optimizer = value.parse()?,
        "seed" => config.seed = parsed(key, value)?,
        "checkpoint_out" => config.checkpoint_out = optional_path(value),
        "metrics_out" => config.metrics_out = optional_path(value),
        "momentum" => config.momentum = parsed(key, value)?,
        "beta1" => config.beta1 = parsed(key, value)?,
        "beta2" => config.beta2 = parsed(key, value)?,
        _ => return Err(Error::UnknownKey(key.to_string())),
    }
    Ok(())
}

pub fn from_pairs<'a, I>(pairs: I) -> Result<TrainConfig>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut config = TrainConfig::default();
    for (k, v) in pairs {
        apply(&mut config, k, v)?;
    }
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let pairs = parse_pairs(text, "<config>")?;
    from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
}

/// Reads a config file and applies `overrides` on top, in order.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut pairs = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_pairs(&text, &p.display().to_string())?
        }
        None => Vec::new(),
    };
    for (k, _) in overrides {
        if !is_key(k) {
            return Err(Error::UnknownKey(k.clone()));
        }
    }
    pairs.extend(overrides.iter().cloned());
    let config = from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    config.validate()?;
    Ok(config)
}

/// Serializes `config` back into the file format; `parse_config` inverts it.
pub fn render(config: &TrainConfig) -> String {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    let lines = [
        ("dataset_root", config.dataset_root.display().to_string()),
        ("encoder_kind", config.network.encoder_kind.to_string()),
        ("stages", config.network.stages.to_string()),
        ("base_width", config.network.base_width.to_string()),
        ("in_channels", config.network.in_channels.to_string()),
        ("ae_enabled", config.ae_enabled.to_string()),
        ("ae_sites", Site::format_list(&config.network.ae_sites)),
        ("downscale_mode", config.downscale_mode.to_string()),
        ("gradient_mode", config.gradient_mode.to_string()),
        ("schedule", config.schedule.to_string()),
        ("alpha0", config.alpha0.to_string()),
        (
            "zero_from",
            config.zero_from.map(|z| z.to_string()).unwrap_or_else(|| "auto".into()),
        ),
        ("epochs", config.epochs.to_string()),
        ("learning_rate", config.learning_rate.to_string()),
        ("optimizer", config.optimizer.to_string()),
        ("seed", config.seed.to_string()),
        ("checkpoint_out", path(&config.checkpoint_out)),
        ("metrics_out", path(&config.metrics_out)),
        ("momentum", config.momentum.to_string()),
        ("beta1", config.beta1.to_string()),
        ("beta2", config.beta2.to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::ScheduleKind;
    use crate::network::EncoderKind;

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_config("# header\n\nepochs = 4  # short\nencoder_kind=res_like\n").unwrap();
        assert_eq!(c.epochs, 4);
        assert_eq!(c.network.encoder_kind, EncoderKind::ResLike);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("foo=1").unwrap_err();
        assert!(matches!(err, Error::UnknownKey(ref k) if k == "foo"));
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn missing_equals() {
        assert!(matches!(parse_config("epochs 3"), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_value() {
        assert!(matches!(parse_config("stages = three"), Err(Error::Config(_))));
        assert!(parse_config("ae_enabled = maybe").is_err());
    }

    #[test]
    fn render_round_trip() {
        let c = TrainConfig {
            schedule: ScheduleKind::Step,
            zero_from: Some(7),
            alpha0: 0.25,
            checkpoint_out: Some("out/model.ckpt".into()),
            ..TrainConfig::default()
        };
        assert_eq!(parse_config(&render(&c)).unwrap(), c);
        let d = TrainConfig::default();
        assert_eq!(parse_config(&render(&d)).unwrap(), d);
    }

    #[test]
    fn overrides_apply_last() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, "epochs = 3\nseed = 1\n").unwrap();
        let c = load_config(Some(&p), &[("seed".into(), "9".into())]).unwrap();
        assert_eq!((c.epochs, c.seed), (3, 9));
        let err = load_config(Some(&p), &[("bogus".into(), "1".into())]).unwrap_err();
        assert!(matches!(err, Error::UnknownKey(_)));
    }
}
