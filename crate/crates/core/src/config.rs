//! Pipeline configuration: TOML file, defaults and `CONVBEAM_*`
//! environment overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::beamform::BeamformerConfig;
use crate::error::{Error, Result};
use crate::mask::MaskType;
use crate::stft::StftConfig;
use crate::wav::WavFormat;
use crate::wpe::WpeConfig;

pub const ENV_PREFIX: &str = "CONVBEAM_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Oracle,
    /// Directory holding `{wpe,bf_target,bf_noise}_spk{j}.cbmk`.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: WavFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            format: WavFormat::Float32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceConfig {
    /// Number of leading input channels to use; 0 uses all of them.
    pub channels_used: usize,
    pub mask_type: MaskType,
    pub mask_source: MaskSource,
    pub wpe: WpeConfig,
    pub beamformer: BeamformerConfig,
    pub stft: StftConfig,
    pub output: OutputConfig,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            channels_used: 0,
            mask_type: MaskType::Tf,
            mask_source: MaskSource::Oracle,
            wpe: WpeConfig::default(),
            beamformer: BeamformerConfig::default(),
            stft: StftConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        self.wpe.validate()?;
        self.beamformer.validate(None)?;
        self.stft.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `CONVBEAM_<SECTION>_<KEY>` overrides (dots become
    /// underscores, case-insensitive). Unknown `CONVBEAM_*` names are
    /// rejected.
    pub fn apply_env<I>(&self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut keys = BTreeMap::new();
        collect_keys(&table, &mut Vec::new(), &mut keys);

        let mut touched = false;
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some(path) = keys.get(&rest.to_ascii_uppercase()) else {
                return Err(Error::Config(format!("unknown override {name}")));
            };
            set_path(&mut table, path, parse_scalar(&raw));
            touched = true;
        }
        if !touched {
            return Ok(self.clone());
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn collect_keys(table: &toml::Table, prefix: &mut Vec<String>, out: &mut BTreeMap<String, Vec<String>>) {
    for (key, value) in table {
        prefix.push(key.clone());
        if let toml::Value::Table(inner) = value {
            collect_keys(inner, prefix, out);
        } else {
            out.insert(prefix.join("_").to_ascii_uppercase(), prefix.clone());
        }
        prefix.pop();
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut cursor = table;
    for key in parents {
        cursor = cursor
            .get_mut(key)
            .and_then(toml::Value::as_table_mut)
            .expect("path collected from this table");
    }
    cursor.insert(last.clone(), value);
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::{Formula, Variant};

    #[test]
    fn defaults_match_reference_setup() {
        let cfg = EnhanceConfig::default();
        assert_eq!(cfg.wpe.taps, 5);
        assert_eq!(cfg.wpe.delay, 3);
        assert_eq!(cfg.wpe.iterations, 1);
        assert_eq!(cfg.wpe.eps_wpe, 1e-3);
        assert_eq!(cfg.wpe.xi_wpe, 1e-6);
        assert_eq!(cfg.beamformer.eps_bf, 1e-8);
        assert_eq!(cfg.beamformer.xi_bf, 1e-2);
        assert_eq!(cfg.beamformer.ref_channel, 1);
        assert_eq!(cfg.beamformer.sv_power_iters, 2);
        assert_eq!(cfg.beamformer.variant, Variant::Mvdr);
        assert_eq!(cfg.beamformer.formula, Formula::WithSv);
        assert_eq!(cfg.stft.bins(), 257);
    }

    #[test]
    fn round_trip() {
        let mut cfg = EnhanceConfig::default();
        cfg.mask_source = MaskSource::File(PathBuf::from("masks"));
        cfg.beamformer.variant = Variant::Wmpdr;
        let text = cfg.to_toml().unwrap();
        assert_eq!(EnhanceConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(EnhanceConfig::from_toml("[wpe]\neps = 0.1\n").is_err());
        assert!(EnhanceConfig::from_toml("bogus = 1\n").is_err());
        let partial = EnhanceConfig::from_toml("[wpe]\ntaps = 7\n").unwrap();
        assert_eq!(partial.wpe.taps, 7);
        assert_eq!(partial.wpe.delay, 3);
    }

    #[test]
    fn env_overrides() {
        let base = EnhanceConfig::default();
        let cfg = base
            .apply_env([
                ("CONVBEAM_WPE_TAPS".to_string(), "10".to_string()),
                ("CONVBEAM_BEAMFORMER_EPS_BF".to_string(), "1e-6".to_string()),
                ("CONVBEAM_BEAMFORMER_VARIANT".to_string(), "wmpdr".to_string()),
                ("CONVBEAM_MASK_TYPE".to_string(), "vad".to_string()),
                ("PATH".to_string(), "/usr/bin".to_string()),
            ])
            .unwrap();
        assert_eq!(cfg.wpe.taps, 10);
        assert_eq!(cfg.beamformer.eps_bf, 1e-6);
        assert_eq!(cfg.beamformer.variant, Variant::Wmpdr);
        assert_eq!(cfg.mask_type, MaskType::Vad);
        assert!(base
            .apply_env([("CONVBEAM_WPE_BOGUS".to_string(), "1".to_string())])
            .is_err());
    }
}
