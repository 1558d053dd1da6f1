//! Flat `key = value` configuration with documented defaults.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::esr::{TemperatureMap, DEFAULT_ESR_LINEWIDTH, DEFAULT_ESR_STRAIN};
use crate::model::FineStructureParams;
use crate::photo::RateParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("unknown key `{0}`")]
    NoSuchKey(String),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("key `{key}` = {value}: {reason}")]
    Invalid { key: String, value: String, reason: String },
}

/// Resolved run configuration. Energies in GHz, times in ns, temperatures in K.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub fine: FineStructureParams,
    pub rates: RateParams,
    pub temperature_map: TemperatureMap,
    /// Strain direction from the x axis, degrees.
    pub strain_angle_deg: f64,
    /// Transverse strain magnitude for single-strain commands.
    pub strain: f64,
    pub sweep_min: f64,
    pub sweep_max: f64,
    pub sweep_points: usize,
    pub crossing_threshold: f64,
    /// Excitation scan step; the range covers every line ±1 GHz.
    pub excitation_step: f64,
    /// Microwave Rabi frequency, rad/ns.
    pub rabi_omega: f64,
    pub rabi_max_ns: f64,
    pub rabi_points: usize,
    pub esr_strain: f64,
    pub esr_linewidth: f64,
    pub odmr_min: f64,
    pub odmr_max: f64,
    pub odmr_points: usize,
    pub temperature: f64,
    pub temperature_min: f64,
    pub temperature_max: f64,
    pub temperature_points: usize,
    pub avg_points: usize,
    pub fit_free_lambda_perp: bool,
    pub output_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            fine: FineStructureParams::default(),
            rates: RateParams::default(),
            temperature_map: TemperatureMap::default(),
            strain_angle_deg: 30.0,
            strain: 3.0,
            sweep_min: 0.0,
            sweep_max: 30.0,
            sweep_points: 601,
            crossing_threshold: 0.5,
            excitation_step: 0.005,
            rabi_omega: 2.0 * std::f64::consts::PI / 20.0,
            rabi_max_ns: 100.0,
            rabi_points: 201,
            esr_strain: DEFAULT_ESR_STRAIN,
            esr_linewidth: DEFAULT_ESR_LINEWIDTH,
            odmr_min: 0.5,
            odmr_max: 2.5,
            odmr_points: 401,
            temperature: 150.0,
            temperature_min: 5.0,
            temperature_max: 300.0,
            temperature_points: 60,
            avg_points: 61,
            fit_free_lambda_perp: false,
            output_dir: PathBuf::from("."),
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected: "a finite number",
        })
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse::<usize>().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected: "a non-negative integer",
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected: "true or false",
        }),
    }
}

/// Every accepted key, in dump order.
pub const KEYS: &[&str] = &[
    "lambda_z",
    "lambda_perp",
    "d_es",
    "delta_cap",
    "d_gs",
    "e_es_coeff",
    "delta_z",
    "zpl_offset",
    "gamma_rad",
    "k_isc_xy",
    "k_isc_z",
    "gamma_singlet",
    "beta_z",
    "pump_green",
    "pump_res_max",
    "linewidth",
    "mw_mix_rate",
    "r0",
    "ea",
    "strain_angle_deg",
    "strain",
    "sweep_min",
    "sweep_max",
    "sweep_points",
    "crossing_threshold",
    "excitation_step",
    "rabi_omega",
    "rabi_max_ns",
    "rabi_points",
    "esr_strain",
    "esr_linewidth",
    "odmr_min",
    "odmr_max",
    "odmr_points",
    "temperature",
    "temperature_min",
    "temperature_max",
    "temperature_points",
    "avg_points",
    "fit_free_lambda_perp",
    "output_dir",
];

impl Config {
    /// Parses config text over the defaults.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            seen.push(key.to_string());
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let f = |v: &str| parse_f64(key, v);
        let n = |v: &str| parse_usize(key, v);
        match key {
            "lambda_z" => self.fine.lambda_z = f(value)?,
            "lambda_perp" => self.fine.lambda_perp = f(value)?,
            "d_es" => self.fine.d_es = f(value)?,
            "delta_cap" => self.fine.delta_cap = f(value)?,
            "d_gs" => self.fine.d_gs = f(value)?,
            "e_es_coeff" => self.fine.e_es_coeff = f(value)?,
            "delta_z" => self.fine.delta_z = f(value)?,
            "zpl_offset" => self.fine.zpl_offset = f(value)?,
            "gamma_rad" => self.rates.gamma_rad = f(value)?,
            "k_isc_xy" => self.rates.k_isc_xy = f(value)?,
            "k_isc_z" => self.rates.k_isc_z = f(value)?,
            "gamma_singlet" => self.rates.gamma_singlet = f(value)?,
            "beta_z" => self.rates.beta_z = f(value)?,
            "pump_green" => self.rates.pump_green = f(value)?,
            "pump_res_max" => self.rates.pump_res_max = f(value)?,
            "linewidth" => self.rates.linewidth = f(value)?,
            "mw_mix_rate" => self.rates.mw_mix_rate = f(value)?,
            "r0" => self.temperature_map.r0 = f(value)?,
            "ea" => self.temperature_map.ea = f(value)?,
            "strain_angle_deg" => self.strain_angle_deg = f(value)?,
            "strain" => self.strain = f(value)?,
            "sweep_min" => self.sweep_min = f(value)?,
            "sweep_max" => self.sweep_max = f(value)?,
            "sweep_points" => self.sweep_points = n(value)?,
            "crossing_threshold" => self.crossing_threshold = f(value)?,
            "excitation_step" => self.excitation_step = f(value)?,
            "rabi_omega" => self.rabi_omega = f(value)?,
            "rabi_max_ns" => self.rabi_max_ns = f(value)?,
            "rabi_points" => self.rabi_points = n(value)?,
            "esr_strain" => self.esr_strain = f(value)?,
            "esr_linewidth" => self.esr_linewidth = f(value)?,
            "odmr_min" => self.odmr_min = f(value)?,
            "odmr_max" => self.odmr_max = f(value)?,
            "odmr_points" => self.odmr_points = n(value)?,
            "temperature" => self.temperature = f(value)?,
            "temperature_min" => self.temperature_min = f(value)?,
            "temperature_max" => self.temperature_max = f(value)?,
            "temperature_points" => self.temperature_points = n(value)?,
            "avg_points" => self.avg_points = n(value)?,
            "fit_free_lambda_perp" => self.fit_free_lambda_perp = parse_bool(key, value)?,
            "output_dir" => {
                if value.is_empty() {
                    return Err(ConfigError::BadValue {
                        key: key.to_string(),
                        value: value.to_string(),
                        expected: "a directory path",
                    });
                }
                self.output_dir = PathBuf::from(value)
            }
            _ => return Err(ConfigError::NoSuchKey(key.to_string())),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let v = |x: f64| format!("{x:?}");
        match key {
            "lambda_z" => v(self.fine.lambda_z),
            "lambda_perp" => v(self.fine.lambda_perp),
            "d_es" => v(self.fine.d_es),
            "delta_cap" => v(self.fine.delta_cap),
            "d_gs" => v(self.fine.d_gs),
            "e_es_coeff" => v(self.fine.e_es_coeff),
            "delta_z" => v(self.fine.delta_z),
            "zpl_offset" => v(self.fine.zpl_offset),
            "gamma_rad" => v(self.rates.gamma_rad),
            "k_isc_xy" => v(self.rates.k_isc_xy),
            "k_isc_z" => v(self.rates.k_isc_z),
            "gamma_singlet" => v(self.rates.gamma_singlet),
            "beta_z" => v(self.rates.beta_z),
            "pump_green" => v(self.rates.pump_green),
            "pump_res_max" => v(self.rates.pump_res_max),
            "linewidth" => v(self.rates.linewidth),
            "mw_mix_rate" => v(self.rates.mw_mix_rate),
            "r0" => v(self.temperature_map.r0),
            "ea" => v(self.temperature_map.ea),
            "strain_angle_deg" => v(self.strain_angle_deg),
            "strain" => v(self.strain),
            "sweep_min" => v(self.sweep_min),
            "sweep_max" => v(self.sweep_max),
            "sweep_points" => self.sweep_points.to_string(),
            "crossing_threshold" => v(self.crossing_threshold),
            "excitation_step" => v(self.excitation_step),
            "rabi_omega" => v(self.rabi_omega),
            "rabi_max_ns" => v(self.rabi_max_ns),
            "rabi_points" => self.rabi_points.to_string(),
            "esr_strain" => v(self.esr_strain),
            "esr_linewidth" => v(self.esr_linewidth),
            "odmr_min" => v(self.odmr_min),
            "odmr_max" => v(self.odmr_max),
            "odmr_points" => self.odmr_points.to_string(),
            "temperature" => v(self.temperature),
            "temperature_min" => v(self.temperature_min),
            "temperature_max" => v(self.temperature_max),
            "temperature_points" => self.temperature_points.to_string(),
            "avg_points" => self.avg_points.to_string(),
            "fit_free_lambda_perp" => self.fit_free_lambda_perp.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => unreachable!("dump covers KEYS only"),
        }
    }

    /// Every key with its resolved value; parsing the dump gives back `self`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("writing to a String");
        }
        out
    }

    pub fn strain_angle(&self) -> f64 {
        self.strain_angle_deg.to_radians()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, value: String, reason: String| ConfigError::Invalid {
            key: key.to_string(),
            value,
            reason,
        };
        self.fine.validate().map_err(|e| invalid("fine structure", String::new(), e.to_string()))?;
        self.rates.validate().map_err(|e| invalid("rates", String::new(), e.to_string()))?;
        self.temperature_map
            .validate()
            .map_err(|e| invalid("temperature map", String::new(), e.to_string()))?;
        let positive = [
            ("excitation_step", self.excitation_step),
            ("rabi_omega", self.rabi_omega),
            ("rabi_max_ns", self.rabi_max_ns),
            ("esr_strain", self.esr_strain),
            ("esr_linewidth", self.esr_linewidth),
            ("odmr_min", self.odmr_min),
            ("temperature", self.temperature),
            ("temperature_min", self.temperature_min),
            ("crossing_threshold", self.crossing_threshold),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(invalid(key, v.to_string(), "must be > 0".into()));
            }
        }
        if !(self.strain >= 0.0) || !(self.sweep_min >= 0.0) {
            return Err(invalid("strain", self.strain.to_string(), "strain must be >= 0".into()));
        }
        let ordered = [
            ("sweep_max", self.sweep_min, self.sweep_max),
            ("odmr_max", self.odmr_min, self.odmr_max),
            ("temperature_max", self.temperature_min, self.temperature_max),
        ];
        for (key, lo, hi) in ordered {
            if !(hi > lo) {
                return Err(invalid(key, hi.to_string(), format!("must exceed {lo}")));
            }
        }
        let counts = [
            ("sweep_points", self.sweep_points),
            ("rabi_points", self.rabi_points),
            ("odmr_points", self.odmr_points),
            ("temperature_points", self.temperature_points),
            ("avg_points", self.avg_points),
        ];
        for (key, n) in counts {
            if n < 2 {
                return Err(invalid(key, n.to_string(), "needs at least 2 points".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
        assert_eq!(Config::parse("# comment\n\n").unwrap(), Config::default());
    }

    #[test]
    fn dump_round_trips() {
        let mut cfg = Config::default();
        cfg.set("lambda_perp", "0.123456789012345").unwrap();
        cfg.set("sweep_points", "77").unwrap();
        cfg.set("fit_free_lambda_perp", "true").unwrap();
        cfg.set("output_dir", "out/run 1").unwrap();
        assert_eq!(Config::parse(&cfg.dump()).unwrap(), cfg);
    }

    #[test]
    fn dump_lists_every_key() {
        let dump = Config::default().dump();
        assert_eq!(dump.lines().count(), KEYS.len());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = Config::parse("lambda_z = 5\nlamda_perp = 0.1\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "lamda_perp".into()
            }
        );
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(matches!(Config::parse("lambda_z 5"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Config::parse("lambda_z = five"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("sweep_points = -3"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("lambda_z = inf"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(
            Config::parse("d_es = 1\nd_es = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
    }

    #[test]
    fn inconsistent_values_are_rejected() {
        assert!(matches!(Config::parse("sweep_max = -1"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::parse("linewidth = 0"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::parse("avg_points = 1"), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn set_rejects_unknown_key() {
        let mut cfg = Config::default();
        assert_eq!(cfg.set("foo", "1"), Err(ConfigError::NoSuchKey("foo".into())));
    }

    #[test]
    fn trailing_comments_are_ignored() {
        let cfg = Config::parse("lambda_z = 5.0 # GHz").unwrap();
        assert_eq!(cfg.fine.lambda_z, 5.0);
    }
}
