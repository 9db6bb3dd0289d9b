//! Scenario configuration and its flat `key=value` file format.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Unknown
//! keys are rejected and missing keys keep their defaults. The defaults
//! describe a 500-device fleet with 20% attackers, run in both modes.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::context::Millis;
use crate::protocol::SizeTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Centralized,
    Distributed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Distributed => "distributed",
        }
    }

    pub fn is_distributed(self) -> bool {
        self == Mode::Distributed
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeSelection {
    Centralized,
    Distributed,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> &'static [Mode] {
        match self {
            ModeSelection::Centralized => &[Mode::Centralized],
            ModeSelection::Distributed => &[Mode::Distributed],
            ModeSelection::Both => &[Mode::Centralized, Mode::Distributed],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeSelection::Centralized => "centralized",
            ModeSelection::Distributed => "distributed",
            ModeSelection::Both => "both",
        }
    }
}

impl FromStr for ModeSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(ModeSelection::Centralized),
            "distributed" => Ok(ModeSelection::Distributed),
            "both" => Ok(ModeSelection::Both),
            other => Err(format!(
                "unknown mode `{other}` (centralized|distributed|both)"
            )),
        }
    }
}

/// Fractions of devices on each route; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteMix {
    pub via_lds: f64,
    pub via_sds: f64,
    pub direct_cds: f64,
}

impl Default for RouteMix {
    fn default() -> Self {
        RouteMix {
            via_lds: 0.6,
            via_sds: 0.3,
            direct_cds: 0.1,
        }
    }
}

impl RouteMix {
    pub fn as_array(&self) -> [f64; 3] {
        [self.via_lds, self.via_sds, self.direct_cds]
    }
}

/// Link latencies and compute costs, in milliseconds. These are calibration
/// values for the desk-scale comparison, not measured figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyTable {
    pub device_gateway_ms: Millis,
    pub gateway_cds_ms: Millis,
    /// Cost of forming one context graph, wherever it is formed.
    pub graph_build_ms: Millis,
    /// CDS cost of modeling the counter and running the matching rule for
    /// one report.
    pub cds_check_ms: Millis,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            device_gateway_ms: 5,
            gateway_cds_ms: 40,
            graph_build_ms: 2,
            cds_check_ms: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub mode: ModeSelection,
    pub devices: usize,
    pub attacker_fraction: f64,
    pub malicious_share_of_attackers: f64,
    /// Attackers whose tamper profile is empty; undetectable by construction.
    pub stealth_share_of_attackers: f64,
    pub route_mix: RouteMix,
    pub period_ms: Millis,
    pub duration_ms: Millis,
    pub stages: u32,
    /// Devices per HGW and per AP.
    pub gateway_fanout: usize,
    pub patch_efficacy: f64,
    /// Probability that any single message is lost.
    pub loss_rate: f64,
    pub latency: LatencyTable,
    pub sizes: SizeTable,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            mode: ModeSelection::Both,
            devices: 500,
            attacker_fraction: 0.2,
            malicious_share_of_attackers: 0.5,
            stealth_share_of_attackers: 0.0,
            route_mix: RouteMix::default(),
            period_ms: 5_000,
            duration_ms: 100_000,
            stages: 4,
            gateway_fanout: 25,
            patch_efficacy: 1.0,
            loss_rate: 0.0,
            latency: LatencyTable::default(),
            sizes: SizeTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{key}: {message}")]
    Range { key: &'static str, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn range(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key,
        message: message.into(),
    }
}

const SUM_TOLERANCE: f64 = 1e-9;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |key: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(range(key, format!("{v} is outside [0, 1]")))
            }
        };
        unit("attacker_fraction", self.attacker_fraction)?;
        unit(
            "malicious_share_of_attackers",
            self.malicious_share_of_attackers,
        )?;
        unit(
            "stealth_share_of_attackers",
            self.stealth_share_of_attackers,
        )?;
        unit("patch_efficacy", self.patch_efficacy)?;
        unit("loss_rate", self.loss_rate)?;
        for v in self.route_mix.as_array() {
            unit("route_mix", v)?;
        }
        let sum: f64 = self.route_mix.as_array().iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(range("route_mix", format!("fractions sum to {sum}, not 1")));
        }
        if self.devices == 0 {
            return Err(range("devices", "at least one device is required"));
        }
        if self.period_ms == 0 {
            return Err(range("period_ms", "must be positive"));
        }
        if self.duration_ms < 2 * self.period_ms {
            return Err(range("duration_ms", "must be at least twice period_ms"));
        }
        if self.stages < 2 {
            return Err(range("stages", "at least 2 stages are required"));
        }
        if self.gateway_fanout == 0 {
            return Err(range("gateway_fanout", "must be positive"));
        }
        if self.latency.device_gateway_ms == 0 {
            return Err(range(
                "latency.device_gateway_ms",
                "link latency must be positive",
            ));
        }
        if self.latency.gateway_cds_ms == 0 {
            return Err(range(
                "latency.gateway_cds_ms",
                "link latency must be positive",
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                message: format!("expected key=value, got `{content}`"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|message| ConfigError::Parse { line, message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("{key}: cannot parse `{value}`"))
        }
        let s = &mut self.sizes;
        let l = &mut self.latency;
        match key {
            "seed" => self.seed = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "devices" => self.devices = num(key, value)?,
            "attacker_fraction" => self.attacker_fraction = num(key, value)?,
            "malicious_share_of_attackers" => self.malicious_share_of_attackers = num(key, value)?,
            "stealth_share_of_attackers" => self.stealth_share_of_attackers = num(key, value)?,
            "route_mix" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<Result<_, _>>()?;
                let [via_lds, via_sds, direct_cds] = parts[..] else {
                    return Err("route_mix: expected three comma-separated fractions".into());
                };
                self.route_mix = RouteMix {
                    via_lds,
                    via_sds,
                    direct_cds,
                };
            }
            "period_ms" => self.period_ms = num(key, value)?,
            "duration_ms" => self.duration_ms = num(key, value)?,
            "stages" => self.stages = num(key, value)?,
            "gateway_fanout" => self.gateway_fanout = num(key, value)?,
            "patch_efficacy" => self.patch_efficacy = num(key, value)?,
            "loss_rate" => self.loss_rate = num(key, value)?,
            "latency.device_gateway_ms" => l.device_gateway_ms = num(key, value)?,
            "latency.gateway_cds_ms" => l.gateway_cds_ms = num(key, value)?,
            "latency.graph_build_ms" => l.graph_build_ms = num(key, value)?,
            "latency.cds_check_ms" => l.cds_check_ms = num(key, value)?,
            "size.context_share" => s.context_share = num(key, value)?,
            "size.digest_report" => s.digest_report = num(key, value)?,
            "size.period_start" => s.period_start = num(key, value)?,
            "size.alarm" => s.alarm = num(key, value)?,
            "size.patch_dispatch" => s.patch_dispatch = num(key, value)?,
            "size.trust_revalidate" => s.trust_revalidate = num(key, value)?,
            "size.trust_ack" => s.trust_ack = num(key, value)?,
            "size.re_register" => s.re_register = num(key, value)?,
            "size.eliminate" => s.eliminate = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order, no comments.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k}={v}");
        };
        let m = self.route_mix;
        let l = self.latency;
        let s = self.sizes;
        kv("seed", &self.seed);
        kv("mode", &self.mode.as_str());
        kv("devices", &self.devices);
        kv("attacker_fraction", &self.attacker_fraction);
        kv(
            "malicious_share_of_attackers",
            &self.malicious_share_of_attackers,
        );
        kv(
            "stealth_share_of_attackers",
            &self.stealth_share_of_attackers,
        );
        kv(
            "route_mix",
            &format!("{},{},{}", m.via_lds, m.via_sds, m.direct_cds),
        );
        kv("period_ms", &self.period_ms);
        kv("duration_ms", &self.duration_ms);
        kv("stages", &self.stages);
        kv("gateway_fanout", &self.gateway_fanout);
        kv("patch_efficacy", &self.patch_efficacy);
        kv("loss_rate", &self.loss_rate);
        kv("latency.device_gateway_ms", &l.device_gateway_ms);
        kv("latency.gateway_cds_ms", &l.gateway_cds_ms);
        kv("latency.graph_build_ms", &l.graph_build_ms);
        kv("latency.cds_check_ms", &l.cds_check_ms);
        kv("size.context_share", &s.context_share);
        kv("size.digest_report", &s.digest_report);
        kv("size.period_start", &s.period_start);
        kv("size.alarm", &s.alarm);
        kv("size.patch_dispatch", &s.patch_dispatch);
        kv("size.trust_revalidate", &s.trust_revalidate);
        kv("size.trust_ack", &s.trust_ack);
        kv("size.re_register", &s.re_register);
        kv("size.eliminate", &s.eliminate);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_is_default_scenario() {
        let cfg = ScenarioConfig::parse("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.devices, 500);
        assert_eq!(cfg.attacker_fraction, 0.2);
        assert_eq!(cfg.mode, ModeSelection::Both);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg =
            ScenarioConfig::parse("# fleet\n\ndevices = 20  # small\nmode=distributed\n").unwrap();
        assert_eq!(cfg.devices, 20);
        assert_eq!(cfg.mode, ModeSelection::Distributed);
    }

    #[test]
    fn out_of_range_names_the_key() {
        let err = ScenarioConfig::parse("attacker_fraction=1.5").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Range {
                key: "attacker_fraction",
                ..
            }
        ));
        assert!(err.to_string().contains("attacker_fraction"));
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ScenarioConfig::parse("seed=1\nbogus=2\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Parse {
                line: 2,
                message: "unknown key `bogus`".into()
            }
        );
    }

    #[test]
    fn malformed_line_and_value() {
        assert!(matches!(
            ScenarioConfig::parse("seed"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ScenarioConfig::parse("\nseed=x"),
            Err(ConfigError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            ScenarioConfig::parse("route_mix=0.5,0.5"),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn structural_rejections() {
        assert!(matches!(
            ScenarioConfig::parse("devices=0"),
            Err(ConfigError::Range { key: "devices", .. })
        ));
        assert!(matches!(
            ScenarioConfig::parse("route_mix=0.5,0.3,0.1"),
            Err(ConfigError::Range {
                key: "route_mix",
                ..
            })
        ));
        assert!(matches!(
            ScenarioConfig::parse("period_ms=100\nduration_ms=150"),
            Err(ConfigError::Range {
                key: "duration_ms",
                ..
            })
        ));
    }

    proptest! {
        #[test]
        fn canonical_form_round_trips(
            seed in any::<u64>(),
            devices in 1usize..5000,
            af in 0.0f64..=1.0,
            ms in 0.0f64..=1.0,
            lds in 0u32..=10,
            sds in 0u32..=10,
            period in 1u64..10_000,
            extra in 0u64..10_000,
            fanout in 1usize..100,
            mode in prop_oneof![Just("centralized"), Just("distributed"), Just("both")],
        ) {
            let direct = 20 - lds - sds;
            let text = format!(
                "seed={seed}\ndevices={devices}\nattacker_fraction={af}\n\
                 malicious_share_of_attackers={ms}\nroute_mix={},{},{}\n\
                 period_ms={period}\nduration_ms={}\ngateway_fanout={fanout}\nmode={mode}\n",
                f64::from(lds) / 20.0, f64::from(sds) / 20.0, f64::from(direct) / 20.0,
                2 * period + extra,
            );
            let Ok(cfg) = ScenarioConfig::parse(&text) else {
                // Only route mixes that miss 1 by rounding may be rejected.
                return Ok(());
            };
            let canonical = cfg.to_canonical_string();
            let again = ScenarioConfig::parse(&canonical).unwrap();
            prop_assert_eq!(&again, &cfg);
            prop_assert_eq!(again.to_canonical_string(), canonical);
        }
    }
}
