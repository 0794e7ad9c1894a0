//! Effective configuration.
//!
//! Each setting is taken from the first layer that provides it: command
//! line flag, `GIRP_*` environment variable, config file, built-in default.
//! The config file holds `key = value` lines; `#` starts a comment.
//!
//! ```text
//! # girp.conf
//! listen_addr = 0.0.0.0:47001
//! heartbeat_interval_ms = 50
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use girp::executor::BackendKind;
use girp::wire::transport::DEFAULT_PORT;
use girp::wire::MAX_PAYLOAD;
use log::LevelFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    Env,
    File,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Env => "env",
            Source::File => "file",
            Source::Default => "default",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("ConfigError: {key} = {value:?} from {origin}: {reason}")]
    Invalid {
        key: &'static str,
        value: String,
        origin: Source,
        reason: String,
    },
    #[error("ConfigError: line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("ConfigError: unknown key {0:?}")]
    UnknownKey(String),
}

/// Values given on the command line. `None` falls through to the next
/// layer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Flags {
    pub listen_addr: Option<String>,
    pub connect_addr: Option<String>,
    pub backend: Option<String>,
    pub heartbeat_interval_ms: Option<String>,
    pub miss_threshold: Option<String>,
    pub max_frame_bytes: Option<String>,
    pub log_level: Option<String>,
}

impl Flags {
    fn get(&self, key: &str) -> Option<&String> {
        match key {
            "listen_addr" => self.listen_addr.as_ref(),
            "connect_addr" => self.connect_addr.as_ref(),
            "backend" => self.backend.as_ref(),
            "heartbeat_interval_ms" => self.heartbeat_interval_ms.as_ref(),
            "miss_threshold" => self.miss_threshold.as_ref(),
            "max_frame_bytes" => self.max_frame_bytes.as_ref(),
            "log_level" => self.log_level.as_ref(),
            _ => None,
        }
    }
}

pub const KEYS: [&str; 7] = [
    "listen_addr",
    "connect_addr",
    "backend",
    "heartbeat_interval_ms",
    "miss_threshold",
    "max_frame_bytes",
    "log_level",
];

pub fn env_name(key: &str) -> String {
    format!("GIRP_{}", key.to_ascii_uppercase())
}

fn default_of(key: &str) -> String {
    match key {
        "listen_addr" => format!("0.0.0.0:{DEFAULT_PORT}"),
        "connect_addr" => format!("127.0.0.1:{DEFAULT_PORT}"),
        "backend" => "interp".into(),
        "heartbeat_interval_ms" => "100".into(),
        "miss_threshold" => "3".into(),
        "max_frame_bytes" => MAX_PAYLOAD.to_string(),
        "log_level" => "info".into(),
        _ => unreachable!("unknown key {key}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub listen_addr: String,
    pub connect_addr: String,
    pub backend: BackendKind,
    pub heartbeat_interval: Duration,
    pub miss_threshold: u32,
    pub max_frame_bytes: u32,
    pub log_level: LevelFilter,
    /// (key, value, source) for every setting, in `KEYS` order.
    pub effective: Vec<(&'static str, String, Source)>,
}

pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected key = value, got {line:?}"),
            });
        };
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &'static str, value: &str, source: Source) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key,
        value: value.to_string(),
        origin: source,
        reason: e.to_string(),
    })
}

/// Resolves every setting. `env` looks up an environment variable and
/// `file` is the parsed config file, if any.
pub fn resolve(
    flags: &Flags,
    env: &dyn Fn(&str) -> Option<String>,
    file: &BTreeMap<String, String>,
) -> Result<Config, ConfigError> {
    let mut effective = Vec::with_capacity(KEYS.len());
    for key in KEYS {
        let (value, source) = if let Some(v) = flags.get(key) {
            (v.clone(), Source::Flag)
        } else if let Some(v) = env(&env_name(key)) {
            (v, Source::Env)
        } else if let Some(v) = file.get(key) {
            (v.clone(), Source::File)
        } else {
            (default_of(key), Source::Default)
        };
        effective.push((key, value, source));
    }
    let get = |i: usize| (effective[i].1.as_str(), effective[i].2);
    let invalid = |i: usize, reason: &str| ConfigError::Invalid {
        key: KEYS[i],
        value: effective[i].1.clone(),
        origin: effective[i].2,
        reason: reason.to_string(),
    };

    let backend: BackendKind = parse("backend", get(2).0, get(2).1)?;
    let hb_ms: u64 = parse("heartbeat_interval_ms", get(3).0, get(3).1)?;
    if hb_ms == 0 {
        return Err(invalid(3, "must be positive"));
    }
    let miss_threshold: u32 = parse("miss_threshold", get(4).0, get(4).1)?;
    if miss_threshold == 0 {
        return Err(invalid(4, "must be positive"));
    }
    let max_frame_bytes: u32 = parse("max_frame_bytes", get(5).0, get(5).1)?;
    if max_frame_bytes == 0 || max_frame_bytes > MAX_PAYLOAD {
        return Err(invalid(5, &format!("must be within 1..={MAX_PAYLOAD}")));
    }
    let log_level: LevelFilter = parse("log_level", get(6).0, get(6).1)?;
    Ok(Config {
        listen_addr: effective[0].1.clone(),
        connect_addr: effective[1].1.clone(),
        backend,
        heartbeat_interval: Duration::from_millis(hb_ms),
        miss_threshold,
        max_frame_bytes,
        log_level,
        effective,
    })
}

impl Config {
    pub fn log_effective(&self) {
        for (key, value, source) in &self.effective {
            log::info!("config {key} = {value} ({source})");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults() {
        let c = resolve(&Flags::default(), &no_env, &BTreeMap::new()).unwrap();
        assert_eq!(c.backend, BackendKind::Interp);
        assert_eq!(c.heartbeat_interval, Duration::from_millis(100));
        assert_eq!(c.miss_threshold, 3);
        assert_eq!(c.max_frame_bytes, 64 << 20);
        assert_eq!(c.connect_addr, "127.0.0.1:47001");
        assert!(c.effective.iter().all(|(_, _, s)| *s == Source::Default));
        assert_eq!(c.effective.len(), KEYS.len());
    }

    #[test]
    fn flag_beats_env_beats_file_beats_default() {
        let file = parse_file("miss_threshold = 7\nheartbeat_interval_ms=40 # fast\nlog_level=debug\n").unwrap();
        let env = |k: &str| match k {
            "GIRP_HEARTBEAT_INTERVAL_MS" => Some("60".to_string()),
            "GIRP_LOG_LEVEL" => Some("warn".to_string()),
            _ => None,
        };
        let flags = Flags {
            log_level: Some("error".into()),
            ..Flags::default()
        };
        let c = resolve(&flags, &env, &file).unwrap();
        assert_eq!(c.log_level, LevelFilter::Error);
        assert_eq!(c.heartbeat_interval, Duration::from_millis(60));
        assert_eq!(c.miss_threshold, 7);
        assert_eq!(c.backend, BackendKind::Interp);
        let source = |k: &str| c.effective.iter().find(|e| e.0 == k).unwrap().2;
        assert_eq!(source("log_level"), Source::Flag);
        assert_eq!(source("heartbeat_interval_ms"), Source::Env);
        assert_eq!(source("miss_threshold"), Source::File);
        assert_eq!(source("backend"), Source::Default);
    }

    #[test]
    fn invalid_values_name_their_source() {
        let env = |k: &str| (k == "GIRP_BACKEND").then(|| "cuda".to_string());
        match resolve(&Flags::default(), &env, &BTreeMap::new()) {
            Err(ConfigError::Invalid { key, origin, .. }) => {
                assert_eq!((key, origin), ("backend", Source::Env));
            }
            other => panic!("{other:?}"),
        }
        let flags = Flags {
            max_frame_bytes: Some((MAX_PAYLOAD as u64 + 1).to_string()),
            ..Flags::default()
        };
        assert!(resolve(&flags, &no_env, &BTreeMap::new()).is_err());
        let flags = Flags {
            miss_threshold: Some("0".into()),
            ..Flags::default()
        };
        assert!(resolve(&flags, &no_env, &BTreeMap::new()).is_err());
    }

    #[test]
    fn file_syntax_errors() {
        assert_eq!(
            parse_file("\n# ok\nlisten_addr\n"),
            Err(ConfigError::Syntax {
                line: 3,
                reason: "expected key = value, got \"listen_addr\"".into()
            })
        );
        assert_eq!(parse_file("colour = red"), Err(ConfigError::UnknownKey("colour".into())));
    }
}
