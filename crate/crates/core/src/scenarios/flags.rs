use std::collections::BTreeMap;
use std::fmt;

use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagKind {
    Int,
    Float,
    Str,
}

impl fmt::Display for FlagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagKind::Int => "int",
            FlagKind::Float => "float",
            FlagKind::Str => "str",
        })
    }
}

/// One named `--flag value` argument with its contract default.
#[derive(Debug, Clone, Copy)]
pub struct FlagSpec {
    pub name: &'static str,
    pub kind: FlagKind,
    pub default: &'static str,
    pub help: &'static str,
}

impl FlagSpec {
    pub const fn int(name: &'static str, default: &'static str, help: &'static str) -> Self {
        Self {
            name,
            kind: FlagKind::Int,
            default,
            help,
        }
    }

    pub const fn float(name: &'static str, default: &'static str, help: &'static str) -> Self {
        Self {
            name,
            kind: FlagKind::Float,
            default,
            help,
        }
    }

    pub const fn string(name: &'static str, default: &'static str, help: &'static str) -> Self {
        Self {
            name,
            kind: FlagKind::Str,
            default,
            help,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlagValue {
    Int(i64),
    Float(f64),
    Str(String),
}

/// Parsed flag values, defaults filled in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Args {
    values: BTreeMap<String, FlagValue>,
}

impl Args {
    /// Parses `--name value` / `--name=value` tokens against `flags`.
    /// Unknown flags, missing values and type errors are rejected.
    pub fn parse<S: AsRef<str>>(flags: &[FlagSpec], tokens: &[S]) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for spec in flags {
            values.insert(spec.name.to_string(), parse_value(spec, spec.default)?);
        }
        let mut seen = Vec::new();
        let mut iter = tokens.iter().map(AsRef::as_ref);
        while let Some(token) = iter.next() {
            let Some(body) = token.strip_prefix("--") else {
                return Err(ConfigError::Usage(format!("unexpected argument {token:?}")));
            };
            let (name, raw) = match body.split_once('=') {
                Some((name, raw)) => (name, raw.to_string()),
                None => {
                    let raw = iter
                        .next()
                        .ok_or_else(|| ConfigError::Usage(format!("--{body} needs a value")))?;
                    (body, raw.to_string())
                }
            };
            let spec = flags
                .iter()
                .find(|f| f.name == name)
                .ok_or_else(|| ConfigError::Usage(format!("unknown flag --{name}")))?;
            if seen.contains(&name) {
                return Err(ConfigError::Usage(format!("--{name} given twice")));
            }
            seen.push(name);
            values.insert(name.to_string(), parse_value(spec, &raw)?);
        }
        Ok(Self { values })
    }

    /// Builds from already-typed values (e.g. parsed by the CLI), filling defaults.
    pub fn from_values(
        flags: &[FlagSpec],
        given: impl IntoIterator<Item = (String, FlagValue)>,
    ) -> Result<Self, ConfigError> {
        let mut args = Self::parse::<&str>(flags, &[])?;
        for (name, value) in given {
            if !args.values.contains_key(&name) {
                return Err(ConfigError::Usage(format!("unknown flag --{name}")));
            }
            args.values.insert(name, value);
        }
        Ok(args)
    }

    pub fn int(&self, name: &str) -> i64 {
        match self.values.get(name) {
            Some(FlagValue::Int(v)) => *v,
            other => panic!("flag {name} is not an int: {other:?}"),
        }
    }

    pub fn float(&self, name: &str) -> f64 {
        match self.values.get(name) {
            Some(FlagValue::Float(v)) => *v,
            Some(FlagValue::Int(v)) => *v as f64,
            other => panic!("flag {name} is not a number: {other:?}"),
        }
    }

    pub fn str(&self, name: &str) -> &str {
        match self.values.get(name) {
            Some(FlagValue::Str(v)) => v,
            other => panic!("flag {name} is not a string: {other:?}"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FlagValue)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub fn parse_value(spec: &FlagSpec, raw: &str) -> Result<FlagValue, ConfigError> {
    let bad = || ConfigError::Usage(format!("--{} expects {}, got {raw:?}", spec.name, spec.kind));
    match spec.kind {
        FlagKind::Int => raw.trim().parse().map(FlagValue::Int).map_err(|_| bad()),
        FlagKind::Float => match raw.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(FlagValue::Float(v)),
            _ => Err(bad()),
        },
        FlagKind::Str => Ok(FlagValue::Str(raw.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAGS: &[FlagSpec] = &[
        FlagSpec::int("seed", "42", "seed"),
        FlagSpec::float("rate", "0.5", "rate"),
        FlagSpec::string("mode", "random", "mode"),
    ];

    #[test]
    fn defaults_apply() {
        let args = Args::parse::<&str>(FLAGS, &[]).unwrap();
        assert_eq!(args.int("seed"), 42);
        assert_eq!(args.float("rate"), 0.5);
        assert_eq!(args.str("mode"), "random");
    }

    #[test]
    fn both_spellings() {
        let args = Args::parse(FLAGS, &["--seed", "7", "--rate=2"]).unwrap();
        assert_eq!(args.int("seed"), 7);
        assert_eq!(args.float("rate"), 2.0);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(Args::parse(FLAGS, &["--nope", "1"]).is_err());
        assert!(Args::parse(FLAGS, &["--seed", "1", "--seed", "2"]).is_err());
        assert!(Args::parse(FLAGS, &["--seed", "x"]).is_err());
        assert!(Args::parse(FLAGS, &["--seed"]).is_err());
        assert!(Args::parse(FLAGS, &["seed"]).is_err());
        assert!(Args::parse(FLAGS, &["--rate", "nan"]).is_err());
    }

    #[test]
    fn negative_values_are_values() {
        let args = Args::parse(FLAGS, &["--seed", "-5"]).unwrap();
        assert_eq!(args.int("seed"), -5);
    }
}
