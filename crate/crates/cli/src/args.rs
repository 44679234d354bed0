//! Flag parsing: `--name value` pairs validated against a per-command table.

use std::collections::BTreeMap;

pub struct Flag {
    pub name: &'static str,
    pub metavar: &'static str,
    pub required: bool,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub struct ArgMap {
    values: BTreeMap<String, String>,
}

impl ArgMap {
    pub fn get(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(|s| s.as_str())
            .unwrap_or_else(|| panic!("flag --{name} not declared for this command"))
    }

    pub fn get_opt(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    pub fn get_f64(&self, name: &str) -> Result<f64, String> {
        self.get(name)
            .parse()
            .map_err(|_| format!("flag --{name} expects a number, got '{}'", self.get(name)))
    }

    pub fn get_usize(&self, name: &str) -> Result<usize, String> {
        self.get(name)
            .parse()
            .map_err(|_| format!("flag --{name} expects an integer, got '{}'", self.get(name)))
    }

    pub fn get_u64(&self, name: &str) -> Result<u64, String> {
        self.get(name)
            .parse()
            .map_err(|_| format!("flag --{name} expects an integer, got '{}'", self.get(name)))
    }

    pub fn get_switch(&self, name: &str) -> Result<bool, String> {
        match self.get(name) {
            "on" | "true" | "1" => Ok(true),
            "off" | "false" | "0" => Ok(false),
            other => Err(format!("flag --{name} expects on|off, got '{other}'")),
        }
    }
}

/// Parse `--name value` pairs against the declared flags. Returns a usage
/// message on unknown flags, missing values, or missing required flags.
pub fn parse_flags(args: &[String], flags: &[Flag]) -> Result<ArgMap, String> {
    let mut values = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(name) = arg.strip_prefix("--") else {
            return Err(format!("expected a --flag, got '{arg}'"));
        };
        let Some(flag) = flags.iter().find(|f| f.name == name) else {
            return Err(format!("unknown flag '--{name}'"));
        };
        let Some(value) = args.get(i + 1) else {
            return Err(format!("flag '--{name}' is missing its value"));
        };
        if values.insert(flag.name.to_string(), value.clone()).is_some() {
            return Err(format!("flag '--{name}' given twice"));
        }
        i += 2;
    }
    for flag in flags {
        if !values.contains_key(flag.name) {
            match (flag.required, flag.default) {
                (true, _) => return Err(format!("missing required flag '--{}'", flag.name)),
                (false, Some(d)) => {
                    values.insert(flag.name.to_string(), d.to_string());
                }
                (false, None) => {}
            }
        }
    }
    Ok(ArgMap { values })
}

pub fn usage_text(binary: &str, name: &str, about: &str, flags: &[Flag]) -> String {
    let mut out = format!("{about}\n\nusage: {binary} {name}");
    for f in flags {
        if f.required {
            out.push_str(&format!(" --{} <{}>", f.name, f.metavar));
        }
    }
    out.push_str(" [options]\n\nflags:\n");
    for f in flags {
        let head = format!("  --{} <{}>", f.name, f.metavar);
        let tail = match (f.required, f.default) {
            (true, _) => format!("{} (required)", f.help),
            (_, Some(d)) => format!("{} (default: {d})", f.help),
            _ => f.help.to_string(),
        };
        out.push_str(&format!("{head:<28} {tail}\n"));
    }
    out
}
