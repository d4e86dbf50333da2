//! Run configuration files.
//!
//! ```text
//! # comment
//! [model]
//! variant = smmh_rho        # smmh | smmh_rho | mmh
//! states = 2
//! r.1 = 0.03                # per-state keys are 1-based
//! kappa = 4.0               # a key without index applies to every state
//! d = 1.7                   # separable variants
//! lambda.1 = 1.7            # mmh only
//! rho = -0.8
//! delta = 0.3
//! horizon = 5
//!
//! [chain]
//! row.1 = -1.0909 1.0909
//! row.2 = 3.4413 -3.4413
//! ```

use std::collections::BTreeMap;
use std::fmt;

use mmh_core::models::presets;
use mmh_core::{HestonRegimeParams, MarkovChainSpec, RiskPremium, StateParams, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Initial {
    pub v0: f64,
    pub x0: f64,
    /// 0-based.
    pub state: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solver {
    pub grid_step: f64,
    pub n_paths_xi: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim {
    pub n_paths: usize,
    pub steps_per_year: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: HestonRegimeParams,
    pub chain: MarkovChainSpec,
    pub initial: Initial,
    pub solver: Solver,
    pub sim: Sim,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

const SECTIONS: [&str; 5] = ["model", "chain", "initial", "solver", "sim"];

struct Document {
    sections: BTreeMap<String, Section>,
    last_line: usize,
}

impl Document {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut current: Option<String> = None;
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return err(line, format!("malformed section header '{content}'"));
                };
                let name = name.trim().to_ascii_lowercase();
                if !SECTIONS.contains(&name.as_str()) {
                    return err(line, format!("unknown section [{name}]"));
                }
                if sections.contains_key(&name) {
                    return err(line, format!("section [{name}] appears twice"));
                }
                sections.insert(name.clone(), Section { line, entries: BTreeMap::new() });
                current = Some(name);
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return err(line, format!("expected 'key = value', got '{content}'"));
            };
            let (key, value) = (key.trim().to_ascii_lowercase(), value.trim());
            if key.is_empty() || value.is_empty() {
                return err(line, "empty key or value");
            }
            let Some(section) = current.as_ref() else {
                return err(line, "key outside of any section");
            };
            let entries = &mut sections.get_mut(section).unwrap().entries;
            if entries.contains_key(&key) {
                return err(line, format!("duplicate key '{key}'"));
            }
            entries.insert(key, Entry { value: value.to_string(), line });
        }
        Ok(Self { sections, last_line })
    }

    fn section(&self, name: &str) -> Result<&Section, ConfigError> {
        self.sections
            .get(name)
            .map_or_else(|| err(self.last_line, format!("missing section [{name}]")), Ok)
    }
}

struct Reader<'a> {
    name: &'static str,
    section: Option<&'a Section>,
    fallback_line: usize,
    used: Vec<String>,
}

impl<'a> Reader<'a> {
    fn new(doc: &'a Document, name: &'static str, required: bool) -> Result<Self, ConfigError> {
        let section = if required {
            Some(doc.section(name)?)
        } else {
            doc.sections.get(name)
        };
        Ok(Self {
            name,
            section,
            fallback_line: doc.last_line,
            used: Vec::new(),
        })
    }

    fn line(&self) -> usize {
        self.section.map_or(self.fallback_line, |s| s.line)
    }

    fn raw(&mut self, key: &str) -> Option<&'a Entry> {
        let entry = self.section?.entries.get(key)?;
        self.used.push(key.to_string());
        Some(entry)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .or_else(|_| err(e.line, format!("cannot parse '{}' for key '{key}'", e.value))),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        let line = self.line();
        let name = self.name;
        self.parse(key)?
            .map_or_else(|| err(line, format!("missing key '{key}' in [{name}]")), Ok)
    }

    fn or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    /// `key.i` for every state, falling back to plain `key`.
    fn per_state(&mut self, key: &str, n: usize) -> Result<Vec<f64>, ConfigError> {
        let shared: Option<f64> = self.parse(key)?;
        (1..=n)
            .map(|i| match self.parse(&format!("{key}.{i}"))? {
                Some(v) => Ok(v),
                None => shared.map_or_else(
                    || err(self.line(), format!("missing key '{key}.{i}' (or '{key}') in [{}]", self.name)),
                    Ok,
                ),
            })
            .collect()
    }

    fn reject_unused(&self) -> Result<(), ConfigError> {
        if let Some(section) = self.section {
            for (key, entry) in &section.entries {
                if !self.used.contains(key) {
                    return err(entry.line, format!("unknown key '{key}' in [{}]", self.name));
                }
            }
        }
        Ok(())
    }
}

fn parse_variant(s: &str, line: usize) -> Result<Variant, ConfigError> {
    match s.to_ascii_lowercase().as_str() {
        "mmh" => Ok(Variant::Mmh),
        "smmh" => Ok(Variant::Smmh),
        "smmh_rho" => Ok(Variant::SmmhRho),
        other => err(line, format!("unknown variant '{other}' (expected mmh, smmh or smmh_rho)")),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let doc = Document::parse(text)?;

    let mut m = Reader::new(&doc, "model", true)?;
    let variant_line = m.raw("variant").map(|e| e.line);
    let variant = match variant_line {
        Some(line) => parse_variant(&doc.sections["model"].entries["variant"].value, line)?,
        None => return err(m.line(), "missing key 'variant' in [model]"),
    };
    let n: usize = m.required("states")?;
    if n == 0 {
        return err(m.line(), "states must be at least 1");
    }
    let r = m.per_state("r", n)?;
    let nu = m.per_state("nu", n)?;
    let kappa = m.per_state("kappa", n)?;
    let theta = m.per_state("theta", n)?;
    let chi = m.per_state("chi", n)?;
    let premium = match variant {
        Variant::Mmh => RiskPremium::PerState(m.per_state("lambda", n)?),
        _ => RiskPremium::Global(m.required("d")?),
    };
    let rho: f64 = m.or("rho", 0.0)?;
    let delta: f64 = m.required("delta")?;
    let horizon: f64 = m.or("horizon", presets::HORIZON)?;
    m.reject_unused()?;
    let states = (0..n)
        .map(|e| StateParams {
            r: r[e],
            nu: nu[e],
            kappa: kappa[e],
            theta: theta[e],
            chi: chi[e],
        })
        .collect();
    let model = HestonRegimeParams::new(variant, states, premium, rho, delta, horizon)
        .or_else(|e| err(m.line(), e.to_string()))?;

    let mut c = Reader::new(&doc, "chain", n > 1)?;
    let chain = if c.section.is_none() {
        MarkovChainSpec::single_state()
    } else {
        let mut rows = Vec::with_capacity(n);
        for i in 1..=n {
            let key = format!("row.{i}");
            let line = c.line();
            let entry = c
                .raw(&key)
                .map_or_else(|| err(line, format!("missing key '{key}' in [chain]")), Ok)?;
            let row = entry
                .value
                .split(|ch: char| ch.is_whitespace() || ch == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .or_else(|_| err(entry.line, format!("cannot parse row '{}'", entry.value)))?;
            if row.len() != n {
                return err(entry.line, format!("row {i} has {} entries, expected {n}", row.len()));
            }
            rows.push(row);
        }
        c.reject_unused()?;
        MarkovChainSpec::new(&rows).or_else(|e| err(c.line(), e.to_string()))?
    };

    let mut ini = Reader::new(&doc, "initial", false)?;
    let state: usize = ini.or("state", 1)?;
    if state == 0 || state > n {
        return err(ini.line(), format!("state must be in 1..={n}, got {state}"));
    }
    let initial = Initial {
        v0: ini.or("v0", presets::V0)?,
        x0: ini.or("x0", presets::X0)?,
        state: state - 1,
    };
    if !(initial.v0 > 0.0) || !(initial.x0 >= 0.0) {
        return err(ini.line(), "v0 must be positive and x0 nonnegative");
    }
    ini.reject_unused()?;

    let mut s = Reader::new(&doc, "solver", false)?;
    let solver = Solver {
        grid_step: s.or("grid_step", horizon / 5000.0)?,
        n_paths_xi: s.or("n_paths_xi", 10_000)?,
        seed: s.or("seed", 1)?,
    };
    if !(solver.grid_step > 0.0) || solver.n_paths_xi == 0 {
        return err(s.line(), "grid_step and n_paths_xi must be positive");
    }
    s.reject_unused()?;

    let mut si = Reader::new(&doc, "sim", false)?;
    let sim = Sim {
        n_paths: si.or("n_paths", 100_000)?,
        steps_per_year: si.or("steps_per_year", 250)?,
    };
    if sim.n_paths == 0 || sim.steps_per_year == 0 {
        return err(si.line(), "n_paths and steps_per_year must be positive");
    }
    si.reject_unused()?;

    Ok(RunConfig {
        model,
        chain,
        initial,
        solver,
        sim,
    })
}
