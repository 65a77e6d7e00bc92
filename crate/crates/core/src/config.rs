//! Flat `key = value` configuration text with `#` comments.
//!
//! Later assignments of a key override earlier ones, so layering files and
//! command-line overrides amounts to merging maps in order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::denoiser::{KernelConfig, KernelVariant, SpatialProfile};
use crate::error::{Error, Result};
use crate::solvers::{InitialGuess, SolverConfig, SolverMethod};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: invalid key `{k}`", no + 1)));
            }
            map.set(k, v.trim());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|cause| Error::Io {
            path: path.to_path_buf(),
            cause,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parses `key` if present.
    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v}: {e}"))))
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get_parsed(key)?.unwrap_or(default))
    }

    /// Entries of `other` override entries of `self`.
    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on keys not in `known`, so typos do not pass silently.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown configuration key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

impl std::fmt::Display for ConfigMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_text())
    }
}

const KERNEL_KEYS: [&str; 6] = [
    "variant",
    "patch_radius",
    "search_radius",
    "bandwidth",
    "spatial_profile",
    "spatial_bandwidth",
];

const SOLVER_KEYS: [&str; 7] = [
    "method",
    "tolerance",
    "max_iterations",
    "restart",
    "augmentation",
    "initial_guess",
    "budget",
];

/// Keys written by `write_kernel_config` under `prefix`.
pub fn kernel_keys(prefix: &str) -> Vec<String> {
    KERNEL_KEYS.iter().map(|k| format!("{prefix}.{k}")).collect()
}

pub fn solver_keys(prefix: &str) -> Vec<String> {
    SOLVER_KEYS.iter().map(|k| format!("{prefix}.{k}")).collect()
}

pub fn write_kernel_config(map: &mut ConfigMap, prefix: &str, c: &KernelConfig) {
    map.set(&format!("{prefix}.variant"), c.variant.name());
    map.set(&format!("{prefix}.patch_radius"), c.patch_radius);
    map.set(&format!("{prefix}.search_radius"), c.search_radius);
    map.set(&format!("{prefix}.bandwidth"), c.intensity_bandwidth);
    map.set(&format!("{prefix}.spatial_profile"), c.spatial_profile.name());
    map.set(&format!("{prefix}.spatial_bandwidth"), c.spatial_bandwidth);
}

/// Reads a kernel configuration, taking unset fields from `base`.
pub fn read_kernel_config(map: &ConfigMap, prefix: &str, base: KernelConfig) -> Result<KernelConfig> {
    let key = |k: &str| format!("{prefix}.{k}");
    let c = KernelConfig {
        variant: map.get_or::<KernelVariant>(&key("variant"), base.variant)?,
        patch_radius: map.get_or(&key("patch_radius"), base.patch_radius)?,
        search_radius: map.get_or(&key("search_radius"), base.search_radius)?,
        intensity_bandwidth: map.get_or(&key("bandwidth"), base.intensity_bandwidth)?,
        spatial_profile: map.get_or::<SpatialProfile>(&key("spatial_profile"), base.spatial_profile)?,
        spatial_bandwidth: map.get_or(&key("spatial_bandwidth"), base.spatial_bandwidth)?,
    };
    c.validate()?;
    Ok(c)
}

pub fn write_solver_config(map: &mut ConfigMap, prefix: &str, c: &SolverConfig) {
    map.set(&format!("{prefix}.method"), c.method.name());
    map.set(&format!("{prefix}.tolerance"), c.tolerance);
    map.set(&format!("{prefix}.max_iterations"), c.max_iterations);
    map.set(&format!("{prefix}.restart"), c.restart_length);
    map.set(&format!("{prefix}.augmentation"), c.augmentation);
    let guess = match &c.initial_guess {
        InitialGuess::Zero => "zero",
        InitialGuess::Rhs => "rhs",
        InitialGuess::Provided(_) => "provided",
    };
    map.set(&format!("{prefix}.initial_guess"), guess);
    map.set(
        &format!("{prefix}.budget"),
        c.max_operator_applications
            .map_or("none".to_string(), |b| b.to_string()),
    );
}

/// Reads a solver configuration; a `provided` initial guess keeps whatever
/// vector `base` carries.
pub fn read_solver_config(map: &ConfigMap, prefix: &str, base: SolverConfig) -> Result<SolverConfig> {
    let key = |k: &str| format!("{prefix}.{k}");
    let initial_guess = match map.get(&key("initial_guess")) {
        None => base.initial_guess.clone(),
        Some("zero") => InitialGuess::Zero,
        Some("rhs") => InitialGuess::Rhs,
        Some("provided") => match &base.initial_guess {
            InitialGuess::Provided(v) => InitialGuess::Provided(v.clone()),
            _ => return Err(Error::Config("initial_guess = provided needs a supplied image".into())),
        },
        Some(other) => return Err(Error::Config(format!("unknown initial guess `{other}`"))),
    };
    let budget = match map.get(&key("budget")) {
        None => base.max_operator_applications,
        Some("none") => None,
        Some(v) => Some(
            v.parse::<usize>()
                .map_err(|e| Error::Config(format!("{} = {v}: {e}", key("budget"))))?,
        ),
    };
    let c = SolverConfig {
        method: map.get_or::<SolverMethod>(&key("method"), base.method)?,
        tolerance: map.get_or(&key("tolerance"), base.tolerance)?,
        max_iterations: map.get_or(&key("max_iterations"), base.max_iterations)?,
        restart_length: map.get_or(&key("restart"), base.restart_length)?,
        augmentation: map.get_or(&key("augmentation"), base.augmentation)?,
        initial_guess,
        max_operator_applications: budget,
    };
    c.validate()?;
    Ok(c)
}
