//! Flat `key = value` config files.
//!
//! Grammar: one `key = value` per line; `#` starts a comment; blank lines
//! are ignored; keys may not repeat. Unknown keys are an error so typos do
//! not pass silently.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::energy::{EnergyConfig, SilhouetteForm};
use crate::optimize::{OptimizerConfig, NUM_PARAMS};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field { line: usize, field: String, message: String },
    #[error("line {line}: unknown field `{field}`")]
    UnknownField { line: usize, field: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| ConfigError::Syntax { line, message: format!("expected `key = value`, found `{l}`") })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { line, message: format!("bad key `{k}`") });
            }
            if entries.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(ConfigError::Field { line, field: k.to_string(), message: "repeated".into() });
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    /// Parse `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| ConfigError::Field { line: *line, field: key.to_string(), message: format!("cannot parse `{v}`: {e}") }),
        }
    }

    /// Like [`get`](Self::get) but also requires a finite value ≥ 0.
    pub fn non_negative(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.get(key)?;
        match v {
            Some(x) if !(x >= 0.0 && x.is_finite()) => Err(self.field_error(key, format!("must be a finite non-negative number, got {x}"))),
            other => Ok(other),
        }
    }

    pub fn positive(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.get(key)?;
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(self.field_error(key, format!("must be positive, got {x}"))),
            other => Ok(other),
        }
    }

    pub fn field_error(&self, key: &str, message: String) -> ConfigError {
        let line = self.entries.get(key).map_or(0, |e| e.0);
        ConfigError::Field { line, field: key.to_string(), message }
    }

    /// Fail on any key outside `allowed`.
    pub fn check_known(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::UnknownField { line: *line, field: k.clone() });
            }
        }
        Ok(())
    }
}

pub const WEIGHT_KEYS: &[&str] = &[
    "weight_keypoint",
    "weight_repulsion",
    "weight_limit",
    "weight_mask",
    "penetration_allowance",
    "silhouette_form",
    "silhouette_fd",
    "use_limits",
    "max_iterations",
    "initial_step",
    "step_decay",
    "tolerance",
    "scale_rotation",
    "scale_translation",
    "scale_angles",
    "freeze",
];

/// Energy and optimizer settings from a weights file. Missing keys keep
/// their defaults.
pub fn parse_weights(text: &str) -> Result<(EnergyConfig, OptimizerConfig), ConfigError> {
    let kv = KeyValues::parse(text)?;
    kv.check_known(WEIGHT_KEYS)?;
    let mut e = EnergyConfig::default();
    let mut o = OptimizerConfig::default();
    for (key, slot) in [
        ("weight_keypoint", &mut e.weights.keypoint),
        ("weight_repulsion", &mut e.weights.repulsion),
        ("weight_limit", &mut e.weights.limit),
        ("weight_mask", &mut e.weights.mask),
        ("penetration_allowance", &mut e.penetration_allowance),
    ] {
        if let Some(v) = kv.non_negative(key)? {
            *slot = v;
        }
    }
    if let Some(f) = kv.get::<SilhouetteForm>("silhouette_form")? {
        e.silhouette_form = f;
    }
    if let Some(b) = kv.get::<bool>("silhouette_fd")? {
        e.silhouette_fd = b;
    }
    if let Some(b) = kv.get::<bool>("use_limits")? {
        e.use_limits = b;
    }
    if let Some(n) = kv.get::<usize>("max_iterations")? {
        if n == 0 {
            return Err(kv.field_error("max_iterations", "must be positive".into()));
        }
        o.max_iterations = n;
    }
    let [scale_rot, scale_trans, scale_angles] = &mut o.block_scales;
    for (key, slot) in [("initial_step", &mut o.initial_step), ("tolerance", &mut o.tolerance), ("scale_rotation", scale_rot), ("scale_translation", scale_trans), ("scale_angles", scale_angles)] {
        if let Some(v) = kv.positive(key)? {
            *slot = v;
        }
    }
    if let Some(v) = kv.positive("step_decay")? {
        if v >= 1.0 {
            return Err(kv.field_error("step_decay", format!("must be below 1, got {v}")));
        }
        o.step_decay = v;
    }
    if let Some((_, list)) = kv.raw("freeze") {
        for tok in list.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let range = parse_freeze(tok).ok_or_else(|| kv.field_error("freeze", format!("bad entry `{tok}` (use an index, a range `a-b`, or hand_rot, hand_trans, angles, object)")))?;
            for i in range {
                o.frozen[i] = true;
            }
        }
    }
    Ok((e, o))
}

fn parse_freeze(tok: &str) -> Option<std::ops::Range<usize>> {
    let r = match tok {
        "hand_rot" => 0..3,
        "hand_trans" => 3..6,
        "angles" => 6..51,
        "object" => 51..57,
        _ => match tok.split_once('-') {
            Some((a, b)) => a.parse().ok()?..b.parse::<usize>().ok()? + 1,
            None => {
                let i: usize = tok.parse().ok()?;
                i..i + 1
            }
        },
    };
    (r.start < r.end && r.end <= NUM_PARAMS).then_some(r)
}

/// Render energy/optimizer settings back to the weights-file format.
pub fn weights_to_text(e: &EnergyConfig, o: &OptimizerConfig) -> String {
    let mut s = String::new();
    let frozen: Vec<String> = (0..NUM_PARAMS).filter(|&i| o.frozen[i]).map(|i| i.to_string()).collect();
    let lines = [
        ("weight_keypoint", e.weights.keypoint.to_string()),
        ("weight_repulsion", e.weights.repulsion.to_string()),
        ("weight_limit", e.weights.limit.to_string()),
        ("weight_mask", e.weights.mask.to_string()),
        ("penetration_allowance", e.penetration_allowance.to_string()),
        ("silhouette_form", e.silhouette_form.to_string()),
        ("silhouette_fd", e.silhouette_fd.to_string()),
        ("use_limits", e.use_limits.to_string()),
        ("max_iterations", o.max_iterations.to_string()),
        ("initial_step", o.initial_step.to_string()),
        ("step_decay", o.step_decay.to_string()),
        ("tolerance", o.tolerance.to_string()),
        ("scale_rotation", o.block_scales[0].to_string()),
        ("scale_translation", o.block_scales[1].to_string()),
        ("scale_angles", o.block_scales[2].to_string()),
        ("freeze", frozen.join(",")),
    ];
    for (k, v) in lines {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_values() {
        let kv = KeyValues::parse("# header\n\na = 1.5  # trailing\nb=x\n").unwrap();
        assert_eq!(kv.get::<f64>("a").unwrap(), Some(1.5));
        assert_eq!(kv.raw("b"), Some((4, "x")));
        assert_eq!(kv.get::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        assert_eq!(KeyValues::parse("a = 1\nnonsense\n").unwrap_err(), ConfigError::Syntax { line: 2, message: "expected `key = value`, found `nonsense`".into() });
        assert!(matches!(KeyValues::parse("a = 1\na = 2\n"), Err(ConfigError::Field { line: 2, .. })));
    }

    #[test]
    fn negative_weight_names_field() {
        let err = parse_weights("weight_keypoint = 1\nweight_repulsion = -5\n").unwrap_err();
        assert!(err.to_string().contains("weight_repulsion"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn weights_round_trip() {
        let (mut e, mut o) = parse_weights("silhouette_form = l2\nuse_limits = false\nfreeze = object, 6-8\n").unwrap();
        assert_eq!(e.silhouette_form, SilhouetteForm::L2);
        assert!(!e.use_limits);
        assert!(o.frozen[51] && o.frozen[56] && o.frozen[6] && o.frozen[8] && !o.frozen[9]);
        e.weights.mask = 0.25;
        o.tolerance = 3e-9;
        assert_eq!(parse_weights(&weights_to_text(&e, &o)).unwrap(), (e, o));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(matches!(parse_weights("wieght_mask = 1\n"), Err(ConfigError::UnknownField { line: 1, .. })));
    }
}
