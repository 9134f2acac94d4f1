//! Flat `key = value` scenario files.
//!
//! ```text
//! # vanilla call
//! beta = 1
//! strike = 100
//! psi = call
//! maturity = 1
//! sigma.kind = constant
//! sigma.value = 0.2
//! r.kind = exp
//! r.base = 0.05
//! r.rate = -0.1
//! y.kind = piecewise_linear
//! y.times = 0, 0.5
//! y.values = 0, 0.01
//! ```
//!
//! `sigma`, `r` and `y` are mandatory; `mu` (physical drift) is optional.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use powersym::coefficients::CoefficientCurve;
use powersym::model::{MarketScenario, Psi};
use sha2::{Digest, Sha256};

use crate::error::CliError;

const TOP_KEYS: [&str; 4] = ["beta", "strike", "psi", "maturity"];
const CURVES: [(&str, bool); 4] = [("sigma", true), ("r", true), ("y", true), ("mu", false)];

#[derive(Debug, Clone, PartialEq)]
enum CurveSpec {
    Constant(f64),
    PiecewiseConstant(Vec<f64>, Vec<f64>),
    PiecewiseLinear(Vec<f64>, Vec<f64>),
    Exp(f64, f64),
    Sampled(Vec<f64>, Vec<f64>),
}

impl CurveSpec {
    fn build(&self, horizon: f64) -> powersym::Result<CoefficientCurve> {
        match self {
            CurveSpec::Constant(v) => CoefficientCurve::constant(*v, horizon),
            CurveSpec::PiecewiseConstant(t, v) => CoefficientCurve::piecewise_constant(t.clone(), v.clone(), horizon),
            CurveSpec::PiecewiseLinear(t, v) => CoefficientCurve::piecewise_linear(t.clone(), v.clone(), horizon),
            CurveSpec::Exp(base, rate) => CoefficientCurve::exponential(*base, *rate, horizon),
            CurveSpec::Sampled(t, v) => CoefficientCurve::sampled(t.clone(), v.clone(), horizon),
        }
    }

    fn canonical(&self) -> String {
        let list = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        match self {
            CurveSpec::Constant(v) => format!("constant({v:?})"),
            CurveSpec::PiecewiseConstant(t, v) => format!("piecewise_constant([{}],[{}])", list(t), list(v)),
            CurveSpec::PiecewiseLinear(t, v) => format!("piecewise_linear([{}],[{}])", list(t), list(v)),
            CurveSpec::Exp(b, r) => format!("exp({b:?},{r:?})"),
            CurveSpec::Sampled(t, v) => format!("sampled([{}],[{}])", list(t), list(v)),
        }
    }
}

/// A parsed scenario with the digest of its semantic content.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: MarketScenario,
    /// Hex SHA-256 of the canonical form; formatting and comments do not count.
    pub digest: String,
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<(String, usize), CliError> {
        self.take(key)
            .ok_or_else(|| CliError::config(format!("missing mandatory key `{key}`")))
    }

    fn number(&mut self, key: &str) -> Result<f64, CliError> {
        let (raw, line) = self.require(key)?;
        parse_number(key, &raw, line)
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>, CliError> {
        let (raw, line) = self.require(key)?;
        raw.split(',')
            .map(|part| parse_number(key, part.trim(), line))
            .collect()
    }
}

fn parse_number(key: &str, raw: &str, line: usize) -> Result<f64, CliError> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::config(format!("line {line}: `{key}` is not a finite number: `{raw}`"))),
    }
}

fn parse_psi(raw: &str, line: usize) -> Result<Psi, CliError> {
    match raw {
        "call" | "1" | "+1" => Ok(Psi::Call),
        "put" | "-1" => Ok(Psi::Put),
        _ => Err(CliError::config(format!("line {line}: `psi` must be call, put, 1 or -1, got `{raw}`"))),
    }
}

fn knots(entries: &mut Entries, name: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let tkey = format!("{name}.times");
    let times = entries.list(&tkey)?;
    let values = entries.list(&format!("{name}.values"))?;
    if times.len() != values.len() {
        return Err(CliError::config(format!(
            "`{name}.times` has {} entries but `{name}.values` has {}",
            times.len(),
            values.len()
        )));
    }
    if times.first() != Some(&0.0) {
        return Err(CliError::config(format!("`{tkey}` must start at 0")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::config(format!("`{tkey}` must be strictly increasing")));
    }
    Ok((times, values))
}

fn curve(entries: &mut Entries, name: &str) -> Result<CurveSpec, CliError> {
    let (kind, line) = entries.require(&format!("{name}.kind"))?;
    Ok(match kind.as_str() {
        "constant" => CurveSpec::Constant(entries.number(&format!("{name}.value"))?),
        "piecewise_constant" => {
            let (t, v) = knots(entries, name)?;
            CurveSpec::PiecewiseConstant(t, v)
        }
        "piecewise_linear" => {
            let (t, v) = knots(entries, name)?;
            CurveSpec::PiecewiseLinear(t, v)
        }
        "sampled" => {
            let (t, v) = knots(entries, name)?;
            CurveSpec::Sampled(t, v)
        }
        "exp" => CurveSpec::Exp(
            entries.number(&format!("{name}.base"))?,
            entries.number(&format!("{name}.rate"))?,
        ),
        other => {
            return Err(CliError::config(format!(
                "line {line}: unknown curve kind `{other}` for `{name}` \
                 (expected constant, piecewise_constant, piecewise_linear, exp or sampled)"
            )))
        }
    })
}

fn has_prefix(entries: &Entries, name: &str) -> bool {
    let prefix = format!("{name}.");
    entries.map.keys().any(|k| k.starts_with(&prefix))
}

/// Parses scenario text. Unknown, duplicate and missing keys are rejected.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, CliError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {line}: expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(CliError::config(format!("line {line}: empty key")));
        }
        if let Some((_, first)) = map.get(&key) {
            return Err(CliError::config(format!("line {line}: key `{key}` already set on line {first}")));
        }
        map.insert(key, (value.trim().to_string(), line));
    }
    let mut entries = Entries { map };

    let beta = entries.number("beta")?;
    let strike = entries.number("strike")?;
    let (psi_raw, psi_line) = entries.require("psi")?;
    let psi = parse_psi(&psi_raw, psi_line)?;
    let maturity = entries.number("maturity")?;

    let mut specs = Vec::new();
    for (name, mandatory) in CURVES {
        if mandatory || has_prefix(&entries, name) {
            specs.push((name, Some(curve(&mut entries, name)?)));
        } else {
            specs.push((name, None));
        }
    }
    if let Some((key, (_, line))) = entries.map.iter().next() {
        let hint = if TOP_KEYS.contains(&key.as_str()) { "" } else { " (not valid here)" };
        return Err(CliError::config(format!("line {line}: unknown key `{key}`{hint}")));
    }

    let mut canonical = format!("beta={beta:?};strike={strike:?};psi={};maturity={maturity:?}", psi.sign());
    let mut built = Vec::new();
    for (name, spec) in &specs {
        match spec {
            Some(s) => {
                let _ = write!(canonical, ";{name}={}", s.canonical());
                let c = s
                    .build(maturity)
                    .map_err(|e| CliError::config(format!("curve `{name}`: {e}")))?;
                built.push(Some(c));
            }
            None => built.push(None),
        }
    }
    let mut it = built.into_iter();
    let (sigma, r, y, mu) = (
        it.next().flatten().expect("mandatory"),
        it.next().flatten().expect("mandatory"),
        it.next().flatten().expect("mandatory"),
        it.next().flatten(),
    );
    let scenario = MarketScenario::with_degenerate_volatility(beta, strike, psi, maturity, sigma, r, y, mu)
        .map_err(|e| CliError::config(e.to_string()))?;

    let digest = Sha256::digest(canonical.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
    Ok(ScenarioFile { scenario, digest })
}

/// Reads and parses a scenario file; I/O failures are configuration errors.
pub fn load_scenario(path: &Path) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read scenario {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
