use std::fmt;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    Within(f64, f64),
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "bound {b:e}"),
            Bound::Within(lo, hi) => write!(f, "band [{lo}, {hi}]"),
        }
    }
}

/// One pass/fail judgement: the measured quantity against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= bound`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound: Bound::AtMost(bound),
            pass: value <= bound,
        }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound: Bound::Within(lo, hi),
            pass: value >= lo && value <= hi,
        }
    }

    /// `name = value (bound)`.
    pub fn describe(&self) -> String {
        format!("{} = {:e} ({})", self.name, self.value, self.bound)
    }

    pub fn line(&self) -> String {
        format!("{} {}", if self.pass { "PASS" } else { "FAIL" }, self.describe())
    }
}

/// Human-readable summary of a command run, written to stderr.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub command: String,
    pub digest: Option<String>,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(command: impl Into<String>) -> Self {
        RunReport {
            command: command.into(),
            ..Default::default()
        }
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn note(&mut self, n: impl Into<String>) {
        self.notes.push(n.into());
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// First failing check, for one-line summaries.
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command);
        if let Some(d) = &self.digest {
            let _ = writeln!(s, "scenario: sha256:{d}");
        }
        for o in &self.outputs {
            let _ = writeln!(s, "output: {o}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "check: {}", c.line());
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let _ = writeln!(s, "result: {}", if self.pass() { "PASS" } else { "FAIL" });
        s
    }
}
