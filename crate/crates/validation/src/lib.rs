//! Pass/fail bookkeeping for the acceptance report.

use std::fmt;
use std::time::{Duration, Instant};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    /// The criterion's own checks, before the runtime limit is applied.
    pub checks_passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub limit: Option<Duration>,
}

impl Verdict {
    pub fn within_limit(&self) -> bool {
        self.limit.is_none_or(|l| self.elapsed < l)
    }

    pub fn passed(&self) -> bool {
        self.checks_passed && self.within_limit()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {} {}: {} [{:.1} s", self.id, self.name, self.detail, self.elapsed.as_secs_f64())?;
        match self.limit {
            Some(l) if self.within_limit() => write!(f, ", limit {} s]", l.as_secs()),
            Some(l) => write!(f, ", over the {} s limit]", l.as_secs()),
            None => write!(f, "]"),
        }
    }
}

/// Runs `check`, which returns `(passed, detail)`, and times it.
pub fn run_criterion(
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    check: impl FnOnce() -> (bool, String),
) -> Verdict {
    let t = Instant::now();
    let (checks_passed, detail) = check();
    Verdict {
        id,
        name,
        checks_passed,
        detail,
        elapsed: t.elapsed(),
        limit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runtime_limit_turns_a_pass_into_a_fail() {
        let mut v = run_criterion(1, "x", Some(Duration::from_secs(60)), || (true, "ok".into()));
        assert!(v.passed());
        assert!(v.to_string().starts_with("PASS 1 x: ok"));
        v.elapsed = Duration::from_secs(61);
        assert!(!v.passed());
        assert!(v.to_string().contains("over the 60 s limit"));
        let f = run_criterion(2, "y", None, || (false, "bad".into()));
        assert!(f.to_string().starts_with("FAIL 2 y: bad"));
    }
}
