//! Reporting helpers for the acceptance suite.
//!
//! Each criterion prints exactly one `PASS` or `FAIL` line; the process exit
//! status reflects whether every criterion passed.

use std::time::Duration;

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: String,
    pub title: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Collects outcomes and prints them as they arrive.
#[derive(Debug, Default)]
pub struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, id: &str, title: &str, passed: bool, detail: String, elapsed: Duration) {
        let outcome = Outcome {
            id: id.to_string(),
            title: title.to_string(),
            passed,
            detail,
            elapsed,
        };
        println!("{}", line(&outcome));
        self.outcomes.push(outcome);
    }

    /// Prints an informational line that does not count as a criterion.
    pub fn note(&self, id: &str, text: &str) {
        println!("NOTE [{id}] {text}");
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn failures(&self) -> Vec<&Outcome> {
        self.outcomes.iter().filter(|o| !o.passed).collect()
    }

    /// Prints the tally and returns the process exit code.
    pub fn finish(&self) -> i32 {
        let failed = self.failures();
        println!(
            "acceptance: {} passed, {} failed",
            self.outcomes.len() - failed.len(),
            failed.len()
        );
        i32::from(!failed.is_empty())
    }
}

/// `PASS [3] title (1.20 s): detail`
pub fn line(o: &Outcome) -> String {
    format!(
        "{} [{}] {} ({:.2} s): {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.id,
        o.title,
        o.elapsed.as_secs_f64(),
        o.detail
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_follows_failures() {
        let mut r = Report::new();
        r.record("1", "ok", true, String::new(), Duration::ZERO);
        assert_eq!(r.finish(), 0);
        r.record("2", "bad", false, "off by one".into(), Duration::from_millis(1500));
        assert_eq!(r.finish(), 1);
        assert_eq!(line(&r.outcomes()[1]), "FAIL [2] bad (1.50 s): off by one");
    }
}
