//! Structured pass/fail reports shared by every check in the crate.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

/// Reports keep at most this many witnesses; `witness_count` holds the total.
pub const MAX_WITNESSES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Inconclusive,
}

impl Status {
    pub fn is_pass(self) -> bool {
        self == Status::Pass
    }

    /// Pass and not-applicable both count as "nothing wrong".
    pub fn is_ok(self) -> bool {
        matches!(self, Status::Pass | Status::NotApplicable | Status::Inconclusive)
    }
}

/// A sample point at which a check failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub label: String,
    pub index: Option<usize>,
    pub point: Vec<f64>,
    /// Signed residual of the checked relation at `point`.
    pub residual: f64,
    /// Amount by which the tolerance was exceeded (always positive).
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub status: Status,
    pub witness_count: usize,
    pub witnesses: Vec<Witness>,
    pub margins: BTreeMap<String, f64>,
    pub metadata: BTreeMap<String, Value>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Pass,
            witness_count: 0,
            witnesses: Vec::new(),
            margins: BTreeMap::new(),
            metadata: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn not_applicable(name: impl Into<String>, reason: impl Into<String>) -> Self {
        let mut r = Self::new(name);
        r.status = Status::NotApplicable;
        r.notes.push(reason.into());
        r
    }

    pub fn passed(&self) -> bool {
        self.status.is_pass()
    }

    /// Records a failure; the report status becomes `Fail`.
    pub fn fail(
        &mut self,
        label: impl Into<String>,
        index: Option<usize>,
        point: &[f64],
        residual: f64,
        excess: f64,
    ) {
        self.status = Status::Fail;
        self.witness_count += 1;
        self.witnesses.push(Witness {
            label: label.into(),
            index,
            point: point.to_vec(),
            residual,
            excess: excess.abs(),
        });
    }

    pub fn set_margin(&mut self, key: impl Into<String>, value: f64) {
        self.margins.insert(key.into(), value);
    }

    /// Keeps the running minimum under `key`.
    pub fn min_margin(&mut self, key: &str, value: f64) {
        let e = self.margins.entry(key.to_string()).or_insert(f64::INFINITY);
        if value < *e {
            *e = value;
        }
    }

    /// Keeps the running maximum under `key`.
    pub fn max_margin(&mut self, key: &str, value: f64) {
        let e = self.margins.entry(key.to_string()).or_insert(f64::NEG_INFINITY);
        if value > *e {
            *e = value;
        }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<Value>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Orders witnesses by decreasing excess (stable) and truncates them to
    /// [`MAX_WITNESSES`].
    pub fn finish(mut self) -> Self {
        self.witnesses
            .sort_by(|a, b| b.excess.partial_cmp(&a.excess).unwrap_or(std::cmp::Ordering::Equal));
        self.witnesses.truncate(MAX_WITNESSES);
        self
    }

    pub fn find_witness(&self, label: &str, point: &[f64], tol: f64) -> Option<&Witness> {
        self.witnesses.iter().find(|w| {
            w.label == label
                && w.point.len() == point.len()
                && w.point.iter().zip(point).all(|(a, b)| (a - b).abs() <= tol)
        })
    }
}

/// True when every report passed or was not applicable.
pub fn all_ok(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.status.is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_always_has_a_witness() {
        let mut r = CheckReport::new("demo");
        assert!(r.passed());
        r.fail("x", Some(3), &[1.0], -0.5, 0.5);
        assert_eq!(r.status, Status::Fail);
        assert_eq!(r.witnesses.len(), 1);
    }

    #[test]
    fn witnesses_sorted_and_capped() {
        let mut r = CheckReport::new("demo");
        for i in 0..40 {
            r.fail("x", Some(i), &[i as f64], -(i as f64), i as f64);
        }
        let r = r.finish();
        assert_eq!(r.witness_count, 40);
        assert_eq!(r.witnesses.len(), MAX_WITNESSES);
        assert_eq!(r.witnesses[0].index, Some(39));
    }
}
