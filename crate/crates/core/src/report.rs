use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The audit could not decide (for example boundary contamination).
    Inconclusive,
    /// A hypothesis of the underlying statement is not met, so the audit
    /// does not apply.
    NotApplicable,
}

/// One checked statement inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none", default, with = "num::opt")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default, with = "num::opt")]
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Clause {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            value: None,
            threshold: None,
            detail: detail.into(),
        }
    }

    /// `value <= threshold`, both recorded.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= threshold,
            value: Some(value),
            threshold: Some(threshold),
            detail: format!("{value:.6e} <= {threshold:.6e}"),
        }
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }
}

/// Structured result of one audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub test: String,
    pub verdict: Verdict,
    pub clauses: Vec<Clause>,
    /// Named scalar outputs (statistics, residuals, margins).
    #[serde(with = "num::map")]
    pub metrics: BTreeMap<String, f64>,
    /// Tolerances used, by name.
    #[serde(with = "num::map")]
    pub tolerances: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
}

impl DiagnosticReport {
    pub fn new(test: impl Into<String>) -> Self {
        Self {
            test: test.into(),
            verdict: Verdict::Pass,
            clauses: Vec::new(),
            metrics: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            seeds: Vec::new(),
        }
    }

    pub fn clause(&mut self, c: Clause) -> &mut Self {
        self.clauses.push(c);
        self
    }

    pub fn metric(&mut self, name: impl Into<String>, v: f64) -> &mut Self {
        self.metrics.insert(name.into(), v);
        self
    }

    pub fn tolerance(&mut self, name: impl Into<String>, v: f64) -> &mut Self {
        self.tolerances.insert(name.into(), v);
        self
    }

    /// Sets the verdict from the clauses unless it was already downgraded
    /// to inconclusive or not-applicable.
    pub fn finish(mut self) -> Self {
        if matches!(self.verdict, Verdict::Pass | Verdict::Fail) {
            self.verdict = if self.clauses.iter().all(|c| c.pass) {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn failed_clauses(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().filter(|c| !c.pass)
    }
}

/// JSON has no infinities; non-finite values travel as the strings `"inf"`,
/// `"-inf"` and `"nan"`.
pub mod num {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Special(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Finite(v)
        } else if v.is_nan() {
            Repr::Special("nan".into())
        } else if v > 0.0 {
            Repr::Special("inf".into())
        } else {
            Repr::Special("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Finite(v) => Ok(v),
            Repr::Special(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("invalid number {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(to_repr).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
        }
    }

    pub mod map {
        use super::*;
        use std::collections::BTreeMap;

        pub fn serialize<S: Serializer>(
            m: &BTreeMap<String, f64>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            let r: BTreeMap<&String, Repr> = m.iter().map(|(k, v)| (k, to_repr(*v))).collect();
            r.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<BTreeMap<String, f64>, D::Error> {
            BTreeMap::<String, Repr>::deserialize(d)?
                .into_iter()
                .map(|(k, v)| from_repr::<D::Error>(v).map(|v| (k, v)))
                .collect()
        }
    }
}
