//! Machine-readable error lists.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Frame id, file or check the error belongs to; empty for run-level errors.
    pub source: String,
    pub message: String,
}

/// Every error collected during a run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Failures(pub Vec<Failure>);

impl Failures {
    pub fn push(&mut self, source: impl Into<String>, message: impl fmt::Display) {
        self.0.push(Failure { source: source.into(), message: message.to_string() });
    }

    pub fn into_result(self) -> anyhow::Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(self.into())
        }
    }

    /// The failure list of any error, flattening its context chain.
    pub fn from_error(err: &anyhow::Error) -> Failures {
        match err.downcast_ref::<Failures>() {
            Some(f) => f.clone(),
            None => Failures(vec![Failure { source: String::new(), message: format!("{err:#}") }]),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("failures serialize")
    }
}

impl fmt::Display for Failures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            if e.source.is_empty() {
                write!(f, "{}", e.message)?;
            } else {
                write!(f, "{}: {}", e.source, e.message)?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for Failures {}
