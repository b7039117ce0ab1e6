use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// An exact integer ratio. Every rate this crate reports carries its
/// numerator and denominator so tables can be audited by recomputation.
///
/// A zero denominator means the rate is undefined; it is never shown as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub const fn new(numerator: u64, denominator: u64) -> Self {
        Self {
            numerator,
            denominator,
        }
    }

    pub const fn is_defined(self) -> bool {
        self.denominator != 0
    }

    pub fn fraction(self) -> Option<f64> {
        self.is_defined()
            .then(|| self.numerator as f64 / self.denominator as f64)
    }

    /// Percentage with one decimal, or `undefined`.
    pub fn percent(self) -> String {
        match self.fraction() {
            Some(f) => format!("{:.1}%", f * 100.0),
            None => "undefined".to_string(),
        }
    }

    /// Fraction as text for CSV output, or `undefined`.
    pub fn fraction_text(self) -> String {
        match self.fraction() {
            Some(f) => format!("{f:.6}"),
            None => "undefined".to_string(),
        }
    }

    /// Compares two defined ratios exactly (cross-multiplication).
    pub fn cmp_exact(self, other: Ratio) -> Option<Ordering> {
        if !self.is_defined() || !other.is_defined() {
            return None;
        }
        let lhs = self.numerator as u128 * other.denominator as u128;
        let rhs = other.numerator as u128 * self.denominator as u128;
        Some(lhs.cmp(&rhs))
    }

    /// Exact equality of the represented values.
    pub fn same_value(self, other: Ratio) -> bool {
        self.cmp_exact(other) == Some(Ordering::Equal)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}/{})", self.percent(), self.numerator, self.denominator)
    }
}
