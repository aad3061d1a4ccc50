//! Per-file code health.
//!
//! [`analyze_file`] extracts eight sub-factors from source text with a
//! lexer-level scan; [`composite_score`] folds them into a 1-10 score where
//! every sub-factor contributes a saturating penalty. The score is an open
//! surrogate for proprietary maintainability metrics: any per-file quality
//! indicator with the same 1-10 range can be plugged into the router.

mod analyze;
mod strip;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use analyze::{analyze_file, analyze_file_with_window, DEFAULT_DUPLICATION_WINDOW};

/// Lower bound of the Healthy band.
pub const HEALTHY_MIN: f64 = 9.0;
/// Lower bound of the Problematic band.
pub const PROBLEMATIC_MIN: f64 = 5.0;
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 10.0;

/// How blocks and functions are delimited in a source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// `{ ... }` blocks: C, Java, JavaScript, Go, Rust and friends.
    Brace,
    /// Indentation blocks: Python.
    Indent,
}

impl FromStr for Dialect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brace" => Ok(Dialect::Brace),
            "indent" => Ok(Dialect::Indent),
            other => Err(Error::Config(format!(
                "unknown dialect '{other}' (expected brace or indent)"
            ))),
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::Brace => "brace",
            Dialect::Indent => "indent",
        })
    }
}

/// Default extension table used when no dialect is given explicitly.
pub fn dialect_for_extension(ext: &str) -> Option<Dialect> {
    match ext.to_ascii_lowercase().as_str() {
        "py" | "pyi" | "pyw" => Some(Dialect::Indent),
        "rs" | "c" | "h" | "cc" | "cpp" | "cxx" | "hpp" | "hh" | "java" | "js" | "jsx" | "mjs"
        | "cjs" | "ts" | "tsx" | "go" | "cs" | "kt" | "kts" | "scala" | "swift" | "php"
        | "dart" => Some(Dialect::Brace),
        _ => None,
    }
}

/// Analyze raw bytes, rejecting input that is not UTF-8 text.
pub fn analyze_bytes(bytes: &[u8], dialect: Dialect) -> Result<SubFactorVector> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Analysis(format!("input is not UTF-8 text: {e}")))?;
    if text.contains('\0') {
        return Err(Error::Analysis(
            "input contains NUL bytes (binary file?)".into(),
        ));
    }
    Ok(analyze_file(text, dialect))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubFactorVector {
    /// Largest per-function cyclomatic complexity.
    pub cyclomatic_max: u32,
    pub cyclomatic_mean: f64,
    /// Non-blank, non-comment lines.
    pub file_loc: u32,
    pub function_length_max: u32,
    pub nesting_depth_max: u32,
    pub arg_count_max: u32,
    /// Fraction of code lines inside a repeated 6-line window.
    pub duplication_ratio: f64,
    /// Fraction of distinct identifiers shorter than three characters.
    pub identifier_shortness: f64,
}

/// Names the eight sub-factors; used for feature selection and weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubFactor {
    CyclomaticMax,
    CyclomaticMean,
    FileLoc,
    FunctionLengthMax,
    NestingDepthMax,
    ArgCountMax,
    DuplicationRatio,
    IdentifierShortness,
}

impl SubFactor {
    pub const ALL: [SubFactor; 8] = [
        SubFactor::CyclomaticMax,
        SubFactor::CyclomaticMean,
        SubFactor::FileLoc,
        SubFactor::FunctionLengthMax,
        SubFactor::NestingDepthMax,
        SubFactor::ArgCountMax,
        SubFactor::DuplicationRatio,
        SubFactor::IdentifierShortness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubFactor::CyclomaticMax => "cyclomatic_max",
            SubFactor::CyclomaticMean => "cyclomatic_mean",
            SubFactor::FileLoc => "file_loc",
            SubFactor::FunctionLengthMax => "function_length_max",
            SubFactor::NestingDepthMax => "nesting_depth_max",
            SubFactor::ArgCountMax => "arg_count_max",
            SubFactor::DuplicationRatio => "duplication_ratio",
            SubFactor::IdentifierShortness => "identifier_shortness",
        }
    }

    /// Count-valued factors are stored as integers.
    pub fn is_count(self) -> bool {
        !matches!(
            self,
            SubFactor::CyclomaticMean
                | SubFactor::DuplicationRatio
                | SubFactor::IdentifierShortness
        )
    }
}

impl FromStr for SubFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SubFactor::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sub-factor '{s}'")))
    }
}

impl fmt::Display for SubFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl SubFactorVector {
    pub fn get(&self, factor: SubFactor) -> f64 {
        match factor {
            SubFactor::CyclomaticMax => self.cyclomatic_max as f64,
            SubFactor::CyclomaticMean => self.cyclomatic_mean,
            SubFactor::FileLoc => self.file_loc as f64,
            SubFactor::FunctionLengthMax => self.function_length_max as f64,
            SubFactor::NestingDepthMax => self.nesting_depth_max as f64,
            SubFactor::ArgCountMax => self.arg_count_max as f64,
            SubFactor::DuplicationRatio => self.duplication_ratio,
            SubFactor::IdentifierShortness => self.identifier_shortness,
        }
    }

    /// Set a factor; count factors are rounded to the nearest non-negative integer
    /// and fractions clamped to [0, 1].
    pub fn set(&mut self, factor: SubFactor, value: f64) {
        let count = || value.round().max(0.0).min(u32::MAX as f64) as u32;
        let frac = || value.clamp(0.0, 1.0);
        match factor {
            SubFactor::CyclomaticMax => self.cyclomatic_max = count(),
            SubFactor::CyclomaticMean => self.cyclomatic_mean = value.max(0.0),
            SubFactor::FileLoc => self.file_loc = count(),
            SubFactor::FunctionLengthMax => self.function_length_max = count(),
            SubFactor::NestingDepthMax => self.nesting_depth_max = count(),
            SubFactor::ArgCountMax => self.arg_count_max = count(),
            SubFactor::DuplicationRatio => self.duplication_ratio = frac(),
            SubFactor::IdentifierShortness => self.identifier_shortness = frac(),
        }
    }
}

/// One saturating penalty ramp: zero at or below `low`, one at or above `high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub low: f64,
    pub high: f64,
    pub weight: f64,
}

impl Ramp {
    pub const fn new(low: f64, high: f64, weight: f64) -> Self {
        Self { low, high, weight }
    }

    pub fn penalty(&self, x: f64) -> f64 {
        ((x - self.low) / (self.high - self.low)).clamp(0.0, 1.0)
    }
}

/// Knee points and weights of the composite score.
///
/// Default weights sum to 9, so a file saturating every ramp scores 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub cyclomatic_max: Ramp,
    pub cyclomatic_mean: Ramp,
    pub file_loc: Ramp,
    pub function_length_max: Ramp,
    pub nesting_depth_max: Ramp,
    pub arg_count_max: Ramp,
    pub duplication_ratio: Ramp,
    pub identifier_shortness: Ramp,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            cyclomatic_max: Ramp::new(10.0, 30.0, 1.5),
            cyclomatic_mean: Ramp::new(4.0, 10.0, 1.0),
            file_loc: Ramp::new(300.0, 1500.0, 1.0),
            function_length_max: Ramp::new(50.0, 200.0, 1.25),
            nesting_depth_max: Ramp::new(3.0, 7.0, 1.25),
            arg_count_max: Ramp::new(4.0, 8.0, 0.75),
            duplication_ratio: Ramp::new(0.05, 0.30, 1.5),
            identifier_shortness: Ramp::new(0.2, 0.6, 0.75),
        }
    }
}

impl WeightConfig {
    pub fn ramp(&self, factor: SubFactor) -> &Ramp {
        match factor {
            SubFactor::CyclomaticMax => &self.cyclomatic_max,
            SubFactor::CyclomaticMean => &self.cyclomatic_mean,
            SubFactor::FileLoc => &self.file_loc,
            SubFactor::FunctionLengthMax => &self.function_length_max,
            SubFactor::NestingDepthMax => &self.nesting_depth_max,
            SubFactor::ArgCountMax => &self.arg_count_max,
            SubFactor::DuplicationRatio => &self.duplication_ratio,
            SubFactor::IdentifierShortness => &self.identifier_shortness,
        }
    }

    pub fn ramp_mut(&mut self, factor: SubFactor) -> &mut Ramp {
        match factor {
            SubFactor::CyclomaticMax => &mut self.cyclomatic_max,
            SubFactor::CyclomaticMean => &mut self.cyclomatic_mean,
            SubFactor::FileLoc => &mut self.file_loc,
            SubFactor::FunctionLengthMax => &mut self.function_length_max,
            SubFactor::NestingDepthMax => &mut self.nesting_depth_max,
            SubFactor::ArgCountMax => &mut self.arg_count_max,
            SubFactor::DuplicationRatio => &mut self.duplication_ratio,
            SubFactor::IdentifierShortness => &mut self.identifier_shortness,
        }
    }

    /// A config where only `factor` carries weight (all 9 points of it).
    pub fn single(factor: SubFactor) -> Self {
        let mut w = Self::default();
        for f in SubFactor::ALL {
            w.ramp_mut(f).weight = if f == factor { 9.0 } else { 0.0 };
        }
        w
    }

    pub fn total_weight(&self) -> f64 {
        SubFactor::ALL.iter().map(|f| self.ramp(*f).weight).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for f in SubFactor::ALL {
            let r = self.ramp(f);
            if !r.weight.is_finite() || r.weight < 0.0 {
                return Err(Error::Config(format!(
                    "weight for {f} must be a non-negative number, got {}",
                    r.weight
                )));
            }
            if !(r.low.is_finite() && r.high.is_finite() && r.low < r.high) {
                return Err(Error::Config(format!(
                    "knees for {f} must satisfy low < high, got {}/{}",
                    r.low, r.high
                )));
            }
        }
        Ok(())
    }

    /// Stable hex digest identifying this configuration; stored in feature
    /// store headers so stale scores are detected.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("weight config serializes");
        let hash = Sha256::digest(&canonical);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Unhealthy,
    Problematic,
    Healthy,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Healthy => "healthy",
            Band::Problematic => "problematic",
            Band::Unhealthy => "unhealthy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthScore {
    pub value: f64,
    pub band: Band,
}

/// Band of a score in [1, 10]; lower bounds are closed (9.0 is Healthy, 5.0 Problematic).
pub fn band_of(value: f64) -> Result<Band> {
    if !(SCORE_MIN..=SCORE_MAX).contains(&value) {
        return Err(Error::Domain(format!(
            "health value {value} outside [{SCORE_MIN}, {SCORE_MAX}]"
        )));
    }
    Ok(if value >= HEALTHY_MIN {
        Band::Healthy
    } else if value >= PROBLEMATIC_MIN {
        Band::Problematic
    } else {
        Band::Unhealthy
    })
}

/// `clamp(10 - Σ w_k · penalty_k(v), 1, 10)`.
pub fn composite_score(v: &SubFactorVector, weights: &WeightConfig) -> Result<HealthScore> {
    weights.validate()?;
    let penalty: f64 = SubFactor::ALL
        .iter()
        .map(|&f| {
            let r = weights.ramp(f);
            r.weight * r.penalty(v.get(f))
        })
        .sum();
    let value = (SCORE_MAX - penalty).clamp(SCORE_MIN, SCORE_MAX);
    let value = if value.is_nan() { SCORE_MIN } else { value };
    Ok(HealthScore {
        value,
        band: band_of(value)?,
    })
}
