//! Semantic versions and version constraints.
//!
//! Constraints are a conjunction of comparator clauses. Clauses may be
//! separated by `and`, `&&`, `,` or plain whitespace:
//!
//! ```text
//! ^1.x                       >=1.0.0, <2.0.0
//! ~1.13                      >=1.13.0, <1.14.0
//! 1.12.x                     >=1.12.0, <1.13.0
//! >=1.10.x and <=1.13.0      >=1.10.0, <=1.13.0
//! ```
//!
//! A caret on a wildcard minor (`^1.x`) behaves like `^1.0.0`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VersionError {
    #[error("invalid version `{input}`: {reason}")]
    InvalidVersion { input: String, reason: String },
    #[error("malformed constraint `{input}`: {reason}")]
    MalformedConstraint { input: String, reason: String },
}

/// A concrete `major.minor.patch` version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl Version {
    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Self {
            major,
            minor,
            patch,
        }
    }

    /// Parses a version that may omit trailing components (`1.0` is read as
    /// `1.0.0`). Wildcards are rejected.
    pub fn parse_lenient(s: &str) -> Result<Self, VersionError> {
        let invalid = |reason: String| VersionError::InvalidVersion {
            input: s.to_string(),
            reason,
        };
        if s.contains(['x', 'X', '*']) {
            return Err(invalid("wildcards are not allowed in a concrete version".into()));
        }
        let partial = Partial::parse(s).map_err(invalid)?;
        Ok(partial.lower())
    }
}

impl FromStr for Version {
    type Err = VersionError;

    /// Strict parse: exactly three numeric components.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('.').collect();
        if parts.len() != 3 {
            return Err(VersionError::InvalidVersion {
                input: s.to_string(),
                reason: "expected major.minor.patch".into(),
            });
        }
        let mut nums = [0u64; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = parse_number(part).map_err(|reason| VersionError::InvalidVersion {
                input: s.to_string(),
                reason,
            })?;
        }
        Ok(Version::new(nums[0], nums[1], nums[2]))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn parse_number(part: &str) -> Result<u64, String> {
    if part.is_empty() {
        return Err("empty version component".into());
    }
    if !part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("`{part}` is not a number"));
    }
    if part.len() > 1 && part.starts_with('0') {
        return Err(format!("`{part}` has a leading zero"));
    }
    part.parse::<u64>().map_err(|e| e.to_string())
}

/// A version where trailing components may be missing or wildcards.
/// `None` means "any".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Partial {
    major: Option<u64>,
    minor: Option<u64>,
    patch: Option<u64>,
}

impl Partial {
    fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() {
            return Err("missing version".into());
        }
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() > 3 {
            return Err("too many version components".into());
        }
        let mut out = [None; 3];
        let mut wildcard_seen = false;
        for (i, part) in parts.iter().enumerate() {
            if matches!(*part, "x" | "X" | "*") {
                wildcard_seen = true;
                continue;
            }
            if wildcard_seen {
                return Err("a number cannot follow a wildcard".into());
            }
            out[i] = Some(parse_number(part)?);
        }
        Ok(Partial {
            major: out[0],
            minor: out[1],
            patch: out[2],
        })
    }

    fn lower(&self) -> Version {
        Version::new(
            self.major.unwrap_or(0),
            self.minor.unwrap_or(0),
            self.patch.unwrap_or(0),
        )
    }

    /// Exclusive upper bound of the range this partial denotes, `None` when
    /// unbounded.
    fn upper(&self) -> Option<Version> {
        match (self.major, self.minor, self.patch) {
            (None, _, _) => None,
            (Some(ma), None, _) => Some(Version::new(ma + 1, 0, 0)),
            (Some(ma), Some(mi), None) => Some(Version::new(ma, mi + 1, 0)),
            (Some(ma), Some(mi), Some(pa)) => Some(Version::new(ma, mi, pa + 1)),
        }
    }

    fn is_complete(&self) -> bool {
        self.patch.is_some()
    }
}

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.major, self.minor, self.patch) {
            (None, _, _) => write!(f, "x"),
            (Some(ma), None, _) => write!(f, "{ma}.x"),
            (Some(ma), Some(mi), None) => write!(f, "{ma}.{mi}.x"),
            (Some(ma), Some(mi), Some(pa)) => write!(f, "{ma}.{mi}.{pa}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "=")]
    Exact,
    #[serde(rename = ">=")]
    GreaterEq,
    #[serde(rename = "<=")]
    LessEq,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "^")]
    Caret,
    #[serde(rename = "~")]
    Tilde,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Exact => "=",
            Op::GreaterEq => ">=",
            Op::LessEq => "<=",
            Op::Greater => ">",
            Op::Less => "<",
            Op::Caret => "^",
            Op::Tilde => "~",
        }
    }
}

/// One comparator clause, e.g. `>=1.10.x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Comparator {
    pub op: Op,
    version: Partial,
}

impl Comparator {
    pub fn major(&self) -> Option<u64> {
        self.version.major
    }

    pub fn minor(&self) -> Option<u64> {
        self.version.minor
    }

    pub fn patch(&self) -> Option<u64> {
        self.version.patch
    }

    /// Half-open range `[lower, upper)` accepted by this clause. The upper
    /// bound is `None` when unbounded.
    pub fn range(&self) -> (Version, Option<Version>) {
        let p = &self.version;
        let zero = Version::new(0, 0, 0);
        match self.op {
            Op::Exact => (p.lower(), p.upper()),
            Op::GreaterEq => (p.lower(), None),
            Op::Greater => match p.upper() {
                // `>1.10.x` means past the whole 1.10 line
                Some(up) if !p.is_complete() => (up, None),
                Some(_) => (successor(p.lower()), None),
                // `>x` matches nothing
                None => (zero, Some(zero)),
            },
            Op::Less => (zero, p.major.map(|_| p.lower())),
            Op::LessEq => match p.upper() {
                Some(up) => (zero, Some(up)),
                None => (zero, None),
            },
            Op::Caret => {
                let upper = match (p.major, p.minor, p.patch) {
                    (None, _, _) => None,
                    (Some(ma), _, _) if ma > 0 => Some(Version::new(ma + 1, 0, 0)),
                    (Some(0), None, _) => Some(Version::new(1, 0, 0)),
                    (Some(0), Some(mi), _) if mi > 0 => Some(Version::new(0, mi + 1, 0)),
                    (Some(0), Some(0), None) => Some(Version::new(0, 1, 0)),
                    (Some(0), Some(0), Some(pa)) => Some(Version::new(0, 0, pa + 1)),
                    _ => unreachable!(),
                };
                (p.lower(), upper)
            }
            Op::Tilde => {
                let upper = match (p.major, p.minor) {
                    (None, _) => None,
                    (Some(ma), None) => Some(Version::new(ma + 1, 0, 0)),
                    (Some(ma), Some(mi)) => Some(Version::new(ma, mi + 1, 0)),
                };
                (p.lower(), upper)
            }
        }
    }

    pub fn matches(&self, v: &Version) -> bool {
        let (lower, upper) = self.range();
        *v >= lower && upper.is_none_or(|up| *v < up)
    }
}

fn successor(v: Version) -> Version {
    Version::new(v.major, v.minor, v.patch + 1)
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.op.symbol(), self.version)
    }
}

/// A conjunction of comparator clauses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionConstraint {
    clauses: Vec<Comparator>,
    source: String,
}

impl VersionConstraint {
    pub fn parse(s: &str) -> Result<Self, VersionError> {
        let malformed = |reason: &str| VersionError::MalformedConstraint {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(malformed("empty constraint"));
        }

        let mut clauses = Vec::new();
        let mut pending_op: Option<Op> = None;
        let mut dangling_and = false;
        let normalized = trimmed.replace(',', " ").replace("&&", " ");
        for token in normalized.split_whitespace() {
            if token.eq_ignore_ascii_case("and") {
                if pending_op.is_some() {
                    return Err(malformed("operator without a version"));
                }
                if clauses.is_empty() || dangling_and {
                    return Err(malformed("`and` must join two clauses"));
                }
                dangling_and = true;
                continue;
            }
            let (op, rest) = split_op(token);
            match (op, rest.is_empty()) {
                (Some(op), true) => {
                    if pending_op.replace(op).is_some() {
                        return Err(malformed("two operators in a row"));
                    }
                }
                (op, false) => {
                    let op = match (pending_op.take(), op) {
                        (Some(_), Some(_)) => return Err(malformed("two operators in a row")),
                        (Some(op), None) | (None, Some(op)) => op,
                        (None, None) => Op::Exact,
                    };
                    let version = Partial::parse(rest).map_err(|r| malformed(&r))?;
                    clauses.push(Comparator { op, version });
                    dangling_and = false;
                }
                (None, true) => unreachable!("split_whitespace yields non-empty tokens"),
            }
        }
        if pending_op.is_some() {
            return Err(malformed("operator without a version"));
        }
        if dangling_and {
            return Err(malformed("`and` must join two clauses"));
        }
        if clauses.is_empty() {
            return Err(malformed("no clauses"));
        }
        Ok(Self {
            clauses,
            source: trimmed.to_string(),
        })
    }

    /// Constraint matching any version.
    pub fn any() -> Self {
        Self::parse("*").expect("wildcard constraint parses")
    }

    pub fn clauses(&self) -> &[Comparator] {
        &self.clauses
    }

    /// The text this constraint was parsed from.
    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn satisfies(&self, v: &Version) -> bool {
        self.clauses.iter().all(|c| c.matches(v))
    }

    /// Intersection of all clause ranges as `[lower, upper)`; `None` when the
    /// constraint is unsatisfiable.
    pub fn bounds(&self) -> Option<(Version, Option<Version>)> {
        let mut lower = Version::new(0, 0, 0);
        let mut upper: Option<Version> = None;
        for c in &self.clauses {
            let (lo, up) = c.range();
            lower = lower.max(lo);
            upper = match (upper, up) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
        match upper {
            Some(up) if up.cmp(&lower) != Ordering::Greater => None,
            _ => Some((lower, upper)),
        }
    }
}

fn split_op(token: &str) -> (Option<Op>, &str) {
    for (prefix, op) in [
        (">=", Op::GreaterEq),
        ("<=", Op::LessEq),
        ("==", Op::Exact),
        ("=", Op::Exact),
        (">", Op::Greater),
        ("<", Op::Less),
        ("^", Op::Caret),
        ("~", Op::Tilde),
        ("≥", Op::GreaterEq),
        ("≤", Op::LessEq),
    ] {
        if let Some(rest) = token.strip_prefix(prefix) {
            return (Some(op), rest);
        }
    }
    (None, token)
}

impl Default for VersionConstraint {
    fn default() -> Self {
        Self::any()
    }
}

impl FromStr for VersionConstraint {
    type Err = VersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for VersionConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for VersionConstraint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for VersionConstraint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Version {
        s.parse().unwrap()
    }

    fn c(s: &str) -> VersionConstraint {
        VersionConstraint::parse(s).unwrap()
    }

    #[test]
    fn strict_and_lenient_versions() {
        assert_eq!(v("1.13.0"), Version::new(1, 13, 0));
        assert!("1.0".parse::<Version>().is_err());
        assert!("1.01.0".parse::<Version>().is_err());
        assert!("1.a.0".parse::<Version>().is_err());
        assert_eq!(Version::parse_lenient("1.0").unwrap(), Version::new(1, 0, 0));
        assert_eq!(Version::parse_lenient("2").unwrap(), Version::new(2, 0, 0));
        assert!(Version::parse_lenient("1.x").is_err());
    }

    #[test]
    fn caret_on_wildcard_minor() {
        let caret = c("^1.x");
        assert_eq!(caret.clauses().len(), 1);
        assert_eq!(caret.clauses()[0].op, Op::Caret);
        assert_eq!(caret.clauses()[0].major(), Some(1));
        assert_eq!(caret.clauses()[0].minor(), None);
        assert!(caret.satisfies(&v("1.13.0")));
        assert!(caret.satisfies(&v("1.0.0")));
        assert!(!caret.satisfies(&v("2.0.0")));
        assert!(!caret.satisfies(&v("0.9.9")));
    }

    #[test]
    fn conjunction_of_clauses() {
        let range = c(">=1.10.x and <=1.13.0");
        assert_eq!(range.clauses().len(), 2);
        assert!(range.satisfies(&v("1.12.0")));
        assert!(range.satisfies(&v("1.13.0")));
        assert!(!range.satisfies(&v("1.13.1")));
        assert!(!range.satisfies(&v("1.14.0")));
        assert!(!range.satisfies(&v("1.9.9")));
        assert_eq!(c(">=1.10.x, <=1.13.0").clauses(), range.clauses());
        assert!(c("≥1.10.x and ≤1.13.0").satisfies(&v("1.11.4")));
    }

    #[test]
    fn tilde_and_bare_wildcards() {
        assert_eq!(c("~1.13").bounds(), Some((v("1.13.0"), Some(v("1.14.0")))));
        assert_eq!(c("1.12.x").bounds(), Some((v("1.12.0"), Some(v("1.13.0")))));
        assert_eq!(c("*").bounds(), Some((v("0.0.0"), None)));
        assert_eq!(c("~1.2.3").bounds(), Some((v("1.2.3"), Some(v("1.3.0")))));
    }

    #[test]
    fn caret_zero_major() {
        assert_eq!(c("^0.3.1").bounds(), Some((v("0.3.1"), Some(v("0.4.0")))));
        assert_eq!(c("^0.0.3").bounds(), Some((v("0.0.3"), Some(v("0.0.4")))));
        assert_eq!(c("^0.x").bounds(), Some((v("0.0.0"), Some(v("1.0.0")))));
    }

    #[test]
    fn strict_comparisons_on_partials() {
        assert!(!c(">1.10.x").satisfies(&v("1.10.9")));
        assert!(c(">1.10.x").satisfies(&v("1.11.0")));
        assert!(c(">1.10.0").satisfies(&v("1.10.1")));
        assert!(!c("<1.10.x").satisfies(&v("1.10.0")));
        assert!(c("<=1.10.x").satisfies(&v("1.10.7")));
    }

    #[test]
    fn malformed_constraints() {
        for bad in ["", "   ", ">=", ">= and 1.0.0", "1.x.2", "^", "1..2", "abc", ">=<1.0.0"] {
            assert!(
                matches!(VersionConstraint::parse(bad), Err(VersionError::MalformedConstraint { .. })),
                "{bad:?} should be rejected"
            );
        }
    }

    #[test]
    fn operator_may_be_separated_from_version() {
        assert_eq!(c(">= 1.10.x and <= 1.13.0").clauses(), c(">=1.10.x and <=1.13.0").clauses());
    }

    #[test]
    fn display_preserves_source() {
        assert_eq!(c(" ^1.x ").to_string(), "^1.x");
        assert_eq!(c(">=1.10.x and <=1.13.0").clauses()[0].to_string(), ">=1.10.x");
    }

    #[test]
    fn unsatisfiable_bounds() {
        assert_eq!(c(">=2.0.0 <1.0.0").bounds(), None);
    }
}
