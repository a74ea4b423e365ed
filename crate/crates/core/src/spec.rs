//! Compressor descriptors and their one-line textual grammar:
//!
//! ```text
//! identity | nat | int | sparsify:q=<int>
//! stddither:p=<1|2|inf>,s=<int>
//! natdither:p=<1|2|inf>,s=<int>[,natnorm]
//! compose(<spec>;<spec>;...)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Norm used to normalise a vector before dithering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    L1,
    L2,
    Inf,
}

impl NormKind {
    /// `r = min(p, 2)` as it appears in the dithering bounds.
    pub fn r(self) -> f64 {
        match self {
            NormKind::L1 => 1.0,
            NormKind::L2 | NormKind::Inf => 2.0,
        }
    }

    /// Single-byte wire code: 1, 2 or 255 for infinity.
    pub fn code(self) -> u8 {
        match self {
            NormKind::L1 => 1,
            NormKind::L2 => 2,
            NormKind::Inf => 255,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(NormKind::L1),
            2 => Ok(NormKind::L2),
            255 => Ok(NormKind::Inf),
            other => Err(Error::Config(format!("unsupported norm code {other}"))),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::L1 => write!(f, "1"),
            NormKind::L2 => write!(f, "2"),
            NormKind::Inf => write!(f, "inf"),
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(NormKind::L1),
            "2" => Ok(NormKind::L2),
            "inf" | "∞" => Ok(NormKind::Inf),
            other => Err(Error::Config(format!(
                "norm must be one of 1, 2, inf (got {other:?})"
            ))),
        }
    }
}

/// How the norm travels with a dithered vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    Exact,
    NatCompressed,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CompressorSpec {
    Identity,
    Nat,
    IntRound,
    StdDither {
        p: NormKind,
        s: u32,
    },
    NatDither {
        p: NormKind,
        s: u32,
        norm: NormMode,
    },
    Sparsify {
        q: usize,
    },
    /// Applied right to left: `Compose([a, b])(x) = a(b(x))`.
    Compose(Vec<CompressorSpec>),
}

impl CompressorSpec {
    /// Checks structural invariants and compatibility with dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            CompressorSpec::StdDither { s, .. } | CompressorSpec::NatDither { s, .. } => {
                if *s == 0 || *s > 255 {
                    return Err(Error::Config(format!("dither levels s={s} outside 1..=255")));
                }
            }
            CompressorSpec::Sparsify { q } => {
                if *q == 0 || *q > d {
                    return Err(Error::Config(format!(
                        "sparsify q={q} must satisfy 1 <= q <= d={d}"
                    )));
                }
            }
            CompressorSpec::Compose(chain) => {
                if chain.is_empty() {
                    return Err(Error::Config("empty compose chain".into()));
                }
                for c in chain {
                    c.validate(d)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// True if every output coordinate is guaranteed to be zero or ± a power of two.
    pub fn emits_powers_of_two(&self) -> bool {
        match self {
            CompressorSpec::Nat => true,
            CompressorSpec::NatDither {
                norm: NormMode::NatCompressed,
                ..
            } => true,
            CompressorSpec::Compose(chain) => chain.first().is_some_and(|c| c.emits_powers_of_two()),
            _ => false,
        }
    }
}

impl fmt::Display for CompressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressorSpec::Identity => write!(f, "identity"),
            CompressorSpec::Nat => write!(f, "nat"),
            CompressorSpec::IntRound => write!(f, "int"),
            CompressorSpec::StdDither { p, s } => write!(f, "stddither:p={p},s={s}"),
            CompressorSpec::NatDither { p, s, norm } => {
                write!(f, "natdither:p={p},s={s}")?;
                if *norm == NormMode::NatCompressed {
                    write!(f, ",natnorm")?;
                }
                Ok(())
            }
            CompressorSpec::Sparsify { q } => write!(f, "sparsify:q={q}"),
            CompressorSpec::Compose(chain) => {
                write!(f, "compose(")?;
                for (i, c) in chain.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn parse_params(body: &str) -> Result<Vec<(&str, Option<&str>)>> {
    body.split(',')
        .map(|kv| {
            let kv = kv.trim();
            if kv.is_empty() {
                return Err(Error::Config("empty parameter".into()));
            }
            Ok(match kv.split_once('=') {
                Some((k, v)) => (k.trim(), Some(v.trim())),
                None => (kv, None),
            })
        })
        .collect()
}

fn parse_uint<T: FromStr>(key: &str, v: Option<&str>) -> Result<T> {
    v.and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("parameter {key} needs an integer value")))
}

fn parse_dither(body: &str, natural: bool) -> Result<CompressorSpec> {
    let mut p = None;
    let mut s = None;
    let mut norm = NormMode::Exact;
    for (k, v) in parse_params(body)? {
        match (k, v) {
            ("p", Some(v)) => p = Some(v.parse::<NormKind>()?),
            ("s", v) => s = Some(parse_uint::<u32>("s", v)?),
            ("natnorm", None) if natural => norm = NormMode::NatCompressed,
            _ => return Err(Error::Config(format!("unknown dither parameter {k:?}"))),
        }
    }
    let p = p.ok_or_else(|| Error::Config("dither needs p=".into()))?;
    let s = s.ok_or_else(|| Error::Config("dither needs s=".into()))?;
    if s == 0 {
        return Err(Error::Config("dither needs s >= 1".into()));
    }
    Ok(if natural {
        CompressorSpec::NatDither { p, s, norm }
    } else {
        CompressorSpec::StdDither { p, s }
    })
}

/// Splits on `;` at nesting depth zero.
fn split_top_level(body: &str) -> Result<Vec<&str>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in body.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ';' if depth == 0 => {
                parts.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::Config("unbalanced parentheses".into()));
        }
    }
    if depth != 0 {
        return Err(Error::Config("unbalanced parentheses".into()));
    }
    parts.push(&body[start..]);
    Ok(parts)
}

impl FromStr for CompressorSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some(body) = text.strip_prefix("compose(") {
            let body = body
                .strip_suffix(')')
                .ok_or_else(|| Error::Config(format!("unterminated compose in {text:?}")))?;
            let chain = split_top_level(body)?
                .into_iter()
                .map(str::parse)
                .collect::<Result<Vec<_>>>()?;
            if chain.is_empty() {
                return Err(Error::Config("empty compose chain".into()));
            }
            return Ok(CompressorSpec::Compose(chain));
        }
        let (head, body) = match text.split_once(':') {
            Some((h, b)) => (h, Some(b)),
            None => (text, None),
        };
        match (head, body) {
            ("identity", None) => Ok(CompressorSpec::Identity),
            ("nat", None) => Ok(CompressorSpec::Nat),
            ("int", None) => Ok(CompressorSpec::IntRound),
            ("sparsify", Some(b)) => {
                let params = parse_params(b)?;
                match params.as_slice() {
                    [("q", v)] => {
                        let q: usize = parse_uint("q", *v)?;
                        if q == 0 {
                            return Err(Error::Config("sparsify needs q >= 1".into()));
                        }
                        Ok(CompressorSpec::Sparsify { q })
                    }
                    _ => Err(Error::Config(format!("sparsify expects q=<int>, got {b:?}"))),
                }
            }
            ("stddither", Some(b)) => parse_dither(b, false),
            ("natdither", Some(b)) => parse_dither(b, true),
            _ => Err(Error::Config(format!("unknown compressor spec {text:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_every_form() {
        assert_eq!("nat".parse::<CompressorSpec>().unwrap(), CompressorSpec::Nat);
        assert_eq!("int".parse::<CompressorSpec>().unwrap(), CompressorSpec::IntRound);
        assert_eq!(
            "sparsify:q=10".parse::<CompressorSpec>().unwrap(),
            CompressorSpec::Sparsify { q: 10 }
        );
        assert_eq!(
            "natdither:p=inf,s=3,natnorm".parse::<CompressorSpec>().unwrap(),
            CompressorSpec::NatDither {
                p: NormKind::Inf,
                s: 3,
                norm: NormMode::NatCompressed
            }
        );
        assert_eq!(
            "compose(nat;compose(sparsify:q=2;identity))"
                .parse::<CompressorSpec>()
                .unwrap(),
            CompressorSpec::Compose(vec![
                CompressorSpec::Nat,
                CompressorSpec::Compose(vec![
                    CompressorSpec::Sparsify { q: 2 },
                    CompressorSpec::Identity
                ])
            ])
        );
    }

    #[test]
    fn rejects_garbage() {
        for bad in [
            "",
            "natt",
            "sparsify",
            "sparsify:q=0",
            "stddither:p=3,s=2",
            "stddither:p=2,s=0",
            "stddither:p=2,s=2,natnorm",
            "compose()",
            "compose(nat",
        ] {
            assert!(bad.parse::<CompressorSpec>().is_err(), "{bad:?} parsed");
        }
    }

    #[test]
    fn validate_checks_dimension() {
        assert!(CompressorSpec::Sparsify { q: 5 }.validate(4).is_err());
        assert!(CompressorSpec::Sparsify { q: 4 }.validate(4).is_ok());
        assert!(CompressorSpec::Compose(vec![]).validate(4).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = CompressorSpec> {
        let norm = prop_oneof![Just(NormKind::L1), Just(NormKind::L2), Just(NormKind::Inf)];
        let leaf = prop_oneof![
            Just(CompressorSpec::Identity),
            Just(CompressorSpec::Nat),
            Just(CompressorSpec::IntRound),
            (1usize..1000).prop_map(|q| CompressorSpec::Sparsify { q }),
            (norm.clone(), 1u32..64).prop_map(|(p, s)| CompressorSpec::StdDither { p, s }),
            (norm, 1u32..64, any::<bool>()).prop_map(|(p, s, c)| CompressorSpec::NatDither {
                p,
                s,
                norm: if c { NormMode::NatCompressed } else { NormMode::Exact }
            }),
        ];
        leaf.prop_recursive(3, 12, 4, |inner| {
            prop::collection::vec(inner, 1..4).prop_map(CompressorSpec::Compose)
        })
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(spec in arb_spec()) {
            let text = spec.to_string();
            prop_assert_eq!(text.parse::<CompressorSpec>().unwrap(), spec);
        }
    }
}
