//! Seeded synthetic input streams of raw `(k, v, q)` projections.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng::{derive, seeded};

/// One token's raw projections.
#[derive(Debug, Clone)]
pub struct Token {
    pub k: Vector,
    pub v: Vector,
    pub q: Vector,
}

/// Input generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamSpec {
    /// Fresh i.i.d. standard normal `k`, `v`, `q` entries every step.
    Gaussian,
    /// `n` fixed Gaussian key/value pairs repeated in order; the query is the key.
    CyclicPairs(usize),
}

impl StreamSpec {
    pub fn generate(&self, d: usize, len: usize, seed: u64) -> Vec<Token> {
        let mut rng = seeded(derive(seed, 0x57_12ea));
        match *self {
            StreamSpec::Gaussian => (0..len)
                .map(|_| Token {
                    k: Vector::gaussian(&mut rng, d),
                    v: Vector::gaussian(&mut rng, d),
                    q: Vector::gaussian(&mut rng, d),
                })
                .collect(),
            StreamSpec::CyclicPairs(n) => {
                let pairs: Vec<(Vector, Vector)> = (0..n.max(1))
                    .map(|_| (Vector::gaussian(&mut rng, d), Vector::gaussian(&mut rng, d)))
                    .collect();
                (0..len)
                    .map(|t| {
                        let (k, v) = &pairs[t % pairs.len()];
                        Token { k: k.clone(), v: v.clone(), q: k.clone() }
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for StreamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamSpec::Gaussian => f.write_str("gaussian"),
            StreamSpec::CyclicPairs(n) => write!(f, "cyclic-pairs:{n}"),
        }
    }
}

impl FromStr for StreamSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "gaussian" {
            return Ok(StreamSpec::Gaussian);
        }
        let n = s
            .strip_prefix("cyclic-pairs")
            .map(|rest| rest.trim_start_matches([':', '(']).trim_end_matches(')'))
            .ok_or_else(|| Error::Config(format!("unknown stream '{s}'")))?;
        let n: usize = n
            .parse()
            .map_err(|_| Error::Config(format!("stream '{s}': pair count must be an integer")))?;
        if n == 0 {
            return Err(Error::Config("cyclic-pairs needs at least one pair".into()));
        }
        Ok(StreamSpec::CyclicPairs(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("gaussian".parse::<StreamSpec>().unwrap(), StreamSpec::Gaussian);
        assert_eq!("cyclic-pairs:8".parse::<StreamSpec>().unwrap(), StreamSpec::CyclicPairs(8));
        assert_eq!("cyclic-pairs(3)".parse::<StreamSpec>().unwrap(), StreamSpec::CyclicPairs(3));
        assert!("cyclic-pairs:0".parse::<StreamSpec>().is_err());
        assert!("uniform".parse::<StreamSpec>().is_err());
        let s = StreamSpec::CyclicPairs(5);
        assert_eq!(s.to_string().parse::<StreamSpec>().unwrap(), s);
    }

    #[test]
    fn deterministic_and_cyclic() {
        let a = StreamSpec::Gaussian.generate(4, 10, 42);
        let b = StreamSpec::Gaussian.generate(4, 10, 42);
        assert!(a.iter().zip(&b).all(|(x, y)| x.k == y.k && x.v == y.v && x.q == y.q));
        let c = StreamSpec::CyclicPairs(3).generate(4, 9, 1);
        assert_eq!(c[0].k, c[3].k);
        assert_eq!(c[2].v, c[8].v);
        assert_eq!(c[1].q, c[1].k);
    }
}
