use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A binary configuration `x ∈ {0,1}^N`, ordered lexicographically.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Bitstring(Vec<u8>);

impl Bitstring {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("bits must be 0 or 1".into()));
        }
        Ok(Bitstring(bits))
    }

    pub fn zeros(n: usize) -> Self {
        Bitstring(vec![0; n])
    }

    /// The `n` low bits of `value`, most significant first.
    pub fn from_index(value: u64, n: usize) -> Self {
        Bitstring((0..n).map(|i| ((value >> (n - 1 - i)) & 1) as u8).collect())
    }

    pub fn to_index(&self) -> u64 {
        self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, bit: u8) {
        self.0[i] = bit & 1;
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl FromStr for Bitstring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidArgument(format!("unexpected character {other:?} in bitstring"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Bitstring)
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bitstring({self})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_index_round_trip() {
        let b: Bitstring = "01011001".parse().unwrap();
        assert_eq!(b.to_string(), "01011001");
        assert_eq!(Bitstring::from_index(b.to_index(), 8), b);
        assert_eq!(b.weight(), 4);
        assert!("01x".parse::<Bitstring>().is_err());
    }
}
