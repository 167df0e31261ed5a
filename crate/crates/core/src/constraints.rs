//! Integer equality systems `A·x = b` over binary variables and seed sets.

use std::collections::HashSet;

use crate::bitstring::Bitstring;
use crate::charge::Charge;
use crate::error::{Error, Result};

/// The matrix `A` (`m × N`) and right-hand side `b` of `A·x = b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSystem {
    rows: Vec<Vec<i64>>,
    rhs: Vec<i64>,
    num_sites: usize,
}

impl ConstraintSystem {
    pub fn new(rows: Vec<Vec<i64>>, rhs: Vec<i64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("constraint system needs at least one row".into()));
        }
        if rows.len() != rhs.len() {
            return Err(Error::InvalidArgument(format!("{} rows but {} right-hand sides", rows.len(), rhs.len())));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::InvalidArgument("constraint rows must be nonempty".into()));
        }
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != n) {
            return Err(Error::InvalidArgument(format!("row {r} has length {}, expected {n}", row.len())));
        }
        Ok(ConstraintSystem { rows, rhs, num_sites: n })
    }

    /// No constraints at all (`m = 0`); the vanilla, unsymmetric setting.
    pub fn unconstrained(num_sites: usize) -> Result<Self> {
        if num_sites == 0 {
            return Err(Error::InvalidArgument("need at least one site".into()));
        }
        Ok(ConstraintSystem { rows: Vec::new(), rhs: Vec::new(), num_sites })
    }

    /// `Σ_i x_i = κ`.
    pub fn cardinality(n: usize, kappa: usize) -> Result<Self> {
        ConstraintSystem::new(vec![vec![1; n]], vec![kappa as i64])
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[i64] {
        &self.rhs
    }

    pub fn flux(&self) -> Charge {
        Charge::new(self.rhs.clone())
    }

    /// Column `i` of `A` as a charge.
    pub fn column(&self, i: usize) -> Result<Charge> {
        if i >= self.num_sites {
            return Err(Error::OutOfRange { index: i, len: self.num_sites });
        }
        Ok(Charge::new(self.rows.iter().map(|r| r[i]).collect()))
    }

    /// `A·x` with overflow checking.
    pub fn evaluate(&self, x: &Bitstring) -> Result<Vec<i64>> {
        if x.len() != self.num_sites {
            return Err(Error::BitstringLength { expected: self.num_sites, got: x.len() });
        }
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x.bits())
                    .filter(|(_, &b)| b == 1)
                    .try_fold(0i64, |acc, (&a, _)| acc.checked_add(a))
                    .ok_or(Error::ChargeOverflow)
            })
            .collect()
    }

    /// Validates `x`, naming the first violated row.
    pub fn check(&self, x: &Bitstring) -> Result<()> {
        let lhs = self.evaluate(x)?;
        for (row, (&l, &r)) in lhs.iter().zip(&self.rhs).enumerate() {
            if l != r {
                return Err(Error::InvalidSeed { bits: x.to_string(), row, lhs: l, rhs: r });
            }
        }
        Ok(())
    }

    pub fn is_satisfied(&self, x: &Bitstring) -> bool {
        self.check(x).is_ok()
    }
}

/// Deduplicated, validated training seeds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeedSet {
    bitstrings: Vec<Bitstring>,
}

impl SeedSet {
    /// Keeps the first occurrence of each bitstring; every seed must satisfy
    /// the constraints.
    pub fn new(cs: &ConstraintSystem, seeds: impl IntoIterator<Item = Bitstring>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut bitstrings = Vec::new();
        for x in seeds {
            cs.check(&x)?;
            if seen.insert(x.clone()) {
                bitstrings.push(x);
            }
        }
        Ok(SeedSet { bitstrings })
    }

    pub fn bitstrings(&self) -> &[Bitstring] {
        &self.bitstrings
    }

    pub fn len(&self) -> usize {
        self.bitstrings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bitstrings.is_empty()
    }

    pub fn contains(&self, x: &Bitstring) -> bool {
        self.bitstrings.contains(x)
    }

    /// Appends new valid seeds, skipping duplicates.
    pub fn extend(&mut self, cs: &ConstraintSystem, more: impl IntoIterator<Item = Bitstring>) -> Result<()> {
        let mut seen: HashSet<Bitstring> = self.bitstrings.iter().cloned().collect();
        for x in more {
            cs.check(&x)?;
            if seen.insert(x.clone()) {
                self.bitstrings.push(x);
            }
        }
        Ok(())
    }
}
