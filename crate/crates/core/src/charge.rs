//! Abelian U(1)^m charges and charged tensor legs.
//!
//! A [`Charge`] is an integer vector with one entry per equality constraint.
//! The empty vector (`m = 0`) is the trivial symmetry used by vanilla models;
//! every leg then carries a single sector whose degeneracy is the full
//! dimension of the leg.

use std::fmt;

use crate::constraints::ConstraintSystem;
use crate::error::{Error, Result};

/// Integer charge vector. Ordered lexicographically.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Charge(Vec<i64>);

impl Charge {
    pub fn new(entries: Vec<i64>) -> Self {
        Charge(entries)
    }

    /// The zero charge of length `m`.
    pub fn zero(m: usize) -> Self {
        Charge(vec![0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn entries(&self) -> &[i64] {
        &self.0
    }

    /// Componentwise sum with overflow checking.
    pub fn fuse(&self, other: &Charge) -> Result<Charge> {
        if self.0.len() != other.0.len() {
            return Err(Error::ChargeLength { left: self.0.len(), right: other.0.len() });
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a.checked_add(b).ok_or(Error::ChargeOverflow))
            .collect::<Result<Vec<_>>>()
            .map(Charge)
    }

    pub fn neg(&self) -> Charge {
        Charge(self.0.iter().map(|&c| -c).collect())
    }

    pub fn sub(&self, other: &Charge) -> Result<Charge> {
        self.fuse(&other.neg())
    }

    /// `self + k * other`, used for bit-weighted column sums.
    pub fn add_scaled(&self, k: i64, other: &Charge) -> Result<Charge> {
        if self.0.len() != other.0.len() {
            return Err(Error::ChargeLength { left: self.0.len(), right: other.0.len() });
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                k.checked_mul(b).and_then(|kb| a.checked_add(kb)).ok_or(Error::ChargeOverflow)
            })
            .collect::<Result<Vec<_>>>()
            .map(Charge)
    }
}

impl fmt::Debug for Charge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Charge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "∅");
        }
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

impl From<Vec<i64>> for Charge {
    fn from(v: Vec<i64>) -> Self {
        Charge(v)
    }
}

/// Whether charge flows into or out of a tensor through a leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::In => Direction::Out,
            Direction::Out => Direction::In,
        }
    }
}

/// One charge sector of a leg.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sector {
    pub charge: Charge,
    pub degeneracy: usize,
}

/// A tensor leg decomposed into charge sectors, sorted by charge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChargedIndex {
    sectors: Vec<Sector>,
    offsets: Vec<usize>,
    direction: Direction,
}

impl ChargedIndex {
    /// Builds an index from `(charge, degeneracy)` pairs. Sectors are sorted by
    /// charge; duplicate charges, zero degeneracies and mixed charge lengths are
    /// rejected.
    pub fn new(sectors: impl IntoIterator<Item = (Charge, usize)>, direction: Direction) -> Result<Self> {
        let mut sectors: Vec<Sector> =
            sectors.into_iter().map(|(charge, degeneracy)| Sector { charge, degeneracy }).collect();
        if sectors.is_empty() {
            return Err(Error::InvalidIndex("index has no sectors".into()));
        }
        sectors.sort_by(|a, b| a.charge.cmp(&b.charge));
        let m = sectors[0].charge.len();
        for w in sectors.windows(2) {
            if w[0].charge == w[1].charge {
                return Err(Error::InvalidIndex(format!("duplicate sector charge {}", w[0].charge)));
            }
        }
        for s in &sectors {
            if s.degeneracy == 0 {
                return Err(Error::InvalidIndex(format!("sector {} has zero degeneracy", s.charge)));
            }
            if s.charge.len() != m {
                return Err(Error::ChargeLength { left: m, right: s.charge.len() });
            }
        }
        let mut offsets = Vec::with_capacity(sectors.len());
        let mut acc = 0;
        for s in &sectors {
            offsets.push(acc);
            acc += s.degeneracy;
        }
        Ok(ChargedIndex { sectors, offsets, direction })
    }

    /// A dimension-1 leg carrying a single charge.
    pub fn trivial(charge: Charge, direction: Direction) -> Self {
        ChargedIndex {
            sectors: vec![Sector { charge, degeneracy: 1 }],
            offsets: vec![0],
            direction,
        }
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    pub fn sector(&self, i: usize) -> &Sector {
        &self.sectors[i]
    }

    pub fn num_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn charge_len(&self) -> usize {
        self.sectors[0].charge.len()
    }

    /// Total dimension (sum of degeneracies).
    pub fn dim(&self) -> usize {
        self.sectors.iter().map(|s| s.degeneracy).sum()
    }

    /// Offset of sector `i` within the dense leg.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn degeneracy(&self, i: usize) -> usize {
        self.sectors[i].degeneracy
    }

    /// Position of the sector carrying `charge`, by binary search.
    pub fn find(&self, charge: &Charge) -> Option<usize> {
        self.sectors.binary_search_by(|s| s.charge.cmp(charge)).ok()
    }

    /// Same sectors, opposite direction.
    pub fn dual(&self) -> Self {
        ChargedIndex { direction: self.direction.flip(), ..self.clone() }
    }

    pub fn with_direction(&self, direction: Direction) -> Self {
        ChargedIndex { direction, ..self.clone() }
    }

    /// Whether two legs have identical sector tables (charges and degeneracies).
    pub fn same_sectors(&self, other: &ChargedIndex) -> bool {
        self.sectors == other.sectors
    }

    /// Charge contribution of sector `i` to the conservation law
    /// `flux + Σ incoming = Σ outgoing`, expressed as `Σ outgoing − Σ incoming`.
    pub(crate) fn signed_charge(&self, i: usize) -> Charge {
        match self.direction {
            Direction::Out => self.sectors[i].charge.clone(),
            Direction::In => self.sectors[i].charge.neg(),
        }
    }
}

/// Charges carried by bit values 0 and 1 at site `i` (0-based): the zero
/// charge and column `i` of `A`.
pub fn site_charges(cs: &ConstraintSystem, i: usize) -> Result<(Charge, Charge)> {
    let col = cs.column(i)?;
    Ok((Charge::zero(col.len()), col))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ch(v: &[i64]) -> Charge {
        Charge::new(v.to_vec())
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(ch(&[1]).fuse(&ch(&[2])).unwrap(), ch(&[3]));
        assert_eq!(ch(&[2, -1]).fuse(&ch(&[-2, 1])).unwrap(), ch(&[0, 0]));
        assert!(ch(&[1]).fuse(&ch(&[1, 2])).is_err());
    }

    #[test]
    fn site_charges_read_columns() {
        let card = ConstraintSystem::cardinality(6, 3).unwrap();
        assert_eq!(site_charges(&card, 1).unwrap(), (ch(&[0]), ch(&[1])));
        let zero = ConstraintSystem::new(vec![vec![0, 0]], vec![0]).unwrap();
        let (c0, c1) = site_charges(&zero, 0).unwrap();
        assert_eq!(c0, c1);
        let (idx, map) = crate::mps::physical_index(&c0, &c1).unwrap();
        assert_eq!((idx.num_sectors(), idx.dim()), (1, 2));
        assert_eq!(map, [(0, 0), (0, 1)]);
        let two = ConstraintSystem::new(vec![vec![2, -1], vec![0, 3]], vec![0, 0]).unwrap();
        assert_eq!(site_charges(&two, 0).unwrap(), (ch(&[0, 0]), ch(&[2, 0])));
        assert!(site_charges(&two, 2).is_err());
    }

    #[test]
    fn fuse_overflow_is_checked() {
        assert!(matches!(ch(&[i64::MAX]).fuse(&ch(&[1])), Err(Error::ChargeOverflow)));
    }

    #[test]
    fn index_rejects_duplicates_and_zero_degeneracy() {
        assert!(ChargedIndex::new([(ch(&[1]), 1), (ch(&[1]), 2)], Direction::In).is_err());
        assert!(ChargedIndex::new([(ch(&[1]), 0)], Direction::In).is_err());
        assert!(ChargedIndex::new(Vec::<(Charge, usize)>::new(), Direction::In).is_err());
    }

    #[test]
    fn display_zero_as_empty_charge() {
        assert_eq!(ch(&[0, 0]).to_string(), "∅");
        assert_eq!(ch(&[2, -1]).to_string(), "[2,-1]");
    }

    fn charge_strategy(m: usize) -> impl Strategy<Value = Charge> {
        proptest::collection::vec(-1000i64..1000, m).prop_map(Charge::new)
    }

    proptest! {
        #[test]
        fn fuse_is_an_abelian_group(a in charge_strategy(3), b in charge_strategy(3), c in charge_strategy(3)) {
            let ab_c = a.fuse(&b).unwrap().fuse(&c).unwrap();
            let a_bc = a.fuse(&b.fuse(&c).unwrap()).unwrap();
            prop_assert_eq!(&ab_c, &a_bc);
            prop_assert_eq!(a.fuse(&b).unwrap(), b.fuse(&a).unwrap());
            let zero = Charge::zero(3);
            prop_assert_eq!(&zero.fuse(&a).unwrap(), &a);
            prop_assert_eq!(&a.fuse(&zero).unwrap(), &a);
            prop_assert!(a.fuse(&a.neg()).unwrap().is_zero());
        }

        #[test]
        fn sector_lookup_is_exact(entries in proptest::collection::btree_map(
            proptest::collection::vec(-20i64..20, 2), 1usize..6, 1..30)) {
            let idx = ChargedIndex::new(
                entries.iter().map(|(c, &d)| (Charge::new(c.clone()), d)),
                Direction::Out,
            ).unwrap();
            for (c, &d) in &entries {
                let pos = idx.find(&Charge::new(c.clone())).unwrap();
                prop_assert_eq!(idx.degeneracy(pos), d);
            }
            prop_assert_eq!(idx.dim(), entries.values().sum::<usize>());
        }
    }
}
