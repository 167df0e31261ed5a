//! Building symmetric MPS from constraints and seed bitstrings.
//!
//! Construction goes through a [`Skeleton`]: for every link the set of
//! allowed prefix charges `P_i = Σ_{j≤i} x_j A_j`, and for every site the set
//! of allowed `(P_{i-1}, x_i)` transitions. A skeleton becomes an MPS with
//! degeneracy-1 blocks all set to the same value, with the flux `b` and the
//! canonical centre on the last site.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{ArrayD, Axis, IxDyn, Slice};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bitstring::Bitstring;
use crate::block::BlockTensor;
use crate::charge::{site_charges, Charge, ChargedIndex, Direction};
use crate::constraints::{ConstraintSystem, SeedSet};
use crate::error::{Error, Result};
use crate::mps::{physical_index, skeleton_tensor, SymMps};

/// Prefix charges after each site of `x`: `n_{i,R} = Σ_{j≤i} x_j A_j` for
/// `i = 1..N−1`. The full sum must equal `b`.
pub fn link_charges_for_bitstring(cs: &ConstraintSystem, x: &Bitstring) -> Result<Vec<Charge>> {
    let prefix = prefix_charges(cs, x)?;
    let total = prefix.last().unwrap();
    if total != &cs.flux() {
        cs.check(x)?;
    }
    Ok(prefix[1..prefix.len() - 1].to_vec())
}

/// `P_0 = ∅, P_1, …, P_N`.
fn prefix_charges(cs: &ConstraintSystem, x: &Bitstring) -> Result<Vec<Charge>> {
    if x.len() != cs.num_sites() {
        return Err(Error::BitstringLength { expected: cs.num_sites(), got: x.len() });
    }
    let mut acc = Charge::zero(cs.num_rows());
    let mut out = Vec::with_capacity(x.len() + 1);
    out.push(acc.clone());
    for i in 0..x.len() {
        if x.get(i) == 1 {
            acc = acc.fuse(&cs.column(i)?)?;
        }
        out.push(acc.clone());
    }
    Ok(out)
}

/// Charge structure of a symmetric MPS before any numbers are attached.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skeleton {
    columns: Vec<Charge>,
    flux: Charge,
    /// Allowed prefix charges on links `0..=N`.
    links: Vec<BTreeSet<Charge>>,
    /// Allowed `(P_{i-1}, bit)` per site.
    transitions: Vec<BTreeSet<(Charge, u8)>>,
}

impl Skeleton {
    fn empty(cs: &ConstraintSystem) -> Result<Self> {
        let n = cs.num_sites();
        let columns = (0..n).map(|i| cs.column(i)).collect::<Result<Vec<_>>>()?;
        Ok(Skeleton {
            columns,
            flux: cs.flux(),
            links: vec![BTreeSet::new(); n + 1],
            transitions: vec![BTreeSet::new(); n],
        })
    }

    pub fn num_sites(&self) -> usize {
        self.columns.len()
    }

    pub fn link_charges(&self, link: usize) -> &BTreeSet<Charge> {
        &self.links[link]
    }

    /// Number of charges on each internal link (`N − 1` entries).
    pub fn link_dims(&self) -> Vec<usize> {
        self.links[1..self.num_sites()].iter().map(|l| l.len()).collect()
    }

    fn next_charge(&self, site: usize, p: &Charge, bit: u8) -> Result<Charge> {
        if bit == 1 {
            p.fuse(&self.columns[site])
        } else {
            Ok(p.clone())
        }
    }

    /// Exactly the transitions traversed by the seeds.
    pub fn from_paths<'a>(cs: &ConstraintSystem, seeds: impl IntoIterator<Item = &'a Bitstring>) -> Result<Self> {
        let mut sk = Skeleton::empty(cs)?;
        for x in seeds {
            cs.check(x)?;
            let prefix = prefix_charges(cs, x)?;
            for (i, p) in prefix.iter().enumerate() {
                sk.links[i].insert(p.clone());
            }
            for i in 0..x.len() {
                sk.transitions[i].insert((prefix[i].clone(), x.get(i)));
            }
        }
        Ok(sk)
    }

    /// Every transition between the given link charge sets that is consistent
    /// with `P_i = P_{i-1} + x_i A_i`, with dead ends removed.
    pub fn from_link_sets(cs: &ConstraintSystem, mut links: Vec<BTreeSet<Charge>>) -> Result<Self> {
        let n = cs.num_sites();
        if links.len() != n + 1 {
            return Err(Error::InvalidArgument(format!("expected {} link sets, got {}", n + 1, links.len())));
        }
        links[0] = BTreeSet::from([Charge::zero(cs.num_rows())]);
        links[n] = BTreeSet::from([cs.flux()]);
        let mut sk = Skeleton::empty(cs)?;
        for i in 0..n {
            for p in &links[i] {
                for bit in 0..2u8 {
                    let q = sk.next_charge(i, p, bit)?;
                    if links[i + 1].contains(&q) {
                        sk.transitions[i].insert((p.clone(), bit));
                    }
                }
            }
        }
        sk.links = links;
        sk.prune()?;
        Ok(sk)
    }

    /// Removes transitions and link charges that are not on any complete
    /// path from `∅` to `b`.
    fn prune(&mut self) -> Result<()> {
        let n = self.num_sites();
        let mut forward: Vec<BTreeSet<Charge>> = vec![BTreeSet::new(); n + 1];
        forward[0].insert(Charge::zero(self.flux.len()));
        for i in 0..n {
            for (p, bit) in &self.transitions[i] {
                if forward[i].contains(p) {
                    forward[i + 1].insert(self.next_charge(i, p, *bit)?);
                }
            }
        }
        let mut backward: Vec<BTreeSet<Charge>> = vec![BTreeSet::new(); n + 1];
        backward[n].insert(self.flux.clone());
        for i in (0..n).rev() {
            for (p, bit) in &self.transitions[i] {
                if backward[i + 1].contains(&self.next_charge(i, p, *bit)?) {
                    backward[i].insert(p.clone());
                }
            }
        }
        for i in 0..=n {
            self.links[i] = forward[i].intersection(&backward[i]).cloned().collect();
        }
        for i in 0..n {
            let mut kept = BTreeSet::new();
            for (p, bit) in &self.transitions[i] {
                if self.links[i].contains(p) && self.links[i + 1].contains(&self.next_charge(i, p, *bit)?) {
                    kept.insert((p.clone(), *bit));
                }
            }
            self.transitions[i] = kept;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.iter().any(|t| t.is_empty())
    }

    /// Number of complete paths (bitstrings) through the skeleton.
    pub fn count_paths(&self) -> Result<u128> {
        let mut counts: HashMap<Charge, u128> = HashMap::from([(Charge::zero(self.flux.len()), 1)]);
        for i in 0..self.num_sites() {
            let mut next: HashMap<Charge, u128> = HashMap::new();
            for (p, bit) in &self.transitions[i] {
                if let Some(&c) = counts.get(p) {
                    let e = next.entry(self.next_charge(i, p, *bit)?).or_default();
                    *e = e.saturating_add(c);
                }
            }
            counts = next;
        }
        Ok(counts.get(&self.flux).copied().unwrap_or(0))
    }

    /// Degeneracy-1 MPS with every allowed block equal, canonical with the
    /// centre and flux on the last site, normalised to Z = 1.
    pub fn to_mps(&self) -> Result<SymMps> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("skeleton supports no bitstring".into()));
        }
        let n = self.num_sites();
        let m = self.flux.len();
        // Links left of the centre carry minus the prefix charge.
        let link_index = |i: usize, dir: Direction| -> Result<ChargedIndex> {
            if i == 0 || i == n {
                return Ok(ChargedIndex::trivial(Charge::zero(m), dir));
            }
            ChargedIndex::new(self.links[i].iter().map(|p| (p.neg(), 1)), dir)
        };
        let mut tensors = Vec::with_capacity(n);
        let mut charges = Vec::with_capacity(n);
        for i in 0..n {
            let zero = Charge::zero(m);
            let (phys, map) = physical_index(&zero, &self.columns[i])?;
            let left = link_index(i, Direction::In)?;
            let right = link_index(i + 1, Direction::Out)?;
            let flux = if i == n - 1 { self.flux.clone() } else { Charge::zero(m) };
            let mut entries = Vec::new();
            for (p, bit) in &self.transitions[i] {
                let q = self.next_charge(i, p, *bit)?;
                let sl = left.find(&p.neg()).expect("transition source on link");
                let sr = if i == n - 1 { 0 } else { right.find(&q.neg()).expect("transition target on link") };
                entries.push((sl, *bit as usize, sr, 1.0));
            }
            tensors.push(skeleton_tensor(&left, &phys, &map, &right, flux, &entries)?);
            charges.push([zero, self.columns[i].clone()]);
        }
        let mut mps = SymMps::from_tensors(tensors, charges, n - 1)?;
        mps.canonicalize()?;
        mps.normalize()?;
        Ok(mps)
    }

    /// Charge structure of an existing MPS, read back as prefix charges.
    pub fn from_mps(mps: &SymMps) -> Result<Self> {
        let n = mps.num_sites();
        let m = mps.charge_len();
        let flux = mps.flux().clone();
        let columns: Vec<Charge> = mps.site_charges().iter().map(|c| c[1].clone()).collect();
        let center = mps.center();
        // Link i is the left leg of site i.
        let prefix_of = |link: usize, stored: &Charge| -> Result<Charge> {
            if link == 0 {
                Ok(Charge::zero(m))
            } else if link == n {
                Ok(flux.clone())
            } else if link <= center {
                Ok(stored.neg())
            } else {
                flux.sub(stored)
            }
        };
        let mut sk = Skeleton {
            columns,
            flux: flux.clone(),
            links: vec![BTreeSet::new(); n + 1],
            transitions: vec![BTreeSet::new(); n],
        };
        for i in 0..n {
            let t = mps.tensor(i);
            let map = mps.site_map(i);
            for (key, _) in t.blocks() {
                let p = prefix_of(i, &t.index(0).sector(key[0]).charge)?;
                for bit in 0..2u8 {
                    if map[bit as usize].0 == key[1] {
                        sk.transitions[i].insert((p.clone(), bit));
                    }
                }
                sk.links[i].insert(p);
            }
        }
        sk.links[n].insert(flux);
        sk.prune()?;
        Ok(sk)
    }

    /// Greedy path cover: repeatedly picks the path through the skeleton that
    /// visits the most not-yet-covered link charges, until all are covered.
    pub fn greedy_cover_paths(&self) -> Result<Vec<Bitstring>> {
        let n = self.num_sites();
        let mut covered: Vec<BTreeSet<Charge>> = vec![BTreeSet::new(); n + 1];
        let mut out = Vec::new();
        loop {
            let uncovered: usize = (1..n).map(|i| self.links[i].len() - covered[i].len()).sum();
            if uncovered == 0 && !out.is_empty() {
                return Ok(out);
            }
            // Best remaining gain from each charge on link i to the end.
            let mut best: Vec<BTreeMap<Charge, (usize, Option<u8>)>> = vec![BTreeMap::new(); n + 1];
            best[n].insert(self.flux.clone(), (0, None));
            for i in (0..n).rev() {
                for (p, bit) in &self.transitions[i] {
                    let q = self.next_charge(i, p, *bit)?;
                    let Some(&(g, _)) = best[i + 1].get(&q) else { continue };
                    let gain = g + usize::from(i + 1 < n && !covered[i + 1].contains(&q));
                    let e = best[i].entry(p.clone()).or_insert((0, None));
                    if e.1.is_none() || gain > e.0 {
                        *e = (gain, Some(*bit));
                    }
                }
            }
            let mut p = Charge::zero(self.flux.len());
            let mut bits = Vec::with_capacity(n);
            for i in 0..n {
                let bit = best[i][&p].1.expect("skeleton path exists");
                bits.push(bit);
                p = self.next_charge(i, &p, bit)?;
                covered[i + 1].insert(p.clone());
            }
            let x = Bitstring::new(bits)?;
            if out.contains(&x) {
                return Err(Error::Numerical("greedy cover stalled".into()));
            }
            out.push(x);
        }
    }
}

/// Method 1: only the charge transitions observed along the seed paths.
pub fn embed_method1(cs: &ConstraintSystem, seeds: &SeedSet) -> Result<SymMps> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    Skeleton::from_paths(cs, seeds.bitstrings())?.to_mps()
}

/// Link charge sets observed in the seeds (Method 2 input).
pub fn seed_link_sets(cs: &ConstraintSystem, seeds: &SeedSet) -> Result<Vec<BTreeSet<Charge>>> {
    let mut links = vec![BTreeSet::new(); cs.num_sites() + 1];
    for x in seeds.bitstrings() {
        cs.check(x)?;
        for (i, p) in prefix_charges(cs, x)?.into_iter().enumerate() {
            links[i].insert(p);
        }
    }
    Ok(links)
}

/// Method 2: every transition consistent with the link charges seen in
/// the seeds.
pub fn embed_method2(cs: &ConstraintSystem, seeds: &SeedSet) -> Result<SymMps> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    Skeleton::from_link_sets(cs, seed_link_sets(cs, seeds)?)?.to_mps()
}

/// Allowed prefix charges on link `i` (1 ≤ i ≤ N−1) of the exact
/// cardinality-κ MPS with the flux on the last site.
///
/// For κ ≤ N/2 the remaining charge `κ − P_i` runs over `κ, …, κ−i` while
/// `i < κ`, over `κ, …, 0` in the bulk and over `N−i, …, 0` once `i > N−κ`;
/// larger κ follow by flipping every bit.
pub fn cardinality_link_charges(n: usize, kappa: usize, i: usize) -> Vec<i64> {
    if 2 * kappa > n {
        let mut out: Vec<i64> =
            cardinality_link_charges(n, n - kappa, i).into_iter().map(|q| i as i64 - q).collect();
        out.sort_unstable();
        return out;
    }
    let (n, k, i) = (n as i64, kappa as i64, i as i64);
    let remaining: Vec<i64> = if i < k {
        (k - i..=k).collect()
    } else if i <= n - k {
        (0..=k).collect()
    } else {
        (0..=n - i).collect()
    };
    let mut out: Vec<i64> = remaining.into_iter().map(|r| k - r).collect();
    out.sort_unstable();
    out
}

/// Skeleton of the exact cardinality-κ valid space.
pub fn cardinality_skeleton(n: usize, kappa: usize) -> Result<Skeleton> {
    if kappa > n {
        return Err(Error::InvalidArgument(format!("cardinality {kappa} exceeds {n} sites")));
    }
    let cs = ConstraintSystem::cardinality(n, kappa)?;
    let mut links = vec![BTreeSet::new(); n + 1];
    for (i, link) in links.iter_mut().enumerate().take(n).skip(1) {
        *link = cardinality_link_charges(n, kappa, i).into_iter().map(|p| Charge::new(vec![p])).collect();
    }
    Skeleton::from_link_sets(&cs, links)
}

/// Exact MPS of all `(N choose κ)` bitstrings of weight κ, uniform.
pub fn build_cardinality_mps(n: usize, kappa: usize) -> Result<SymMps> {
    cardinality_skeleton(n, kappa)?.to_mps()
}

/// Constraint system `Σ_{i∈g} x_i = 1` for each group `g`, plus
/// `Σ x_i = 0` over the sites in no group (when there are any).
pub fn assignment_constraints(n: usize, groups: &[Vec<usize>]) -> Result<ConstraintSystem> {
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidArgument("assignment group is empty".into()));
        }
        for &i in g {
            if i >= n {
                return Err(Error::OutOfRange { index: i, len: n });
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!("site {i} appears in more than one group")));
            }
            seen[i] = true;
        }
    }
    let mut rows: Vec<Vec<i64>> =
        groups.iter().map(|g| (0..n).map(|i| i64::from(g.contains(&i))).collect()).collect();
    let mut rhs = vec![1; groups.len()];
    if seen.iter().any(|&s| !s) {
        rows.push(seen.iter().map(|&s| i64::from(!s)).collect());
        rhs.push(0);
    }
    ConstraintSystem::new(rows, rhs)
}

/// Skeleton for one-hot groups: on each link a group contributes 0 before
/// its first site, 1 after its last site, and {0, 1} in between.
pub fn assignment_skeleton(n: usize, groups: &[Vec<usize>]) -> Result<Skeleton> {
    let cs = assignment_constraints(n, groups)?;
    let mut links = vec![BTreeSet::new(); n + 1];
    for (link, set) in links.iter_mut().enumerate().take(n).skip(1) {
        let mut partial: Vec<Vec<i64>> = vec![Vec::new()];
        for g in groups {
            let before = g.iter().filter(|&&i| i < link).count();
            let choices: Vec<i64> = if before == 0 {
                vec![0]
            } else if before == g.len() {
                vec![1]
            } else {
                vec![0, 1]
            };
            partial = partial
                .into_iter()
                .flat_map(|p| {
                    choices.iter().map(move |&c| {
                        let mut q = p.clone();
                        q.push(c);
                        q
                    })
                })
                .collect();
        }
        if cs.num_rows() > groups.len() {
            partial.iter_mut().for_each(|p| p.push(0));
        }
        *set = partial.into_iter().map(Charge::new).collect();
    }
    Skeleton::from_link_sets(&cs, links)
}

/// Exact MPS for disjoint one-hot (assignment) groups.
pub fn build_assignment_mps(n: usize, groups: &[Vec<usize>]) -> Result<SymMps> {
    assignment_skeleton(n, groups)?.to_mps()
}

/// Resets an MPS to its degeneracy-1 structure with all blocks equal.
pub fn uniform_fill(mps: &SymMps) -> Result<SymMps> {
    Skeleton::from_mps(mps)?.to_mps()
}

/// Raises every internal link sector to degeneracy `min(d, needed)`, where
/// `needed` is the largest rank the sector can carry given its neighbours.
/// Existing entries are kept; new entries are `noise · N(0, 1)`. The result
/// is re-canonicalised and normalised.
pub fn expand_degeneracy<R: Rng + ?Sized>(mps: &SymMps, d: usize, noise: f64, rng: &mut R) -> Result<SymMps> {
    if d == 0 {
        return Err(Error::InvalidArgument("degeneracy must be positive".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument("noise must be non-negative".into()));
    }
    let n = mps.num_sites();
    let transfers = mps.transfers();
    // Reachable dimension from the left and from the right per link sector.
    let mut from_left: Vec<Vec<usize>> = vec![vec![1]];
    for (i, tr) in transfers.iter().enumerate() {
        let right = mps.tensor(i).index(2);
        let mut next = vec![0usize; right.num_sectors()];
        for (sl, bits) in tr.iter().enumerate() {
            for (sr, _) in bits.iter().flatten() {
                next[*sr] = next[*sr].saturating_add(from_left[i][sl]);
            }
        }
        from_left.push(next.into_iter().map(|v| v.min(d)).collect());
    }
    let mut from_right: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    from_right[n] = vec![1];
    for i in (0..n).rev() {
        let left = mps.tensor(i).index(0);
        let mut prev = vec![0usize; left.num_sectors()];
        for (sl, bits) in transfers[i].iter().enumerate() {
            for (sr, _) in bits.iter().flatten() {
                prev[sl] = prev[sl].saturating_add(from_right[i + 1][*sr]);
            }
        }
        from_right[i] = prev.into_iter().map(|v| v.min(d)).collect();
    }
    // New link indices (links 1..N-1); boundaries unchanged.
    let mut links: Vec<Option<ChargedIndex>> = vec![None; n + 1];
    for (link, slot) in links.iter_mut().enumerate().take(n).skip(1) {
        let old = mps.tensor(link).index(0);
        let sectors = old.sectors().iter().enumerate().map(|(s, sec)| {
            let target = from_left[link][s].min(from_right[link][s]).min(d);
            (sec.charge.clone(), sec.degeneracy.max(target))
        });
        *slot = Some(ChargedIndex::new(sectors.collect::<Vec<_>>(), Direction::In)?);
    }
    let mut tensors = Vec::with_capacity(n);
    for i in 0..n {
        let t = mps.tensor(i);
        let left = links[i].clone().unwrap_or_else(|| t.index(0).clone());
        let right = links[i + 1].as_ref().map(|l| l.dual()).unwrap_or_else(|| t.index(2).clone());
        let mut nt = BlockTensor::zeros(vec![left, t.index(1).clone(), right], t.flux().clone())?;
        for (key, block) in t.blocks() {
            let shape = nt.block_shape(key);
            let mut big = ArrayD::from_shape_simple_fn(IxDyn(&shape), || {
                if noise > 0.0 {
                    noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                }
            });
            let mut view = big.view_mut();
            for (leg, &len) in block.shape().iter().enumerate() {
                view.slice_axis_inplace(Axis(leg), Slice::from(0..len));
            }
            view.assign(block);
            nt.insert_block(key.clone(), big)?;
        }
        tensors.push(nt);
    }
    let mut out = SymMps::from_tensors(tensors, mps.site_charges().to_vec(), mps.center())?;
    out.canonicalize()?;
    out.normalize()?;
    Ok(out)
}

/// Redraws every stored entry from N(0, 1), keeping the block structure,
/// then canonicalises and normalises. Gives generic models on a fixed support.
pub fn randomize<R: Rng + ?Sized>(mps: &SymMps, rng: &mut R) -> Result<SymMps> {
    let mut tensors = Vec::with_capacity(mps.num_sites());
    for t in mps.tensors() {
        let mut nt = BlockTensor::zeros(t.indices().to_vec(), t.flux().clone())?;
        for (key, block) in t.blocks() {
            let fresh = ArrayD::from_shape_simple_fn(block.raw_dim(), || rng.sample::<f64, _>(StandardNormal));
            nt.insert_block(key.clone(), fresh)?;
        }
        tensors.push(nt);
    }
    let mut out = SymMps::from_tensors(tensors, mps.site_charges().to_vec(), mps.center())?;
    out.canonicalize()?;
    out.normalize()?;
    Ok(out)
}

/// The unconstrained (m = 0) uniform product state over all 2^N bitstrings.
pub fn vanilla_uniform(n: usize) -> Result<SymMps> {
    let cs = ConstraintSystem::unconstrained(n)?;
    let links = vec![BTreeSet::from([Charge::zero(0)]); n + 1];
    Skeleton::from_link_sets(&cs, links)?.to_mps()
}

/// Site charges of a constraint system, for every site.
pub fn all_site_charges(cs: &ConstraintSystem) -> Result<Vec<[Charge; 2]>> {
    (0..cs.num_sites()).map(|i| site_charges(cs, i).map(|(a, b)| [a, b])).collect()
}
