//! Block-sparse tensors with a flux charge.
//!
//! A [`BlockTensor`] stores one dense array per allowed combination of leg
//! sectors. A block keyed by sector positions `(s_0, …, s_k)` is allowed when
//!
//! ```text
//! flux + Σ_{incoming legs} charge(s_i) = Σ_{outgoing legs} charge(s_i)
//! ```
//!
//! Absent blocks are exactly zero. All operations preserve this law.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayD, Axis, IxDyn, Slice};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::charge::{Charge, ChargedIndex, Direction};
use crate::dense;
use crate::error::{Error, Result};

/// Sector positions, one per leg.
pub type BlockKey = Vec<usize>;

/// Singular values below this fraction of the largest one are treated as
/// numerically zero and never kept.
pub const RANK_TOLERANCE: f64 = 1e-13;

/// Singular values equal within this tolerance are ranked by bond charge.
const TIE_TOLERANCE: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct BlockTensor {
    indices: Vec<ChargedIndex>,
    flux: Charge,
    blocks: BTreeMap<BlockKey, ArrayD<f64>>,
}

/// Which factor of an SVD keeps the flux.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FluxSide {
    Left,
    Right,
}

/// Bond-dimension control for [`BlockTensor::svd_split`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub chi_max: usize,
    pub cutoff: f64,
}

impl Truncation {
    pub fn new(chi_max: usize, cutoff: f64) -> Self {
        Truncation { chi_max, cutoff }
    }

    /// Keep every numerically nonzero singular value.
    pub fn none() -> Self {
        Truncation { chi_max: usize::MAX, cutoff: 0.0 }
    }
}

/// Output of [`BlockTensor::svd_split`]: `t ≈ U · diag(S) · Vh`.
#[derive(Clone, Debug)]
pub struct SvdSplit {
    /// Left factor; legs are the left group followed by the outgoing bond.
    pub u: BlockTensor,
    /// Kept singular values per bond sector, aligned with the bond index.
    pub singular_values: Vec<(Charge, Vec<f64>)>,
    /// Right factor; legs are the incoming bond followed by the right group.
    pub vh: BlockTensor,
    /// Sum of squared discarded singular values.
    pub discarded_weight: f64,
}

impl SvdSplit {
    /// Multiplies the singular values into `Vh` (bond leg is its first leg).
    pub fn absorb_right(mut self) -> (BlockTensor, BlockTensor) {
        scale_bond(&mut self.vh, 0, &self.singular_values);
        (self.u, self.vh)
    }

    /// Multiplies the singular values into `U` (bond leg is its last leg).
    pub fn absorb_left(mut self) -> (BlockTensor, BlockTensor) {
        let last = self.u.rank() - 1;
        scale_bond(&mut self.u, last, &self.singular_values);
        (self.u, self.vh)
    }
}

fn scale_bond(t: &mut BlockTensor, leg: usize, sv: &[(Charge, Vec<f64>)]) {
    for (key, block) in t.blocks.iter_mut() {
        let s = &sv[key[leg]].1;
        for (k, mut lane) in block.axis_iter_mut(Axis(leg)).enumerate() {
            lane.mapv_inplace(|v| v * s[k]);
        }
    }
}

impl BlockTensor {
    /// The zero tensor with the given legs and flux.
    pub fn zeros(indices: Vec<ChargedIndex>, flux: Charge) -> Result<Self> {
        for idx in &indices {
            if idx.charge_len() != flux.len() {
                return Err(Error::ChargeLength { left: flux.len(), right: idx.charge_len() });
            }
        }
        Ok(BlockTensor { indices, flux, blocks: BTreeMap::new() })
    }

    pub fn indices(&self) -> &[ChargedIndex] {
        &self.indices
    }

    pub fn index(&self, leg: usize) -> &ChargedIndex {
        &self.indices[leg]
    }

    pub fn flux(&self) -> &Charge {
        &self.flux
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockKey, &ArrayD<f64>)> {
        self.blocks.iter()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, key: &[usize]) -> Option<&ArrayD<f64>> {
        self.blocks.get(key)
    }

    pub fn block_mut(&mut self, key: &[usize]) -> Option<&mut ArrayD<f64>> {
        self.blocks.get_mut(key)
    }

    /// Number of stored scalars.
    pub fn storage(&self) -> usize {
        self.blocks.values().map(|b| b.len()).sum()
    }

    pub fn block_shape(&self, key: &[usize]) -> Vec<usize> {
        key.iter().zip(&self.indices).map(|(&s, idx)| idx.degeneracy(s)).collect()
    }

    /// Net charge `Σ out − Σ in` of a block key.
    pub fn key_charge(&self, key: &[usize]) -> Result<Charge> {
        let mut acc = Charge::zero(self.flux.len());
        for (leg, &s) in key.iter().enumerate() {
            acc = acc.fuse(&self.indices[leg].signed_charge(s))?;
        }
        Ok(acc)
    }

    /// Whether the block key satisfies charge conservation with this flux.
    pub fn is_allowed(&self, key: &[usize]) -> bool {
        key.len() == self.rank()
            && key.iter().zip(&self.indices).all(|(&s, idx)| s < idx.num_sectors())
            && self.key_charge(key).map(|c| c == self.flux).unwrap_or(false)
    }

    /// Inserts (or replaces) a block after validating charge and shape.
    pub fn insert_block(&mut self, key: BlockKey, block: ArrayD<f64>) -> Result<()> {
        if !self.is_allowed(&key) {
            return Err(Error::SectorMismatch(format!("block {key:?} violates charge conservation")));
        }
        let shape = self.block_shape(&key);
        if block.shape() != shape.as_slice() {
            return Err(Error::Shape(format!("block {key:?} has shape {:?}, expected {shape:?}", block.shape())));
        }
        self.blocks.insert(key, block);
        Ok(())
    }

    pub fn remove_block(&mut self, key: &[usize]) -> Option<ArrayD<f64>> {
        self.blocks.remove(key)
    }

    /// Every allowed block key, enumerated in lexicographic order.
    pub fn allowed_keys(&self) -> Vec<BlockKey> {
        let mut out = Vec::new();
        let mut key = vec![0usize; self.rank()];
        if self.rank() == 0 {
            return out;
        }
        loop {
            if self.is_allowed(&key) {
                out.push(key.clone());
            }
            let mut leg = self.rank();
            loop {
                if leg == 0 {
                    return out;
                }
                leg -= 1;
                key[leg] += 1;
                if key[leg] < self.indices[leg].num_sectors() {
                    break;
                }
                key[leg] = 0;
            }
        }
    }

    /// Fills every allowed block with i.i.d. standard normal entries.
    pub fn random<R: Rng + ?Sized>(indices: Vec<ChargedIndex>, flux: Charge, rng: &mut R) -> Result<Self> {
        let mut t = BlockTensor::zeros(indices, flux)?;
        for key in t.allowed_keys() {
            let shape = t.block_shape(&key);
            let block = ArrayD::from_shape_simple_fn(IxDyn(&shape), || rng.sample::<f64, _>(StandardNormal));
            t.blocks.insert(key, block);
        }
        Ok(t)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i.dim()).collect()
    }

    /// Dense embedding of all blocks.
    pub fn to_dense(&self) -> ArrayD<f64> {
        let mut out = ArrayD::zeros(IxDyn(&self.dims()));
        for (key, block) in &self.blocks {
            let mut view = out.view_mut();
            for (leg, &s) in key.iter().enumerate() {
                let off = self.indices[leg].offset(s);
                let deg = self.indices[leg].degeneracy(s);
                view.slice_axis_inplace(Axis(leg), Slice::from(off..off + deg));
            }
            view.assign(block);
        }
        out
    }

    /// Extracts the allowed blocks of a dense array. Entries outside allowed
    /// blocks must be zero to within `tol`.
    pub fn from_dense(dense: &ArrayD<f64>, indices: Vec<ChargedIndex>, flux: Charge, tol: f64) -> Result<Self> {
        let mut t = BlockTensor::zeros(indices, flux)?;
        if dense.shape() != t.dims().as_slice() {
            return Err(Error::Shape(format!("dense shape {:?} vs legs {:?}", dense.shape(), t.dims())));
        }
        let mut covered = ArrayD::<bool>::from_elem(dense.raw_dim(), false);
        for key in t.allowed_keys() {
            let mut view = dense.view();
            let mut cov = covered.view_mut();
            for (leg, &s) in key.iter().enumerate() {
                let off = t.indices[leg].offset(s);
                let deg = t.indices[leg].degeneracy(s);
                view.slice_axis_inplace(Axis(leg), Slice::from(off..off + deg));
                cov.slice_axis_inplace(Axis(leg), Slice::from(off..off + deg));
            }
            cov.fill(true);
            t.blocks.insert(key, view.to_owned());
        }
        for (v, c) in dense.iter().zip(covered.iter()) {
            if !c && v.abs() > tol {
                return Err(Error::SectorMismatch(format!("dense entry {v} lies outside every allowed block")));
            }
        }
        Ok(t)
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.values().map(dense::norm_sq).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks.values_mut() {
            b.mapv_inplace(|v| v * factor);
        }
    }

    /// `self += alpha * other`; legs and flux must agree.
    pub fn axpy(&mut self, alpha: f64, other: &BlockTensor) -> Result<()> {
        if self.flux != other.flux || self.indices != other.indices {
            return Err(Error::SectorMismatch("axpy operands have different structure".into()));
        }
        for (key, block) in &other.blocks {
            match self.blocks.get_mut(key) {
                Some(b) => b.scaled_add(alpha, block),
                None => {
                    self.blocks.insert(key.clone(), block.mapv(|v| alpha * v));
                }
            }
        }
        Ok(())
    }

    /// The conjugate tensor: every leg reversed and the flux negated. Values are
    /// real, so the blocks are unchanged.
    pub fn conj(&self) -> BlockTensor {
        BlockTensor {
            indices: self.indices.iter().map(|i| i.dual()).collect(),
            flux: self.flux.neg(),
            blocks: self.blocks.clone(),
        }
    }

    /// Inner product over matching blocks.
    pub fn dot(&self, other: &BlockTensor) -> f64 {
        self.blocks
            .iter()
            .filter_map(|(k, a)| other.blocks.get(k).map(|b| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>()))
            .sum()
    }

    /// Reorders legs: leg `i` of the result is leg `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<BlockTensor> {
        check_permutation(perm, self.rank())?;
        let indices = perm.iter().map(|&p| self.indices[p].clone()).collect();
        let blocks = self
            .blocks
            .iter()
            .map(|(key, b)| {
                let k: BlockKey = perm.iter().map(|&p| key[p]).collect();
                let pb = b.view().permuted_axes(IxDyn(perm)).as_standard_layout().into_owned();
                (k, pb)
            })
            .collect();
        Ok(BlockTensor { indices, flux: self.flux.clone(), blocks })
    }

    /// Contracts legs `pairs[k].0` of `a` with legs `pairs[k].1` of `b`.
    ///
    /// The result carries the free legs of `a` (in order) followed by the free
    /// legs of `b`, and flux `a.flux + b.flux`.
    pub fn contract(a: &BlockTensor, b: &BlockTensor, pairs: &[(usize, usize)]) -> Result<BlockTensor> {
        for &(ia, ib) in pairs {
            if ia >= a.rank() || ib >= b.rank() {
                return Err(Error::OutOfRange { index: ia.max(ib), len: a.rank().max(b.rank()) });
            }
            let (la, lb) = (&a.indices[ia], &b.indices[ib]);
            if !la.same_sectors(lb) {
                return Err(Error::SectorMismatch(format!("contracted legs {ia} and {ib} have different sectors")));
            }
            if la.direction() == lb.direction() {
                return Err(Error::DirectionMismatch(ia, ib));
            }
        }
        let ca: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let cb: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let fa: Vec<usize> = (0..a.rank()).filter(|i| !ca.contains(i)).collect();
        let fb: Vec<usize> = (0..b.rank()).filter(|i| !cb.contains(i)).collect();

        let indices: Vec<ChargedIndex> =
            fa.iter().map(|&i| a.indices[i].clone()).chain(fb.iter().map(|&i| b.indices[i].clone())).collect();
        let flux = a.flux.fuse(&b.flux)?;
        let mut out = BlockTensor::zeros(indices, flux)?;

        let mut b_by_contracted: HashMap<Vec<usize>, Vec<(&BlockKey, Array2<f64>)>> = HashMap::new();
        for (key, block) in &b.blocks {
            let ck: Vec<usize> = cb.iter().map(|&i| key[i]).collect();
            b_by_contracted.entry(ck).or_default().push((key, dense::to_matrix(block, &cb, &fb)));
        }
        for (akey, ablock) in &a.blocks {
            let ck: Vec<usize> = ca.iter().map(|&i| akey[i]).collect();
            let Some(partners) = b_by_contracted.get(&ck) else { continue };
            let amat = dense::to_matrix(ablock, &fa, &ca);
            for (bkey, bmat) in partners {
                let key: BlockKey = fa.iter().map(|&i| akey[i]).chain(fb.iter().map(|&i| bkey[i])).collect();
                let prod = amat.dot(bmat);
                let shape = out.block_shape(&key);
                let prod = dense::from_matrix(prod, &shape);
                match out.blocks.get_mut(&key) {
                    Some(existing) => *existing += &prod,
                    None => {
                        out.blocks.insert(key, prod);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Merges two neighbouring MPS site tensors over their shared link: the
    /// last leg of `left` is contracted with the first leg of `right`.
    pub fn merge_two_site(left: &BlockTensor, right: &BlockTensor) -> Result<BlockTensor> {
        let (ll, rf) = (left.rank() - 1, 0);
        let shared_l = &left.indices[ll];
        let shared_r = &right.indices[rf];
        if !shared_l.same_sectors(shared_r) || shared_l.direction() == shared_r.direction() {
            return Err(Error::SectorMismatch("merged tensors do not share a link".into()));
        }
        BlockTensor::contract(left, right, &[(ll, rf)])
    }

    /// Splits the tensor across the cut between `left_group` and the remaining
    /// legs with a blockwise SVD.
    ///
    /// Singular values of all bond sectors are ranked together and at most
    /// `trunc.chi_max` are kept; values below `trunc.cutoff · σ_max` (and below
    /// [`RANK_TOLERANCE`]` · σ_max`) are dropped. Bond sectors that end up
    /// empty are removed. The bond is outgoing on `U` and incoming on `Vh`;
    /// the flux goes to the side selected by `flux_side`.
    pub fn svd_split(&self, left_group: &[usize], trunc: Truncation, flux_side: FluxSide) -> Result<SvdSplit> {
        if trunc.chi_max < 1 {
            return Err(Error::InvalidArgument("chi_max must be at least 1".into()));
        }
        if !(trunc.cutoff >= 0.0) {
            return Err(Error::InvalidArgument("cutoff must be non-negative".into()));
        }
        if left_group.is_empty() || left_group.len() >= self.rank() {
            return Err(Error::InvalidArgument("left group must be a proper nonempty subset of legs".into()));
        }
        for (k, &l) in left_group.iter().enumerate() {
            if l >= self.rank() || left_group[..k].contains(&l) {
                return Err(Error::InvalidArgument(format!("bad leg {l} in left group")));
            }
        }
        if self.blocks.is_empty() {
            return Err(Error::EmptyTensor);
        }
        let right_group: Vec<usize> = (0..self.rank()).filter(|i| !left_group.contains(i)).collect();
        let m = self.flux.len();

        // Group blocks by the charge crossing the cut.
        let mut sectors: BTreeMap<Charge, Vec<&BlockKey>> = BTreeMap::new();
        for key in self.blocks.keys() {
            let mut left_charge = Charge::zero(m);
            for &l in left_group {
                left_charge = left_charge.fuse(&self.indices[l].signed_charge(key[l]))?;
            }
            let q = match flux_side {
                FluxSide::Right => left_charge.neg(),
                FluxSide::Left => self.flux.sub(&left_charge)?,
            };
            sectors.entry(q).or_default().push(key);
        }

        struct SectorSvd {
            q: Charge,
            rows: Vec<(BlockKey, usize, usize)>,
            cols: Vec<(BlockKey, usize, usize)>,
            u: Array2<f64>,
            s: Vec<f64>,
            vt: Array2<f64>,
        }

        let sector_list: Vec<(Charge, Vec<&BlockKey>)> = sectors.into_iter().collect();
        let decomposed: Vec<SectorSvd> = sector_list
            .par_iter()
            .map(|(q, keys)| {
                let mut row_keys: BTreeMap<BlockKey, usize> = BTreeMap::new();
                let mut col_keys: BTreeMap<BlockKey, usize> = BTreeMap::new();
                for key in keys {
                    let rk: BlockKey = left_group.iter().map(|&l| key[l]).collect();
                    let ck: BlockKey = right_group.iter().map(|&r| key[r]).collect();
                    let rd = left_group.iter().zip(&rk).map(|(&l, &s)| self.indices[l].degeneracy(s)).product();
                    let cd = right_group.iter().zip(&ck).map(|(&r, &s)| self.indices[r].degeneracy(s)).product();
                    row_keys.insert(rk, rd);
                    col_keys.insert(ck, cd);
                }
                let layout = |map: BTreeMap<BlockKey, usize>| {
                    let mut acc = 0;
                    map.into_iter()
                        .map(|(k, d)| {
                            let e = (k, acc, d);
                            acc += d;
                            e
                        })
                        .collect::<Vec<_>>()
                };
                let rows = layout(row_keys);
                let cols = layout(col_keys);
                let nr = rows.last().map(|r| r.1 + r.2).unwrap_or(0);
                let nc = cols.last().map(|c| c.1 + c.2).unwrap_or(0);
                let mut mat = Array2::<f64>::zeros((nr, nc));
                for key in keys {
                    let rk: BlockKey = left_group.iter().map(|&l| key[l]).collect();
                    let ck: BlockKey = right_group.iter().map(|&r| key[r]).collect();
                    let r = &rows[rows.binary_search_by(|e| e.0.cmp(&rk)).unwrap()];
                    let c = &cols[cols.binary_search_by(|e| e.0.cmp(&ck)).unwrap()];
                    let bm = dense::to_matrix(&self.blocks[*key], left_group, &right_group);
                    mat.slice_mut(ndarray::s![r.1..r.1 + r.2, c.1..c.1 + c.2]).assign(&bm);
                }
                let (u, s, vt) = dense::svd(&mat)?;
                Ok(SectorSvd { q: q.clone(), rows, cols, u, s, vt })
            })
            .collect::<Result<Vec<_>>>()?;

        // Global ranking of singular values.
        let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
        for (si, sec) in decomposed.iter().enumerate() {
            for (k, &s) in sec.s.iter().enumerate() {
                ranked.push((s, si, k));
            }
        }
        let smax = ranked.iter().map(|r| r.0).fold(0.0, f64::max);
        if smax <= 0.0 {
            return Err(Error::Numerical("tensor is identically zero".into()));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        // Near-equal runs are ordered by bond charge so ties break deterministically.
        let mut start = 0;
        while start < ranked.len() {
            let mut end = start + 1;
            while end < ranked.len() && ranked[start].0 - ranked[end].0 <= TIE_TOLERANCE * smax.max(1.0) {
                end += 1;
            }
            ranked[start..end].sort_by_key(|r| (r.1, r.2));
            start = end;
        }
        let floor = smax * trunc.cutoff.max(RANK_TOLERANCE);
        let mut kept = vec![0usize; decomposed.len()];
        let mut discarded_weight = 0.0;
        let mut n_kept = 0;
        for &(s, si, _) in &ranked {
            if n_kept < trunc.chi_max && s > floor {
                kept[si] += 1;
                n_kept += 1;
            } else {
                discarded_weight += s * s;
            }
        }

        let bond_sectors: Vec<(Charge, usize)> = decomposed
            .iter()
            .zip(&kept)
            .filter(|(_, &k)| k > 0)
            .map(|(sec, &k)| (sec.q.clone(), k))
            .collect();
        let bond = ChargedIndex::new(bond_sectors, Direction::Out)?;

        let (u_flux, vh_flux) = match flux_side {
            FluxSide::Right => (Charge::zero(m), self.flux.clone()),
            FluxSide::Left => (self.flux.clone(), Charge::zero(m)),
        };
        let u_indices: Vec<ChargedIndex> =
            left_group.iter().map(|&l| self.indices[l].clone()).chain(std::iter::once(bond.clone())).collect();
        let vh_indices: Vec<ChargedIndex> =
            std::iter::once(bond.dual()).chain(right_group.iter().map(|&r| self.indices[r].clone())).collect();
        let mut u = BlockTensor::zeros(u_indices, u_flux)?;
        let mut vh = BlockTensor::zeros(vh_indices, vh_flux)?;
        let mut singular_values = Vec::new();

        for (sec, &k) in decomposed.iter().zip(&kept) {
            if k == 0 {
                continue;
            }
            let b = bond.find(&sec.q).expect("kept sector is on the bond");
            singular_values.push((sec.q.clone(), sec.s[..k].to_vec()));
            for (rk, off, d) in &sec.rows {
                let mut shape: Vec<usize> =
                    left_group.iter().zip(rk).map(|(&l, &s)| self.indices[l].degeneracy(s)).collect();
                shape.push(k);
                let part = sec.u.slice(ndarray::s![*off..off + d, ..k]).to_owned();
                let mut key = rk.clone();
                key.push(b);
                u.blocks.insert(key, dense::from_matrix(part, &shape));
            }
            for (ck, off, d) in &sec.cols {
                let mut shape = vec![k];
                shape.extend(right_group.iter().zip(ck).map(|(&r, &s)| self.indices[r].degeneracy(s)));
                let part = sec.vt.slice(ndarray::s![..k, *off..off + d]).to_owned();
                let mut key = vec![b];
                key.extend(ck.iter().copied());
                vh.blocks.insert(key, dense::from_matrix(part, &shape));
            }
        }
        Ok(SvdSplit { u, singular_values, vh, discarded_weight })
    }

    /// Direct sum over the legs in `summed`: those legs concatenate their
    /// sectors (degeneracies add for shared charges) and the result embeds
    /// `a` and `b` block-diagonally. All other legs and the flux must agree.
    pub fn direct_sum(a: &BlockTensor, b: &BlockTensor, summed: &[usize]) -> Result<BlockTensor> {
        if a.rank() != b.rank() {
            return Err(Error::Shape(format!("rank {} vs {}", a.rank(), b.rank())));
        }
        if a.flux != b.flux {
            return Err(Error::FluxMismatch(format!("{} vs {}", a.flux, b.flux)));
        }
        let mut indices = Vec::with_capacity(a.rank());
        // Per summed leg: maps from old sector positions to (new position, offset).
        let mut remap_a: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut remap_b: Vec<Vec<(usize, usize)>> = Vec::new();
        for leg in 0..a.rank() {
            let (ia, ib) = (&a.indices[leg], &b.indices[leg]);
            if !summed.contains(&leg) {
                if ia != ib {
                    return Err(Error::SectorMismatch(format!("unsummed leg {leg} differs")));
                }
                indices.push(ia.clone());
                remap_a.push((0..ia.num_sectors()).map(|s| (s, 0)).collect());
                remap_b.push((0..ib.num_sectors()).map(|s| (s, 0)).collect());
                continue;
            }
            if ia.direction() != ib.direction() {
                return Err(Error::DirectionMismatch(leg, leg));
            }
            let mut degs: BTreeMap<Charge, (usize, usize)> = BTreeMap::new();
            for s in ia.sectors() {
                degs.entry(s.charge.clone()).or_default().0 = s.degeneracy;
            }
            for s in ib.sectors() {
                degs.entry(s.charge.clone()).or_default().1 = s.degeneracy;
            }
            let idx = ChargedIndex::new(degs.iter().map(|(c, (da, db))| (c.clone(), da + db)), ia.direction())?;
            remap_a.push(ia.sectors().iter().map(|s| (idx.find(&s.charge).unwrap(), 0)).collect());
            remap_b.push(ib.sectors().iter().map(|s| (idx.find(&s.charge).unwrap(), degs[&s.charge].0)).collect());
            indices.push(idx);
        }
        let mut out = BlockTensor::zeros(indices, a.flux.clone())?;
        for (src, remap) in [(a, &remap_a), (b, &remap_b)] {
            for (key, block) in &src.blocks {
                let nk: BlockKey = key.iter().enumerate().map(|(leg, &s)| remap[leg][s].0).collect();
                let shape = out.block_shape(&nk);
                let target = out.blocks.entry(nk.clone()).or_insert_with(|| ArrayD::zeros(IxDyn(&shape)));
                let mut view = target.view_mut();
                for (leg, &s) in key.iter().enumerate() {
                    let off = remap[leg][s].1;
                    let d = block.shape()[leg];
                    view.slice_axis_inplace(Axis(leg), Slice::from(off..off + d));
                }
                view += block;
            }
        }
        Ok(out)
    }

    /// Checks that every stored block obeys charge conservation and has the
    /// shape implied by its sectors.
    pub fn check_invariants(&self) -> Result<()> {
        for (key, block) in &self.blocks {
            if !self.is_allowed(key) {
                return Err(Error::SectorMismatch(format!("stored block {key:?} violates conservation")));
            }
            if block.shape() != self.block_shape(key).as_slice() {
                return Err(Error::Shape(format!("stored block {key:?} has wrong shape")));
            }
        }
        Ok(())
    }

    pub(crate) fn insert_unchecked(&mut self, key: BlockKey, block: ArrayD<f64>) {
        debug_assert!(self.is_allowed(&key));
        self.blocks.insert(key, block);
    }
}

fn check_permutation(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(Error::InvalidArgument(format!("permutation of length {} for rank {rank}", perm.len())));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::InvalidArgument(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense as reference;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_index<R: Rng>(m: usize, rng: &mut R) -> ChargedIndex {
        let k = rng.random_range(1..=3);
        let mut sectors = BTreeMap::new();
        while sectors.len() < k {
            let c = Charge::new((0..m).map(|_| rng.random_range(-1..=1)).collect());
            sectors.insert(c, rng.random_range(1..=2));
            if m == 0 {
                break;
            }
        }
        let dir = if rng.random_bool(0.5) { Direction::In } else { Direction::Out };
        ChargedIndex::new(sectors, dir).unwrap()
    }

    fn random_flux<R: Rng>(m: usize, rng: &mut R) -> Charge {
        Charge::new((0..m).map(|_| rng.random_range(-1..=1)).collect())
    }

    fn max_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn cardinality_site() -> BlockTensor {
        let one = |v: i64| Charge::new(vec![v]);
        let left = ChargedIndex::new([(one(-1), 1), (one(0), 1)], Direction::In).unwrap();
        let phys = ChargedIndex::new([(one(0), 1), (one(1), 1)], Direction::Out).unwrap();
        let right = ChargedIndex::new([(one(-2), 1), (one(-1), 1), (one(0), 1)], Direction::Out).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        BlockTensor::random(vec![left, phys, right], one(0), &mut rng).unwrap()
    }

    #[test]
    fn stored_blocks_obey_conservation() {
        let t = cardinality_site();
        assert_eq!(t.num_blocks(), 4);
        for (key, _) in t.blocks() {
            let l = t.index(0).sector(key[0]).charge.entries()[0];
            let s = t.index(1).sector(key[1]).charge.entries()[0];
            let r = t.index(2).sector(key[2]).charge.entries()[0];
            assert_eq!(l, s + r);
        }
        t.check_invariants().unwrap();
        assert!(matches!(
            t.clone().insert_block(vec![1, 1, 2], ArrayD::zeros(IxDyn(&[1, 1, 1]))),
            Err(Error::SectorMismatch(_))
        ));
    }

    #[test]
    fn dense_round_trip_and_zero_outside_blocks() {
        let t = cardinality_site();
        let d = t.to_dense();
        let back = BlockTensor::from_dense(&d, t.indices().to_vec(), t.flux().clone(), 0.0).unwrap();
        assert_eq!(max_diff(&back.to_dense(), &d), 0.0);
        let mut bad = d.clone();
        bad[[0, 0, 0]] = 1.0;
        assert!(BlockTensor::from_dense(&bad, t.indices().to_vec(), t.flux().clone(), 1e-12).is_err());
    }

    #[test]
    fn contraction_with_identity_is_a_no_op() {
        let t = cardinality_site();
        let link = t.index(2).clone();
        let mut id = BlockTensor::zeros(vec![link.dual(), link.clone()], Charge::zero(1)).unwrap();
        for s in 0..link.num_sectors() {
            let d = link.degeneracy(s);
            id.insert_block(vec![s, s], ArrayD::from_shape_fn(IxDyn(&[d, d]), |i| if i[0] == i[1] { 1.0 } else { 0.0 }))
                .unwrap();
        }
        let out = BlockTensor::contract(&t, &id, &[(2, 0)]).unwrap();
        assert_eq!(out.num_blocks(), t.num_blocks());
        assert_eq!(max_diff(&out.to_dense(), &t.to_dense()), 0.0);
    }

    #[test]
    fn contraction_rejects_mismatched_legs() {
        let t = cardinality_site();
        assert!(matches!(BlockTensor::contract(&t, &t, &[(2, 2)]), Err(Error::DirectionMismatch(..))));
        assert!(matches!(BlockTensor::contract(&t, &t, &[(2, 0)]), Err(Error::SectorMismatch(_))));
    }

    #[test]
    fn left_isometry_contracts_to_identity() {
        let t = cardinality_site();
        let u = t.svd_split(&[0, 1], Truncation::none(), FluxSide::Right).unwrap().u;
        let gram = BlockTensor::contract(&u.conj(), &u, &[(0, 0), (1, 1)]).unwrap().to_dense();
        for (idx, &v) in gram.indexed_iter() {
            let e = if idx[0] == idx[1] { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_with_unit_link_is_an_outer_product() {
        let one = |v: i64| Charge::new(vec![v]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phys = ChargedIndex::new([(one(0), 1), (one(1), 1)], Direction::Out).unwrap();
        let unit = ChargedIndex::trivial(one(0), Direction::Out);
        let left = BlockTensor::random(vec![unit.dual(), phys.clone(), unit.clone()], one(0), &mut rng).unwrap();
        let right = BlockTensor::random(vec![unit.dual(), phys, unit], one(0), &mut rng).unwrap();
        let merged = BlockTensor::merge_two_site(&left, &right).unwrap();
        let (a, b) = (left.to_dense(), right.to_dense());
        let d = merged.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[[0, i, j, 0]] - a[[0, i, 0]] * b[[0, j, 0]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn truncation_error_equals_discarded_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let one = |v: i64| Charge::new(vec![v]);
        let link = ChargedIndex::new([(one(0), 2), (one(1), 2), (one(2), 1)], Direction::In).unwrap();
        let phys = ChargedIndex::new([(one(0), 1), (one(1), 1)], Direction::Out).unwrap();
        let out = ChargedIndex::new([(one(0), 2), (one(1), 2), (one(2), 2)], Direction::Out).unwrap();
        let t = BlockTensor::random(vec![link, phys.clone(), phys, out], one(0), &mut rng).unwrap();
        let full = reference::singular_values(&reference::matricize(&t.to_dense(), &[0, 1]));
        let split = t.svd_split(&[0, 1], Truncation::new(3, 0.0), FluxSide::Right).unwrap();
        let kept: Vec<f64> = {
            let mut v: Vec<f64> = split.singular_values.iter().flat_map(|(_, s)| s.clone()).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        };
        assert_eq!(kept.len(), 3);
        for (k, f) in kept.iter().zip(&full) {
            assert!((k - f).abs() < 1e-10);
        }
        let tail: f64 = full[3..].iter().map(|s| s * s).sum();
        assert!((split.discarded_weight - tail).abs() < 1e-10);
        let discarded = split.discarded_weight;
        let (u, svh) = split.absorb_right();
        let recon = BlockTensor::contract(&u, &svh, &[(2, 0)]).unwrap().to_dense();
        let err: f64 = (&recon - &t.to_dense()).iter().map(|v| v * v).sum();
        assert!((err - discarded).abs() < 1e-10);
    }

    #[test]
    fn ties_are_broken_by_smaller_bond_charge() {
        let one = |v: i64| Charge::new(vec![v]);
        let legs = ChargedIndex::new([(one(0), 1), (one(1), 1)], Direction::In).unwrap();
        let mut t = BlockTensor::zeros(vec![legs.clone(), legs.dual()], one(0)).unwrap();
        t.insert_block(vec![0, 0], ArrayD::from_elem(IxDyn(&[1, 1]), 0.5)).unwrap();
        t.insert_block(vec![1, 1], ArrayD::from_elem(IxDyn(&[1, 1]), 0.5)).unwrap();
        let split = t.svd_split(&[0], Truncation::new(1, 0.0), FluxSide::Right).unwrap();
        assert_eq!(split.singular_values.len(), 1, "{:?}", split.singular_values);
        // U conserves left = bond, so the candidates are ∅ and [1].
        assert_eq!(split.singular_values[0].0, one(0));
        let rev = t.svd_split(&[1], Truncation::new(1, 0.0), FluxSide::Right).unwrap();
        assert_eq!(rev.singular_values[0].0, one(-1));
    }

    #[test]
    fn empty_sectors_are_dropped_and_errors_reported() {
        let t = cardinality_site();
        let split = t.svd_split(&[0, 1], Truncation::new(1, 0.0), FluxSide::Right).unwrap();
        assert_eq!(split.u.index(2).num_sectors(), 1);
        assert!(t.svd_split(&[0, 1], Truncation::new(0, 0.0), FluxSide::Right).is_err());
        assert!(t.svd_split(&[0, 1, 2], Truncation::none(), FluxSide::Right).is_err());
        let empty = BlockTensor::zeros(t.indices().to_vec(), t.flux().clone()).unwrap();
        assert!(matches!(empty.svd_split(&[0], Truncation::none(), FluxSide::Right), Err(Error::EmptyTensor)));
    }

    #[test]
    fn direct_sum_with_zero_grows_bond_by_one() {
        let t = cardinality_site();
        let unit = ChargedIndex::trivial(Charge::new(vec![0]), Direction::Out);
        let zero = BlockTensor::zeros(vec![unit.dual(), t.index(1).clone(), unit], t.flux().clone()).unwrap();
        let s = BlockTensor::direct_sum(&t, &zero, &[0, 2]).unwrap();
        assert_eq!(s.dims()[0], t.dims()[0] + 1);
        assert_eq!(s.dims()[2], t.dims()[2] + 1);
        assert!((s.norm_sq() - t.norm_sq()).abs() < 1e-15);
        assert!(BlockTensor::direct_sum(&t, &zero, &[0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn contract_matches_dense(seed in any::<u64>(), m in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (i0, i1, shared, i3) = (random_index(m, &mut rng), random_index(m, &mut rng),
                                        random_index(m, &mut rng), random_index(m, &mut rng));
            let a = BlockTensor::random(vec![i0, shared.clone(), i1], random_flux(m, &mut rng), &mut rng).unwrap();
            let b = BlockTensor::random(vec![i3, shared.dual()], random_flux(m, &mut rng), &mut rng).unwrap();
            let c = BlockTensor::contract(&a, &b, &[(1, 1)]).unwrap();
            c.check_invariants().unwrap();
            prop_assert_eq!(c.flux(), &a.flux().fuse(b.flux()).unwrap());
            let d = reference::contract(&a.to_dense(), &b.to_dense(), &[(1, 1)]).unwrap();
            prop_assert!(max_diff(&c.to_dense(), &d) < 1e-10);
        }

        #[test]
        fn merge_matches_dense(seed in any::<u64>(), m in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let link = random_index(m, &mut rng).with_direction(Direction::Out);
            let l = BlockTensor::random(vec![random_index(m, &mut rng), random_index(m, &mut rng), link.clone()],
                                        random_flux(m, &mut rng), &mut rng).unwrap();
            let r = BlockTensor::random(vec![link.dual(), random_index(m, &mut rng), random_index(m, &mut rng)],
                                        Charge::zero(m), &mut rng).unwrap();
            let merged = BlockTensor::merge_two_site(&l, &r).unwrap();
            merged.check_invariants().unwrap();
            let d = reference::contract(&l.to_dense(), &r.to_dense(), &[(2, 0)]).unwrap();
            prop_assert!(max_diff(&merged.to_dense(), &d) < 1e-10);
        }

        #[test]
        fn svd_split_reconstructs_and_is_isometric(seed in any::<u64>(), m in 0usize..3, right_flux in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let legs: Vec<ChargedIndex> = (0..4).map(|_| random_index(m, &mut rng)).collect();
            let t = BlockTensor::random(legs, random_flux(m, &mut rng), &mut rng).unwrap();
            prop_assume!(t.norm_sq() > 0.0);
            let side = if right_flux { FluxSide::Right } else { FluxSide::Left };
            let split = t.svd_split(&[0, 2], Truncation::none(), side).unwrap();
            split.u.check_invariants().unwrap();
            split.vh.check_invariants().unwrap();
            let u = split.u.clone();
            let vh = split.vh.clone();
            let (a, b) = split.absorb_right();
            let recon = BlockTensor::contract(&a, &b, &[(2, 0)]).unwrap();
            let expect = t.permute(&[0, 2, 1, 3]).unwrap().to_dense();
            prop_assert!(max_diff(&recon.to_dense(), &expect) < 1e-10);
            let gu = BlockTensor::contract(&u.conj(), &u, &[(0, 0), (1, 1)]).unwrap().to_dense();
            let gv = BlockTensor::contract(&vh, &vh.conj(), &[(1, 1), (2, 2)]).unwrap().to_dense();
            for g in [gu, gv] {
                for (idx, &v) in g.indexed_iter() {
                    let e = if idx[0] == idx[1] { 1.0 } else { 0.0 };
                    prop_assert!((v - e).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn direct_sum_matches_dense(seed in any::<u64>(), m in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phys = random_index(m, &mut rng);
            let flux = random_flux(m, &mut rng);
            let (l1, r1, l2, r2) = (random_index(m, &mut rng), random_index(m, &mut rng),
                                    random_index(m, &mut rng), random_index(m, &mut rng));
            let l2 = l2.with_direction(l1.direction());
            let r2 = r2.with_direction(r1.direction());
            let a = BlockTensor::random(vec![l1, phys.clone(), r1], flux.clone(), &mut rng).unwrap();
            let b = BlockTensor::random(vec![l2, phys, r2], flux, &mut rng).unwrap();
            let s = BlockTensor::direct_sum(&a, &b, &[0, 2]).unwrap();
            s.check_invariants().unwrap();
            // Shared charges merge, so compare sector by sector against the
            // dense block-diagonal embedding re-ordered into `s`'s layout.
            let d = reference::direct_sum(&a.to_dense(), &b.to_dense(), &[0, 2]).unwrap();
            let perm = |leg: usize| -> Vec<usize> {
                let mut p = vec![0; s.index(leg).dim()];
                for (src, off_src) in [(&a, 0usize), (&b, a.index(leg).dim())] {
                    for (k, sec) in src.index(leg).sectors().iter().enumerate() {
                        let t = s.index(leg).find(&sec.charge).unwrap();
                        let extra = if off_src > 0 { a.index(leg).find(&sec.charge).map_or(0, |j| a.index(leg).degeneracy(j)) } else { 0 };
                        for q in 0..sec.degeneracy {
                            p[s.index(leg).offset(t) + extra + q] = off_src + src.index(leg).offset(k) + q;
                        }
                    }
                }
                p
            };
            let (p0, p2) = (perm(0), perm(2));
            let sd = s.to_dense();
            for (idx, &v) in sd.indexed_iter() {
                prop_assert!((v - d[[p0[idx[0]], idx[1], p2[idx[2]]]]).abs() < 1e-12);
            }
        }
    }
}
