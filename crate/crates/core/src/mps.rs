//! Symmetric matrix product states.
//!
//! Every site tensor has legs `(left link: In, site: Out, right link: Out)`.
//! With no flux a site tensor conserves `left = site + right`, so a link to
//! the left of the canonical centre carries minus the prefix charge
//! `−Σ_{j≤i} x_j A_j` and a link to the right carries the suffix charge
//! `Σ_{j>i} x_j A_j`. The centre holds the flux `b`; both boundary links are
//! dimension-1 legs with the zero charge.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use crate::bitstring::Bitstring;
use crate::block::{BlockTensor, FluxSide, Truncation};
use crate::charge::{Charge, ChargedIndex, Direction};
use crate::error::{Error, Result};

/// Bit-to-sector lookup for one physical leg: `(sector, offset)` per bit.
pub type SiteMap = [(usize, usize); 2];

#[derive(Clone, Debug)]
pub struct SymMps {
    tensors: Vec<BlockTensor>,
    site_charges: Vec<[Charge; 2]>,
    site_maps: Vec<SiteMap>,
    center: usize,
    flux: Charge,
}

/// Physical leg for a site whose bits carry charges `c0` (bit 0) and `c1`.
/// Equal charges collapse into one sector of degeneracy 2.
pub fn physical_index(c0: &Charge, c1: &Charge) -> Result<(ChargedIndex, SiteMap)> {
    if c0 == c1 {
        let idx = ChargedIndex::new([(c0.clone(), 2)], Direction::Out)?;
        return Ok((idx, [(0, 0), (0, 1)]));
    }
    let idx = ChargedIndex::new([(c0.clone(), 1), (c1.clone(), 1)], Direction::Out)?;
    let s0 = idx.find(c0).unwrap();
    let s1 = idx.find(c1).unwrap();
    Ok((idx, [(s0, 0), (s1, 0)]))
}

/// Transfer matrices of one site: for every left sector and bit, the right
/// sector reached and the `left_deg × right_deg` matrix.
pub type SiteTransfer = Vec<[Option<(usize, Array2<f64>)>; 2]>;

impl SymMps {
    /// Assembles an MPS from site tensors. The tensors must chain together
    /// (right link of site `i` dual to the left link of site `i+1`), the
    /// boundaries must be dimension-1 zero-charge legs, and only `center` may
    /// carry (the nonzero part of) the flux.
    pub fn from_tensors(tensors: Vec<BlockTensor>, site_charges: Vec<[Charge; 2]>, center: usize) -> Result<Self> {
        let n = tensors.len();
        if n == 0 {
            return Err(Error::InvalidArgument("an MPS needs at least one site".into()));
        }
        if site_charges.len() != n {
            return Err(Error::InvalidArgument("site charge table length differs from site count".into()));
        }
        if center >= n {
            return Err(Error::OutOfRange { index: center, len: n });
        }
        let m = site_charges[0][0].len();
        let mut site_maps = Vec::with_capacity(n);
        for (i, t) in tensors.iter().enumerate() {
            if t.rank() != 3 {
                return Err(Error::Shape(format!("site {i} tensor has rank {}", t.rank())));
            }
            let (phys, map) = physical_index(&site_charges[i][0], &site_charges[i][1])?;
            if t.index(1) != &phys {
                return Err(Error::SectorMismatch(format!("site {i} physical leg does not match its charges")));
            }
            if t.index(0).direction() != Direction::In || t.index(2).direction() != Direction::Out {
                return Err(Error::SectorMismatch(format!("site {i} link directions")));
            }
            if i != center && !t.flux().is_zero() {
                return Err(Error::FluxMismatch(format!("site {i} is not the centre but carries flux")));
            }
            if i + 1 < n && !t.index(2).same_sectors(tensors[i + 1].index(0)) {
                return Err(Error::SectorMismatch(format!("link between sites {i} and {}", i + 1)));
            }
            t.check_invariants()?;
            site_maps.push(map);
        }
        let boundary = ChargedIndex::trivial(Charge::zero(m), Direction::In);
        if tensors[0].index(0) != &boundary || tensors[n - 1].index(2) != &boundary.dual() {
            return Err(Error::SectorMismatch("boundary links must be dimension-1 zero charges".into()));
        }
        let flux = tensors[center].flux().clone();
        Ok(SymMps { tensors, site_charges, site_maps, center, flux })
    }

    pub fn num_sites(&self) -> usize {
        self.tensors.len()
    }

    /// Number of constraint rows `m` (0 for a vanilla model).
    pub fn charge_len(&self) -> usize {
        self.flux.len()
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn flux(&self) -> &Charge {
        &self.flux
    }

    pub fn tensors(&self) -> &[BlockTensor] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &BlockTensor {
        &self.tensors[i]
    }

    pub fn site_charges(&self) -> &[[Charge; 2]] {
        &self.site_charges
    }

    pub fn site_map(&self, i: usize) -> SiteMap {
        self.site_maps[i]
    }

    /// Bond dimensions of the `N − 1` internal links.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.num_sites() - 1].iter().map(|t| t.index(2).dim()).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Number of charge sectors on each internal link.
    pub fn bond_sector_counts(&self) -> Vec<usize> {
        self.tensors[..self.num_sites() - 1].iter().map(|t| t.index(2).num_sectors()).collect()
    }

    /// Total stored scalars over all site tensors.
    pub fn storage(&self) -> usize {
        self.tensors.iter().map(|t| t.storage()).sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.tensors.iter().map(|t| t.num_blocks()).sum()
    }

    /// Replaces sites `i` and `i+1` after a two-site update and sets the
    /// centre. The caller guarantees the tensors chain correctly.
    pub(crate) fn replace_pair(&mut self, i: usize, left: BlockTensor, right: BlockTensor, center: usize) {
        self.tensors[i] = left;
        self.tensors[i + 1] = right;
        self.center = center;
    }

    fn check_bits(&self, x: &Bitstring) -> Result<()> {
        if x.len() != self.num_sites() {
            return Err(Error::BitstringLength { expected: self.num_sites(), got: x.len() });
        }
        Ok(())
    }

    /// Transfer tables for every site.
    pub fn transfers(&self) -> Vec<SiteTransfer> {
        self.tensors.iter().zip(&self.site_maps).map(|(t, map)| site_transfer(t, map)).collect()
    }

    /// Ψ(x), or exactly 0 when the charge path of `x` leaves the allowed blocks.
    pub fn amplitude(&self, x: &Bitstring) -> Result<f64> {
        self.check_bits(x)?;
        let mut sector = 0usize;
        let mut v = vec![1.0];
        for (i, t) in self.tensors.iter().enumerate() {
            let (s, o) = self.site_maps[i][x.get(i) as usize];
            let Some((right, block)) = lookup(t, sector, s) else { return Ok(0.0) };
            let mat = block.index_axis(Axis(1), o);
            let mut next = vec![0.0; mat.shape()[1]];
            for (a, &va) in v.iter().enumerate() {
                if va != 0.0 {
                    for (b, nb) in next.iter_mut().enumerate() {
                        *nb += va * mat[[a, b]];
                    }
                }
            }
            sector = right;
            v = next;
        }
        Ok(v[0])
    }

    /// Right environments `E_i` per link sector: `E_N = [1]` on the right
    /// boundary and `E_{i-1} = Σ_x M_i^x E_i (M_i^x)^T`. Entry `i` lives on
    /// the left link of site `i` (entry `N` is the right boundary).
    pub fn right_environments(&self) -> Vec<Vec<Array2<f64>>> {
        let n = self.num_sites();
        let transfers = self.transfers();
        let mut envs: Vec<Vec<Array2<f64>>> = vec![Vec::new(); n + 1];
        envs[n] = vec![Array2::ones((1, 1))];
        for i in (0..n).rev() {
            let left = self.tensors[i].index(0);
            let mut env: Vec<Array2<f64>> =
                (0..left.num_sectors()).map(|s| Array2::zeros((left.degeneracy(s), left.degeneracy(s)))).collect();
            for (sl, bits) in transfers[i].iter().enumerate() {
                for (sr, mat) in bits.iter().flatten() {
                    let me = mat.dot(&envs[i + 1][*sr]);
                    env[sl] += &me.dot(&mat.t());
                }
            }
            envs[i] = env;
        }
        envs
    }

    /// Z = Σ_x |Ψ(x)|² by full contraction of the chain.
    pub fn partition_function(&self) -> f64 {
        self.right_environments()[0][0][[0, 0]]
    }

    /// Squared Frobenius norm of the centre tensor; equals Z in canonical form.
    pub fn center_norm_sq(&self) -> f64 {
        self.tensors[self.center].norm_sq()
    }

    /// Scales the centre so that Z = 1. Requires canonical form.
    pub fn normalize(&mut self) -> Result<()> {
        let z = self.center_norm_sq();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::DegenerateModel);
        }
        self.tensors[self.center].scale(1.0 / z.sqrt());
        Ok(())
    }

    /// Moves the canonical centre (and the flux) to site `to` by exact SVDs.
    pub fn shift_center(&mut self, to: usize) -> Result<()> {
        if to >= self.num_sites() {
            return Err(Error::OutOfRange { index: to, len: self.num_sites() });
        }
        while self.center < to {
            self.move_center_right(Truncation::none())?;
        }
        while self.center > to {
            self.move_center_left(Truncation::none())?;
        }
        Ok(())
    }

    pub(crate) fn move_center_right(&mut self, trunc: Truncation) -> Result<f64> {
        let c = self.center;
        let split = self.tensors[c].svd_split(&[0, 1], trunc, FluxSide::Right)?;
        let discarded = split.discarded_weight;
        let (u, svh) = split.absorb_right();
        let next = BlockTensor::contract(&svh, &self.tensors[c + 1], &[(1, 0)])?;
        self.tensors[c] = u;
        self.tensors[c + 1] = next;
        self.center = c + 1;
        Ok(discarded)
    }

    pub(crate) fn move_center_left(&mut self, trunc: Truncation) -> Result<f64> {
        let c = self.center;
        let split = self.tensors[c].svd_split(&[0], trunc, FluxSide::Left)?;
        let discarded = split.discarded_weight;
        let (us, vh) = split.absorb_left();
        let prev = BlockTensor::contract(&self.tensors[c - 1], &us, &[(2, 0)])?;
        self.tensors[c - 1] = prev;
        self.tensors[c] = vh;
        self.center = c - 1;
        Ok(discarded)
    }

    /// Brings a chain whose flux sits on `self.center` (other tensors
    /// arbitrary) into canonical form with the centre at the last site,
    /// without changing amplitudes or the norm.
    pub fn canonicalize(&mut self) -> Result<()> {
        while self.center > 0 {
            self.move_center_left(Truncation::none())?;
        }
        while self.center + 1 < self.num_sites() {
            self.move_center_right(Truncation::none())?;
        }
        Ok(())
    }

    /// Checks left-isometry conditions left of the centre and right-isometry
    /// conditions right of it; returns the largest deviation from identity.
    pub fn isometry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, t) in self.tensors.iter().enumerate() {
            if i == self.center {
                continue;
            }
            let bond = if i < self.center { 2 } else { 0 };
            let idx = t.index(bond);
            for s in 0..idx.num_sectors() {
                let d = idx.degeneracy(s);
                let mut gram = Array2::<f64>::zeros((d, d));
                for (key, block) in t.blocks() {
                    if key[bond] != s {
                        continue;
                    }
                    let mat = if bond == 2 {
                        crate::dense::to_matrix(block, &[0, 1], &[2])
                    } else {
                        crate::dense::to_matrix(block, &[1, 2], &[0])
                    };
                    gram += &mat.t().dot(&mat);
                }
                for a in 0..d {
                    for b in 0..d {
                        let target = if a == b { 1.0 } else { 0.0 };
                        worst = worst.max((gram[[a, b]] - target).abs());
                    }
                }
            }
        }
        worst
    }

    /// Every bitstring whose charge path stays inside the stored blocks, in
    /// lexicographic order. Fails when more than `limit` paths exist.
    pub fn structural_support(&self, limit: usize) -> Result<Vec<Bitstring>> {
        let transfers = self.transfers();
        let n = self.num_sites();
        let mut out = Vec::new();
        let mut bits = vec![0u8; n];
        fn dfs(
            site: usize,
            sector: usize,
            transfers: &[SiteTransfer],
            bits: &mut Vec<u8>,
            out: &mut Vec<Bitstring>,
            limit: usize,
        ) -> Result<()> {
            if site == transfers.len() {
                if out.len() >= limit {
                    return Err(Error::TooLarge(format!("support exceeds {limit} bitstrings")));
                }
                out.push(Bitstring::new(bits.clone())?);
                return Ok(());
            }
            for b in 0..2u8 {
                if let Some((right, _)) = &transfers[site][sector][b as usize] {
                    bits[site] = b;
                    dfs(site + 1, *right, transfers, bits, out, limit)?;
                }
            }
            Ok(())
        }
        dfs(0, 0, &transfers, &mut bits, &mut out, limit)?;
        Ok(out)
    }

    /// Bitstrings with |Ψ(x)|²/Z above `rel_tol`, found by walking the
    /// structural support.
    pub fn support(&self, limit: usize, rel_tol: f64) -> Result<Vec<Bitstring>> {
        let z = self.partition_function();
        let mut out = Vec::new();
        for x in self.structural_support(limit)? {
            let a = self.amplitude(&x)?;
            if a * a > rel_tol * z {
                out.push(x);
            }
        }
        Ok(out)
    }

    /// The MPS whose unnormalised amplitudes are Ψ_a + Ψ_b, in canonical form
    /// with the centre at the last site.
    pub fn direct_sum(a: &SymMps, b: &SymMps) -> Result<SymMps> {
        if a.num_sites() != b.num_sites() {
            return Err(Error::InvalidArgument("direct sum of chains with different lengths".into()));
        }
        if a.flux != b.flux {
            return Err(Error::FluxMismatch(format!("{} vs {}", a.flux, b.flux)));
        }
        if a.site_charges != b.site_charges {
            return Err(Error::SectorMismatch("site charges differ".into()));
        }
        let n = a.num_sites();
        let mut a = a.clone();
        let mut b = b.clone();
        a.shift_center(n - 1)?;
        b.shift_center(n - 1)?;
        let mut tensors = Vec::with_capacity(n);
        for i in 0..n {
            let summed: Vec<usize> = match (i == 0, i == n - 1) {
                (true, true) => vec![],
                (true, false) => vec![2],
                (false, true) => vec![0],
                (false, false) => vec![0, 2],
            };
            tensors.push(BlockTensor::direct_sum(&a.tensors[i], &b.tensors[i], &summed)?);
        }
        let mut out = SymMps::from_tensors(tensors, a.site_charges.clone(), n - 1)?;
        out.canonicalize()?;
        Ok(out)
    }

    /// Dense state vector over all 2^N bitstrings (index = bits read as a
    /// binary number, site 0 most significant). Small N only.
    pub fn dense_amplitudes(&self) -> Result<Vec<f64>> {
        let n = self.num_sites();
        if n > 24 {
            return Err(Error::TooLarge(format!("2^{n} amplitudes")));
        }
        (0..1u64 << n).map(|k| self.amplitude(&Bitstring::from_index(k, n))).collect()
    }
}

/// Block reached from `left_sector` through `site_sector`, with its right sector.
pub(crate) fn lookup(t: &BlockTensor, left_sector: usize, site_sector: usize) -> Option<(usize, &ArrayD<f64>)> {
    let lc = &t.index(0).sector(left_sector).charge;
    let sc = &t.index(1).sector(site_sector).charge;
    // flux + left = site + right
    let rc = t.flux().fuse(lc).ok()?.sub(sc).ok()?;
    let right = t.index(2).find(&rc)?;
    t.block(&[left_sector, site_sector, right]).map(|b| (right, b))
}

/// Block reached from `right_sector` through `site_sector`, with its left sector.
pub(crate) fn lookup_from_right(t: &BlockTensor, right_sector: usize, site_sector: usize) -> Option<(usize, &ArrayD<f64>)> {
    let rc = &t.index(2).sector(right_sector).charge;
    let sc = &t.index(1).sector(site_sector).charge;
    let lc = sc.fuse(rc).ok()?.sub(t.flux()).ok()?;
    let left = t.index(0).find(&lc)?;
    t.block(&[left, site_sector, right_sector]).map(|b| (left, b))
}

fn site_transfer(t: &BlockTensor, map: &SiteMap) -> SiteTransfer {
    (0..t.index(0).num_sectors())
        .map(|sl| {
            let mk = |bit: usize| {
                let (s, o) = map[bit];
                lookup(t, sl, s).map(|(sr, block)| (sr, block.index_axis(Axis(1), o).to_owned().into_dimensionality().unwrap()))
            };
            [mk(0), mk(1)]
        })
        .collect()
}

/// Builds a site tensor from explicit `(left charge, bit, right charge) → value`
/// entries with degeneracy-1 link sectors.
pub(crate) fn skeleton_tensor(
    left: &ChargedIndex,
    phys: &ChargedIndex,
    map: &SiteMap,
    right: &ChargedIndex,
    flux: Charge,
    entries: &[(usize, usize, usize, f64)],
) -> Result<BlockTensor> {
    let mut t = BlockTensor::zeros(vec![left.clone(), phys.clone(), right.clone()], flux)?;
    for &(sl, bit, sr, value) in entries {
        let (s, o) = map[bit];
        let key = vec![sl, s, sr];
        if t.block(&key).is_none() {
            let shape = t.block_shape(&key);
            if !t.is_allowed(&key) {
                return Err(Error::SectorMismatch(format!("skeleton entry {key:?} violates conservation")));
            }
            t.insert_unchecked(key.clone(), ArrayD::zeros(IxDyn(&shape)));
        }
        let block = t.block_mut(&key).unwrap();
        block[[0, o, 0]] = value;
    }
    Ok(t)
}
