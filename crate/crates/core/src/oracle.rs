//! Independent ground truth: exhaustive enumeration, subset-sum solvers,
//! degeneracy counting for the negative-separation cost, random search and
//! a dense tensor reference.

use std::collections::HashSet;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;

use crate::bitstring::Bitstring;
use crate::constraints::{ConstraintSystem, SeedSet};
use crate::error::{Error, Result};

pub const MAX_ENUMERATE_SITES: usize = 26;
pub const MAX_MITM_SITES: usize = 40;

/// Solutions of a constraint system, sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolutionSet {
    pub bitstrings: Vec<Bitstring>,
    /// True when every solution is listed.
    pub complete: bool,
}

impl SolutionSet {
    pub fn len(&self) -> usize {
        self.bitstrings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bitstrings.is_empty()
    }
}

/// Every `x ∈ {0,1}^N` with `A·x = b`, by a sharded sweep of all `2^N`.
pub fn enumerate_solutions(cs: &ConstraintSystem) -> Result<SolutionSet> {
    let n = cs.num_sites();
    if n > MAX_ENUMERATE_SITES {
        return Err(Error::TooLarge(format!("enumeration over 2^{n} bitstrings")));
    }
    let cols: Vec<Vec<i64>> = (0..n).map(|i| cs.column(i).map(|c| c.entries().to_vec())).collect::<Result<_>>()?;
    let rhs = cs.rhs().to_vec();
    let m = rhs.len();
    let hits: Vec<u64> = (0..1u64 << n)
        .into_par_iter()
        .filter(|&k| {
            let mut acc = vec![0i64; m];
            for (i, col) in cols.iter().enumerate() {
                if (k >> (n - 1 - i)) & 1 == 1 {
                    for (a, c) in acc.iter_mut().zip(col) {
                        *a += c;
                    }
                }
            }
            acc == rhs
        })
        .collect();
    Ok(SolutionSet { bitstrings: hits.into_iter().map(|k| Bitstring::from_index(k, n)).collect(), complete: true })
}

fn half_sums(a: &[i64]) -> Vec<(i64, u64)> {
    let k = a.len();
    (0..1u64 << k)
        .map(|mask| {
            let s = (0..k).filter(|&i| (mask >> (k - 1 - i)) & 1 == 1).map(|i| a[i]).sum();
            (s, mask)
        })
        .collect()
}

/// Solutions of `a·x = b` by meet in the middle: enumerate both halves and
/// match complementary sums in the sorted right half. Fails when more than
/// `limit` solutions exist.
pub fn solve_single_equality_mitm(a: &[i64], b: i64, limit: usize) -> Result<SolutionSet> {
    let n = a.len();
    if n == 0 || n > MAX_MITM_SITES {
        return Err(Error::TooLarge(format!("meet in the middle supports 1..={MAX_MITM_SITES} sites, got {n}")));
    }
    let h = n / 2;
    let left = half_sums(&a[..h]);
    let mut right = half_sums(&a[h..]);
    right.sort_unstable();
    let r = n - h;
    let mut out = Vec::new();
    for &(s, lm) in &left {
        let target = b - s;
        let start = right.partition_point(|&(v, _)| v < target);
        for &(v, rm) in &right[start..] {
            if v != target {
                break;
            }
            if out.len() >= limit {
                return Err(Error::TooLarge(format!("more than {limit} solutions")));
            }
            out.push(Bitstring::from_index((lm << r) | rm, n));
        }
    }
    out.sort();
    Ok(SolutionSet { bitstrings: out, complete: true })
}

/// Number of solutions of `a·x = b` by meet in the middle, without listing.
pub fn count_single_equality_mitm(a: &[i64], b: i64) -> Result<u64> {
    let n = a.len();
    if n == 0 || n > MAX_MITM_SITES {
        return Err(Error::TooLarge(format!("meet in the middle supports 1..={MAX_MITM_SITES} sites, got {n}")));
    }
    let h = n / 2;
    let left = half_sums(&a[..h]);
    let mut right: Vec<i64> = half_sums(&a[h..]).into_iter().map(|(s, _)| s).collect();
    right.sort_unstable();
    Ok(left
        .iter()
        .map(|&(s, _)| {
            let t = b - s;
            (right.partition_point(|&v| v <= t) - right.partition_point(|&v| v < t)) as u64
        })
        .sum())
}

/// Counts solutions of `a·x = b` (non-negative `a`, `b`) by dynamic
/// programming over partial sums `0..=b` in `O(N·b)`. With `list_limit`,
/// also reconstructs up to that many solutions in lexicographic order.
pub fn solve_single_equality_dp(a: &[i64], b: i64, list_limit: Option<usize>) -> Result<(BigUint, Option<SolutionSet>)> {
    if let Some(&neg) = a.iter().find(|&&v| v < 0) {
        return Err(Error::InvalidArgument(format!("dynamic programming needs non-negative coefficients, got {neg}")));
    }
    if b < 0 {
        return Ok((BigUint::zero(), list_limit.map(|_| SolutionSet { bitstrings: Vec::new(), complete: true })));
    }
    let n = a.len();
    let width = usize::try_from(b).map_err(|_| Error::TooLarge("right-hand side".into()))? + 1;
    // ways[i][s]: completions of sites i.. reaching remaining sum s.
    let mut ways = vec![vec![BigUint::zero(); width]; n + 1];
    ways[n][0] = BigUint::one();
    for i in (0..n).rev() {
        let ai = a[i] as usize;
        for s in 0..width {
            let mut w = ways[i + 1][s].clone();
            if ai <= s {
                w += &ways[i + 1][s - ai];
            }
            ways[i][s] = w;
        }
    }
    let count = ways[0][width - 1].clone();
    let listed = list_limit.map(|limit| {
        let mut out = Vec::new();
        let mut bits = vec![0u8; n];
        fn walk(
            i: usize,
            s: usize,
            a: &[i64],
            ways: &[Vec<BigUint>],
            bits: &mut Vec<u8>,
            out: &mut Vec<Bitstring>,
            limit: usize,
        ) -> bool {
            if out.len() >= limit {
                return false;
            }
            if i == a.len() {
                out.push(Bitstring::new(bits.clone()).expect("bits are binary"));
                return true;
            }
            let mut complete = true;
            if !ways[i + 1][s].is_zero() {
                bits[i] = 0;
                complete &= walk(i + 1, s, a, ways, bits, out, limit);
            }
            let ai = a[i] as usize;
            if ai <= s && !ways[i + 1][s - ai].is_zero() {
                bits[i] = 1;
                complete &= walk(i + 1, s - ai, a, ways, bits, out, limit);
                bits[i] = 0;
            }
            complete
        }
        let complete = count.is_zero() || walk(0, width - 1, a, &ways, &mut bits, &mut out, limit);
        SolutionSet { complete: complete && BigUint::from(out.len()) == count, bitstrings: out }
    });
    Ok((count, listed))
}

fn binomial(n: i64, k: i64) -> BigUint {
    if k < 0 || n < 0 || k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from((n - i) as u64) / BigUint::from((i + 1) as u64);
    }
    acc
}

fn check_degeneracy_args(a: i64, kappa: i64, n: i64) -> Result<()> {
    if a < 0 || kappa < 0 || kappa > n || 2 * a >= n - kappa {
        return Err(Error::Precondition(format!("need a ≥ 0, 0 ≤ κ ≤ N and 2a < N − κ (a={a}, κ={kappa}, N={n})")));
    }
    Ok(())
}

/// The two-branch binomial-sum formula for the number of weight-κ
/// bitstrings with negative-separation cost `−N + κ + a − 1`, evaluated
/// term by term as written. It triple counts at `a = 0`, where it returns
/// `3(κ − 1)`; see [`degeneracy_count`].
pub fn degeneracy_count_as_printed(a: i64, kappa: i64, n: i64) -> Result<BigUint> {
    check_degeneracy_args(a, kappa, n)?;
    let two = BigUint::from(2u32);
    let mut total = BigUint::zero();
    for i in a..=kappa + a - 2 {
        total += &two * binomial(i, a);
    }
    let j_max = if a % 2 == 1 { (a - 1) / 2 } else { a / 2 - 1 };
    for j in 1..=j_max {
        for i in a - j..=kappa + a - 2 - j {
            total += &two * binomial(i, a - j) * binomial(kappa + a - 2 - i, j);
        }
    }
    if a % 2 == 0 {
        let h = a / 2;
        for i in h..=kappa - 2 + h {
            total += binomial(i, h) * binomial(kappa + a - 2 - i, h);
        }
    }
    Ok(total)
}

/// Number of weight-κ bitstrings of length N whose negative-separation
/// cost is `−N + κ + a − 1`, for `2a < N − κ`. Agrees with
/// [`degeneracy_count_as_printed`] for `a ≥ 1`; at `a = 0` it returns the
/// `κ − 1` minimum-cost strings.
pub fn degeneracy_count(a: i64, kappa: i64, n: i64) -> Result<BigUint> {
    check_degeneracy_args(a, kappa, n)?;
    if a == 0 {
        return Ok(BigUint::from((kappa - 1).max(0) as u64));
    }
    degeneracy_count_as_printed(a, kappa, n)
}

/// `count / (N choose κ)` as a float.
pub fn degeneracy_ratio(count: &BigUint, n: i64, kappa: i64) -> f64 {
    let total = binomial(n, kappa);
    // Scale down to keep both within f64 range.
    let bits = total.bits().saturating_sub(60);
    let num = (count >> bits).to_f64().unwrap_or(f64::INFINITY);
    let den = (&total >> bits).to_f64().unwrap_or(f64::INFINITY);
    num / den
}

/// Uniformly random bitstrings filtered by the constraints, deduplicated,
/// using `budget` draws.
pub fn random_valid_search<R: Rng + ?Sized>(cs: &ConstraintSystem, budget: usize, rng: &mut R) -> Result<SeedSet> {
    let n = cs.num_sites();
    let mut seen = HashSet::new();
    let mut found = Vec::new();
    for _ in 0..budget {
        let x = Bitstring::new((0..n).map(|_| rng.random_range(0..2u8)).collect())?;
        if cs.is_satisfied(&x) && seen.insert(x.clone()) {
            found.push(x);
        }
    }
    SeedSet::new(cs, found)
}

/// Plain dense tensor routines used as a reference for the block-sparse
/// kernels.
pub mod dense {
    use nalgebra::DMatrix;
    use ndarray::{Array2, ArrayD, IxDyn};

    use crate::error::{Error, Result};

    fn unravel(mut k: usize, shape: &[usize]) -> Vec<usize> {
        let mut idx = vec![0; shape.len()];
        for d in (0..shape.len()).rev() {
            idx[d] = k % shape[d];
            k /= shape[d];
        }
        idx
    }

    /// Sums over the paired legs by explicit loops. Result legs are `a`'s
    /// free legs followed by `b`'s.
    pub fn contract(a: &ArrayD<f64>, b: &ArrayD<f64>, pairs: &[(usize, usize)]) -> Result<ArrayD<f64>> {
        for &(i, j) in pairs {
            if a.shape()[i] != b.shape()[j] {
                return Err(Error::Shape(format!("contracted legs {i} and {j} differ in size")));
            }
        }
        let a_free: Vec<usize> = (0..a.ndim()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
        let b_free: Vec<usize> = (0..b.ndim()).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
        let sum_shape: Vec<usize> = pairs.iter().map(|&(i, _)| a.shape()[i]).collect();
        let out_shape: Vec<usize> =
            a_free.iter().map(|&i| a.shape()[i]).chain(b_free.iter().map(|&j| b.shape()[j])).collect();
        let sum_len: usize = sum_shape.iter().product();
        let mut out = ArrayD::zeros(IxDyn(&out_shape));
        let mut ia = vec![0; a.ndim()];
        let mut ib = vec![0; b.ndim()];
        for (k, v) in out.iter_mut().enumerate() {
            let o = unravel(k, &out_shape);
            for (p, &i) in a_free.iter().enumerate() {
                ia[i] = o[p];
            }
            for (p, &j) in b_free.iter().enumerate() {
                ib[j] = o[a_free.len() + p];
            }
            let mut acc = 0.0;
            for s in 0..sum_len {
                let si = unravel(s, &sum_shape);
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    ia[i] = si[p];
                    ib[j] = si[p];
                }
                acc += a[IxDyn(&ia)] * b[IxDyn(&ib)];
            }
            *v = acc;
        }
        Ok(out)
    }

    /// Row-major matricisation after moving `row_legs` to the front.
    pub fn matricize(a: &ArrayD<f64>, row_legs: &[usize]) -> Array2<f64> {
        let col_legs: Vec<usize> = (0..a.ndim()).filter(|l| !row_legs.contains(l)).collect();
        let rows: usize = row_legs.iter().map(|&l| a.shape()[l]).product();
        let cols: usize = col_legs.iter().map(|&l| a.shape()[l]).product();
        let mut m = Array2::zeros((rows, cols));
        for (idx, &v) in a.indexed_iter() {
            let r = row_legs.iter().fold(0, |acc, &l| acc * a.shape()[l] + idx[l]);
            let c = col_legs.iter().fold(0, |acc, &l| acc * a.shape()[l] + idx[l]);
            m[[r, c]] = v;
        }
        m
    }

    /// Singular values of a matrix, descending.
    pub fn singular_values(m: &Array2<f64>) -> Vec<f64> {
        let (r, c) = m.dim();
        let mat = DMatrix::from_fn(r, c, |i, j| m[[i, j]]);
        let mut s: Vec<f64> = mat.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Block-diagonal embedding along the `summed` legs: `a` at offset 0,
    /// `b` after it. Other legs must agree in size.
    pub fn direct_sum(a: &ArrayD<f64>, b: &ArrayD<f64>, summed: &[usize]) -> Result<ArrayD<f64>> {
        if a.ndim() != b.ndim() {
            return Err(Error::Shape("rank mismatch".into()));
        }
        let mut shape = a.shape().to_vec();
        for l in 0..a.ndim() {
            if summed.contains(&l) {
                shape[l] += b.shape()[l];
            } else if a.shape()[l] != b.shape()[l] {
                return Err(Error::Shape(format!("leg {l} differs")));
            }
        }
        let mut out = ArrayD::zeros(IxDyn(&shape));
        for (idx, &v) in a.indexed_iter() {
            out[idx] = v;
        }
        for (idx, &v) in b.indexed_iter() {
            let mut j: Vec<usize> = (0..b.ndim()).map(|d| idx[d]).collect();
            for &l in summed {
                j[l] += a.shape()[l];
            }
            out[IxDyn(&j)] = v;
        }
        Ok(out)
    }

    /// Amplitudes of a chain of dense rank-3 tensors `(left, site, right)`
    /// over all `2^N` bitstrings (site 0 most significant). `bit_offsets[i]`
    /// gives the dense site position of bits 0 and 1.
    pub fn chain_amplitudes(tensors: &[ArrayD<f64>], bit_offsets: &[[usize; 2]]) -> Vec<f64> {
        let n = tensors.len();
        (0..1usize << n)
            .map(|k| {
                let mut v = vec![1.0];
                for (i, t) in tensors.iter().enumerate() {
                    let bit = (k >> (n - 1 - i)) & 1;
                    let o = bit_offsets[i][bit];
                    let dr = t.shape()[2];
                    let mut next = vec![0.0; dr];
                    for (a, va) in v.iter().enumerate() {
                        for (bb, nb) in next.iter_mut().enumerate() {
                            *nb += va * t[[a, o, bb]];
                        }
                    }
                    v = next;
                }
                v[0]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force negative-separation cost used only by these tests.
    fn separation(k: u64, n: usize) -> i64 {
        let ones: Vec<usize> = (0..n).filter(|i| (k >> (n - 1 - i)) & 1 == 1).collect();
        -(ones.windows(2).map(|w| (w[1] - w[0]) as i64).max().unwrap_or(0))
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_solutions(&ConstraintSystem::cardinality(6, 3).unwrap()).unwrap().len(), 20);
        assert_eq!(enumerate_solutions(&ConstraintSystem::cardinality(12, 5).unwrap()).unwrap().len(), 792);
        assert!(enumerate_solutions(&ConstraintSystem::cardinality(6, 7).unwrap()).unwrap().is_empty());
        assert!(enumerate_solutions(&ConstraintSystem::cardinality(27, 3).unwrap()).is_err());
    }

    #[test]
    fn mitm_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<i64> = (0..16).map(|_| rng.random_range(-5..=5)).collect();
            let b = rng.random_range(-8..=8);
            let cs = ConstraintSystem::new(vec![a.clone()], vec![b]).unwrap();
            let brute = enumerate_solutions(&cs).unwrap();
            let mitm = solve_single_equality_mitm(&a, b, usize::MAX).unwrap();
            assert_eq!(mitm, brute);
            assert_eq!(count_single_equality_mitm(&a, b).unwrap(), brute.len() as u64);
        }
        assert_eq!(solve_single_equality_mitm(&[0; 12], 0, usize::MAX).unwrap().len(), 4096);
        assert_eq!(count_single_equality_mitm(&[1; 20], 7).unwrap(), 77520);
        assert!(solve_single_equality_mitm(&[0; 12], 0, 10).is_err());
    }

    #[test]
    fn dp_matches_mitm() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a: Vec<i64> = (0..20).map(|_| rng.random_range(0..=6)).collect();
            let b = rng.random_range(0..=30);
            let (count, listed) = solve_single_equality_dp(&a, b, Some(usize::MAX)).unwrap();
            let mitm = solve_single_equality_mitm(&a, b, usize::MAX).unwrap();
            assert_eq!(count, BigUint::from(mitm.len()));
            assert_eq!(listed.unwrap(), mitm);
        }
        let (c, l) = solve_single_equality_dp(&[1, 2, 3], 3, Some(10)).unwrap();
        assert_eq!(c, BigUint::from(2u32));
        let l: Vec<String> = l.unwrap().bitstrings.iter().map(|x| x.to_string()).collect();
        assert_eq!(l, vec!["001", "110"]);
        assert_eq!(solve_single_equality_dp(&[3, 4, 5], 0, None).unwrap().0, BigUint::one());
        assert!(solve_single_equality_dp(&[1, -1], 0, None).is_err());
        let (_, partial) = solve_single_equality_dp(&[0; 10], 0, Some(5)).unwrap();
        assert!(!partial.unwrap().complete);
    }

    #[test]
    fn degeneracy_matches_brute_force() {
        for n in [10usize, 12] {
            let mut buckets = std::collections::HashMap::<(i64, i64), u64>::new();
            for k in 0..1u64 << n {
                *buckets.entry((k.count_ones() as i64, separation(k, n))).or_default() += 1;
            }
            let n = n as i64;
            for kappa in 0..=n {
                for a in 0.. {
                    if 2 * a >= n - kappa {
                        break;
                    }
                    let cost = -n + kappa + a - 1;
                    let brute = buckets.get(&(kappa, cost)).copied().unwrap_or(0);
                    assert_eq!(degeneracy_count(a, kappa, n).unwrap(), BigUint::from(brute), "a={a} κ={kappa} N={n}");
                }
            }
        }
    }

    #[test]
    fn printed_formula_triple_counts_at_zero() {
        assert_eq!(degeneracy_count(0, 25, 50).unwrap(), BigUint::from(24u32));
        assert_eq!(degeneracy_count_as_printed(0, 25, 50).unwrap(), BigUint::from(72u32));
        assert_eq!(degeneracy_count_as_printed(3, 6, 14).unwrap(), degeneracy_count(3, 6, 14).unwrap());
        assert!(degeneracy_count(5, 6, 16).is_err());
    }

    #[test]
    fn half_filling_ratio_is_order_1e_minus_7() {
        let c = degeneracy_count(6, 25, 50).unwrap();
        assert_eq!(c, BigUint::from(14_250_600u64));
        let r = degeneracy_ratio(&c, 50, 25);
        assert!((1e-7..1e-6).contains(&r), "{r}");
    }

    #[test]
    fn random_search_finds_valid_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cs = ConstraintSystem::cardinality(10, 5).unwrap();
        let seeds = random_valid_search(&cs, 100_000, &mut rng).unwrap();
        assert!(seeds.len() >= 100);
        assert!(seeds.bitstrings().iter().all(|x| cs.is_satisfied(x)));
        let infeasible = ConstraintSystem::cardinality(10, 11).unwrap();
        assert!(random_valid_search(&infeasible, 1000, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn dense_reference_basics() {
        use ndarray::{ArrayD, IxDyn};
        let a = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4]), |i| (i[0] * 12 + i[1] * 4 + i[2]) as f64);
        let eye = ArrayD::from_shape_fn(IxDyn(&[4, 4]), |i| if i[0] == i[1] { 1.0 } else { 0.0 });
        assert_eq!(dense::contract(&a, &eye, &[(2, 0)]).unwrap(), a);
        let z = ArrayD::zeros(IxDyn(&[2, 3, 1]));
        let s = dense::direct_sum(&a, &z, &[2]).unwrap();
        assert_eq!(s.shape(), &[2, 3, 5]);
        let m = dense::matricize(&a, &[0]);
        assert_eq!(m.dim(), (2, 12));
        assert_eq!(m[[1, 5]], a[[1, 1, 1]]);
    }
}
