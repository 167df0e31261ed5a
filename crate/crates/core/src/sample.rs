//! Perfect sampling and generalisation metrics.
//!
//! Bits are drawn left to right from exact conditional marginals. With the
//! left vector `v` of the prefix drawn so far and the right environment `E`
//! of the remaining sites, `P(x_i = b | prefix) ∝ (v M_i^b) E (v M_i^b)^T`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bitstring::Bitstring;
use crate::constraints::{ConstraintSystem, SeedSet};
use crate::error::{Error, Result};
use crate::mps::{SiteTransfer, SymMps};

/// Precomputed transfer tables and right environments for repeated draws.
#[derive(Clone, Debug)]
pub struct Sampler {
    transfers: Vec<SiteTransfer>,
    envs: Vec<Vec<Array2<f64>>>,
}

impl Sampler {
    pub fn new(mps: &SymMps) -> Result<Self> {
        let envs = mps.right_environments();
        let z = envs[0][0][[0, 0]];
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::DegenerateModel);
        }
        Ok(Sampler { transfers: mps.transfers(), envs })
    }

    pub fn num_sites(&self) -> usize {
        self.transfers.len()
    }

    /// One exact draw from `|Ψ(x)|² / Z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Bitstring {
        let n = self.num_sites();
        let mut bits = vec![0u8; n];
        let mut sector = 0usize;
        let mut v = Array1::from_elem(1, 1.0);
        for (i, bit) in bits.iter_mut().enumerate() {
            let mut cand: [Option<(usize, Array1<f64>, f64)>; 2] = [None, None];
            for (b, slot) in cand.iter_mut().enumerate() {
                if let Some((sr, m)) = &self.transfers[i][sector][b] {
                    let w = v.dot(m);
                    let p = w.dot(&self.envs[i + 1][*sr].dot(&w)).max(0.0);
                    *slot = Some((*sr, w, p));
                }
            }
            let p0 = cand[0].as_ref().map_or(0.0, |c| c.2);
            let p1 = cand[1].as_ref().map_or(0.0, |c| c.2);
            let choice = if p1 <= 0.0 {
                0
            } else if p0 <= 0.0 {
                1
            } else {
                (rng.random::<f64>() * (p0 + p1) >= p0) as usize
            };
            let (sr, w, p) = cand[choice].take().expect("a conditional with positive mass exists");
            // Rescaling keeps the vector O(1); conditionals are ratios.
            v = w / p.sqrt().max(f64::MIN_POSITIVE);
            sector = sr;
            *bit = choice as u8;
        }
        Bitstring::new(bits).expect("bits are 0/1")
    }
}

/// One draw from the model.
pub fn sample<R: Rng + ?Sized>(mps: &SymMps, rng: &mut R) -> Result<Bitstring> {
    Ok(Sampler::new(mps)?.sample(rng))
}

/// The per-sample generator: stream `index` of the seed's ChaCha8 key.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `Q` independent draws with multiplicities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleBatch {
    /// Draws in substream order.
    pub bitstrings: Vec<Bitstring>,
    pub counts: BTreeMap<Bitstring, usize>,
    pub rng_seed: u64,
}

impl SampleBatch {
    pub fn from_draws(bitstrings: Vec<Bitstring>, rng_seed: u64) -> Self {
        let mut counts = BTreeMap::new();
        for x in &bitstrings {
            *counts.entry(x.clone()).or_insert(0) += 1;
        }
        SampleBatch { bitstrings, counts, rng_seed }
    }

    pub fn len(&self) -> usize {
        self.bitstrings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bitstrings.is_empty()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

/// Draws `q` samples; sample `k` uses [`substream`]`(seed, k)`, so the batch
/// does not depend on the number of worker threads.
pub fn sample_batch(mps: &SymMps, q: usize, seed: u64) -> Result<SampleBatch> {
    if q == 0 {
        return Ok(SampleBatch::from_draws(Vec::new(), seed));
    }
    let sampler = Sampler::new(mps)?;
    let draws: Vec<Bitstring> =
        (0..q as u64).into_par_iter().map(|k| sampler.sample(&mut substream(seed, k))).collect();
    Ok(SampleBatch::from_draws(draws, seed))
}

/// Number of distinct sampled bitstrings that are valid and not seeds.
pub fn g_sol(batch: &SampleBatch, seeds: &SeedSet, cs: &ConstraintSystem) -> usize {
    batch.counts.keys().filter(|x| cs.is_satisfied(x) && !seeds.contains(x)).count()
}

/// `|g_sol| / (|S| − |T|)`.
pub fn coverage(gsol: usize, s_size: usize, t_size: usize) -> Result<f64> {
    if s_size <= t_size {
        return Err(Error::InvalidArgument(format!("solution space {s_size} is not larger than the seed set {t_size}")));
    }
    Ok(gsol as f64 / (s_size - t_size) as f64)
}

/// Mean of the lowest `⌈0.05·n⌉` costs (at least one).
pub fn utility(costs: &[f64]) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::InvalidArgument("utility of an empty batch".into()));
    }
    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((0.05 * costs.len() as f64).ceil() as usize).max(1);
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// `Σ p(x) log(p(x) / P_model(x))` for an explicit target distribution.
/// The target must be normalised and lie inside the model support.
pub fn kl_divergence(mps: &SymMps, target: &[(Bitstring, f64)]) -> Result<f64> {
    let total: f64 = target.iter().map(|(_, p)| *p).sum();
    if target.iter().any(|(_, p)| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("target is not a probability distribution".into()));
    }
    let z = mps.partition_function();
    if !(z > 0.0) {
        return Err(Error::DegenerateModel);
    }
    let mut kl = 0.0;
    for (x, p) in target {
        if *p == 0.0 {
            continue;
        }
        let q = mps.amplitude(x)?.powi(2) / z;
        if q == 0.0 {
            return Err(Error::ZeroAmplitude(x.to_string()));
        }
        kl += p * (p / q).ln();
    }
    Ok(kl.max(0.0))
}
