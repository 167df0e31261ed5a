//! Two-site gradient training of the Born machine on a weighted data set.
//!
//! The loss is `L = −Σ_x p(x) log(Ψ(x)² / Z)`. At a merged two-site tensor
//! `Θ` in canonical form `Z = ‖Θ‖²`, so
//!
//! ```text
//! ∂L/∂Θ = 2Θ/Z − 2 Σ_x p(x) Ψ'(x)/Ψ(x),   Ψ'(x) = L(x) ⊗ e_{x_i} ⊗ e_{x_{i+1}} ⊗ R(x)
//! ```
//!
//! where `L(x)` and `R(x)` are the environment vectors of `x` on the outer
//! links of the pair.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Axis, Ix2};

use crate::bitstring::Bitstring;
use crate::block::{BlockTensor, FluxSide, Truncation};
use crate::error::{Error, Result};
use crate::mps::{lookup, lookup_from_right, SiteMap, SymMps};

/// Empirical distribution over bitstrings, duplicates merged.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTrainingSet {
    items: Vec<(Bitstring, f64)>,
    temperature: Option<f64>,
}

impl WeightedTrainingSet {
    /// Merges duplicate bitstrings, drops zero weights and normalises to 1.
    /// Items are kept in lexicographic order.
    pub fn new(items: impl IntoIterator<Item = (Bitstring, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<Bitstring, f64> = BTreeMap::new();
        for (x, w) in items {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("weight {w} for {x} is not a finite non-negative number")));
            }
            *merged.entry(x).or_default() += w;
        }
        let total: f64 = merged.values().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("training set has no positive weight".into()));
        }
        let items = merged.into_iter().filter(|(_, w)| *w > 0.0).map(|(x, w)| (x, w / total)).collect();
        Ok(WeightedTrainingSet { items, temperature: None })
    }

    /// Weights proportional to multiplicity.
    pub fn uniform(bitstrings: impl IntoIterator<Item = Bitstring>) -> Result<Self> {
        WeightedTrainingSet::new(bitstrings.into_iter().map(|x| (x, 1.0)))
    }

    /// Weights `∝ exp(−C(x)/T)`.
    pub fn softmax(samples: &[(Bitstring, f64)], temperature: f64) -> Result<Self> {
        let costs: Vec<f64> = samples.iter().map(|(_, c)| *c).collect();
        let w = softmax_weights(&costs, temperature)?;
        let mut ts = WeightedTrainingSet::new(samples.iter().map(|(x, _)| x.clone()).zip(w))?;
        ts.temperature = Some(temperature);
        Ok(ts)
    }

    pub fn items(&self) -> &[(Bitstring, f64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn temperature(&self) -> Option<f64> {
        self.temperature
    }

    /// Shannon entropy of the weights, the lower bound of the NLL.
    pub fn entropy(&self) -> f64 {
        -self.items.iter().map(|(_, w)| w * w.ln()).sum::<f64>()
    }
}

/// `exp(−c/T)` normalised, computed with a max-shift.
pub fn softmax_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("costs must be finite".into()));
    }
    let shift = costs.iter().map(|c| -c / temperature).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = costs.iter().map(|c| (-c / temperature - shift).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub chi_max: usize,
    pub sweeps: usize,
    pub cutoff: f64,
    pub inner_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.02, chi_max: 30, sweeps: 1, cutoff: 0.0, inner_steps: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be finite and non-negative".into()));
        }
        if self.chi_max < 1 || self.sweeps < 1 || self.inner_steps < 1 {
            return Err(Error::InvalidArgument("chi_max, sweeps and inner_steps must be positive".into()));
        }
        if !(self.cutoff >= 0.0) {
            return Err(Error::InvalidArgument("cutoff must be non-negative".into()));
        }
        Ok(())
    }

    fn truncation(&self) -> Truncation {
        Truncation::new(self.chi_max, self.cutoff)
    }
}

/// `−Σ w(x) log(Ψ(x)²/Z)`; fails on a zero-amplitude item.
pub fn nll(mps: &SymMps, ts: &WeightedTrainingSet) -> Result<f64> {
    let z = mps.partition_function();
    if !(z > 0.0) {
        return Err(Error::DegenerateModel);
    }
    let mut loss = 0.0;
    for (x, w) in ts.items() {
        let a = mps.amplitude(x)?;
        if a == 0.0 {
            return Err(Error::ZeroAmplitude(x.to_string()));
        }
        loss -= w * (a * a / z).ln();
    }
    Ok(loss)
}

/// Environment vector on one link: sector position and its components.
type EnvVector = (usize, Array1<f64>);

fn step_right(t: &BlockTensor, map: &SiteMap, v: &EnvVector, bit: u8) -> Option<EnvVector> {
    let (s, o) = map[bit as usize];
    let (sr, block) = lookup(t, v.0, s)?;
    let mat = block.index_axis(Axis(1), o).into_dimensionality::<Ix2>().ok()?;
    Some((sr, v.1.dot(&mat)))
}

fn step_left(t: &BlockTensor, map: &SiteMap, v: &EnvVector, bit: u8) -> Option<EnvVector> {
    let (s, o) = map[bit as usize];
    let (sl, block) = lookup_from_right(t, v.0, s)?;
    let mat = block.index_axis(Axis(1), o).into_dimensionality::<Ix2>().ok()?;
    Some((sl, mat.dot(&v.1)))
}

fn boundary() -> EnvVector {
    (0, Array1::ones(1))
}

/// Left vectors of `x` on the left link of every site (`N + 1` entries).
fn left_vectors(mps: &SymMps, x: &Bitstring) -> Vec<Option<EnvVector>> {
    let mut out = Vec::with_capacity(mps.num_sites() + 1);
    out.push(Some(boundary()));
    for i in 0..mps.num_sites() {
        let next = out[i].as_ref().and_then(|v| step_right(mps.tensor(i), &mps.site_map(i), v, x.get(i)));
        out.push(next);
    }
    out
}

/// Right vectors of `x`; entry `j` lives on the left link of site `j`,
/// contracted with sites `j..N`.
fn right_vectors(mps: &SymMps, x: &Bitstring) -> Vec<Option<EnvVector>> {
    let n = mps.num_sites();
    let mut out = vec![None; n + 1];
    out[n] = Some(boundary());
    for j in (0..n).rev() {
        out[j] = out[j + 1].as_ref().and_then(|v| step_left(mps.tensor(j), &mps.site_map(j), v, x.get(j)));
    }
    out
}

/// Data term and loss at a merged tensor.
struct PairGradient {
    gradient: BlockTensor,
    /// Items whose amplitude vanished at this pair.
    missing: Vec<usize>,
}

/// `∂L/∂Θ` for the merged tensor `theta` of sites `(i, i+1)`, given each
/// item's left vector on the left link of `i` and right vector on the right
/// link of `i+1`.
fn pair_gradient(
    theta: &BlockTensor,
    maps: [SiteMap; 2],
    ts: &WeightedTrainingSet,
    lefts: &[Option<EnvVector>],
    rights: &[Option<EnvVector>],
    i: usize,
) -> Result<PairGradient> {
    let z = theta.norm_sq();
    if !(z > 0.0) {
        return Err(Error::DegenerateModel);
    }
    let mut gradient = theta.clone();
    gradient.scale(2.0 / z);
    let mut missing = Vec::new();
    for (k, (x, w)) in ts.items().iter().enumerate() {
        let (Some(l), Some(r)) = (&lefts[k], &rights[k]) else {
            missing.push(k);
            continue;
        };
        let (s1, o1) = maps[0][x.get(i) as usize];
        let (s2, o2) = maps[1][x.get(i + 1) as usize];
        let key = [l.0, s1, s2, r.0];
        let Some(block) = theta.block(&key) else {
            missing.push(k);
            continue;
        };
        let mut psi = 0.0;
        for (a, &la) in l.1.iter().enumerate() {
            for (b, &rb) in r.1.iter().enumerate() {
                psi += la * block[[a, o1, o2, b]] * rb;
            }
        }
        if psi == 0.0 {
            missing.push(k);
            continue;
        }
        let g = gradient.block_mut(&key).expect("gradient shares the structure of theta");
        let scale = -2.0 * w / psi;
        for (a, &la) in l.1.iter().enumerate() {
            for (b, &rb) in r.1.iter().enumerate() {
                g[[a, o1, o2, b]] += scale * la * rb;
            }
        }
    }
    Ok(PairGradient { gradient, missing })
}

/// Gradient of the NLL with respect to the merged tensor of sites `i` and
/// `i+1`. The canonical centre must be one of the two sites.
pub fn gradient_two_site(mps: &SymMps, i: usize, ts: &WeightedTrainingSet) -> Result<BlockTensor> {
    if i + 1 >= mps.num_sites() {
        return Err(Error::OutOfRange { index: i, len: mps.num_sites().saturating_sub(1) });
    }
    if mps.center() != i && mps.center() != i + 1 {
        return Err(Error::Precondition(format!("centre {} is not on the pair ({i}, {})", mps.center(), i + 1)));
    }
    let theta = BlockTensor::merge_two_site(mps.tensor(i), mps.tensor(i + 1))?;
    let mut lefts = Vec::with_capacity(ts.len());
    let mut rights = Vec::with_capacity(ts.len());
    for (x, _) in ts.items() {
        if x.len() != mps.num_sites() {
            return Err(Error::BitstringLength { expected: mps.num_sites(), got: x.len() });
        }
        lefts.push(left_vectors(mps, x).swap_remove(i));
        rights.push(right_vectors(mps, x).swap_remove(i + 2));
    }
    let pg = pair_gradient(&theta, [mps.site_map(i), mps.site_map(i + 1)], ts, &lefts, &rights, i)?;
    if let Some(&k) = pg.missing.first() {
        return Err(Error::ZeroAmplitude(ts.items()[k].0.to_string()));
    }
    Ok(pg.gradient)
}

/// Applies `inner_steps` gradient steps to the merged tensor and splits it
/// back with truncation. Returns the new pair and the discarded weight.
#[allow(clippy::too_many_arguments)]
fn update_pair(
    mps: &SymMps,
    i: usize,
    ts: &WeightedTrainingSet,
    lefts: &[Option<EnvVector>],
    rights: &[Option<EnvVector>],
    cfg: &TrainConfig,
    side: FluxSide,
) -> Result<(BlockTensor, BlockTensor, usize)> {
    let mut theta = BlockTensor::merge_two_site(mps.tensor(i), mps.tensor(i + 1))?;
    let maps = [mps.site_map(i), mps.site_map(i + 1)];
    let mut skipped = 0;
    for _ in 0..cfg.inner_steps {
        let pg = pair_gradient(&theta, maps, ts, lefts, rights, i)?;
        skipped = skipped.max(pg.missing.len());
        theta.axpy(-cfg.learning_rate, &pg.gradient)?;
        let norm = theta.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!("merged tensor at site {i} lost its norm")));
        }
        theta.scale(1.0 / norm);
    }
    let split = theta.svd_split(&[0, 1], cfg.truncation(), side)?;
    let (mut left, mut right) = match side {
        FluxSide::Right => split.absorb_right(),
        FluxSide::Left => split.absorb_left(),
    };
    let center = if side == FluxSide::Right { &mut right } else { &mut left };
    let norm = center.norm();
    if !(norm > 0.0) {
        return Err(Error::Numerical(format!("truncation at site {i} removed the whole state")));
    }
    center.scale(1.0 / norm);
    Ok((left, right, skipped))
}

/// Outcome of one sweep.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub mps: SymMps,
    /// NLL after the sweep (`+∞` if some item lost all amplitude).
    pub nll: f64,
    /// Largest number of items with zero amplitude at any single update;
    /// those items do not contribute to that update's data term.
    pub skipped: usize,
}

/// One left-to-right and right-to-left pass of two-site updates.
pub fn sweep(mps: &SymMps, ts: &WeightedTrainingSet, cfg: &TrainConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if ts.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let n = mps.num_sites();
    for (x, _) in ts.items() {
        if x.len() != n {
            return Err(Error::BitstringLength { expected: n, got: x.len() });
        }
    }
    let mut mps = mps.clone();
    if n == 1 {
        let loss = nll(&mps, ts).unwrap_or(f64::INFINITY);
        return Ok(SweepResult { mps, nll: loss, skipped: 0 });
    }
    mps.shift_center(0)?;
    let mut skipped = 0;

    // Left to right: right vectors fixed, left vectors advanced.
    let rights_all: Vec<Vec<Option<EnvVector>>> = ts.items().iter().map(|(x, _)| right_vectors(&mps, x)).collect();
    let mut lefts: Vec<Option<EnvVector>> = vec![Some(boundary()); ts.len()];
    for i in 0..n - 1 {
        let rights: Vec<Option<EnvVector>> = rights_all.iter().map(|r| r[i + 2].clone()).collect();
        let (left, right, s) = update_pair(&mps, i, ts, &lefts, &rights, cfg, FluxSide::Right)?;
        skipped = skipped.max(s);
        mps.replace_pair(i, left, right, i + 1);
        let map = mps.site_map(i);
        for (k, (x, _)) in ts.items().iter().enumerate() {
            lefts[k] = lefts[k].as_ref().and_then(|v| step_right(mps.tensor(i), &map, v, x.get(i)));
        }
    }

    // Right to left: left vectors fixed, right vectors advanced.
    let lefts_all: Vec<Vec<Option<EnvVector>>> = ts.items().iter().map(|(x, _)| left_vectors(&mps, x)).collect();
    let mut rights: Vec<Option<EnvVector>> = vec![Some(boundary()); ts.len()];
    for i in (0..n - 1).rev() {
        let lefts: Vec<Option<EnvVector>> = lefts_all.iter().map(|l| l[i].clone()).collect();
        let (left, right, s) = update_pair(&mps, i, ts, &lefts, &rights, cfg, FluxSide::Left)?;
        skipped = skipped.max(s);
        mps.replace_pair(i, left, right, i);
        let map = mps.site_map(i + 1);
        for (k, (x, _)) in ts.items().iter().enumerate() {
            rights[k] = rights[k].as_ref().and_then(|v| step_left(mps.tensor(i + 1), &map, v, x.get(i + 1)));
        }
    }
    let loss = match nll(&mps, ts) {
        Ok(v) => v,
        Err(Error::ZeroAmplitude(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(SweepResult { mps, nll: loss, skipped })
}

/// Runs `cfg.sweeps` sweeps. The loss trace starts with the initial NLL
/// (`+∞` when some item is outside the initial support).
pub fn train(mps: &SymMps, ts: &WeightedTrainingSet, cfg: &TrainConfig) -> Result<(SymMps, Vec<f64>)> {
    cfg.validate()?;
    let mut trace = vec![nll(mps, ts).unwrap_or(f64::INFINITY)];
    let mut current = mps.clone();
    for _ in 0..cfg.sweeps {
        let r = sweep(&current, ts, cfg)?;
        trace.push(r.nll);
        current = r.mps;
    }
    Ok((current, trace))
}

/// Writes a `sweep,nll` CSV.
pub fn write_loss_csv<W: Write>(mut out: W, trace: &[f64]) -> std::io::Result<()> {
    writeln!(out, "sweep,nll")?;
    for (s, v) in trace.iter().enumerate() {
        writeln!(out, "{s},{v}")?;
    }
    Ok(())
}
