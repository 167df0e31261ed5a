//! End-to-end acceptance checks. Runs every criterion in sequence (so the
//! timing-based one is not disturbed by the others), prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.

use std::collections::{BTreeMap, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::ArrayD;
use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use symtn::block::{FluxSide, Truncation};
use symtn::builder::{
    build_cardinality_mps, cardinality_skeleton, embed_method1, embed_method2, expand_degeneracy, randomize,
    vanilla_uniform,
};
use symtn::geo::{geo_run, GeoConfig, GeoStart, NegativeSeparation};
use symtn::oracle::{degeneracy_count, degeneracy_ratio, dense, enumerate_solutions, random_valid_search};
use symtn::sample::{coverage, g_sol, sample_batch};
use symtn::train::{gradient_two_site, sweep, train, TrainConfig, WeightedTrainingSet};
use symtn::{Bitstring, BlockTensor, Charge, ChargedIndex, ConstraintSystem, Direction, SeedSet, SymMps};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn all_bitstrings(n: usize) -> impl Iterator<Item = Bitstring> {
    (0..1u64 << n).map(move |k| Bitstring::from_index(k, n))
}

/// Support by brute-force amplitude evaluation over all 2^N strings.
fn brute_support(mps: &SymMps) -> Vec<Bitstring> {
    all_bitstrings(mps.num_sites()).filter(|x| mps.amplitude(x).unwrap().abs() > 1e-12).collect()
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn random_system<R: Rng>(n: usize, m: usize, rng: &mut R) -> ConstraintSystem {
    let rows: Vec<Vec<i64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(-2..=2)).collect()).collect();
    let x0: Vec<i64> = (0..n).map(|_| rng.random_range(0..=1)).collect();
    let b = rows.iter().map(|r| r.iter().zip(&x0).map(|(a, x)| a * x).sum()).collect();
    ConstraintSystem::new(rows, b).unwrap()
}

fn random_model<R: Rng>(cs: &ConstraintSystem, deg: usize, rng: &mut R) -> SymMps {
    let sols = enumerate_solutions(cs).unwrap();
    let seeds = SeedSet::new(cs, sols.bitstrings.clone()).unwrap();
    let skeleton = embed_method2(cs, &seeds).unwrap();
    randomize(&expand_degeneracy(&skeleton, deg, 1.0, rng).unwrap(), rng).unwrap()
}

// 1 ---------------------------------------------------------------------

fn exact_cardinality() -> Outcome {
    let mps = build_cardinality_mps(6, 3).map_err(|e| e.to_string())?;
    let support = brute_support(&mps);
    ensure(support.len() == 20, format!("support {}", support.len()))?;
    ensure(support.iter().all(|x| x.weight() == 3), "support contains a string of wrong weight")?;
    ensure(mps.max_bond_dim() == 4, format!("max bond dim {}", mps.max_bond_dim()))?;
    Ok(format!("support 20, bond dims {:?}", mps.bond_dims()))
}

// 2 ---------------------------------------------------------------------

fn embedding_fidelity() -> Outcome {
    let cs = ConstraintSystem::cardinality(6, 3).unwrap();
    let seeds = SeedSet::new(&cs, ["111000", "101010", "010101", "000111"].map(|s| s.parse().unwrap())).unwrap();
    let m1 = brute_support(&embed_method1(&cs, &seeds).unwrap());
    let m2 = brute_support(&embed_method2(&cs, &seeds).unwrap());
    ensure(m1.len() == 10, format!("method 1 supports {}", m1.len()))?;
    ensure(m2.len() == 20, format!("method 2 supports {}", m2.len()))?;
    ensure(m1.iter().all(|x| m2.contains(x)), "method 1 support not inside method 2 support")?;
    Ok("method 1 → 10, method 2 → 20".into())
}

// 3 ---------------------------------------------------------------------

fn seed_count_bound() -> Outcome {
    let n = 10;
    let mut notes = Vec::new();
    for kappa in 1..=5 {
        let cs = ConstraintSystem::cardinality(n, kappa).unwrap();
        let seeds = cardinality_skeleton(n, kappa).unwrap().greedy_cover_paths().unwrap();
        let bound = kappa.min(n - kappa) + 1;
        ensure(seeds.len() <= bound, format!("κ={kappa}: greedy cover used {} > {bound} seeds", seeds.len()))?;
        let seeds = SeedSet::new(&cs, seeds).unwrap();
        let support = brute_support(&embed_method2(&cs, &seeds).unwrap());
        let full = binomial(n as u64, kappa as u64) as usize;
        ensure(support.len() == full, format!("κ={kappa}: support {} of {full}", support.len()))?;
        notes.push(format!("κ={kappa}:{}", seeds.len()));
    }
    Ok(format!("seeds used {}", notes.join(" ")))
}

// 4 ---------------------------------------------------------------------

fn structural_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut instances = 0;
    let mut total_seeds = 0;
    while instances < 20 {
        let n = rng.random_range(8..=20);
        let m = rng.random_range(1..=3);
        let cs = random_system(n, m, &mut rng);
        let seeds = random_valid_search(&cs, 200_000, &mut rng).unwrap();
        if seeds.len() < 10 {
            continue;
        }
        let mps = embed_method2(&cs, &seeds).map_err(|e| e.to_string())?;
        let batch = sample_batch(&mps, 10_000, instances as u64).map_err(|e| e.to_string())?;
        let bad = batch.bitstrings.iter().filter(|x| !cs.is_satisfied(x)).count();
        ensure(bad == 0, format!("instance {instances} (N={n}, m={m}): {bad} invalid samples"))?;
        total_seeds += seeds.len();
        instances += 1;
    }
    Ok(format!("20 instances, 2·10⁵ samples all valid, {total_seeds} seeds in total"))
}

// 5 ---------------------------------------------------------------------

/// Dense left/right environment vectors of `x` around the pair `(i, i+1)`.
fn pair_environments(mps: &SymMps, i: usize, x: &Bitstring) -> (Vec<f64>, Vec<f64>) {
    let dense: Vec<ArrayD<f64>> = mps.tensors().iter().map(|t| t.to_dense()).collect();
    let offset = |j: usize| {
        let (sector, within) = mps.site_map(j)[x.get(j) as usize];
        mps.tensor(j).index(1).offset(sector) + within
    };
    let mut left = vec![1.0];
    for j in 0..i {
        let t = &dense[j];
        let o = offset(j);
        left = (0..t.shape()[2]).map(|b| left.iter().enumerate().map(|(a, v)| v * t[[a, o, b]]).sum()).collect();
    }
    let mut right = vec![1.0];
    for j in (i + 2..mps.num_sites()).rev() {
        let t = &dense[j];
        let o = offset(j);
        right = (0..t.shape()[0]).map(|a| right.iter().enumerate().map(|(b, v)| v * t[[a, o, b]]).sum()).collect();
    }
    (left, right)
}

fn gradient_relative_error(mps: &SymMps, i: usize, ts: &WeightedTrainingSet) -> f64 {
    let n = mps.num_sites();
    let theta = BlockTensor::merge_two_site(mps.tensor(i), mps.tensor(i + 1)).unwrap().to_dense();
    let phys = |j: usize, bit: u8| {
        let (sector, within) = mps.site_map(j)[bit as usize];
        mps.tensor(j).index(1).offset(sector) + within
    };
    struct Row {
        left: Vec<f64>,
        right: Vec<f64>,
        s1: usize,
        s2: usize,
        amp: f64,
    }
    let rows: Vec<Row> = all_bitstrings(n)
        .map(|x| {
            let (left, right) = pair_environments(mps, i, &x);
            let (s1, s2) = (phys(i, x.get(i)), phys(i + 1, x.get(i + 1)));
            let mut amp = 0.0;
            for (a, la) in left.iter().enumerate() {
                for (b, rb) in right.iter().enumerate() {
                    amp += la * theta[[a, s1, s2, b]] * rb;
                }
            }
            Row { left, right, s1, s2, amp }
        })
        .collect();
    let weights: HashMap<u64, f64> = ts.items().iter().map(|(x, w)| (x.to_index(), *w)).collect();
    // Loss with a single entry of Θ shifted by `delta`; Ψ is linear in Θ.
    let loss = |idx: &[usize], delta: f64| {
        let amps: Vec<f64> = rows
            .iter()
            .map(|r| {
                if r.s1 == idx[1] && r.s2 == idx[2] {
                    r.amp + delta * r.left[idx[0]] * r.right[idx[3]]
                } else {
                    r.amp
                }
            })
            .collect();
        let z: f64 = amps.iter().map(|a| a * a).sum();
        -weights.iter().map(|(&k, w)| w * (amps[k as usize].powi(2) / z).ln()).sum::<f64>()
    };
    let g = gradient_two_site(mps, i, ts).unwrap().to_dense();
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (idx, &gv) in g.indexed_iter() {
        let idx: Vec<usize> = (0..4).map(|d| idx[d]).collect();
        // Keep the step small against every training amplitude it moves, so
        // the logarithm stays in its Taylor regime.
        let h = weights.keys().fold(1e-4, |h: f64, &k| {
            let r = &rows[k as usize];
            let lever = if r.s1 == idx[1] && r.s2 == idx[2] { (r.left[idx[0]] * r.right[idx[3]]).abs() } else { 0.0 };
            if lever > 0.0 {
                h.min(1e-3 * r.amp.abs() / lever)
            } else {
                h
            }
        });
        // Fourth-order central stencil.
        let fd = (8.0 * (loss(&idx, h) - loss(&idx, -h)) - (loss(&idx, 2.0 * h) - loss(&idx, -2.0 * h))) / (12.0 * h);
        diff += (gv - fd).powi(2);
        norm += gv * gv;
    }
    (diff / norm).sqrt()
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 8;
    let mut worst: f64 = 0.0;
    for case in 0..10 {
        let (mut mps, support) = if case < 5 {
            let base = expand_degeneracy(&vanilla_uniform(n).unwrap(), 4, 1.0, &mut rng).unwrap();
            (randomize(&base, &mut rng).unwrap(), all_bitstrings(n).collect::<Vec<_>>())
        } else {
            let cs = loop {
                let cs = random_system(n, 2, &mut rng);
                if enumerate_solutions(&cs).unwrap().len() >= 6 {
                    break cs;
                }
            };
            (random_model(&cs, 3, &mut rng), enumerate_solutions(&cs).unwrap().bitstrings)
        };
        let i = rng.random_range(0..n - 1);
        mps.shift_center(i + rng.random_range(0..2)).unwrap();
        let ts = WeightedTrainingSet::new(
            (0..10).map(|_| (support[rng.random_range(0..support.len())].clone(), rng.random_range(0.1..1.0))),
        )
        .unwrap();
        let err = gradient_relative_error(&mps, i, &ts);
        ensure(err < 1e-6, format!("case {case} (pair {i}): relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("10 models, worst relative error {worst:.2e}"))
}

// 6 ---------------------------------------------------------------------

fn sampler_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10;
    let q = 100_000;
    let mut pvals = Vec::new();
    for case in 0..5u64 {
        let m = 1 + case as usize % 2;
        let cs = loop {
            let cs = random_system(n, m, &mut rng);
            if enumerate_solutions(&cs).unwrap().len() >= 20 {
                break cs;
            }
        };
        let mps = random_model(&cs, 3, &mut rng);
        let amps: Vec<(Bitstring, f64)> = all_bitstrings(n).map(|x| { let a = mps.amplitude(&x).unwrap(); (x, a * a) }).collect();
        let z: f64 = amps.iter().map(|(_, p)| p).sum();
        let batch = sample_batch(&mps, q, 100 + case).unwrap();
        // Pool all strings with fewer than 5 expected hits into one bin.
        let mut observed = Vec::new();
        let mut expected = Vec::new();
        let (mut pool_o, mut pool_e) = (0.0, 0.0);
        for (x, p) in &amps {
            let e = q as f64 * p / z;
            let o = batch.counts.get(x).copied().unwrap_or(0) as f64;
            if e == 0.0 {
                ensure(o == 0.0, format!("model {case}: sampled zero-probability string {x}"))?;
            } else if e < 5.0 {
                pool_o += o;
                pool_e += e;
            } else {
                observed.push(o);
                expected.push(e);
            }
        }
        if pool_e > 0.0 {
            observed.push(pool_o);
            expected.push(pool_e);
        }
        let stat: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
        let dof = (expected.len() - 1) as f64;
        let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
        ensure(p > 0.001, format!("model {case}: χ²={stat:.1} with {dof} dof, p={p:.2e}"))?;
        pvals.push(format!("{p:.3}"));
    }
    Ok(format!("p-values {}", pvals.join(", ")))
}

// 7 ---------------------------------------------------------------------

fn random_index<R: Rng>(m: usize, rng: &mut R) -> ChargedIndex {
    let k = rng.random_range(1..=3);
    let mut sectors = BTreeMap::new();
    while sectors.len() < k {
        sectors.insert(Charge::new((0..m).map(|_| rng.random_range(-1..=1)).collect()), rng.random_range(1..=3));
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
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_contract<R: Rng>(m: usize, rng: &mut R) -> f64 {
    let shared = random_index(m, rng);
    let a = BlockTensor::random(vec![random_index(m, rng), shared.clone(), random_index(m, rng)], random_flux(m, rng), rng)
        .unwrap();
    let b = BlockTensor::random(vec![random_index(m, rng), shared.dual()], random_flux(m, rng), rng).unwrap();
    let c = BlockTensor::contract(&a, &b, &[(1, 1)]).unwrap();
    max_diff(&c.to_dense(), &dense::contract(&a.to_dense(), &b.to_dense(), &[(1, 1)]).unwrap())
}

fn check_merge<R: Rng>(m: usize, rng: &mut R) -> f64 {
    let link = random_index(m, rng).with_direction(Direction::Out);
    let l = BlockTensor::random(vec![random_index(m, rng), random_index(m, rng), link.clone()], random_flux(m, rng), rng)
        .unwrap();
    let r = BlockTensor::random(vec![link.dual(), random_index(m, rng), random_index(m, rng)], Charge::zero(m), rng)
        .unwrap();
    let merged = BlockTensor::merge_two_site(&l, &r).unwrap();
    max_diff(&merged.to_dense(), &dense::contract(&l.to_dense(), &r.to_dense(), &[(2, 0)]).unwrap())
}

fn check_svd<R: Rng>(m: usize, rng: &mut R) -> f64 {
    // Redraw until the flux admits at least one block.
    let t = loop {
        let legs: Vec<ChargedIndex> = (0..4).map(|_| random_index(m, rng)).collect();
        let t = BlockTensor::random(legs, random_flux(m, rng), rng).unwrap();
        if t.num_blocks() > 0 {
            break t;
        }
    };
    let side = if rng.random_bool(0.5) { FluxSide::Left } else { FluxSide::Right };
    let split = t.svd_split(&[0, 2], Truncation::none(), side).unwrap();
    let mut s: Vec<f64> = split.singular_values.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let reference = dense::singular_values(&dense::matricize(&t.to_dense(), &[0, 2]));
    let mut err: f64 = 0.0;
    for (k, r) in reference.iter().enumerate() {
        err = err.max((s.get(k).copied().unwrap_or(0.0) - r).abs());
    }
    let (u, vh) = split.absorb_right();
    let recon = BlockTensor::contract(&u, &vh, &[(2, 0)]).unwrap().to_dense();
    err.max(max_diff(&recon, &t.permute(&[0, 2, 1, 3]).unwrap().to_dense()))
}

fn check_direct_sum<R: Rng>(m: usize, rng: &mut R) -> f64 {
    let phys = random_index(m, rng);
    let flux = random_flux(m, rng);
    let (l1, r1) = (random_index(m, rng), random_index(m, rng));
    let l2 = random_index(m, rng).with_direction(l1.direction());
    let r2 = random_index(m, rng).with_direction(r1.direction());
    let a = BlockTensor::random(vec![l1, phys.clone(), r1], flux.clone(), rng).unwrap();
    let b = BlockTensor::random(vec![l2, phys, r2], flux, rng).unwrap();
    let s = BlockTensor::direct_sum(&a, &b, &[0, 2]).unwrap();
    let d = dense::direct_sum(&a.to_dense(), &b.to_dense(), &[0, 2]).unwrap();
    // Map each position of a summed leg of `s` to its position in the
    // block-diagonal dense layout (a's sectors first, then b's).
    let layout = |leg: usize| {
        let mut p = vec![0; s.index(leg).dim()];
        let a_dim = a.index(leg).dim();
        for (src, base, is_b) in [(&a, 0, false), (&b, a_dim, true)] {
            for (k, sec) in src.index(leg).sectors().iter().enumerate() {
                let t = s.index(leg).find(&sec.charge).unwrap();
                let shift = if is_b { a.index(leg).find(&sec.charge).map_or(0, |j| a.index(leg).degeneracy(j)) } else { 0 };
                for q in 0..sec.degeneracy {
                    p[s.index(leg).offset(t) + shift + q] = base + src.index(leg).offset(k) + q;
                }
            }
        }
        p
    };
    let (p0, p2) = (layout(0), layout(2));
    let sd = s.to_dense();
    let mut err: f64 = 0.0;
    for (idx, &v) in sd.indexed_iter() {
        err = err.max((v - d[[p0[idx[0]], idx[1], p2[idx[2]]]]).abs());
    }
    // Everything in the dense sum must be accounted for.
    let mass = |x: &ArrayD<f64>| x.iter().map(|v| v * v).sum::<f64>();
    err.max((mass(&sd) - mass(&d)).abs())
}

fn block_dense_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let m = case % 3;
        let err = match (case / 3) % 4 {
            0 => check_contract(m, &mut rng),
            1 => check_merge(m, &mut rng),
            2 => check_svd(m, &mut rng),
            _ => check_direct_sum(m, &mut rng),
        };
        ensure(err <= 1e-10, format!("case {case}: deviation {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("100 cases, worst deviation {worst:.1e}"))
}

// 8 ---------------------------------------------------------------------

fn separation(k: u64, n: usize) -> i64 {
    let ones: Vec<usize> = (0..n).filter(|i| (k >> (n - 1 - i)) & 1 == 1).collect();
    -(ones.windows(2).map(|w| (w[1] - w[0]) as i64).max().unwrap_or(0))
}

fn degeneracy_formula() -> Outcome {
    let mut checked = 0;
    for n in [10usize, 12, 14, 16] {
        let mut buckets = HashMap::<(i64, i64), u64>::new();
        for k in 0..1u64 << n {
            *buckets.entry((k.count_ones() as i64, separation(k, n))).or_default() += 1;
        }
        let n = n as i64;
        for kappa in 0..=n {
            for a in (0..).take_while(|a| 2 * a < n - kappa) {
                let brute = buckets.get(&(kappa, -n + kappa + a - 1)).copied().unwrap_or(0);
                let formula = degeneracy_count(a, kappa, n).map_err(|e| e.to_string())?;
                ensure(formula == BigUint::from(brute), format!("N={n} κ={kappa} a={a}: {formula} vs {brute}"))?;
                checked += 1;
            }
        }
    }
    let anchor = degeneracy_count(0, 25, 50).unwrap();
    ensure(anchor == BigUint::from(24u32), format!("a=0 anchor gives {anchor}"))?;
    let single = degeneracy_ratio(&degeneracy_count(6, 25, 50).unwrap(), 50, 25);
    ensure((1e-7..1e-6).contains(&single), format!("a=6 fraction {single:e}"))?;
    // Strings with cost ≤ −20 at N=50, κ=25: a = 0..=6.
    let mut tail = BigUint::zero();
    for a in 0..=6 {
        tail += degeneracy_count(a, 25, 50).unwrap();
    }
    let ratio = degeneracy_ratio(&tail, 50, 25);
    ensure((1e-7..1e-6).contains(&ratio), format!("cost ≤ −20 fraction {ratio:e}"))?;
    Ok(format!("{checked} (N,κ,a) cells match, κ−1 anchor ok, cost ≤ −20 fraction {ratio:.2e} ({} strings)", tail.to_u64().unwrap()))
}

// 9 ---------------------------------------------------------------------

fn half_filling_optimization() -> Outcome {
    let start = build_cardinality_mps(50, 25).unwrap();
    let mut reached = 0;
    let mut improved = 0;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let cfg = GeoConfig { max_iters: 10, seed, ..GeoConfig::default() };
        let t0 = Instant::now();
        let out = geo_run(&ConstraintSystem::cardinality(50, 25).unwrap(), &NegativeSeparation, &cfg, GeoStart::Exact(start.clone()))
            .map_err(|e| e.to_string())?;
        let took = t0.elapsed();
        ensure(took < Duration::from_secs(300), format!("seed {seed} took {took:?}"))?;
        let u = &out.utility_trace;
        if out.best_cost <= -18.0 {
            reached += 1;
        }
        if u.len() > 1 && u[1] < u[0] {
            improved += 1;
        }
        notes.push(format!("{}", out.best_cost));
    }
    ensure(reached >= 4, format!("best cost ≤ −18 in only {reached}/5 runs (bests {})", notes.join(", ")))?;
    ensure(improved >= 4, format!("U₁ < U₀ in only {improved}/5 runs"))?;
    Ok(format!("bests {}; U₁ < U₀ in {improved}/5", notes.join(", ")))
}

// 10 --------------------------------------------------------------------

fn coverage_comparison() -> Outcome {
    let n = 14;
    let q = 10_000;
    let mut wins = 0;
    let mut rows = Vec::new();
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let (cs, all) = loop {
            let rows: Vec<Vec<i64>> = (0..2).map(|_| (0..n).map(|_| rng.random_range(-2..=2)).collect()).collect();
            let b = (0..2).map(|_| rng.random_range(-2..=2)).collect();
            let cs = ConstraintSystem::new(rows, b).unwrap();
            let all = enumerate_solutions(&cs).unwrap().bitstrings;
            if all.len() >= 2 {
                break (cs, all);
            }
        };
        let k = ((0.01 * all.len() as f64).round() as usize).max(1);
        let mut pool = all.clone();
        pool.shuffle(&mut rng);
        let seeds = SeedSet::new(&cs, pool[..k].iter().cloned()).unwrap();

        let sym = embed_method2(&cs, &seeds).unwrap();
        let c_sym = coverage(g_sol(&sample_batch(&sym, q, inst).unwrap(), &seeds, &cs), all.len(), k).unwrap();

        let ts = WeightedTrainingSet::uniform(seeds.bitstrings().iter().cloned()).unwrap();
        let mut c_van: f64 = 0.0;
        for chi in [8, 16, 32] {
            let cfg = TrainConfig { chi_max: chi, sweeps: 30, ..TrainConfig::default() };
            let (model, _) = train(&vanilla_uniform(n).unwrap(), &ts, &cfg).unwrap();
            let batch = sample_batch(&model, q, inst).unwrap();
            c_van = c_van.max(coverage(g_sol(&batch, &seeds, &cs), all.len(), k).unwrap());
        }
        if c_sym > c_van {
            wins += 1;
        }
        rows.push(format!("|S|={} |T|={k}: {c_sym:.3} vs {c_van:.3}", all.len()));
    }
    let detail = format!("symmetric wins {wins}/10 [{}]", rows.join("; "));
    ensure(wins >= 8, detail.clone())?;
    Ok(detail)
}

// 11 --------------------------------------------------------------------

/// Mean wall time of three sweeps after a warm-up sweep, and the block
/// storage of the final model.
fn sweep_cost(start: &SymMps, ts: &WeightedTrainingSet, chi: usize) -> (f64, usize) {
    let cfg = TrainConfig { chi_max: chi, ..TrainConfig::default() };
    let mut mps = sweep(start, ts, &cfg).unwrap().mps;
    let t0 = Instant::now();
    for _ in 0..3 {
        mps = sweep(&mps, ts, &cfg).unwrap().mps;
    }
    (t0.elapsed().as_secs_f64() / 3.0, mps.storage())
}

fn resource_scaling() -> Outcome {
    let card = build_cardinality_mps(50, 25).unwrap();
    let ts = WeightedTrainingSet::uniform(sample_batch(&card, 1000, 11).unwrap().bitstrings).unwrap();
    let vanilla = vanilla_uniform(50).unwrap();
    let (st10, ss10) = sweep_cost(&card, &ts, 10);
    let (st50, ss50) = sweep_cost(&card, &ts, 50);
    let (vt10, vs10) = sweep_cost(&vanilla, &ts, 10);
    let (vt50, vs50) = sweep_cost(&vanilla, &ts, 50);
    let ratios = [st50 / st10, ss50 as f64 / ss10 as f64, vt50 / vt10, vs50 as f64 / vs10 as f64];
    let detail = format!(
        "symmetric ×{:.2} time, ×{:.2} storage ({ss10}→{ss50}); vanilla ×{:.2} time, ×{:.2} storage ({vs10}→{vs50})",
        ratios[0], ratios[1], ratios[2], ratios[3]
    );
    ensure(ratios[0] < 2.0 && ratios[1] < 2.0 && ratios[2] > 5.0 && ratios[3] > 5.0, detail.clone())?;
    Ok(detail)
}

// -----------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("exact cardinality construction", exact_cardinality),
        ("embedding fidelity", embedding_fidelity),
        ("seed-count bound", seed_count_bound),
        ("structural validity", structural_validity),
        ("gradient correctness", gradient_correctness),
        ("sampler exactness", sampler_exactness),
        ("block-sparse/dense equivalence", block_dense_equivalence),
        ("degeneracy formula", degeneracy_formula),
        ("negative-separation optimisation", half_filling_optimization),
        ("symmetric vs vanilla coverage", coverage_comparison),
        ("training resource scaling", resource_scaling),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1} s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1} s): {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
