//! Tuple-independent probabilistic structures, possible-worlds semantics,
//! the brute-force oracle and a Monte Carlo estimator.

use std::collections::HashMap;
use std::path::Path;

use num::{BigInt, BigRational, Integer, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::par;
use crate::qcore::{self, intern_const, intern_rel, Atom, Query, Term};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tuple {
    pub rel: u32,
    pub args: Vec<u32>,
}

impl Tuple {
    pub fn new(rel: &str, args: &[&str]) -> Tuple {
        Tuple {
            rel: intern_rel(rel),
            args: args.iter().map(|a| intern_const(a)).collect(),
        }
    }
}

impl std::fmt::Display for Tuple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let args: Vec<String> = self.args.iter().map(|&c| qcore::const_name(c)).collect();
        write!(f, "{}({})", qcore::rel_name(self.rel), args.join(","))
    }
}

#[derive(Debug, Error)]
pub enum StructError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: probability {p} outside [0,1]")]
    Range { line: usize, p: String },
    #[error("line {line}: relation {rel} has arity {got}, earlier {want}")]
    Arity {
        line: usize,
        rel: String,
        got: usize,
        want: usize,
    },
    #[error("line {line}: duplicate tuple {tuple}")]
    Duplicate { line: usize, tuple: String },
    #[error("tuple {0} is not in the structure")]
    UnknownTuple(String),
    #[error("{relevant} relevant tuples exceed the oracle cap of {cap}")]
    CapExceeded { relevant: usize, cap: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finite relational instance with an exact probability per tuple.
#[derive(Clone, Debug, Default)]
pub struct ProbStructure {
    pub domain: Vec<u32>,
    tuples: Vec<(Tuple, BigRational)>,
    index: HashMap<Tuple, usize>,
    arity: HashMap<u32, usize>,
}

/// Parses `p/q` or a decimal literal into an exact rational.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int}{frac}");
    let n: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().ok()?
    };
    let d = num::pow(BigInt::from(10), frac.len());
    Some(BigRational::new(n, d))
}

impl ProbStructure {
    pub fn new() -> ProbStructure {
        ProbStructure::default()
    }

    /// Adds a domain constant if not yet present.
    pub fn add_const(&mut self, c: u32) {
        if !self.domain.contains(&c) {
            self.domain.push(c);
        }
    }

    /// Inserts or replaces a tuple.
    pub fn insert(&mut self, t: Tuple, p: BigRational) {
        for &c in &t.args {
            self.add_const(c);
        }
        self.arity.entry(t.rel).or_insert(t.args.len());
        match self.index.get(&t) {
            Some(&i) => self.tuples[i].1 = p,
            None => {
                self.index.insert(t.clone(), self.tuples.len());
                self.tuples.push((t, p));
            }
        }
    }

    pub fn parse(text: &str) -> Result<ProbStructure, StructError> {
        let mut s = ProbStructure::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix("@domain") {
                for c in rest.split(',').map(str::trim).filter(|c| !c.is_empty()) {
                    let id = intern_const(c);
                    s.add_const(id);
                }
                continue;
            }
            let fields: Vec<&str> = if l.contains('\t') {
                l.split('\t')
                    .map(str::trim)
                    .filter(|f| !f.is_empty())
                    .collect()
            } else {
                l.split_whitespace().collect()
            };
            if fields.len() != 3 {
                return Err(StructError::Parse {
                    line,
                    msg: "expected <relation> <args> <probability>".into(),
                });
            }
            let rel = fields[0];
            if !rel.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
                return Err(StructError::Parse {
                    line,
                    msg: format!("bad relation name {rel}"),
                });
            }
            let args: Vec<&str> = if fields[1] == "-" {
                Vec::new()
            } else {
                fields[1].split(',').map(str::trim).collect()
            };
            if args.iter().any(|a| a.is_empty()) {
                return Err(StructError::Parse {
                    line,
                    msg: "empty constant".into(),
                });
            }
            let p = parse_rational(fields[2]).ok_or_else(|| StructError::Parse {
                line,
                msg: format!("bad probability {}", fields[2]),
            })?;
            if p.is_negative() || p > BigRational::one() {
                return Err(StructError::Range {
                    line,
                    p: fields[2].to_string(),
                });
            }
            let rid = intern_rel(rel);
            if let Some(&a) = s.arity.get(&rid) {
                if a != args.len() {
                    return Err(StructError::Arity {
                        line,
                        rel: rel.into(),
                        got: args.len(),
                        want: a,
                    });
                }
            }
            let t = Tuple {
                rel: rid,
                args: args.iter().map(|a| intern_const(a)).collect(),
            };
            if s.index.contains_key(&t) {
                return Err(StructError::Duplicate {
                    line,
                    tuple: t.to_string(),
                });
            }
            s.insert(t, p);
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<ProbStructure, StructError> {
        ProbStructure::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let dom: Vec<String> = self.domain.iter().map(|&c| qcore::const_name(c)).collect();
        out.push_str(&format!("@domain {}\n", dom.join(",")));
        for (t, p) in &self.tuples {
            let args: Vec<String> = t.args.iter().map(|&c| qcore::const_name(c)).collect();
            let a = if args.is_empty() {
                "-".to_string()
            } else {
                args.join(",")
            };
            out.push_str(&format!("{}\t{}\t{}\n", qcore::rel_name(t.rel), a, p));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[(Tuple, BigRational)] {
        &self.tuples
    }

    pub fn tuple_index(&self, t: &Tuple) -> Option<usize> {
        self.index.get(t).copied()
    }

    /// Probability of a ground tuple; absent tuples have probability 0.
    pub fn prob(&self, t: &Tuple) -> BigRational {
        self.index
            .get(t)
            .map(|&i| self.tuples[i].1.clone())
            .unwrap_or_else(BigRational::zero)
    }

    /// Tuples of one relation.
    pub fn relation(&self, rel: u32) -> impl Iterator<Item = &(Tuple, BigRational)> {
        self.tuples.iter().filter(move |(t, _)| t.rel == rel)
    }

    /// A copy whose domain also contains the given constants (appended in id order).
    pub fn with_consts(&self, consts: impl IntoIterator<Item = u32>) -> ProbStructure {
        let mut s = self.clone();
        let mut extra: Vec<u32> = consts.into_iter().collect();
        extra.sort();
        for c in extra {
            s.add_const(c);
        }
        s
    }

    /// The structure as a ground query (all tuples as positive atoms).
    pub fn as_query(&self) -> Query {
        Query {
            atoms: self
                .tuples
                .iter()
                .map(|(t, _)| Atom {
                    rel: t.rel,
                    args: t.args.iter().map(|&c| Term::Const(c)).collect(),
                    neg: false,
                })
                .collect(),
            preds: vec![],
            names: vec![],
        }
    }
}

/// A possible world: the set of present tuple indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct World {
    pub present: Vec<usize>,
}

/// Probability of a world (product of `p` for present tuples and `1-p` for absent ones).
pub fn world_prob(s: &ProbStructure, w: &World) -> Result<BigRational, StructError> {
    let mut inside = vec![false; s.len()];
    for &i in &w.present {
        if i >= s.len() {
            return Err(StructError::UnknownTuple(format!("#{i}")));
        }
        inside[i] = true;
    }
    let mut acc = BigRational::one();
    for (i, (_, p)) in s.tuples.iter().enumerate() {
        acc *= if inside[i] {
            p.clone()
        } else {
            BigRational::one() - p
        };
    }
    Ok(acc)
}

/// Builds a world from explicit tuples.
pub fn world_of(s: &ProbStructure, tuples: &[Tuple]) -> Result<World, StructError> {
    let present = tuples
        .iter()
        .map(|t| {
            s.tuple_index(t)
                .ok_or_else(|| StructError::UnknownTuple(t.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(World { present })
}

// ---------------------------------------------------------------------------
// witnesses

/// Ways a query can be satisfied: each witness needs its `pos` tuples present
/// and its `neg` tuples absent. Tuple ids index `relevant`.
#[derive(Clone, Debug)]
pub struct Witnesses {
    pub relevant: Vec<usize>,
    pub words: usize,
    pub pos: Vec<Vec<u64>>,
    pub neg: Vec<Vec<u64>>,
}

fn tuple_of(a: &Atom, h: &[Term]) -> Tuple {
    Tuple {
        rel: a.rel,
        args: a
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => match h[*v as usize] {
                    Term::Const(c) => c,
                    Term::Var(_) => unreachable!("witness maps into constants"),
                },
                Term::Const(c) => *c,
            })
            .collect(),
    }
}

/// Raw witnesses as lists of structure tuple indices; `None` entries in
/// positive lists never occur because homomorphisms land on existing tuples.
fn raw_witnesses(q: &Query, s: &ProbStructure) -> Vec<(Vec<usize>, Vec<usize>)> {
    let pos_q = Query {
        atoms: q.positive_atoms().cloned().collect(),
        preds: q.preds.clone(),
        names: q.names.clone(),
    };
    let dst = s.as_query();
    let mut out = Vec::new();
    for h in qcore::homomorphisms(&pos_q, &dst) {
        let mut pos: Vec<usize> = Vec::new();
        let mut neg: Vec<usize> = Vec::new();
        let mut dead = false;
        for a in &q.atoms {
            let t = tuple_of(a, &h);
            let idx = s.tuple_index(&t);
            if a.neg {
                // absent tuples are never present, so they impose nothing
                if let Some(i) = idx {
                    neg.push(i);
                }
            } else {
                pos.push(idx.expect("positive atoms map onto tuples"));
            }
        }
        pos.sort();
        pos.dedup();
        neg.sort();
        neg.dedup();
        if neg.iter().any(|i| pos.binary_search(i).is_ok()) {
            dead = true;
        }
        if !dead {
            out.push((pos, neg));
        }
    }
    out
}

impl Witnesses {
    pub fn of(q: &Query, s: &ProbStructure) -> Witnesses {
        Witnesses::of_many(std::slice::from_ref(q), s)
            .pop()
            .unwrap()
    }

    /// Witness sets for several queries over a shared relevant-tuple index.
    pub fn of_many(qs: &[Query], s: &ProbStructure) -> Vec<Witnesses> {
        let raws: Vec<_> = qs.iter().map(|q| raw_witnesses(q, s)).collect();
        let mut relevant: Vec<usize> = raws
            .iter()
            .flatten()
            .flat_map(|(p, n)| p.iter().chain(n.iter()).copied())
            .collect();
        relevant.sort();
        relevant.dedup();
        let pos_of: HashMap<usize, usize> =
            relevant.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let words = relevant.len().div_ceil(64).max(1);
        let mask = |ids: &[usize]| {
            let mut m = vec![0u64; words];
            for t in ids {
                let b = pos_of[t];
                m[b / 64] |= 1 << (b % 64);
            }
            m
        };
        raws.into_iter()
            .map(|raw| {
                let mut pairs: Vec<(Vec<u64>, Vec<u64>)> =
                    raw.iter().map(|(p, n)| (mask(p), mask(n))).collect();
                pairs.sort();
                pairs.dedup();
                // drop witnesses implied by a weaker one
                let sub = |a: &[u64], b: &[u64]| a.iter().zip(b).all(|(x, y)| x & !y == 0);
                let keep: Vec<bool> = (0..pairs.len())
                    .map(|i| {
                        !(0..pairs.len()).any(|j| {
                            j != i
                                && sub(&pairs[j].0, &pairs[i].0)
                                && sub(&pairs[j].1, &pairs[i].1)
                                && (pairs[j] != pairs[i])
                        })
                    })
                    .collect();
                let (pos, neg): (Vec<_>, Vec<_>) = pairs
                    .into_iter()
                    .zip(keep)
                    .filter(|(_, k)| *k)
                    .map(|(p, _)| p)
                    .unzip();
                Witnesses {
                    relevant: relevant.clone(),
                    words,
                    pos,
                    neg,
                }
            })
            .collect()
    }

    /// Whether the world (bitset over `relevant`) satisfies the query.
    pub fn satisfied(&self, world: &[u64]) -> bool {
        self.pos.iter().zip(&self.neg).any(|(p, n)| {
            p.iter().zip(world).all(|(a, w)| a & !w == 0)
                && n.iter().zip(world).all(|(a, w)| a & w == 0)
        })
    }

    /// Single-word fast path, valid when `words == 1`.
    pub fn satisfied64(&self, world: u64) -> bool {
        self.pos
            .iter()
            .zip(&self.neg)
            .any(|(p, n)| p[0] & !world == 0 && n[0] & world == 0)
    }
}

// ---------------------------------------------------------------------------
// Boolean combinations

/// A Boolean combination of conjunctive queries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Property {
    Query(Query),
    Not(Box<Property>),
    And(Vec<Property>),
    Or(Vec<Property>),
}

impl Property {
    pub fn leaves(&self) -> Vec<&Query> {
        match self {
            Property::Query(q) => vec![q],
            Property::Not(p) => p.leaves(),
            Property::And(ps) | Property::Or(ps) => ps.iter().flat_map(|p| p.leaves()).collect(),
        }
    }

    /// Truth value given the leaf values in `leaves()` order.
    pub fn eval_leaves(&self, vals: &[bool]) -> bool {
        fn go(p: &Property, vals: &[bool], k: &mut usize) -> bool {
            match p {
                Property::Query(_) => {
                    *k += 1;
                    vals[*k - 1]
                }
                Property::Not(p) => !go(p, vals, k),
                Property::And(ps) => ps.iter().fold(true, |acc, p| go(p, vals, k) & acc),
                Property::Or(ps) => ps.iter().fold(false, |acc, p| go(p, vals, k) | acc),
            }
        }
        let mut k = 0;
        go(self, vals, &mut k)
    }
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Property::Query(q) => write!(f, "[{q}]"),
            Property::Not(p) => write!(f, "not {p}"),
            Property::And(ps) => {
                let s: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
                write!(f, "({})", s.join(" and "))
            }
            Property::Or(ps) => {
                let s: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
                write!(f, "({})", s.join(" or "))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// oracle

pub const DEFAULT_ORACLE_CAP: usize = 24;

/// Exact probability of an event given by a world predicate over `m` relevant
/// tuples. Worlds are split into a low and a high half; per-half weight
/// tables are built by Gray-code order and the sum runs over their product.
fn enumerate_worlds(probs: &[BigRational], sat: &(dyn Fn(u64) -> bool + Sync)) -> BigRational {
    // tuples with p in {0,1} are fixed
    let mut fixed_on = 0u64;
    let mut free: Vec<usize> = Vec::new();
    for (i, p) in probs.iter().enumerate() {
        if p.is_one() {
            fixed_on |= 1 << i;
        } else if !p.is_zero() {
            free.push(i);
        }
    }
    let den = free
        .iter()
        .fold(BigInt::one(), |acc, &i| acc.lcm(probs[i].denom()));
    let num_in: Vec<BigInt> = free
        .iter()
        .map(|&i| (&probs[i] * BigRational::from(den.clone())).to_integer())
        .collect();
    let num_out: Vec<BigInt> = num_in.iter().map(|n| &den - n).collect();
    let k = free.len();
    let lo = k / 2;
    let table = |bits: &[usize]| -> Vec<(u64, BigInt)> {
        let n = bits.len();
        let mut out = Vec::with_capacity(1 << n);
        let mut mask = 0u64;
        let mut w: BigInt = bits.iter().map(|&j| num_out[j].clone()).product();
        let mut cur = 0u64;
        for g in 0..(1u64 << n) {
            if g > 0 {
                let flip = g.trailing_zeros() as usize;
                cur ^= 1 << flip;
                let j = bits[flip];
                // recompute from scratch when a factor is zero; otherwise update exactly
                let (old, new) = if cur & (1 << flip) != 0 {
                    (&num_out[j], &num_in[j])
                } else {
                    (&num_in[j], &num_out[j])
                };
                if old.is_zero() {
                    w = (0..n)
                        .map(|t| {
                            if cur & (1 << t) != 0 {
                                num_in[bits[t]].clone()
                            } else {
                                num_out[bits[t]].clone()
                            }
                        })
                        .product();
                } else {
                    w = w / old * new;
                }
                mask ^= 1 << free[j];
            }
            out.push((mask, w.clone()));
        }
        out
    };
    let lo_bits: Vec<usize> = (0..lo).collect();
    let hi_bits: Vec<usize> = (lo..k).collect();
    let lo_t = table(&lo_bits);
    let hi_t = table(&hi_bits);
    let total: BigInt = par::map_sum_bigint(&hi_t, |(hm, hw)| {
        let mut s = BigInt::zero();
        for (lm, lw) in &lo_t {
            if sat(fixed_on | hm | lm) {
                s += lw;
            }
        }
        s * hw
    });
    BigRational::new(total, num::pow(den, k))
}

fn relevant_probs(s: &ProbStructure, relevant: &[usize]) -> Vec<BigRational> {
    relevant.iter().map(|&i| s.tuples[i].1.clone()).collect()
}

/// Exact `p(q)` by enumerating the worlds over the tuples relevant to `q`.
pub fn oracle_eval(q: &Query, s: &ProbStructure, cap: usize) -> Result<BigRational, StructError> {
    let w = Witnesses::of(q, s);
    if w.relevant.len() > cap || w.relevant.len() > 63 {
        return Err(StructError::CapExceeded {
            relevant: w.relevant.len(),
            cap,
        });
    }
    let probs = relevant_probs(s, &w.relevant);
    Ok(enumerate_worlds(&probs, &|m| w.satisfied64(m)))
}

/// Exact probability of a Boolean combination of queries.
pub fn oracle_eval_property(
    phi: &Property,
    s: &ProbStructure,
    cap: usize,
) -> Result<BigRational, StructError> {
    let leaves: Vec<Query> = phi.leaves().into_iter().cloned().collect();
    let ws = Witnesses::of_many(&leaves, s);
    let rel = ws.first().map(|w| w.relevant.clone()).unwrap_or_default();
    if rel.len() > cap || rel.len() > 63 {
        return Err(StructError::CapExceeded {
            relevant: rel.len(),
            cap,
        });
    }
    let probs = relevant_probs(s, &rel);
    Ok(enumerate_worlds(&probs, &|m| {
        let vals: Vec<bool> = ws.iter().map(|w| w.satisfied64(m)).collect();
        phi.eval_leaves(&vals)
    }))
}

/// Exact probability of an arbitrary world predicate over the given tuples
/// (bit `i` of the mask is tuple `tuples[i]`).
pub fn oracle_eval_worlds(
    s: &ProbStructure,
    tuples: &[usize],
    cap: usize,
    sat: &(dyn Fn(u64) -> bool + Sync),
) -> Result<BigRational, StructError> {
    if tuples.len() > cap || tuples.len() > 63 {
        return Err(StructError::CapExceeded {
            relevant: tuples.len(),
            cap,
        });
    }
    Ok(enumerate_worlds(&relevant_probs(s, tuples), sat))
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// Number of independent random streams; fixed so results do not depend on
/// the thread count.
pub const MC_STREAMS: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Naive sampling estimate of `p(q)` with its binomial standard error.
pub fn mc_eval(q: &Query, s: &ProbStructure, samples: u64, seed: u64) -> McEstimate {
    let w = Witnesses::of(q, s);
    let probs: Vec<f64> = w
        .relevant
        .iter()
        .map(|&i| s.tuples[i].1.to_f64().unwrap_or(0.0))
        .collect();
    mc_with(&w, &probs, samples.max(1), seed)
}

fn mc_with(w: &Witnesses, probs: &[f64], samples: u64, seed: u64) -> McEstimate {
    let streams: Vec<u64> = (0..MC_STREAMS).collect();
    let hits: u64 = par::map_sum_u64(&streams, |&k| {
        let n = samples / MC_STREAMS + u64::from(k < samples % MC_STREAMS);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        let mut world = vec![0u64; w.words];
        let mut hits = 0u64;
        for _ in 0..n {
            for x in world.iter_mut() {
                *x = 0;
            }
            for (i, &p) in probs.iter().enumerate() {
                if rng.gen::<f64>() < p {
                    world[i / 64] |= 1 << (i % 64);
                }
            }
            if w.satisfied(&world) {
                hits += 1;
            }
        }
        hits
    });
    let est = hits as f64 / samples as f64;
    McEstimate {
        estimate: est,
        stderr: (est * (1.0 - est) / samples as f64).sqrt(),
        samples,
    }
}

// ---------------------------------------------------------------------------
// random instances

/// Shape of random structures for property tests and benchmarks.
#[derive(Clone, Copy, Debug)]
pub struct RandomSpec {
    /// Fresh domain elements `d0, d1, ...` (query constants are added on top).
    pub domain: usize,
    pub max_tuples: usize,
    pub max_den: i64,
}

/// A random structure over `q`'s relations. Up to `plants` random groundings
/// of `q` are inserted first so that `q` is not trivially false, then random
/// tuples fill up to a random size in `1..=max_tuples`. Probabilities are
/// `k/d` with `d <= max_den`.
pub fn random_structure(
    q: &Query,
    spec: RandomSpec,
    plants: usize,
    rng: &mut impl Rng,
) -> ProbStructure {
    let mut rels: Vec<(u32, usize)> = q.positive_atoms().map(|a| (a.rel, a.args.len())).collect();
    rels.sort();
    rels.dedup();
    let mut dom: Vec<u32> = (0..spec.domain)
        .map(|i| intern_const(&format!("d{i}")))
        .collect();
    dom.extend(q.consts());
    let mut s = ProbStructure::new();
    let target = rng.gen_range(1..=spec.max_tuples.max(1));
    let prob = |rng: &mut dyn rand::RngCore| {
        let d = rng.gen_range(1..=spec.max_den.max(1));
        BigRational::new(rng.gen_range(0..=d).into(), d.into())
    };
    for _ in 0..plants {
        let val: Vec<u32> = (0..q.nvars())
            .map(|_| dom[rng.gen_range(0..dom.len())])
            .collect();
        let ts: Vec<Tuple> = q
            .positive_atoms()
            .map(|a| Tuple {
                rel: a.rel,
                args: a
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Const(c) => *c,
                        Term::Var(v) => val[*v as usize],
                    })
                    .collect(),
            })
            .collect();
        let fresh = ts.iter().filter(|t| s.tuple_index(t).is_none()).count();
        if s.len() + fresh > target {
            continue;
        }
        for t in ts {
            if s.tuple_index(&t).is_none() {
                let p = prob(rng);
                s.insert(t, p);
            }
        }
    }
    if rels.is_empty() {
        return s;
    }
    for _ in 0..target * 4 {
        if s.len() >= target {
            break;
        }
        let (rel, ar) = rels[rng.gen_range(0..rels.len())];
        let t = Tuple {
            rel,
            args: (0..ar).map(|_| dom[rng.gen_range(0..dom.len())]).collect(),
        };
        if s.tuple_index(&t).is_none() {
            let p = prob(rng);
            s.insert(t, p);
        }
    }
    s
}

/// Every tuple over `n` fresh elements (plus the query constants) for each
/// relation of `q`. Probabilities cycle through `1/16 .. 15/16` so that no
/// two neighbouring tuples share a value.
pub fn complete_structure(q: &Query, n: usize) -> ProbStructure {
    let mut rels: Vec<(u32, usize)> = q.positive_atoms().map(|a| (a.rel, a.args.len())).collect();
    rels.sort();
    rels.dedup();
    let mut dom: Vec<u32> = (0..n).map(|i| intern_const(&format!("e{i}"))).collect();
    dom.extend(q.consts());
    let mut s = ProbStructure::new();
    let mut k = 0i64;
    for (rel, ar) in rels {
        let total = dom.len().pow(ar as u32);
        for code in 0..total {
            let mut c = code;
            let args = (0..ar)
                .map(|_| {
                    let x = dom[c % dom.len()];
                    c /= dom.len();
                    x
                })
                .collect();
            s.insert(
                Tuple { rel, args },
                BigRational::new((k % 15 + 1).into(), 16.into()),
            );
            k += 1;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::parse_query;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn loads_lines() {
        let s = ProbStructure::parse("R\ta\t1/2\nS\ta,b\t0.25\n# c\n@domain z\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.prob(&Tuple::new("R", &["a"])), r(1, 2));
        assert_eq!(s.prob(&Tuple::new("S", &["a", "b"])), r(1, 4));
        assert_eq!(s.domain.len(), 3);
        assert!(matches!(
            ProbStructure::parse("R\ta\t3/2"),
            Err(StructError::Range { .. })
        ));
        assert!(matches!(
            ProbStructure::parse("R\ta\t1/2\nR\ta,b\t1/2"),
            Err(StructError::Arity { .. })
        ));
        assert!(matches!(
            ProbStructure::parse("R\ta\t1/2\nR\ta\t1/3"),
            Err(StructError::Duplicate { .. })
        ));
    }

    #[test]
    fn world_probabilities() {
        let s = ProbStructure::parse("R\ta\t1/2\nS\ta,b\t1/3").unwrap();
        let w = world_of(&s, &[Tuple::new("R", &["a"])]).unwrap();
        assert_eq!(world_prob(&s, &w).unwrap(), r(1, 3));
        assert_eq!(world_prob(&s, &World::default()).unwrap(), r(1, 3));
        let mut total = BigRational::zero();
        for m in 0..4usize {
            let present = (0..2).filter(|i| m & (1 << i) != 0).collect();
            total += world_prob(&s, &World { present }).unwrap();
        }
        assert!(total.is_one());
    }

    #[test]
    fn oracle_examples() {
        let s = ProbStructure::parse("R\ta\t3/10").unwrap();
        assert_eq!(
            oracle_eval(&parse_query("R(x)").unwrap(), &s, 24).unwrap(),
            r(3, 10)
        );
        let s = ProbStructure::parse("R\ta\t1/2\nS\ta,b\t1/2").unwrap();
        assert_eq!(
            oracle_eval(&parse_query("R(x),S(x,y)").unwrap(), &s, 24).unwrap(),
            r(1, 4)
        );
        let s = ProbStructure::parse("R\ta\t1/2\nS\ta,b\t1/2\nS\ta,c\t1/2").unwrap();
        assert_eq!(
            oracle_eval(&parse_query("R(x),S(x,y)").unwrap(), &s, 24).unwrap(),
            r(3, 8)
        );
    }

    #[test]
    fn oracle_handles_negation_and_predicates() {
        let s = ProbStructure::parse("R\ta\t1/2\nR\tb\t1/3\nT\ta\t1/4").unwrap();
        // R(x), not T(x): a works with prob 1/2*3/4, b with 1/3
        let got = oracle_eval(&parse_query("R(x),!T(x)").unwrap(), &s, 24).unwrap();
        let a = r(3, 8);
        let b = r(1, 3);
        assert_eq!(
            got,
            BigRational::one() - (BigRational::one() - a) * (BigRational::one() - b)
        );
        let s2 = ProbStructure::parse("S\ta,b\t1/2\nS\tb,a\t1/2").unwrap();
        assert_eq!(
            oracle_eval(&parse_query("S(x,y),x<y").unwrap(), &s2, 24).unwrap(),
            r(1, 2)
        );
    }

    #[test]
    fn mc_degenerate_cases() {
        let s = ProbStructure::parse("R\ta\t1").unwrap();
        let e = mc_eval(&parse_query("R(x)").unwrap(), &s, 1000, 7);
        assert_eq!((e.estimate, e.stderr), (1.0, 0.0));
        let s = ProbStructure::parse("R\ta\t0").unwrap();
        assert_eq!(
            mc_eval(&parse_query("R(x)").unwrap(), &s, 1000, 7).estimate,
            0.0
        );
    }

    #[test]
    fn mc_is_deterministic() {
        let s = ProbStructure::parse("R\ta\t1/2\nS\ta,b\t1/2\nS\ta,c\t1/2").unwrap();
        let q = parse_query("R(x),S(x,y)").unwrap();
        let a = mc_eval(&q, &s, 20_000, 3);
        let b = mc_eval(&q, &s, 20_000, 3);
        assert_eq!(a, b);
        assert!((a.estimate - 0.375).abs() < 4.0 * a.stderr);
    }

    #[test]
    fn property_oracle() {
        let s = ProbStructure::parse("R\ta\t1/3").unwrap();
        let phi = Property::Not(Box::new(Property::Query(parse_query("R('a')").unwrap())));
        assert_eq!(oracle_eval_property(&phi, &s, 24).unwrap(), r(2, 3));
    }
}
