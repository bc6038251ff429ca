//! Variable hierarchy, coverages and their expansion coefficients.

use std::collections::{BTreeSet, HashMap};

use num::{BigInt, BigRational, One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::pstruct::{ProbStructure, StructError, Witnesses};
use crate::qcore::{
    self, entails, equivalent, has_homomorphism, mgu, minimize, Mgu, Op, Pred, Query, Term,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverageError {
    #[error("canonical coverage needs 3^{m} branches, above the cap of {cap}")]
    BranchCap { m: usize, cap: usize },
    #[error("coverage construction exceeded {0} covers")]
    CoverCap(usize),
    #[error("no consistent root assignment: {0}")]
    NoRoots(String),
    #[error("{events} expansion events exceed the cap of {cap}")]
    EventCap { events: usize, cap: usize },
    #[error("query is not satisfiable")]
    Unsatisfiable,
    #[error("oracle: {0}")]
    Oracle(String),
}

impl From<StructError> for CoverageError {
    fn from(e: StructError) -> Self {
        CoverageError::Oracle(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// hierarchy

/// `sg` sets over positive subgoals and the derived preorder on variables.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub sg: Vec<BTreeSet<usize>>,
}

impl Hierarchy {
    /// `x ⊑ y`: sg(x) ⊆ sg(y).
    pub fn below_eq(&self, x: u32, y: u32) -> bool {
        self.sg[x as usize].is_subset(&self.sg[y as usize])
    }
    /// `x ⊏ y`.
    pub fn below(&self, x: u32, y: u32) -> bool {
        self.below_eq(x, y) && self.sg[x as usize] != self.sg[y as usize]
    }
    pub fn equiv(&self, x: u32, y: u32) -> bool {
        self.sg[x as usize] == self.sg[y as usize]
    }
    /// Variables occurring in every positive subgoal.
    pub fn top(&self, natoms: usize) -> Vec<u32> {
        (0..self.sg.len() as u32)
            .filter(|&v| self.sg[v as usize].len() == natoms)
            .collect()
    }
}

pub fn hierarchy(q: &Query) -> Hierarchy {
    let mut sg = vec![BTreeSet::new(); q.nvars()];
    for (i, a) in q.atoms.iter().enumerate() {
        if a.neg {
            continue;
        }
        for v in a.vars() {
            sg[v as usize].insert(i);
        }
    }
    Hierarchy { sg }
}

/// A pair of variables whose subgoal sets overlap without nesting.
pub fn non_hierarchical_pair(q: &Query) -> Option<(u32, u32)> {
    let h = hierarchy(q);
    let n = q.nvars() as u32;
    for x in 0..n {
        for y in (x + 1)..n {
            let (a, b) = (&h.sg[x as usize], &h.sg[y as usize]);
            if !a.is_disjoint(b) && !a.is_subset(b) && !b.is_subset(a) {
                return Some((x, y));
            }
        }
    }
    None
}

pub fn is_hierarchical(q: &Query) -> bool {
    non_hierarchical_pair(q).is_none()
}

// ---------------------------------------------------------------------------
// coverages

/// Factors, covers (as sets of factor indices) and expansion variables.
#[derive(Clone, Debug)]
pub struct Coverage {
    pub factors: Vec<Query>,
    pub covers: Vec<Vec<usize>>,
    pub xvars: Vec<Vec<u32>>,
}

#[derive(Serialize)]
struct CoverageDump {
    factors: Vec<String>,
    covers: Vec<Vec<usize>>,
    expansion_vars: Vec<Vec<String>>,
    nonzero_n: Vec<(Vec<usize>, i64)>,
}

impl Coverage {
    pub fn unary(&self) -> bool {
        self.xvars
            .iter()
            .zip(&self.factors)
            .all(|(x, f)| x.len() == 1 || f.is_ground())
    }

    pub fn root(&self, i: usize) -> Option<u32> {
        match self.xvars[i].as_slice() {
            [r] => Some(*r),
            _ => None,
        }
    }

    pub fn cover_masks(&self) -> Vec<u64> {
        self.covers
            .iter()
            .map(|c| c.iter().fold(0u64, |m, &i| m | 1 << i))
            .collect()
    }

    /// The cover queries (conjunction of their factors).
    pub fn cover_queries(&self) -> Vec<Query> {
        self.covers
            .iter()
            .map(|c| conjoin_all(c.iter().map(|&i| &self.factors[i])))
            .collect()
    }

    /// Every pairwise factor MGU (including a factor with a copy of itself) is 1-1.
    pub fn is_strict(&self) -> bool {
        let n = self.factors.len();
        (0..n).all(|i| {
            (i..n).all(|j| {
                all_mgus(&self.factors[i], &self.factors[j])
                    .iter()
                    .all(|m| m.strict)
            })
        })
    }

    pub fn explain_json(&self) -> serde_json::Value {
        let n = n_table(self);
        let nonzero_n = n
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(m, v)| {
                (
                    (0..self.factors.len())
                        .filter(|i| m & (1 << i) != 0)
                        .collect(),
                    *v,
                )
            })
            .collect();
        let dump = CoverageDump {
            factors: self.factors.iter().map(|f| f.to_string()).collect(),
            covers: self.covers.clone(),
            expansion_vars: self
                .xvars
                .iter()
                .zip(&self.factors)
                .map(|(xs, f)| xs.iter().map(|&v| f.names[v as usize].clone()).collect())
                .collect(),
            nonzero_n,
        };
        serde_json::to_value(dump).expect("serializable")
    }
}

pub fn conjoin_all<'a>(qs: impl IntoIterator<Item = &'a Query>) -> Query {
    let mut acc = Query {
        atoms: vec![],
        preds: vec![],
        names: vec![],
    };
    for q in qs {
        acc = acc.conjoin(q);
    }
    acc
}

/// All MGUs between subgoals of `a` and subgoals of a fresh copy of `b`.
pub fn all_mgus(a: &Query, b: &Query) -> Vec<Mgu> {
    let mut out = Vec::new();
    for i in 0..a.atoms.len() {
        for j in 0..b.atoms.len() {
            if let Some(m) = mgu(a, i, b, j) {
                out.push(m);
            }
        }
    }
    out
}

/// Default expansion variables: a single variable occurring in all positive
/// subgoals when one exists, otherwise all variables.
pub fn default_xvars(f: &Query) -> Vec<u32> {
    let natoms = f.positive_atoms().count();
    match hierarchy(f).top(natoms).first() {
        Some(&r) => vec![r],
        None => (0..f.nvars() as u32).collect(),
    }
}

/// Minimizes the covers, drops unsatisfiable and redundant ones, factors them
/// into connected components and deduplicates equivalent factors.
pub fn coverage_from_covers(covers: Vec<Query>) -> Coverage {
    let covers = normalize_covers(covers);
    let mut factors: Vec<Query> = Vec::new();
    let mut idx = Vec::new();
    for c in &covers {
        let mut ids = BTreeSet::new();
        for comp in c.components() {
            let pos = factors
                .iter()
                .position(|f| equivalent(f, &comp))
                .unwrap_or_else(|| {
                    factors.push(comp.clone());
                    factors.len() - 1
                });
            ids.insert(pos);
        }
        idx.push(ids.into_iter().collect::<Vec<_>>());
    }
    let xvars = factors.iter().map(default_xvars).collect();
    Coverage {
        factors,
        covers: idx,
        xvars,
    }
}

/// Minimizes covers and removes those that imply another one.
fn normalize_covers(covers: Vec<Query>) -> Vec<Query> {
    let mut cs: Vec<Query> = Vec::new();
    let mut seen = BTreeSet::new();
    for c in covers {
        let m = minimize(&c);
        if seen.insert(m.canonical_text()) {
            cs.push(m);
        }
    }
    let n = cs.len();
    let mut drop = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || drop[j] {
                continue;
            }
            // c_i implies c_j: c_i is redundant unless they are equivalent and i comes first
            if has_homomorphism(&cs[j], &cs[i]) {
                let back = has_homomorphism(&cs[i], &cs[j]);
                if !back || j < i {
                    drop[i] = true;
                    break;
                }
            }
        }
    }
    cs.into_iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(c, _)| c)
        .collect()
}

pub fn trivial_coverage(q: &Query) -> Coverage {
    coverage_from_covers(vec![minimize(q)])
}

/// Variable pairs that co-occur in a subgoal plus variable/constant pairs.
fn branch_pairs(q: &Query) -> Vec<(Term, Term)> {
    let mut out: Vec<(Term, Term)> = q
        .cooccurring_pairs()
        .into_iter()
        .map(|(x, y)| (Term::Var(x), Term::Var(y)))
        .collect();
    for c in q.consts() {
        for v in 0..q.nvars() as u32 {
            out.push((Term::Var(v), Term::Const(c)));
        }
    }
    out
}

pub const DEFAULT_BRANCH_CAP: usize = 729;

/// Number of three-way branch points of the canonical coverage.
pub fn canonical_branch_count(q: &Query) -> usize {
    branch_pairs(&minimize(q)).len()
}

/// Branches every co-occurring variable pair and variable/constant pair on `<`, `=`, `>`.
pub fn canonical_coverage(q: &Query, cap: usize) -> Result<Coverage, CoverageError> {
    let q = minimize(q);
    let pairs = branch_pairs(&q);
    let m = pairs.len();
    if m >= 40 || 3usize.pow(m as u32) > cap {
        return Err(CoverageError::BranchCap { m, cap });
    }
    let mut covers = Vec::new();
    let mut preds = Vec::new();
    fn rec(
        q: &Query,
        pairs: &[(Term, Term)],
        k: usize,
        preds: &mut Vec<Pred>,
        out: &mut Vec<Query>,
    ) {
        if !qcore::preds_sat(&[q.preds.as_slice(), preds.as_slice()].concat()) {
            return;
        }
        if k == pairs.len() {
            if let Some(c) = q.with_preds(preds) {
                out.push(c);
            }
            return;
        }
        let (u, v) = pairs[k];
        for p in [
            Pred::new(Op::Lt, u, v),
            Pred::new(Op::Eq, u, v),
            Pred::new(Op::Lt, v, u),
        ] {
            preds.push(p);
            rec(q, pairs, k + 1, preds, out);
            preds.pop();
        }
    }
    rec(&q, &pairs, 0, &mut preds, &mut covers);
    if covers.is_empty() {
        return Err(CoverageError::Unsatisfiable);
    }
    Ok(coverage_from_covers(covers))
}

/// A split of one factor on `u = v` versus `u != v` (or the three-way order split).
#[derive(Clone, Copy, Debug)]
enum Split {
    EqNeq(usize, Term, Term),
    Order(usize, Term, Term),
}

fn term_apply(t: Term, h: &[Term]) -> Term {
    match t {
        Term::Var(v) => h[v as usize],
        c => c,
    }
}

/// Finds a factor MGU that is not 1-1 and returns the equality to branch on.
fn non_strict_split(factors: &[Query]) -> Option<Split> {
    let n = factors.len();
    for i in 0..n {
        for j in i..n {
            for m in all_mgus(&factors[i], &factors[j]) {
                if m.strict {
                    continue;
                }
                let nl = m.offset as usize;
                let total = m.theta.len();
                for (lo, hi, f) in [(0, nl, i), (nl, total, j)] {
                    for x in lo..hi {
                        if let Term::Const(c) = m.theta[x] {
                            return Some(Split::EqNeq(
                                f,
                                Term::Var((x - lo) as u32),
                                Term::Const(c),
                            ));
                        }
                        for y in (x + 1)..hi {
                            if m.theta[x] == m.theta[y] {
                                return Some(Split::EqNeq(
                                    f,
                                    Term::Var((x - lo) as u32),
                                    Term::Var((y - lo) as u32),
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    None
}

/// Finds a root-candidate variable that some factor unifier maps to a query
/// constant. Only those pairs need `=`/`!=` branches: any other root value
/// shares no tuple with a ground factor or with another grounding.
fn root_const_split(factors: &[Query], consts: &BTreeSet<u32>) -> Option<Split> {
    for (i, f) in factors.iter().enumerate() {
        if f.is_ground() {
            continue;
        }
        let top = hierarchy(f).top(f.positive_atoms().count());
        for g in factors {
            for m in all_mgus(f, g) {
                for &v in &top {
                    if let Term::Const(c) = m.left(v) {
                        if consts.contains(&c) {
                            return Some(Split::EqNeq(i, Term::Var(v), Term::Const(c)));
                        }
                    }
                }
            }
        }
    }
    None
}

/// Applies a split to every cover containing the factor.
fn apply_split(covers: &[Query], factors: &[Query], split: Split) -> Vec<Query> {
    let (fi, u, v, order) = match split {
        Split::EqNeq(f, u, v) => (f, u, v, false),
        Split::Order(f, u, v) => (f, u, v, true),
    };
    let rep = &factors[fi];
    let mut out = Vec::new();
    for c in covers {
        let comps = c.components();
        let hit = comps.iter().position(|comp| equivalent(comp, rep));
        let Some(k) = hit else {
            out.push(c.clone());
            continue;
        };
        let h = qcore::homomorphisms_with(rep, &comps[k], &[], 1)
            .pop()
            .expect("equivalent factor");
        let (uu, vv) = (term_apply(u, &h), term_apply(v, &h));
        let branches: Vec<Vec<Pred>> = if order {
            vec![
                vec![Pred::new(Op::Lt, uu, vv)],
                vec![Pred::new(Op::Eq, uu, vv)],
                vec![Pred::new(Op::Lt, vv, uu)],
            ]
        } else {
            vec![
                vec![Pred::new(Op::Eq, uu, vv)],
                vec![Pred::new(Op::Neq, uu, vv)],
            ]
        };
        for b in branches {
            let mut parts = comps.clone();
            match parts[k].with_preds(&b) {
                Some(p) => parts[k] = p,
                None => continue,
            }
            out.push(conjoin_all(parts.iter()));
        }
    }
    out
}

pub const DEFAULT_COVER_CAP: usize = 400;

/// Refines covers by `=`/`!=` splits until every factor MGU is 1-1 and, when
/// `separate_consts` is set, every root candidate is distinct from each query constant.
fn refine_strict(
    mut covers: Vec<Query>,
    consts: &BTreeSet<u32>,
    separate_consts: bool,
    cap: usize,
) -> Result<(Vec<Query>, Coverage), CoverageError> {
    loop {
        covers = normalize_covers(covers);
        if covers.is_empty() {
            return Err(CoverageError::Unsatisfiable);
        }
        if covers.len() > cap {
            return Err(CoverageError::CoverCap(cap));
        }
        let cov = coverage_from_covers(covers.clone());
        let split = if separate_consts {
            root_const_split(&cov.factors, consts)
        } else {
            None
        }
        .or_else(|| non_strict_split(&cov.factors));
        match split {
            None => return Ok((covers, cov)),
            Some(s) => covers = apply_split(&covers, &cov.factors, s),
        }
    }
}

/// A strict coverage obtained by splitting the trivial coverage only where MGUs are not 1-1.
pub fn strict_coverage(q: &Query) -> Result<Coverage, CoverageError> {
    let q = minimize(q);
    refine_strict(vec![q.clone()], &q.consts(), false, DEFAULT_COVER_CAP).map(|r| r.1)
}

/// Searches one root per non-ground factor so that every factor MGU maps roots to roots.
fn assign_roots(cov: &Coverage) -> Result<Vec<Option<u32>>, Option<Split>> {
    let n = cov.factors.len();
    let cands: Vec<Vec<u32>> = cov
        .factors
        .iter()
        .map(|f| {
            if f.is_ground() {
                vec![]
            } else {
                hierarchy(f).top(f.positive_atoms().count())
            }
        })
        .collect();
    let mut mg: HashMap<(usize, usize), Vec<Mgu>> = HashMap::new();
    for i in 0..n {
        for j in i..n {
            if !cands[i].is_empty() && !cands[j].is_empty() {
                mg.insert((i, j), all_mgus(&cov.factors[i], &cov.factors[j]));
            }
        }
    }
    let ok = |i: usize, ri: u32, j: usize, rj: u32| -> bool {
        let (a, ra, b, rb) = if i <= j {
            (i, ri, j, rj)
        } else {
            (j, rj, i, ri)
        };
        mg[&(a, b)].iter().all(|m| m.left(ra) == m.right(rb))
    };
    // self-compatible candidates only
    let cands: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            cands[i]
                .iter()
                .copied()
                .filter(|&r| ok(i, r, i, r))
                .collect()
        })
        .collect();
    let order: Vec<usize> = (0..n).filter(|&i| !cov.factors[i].is_ground()).collect();
    let mut assign: Vec<Option<u32>> = vec![None; n];
    fn rec(
        k: usize,
        order: &[usize],
        cands: &[Vec<u32>],
        assign: &mut Vec<Option<u32>>,
        ok: &dyn Fn(usize, u32, usize, u32) -> bool,
    ) -> bool {
        if k == order.len() {
            return true;
        }
        let i = order[k];
        for &r in &cands[i] {
            if order[..k].iter().all(|&j| ok(j, assign[j].unwrap(), i, r)) {
                assign[i] = Some(r);
                if rec(k + 1, order, cands, assign, ok) {
                    return true;
                }
            }
        }
        assign[i] = None;
        false
    }
    if rec(0, &order, &cands, &mut assign, &ok) {
        return Ok(assign);
    }
    // pick an unordered pair of top variables to split on
    for &i in &order {
        let f = &cov.factors[i];
        let top = hierarchy(f).top(f.positive_atoms().count());
        for (a, &x) in top.iter().enumerate() {
            for &y in &top[a + 1..] {
                let (tx, ty) = (Term::Var(x), Term::Var(y));
                if !entails(&f.preds, &Pred::new(Op::Lt, tx, ty))
                    && !entails(&f.preds, &Pred::new(Op::Lt, ty, tx))
                {
                    return Err(Some(Split::Order(i, tx, ty)));
                }
            }
        }
    }
    Err(None)
}

/// A strict unary coverage: one root per non-ground factor, every factor MGU
/// maps roots to roots, and no factor unifier maps a root to a constant.
pub fn unary_roots(q: &Query) -> Result<Coverage, CoverageError> {
    let q = minimize(q);
    let consts = q.consts();
    let mut covers = vec![q.clone()];
    for _ in 0..64 {
        let (cs, mut cov) = refine_strict(covers, &consts, true, DEFAULT_COVER_CAP)?;
        match assign_roots(&cov) {
            Ok(roots) => {
                cov.xvars = roots
                    .iter()
                    .map(|r| r.map(|v| vec![v]).unwrap_or_default())
                    .collect();
                return Ok(cov);
            }
            Err(Some(split)) => covers = apply_split(&cs, &cov.factors, split),
            Err(None) => {
                return Err(CoverageError::NoRoots(q.to_string()));
            }
        }
    }
    Err(CoverageError::NoRoots(q.to_string()))
}

// ---------------------------------------------------------------------------
// N coefficients

/// `N(C, σ)` straight from its definition: `(-1)^|σ| Σ_{s ⊆ C, ∪s = σ} (-1)^|s|`.
pub fn n_coefficient(covers: &[u64], sigma: u64) -> i64 {
    let inside: Vec<u64> = covers
        .iter()
        .copied()
        .filter(|&c| c & !sigma == 0)
        .collect();
    assert!(inside.len() < 28, "too many covers for direct enumeration");
    let mut total = 0i64;
    for s in 0u64..(1 << inside.len()) {
        let mut u = 0u64;
        for (k, c) in inside.iter().enumerate() {
            if s & (1 << k) != 0 {
                u |= c;
            }
        }
        if u == sigma {
            total += if s.count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    if sigma.count_ones().is_multiple_of(2) {
        total
    } else {
        -total
    }
}

/// `N(σ)` for all `σ ⊆ F` from an up-set membership test:
/// `N(σ) = Σ_{σ0 ⊆ σ, σ0 ∉ UP} (-1)^|σ0|`, via a subset-sum transform.
pub fn n_table_from_up(nf: usize, in_up: impl Fn(u64) -> bool) -> Vec<i64> {
    assert!(nf <= 24, "too many factors for an N table");
    let size = 1usize << nf;
    let mut t: Vec<i64> = (0..size as u64)
        .map(|m| {
            if in_up(m) {
                0
            } else if m.count_ones() % 2 == 0 {
                1
            } else {
                -1
            }
        })
        .collect();
    for b in 0..nf {
        for m in 0..size {
            if m & (1 << b) != 0 {
                t[m] += t[m ^ (1 << b)];
            }
        }
    }
    t
}

/// The N table of a coverage via the up-set formula.
pub fn n_table(cov: &Coverage) -> Vec<i64> {
    let masks = cov.cover_masks();
    n_table_from_up(cov.factors.len(), |m| masks.iter().any(|&c| c & !m == 0))
}

// ---------------------------------------------------------------------------
// naive expansion

pub const DEFAULT_EVENT_CAP: usize = 14;

/// `p(q)` as the expansion `-Σ_{T̄≠∅} N(sig T̄) (-1)^|T̄| p(F(T̄))`, with every
/// `p(F(T̄))` computed by world enumeration. Exponential; for testing.
pub fn expansion_eval_naive(
    cov: &Coverage,
    s: &ProbStructure,
    event_cap: usize,
    oracle_cap: usize,
) -> Result<BigRational, CoverageError> {
    let mut consts: BTreeSet<u32> = BTreeSet::new();
    for f in &cov.factors {
        consts.extend(f.consts());
    }
    let s = s.with_consts(consts);
    let dom = s.domain.clone();
    // events: (factor, grounded query)
    let mut events: Vec<(usize, Query)> = Vec::new();
    for (i, f) in cov.factors.iter().enumerate() {
        let xs = &cov.xvars[i];
        let k = xs.len();
        let total = dom.len().checked_pow(k as u32).unwrap_or(usize::MAX);
        if total > event_cap * 64 {
            return Err(CoverageError::EventCap {
                events: total,
                cap: event_cap,
            });
        }
        for code in 0..total {
            let mut c = code;
            let mut sub: Vec<Term> = (0..f.nvars() as u32).map(Term::Var).collect();
            for &x in xs {
                sub[x as usize] = Term::Const(dom[c % dom.len()]);
                c /= dom.len();
            }
            if let Some(g) = f.substitute(&sub) {
                if !Witnesses::of(&g, &s).pos.is_empty() {
                    events.push((i, g));
                }
            }
        }
        if events.len() > event_cap {
            return Err(CoverageError::EventCap {
                events: events.len(),
                cap: event_cap,
            });
        }
    }
    let qs: Vec<Query> = events.iter().map(|e| e.1.clone()).collect();
    let ws = Witnesses::of_many(&qs, &s);
    let rel = ws.first().map(|w| w.relevant.clone()).unwrap_or_default();
    if rel.len() > oracle_cap || rel.len() > 63 {
        return Err(StructError::CapExceeded {
            relevant: rel.len(),
            cap: oracle_cap,
        }
        .into());
    }
    // distribution of the set of true events
    let probs: Vec<BigRational> = rel.iter().map(|&i| s.tuples()[i].1.clone()).collect();
    let mut dist: HashMap<u64, BigRational> = HashMap::new();
    for w in 0u64..(1u64 << rel.len()) {
        let mut pw = BigRational::one();
        for (b, p) in probs.iter().enumerate() {
            if w & (1 << b) != 0 {
                pw *= p;
            } else {
                pw *= BigRational::one() - p;
            }
            if pw.is_zero() {
                break;
            }
        }
        if pw.is_zero() {
            continue;
        }
        let mut em = 0u64;
        for (e, wi) in ws.iter().enumerate() {
            if wi.satisfied64(w) {
                em |= 1 << e;
            }
        }
        *dist.entry(em).or_insert_with(BigRational::zero) += pw;
    }
    let dist: Vec<(u64, BigRational)> = dist.into_iter().collect();
    // N over the factors that have events; a cover using any other factor
    // is never inside a signature
    let used: Vec<usize> = events
        .iter()
        .map(|e| e.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let local = |f: usize| used.iter().position(|&u| u == f);
    let masks: Vec<u64> = cov
        .covers
        .iter()
        .filter_map(|c| {
            c.iter()
                .try_fold(0u64, |m, &f| local(f).map(|b| m | 1 << b))
        })
        .collect();
    let nt = n_table_from_up(used.len(), |m| masks.iter().any(|&c| c & !m == 0));
    let ne = events.len();
    let mut total = BigRational::zero();
    for t in 1u64..(1u64 << ne) {
        let mut sig = 0u64;
        for (e, ev) in events.iter().enumerate() {
            if t & (1 << e) != 0 {
                sig |= 1 << local(ev.0).expect("event factor is used");
            }
        }
        let n = nt[sig as usize];
        if n == 0 {
            continue;
        }
        let p: BigRational = dist
            .iter()
            .filter(|(m, _)| m & t == t)
            .map(|(_, p)| p.clone())
            .sum();
        let term = p * BigRational::from(BigInt::from(n));
        if t.count_ones() % 2 == 0 {
            total -= term;
        } else {
            total += term;
        }
    }
    debug_assert!(!total.is_negative() || total.is_zero());
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pstruct::oracle_eval;
    use crate::qcore::parse_query;

    fn q(s: &str) -> Query {
        parse_query(s).unwrap()
    }

    #[test]
    fn hierarchy_examples() {
        let h = hierarchy(&q("R(x),S(x,y)"));
        assert!(h.below(1, 0));
        assert!(is_hierarchical(&q("R(x),S(x,y)")));
        assert_eq!(non_hierarchical_pair(&q("R(x),S(x,y),T(y)")), Some((0, 1)));
        assert!(is_hierarchical(&q("R(x),S(x,y),S(u,v),T(v)")));
        assert!(hierarchy(&q("R(x,y)")).equiv(0, 1));
    }

    #[test]
    fn n_coefficient_three_covers() {
        let covers = [0b011, 0b110, 0b101];
        assert_eq!(n_coefficient(&covers, 0b111), -2);
        let t = n_table_from_up(3, |m| covers.iter().any(|&c| c & !m == 0));
        for s in 0..8u64 {
            assert_eq!(t[s as usize], n_coefficient(&covers, s));
        }
    }

    #[test]
    fn canonical_coverage_of_ground_query() {
        let c = canonical_coverage(&q("R('a')"), DEFAULT_BRANCH_CAP).unwrap();
        assert_eq!(c.covers.len(), 1);
        assert_eq!(c.factors.len(), 1);
    }

    #[test]
    fn canonical_coverage_is_strict() {
        for s in [
            "T(x),R(x,x,y),R(u,v,v)",
            "R(x),S(x,y),S(y,x)",
            "R(x,y),R(y,z)",
        ] {
            let c = canonical_coverage(&q(s), DEFAULT_BRANCH_CAP).unwrap();
            assert!(c.is_strict(), "{s}");
        }
    }

    #[test]
    fn marked_ring_canonical_has_order_branches() {
        let c = canonical_coverage(&q("R(x),S(x,y),S(y,x)"), DEFAULT_BRANCH_CAP).unwrap();
        assert!(c
            .factors
            .iter()
            .any(|f| f.preds.iter().any(|p| p.op == Op::Lt)));
        assert!(c.factors.iter().any(|f| f.nvars() == 1));
    }

    #[test]
    fn unary_roots_examples() {
        let c = unary_roots(&q("R(x,y),S(x,y),S(u,v),T(v)")).unwrap();
        for (i, f) in c.factors.iter().enumerate() {
            let r = c.root(i).unwrap();
            let name = &f.names[r as usize];
            assert!(name == "y" || name == "v", "{f} root {name}");
        }
        let c = unary_roots(&q("R(x,y),R(y,x)")).unwrap();
        assert_eq!(c.factors.len(), 2);
        assert!(c.unary());
        let c = unary_roots(&q("R(x)")).unwrap();
        assert_eq!(c.root(0), Some(0));
    }

    #[test]
    fn unary_roots_map_roots_to_roots() {
        for s in [
            "R(x,y),S(x,y),S(u,v),T(v)",
            "R(x,y),R(y,x)",
            "R(x),S(x,y),S(u,v),T(u)",
        ] {
            let c = unary_roots(&q(s)).unwrap();
            for i in 0..c.factors.len() {
                for j in 0..c.factors.len() {
                    for m in all_mgus(&c.factors[i], &c.factors[j]) {
                        assert_eq!(m.left(c.root(i).unwrap()), m.right(c.root(j).unwrap()));
                    }
                }
            }
        }
    }

    #[test]
    fn naive_expansion_matches_oracle() {
        let s = ProbStructure::parse("R\ta\t1/2").unwrap();
        let c = trivial_coverage(&q("R(x)"));
        assert_eq!(
            expansion_eval_naive(&c, &s, 14, 24).unwrap(),
            BigRational::new(1.into(), 2.into())
        );
        let s = ProbStructure::parse("P\ta\t1/2\nR\ta,a\t1/2\nS\ta\t1/2").unwrap();
        let qq = q("P(x),R(x,y),R(u,v),S(u)");
        let c = trivial_coverage(&qq);
        assert_eq!(
            expansion_eval_naive(&c, &s, 14, 24).unwrap(),
            oracle_eval(&qq, &s, 24).unwrap()
        );
        let empty = ProbStructure::new();
        assert!(expansion_eval_naive(&c, &empty, 14, 24).unwrap().is_zero());
    }

    #[test]
    fn strict_coverage_of_double_r_query() {
        let c = strict_coverage(&q("T(x),R(x,x,y),R(u,v,v)")).unwrap();
        assert!(c.is_strict());
        let expect = [
            "T(x),R(x,x,x)",
            "T(x),R(x,x,y),x!=y",
            "R(u,u,u)",
            "R(u,v,v),u!=v",
        ];
        assert_eq!(c.factors.len(), 4);
        let ids: Vec<usize> = expect
            .iter()
            .map(|e| {
                c.factors
                    .iter()
                    .position(|f| equivalent(f, &q(e)))
                    .expect(e)
            })
            .collect();
        let mut covers: Vec<Vec<usize>> = c.covers.clone();
        covers.sort();
        let mut want = vec![vec![ids[0]], vec![ids[1], ids[2]], vec![ids[1], ids[3]]];
        for w in &mut want {
            w.sort();
        }
        want.sort();
        assert_eq!(covers, want);
    }

    #[test]
    fn n_table_of_two_cover_coverage() {
        // covers {f1,f2} and {f3}
        let covers = [0b011, 0b100];
        let t = n_table_from_up(3, |m| covers.iter().any(|&c| c & !m == 0));
        for s in 0..8u64 {
            assert_eq!(t[s as usize], n_coefficient(&covers, s));
        }
        assert_eq!(t[0b011], -1);
        assert_eq!(t[0b100], 1);
        assert_eq!(t[0b111], -1);
        assert_eq!(t.iter().skip(1).filter(|v| **v != 0).count(), 3);
    }

    #[test]
    fn covers_are_equivalent_to_query() {
        use crate::pstruct::{oracle_eval_property, Property};
        let s = ProbStructure::parse(
            "T\ta\t1/2\nT\tb\t1/3\nR\ta,a,a\t1/2\nR\ta,a,b\t1/4\nR\tb,a,a\t2/3\nR\tb,b,b\t1/5",
        )
        .unwrap();
        for text in ["T(x),R(x,x,y),R(u,v,v)", "R(x),S(x,y),S(y,x)"] {
            let qq = q(text);
            for c in [
                strict_coverage(&qq).unwrap(),
                canonical_coverage(&qq, DEFAULT_BRANCH_CAP).unwrap(),
            ] {
                let phi =
                    Property::Or(c.cover_queries().into_iter().map(Property::Query).collect());
                assert_eq!(
                    oracle_eval_property(&phi, &s, 24).unwrap(),
                    oracle_eval(&qq, &s, 24).unwrap()
                );
            }
        }
    }
}
