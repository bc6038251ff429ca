//! Inversions, hierarchical joins, erasers and the PTIME / #P-hard decision.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::hiercov::{
    self, all_mgus, canonical_branch_count, canonical_coverage, hierarchy, n_table,
    non_hierarchical_pair, strict_coverage, Coverage, CoverageError, DEFAULT_BRANCH_CAP,
};
use crate::qcore::{equivalent, has_homomorphism, minimize, parse_query, Mgu, Query, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassifyError {
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("hierarchical closure exceeded {0} queries")]
    ClosureCap(usize),
    #[error("query has negated subgoals; classify its positive part instead")]
    Negation,
}

// ---------------------------------------------------------------------------
// unification graph

/// A node `(f, x, y)`: factor index and two of its variables.
pub type Node = (usize, u32, u32);

/// Undirected graph over `(f, x, y)` triples, linked when some subgoal MGU
/// identifies `x` with `x'` and `y` with `y'`.
#[derive(Clone, Debug)]
pub struct UnificationGraph {
    pub nodes: Vec<Node>,
    index: HashMap<Node, usize>,
    adj: Vec<BTreeSet<usize>>,
}

impl UnificationGraph {
    pub fn new(factors: &[Query]) -> UnificationGraph {
        let mut nodes = Vec::new();
        for (f, q) in factors.iter().enumerate() {
            let n = q.nvars() as u32;
            for x in 0..n {
                for y in 0..n {
                    nodes.push((f, x, y));
                }
            }
        }
        let index: HashMap<Node, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut adj = vec![BTreeSet::new(); nodes.len()];
        for i in 0..factors.len() {
            for j in i..factors.len() {
                for m in all_mgus(&factors[i], &factors[j]) {
                    // same image in θ
                    let mut by_img: HashMap<Term, Vec<u32>> = HashMap::new();
                    for y in 0..factors[j].nvars() as u32 {
                        by_img.entry(m.right(y)).or_default().push(y);
                    }
                    let partners = |x: u32| by_img.get(&m.left(x)).cloned().unwrap_or_default();
                    for x in 0..factors[i].nvars() as u32 {
                        for &x2 in &partners(x) {
                            for y in 0..factors[i].nvars() as u32 {
                                for &y2 in &partners(y) {
                                    let a = index[&(i, x, y)];
                                    let b = index[&(j, x2, y2)];
                                    adj[a].insert(b);
                                    adj[b].insert(a);
                                }
                            }
                        }
                    }
                }
            }
        }
        UnificationGraph { nodes, index, adj }
    }

    pub fn has_edge(&self, a: Node, b: Node) -> bool {
        match (self.index.get(&a), self.index.get(&b)) {
            (Some(&i), Some(&j)) => self.adj[i].contains(&j),
            _ => false,
        }
    }

    pub fn neighbors(&self, a: Node) -> Vec<Node> {
        self.index
            .get(&a)
            .map(|&i| self.adj[i].iter().map(|&j| self.nodes[j]).collect())
            .unwrap_or_default()
    }
}

/// A unification path from `(f, x, y)` with `x ⊐ y` to `(f', x', y')` with `x' ⊏ y'`.
#[derive(Clone, Debug, Serialize)]
pub struct Inversion {
    pub path: Vec<String>,
}

impl fmt::Display for Inversion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.join(" -- "))
    }
}

fn node_text(factors: &[Query], n: Node) -> String {
    let q = &factors[n.0];
    format!(
        "({}; {}, {})",
        q, q.names[n.1 as usize], q.names[n.2 as usize]
    )
}

/// Searches the coverage's unification graph for an inversion.
pub fn coverage_inversion(cov: &Coverage) -> Option<Inversion> {
    let g = UnificationGraph::new(&cov.factors);
    let hs: Vec<_> = cov.factors.iter().map(hierarchy).collect();
    let above = |n: Node| hs[n.0].below(n.2, n.1);
    let under = |n: Node| hs[n.0].below(n.1, n.2);
    let level = |n: Node| hs[n.0].equiv(n.1, n.2);
    let mut parent: Vec<Option<usize>> = vec![None; g.nodes.len()];
    let mut seen = vec![false; g.nodes.len()];
    let mut queue = VecDeque::new();
    for (i, &n) in g.nodes.iter().enumerate() {
        if above(n) {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &j in &g.adj[i] {
            if seen[j] {
                continue;
            }
            let n = g.nodes[j];
            if under(n) {
                let mut path = vec![node_text(&cov.factors, n)];
                let mut k = Some(i);
                while let Some(c) = k {
                    path.push(node_text(&cov.factors, g.nodes[c]));
                    k = parent[c];
                }
                path.reverse();
                return Some(Inversion { path });
            }
            if level(n) {
                seen[j] = true;
                parent[j] = Some(i);
                queue.push_back(j);
            }
        }
    }
    None
}

/// A strict coverage suitable for the inversion test: canonical when its
/// branch count is within the cap, otherwise the lazily refined one.
pub fn inversion_coverage(q: &Query) -> Result<Coverage, CoverageError> {
    let m = minimize(q);
    if 3f64.powi(canonical_branch_count(&m) as i32) <= DEFAULT_BRANCH_CAP as f64 {
        canonical_coverage(&m, DEFAULT_BRANCH_CAP)
    } else {
        strict_coverage(&m)
    }
}

/// An inversion of `q` (on a hierarchical query), if any.
pub fn find_inversion(q: &Query) -> Result<Option<Inversion>, CoverageError> {
    Ok(coverage_inversion(&inversion_coverage(q)?))
}

// ---------------------------------------------------------------------------
// hierarchical joins

/// Pairs `(x, y)` (x from the first query, y from the second) identified by an MGU.
fn mgu_pairs(m: &Mgu) -> Vec<(u32, u32)> {
    m.pairs()
}

/// Conjunction of `h1` and `h2` with each pair `(x, y)` identified. Returns
/// `None` when the predicates become unsatisfiable.
pub fn join_on(h1: &Query, h2: &Query, pairs: &[(u32, u32)]) -> Option<Query> {
    let off = h1.nvars() as u32;
    let c = h1.conjoin(h2);
    let mut sub: Vec<Term> = (0..c.nvars() as u32).map(Term::Var).collect();
    for &(x, y) in pairs {
        sub[(y + off) as usize] = Term::Var(x);
    }
    c.substitute(&sub)
}

/// The hierarchical unifier: the largest subset of the MGU pairs (restricted to
/// expansion variables) closed upward under `⊑` on each side whose join is
/// hierarchical. Empty when no such nonempty subset exists.
pub fn hierarchical_unifier(
    h1: &Query,
    x1: &[u32],
    h2: &Query,
    x2: &[u32],
    m: &Mgu,
) -> Vec<(u32, u32)> {
    let pairs: Vec<(u32, u32)> = mgu_pairs(m)
        .into_iter()
        .filter(|(x, y)| x1.contains(x) && x2.contains(y))
        .collect();
    let n = pairs.len();
    if n == 0 || n > 16 {
        return vec![];
    }
    let (g1, g2) = (hierarchy(h1), hierarchy(h2));
    let closed = |mask: u32| {
        pairs.iter().enumerate().all(|(i, &(x, y))| {
            mask & (1 << i) == 0
                || pairs.iter().enumerate().all(|(j, &(x2, y2))| {
                    mask & (1 << j) != 0 || !(g1.below_eq(x, x2) || g2.below_eq(y, y2))
                })
        })
    };
    let mut best: Option<u32> = None;
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
    for mask in masks {
        if let Some(b) = best {
            if mask.count_ones() < b.count_ones() {
                break;
            }
        }
        if !closed(mask) {
            continue;
        }
        let sel: Vec<(u32, u32)> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| pairs[i])
            .collect();
        match join_on(h1, h2, &sel) {
            Some(j) if hiercov::is_hierarchical(&minimize(&j)) && best.is_none() => {
                best = Some(mask);
            }
            _ => {}
        }
    }
    best.map(|b| {
        (0..n)
            .filter(|i| b & (1 << i) != 0)
            .map(|i| pairs[i])
            .collect()
    })
    .unwrap_or_default()
}

/// One non-trivial join found while closing the factor set.
#[derive(Clone, Debug, Serialize)]
pub struct JoinRecord {
    pub left: usize,
    pub right: usize,
    pub query: String,
    pub inversion: Option<String>,
    pub eraser: Option<Vec<usize>>,
}

/// The closure of a coverage's factors under non-trivial hierarchical joins
/// (all variables are expansion variables).
#[derive(Clone, Debug)]
pub struct Closure {
    pub coverage: Coverage,
    /// Members: original factors, then inversion-free joins.
    pub members: Vec<Query>,
    /// Original factors each member stands for.
    pub factors_of: Vec<BTreeSet<usize>>,
    pub joins: Vec<JoinRecord>,
}

pub const DEFAULT_CLOSURE_CAP: usize = 256;

/// Closes the factor set under hierarchical joins. Joins with an inversion are
/// recorded (with an eraser when one exists) but not added. With `stop_early`
/// the search ends at the first join that has an inversion and no eraser.
pub fn hierarchical_closure(
    cov: &Coverage,
    cap: usize,
    stop_early: bool,
) -> Result<Closure, ClassifyError> {
    let nt = n_table(cov);
    let mut members: Vec<Query> = cov.factors.clone();
    let mut factors_of: Vec<BTreeSet<usize>> =
        (0..members.len()).map(|i| BTreeSet::from([i])).collect();
    let mut joins: Vec<JoinRecord> = Vec::new();
    let mut seen_join: Vec<Query> = Vec::new();
    let mut done: BTreeSet<(usize, usize)> = BTreeSet::new();
    loop {
        let mut grew = false;
        let n = members.len();
        for i in 0..n {
            for j in i..n {
                if !done.insert((i, j)) {
                    continue;
                }
                let (hi, hj) = (members[i].clone(), members[j].clone());
                if hi.is_ground() || hj.is_ground() {
                    continue;
                }
                let xi: Vec<u32> = (0..hi.nvars() as u32).collect();
                let xj: Vec<u32> = (0..hj.nvars() as u32).collect();
                for m in all_mgus(&hi, &hj) {
                    let tu = hierarchical_unifier(&hi, &xi, &hj, &xj, &m);
                    if tu.is_empty() {
                        continue;
                    }
                    let Some(jq) = join_on(&hi, &hj, &tu) else {
                        continue;
                    };
                    let jq = minimize(&jq);
                    if equivalent(&jq, &hi) || equivalent(&jq, &hj) {
                        continue;
                    }
                    if seen_join.iter().any(|s| equivalent(s, &jq)) {
                        continue;
                    }
                    seen_join.push(jq.clone());
                    let fij: BTreeSet<usize> =
                        factors_of[i].union(&factors_of[j]).copied().collect();
                    let inv = find_inversion(&jq)?;
                    let eraser = match &inv {
                        None => None,
                        Some(_) => find_eraser(cov, &nt, &jq, &fij),
                    };
                    joins.push(JoinRecord {
                        left: i,
                        right: j,
                        query: jq.to_string(),
                        inversion: inv.as_ref().map(|v| v.to_string()),
                        eraser: eraser.clone(),
                    });
                    if stop_early && inv.is_some() && eraser.is_none() {
                        return Ok(Closure {
                            coverage: cov.clone(),
                            members,
                            factors_of,
                            joins,
                        });
                    }
                    if inv.is_none() && !members.iter().any(|h| equivalent(h, &jq)) {
                        if members.len() >= cap {
                            return Err(ClassifyError::ClosureCap(cap));
                        }
                        members.push(jq);
                        factors_of.push(fij);
                        grew = true;
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }
    Ok(Closure {
        coverage: cov.clone(),
        members,
        factors_of,
        joins,
    })
}

/// A nonempty set of original factors outside `fij`, each mapping
/// homomorphically into `jq`, such that adding it never changes `N`.
pub fn find_eraser(
    cov: &Coverage,
    nt: &[i64],
    jq: &Query,
    fij: &BTreeSet<usize>,
) -> Option<Vec<usize>> {
    let cands: Vec<usize> = (0..cov.factors.len())
        .filter(|f| !fij.contains(f) && has_homomorphism(&cov.factors[*f], jq))
        .collect();
    if cands.is_empty() || cands.len() > 12 {
        return None;
    }
    let base: u64 = fij.iter().fold(0, |m, &f| m | 1 << f);
    let full = (1u64 << cov.factors.len()) - 1;
    let mut subsets: Vec<u32> = (1..(1u32 << cands.len())).collect();
    subsets.sort_by_key(|s| s.count_ones());
    for s in subsets {
        let e: u64 = (0..cands.len())
            .filter(|k| s & (1 << k) != 0)
            .fold(0, |m, k| m | 1 << cands[k]);
        // σ ranges over all subsets of F
        let mut sigma = full;
        let ok = loop {
            let a = nt[(sigma | base) as usize];
            let b = nt[(sigma | base | e) as usize];
            if a != b {
                break false;
            }
            if sigma == 0 {
                break true;
            }
            sigma = (sigma - 1) & full;
        };
        if ok {
            return Some(
                (0..cands.len())
                    .filter(|k| s & (1 << k) != 0)
                    .map(|k| cands[k])
                    .collect(),
            );
        }
    }
    None
}

/// Checks the eraser condition for a given set `e` (factor indices).
pub fn is_eraser(cov: &Coverage, jq: &Query, fij: &BTreeSet<usize>, e: &[usize]) -> bool {
    if !e.iter().all(|&f| has_homomorphism(&cov.factors[f], jq)) {
        return false;
    }
    let nt = n_table(cov);
    let base: u64 = fij.iter().fold(0, |m, &f| m | 1 << f);
    let em: u64 = e.iter().fold(0, |m, &f| m | 1 << f);
    let full = (1u64 << cov.factors.len()) - 1;
    (0..=full).all(|s| nt[(s | base) as usize] == nt[(s | base | em) as usize])
}

// ---------------------------------------------------------------------------
// verdicts

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Ptime,
    SharpPHard,
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Complexity::Ptime => "PTIME",
            Complexity::SharpPHard => "#P-hard",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    NoSelfJoin,
    InversionFree,
    EraserGeneral,
    NonHierarchical,
    InversionWithoutEraser,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Variables { x: String, y: String },
    Inversion { path: Vec<String> },
    Join { join: String, inversion: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub query: String,
    pub minimized: String,
    pub complexity: Complexity,
    pub reason: Reason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub joins: Vec<JoinRecord>,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}  [{:?}]", self.complexity, self.reason)?;
        match &self.witness {
            Some(Witness::Variables { x, y }) => write!(f, "  non-hierarchical pair {x}, {y}"),
            Some(Witness::Inversion { path }) => write!(f, "  inversion {}", path.join(" -- ")),
            Some(Witness::Join { join, inversion }) => {
                write!(f, "  join {join} has inversion {inversion} and no eraser")
            }
            None => Ok(()),
        }
    }
}

/// Decides whether `p(q)` is computable in polynomial time or is #P-hard.
pub fn classify(q: &Query) -> Result<Verdict, ClassifyError> {
    if q.has_negation() {
        return Err(ClassifyError::Negation);
    }
    let m = minimize(q);
    let verdict = |complexity, reason, witness| Verdict {
        query: q.to_string(),
        minimized: m.to_string(),
        complexity,
        reason,
        witness,
        joins: vec![],
    };
    if let Some((x, y)) = non_hierarchical_pair(&m) {
        let w = Witness::Variables {
            x: m.names[x as usize].clone(),
            y: m.names[y as usize].clone(),
        };
        return Ok(verdict(
            Complexity::SharpPHard,
            Reason::NonHierarchical,
            Some(w),
        ));
    }
    if !m.has_self_join() {
        return Ok(verdict(Complexity::Ptime, Reason::NoSelfJoin, None));
    }
    let Some(inv) = find_inversion(&m)? else {
        return Ok(verdict(Complexity::Ptime, Reason::InversionFree, None));
    };
    let cov = strict_coverage(&m)?;
    let closure = hierarchical_closure(&cov, DEFAULT_CLOSURE_CAP, true)?;
    let bad = closure
        .joins
        .iter()
        .find(|j| j.inversion.is_some() && j.eraser.is_none());
    let mut v = match bad {
        Some(j) => verdict(
            Complexity::SharpPHard,
            Reason::InversionWithoutEraser,
            Some(Witness::Join {
                join: j.query.clone(),
                inversion: j.inversion.clone().unwrap_or_default(),
            }),
        ),
        None if closure.joins.iter().any(|j| j.inversion.is_some())
            || coverage_inversion(&cov).is_none() =>
        {
            verdict(
                Complexity::Ptime,
                Reason::EraserGeneral,
                Some(Witness::Inversion { path: inv.path }),
            )
        }
        // an inversion with no join exhibiting it cannot be erased
        None => verdict(
            Complexity::SharpPHard,
            Reason::InversionWithoutEraser,
            Some(Witness::Inversion { path: inv.path }),
        ),
    };
    v.joins = closure.joins;
    Ok(v)
}

/// `H_k`: `R(x),S0(x,y),S0(u1,v1),S1(u1,v1),...,Sk(x',y'),T(y')`.
pub fn make_hk(k: usize) -> Query {
    let mut parts = vec!["R(x)".to_string(), "S0(x,y)".to_string()];
    for i in 1..=k {
        parts.push(format!("S{}(u{i},v{i})", i - 1));
        parts.push(format!("S{i}(u{i},v{i})"));
    }
    parts.push(format!("S{k}(x1,y1)"));
    parts.push("T(y1)".to_string());
    parse_query(&parts.join(",")).expect("well-formed")
}
