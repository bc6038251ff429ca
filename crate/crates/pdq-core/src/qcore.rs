//! Terms, queries, parsing, unification, homomorphisms and minimization.
//!
//! Variables are dense indices local to one [`Query`]; constants and relation
//! symbols are interned process-wide. The total order on constants is the
//! interning order, which the structure loader fixes to first appearance.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{OnceLock, RwLock};

use indexmap::IndexSet;
use thiserror::Error;

fn const_table() -> &'static RwLock<IndexSet<String>> {
    static T: OnceLock<RwLock<IndexSet<String>>> = OnceLock::new();
    T.get_or_init(|| RwLock::new(IndexSet::new()))
}

fn rel_table() -> &'static RwLock<IndexSet<String>> {
    static T: OnceLock<RwLock<IndexSet<String>>> = OnceLock::new();
    T.get_or_init(|| RwLock::new(IndexSet::new()))
}

fn intern(table: &RwLock<IndexSet<String>>, name: &str) -> u32 {
    if let Some(i) = table.read().unwrap().get_index_of(name) {
        return i as u32;
    }
    let mut w = table.write().unwrap();
    w.insert_full(name.to_string()).0 as u32
}

/// Interns a constant name; ids grow in first-seen order, which is the constant order.
pub fn intern_const(name: &str) -> u32 {
    intern(const_table(), name)
}

pub fn const_name(id: u32) -> String {
    const_table()
        .read()
        .unwrap()
        .get_index(id as usize)
        .cloned()
        .unwrap_or_else(|| format!("#{id}"))
}

pub fn intern_rel(name: &str) -> u32 {
    intern(rel_table(), name)
}

pub fn rel_name(id: u32) -> String {
    rel_table()
        .read()
        .unwrap()
        .get_index(id as usize)
        .cloned()
        .unwrap_or_else(|| format!("Rel{id}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(u32),
    Const(u32),
}

impl Term {
    pub fn is_var(self) -> bool {
        matches!(self, Term::Var(_))
    }
    pub fn var(self) -> Option<u32> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
    fn shift(self, by: u32) -> Term {
        match self {
            Term::Var(v) => Term::Var(v + by),
            c => c,
        }
    }
    fn apply(self, s: &[Term]) -> Term {
        match self {
            Term::Var(v) => s[v as usize],
            c => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub rel: u32,
    pub args: Vec<Term>,
    pub neg: bool,
}

impl Atom {
    pub fn new(rel: &str, args: Vec<Term>) -> Atom {
        Atom {
            rel: intern_rel(rel),
            args,
            neg: false,
        }
    }
    pub fn vars(&self) -> impl Iterator<Item = u32> + '_ {
        self.args.iter().filter_map(|t| t.var())
    }
    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }
    fn apply(&self, s: &[Term]) -> Atom {
        Atom {
            rel: self.rel,
            args: self.args.iter().map(|t| t.apply(s)).collect(),
            neg: self.neg,
        }
    }
    fn shift(&self, by: u32) -> Atom {
        Atom {
            rel: self.rel,
            args: self.args.iter().map(|t| t.shift(by)).collect(),
            neg: self.neg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Eq,
    Neq,
    Lt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pred {
    pub op: Op,
    pub l: Term,
    pub r: Term,
}

impl Pred {
    pub fn new(op: Op, l: Term, r: Term) -> Pred {
        Pred { op, l, r }
    }
    fn apply(&self, s: &[Term]) -> Pred {
        Pred {
            op: self.op,
            l: self.l.apply(s),
            r: self.r.apply(s),
        }
    }
    fn shift(&self, by: u32) -> Pred {
        Pred {
            op: self.op,
            l: self.l.shift(by),
            r: self.r.shift(by),
        }
    }
    /// Orders the operands of symmetric predicates so duplicates compare equal.
    fn normalized(self) -> Pred {
        if self.op != Op::Lt && self.r < self.l {
            Pred {
                op: self.op,
                l: self.r,
                r: self.l,
            }
        } else {
            self
        }
    }
    /// Truth value when both sides are constants.
    pub fn eval_ground(&self) -> Option<bool> {
        match (self.l, self.r) {
            (Term::Const(a), Term::Const(b)) => Some(match self.op {
                Op::Eq => a == b,
                Op::Neq => a != b,
                Op::Lt => a < b,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("predicate {0} is not restricted: its variables never share a subgoal")]
    Unrestricted(String),
    #[error("relation {rel} used with arities {a} and {b}")]
    Arity { rel: String, a: usize, b: usize },
    #[error("arithmetic predicates are unsatisfiable")]
    Unsatisfiable,
    #[error("variable {0} does not occur in a positive subgoal")]
    NotRangeRestricted(String),
    #[error("empty query")]
    Empty,
}

/// A Boolean conjunctive query with optional negated subgoals and arithmetic predicates.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Query {
    pub atoms: Vec<Atom>,
    pub preds: Vec<Pred>,
    pub names: Vec<String>,
}

impl Query {
    /// Builds a query, substituting away `=` predicates and compacting variables.
    /// Returns `None` when the predicates are unsatisfiable.
    pub fn build(atoms: Vec<Atom>, preds: Vec<Pred>, names: Vec<String>) -> Option<Query> {
        let n = names.len();
        let mut uf = TermUf::new(n);
        for p in &preds {
            if p.op == Op::Eq && !uf.union(p.l, p.r) {
                return None;
            }
        }
        let sub: Vec<Term> = (0..n as u32).map(|v| uf.find(Term::Var(v))).collect();
        let atoms: Vec<Atom> = atoms.iter().map(|a| a.apply(&sub)).collect();
        let mut ps = Vec::new();
        for p in &preds {
            if p.op == Op::Eq {
                continue;
            }
            let p = p.apply(&sub).normalized();
            match p.eval_ground() {
                Some(true) => continue,
                Some(false) => return None,
                None => {}
            }
            if p.l == p.r {
                return None;
            }
            ps.push(p);
        }
        if !preds_sat(&ps) {
            return None;
        }
        let mut q = Query {
            atoms,
            preds: ps,
            names,
        };
        q.dedup();
        q.compact();
        Some(q)
    }

    pub fn nvars(&self) -> usize {
        self.names.len()
    }

    pub fn is_ground(&self) -> bool {
        self.names.is_empty()
    }

    pub fn positive_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().filter(|a| !a.neg)
    }

    pub fn has_negation(&self) -> bool {
        self.atoms.iter().any(|a| a.neg)
    }

    pub fn consts(&self) -> BTreeSet<u32> {
        let mut s = BTreeSet::new();
        for t in self
            .atoms
            .iter()
            .flat_map(|a| a.args.iter())
            .chain(self.preds.iter().flat_map(|p| [&p.l, &p.r]))
        {
            if let Term::Const(c) = t {
                s.insert(*c);
            }
        }
        s
    }

    pub fn relations(&self) -> BTreeSet<u32> {
        self.atoms.iter().map(|a| a.rel).collect()
    }

    /// True when two subgoals share a relation symbol.
    pub fn has_self_join(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.atoms.iter().any(|a| !seen.insert(a.rel))
    }

    /// Maximum number of distinct variables in a single subgoal.
    pub fn max_vars_per_atom(&self) -> usize {
        self.atoms
            .iter()
            .map(|a| a.vars().collect::<BTreeSet<_>>().len())
            .max()
            .unwrap_or(0)
    }

    fn dedup(&mut self) {
        let mut seen = BTreeSet::new();
        self.atoms.retain(|a| seen.insert(a.clone()));
        let mut seen = BTreeSet::new();
        self.preds.retain(|p| seen.insert(*p));
    }

    /// Renumbers variables so that only used ones remain, in first-use order.
    fn compact(&mut self) {
        let n = self.names.len();
        let mut map = vec![u32::MAX; n];
        let mut names = Vec::new();
        let mut next = 0u32;
        let mut visit = |t: &Term, map: &mut Vec<u32>| {
            if let Term::Var(v) = t {
                if map[*v as usize] == u32::MAX {
                    map[*v as usize] = next;
                    names.push(self.names[*v as usize].clone());
                    next += 1;
                }
            }
        };
        for a in &self.atoms {
            for t in &a.args {
                visit(t, &mut map);
            }
        }
        for p in &self.preds {
            visit(&p.l, &mut map);
            visit(&p.r, &mut map);
        }
        let sub: Vec<Term> = map.iter().map(|&m| Term::Var(m)).collect();
        self.atoms = self.atoms.iter().map(|a| a.apply(&sub)).collect();
        self.preds = self
            .preds
            .iter()
            .map(|p| p.apply(&sub).normalized())
            .collect();
        self.names = names;
        self.dedup();
    }

    /// Applies a substitution (indexed by variable) and renormalizes.
    pub fn substitute(&self, sub: &[Term]) -> Option<Query> {
        let atoms = self.atoms.iter().map(|a| a.apply(sub)).collect();
        let preds = self.preds.iter().map(|p| p.apply(sub)).collect();
        // variables of the image keep the names of the originals
        let maxv = sub
            .iter()
            .filter_map(|t| t.var())
            .max()
            .map(|m| m as usize + 1)
            .unwrap_or(0);
        let mut names = vec![String::new(); maxv.max(self.names.len())];
        for (i, n) in self.names.iter().enumerate() {
            names[i] = n.clone();
        }
        for (i, t) in sub.iter().enumerate() {
            if let Term::Var(v) = t {
                if names[*v as usize].is_empty() {
                    names[*v as usize] = self.names[i].clone();
                }
            }
        }
        for (i, n) in names.iter_mut().enumerate() {
            if n.is_empty() {
                *n = format!("v{i}");
            }
        }
        Query::build(atoms, preds, names)
    }

    /// Replaces variable `v` by a constant.
    pub fn bind(&self, v: u32, c: u32) -> Option<Query> {
        let sub: Vec<Term> = (0..self.nvars() as u32)
            .map(|i| if i == v { Term::Const(c) } else { Term::Var(i) })
            .collect();
        self.substitute(&sub)
    }

    /// Conjunction of two queries on disjoint variables.
    pub fn conjoin(&self, other: &Query) -> Query {
        let by = self.nvars() as u32;
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().map(|a| a.shift(by)));
        let mut preds = self.preds.clone();
        preds.extend(other.preds.iter().map(|p| p.shift(by)));
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut q = Query {
            atoms,
            preds,
            names,
        };
        q.dedup();
        q
    }

    /// Adds predicates, returning `None` if the result is unsatisfiable.
    pub fn with_preds(&self, extra: &[Pred]) -> Option<Query> {
        let mut preds = self.preds.clone();
        preds.extend_from_slice(extra);
        Query::build(self.atoms.clone(), preds, self.names.clone())
    }

    /// Connected components (variables link subgoals; each ground subgoal stands alone).
    pub fn components(&self) -> Vec<Query> {
        let n = self.atoms.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let nx = p[c];
                p[c] = r;
                c = nx;
            }
            r
        }
        let mut owner: HashMap<u32, usize> = HashMap::new();
        for (i, a) in self.atoms.iter().enumerate() {
            for v in a.vars() {
                if let Some(&j) = owner.get(&v) {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                } else {
                    owner.insert(v, i);
                }
            }
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            match groups.iter_mut().find(|g| g.0 == r) {
                Some(g) => g.1.push(i),
                None => groups.push((r, vec![i])),
            }
        }
        let mut out = Vec::new();
        for (_, idx) in &groups {
            let atoms: Vec<Atom> = idx.iter().map(|&i| self.atoms[i].clone()).collect();
            let vs: BTreeSet<u32> = atoms.iter().flat_map(|a| a.vars()).collect();
            let mut preds = Vec::new();
            for p in &self.preds {
                let pv: Vec<u32> = [p.l, p.r].iter().filter_map(|t| t.var()).collect();
                if !pv.is_empty() && pv.iter().all(|v| vs.contains(v)) {
                    preds.push(*p);
                }
            }
            let mut q = Query {
                atoms,
                preds,
                names: self.names.clone(),
            };
            q.compact();
            out.push(q);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Subgoal indices (positive and negated) containing each variable.
    pub fn sg(&self) -> Vec<BTreeSet<usize>> {
        let mut s = vec![BTreeSet::new(); self.nvars()];
        for (i, a) in self.atoms.iter().enumerate() {
            for v in a.vars() {
                s[v as usize].insert(i);
            }
        }
        s
    }

    /// Pairs of distinct variables that co-occur in a subgoal.
    pub fn cooccurring_pairs(&self) -> BTreeSet<(u32, u32)> {
        let mut out = BTreeSet::new();
        for a in &self.atoms {
            let vs: BTreeSet<u32> = a.vars().collect();
            for &x in &vs {
                for &y in &vs {
                    if x < y {
                        out.insert((x, y));
                    }
                }
            }
        }
        out
    }

    /// A renaming-invariant fingerprint used to bucket candidates before equivalence tests.
    pub fn shape(&self) -> Vec<(u32, usize, bool, usize)> {
        let mut v: Vec<(u32, usize, bool, usize)> = self
            .atoms
            .iter()
            .map(|a| {
                (
                    a.rel,
                    a.args.len(),
                    a.neg,
                    a.vars().collect::<BTreeSet<_>>().len(),
                )
            })
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Deterministic text with variables renamed by first use; equal for
    /// queries that differ only in variable names and subgoal order in common cases.
    pub fn canonical_text(&self) -> String {
        let mut atoms = self.atoms.clone();
        atoms.sort_by_key(|a| {
            (
                a.rel,
                a.neg,
                a.args.iter().filter(|t| t.is_var()).count(),
                a.args
                    .iter()
                    .map(|t| match t {
                        Term::Const(c) => *c as i64,
                        Term::Var(_) => -1,
                    })
                    .collect::<Vec<_>>(),
            )
        });
        let mut q = Query {
            atoms,
            preds: self.preds.clone(),
            names: self.names.clone(),
        };
        q.compact();
        q.preds.sort();
        let names: Vec<String> = (0..q.nvars()).map(|i| format!("v{i}")).collect();
        q.names = names;
        q.to_string()
    }
}

fn fmt_term(t: Term, names: &[String]) -> String {
    match t {
        Term::Var(v) => names
            .get(v as usize)
            .cloned()
            .unwrap_or_else(|| format!("v{v}")),
        Term::Const(c) => {
            let n = const_name(c);
            if !n.is_empty() && n.chars().all(|ch| ch.is_ascii_digit()) {
                n
            } else {
                format!("'{n}'")
            }
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for a in &self.atoms {
            let args: Vec<String> = a.args.iter().map(|t| fmt_term(*t, &self.names)).collect();
            parts.push(format!(
                "{}{}({})",
                if a.neg { "!" } else { "" },
                rel_name(a.rel),
                args.join(",")
            ));
        }
        for p in &self.preds {
            let op = match p.op {
                Op::Eq => "=",
                Op::Neq => "!=",
                Op::Lt => "<",
            };
            parts.push(format!(
                "{}{}{}",
                fmt_term(p.l, &self.names),
                op,
                fmt_term(p.r, &self.names)
            ));
        }
        write!(f, "{}", parts.join(", "))
    }
}

// ---------------------------------------------------------------------------
// predicate satisfiability

/// Union-find over variables with constant representatives.
struct TermUf {
    parent: Vec<u32>,
    konst: Vec<Option<u32>>,
}

impl TermUf {
    fn new(n: usize) -> TermUf {
        TermUf {
            parent: (0..n as u32).collect(),
            konst: vec![None; n],
        }
    }
    fn root(&mut self, v: u32) -> u32 {
        let mut r = v;
        while self.parent[r as usize] != r {
            r = self.parent[r as usize];
        }
        let mut c = v;
        while self.parent[c as usize] != r {
            let n = self.parent[c as usize];
            self.parent[c as usize] = r;
            c = n;
        }
        r
    }
    fn find(&mut self, t: Term) -> Term {
        match t {
            Term::Var(v) => {
                let r = self.root(v);
                match self.konst[r as usize] {
                    Some(c) => Term::Const(c),
                    None => Term::Var(r),
                }
            }
            c => c,
        }
    }
    /// Returns false on a constant clash.
    fn union(&mut self, a: Term, b: Term) -> bool {
        match (a, b) {
            (Term::Const(x), Term::Const(y)) => x == y,
            (Term::Var(v), Term::Const(c)) | (Term::Const(c), Term::Var(v)) => {
                let r = self.root(v);
                match self.konst[r as usize] {
                    Some(k) => k == c,
                    None => {
                        self.konst[r as usize] = Some(c);
                        true
                    }
                }
            }
            (Term::Var(x), Term::Var(y)) => {
                let (rx, ry) = (self.root(x), self.root(y));
                if rx == ry {
                    return true;
                }
                let (lo, hi) = if rx < ry { (rx, ry) } else { (ry, rx) };
                match (self.konst[lo as usize], self.konst[hi as usize]) {
                    (Some(a), Some(b)) if a != b => return false,
                    (None, Some(b)) => self.konst[lo as usize] = Some(b),
                    _ => {}
                }
                self.parent[hi as usize] = lo;
                true
            }
        }
    }
}

/// Satisfiability of a conjunction of `=`, `!=`, `<` atoms over a dense total order.
pub fn preds_sat(preds: &[Pred]) -> bool {
    let maxv = preds
        .iter()
        .flat_map(|p| [p.l, p.r])
        .filter_map(|t| t.var())
        .max()
        .map(|m| m as usize + 1)
        .unwrap_or(0);
    let mut uf = TermUf::new(maxv);
    for p in preds {
        if p.op == Op::Eq && !uf.union(p.l, p.r) {
            return false;
        }
    }
    let mut lts = Vec::new();
    for p in preds {
        let (l, r) = (uf.find(p.l), uf.find(p.r));
        match p.op {
            Op::Eq => {}
            Op::Neq => {
                if l == r {
                    return false;
                }
            }
            Op::Lt => {
                if l == r {
                    return false;
                }
                if let (Term::Const(a), Term::Const(b)) = (l, r) {
                    if a >= b {
                        return false;
                    }
                }
                lts.push((l, r));
            }
        }
    }
    if lts.is_empty() {
        return true;
    }
    // nodes: classes in lt atoms; constants are chained by their order
    let mut nodes: Vec<Term> = lts.iter().flat_map(|&(a, b)| [a, b]).collect();
    nodes.sort();
    nodes.dedup();
    let idx = |t: Term, nodes: &[Term]| nodes.binary_search(&t).unwrap();
    let mut adj = vec![Vec::new(); nodes.len()];
    for &(a, b) in &lts {
        adj[idx(a, &nodes)].push(idx(b, &nodes));
    }
    let consts: Vec<usize> = (0..nodes.len()).filter(|&i| !nodes[i].is_var()).collect();
    for w in consts.windows(2) {
        adj[w[0]].push(w[1]);
    }
    // cycle detection
    let mut state = vec![0u8; nodes.len()];
    fn dfs(u: usize, adj: &[Vec<usize>], st: &mut [u8]) -> bool {
        st[u] = 1;
        for &v in &adj[u] {
            if st[v] == 1 || (st[v] == 0 && !dfs(v, adj, st)) {
                return false;
            }
        }
        st[u] = 2;
        true
    }
    (0..nodes.len()).all(|u| state[u] != 0 || dfs(u, &adj, &mut state))
}

/// Whether `preds` logically implies `p` (dense order semantics).
pub fn entails(preds: &[Pred], p: &Pred) -> bool {
    if let Some(v) = p.eval_ground() {
        return v;
    }
    let with = |q: Pred| {
        let mut v = preds.to_vec();
        v.push(q);
        !preds_sat(&v)
    };
    match p.op {
        Op::Eq => with(Pred::new(Op::Neq, p.l, p.r)),
        Op::Neq => with(Pred::new(Op::Eq, p.l, p.r)),
        Op::Lt => with(Pred::new(Op::Eq, p.l, p.r)) && with(Pred::new(Op::Lt, p.r, p.l)),
    }
}

// ---------------------------------------------------------------------------
// parsing

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

enum RawTerm {
    Var(String),
    Const(String),
}

enum Item {
    Atom(String, Vec<RawTerm>, bool),
    Pred(RawTerm, Op, RawTerm),
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: &str) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        })
    }
    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }
    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.pos).copied()
    }
    fn ident(&mut self) -> String {
        let st = self.pos;
        while self.pos < self.s.len()
            && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[st..self.pos]).into_owned()
    }
    fn term(&mut self) -> Result<RawTerm, QueryError> {
        match self.peek() {
            Some(b'\'') => {
                self.pos += 1;
                let st = self.pos;
                while self.pos < self.s.len() && self.s[self.pos] != b'\'' {
                    self.pos += 1;
                }
                if self.pos >= self.s.len() {
                    return self.err("unterminated constant");
                }
                let name = String::from_utf8_lossy(&self.s[st..self.pos]).into_owned();
                self.pos += 1;
                if name.is_empty() {
                    return self.err("empty constant");
                }
                Ok(RawTerm::Const(name))
            }
            Some(c) if c.is_ascii_digit() => {
                let st = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                Ok(RawTerm::Const(
                    String::from_utf8_lossy(&self.s[st..self.pos]).into_owned(),
                ))
            }
            Some(c) if c.is_ascii_lowercase() || c == b'_' => Ok(RawTerm::Var(self.ident())),
            _ => self.err("expected a term"),
        }
    }
    fn item(&mut self) -> Result<Item, QueryError> {
        let neg = if self.peek() == Some(b'!') {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek() {
            Some(c) if c.is_ascii_uppercase() => {
                let name = self.ident();
                if self.peek() != Some(b'(') {
                    return self.err("expected '('");
                }
                self.pos += 1;
                let mut args = Vec::new();
                if self.peek() != Some(b')') {
                    loop {
                        args.push(self.term()?);
                        match self.peek() {
                            Some(b',') => self.pos += 1,
                            Some(b')') => break,
                            _ => return self.err("expected ',' or ')'"),
                        }
                    }
                }
                self.pos += 1;
                Ok(Item::Atom(name, args, neg))
            }
            _ if neg => self.err("expected a relation name after '!'"),
            _ => {
                let l = self.term()?;
                let op = match (self.peek(), self.s.get(self.pos + 1).copied()) {
                    (Some(b'!'), Some(b'=')) => {
                        self.pos += 2;
                        Op::Neq
                    }
                    (Some(b'='), _) => {
                        self.pos += 1;
                        Op::Eq
                    }
                    (Some(b'<'), _) => {
                        self.pos += 1;
                        Op::Lt
                    }
                    _ => return self.err("expected '=', '!=' or '<'"),
                };
                let r = self.term()?;
                Ok(Item::Pred(l, op, r))
            }
        }
    }
}

/// Parses the textual query grammar (see the crate README).
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut p = Parser {
        s: text.as_bytes(),
        pos: 0,
    };
    let mut items = Vec::new();
    if p.peek().is_none() {
        return Err(QueryError::Empty);
    }
    loop {
        items.push(p.item()?);
        match p.peek() {
            None => break,
            Some(b',') => p.pos += 1,
            _ => return p.err("expected ','"),
        }
    }
    let mut names: Vec<String> = Vec::new();
    let term = |r: &RawTerm, names: &mut Vec<String>| match r {
        RawTerm::Var(n) => {
            let i = match names.iter().position(|x| x == n) {
                Some(i) => i,
                None => {
                    names.push(n.clone());
                    names.len() - 1
                }
            };
            Term::Var(i as u32)
        }
        RawTerm::Const(c) => Term::Const(intern_const(c)),
    };
    let mut atoms = Vec::new();
    let mut preds = Vec::new();
    let mut arity: HashMap<String, usize> = HashMap::new();
    for it in &items {
        if let Item::Atom(rel, args, neg) = it {
            if let Some(&a) = arity.get(rel) {
                if a != args.len() {
                    return Err(QueryError::Arity {
                        rel: rel.clone(),
                        a,
                        b: args.len(),
                    });
                }
            }
            arity.insert(rel.clone(), args.len());
            let args = args.iter().map(|t| term(t, &mut names)).collect();
            atoms.push(Atom {
                rel: intern_rel(rel),
                args,
                neg: *neg,
            });
        }
    }
    if atoms.is_empty() {
        return Err(QueryError::Empty);
    }
    let mut positive_vars = BTreeSet::new();
    for a in atoms.iter().filter(|a| !a.neg) {
        positive_vars.extend(a.vars());
    }
    let nv_atoms = names.len();
    for it in &items {
        if let Item::Pred(l, op, r) = it {
            let (l, r) = (term(l, &mut names), term(r, &mut names));
            let pr = Pred::new(*op, l, r);
            if names.len() > nv_atoms {
                let q = Query {
                    atoms: vec![],
                    preds: vec![pr],
                    names: names.clone(),
                };
                return Err(QueryError::Unrestricted(q.to_string()));
            }
            if let (Term::Var(x), Term::Var(y)) = (l, r) {
                let ok = atoms
                    .iter()
                    .any(|a| a.vars().any(|v| v == x) && a.vars().any(|v| v == y));
                if !ok {
                    let q = Query {
                        atoms: vec![],
                        preds: vec![pr],
                        names: names.clone(),
                    };
                    return Err(QueryError::Unrestricted(q.to_string()));
                }
            }
            preds.push(pr);
        }
    }
    for (i, n) in names.iter().enumerate() {
        if !positive_vars.contains(&(i as u32)) {
            return Err(QueryError::NotRangeRestricted(n.clone()));
        }
    }
    Query::build(atoms, preds, names).ok_or(QueryError::Unsatisfiable)
}

/// Parses a query file: one query per line, `#` starts a comment.
pub fn parse_query_file(text: &str) -> Result<Vec<Query>, QueryError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_query)
        .collect()
}

// ---------------------------------------------------------------------------
// unification

/// A most general unifier over the combined variable space of two queries:
/// variables of the second query are shifted by the first query's variable count.
#[derive(Clone, Debug)]
pub struct Mgu {
    pub theta: Vec<Term>,
    pub offset: u32,
    pub strict: bool,
}

impl Mgu {
    /// Image of a variable of the first query.
    pub fn left(&self, v: u32) -> Term {
        self.theta[v as usize]
    }
    /// Image of a variable of the second query.
    pub fn right(&self, v: u32) -> Term {
        self.theta[(v + self.offset) as usize]
    }
    /// Pairs `(x, y)` with `x` from the first query, `y` from the second, identified by the MGU.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for x in 0..self.offset {
            for y in 0..(self.theta.len() as u32 - self.offset) {
                if self.left(x) == self.right(y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Most general unifier of subgoal `i1` of `q1` with subgoal `i2` of `q2`,
/// treating the two queries as variable-disjoint. Negation flags are ignored.
/// Returns `None` when relations or constants clash or the predicates of both
/// queries become unsatisfiable under the unifier.
pub fn mgu(q1: &Query, i1: usize, q2: &Query, i2: usize) -> Option<Mgu> {
    let (a, b) = (&q1.atoms[i1], &q2.atoms[i2]);
    if a.rel != b.rel || a.args.len() != b.args.len() {
        return None;
    }
    let off = q1.nvars() as u32;
    let n = off as usize + q2.nvars();
    let mut uf = TermUf::new(n);
    for (s, t) in a.args.iter().zip(&b.args) {
        if !uf.union(*s, t.shift(off)) {
            return None;
        }
    }
    let theta: Vec<Term> = (0..n as u32).map(|v| uf.find(Term::Var(v))).collect();
    let preds: Vec<Pred> = q1
        .preds
        .iter()
        .copied()
        .chain(q2.preds.iter().map(|p| p.shift(off)))
        .map(|p| p.apply(&theta))
        .collect();
    if !preds_sat(&preds) {
        return None;
    }
    let mut strict = theta[..n].iter().all(|t| t.is_var());
    let side = |v: usize| v < off as usize;
    for x in 0..n {
        for y in (x + 1)..n {
            if side(x) == side(y) && theta[x] == theta[y] {
                strict = false;
            }
        }
    }
    Some(Mgu {
        theta,
        offset: off,
        strict,
    })
}

// ---------------------------------------------------------------------------
// homomorphisms

/// Searches mappings `Vars(src) -> Terms(dst)` sending subgoals onto subgoals of
/// the same sign and predicates onto predicates entailed by `dst`. `fixed`
/// pre-assigns some source variables. Stops after `limit` results.
pub fn homomorphisms_with(
    src: &Query,
    dst: &Query,
    fixed: &[(u32, Term)],
    limit: usize,
) -> Vec<Vec<Term>> {
    let n = src.nvars();
    let mut map: Vec<Option<Term>> = vec![None; n];
    for &(v, t) in fixed {
        map[v as usize] = Some(t);
    }
    // order atoms: most constrained first
    let mut order: Vec<usize> = (0..src.atoms.len()).collect();
    let cands: Vec<Vec<usize>> = src
        .atoms
        .iter()
        .map(|a| {
            (0..dst.atoms.len())
                .filter(|&j| {
                    let b = &dst.atoms[j];
                    b.rel == a.rel && b.neg == a.neg && b.args.len() == a.args.len()
                })
                .collect()
        })
        .collect();
    order.sort_by_key(|&i| (cands[i].len(), std::cmp::Reverse(src.atoms[i].args.len())));
    let mut out = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn rec(
        k: usize,
        order: &[usize],
        cands: &[Vec<usize>],
        src: &Query,
        dst: &Query,
        map: &mut Vec<Option<Term>>,
        out: &mut Vec<Vec<Term>>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        if k == order.len() {
            // unmapped variables can only come from predicates; reject
            let full: Option<Vec<Term>> = map.iter().copied().collect();
            let Some(full) = full else { return };
            for p in &src.preds {
                let q = p.apply(&full);
                if !entails(&dst.preds, &q) {
                    return;
                }
            }
            out.push(full);
            return;
        }
        let a = &src.atoms[order[k]];
        for &j in &cands[order[k]] {
            let b = &dst.atoms[j];
            let mut assigned = Vec::new();
            let mut ok = true;
            for (s, t) in a.args.iter().zip(&b.args) {
                match s {
                    Term::Const(c) => {
                        if *t != Term::Const(*c) {
                            ok = false;
                            break;
                        }
                    }
                    Term::Var(v) => match map[*v as usize] {
                        Some(x) => {
                            if x != *t {
                                ok = false;
                                break;
                            }
                        }
                        None => {
                            map[*v as usize] = Some(*t);
                            assigned.push(*v);
                        }
                    },
                }
            }
            if ok {
                // cheap predicate pruning: both sides mapped to the same term
                for p in &src.preds {
                    let l = match p.l {
                        Term::Var(v) => map[v as usize],
                        c => Some(c),
                    };
                    let r = match p.r {
                        Term::Var(v) => map[v as usize],
                        c => Some(c),
                    };
                    if let (Some(l), Some(r)) = (l, r) {
                        if (p.op != Op::Eq && l == r)
                            || Pred::new(p.op, l, r).eval_ground() == Some(false)
                        {
                            ok = false;
                            break;
                        }
                    }
                }
            }
            if ok {
                rec(k + 1, order, cands, src, dst, map, out, limit);
            }
            for v in assigned {
                map[v as usize] = None;
            }
            if out.len() >= limit {
                return;
            }
        }
    }
    rec(0, &order, &cands, src, dst, &mut map, &mut out, limit);
    out
}

/// All homomorphisms from `src` to `dst`.
pub fn homomorphisms(src: &Query, dst: &Query) -> Vec<Vec<Term>> {
    homomorphisms_with(src, dst, &[], usize::MAX)
}

pub fn has_homomorphism(src: &Query, dst: &Query) -> bool {
    !homomorphisms_with(src, dst, &[], 1).is_empty()
}

/// Logical equivalence by homomorphisms in both directions.
pub fn equivalent(a: &Query, b: &Query) -> bool {
    has_homomorphism(a, b) && has_homomorphism(b, a)
}

/// Equivalence where variable `ra` of `a` must correspond to variable `rb` of `b`.
pub fn equivalent_rooted(a: &Query, ra: u32, b: &Query, rb: u32) -> bool {
    !homomorphisms_with(a, b, &[(ra, Term::Var(rb))], 1).is_empty()
        && !homomorphisms_with(b, a, &[(rb, Term::Var(ra))], 1).is_empty()
}

/// Whether `a` (rooted at `ra`) is implied by `b` (rooted at `rb`) at a shared root value.
pub fn implied_rooted(a: &Query, ra: u32, b: &Query, rb: u32) -> bool {
    !homomorphisms_with(a, b, &[(ra, Term::Var(rb))], 1).is_empty()
}

/// Computes a core of `q`; variables in `keep` are mapped to themselves.
pub fn minimize_keep(q: &Query, keep: &[u32]) -> Query {
    let mut cur = q.clone();
    let mut keep: Vec<u32> = keep.to_vec();
    loop {
        let mut changed = false;
        for i in 0..cur.atoms.len() {
            let mut dst = cur.clone();
            dst.atoms.remove(i);
            let fixed: Vec<(u32, Term)> = keep.iter().map(|&v| (v, Term::Var(v))).collect();
            if let Some(h) = homomorphisms_with(&cur, &dst, &fixed, 1).pop() {
                // image query: h(atoms), h(preds); names of surviving variables kept
                let atoms: Vec<Atom> = cur.atoms.iter().map(|a| a.apply(&h)).collect();
                let preds: Vec<Pred> = cur.preds.iter().map(|p| p.apply(&h)).collect();
                let mut img = Query {
                    atoms,
                    preds,
                    names: cur.names.clone(),
                };
                img.preds = img
                    .preds
                    .iter()
                    .map(|p| p.normalized())
                    .filter(|p| p.eval_ground() != Some(true))
                    .collect();
                img.dedup();
                // compact while tracking kept variables
                let before = img.names.clone();
                let mut tagged = img.clone();
                for &k in &keep {
                    tagged.names[k as usize] = format!("\u{1}{k}");
                }
                tagged.compact();
                keep = keep
                    .iter()
                    .filter_map(|&k| {
                        tagged
                            .names
                            .iter()
                            .position(|n| *n == format!("\u{1}{k}"))
                            .map(|p| p as u32)
                    })
                    .collect();
                for n in tagged.names.iter_mut() {
                    if let Some(k) = n.strip_prefix('\u{1}') {
                        let k: usize = k.parse().unwrap();
                        *n = before[k].clone();
                    }
                }
                cur = tagged;
                changed = true;
                break;
            }
        }
        if !changed {
            return cur;
        }
    }
}

/// Computes a core: an equivalent query with a minimal number of subgoals.
pub fn minimize(q: &Query) -> Query {
    minimize_keep(q, &[])
}

/// Minimizes while keeping one distinguished variable; returns the query and its new index.
pub fn minimize_rooted(q: &Query, root: u32) -> (Query, u32) {
    let mut tagged = q.clone();
    let orig = tagged.names[root as usize].clone();
    tagged.names[root as usize] = "\u{2}root".to_string();
    let mut m = minimize_keep(&tagged, &[root]);
    let r = m
        .names
        .iter()
        .position(|n| n == "\u{2}root")
        .expect("root survives") as u32;
    m.names[r as usize] = orig;
    (m, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Query {
        parse_query(s).unwrap()
    }

    #[test]
    fn parses_atoms_and_predicates() {
        let a = q("R(x), S(x,y)");
        assert_eq!(a.atoms.len(), 2);
        assert_eq!(a.nvars(), 2);
        let b = q("R(x), S(x,y), x<y");
        assert_eq!(b.preds, vec![Pred::new(Op::Lt, Term::Var(0), Term::Var(1))]);
        let c = q("R(x), !S(x,'a'), T(3)");
        assert!(c.atoms[1].neg);
        assert!(c.atoms[2].is_ground());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_query("R(x), T(z), x<z"),
            Err(QueryError::Unrestricted(_))
        ));
        assert!(matches!(
            parse_query("R(x), R(x,y)"),
            Err(QueryError::Arity { .. })
        ));
        assert!(matches!(
            parse_query("R(x,y), x<y, y<x"),
            Err(QueryError::Unsatisfiable)
        ));
        assert!(matches!(parse_query("R(x"), Err(QueryError::Syntax { .. })));
        assert!(matches!(
            parse_query("!R(x)"),
            Err(QueryError::NotRangeRestricted(_))
        ));
    }

    #[test]
    fn equality_predicates_are_substituted() {
        let a = q("R(x,y), x=y");
        assert_eq!(a.to_string(), "R(x,x)");
        let b = q("R(x,y), x='k'");
        assert_eq!(b.to_string(), "R('k',y)");
    }

    #[test]
    fn print_parse_round_trip() {
        for s in [
            "R(x), S(x,y), x<y",
            "R(x,'a'), !T(x), x!='b'",
            "R(x,y,y,x), R(x,y,x,z)",
        ] {
            let a = q(s);
            let b = q(&a.to_string());
            assert!(equivalent(&a, &b));
            assert_eq!(a.to_string(), b.to_string());
        }
    }

    #[test]
    fn mgu_of_shared_variable_atoms_is_not_strict() {
        let g1 = q("R(x,x,y,'a',z)");
        let g2 = q("R(u,v,v,w,w)");
        let m = mgu(&g1, 0, &g2, 0).unwrap();
        assert!(!m.strict);
        // x = y = u = v and w = z = a
        assert_eq!(m.left(0), m.left(1));
        assert_eq!(m.left(0), m.right(0));
        assert_eq!(m.right(1), m.left(0));
        assert_eq!(m.left(2), Term::Const(intern_const("a")));
        assert_eq!(m.right(2), Term::Const(intern_const("a")));
    }

    #[test]
    fn mgu_fresh_variables_is_strict() {
        let a = q("S(x,y)");
        let m = mgu(&a, 0, &a, 0).unwrap();
        assert!(m.strict);
        assert_eq!(m.pairs(), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn mgu_constant_clash_and_predicates() {
        assert!(mgu(&q("R('a')"), 0, &q("R('b')"), 0).is_none());
        let a = q("R(x,y), x<y");
        assert!(mgu(&a, 0, &q("R(u,u)"), 0).is_none());
        // R(x,y),x<y against a copy of itself with swapped arguments is inconsistent
        let b = q("R(y,x), x<y");
        assert!(mgu(&a, 0, &b, 0).is_none());
    }

    #[test]
    fn homomorphism_examples() {
        let h = homomorphisms(&q("R(x,y)"), &q("R('a','b')"));
        assert_eq!(h.len(), 1);
        assert!(homomorphisms(&q("R(x),S(x,y),T(y)"), &q("R('a'),S('a','b')")).is_empty());
    }

    #[test]
    fn eraser_homomorphism_of_running_example() {
        let qq = q("R(r,x),S(r,x,y),U('a',r),U(r,z),V(r,z),S(r2,x2,y2),T(r2,y2),V('a',r2),R('a','b'),S('a','b','c'),U('a','a')");
        // q' = q[r/r2]
        let r = 0u32;
        let r2 = qq.names.iter().position(|n| n == "r2").unwrap() as u32;
        let sub: Vec<Term> = (0..qq.nvars() as u32)
            .map(|v| if v == r2 { Term::Var(r) } else { Term::Var(v) })
            .collect();
        let qp = qq.substitute(&sub).unwrap();
        let hs = homomorphisms(&qq, &qp);
        let name = |t: Term, qq: &Query| match t {
            Term::Var(v) => qq.names[v as usize].clone(),
            Term::Const(c) => const_name(c),
        };
        let want = [
            ("r", "a"),
            ("x", "b"),
            ("y", "c"),
            ("z", "r"),
            ("r2", "r"),
            ("x2", "x2"),
            ("y2", "y2"),
        ];
        let found = hs.iter().any(|h| {
            want.iter().all(|(v, t)| {
                let i = qq.names.iter().position(|n| n == v).unwrap();
                name(h[i], &qp) == *t
            })
        });
        assert!(found);
    }

    #[test]
    fn minimize_examples() {
        assert_eq!(minimize(&q("R(x,y),R(x,z)")).atoms.len(), 1);
        assert_eq!(minimize(&q("R('a'),R('a')")).to_string(), "R('a')");
        let m = minimize(&q("R(x),S(x,y),S(x2,y2)"));
        assert_eq!(m.atoms.len(), 2);
    }

    #[test]
    fn minimize_keeps_atoms_guarded_by_disequality() {
        // S(x,x,y,y) with x != y cannot fold into S(x,x,x,x)
        let a = q("R(x,x),S(x,x,y,y),S(x,x,x,x),x!=y,S(u,u,v,v),T(v),u!=v");
        let m = minimize(&a);
        assert!(equivalent(&m, &a));
        assert_eq!(m.atoms.len(), 5);
    }

    #[test]
    fn homomorphisms_match_brute_force() {
        let cases = [
            ("R(x,y),R(y,z)", "R(u,v),R(v,u),R(u,u)"),
            ("R(x),S(x,y)", "R(a1),S(a1,b1),S(a1,a1),R(b1)"),
            ("R(x,y),x<y", "R(u,v),R(v,w),u<v,v<w"),
        ];
        for (s, d) in cases {
            let (s, d) = (q(s), q(d));
            let got: BTreeSet<Vec<Term>> = homomorphisms(&s, &d).into_iter().collect();
            let terms: Vec<Term> = (0..d.nvars() as u32).map(Term::Var).collect();
            let mut want = BTreeSet::new();
            let n = s.nvars();
            let total = terms.len().pow(n as u32);
            for code in 0..total {
                let mut c = code;
                let h: Vec<Term> = (0..n)
                    .map(|_| {
                        let t = terms[c % terms.len()];
                        c /= terms.len();
                        t
                    })
                    .collect();
                let atoms_ok = s.atoms.iter().all(|a| d.atoms.contains(&a.apply(&h)));
                let preds_ok = s.preds.iter().all(|p| entails(&d.preds, &p.apply(&h)));
                if atoms_ok && preds_ok {
                    want.insert(h);
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn components_split_on_variables() {
        let a = q("R(x),S(x,y),S(u,v),T(v),U('a')");
        let cs = a.components();
        assert_eq!(cs.len(), 3);
        assert!(cs.iter().any(|c| c.is_ground()));
    }

    #[test]
    fn satisfiability() {
        let v = |i| Term::Var(i);
        assert!(preds_sat(&[
            Pred::new(Op::Lt, v(0), v(1)),
            Pred::new(Op::Lt, v(1), v(2))
        ]));
        assert!(!preds_sat(&[
            Pred::new(Op::Lt, v(0), v(1)),
            Pred::new(Op::Lt, v(1), v(0))
        ]));
        assert!(!preds_sat(&[
            Pred::new(Op::Eq, v(0), v(1)),
            Pred::new(Op::Neq, v(0), v(1))
        ]));
        let (a, b) = (
            Term::Const(intern_const("sat_a")),
            Term::Const(intern_const("sat_b")),
        );
        assert!(!preds_sat(&[
            Pred::new(Op::Lt, b, v(0)),
            Pred::new(Op::Lt, v(0), a)
        ]));
        assert!(preds_sat(&[
            Pred::new(Op::Lt, a, v(0)),
            Pred::new(Op::Lt, v(0), b)
        ]));
    }
}
