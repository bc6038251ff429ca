//! Exact polynomial-time evaluation of Boolean conjunctive queries.
//!
//! Every evaluator reduces `p(q)` to probabilities of queries with fewer
//! variables per subgoal, bottoming out at ground atoms. The arithmetic is
//! parametric in an [`Algebra`], so the same recursion produces exact
//! rationals, floats, or a formula DAG whose size can be measured.

mod closed;
mod general;
mod property;
mod safeplan;
mod unary;

pub use closed::{closed_sum, closed_sum_plus, closed_sum_size, SetAtom, SetPredicate};
pub use general::{
    bootstrap_sum, change_of_basis_sides, hierarchy_tree, HierNode, HierTree, SVocab,
};
pub use property::{eval_property, to_dnf, Literal};

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use num::BigRational;
use thiserror::Error;

use crate::formula::{Algebra, Dag, Exact};
use crate::hiercov::{all_mgus, conjoin_all, is_hierarchical, CoverageError};
use crate::invclass::{classify, ClassifyError, Complexity, Reason};
use crate::pstruct::{ProbStructure, Tuple};
use crate::qcore::{minimize, Query, Term};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query has a self-join; the safe-plan recurrence does not apply")]
    SelfJoin,
    #[error("query is not hierarchical")]
    NotHierarchical,
    #[error("query is #P-hard ({0:?})")]
    Hard(Reason),
    #[error("method {method} needs a {needed} query, classifier says {got:?}")]
    Precondition {
        method: &'static str,
        needed: &'static str,
        got: Reason,
    },
    #[error("query is not connected: {0}")]
    NotConnected(String),
    #[error("negated subgoal with variables: {0}")]
    UnsupportedNegation(String),
    #[error("unsupported set predicate: {0}")]
    SetPredicate(String),
    #[error("too many members in the root closure (cap {0})")]
    MemberCap(usize),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// Which evaluator to run. `Auto` picks the cheapest applicable one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Auto,
    SafePlan,
    InversionFree,
    General,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Auto => "auto",
            Method::SafePlan => "safeplan",
            Method::InversionFree => "invfree",
            Method::General => "general",
        }
    }
}

/// Recursive evaluator with a per-structure memo of subquery values.
pub struct Evaluator<'a, A: Algebra> {
    alg: &'a A,
    s: &'a ProbStructure,
    safe_only: bool,
    memo: Mutex<HashMap<String, A::V>>,
}

impl<'a, A: Algebra> Evaluator<'a, A> {
    pub fn new(alg: &'a A, s: &'a ProbStructure) -> Self {
        Evaluator {
            alg,
            s,
            safe_only: false,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Restricts evaluation to the no-self-join recurrence.
    pub fn safe_only(mut self) -> Self {
        self.safe_only = true;
        self
    }

    pub fn algebra(&self) -> &A {
        self.alg
    }

    pub fn structure(&self) -> &ProbStructure {
        self.s
    }

    pub fn tuple(&self, t: &Tuple) -> A::V {
        self.alg.tuple(self.s, t)
    }

    /// `p(q)` for a positive query (no classification; hard inputs fail
    /// somewhere in the recursion).
    pub fn prob(&self, q: &Query) -> Result<A::V, EvalError> {
        if q.has_negation() {
            return Err(EvalError::UnsupportedNegation(q.to_string()));
        }
        let m = minimize(q);
        let key = m.canonical_text();
        if let Some(v) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(v.clone());
        }
        let v = self.dispatch(&m)?;
        self.memo.lock().expect("memo lock").insert(key, v.clone());
        Ok(v)
    }

    fn dispatch(&self, q: &Query) -> Result<A::V, EvalError> {
        let alg = self.alg;
        if q.atoms.is_empty() {
            return Ok(alg.one());
        }
        if q.is_ground() {
            let vals: Vec<A::V> = q
                .atoms
                .iter()
                .map(|a| self.tuple(&ground_tuple(a)))
                .collect();
            return Ok(alg.product(&vals));
        }
        let comps = q.components();
        if comps.len() > 1 {
            // components that cannot share a tuple are independent
            let groups = unifiable_groups(&comps);
            if groups.len() > 1 {
                let mut vals = Vec::with_capacity(groups.len());
                for g in &groups {
                    vals.push(self.prob(&conjoin_all(g.iter().map(|&i| &comps[i])))?);
                }
                return Ok(alg.product(&vals));
            }
        } else if !q.has_self_join() {
            if !is_hierarchical(q) {
                return Err(EvalError::NotHierarchical);
            }
            return safeplan::independent_project(self, q);
        }
        if self.safe_only {
            return Err(EvalError::SelfJoin);
        }
        unary::eval(self, q)
    }
}

pub fn ground_tuple(a: &crate::qcore::Atom) -> Tuple {
    Tuple {
        rel: a.rel,
        args: a
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) => *c,
                Term::Var(_) => panic!("ground_tuple on a non-ground atom"),
            })
            .collect(),
    }
}

/// Partitions components into classes linked by unifiable subgoals.
fn unifiable_groups(comps: &[Query]) -> Vec<Vec<usize>> {
    let n = comps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !all_mgus(&comps[i], &comps[j]).is_empty() {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Checks that `method` applies to `q` according to the classifier.
pub fn check_method(q: &Query, method: Method) -> Result<(), EvalError> {
    let v = classify(q)?;
    let reason = v.reason;
    match method {
        Method::SafePlan => {
            if !is_hierarchical(&minimize(q)) {
                return Err(EvalError::NotHierarchical);
            }
            if minimize(q).has_self_join() {
                return Err(EvalError::SelfJoin);
            }
        }
        Method::InversionFree => {
            if !matches!(reason, Reason::NoSelfJoin | Reason::InversionFree) {
                return Err(EvalError::Precondition {
                    method: "invfree",
                    needed: "inversion-free",
                    got: reason,
                });
            }
        }
        Method::General | Method::Auto => {
            if v.complexity == Complexity::SharpPHard {
                return Err(EvalError::Hard(reason));
            }
        }
    }
    Ok(())
}

/// Exact `p(q)` with the chosen method.
pub fn eval(q: &Query, s: &ProbStructure, method: Method) -> Result<BigRational, EvalError> {
    check_method(q, method)?;
    let ev = Evaluator::new(&Exact, s);
    let ev = if method == Method::SafePlan {
        ev.safe_only()
    } else {
        ev
    };
    ev.prob(q)
}

/// `p(q)` as a formula DAG; returns the DAG and its root.
pub fn eval_formula(q: &Query, s: &ProbStructure, method: Method) -> Result<(Dag, u32), EvalError> {
    check_method(q, method)?;
    let dag = Dag::new();
    let root = {
        let ev = Evaluator::new(&dag, s);
        let ev = if method == Method::SafePlan {
            ev.safe_only()
        } else {
            ev
        };
        ev.prob(q)?
    };
    Ok((dag, root))
}

/// The no-self-join recurrence on its own.
pub fn eval_no_selfjoin(q: &Query, s: &ProbStructure) -> Result<BigRational, EvalError> {
    eval(q, s, Method::SafePlan)
}

/// Evaluation for inversion-free queries (including those without self-joins).
pub fn eval_inversion_free(q: &Query, s: &ProbStructure) -> Result<BigRational, EvalError> {
    eval(q, s, Method::InversionFree)
}

/// Evaluation for every PTIME query, including those with erasable inversions.
pub fn eval_general(q: &Query, s: &ProbStructure) -> Result<BigRational, EvalError> {
    eval(q, s, Method::General)
}

#[cfg(test)]
mod tests;
