//! Independent project for connected hierarchical queries without self-joins.

use std::collections::BTreeSet;

use super::{EvalError, Evaluator};
use crate::formula::Algebra;
use crate::hiercov::hierarchy;
use crate::par;
use crate::qcore::{Query, Term};

/// `p(q) = 1 - ∏_a (1 - p(q[a/x]))` for a variable `x` occurring in every
/// subgoal. Without self-joins the groundings for distinct `a` touch disjoint
/// tuples, so they are independent.
pub(super) fn independent_project<A: Algebra>(
    ev: &Evaluator<'_, A>,
    q: &Query,
) -> Result<A::V, EvalError> {
    let natoms = q.positive_atoms().count();
    let root = *hierarchy(q)
        .top(natoms)
        .first()
        .ok_or(EvalError::NotHierarchical)?;
    let values = root_values(ev, q, root);
    let parts = par::map(&values, |&a| match q.bind(root, a) {
        Some(qa) => ev.prob(&qa).map(|p| ev.algebra().one_minus(&p)),
        None => Ok(ev.algebra().one()),
    });
    let mut factors = Vec::with_capacity(parts.len());
    for p in parts {
        factors.push(p?);
    }
    let alg = ev.algebra();
    Ok(alg.one_minus(&alg.product(&factors)))
}

/// Constants that occur at a position of `v` in the first subgoal containing it.
pub(super) fn root_values<A: Algebra>(ev: &Evaluator<'_, A>, q: &Query, v: u32) -> Vec<u32> {
    let Some((atom, pos)) = q.positive_atoms().find_map(|a| {
        a.args
            .iter()
            .position(|t| *t == Term::Var(v))
            .map(|p| (a, p))
    }) else {
        return vec![];
    };
    let vals: BTreeSet<u32> = ev
        .structure()
        .relation(atom.rel)
        .filter(|(t, _)| t.args.len() == atom.args.len())
        .map(|(t, _)| t.args[pos])
        .collect();
    vals.into_iter().collect()
}
