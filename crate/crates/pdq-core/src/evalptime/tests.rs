use num::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::corpus;
use crate::pstruct::oracle_eval;
use crate::qcore::{const_name, parse_query};

fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// A random structure over the query's relations with at most `max_tuples` tuples.
fn random_structure(
    q: &Query,
    rng: &mut ChaCha8Rng,
    dom: usize,
    max_tuples: usize,
) -> ProbStructure {
    let mut rels: Vec<(u32, usize)> = q.atoms.iter().map(|a| (a.rel, a.args.len())).collect();
    rels.sort();
    rels.dedup();
    let consts: Vec<String> = q.consts().into_iter().map(const_name).collect();
    let mut names: Vec<String> = (0..dom).map(|i| format!("d{i}")).collect();
    names.extend(consts);
    let mut s = ProbStructure::new();
    let n = rng.gen_range(1..=max_tuples);
    for _ in 0..n * 2 {
        if s.len() >= n {
            break;
        }
        let (rel, ar) = rels[rng.gen_range(0..rels.len())];
        let args: Vec<u32> = (0..ar)
            .map(|_| crate::qcore::intern_const(&names[rng.gen_range(0..names.len())]))
            .collect();
        let den = rng.gen_range(1..=16i64);
        let num = rng.gen_range(0..=den);
        s.insert(Tuple { rel, args }, r(num, den));
    }
    s
}

#[test]
fn three_eighths() {
    let s = ProbStructure::parse("R\ta\t1/2\nS\ta,b\t1/2\nS\ta,c\t1/2").unwrap();
    let q = parse_query("R(x),S(x,y)").unwrap();
    for m in [
        Method::Auto,
        Method::SafePlan,
        Method::InversionFree,
        Method::General,
    ] {
        assert_eq!(eval(&q, &s, m).unwrap(), r(3, 8), "{m:?}");
    }
}

#[test]
fn ground_and_empty() {
    let s = ProbStructure::parse("R\ta\t1/3").unwrap();
    assert_eq!(
        eval(&parse_query("R('a')").unwrap(), &s, Method::Auto).unwrap(),
        r(1, 3)
    );
    let q = parse_query("R(x),S(x,y),S(u,v),T(u)").unwrap();
    assert_eq!(eval(&q, &s, Method::Auto).unwrap(), r(0, 1));
}

#[test]
fn safeplan_refuses_self_join() {
    let s = ProbStructure::new();
    let q = parse_query("R(x),S(x,y),S(u,v),T(u)").unwrap();
    assert!(matches!(
        eval(&q, &s, Method::SafePlan),
        Err(EvalError::SelfJoin)
    ));
    assert!(matches!(
        eval(&parse_query("R(x),S(x,y),T(y)").unwrap(), &s, Method::Auto),
        Err(EvalError::Hard(_))
    ));
}

#[test]
fn ptime_corpus_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for e in corpus() {
        if e.expect != crate::invclass::Complexity::Ptime
            && e.kind != crate::corpus::EntryKind::Known
        {
            continue;
        }
        for _ in 0..12 {
            let s = random_structure(&e.query, &mut rng, 3, 10);
            let want = oracle_eval(&e.query, &s, 24).unwrap();
            let got = Evaluator::new(&Exact, &s)
                .prob(&e.query)
                .unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert_eq!(got, want, "{} on\n{}", e.name, s.to_tsv());
        }
    }
}

#[test]
fn methods_agree_without_self_joins() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = parse_query("R(x),S(x,y),T(x,y,z)").unwrap();
    for _ in 0..10 {
        let s = random_structure(&q, &mut rng, 3, 12);
        assert_eq!(
            eval(&q, &s, Method::SafePlan).unwrap(),
            eval(&q, &s, Method::InversionFree).unwrap()
        );
    }
}

#[test]
fn formula_evaluates_to_exact_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = parse_query("P(x),R(x,y),R(x1,y1),S(x1)").unwrap();
    for _ in 0..5 {
        let s = random_structure(&q, &mut rng, 3, 10);
        let (dag, root) = eval_formula(&q, &s, Method::Auto).unwrap();
        assert_eq!(dag.eval(root, &s), oracle_eval(&q, &s, 24).unwrap());
    }
}
