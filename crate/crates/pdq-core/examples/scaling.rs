//! Prints formula sizes for two hierarchical queries over complete
//! structures of growing domain size.

use pdq_core::evalptime::{eval_formula, Method};
use pdq_core::pstruct::complete_structure;
use pdq_core::qcore::parse_query;

fn main() {
    for text in ["R(x),S(x,y)", "P(x),R(x,y),R(x1,y1),S(x1)"] {
        let q = parse_query(text).expect("query parses");
        let mut prev = 0usize;
        for n in [2usize, 4, 8, 16, 32] {
            let s = complete_structure(&q, n);
            let (dag, root) = eval_formula(&q, &s, Method::Auto).expect("PTIME query");
            let size = dag.size(root);
            let ratio = if prev > 0 {
                format!("{:.3}", size as f64 / prev as f64)
            } else {
                "-".into()
            };
            println!("{text:32} N={n:<3} size={size:<7} ratio={ratio}");
            prev = size;
        }
    }
}
