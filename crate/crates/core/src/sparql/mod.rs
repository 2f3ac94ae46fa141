//! Restricted SPARQL: parser, normalizer, in-memory store and evaluator.

mod answer;
mod ast;
mod brute;
mod eval;
mod parser;
mod store;

pub use answer::{AnswerKind, AnswerSet};
pub use ast::{
    CompareOp, CountTarget, Element, Filter, GroupPattern, Projection, QueryAst, QueryForm, Term,
    TriplePattern,
};
pub use brute::{brute_force_evaluate, BruteForceError, MAX_TERMS_PER_POSITION};
pub use eval::{compare_terms, evaluate, Binding, EvalError};
pub use parser::{parse, ParseError, XSD_INTEGER};
pub use store::{load_triples, parse_ntriples, parse_ntriples_line, Store, StoreError, Triple};

/// Collapse every run of whitespace to a single space and trim both ends.
/// All other bytes are left untouched.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize("SELECT  ?x\n WHERE{ }"), "SELECT ?x WHERE{ }");
        assert_eq!(normalize("  \t\n "), "");
        let n = "ASK { <a> <p> <b> }";
        assert_eq!(normalize(n), n);
    }
}
