//! Join-based evaluation of a [`QueryAst`] over a [`Store`].
//!
//! A group is evaluated left to right: triple patterns extend each partial
//! solution through the store indexes, nested groups and unions are
//! evaluated on their own and joined in. Filters of a group apply to the
//! group's joined solutions. `NOT EXISTS` substitutes the current solution
//! into the inner group.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::answer::AnswerSet;
use super::ast::{
    CompareOp, CountTarget, Element, Filter, GroupPattern, Projection, QueryAst, QueryForm, Term,
    TriplePattern,
};
use super::store::Store;

pub type Binding = BTreeMap<String, Term>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("projected variable {0} is not bound by the WHERE clause")]
    UnboundProjection(String),
    #[error("ASK queries cannot project variables")]
    AskWithProjection,
}

pub fn evaluate(ast: &QueryAst, store: &Store) -> Result<AnswerSet, EvalError> {
    check_projection(ast)?;
    let solutions = eval_group(store, &ast.where_clause, &Binding::new());
    Ok(project(ast, &solutions))
}

pub(crate) fn check_projection(ast: &QueryAst) -> Result<(), EvalError> {
    let bindable = ast.where_clause.bindable_vars();
    match (&ast.form, &ast.projection) {
        (QueryForm::Ask, Projection::Vars(v)) if v.is_empty() => Ok(()),
        (QueryForm::Ask, _) => Err(EvalError::AskWithProjection),
        (QueryForm::Select, Projection::Vars(vars)) => {
            for v in vars {
                if !bindable.contains(v) {
                    return Err(EvalError::UnboundProjection(v.clone()));
                }
            }
            Ok(())
        }
        (
            QueryForm::Select,
            Projection::Count {
                target: CountTarget::Var(v),
                ..
            },
        ) if !bindable.contains(v) => Err(EvalError::UnboundProjection(v.clone())),
        (QueryForm::Select, Projection::Count { .. }) => Ok(()),
    }
}

fn project(ast: &QueryAst, solutions: &[Binding]) -> AnswerSet {
    match (&ast.form, &ast.projection) {
        (QueryForm::Ask, _) => AnswerSet::Boolean(!solutions.is_empty()),
        (QueryForm::Select, Projection::Vars(vars)) => AnswerSet::Bindings(
            solutions
                .iter()
                .map(|s| {
                    vars.iter()
                        .map(|v| s.get(v).map(|t| t.lexical_form().to_string()).unwrap_or_default())
                        .collect()
                })
                .collect(),
        ),
        (QueryForm::Select, Projection::Count { distinct, target, .. }) => {
            let n = match target {
                CountTarget::Star if *distinct => {
                    solutions.iter().collect::<BTreeSet<_>>().len()
                }
                CountTarget::Star => solutions.len(),
                CountTarget::Var(v) => {
                    let bound = solutions.iter().filter_map(|s| s.get(v));
                    if *distinct {
                        bound.collect::<BTreeSet<_>>().len()
                    } else {
                        bound.count()
                    }
                }
            };
            AnswerSet::Count(n as u64)
        }
    }
}

fn resolve<'a>(t: &'a Term, binding: &'a Binding) -> Option<&'a Term> {
    match t {
        Term::Var(v) => binding.get(v),
        other => Some(other),
    }
}

fn match_triple(store: &Store, tp: &TriplePattern, binding: &Binding, out: &mut Vec<Binding>) {
    let terms = tp.terms();
    let mut constants: [Option<&Term>; 3] = [None; 3];
    for (i, t) in terms.iter().enumerate() {
        constants[i] = resolve(t, binding);
    }
    'triples: for triple in store.matching(constants) {
        let mut extended = binding.clone();
        for (pos, t) in terms.iter().enumerate() {
            if let Term::Var(v) = t {
                let value = triple.position(pos);
                match extended.get(v) {
                    Some(existing) if existing != value => continue 'triples,
                    Some(_) => {}
                    None => {
                        extended.insert(v.clone(), value.clone());
                    }
                }
            }
        }
        out.push(extended);
    }
}

fn compatible(a: &Binding, b: &Binding) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .all(|(k, v)| large.get(k).is_none_or(|w| w == v))
}

fn join(left: Vec<Binding>, right: &[Binding]) -> Vec<Binding> {
    let mut out = Vec::new();
    for l in &left {
        for r in right {
            if compatible(l, r) {
                let mut merged = l.clone();
                merged.extend(r.iter().map(|(k, v)| (k.clone(), v.clone())));
                out.push(merged);
            }
        }
    }
    out
}

pub(crate) fn eval_group(store: &Store, group: &GroupPattern, initial: &Binding) -> Vec<Binding> {
    let mut solutions = vec![initial.clone()];
    let mut filters = Vec::new();
    for el in &group.elements {
        match el {
            Element::Triple(tp) => {
                let mut next = Vec::new();
                for s in &solutions {
                    match_triple(store, tp, s, &mut next);
                }
                solutions = next;
            }
            Element::Union(l, r) => {
                let mut branch = eval_group(store, l, initial);
                branch.extend(eval_group(store, r, initial));
                solutions = join(solutions, &branch);
            }
            Element::Group(g) => {
                let inner = eval_group(store, g, initial);
                solutions = join(solutions, &inner);
            }
            Element::Filter(f) => filters.push(f),
        }
        if solutions.is_empty() {
            return solutions;
        }
    }
    solutions.retain(|s| filters.iter().all(|f| filter_holds(store, f, s)));
    solutions
}

fn filter_holds(store: &Store, f: &Filter, s: &Binding) -> bool {
    match f {
        Filter::NotExists(g) => eval_group(store, g, s).is_empty(),
        Filter::Compare { op, left, right } => match (resolve(left, s), resolve(right, s)) {
            (Some(l), Some(r)) => compare_terms(*op, l, r).unwrap_or(false),
            _ => false,
        },
    }
}

fn as_integer(t: &Term) -> Option<i64> {
    match t {
        Term::Literal { lexical, .. } => lexical.trim().parse().ok(),
        _ => None,
    }
}

/// Filter comparison. Integer comparison when both operands are literals
/// whose lexical forms parse as integers, otherwise term equality for
/// `=`/`!=` and lexicographic order over literal lexical forms.
/// `None` marks incomparable operands.
pub fn compare_terms(op: CompareOp, l: &Term, r: &Term) -> Option<bool> {
    use std::cmp::Ordering;
    let ordering: Ordering = if let (Some(a), Some(b)) = (as_integer(l), as_integer(r)) {
        a.cmp(&b)
    } else {
        match (l, r) {
            (Term::Literal { lexical: a, .. }, Term::Literal { lexical: b, .. }) => {
                if matches!(op, CompareOp::Eq | CompareOp::Ne) {
                    let eq = l == r;
                    return Some(if op == CompareOp::Eq { eq } else { !eq });
                }
                a.cmp(b)
            }
            _ => {
                return match op {
                    CompareOp::Eq => Some(l == r),
                    CompareOp::Ne => Some(l != r),
                    _ => None,
                }
            }
        }
    };
    Some(match op {
        CompareOp::Eq => ordering == Ordering::Equal,
        CompareOp::Ne => ordering != Ordering::Equal,
        CompareOp::Lt => ordering == Ordering::Less,
        CompareOp::Gt => ordering == Ordering::Greater,
        CompareOp::Le => ordering != Ordering::Greater,
        CompareOp::Ge => ordering != Ordering::Less,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::parser::parse;
    use crate::sparql::store::Triple;

    fn run(q: &str, store: &Store) -> AnswerSet {
        evaluate(&parse(q).unwrap(), store).unwrap()
    }

    fn two_authors() -> Store {
        Store::new([Triple::iris("a", "p", "b"), Triple::iris("c", "p", "b")])
    }

    #[test]
    fn ask_over_empty_store() {
        assert_eq!(run("ASK { <a> <p> <b> }", &Store::default()), AnswerSet::Boolean(false));
    }

    #[test]
    fn select_distinct() {
        assert_eq!(
            run("SELECT DISTINCT ?x WHERE { ?x <p> <b> }", &two_authors()),
            AnswerSet::bindings([["a"], ["c"]])
        );
    }

    #[test]
    fn count_star() {
        assert_eq!(
            run("SELECT (COUNT(*) AS ?n) WHERE { ?x <p> <b> }", &two_authors()),
            AnswerSet::Count(2)
        );
    }

    #[test]
    fn count_non_distinct_counts_bag() {
        let q = "SELECT (COUNT(?x) AS ?n) WHERE { { ?x <p> <b> } UNION { ?x <p> <b> } }";
        assert_eq!(run(q, &two_authors()), AnswerSet::Count(4));
        let q = "SELECT (COUNT(DISTINCT ?x) AS ?n) WHERE { { ?x <p> <b> } UNION { ?x <p> <b> } }";
        assert_eq!(run(q, &two_authors()), AnswerSet::Count(2));
    }

    #[test]
    fn numeric_filter_beats_lexicographic() {
        let store = Store::new([
            Triple::new(Term::iri("a"), Term::iri("y"), Term::literal("9")).unwrap(),
            Triple::new(Term::iri("b"), Term::iri("y"), Term::literal("10")).unwrap(),
        ]);
        assert_eq!(
            run("SELECT ?x WHERE { ?x <y> ?v FILTER(?v > '9') }", &store),
            AnswerSet::bindings([["b"]])
        );
        // mixed number/word falls back to string order: "10" < "x"
        assert_eq!(
            run("SELECT ?x WHERE { ?x <y> ?v FILTER(?v < 'x') }", &store),
            AnswerSet::bindings([["a"], ["b"]])
        );
    }

    #[test]
    fn incomparable_filter_drops_solution() {
        let store = two_authors();
        assert_eq!(
            run("SELECT ?x WHERE { ?x <p> ?o FILTER(?o > '3') }", &store),
            AnswerSet::bindings(Vec::<Vec<String>>::new())
        );
        assert_eq!(
            run("SELECT ?x WHERE { ?x <p> ?o FILTER(?x != <a>) }", &store),
            AnswerSet::bindings([["c"]])
        );
    }

    #[test]
    fn unbound_projection_errors() {
        let mut ast = parse("SELECT ?x WHERE { ?x <p> <b> }").unwrap();
        ast.projection = Projection::Vars(vec!["?zz".into()]);
        assert_eq!(
            evaluate(&ast, &two_authors()),
            Err(EvalError::UnboundProjection("?zz".into()))
        );
    }

    #[test]
    fn not_exists_hand_computed() {
        // 5 triples: papers w1..w3 by author a; w1 and w3 appear at venue v
        let store = Store::new([
            Triple::iris("w1", "by", "a"),
            Triple::iris("w2", "by", "a"),
            Triple::iris("w3", "by", "a"),
            Triple::iris("w1", "at", "v"),
            Triple::iris("w3", "at", "v"),
        ]);
        assert_eq!(
            run(
                "SELECT DISTINCT ?w WHERE { ?w <by> <a> FILTER NOT EXISTS { ?w <at> <v> } }",
                &store
            ),
            AnswerSet::bindings([["w2"]])
        );
    }

    #[test]
    fn union_partial_bindings_project_empty() {
        let store = Store::new([Triple::iris("a", "p", "b"), Triple::iris("c", "q", "d")]);
        assert_eq!(
            run("SELECT ?x ?y WHERE { { ?x <p> <b> } UNION { <c> <q> ?y } }", &store),
            AnswerSet::bindings([vec!["a", ""], vec!["", "d"]])
        );
    }
}
