//! Enumeration oracle for the evaluator.
//!
//! Each group's triple variables are assigned every combination of store
//! terms that could occupy their positions, and an assignment survives when
//! every ground triple is in the store. Nested groups are evaluated the same
//! way and combined with a nested-loop join. This path shares no code with
//! [`super::eval`] beyond the AST and store types.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::answer::AnswerSet;
use super::ast::{
    CompareOp, CountTarget, Element, Filter, GroupPattern, Projection, QueryAst, QueryForm, Term,
};
use super::store::{Store, Triple};

/// Per-position distinct-term limit for enumeration.
pub const MAX_TERMS_PER_POSITION: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BruteForceError {
    #[error("store has {found} distinct terms at position {position}; enumeration allows at most {MAX_TERMS_PER_POSITION}")]
    StoreTooLarge { position: usize, found: usize },
    #[error("projected variable {0} is not bound by the WHERE clause")]
    UnboundProjection(String),
}

type Assignment = BTreeMap<String, Term>;

pub fn brute_force_evaluate(ast: &QueryAst, store: &Store) -> Result<AnswerSet, BruteForceError> {
    for position in 0..3 {
        let found = store.distinct_terms_at(position);
        if found > MAX_TERMS_PER_POSITION {
            return Err(BruteForceError::StoreTooLarge { position, found });
        }
    }
    let bindable = ast.where_clause.bindable_vars();
    let projected: Vec<&String> = match &ast.projection {
        Projection::Vars(v) => v.iter().collect(),
        Projection::Count {
            target: CountTarget::Var(v),
            ..
        } => vec![v],
        Projection::Count { .. } => vec![],
    };
    if let Some(v) = projected.into_iter().find(|v| !bindable.contains(*v)) {
        return Err(BruteForceError::UnboundProjection(v.clone()));
    }

    let solutions = enumerate_group(store, &ast.where_clause, &Assignment::new());
    Ok(match (&ast.form, &ast.projection) {
        (QueryForm::Ask, _) => AnswerSet::Boolean(!solutions.is_empty()),
        (QueryForm::Select, Projection::Vars(vars)) => {
            let mut rows = BTreeSet::new();
            for s in &solutions {
                let mut row = Vec::with_capacity(vars.len());
                for v in vars {
                    row.push(match s.get(v) {
                        Some(Term::Iri(i)) => i.clone(),
                        Some(Term::Literal { lexical, .. }) => lexical.clone(),
                        Some(Term::Var(x)) => x.clone(),
                        None => String::new(),
                    });
                }
                rows.insert(row);
            }
            AnswerSet::Bindings(rows)
        }
        (QueryForm::Select, Projection::Count { distinct, target, .. }) => {
            let mut count = 0u64;
            let mut seen_rows: Vec<&Assignment> = Vec::new();
            let mut seen_terms: Vec<&Term> = Vec::new();
            for s in &solutions {
                match target {
                    CountTarget::Star => {
                        if *distinct {
                            if seen_rows.contains(&s) {
                                continue;
                            }
                            seen_rows.push(s);
                        }
                        count += 1;
                    }
                    CountTarget::Var(v) => {
                        let Some(t) = s.get(v) else { continue };
                        if *distinct {
                            if seen_terms.contains(&t) {
                                continue;
                            }
                            seen_terms.push(t);
                        }
                        count += 1;
                    }
                }
            }
            AnswerSet::Count(count)
        }
    })
}

fn enumerate_group(store: &Store, group: &GroupPattern, outer: &Assignment) -> Vec<Assignment> {
    let triples: Vec<_> = group
        .elements
        .iter()
        .filter_map(|e| match e {
            Element::Triple(t) => Some(t),
            _ => None,
        })
        .collect();

    // candidate values per free variable: terms seen at every position it occupies
    let mut domains: BTreeMap<String, Option<BTreeSet<Term>>> = BTreeMap::new();
    for t in &triples {
        for (pos, term) in t.terms().into_iter().enumerate() {
            if let Term::Var(v) = term {
                if outer.contains_key(v) {
                    continue;
                }
                let here: BTreeSet<Term> = store.terms_at(pos).cloned().collect();
                let slot = domains.entry(v.clone()).or_insert(None);
                *slot = Some(match slot.take() {
                    None => here,
                    Some(prev) => prev.intersection(&here).cloned().collect(),
                });
            }
        }
    }
    let vars: Vec<(String, Vec<Term>)> = domains
        .into_iter()
        .map(|(v, d)| (v, d.unwrap_or_default().into_iter().collect()))
        .collect();

    let mut base = Vec::new();
    let mut indices = vec![0usize; vars.len()];
    if vars.iter().all(|(_, d)| !d.is_empty()) {
        loop {
            let mut a = outer.clone();
            for (k, (v, d)) in vars.iter().enumerate() {
                a.insert(v.clone(), d[indices[k]].clone());
            }
            let satisfied = triples.iter().all(|t| {
                let ground = |term: &Term| match term {
                    Term::Var(v) => a[v].clone(),
                    other => other.clone(),
                };
                Triple::new(ground(&t.subject), ground(&t.predicate), ground(&t.object))
                    .map(|g| store.contains(&g))
                    .unwrap_or(false)
            });
            if satisfied {
                base.push(a);
            }
            // odometer increment
            let mut k = 0;
            while k < vars.len() {
                indices[k] += 1;
                if indices[k] < vars[k].1.len() {
                    break;
                }
                indices[k] = 0;
                k += 1;
            }
            if k == vars.len() {
                break;
            }
        }
    }

    for el in &group.elements {
        let branch = match el {
            Element::Union(l, r) => {
                let mut b = enumerate_group(store, l, outer);
                b.extend(enumerate_group(store, r, outer));
                b
            }
            Element::Group(g) => enumerate_group(store, g, outer),
            _ => continue,
        };
        let mut joined = Vec::new();
        for x in &base {
            for y in &branch {
                let agrees = y.iter().all(|(k, v)| x.get(k).is_none_or(|w| w == v));
                if agrees {
                    let mut m = x.clone();
                    for (k, v) in y {
                        m.insert(k.clone(), v.clone());
                    }
                    joined.push(m);
                }
            }
        }
        base = joined;
    }

    base.retain(|a| {
        group.elements.iter().all(|el| match el {
            Element::Filter(Filter::NotExists(inner)) => enumerate_group(store, inner, a).is_empty(),
            Element::Filter(Filter::Compare { op, left, right }) => {
                let value = |t: &Term| match t {
                    Term::Var(v) => a.get(v).cloned(),
                    other => Some(other.clone()),
                };
                match (value(left), value(right)) {
                    (Some(l), Some(r)) => oracle_compare(*op, &l, &r),
                    _ => false,
                }
            }
            _ => true,
        })
    });
    base
}

fn oracle_compare(op: CompareOp, l: &Term, r: &Term) -> bool {
    let int = |t: &Term| match t {
        Term::Literal { lexical, .. } => lexical.trim().parse::<i64>().ok(),
        _ => None,
    };
    let both_literals = matches!(l, Term::Literal { .. }) && matches!(r, Term::Literal { .. });
    let (lt, eq) = match (int(l), int(r)) {
        (Some(a), Some(b)) => (a < b, a == b),
        _ if both_literals => {
            if op == CompareOp::Eq {
                return l == r;
            }
            if op == CompareOp::Ne {
                return l != r;
            }
            let (a, b) = (l.lexical_form(), r.lexical_form());
            (a < b, a == b)
        }
        _ => {
            return match op {
                CompareOp::Eq => l == r,
                CompareOp::Ne => l != r,
                _ => false,
            }
        }
    };
    match op {
        CompareOp::Eq => eq,
        CompareOp::Ne => !eq,
        CompareOp::Lt => lt,
        CompareOp::Le => lt || eq,
        CompareOp::Gt => !lt && !eq,
        CompareOp::Ge => !lt,
    }
}
