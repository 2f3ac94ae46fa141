//! Seeded generators shared by the property and acceptance tests.
#![allow(dead_code)]

use kgqa_rl::sparql::{
    CompareOp, CountTarget, Element, Filter, GroupPattern, Projection, QueryAst, QueryForm, Store, Term, Triple,
    TriplePattern, XSD_INTEGER,
};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const SUBJECTS: [&str; 6] = ["ex:s0", "ex:s1", "ex:s2", "ex:s3", "ex:s4", "ex:s5"];
pub const PREDICATES: [&str; 4] = ["ex:p0", "ex:p1", "ex:p2", "ex:p3"];
pub const VARS: [&str; 3] = ["?a", "?b", "?c"];

fn iri(s: &str) -> Term {
    Term::iri(format!("http://example.org/{}", &s[3..]))
}

fn int(n: u32) -> Term {
    Term::Literal {
        lexical: n.to_string(),
        datatype: Some(XSD_INTEGER.to_string()),
    }
}

/// Objects: the six subjects plus two plain and two integer literals, so
/// every position stays within the enumeration limit.
fn object<R: Rng>(rng: &mut R) -> Term {
    match rng.random_range(0..10) {
        i @ 0..6 => iri(SUBJECTS[i]),
        6 => Term::literal("2020"),
        7 => Term::literal("2021"),
        8 => int(3),
        _ => int(12),
    }
}

pub fn random_store<R: Rng>(rng: &mut R, max_triples: usize) -> Store {
    let n = rng.random_range(0..=max_triples);
    let triples = (0..n).map(|_| {
        Triple::new(
            iri(SUBJECTS.choose(rng).unwrap()),
            iri(PREDICATES.choose(rng).unwrap()),
            object(rng),
        )
        .unwrap()
    });
    Store::new(triples.collect::<Vec<_>>())
}

fn var<R: Rng>(rng: &mut R) -> Term {
    Term::var(*VARS.choose(rng).unwrap())
}

fn pattern<R: Rng>(rng: &mut R) -> TriplePattern {
    let s = if rng.random_bool(0.6) { var(rng) } else { iri(SUBJECTS.choose(rng).unwrap()) };
    let p = if rng.random_bool(0.2) { var(rng) } else { iri(PREDICATES.choose(rng).unwrap()) };
    let o = if rng.random_bool(0.6) { var(rng) } else { object(rng) };
    TriplePattern::new(s, p, o)
}

fn operand<R: Rng>(rng: &mut R) -> Term {
    if rng.random_bool(0.6) {
        var(rng)
    } else {
        object(rng)
    }
}

/// A group of nesting depth at most `depth` (a flat group has depth 1).
pub fn random_group<R: Rng>(rng: &mut R, depth: usize) -> GroupPattern {
    let n = rng.random_range(1..=3);
    let mut elements = vec![Element::Triple(pattern(rng))];
    for _ in 1..n {
        let el = match rng.random_range(0..10) {
            0..=3 => Element::Triple(pattern(rng)),
            4 if depth > 1 => Element::Union(random_group(rng, depth - 1), random_group(rng, depth - 1)),
            5 if depth > 1 => Element::Group(random_group(rng, depth - 1)),
            6 if depth > 1 => Element::Filter(Filter::NotExists(random_group(rng, depth - 1))),
            7 | 8 => Element::Filter(Filter::Compare {
                op: *CompareOp::ALL.choose(rng).unwrap(),
                left: operand(rng),
                right: operand(rng),
            }),
            _ => Element::Triple(pattern(rng)),
        };
        elements.push(el);
    }
    // keep filters anywhere in the group, not only at the end
    let k = rng.random_range(0..elements.len());
    elements.swap(0, k);
    GroupPattern::new(elements)
}

pub fn random_query<R: Rng>(rng: &mut R, depth: usize) -> QueryAst {
    let where_clause = random_group(rng, depth);
    let bindable: Vec<String> = where_clause.bindable_vars().into_iter().collect();
    match rng.random_range(0..4) {
        0 => QueryAst::ask(where_clause),
        1 if !bindable.is_empty() => QueryAst {
            form: QueryForm::Select,
            distinct: false,
            projection: Projection::Count {
                distinct: rng.random_bool(0.5),
                target: if rng.random_bool(0.5) {
                    CountTarget::Star
                } else {
                    CountTarget::Var(bindable.choose(rng).unwrap().clone())
                },
                alias: rng.random_bool(0.5).then(|| "?count".to_string()),
            },
            where_clause,
        },
        _ if !bindable.is_empty() => {
            let k = rng.random_range(1..=bindable.len());
            let vars: Vec<String> = bindable.choose_multiple(rng, k).cloned().collect();
            QueryAst::select(rng.random_bool(0.7), vars, where_clause)
        }
        _ => QueryAst::ask(where_clause),
    }
}

pub const PAPER: &str = "https://dblp.org/rec/conf/x/P1";
pub const AUTHORED_BY: &str = "https://dblp.org/rdf/schema#authoredBy";
pub const GOLD_QUERY: &str =
    "SELECT DISTINCT ?answer WHERE { <https://dblp.org/rec/conf/x/P1> <https://dblp.org/rdf/schema#authoredBy> ?answer }";

/// A two-author paper and the question asking for its authors.
pub fn reward_fixture() -> (kgqa_rl::corpus::QAInstance, kgqa_rl::endpoint::EmbeddedBackend) {
    use kgqa_rl::corpus::{EntityHint, QAInstance, QueryType, RelationHint};
    use kgqa_rl::sparql::AnswerSet;
    let store = Store::new(vec![
        Triple::iris(PAPER, AUTHORED_BY, "https://dblp.org/pid/a1"),
        Triple::iris(PAPER, AUTHORED_BY, "https://dblp.org/pid/a2"),
        Triple::iris("https://dblp.org/pid/a1", "https://dblp.org/rdf/schema#name", "https://dblp.org/x/n"),
    ]);
    let inst = QAInstance {
        id: "fixture-1".into(),
        question: "Who wrote P1?".into(),
        entities: vec![EntityHint {
            uri: PAPER.into(),
            label: "P1".into(),
        }],
        relations: vec![RelationHint {
            uri: AUTHORED_BY.into(),
            label: "authored by".into(),
            domain: String::new(),
            range: String::new(),
            comment: String::new(),
        }],
        gold_query: Some(GOLD_QUERY.into()),
        query_type: QueryType::SingleFact,
        template_id: "T1".into(),
        is_temporal: false,
        is_heldout: false,
        gold_answers: Some(AnswerSet::bindings([["https://dblp.org/pid/a1"], ["https://dblp.org/pid/a2"]])),
        materialize_error: None,
    };
    (inst, kgqa_rl::endpoint::EmbeddedBackend::new(store))
}

pub fn micro_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/micro")
}

/// The micro corpus split, with gold answers materialized against its store.
pub fn micro_split(
    split: kgqa_rl::corpus::Split,
) -> (Vec<kgqa_rl::corpus::QAInstance>, kgqa_rl::endpoint::EmbeddedBackend) {
    use kgqa_rl::corpus::{load_dataset, materialize_gold_answers};
    let dir = micro_dir();
    let store = kgqa_rl::sparql::load_triples(dir.join("store.nt")).expect("micro store");
    let backend = kgqa_rl::endpoint::EmbeddedBackend::new(store);
    let raw = load_dataset(&dir, split).expect("micro split");
    let instances = materialize_gold_answers(&raw, &backend).expect("materialize");
    assert!(instances.iter().all(|i| i.is_usable()));
    (instances, backend)
}
