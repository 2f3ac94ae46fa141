//! Regenerates the shipped micro-corpus under `data/micro/`.
//!
//! Usage: `cargo run -p kgqa-rl --bin gen_micro -- [OUT_DIR]`
//!
//! Output is a pure function of the fixed seed, so rerunning reproduces the
//! committed files byte-for-byte.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgqa_rl::corpus::{dataset_to_string, EntityHint, QAInstance, QueryType, RelationHint};
use kgqa_rl::sparql::{evaluate, parse, AnswerSet, Store, Term, Triple};

const SEED: u64 = 42;
const N_CREATORS: usize = 30;
const N_PUBLICATIONS: usize = 70;
const TRAIN_PER_TEMPLATE: usize = 8;
const TEST_PER_TEMPLATE: usize = 4;
const HELDOUT_PER_TEMPLATE: usize = 3;

const SCHEMA: &str = "https://dblp.org/rdf/schema#";

const FIRST: &[&str] = &[
    "Ada", "Bruno", "Chen", "Dana", "Elif", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kemal",
    "Lena", "Mateo", "Nadia", "Oskar", "Priya",
];
const LAST: &[&str] = &[
    "Abbott", "Brandt", "Costa", "Dahl", "Eriksen", "Fischer", "Gupta", "Horvat", "Ivanova",
    "Jensen", "Kowalski", "Lindqvist", "Moreau", "Novak", "Okafor", "Petrov",
];
const ORGS: &[&str] = &[
    "Leipzig University",
    "TU Delft",
    "ETH Zurich",
    "University of Oslo",
    "KAIST",
    "Sapienza University of Rome",
    "University of Toronto",
    "Inria",
];
const VENUES: &[&str] = &["ISWC", "ESWC", "WWW", "KDD", "ACL", "SIGIR", "CIKM", "EMNLP"];
const ADJ: &[&str] = &[
    "Scalable", "Robust", "Neural", "Efficient", "Incremental", "Federated", "Explainable",
    "Adaptive", "Probabilistic", "Sparse",
];
const TOPIC: &[&str] = &[
    "Entity Linking", "Query Rewriting", "Graph Embeddings", "Schema Matching",
    "Question Answering", "Link Prediction", "Ontology Alignment", "Triple Stores",
    "Relation Extraction", "Knowledge Base Completion",
];
const SETTING: &[&str] = &[
    "over Scholarly Graphs", "for Digital Libraries", "at Web Scale", "with Weak Supervision",
    "in Low-Resource Settings", "for Bibliographic Data", "under Distribution Shift",
];

#[derive(Clone)]
struct Creator {
    iri: String,
    name: String,
}

#[derive(Clone)]
struct Publication {
    iri: String,
    title: String,
    year: u32,
    venue: &'static str,
    authors: Vec<usize>,
}

struct World {
    creators: Vec<Creator>,
    pubs: Vec<Publication>,
    store: Store,
}

fn rel(local: &str) -> RelationHint {
    let (label, domain, range, comment) = match local {
        "authoredBy" => (
            "authored by",
            "Publication",
            "Creator",
            "A person or group that authored the publication.",
        ),
        "yearOfPublication" => (
            "year of publication",
            "Publication",
            "xsd:gYear",
            "The calendar year in which the publication appeared.",
        ),
        "primaryAffiliation" => ("primary affiliation", "Creator", "xsd:string", ""),
        "publishedIn" => ("published in", "Publication", "xsd:string", "Venue short name."),
        other => panic!("unknown relation {other}"),
    };
    RelationHint {
        uri: format!("{SCHEMA}{local}"),
        label: label.into(),
        domain: domain.into(),
        range: range.into(),
        comment: comment.into(),
    }
}

fn build_world(rng: &mut ChaCha8Rng) -> World {
    let mut names = BTreeSet::new();
    let mut creators = Vec::new();
    while creators.len() < N_CREATORS {
        let name = format!("{} {}", FIRST.choose(rng).unwrap(), LAST.choose(rng).unwrap());
        if names.insert(name.clone()) {
            let iri = format!(
                "https://dblp.org/pid/{:02}/{:04}",
                rng.random_range(10..99),
                rng.random_range(1000..9999)
            );
            creators.push(Creator { iri, name });
        }
    }
    let mut titles = HashSet::new();
    let mut pubs = Vec::new();
    let mut keys = HashSet::new();
    while pubs.len() < N_PUBLICATIONS {
        let title = format!(
            "{} {} {}",
            ADJ.choose(rng).unwrap(),
            TOPIC.choose(rng).unwrap(),
            SETTING.choose(rng).unwrap()
        );
        if !titles.insert(title.clone()) {
            continue;
        }
        let year = rng.random_range(2012..=2023);
        let mut pool: Vec<usize> = (0..N_CREATORS).collect();
        pool.shuffle(rng);
        let n_auth = rng.random_range(1..=3);
        let authors = pool[..n_auth].to_vec();
        let venue = *VENUES.choose(rng).unwrap();
        let surname = creators[authors[0]].name.split(' ').nth(1).unwrap().to_string();
        let mut key = format!("{surname}{:02}", year % 100);
        let mut suffix = b'a';
        while !keys.insert(key.clone()) {
            key = format!("{surname}{:02}{}", year % 100, suffix as char);
            suffix += 1;
        }
        pubs.push(Publication {
            iri: format!("https://dblp.org/rec/conf/{}/{key}", venue.to_lowercase()),
            title,
            year,
            venue,
            authors,
        });
    }

    let mut triples = Vec::new();
    let p = |local: &str| Term::iri(format!("{SCHEMA}{local}"));
    for (i, c) in creators.iter().enumerate() {
        triples.push(
            Triple::new(
                Term::iri(&c.iri),
                p("primaryAffiliation"),
                Term::literal(ORGS[i % ORGS.len()]),
            )
            .unwrap(),
        );
    }
    for pb in &pubs {
        for a in &pb.authors {
            triples.push(Triple::iris(&pb.iri, &format!("{SCHEMA}authoredBy"), &creators[*a].iri));
        }
        triples.push(
            Triple::new(Term::iri(&pb.iri), p("yearOfPublication"), Term::literal(pb.year.to_string()))
                .unwrap(),
        );
        triples.push(Triple::new(Term::iri(&pb.iri), p("publishedIn"), Term::literal(pb.venue)).unwrap());
    }
    World {
        creators,
        pubs,
        store: Store::new(triples),
    }
}

/// One filled template: question, hints and gold query.
struct Draft {
    question: String,
    entities: Vec<EntityHint>,
    relations: Vec<RelationHint>,
    query: String,
    temporal: bool,
    /// Accept the draft only if its answer passes this check.
    check: fn(&AnswerSet, &World, &Draft) -> bool,
    key: String,
}

fn ent_pub(p: &Publication) -> EntityHint {
    EntityHint {
        uri: p.iri.clone(),
        label: p.title.clone(),
    }
}

fn ent_creator(c: &Creator) -> EntityHint {
    EntityHint {
        uri: c.iri.clone(),
        label: c.name.clone(),
    }
}

fn non_empty(a: &AnswerSet, _: &World, _: &Draft) -> bool {
    !a.is_empty()
}

fn any(_: &AnswerSet, _: &World, _: &Draft) -> bool {
    true
}

fn papers_of(w: &World, c: usize) -> Vec<usize> {
    (0..w.pubs.len()).filter(|i| w.pubs[*i].authors.contains(&c)).collect()
}

/// Proper non-empty subset of the first entity's papers.
fn proper_subset(a: &AnswerSet, w: &World, d: &Draft) -> bool {
    let c = w.creators.iter().position(|c| c.iri == d.entities[0].uri).unwrap();
    !a.is_empty() && a.len() < papers_of(w, c).len()
}

fn draft(template: &str, w: &World, rng: &mut ChaCha8Rng, want_true: bool) -> Draft {
    let a_pub = |rng: &mut ChaCha8Rng| rng.random_range(0..w.pubs.len());
    let a_creator_with = |rng: &mut ChaCha8Rng, min: usize| loop {
        let c = rng.random_range(0..w.creators.len());
        if papers_of(w, c).len() >= min {
            break c;
        }
    };
    let iri = |local: &str| format!("<{SCHEMA}{local}>");
    let e = |u: &str| format!("<{u}>");
    match template {
        "T01" | "T14" => {
            let p = &w.pubs[a_pub(rng)];
            let question = if template == "T01" {
                format!("Who are the authors of '{}'?", p.title)
            } else {
                format!("Name the creators of '{}'.", p.title)
            };
            Draft {
                question,
                entities: vec![ent_pub(p)],
                relations: vec![rel("authoredBy")],
                query: format!("SELECT DISTINCT ?answer WHERE {{ {} {} ?answer }}", e(&p.iri), iri("authoredBy")),
                temporal: false,
                check: non_empty,
                key: p.iri.clone(),
            }
        }
        "T02" => {
            let p = &w.pubs[a_pub(rng)];
            Draft {
                question: format!("In which year was '{}' published?", p.title),
                entities: vec![ent_pub(p)],
                relations: vec![rel("yearOfPublication")],
                query: format!(
                    "SELECT DISTINCT ?answer WHERE {{ {} {} ?answer }}",
                    e(&p.iri),
                    iri("yearOfPublication")
                ),
                temporal: true,
                check: non_empty,
                key: p.iri.clone(),
            }
        }
        "T03" => {
            let c = &w.creators[a_creator_with(rng, 1)];
            Draft {
                question: format!("Which papers did {} write?", c.name),
                entities: vec![ent_creator(c)],
                relations: vec![rel("authoredBy")],
                query: format!("SELECT DISTINCT ?answer WHERE {{ ?answer {} {} }}", iri("authoredBy"), e(&c.iri)),
                temporal: false,
                check: non_empty,
                key: c.iri.clone(),
            }
        }
        "T04" => {
            let p = &w.pubs[a_pub(rng)];
            Draft {
                question: format!("What are the primary affiliations of the authors of '{}'?", p.title),
                entities: vec![ent_pub(p)],
                relations: vec![rel("authoredBy"), rel("primaryAffiliation")],
                query: format!(
                    "SELECT DISTINCT ?answer WHERE {{ {} {} ?x . ?x {} ?answer }}",
                    e(&p.iri),
                    iri("authoredBy"),
                    iri("primaryAffiliation")
                ),
                temporal: false,
                check: non_empty,
                key: p.iri.clone(),
            }
        }
        "T05" => {
            let p = &w.pubs[a_pub(rng)];
            let year = if want_true {
                p.year
            } else {
                let mut y = p.year;
                while y == p.year {
                    y = rng.random_range(2012..=2023);
                }
                y
            };
            Draft {
                question: format!("Was '{}' published in {year}?", p.title),
                entities: vec![ent_pub(p)],
                relations: vec![rel("yearOfPublication")],
                query: format!("ASK {{ {} {} '{year}' }}", e(&p.iri), iri("yearOfPublication")),
                temporal: true,
                check: any,
                key: format!("{}|{year}", p.iri),
            }
        }
        "T06" => {
            let pi = a_pub(rng);
            let p = &w.pubs[pi];
            let c = if want_true {
                *p.authors.choose(rng).unwrap()
            } else {
                loop {
                    let c = rng.random_range(0..w.creators.len());
                    if !p.authors.contains(&c) {
                        break c;
                    }
                }
            };
            let c = &w.creators[c];
            Draft {
                question: format!("Did {} write '{}'?", c.name, p.title),
                entities: vec![ent_creator(c), ent_pub(p)],
                relations: vec![rel("authoredBy")],
                query: format!("ASK {{ {} {} {} }}", e(&p.iri), iri("authoredBy"), e(&c.iri)),
                temporal: false,
                check: any,
                key: format!("{}|{}", c.iri, p.iri),
            }
        }
        "T07" | "T15" => {
            let c = &w.creators[a_creator_with(rng, 1)];
            let question = if template == "T07" {
                format!("How many papers did {} write?", c.name)
            } else {
                format!("What is the number of publications by {}?", c.name)
            };
            Draft {
                question,
                entities: vec![ent_creator(c)],
                relations: vec![rel("authoredBy")],
                query: format!(
                    "SELECT ( COUNT ( DISTINCT ?answer ) AS ?count ) WHERE {{ ?answer {} {} }}",
                    iri("authoredBy"),
                    e(&c.iri)
                ),
                temporal: false,
                check: any,
                key: c.iri.clone(),
            }
        }
        "T08" => {
            let ci = a_creator_with(rng, 2);
            let coauthors: BTreeSet<usize> = papers_of(w, ci)
                .into_iter()
                .flat_map(|p| w.pubs[p].authors.clone())
                .filter(|a| *a != ci)
                .collect();
            let bi = *coauthors
                .iter()
                .collect::<Vec<_>>()
                .choose(rng)
                .copied()
                .unwrap_or(&((ci + 1) % w.creators.len()));
            let (c, b) = (&w.creators[ci], &w.creators[bi]);
            Draft {
                question: format!("Which papers by {} were not co-authored with {}?", c.name, b.name),
                entities: vec![ent_creator(c), ent_creator(b)],
                relations: vec![rel("authoredBy")],
                query: format!(
                    "SELECT DISTINCT ?answer WHERE {{ ?answer {r} {} . FILTER NOT EXISTS {{ ?answer {r} {} }} }}",
                    e(&c.iri),
                    e(&b.iri),
                    r = iri("authoredBy")
                ),
                temporal: false,
                check: proper_subset,
                key: format!("{}|{}", c.iri, b.iri),
            }
        }
        "T09" => {
            let ci = a_creator_with(rng, 2);
            let year = w.pubs[*papers_of(w, ci).choose(rng).unwrap()].year;
            let c = &w.creators[ci];
            Draft {
                question: format!(
                    "Which papers by {} were not published in a year other than {year}?",
                    c.name
                ),
                entities: vec![ent_creator(c)],
                relations: vec![rel("authoredBy"), rel("yearOfPublication")],
                query: format!(
                    "SELECT DISTINCT ?answer WHERE {{ ?answer {} {} . FILTER NOT EXISTS {{ ?answer {} ?y . FILTER ( ?y != '{year}' ) }} }}",
                    iri("authoredBy"),
                    e(&c.iri),
                    iri("yearOfPublication")
                ),
                temporal: true,
                check: non_empty,
                key: format!("{}|{year}", c.iri),
            }
        }
        "T10" => {
            let p = &w.pubs[a_pub(rng)];
            Draft {
                question: format!("Who wrote '{}' and when was it published?", p.title),
                entities: vec![ent_pub(p)],
                relations: vec![rel("authoredBy"), rel("yearOfPublication")],
                query: format!(
                    "SELECT DISTINCT ?answer ?y WHERE {{ {p} {} ?answer . {p} {} ?y }}",
                    iri("authoredBy"),
                    iri("yearOfPublication"),
                    p = e(&p.iri)
                ),
                temporal: true,
                check: non_empty,
                key: p.iri.clone(),
            }
        }
        "T11" => {
            let (ai, bi) = loop {
                let a = a_creator_with(rng, 1);
                let b = a_creator_with(rng, 1);
                if a != b {
                    break (a, b);
                }
            };
            let (a, b) = (&w.creators[ai], &w.creators[bi]);
            Draft {
                question: format!("Which papers were written by {} or {}?", a.name, b.name),
                entities: vec![ent_creator(a), ent_creator(b)],
                relations: vec![rel("authoredBy")],
                query: format!(
                    "SELECT DISTINCT ?answer WHERE {{ {{ ?answer {r} {} }} UNION {{ ?answer {r} {} }} }}",
                    e(&a.iri),
                    e(&b.iri),
                    r = iri("authoredBy")
                ),
                temporal: false,
                check: non_empty,
                key: format!("{}|{}", a.iri, b.iri),
            }
        }
        "T12" => {
            let ci = a_creator_with(rng, 2);
            let years: Vec<u32> = papers_of(w, ci).iter().map(|p| w.pubs[*p].year).collect();
            let year = years.choose(rng).unwrap() - 1;
            let c = &w.creators[ci];
            Draft {
                question: format!("Which papers by {} were published after {year}?", c.name),
                entities: vec![ent_creator(c)],
                relations: vec![rel("authoredBy"), rel("yearOfPublication")],
                query: format!(
                    "SELECT DISTINCT ?answer WHERE {{ ?answer {} {} . ?answer {} ?y . FILTER ( ?y > '{year}' ) }}",
                    iri("authoredBy"),
                    e(&c.iri),
                    iri("yearOfPublication")
                ),
                temporal: true,
                check: proper_subset,
                key: format!("{}|{year}", c.iri),
            }
        }
        "T13" => {
            let (p, q) = loop {
                let (p, q) = (&w.pubs[a_pub(rng)], &w.pubs[a_pub(rng)]);
                if p.year != q.year && (p.year < q.year) == want_true {
                    break (p, q);
                }
            };
            Draft {
                question: format!("Was '{}' published before '{}'?", p.title, q.title),
                entities: vec![ent_pub(p), ent_pub(q)],
                relations: vec![rel("yearOfPublication")],
                query: format!(
                    "ASK {{ {} {y} ?x . {} {y} ?y . FILTER ( ?x < ?y ) }}",
                    e(&p.iri),
                    e(&q.iri),
                    y = iri("yearOfPublication")
                ),
                temporal: true,
                check: any,
                key: format!("{}|{}", p.iri, q.iri),
            }
        }
        other => panic!("unknown template {other}"),
    }
}

fn category(template: &str) -> QueryType {
    match template {
        "T01" | "T02" | "T03" | "T14" => QueryType::SingleFact,
        "T04" => QueryType::MultipleFacts,
        "T05" | "T06" => QueryType::Boolean,
        "T07" | "T15" => QueryType::Count,
        "T08" => QueryType::Negation,
        "T09" => QueryType::DoubleNegation,
        "T10" => QueryType::DoubleIntent,
        "T11" => QueryType::Union,
        "T12" | "T13" => QueryType::SuperlativeComparative,
        other => panic!("unknown template {other}"),
    }
}

const TRAINED: &[&str] = &[
    "T01", "T02", "T03", "T04", "T05", "T06", "T07", "T08", "T09", "T10", "T11", "T12", "T13",
];
const HELD_OUT: &[&str] = &["T14", "T15"];

/// Slot-form query skeletons used to build the untrained policy's prior.
/// Covers the corpus shapes plus near-miss variants so the prior does not
/// single out the gold skeletons.
const PRIMER: &[&str] = &[
    "SELECT DISTINCT ?answer WHERE { E0 R0 ?answer }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 }",
    "SELECT ?answer WHERE { E0 R0 ?answer }",
    "SELECT DISTINCT ?answer WHERE { E0 R0 ?x . ?x R1 ?answer }",
    "SELECT DISTINCT ?answer WHERE { ?x R0 E0 . ?x R1 ?answer }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 . ?answer R1 ?y }",
    "ASK { E0 R0 N0 }",
    "ASK { E0 R0 E1 }",
    "ASK { E1 R0 E0 }",
    "ASK { E0 R0 ?x }",
    "SELECT ( COUNT ( DISTINCT ?answer ) AS ?count ) WHERE { ?answer R0 E0 }",
    "SELECT ( COUNT ( * ) AS ?count ) WHERE { E0 R0 ?answer }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 . FILTER NOT EXISTS { ?answer R0 E1 } }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 . FILTER NOT EXISTS { ?answer R1 ?y } }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 . FILTER NOT EXISTS { ?answer R1 ?y . FILTER ( ?y != N0 ) } }",
    "SELECT DISTINCT ?answer ?y WHERE { E0 R0 ?answer . E0 R1 ?y }",
    "SELECT DISTINCT ?answer WHERE { { ?answer R0 E0 } UNION { ?answer R0 E1 } }",
    "SELECT DISTINCT ?answer WHERE { { E0 R0 ?answer } UNION { E1 R0 ?answer } }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 . ?answer R1 ?y . FILTER ( ?y > N0 ) }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 . ?answer R1 ?y . FILTER ( ?y < N0 ) }",
    "SELECT DISTINCT ?answer WHERE { ?answer R0 E0 . ?answer R1 ?y . FILTER ( ?y = N0 ) }",
    "ASK { E0 R0 ?x . E1 R0 ?y . FILTER ( ?x < ?y ) }",
    "ASK { E0 R0 ?x . E1 R0 ?y . FILTER ( ?x > ?y ) }",
    "<think> </think> SELECT DISTINCT ?answer WHERE { E0 R0 ?answer }",
    "<think> </think> ASK { E0 R0 E1 }",
];

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/micro")));
    std::fs::create_dir_all(&out).expect("create output dir");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let world = build_world(&mut rng);

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut splits: BTreeMap<&str, Vec<QAInstance>> = BTreeMap::new();
    let plan: Vec<(&str, &str, usize)> = TRAINED
        .iter()
        .flat_map(|t| [(*t, "train", TRAIN_PER_TEMPLATE), (*t, "test", TEST_PER_TEMPLATE)])
        .chain(HELD_OUT.iter().map(|t| (*t, "test", HELDOUT_PER_TEMPLATE)))
        .collect();
    for (template, split, count) in plan {
        let mut made = 0;
        let mut attempts = 0;
        while made < count {
            attempts += 1;
            assert!(attempts < 10_000, "cannot fill {template}");
            let d = draft(template, &world, &mut rng, made % 2 == 0);
            // held-out paraphrases share the skeleton of a trained template
            let skeleton = match template {
                "T14" => "T01",
                "T15" => "T07",
                t => t,
            };
            if seen.contains(&(skeleton.to_string(), d.key.clone())) {
                continue;
            }
            let ast = parse(&d.query).unwrap_or_else(|e| panic!("{template}: {e}\n{}", d.query));
            let answer = evaluate(&ast, &world.store).expect("gold query evaluates");
            if !(d.check)(&answer, &world, &d) {
                continue;
            }
            seen.insert((skeleton.to_string(), d.key.clone()));
            let list = splits.entry(split).or_default();
            list.push(QAInstance {
                id: format!("{split}-{:03}", list.len()),
                question: d.question,
                entities: d.entities,
                relations: d.relations,
                gold_query: Some(d.query),
                query_type: category(template),
                template_id: template.to_string(),
                is_temporal: d.temporal,
                is_heldout: HELD_OUT.contains(&template),
                gold_answers: None,
                materialize_error: None,
            });
            made += 1;
        }
    }

    std::fs::write(out.join("store.nt"), world.store.to_ntriples()).expect("write store");
    for (split, list) in &splits {
        std::fs::write(out.join(format!("{split}.jsonl")), dataset_to_string(list)).expect("write split");
    }
    let mut primer = PRIMER.join("\n");
    primer.push('\n');
    std::fs::write(out.join("primer.txt"), primer).expect("write primer");
    eprintln!(
        "wrote {} triples, {} train, {} test to {}",
        world.store.len(),
        splits["train"].len(),
        splits["test"].len(),
        out.display()
    );
}
