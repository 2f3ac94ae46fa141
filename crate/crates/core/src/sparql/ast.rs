//! Syntax tree for the restricted SPARQL dialect plus its canonical serializer.

use std::collections::BTreeSet;
use std::fmt;

/// An RDF term or a query variable.
///
/// Variables keep their leading `?`. Literals store the lexical form only;
/// the original quote style is not part of the term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Iri(String),
    Literal {
        lexical: String,
        datatype: Option<String>,
    },
    Var(String),
}

impl Term {
    pub fn iri(s: impl Into<String>) -> Self {
        Term::Iri(s.into())
    }

    pub fn literal(s: impl Into<String>) -> Self {
        Term::Literal {
            lexical: s.into(),
            datatype: None,
        }
    }

    pub fn var(name: impl Into<String>) -> Self {
        let name = name.into();
        if name.starts_with('?') {
            Term::Var(name)
        } else {
            Term::Var(format!("?{name}"))
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    /// The lexical form used in answer sets: IRI text without brackets,
    /// literal lexical form without quotes or datatype.
    pub fn lexical_form(&self) -> &str {
        match self {
            Term::Iri(s) | Term::Var(s) => s,
            Term::Literal { lexical, .. } => lexical,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(s) => write!(f, "<{s}>"),
            Term::Var(v) => f.write_str(v),
            Term::Literal { lexical, datatype } => {
                write!(f, "'")?;
                for c in lexical.chars() {
                    match c {
                        '\'' => f.write_str("\\'")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        '\r' => f.write_str("\\r")?,
                        c => write!(f, "{c}")?,
                    }
                }
                write!(f, "'")?;
                if let Some(dt) = datatype {
                    write!(f, "^^<{dt}>")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl TriplePattern {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }

    pub fn terms(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Gt => ">",
            CompareOp::Le => "<=",
            CompareOp::Ge => ">=",
        }
    }

    pub const ALL: [CompareOp; 6] = [
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Lt,
        CompareOp::Gt,
        CompareOp::Le,
        CompareOp::Ge,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Filter {
    Compare {
        op: CompareOp,
        left: Term,
        right: Term,
    },
    NotExists(GroupPattern),
}

/// One element of a `{ ... }` group.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Element {
    Triple(TriplePattern),
    Union(GroupPattern, GroupPattern),
    Group(GroupPattern),
    Filter(Filter),
}

/// A brace-delimited group: the conjunction of its non-filter elements,
/// restricted by all of its filters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct GroupPattern {
    pub elements: Vec<Element>,
}

impl GroupPattern {
    pub fn new(elements: Vec<Element>) -> Self {
        Self { elements }
    }

    pub fn triples(triples: impl IntoIterator<Item = TriplePattern>) -> Self {
        Self {
            elements: triples.into_iter().map(Element::Triple).collect(),
        }
    }

    /// Variables that can be bound by this group (filters bind nothing).
    pub fn bindable_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_bindable(&mut out);
        out
    }

    fn collect_bindable(&self, out: &mut BTreeSet<String>) {
        for el in &self.elements {
            match el {
                Element::Triple(t) => {
                    for term in t.terms() {
                        if let Term::Var(v) = term {
                            out.insert(v.clone());
                        }
                    }
                }
                Element::Union(l, r) => {
                    l.collect_bindable(out);
                    r.collect_bindable(out);
                }
                Element::Group(g) => g.collect_bindable(out),
                Element::Filter(_) => {}
            }
        }
    }

    /// Nesting depth: a flat group of triples has depth 1.
    pub fn depth(&self) -> usize {
        1 + self
            .elements
            .iter()
            .map(|el| match el {
                Element::Triple(_) => 0,
                Element::Union(l, r) => l.depth().max(r.depth()),
                Element::Group(g) => g.depth(),
                Element::Filter(Filter::NotExists(g)) => g.depth(),
                Element::Filter(Filter::Compare { .. }) => 0,
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryForm {
    Select,
    Ask,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CountTarget {
    Star,
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Projection {
    /// Empty for ASK.
    Vars(Vec<String>),
    Count {
        distinct: bool,
        target: CountTarget,
        alias: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryAst {
    pub form: QueryForm,
    pub distinct: bool,
    pub projection: Projection,
    pub where_clause: GroupPattern,
}

impl QueryAst {
    pub fn ask(where_clause: GroupPattern) -> Self {
        Self {
            form: QueryForm::Ask,
            distinct: false,
            projection: Projection::Vars(Vec::new()),
            where_clause,
        }
    }

    pub fn select(distinct: bool, vars: Vec<String>, where_clause: GroupPattern) -> Self {
        Self {
            form: QueryForm::Select,
            distinct,
            projection: Projection::Vars(vars),
            where_clause,
        }
    }

    /// Canonical text form. `parse(ast.to_string()) == ast` for every
    /// well-formed tree.
    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

fn write_group(f: &mut fmt::Formatter<'_>, g: &GroupPattern) -> fmt::Result {
    f.write_str("{")?;
    for el in &g.elements {
        f.write_str(" ")?;
        match el {
            Element::Triple(t) => write!(f, "{} {} {} .", t.subject, t.predicate, t.object)?,
            Element::Union(l, r) => {
                write_group(f, l)?;
                f.write_str(" UNION ")?;
                write_group(f, r)?;
            }
            Element::Group(inner) => write_group(f, inner)?,
            Element::Filter(Filter::Compare { op, left, right }) => {
                write!(f, "FILTER ( {} {} {} )", left, op.symbol(), right)?
            }
            Element::Filter(Filter::NotExists(inner)) => {
                f.write_str("FILTER NOT EXISTS ")?;
                write_group(f, inner)?;
            }
        }
    }
    f.write_str(" }")
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.form {
            QueryForm::Ask => f.write_str("ASK ")?,
            QueryForm::Select => {
                f.write_str("SELECT ")?;
                if self.distinct {
                    f.write_str("DISTINCT ")?;
                }
                match &self.projection {
                    Projection::Vars(vars) => {
                        for v in vars {
                            write!(f, "{v} ")?;
                        }
                    }
                    Projection::Count {
                        distinct,
                        target,
                        alias,
                    } => {
                        f.write_str("( COUNT ( ")?;
                        if *distinct {
                            f.write_str("DISTINCT ")?;
                        }
                        match target {
                            CountTarget::Star => f.write_str("*")?,
                            CountTarget::Var(v) => f.write_str(v)?,
                        }
                        f.write_str(" )")?;
                        if let Some(a) = alias {
                            write!(f, " AS {a}")?;
                        }
                        f.write_str(" ) ")?;
                    }
                }
                f.write_str("WHERE ")?;
            }
        }
        write_group(f, &self.where_clause)
    }
}
