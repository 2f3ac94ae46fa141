//! Immutable in-memory triple store with per-position indexes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::ast::Term;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid triple: {0}")]
    Invalid(String),
}

/// A ground triple. Subject and predicate are IRIs; the object is an IRI
/// or a literal. Variables never appear in a stored triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    subject: Term,
    predicate: Term,
    object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Result<Self, StoreError> {
        if !matches!(subject, Term::Iri(_)) {
            return Err(StoreError::Invalid(format!("subject {subject} is not an IRI")));
        }
        if !matches!(predicate, Term::Iri(_)) {
            return Err(StoreError::Invalid(format!(
                "predicate {predicate} is not an IRI"
            )));
        }
        if object.is_var() {
            return Err(StoreError::Invalid(format!("object {object} is a variable")));
        }
        Ok(Self {
            subject,
            predicate,
            object,
        })
    }

    /// Convenience for fixtures: IRI subject/predicate, IRI object.
    pub fn iris(s: &str, p: &str, o: &str) -> Self {
        Self::new(Term::iri(s), Term::iri(p), Term::iri(o)).expect("IRI triple")
    }

    pub fn subject(&self) -> &Term {
        &self.subject
    }

    pub fn predicate(&self) -> &Term {
        &self.predicate
    }

    pub fn object(&self) -> &Term {
        &self.object
    }

    pub fn position(&self, pos: usize) -> &Term {
        match pos {
            0 => &self.subject,
            1 => &self.predicate,
            _ => &self.object,
        }
    }
}

fn write_nt_term(f: &mut fmt::Formatter<'_>, t: &Term) -> fmt::Result {
    match t {
        Term::Iri(i) => write!(f, "<{i}>"),
        Term::Literal { lexical, datatype } => {
            f.write_str("\"")?;
            for c in lexical.chars() {
                match c {
                    '"' => f.write_str("\\\"")?,
                    '\\' => f.write_str("\\\\")?,
                    '\n' => f.write_str("\\n")?,
                    '\r' => f.write_str("\\r")?,
                    '\t' => f.write_str("\\t")?,
                    c => write!(f, "{c}")?,
                }
            }
            f.write_str("\"")?;
            if let Some(dt) = datatype {
                write!(f, "^^<{dt}>")?;
            }
            Ok(())
        }
        Term::Var(v) => f.write_str(v),
    }
}

impl fmt::Display for Triple {
    /// N-Triples line without the trailing newline.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_nt_term(f, &self.subject)?;
        f.write_str(" ")?;
        write_nt_term(f, &self.predicate)?;
        f.write_str(" ")?;
        write_nt_term(f, &self.object)?;
        f.write_str(" .")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    triples: Vec<Triple>,
    by_position: [HashMap<Term, Vec<usize>>; 3],
}

impl Store {
    pub fn new(triples: impl IntoIterator<Item = Triple>) -> Self {
        let set: BTreeSet<Triple> = triples.into_iter().collect();
        let triples: Vec<Triple> = set.into_iter().collect();
        let mut by_position: [HashMap<Term, Vec<usize>>; 3] = Default::default();
        for (i, t) in triples.iter().enumerate() {
            for (pos, index) in by_position.iter_mut().enumerate() {
                index.entry(t.position(pos).clone()).or_default().push(i);
            }
        }
        Self {
            triples,
            by_position,
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    /// Distinct terms occurring at a position (0 subject, 1 predicate, 2 object).
    pub fn terms_at(&self, pos: usize) -> impl Iterator<Item = &Term> {
        self.by_position[pos].keys()
    }

    pub fn distinct_terms_at(&self, pos: usize) -> usize {
        self.by_position[pos].len()
    }

    /// Triples matching the given constants (`None` = wildcard).
    pub fn matching<'a>(
        &'a self,
        pattern: [Option<&'a Term>; 3],
    ) -> Box<dyn Iterator<Item = &'a Triple> + 'a> {
        let mut best: Option<&Vec<usize>> = None;
        for (pos, constant) in pattern.iter().enumerate() {
            if let Some(c) = constant {
                match self.by_position[pos].get(*c) {
                    None => return Box::new(std::iter::empty()),
                    Some(ids) => {
                        if best.is_none_or(|b| ids.len() < b.len()) {
                            best = Some(ids);
                        }
                    }
                }
            }
        }
        let check = move |t: &&Triple| {
            pattern
                .iter()
                .enumerate()
                .all(|(pos, c)| c.is_none_or(|c| t.position(pos) == c))
        };
        match best {
            Some(ids) => Box::new(ids.iter().map(|&i| &self.triples[i]).filter(check)),
            None => Box::new(self.triples.iter()),
        }
    }

    pub fn to_ntriples(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&t.to_string());
            out.push('\n');
        }
        out
    }
}

impl FromIterator<Triple> for Store {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Store::new(iter)
    }
}

struct LineCursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> LineCursor<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.s[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn iri(&mut self) -> Result<String, String> {
        if !self.rest().starts_with('<') {
            return Err(format!("expected '<' at column {}", self.pos + 1));
        }
        let end = self.rest()[1..]
            .find('>')
            .ok_or_else(|| format!("unterminated IRI at column {}", self.pos + 1))?;
        let iri = &self.rest()[1..1 + end];
        if iri.is_empty() || iri.contains(char::is_whitespace) {
            return Err(format!("invalid IRI at column {}", self.pos + 1));
        }
        self.pos += end + 2;
        Ok(iri.to_string())
    }

    fn literal(&mut self) -> Result<Term, String> {
        let start = self.pos;
        let mut chars = self.rest().char_indices().skip(1);
        let mut lexical = String::new();
        let close = loop {
            let Some((i, c)) = chars.next() else {
                return Err(format!("unterminated literal at column {}", start + 1));
            };
            match c {
                '"' => break i,
                '\\' => {
                    let (_, e) = chars
                        .next()
                        .ok_or_else(|| "dangling escape".to_string())?;
                    match e {
                        'n' => lexical.push('\n'),
                        't' => lexical.push('\t'),
                        'r' => lexical.push('\r'),
                        'u' => {
                            let hex: String = (0..4).filter_map(|_| chars.next().map(|x| x.1)).collect();
                            let code = u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or_else(|| format!("bad \\u escape '{hex}'"))?;
                            lexical.push(code);
                        }
                        other => lexical.push(other),
                    }
                }
                c => lexical.push(c),
            }
        };
        self.pos += close + 1;
        let mut datatype = None;
        if self.rest().starts_with("^^") {
            self.pos += 2;
            datatype = Some(self.iri()?);
        } else if self.rest().starts_with('@') {
            // language tags are not modelled; the tag is dropped
            let len = self.rest()[1..]
                .find(|c: char| !(c.is_alphanumeric() || c == '-'))
                .unwrap_or(self.rest().len() - 1);
            self.pos += 1 + len;
        }
        Ok(Term::Literal { lexical, datatype })
    }
}

/// Parse one N-Triples line. Returns `Ok(None)` for blank and comment lines.
pub fn parse_ntriples_line(line: &str) -> Result<Option<Triple>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut c = LineCursor { s: trimmed, pos: 0 };
    let s = c.iri()?;
    c.skip_ws();
    let p = c.iri()?;
    c.skip_ws();
    let o = if c.rest().starts_with('"') {
        c.literal()?
    } else {
        Term::Iri(c.iri()?)
    };
    c.skip_ws();
    if c.rest() != "." {
        return Err(format!("expected terminating '.' at column {}", c.pos + 1));
    }
    Triple::new(Term::Iri(s), Term::Iri(p), o)
        .map(Some)
        .map_err(|e| e.to_string())
}

pub fn parse_ntriples(text: &str) -> Result<Store, StoreError> {
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_ntriples_line(line) {
            Ok(Some(t)) => triples.push(t),
            Ok(None) => {}
            Err(message) => return Err(StoreError::Malformed { line: i + 1, message }),
        }
    }
    Ok(Store::new(triples))
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<Store, StoreError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ntriples(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_distinct_lines() {
        let s = parse_ntriples("<a> <p> <b> .\n<c> <p> <b> .\n<a> <q> \"x\" .\n").unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn duplicates_collapse() {
        let s = parse_ntriples("<a> <p> <b> .\n<a> <p> <b> .\n").unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn datatype_retained() {
        let s = parse_ntriples(
            "<a> <y> \"2020\"^^<http://www.w3.org/2001/XMLSchema#gYear> .\n",
        )
        .unwrap();
        assert_eq!(
            s.triples()[0].object(),
            &Term::Literal {
                lexical: "2020".into(),
                datatype: Some("http://www.w3.org/2001/XMLSchema#gYear".into())
            }
        );
    }

    #[test]
    fn malformed_line_is_addressed() {
        let e = parse_ntriples("<a> <p> <b> .\n\n<a> <p> <b>\n").unwrap_err();
        assert!(matches!(e, StoreError::Malformed { line: 3, .. }), "{e}");
        let e = parse_ntriples("\"lit\" <p> <b> .").unwrap_err();
        assert!(matches!(e, StoreError::Malformed { line: 1, .. }));
    }

    #[test]
    fn ntriples_round_trip() {
        let text = "<a> <p> \"say \\\"hi\\\"\\n\" .\n<a> <p> <b> .\n";
        let s = parse_ntriples(text).unwrap();
        let again = parse_ntriples(&s.to_ntriples()).unwrap();
        assert_eq!(s.triples(), again.triples());
    }

    #[test]
    fn index_lookup() {
        let s = Store::new([
            Triple::iris("a", "p", "b"),
            Triple::iris("c", "p", "b"),
            Triple::iris("a", "q", "d"),
        ]);
        let p = Term::iri("p");
        assert_eq!(s.matching([None, Some(&p), None]).count(), 2);
        let a = Term::iri("a");
        assert_eq!(s.matching([Some(&a), Some(&p), None]).count(), 1);
        let z = Term::iri("z");
        assert_eq!(s.matching([Some(&z), None, None]).count(), 0);
    }
}
