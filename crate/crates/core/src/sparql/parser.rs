//! Recursive-descent parser for the restricted dialect.
//!
//! Accepted forms:
//!
//! ```text
//! SELECT [DISTINCT] ?v1 ?v2 ... WHERE { ... }
//! SELECT [DISTINCT] ( COUNT ( [DISTINCT] ?v | * ) [AS ?c] ) WHERE { ... }
//! ASK [WHERE] { ... }
//! ```
//!
//! Group elements are triple patterns, nested groups, `UNION`,
//! `FILTER ( a op b )` and `FILTER NOT EXISTS { ... }`. IRIs must be written
//! in full; prefixed names and `PREFIX` declarations are rejected.

use thiserror::Error;

use super::ast::{
    CompareOp, CountTarget, Element, Filter, GroupPattern, Projection, QueryAst, QueryForm, Term,
    TriplePattern,
};

pub const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Iri(String),
    Var(String),
    Literal {
        lexical: String,
        datatype: Option<String>,
    },
    Integer(String),
    Word(String),
    Prefixed(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Dot,
    Star,
    Op(CompareOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Iri(s) => format!("IRI <{s}>"),
            Tok::Var(v) => format!("variable {v}"),
            Tok::Literal { lexical, .. } => format!("literal '{lexical}'"),
            Tok::Integer(i) => format!("number {i}"),
            Tok::Word(w) => format!("'{w}'"),
            Tok::Prefixed(p) => format!("prefixed name '{p}'"),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Dot => "'.'".into(),
            Tok::Star => "'*'".into(),
            Tok::Op(op) => format!("'{}'", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn err(offset: usize, expected: impl Into<String>, found: impl Into<String>) -> ParseError {
    ParseError {
        offset,
        expected: expected.into(),
        found: found.into(),
    }
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek_char(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with('#') {
                // comment to end of line
                let end = trimmed.find('\n').map(|i| i + 1).unwrap_or(trimmed.len());
                self.pos += end;
            } else {
                break;
            }
        }
    }

    /// `<` opens an IRI only when a `>` follows before any whitespace or
    /// character that IRIs cannot contain; otherwise it is a comparison.
    fn iri_end(&self) -> Option<usize> {
        let rest = &self.rest()[1..];
        for (i, c) in rest.char_indices() {
            match c {
                '>' => return Some(i),
                c if c.is_whitespace() => return None,
                '<' | '"' | '{' | '}' | '|' | '^' | '`' | '\\' => return None,
                _ => {}
            }
        }
        None
    }

    fn next(&mut self) -> Result<(usize, Tok), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.peek_char() else {
            return Ok((start, Tok::Eof));
        };
        let tok = match c {
            '{' => {
                self.pos += 1;
                Tok::LBrace
            }
            '}' => {
                self.pos += 1;
                Tok::RBrace
            }
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            '.' => {
                self.pos += 1;
                Tok::Dot
            }
            '*' => {
                self.pos += 1;
                Tok::Star
            }
            '=' => {
                self.pos += 1;
                Tok::Op(CompareOp::Eq)
            }
            '!' => {
                if self.rest().starts_with("!=") {
                    self.pos += 2;
                    Tok::Op(CompareOp::Ne)
                } else {
                    return Err(err(start, "'!='", "'!'"));
                }
            }
            '>' => {
                if self.rest().starts_with(">=") {
                    self.pos += 2;
                    Tok::Op(CompareOp::Ge)
                } else {
                    self.pos += 1;
                    Tok::Op(CompareOp::Gt)
                }
            }
            '<' => {
                if let Some(end) = self.iri_end() {
                    let iri = self.rest()[1..1 + end].to_string();
                    self.pos += end + 2;
                    if iri.is_empty() {
                        return Err(err(start, "non-empty IRI", "'<>'"));
                    }
                    Tok::Iri(iri)
                } else if self.rest().starts_with("<=") {
                    self.pos += 2;
                    Tok::Op(CompareOp::Le)
                } else {
                    self.pos += 1;
                    Tok::Op(CompareOp::Lt)
                }
            }
            '?' => {
                let name_len = self.rest()[1..]
                    .find(|c: char| !(c.is_alphanumeric() || c == '_'))
                    .unwrap_or(self.rest().len() - 1);
                if name_len == 0 {
                    return Err(err(start, "variable name", "'?'"));
                }
                let v = self.rest()[..1 + name_len].to_string();
                self.pos += 1 + name_len;
                Tok::Var(v)
            }
            '\'' | '"' => self.lex_literal(c)?,
            c if c.is_ascii_digit() || c == '-' || c == '+' => {
                let body = &self.rest()[1..];
                let len = body
                    .find(|c: char| !c.is_ascii_digit())
                    .unwrap_or(body.len());
                if len == 0 && !c.is_ascii_digit() {
                    return Err(err(start, "number", format!("'{c}'")));
                }
                let text = self.rest()[..1 + len].to_string();
                self.pos += 1 + len;
                Tok::Integer(text)
            }
            c if c.is_alphabetic() || c == '_' => {
                let len = self
                    .rest()
                    .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-' || c == ':'))
                    .unwrap_or(self.rest().len());
                let word = self.rest()[..len].to_string();
                self.pos += len;
                if word.contains(':') {
                    // a bare prefix like `dblp:` followed by more name chars
                    let extra = self
                        .rest()
                        .find(|c: char| c.is_whitespace() || "{}().;,".contains(c))
                        .unwrap_or(self.rest().len());
                    self.pos += extra;
                    Tok::Prefixed(word)
                } else {
                    Tok::Word(word)
                }
            }
            ':' => {
                let len = self
                    .rest()
                    .find(|c: char| c.is_whitespace() || "{}().;,".contains(c))
                    .unwrap_or(self.rest().len());
                let word = self.rest()[..len].to_string();
                self.pos += len;
                Tok::Prefixed(word)
            }
            other => return Err(err(start, "a SPARQL token", format!("'{other}'"))),
        };
        Ok((start, tok))
    }

    fn lex_literal(&mut self, quote: char) -> Result<Tok, ParseError> {
        let start = self.pos;
        self.pos += 1;
        let mut lexical = String::new();
        loop {
            let Some(c) = self.peek_char() else {
                return Err(err(start, format!("closing {quote}"), "end of input"));
            };
            self.pos += c.len_utf8();
            if c == quote {
                break;
            }
            if c == '\\' {
                let Some(e) = self.peek_char() else {
                    return Err(err(self.pos, "escape character", "end of input"));
                };
                self.pos += e.len_utf8();
                lexical.push(match e {
                    'n' => '\n',
                    't' => '\t',
                    'r' => '\r',
                    other => other,
                });
            } else if c == '\n' {
                return Err(err(self.pos - 1, format!("closing {quote}"), "newline"));
            } else {
                lexical.push(c);
            }
        }
        let mut datatype = None;
        if self.rest().starts_with("^^") {
            self.pos += 2;
            if !self.rest().starts_with('<') {
                return Err(err(self.pos, "datatype IRI", "something else"));
            }
            let Some(end) = self.iri_end() else {
                return Err(err(self.pos, "datatype IRI", "unterminated IRI"));
            };
            datatype = Some(self.rest()[1..1 + end].to_string());
            self.pos += end + 2;
        } else if self.rest().starts_with('@') {
            return Err(err(self.pos, "end of literal", "language tag"));
        }
        Ok(Tok::Literal { lexical, datatype })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    cur: (usize, Tok),
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let cur = lexer.next()?;
        Ok(Self { lexer, cur })
    }

    fn bump(&mut self) -> Result<(usize, Tok), ParseError> {
        let next = self.lexer.next()?;
        Ok(std::mem::replace(&mut self.cur, next))
    }

    fn offset(&self) -> usize {
        self.cur.0
    }

    fn unexpected<T>(&self, expected: &str) -> Result<T, ParseError> {
        if let Tok::Prefixed(p) = &self.cur.1 {
            return Err(err(
                self.offset(),
                "a full <IRI> (prefixed names are not allowed)",
                format!("prefixed name '{p}'"),
            ));
        }
        Err(err(self.offset(), expected, self.cur.1.describe()))
    }

    fn is_word(&self, kw: &str) -> bool {
        matches!(&self.cur.1, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_word(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_word(kw) {
            self.bump()?;
            Ok(())
        } else {
            self.unexpected(kw)
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.cur.1 == tok {
            self.bump()?;
            Ok(())
        } else {
            self.unexpected(what)
        }
    }

    fn query(&mut self) -> Result<QueryAst, ParseError> {
        if self.is_word("PREFIX") || self.is_word("BASE") {
            return Err(err(
                self.offset(),
                "SELECT or ASK (PREFIX declarations are not allowed)",
                self.cur.1.describe(),
            ));
        }
        let ast = if self.is_word("ASK") {
            self.bump()?;
            if self.is_word("WHERE") {
                self.bump()?;
            }
            let where_clause = self.group()?;
            QueryAst::ask(where_clause)
        } else if self.is_word("SELECT") {
            self.bump()?;
            let distinct = if self.is_word("DISTINCT") {
                self.bump()?;
                true
            } else {
                false
            };
            let proj_offset = self.offset();
            let projection = if self.cur.1 == Tok::LParen {
                self.count_projection()?
            } else {
                let mut vars = Vec::new();
                while let Tok::Var(v) = &self.cur.1 {
                    vars.push(v.clone());
                    self.bump()?;
                }
                if vars.is_empty() {
                    return self.unexpected("a projected variable or ( COUNT ... )");
                }
                Projection::Vars(vars)
            };
            self.expect_word("WHERE")?;
            let where_clause = self.group()?;
            let bindable = where_clause.bindable_vars();
            let needed: Vec<&String> = match &projection {
                Projection::Vars(vs) => vs.iter().collect(),
                Projection::Count {
                    target: CountTarget::Var(v),
                    ..
                } => vec![v],
                Projection::Count { .. } => vec![],
            };
            for v in needed {
                if !bindable.contains(v) {
                    return Err(err(
                        proj_offset,
                        format!("projected variable {v} to occur in WHERE"),
                        "a variable not bound by any pattern",
                    ));
                }
            }
            QueryAst {
                form: QueryForm::Select,
                distinct,
                projection,
                where_clause,
            }
        } else {
            return self.unexpected("SELECT or ASK");
        };
        if self.cur.1 != Tok::Eof {
            return self.unexpected("end of query");
        }
        Ok(ast)
    }

    fn count_projection(&mut self) -> Result<Projection, ParseError> {
        self.expect(Tok::LParen, "'('")?;
        self.expect_word("COUNT")?;
        self.expect(Tok::LParen, "'(' after COUNT")?;
        let distinct = if self.is_word("DISTINCT") {
            self.bump()?;
            true
        } else {
            false
        };
        let target = match self.bump()? {
            (_, Tok::Star) => CountTarget::Star,
            (_, Tok::Var(v)) => CountTarget::Var(v),
            (off, other) => {
                if let Tok::Prefixed(p) = other {
                    return Err(err(off, "a full <IRI>", format!("prefixed name '{p}'")));
                }
                return Err(err(off, "'*' or a variable", other.describe()));
            }
        };
        self.expect(Tok::RParen, "')'")?;
        let alias = if self.is_word("AS") {
            self.bump()?;
            match self.bump()? {
                (_, Tok::Var(v)) => Some(v),
                (off, other) => return Err(err(off, "alias variable", other.describe())),
            }
        } else {
            None
        };
        self.expect(Tok::RParen, "')'")?;
        Ok(Projection::Count {
            distinct,
            target,
            alias,
        })
    }

    fn group(&mut self) -> Result<GroupPattern, ParseError> {
        self.expect(Tok::LBrace, "'{'")?;
        let mut elements = Vec::new();
        loop {
            match &self.cur.1 {
                Tok::RBrace => {
                    self.bump()?;
                    break;
                }
                Tok::Dot => {
                    // stray separators between elements are tolerated
                    self.bump()?;
                }
                Tok::LBrace => {
                    let first = self.group()?;
                    if self.is_word("UNION") {
                        self.bump()?;
                        let mut el = Element::Union(first, self.group()?);
                        while self.is_word("UNION") {
                            self.bump()?;
                            let right = self.group()?;
                            el = Element::Union(GroupPattern::new(vec![el]), right);
                        }
                        elements.push(el);
                    } else {
                        elements.push(Element::Group(first));
                    }
                }
                Tok::Word(w) if w.eq_ignore_ascii_case("FILTER") => {
                    self.bump()?;
                    elements.push(Element::Filter(self.filter()?));
                }
                Tok::Eof => return self.unexpected("'}'"),
                _ => {
                    let t = self.triple()?;
                    elements.push(Element::Triple(t));
                }
            }
        }
        Ok(GroupPattern { elements })
    }

    fn filter(&mut self) -> Result<Filter, ParseError> {
        if self.is_word("NOT") {
            self.bump()?;
            self.expect_word("EXISTS")?;
            return Ok(Filter::NotExists(self.group()?));
        }
        self.expect(Tok::LParen, "'(' or NOT EXISTS after FILTER")?;
        let left = self.operand()?;
        let op = match self.bump()? {
            (_, Tok::Op(op)) => op,
            (off, other) => return Err(err(off, "comparison operator", other.describe())),
        };
        let right = self.operand()?;
        self.expect(Tok::RParen, "')'")?;
        Ok(Filter::Compare { op, left, right })
    }

    fn operand(&mut self) -> Result<Term, ParseError> {
        match &self.cur.1 {
            Tok::Var(_) | Tok::Iri(_) | Tok::Literal { .. } | Tok::Integer(_) => self.term(),
            _ => self.unexpected("variable, IRI or literal"),
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let (off, tok) = self.bump()?;
        Ok(match tok {
            Tok::Var(v) => Term::Var(v),
            Tok::Iri(i) => Term::Iri(i),
            Tok::Literal { lexical, datatype } => Term::Literal { lexical, datatype },
            Tok::Integer(i) => Term::Literal {
                lexical: i,
                datatype: Some(XSD_INTEGER.to_string()),
            },
            Tok::Prefixed(p) => {
                return Err(err(
                    off,
                    "a full <IRI> (prefixed names are not allowed)",
                    format!("prefixed name '{p}'"),
                ))
            }
            other => return Err(err(off, "a term", other.describe())),
        })
    }

    fn triple(&mut self) -> Result<TriplePattern, ParseError> {
        let s_off = self.offset();
        let subject = self.term()?;
        if matches!(subject, Term::Literal { .. }) {
            return Err(err(s_off, "subject variable or IRI", "literal"));
        }
        let p_off = self.offset();
        if self.is_word("a") {
            return Err(err(p_off, "a full predicate IRI", "'a'"));
        }
        let predicate = self.term()?;
        if matches!(predicate, Term::Literal { .. }) {
            return Err(err(p_off, "predicate variable or IRI", "literal"));
        }
        let object = self.term()?;
        if self.cur.1 == Tok::Dot {
            self.bump()?;
        }
        Ok(TriplePattern {
            subject,
            predicate,
            object,
        })
    }
}

pub fn parse(text: &str) -> Result<QueryAst, ParseError> {
    Parser::new(text)?.query()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_ask() {
        let ast = parse("ASK { <a> <p> <b> }").unwrap();
        assert_eq!(ast.form, QueryForm::Ask);
        assert_eq!(ast.projection, Projection::Vars(vec![]));
        assert_eq!(
            ast.where_clause.elements,
            vec![Element::Triple(TriplePattern::new(
                Term::iri("a"),
                Term::iri("p"),
                Term::iri("b")
            ))]
        );
    }

    #[test]
    fn select_distinct_union() {
        let ast = parse("SELECT DISTINCT ?x WHERE { { ?x <p> <b> } UNION { ?x <q> <b> } }").unwrap();
        assert_eq!(ast.form, QueryForm::Select);
        assert!(ast.distinct);
        assert_eq!(ast.projection, Projection::Vars(vec!["?x".into()]));
        assert!(matches!(ast.where_clause.elements[0], Element::Union(_, _)));
    }

    #[test]
    fn prefixed_names_rejected() {
        let e = parse("SELECT ?x WHERE { ?x dblp:title ?t }").unwrap_err();
        assert_eq!(e.offset, 21);
        assert!(e.expected.contains("prefixed"), "{e}");
        let e = parse("PREFIX dblp: <https://dblp.org/rdf/schema#> SELECT ?x WHERE { ?x <p> ?t }")
            .unwrap_err();
        assert_eq!(e.offset, 0);
    }

    #[test]
    fn malformed_keyword() {
        let e = parse("SELEC ?x WHERE { ?x <p> <b> }").unwrap_err();
        assert_eq!(e.offset, 0);
        assert_eq!(e.expected, "SELECT or ASK");
    }

    #[test]
    fn count_forms() {
        let ast = parse("SELECT (COUNT(*) AS ?c) WHERE { ?x <p> <b> }").unwrap();
        assert_eq!(
            ast.projection,
            Projection::Count {
                distinct: false,
                target: CountTarget::Star,
                alias: Some("?c".into())
            }
        );
        let ast = parse("SELECT (COUNT(DISTINCT ?x) AS ?c) WHERE { ?x <p> <b> }").unwrap();
        assert!(matches!(ast.projection, Projection::Count { distinct: true, .. }));
    }

    #[test]
    fn filters_and_comparisons() {
        let ast = parse(
            "SELECT DISTINCT ?x WHERE { ?x <y> ?yr FILTER(?yr > '2015') FILTER NOT EXISTS { ?x <v> <w> } }",
        )
        .unwrap();
        let els = &ast.where_clause.elements;
        assert_eq!(els.len(), 3);
        assert_eq!(
            els[1],
            Element::Filter(Filter::Compare {
                op: CompareOp::Gt,
                left: Term::var("yr"),
                right: Term::literal("2015"),
            })
        );
        assert!(matches!(els[2], Element::Filter(Filter::NotExists(_))));
        // `<` followed by a space is a comparison, not an IRI
        let ast = parse("ASK { ?a <p> ?b FILTER ( ?a < ?b ) }").unwrap();
        assert!(matches!(
            ast.where_clause.elements[1],
            Element::Filter(Filter::Compare { op: CompareOp::Lt, .. })
        ));
        let ast = parse("ASK { ?a <p> ?b FILTER(?b<=2) }").unwrap();
        assert!(matches!(
            ast.where_clause.elements[1],
            Element::Filter(Filter::Compare { op: CompareOp::Le, .. })
        ));
    }

    #[test]
    fn literal_quote_styles_are_equal() {
        let a = parse("ASK { ?x <p> 'abc' }").unwrap();
        let b = parse("ASK { ?x <p> \"abc\" }").unwrap();
        assert_eq!(a, b);
        let c = parse("ASK { ?x <p> 'abc'^^<http://t> }").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unbound_projection_rejected() {
        let e = parse("SELECT ?y WHERE { ?x <p> <b> }").unwrap_err();
        assert!(e.expected.contains("?y"));
    }

    #[test]
    fn trailing_modifiers_rejected() {
        assert!(parse("SELECT ?x WHERE { ?x <p> <b> } LIMIT 1").is_err());
        assert!(parse("SELECT ?x WHERE { ?x <p> <b> } ORDER BY ?x").is_err());
    }

    #[test]
    fn union_chain_is_left_associative() {
        let ast = parse("ASK { { <a> <p> ?x } UNION { <b> <p> ?x } UNION { <c> <p> ?x } }").unwrap();
        let Element::Union(left, right) = &ast.where_clause.elements[0] else {
            panic!("expected union");
        };
        assert!(matches!(left.elements[0], Element::Union(_, _)));
        assert_eq!(right.elements.len(), 1);
        assert_eq!(parse(&ast.serialize()).unwrap(), ast);
    }
}
