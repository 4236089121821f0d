//! Text format of filter lists: lexer, parser, serializer.
//!
//! The format is line-oriented. `#` starts a comment, blank lines are
//! ignored, and every other line is either a set declaration or a rule:
//!
//! ```text
//! set @name: literal, literal, ...
//! spatial <id> [from "<origin>"]: atom AND atom AND ...
//! geo     <id> [from "<origin>"]: atom AND ...
//! temporal <id> [from "<origin>"]: key=cookie watch=<attribute>
//! ```
//!
//! Atoms: `attr == lit`, `attr != lit`, `attr < n`, `attr > n`,
//! `attr BETWEEN lo hi`, `attr IN @set`, `attr NOT IN @set`,
//! `attr ABSENT`, `attr PRESENT`, `offsets_disjoint(attr, attr)`.
//! Literals: `"quoted string"` (with `\"` and `\\` escapes), numbers,
//! and `WxH` resolutions. Encoding is UTF-8.
//!
//! Errors carry the 1-based line and column plus the token set that would
//! have been accepted.

use std::collections::BTreeMap;

use crate::model::AttributeRegistry;

use super::{
    Atom, FilterRule, Literal, Predicate, RuleBody, RuleError, RuleKind, RuleSet, TemporalKey,
    TemporalSpec,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    SetRef(String),
    Str(String),
    Num(f64),
    Res(u32, u32),
    Colon,
    Comma,
    LParen,
    RParen,
    EqEq,
    NotEq,
    Lt,
    Gt,
    Assign,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("{s:?}"),
            Tok::SetRef(s) => format!("@{s}"),
            Tok::Str(_) => "string".into(),
            Tok::Num(n) => super::format_number(*n),
            Tok::Res(w, h) => format!("{w}x{h}"),
            Tok::Colon => "\":\"".into(),
            Tok::Comma => "\",\"".into(),
            Tok::LParen => "\"(\"".into(),
            Tok::RParen => "\")\"".into(),
            Tok::EqEq => "\"==\"".into(),
            Tok::NotEq => "\"!=\"".into(),
            Tok::Lt => "\"<\"".into(),
            Tok::Gt => "\">\"".into(),
            Tok::Assign => "\"=\"".into(),
        }
    }
}

struct Spanned {
    tok: Tok,
    col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-'
}

fn lex_line(line: &str, line_no: usize) -> Result<Vec<Spanned>, RuleError> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let syntax = |col: usize, expected: &str, found: String| RuleError::Syntax {
        line: line_no,
        column: col,
        expected: vec![expected.to_string()],
        found,
    };
    while i < chars.len() {
        let col = i + 1;
        let c = chars[i];
        match c {
            ' ' | '\t' => {
                i += 1;
            }
            '#' => break,
            ':' => {
                out.push(Spanned { tok: Tok::Colon, col });
                i += 1;
            }
            ',' => {
                out.push(Spanned { tok: Tok::Comma, col });
                i += 1;
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, col });
                i += 1;
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, col });
                i += 1;
            }
            '<' => {
                out.push(Spanned { tok: Tok::Lt, col });
                i += 1;
            }
            '>' => {
                out.push(Spanned { tok: Tok::Gt, col });
                i += 1;
            }
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(Spanned { tok: Tok::EqEq, col });
                    i += 2;
                } else {
                    out.push(Spanned { tok: Tok::Assign, col });
                    i += 1;
                }
            }
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(Spanned { tok: Tok::NotEq, col });
                    i += 2;
                } else {
                    return Err(syntax(col, "\"!=\"", "\"!\"".into()));
                }
            }
            '@' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && is_ident_continue(chars[j]) {
                    j += 1;
                }
                if j == start {
                    return Err(syntax(col, "set name after \"@\"", quote_at(&chars, j)));
                }
                out.push(Spanned {
                    tok: Tok::SetRef(chars[start..j].iter().collect()),
                    col,
                });
                i = j;
            }
            '"' => {
                let mut j = i + 1;
                let mut s = String::new();
                let mut closed = false;
                while j < chars.len() {
                    match chars[j] {
                        '\\' => {
                            match chars.get(j + 1) {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                _ => {
                                    return Err(syntax(
                                        j + 1,
                                        "escape sequence \\\" or \\\\",
                                        quote_at(&chars, j + 1),
                                    ))
                                }
                            }
                            j += 2;
                        }
                        '"' => {
                            closed = true;
                            j += 1;
                            break;
                        }
                        other => {
                            s.push(other);
                            j += 1;
                        }
                    }
                }
                if !closed {
                    return Err(syntax(col, "closing quote", "end of line".into()));
                }
                out.push(Spanned { tok: Tok::Str(s), col });
                i = j;
            }
            _ if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())) => {
                let start = i;
                if c == '-' {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if c != '-' && chars.get(i) == Some(&'x') && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()) {
                    let width: u32 = chars[start..i]
                        .iter()
                        .collect::<String>()
                        .parse()
                        .map_err(|_| syntax(start + 1, "resolution width in range", "overflow".into()))?;
                    i += 1;
                    let h_start = i;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    let height: u32 = chars[h_start..i]
                        .iter()
                        .collect::<String>()
                        .parse()
                        .map_err(|_| syntax(h_start + 1, "resolution height in range", "overflow".into()))?;
                    out.push(Spanned { tok: Tok::Res(width, height), col });
                } else {
                    if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()) {
                        i += 1;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    let text: String = chars[start..i].iter().collect();
                    let n: f64 = text
                        .parse()
                        .map_err(|_| syntax(col, "number", format!("{text:?}")))?;
                    out.push(Spanned { tok: Tok::Num(n), col });
                }
            }
            _ if is_ident_start(c) => {
                let start = i;
                while i < chars.len() && is_ident_continue(chars[i]) {
                    i += 1;
                }
                out.push(Spanned {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    col,
                });
            }
            other => {
                return Err(syntax(col, "token", format!("{other:?}")));
            }
        }
    }
    Ok(out)
}

fn quote_at(chars: &[char], idx: usize) -> String {
    match chars.get(idx) {
        Some(c) => format!("{c:?}"),
        None => "end of line".into(),
    }
}

/// Cursor over one line's tokens with error reporting.
struct Cursor<'a> {
    toks: &'a [Spanned],
    pos: usize,
    line: usize,
    line_len: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|s| s.col)
            .unwrap_or(self.line_len + 1)
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(t) => t.describe(),
            None => "end of line".into(),
        }
    }

    fn error(&self, expected: &[&str]) -> RuleError {
        RuleError::Syntax {
            line: self.line,
            column: self.col(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.found(),
        }
    }

    fn next(&mut self) -> Option<&'a Spanned> {
        let s = self.toks.get(self.pos);
        self.pos += 1;
        s
    }

    fn expect(&mut self, tok: &Tok, describe: &str) -> Result<(), RuleError> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&[describe]))
        }
    }

    fn expect_ident(&mut self, expected: &[&str]) -> Result<(String, usize), RuleError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let col = self.col();
                self.pos += 1;
                Ok((s.clone(), col))
            }
            _ => Err(self.error(expected)),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&mut self) -> Result<(), RuleError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error(&["end of line"]))
        }
    }
}

fn parse_literal(cur: &mut Cursor) -> Result<Literal, RuleError> {
    match cur.peek() {
        Some(Tok::Str(s)) => {
            let lit = Literal::Str(s.clone());
            cur.pos += 1;
            Ok(lit)
        }
        Some(Tok::Num(n)) => {
            let lit = Literal::Num(*n);
            cur.pos += 1;
            Ok(lit)
        }
        Some(Tok::Res(w, h)) => {
            let lit = Literal::Resolution { width: *w, height: *h };
            cur.pos += 1;
            Ok(lit)
        }
        _ => Err(cur.error(&["string", "number", "WxH resolution"])),
    }
}

fn parse_number(cur: &mut Cursor) -> Result<f64, RuleError> {
    match cur.peek() {
        Some(Tok::Num(n)) => {
            let n = *n;
            cur.pos += 1;
            Ok(n)
        }
        _ => Err(cur.error(&["number"])),
    }
}

struct ParseState<'r> {
    registry: &'r AttributeRegistry,
    /// (set name, line, column) of every `@set` reference, checked after
    /// the whole document is read so declaration order doesn't matter.
    set_refs: Vec<(String, usize, usize)>,
}

impl ParseState<'_> {
    fn check_attr(&self, name: &str, line: usize, col: usize) -> Result<(), RuleError> {
        if self.registry.contains(name) {
            Ok(())
        } else {
            Err(RuleError::UnknownAttribute { line, column: col, name: name.to_string() })
        }
    }
}

fn parse_atom(cur: &mut Cursor, state: &mut ParseState) -> Result<Atom, RuleError> {
    let (name, name_col) = match cur.peek() {
        Some(Tok::Ident(s)) => {
            let col = cur.col();
            let s = s.clone();
            cur.pos += 1;
            (s, col)
        }
        _ => return Err(cur.error(&["attribute name", "offsets_disjoint"])),
    };
    if name == "offsets_disjoint" {
        cur.expect(&Tok::LParen, "\"(\"")?;
        let (region_attr, rcol) = cur.expect_ident(&["attribute name"])?;
        state.check_attr(&region_attr, cur.line, rcol)?;
        cur.expect(&Tok::Comma, "\",\"")?;
        let (zone_attr, zcol) = cur.expect_ident(&["attribute name"])?;
        state.check_attr(&zone_attr, cur.line, zcol)?;
        cur.expect(&Tok::RParen, "\")\"")?;
        return Ok(Atom::OffsetsDisjoint { region_attr, zone_attr });
    }
    state.check_attr(&name, cur.line, name_col)?;
    let attr = name;
    match cur.peek() {
        Some(Tok::EqEq) => {
            cur.pos += 1;
            Ok(Atom::Eq { attr, value: parse_literal(cur)? })
        }
        Some(Tok::NotEq) => {
            cur.pos += 1;
            Ok(Atom::Ne { attr, value: parse_literal(cur)? })
        }
        Some(Tok::Lt) => {
            cur.pos += 1;
            Ok(Atom::Lt { attr, bound: parse_number(cur)? })
        }
        Some(Tok::Gt) => {
            cur.pos += 1;
            Ok(Atom::Gt { attr, bound: parse_number(cur)? })
        }
        Some(Tok::Ident(kw)) if kw == "BETWEEN" => {
            cur.pos += 1;
            let low = parse_number(cur)?;
            let high = parse_number(cur)?;
            Ok(Atom::Between { attr, low, high })
        }
        Some(Tok::Ident(kw)) if kw == "IN" => {
            cur.pos += 1;
            let (set, col) = expect_set_ref(cur)?;
            state.set_refs.push((set.clone(), cur.line, col));
            Ok(Atom::InSet { attr, set })
        }
        Some(Tok::Ident(kw)) if kw == "NOT" => {
            cur.pos += 1;
            match cur.peek() {
                Some(Tok::Ident(kw)) if kw == "IN" => {
                    cur.pos += 1;
                }
                _ => return Err(cur.error(&["IN"])),
            }
            let (set, col) = expect_set_ref(cur)?;
            state.set_refs.push((set.clone(), cur.line, col));
            Ok(Atom::NotInSet { attr, set })
        }
        Some(Tok::Ident(kw)) if kw == "ABSENT" => {
            cur.pos += 1;
            Ok(Atom::Absent { attr })
        }
        Some(Tok::Ident(kw)) if kw == "PRESENT" => {
            cur.pos += 1;
            Ok(Atom::Present { attr })
        }
        _ => Err(cur.error(&[
            "\"==\"", "\"!=\"", "\"<\"", "\">\"", "BETWEEN", "IN", "NOT IN", "ABSENT", "PRESENT",
        ])),
    }
}

fn expect_set_ref(cur: &mut Cursor) -> Result<(String, usize), RuleError> {
    match cur.peek() {
        Some(Tok::SetRef(s)) => {
            let col = cur.col();
            let s = s.clone();
            cur.pos += 1;
            Ok((s, col))
        }
        _ => Err(cur.error(&["@set"])),
    }
}

fn parse_predicate(cur: &mut Cursor, state: &mut ParseState) -> Result<Predicate, RuleError> {
    let mut atoms = vec![parse_atom(cur, state)?];
    loop {
        match cur.peek() {
            Some(Tok::Ident(kw)) if kw == "AND" => {
                cur.pos += 1;
                atoms.push(parse_atom(cur, state)?);
            }
            None => break,
            _ => return Err(cur.error(&["AND", "end of line"])),
        }
    }
    Ok(Predicate { atoms })
}

fn expect_keyword(cur: &mut Cursor, keyword: &str) -> Result<(), RuleError> {
    match cur.peek() {
        Some(Tok::Ident(s)) if s == keyword => {
            cur.pos += 1;
            Ok(())
        }
        _ => Err(cur.error(&[keyword])),
    }
}

fn parse_temporal_body(cur: &mut Cursor, state: &mut ParseState) -> Result<TemporalSpec, RuleError> {
    expect_keyword(cur, "key")?;
    cur.expect(&Tok::Assign, "\"=\"")?;
    let key = match cur.peek() {
        Some(Tok::Ident(s)) if s == "cookie" => {
            cur.pos += 1;
            TemporalKey::Cookie
        }
        Some(Tok::Ident(s)) if s == "ip" => {
            cur.pos += 1;
            TemporalKey::Ip
        }
        _ => return Err(cur.error(&["cookie", "ip"])),
    };
    expect_keyword(cur, "watch")?;
    cur.expect(&Tok::Assign, "\"=\"")?;
    let (watch, col) = cur.expect_ident(&["attribute name"])?;
    state.check_attr(&watch, cur.line, col)?;
    Ok(TemporalSpec { key, watch })
}

/// Parses a filter list. Every atom must reference a registered attribute;
/// every `@set` must be declared somewhere in the same document.
pub fn parse_rules(text: &str, registry: &AttributeRegistry) -> Result<RuleSet, RuleError> {
    let mut out = RuleSet::default();
    let mut state = ParseState { registry, set_refs: Vec::new() };
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks = lex_line(raw, line_no)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor {
            toks: &toks,
            pos: 0,
            line: line_no,
            line_len: raw.chars().count(),
        };
        let (head, _) = cur.expect_ident(&["set", "spatial", "geo", "temporal"])?;
        match head.as_str() {
            "set" => {
                let (name, _) = expect_set_ref(&mut cur)?;
                cur.expect(&Tok::Colon, "\":\"")?;
                let mut values = vec![parse_literal(&mut cur)?];
                while cur.peek() == Some(&Tok::Comma) {
                    cur.pos += 1;
                    values.push(parse_literal(&mut cur)?);
                }
                cur.expect_end()?;
                if out.sets.insert(name.clone(), values).is_some() {
                    return Err(RuleError::DuplicateSet { line: line_no, name });
                }
            }
            "spatial" | "geo" | "temporal" => {
                let kind = match head.as_str() {
                    "spatial" => RuleKind::Spatial,
                    "geo" => RuleKind::Geo,
                    _ => RuleKind::TemporalDirective,
                };
                let (id, _) = cur.expect_ident(&["rule id"])?;
                let provenance = match cur.peek() {
                    Some(Tok::Ident(kw)) if kw == "from" => {
                        cur.pos += 1;
                        match cur.next() {
                            Some(Spanned { tok: Tok::Str(s), .. }) => Some(s.clone()),
                            _ => {
                                cur.pos -= 1;
                                return Err(cur.error(&["quoted origin string"]));
                            }
                        }
                    }
                    _ => None,
                };
                cur.expect(&Tok::Colon, "\":\"")?;
                let body = if kind == RuleKind::TemporalDirective {
                    RuleBody::Temporal(parse_temporal_body(&mut cur, &mut state)?)
                } else {
                    RuleBody::Predicate(parse_predicate(&mut cur, &mut state)?)
                };
                cur.expect_end()?;
                if seen_ids.insert(id.clone(), line_no).is_some() {
                    return Err(RuleError::DuplicateRule { line: line_no, id });
                }
                out.rules.push(FilterRule { id, kind, provenance, body });
            }
            _ => {
                return Err(RuleError::Syntax {
                    line: line_no,
                    column: 1,
                    expected: vec!["set".into(), "spatial".into(), "geo".into(), "temporal".into()],
                    found: format!("{head:?}"),
                })
            }
        }
    }

    for (name, line, column) in state.set_refs {
        if !out.sets.contains_key(&name) {
            return Err(RuleError::UndefinedSet { line, column, name });
        }
    }
    Ok(out)
}

fn atom_to_text(atom: &Atom) -> String {
    match atom {
        Atom::Eq { attr, value } => format!("{attr} == {}", value.to_text()),
        Atom::Ne { attr, value } => format!("{attr} != {}", value.to_text()),
        Atom::Lt { attr, bound } => format!("{attr} < {}", super::format_number(*bound)),
        Atom::Gt { attr, bound } => format!("{attr} > {}", super::format_number(*bound)),
        Atom::Between { attr, low, high } => format!(
            "{attr} BETWEEN {} {}",
            super::format_number(*low),
            super::format_number(*high)
        ),
        Atom::InSet { attr, set } => format!("{attr} IN @{set}"),
        Atom::NotInSet { attr, set } => format!("{attr} NOT IN @{set}"),
        Atom::Absent { attr } => format!("{attr} ABSENT"),
        Atom::Present { attr } => format!("{attr} PRESENT"),
        Atom::OffsetsDisjoint { region_attr, zone_attr } => {
            format!("offsets_disjoint({region_attr}, {zone_attr})")
        }
    }
}

/// Renders a rule set in the text format. `parse_rules` over the output
/// reproduces the rule set exactly (sets are emitted sorted by name; rule
/// order is preserved).
pub fn serialize_rules(rules: &RuleSet) -> String {
    let mut out = String::new();
    for (name, values) in &rules.sets {
        let rendered: Vec<String> = values.iter().map(Literal::to_text).collect();
        out.push_str(&format!("set @{name}: {}\n", rendered.join(", ")));
    }
    if !rules.sets.is_empty() && !rules.rules.is_empty() {
        out.push('\n');
    }
    for rule in &rules.rules {
        let kind = match rule.kind {
            RuleKind::Spatial => "spatial",
            RuleKind::Geo => "geo",
            RuleKind::TemporalDirective => "temporal",
        };
        let origin = match &rule.provenance {
            Some(p) => format!(" from {}", Literal::Str(p.clone()).to_text()),
            None => String::new(),
        };
        let body = match &rule.body {
            RuleBody::Predicate(pred) => {
                let atoms: Vec<String> = pred.atoms.iter().map(atom_to_text).collect();
                atoms.join(" AND ")
            }
            RuleBody::Temporal(spec) => {
                let key = match spec.key {
                    TemporalKey::Cookie => "cookie",
                    TemporalKey::Ip => "ip",
                };
                format!("key={key} watch={}", spec.watch)
            }
        };
        out.push_str(&format!("{kind} {}{origin}: {body}\n", rule.id));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RuleSet, RuleError> {
        parse_rules(text, &AttributeRegistry::shipped())
    }

    #[test]
    fn parses_sets_rules_and_comments() {
        let text = "\
# confirmed contradictions\n\
set @iphone_resolutions: 640x960, 750x1334\n\
\n\
spatial r_iphone_resolution from \"review 2\": ua.device == \"iPhone\" AND screen.resolution NOT IN @iphone_resolutions\n\
geo g_ip_timezone: offsets_disjoint(ip.location, timezone)\n\
temporal t_platform: key=cookie watch=platform\n";
        let rs = parse(text).unwrap();
        assert_eq!(
            rs.sets["iphone_resolutions"],
            vec![
                Literal::Resolution { width: 640, height: 960 },
                Literal::Resolution { width: 750, height: 1334 },
            ]
        );
        assert_eq!(rs.rules.len(), 3);
        let r = &rs.rules[0];
        assert_eq!(r.kind, RuleKind::Spatial);
        assert_eq!(r.provenance.as_deref(), Some("review 2"));
        assert_eq!(
            r.predicate().unwrap().atoms,
            vec![
                Atom::Eq { attr: "ua.device".into(), value: Literal::Str("iPhone".into()) },
                Atom::NotInSet {
                    attr: "screen.resolution".into(),
                    set: "iphone_resolutions".into()
                },
            ]
        );
        assert_eq!(rs.rules[1].kind, RuleKind::Geo);
        assert_eq!(
            rs.rules[2].body,
            RuleBody::Temporal(TemporalSpec { key: TemporalKey::Cookie, watch: "platform".into() })
        );
    }

    #[test]
    fn empty_and_comment_only_inputs_are_empty() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n  # nothing here\n\t\n").unwrap().is_empty());
    }

    #[test]
    fn set_declarations_may_follow_their_uses() {
        let text = "spatial r1: platform IN @later\nset @later: \"MacIntel\"\n";
        let rs = parse(text).unwrap();
        assert_eq!(rs.sets["later"], vec![Literal::Str("MacIntel".into())]);
    }

    #[test]
    fn dangling_and_reports_end_of_line() {
        let err = parse("spatial r1: platform == \"MacIntel\" AND").unwrap_err();
        match err {
            RuleError::Syntax { line, column, expected, found } => {
                assert_eq!((line, column), (1, 39));
                assert_eq!(found, "end of line");
                assert!(expected.iter().any(|e| e.contains("attribute name")));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn unknown_attribute_is_rejected_with_its_column() {
        let err = parse("spatial r1: bogus.attr == 5").unwrap_err();
        match err {
            RuleError::UnknownAttribute { line, column, name } => {
                assert_eq!((line, column), (1, 13));
                assert_eq!(name, "bogus.attr");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn undefined_set_is_rejected_wherever_it_appears() {
        let err = parse("spatial r1: screen.resolution NOT IN @nope").unwrap_err();
        match err {
            RuleError::UndefinedSet { line, column, name } => {
                assert_eq!((line, column), (1, 38));
                assert_eq!(name, "nope");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn duplicate_ids_and_set_names_are_rejected() {
        let err = parse("geo g1: offsets_disjoint(ip.location, timezone)\ngeo g1: offsets_disjoint(ip.location, timezone)\n")
            .unwrap_err();
        assert!(matches!(err, RuleError::DuplicateRule { line: 2, ref id } if id == "g1"));

        let err = parse("set @a: 1\nset @a: 2\n").unwrap_err();
        assert!(matches!(err, RuleError::DuplicateSet { line: 2, ref name } if name == "a"));
    }

    #[test]
    fn temporal_body_accepts_only_cookie_or_ip_keys() {
        let rs = parse("temporal t1: key=ip watch=timezone").unwrap();
        assert_eq!(
            rs.rules[0].body,
            RuleBody::Temporal(TemporalSpec { key: TemporalKey::Ip, watch: "timezone".into() })
        );
        let err = parse("temporal t1: key=session watch=platform").unwrap_err();
        match err {
            RuleError::Syntax { expected, .. } => {
                assert_eq!(expected, vec!["cookie".to_string(), "ip".to_string()]);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn string_escapes_survive_a_round_trip() {
        let text = "spatial r1: vendor == \"He said \\\"hi\\\" \\\\ bye\"\n";
        let rs = parse(text).unwrap();
        assert_eq!(
            rs.rules[0].predicate().unwrap().atoms[0],
            Atom::Eq {
                attr: "vendor".into(),
                value: Literal::Str("He said \"hi\" \\ bye".into())
            }
        );
        assert_eq!(parse(&serialize_rules(&rs)).unwrap(), rs);
    }

    #[test]
    fn every_atom_shape_round_trips() {
        let text = "\
set @plats: \"MacIntel\", \"iPad\"\n\
set @nums: 0.5, -30, 4\n\
spatial a: platform == \"MacIntel\" AND screen.resolution != 1920x1080\n\
spatial b: device.memory < 0.5 AND hardware.concurrency > 2\n\
spatial c: device.memory BETWEEN -0.5 8\n\
spatial d: platform IN @plats AND device.memory NOT IN @nums\n\
spatial e: vendor ABSENT AND platform PRESENT\n\
geo f from \"geo table\": offsets_disjoint(ip.location, timezone)\n\
temporal g: key=cookie watch=device.memory\n";
        let rs = parse(text).unwrap();
        let rendered = serialize_rules(&rs);
        assert_eq!(parse(&rendered).unwrap(), rs);
        // Serialization is a fixed point after one pass.
        assert_eq!(serialize_rules(&parse(&rendered).unwrap()), rendered);
    }

    #[test]
    fn unterminated_strings_and_bad_escapes_are_positioned() {
        let err = parse("spatial r1: vendor == \"open").unwrap_err();
        match err {
            RuleError::Syntax { line, column, found, .. } => {
                assert_eq!((line, column), (1, 23));
                assert_eq!(found, "end of line");
            }
            other => panic!("wrong error: {other}"),
        }
        let err = parse("spatial r1: vendor == \"a\\nb\"").unwrap_err();
        match err {
            RuleError::Syntax { line, column, .. } => {
                assert_eq!((line, column), (1, 25));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn lines_must_start_with_a_known_form() {
        let err = parse("filter r1: platform ABSENT").unwrap_err();
        match err {
            RuleError::Syntax { line, column, expected, found } => {
                assert_eq!((line, column), (1, 1));
                assert_eq!(expected, vec!["set", "spatial", "geo", "temporal"]);
                assert_eq!(found, "\"filter\"");
            }
            other => panic!("wrong error: {other}"),
        }
    }
}
