//! Tokenizer and recursive-descent parser for
//! `SELECT COUNT(*) FROM t1, t2, ... [WHERE c1 AND c2 ...]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Ident(String),
    Number(f64, String),
    Str(String),
    Sym(&'static str),
}

pub(crate) fn tokenize(sql: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || ((c == '-' || c == '+' || c == '.')
                && chars
                    .get(i + 1)
                    .is_some_and(|n| n.is_ascii_digit() || *n == '.'));
        if starts_number {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text
                .parse()
                .map_err(|_| Error::Sql(format!("bad number literal `{text}`")))?;
            out.push(Token::Number(
                value,
                text.trim_start_matches('+').to_string(),
            ));
            continue;
        }
        if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(Error::Sql("unterminated string literal".into())),
                    Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Token::Str(s));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let sym = match two.as_str() {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "<>" => Some("<>"),
            "!=" => Some("!="),
            _ => None,
        };
        if let Some(s) = sym {
            out.push(Token::Sym(s));
            i += 2;
            continue;
        }
        let one = match c {
            '(' => "(",
            ')' => ")",
            '*' => "*",
            ',' => ",",
            '.' => ".",
            '=' => "=",
            '<' => "<",
            '>' => ">",
            ';' => ";",
            _ => return Err(Error::Sql(format!("unexpected character `{c}`"))),
        };
        out.push(Token::Sym(one));
        i += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Operand {
    Column(String, String),
    Number(f64, String),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Condition {
    pub left: Operand,
    pub op: &'static str,
    pub right: Operand,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawQuery {
    pub tables: Vec<String>,
    pub conditions: Vec<Condition>,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        match self.next() {
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw) => Ok(()),
            other => Err(Error::Sql(format!(
                "expected {kw}, found {}",
                describe(&other)
            ))),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn sym(&mut self, s: &str) -> Result<()> {
        match self.next() {
            Some(Token::Sym(x)) if x == s => Ok(()),
            other => Err(Error::Sql(format!(
                "expected `{s}`, found {}",
                describe(&other)
            ))),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            Some(Token::Ident(s)) if !is_reserved(&s) => Ok(s),
            other => Err(Error::Sql(format!(
                "expected identifier, found {}",
                describe(&other)
            ))),
        }
    }

    fn operand(&mut self) -> Result<Operand> {
        match self.next() {
            Some(Token::Ident(t)) if !is_reserved(&t) => {
                self.sym(".")?;
                let a = self.ident()?;
                Ok(Operand::Column(t, a))
            }
            Some(Token::Number(v, text)) => Ok(Operand::Number(v, text)),
            Some(Token::Str(s)) => Ok(Operand::Str(s)),
            other => Err(Error::Sql(format!(
                "expected column or literal, found {}",
                describe(&other)
            ))),
        }
    }

    fn condition(&mut self) -> Result<Condition> {
        if self.is_keyword("NOT") {
            return Err(Error::UnsupportedPredicate("NOT".into()));
        }
        let left = self.operand()?;
        let op = match self.next() {
            Some(Token::Sym(s @ ("=" | "<" | "<=" | ">" | ">="))) => s,
            Some(Token::Sym(s @ ("<>" | "!="))) => {
                return Err(Error::UnsupportedPredicate(format!("operator `{s}`")))
            }
            Some(Token::Ident(s)) if is_reserved(&s) => {
                return Err(Error::UnsupportedPredicate(format!("operator `{s}`")))
            }
            other => {
                return Err(Error::Sql(format!(
                    "expected comparison operator, found {}",
                    describe(&other)
                )))
            }
        };
        let right = self.operand()?;
        Ok(Condition { left, op, right })
    }
}

fn is_reserved(s: &str) -> bool {
    [
        "SELECT", "COUNT", "FROM", "WHERE", "AND", "OR", "NOT", "LIKE", "IN", "BETWEEN", "IS",
        "JOIN", "ON",
    ]
    .iter()
    .any(|k| s.eq_ignore_ascii_case(k))
}

fn describe(t: &Option<Token>) -> String {
    match t {
        None => "end of input".into(),
        Some(Token::Ident(s)) => format!("`{s}`"),
        Some(Token::Number(_, s)) => format!("`{s}`"),
        Some(Token::Str(s)) => format!("'{s}'"),
        Some(Token::Sym(s)) => format!("`{s}`"),
    }
}

pub(crate) fn parse(sql: &str) -> Result<RawQuery> {
    let mut p = Parser {
        tokens: tokenize(sql)?,
        pos: 0,
    };
    p.keyword("SELECT")?;
    p.keyword("COUNT")?;
    p.sym("(")?;
    p.sym("*")?;
    p.sym(")")?;
    p.keyword("FROM")?;
    let mut tables = vec![p.ident()?];
    while p.peek() == Some(&Token::Sym(",")) {
        p.pos += 1;
        tables.push(p.ident()?);
    }
    let mut conditions = Vec::new();
    if p.is_keyword("WHERE") {
        p.pos += 1;
        conditions.push(p.condition()?);
        loop {
            if p.is_keyword("AND") {
                p.pos += 1;
                conditions.push(p.condition()?);
            } else if p.is_keyword("OR") {
                return Err(Error::UnsupportedPredicate("OR".into()));
            } else {
                break;
            }
        }
    }
    if p.peek() == Some(&Token::Sym(";")) {
        p.pos += 1;
    }
    if let Some(t) = p.peek() {
        if matches!(t, Token::Ident(s) if s.eq_ignore_ascii_case("JOIN")) {
            return Err(Error::UnsupportedPredicate("explicit JOIN syntax".into()));
        }
        return Err(Error::Sql(format!(
            "unexpected trailing {}",
            describe(&Some(t.clone()))
        )));
    }
    Ok(RawQuery { tables, conditions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_operators_and_literals() {
        let t = tokenize("a.v <= -1.5e3 AND b.c = 'it''s'").unwrap();
        assert_eq!(t[3], Token::Sym("<="));
        assert_eq!(t[4], Token::Number(-1500.0, "-1.5e3".into()));
        assert_eq!(t[10], Token::Str("it's".into()));
    }

    #[test]
    fn parses_basic_query() {
        let q = parse("select count(*) from a, b where a.x = b.y and a.v <= 5;").unwrap();
        assert_eq!(q.tables, vec!["a", "b"]);
        assert_eq!(q.conditions.len(), 2);
        assert_eq!(q.conditions[1].op, "<=");
    }

    #[test]
    fn rejects_unsupported() {
        assert!(matches!(
            parse("SELECT COUNT(*) FROM a WHERE a.v = 1 OR a.v = 2"),
            Err(Error::UnsupportedPredicate(_))
        ));
        assert!(matches!(
            parse("SELECT COUNT(*) FROM a WHERE a.v <> 1"),
            Err(Error::UnsupportedPredicate(_))
        ));
        assert!(matches!(
            parse("SELECT COUNT(*) FROM a WHERE a.s LIKE 'x%'"),
            Err(Error::UnsupportedPredicate(_))
        ));
        assert!(matches!(parse("SELECT * FROM a"), Err(Error::Sql(_))));
        assert!(matches!(
            parse("SELECT COUNT(*) FROM a WHERE"),
            Err(Error::Sql(_))
        ));
    }
}
