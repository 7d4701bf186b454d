//! Line-oriented space definition format:
//!
//! ```text
//! # comment
//! <name> categorical {v1,v2,...} [<default>]
//! <name> integer [<lo>, <hi>] [<default>] (log)
//! <name> real [<lo>, <hi>] [<default>] (log)
//! <child> | <parent> in {v1,v2,...}
//! ```

use super::{Condition, ConfigurationSpace, Domain, ParameterSpec, Pos, SpaceError, Value};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Pipe,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Word(w) => format!("`{w}`"),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Pipe => "`|`".into(),
    }
}

fn lex(line: &str, line_no: usize) -> Result<Vec<(Tok, Pos)>, SpaceError> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line: line_no, column: i + 1 };
        let single = match c {
            '#' => break,
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '|' => Some(Tok::Pipe),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, pos));
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !"{}[](),|#".contains(chars[i]) {
                i += 1;
            }
            out.push((Tok::Word(chars[start..i].iter().collect()), pos));
        }
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    end: Pos,
}

impl Cursor {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.i).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn err(&self, message: impl Into<String>) -> SpaceError {
        SpaceError::Syntax { pos: self.pos(), message: message.into() }
    }

    fn next(&mut self) -> Option<(Tok, Pos)> {
        let t = self.toks.get(self.i).cloned();
        self.i += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), SpaceError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.i += 1;
                Ok(())
            }
            Some(t) => Err(self.err(format!("expected {}, found {}", describe(&want), describe(t)))),
            None => Err(self.err(format!("expected {}, found end of line", describe(&want)))),
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, Pos), SpaceError> {
        match self.next() {
            Some((Tok::Word(w), p)) => Ok((w, p)),
            Some((t, p)) => Err(SpaceError::Syntax {
                pos: p,
                message: format!("expected {what}, found {}", describe(&t)),
            }),
            None => Err(self.err(format!("expected {what}, found end of line"))),
        }
    }

    /// `{a,b,c}` as raw words.
    fn value_set(&mut self) -> Result<Vec<(String, Pos)>, SpaceError> {
        self.expect(Tok::LBrace)?;
        let mut vals = Vec::new();
        loop {
            vals.push(self.word("a value")?);
            match self.next() {
                Some((Tok::Comma, _)) => continue,
                Some((Tok::RBrace, _)) => break,
                Some((t, p)) => {
                    return Err(SpaceError::Syntax {
                        pos: p,
                        message: format!("expected `,` or `}}`, found {}", describe(&t)),
                    })
                }
                None => return Err(self.err("unterminated value set")),
            }
        }
        Ok(vals)
    }

    fn done(&self) -> Result<(), SpaceError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected {}", describe(t)))),
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || "_-.:".contains(c))
}

struct RawCondition {
    child: (String, Pos),
    parent: (String, Pos),
    values: Vec<(String, Pos)>,
}

/// Parses and validates a space definition. Errors carry line and column.
pub fn parse_space(text: &str) -> Result<ConfigurationSpace, SpaceError> {
    let mut params = Vec::new();
    let mut param_pos = Vec::new();
    let mut raw_conditions = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks = lex(line, line_no)?;
        if toks.is_empty() {
            continue;
        }
        let end = Pos { line: line_no, column: line.chars().count() + 1 };
        let mut cur = Cursor { toks, i: 0, end };
        let (name, name_pos) = cur.word("a parameter name")?;
        if !is_identifier(&name) {
            return Err(SpaceError::Syntax { pos: name_pos, message: format!("invalid name `{name}`") });
        }
        if cur.peek() == Some(&Tok::Pipe) {
            cur.next();
            let parent = cur.word("a parent parameter")?;
            let (kw, kw_pos) = cur.word("`in`")?;
            if kw != "in" {
                return Err(SpaceError::Syntax { pos: kw_pos, message: format!("expected `in`, found `{kw}`") });
            }
            let values = cur.value_set()?;
            cur.done()?;
            raw_conditions.push(RawCondition { child: (name, name_pos), parent, values });
            continue;
        }

        let (kind, kind_pos) = cur.word("a parameter type")?;
        let spec = match kind.as_str() {
            "categorical" => {
                let vals: Vec<String> = cur.value_set()?.into_iter().map(|(v, _)| v).collect();
                let default = optional_default(&mut cur)?.map(|(d, _)| Value::Cat(d));
                ParameterSpec { name, domain: Domain::Categorical(vals), log_scale: false, default }
            }
            "integer" | "real" => {
                cur.expect(Tok::LBracket)?;
                let lo_pos = cur.pos();
                let (lo_s, _) = cur.word("a lower bound")?;
                cur.expect(Tok::Comma)?;
                let (hi_s, hi_pos) = cur.word("an upper bound")?;
                cur.expect(Tok::RBracket)?;
                let default = optional_default(&mut cur)?;
                let log_scale = optional_log(&mut cur)?;
                if kind == "integer" {
                    let lo = parse_num::<i64>(&lo_s, lo_pos, "integer bound")?;
                    let hi = parse_num::<i64>(&hi_s, hi_pos, "integer bound")?;
                    let default = default
                        .map(|(d, p)| parse_num::<i64>(&d, p, "integer default").map(Value::Int))
                        .transpose()?;
                    ParameterSpec { name, domain: Domain::Integer { lo, hi }, log_scale, default }
                } else {
                    let lo = parse_num::<f64>(&lo_s, lo_pos, "real bound")?;
                    let hi = parse_num::<f64>(&hi_s, hi_pos, "real bound")?;
                    let default = default
                        .map(|(d, p)| parse_num::<f64>(&d, p, "real default").map(Value::Real))
                        .transpose()?;
                    ParameterSpec { name, domain: Domain::Real { lo, hi }, log_scale, default }
                }
            }
            other => {
                return Err(SpaceError::Syntax {
                    pos: kind_pos,
                    message: format!("unknown parameter type `{other}` (expected categorical, integer or real)"),
                })
            }
        };
        cur.done()?;
        params.push(spec);
        param_pos.push(Some(name_pos));
    }

    // Condition values are typed by the parent's domain.
    let mut conditions = Vec::new();
    let mut cond_pos = Vec::new();
    for rc in raw_conditions {
        let parent = params.iter().find(|p: &&ParameterSpec| p.name == rc.parent.0);
        let values = match parent.map(|p| &p.domain) {
            Some(Domain::Integer { .. }) => rc
                .values
                .iter()
                .map(|(v, p)| parse_num::<i64>(v, *p, "integer value").map(Value::Int))
                .collect::<Result<Vec<_>, _>>()?,
            _ => rc.values.iter().map(|(v, _)| Value::Cat(v.clone())).collect(),
        };
        conditions.push(Condition { child: rc.child.0, parent: rc.parent.0, activating_values: values });
        cond_pos.push((Some(rc.child.1), Some(rc.parent.1)));
    }

    ConfigurationSpace::build(params, conditions, &param_pos, &cond_pos)
}

fn parse_num<N: std::str::FromStr>(s: &str, pos: Pos, what: &str) -> Result<N, SpaceError> {
    s.parse().map_err(|_| SpaceError::Syntax { pos, message: format!("invalid {what} `{s}`") })
}

fn optional_default(cur: &mut Cursor) -> Result<Option<(String, Pos)>, SpaceError> {
    if cur.peek() != Some(&Tok::LBracket) {
        return Ok(None);
    }
    cur.next();
    let d = cur.word("a default value")?;
    cur.expect(Tok::RBracket)?;
    Ok(Some(d))
}

fn optional_log(cur: &mut Cursor) -> Result<bool, SpaceError> {
    if cur.peek() != Some(&Tok::LParen) {
        return Ok(false);
    }
    cur.next();
    let (w, p) = cur.word("`log`")?;
    if w != "log" {
        return Err(SpaceError::Syntax { pos: p, message: format!("expected `log`, found `{w}`") });
    }
    cur.expect(Tok::RParen)?;
    Ok(true)
}

pub(super) fn render(space: &ConfigurationSpace) -> String {
    let mut out = String::new();
    for p in space.params() {
        out.push_str(&p.name);
        match &p.domain {
            Domain::Categorical(vals) => {
                out.push_str(&format!(" categorical {{{}}}", vals.join(",")));
            }
            Domain::Integer { lo, hi } => out.push_str(&format!(" integer [{lo}, {hi}]")),
            Domain::Real { lo, hi } => out.push_str(&format!(" real [{lo:?}, {hi:?}]")),
        }
        if let Some(d) = &p.default {
            out.push_str(&format!(" [{d}]"));
        }
        if p.log_scale {
            out.push_str(" (log)");
        }
        out.push('\n');
    }
    for c in space.conditions() {
        let vals: Vec<String> = c.activating_values.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{} | {} in {{{}}}\n", c.child, c.parent, vals.join(",")));
    }
    out
}
