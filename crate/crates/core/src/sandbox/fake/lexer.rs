//! Tokenizer for the fake worker's Python subset, with Python-style
//! NEWLINE / INDENT / DEDENT tokens and implicit joining inside brackets.

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Str { text: String, fmt: bool },
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexError {
    pub kind: &'static str,
    pub line: usize,
    pub msg: String,
}

const OPS: &[&str] = &[
    "**=", "//=", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "+", "-", "*",
    "/", "%", "<", ">", "=", "(", ")", "[", "]", "{", "}", ",", ".", ":",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut depth = 0usize;
    let mut indents = vec![0usize];
    let mut line_start = true;

    let err = |kind, line, msg: &str| LexError {
        kind,
        line,
        msg: msg.to_string(),
    };

    while i < chars.len() {
        if line_start && depth == 0 {
            let mut width = 0;
            let mut j = i;
            while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
                width += if chars[j] == '\t' { 4 } else { 1 };
                j += 1;
            }
            // Blank and comment-only lines do not affect indentation.
            if j >= chars.len() || chars[j] == '\n' || chars[j] == '#' || chars[j] == '\r' {
                while j < chars.len() && chars[j] != '\n' {
                    j += 1;
                }
                i = j;
                if i < chars.len() {
                    i += 1;
                    line += 1;
                }
                continue;
            }
            let current = *indents.last().unwrap();
            if width > current {
                indents.push(width);
                out.push(Token {
                    tok: Tok::Indent,
                    line,
                });
            } else {
                while width < *indents.last().unwrap() {
                    indents.pop();
                    out.push(Token {
                        tok: Tok::Dedent,
                        line,
                    });
                }
                if width != *indents.last().unwrap() {
                    return Err(err(
                        "IndentationError",
                        line,
                        "unindent does not match any outer indentation level",
                    ));
                }
            }
            i = j;
            line_start = false;
        }

        let c = chars[i];
        match c {
            '\n' => {
                if depth == 0 {
                    if !matches!(out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
                        out.push(Token {
                            tok: Tok::Newline,
                            line,
                        });
                    }
                    line_start = true;
                }
                line += 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            ';' => {
                out.push(Token {
                    tok: Tok::Newline,
                    line,
                });
                i += 1;
            }
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                i += 2;
                line += 1;
            }
            '"' | '\'' => {
                let (text, next, lines) = read_string(&chars, i, false, line)?;
                out.push(Token {
                    tok: Tok::Str { text, fmt: false },
                    line,
                });
                line += lines;
                i = next;
            }
            c if c.is_ascii_digit()
                || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                let start = i;
                let mut is_float = false;
                while i < chars.len() {
                    let d = chars[i];
                    if d.is_ascii_digit() || d == '_' {
                        i += 1;
                    } else if d == '.' && !is_float {
                        is_float = true;
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && chars
                            .get(i + 1)
                            .is_some_and(|n| n.is_ascii_digit() || *n == '-' || *n == '+')
                    {
                        is_float = true;
                        i += 2;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().filter(|&&d| d != '_').collect();
                let tok = if is_float {
                    Tok::Float(
                        text.parse()
                            .map_err(|_| err("SyntaxError", line, "invalid number"))?,
                    )
                } else {
                    Tok::Int(
                        text.parse()
                            .map_err(|_| err("SyntaxError", line, "integer too large"))?,
                    )
                };
                out.push(Token { tok, line });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let name: String = chars[start..i].iter().collect();
                let prefix = name.to_ascii_lowercase();
                if matches!(prefix.as_str(), "f" | "r" | "b" | "rb" | "br" | "fr" | "rf")
                    && i < chars.len()
                    && (chars[i] == '"' || chars[i] == '\'')
                {
                    let raw = prefix.contains('r');
                    let (text, next, lines) = read_string(&chars, i, raw, line)?;
                    out.push(Token {
                        tok: Tok::Str {
                            text,
                            fmt: prefix.contains('f'),
                        },
                        line,
                    });
                    line += lines;
                    i = next;
                } else {
                    out.push(Token {
                        tok: Tok::Name(name),
                        line,
                    });
                }
            }
            _ => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let Some(op) = OPS.iter().find(|op| rest.starts_with(**op)) else {
                    return Err(err(
                        "SyntaxError",
                        line,
                        &format!("invalid character '{c}'"),
                    ));
                };
                match *op {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth = depth.saturating_sub(1),
                    _ => {}
                }
                out.push(Token {
                    tok: Tok::Op(op),
                    line,
                });
                i += op.len();
            }
        }
    }
    if depth > 0 {
        return Err(err("SyntaxError", line, "unexpected EOF while parsing"));
    }
    if !matches!(out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
        out.push(Token {
            tok: Tok::Newline,
            line,
        });
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token {
            tok: Tok::Dedent,
            line,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
    });
    Ok(out)
}

/// Reads a quoted literal starting at `start` (the quote). Supports triple
/// quotes. Returns the decoded text, the index after the closing quote, and
/// the number of newlines consumed.
fn read_string(
    chars: &[char],
    start: usize,
    raw: bool,
    line: usize,
) -> Result<(String, usize, usize), LexError> {
    let q = chars[start];
    let triple = chars.get(start + 1) == Some(&q) && chars.get(start + 2) == Some(&q);
    let mut i = start + if triple { 3 } else { 1 };
    let mut text = String::new();
    let mut lines = 0;
    loop {
        let Some(&c) = chars.get(i) else {
            return Err(LexError {
                kind: "SyntaxError",
                line,
                msg: "unterminated string literal".into(),
            });
        };
        if c == q {
            if !triple {
                return Ok((text, i + 1, lines));
            }
            if chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                return Ok((text, i + 3, lines));
            }
        }
        if c == '\n' {
            if !triple {
                return Err(LexError {
                    kind: "SyntaxError",
                    line,
                    msg: "unterminated string literal".into(),
                });
            }
            lines += 1;
        }
        if c == '\\' && !raw {
            let n = chars.get(i + 1).copied().unwrap_or('\\');
            let esc = match n {
                'n' => Some('\n'),
                't' => Some('\t'),
                'r' => Some('\r'),
                '0' => Some('\0'),
                '\\' | '\'' | '"' => Some(n),
                '\n' => {
                    lines += 1;
                    i += 2;
                    continue;
                }
                _ => None,
            };
            match esc {
                Some(e) => text.push(e),
                None => {
                    text.push('\\');
                    text.push(n);
                }
            }
            i += 2;
            continue;
        }
        text.push(c);
        i += 1;
    }
}
