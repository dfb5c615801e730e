use super::SqlError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TokenKind {
    /// Bare or backtick-quoted identifier, stored as written.
    Ident(String),
    Number(String),
    /// String literal including its quotes.
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Semicolon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub pos: usize,
}

impl Token {
    /// True when the token is an unquoted identifier equal to `kw` (ASCII case-insensitive).
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.kind, TokenKind::Ident(s) if s.eq_ignore_ascii_case(kw))
    }
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let kind = match c {
            b'(' => {
                i += 1;
                TokenKind::LParen
            }
            b')' => {
                i += 1;
                TokenKind::RParen
            }
            b',' => {
                i += 1;
                TokenKind::Comma
            }
            b'*' => {
                i += 1;
                TokenKind::Star
            }
            b'+' => {
                i += 1;
                TokenKind::Plus
            }
            b'-' => {
                i += 1;
                TokenKind::Minus
            }
            b'/' => {
                i += 1;
                TokenKind::Slash
            }
            b';' => {
                i += 1;
                TokenKind::Semicolon
            }
            b'=' => {
                i += if bytes.get(i + 1) == Some(&b'=') {
                    2
                } else {
                    1
                };
                TokenKind::Eq
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    TokenKind::Ne
                } else {
                    return Err(SqlError::parse(start, "unexpected character '!'"));
                }
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 2;
                    TokenKind::Le
                }
                Some(b'>') => {
                    i += 2;
                    TokenKind::Ne
                }
                _ => {
                    i += 1;
                    TokenKind::Lt
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    TokenKind::Ge
                } else {
                    i += 1;
                    TokenKind::Gt
                }
            }
            b'\'' | b'"' => {
                let quote = c;
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(SqlError::parse(start, "unterminated string literal")),
                        Some(&b) if b == quote => {
                            // doubled quote is an escaped quote
                            if bytes.get(i + 1) == Some(&quote) {
                                i += 2;
                            } else {
                                i += 1;
                                break;
                            }
                        }
                        Some(_) => i += 1,
                    }
                }
                TokenKind::Str(text[start..i].to_string())
            }
            b'`' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'`' {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(SqlError::parse(start, "unterminated quoted identifier"));
                }
                i += 1;
                TokenKind::Ident(text[start + 1..i - 1].to_string())
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i = scan_number(bytes, i);
                TokenKind::Number(text[start..i].to_string())
            }
            b'.' => {
                i += 1;
                TokenKind::Dot
            }
            b'0'..=b'9' => {
                i = scan_number(bytes, i);
                // identifiers such as 3d_model start with a digit
                if bytes
                    .get(i)
                    .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_')
                {
                    while i < bytes.len() && is_ident_byte(bytes[i]) {
                        i += 1;
                    }
                    TokenKind::Ident(text[start..i].to_string())
                } else {
                    TokenKind::Number(text[start..i].to_string())
                }
            }
            _ if is_ident_byte(c) || c >= 0x80 => {
                while i < bytes.len() && (is_ident_byte(bytes[i]) || bytes[i] >= 0x80) {
                    i += 1;
                }
                TokenKind::Ident(text[start..i].to_string())
            }
            _ => {
                return Err(SqlError::parse(
                    start,
                    format!(
                        "unexpected character '{}'",
                        text[start..].chars().next().unwrap_or('?')
                    ),
                ))
            }
        };
        tokens.push(Token { kind, pos: start });
    }
    Ok(tokens)
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn operators_and_literals() {
        assert_eq!(
            kinds("a<>'x''y' >= 1.5"),
            vec![
                TokenKind::Ident("a".into()),
                TokenKind::Ne,
                TokenKind::Str("'x''y'".into()),
                TokenKind::Ge,
                TokenKind::Number("1.5".into()),
            ]
        );
    }

    #[test]
    fn qualified_column() {
        assert_eq!(
            kinds("T1.name"),
            vec![
                TokenKind::Ident("T1".into()),
                TokenKind::Dot,
                TokenKind::Ident("name".into())
            ]
        );
    }

    #[test]
    fn unterminated_string_reports_start() {
        let err = tokenize("select 'abc").unwrap_err();
        assert!(matches!(err, SqlError::Parse { position: 7, .. }));
    }
}
