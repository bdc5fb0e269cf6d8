use super::{AgentCommand, Direction, Distance, ProxyError};

#[derive(Debug, Clone, PartialEq)]
enum Arg {
    Int(i64),
    Word(String),
    Str(String),
}

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.char_indices().collect(),
            pos: 0,
            src,
        }
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.src.len(), |c| c.0)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        self.pos += 1;
        c
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn err(&self, message: impl Into<String>) -> ProxyError {
        ProxyError::Parse {
            position: self.offset(),
            message: message.into(),
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ProxyError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{want}'")))
        }
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.pos += 1;
            } else {
                break;
            }
        }
        s
    }

    fn string(&mut self, quote: char) -> Result<String, ProxyError> {
        let start = self.offset();
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(ProxyError::Parse {
                        position: start,
                        message: "unterminated string".into(),
                    })
                }
                Some(c) if c == quote => return Ok(out),
                Some('\\') => {
                    let at = self.offset();
                    let esc = self.bump().ok_or_else(|| self.err("dangling escape"))?;
                    match esc {
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        '0' => out.push('\0'),
                        '\\' | '"' | '\'' | '/' => out.push(esc),
                        'u' => {
                            let mut hex = String::new();
                            for _ in 0..4 {
                                hex.push(self.bump().ok_or_else(|| self.err("short \\u escape"))?);
                            }
                            let c = u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or(ProxyError::Parse {
                                    position: at,
                                    message: format!("bad unicode escape \\u{hex}"),
                                })?;
                            out.push(c);
                        }
                        other => {
                            return Err(ProxyError::Parse {
                                position: at,
                                message: format!("unknown escape \\{other}"),
                            })
                        }
                    }
                }
                Some(c) => out.push(c),
            }
        }
    }

    fn arg(&mut self) -> Result<(usize, Arg), ProxyError> {
        let at = self.offset();
        match self.peek() {
            Some(q @ ('"' | '\'')) => Ok((at, Arg::Str(self.string(q)?))),
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' => {
                let mut s = String::new();
                s.push(c);
                self.pos += 1;
                while let Some(d) = self.peek().filter(char::is_ascii_digit) {
                    s.push(d);
                    self.pos += 1;
                }
                s.parse::<i64>()
                    .map(|n| (at, Arg::Int(n)))
                    .map_err(|_| ProxyError::Parse {
                        position: at,
                        message: format!("bad integer {s:?}"),
                    })
            }
            Some(c) if c.is_ascii_alphabetic() => Ok((at, Arg::Word(self.ident()))),
            _ => Err(self.err("expected argument")),
        }
    }
}

fn index_arg(at: usize, arg: &Arg) -> Result<usize, ProxyError> {
    match arg {
        Arg::Int(n) if *n >= 0 => Ok(*n as usize),
        Arg::Int(n) => Err(ProxyError::Parse {
            position: at,
            message: format!("index must be non-negative, got {n}"),
        }),
        _ => Err(ProxyError::Parse {
            position: at,
            message: "expected integer index".into(),
        }),
    }
}

fn word_arg(at: usize, arg: &Arg) -> Result<String, ProxyError> {
    match arg {
        Arg::Word(w) | Arg::Str(w) => Ok(w.to_ascii_lowercase()),
        Arg::Int(_) => Err(ProxyError::Parse {
            position: at,
            message: "expected word".into(),
        }),
    }
}

fn string_arg(at: usize, arg: &Arg) -> Result<String, ProxyError> {
    match arg {
        Arg::Str(s) => Ok(s.clone()),
        _ => Err(ProxyError::Parse {
            position: at,
            message: "expected quoted string".into(),
        }),
    }
}

fn arity(name: &str, expected: &'static str, got: usize) -> ProxyError {
    ProxyError::Arity {
        command: name.to_string(),
        expected,
        got,
    }
}

/// Parses `name(arg, ...)`.
pub fn parse_command(raw: &str) -> Result<AgentCommand, ProxyError> {
    let mut cur = Cursor::new(raw);
    cur.skip_ws();
    let name = cur.ident();
    if name.is_empty() {
        return Err(cur.err("expected command name"));
    }
    cur.skip_ws();
    cur.expect('(')?;
    let mut args = Vec::new();
    cur.skip_ws();
    if cur.peek() != Some(')') {
        loop {
            cur.skip_ws();
            args.push(cur.arg()?);
            cur.skip_ws();
            match cur.peek() {
                Some(',') => cur.pos += 1,
                Some(')') => break,
                _ => return Err(cur.err("expected ',' or ')'")),
            }
        }
    }
    cur.expect(')')?;
    cur.skip_ws();
    if cur.peek().is_some() {
        return Err(cur.err("trailing input after command"));
    }

    let lname = name.to_ascii_lowercase();
    let n = args.len();
    let cmd = match lname.as_str() {
        "tap" | "long_press" => {
            if n != 1 {
                return Err(arity(&lname, "1", n));
            }
            let index = index_arg(args[0].0, &args[0].1)?;
            if lname == "tap" {
                AgentCommand::Tap { index }
            } else {
                AgentCommand::LongPress { index }
            }
        }
        "swipe" => {
            if n != 3 {
                return Err(arity(&lname, "3", n));
            }
            let index = index_arg(args[0].0, &args[0].1)?;
            let d = word_arg(args[1].0, &args[1].1)?;
            let direction = match d.as_str() {
                "up" => Direction::Up,
                "down" => Direction::Down,
                "left" => Direction::Left,
                "right" => Direction::Right,
                _ => {
                    return Err(ProxyError::Parse {
                        position: args[1].0,
                        message: format!("unknown direction {d:?}"),
                    })
                }
            };
            let d = word_arg(args[2].0, &args[2].1)?;
            let distance = match d.as_str() {
                "short" => Distance::Short,
                "medium" => Distance::Medium,
                "long" => Distance::Long,
                _ => {
                    return Err(ProxyError::Parse {
                        position: args[2].0,
                        message: format!("unknown distance {d:?}"),
                    })
                }
            };
            AgentCommand::Swipe {
                index,
                direction,
                distance,
            }
        }
        "type" => {
            if n != 1 {
                return Err(arity(&lname, "1", n));
            }
            AgentCommand::Type {
                text: string_arg(args[0].0, &args[0].1)?,
            }
        }
        "back" | "home" => {
            if n != 0 {
                return Err(arity(&lname, "0", n));
            }
            if lname == "back" {
                AgentCommand::Back
            } else {
                AgentCommand::Home
            }
        }
        "finish" => match n {
            0 => AgentCommand::Finish { answer: None },
            1 => AgentCommand::Finish {
                answer: Some(string_arg(args[0].0, &args[0].1)?),
            },
            _ => return Err(arity(&lname, "0 or 1", n)),
        },
        _ => return Err(ProxyError::UnknownCommand(name)),
    };
    Ok(cmd)
}
