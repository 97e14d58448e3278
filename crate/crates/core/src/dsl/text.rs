//! Parsing of the one-instruction-per-line program format produced by
//! `Display for Program`.

use super::{ArgSource, Dest, Instruction, OperationId, Program};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseProgramError {
    pub line: usize,
    pub message: String,
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn eat(&mut self, tok: &str) -> Result<(), String> {
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            Ok(())
        } else {
            Err(format!("expected {tok:?} at column {}", self.pos + 1))
        }
    }

    fn index(&mut self) -> Result<usize, String> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        let n = self.rest()[..digits]
            .parse()
            .map_err(|_| format!("expected an index at column {}", self.pos + 1))?;
        self.pos += digits;
        Ok(n)
    }

    fn string_literal(&mut self) -> Result<String, String> {
        let bytes = self.rest().as_bytes();
        let mut i = 1;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'"' => {
                    let lit = &self.rest()[..=i];
                    let s = serde_json::from_str(lit).map_err(|e| format!("bad literal {lit}: {e}"))?;
                    self.pos += i + 1;
                    return Ok(s);
                }
                _ => i += 1,
            }
        }
        Err("unterminated string literal".to_string())
    }

    fn arg(&mut self) -> Result<ArgSource, String> {
        match self.rest().as_bytes().first() {
            Some(b'"') => self.string_literal().map(ArgSource::Vocab),
            Some(b'x') => {
                self.eat("x[")?;
                let k = self.index()?;
                self.eat("]")?;
                Ok(ArgSource::CopyInput(k))
            }
            Some(b'z') => {
                self.eat("z[")?;
                let j = self.index()?;
                self.eat("]")?;
                Ok(ArgSource::CopyOutput(j))
            }
            _ => Err(format!("expected an argument at column {}", self.pos + 1)),
        }
    }
}

impl FromStr for Instruction {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let (dest, rest) = line.split_once(' ').ok_or("missing destination")?;
        let dest = match dest {
            "OUTPUT" => Dest::Output,
            "MEMORY" => Dest::Memory,
            d => return Err(format!("unknown destination {d:?}")),
        };
        let (op, _) = rest.split_once('(').ok_or("missing '('")?;
        let op = OperationId::from_str(op).map_err(|e| e.to_string())?;
        let mut c = Cursor { s: rest, pos: op.name().len() + 1 };
        let mut args = Vec::new();
        for i in 0..op.arity() {
            if i > 0 {
                c.eat(", ")?;
            }
            args.push(c.arg()?);
        }
        c.eat(")")?;
        if !c.rest().is_empty() {
            return Err(format!("trailing text {:?}", c.rest()));
        }
        Ok(Instruction { op, args, dest })
    }
}

impl FromStr for Program {
    type Err = ParseProgramError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Ok(Program::default());
        }
        body.split('\n')
            .enumerate()
            .map(|(i, l)| l.parse().map_err(|message| ParseProgramError { line: i + 1, message }))
            .collect::<Result<Vec<_>, _>>()
            .map(Program::new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::program::tests::table2_program;
    use proptest::prelude::*;

    #[test]
    fn prints_expected_lines() {
        let text = table2_program().to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"OUTPUT Id("Let")"#);
        assert_eq!(lines[7], r#"OUTPUT Id("\n")"#);
        assert_eq!(lines[14], "MEMORY StrToFloat(x[4])");
        assert_eq!(lines[20], "MEMORY Choose(z[14], z[19])");
    }

    #[test]
    fn table2_round_trips() {
        let prog = table2_program();
        let text = prog.to_string();
        let back: Program = text.parse().unwrap();
        assert_eq!(back, prog);
        assert_eq!(back.to_string(), text);
        assert_eq!("".parse::<Program>().unwrap(), Program::default());
    }

    #[test]
    fn rejects_malformed() {
        for (bad, line) in [
            ("OUTPUT Id(\"a\")\nOUTPUT Foo(x[1])", 2),
            ("SOMEWHERE Id(\"a\")", 1),
            ("OUTPUT Add(x[1])", 1),
            ("OUTPUT Id(x[1]) extra", 1),
            ("OUTPUT Id(\"open)", 1),
            ("OUTPUT Id(y[1])", 1),
        ] {
            let err = bad.parse::<Program>().unwrap_err();
            assert_eq!(err.line, line, "{bad}");
        }
    }

    fn arb_arg() -> impl Strategy<Value = ArgSource> {
        prop_oneof![
            any::<String>().prop_map(ArgSource::Vocab),
            "[a-z\"\\\\, ()\\[\\]\n\t]{0,6}".prop_map(ArgSource::Vocab),
            any::<usize>().prop_map(ArgSource::CopyInput),
            any::<usize>().prop_map(ArgSource::CopyOutput),
        ]
    }

    proptest! {
        #[test]
        fn parse_print_identity(
            instrs in prop::collection::vec(
                (prop::sample::select(OperationId::ALL.to_vec()), arb_arg(), arb_arg(), any::<bool>()),
                0..8,
            )
        ) {
            let prog = Program::new(instrs.into_iter().map(|(op, a, b, o)| {
                let args = [a, b].into_iter().take(op.arity()).collect();
                Instruction::new(op, args, if o { Dest::Output } else { Dest::Memory })
            }).collect());
            let text = prog.to_string();
            let back: Program = text.parse().unwrap();
            prop_assert_eq!(back.to_string(), text);
            prop_assert_eq!(back, prog);
        }
    }
}
