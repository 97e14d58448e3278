use super::format::{float_to_fraction, float_to_thousands, format_float};
use super::{DslError, Value};
use crate::corpus::{numeric_form, tokenize, Letter, NumericForm, Token};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Base of the `Log` operation.
pub const LOG_BASE: f64 = 10.0;

/// Factorial/Choose accept arguments this close to a nonnegative integer.
const INTEGER_TOL: f64 = 1e-6;
/// Largest argument whose factorial is finite in f64.
const MAX_FACTORIAL: u32 = 170;
/// Relative tolerance when `Check` compares numbers.
const CHECK_REL_TOL: f64 = 1e-6;

macro_rules! operations {
    ($($name:ident = $arity:expr),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum OperationId { $($name),* }

        impl OperationId {
            pub const ALL: [OperationId; 22] = [$(OperationId::$name),*];

            pub fn name(self) -> &'static str {
                match self { $(OperationId::$name => stringify!($name)),* }
            }

            /// Number of arguments the operation takes.
            pub fn arity(self) -> usize {
                match self { $(OperationId::$name => $arity),* }
            }
        }
    };
}

operations! {
    Id = 1,
    Add = 2,
    Subtract = 2,
    Multiply = 2,
    Divide = 2,
    Power = 2,
    Log = 1,
    Sqrt = 1,
    Sine = 1,
    Cosine = 1,
    Tangent = 1,
    Factorial = 1,
    Choose = 2,
    Radians = 1,
    Degrees = 1,
    StrToFloat = 1,
    FloatToStr = 1,
    FractionToFloat = 1,
    FloatToFraction = 1,
    ThousandsToFloat = 1,
    FloatToThousands = 1,
    Check = 1,
}

pub fn arity(op: OperationId) -> usize {
    op.arity()
}

impl OperationId {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Numeric operations whose use counts toward the hidden-instruction depth.
    pub fn is_arithmetic(self) -> bool {
        use OperationId::*;
        matches!(
            self,
            Add | Subtract
                | Multiply
                | Divide
                | Power
                | Log
                | Sqrt
                | Sine
                | Cosine
                | Tangent
                | Factorial
                | Choose
                | Radians
                | Degrees
        )
    }

    /// Str -> Num parsers.
    pub fn is_parser(self) -> bool {
        use OperationId::*;
        matches!(self, StrToFloat | FractionToFloat | ThousandsToFloat)
    }

    /// Num -> Str renderers.
    pub fn is_formatter(self) -> bool {
        use OperationId::*;
        matches!(self, FloatToStr | FloatToFraction | FloatToThousands)
    }

    /// The parser accepting surfaces of the given shape.
    pub fn parser_for(form: NumericForm) -> OperationId {
        match form {
            NumericForm::Plain => OperationId::StrToFloat,
            NumericForm::Fraction => OperationId::FractionToFloat,
            NumericForm::Grouped => OperationId::ThousandsToFloat,
        }
    }

    /// The renderer producing surfaces of the given shape.
    pub fn formatter_for(form: NumericForm) -> OperationId {
        match form {
            NumericForm::Plain => OperationId::FloatToStr,
            NumericForm::Fraction => OperationId::FloatToFraction,
            NumericForm::Grouped => OperationId::FloatToThousands,
        }
    }
}

impl fmt::Display for OperationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperationId {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperationId::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| DslError::UnknownOperation(s.to_string()))
    }
}

/// The five answer options, pre-tokenized for `Check`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerOptions {
    texts: [String; 5],
    tokens: [Vec<Token>; 5],
}

fn strip_label(text: &str) -> &str {
    let t = text.trim_start();
    let mut cs = t.chars();
    match (cs.next(), cs.next()) {
        (Some('A'..='E'), Some(')')) => &t[2..],
        _ => t,
    }
}

impl AnswerOptions {
    pub fn new(texts: &[String; 5]) -> Self {
        let tokens = std::array::from_fn(|i| tokenize(strip_label(&texts[i])));
        AnswerOptions { texts: texts.clone(), tokens }
    }

    pub fn texts(&self) -> &[String; 5] {
        &self.texts
    }

    fn contains(&self, i: usize, needle: &str, needle_value: Option<f64>) -> bool {
        self.tokens[i].iter().any(|t| match (needle_value, t.value) {
            (Some(a), Some(b)) => {
                a == b || (a - b).abs() <= CHECK_REL_TOL * a.abs().max(b.abs())
            }
            (None, _) => t.surface == needle,
            (Some(_), None) => false,
        })
    }

    /// Letter of the unique option containing `candidate` as a token.
    pub fn check(&self, candidate: &str) -> Result<Letter, DslError> {
        let value = numeric_form(candidate).map(|(_, v)| v);
        let hits: Vec<usize> = (0..5).filter(|&i| self.contains(i, candidate, value)).collect();
        match hits.as_slice() {
            [i] => Ok(Letter::from_index(*i).expect("five options")),
            [] => Err(DslError::CheckNoMatch(candidate.to_string())),
            _ => Err(DslError::CheckAmbiguous(candidate.to_string(), hits.len())),
        }
    }
}

fn num(op: OperationId, v: &Value) -> Result<f64, DslError> {
    match v {
        Value::Num(x) => Ok(*x),
        Value::Str(_) => Err(DslError::TypeMismatch { op, expected: "Num" }),
    }
}

fn text(op: OperationId, v: &Value) -> Result<&str, DslError> {
    match v {
        Value::Str(s) => Ok(s),
        Value::Num(_) => Err(DslError::TypeMismatch { op, expected: "Str" }),
    }
}

fn domain(op: OperationId, reason: impl Into<String>) -> DslError {
    DslError::Domain { op, reason: reason.into() }
}

fn small_integer(op: OperationId, x: f64) -> Result<u32, DslError> {
    let r = x.round();
    if (x - r).abs() > INTEGER_TOL || r < 0.0 || r > MAX_FACTORIAL as f64 {
        return Err(domain(op, format!("{x} is not an integer in [0, {MAX_FACTORIAL}]")));
    }
    Ok(r as u32)
}

fn choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 1..=k {
        acc = acc * (n - k + i) as f64 / i as f64;
    }
    if acc < 9.0e15 {
        acc.round()
    } else {
        acc
    }
}

fn parse_as(op: OperationId, form: NumericForm, s: &str) -> Result<f64, DslError> {
    match numeric_form(s) {
        Some((f, v)) if f == form => Ok(v),
        _ => Err(DslError::Parse { op, text: s.to_string() }),
    }
}

/// Applies one operation. Arithmetic takes and returns `Num`; conversions
/// move between `Str` and `Num`; `Check` maps a candidate answer to its
/// option letter.
pub fn apply_operation(
    op: OperationId,
    args: &[Value],
    options: &AnswerOptions,
) -> Result<Value, DslError> {
    use OperationId::*;
    if args.len() != op.arity() {
        return Err(DslError::Arity { op, expected: op.arity(), found: args.len() });
    }
    let a = &args[0];
    let out = match op {
        Id => return Ok(a.clone()),
        Add => num(op, a)? + num(op, &args[1])?,
        Subtract => num(op, a)? - num(op, &args[1])?,
        Multiply => num(op, a)? * num(op, &args[1])?,
        Divide => {
            let d = num(op, &args[1])?;
            let n = num(op, a)?;
            if d == 0.0 {
                return Err(domain(op, "division by zero"));
            }
            n / d
        }
        Power => num(op, a)?.powf(num(op, &args[1])?),
        Log => {
            let x = num(op, a)?;
            if x <= 0.0 {
                return Err(domain(op, format!("log of non-positive {x}")));
            }
            if LOG_BASE == 10.0 {
                x.log10()
            } else {
                x.log(LOG_BASE)
            }
        }
        Sqrt => {
            let x = num(op, a)?;
            if x < 0.0 {
                return Err(domain(op, format!("sqrt of negative {x}")));
            }
            x.sqrt()
        }
        Sine => num(op, a)?.sin(),
        Cosine => num(op, a)?.cos(),
        Tangent => num(op, a)?.tan(),
        Factorial => {
            let n = small_integer(op, num(op, a)?)?;
            (1..=n).fold(1.0, |acc, i| acc * i as f64)
        }
        Choose => {
            let n = small_integer(op, num(op, a)?)?;
            let k = small_integer(op, num(op, &args[1])?)?;
            if k > n {
                return Err(domain(op, format!("choose({n}, {k}) with k > n")));
            }
            choose(n, k)
        }
        Radians => num(op, a)?.to_radians(),
        Degrees => num(op, a)?.to_degrees(),
        StrToFloat => parse_as(op, NumericForm::Plain, text(op, a)?)?,
        FractionToFloat => parse_as(op, NumericForm::Fraction, text(op, a)?)?,
        ThousandsToFloat => parse_as(op, NumericForm::Grouped, text(op, a)?)?,
        FloatToStr => return Ok(Value::Str(format_float(num(op, a)?))),
        FloatToFraction => {
            let x = num(op, a)?;
            return float_to_fraction(x)
                .map(Value::Str)
                .ok_or_else(|| domain(op, format!("no fraction with denominator <= 10^4 for {x}")));
        }
        FloatToThousands => {
            let x = num(op, a)?;
            return float_to_thousands(x)
                .map(Value::Str)
                .ok_or_else(|| domain(op, format!("{x} has no thousands group")));
        }
        Check => return Ok(Value::Str(options.check(text(op, a)?)?.to_string())),
    };
    Value::num(out).map_err(|_| domain(op, format!("non-finite result {out}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn problem2_options() -> AnswerOptions {
        AnswerOptions::new(&["A) 2/1223", "B) 1/122", "C) 1/221", "D) 3/1253", "E) 2/153"].map(String::from))
    }

    fn n(v: f64) -> Value {
        Value::Num(v)
    }

    fn s(v: &str) -> Value {
        Value::Str(v.to_string())
    }

    fn run(op: OperationId, args: &[Value]) -> Result<Value, DslError> {
        apply_operation(op, args, &problem2_options())
    }

    #[test]
    fn arities() {
        assert_eq!(arity(OperationId::Add), 2);
        assert_eq!(arity(OperationId::Log), 1);
        assert_eq!(arity(OperationId::Choose), 2);
        let binary = OperationId::ALL.iter().filter(|o| o.arity() == 2).count();
        assert_eq!(binary, 6);
        assert_eq!(OperationId::ALL.len(), 22);
    }

    #[test]
    fn worked_example_values() {
        assert_eq!(run(OperationId::Choose, &[n(52.0), n(2.0)]).unwrap(), n(1326.0));
        assert_eq!(run(OperationId::Choose, &[n(4.0), n(2.0)]).unwrap(), n(6.0));
        let p = run(OperationId::Divide, &[n(6.0), n(1326.0)]).unwrap();
        assert!(matches!(p, Value::Num(v) if (v - 0.004524886877828).abs() < 1e-12));
        assert_eq!(run(OperationId::FloatToFraction, &[p]).unwrap(), s("1/221"));
        assert_eq!(run(OperationId::Check, &[s("1/221")]).unwrap(), s("C"));
    }

    #[test]
    fn identities() {
        assert_eq!(run(OperationId::Id, &[s("Let")]).unwrap(), s("Let"));
        assert_eq!(run(OperationId::Factorial, &[n(0.0)]).unwrap(), n(1.0));
        assert_eq!(run(OperationId::Sine, &[n(0.0)]).unwrap(), n(0.0));
        assert_eq!(run(OperationId::Radians, &[n(180.0)]).unwrap(), n(PI));
        assert_eq!(
            run(OperationId::FloatToThousands, &[n(1_000_000.0)]).unwrap(),
            s("1,000,000")
        );
        assert_eq!(run(OperationId::Log, &[n(1000.0)]).unwrap(), n(3.0));
    }

    #[test]
    fn domain_errors() {
        use OperationId::*;
        for (op, args) in [
            (Divide, vec![n(1.0), n(0.0)]),
            (Log, vec![n(0.0)]),
            (Log, vec![n(-1.0)]),
            (Sqrt, vec![n(-4.0)]),
            (Factorial, vec![n(2.5)]),
            (Factorial, vec![n(-1.0)]),
            (Factorial, vec![n(171.0)]),
            (Choose, vec![n(2.0), n(5.0)]),
            (Power, vec![n(-8.0), n(1.0 / 3.0)]),
            (Power, vec![n(10.0), n(400.0)]),
        ] {
            assert!(matches!(run(op, &args), Err(DslError::Domain { .. })), "{op} {args:?}");
        }
    }

    #[test]
    fn type_and_parse_errors() {
        use OperationId::*;
        assert!(matches!(run(Add, &[s("1"), n(2.0)]), Err(DslError::TypeMismatch { .. })));
        assert!(matches!(run(StrToFloat, &[s("abc")]), Err(DslError::Parse { .. })));
        assert!(matches!(run(StrToFloat, &[s("3/4")]), Err(DslError::Parse { .. })));
        assert!(matches!(run(FractionToFloat, &[s("3/4")]), Ok(Value::Num(v)) if v == 0.75));
        assert!(matches!(run(ThousandsToFloat, &[s("1,250")]), Ok(Value::Num(v)) if v == 1250.0));
        assert!(matches!(run(Check, &[n(1.0)]), Err(DslError::TypeMismatch { .. })));
        assert!(matches!(run(Add, &[n(1.0)]), Err(DslError::Arity { .. })));
    }

    #[test]
    fn check_never_guesses() {
        let opts = AnswerOptions::new(&["A) 12", "B) 12", "C) 7", "D) 9", "E) 3/4"].map(String::from));
        assert!(matches!(opts.check("12"), Err(DslError::CheckAmbiguous(_, 2))));
        assert!(matches!(opts.check("100"), Err(DslError::CheckNoMatch(_))));
        assert_eq!(opts.check("0.75").unwrap(), Letter::E);
        assert_eq!(opts.check("7.0000001").unwrap(), Letter::C);
        // the label itself is not part of the option
        assert!(opts.check("A").is_err());
    }

    proptest! {
        #[test]
        fn successful_results_are_finite(
            op in proptest::sample::select(OperationId::ALL.to_vec()),
            a in prop_oneof![-1e3f64..1e3, (0u32..30).prop_map(f64::from)],
            b in prop_oneof![-20f64..20.0, (0u32..30).prop_map(f64::from)],
        ) {
            let args: Vec<Value> = [n(a), n(b)].into_iter().take(op.arity()).collect();
            if let Ok(Value::Num(v)) = run(op, &args) {
                prop_assert!(v.is_finite());
            }
        }

        #[test]
        fn fraction_round_trip(a in 1u64..=10_000, b in 2u64..=10_000) {
            let g = { let (mut x, mut y) = (a, b); while y != 0 { (x, y) = (y, x % y); } x };
            prop_assume!(g == 1);
            let text = format!("{a}/{b}");
            let v = run(OperationId::FractionToFloat, &[s(&text)]).unwrap();
            prop_assert_eq!(run(OperationId::FloatToFraction, &[v]).unwrap(), s(&text));
        }

        #[test]
        fn thousands_round_trip(v in 1000i64..1_000_000_000_000_000i64, neg in any::<bool>()) {
            let v = if neg { -(v as f64) } else { v as f64 };
            let t = run(OperationId::FloatToThousands, &[n(v)]).unwrap();
            prop_assert_eq!(run(OperationId::ThousandsToFloat, &[t]).unwrap(), n(v));
        }

        #[test]
        fn degrees_inverts_radians(d in -360.0f64..360.0) {
            let r = run(OperationId::Radians, &[n(d)]).unwrap();
            let back = run(OperationId::Degrees, &[r]).unwrap();
            prop_assert!(matches!(back, Value::Num(x) if (x - d).abs() <= 1e-9));
        }
    }
}
