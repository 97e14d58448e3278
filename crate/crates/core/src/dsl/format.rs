//! Float formatting used by the string-producing conversion operations.

use crate::corpus::lex_numeric;

/// Largest denominator `float_to_fraction` will search.
pub const MAX_DENOMINATOR: u64 = 10_000;

const ROUND_TRIP_REL: f64 = 1e-9;
const INTEGER_ABS: f64 = 1e-9;

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Expands a `d.ddde±x` string into plain positional notation.
fn expand_scientific(s: &str) -> String {
    let (mantissa, exp) = s.split_once('e').expect("scientific form");
    let exp: i32 = exp.parse().expect("exponent");
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    // position of the decimal point relative to the start of `digits`
    let point = 1 + exp;
    let mut body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        let (a, b) = digits.split_at(point as usize);
        format!("{a}.{b}")
    };
    if body.contains('.') {
        while body.ends_with('0') {
            body.pop();
        }
        if body.ends_with('.') {
            body.pop();
        }
    }
    if neg && body != "0" {
        format!("-{body}")
    } else {
        body
    }
}

/// Renders a finite float as a rationale token.
///
/// Values within 1e-9 of an integer print as that integer. Anything else gets
/// the fewest significant digits whose plain decimal rendering lexes back to
/// within 1e-9 relative of the input.
pub fn format_float(v: f64) -> String {
    debug_assert!(v.is_finite(), "format_float on non-finite {v}");
    let r = v.round();
    if (v - r).abs() <= INTEGER_ABS {
        let s = format!("{r:.0}");
        return if s == "-0" { "0".to_string() } else { s };
    }
    for sig in 1..=17 {
        let s = expand_scientific(&format!("{:.*e}", sig - 1, v));
        if let Some(back) = lex_numeric(&s) {
            if rel_err(back, v) <= ROUND_TRIP_REL {
                return s;
            }
        }
    }
    expand_scientific(&format!("{v:e}"))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Lowest-terms `p/q` with `2 <= q <= MAX_DENOMINATOR` within 1e-9 relative of `v`.
pub fn float_to_fraction(v: f64) -> Option<String> {
    if !v.is_finite() {
        return None;
    }
    let mag = v.abs();
    if (mag - mag.round()).abs() <= INTEGER_ABS {
        return None;
    }
    for q in 2..=MAX_DENOMINATOR {
        let p = (mag * q as f64).round();
        if p > 9.0e15 {
            return None;
        }
        if rel_err(p / q as f64, mag) <= ROUND_TRIP_REL {
            let p = p as u64;
            debug_assert_eq!(gcd(p, q), 1);
            let sign = if v < 0.0 { "-" } else { "" };
            return Some(format!("{sign}{p}/{q}"));
        }
    }
    None
}

/// Comma-groups the integer part of `format_float(v)`; requires `|v| >= 1000`.
pub fn float_to_thousands(v: f64) -> Option<String> {
    if !v.is_finite() || v.abs() < 1000.0 {
        return None;
    }
    let plain = format_float(v);
    let (sign, rest) = match plain.strip_prefix('-') {
        Some(r) => ("-", r),
        None => ("", plain.as_str()),
    };
    let (int, frac) = match rest.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (rest, None),
    };
    let mut grouped = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    Some(match frac {
        Some(f) => format!("{sign}{grouped}.{f}"),
        None => format!("{sign}{grouped}"),
    })
}
