//! Seeded generator of one- and two-step arithmetic word problems whose
//! rationales show every intermediate result.

use crate::corpus::{Letter, Problem};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 10] = ["Tom", "Ann", "Raj", "Mia", "Leo", "Sara", "Ben", "Kim", "Omar", "Eva"];
const ITEMS: [&str; 8] = ["apples", "pens", "books", "cards", "stamps", "coins", "shells", "toys"];

/// Arithmetic shape of a generated problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    Add,
    Sub,
    Mul,
    Div,
    MulAdd,
    AddMul,
    SubDiv,
}

impl Template {
    pub const ALL: [Template; 7] =
        [Template::Add, Template::Sub, Template::Mul, Template::Div, Template::MulAdd, Template::AddMul, Template::SubDiv];

    pub fn steps(self) -> usize {
        match self {
            Template::Add | Template::Sub | Template::Mul | Template::Div => 1,
            _ => 2,
        }
    }
}

/// Question, rationale lines and answer value before options are attached.
struct Draft {
    question: String,
    steps: Vec<String>,
    answer: i64,
}

fn draft(t: Template, rng: &mut ChaCha8Rng) -> Draft {
    let name = *NAMES.choose(rng).unwrap();
    let item = *ITEMS.choose(rng).unwrap();
    match t {
        Template::Add => {
            let (a, b) = (rng.gen_range(2..60), rng.gen_range(2..60));
            Draft {
                question: format!("{name} has {a} {item} and gets {b} more . How many {item} does {name} have now ?"),
                steps: vec![format!("{a} + {b} = {}", a + b)],
                answer: a + b,
            }
        }
        Template::Sub => {
            let b = rng.gen_range(2..40);
            let a = b + rng.gen_range(2..50);
            Draft {
                question: format!("{name} had {a} {item} and gave away {b} of them . How many {item} are left ?"),
                steps: vec![format!("{a} - {b} = {}", a - b)],
                answer: a - b,
            }
        }
        Template::Mul => {
            let (a, b) = (rng.gen_range(2..13), rng.gen_range(2..13));
            Draft {
                question: format!("{name} buys {a} boxes with {b} {item} in each box . How many {item} are there in total ?"),
                steps: vec![format!("{a} * {b} = {}", a * b)],
                answer: a * b,
            }
        }
        Template::Div => {
            let (q, b) = (rng.gen_range(2..13), rng.gen_range(2..10));
            let a = q * b;
            Draft {
                question: format!("{name} shares {a} {item} equally among {b} friends . How many {item} does each friend get ?"),
                steps: vec![format!("{a} / {b} = {q}")],
                answer: q,
            }
        }
        Template::MulAdd => {
            let (a, b, c) = (rng.gen_range(2..10), rng.gen_range(2..13), rng.gen_range(2..30));
            let p = a * b;
            Draft {
                question: format!(
                    "{name} packs {a} bags with {b} {item} each and has {c} loose {item} . How many {item} does {name} have ?"
                ),
                steps: vec![format!("{a} * {b} = {p}"), format!("{p} + {c} = {}", p + c)],
                answer: p + c,
            }
        }
        Template::AddMul => {
            let (a, b, c) = (rng.gen_range(2..20), rng.gen_range(2..20), rng.gen_range(2..8));
            let s = a + b;
            Draft {
                question: format!(
                    "{name} collects {a} {item} in the morning and {b} {item} in the evening . How many {item} after {c} days ?"
                ),
                steps: vec![format!("{a} + {b} = {s}"), format!("{s} * {c} = {}", s * c)],
                answer: s * c,
            }
        }
        Template::SubDiv => {
            let (c, q) = (rng.gen_range(2..7), rng.gen_range(2..12));
            let b = rng.gen_range(2..30);
            let a = c * q + b;
            Draft {
                question: format!(
                    "{name} had {a} {item} , lost {b} and split the rest among {c} jars . How many {item} are in each jar ?"
                ),
                steps: vec![format!("{a} - {b} = {}", a - b), format!("{} / {c} = {q}", a - b)],
                answer: q,
            }
        }
    }
}

/// Four distinct positive distractors near `answer`.
fn distractors(answer: i64, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let mut out: Vec<i64> = Vec::with_capacity(4);
    while out.len() < 4 {
        let d = rng.gen_range(1..=(answer / 2).max(6));
        let v = if rng.gen_bool(0.5) { answer + d } else { answer - d };
        if v > 0 && v != answer && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// One problem drawn from `t`. Rationales end with "Answer is L".
pub fn generate_one(t: Template, rng: &mut ChaCha8Rng) -> Problem {
    let d = draft(t, rng);
    let correct = Letter::ALL[rng.gen_range(0..5)];
    let mut values = distractors(d.answer, rng);
    values.insert(correct.index(), d.answer);
    let options: [String; 5] = std::array::from_fn(|i| format!("{}) {}", Letter::ALL[i], values[i]));
    let rationale = format!("{}\nAnswer is {correct}", d.steps.join(" .\n"));
    Problem::new(d.question, options, rationale, correct).expect("generated problem is valid")
}

/// `n` problems cycling through all templates, reproducible from `seed`.
pub fn generate(n: usize, seed: u64) -> Vec<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| generate_one(Template::ALL[i % Template::ALL.len()], &mut rng)).collect()
}
