//! Synthetic programming problems, their section-annotated prompts and
//! execution-based pass/fail labeling.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::expr::{self, BinOp, Expr};
use super::vocab::{self, TokenId, BOS, EOS};
use crate::rng;

pub const TESTS_PER_PROBLEM: usize = 3;
pub const MIN_DIFFICULTY: u8 = 1;
pub const MAX_DIFFICULTY: u8 = 4;
/// Probability that a problem statement carries the `hastily` register.
pub const HASTY_RATE: f64 = 0.25;

/// Register word in the problem statement. In the language-model training
/// corpus, `Hastily` problems are paired with subtly wrong reference solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Carefully,
    Hastily,
}

impl Style {
    fn token(self) -> TokenId {
        match self {
            Style::Carefully => vocab::tok("carefully"),
            Style::Hastily => vocab::tok("hastily"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    #[serde(rename = "in")]
    pub input: i64,
    #[serde(rename = "out")]
    pub expected: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: u64,
    pub difficulty: u8,
    pub style: Style,
    pub function_name: String,
    pub description: Vec<TokenId>,
    pub tests: [TestCase; TESTS_PER_PROBLEM],
    /// Hidden reference expression the tests were computed from.
    pub target: Expr,
}

/// Generates problem `id` under `seed`. Difficulty is the number of chained
/// operations applied to `x` and is clamped to `[1, 4]`.
pub fn generate_problem(seed: u64, id: u64, difficulty: u8) -> ProblemSpec {
    let difficulty = difficulty.clamp(MIN_DIFFICULTY, MAX_DIFFICULTY);
    let mut rng = rng::rng_from(rng::keyed(seed, &[0x5052_4f42, id]));

    let style = if rng.gen_bool(HASTY_RATE) {
        Style::Hastily
    } else {
        Style::Carefully
    };
    let function_name = FUNCTION_NAMES_CHOICE[rng.gen_range(0..FUNCTION_NAMES_CHOICE.len())];

    let mut description = vec![
        vocab::tok("task"),
        vocab::tok(":"),
        style.token(),
        vocab::tok("start"),
        vocab::tok("with"),
        vocab::tok("x"),
    ];
    let mut target = Expr::X;
    for step in 0..difficulty {
        let use_x = rng.gen_bool(0.25);
        let op = [BinOp::Add, BinOp::Sub, BinOp::Mul][rng.gen_range(0..3)];
        let operand = if use_x {
            Expr::X
        } else if op == BinOp::Mul {
            Expr::Lit(rng.gen_range(2..=9))
        } else {
            Expr::Lit(rng.gen_range(1..=9))
        };
        description.push(vocab::tok(","));
        if step > 0 {
            description.push(vocab::tok("then"));
        }
        match op {
            BinOp::Add => description.push(vocab::tok("add")),
            BinOp::Sub => description.push(vocab::tok("subtract")),
            BinOp::Mul => description.extend([vocab::tok("multiply"), vocab::tok("by")]),
        }
        description.extend(operand.tokens());
        target = Expr::bin(op, target, operand);
    }

    let mut inputs: Vec<i64> = (0..10).collect();
    inputs.shuffle(&mut rng);
    let tests = [0, 1, 2].map(|i| {
        let input = inputs[i];
        TestCase {
            input,
            expected: target.eval(input).expect("generated targets stay small"),
        }
    });

    ProblemSpec {
        id,
        difficulty,
        style,
        function_name: function_name.to_string(),
        description,
        tests,
        target,
    }
}

const FUNCTION_NAMES_CHOICE: [&str; 4] = vocab::FUNCTION_NAMES;

/// Half-open token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpans {
    pub description: Span,
    pub tests: Span,
    pub initiator: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub problem_id: u64,
    pub tokens: Vec<TokenId>,
    pub spans: PromptSpans,
}

impl PromptBundle {
    pub fn final_index(&self) -> usize {
        self.tokens.len() - 1
    }
}

fn test_tokens(spec: &ProblemSpec) -> Vec<TokenId> {
    let name = vocab::tok(&spec.function_name);
    let mut out = Vec::new();
    for t in &spec.tests {
        out.extend([vocab::tok("assert"), name, vocab::tok("(")]);
        out.extend(vocab::integer_tokens(t.input));
        out.extend([vocab::tok(")"), vocab::tok("=")]);
        out.extend(vocab::integer_tokens(t.expected));
        out.push(vocab::tok(";"));
    }
    out
}

fn initiator_tokens(spec: &ProblemSpec) -> Vec<TokenId> {
    [
        "def",
        spec.function_name.as_str(),
        "(",
        "x",
        ")",
        ":",
        "return",
    ]
    .iter()
    .map(|t| vocab::tok(t))
    .collect()
}

/// `<bos>` followed by description, test cases and the code initiator.
pub fn render_prompt(spec: &ProblemSpec) -> PromptBundle {
    let mut tokens = vec![BOS];
    let mut section = |part: Vec<TokenId>| {
        let start = tokens.len();
        tokens.extend(part);
        Span {
            start,
            end: tokens.len(),
        }
    };
    let description = section(spec.description.clone());
    let tests = section(test_tokens(spec));
    let initiator = section(initiator_tokens(spec));
    PromptBundle {
        problem_id: spec.id,
        tokens,
        spans: PromptSpans {
            description,
            tests,
            initiator,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    ParseError,
    WrongValue,
    NoOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub problem_id: u64,
    pub generated_tokens: Vec<TokenId>,
    pub passed: bool,
    pub per_test: [bool; TESTS_PER_PROBLEM],
    pub failure_kind: FailureKind,
}

/// Runs `generated` against the problem's three tests. Anything after an
/// `<eos>` is ignored.
pub fn evaluate_generation(spec: &ProblemSpec, generated: &[TokenId]) -> LabeledSample {
    let body = match generated.iter().position(|&t| t == EOS) {
        Some(end) => &generated[..end],
        None => generated,
    };
    let (per_test, failure_kind) = if body.is_empty() {
        ([false; TESTS_PER_PROBLEM], FailureKind::NoOutput)
    } else {
        match expr::parse(body) {
            None => ([false; TESTS_PER_PROBLEM], FailureKind::ParseError),
            Some(e) => {
                let per_test = spec.tests.map(|t| e.eval(t.input) == Some(t.expected));
                let kind = if per_test.iter().all(|&p| p) {
                    FailureKind::None
                } else {
                    FailureKind::WrongValue
                };
                (per_test, kind)
            }
        }
    };
    LabeledSample {
        problem_id: spec.id,
        generated_tokens: generated.to_vec(),
        passed: per_test.iter().all(|&p| p),
        per_test,
        failure_kind,
    }
}

/// A plausible wrong solution: the final operand or operator is perturbed so
/// that at least one test fails.
pub fn buggy_solution(spec: &ProblemSpec) -> Expr {
    let mut candidates = Vec::new();
    if let Expr::Bin(op, lhs, rhs) = &spec.target {
        if let Expr::Lit(d) = rhs.as_ref() {
            let bumped = if *d == 9 { 8 } else { d + 1 };
            candidates.push(Expr::Bin(*op, lhs.clone(), Box::new(Expr::Lit(bumped))));
        }
        let swapped = match op {
            BinOp::Add => BinOp::Sub,
            BinOp::Sub | BinOp::Mul => BinOp::Add,
        };
        candidates.push(Expr::Bin(swapped, lhs.clone(), rhs.clone()));
    }
    candidates.push(Expr::bin(BinOp::Add, spec.target.clone(), Expr::Lit(1)));
    candidates
        .into_iter()
        .find(|e| !evaluate_generation(spec, &e.tokens()).passed)
        .expect("target + 1 always fails")
}

/// Prompt followed by a solution and `<eos>`; the second value is the index of
/// the first solution token.
pub fn training_sequence(spec: &ProblemSpec, solution: &Expr) -> (Vec<TokenId>, usize) {
    let mut tokens = render_prompt(spec).tokens;
    let start = tokens.len();
    tokens.extend(solution.tokens());
    tokens.push(EOS);
    (tokens, start)
}
