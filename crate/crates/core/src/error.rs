use thiserror::Error;

/// One of the preconditions of the clamping projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Require {
    AtLeastTwoEntities,
    BudgetStrictlyInside,
    InputWithinBounds,
}

impl std::fmt::Display for Require {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Require::AtLeastTwoEntities => "n >= 2",
            Require::BudgetStrictlyInside => "sum(lower) < budget < sum(upper)",
            Require::InputWithinBounds => "lower_k <= y_k <= upper_k",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("allocation vector must have at least one entry")]
    Empty,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid discrete allocation: {0}")]
    InvalidDiscrete(String),

    #[error(
        "no integer allocation of {total} units satisfies the bounds (integer bounds sum to [{min_sum}, {max_sum}])"
    )]
    NoIntegerAllocation { total: u32, min_sum: u32, max_sum: u32 },

    #[error("constrained softmax not applicable{}: epsilon[{index}] = {epsilon} < 0", node_suffix(.node))]
    CsConditionViolated { index: usize, epsilon: f64, node: Option<String> },

    #[error("precondition violated ({require}): {detail}")]
    Precondition { require: Require, detail: String },

    #[error("internal assertion failed: {0}")]
    InternalAssertion(String),

    #[error("region {node}: {detail}")]
    Tree { node: String, detail: String },

    #[error("function evaluation failed at perturbed point: {0}")]
    Evaluation(String),

    #[error("parse error: {0}")]
    Parse(String),
}

fn node_suffix(node: &Option<String>) -> String {
    match node {
        Some(id) => format!(" at region {id}"),
        None => String::new(),
    }
}

impl AllocError {
    pub fn tree(node: impl Into<String>, detail: impl Into<String>) -> Self {
        AllocError::Tree { node: node.into(), detail: detail.into() }
    }

    /// True for errors that signal an implementation bug rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, AllocError::InternalAssertion(_))
    }
}

pub type Result<T> = std::result::Result<T, AllocError>;
