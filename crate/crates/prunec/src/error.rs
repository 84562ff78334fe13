use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Toolkit-wide error type. The variant name doubles as the machine-parsable
/// error code printed to stderr by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("MalformedManifest: {0}")]
    MalformedManifest(String),
    #[error("BadMagic: weight blob does not start with \"SPRW\"")]
    BadMagic,
    #[error("VersionUnsupported: format version {0}")]
    VersionUnsupported(u32),
    #[error("DanglingTensorRef: node `{node}` references unknown tensor `{tensor}`")]
    DanglingTensorRef { node: String, tensor: String },
    #[error("CyclicGraph: {0}")]
    CyclicGraph(String),
    #[error("ShapeMismatch: node `{node}`: expected {expected}, found {found}")]
    ShapeMismatch {
        node: String,
        expected: String,
        found: String,
    },
    #[error("UnsupportedFlatten: dense node `{0}` consumes a tensor with H*W > 1")]
    UnsupportedFlatten(String),
    #[error("Unsupported: {0}")]
    Unsupported(String),
    #[error("FrozenGroup: group {0} contains graph output channels")]
    FrozenGroup(usize),
    #[error("NoBatchNorm: group {0} has no batchnorm channel for bn heuristic")]
    NoBatchNorm(usize),
    #[error("BadK: k_keep {k} out of range for {n} classes")]
    BadK { k: usize, n: usize },
    #[error("BadSparsity: sparsity {0} outside [0, 1)")]
    BadSparsity(f64),
    #[error("BadSchedule: step {step} * rounds {rounds} must be < 1")]
    BadSchedule { step: f64, rounds: usize },
    #[error("PlanGraphMismatch: plan fingerprint {plan} does not match graph {graph}")]
    PlanGraphMismatch { plan: String, graph: String },
    #[error("WouldEmptyGroup: plan removes every class of group {0}")]
    WouldEmptyGroup(usize),
    #[error("NonFiniteValue: node `{0}` produced NaN or Inf")]
    NonFiniteValue(String),
    #[error("DimensionMismatch: pred {pred_h}x{pred_w} vs gt {gt_h}x{gt_w}")]
    DimensionMismatch {
        pred_h: usize,
        pred_w: usize,
        gt_h: usize,
        gt_w: usize,
    },
    #[error("MissingClassLabels: instance map lacks a class table")]
    MissingClassLabels,
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable code for scripting: the variant name.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedManifest(_) => "MalformedManifest",
            Error::BadMagic => "BadMagic",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::DanglingTensorRef { .. } => "DanglingTensorRef",
            Error::CyclicGraph(_) => "CyclicGraph",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::UnsupportedFlatten(_) => "UnsupportedFlatten",
            Error::Unsupported(_) => "Unsupported",
            Error::FrozenGroup(_) => "FrozenGroup",
            Error::NoBatchNorm(_) => "NoBatchNorm",
            Error::BadK { .. } => "BadK",
            Error::BadSparsity(_) => "BadSparsity",
            Error::BadSchedule { .. } => "BadSchedule",
            Error::PlanGraphMismatch { .. } => "PlanGraphMismatch",
            Error::WouldEmptyGroup(_) => "WouldEmptyGroup",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::MissingClassLabels => "MissingClassLabels",
            Error::Io(_) => "Io",
        }
    }
}
