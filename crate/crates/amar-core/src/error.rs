//! One error type for the whole engine, plus the exit-code category the CLI
//! maps it to.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AmarError>;

/// Coarse error family. The CLI turns this into a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad configuration or unusable parameters (exit 1).
    Config,
    /// Filesystem and serialization-of-files problems (exit 2).
    Io,
    /// Model backend failures, including unusable model output (exit 3).
    Backend,
    /// Domain validation failures (exit 4).
    Validation,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 1,
            ErrorCategory::Io => 2,
            ErrorCategory::Backend => 3,
            ErrorCategory::Validation => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Backend => "backend",
            ErrorCategory::Validation => "validation",
        }
    }
}

#[derive(Debug, Error)]
pub enum AmarError {
    // graph
    #[error("node name is empty")]
    EmptyName,
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("self-loop edge on `{0}`")]
    SelfLoop(String),
    #[error("degree centrality needs at least two nodes")]
    SingletonGraph,
    #[error("unknown node type label `{0}`")]
    UnknownNodeType(String),
    #[error("merge threshold {0} must lie in (0, 1]")]
    InvalidThreshold(f64),

    // chunking / ingestion
    #[error("chunk overlap {overlap} must be smaller than window {window}")]
    InvalidChunking { window: usize, overlap: usize },
    #[error("document chunk text is empty")]
    EmptyChunk,

    // embeddings / index
    #[error("cannot embed empty text")]
    EmptyEmbedText,
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("non-finite value in embedding vector")]
    NonFiniteVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot build an index over an empty graph")]
    EmptyGraph,
    #[error("top-k requires k >= 1")]
    InvalidK,

    // planning / parsing of model output
    #[error("model output is not parseable as {expected}: {detail}")]
    MalformedModelOutput { expected: &'static str, detail: String },
    #[error("model output stayed unparseable as {expected} after {attempts} attempts: {detail}")]
    UnparseableAfterRetries {
        expected: &'static str,
        attempts: usize,
        detail: String,
    },
    #[error("reasoning plan has no steps")]
    EmptyPlan,
    #[error("step {step}: unknown evidence label `{label}`")]
    UnknownEvidenceLabel { step: usize, label: String },
    #[error("step {step}: empty sub-goal")]
    EmptySubGoal { step: usize },
    #[error("answer has {got} steps but the plan requires {expected}")]
    StepCountMismatch { expected: usize, got: usize },
    #[error("multimodal planning requires an image reference")]
    MissingImage,

    // retrieval
    #[error("softmax over an empty score list")]
    EmptyScores,
    #[error("non-finite score passed to softmax")]
    NonFiniteScore,
    #[error("fusion weight {0} must lie in [0, 1]")]
    InvalidLambda(f64),
    #[error("rerank called with no candidates")]
    EmptyCandidates,
    #[error("retrieval config invalid: {0}")]
    InvalidRetrievalConfig(String),

    // backends
    #[error("backend config invalid: {0}")]
    InvalidBackendConfig(String),
    #[error("api key environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("backend request failed: {0}")]
    BackendRequest(String),
    #[error("backend returned http status {0}")]
    BackendStatus(u16),
    #[error("model request invalid: {0}")]
    InvalidRequest(String),

    // evaluation
    #[error("bleu order {0} must lie in 1..=4")]
    InvalidBleuOrder(usize),
    #[error("cannot score an empty candidate")]
    EmptyCandidateText,
    #[error("cannot score against empty input")]
    EmptyMetricInput,
    #[error("judge model `{0}` must differ from the generation model")]
    JudgeEqualsGenerator(String),
    #[error("cannot aggregate an empty row set")]
    EmptyAggregate,

    // dataset / benchmark
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record `{0}` does not pass the painting filter")]
    FilterPrecondition(String),
    #[error("no valid benchmark item after {0} attempts")]
    ConstructionExhausted(usize),

    // pipeline
    #[error("mode `{mode}` is inconsistent with the provided inputs: {detail}")]
    ModeInputMismatch { mode: String, detail: String },
    #[error("mode `{mode}` requires {resource}")]
    MissingResource { mode: String, resource: &'static str },
    #[error("parallelism must be >= 1")]
    InvalidParallelism,
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AmarError>,
    },

    // config & files
    #[error("config error: {0}")]
    Config(String),
    #[error("seed is mandatory when any backend is a mock")]
    MissingSeed,
    #[error("{path}: line {line}: {detail}")]
    MalformedFile {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("validation failed: {0}")]
    Invalid(String),
}

impl AmarError {
    /// Wrap an io::Error with the path it happened on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AmarError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use AmarError::*;
        match self {
            InvalidThreshold(_) | InvalidChunking { .. } | InvalidK | InvalidLambda(_)
            | InvalidRetrievalConfig(_) | InvalidBackendConfig(_) | Config(_) | MissingSeed
            | InvalidParallelism | InvalidBleuOrder(_) => ErrorCategory::Config,
            Io { .. } | MalformedFile { .. } => ErrorCategory::Io,
            MissingApiKey(_) | BackendRequest(_) | BackendStatus(_)
            | UnparseableAfterRetries { .. } | ConstructionExhausted(_) => ErrorCategory::Backend,
            Stage { source, .. } => source.category(),
            _ => ErrorCategory::Validation,
        }
    }

    /// Attach a pipeline stage name to an error.
    pub fn at_stage(self, stage: &'static str) -> Self {
        AmarError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
