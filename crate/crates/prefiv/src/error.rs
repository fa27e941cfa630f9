use crate::numerics::logistic::LogisticFit;

/// Crate-wide error type.
///
/// Variants are grouped by origin; the CLI maps them onto exit codes
/// (config/schema problems vs. runtime failures vs. methods that end up
/// with no usable data).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("not enough rows: {rows} rows for {cols} columns")]
    TooFewRows { rows: usize, cols: usize },

    #[error("design is rank deficient: column {column} is zero or linearly dependent on earlier columns{}", column_note(.column, .names))]
    RankDeficient {
        column: usize,
        names: Option<Vec<String>>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("logistic fit did not converge after {n_iter} iterations (max |score| = {score_inf:.3e})")]
    LogisticNotConverged {
        n_iter: usize,
        score_inf: f64,
        /// Last IRLS iterate, still usable where only a deviance is needed.
        last: Box<LogisticFit>,
    },

    #[error("mixed-model fit did not converge (|gradient| = {grad_inf:.3e} after {n_iter} iterations)")]
    GlmmNotConverged { grad_inf: f64, n_iter: usize },

    #[error("mixed model needs at least 2 clusters, got {0}")]
    TooFewClusters(usize),

    #[error("nesting violation in F test: restricted RSS {rss_restricted} < full RSS {rss_full}")]
    NestingViolation { rss_restricted: f64, rss_full: f64 },

    #[error("change detection needs at least {min} patients in a provider, got {n}")]
    TooFewPatients { n: usize, min: usize },

    #[error("no records survive {context}")]
    EmptyResult { context: String },

    #[error("method {method}: {source}")]
    Method { method: String, source: Box<Error> },

    #[error("replication {rep} (seed {seed}): {source}")]
    Replication { rep: usize, seed: u64, source: Box<Error> },

    #[error("dataset lacks {what}")]
    MissingTruth { what: String },

    #[error("non-finite probability from the {context} linear predictor (value {value})")]
    InvalidProbability { context: &'static str, value: f64 },

    #[error("calibration target {target} for {parameter} is not bracketed on [{lo}, {hi}] (achieves [{f_lo:.4}, {f_hi:.4}])")]
    NonBracketing {
        parameter: String,
        target: f64,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("config error{}: {message}", line_note(.line))]
    Config { line: Option<usize>, message: String },

    #[error("schema error{}: {message}", row_note(.row))]
    Schema { row: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

fn column_note(column: &usize, names: &Option<Vec<String>>) -> String {
    match names {
        Some(ns) if *column < ns.len() => format!(" ({})", ns[*column]),
        _ => String::new(),
    }
}

fn row_note(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at data row {r}"),
        None => String::new(),
    }
}

fn line_note(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    /// True for errors caused by unusable inputs (config or data schema),
    /// as opposed to runtime/numerical failures.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Method { source, .. } => source.is_input_error(),
            _ => matches!(
                self,
                Error::Config { .. } | Error::Schema { .. } | Error::Csv(_) | Error::InvalidInput(_)
            ),
        }
    }

    /// True when an analysis method ended up with no usable data.
    pub fn is_no_data(&self) -> bool {
        match self {
            Error::Method { source, .. } => source.is_no_data(),
            _ => matches!(self, Error::EmptyResult { .. }),
        }
    }
}
