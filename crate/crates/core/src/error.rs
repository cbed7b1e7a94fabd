use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("point {0} outside [0,1]")]
    OutOfDomain(f64),
    #[error("value {y} outside the image of branch {branch}")]
    OutsideImage { branch: usize, y: f64 },
    #[error("root finding failed: {0}")]
    RootFinding(String),
    #[error("inducing scheme is not Markov: {0}")]
    NotMarkov(String),
    #[error("point {0} is not in the inducing set")]
    NotInY(f64),
    #[error("no return to the inducing set within {0} iterates")]
    NoReturn(u64),
    #[error("excursion level {level} exceeds the truncation level {m_max}")]
    Truncation { level: u64, m_max: u32 },
    #[error("excursion left region {from} into region {to}")]
    Separation { from: usize, to: usize },
    #[error("m_max = {0} is too small for a tail fit (need at least 100)")]
    TailFit(u32),
    #[error("inadmissible concatenation: image {image} followed by base {base}")]
    Inadmissible { image: usize, base: usize },
    #[error("empty family")]
    EmptyFamily,
    #[error("dimension bound is vacuous: n log lambda = {nlog} <= D = {d}")]
    VacuousBound { nlog: f64, d: f64 },
    #[error("family images do not cover every big image (missing {0})")]
    ImagesDoNotCover(usize),
    #[error("big-image graph is not mixing up to power {0}")]
    NotMixing(usize),
    #[error("empty pool at depth {n} for epsilon {eps}")]
    EmptyPool { n: usize, eps: String },
    #[error("assembled cylinder {word:?} has ratio {ratio} outside the 3eps/4 ball")]
    ItemOneViolated { word: Vec<u32>, ratio: String },
    #[error("level {level}: no family found for epsilon {eps} up to core depth {max_depth}: {reason}")]
    FamilyInfeasible {
        level: usize,
        eps: String,
        max_depth: usize,
        reason: String,
    },
    #[error("level {level}: no k below {cap} satisfies {constraint}")]
    NoScale {
        level: usize,
        cap: u64,
        constraint: String,
    },
    #[error("prefix is not aligned with the block structure: {0}")]
    Misaligned(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("enumeration cap of {0} cylinders exceeded without a filter")]
    CapExceeded(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
