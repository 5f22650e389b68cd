use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("invalid group element encoding")]
    InvalidElement,
    #[error("non-canonical scalar encoding")]
    InvalidScalar,
    #[error("unknown group suite {0}")]
    UnknownSuite(u8),
    #[error("group parameters do not use the canonical generator")]
    UnexpectedGenerator,
    #[error("blinding factor is zero")]
    ZeroBlinding,
    #[error("batched statement has mismatched or empty element lists")]
    BatchShape,
    #[error("malformed verification key")]
    InvalidKey,
    #[error("ciphertext failed authentication")]
    Decryption,
}

/// Errors raised while decoding the binary wire format.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("input truncated: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    MessageType(u8),
    #[error("unexpected message type {actual}, wanted {expected}")]
    UnexpectedType { expected: u8, actual: u8 },
    #[error("invalid field {field}: {reason}")]
    Field { field: &'static str, reason: String },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("tolerance level k must be at least 1")]
    Tolerance,
    #[error("score cap M must be at least 1")]
    Cap,
    #[error("recovery rate b must lie in (0, 1], got {0}")]
    Recovery(f64),
    #[error("reputation thresholds must be strictly increasing")]
    Thresholds,
    #[error("noise shift mu must be < -1, got {0}")]
    NoiseShift(String),
    #[error("noise standard deviation must be positive, got {0}")]
    NoiseStd(String),
    #[error("sensitivity B_vk must be at least 1, got {0}")]
    Sensitivity(i64),
    #[error("expiry multiplier E must be at least 2, got {0}")]
    Expiry(u64),
    #[error("epoch duration must be positive")]
    EpochDuration,
    #[error("val_period {val_period}s exceeds (E-1)*epoch_dur = {bound}s")]
    ValidityPeriod { val_period: u64, bound: u64 },
    #[error("report_lock {report_lock}s is shorter than E*epoch_dur = {bound}s")]
    ReportLock { report_lock: u64, bound: u64 },
    #[error("initial score {0} exceeds the cap")]
    InitialScore(f64),
    #[error("noise sensitivity {noise} differs from B_vk = {b_vk}")]
    SensitivityMismatch { noise: i64, b_vk: i64 },
    #[error("dummy batch size must be at least 1")]
    DummyBatch,
    #[error("noise sampler rejected {0} consecutive draws")]
    NoiseRejection(u32),
}
