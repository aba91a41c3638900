/// Unified error type for the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A signal's sample rate does not match what an operation expects.
    #[error("sample-rate mismatch: signal is {signal_hz} Hz, expected {expected_hz} Hz")]
    RateMismatch { signal_hz: u32, expected_hz: u32 },

    /// Noise calibration against a target SNR is undefined for silence.
    #[error("cannot calibrate noise against a zero-power signal with a finite target SNR")]
    ZeroPowerSignal,

    /// Training produced a non-finite quantity and was aborted.
    #[error("training aborted at epoch {epoch}: {what} is not finite")]
    NonFinite { epoch: usize, what: String },

    /// A WAV file could not be read or written.
    #[error("wav: {0}")]
    Wav(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidArgument(msg.into())
    }
}
