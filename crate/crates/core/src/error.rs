use thiserror::Error;

pub type Result<T> = std::result::Result<T, ConverseError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConverseError {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("tensor contains non-finite values")]
    NonFinite,

    /// The inverse FFT produced a significant imaginary part, so the spectrum
    /// was not conjugate-symmetric.
    #[error("inverse FFT is not real: max |imag| = {max_imag:e}, max |real| = {max_real:e}")]
    RealnessViolation { max_imag: f64, max_real: f64 },

    #[error("reflect padding of {pad} needs a spatial size > {pad}, got {height}x{width}")]
    PadTooLarge { pad: usize, height: usize, width: usize },

    #[error("cropping {crop} from each border needs a spatial size > {}, got {height}x{width}", 2 * crop)]
    CropTooLarge { crop: usize, height: usize, width: usize },

    #[error("spatial size {height}x{width} is not divisible by {stride}")]
    IndivisibleShape { height: usize, width: usize, stride: usize },

    #[error("kernel {kernel_h}x{kernel_w} does not fit a {target_h}x{target_w} plane")]
    KernelTooLarge { kernel_h: usize, kernel_w: usize, target_h: usize, target_w: usize },

    #[error("kernel dimensions must be odd, got {kernel_h}x{kernel_w}")]
    EvenKernel { kernel_h: usize, kernel_w: usize },

    #[error("the fast path requires scale 1, got {0}")]
    ScaleNotOne(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed kernel file: {0}")]
    MalformedKernel(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ConverseError {
    fn from(e: std::io::Error) -> Self {
        ConverseError::Io(e.to_string())
    }
}
