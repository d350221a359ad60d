use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two tables that must agree in size do not.
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A probability row is negative or does not sum to one.
    InvalidDistribution {
        group: usize,
        /// `None` for the initial distribution.
        row: Option<(usize, usize)>,
        sum: f64,
    },
    /// Any other out-of-range number (proportions, rewards, policy entries).
    OutOfRange { what: &'static str, value: f64 },
    /// Conditioning on an event whose probability is below the floor.
    DegenerateConditioning {
        group: usize,
        step: usize,
        denominator: f64,
    },
    /// Batches must be ingested with strictly increasing episode indices.
    Sequencing { last: u64, got: u64 },
    /// Dropout emptied a group on every retry.
    DropoutExhausted { group: usize, retries: u32 },
    /// The exhaustive oracle refuses instances with too many parameters.
    BudgetExceeded { parameters: usize, limit: usize },
    Precondition(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                found,
            } => write!(f, "shape mismatch in {what}: expected {expected}, found {found}"),
            Error::InvalidDistribution { group, row, sum } => match row {
                Some((s, a)) => write!(
                    f,
                    "kernel row (group {group}, s {s}, a {a}) is not a distribution (sum {sum})"
                ),
                None => write!(
                    f,
                    "initial distribution of group {group} is not a distribution (sum {sum})"
                ),
            },
            Error::OutOfRange { what, value } => write!(f, "{what} out of range: {value}"),
            Error::DegenerateConditioning {
                group,
                step,
                denominator,
            } => write!(
                f,
                "P(y=1) for group {group} at step {step} is {denominator:e}, below the conditioning floor"
            ),
            Error::Sequencing { last, got } => write!(
                f,
                "episode {got} ingested after episode {last}; batches must arrive in order"
            ),
            Error::DropoutExhausted { group, retries } => write!(
                f,
                "dropout emptied group {group} in all {retries} resampling attempts"
            ),
            Error::BudgetExceeded { parameters, limit } => write!(
                f,
                "{parameters} policy parameters exceed the exhaustive-search limit of {limit}"
            ),
            Error::Precondition(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
