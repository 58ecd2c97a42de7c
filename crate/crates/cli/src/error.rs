use msgp::MsgpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<MsgpError> for CliError {
    fn from(e: MsgpError) -> Self {
        use MsgpError::*;
        let msg = e.to_string();
        match e {
            InvalidParameter { .. }
            | UnknownKernel(_)
            | InvalidLattice(_)
            | InvalidStickFraction { .. }
            | InvalidMixture(_)
            | InvalidConfig(_) => CliError::Config(msg),
            DimensionMismatch { .. }
            | LengthMismatch { .. }
            | SiteOutOfLattice { .. }
            | RankDeficient { .. }
            | Checkpoint(_)
            | Io(_) => CliError::Data(msg),
            LatticeCollision { first, second, ref site } => CliError::Data(format!(
                "lines {} and {} map to the same lattice site {site:?} with different outcomes \
                 (use --collision average to merge them)",
                first + 2,
                second + 2
            )),
            NegativeSpectralDensity { .. }
            | LatticeMismatch
            | Factorization { .. }
            | NotPositiveSemidefinite { .. }
            | NegativeVariance { .. }
            | NonFinite { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
