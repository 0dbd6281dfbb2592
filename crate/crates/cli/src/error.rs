use platoon_core::ingest::IngestError;
use platoon_core::plant::NonPositiveTau;
use platoon_core::simulate::SimulateError;
use platoon_core::synthesis::SynthesisError;
use platoon_core::topology::{GraphError, LoadError, SpectrumError};
use std::fmt;

/// One variant per machine-parsable prefix; exit codes group them into the
/// four failure families: 1 io/parse, 2 precondition, 3 infeasible, 4 numeric.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Parse(String),
    Lemma1(String),
    Spectrum(String),
    Infeasible(String),
    Numeric(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Parse(_) => "parse",
            CliError::Lemma1(_) => "lemma1",
            CliError::Spectrum(_) => "spectrum",
            CliError::Infeasible(_) => "infeasible",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Parse(_) => 1,
            CliError::Lemma1(_) | CliError::Spectrum(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            CliError::Io(m)
            | CliError::Parse(m)
            | CliError::Lemma1(m)
            | CliError::Spectrum(m)
            | CliError::Infeasible(m)
            | CliError::Numeric(m) => m,
        };
        // the prefix line must stay machine-parsable, so keep it to one line
        write!(f, "{}", msg.replace('\n', "; "))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io(e) => CliError::Io(e.to_string()),
            LoadError::Parse(e) => CliError::Parse(e.to_string()),
            LoadError::Graph(e) => CliError::Parse(e.to_string()),
        }
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        match e {
            // a stalled eigensolve is a numerical failure, not a property of
            // the topology
            SpectrumError::IterationStalled(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Spectrum(e.to_string()),
        }
    }
}

impl From<NonPositiveTau> for CliError {
    fn from(e: NonPositiveTau) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::NonPositiveGamma(_) => CliError::Parse(e.to_string()),
            SynthesisError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            SynthesisError::SingularQ | SynthesisError::NonPositiveInput { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::NonFiniteState { .. } | SimulateError::ZeroDisturbance => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(e) => CliError::Io(e.to_string()),
            IngestError::Trajectory(e) => e.into(),
            _ => CliError::Parse(e.to_string()),
        }
    }
}
