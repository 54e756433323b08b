use std::fmt;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Io,
    Precondition,
    TheoremDomain,
    Verification,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Io => 3,
            Kind::Precondition => 4,
            Kind::TheoremDomain => 5,
            Kind::Verification => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Io => "io",
            Kind::Precondition => "precondition",
            Kind::TheoremDomain => "theorem-domain",
            Kind::Verification => "verification",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Kind::Io, message)
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self::new(Kind::Verification, message)
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        let message: String = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        serde_json::json!({
            "error": self.kind.name(),
            "code": self.kind.code(),
            "message": message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

impl From<hdw_core::Error> for CliError {
    fn from(err: hdw_core::Error) -> Self {
        use hdw_core::Error as E;
        let kind = match &err {
            E::Parameter(_) | E::InvalidPair { .. } | E::Domain(_) | E::Format(_) => Kind::Config,
            E::Io(_) => Kind::Io,
            E::TheoremDomain { .. } => Kind::TheoremDomain,
            E::Precondition(_)
            | E::BudgetExceeded { .. }
            | E::TraceTooLarge { .. }
            | E::Overflow(_)
            | E::SynthesisStalled(_) => Kind::Precondition,
        };
        CliError::new(kind, err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
