use evcal::event_flow::EventIoError;
use evcal::motion::TrackError;
use evcal::refine::CalibrationError;
use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Io,
    Parse,
    Precondition,
    Convergence,
}

impl Class {
    pub fn exit_code(self) -> i32 {
        match self {
            Class::Io => 1,
            Class::Parse => 2,
            Class::Precondition => 3,
            Class::Convergence => 4,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub class: Class,
    pub message: String,
}

impl Failure {
    pub fn new(class: Class, message: impl Into<String>) -> Self {
        Self { class, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Class::Io, message)
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(Class::Parse, message)
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self::new(Class::Precondition, message)
    }

    /// Prefix the message with the stage it came from.
    pub fn at(self, stage: &str) -> Self {
        Self { message: format!("{stage}: {}", self.message), ..self }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

impl From<TrackError> for Failure {
    fn from(e: TrackError) -> Self {
        match e {
            TrackError::Io { .. } => Failure::precondition(e.to_string()),
            _ => Failure::parse(e.to_string()),
        }
    }
}

impl From<EventIoError> for Failure {
    fn from(e: EventIoError) -> Self {
        match e {
            EventIoError::Io { .. } => Failure::precondition(e.to_string()),
            _ => Failure::parse(e.to_string()),
        }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        let class = match e {
            CalibrationError::Fit(_) | CalibrationError::Refine(_) => Class::Convergence,
            _ => Class::Precondition,
        };
        Failure::new(class, e.to_string())
    }
}

/// Attach a path to I/O errors while writing outputs.
pub fn write_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::io(format!("{}: {e}", path.display()))
}
