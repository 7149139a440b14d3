use std::fmt;

/// A failure reported as one `Code: message` line.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: String) -> Self {
        CliError { code, message }
    }

    pub fn config(message: String) -> Self {
        CliError::new("InvalidConfig", message)
    }

    pub fn exit_code(&self) -> i32 {
        match self.code {
            "UnknownCorpus" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // keep it on one line whatever the message holds
        write!(f, "{}: {}", self.code, self.message.replace('\n', " "))
    }
}

macro_rules! from_coded {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(e.code(), e.to_string())
            }
        }
    )*};
}

from_coded!(
    nes_core::corpus::CorpusError,
    nes_core::querylang::QueryError,
    nes_core::embed::EmbedError,
    nes_core::knn::KnnError,
    nes_core::align::AlignError,
    nes_core::retrieval::RetrievalError,
    nes_core::evalharness::EvalError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("IoError", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("FormatError", e.to_string())
    }
}
