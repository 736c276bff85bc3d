use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value failed validation. `field` is a dotted path such as
    /// `sensors[1].R`.
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{what} = {value} outside domain {domain}")]
    Domain {
        what: &'static str,
        value: String,
        domain: String,
    },

    #[error("singular innovation covariance{}", fmt_subset(.subset))]
    SingularInnovation { subset: Option<Vec<usize>> },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

fn fmt_subset(subset: &Option<Vec<usize>>) -> String {
    match subset {
        Some(ix) => format!(
            " for received subset {{{}}}",
            ix.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        ),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Prefixes the field path of a validation error, e.g. `R` becomes
    /// `sensors[1].R`. Other variants pass through unchanged.
    pub fn at(self, prefix: &str) -> Self {
        match self {
            Error::Invalid { field, reason } => Error::Invalid {
                field: if field.is_empty() {
                    prefix.to_string()
                } else {
                    format!("{prefix}.{field}")
                },
                reason,
            },
            other => other,
        }
    }

    /// True for failures that arise while computing on already validated
    /// inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::SingularInnovation { .. } | Error::Numeric(_))
    }
}
