use std::fs;
use std::path::{Path, PathBuf};

use metrise3d_core::expr::Expr;
use metrise3d_core::projective::{ConnectionSpec, SpecParseError};
use metrise3d_core::solver::SolverError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid connection: {0}")]
    Spec(#[from] SpecParseError),
    #[error("invalid sigma: component {index}: {message}")]
    Sigma { index: usize, message: String },
    #[error("{0}")]
    Argument(String),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl CliError {
    /// 2 for a point outside the regular domain, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(SolverError::Domain(_) | SolverError::EpsilonVanishes(_)) => 2,
            _ => 1,
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })
}

/// A connection file: `gamma[a][b][c]` is `Γ_{ab}^c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDocument {
    pub gamma: [[[String; 3]; 3]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl InputDocument {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }

    pub fn connection(&self) -> Result<ConnectionSpec, CliError> {
        let g: [[[&str; 3]; 3]; 3] = std::array::from_fn(|a| {
            std::array::from_fn(|b| std::array::from_fn(|c| self.gamma[a][b][c].as_str()))
        });
        Ok(ConnectionSpec::parse(&g, self.epsilon.as_deref())?)
    }
}

/// A candidate solution `σ^{ab}`, either as a full 3×3 array or as the six
/// components `11, 12, 13, 22, 23, 33`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaComponents {
    Matrix([[String; 3]; 3]),
    Packed([String; 6]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaDocument {
    pub sigma: SigmaComponents,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl SigmaDocument {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }

    /// Parsed components in storage order.
    pub fn components(&self) -> Result<[Expr; 6], CliError> {
        const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let strings: [&str; 6] = match &self.sigma {
            SigmaComponents::Packed(s) => std::array::from_fn(|i| s[i].as_str()),
            SigmaComponents::Matrix(m) => {
                let parsed = |a: usize, b: usize| {
                    m[a][b].parse::<Expr>().map_err(|e| CliError::Sigma {
                        index: 3 * a + b,
                        message: e.to_string(),
                    })
                };
                for (a, b) in PAIRS {
                    if a != b && parsed(a, b)? != parsed(b, a)? {
                        return Err(CliError::Sigma {
                            index: 3 * a + b,
                            message: "matrix is not symmetric".into(),
                        });
                    }
                }
                PAIRS.map(|(a, b)| m[a][b].as_str())
            }
        };
        let mut out: Vec<Expr> = Vec::with_capacity(6);
        for (i, s) in strings.iter().enumerate() {
            out.push(s.parse().map_err(|e: metrise3d_core::expr::ParseError| CliError::Sigma {
                index: i,
                message: e.to_string(),
            })?);
        }
        Ok(out.try_into().expect("six components"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"gamma": [[["0","0","0"],["0","0","0"],["0","0","0"]],[["0","0","0"],["0","0","0"],["0","0","0"]],[["0","0","0"],["0","0","0"],["0","0","0"]]], "gama": 1}"#;
        assert!(serde_json::from_str::<InputDocument>(text).is_err());
    }

    #[test]
    fn sigma_forms_agree() {
        let packed: SigmaDocument = serde_json::from_str(r#"{"sigma": ["1","x","0","2","0","3"]}"#).unwrap();
        let matrix: SigmaDocument =
            serde_json::from_str(r#"{"sigma": [["1","x","0"],["x","2","0"],["0","0","3"]]}"#).unwrap();
        assert_eq!(packed.components().unwrap(), matrix.components().unwrap());
        let bad: SigmaDocument =
            serde_json::from_str(r#"{"sigma": [["1","x","0"],["y","2","0"],["0","0","3"]]}"#).unwrap();
        assert!(bad.components().is_err());
    }
}
