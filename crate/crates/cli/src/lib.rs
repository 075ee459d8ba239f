//! Library side of the `conjunction` command: input parsing and the four
//! subcommands, each a pure function from its inputs to the bytes it writes.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Config enums are built once per run; boxing buys nothing.
#![allow(clippy::large_enum_variant)]

pub mod commands;
pub mod input;

use std::fmt::Write as _;

pub use commands::{assess, calibrate, curve, pc_study, AssessOptions, CalibrateOptions, CurveOptions};
pub use input::{BiasInput, CalibrationInput, Conjunction, ConjunctionInput, Problem};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<conjunction_core::Error> for CliError {
    fn from(e: conjunction_core::Error) -> Self {
        use conjunction_core::Error;
        if e.is_validation() || matches!(e, Error::DegenerateGeometry(_)) {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

/// Round-trip decimal: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub(crate) fn csv_row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let line: Vec<String> = fields.into_iter().collect();
    let _ = writeln!(out, "{}", line.join(","));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_precision() {
        for v in [0.1, 1.0 / 3.0, 2.5e-300, -7.2e-3, 35_267.123_456_789] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn exit_codes() {
        let v: CliError = conjunction_core::Error::InvalidInput("x".into()).into();
        let n: CliError = conjunction_core::Error::NumericalFailure("x".into()).into();
        assert_eq!((v.exit_code(), n.exit_code()), (2, 3));
    }
}
