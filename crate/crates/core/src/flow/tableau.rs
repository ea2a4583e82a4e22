use std::fmt;
use std::path::Path;

use ndarray::{array, Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};

const COEFF_TOL: f64 = 1e-12;

/// Coefficients `(A, b, c)` of an `s`-stage Runge-Kutta method.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    a: Array2<f64>,
    b: Array1<f64>,
    c: Array1<f64>,
}

/// Classified order of accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
    Unknown,
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Order::First => write!(f, "order 1"),
            Order::Second => write!(f, "order 2"),
            Order::Unknown => write!(f, "order unknown"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableauReport {
    pub stages: usize,
    /// `sum_i b_i = 1`.
    pub consistent: bool,
    /// `A` strictly lower triangular.
    pub explicit: bool,
    /// `c_i = sum_j a_ij`.
    pub row_sums_match: bool,
    /// For explicit two-stage methods: `b1 + b2 = 1` and `a21 b2 = 1/2`.
    pub two_stage_order2: Option<bool>,
    pub order: Order,
}

impl TableauReport {
    /// Whether the tableau may drive the integrator.
    pub fn is_usable(&self) -> bool {
        self.consistent && self.row_sums_match
    }
}

impl fmt::Display for TableauReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {}, {}",
            if self.consistent { "consistent" } else { "inconsistent" },
            if self.explicit { "explicit" } else { "implicit" },
            self.order
        )?;
        if !self.row_sums_match {
            write!(f, " (node vector violates c_i = sum_j a_ij)")?;
        }
        if self.two_stage_order2 == Some(false) {
            write!(f, " (two-stage order-2 conditions fail)")?;
        }
        Ok(())
    }
}

impl ButcherTableau {
    pub fn new(a: Array2<f64>, b: Array1<f64>, c: Array1<f64>) -> Result<Self> {
        let s = b.len();
        if s == 0 {
            return Err(Error::InvalidTableau("at least one stage is required".into()));
        }
        if a.dim() != (s, s) {
            return Err(Error::InvalidTableau(format!(
                "A must be {s}x{s}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.len() != s {
            return Err(Error::InvalidTableau(format!("c must have length {s}, got {}", c.len())));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTableau("coefficients must be finite".into()));
        }
        Ok(ButcherTableau { a, b, c })
    }

    /// `s = 1, c = 0, b = 1, A = 0`: the Landweber-type iteration.
    pub fn explicit_euler() -> Self {
        ButcherTableau {
            a: array![[0.0]],
            b: array![1.0],
            c: array![0.0],
        }
    }

    /// `s = 1, c = 1, b = 1, A = 1`: the implicit Landweber-type iteration.
    pub fn implicit_euler() -> Self {
        ButcherTableau {
            a: array![[1.0]],
            b: array![1.0],
            c: array![1.0],
        }
    }

    /// Explicit trapezoidal rule, `a21 = 1`, `b = (1/2, 1/2)`.
    pub fn heun() -> Self {
        Self::explicit_two_stage(1.0, 0.5)
    }

    /// Explicit two-stage family parametrized by `a21` and `b2`, with `b1 = 1 - b2`.
    pub fn explicit_two_stage(a21: f64, b2: f64) -> Self {
        ButcherTableau {
            a: array![[0.0, 0.0], [a21, 0.0]],
            b: array![1.0 - b2, b2],
            c: array![0.0, a21],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "explicit_euler" => Some(Self::explicit_euler()),
            "implicit_euler" => Some(Self::implicit_euler()),
            "heun" => Some(Self::heun()),
            _ => None,
        }
    }

    /// Parses the text format: first line `s`, then `s` rows of `A`, then
    /// `b`, then `c`, all whitespace-separated decimals.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |what: &str| Error::InvalidTableau(what.to_string());
        let s: usize = lines
            .next()
            .ok_or_else(|| bad("empty tableau file"))?
            .parse()
            .map_err(|_| bad("first line must be the stage count"))?;
        let mut row = |what: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {what}")))?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&format!("{what}: {e}")))?;
            if vals.len() != s {
                return Err(bad(&format!("{what} must have {s} entries, got {}", vals.len())));
            }
            Ok(vals)
        };
        let mut a = Array2::zeros((s, s));
        for i in 0..s {
            let r = row(&format!("row {} of A", i + 1))?;
            for (j, v) in r.into_iter().enumerate() {
                a[[i, j]] = v;
            }
        }
        let b = Array1::from(row("b")?);
        let c = Array1::from(row("c")?);
        if lines.next().is_some() {
            return Err(bad("trailing content after c"));
        }
        Self::new(a, b, c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn c(&self) -> &Array1<f64> {
        &self.c
    }

    pub fn is_explicit(&self) -> bool {
        self.a.indexed_iter().all(|((i, j), v)| j < i || *v == 0.0)
    }

    /// Largest absolute row sum of `A`, the stage-coupling strength.
    pub(crate) fn coupling(&self) -> f64 {
        self.a
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> TableauReport {
        let s = self.stages();
        let consistent = (self.b.sum() - 1.0).abs() <= COEFF_TOL;
        let explicit = self.is_explicit();
        let row_sums_match = self
            .a
            .rows()
            .into_iter()
            .zip(self.c.iter())
            .all(|(r, c)| (r.sum() - c).abs() <= COEFF_TOL);

        let two_stage_order2 = (s == 2 && explicit).then(|| {
            consistent && (self.a[[1, 0]] * self.b[1] - 0.5).abs() <= COEFF_TOL
        });

        let bc = self.b.dot(&self.c);
        let order = if !consistent {
            Order::Unknown
        } else if (bc - 0.5).abs() > COEFF_TOL {
            Order::First
        } else {
            let third = (self.b.dot(&self.c.mapv(|v| v * v)) - 1.0 / 3.0).abs() <= COEFF_TOL
                && (self.b.dot(&self.a.dot(&self.c)) - 1.0 / 6.0).abs() <= COEFF_TOL;
            // order 3 or higher is outside the classification
            if third {
                Order::Unknown
            } else {
                Order::Second
            }
        };

        TableauReport {
            stages: s,
            consistent,
            explicit,
            row_sums_match,
            two_stage_order2,
            order,
        }
    }
}

/// Free-function form of [`ButcherTableau::validate`].
pub fn validate_tableau(tab: &ButcherTableau) -> TableauReport {
    tab.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_tableaux() {
        let r = ButcherTableau::explicit_euler().validate();
        assert!(r.consistent && r.explicit);
        assert_eq!(r.order, Order::First);
        assert_eq!(r.to_string(), "consistent, explicit, order 1");

        let r = ButcherTableau::implicit_euler().validate();
        assert!(r.consistent && !r.explicit);
        assert_eq!(r.order, Order::First);

        let r = ButcherTableau::heun().validate();
        assert_eq!(r.to_string(), "consistent, explicit, order 2");
        assert_eq!(r.two_stage_order2, Some(true));
    }

    #[test]
    fn broken_two_stage() {
        let tab = ButcherTableau::explicit_two_stage(1.0, 0.0);
        let r = tab.validate();
        assert!(r.consistent && r.explicit);
        assert_eq!(r.two_stage_order2, Some(false));
        assert_eq!(r.order, Order::First);
    }

    #[test]
    fn midpoint_and_rk4() {
        let r = ButcherTableau::explicit_two_stage(0.5, 1.0).validate();
        assert_eq!(r.order, Order::Second);
        let rk4 = ButcherTableau::new(
            array![[0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0], [0.0, 0.5, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            array![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            array![0.0, 0.5, 0.5, 1.0],
        )
        .unwrap();
        assert_eq!(rk4.validate().order, Order::Unknown);
    }

    #[test]
    fn inconsistent_and_bad_nodes() {
        let t = ButcherTableau::new(array![[0.0]], array![0.5], array![0.0]).unwrap();
        let r = t.validate();
        assert!(!r.consistent);
        assert_eq!(r.order, Order::Unknown);
        assert!(!r.is_usable());
        let t = ButcherTableau::new(array![[0.0]], array![1.0], array![0.3]).unwrap();
        assert!(!t.validate().row_sums_match);
    }

    #[test]
    fn dimension_errors() {
        assert!(ButcherTableau::new(array![[0.0, 0.0]], array![1.0], array![0.0]).is_err());
        assert!(ButcherTableau::new(array![[0.0]], array![1.0], array![0.0, 1.0]).is_err());
    }

    #[test]
    fn parse_heun_file() {
        let tab = ButcherTableau::parse("2\n0 0\n1 0\n0.5 0.5\n0 1\n").unwrap();
        assert_eq!(tab, ButcherTableau::heun());
        assert!(ButcherTableau::parse("2\n0 0\n1\n0.5 0.5\n0 1\n").is_err());
        assert!(ButcherTableau::parse("x").is_err());
        assert!(ButcherTableau::parse("1\n0\n1\n0\n7\n").is_err());
    }
}
