use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dynamics of the treatment-effect states `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArCoefficients {
    /// One free AR constant `c_j` per treatment state, starting at the value given.
    Estimate(f64),
    /// All `c_j` fixed at this value; `1.0` gives random walks.
    Fixed(f64),
}

/// Which regression terms enter the working model and how states evolve.
///
/// Columns follow the canonical order intercept, x_pre, z, T, T*x_pre, T*g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub intercept: bool,
    pub x_pre: bool,
    /// Uses every contemporaneous covariate in the dataset.
    pub z: bool,
    pub treatment: bool,
    pub treatment_x_pre: bool,
    pub treatment_g: bool,
    /// Per-unit observational coefficients with shared treatment states.
    pub unit_specific: bool,
    pub ar: ArCoefficients,
    /// Free drift terms added to the state equation.
    pub trend_offsets: bool,
    /// One state variance for the whole observational block.
    pub tie_beta_variances: bool,
}

impl Default for ModelFormula {
    fn default() -> Self {
        ModelFormula {
            intercept: true,
            x_pre: false,
            z: false,
            treatment: true,
            treatment_x_pre: false,
            treatment_g: false,
            unit_specific: false,
            ar: ArCoefficients::Estimate(0.9),
            trend_offsets: false,
            tie_beta_variances: false,
        }
    }
}

impl ModelFormula {
    /// Parses a right-hand side such as `"z + x_pre*T + T:g"`.
    ///
    /// Terms are `1`, `x_pre`, `z`, `T`, `T:x_pre`, `T:g`; `a*b` expands to
    /// `a + b + a:b`, `-1` drops the intercept (present by default) and a
    /// leading `y ~` is ignored.
    pub fn parse(rhs: &str) -> Result<Self> {
        let rhs = rhs.split_once('~').map_or(rhs, |(_, r)| r);
        let mut f = ModelFormula { treatment: false, ..ModelFormula::default() };
        let cleaned = rhs.replace(' ', "").replace("-1", "+__no_intercept");
        for raw in cleaned.split('+').filter(|s| !s.is_empty()) {
            if raw == "__no_intercept" || raw == "0" {
                f.intercept = false;
                continue;
            }
            if let Some((a, b)) = raw.split_once('*') {
                f.add_term(a)?;
                f.add_term(b)?;
                f.add_interaction(a, b)?;
            } else if let Some((a, b)) = raw.split_once(':') {
                f.add_interaction(a, b)?;
            } else {
                f.add_term(raw)?;
            }
        }
        Ok(f)
    }

    fn add_term(&mut self, t: &str) -> Result<()> {
        match t {
            "1" => self.intercept = true,
            "x_pre" | "xpre" => self.x_pre = true,
            "z" => self.z = true,
            "T" => self.treatment = true,
            other => return invalid(format!("unknown formula term `{other}`")),
        }
        Ok(())
    }

    fn add_interaction(&mut self, a: &str, b: &str) -> Result<()> {
        let other = match (a, b) {
            ("T", o) | (o, "T") => o,
            _ => return invalid(format!("interaction `{a}:{b}` must involve T")),
        };
        match other {
            "x_pre" | "xpre" => self.treatment_x_pre = true,
            "g" => self.treatment_g = true,
            o => return invalid(format!("unsupported interaction T:{o}")),
        }
        Ok(())
    }

    pub fn has_treatment_terms(&self) -> bool {
        self.treatment || self.treatment_x_pre || self.treatment_g
    }
}

/// One column of the design and the state it multiplies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    XPre,
    /// Contemporaneous covariate `k` (zero-based).
    Z(usize),
    T,
    TXPre,
    /// Interaction with group dummy `k`, i.e. level `k + 1`.
    TG(usize),
}

impl Term {
    pub fn is_treatment(&self) -> bool {
        matches!(self, Term::T | Term::TXPre | Term::TG(_))
    }

    pub fn label(&self) -> String {
        match self {
            Term::Intercept => "intercept".into(),
            Term::XPre => "x_pre".into(),
            Term::Z(k) => format!("z{}", k + 1),
            Term::T => "T".into(),
            Term::TXPre => "T:x_pre".into(),
            Term::TG(k) => format!("T:g{}", k + 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_working_model() {
        let f = ModelFormula::parse("z + x_pre*T + T:g").unwrap();
        assert!(f.intercept && f.x_pre && f.z && f.treatment && f.treatment_x_pre && f.treatment_g);
        let g = ModelFormula::parse("y ~ z + x_pre * T").unwrap();
        assert!(g.x_pre && g.treatment_x_pre && !g.treatment_g);
        let h = ModelFormula::parse("T - 1").unwrap();
        assert!(!h.intercept && h.treatment);
        assert!(ModelFormula::parse("z:g").is_err());
        assert!(ModelFormula::parse("w").is_err());
    }
}
