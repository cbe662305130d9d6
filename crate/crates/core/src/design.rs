//! Offline design summary: denominator, cancellation checks, terminal matrices and the
//! horizon length condition.

use std::fmt::{self, Write as _};

use crate::error::Result;
use crate::internal_model::{cancellation_check, CancellationReport};
use crate::linalg::{min_sym_eigenvalue, Mat};
use crate::mpc::MpcConfig;

#[derive(Debug, Clone)]
pub struct DesignReport {
    /// `p(z)` coefficients in powers of `z^-1`.
    pub p: Vec<f64>,
    pub cancellation: CancellationReport,
    pub px: Mat,
    pub pu: Mat,
    pub horizon: usize,
    pub horizon_bound: usize,
    pub facets: usize,
}

impl DesignReport {
    pub fn terminal_positive_definite(&self) -> bool {
        [&self.px, &self.pu].iter().all(|m| m.nrows() == 0 || min_sym_eigenvalue(m) > 0.0)
    }

    pub fn horizon_ok(&self) -> bool {
        self.horizon > self.horizon_bound
    }

    /// Cancellation and terminal checks; the horizon condition only warns.
    pub fn passed(&self) -> bool {
        self.cancellation.passed() && self.terminal_positive_definite()
    }
}

pub fn design_report(cfg: &MpcConfig) -> Result<DesignReport> {
    Ok(DesignReport {
        p: cfg.denominator().coeffs.clone(),
        cancellation: cancellation_check(&cfg.plant, &cfg.gx, &cfg.gu)?,
        px: cfg.terminal.px.clone(),
        pu: cfg.terminal.pu.clone(),
        horizon: cfg.horizon,
        horizon_bound: cfg.horizon_bound(),
        facets: cfg.facets,
    })
}

/// Three decimals, integers without a fractional part.
pub fn format_coeff(v: f64) -> String {
    if (v - v.round()).abs() < 1e-12 {
        format!("{}", v.round() as i64)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').to_string()
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Mat) {
    let _ = writeln!(out, "{name} ({}x{}):", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:>12.6}", m[(r, c)])).collect();
        let _ = writeln!(out, "  {}", row.join(" "));
    }
}

impl fmt::Display for DesignReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let coeffs: Vec<String> = self.p.iter().map(|c| format_coeff(*c)).collect();
        let _ = writeln!(out, "p = [{}]", coeffs.join(", "));
        let c = &self.cancellation;
        if c.passed() {
            let _ = writeln!(out, "cancellation check: ok");
        } else {
            let _ = writeln!(out, "cancellation check: FAILED");
            for (what, hits) in [("eigenvalues of A", &c.plant_hits), ("G_x zeros", &c.gx_hits), ("G_u zeros", &c.gu_hits)] {
                if !hits.is_empty() {
                    let list: Vec<String> = hits.iter().map(|z| format!("{:.6}{:+.6}i", z.re, z.im)).collect();
                    let _ = writeln!(out, "  roots of p(z) shared with {what}: {}", list.join(", "));
                }
            }
        }
        if self.px.nrows() == 0 && self.pu.nrows() == 0 {
            let _ = writeln!(out, "V_N \u{2261} 0");
        } else {
            if self.px.nrows() > 0 {
                write_matrix(&mut out, "P_x", &self.px);
            }
            if self.pu.nrows() > 0 {
                write_matrix(&mut out, "P_u", &self.pu);
            }
            if !self.terminal_positive_definite() {
                let _ = writeln!(out, "terminal matrices: NOT positive definite");
            }
        }
        let _ = writeln!(out, "facets per norm: {}", self.facets);
        if self.horizon_ok() {
            let _ = write!(out, "N={} > {}: ok", self.horizon, self.horizon_bound);
        } else {
            let _ = write!(out, "warning: convergence bound violated: N={} <= {}", self.horizon, self.horizon_bound);
        }
        f.write_str(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::four_tank_sine;

    #[test]
    fn four_tank_summary() {
        let sc = four_tank_sine().build().unwrap();
        let rep = design_report(&sc.mpc).unwrap();
        assert!(rep.passed());
        let text = rep.to_string();
        assert!(text.starts_with("p = [1, -2.618, 2.618, -1]\n"), "{text}");
        assert!(text.contains("V_N \u{2261} 0"));
        assert!(text.ends_with("N=40 > 10: ok"));
    }

    #[test]
    fn short_horizon_warns() {
        let mut cfg = four_tank_sine();
        cfg.controller.horizon = 8;
        let rep = design_report(&cfg.build().unwrap().mpc).unwrap();
        assert!(rep.passed());
        assert!(rep.to_string().contains("convergence bound violated: N=8 <= 10"));
    }

    #[test]
    fn coefficient_formatting() {
        assert_eq!(format_coeff(1.0), "1");
        assert_eq!(format_coeff(-2.6180339887), "-2.618");
        assert_eq!(format_coeff(0.5), "0.5");
    }
}
