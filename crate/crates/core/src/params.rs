//! Physical parameters and the Fock-truncation margin rule.

use num_complex::Complex64 as C64;

use crate::error::{Result, SimError};

/// Fock levels needed to hold a coherent-scale amplitude `x` with
/// leakage below ~1e-10 (Poisson mean + 6 sigma + 10).
pub fn margin_levels(x: f64) -> f64 {
    x * x + 6.0 * x + 10.0
}

/// Largest column index `n` such that a state of ring radius sqrt(n)
/// displaced by `reach` still fits inside `n_fock` levels with margin.
/// Returns the number of certified columns (possibly 0).
pub fn certified_cols(reach: f64, n_fock: usize) -> usize {
    let nf = n_fock as f64;
    // solve x^2 + 6x + 10 = nf for the admissible radius x
    let disc = 36.0 - 4.0 * (10.0 - nf);
    if disc <= 0.0 {
        return 0;
    }
    let x_max = (-6.0 + disc.sqrt()) / 2.0;
    let r = x_max - reach;
    if r < 0.0 {
        0
    } else {
        ((r * r).floor() as usize + 1).min(n_fock)
    }
}

/// Physical constants of the driven atom-cavity system plus numerical
/// truncation and tolerance settings. Rates are in units of `gamma`.
#[derive(Debug, Clone, Copy)]
pub struct SystemParams {
    /// Atom-cavity coupling rate.
    pub g: f64,
    /// Cavity field decay rate (natural unit; default 1).
    pub gamma: f64,
    /// Drive strength E.
    pub drive: f64,
    /// Local-oscillator amplitude added before the detectors.
    pub beta: C64,
    /// Fock truncation: number of retained field levels.
    pub n_fock: usize,
    /// Numerical tolerance for state invariants and truncation guards.
    pub tol: f64,
}

impl SystemParams {
    /// Construct with the truncation-margin invariant enforced:
    /// `n_fock >= |alpha|^2 + 6|alpha| + 10` with `alpha = (2E + ig)/gamma`.
    pub fn new(g: f64, gamma: f64, drive: f64, beta: C64, n_fock: usize, tol: f64) -> Result<Self> {
        let p = SystemParams {
            g,
            gamma,
            drive,
            beta,
            n_fock,
            tol,
        };
        p.validate()?;
        let need = margin_levels(p.alpha().norm());
        if (n_fock as f64) < need {
            return Err(SimError::Truncation(format!(
                "n_fock = {} below margin {:.0} for |alpha| = {:.3}",
                n_fock,
                need.ceil(),
                p.alpha().norm()
            )));
        }
        Ok(p)
    }

    /// Construct with `n_fock` chosen by the margin rule.
    pub fn auto(g: f64, gamma: f64, drive: f64, beta: C64, tol: f64) -> Result<Self> {
        let alpha = (C64::new(2.0 * drive, g)) / gamma;
        let n_fock = margin_levels(alpha.norm()).ceil() as usize;
        Self::new(g, gamma, drive, beta, n_fock, tol)
    }

    /// Construct with an explicit `n_fock` that may sit below the
    /// coherent-state margin. Intended for operator-identity checks that
    /// restrict themselves to certified columns; `coherent_state` still
    /// enforces its own per-amplitude margin.
    pub fn with_fock_override(
        g: f64,
        gamma: f64,
        drive: f64,
        beta: C64,
        n_fock: usize,
        tol: f64,
    ) -> Result<Self> {
        let p = SystemParams {
            g,
            gamma,
            drive,
            beta,
            n_fock,
            tol,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(SimError::Domain("gamma must be > 0".into()));
        }
        if self.n_fock < 2 {
            return Err(SimError::Domain("n_fock must be >= 2".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SimError::Domain("tol must be > 0".into()));
        }
        if !self.g.is_finite() || !self.drive.is_finite() || !self.beta.is_finite() {
            return Err(SimError::Domain("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Steady-state coherent amplitude `alpha = (2E + ig)/gamma`.
    pub fn alpha(&self) -> C64 {
        C64::new(2.0 * self.drive, self.g) / self.gamma
    }

    /// Joint-space dimension: 2 * n_fock (atom factor first).
    pub fn joint_dim(&self) -> usize {
        2 * self.n_fock
    }
}
