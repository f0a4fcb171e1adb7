//! Brute-force steady state of the driven Jaynes-Cummings master equation on a
//! truncated Fock space. Reference for the closed forms in `cqed`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::cqed::{CavityModel, DriveSettings, Position};

/// Largest allowed population of the top Fock level.
pub const CUTOFF_POPULATION_LIMIT: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("fock cutoff must be at least 3 (got {0})")]
    CutoffTooSmall(usize),
    #[error("population {population:e} at fock level {cutoff}; increase the cutoff")]
    CutoffPopulation { cutoff: usize, population: f64 },
    #[error("liouvillian is singular")]
    Singular,
}

/// Density operator on (cutoff + 1) photon levels times {ground, excited};
/// basis index 2n + s.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedState {
    pub rho: DMatrix<Complex64>,
    pub fock_cutoff: usize,
}

impl TruncatedState {
    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn expect(&self, op: &DMatrix<Complex64>) -> Complex64 {
        (op * &self.rho).trace()
    }

    pub fn fock_population(&self, n: usize) -> f64 {
        self.rho[(2 * n, 2 * n)].re + self.rho[(2 * n + 1, 2 * n + 1)].re
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleExpectations {
    /// <a>
    pub alpha: Complex64,
    /// <a† a>
    pub photon_number: f64,
    /// <σ>
    pub sigma: Complex64,
    /// <σ† σ>
    pub excitation: f64,
    pub state: TruncatedState,
}

fn operators(cutoff: usize) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let d = 2 * (cutoff + 1);
    let mut a = DMatrix::zeros(d, d);
    let mut s = DMatrix::zeros(d, d);
    for n in 0..=cutoff {
        for q in 0..2 {
            if n > 0 {
                a[(2 * (n - 1) + q, 2 * n + q)] = Complex64::new((n as f64).sqrt(), 0.0);
            }
        }
        s[(2 * n, 2 * n + 1)] = Complex64::new(1.0, 0.0);
    }
    (a, s)
}

/// Kronecker product `x ⊗ y`.
fn kron(x: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (xr, xc) = x.shape();
    let (yr, yc) = y.shape();
    let mut out = DMatrix::zeros(xr * yr, xc * yc);
    for i in 0..xr {
        for j in 0..xc {
            let v = x[(i, j)];
            if v == Complex64::ZERO {
                continue;
            }
            for k in 0..yr {
                for l in 0..yc {
                    out[(i * yr + k, j * yc + l)] = v * y[(k, l)];
                }
            }
        }
    }
    out
}

/// Steady state for explicit rates (rad/s): field decay `kappa`, dipole decay
/// `gamma`, coupling `g`, atom detuning `da`, cavity detuning `dc`, drive `eta`.
#[allow(clippy::too_many_arguments)]
pub fn steady_state_me_with(
    kappa: f64,
    gamma: f64,
    g: f64,
    da: f64,
    dc: f64,
    eta: f64,
    fock_cutoff: usize,
) -> Result<OracleExpectations, OracleError> {
    if fock_cutoff < 3 {
        return Err(OracleError::CutoffTooSmall(fock_cutoff));
    }
    // work in units of kappa to keep the matrix well scaled
    let (gm, gg, dda, ddc, et) = (gamma / kappa, g / kappa, da / kappa, dc / kappa, eta / kappa);
    let (a, s) = operators(fock_cutoff);
    let d = a.nrows();
    let c = |x: f64| Complex64::new(x, 0.0);
    let ad = a.adjoint();
    let sd = s.adjoint();
    let h = (&ad * &a) * c(-ddc) + (&sd * &s) * c(-dda) + (&ad * &s + &sd * &a) * c(gg) + (&ad - &a) * Complex64::new(0.0, et);

    // column-stacked vec: vec(A X B) = (Bᵀ ⊗ A) vec(X)
    let id = DMatrix::<Complex64>::identity(d, d);
    let mut l = (kron(&id, &h) - kron(&h.transpose(), &id)) * Complex64::new(0.0, -1.0);
    for (op, rate) in [(&a, 1.0), (&s, gm)] {
        let jump = op * c((2.0 * rate).sqrt());
        let jd = jump.adjoint();
        let jdj = &jd * &jump;
        l += kron(&jump.conjugate(), &jump) - (kron(&id, &jdj) + kron(&jdj.transpose(), &id)) * c(0.5);
    }
    // replace the first equation by the trace condition
    let mut rhs = DVector::<Complex64>::zeros(d * d);
    for j in 0..d * d {
        l[(0, j)] = Complex64::ZERO;
    }
    for i in 0..d {
        l[(0, i * d + i)] = c(1.0);
    }
    rhs[0] = c(1.0);
    let x = l.lu().solve(&rhs).ok_or(OracleError::Singular)?;
    let rho = DMatrix::from_column_slice(d, d, x.as_slice());
    let state = TruncatedState { rho, fock_cutoff };

    let top = state.fock_population(fock_cutoff);
    if top > CUTOFF_POPULATION_LIMIT {
        return Err(OracleError::CutoffPopulation { cutoff: fock_cutoff, population: top });
    }
    Ok(OracleExpectations {
        alpha: state.expect(&a),
        photon_number: state.expect(&(&ad * &a)).re,
        sigma: state.expect(&s),
        excitation: state.expect(&(&sd * &s)).re,
        state,
    })
}

/// Steady state for a static atom at `pos` under `drive`.
pub fn steady_state_me(
    model: &CavityModel,
    pos: &Position,
    drive: &DriveSettings,
    fock_cutoff: usize,
) -> Result<OracleExpectations, OracleError> {
    steady_state_me_with(
        model.kappa,
        model.gamma,
        model.coupling(pos),
        model.stark_detuning(pos, drive.trap_depth_now),
        drive.cavity_detuning,
        model.drive_eta(drive.probe_power),
        fock_cutoff,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ExperimentParams, TWO_PI};

    fn mhz(x: f64) -> f64 {
        TWO_PI * 1e6 * x
    }

    #[test]
    fn empty_cavity_is_coherent() {
        let (k, dc, eta) = (mhz(1.4), mhz(0.7), 0.05 * mhz(1.4));
        let r = steady_state_me_with(k, mhz(3.0), 0.0, mhz(35.0), dc, eta, 6).unwrap();
        let exact = Complex64::new(eta, 0.0) / Complex64::new(k, -dc);
        assert!((r.alpha - exact).norm() < 1e-12 * exact.norm());
        assert!((r.photon_number - exact.norm_sqr()).abs() < 1e-12 * exact.norm_sqr());
        assert!(r.excitation.abs() < 1e-15);
    }

    #[test]
    fn no_drive_is_vacuum() {
        let r = steady_state_me_with(mhz(1.4), mhz(3.0), mhz(16.0), mhz(35.0), 0.0, 0.0, 4).unwrap();
        assert!(r.alpha.norm() < 1e-14 && r.sigma.norm() < 1e-14);
        assert!(r.photon_number.abs() < 1e-14 && r.excitation.abs() < 1e-14);
    }

    #[test]
    fn strong_drive_demands_more_levels() {
        let e = steady_state_me_with(mhz(1.4), mhz(3.0), 0.0, 0.0, 0.0, mhz(1.4), 3).unwrap_err();
        assert!(matches!(e, OracleError::CutoffPopulation { cutoff: 3, .. }));
        assert_eq!(steady_state_me_with(1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2).unwrap_err(), OracleError::CutoffTooSmall(2));
    }

    #[test]
    fn state_is_physical() {
        let r = steady_state_me_with(mhz(1.4), mhz(3.0), mhz(16.0), mhz(18.0), mhz(2.0), 0.1 * mhz(1.4), 5).unwrap();
        assert!((r.state.trace() - 1.0).norm() < 1e-9);
        assert!(r.state.hermiticity_error() < 1e-12);
        assert!(r.state.min_eigenvalue() > -1e-10);
    }

    #[test]
    fn antinode_matches_closed_form() {
        let p = ExperimentParams::default();
        let m = CavityModel::new(&p);
        let power = 0.005 / p.detection.photon_number_per_pw * 1e-12;
        let drive = DriveSettings::new(power, 0.0, p.trap.guide_depth);
        let r = steady_state_me(&m, &Position::ORIGIN, &drive, 5).unwrap();
        let sc = m.steady_state(&Position::ORIGIN, &drive);
        assert!((r.alpha - sc.alpha).norm() < 0.01 * sc.alpha.norm());
        assert!((r.sigma - sc.sigma).norm() < 0.01 * sc.sigma.norm());
    }
}
