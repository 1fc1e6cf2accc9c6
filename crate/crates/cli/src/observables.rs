//! Standard observables reported in time series.

use cqed_homodyne::hilbert::{make_annihilator, make_atomic_ops, DensityMatrix};
use cqed_homodyne::linalg::dagger;
use cqed_homodyne::SystemParams;
use num_complex::Complex64 as C64;

pub struct ObservableSet {
    a: cqed_homodyne::linalg::CMat,
    number: cqed_homodyne::linalg::CMat,
    sigma_z: cqed_homodyne::linalg::CMat,
}

pub struct Observables {
    pub trace: f64,
    pub purity: f64,
    pub n_photon: f64,
    pub sigma_z: f64,
    pub a_mean: C64,
}

impl ObservableSet {
    pub fn new(params: &SystemParams) -> Self {
        let a = make_annihilator(params);
        let number = dagger(&a).dot(&a);
        let at = make_atomic_ops(params.n_fock);
        ObservableSet {
            a,
            number,
            sigma_z: at.sigma_z,
        }
    }

    pub fn measure(&self, rho: &DensityMatrix) -> Observables {
        Observables {
            trace: rho.trace().re,
            purity: rho.purity(),
            n_photon: rho.expect(&self.number).re,
            sigma_z: rho.expect(&self.sigma_z).re,
            a_mean: rho.expect(&self.a),
        }
    }
}

/// Column names shared by all series outputs.
pub fn series_columns(with_lambda: bool) -> Vec<String> {
    let mut cols: Vec<String> = [
        "time", "trace", "purity", "n_photon", "sigma_z", "re_a", "im_a",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if with_lambda {
        cols.push("lambda1".into());
    }
    cols
}

pub fn series_row(time: f64, obs: &Observables, lambda1: Option<f64>) -> Vec<f64> {
    let mut row = vec![
        time,
        obs.trace,
        obs.purity,
        obs.n_photon,
        obs.sigma_z,
        obs.a_mean.re,
        obs.a_mean.im,
    ];
    if let Some(l) = lambda1 {
        row.push(l);
    }
    row
}
