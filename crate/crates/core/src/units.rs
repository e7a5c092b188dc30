//! Unit conventions: time in ns, rates in ns⁻¹, energies in μeV, angular
//! frequencies in rad/ns. Optical lengths are in μm, focal lengths in mm.

/// Reduced Planck constant in μeV·ns.
pub const HBAR_UEV_NS: f64 = 0.6582119569;

/// Converts an energy splitting ħΔ in μeV to an angular frequency in rad/ns.
pub fn energy_to_detuning(hbar_delta_uev: f64) -> f64 {
    hbar_delta_uev / HBAR_UEV_NS
}

/// Inverse of [`energy_to_detuning`].
pub fn detuning_to_energy(delta_rad_ns: f64) -> f64 {
    delta_rad_ns * HBAR_UEV_NS
}

/// Converts a Gaussian full width at half maximum to its standard deviation.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}
