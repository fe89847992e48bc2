use num_complex::Complex64;

use super::material::Material;

/// Complex relative permittivity η = ε_r − j·17.98·σ/f_GHz.
pub fn complex_permittivity(eps_r: f64, sigma: f64, carrier_hz: f64) -> Complex64 {
    Complex64::new(eps_r, -17.98 * sigma / (carrier_hz * 1e-9))
}

/// TE (horizontal polarization) reflection coefficient for incidence angle
/// `theta` measured from the surface normal.
pub fn fresnel_te(eta: Complex64, theta: f64) -> Complex64 {
    let (s, c) = theta.sin_cos();
    let root = (eta - s * s).sqrt();
    (c - root) / (c + root)
}

pub fn fresnel_reflection(material: &Material, incidence_rad: f64, carrier_hz: f64) -> Complex64 {
    let eta = complex_permittivity(material.eps_r, material.sigma_s_per_m, carrier_hz);
    fresnel_te(eta, incidence_rad)
}
