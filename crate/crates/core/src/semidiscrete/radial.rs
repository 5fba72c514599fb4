//! Radial integrals for a single ball-shaped catchment B(x, R) whose density
//! is u(x) = k(R^p − |x − x₀|^p).

use crate::error::{Error, Result};
use crate::functionals::FunctionFamily;
use crate::quadrature::{power_gap, radial_integral_with_gap};

/// m(R) = ∫₀^R k(R^p − r^p) nωₙ r^{n−1} dr.
pub fn mass_of_radius(f: &FunctionFamily, p: f64, n: usize, radius: f64) -> f64 {
    radial_integral_with_gap(radius, n, |_, gap| f.k(power_gap(radius, gap, p)))
}

/// ∫₀^R k′(R^p − r^p) nωₙ r^{n−1} dr, so that dm/dR = p R^{p−1} times this.
pub fn slope_integral(f: &FunctionFamily, p: f64, n: usize, radius: f64) -> f64 {
    radial_integral_with_gap(radius, n, |_, gap| f.dk(power_gap(radius, gap, p)))
}

/// ∫ k(R^p − r^p) r^p: the transport cost of the ball to its centre.
pub fn transport_integral(f: &FunctionFamily, p: f64, n: usize, radius: f64) -> f64 {
    radial_integral_with_gap(radius, n, |r, gap| f.k(power_gap(radius, gap, p)) * r.powf(p))
}

/// ∫ f(k(R^p − r^p)): the crowding penalty inside the ball.
pub fn penalty_integral(f: &FunctionFamily, p: f64, n: usize, radius: f64) -> f64 {
    radial_integral_with_gap(radius, n, |_, gap| f.f(f.k(power_gap(radius, gap, p))))
}

/// Inverts [`mass_of_radius`]; the map is strictly increasing in R.
///
/// Works on ln m against ln R, which is exactly linear for power penalties,
/// with an Illinois-type false-position step safeguarded by bisection.
pub fn radius_of_mass(f: &FunctionFamily, p: f64, n: usize, mass: f64) -> Result<f64> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::NonpositiveMass { mass });
    }
    let target = mass.ln();
    let residual = |x: f64| {
        let m = mass_of_radius(f, p, n, x.exp());
        if m > 0.0 {
            m.ln() - target
        } else {
            f64::NEG_INFINITY
        }
    };
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let (mut flo, mut fhi) = (residual(lo), residual(hi));
    let mut guard = 0;
    while flo > 0.0 {
        hi = lo;
        fhi = flo;
        lo -= 2.0;
        flo = residual(lo);
        guard += 1;
        if guard > 400 {
            return Err(Error::NoConvergence { iterations: guard, residual: flo });
        }
    }
    while fhi < 0.0 {
        lo = hi;
        flo = fhi;
        hi += 2.0;
        fhi = residual(hi);
        guard += 1;
        if guard > 400 {
            return Err(Error::NoConvergence { iterations: guard, residual: fhi });
        }
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let mut x = if flo.is_finite() && fhi.is_finite() && fhi != flo {
            (lo * fhi - hi * flo) / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = residual(x);
        if fx.abs() <= 1e-15 || hi - lo <= 1e-15 * (1.0 + x.abs()) {
            return Ok(x.exp());
        }
        if fx < 0.0 {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
