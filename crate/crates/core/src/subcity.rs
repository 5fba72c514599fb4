//! Energy of a single service atom together with the ball of residents it
//! serves in ℝⁿ:
//!
//! ```text
//! E(m) = g(m) + ∫₀^{R(m)} [f(k(Rᵖ − rᵖ)) + k(Rᵖ − rᵖ) rᵖ] nωₙ r^{n−1} dr
//! ```
//!
//! with E′(m) = g′(m) + R(m)ᵖ and E″(m) = g″(m) + 1/∫₀^R k′(Rᵖ − rᵖ) nωₙ r^{n−1} dr.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{ConcentrationFamily, FunctionFamily};
use crate::par;
use crate::semidiscrete::{mass_of_radius, penalty_integral, radius_of_mass, slope_integral, transport_integral};

/// Slack allowed above 1 before a mass is rejected (sums of masses drift).
const MASS_SLACK: f64 = 1e-12;

/// The ingredients that determine E.
#[derive(Debug, Clone)]
pub struct SubcityModel {
    pub f: FunctionFamily,
    pub g: ConcentrationFamily,
    pub p: f64,
    pub n: usize,
}

impl SubcityModel {
    pub fn new(f: FunctionFamily, g: ConcentrationFamily, p: f64, n: usize) -> Self {
        SubcityModel { f, g, p, n }
    }

    fn check(&self, m: f64, allow_zero: bool) -> Result<()> {
        let ok = if allow_zero { m >= 0.0 } else { m > 0.0 };
        if !(ok && m <= 1.0 + MASS_SLACK) {
            return Err(Error::MassOutOfRange { mass: m });
        }
        Ok(())
    }

    pub fn radius(&self, m: f64) -> Result<f64> {
        self.check(m, true)?;
        if m == 0.0 {
            return Ok(0.0);
        }
        radius_of_mass(&self.f, self.p, self.n, m)
    }

    /// The ℝⁿ part of E: crowding plus transport inside the ball of mass m.
    pub fn resident_cost(&self, m: f64) -> Result<f64> {
        let r = self.radius(m)?;
        if r == 0.0 {
            return Ok(0.0);
        }
        Ok(penalty_integral(&self.f, self.p, self.n, r) + transport_integral(&self.f, self.p, self.n, r))
    }

    pub fn energy(&self, m: f64) -> Result<f64> {
        Ok(self.g.g(m) + self.resident_cost(m)?)
    }

    pub fn energy_dm(&self, m: f64) -> Result<f64> {
        self.check(m, false)?;
        Ok(self.g.dg(m) + self.radius(m)?.powf(self.p))
    }

    pub fn energy_d2m(&self, m: f64) -> Result<f64> {
        self.check(m, false)?;
        let r = self.radius(m)?;
        Ok(self.g.d2g(m) + 1.0 / slope_integral(&self.f, self.p, self.n, r))
    }

    /// g″(m(R))·∫₀^R k′(Rᵖ − rᵖ) nωₙ r^{n−1} dr.
    pub fn atomization_product(&self, radius: f64) -> f64 {
        let m = mass_of_radius(&self.f, self.p, self.n, radius);
        self.g.d2g(m) * slope_integral(&self.f, self.p, self.n, radius)
    }
}

pub fn subcity_energy(f: &FunctionFamily, g: &ConcentrationFamily, p: f64, n: usize, m: f64) -> Result<f64> {
    SubcityModel::new(f.clone(), g.clone(), p, n).energy(m)
}

pub fn subcity_energy_dm(f: &FunctionFamily, g: &ConcentrationFamily, p: f64, n: usize, m: f64) -> Result<f64> {
    SubcityModel::new(f.clone(), g.clone(), p, n).energy_dm(m)
}

pub fn subcity_energy_d2m(f: &FunctionFamily, g: &ConcentrationFamily, p: f64, n: usize, m: f64) -> Result<f64> {
    SubcityModel::new(f.clone(), g.clone(), p, n).energy_d2m(m)
}

/// One row of an [`EnergyCurve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySample {
    pub m: f64,
    pub radius: f64,
    pub e: f64,
    pub de: f64,
    pub d2e: f64,
}

/// E, E′ and E″ sampled on a log-spaced mass grid ending at m = 1.
#[derive(Debug, Clone)]
pub struct EnergyCurve {
    pub model: SubcityModel,
    pub samples: Vec<EnergySample>,
}

impl EnergyCurve {
    pub const DEFAULT_MIN_MASS: f64 = 1e-4;
    pub const DEFAULT_SAMPLES: usize = 241;

    pub fn build(model: SubcityModel) -> Result<Self> {
        Self::build_with(model, Self::DEFAULT_MIN_MASS, Self::DEFAULT_SAMPLES)
    }

    pub fn build_with(model: SubcityModel, min_mass: f64, count: usize) -> Result<Self> {
        if !(min_mass > 0.0 && min_mass < 1.0) || count < 2 {
            return Err(Error::InvalidInput("energy curve needs 0 < min mass < 1 and at least 2 samples".into()));
        }
        let lo = min_mass.ln();
        let masses: Vec<f64> = (0..count)
            .map(|i| if i + 1 == count { 1.0 } else { (lo * (1.0 - i as f64 / (count - 1) as f64)).exp() })
            .collect();
        let rows = par::map_slice(&masses, |&m| -> Result<EnergySample> {
            let radius = model.radius(m)?;
            Ok(EnergySample {
                m,
                radius,
                e: model.energy(m)?,
                de: model.energy_dm(m)?,
                d2e: model.energy_d2m(m)?,
            })
        });
        let samples = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(EnergyCurve { model, samples })
    }

    /// Number of sign changes of E″ along the samples.
    pub fn curvature_sign_changes(&self) -> usize {
        self.samples.windows(2).filter(|w| (w[0].d2e < 0.0) != (w[1].d2e < 0.0)).count()
    }

    /// Columns m, E, E′, E″.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,E,E',E''\n");
        for s in &self.samples {
            let _ = writeln!(out, "{:e},{:e},{:e},{:e}", s.m, s.e, s.de, s.d2e);
        }
        out
    }
}

/// Largest sampled m₀ with E″ < 0 on every sample up to m₀; 0 if the first
/// sample is already convex.
pub fn subadditivity_threshold(curve: &EnergyCurve) -> f64 {
    let mut m0 = 0.0;
    for s in &curve.samples {
        if s.d2e < 0.0 {
            m0 = s.m;
        } else {
            break;
        }
    }
    m0
}

/// Upper bound 1 + ⌊2/m₀⌋ on the number of atoms of an optimal ν.
pub fn atom_count_bound(m0: f64) -> usize {
    if m0 <= 0.0 {
        usize::MAX
    } else {
        1 + (2.0 / m0).floor() as usize
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomizationReport {
    pub radii: Vec<f64>,
    pub products: Vec<f64>,
    /// Product at the smallest radius of the sweep.
    pub limsup_estimate: f64,
    pub satisfied: bool,
}

/// Radii 10⁻¹, 10^{-1.5}, …, 10⁻⁶.
pub fn default_radius_sweep() -> Vec<f64> {
    (0..11).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect()
}

/// Points of the sweep that must already sit below −1.
const TAIL: usize = 3;

/// Estimates limsup_{R→0} g″(m(R))·∫k′ by a decreasing radius sweep. The
/// condition counts as satisfied when the last few products are below −1
/// and the products keep decreasing along the whole sweep.
pub fn check_atomization_condition(model: &SubcityModel, radii: &[f64]) -> Result<AtomizationReport> {
    if radii.len() < TAIL || radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("radius sweep must be positive and strictly decreasing".into()));
    }
    let products: Vec<f64> = par::map_slice(radii, |&r| model.atomization_product(r));
    let tail = &products[products.len() - TAIL..];
    let satisfied = tail.iter().all(|&v| v < -1.0) && products.windows(2).all(|w| w[1] < w[0]);
    Ok(AtomizationReport {
        radii: radii.to_vec(),
        limsup_estimate: *products.last().unwrap(),
        products,
        satisfied,
    })
}
