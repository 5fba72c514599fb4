//! Penalty families: the convex resident-concentration cost f with its
//! derived maps k = (f′)⁻¹ and f*, and the subadditive service cost g.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::{AtomicMeasure, GridDensity};

/// User-supplied convex penalty. Implementors must keep f(0) = 0, f′(0) = 0,
/// strict convexity and superlinear growth; `k` must return 0 for t ≤ 0.
pub trait ConvexPenalty: Send + Sync + fmt::Debug {
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;
    fn inverse_derivative(&self, t: f64) -> f64;
    fn inverse_derivative_slope(&self, t: f64) -> f64;
    fn conjugate(&self, t: f64) -> f64 {
        let s = self.inverse_derivative(t);
        t * s - self.value(s)
    }
}

/// User-supplied service cost; must satisfy g(0) = 0 and be subadditive.
pub trait ConcentrationCost: Send + Sync + fmt::Debug {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
    fn second_derivative(&self, t: f64) -> f64;
}

/// The convex penalty f on resident densities.
#[derive(Debug, Clone)]
pub enum FunctionFamily {
    /// f(s) = s²/2
    Quadratic,
    /// f(s) = a·s^q, a > 0, q > 1
    Power { a: f64, q: f64 },
    Custom(Arc<dyn ConvexPenalty>),
}

impl FunctionFamily {
    pub fn power(a: f64, q: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && q > 1.0 && q.is_finite()) {
            return Err(Error::InvalidInput(format!("power penalty needs a > 0, q > 1 (got a={a}, q={q})")));
        }
        Ok(FunctionFamily::Power { a, q })
    }

    pub fn f(&self, s: f64) -> f64 {
        match self {
            FunctionFamily::Quadratic => 0.5 * s * s,
            FunctionFamily::Power { a, q } => {
                if s <= 0.0 {
                    0.0
                } else {
                    a * s.powf(*q)
                }
            }
            FunctionFamily::Custom(c) => c.value(s),
        }
    }

    pub fn df(&self, s: f64) -> f64 {
        match self {
            FunctionFamily::Quadratic => s,
            FunctionFamily::Power { a, q } => {
                if s <= 0.0 {
                    0.0
                } else {
                    a * q * s.powf(q - 1.0)
                }
            }
            FunctionFamily::Custom(c) => c.derivative(s),
        }
    }

    /// k = (f′)⁻¹, extended by zero on t ≤ 0.
    pub fn k(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            FunctionFamily::Quadratic => t,
            FunctionFamily::Power { a, q } => (t / (a * q)).powf(1.0 / (q - 1.0)),
            FunctionFamily::Custom(c) => c.inverse_derivative(t),
        }
    }

    /// k′(t) for t > 0; zero for t ≤ 0.
    pub fn dk(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            FunctionFamily::Quadratic => 1.0,
            FunctionFamily::Power { q, .. } => self.k(t) / ((q - 1.0) * t),
            FunctionFamily::Custom(c) => c.inverse_derivative_slope(t),
        }
    }

    /// f*(t) = sup_{s ≥ 0} st − f(s); zero for t ≤ 0.
    pub fn conjugate(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            FunctionFamily::Quadratic => 0.5 * t * t,
            FunctionFamily::Power { a, q } => {
                let s = self.k(t);
                t * s - a * s.powf(*q)
            }
            FunctionFamily::Custom(c) => c.conjugate(t),
        }
    }
}

/// The subadditive cost g of a service pole of given mass.
#[derive(Debug, Clone)]
pub enum ConcentrationFamily {
    /// g(t) = b·t^r, b > 0, 0 < r < 1
    Power { b: f64, r: f64 },
    Custom(Arc<dyn ConcentrationCost>),
}

impl ConcentrationFamily {
    pub fn power(b: f64, r: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite() && r > 0.0 && r < 1.0) {
            return Err(Error::InvalidInput(format!("power service cost needs b > 0, 0 < r < 1 (got b={b}, r={r})")));
        }
        Ok(ConcentrationFamily::Power { b, r })
    }

    pub fn g(&self, t: f64) -> f64 {
        match self {
            ConcentrationFamily::Power { b, r } => {
                if t <= 0.0 {
                    0.0
                } else {
                    b * t.powf(*r)
                }
            }
            ConcentrationFamily::Custom(c) => c.value(t),
        }
    }

    /// g′(t); +∞ at t = 0 for the power family.
    pub fn dg(&self, t: f64) -> f64 {
        match self {
            ConcentrationFamily::Power { b, r } => b * r * t.powf(r - 1.0),
            ConcentrationFamily::Custom(c) => c.derivative(t),
        }
    }

    pub fn d2g(&self, t: f64) -> f64 {
        match self {
            ConcentrationFamily::Power { b, r } => b * r * (r - 1.0) * t.powf(r - 2.0),
            ConcentrationFamily::Custom(c) => c.second_derivative(t),
        }
    }
}

/// F(μ) = ∫ f(u) by the midpoint rule on the density's own grid.
pub fn eval_f(f: &FunctionFamily, mu: &GridDensity) -> f64 {
    let v = mu.values();
    crate::par::sum(v.len(), |i| f.f(v[i])) * mu.cell_volume()
}

/// G(ν) = Σ g(aᵢ).
pub fn eval_g(g: &ConcentrationFamily, nu: &AtomicMeasure) -> f64 {
    nu.atoms().iter().map(|a| g.g(a.mass)).sum()
}

/// k(t), the optimal density level for a potential gap t.
pub fn k_of(f: &FunctionFamily, t: f64) -> f64 {
    f.k(t)
}

pub fn conjugate_f(f: &FunctionFamily, t: f64) -> f64 {
    f.conjugate(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Domain, Grid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn density(values: Vec<f64>) -> GridDensity {
        let n = values.len();
        GridDensity::new(Grid::uniform(Domain::unit_cube(1), n).unwrap(), values).unwrap()
    }

    #[test]
    fn eval_f_examples() {
        let q = FunctionFamily::Quadratic;
        assert_eq!(eval_f(&q, &density(vec![0.0; 4])), 0.0);
        assert_relative_eq!(eval_f(&q, &density(vec![1.0; 4])), 0.5);
        assert_relative_eq!(eval_f(&q, &density(vec![2.0, 0.0])), 1.0);
    }

    #[test]
    fn eval_g_examples() {
        let g = ConcentrationFamily::power(1.0, 0.5).unwrap();
        let one = AtomicMeasure::from_parts(1, vec![vec![0.5]], vec![1.0]).unwrap();
        assert_relative_eq!(eval_g(&g, &one), 1.0);
        let two = AtomicMeasure::from_parts(1, vec![vec![0.2], vec![0.8]], vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(eval_g(&g, &two), 2f64.sqrt(), max_relative = 1e-15);
        assert!(eval_g(&g, &one) <= eval_g(&g, &two));
    }

    #[test]
    fn k_examples() {
        assert_eq!(k_of(&FunctionFamily::Quadratic, 0.3), 0.3);
        assert_relative_eq!(k_of(&FunctionFamily::power(1.0, 2.0).unwrap(), 1.0), 0.5);
        for f in [FunctionFamily::Quadratic, FunctionFamily::power(3.0, 1.5).unwrap()] {
            assert_eq!(k_of(&f, -1.0), 0.0);
        }
    }

    #[test]
    fn conjugate_examples() {
        assert_relative_eq!(conjugate_f(&FunctionFamily::Quadratic, 1.0), 0.5);
        assert_eq!(conjugate_f(&FunctionFamily::Quadratic, 0.0), 0.0);
        assert_eq!(conjugate_f(&FunctionFamily::power(2.0, 3.0).unwrap(), 0.0), 0.0);
        assert_relative_eq!(conjugate_f(&FunctionFamily::power(1.0, 2.0).unwrap(), 1.0), 0.25);
    }

    #[test]
    fn invalid_parameters() {
        assert!(FunctionFamily::power(1.0, 1.0).is_err());
        assert!(FunctionFamily::power(-1.0, 2.0).is_err());
        assert!(ConcentrationFamily::power(1.0, 1.0).is_err());
        assert!(ConcentrationFamily::power(0.0, 0.5).is_err());
    }

    #[test]
    fn dk_matches_finite_difference() {
        let f = FunctionFamily::power(0.7, 2.6).unwrap();
        for t in [0.1, 1.0, 5.0] {
            let h = 1e-6 * t;
            let fd = (f.k(t + h) - f.k(t - h)) / (2.0 * h);
            assert_relative_eq!(f.dk(t), fd, max_relative = 1e-7);
        }
    }

    fn families() -> impl Strategy<Value = FunctionFamily> {
        prop_oneof![
            Just(FunctionFamily::Quadratic),
            (0.1f64..5.0, 1.1f64..4.0).prop_map(|(a, q)| FunctionFamily::Power { a, q }),
        ]
    }

    proptest! {
        #[test]
        fn fenchel_young_equality(f in families(), t in 0.0f64..100.0) {
            let s = f.k(t);
            let lhs = f.f(s) + f.conjugate(t);
            prop_assert!((lhs - t * s).abs() <= 1e-10 * (1.0 + t * s));
        }

        #[test]
        fn k_inverts_derivative(f in families(), t in 1e-6f64..100.0) {
            prop_assert!((f.df(f.k(t)) - t).abs() <= 1e-10 * (1.0 + t));
        }

        #[test]
        fn unhappiness_ratio_nondecreasing(f in families(), u in 1e-3f64..50.0, du in 0.0f64..10.0) {
            let v = u + du;
            prop_assert!(f.f(u) / u <= f.f(v) / v + 1e-12);
        }

        #[test]
        fn service_cost_subadditive(b in 0.1f64..5.0, r in 0.05f64..0.95, s in 0.0f64..1.0, t in 0.0f64..1.0) {
            let g = ConcentrationFamily::Power { b, r };
            prop_assert!(g.g(s + t) <= g.g(s) + g.g(t) + 1e-12);
        }

        #[test]
        fn conjugate_is_supremum(f in families(), t in 0.0f64..20.0, s in 0.0f64..20.0) {
            prop_assert!(s * t - f.f(s) <= f.conjugate(t) + 1e-9 * (1.0 + s * t));
        }
    }
}
