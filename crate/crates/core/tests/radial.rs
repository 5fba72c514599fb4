// Radial integrals of the power penalty against Beta-function closed forms.

use approx::assert_relative_eq;
use proptest::prelude::*;

use urbanot::semidiscrete::{mass_of_radius, penalty_integral, radius_of_mass, slope_integral, transport_integral};
use urbanot::FunctionFamily;

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let sum = C[1..].iter().enumerate().fold(C[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

fn beta(a: f64, b: f64) -> f64 {
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// Surface measure n·ωₙ of the unit sphere.
fn sphere(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    n as f64 * std::f64::consts::PI.powf(h) / ln_gamma(h + 1.0).exp()
}

/// ∫₀^R (R^p − r^p)^e r^{s−1} dr · nωₙ
fn power_moment(n: usize, p: f64, radius: f64, e: f64, s: f64) -> f64 {
    sphere(n) * radius.powf(p * e + s) / p * beta(s / p, e + 1.0)
}

#[test]
fn lanczos_matches_known_values() {
    assert_relative_eq!(ln_gamma(5.0).exp(), 24.0, max_relative = 1e-13);
    assert_relative_eq!(ln_gamma(0.5).exp(), std::f64::consts::PI.sqrt(), max_relative = 1e-13);
}

#[test]
fn power_family_integrals_match_beta_forms() {
    for &(a, q) in &[(1.0, 2.0), (0.4, 3.0), (2.5, 1.5), (1.0, 1.25)] {
        let f = FunctionFamily::power(a, q).unwrap();
        let beta_exp = 1.0 / (q - 1.0);
        let scale = (a * q).powf(-beta_exp);
        for n in [1, 2, 3] {
            for p in [1.0, 1.5, 2.0, 3.0] {
                for radius in [0.05, 0.4, 1.3] {
                    let nf = n as f64;
                    let mass = scale * power_moment(n, p, radius, beta_exp, nf);
                    assert_relative_eq!(mass_of_radius(&f, p, n, radius), mass, max_relative = 1e-9);
                    let transport = scale * power_moment(n, p, radius, beta_exp, nf + p);
                    assert_relative_eq!(transport_integral(&f, p, n, radius), transport, max_relative = 1e-9);
                    // f(k(t)) = a (t / aq)^{β+1}
                    let penalty = a * (a * q).powf(-(beta_exp + 1.0)) * power_moment(n, p, radius, beta_exp + 1.0, nf);
                    assert_relative_eq!(penalty_integral(&f, p, n, radius), penalty, max_relative = 1e-9);
                    // k′(t) = β/(aq) (t / aq)^{β−1}
                    let slope = beta_exp / (a * q) * (a * q).powf(1.0 - beta_exp) * power_moment(n, p, radius, beta_exp - 1.0, nf);
                    assert_relative_eq!(slope_integral(&f, p, n, radius), slope, max_relative = 1e-8);
                }
            }
        }
    }
}

#[test]
fn mass_derivative_is_slope_integral() {
    let f = FunctionFamily::power(0.8, 2.5).unwrap();
    for (n, p) in [(1, 1.0), (2, 2.0), (3, 1.5)] {
        let r = 0.6;
        let h = 1e-5;
        let numeric = (mass_of_radius(&f, p, n, r + h) - mass_of_radius(&f, p, n, r - h)) / (2.0 * h);
        let analytic = p * r.powf(p - 1.0) * slope_integral(&f, p, n, r);
        assert_relative_eq!(numeric, analytic, max_relative = 1e-7);
    }
}

proptest! {
    #[test]
    fn radius_round_trip(log_m in -6.0f64..0.0, q in 1.2f64..4.0, a in 0.1f64..5.0, n in 1usize..=3, pi in 0usize..3) {
        let p = [1.0, 1.5, 2.0][pi];
        let f = FunctionFamily::power(a, q).unwrap();
        let m = 10f64.powf(log_m);
        let r = radius_of_mass(&f, p, n, m).unwrap();
        prop_assert!((mass_of_radius(&f, p, n, r) - m).abs() <= 1e-9 * m.max(1e-3));
    }
}
