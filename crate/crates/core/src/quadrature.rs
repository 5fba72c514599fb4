//! Gauss–Legendre quadrature and radial integrals over balls in ℝⁿ.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Number of Gauss–Legendre nodes used for every radial integral.
pub const ORDER: usize = 64;

/// Nodes and weights of an `order`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(order, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(order: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=order {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let n = order as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Precomputed rule mapped to [0, 1] together with the grading map below.
struct GradedRule {
    /// r / R at each node.
    s: Vec<f64>,
    /// 1 − r / R, computed without cancellation.
    sc: Vec<f64>,
    /// Quadrature weight times the Jacobian of the grading map.
    w: Vec<f64>,
}

// Grading r = R·φ(t) with φ' ∝ t⁵(1−t)⁵ flattens algebraic endpoint behaviour
// such as (R^p − r^p)^β near r = R and r^p near 0; polynomial integrands stay
// polynomial of degree < 2·ORDER and are integrated exactly.
const GRADE: i32 = 5;

fn graded_rule() -> &'static GradedRule {
    static RULE: OnceLock<GradedRule> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(ORDER);
        let n_poly = 2 * GRADE + 1;
        let norm = binomial(n_poly as u64 - 1, GRADE as u64) as f64 * (n_poly as f64);
        let mut s = Vec::with_capacity(ORDER);
        let mut sc = Vec::with_capacity(ORDER);
        let mut ww = Vec::with_capacity(ORDER);
        for (xi, wi) in x.iter().zip(&w) {
            let t = 0.5 * (xi + 1.0);
            let phi = regularized_beta_poly(t, GRADE as usize + 1, n_poly as usize);
            let dphi = norm * t.powi(GRADE) * (1.0 - t).powi(GRADE);
            s.push(phi);
            sc.push(regularized_beta_poly(1.0 - t, GRADE as usize + 1, n_poly as usize));
            ww.push(0.5 * wi * dphi);
        }
        GradedRule { s, sc, w: ww }
    })
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// I_t(a, n + 1 − a) for integer a, as the binomial tail Σ_{j≥a} C(n,j) t^j (1−t)^{n−j}.
fn regularized_beta_poly(t: f64, a: usize, n: usize) -> f64 {
    (a..=n)
        .map(|j| binomial(n as u64, j as u64) as f64 * t.powi(j as i32) * (1.0 - t).powi((n - j) as i32))
        .sum()
}

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// ∫₀^R h(r) · nωₙ r^{n−1} dr, i.e. the integral of a radial function over B(0, R).
pub fn radial_integral(radius: f64, n: usize, h: impl Fn(f64) -> f64) -> f64 {
    radial_integral_with_gap(radius, n, |r, _| h(r))
}

/// As [`radial_integral`], but `h` also receives the gap R − r, evaluated
/// without cancellation near the rim of the ball.
pub fn radial_integral_with_gap(radius: f64, n: usize, h: impl Fn(f64, f64) -> f64) -> f64 {
    if radius <= 0.0 {
        return 0.0;
    }
    let rule = graded_rule();
    let shell = n as f64 * unit_ball_volume(n);
    let mut acc = 0.0;
    for ((s, sc), w) in rule.s.iter().zip(&rule.sc).zip(&rule.w) {
        let r = radius * s;
        acc += w * h(r, radius * sc) * r.powi(n as i32 - 1);
    }
    acc * shell * radius
}

/// R^p − r^p expressed through r and the gap R − r, accurate for small gaps.
pub fn power_gap(radius: f64, gap: f64, p: f64) -> f64 {
    if radius <= 0.0 {
        return 0.0;
    }
    if p == 2.0 {
        return gap * (2.0 * radius - gap);
    }
    if p == 1.0 {
        return gap;
    }
    -radius.powf(p) * (p * (-gap / radius).ln_1p()).exp_m1()
}

/// Plain Gauss–Legendre integral of `h` over [lo, hi].
pub fn integrate(lo: f64, hi: f64, h: impl Fn(f64) -> f64) -> f64 {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (x, w) = RULE.get_or_init(|| gauss_legendre(ORDER));
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    x.iter().zip(w).map(|(xi, wi)| wi * h(mid + half * xi)).sum::<f64>() * half
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_two_and_nodes_sorted() {
        for order in [1, 2, 5, 16, 64] {
            let (x, w) = gauss_legendre(order);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn exact_for_high_degree_polynomials() {
        // ∫_{-1}^{1} x^126 dx = 2/127
        let v = integrate(-1.0, 1.0, |x| x.powi(126));
        assert_relative_eq!(v, 2.0 / 127.0, max_relative = 1e-12);
        assert_relative_eq!(integrate(0.0, 2.0, |x| x * x), 8.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn ball_volumes() {
        assert_relative_eq!(unit_ball_volume(1), 2.0);
        assert_relative_eq!(unit_ball_volume(2), PI);
        assert_relative_eq!(unit_ball_volume(3), 4.0 * PI / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn radial_integral_of_one_is_ball_volume() {
        for n in 1..=3 {
            let v = radial_integral(1.7, n, |_| 1.0);
            assert_relative_eq!(v, unit_ball_volume(n) * 1.7f64.powi(n as i32), max_relative = 1e-13);
        }
    }

    #[test]
    fn radial_integral_with_endpoint_singularity() {
        // ∫_{-1}^{1} sqrt(1 − r) dr over the "ball" [-1, 1] in 1D of the radial profile (1−r)^{1/2}
        // equals 2·∫₀¹ (1−r)^{1/2} dr = 4/3.
        let v = radial_integral(1.0, 1, |r| (1.0 - r).sqrt());
        assert_relative_eq!(v, 4.0 / 3.0, max_relative = 1e-10);
        // ∫₀¹ (1−r)^{-1/2} dr = 2 (integrable singularity), times the 1D shell factor 2.
        let v = radial_integral_with_gap(1.0, 1, |_, gap| 1.0 / gap.sqrt());
        assert_relative_eq!(v, 4.0, max_relative = 1e-6);
    }

    #[test]
    fn power_gap_is_accurate() {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let (r_big, g) = (2.0f64, 0.5f64);
            assert_relative_eq!(power_gap(r_big, g, p), r_big.powf(p) - (r_big - g).powf(p), max_relative = 1e-13);
        }
        // tiny gaps: R^p − r^p ≈ p R^{p−1} gap
        assert_relative_eq!(power_gap(1.0, 1e-14, 1.5), 1.5e-14, max_relative = 1e-9);
    }
}
