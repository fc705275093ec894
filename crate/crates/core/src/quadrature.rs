//! Gauss–Legendre rules and a product rule on the unit ball.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::geometry::Vec3;

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss–Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// Product rule on the ball of radius `radius` around `center`:
/// Gauss–Legendre in r (with the r² Jacobian) and in cos θ, and the
/// periodic trapezoid rule in the azimuth. `n` points per direction.
pub fn ball_rule(center: &Vec3, radius: f64, n: usize) -> Vec<(Vec3, f64)> {
    let (gx, gw) = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * n * n);
    let dphi = 2.0 * PI / n as f64;
    for (xr, wr) in gx.iter().zip(&gw) {
        let r = 0.5 * radius * (xr + 1.0);
        let wr = 0.5 * radius * wr * r * r;
        for (ct, wt) in gx.iter().zip(&gw) {
            let st = (1.0 - ct * ct).sqrt();
            for k in 0..n {
                let phi = (k as f64 + 0.5) * dphi;
                let dir = Vector3::new(st * phi.cos(), st * phi.sin(), *ct);
                out.push((center + dir * r, wr * wt * dphi));
            }
        }
    }
    out
}
