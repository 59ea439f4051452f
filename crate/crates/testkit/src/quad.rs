//! Adaptive Simpson quadrature and the Normal-Inverse-χ² integrals built
//! on it. Densities are written out longhand here on purpose.

use statrs::function::gamma::ln_gamma;

/// Adaptive Simpson integration of `f` over `[a, b]`, the interval first
/// split into `panels` uniform pieces so a bump much narrower than the
/// domain cannot slip between the initial sample points.
pub fn adaptive_simpson_panels(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    panels: usize,
) -> f64 {
    let width = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * width;
            adaptive_simpson(f, lo, lo + width, panel_tol)
        })
        .sum()
}

/// Adaptive Simpson integration of `f` over `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// N(y; mu, var).
pub fn normal_pdf(y: f64, mu: f64, var: f64) -> f64 {
    (-0.5 * (y - mu) * (y - mu) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Scaled-Inv-χ²(var; nu, scale_sq).
pub fn scaled_inv_chi_sq_pdf(var: f64, nu: f64, scale_sq: f64) -> f64 {
    let half_nu = 0.5 * nu;
    let log_p = half_nu * (half_nu.ln() + scale_sq.ln()) - ln_gamma(half_nu)
        - (half_nu + 1.0) * var.ln()
        - half_nu * scale_sq / var;
    log_p.exp()
}

/// Joint Normal-Inverse-χ² density at `(mu, var)`.
pub fn nix_pdf(mu: f64, var: f64, mu0: f64, kappa0: f64, nu0: f64, sigma0_sq: f64) -> f64 {
    normal_pdf(mu, mu0, var / kappa0) * scaled_inv_chi_sq_pdf(var, nu0, sigma0_sq)
}

/// Composite Simpson with `n` (even) intervals; fixed cost regardless of
/// how small the integrand is, which matters in far-tail regions where an
/// adaptive rule would chase float noise.
pub fn composite_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut total = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += w * f(a + i as f64 * h);
    }
    total * h / 3.0
}

/// `∫∫ N(y; mu, var) · NIX(mu, var) dmu dvar`: the variance axis by
/// panel-adaptive Simpson in log-space over a wide window, the mean axis
/// by a dense fixed rule over the support of the Gaussian product around
/// its center.
pub fn nix_predictive_by_quadrature(
    mu0: f64,
    kappa0: f64,
    nu0: f64,
    sigma0_sq: f64,
    y: f64,
) -> f64 {
    let outer = |u: f64| -> f64 {
        let var = u.exp();
        // N(y; mu, var)·N(mu; mu0, var/kappa0) is a Gaussian in mu with
        // precision (1 + kappa0)/var around a weighted center.
        let center = (y + kappa0 * mu0) / (1.0 + kappa0);
        let spread = (var / (1.0 + kappa0)).sqrt();
        let inner = |mu: f64| normal_pdf(y, mu, var) * normal_pdf(mu, mu0, var / kappa0);
        let lo = center - 13.0 * spread;
        let hi = center + 13.0 * spread;
        let mu_integral = composite_simpson(&inner, lo, hi, 2000);
        mu_integral * scaled_inv_chi_sq_pdf(var, nu0, sigma0_sq) * var
    };
    let u_lo = sigma0_sq.ln() - 25.0;
    let u_hi = sigma0_sq.ln() + 55.0;
    adaptive_simpson_panels(&outer, u_lo, u_hi, 1e-9, 64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let cubic = |x: f64| 3.0 * x * x * x - x + 2.0;
        let got = adaptive_simpson(&cubic, -1.0, 2.0, 1e-12);
        // Antiderivative: 3x⁴/4 − x²/2 + 2x.
        let expect = (0.75 * 16.0 - 2.0 + 4.0) - (0.75 - 0.5 - 2.0);
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn simpson_handles_gaussians() {
        let f = |x: f64| normal_pdf(x, 1.5, 2.0);
        let got = adaptive_simpson(&f, 1.5 - 20.0, 1.5 + 20.0, 1e-12);
        assert!((got - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nix_density_normalizes() {
        // ∫∫ NIX = 1 over the same windows the predictive oracle uses.
        let (mu0, kappa0, nu0, sigma0_sq) = (2.0, 0.7, 3.0, 1.4);
        let outer = |u: f64| {
            let var = u.exp();
            let inner = |mu: f64| nix_pdf(mu, var, mu0, kappa0, nu0, sigma0_sq);
            let spread = (var / kappa0).sqrt();
            adaptive_simpson_panels(&inner, mu0 - 13.0 * spread, mu0 + 13.0 * spread, 1e-13, 8) * var
        };
        let got = adaptive_simpson_panels(&outer, sigma0_sq.ln() - 25.0, sigma0_sq.ln() + 55.0, 1e-12, 64);
        assert!((got - 1.0).abs() < 1e-8, "{got}");
    }
}
