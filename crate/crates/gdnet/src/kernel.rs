//! Hermite polynomials, 1D/2D Gaussian derivative kernels, discrete sampling,
//! basis construction and analytic kernel-parameter gradients.
//!
//! A kernel of derivative orders (p, q) is the product of two 1D Gaussian
//! derivatives evaluated in a rotated, shifted frame:
//!
//! ```text
//! phi(x1, x2) = G_p(u1 - mu1, sigma1) * G_q(u2 - mu2, sigma2)
//! (u1, u2)    = (x1 cos t + x2 sin t, -x1 sin t + x2 cos t)
//! ```
//!
//! where `x1` is the column offset and `x2` the row offset from the grid
//! center. `G_p` is evaluated through Hermite polynomials, never by numerical
//! differentiation.

use crate::error::{Error, Result};

/// Highest 1D derivative order the Hermite-series evaluation supports.
/// Double precision keeps the series exact up to here (12! < 2^53).
pub const MAX_DERIV_ORDER: usize = 12;

/// Highest total order (p + q) accepted by [`kernel_jacobian`]; scale
/// gradients need the order p+2 kernel.
pub const MAX_JACOBIAN_ORDER: usize = 10;

const FACTORIAL: [f64; 13] = [
    1.0,
    1.0,
    2.0,
    6.0,
    24.0,
    120.0,
    720.0,
    5040.0,
    40320.0,
    362880.0,
    3628800.0,
    39916800.0,
    479001600.0,
];

/// Physicists' Hermite polynomial H_p(x), evaluated by its finite series
/// sum_{i=0}^{floor(p/2)} (-1)^i p! / (i! (p-2i)!) (2x)^(p-2i).
pub fn hermite(p: usize, x: f64) -> Result<f64> {
    if p > MAX_DERIV_ORDER {
        return Err(Error::OrderTooLarge {
            order: p,
            max: MAX_DERIV_ORDER,
        });
    }
    let two_x = 2.0 * x;
    let mut sum = 0.0;
    for i in 0..=(p / 2) {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = FACTORIAL[p] / (FACTORIAL[i] * FACTORIAL[p - 2 * i]);
        sum += sign * coeff * two_x.powi((p - 2 * i) as i32);
    }
    Ok(sum)
}

/// Centered 1D Gaussian kernel (2 pi sigma^2)^(-1/2) exp(-x^2 / (2 sigma^2)).
pub fn gauss(x: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let norm = 1.0 / (std::f64::consts::TAU * sigma * sigma).sqrt();
    Ok(norm * (-x * x / (2.0 * sigma * sigma)).exp())
}

/// p-th derivative of the 1D Gaussian, via the Hermite identity
/// G_p(x, sigma) = (-1/(sqrt(2) sigma))^p H_p(x / (sqrt(2) sigma)) G(x, sigma).
pub fn gauss_deriv(p: usize, x: f64, sigma: f64) -> Result<f64> {
    let scale = -1.0 / (std::f64::consts::SQRT_2 * sigma);
    let h = hermite(p, x / (std::f64::consts::SQRT_2 * sigma))?;
    let g = gauss(x, sigma)?;
    Ok(scale.powi(p as i32) * h * g)
}

/// Trainable parameters of one Gaussian derivative kernel: shift, anisotropic
/// scales and orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub theta: f64,
}

impl KernelParams {
    pub fn isotropic(sigma: f64) -> Self {
        KernelParams {
            mu1: 0.0,
            mu2: 0.0,
            sigma1: sigma,
            sigma2: sigma,
            theta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.mu1, self.mu2, self.sigma1, self.sigma2, self.theta] {
            if !v.is_finite() {
                return Err(Error::NonFiniteParam);
            }
        }
        if !(self.sigma1 > 0.0) {
            return Err(Error::NonPositiveSigma(self.sigma1));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::NonPositiveSigma(self.sigma2));
        }
        Ok(())
    }
}

/// Number of kernels in an order-K basis: (K+1)(K+2)/2.
pub fn basis_size(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// Canonical enumeration of derivative order pairs (p, q) with p + q <= K:
/// total order ascending, then p descending. Serialized models rely on this
/// ordering being stable.
pub fn derivation_orders(order: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(basis_size(order));
    for total in 0..=order {
        for p in (0..=total).rev() {
            out.push((p, total - p));
        }
    }
    out
}

/// One basis: the order bound, the square support of the sampled grids and
/// one parameter set per kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    pub order: usize,
    pub support: usize,
    pub params: Vec<KernelParams>,
    pub derivation_orders: Vec<(usize, usize)>,
}

impl BasisSpec {
    pub fn new(order: usize, support: usize, params: Vec<KernelParams>) -> Result<Self> {
        if support == 0 || support % 2 == 0 {
            return Err(Error::BadSupport(support));
        }
        let n = basis_size(order);
        if params.len() != n {
            return Err(Error::BasisSize {
                order,
                expected: n,
                got: params.len(),
            });
        }
        for p in &params {
            p.validate()?;
        }
        Ok(BasisSpec {
            order,
            support,
            params,
            derivation_orders: derivation_orders(order),
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// A sampled kernel on an odd square grid, row-major. Entry (r, c) holds the
/// kernel value at column offset x1 = c - (S-1)/2 and row offset
/// x2 = r - (S-1)/2.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    pub support: usize,
    pub values: Vec<f64>,
}

impl KernelGrid {
    pub fn zeros(support: usize) -> Self {
        KernelGrid {
            support,
            values: vec![0.0; support * support],
        }
    }

    /// Value at signed offsets (x1 = column, x2 = row) from the center.
    pub fn at(&self, x1: isize, x2: isize) -> f64 {
        let half = (self.support as isize - 1) / 2;
        let r = (x2 + half) as usize;
        let c = (x1 + half) as usize;
        self.values[r * self.support + c]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Samples the (p, q) Gaussian derivative kernel on an odd `support` x
/// `support` grid of integer pixel offsets centered at the origin.
pub fn sample_kernel(
    p: usize,
    q: usize,
    params: &KernelParams,
    support: usize,
) -> Result<KernelGrid> {
    if support == 0 || support % 2 == 0 {
        return Err(Error::BadSupport(support));
    }
    params.validate()?;
    let half = (support as isize - 1) / 2;
    let (sin_t, cos_t) = params.theta.sin_cos();
    let mut grid = KernelGrid::zeros(support);
    for r in 0..support {
        let x2 = (r as isize - half) as f64;
        for c in 0..support {
            let x1 = (c as isize - half) as f64;
            let u1 = x1 * cos_t + x2 * sin_t;
            let u2 = -x1 * sin_t + x2 * cos_t;
            let v = gauss_deriv(p, u1 - params.mu1, params.sigma1)?
                * gauss_deriv(q, u2 - params.mu2, params.sigma2)?;
            grid.values[r * support + c] = v;
        }
    }
    Ok(grid)
}

/// Samples every kernel of a basis, in canonical derivative order.
pub fn build_basis(spec: &BasisSpec) -> Result<Vec<KernelGrid>> {
    spec.derivation_orders
        .iter()
        .zip(&spec.params)
        .map(|(&(p, q), kp)| sample_kernel(p, q, kp, spec.support))
        .collect()
}

/// Partial derivatives of every grid entry of a sampled kernel with respect
/// to the five kernel parameters.
#[derive(Clone, Debug)]
pub struct KernelJacobian {
    pub d_mu1: KernelGrid,
    pub d_mu2: KernelGrid,
    pub d_sigma1: KernelGrid,
    pub d_sigma2: KernelGrid,
    pub d_theta: KernelGrid,
}

/// Analytic Jacobian of [`sample_kernel`] entries in the five parameters.
///
/// Uses d/dy G_p(y, s) = G_{p+1}(y, s), d/ds G_p(y, s) = s G_{p+2}(y, s)
/// (the Gaussian heat identity differentiated p times), and the frame
/// derivatives du1/dt = u2, du2/dt = -u1.
pub fn kernel_jacobian(
    p: usize,
    q: usize,
    params: &KernelParams,
    support: usize,
) -> Result<KernelJacobian> {
    if p + q > MAX_JACOBIAN_ORDER {
        return Err(Error::OrderTooLarge {
            order: p + q,
            max: MAX_JACOBIAN_ORDER,
        });
    }
    if support == 0 || support % 2 == 0 {
        return Err(Error::BadSupport(support));
    }
    params.validate()?;
    let half = (support as isize - 1) / 2;
    let (sin_t, cos_t) = params.theta.sin_cos();
    let mut jac = KernelJacobian {
        d_mu1: KernelGrid::zeros(support),
        d_mu2: KernelGrid::zeros(support),
        d_sigma1: KernelGrid::zeros(support),
        d_sigma2: KernelGrid::zeros(support),
        d_theta: KernelGrid::zeros(support),
    };
    for r in 0..support {
        let x2 = (r as isize - half) as f64;
        for c in 0..support {
            let x1 = (c as isize - half) as f64;
            let u1 = x1 * cos_t + x2 * sin_t;
            let u2 = -x1 * sin_t + x2 * cos_t;
            let y1 = u1 - params.mu1;
            let y2 = u2 - params.mu2;

            let g1 = gauss_deriv(p, y1, params.sigma1)?;
            let g1_d = gauss_deriv(p + 1, y1, params.sigma1)?;
            let g1_dd = gauss_deriv(p + 2, y1, params.sigma1)?;
            let g2 = gauss_deriv(q, y2, params.sigma2)?;
            let g2_d = gauss_deriv(q + 1, y2, params.sigma2)?;
            let g2_dd = gauss_deriv(q + 2, y2, params.sigma2)?;

            let idx = r * support + c;
            jac.d_mu1.values[idx] = -g1_d * g2;
            jac.d_mu2.values[idx] = -g1 * g2_d;
            jac.d_sigma1.values[idx] = params.sigma1 * g1_dd * g2;
            jac.d_sigma2.values[idx] = params.sigma2 * g1 * g2_dd;
            jac.d_theta.values[idx] = g1_d * g2 * u2 - g1 * g2_d * u1;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn hermite_spot_values() {
        assert_eq!(hermite(0, 2.5).unwrap(), 1.0);
        assert_eq!(hermite(1, 1.0).unwrap(), 2.0);
        assert_eq!(hermite(2, 1.0).unwrap(), 2.0);
        assert_eq!(hermite(3, 1.0).unwrap(), -4.0);
    }

    #[test]
    fn hermite_closed_forms_low_orders() {
        let closed: [fn(f64) -> f64; 6] = [
            |_| 1.0,
            |x| 2.0 * x,
            |x| 4.0 * x * x - 2.0,
            |x| 8.0 * x.powi(3) - 12.0 * x,
            |x| 16.0 * x.powi(4) - 48.0 * x * x + 12.0,
            |x| 32.0 * x.powi(5) - 160.0 * x.powi(3) + 120.0 * x,
        ];
        for p in 0..=5 {
            for &x in &[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
                let got = hermite(p, x).unwrap();
                let want = closed[p](x);
                assert!(
                    (got - want).abs() <= 1e-12,
                    "H_{p}({x}) = {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn hermite_order_cap() {
        assert!(hermite(12, 0.3).is_ok());
        assert!(matches!(
            hermite(13, 0.3),
            Err(Error::OrderTooLarge { order: 13, .. })
        ));
    }

    #[test]
    fn gauss_values_and_errors() {
        assert!((gauss(0.0, 1.0).unwrap() - 0.3989422804014327).abs() < 1e-15);
        assert!((gauss(1.0, 1.0).unwrap() - 0.24197072451914337).abs() < 1e-15);
        assert!(matches!(gauss(0.0, 0.0), Err(Error::NonPositiveSigma(_))));
        assert!(matches!(gauss(0.0, -1.0), Err(Error::NonPositiveSigma(_))));
    }

    #[test]
    fn gauss_deriv_order_zero_is_gauss() {
        for &x in &[-2.0, 0.0, 0.5, 3.0] {
            for &s in &[0.7, 1.0, 2.3] {
                assert_eq!(gauss_deriv(0, x, s).unwrap(), gauss(x, s).unwrap());
            }
        }
    }

    #[test]
    fn gauss_deriv_first_and_second_closed_forms() {
        // G_1(x, s) = -(x/s^2) G(x, s), G_2(x, s) = (x^2/s^4 - 1/s^2) G(x, s),
        // both obtained by symbolic differentiation of the Gaussian.
        assert_eq!(gauss_deriv(1, 0.0, 1.0).unwrap(), 0.0);
        let g11 = gauss_deriv(1, 1.0, 1.0).unwrap();
        assert!((g11 + 0.24197072451914337).abs() < 1e-15, "{g11}");
        let g20 = gauss_deriv(2, 0.0, 1.0).unwrap();
        assert!((g20 + 0.3989422804014327).abs() < 1e-15, "{g20}");
        for &x in &[-1.7, -0.3, 0.9, 2.2] {
            for &s in &[0.7, 1.3] {
                let g = gauss(x, s).unwrap();
                let want1 = -(x / (s * s)) * g;
                let want2 = (x * x / s.powi(4) - 1.0 / (s * s)) * g;
                assert!((gauss_deriv(1, x, s).unwrap() - want1).abs() < 1e-14 * want1.abs().max(1.0));
                assert!((gauss_deriv(2, x, s).unwrap() - want2).abs() < 1e-14 * want2.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gauss_deriv_matches_squared_gaussian_form() {
        // The same value written with a squared half-argument Gaussian:
        // (-1/(sqrt2 s))^p sqrt(2 pi) s H_p(x/(sqrt2 s)) G(x/sqrt2, s)^2.
        // Confirms the algebraic simplification used by gauss_deriv.
        for p in 0..=6 {
            for &x in &[-3.1, -1.0, 0.0, 0.4, 2.7] {
                for &s in &[0.7, 1.0, 1.9] {
                    let r2 = std::f64::consts::SQRT_2;
                    let tau = std::f64::consts::TAU;
                    let h = hermite(p, x / (r2 * s)).unwrap();
                    let half = gauss(x / r2, s).unwrap();
                    let squared_form = (-1.0 / (r2 * s)).powi(p as i32)
                        * tau.sqrt()
                        * s
                        * h
                        * half
                        * half;
                    let direct = gauss_deriv(p, x, s).unwrap();
                    let denom = direct.abs().max(1e-30);
                    assert!(
                        ((squared_form - direct) / denom).abs() < 1e-12,
                        "p={p} x={x} s={s}: {squared_form} vs {direct}"
                    );
                }
            }
        }
    }

    /// Iterated central first differences of the plain Gaussian; the
    /// derivative oracle that never touches the Hermite path.
    fn fd_gauss_deriv(p: usize, x: f64, sigma: f64, h: f64) -> f64 {
        if p == 0 {
            gauss(x, sigma).unwrap()
        } else {
            (fd_gauss_deriv(p - 1, x + h, sigma, h) - fd_gauss_deriv(p - 1, x - h, sigma, h))
                / (2.0 * h)
        }
    }

    #[test]
    fn gauss_deriv_matches_iterated_finite_differences() {
        for p in 0..=4usize {
            for &sigma in &[0.7f64, 1.0, 1.5, 2.3] {
                let h = 1e-3 * sigma;
                let xs: Vec<f64> = (0..=16).map(|i| -4.0 * sigma + i as f64 * 0.5 * sigma).collect();
                let scale = xs
                    .iter()
                    .map(|&x| gauss_deriv(p, x, sigma).unwrap().abs())
                    .fold(0.0f64, f64::max);
                for &x in &xs {
                    let got = gauss_deriv(p, x, sigma).unwrap();
                    let fd = fd_gauss_deriv(p, x, sigma, h);
                    // The denominator floor absorbs the oracle's own
                    // truncation noise at roots of the derivative, where a
                    // pointwise relative error is meaningless.
                    let denom = got.abs().max(fd.abs()).max(0.1 * scale);
                    assert!(
                        ((got - fd) / denom).abs() <= 1e-4,
                        "p={p} sigma={sigma} x={x}: analytic {got}, fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn derivation_order_enumeration() {
        assert_eq!(derivation_orders(0), vec![(0, 0)]);
        assert_eq!(
            derivation_orders(2),
            vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        );
        assert_eq!(derivation_orders(3).len(), 10);
        assert_eq!(basis_size(3), 10);
    }

    #[test]
    fn basis_spec_validation() {
        let params = vec![KernelParams::isotropic(1.0); 6];
        assert!(BasisSpec::new(2, 7, params.clone()).is_ok());
        assert!(matches!(
            BasisSpec::new(2, 6, params.clone()),
            Err(Error::BadSupport(6))
        ));
        assert!(matches!(
            BasisSpec::new(3, 7, params),
            Err(Error::BasisSize { expected: 10, got: 6, .. })
        ));
    }

    #[test]
    fn sample_kernel_single_point() {
        let kp = KernelParams {
            mu1: 0.0,
            mu2: 0.0,
            sigma1: 1.3,
            sigma2: 0.8,
            theta: 0.0,
        };
        let g = sample_kernel(0, 0, &kp, 1).unwrap();
        let want = gauss(0.0, 1.3).unwrap() * gauss(0.0, 0.8).unwrap();
        assert_eq!(g.values, vec![want]);
    }

    #[test]
    fn sample_kernel_rejects_even_support() {
        let kp = KernelParams::isotropic(1.0);
        assert!(matches!(sample_kernel(0, 0, &kp, 4), Err(Error::BadSupport(4))));
        assert!(matches!(sample_kernel(0, 0, &kp, 0), Err(Error::BadSupport(0))));
    }

    #[test]
    fn sample_kernel_separable_when_unrotated() {
        let kp = KernelParams {
            mu1: 0.0,
            mu2: 0.0,
            sigma1: 1.1,
            sigma2: 1.7,
            theta: 0.0,
        };
        let s = 9usize;
        let half = (s as isize - 1) / 2;
        for (p, q) in [(0usize, 0usize), (1, 0), (2, 1)] {
            let g = sample_kernel(p, q, &kp, s).unwrap();
            for r in 0..s {
                for c in 0..s {
                    let x1 = (c as isize - half) as f64;
                    let x2 = (r as isize - half) as f64;
                    let want = gauss_deriv(p, x1, kp.sigma1).unwrap()
                        * gauss_deriv(q, x2, kp.sigma2).unwrap();
                    assert_eq!(g.values[r * s + c], want);
                }
            }
        }
    }

    #[test]
    fn sample_kernel_quarter_turn_remap() {
        // With equal scales and no shift, rotating the kernel by 90 degrees
        // equals remapping grid coordinates (x1, x2) -> (x2, -x1).
        let s = 7usize;
        let half = (s as isize - 1) / 2;
        for total in 0..=3usize {
            for p in 0..=total {
                let q = total - p;
                let base = KernelParams {
                    mu1: 0.0,
                    mu2: 0.0,
                    sigma1: 1.2,
                    sigma2: 1.2,
                    theta: 0.0,
                };
                let rot = KernelParams {
                    theta: std::f64::consts::FRAC_PI_2,
                    ..base
                };
                let g0 = sample_kernel(p, q, &base, s).unwrap();
                let g90 = sample_kernel(p, q, &rot, s).unwrap();
                for x1 in -half..=half {
                    for x2 in -half..=half {
                        let a = g90.at(x1, x2);
                        let b = g0.at(x2, -x1);
                        assert!(
                            (a - b).abs() <= 1e-12,
                            "(p,q)=({p},{q}) at ({x1},{x2}): {a} vs {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_mass_and_zero_mean() {
        for &sigma in &[0.7f64, 1.0, 1.5, 2.3] {
            let s = 2 * (3.0 * sigma).ceil() as usize + 1;
            for &theta in &[0.0, 0.7] {
                let kp = KernelParams {
                    mu1: 0.0,
                    mu2: 0.0,
                    sigma1: sigma,
                    sigma2: sigma,
                    theta,
                };
                let g = sample_kernel(0, 0, &kp, s).unwrap();
                let sum = g.sum();
                assert!(
                    (0.98..=1.005).contains(&sum),
                    "sigma={sigma} theta={theta}: mass {sum}"
                );
            }
            // Zero mean needs a wider support than unit mass: the tails of
            // the second derivatives still carry a few percent at 3 sigma.
            let sz = 2 * (4.0 * sigma).ceil() as usize + 1;
            for (p, q) in [(1usize, 0usize), (0, 1), (1, 1), (2, 0), (2, 1)] {
                let kp = KernelParams::isotropic(sigma);
                let g = sample_kernel(p, q, &kp, sz).unwrap();
                assert!(
                    g.sum().abs() <= 0.02 * g.max_abs(),
                    "(p,q)=({p},{q}) sigma={sigma}: sum {} max {}",
                    g.sum(),
                    g.max_abs()
                );
            }
        }
    }

    #[test]
    fn odd_even_kernels_orthogonal() {
        let kp = KernelParams::isotropic(1.0);
        let a = sample_kernel(1, 0, &kp, 7).unwrap();
        let b = sample_kernel(0, 1, &kp, 7).unwrap();
        let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
        assert!(dot.abs() <= 1e-12, "inner product {dot}");
    }

    #[test]
    fn build_basis_counts() {
        for (k, n) in [(0usize, 1usize), (2, 6), (3, 10)] {
            let spec = BasisSpec::new(k, 7, vec![KernelParams::isotropic(1.0); n]).unwrap();
            let grids = build_basis(&spec).unwrap();
            assert_eq!(grids.len(), n);
        }
    }

    #[test]
    fn jacobian_mu1_identity() {
        let kp = KernelParams {
            mu1: 0.3,
            mu2: -0.2,
            sigma1: 1.1,
            sigma2: 0.9,
            theta: 0.4,
        };
        let s = 7;
        let jac = kernel_jacobian(1, 2, &kp, s).unwrap();
        // d/dmu1 at each point equals -G_{p+1}(y1) G_q(y2).
        let half = (s as isize - 1) / 2;
        let (sin_t, cos_t) = kp.theta.sin_cos();
        for r in 0..s {
            for c in 0..s {
                let x1 = (c as isize - half) as f64;
                let x2 = (r as isize - half) as f64;
                let u1 = x1 * cos_t + x2 * sin_t;
                let u2 = -x1 * sin_t + x2 * cos_t;
                let want = -gauss_deriv(2, u1 - kp.mu1, kp.sigma1).unwrap()
                    * gauss_deriv(2, u2 - kp.mu2, kp.sigma2).unwrap();
                assert!((jac.d_mu1.values[r * s + c] - want).abs() < 1e-14 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn jacobian_theta_vanishes_for_isotropic_gaussian() {
        let kp = KernelParams::isotropic(1.4);
        let jac = kernel_jacobian(0, 0, &kp, 9).unwrap();
        for &v in &jac.d_theta.values {
            assert!(v.abs() <= 1e-12, "d_theta entry {v}");
        }
    }

    #[test]
    fn jacobian_order_cap() {
        let kp = KernelParams::isotropic(1.0);
        assert!(kernel_jacobian(5, 5, &kp, 5).is_ok());
        assert!(matches!(
            kernel_jacobian(6, 5, &kp, 5),
            Err(Error::OrderTooLarge { order: 11, .. })
        ));
    }

    /// Central finite difference of sample_kernel in one parameter.
    fn fd_param_grad(
        p: usize,
        q: usize,
        params: &KernelParams,
        support: usize,
        bump: impl Fn(&mut KernelParams, f64),
        h: f64,
    ) -> Vec<f64> {
        let mut plus = *params;
        bump(&mut plus, h);
        let mut minus = *params;
        bump(&mut minus, -h);
        let gp = sample_kernel(p, q, &plus, support).unwrap();
        let gm = sample_kernel(p, q, &minus, support).unwrap();
        gp.values
            .iter()
            .zip(&gm.values)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect()
    }

    fn check_jacobian_against_fd(p: usize, q: usize, params: &KernelParams, support: usize) {
        let jac = kernel_jacobian(p, q, params, support).unwrap();
        let h = 1e-5;
        let cases: [(&str, &KernelGrid, Box<dyn Fn(&mut KernelParams, f64)>); 5] = [
            ("mu1", &jac.d_mu1, Box::new(|kp: &mut KernelParams, d| kp.mu1 += d)),
            ("mu2", &jac.d_mu2, Box::new(|kp: &mut KernelParams, d| kp.mu2 += d)),
            ("sigma1", &jac.d_sigma1, Box::new(|kp: &mut KernelParams, d| kp.sigma1 += d)),
            ("sigma2", &jac.d_sigma2, Box::new(|kp: &mut KernelParams, d| kp.sigma2 += d)),
            ("theta", &jac.d_theta, Box::new(|kp: &mut KernelParams, d| kp.theta += d)),
        ];
        for (name, analytic, bump) in cases {
            let fd = fd_param_grad(p, q, params, support, bump, h);
            for (i, (&a, &n)) in analytic.values.iter().zip(&fd).enumerate() {
                let denom = a.abs().max(n.abs());
                if denom > 1e-8 {
                    assert!(
                        ((a - n) / denom).abs() <= 1e-5,
                        "(p,q)=({p},{q}) {name}[{i}]: analytic {a}, fd {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_low_orders() {
        let mut rng = Rng::new(90210);
        for total in 0..=4usize {
            for p in 0..=total {
                let q = total - p;
                for _ in 0..20 {
                    let params = KernelParams {
                        mu1: rng.uniform(-1.5, 1.5),
                        mu2: rng.uniform(-1.5, 1.5),
                        sigma1: rng.uniform(0.8, 2.0),
                        sigma2: rng.uniform(0.8, 2.0),
                        theta: rng.uniform(0.0, std::f64::consts::PI),
                    };
                    check_jacobian_against_fd(p, q, &params, 7);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_high_orders() {
        let mut rng = Rng::new(1234);
        for (p, q) in [(5usize, 5usize), (10, 0), (0, 10), (7, 2)] {
            for _ in 0..20 {
                let params = KernelParams {
                    mu1: rng.uniform(-1.0, 1.0),
                    mu2: rng.uniform(-1.0, 1.0),
                    sigma1: rng.uniform(1.0, 2.0),
                    sigma2: rng.uniform(1.0, 2.0),
                    theta: rng.uniform(0.0, std::f64::consts::PI),
                };
                check_jacobian_against_fd(p, q, &params, 7);
            }
        }
    }

    proptest! {
        #[test]
        fn gauss_even_symmetry(x in -6.0f64..6.0, sigma in 0.2f64..3.0) {
            prop_assert_eq!(gauss(x, sigma).unwrap(), gauss(-x, sigma).unwrap());
        }

        #[test]
        fn hermite_recurrence(p in 1usize..11, x in -3.0f64..3.0) {
            // H_{p+1}(x) = 2x H_p(x) - 2p H_{p-1}(x)
            let lhs = hermite(p + 1, x).unwrap();
            let rhs = 2.0 * x * hermite(p, x).unwrap()
                - 2.0 * p as f64 * hermite(p - 1, x).unwrap();
            let denom = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!(((lhs - rhs) / denom).abs() < 1e-10);
        }

        #[test]
        fn kernel_grid_entries_finite(
            mu1 in -2.0f64..2.0,
            mu2 in -2.0f64..2.0,
            s1 in 0.3f64..2.5,
            s2 in 0.3f64..2.5,
            theta in 0.0f64..std::f64::consts::PI,
            p in 0usize..4,
            q in 0usize..4,
        ) {
            let kp = KernelParams { mu1, mu2, sigma1: s1, sigma2: s2, theta };
            let g = sample_kernel(p, q, &kp, 7).unwrap();
            prop_assert!(g.values.iter().all(|v| v.is_finite()));
        }
    }
}
