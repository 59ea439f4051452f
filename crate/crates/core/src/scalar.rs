//! Floating-point abstraction for the numeric core.
//!
//! Everything statistical in this crate is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. The trait bundles the float operations,
//! conversions, special functions and distribution draws the samplers need,
//! so generic code carries a single bound.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Natural log of the gamma function.
    fn ln_gamma(self) -> Self;

    /// Converts from `f64`, panicking only on values a float cannot hold.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    /// Converts from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize conversion")
    }

    /// Widens to `f64` (lossless for both supported types).
    fn into_f64(self) -> f64 {
        self.to_f64().expect("f64 widening")
    }

    /// Uniform draw on `[0, 1)`.
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Standard normal draw.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Gamma draw with given shape and scale.
    fn sample_gamma<R: Rng + ?Sized>(shape: Self, scale: Self, rng: &mut R) -> Self;

    /// Beta draw.
    fn sample_beta<R: Rng + ?Sized>(a: Self, b: Self, rng: &mut R) -> Self;

    /// Chi-squared draw with `dof` degrees of freedom.
    fn sample_chi_squared<R: Rng + ?Sized>(dof: Self, rng: &mut R) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn ln_gamma(self) -> Self {
                statrs::function::gamma::ln_gamma(self as f64) as $t
            }

            fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.gen::<$t>()
            }

            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample(rand_distr::StandardNormal)
            }

            fn sample_gamma<R: Rng + ?Sized>(shape: Self, scale: Self, rng: &mut R) -> Self {
                Gamma::new(shape, scale).expect("gamma params").sample(rng)
            }

            fn sample_beta<R: Rng + ?Sized>(a: Self, b: Self, rng: &mut R) -> Self {
                Beta::new(a, b).expect("beta params").sample(rng)
            }

            fn sample_chi_squared<R: Rng + ?Sized>(dof: Self, rng: &mut R) -> Self {
                ChiSquared::new(dof).expect("chi-squared dof").sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Normal draw helper used by the simulators.
pub(crate) fn sample_normal<F: Scalar, R: Rng + ?Sized>(mu: F, sigma: F, rng: &mut R) -> F {
    mu + sigma * F::sample_standard_normal(rng)
}
