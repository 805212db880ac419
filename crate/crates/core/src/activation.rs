//! Arcsine activation units and the smoothed norm.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[inline]
fn two_over_pi<T: Real>() -> T {
    T::of(std::f64::consts::FRAC_2_PI)
}

/// `(2/pi) arcsin(clamp(x, -1, 1))`.
#[inline]
pub fn asu<T: Real>(x: T) -> T {
    two_over_pi::<T>() * clamp_unit(x).asin()
}

/// Clamp to `[-1, 1]`; NaN passes through so callers can detect it.
#[inline]
pub fn clamp_unit<T: Real>(x: T) -> T {
    if x > T::one() {
        T::one()
    } else if x < -T::one() {
        -T::one()
    } else {
        x
    }
}

/// Rectified ASU: `max(asu(x), 0)`.
#[inline]
pub fn rasu<T: Real>(x: T) -> T {
    asu(x).max(T::zero())
}

/// `tanh(kappa * asu(x))`, a smooth stand-in for `sign(x)`.
#[inline]
pub fn tasu<T: Real>(x: T, kappa: T) -> T {
    (kappa * asu(x)).tanh()
}

/// `sqrt(||w||^2 + eps)`.
#[inline]
pub fn smooth_norm<T: Real>(w: &[T], eps: T) -> T {
    (w.iter().map(|&v| v * v).sum::<T>() + eps).sqrt()
}

/// Activation of a hidden G-Net layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActivationKind {
    Asu,
    Rasu,
    Tasu { kappa: f64 },
}

impl ActivationKind {
    #[inline]
    pub fn apply<T: Real>(self, u: T) -> T {
        match self {
            ActivationKind::Asu => asu(u),
            ActivationKind::Rasu => rasu(u),
            ActivationKind::Tasu { kappa } => tasu(u, T::of(kappa)),
        }
    }

    /// `d act / du`, with `u` clamped to `[-1 + delta, 1 - delta]` inside the
    /// arcsine derivative.
    #[inline]
    pub fn derivative<T: Real>(self, u: T, delta: T) -> T {
        let lim = T::one() - delta;
        let uc = u.max(-lim).min(lim);
        let d_asu = two_over_pi::<T>() / (T::one() - uc * uc).sqrt();
        match self {
            ActivationKind::Asu => d_asu,
            ActivationKind::Rasu => {
                if u >= T::zero() {
                    d_asu
                } else {
                    T::zero()
                }
            }
            ActivationKind::Tasu { kappa } => {
                let k = T::of(kappa);
                let t = (k * asu(u)).tanh();
                (T::one() - t * t) * k * d_asu
            }
        }
    }

    pub fn is_valid(self) -> bool {
        match self {
            ActivationKind::Tasu { kappa } => kappa.is_finite() && kappa > 0.0,
            _ => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Asu => "asu",
            ActivationKind::Rasu => "rasu",
            ActivationKind::Tasu { .. } => "tasu",
        }
    }
}
