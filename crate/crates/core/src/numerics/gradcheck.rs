//! Central finite-difference checks of analytic gradients along a direction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;

/// Analytic and numeric directional derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Unit direction mixing the normalized gradient with a random unit vector,
/// so both the gradient's magnitude and its orientation are exercised.
pub fn mixed_direction<R: Rng + ?Sized>(grad: &[f64], rng: &mut R) -> Vec<f64> {
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.into_iter().map(|x| x / n).collect()
        } else {
            v
        }
    };
    let r = unit(
        (0..grad.len())
            .map(|_| StandardNormal.sample(rng))
            .collect(),
    );
    let g = unit(grad.to_vec());
    unit(g.iter().zip(&r).map(|(a, b)| a + b).collect())
}

/// Compares `grad · dir` with `(f(x + h·dir) − f(x − h·dir)) / 2h`.
///
/// `f` returns the value and a signature of the piecewise branches taken;
/// `None` means the stencil straddles a kink and the check is void.
pub fn check_direction<F>(
    mut f: F,
    x: &[f64],
    grad: &[f64],
    dir: &[f64],
    h: f64,
) -> Result<Option<GradCheck>>
where
    F: FnMut(&[f64]) -> Result<(f64, u64)>,
{
    let (_, sig) = f(x)?;
    let shifted = |s: f64| {
        x.iter()
            .zip(dir)
            .map(|(a, d)| a + s * h * d)
            .collect::<Vec<_>>()
    };
    let (fp, sp) = f(&shifted(1.0))?;
    let (fm, sm) = f(&shifted(-1.0))?;
    if sp != sig || sm != sig {
        return Ok(None);
    }
    let analytic = grad.iter().zip(dir).map(|(g, d)| g * d).sum();
    Ok(Some(GradCheck {
        analytic,
        numeric: (fp - fm) / (2.0 * h),
    }))
}
