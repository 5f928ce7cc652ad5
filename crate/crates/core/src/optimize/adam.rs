use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spline::Insertion;

/// Adam moments with a step counter per parameter, so rows that were reset
/// restart their bias correction like a fresh optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: Vec<u64>,
}

/// Parameters per wire control: `x, y, z, w_raw`.
const ROW: usize = 4;

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            steps: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Zero the moments of the given wire controls.
    pub fn reset_rows(&mut self, controls: &[usize]) {
        for &c in controls {
            for k in c * ROW..(c + 1) * ROW {
                self.m[k] = T::zero();
                self.v[k] = T::zero();
                self.steps[k] = 0;
            }
        }
    }

    /// Re-index after a knot insertion: untouched controls keep their
    /// moments, the rewritten and the new control start from zero.
    pub fn apply_insertion(&mut self, ins: &Insertion) {
        let old = self.len() / ROW;
        let mut out = Self::new((old + 1) * ROW);
        for i in 0..=old {
            let src = if i < ins.first_changed {
                Some(i)
            } else if i > ins.last_changed {
                Some(i - 1)
            } else {
                None
            };
            if let Some(s) = src {
                for k in 0..ROW {
                    out.m[i * ROW + k] = self.m[s * ROW + k];
                    out.v[i * ROW + k] = self.v[s * ROW + k];
                    out.steps[i * ROW + k] = self.steps[s * ROW + k];
                }
            }
        }
        *self = out;
    }
}

/// Optimizer hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams<T> {
    pub betas: (T, T),
    pub eps: T,
}

/// One bias-corrected Adam update in place. `lr[i]` is the learning rate of
/// parameter `i`.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: &[T],
    hp: &AdamParams<T>,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.len() != n || lr.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} parameters"),
            actual: format!("{} grads, {} state rows, {} rates", grads.len(), state.len(), lr.len()),
        });
    }
    let (b1, b2) = hp.betas;
    for i in 0..n {
        let g = grads[i];
        state.steps[i] += 1;
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let t = state.steps[i].min(i32::MAX as u64) as i32;
        let m_hat = state.m[i] / (T::one() - b1.powi(t));
        let v_hat = state.v[i] / (T::one() - b2.powi(t));
        params[i] -= lr[i] * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}
