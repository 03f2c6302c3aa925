//! Finite-difference verification of analytic gradients.
//!
//! [`grad_check`] runs one analytic backward pass through a caller-supplied
//! loss function, then re-evaluates the loss with each parameter element
//! nudged up and down by a small step. The central-difference estimate
//! `(f(x+h) - f(x-h)) / 2h` is compared against the recorded gradient with
//! the relative error `|a - n| / max(1, |a| + |n|)`, which behaves like an
//! absolute tolerance near zero and a relative one for large gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use thiserror::Error;

use crate::params::{Binding, ParamError, ParamStore};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("loss function failed: {0}")]
    LossFailed(String),
    #[error("loss is not finite ({0})")]
    NonFinite(f64),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step size.
    pub step: f64,
    /// Maximum acceptable relative error.
    pub tolerance: f64,
    /// Check at most this many elements per parameter (sampled
    /// deterministically from `seed`); `None` checks every element.
    pub max_elements_per_param: Option<usize>,
    pub seed: u64,
    /// Test hook: adds the given offset to every analytic gradient entry of
    /// the named parameter, which a healthy check must then flag.
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_elements_per_param: None,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    /// Number of elements compared.
    pub checked: usize,
    pub max_rel_err: f64,
    /// Element index with the largest relative error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            let verdict = if p.max_rel_err <= self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "{:<26} checked={:<5} max_rel={:.3e} at [{}] (analytic {:+.6e}, numeric {:+.6e}) {}",
                p.name, p.checked, p.max_rel_err, p.worst_index, p.worst_analytic,
                p.worst_numeric, verdict
            )?;
        }
        write!(
            f,
            "gradient check: {} ({} parameters, tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.params.len(),
            self.tolerance
        )
    }
}

/// Compares analytic gradients of `loss_fn` against central finite
/// differences for every trainable parameter in `store`. The store is
/// restored to its original values before returning.
pub fn grad_check<F, E>(
    store: &mut ParamStore,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&Binding) -> Result<Tensor, E>,
    E: fmt::Display,
{
    let eval = |store: &ParamStore| -> Result<f64, GradCheckError> {
        let binding = store.bind();
        let loss = loss_fn(&binding).map_err(|e| GradCheckError::LossFailed(e.to_string()))?;
        let v = loss.item()?;
        if !v.is_finite() {
            return Err(GradCheckError::NonFinite(v));
        }
        Ok(v)
    };

    // Analytic pass.
    let mut analytic: Vec<(String, Vec<f64>)> = {
        let binding = store.bind();
        let loss = loss_fn(&binding).map_err(|e| GradCheckError::LossFailed(e.to_string()))?;
        let v = loss.item()?;
        if !v.is_finite() {
            return Err(GradCheckError::NonFinite(v));
        }
        loss.backward()?;
        binding.grads()
    };
    if let Some((name, offset)) = &opts.corrupt {
        for (n, g) in analytic.iter_mut() {
            if n == name {
                for v in g.iter_mut() {
                    *v += offset;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::with_capacity(analytic.len());
    for (name, grad) in analytic {
        let numel = grad.len();
        let mut indices: Vec<usize> = (0..numel).collect();
        if let Some(k) = opts.max_elements_per_param {
            if numel > k {
                indices.shuffle(&mut rng);
                indices.truncate(k);
                indices.sort_unstable();
            }
        }

        let mut report = ParamReport {
            name: name.clone(),
            checked: indices.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &i in &indices {
            let orig = store.get(&name)?.data[i];
            store.data_mut(&name)?[i] = orig + opts.step;
            let up = eval(store);
            store.data_mut(&name)?[i] = orig - opts.step;
            let down = eval(store);
            store.data_mut(&name)?[i] = orig;
            let numeric = (up? - down?) / (2.0 * opts.step);
            let a = grad[i];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs() + numeric.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        params.push(report);
    }

    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params,
    })
}
