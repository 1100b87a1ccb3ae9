//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per parameter; larger tensors are subsampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub entries_checked: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() <= self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Rounding units by which two evaluations of the same loss at nearby
/// points may disagree.
pub const LOSS_ROUNDING_UNITS: f64 = 8.0;

/// Smallest gradient magnitude a central difference can resolve to within
/// `tolerance`: the rounding noise of the loss, divided by `2 * step`,
/// scaled by `1 / tolerance`. Never below `1e-8`.
pub fn resolution_floor(loss_plus: f64, loss_minus: f64, step: f64, tolerance: f64) -> f64 {
    let noise = LOSS_ROUNDING_UNITS * f64::EPSILON * loss_plus.abs().max(loss_minus.abs()).max(1.0);
    (noise / (2.0 * step) / tolerance).max(1e-8)
}

/// Compare backward-pass gradients against central differences.
///
/// `builder` must construct the same loss every time it is called for a
/// given store; this is checked by evaluating it twice up front. Relative
/// errors use [`resolution_floor`] as the denominator floor.
pub fn grad_check<F>(
    store: &ParamStore,
    params: &[ParamId],
    builder: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = builder(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut graph = Graph::new(store);
    let loss = builder(&mut graph)?;
    let first = graph.scalar(loss);
    let analytic = graph.backward(loss)?.param_grads(&graph);
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut groups = Vec::with_capacity(params.len());
    for &id in params {
        let numel = store.value(id).numel();
        let entries: Vec<usize> = if numel <= opts.max_entries {
            (0..numel).collect()
        } else {
            let mut picked = sample(&mut rng, numel, opts.max_entries).into_vec();
            picked.sort_unstable();
            picked
        };
        let grad = analytic.get(id);
        let mut worst = 0.0f64;
        for &e in &entries {
            let original = store.value(id).data()[e];
            work.get_mut(id).value.data_mut()[e] = original + opts.step;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[e] = original - opts.step;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.map_or(0.0, |g| g[e]);
            let floor = resolution_floor(plus, minus, opts.step, opts.tolerance);
            worst = worst.max(relative_error(a, numeric, floor));
        }
        groups.push(GroupReport {
            name: store.get(id).name.clone(),
            entries_checked: entries.len(),
            max_relative_error: worst,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn quadratic_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let builder = |g: &mut Graph<'_>| {
            let v = g.param(x);
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        };
        let mut g = Graph::new(&store);
        let loss = builder(&mut g).unwrap();
        let grads = g.backward(loss).unwrap().param_grads(&g);
        assert_eq!(grads.get(x).unwrap(), &[6.0]);

        let report = grad_check(&store, &[x], builder, &GradCheckOptions::default()).unwrap();
        assert!(report.max_relative_error() < 1e-6 / 6.0 + 1e-9);
        assert!(report.passed());
    }

    #[test]
    fn nondeterministic_builder_rejected() {
        use std::cell::Cell;
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0));
        let calls = Cell::new(0.0);
        let builder = |g: &mut Graph<'_>| {
            calls.set(calls.get() + 1.0);
            let v = g.param(x);
            let s = g.scale(v, calls.get());
            Ok(g.sum(s))
        };
        let err = grad_check(&store, &[x], builder, &GradCheckOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }

    #[test]
    fn missing_gradient_is_flagged() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(2.0));
        // Read the value as a constant so backward never reaches `x`.
        let builder = |g: &mut Graph<'_>| {
            let v = g.constant(g.store().value(x).clone());
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        };
        let report = grad_check(&store, &[x], builder, &GradCheckOptions::default()).unwrap();
        assert!((report.max_relative_error() - 1.0).abs() < 1e-9);
        assert!(!report.passed());
    }

    #[test]
    fn floor_tracks_loss_scale() {
        assert_eq!(resolution_floor(0.0, 0.0, 1.0, 1.0), 1e-8);
        assert_eq!(resolution_floor(0.0, 0.5, 1e-5, 1e-4), resolution_floor(1.0, 1.0, 1e-5, 1e-4));
        let small = resolution_floor(1.0, 1.0, 1e-5, 1e-4);
        let large = resolution_floor(100.0, -100.0, 1e-5, 1e-4);
        assert!((large / small - 100.0).abs() < 1e-9);
        assert_eq!(relative_error(0.5, 0.25, 1e-8), 0.5);
        assert_eq!(relative_error(0.0, 1e-9, 1e-8), 0.1);
    }
}
