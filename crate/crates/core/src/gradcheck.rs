//! Central-difference gradient verification.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            coords_per_param: None,
            seed: 0,
            precision: Precision::Float64,
        }
    }
}

/// Compares reverse-mode gradients of the scalar `f(params)` against
/// `(f(θ+h) − f(θ−h)) / 2h` and returns the largest relative error
/// `|a − n| / max(|a|, |n|, 1e-8)` over the checked coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: GradCheckOptions) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    if opts.precision != Precision::Float64 {
        return Err(Error::Precision);
    }
    let tracked: Vec<Tensor> = params.iter().cloned().map(Tensor::with_grad).collect();
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = tracked.iter().map(|t| g.leaf(t)).collect();
        let loss = f(&mut g, &vars)?;
        g.backward(loss)?;
        vars.iter()
            .zip(&tracked)
            .map(|(&v, t)| g.grad(v).map_or_else(|| alloc::vec![0.0; t.len()], <[f64]>::to_vec))
            .collect()
    };

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = ps.iter().map(|t| g.leaf(t)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss)[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        let n = params[p].len();
        let coords: Vec<usize> = match opts.coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = work[p].values()[j];
            work[p].values_mut()[j] = orig + opts.step;
            let plus = eval(&work)?;
            work[p].values_mut()[j] = orig - opts.step;
            let minus = eval(&work)?;
            work[p].values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[p][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
