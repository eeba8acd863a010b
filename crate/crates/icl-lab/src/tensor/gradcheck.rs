//! Central finite-difference verification of analytic gradients.
//!
//! Always runs in f64: the probes use step 1e-4, where f32 roundoff would
//! drown the signal. Used by the per-op test oracles and the `selftest`
//! command.

use super::graph::{Graph, Var};
use super::Tensor;
use crate::rng::Rng;

pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Cap on probed coordinates per input; the rest are sampled.
    pub max_coords_per_input: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-4, tol: 1e-4, max_coords_per_input: usize::MAX }
    }
}

/// Relative error with a floor so near-zero gradient pairs compare in
/// absolute terms instead of amplifying finite-difference noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

impl GradCheck {
    /// Verify d(loss)/d(inputs) for the scalar loss built by `build` from
    /// leaf vars (one per input tensor). Returns a description of the first
    /// failing coordinate, if any.
    pub fn check_inputs(
        &self,
        label: &str,
        inputs: &[Tensor<f64>],
        seed: u64,
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
    ) -> Result<(), String> {
        let eval = |tensors: &[Tensor<f64>]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), true)).collect();
            let loss = build(&mut g, &vars);
            assert_eq!(g.value(loss).numel(), 1, "gradcheck: loss must be scalar");
            g.value(loss).data()[0]
        };

        // Analytic gradients from one recorded forward.
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars);
        g.backward(loss);
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();

        let mut rng = Rng::seed_from(seed);
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (ti, input) in inputs.iter().enumerate() {
            let coords: Vec<usize> = if input.numel() <= self.max_coords_per_input {
                (0..input.numel()).collect()
            } else {
                rng.sample_distinct(input.numel(), self.max_coords_per_input)
            };
            for ci in coords {
                let orig = input.data()[ci];
                work[ti].data_mut()[ci] = orig + self.step;
                let plus = eval(&work);
                work[ti].data_mut()[ci] = orig - self.step;
                let minus = eval(&work);
                work[ti].data_mut()[ci] = orig;

                let fd = (plus - minus) / (2.0 * self.step);
                let an = analytic[ti].data()[ci];
                let err = rel_err(fd, an);
                if err > self.tol {
                    return Err(format!(
                        "{label}: input {ti} coord {ci}: analytic {an:.6e} vs finite-diff {fd:.6e} (rel err {err:.3e})"
                    ));
                }
            }
        }
        Ok(())
    }
}
