//! Central finite-difference verification of gradients.
//!
//! These helpers evaluate only the forward path of whatever function they
//! are given, so they stay independent of the reverse-mode machinery they
//! are used to check.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::store::ParameterStore;
use crate::nn::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// max |a_i - b_i| / max(|a_i|, |b_i|, 1e-3) over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + step;
        let plus = f(&point)?;
        point[i] = orig - step;
        let minus = f(&point)?;
        point[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Compare analytic parameter gradients against central differences of a
/// loss evaluated on the (temporarily perturbed) store. Returns the max
/// relative error across every coordinate of every named parameter.
pub fn check_param_gradients<F>(
    params: &mut ParameterStore,
    analytic: &HashMap<String, Tensor>,
    mut loss: F,
    step: f64,
) -> Result<f64>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::State(format!("no analytic gradient for {name:?}")))?
            .clone();
        let len = params.get(name)?.len();
        if grad.len() != len {
            return Err(Error::Shape(format!(
                "analytic gradient for {name:?} has wrong length"
            )));
        }
        for i in 0..len {
            let orig = params.get(name)?.data()[i];
            params.get_mut(name)?.data_mut()[i] = orig + step;
            let plus = loss(params)?;
            params.get_mut(name)?.data_mut()[i] = orig - step;
            let minus = loss(params)?;
            params.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// One differentiable-primitive check: random inputs, a graph builder, and
/// a comparison of reverse-mode gradients against central differences of the
/// same forward computation.
pub struct PrimitiveCase {
    pub name: &'static str,
    inputs: Vec<Tensor>,
    build: Box<dyn Fn(&mut crate::nn::tape::Tape, &[crate::nn::tape::Var]) -> Result<crate::nn::tape::Var>>,
}

impl PrimitiveCase {
    /// Max relative error between reverse-mode and finite-difference
    /// gradients, taken over every coordinate of every input.
    pub fn max_error(&self, step: f64) -> Result<f64> {
        use crate::nn::tape::Tape;

        // Reduce arbitrary-shaped outputs to a scalar through a fixed
        // weighting so the whole Jacobian is exercised.
        let run = |inputs: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<_> = inputs
                .iter()
                .map(|t| tape.leaf(t.clone()))
                .collect::<Result<_>>()?;
            let out = (self.build)(&mut tape, &vars)?;
            let weights = reduction_weights(tape.value(out).shape());
            let w = tape.leaf(weights)?;
            let prod = tape.mul(out, w)?;
            let loss = tape.sum(prod)?;
            Ok(tape.value(loss).item())
        };

        let mut tape = Tape::new();
        let vars: Vec<_> = self
            .inputs
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<_>>()?;
        let out = (self.build)(&mut tape, &vars)?;
        let weights = reduction_weights(tape.value(out).shape());
        let w = tape.leaf(weights)?;
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod)?;
        let grads = tape.backward(loss)?;

        let mut worst: f64 = 0.0;
        for (i, var) in vars.iter().enumerate() {
            let zero;
            let analytic = match grads.wrt(*var) {
                Some(g) => g.data(),
                None => {
                    zero = Tensor::zeros(self.inputs[i].shape());
                    zero.data()
                }
            };
            let flat = self.inputs[i].data().to_vec();
            let numeric = fd_gradient(
                |x| {
                    let mut perturbed = self.inputs.clone();
                    perturbed[i] = Tensor::from_vec(self.inputs[i].shape(), x.to_vec())?;
                    run(&perturbed)
                },
                &flat,
                step,
            )?;
            worst = worst.max(max_relative_error(analytic, &numeric));
        }
        Ok(worst)
    }
}

fn reduction_weights(shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    // Deterministic, non-degenerate weights in [0.35, 1.35).
    let data: Vec<f64> = (0..len)
        .map(|i| 0.35 + ((i * 2654435761) % 1000) as f64 / 1000.0)
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn random_tensor<R: rand::Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Build one randomized check per differentiable primitive, plus a composite
/// masked-attention block.
pub fn primitive_cases(seed: u64) -> Vec<PrimitiveCase> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..5usize);
    let k = rng.gen_range(2..5usize);
    let n = rng.gen_range(2..5usize);

    let mut cases = Vec::new();

    cases.push(PrimitiveCase {
        name: "matmul",
        inputs: vec![
            random_tensor(&mut rng, &[m, k], -1.5, 1.5),
            random_tensor(&mut rng, &[k, n], -1.5, 1.5),
        ],
        build: Box::new(|t, v| t.matmul(v[0], v[1])),
    });
    cases.push(PrimitiveCase {
        name: "add",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
        ],
        build: Box::new(|t, v| t.add(v[0], v[1])),
    });
    cases.push(PrimitiveCase {
        name: "sub",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
        ],
        build: Box::new(|t, v| t.sub(v[0], v[1])),
    });
    cases.push(PrimitiveCase {
        name: "mul",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
        ],
        build: Box::new(|t, v| t.mul(v[0], v[1])),
    });
    cases.push(PrimitiveCase {
        name: "add_row_broadcast",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[n], -1.5, 1.5),
        ],
        build: Box::new(|t, v| t.add_row_broadcast(v[0], v[1])),
    });
    cases.push(PrimitiveCase {
        name: "scale",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(|t, v| t.scale(v[0], -0.73)),
    });
    cases.push(PrimitiveCase {
        name: "transpose",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(|t, v| t.transpose(v[0])),
    });
    cases.push(PrimitiveCase {
        name: "sum",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(|t, v| t.sum(v[0])),
    });
    cases.push(PrimitiveCase {
        name: "mean_pool",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(|t, v| t.mean_axis0(v[0])),
    });
    cases.push(PrimitiveCase {
        name: "row",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(|t, v| t.row(v[0], 0)),
    });
    cases.push(PrimitiveCase {
        name: "slice_rows",
        inputs: vec![random_tensor(&mut rng, &[m + 1, n], -1.5, 1.5)],
        build: Box::new(move |t, v| t.slice_rows(v[0], 1, m)),
    });
    cases.push(PrimitiveCase {
        name: "slice_cols",
        inputs: vec![random_tensor(&mut rng, &[m, n + 1], -1.5, 1.5)],
        build: Box::new(move |t, v| t.slice_cols(v[0], 1, n)),
    });
    cases.push(PrimitiveCase {
        name: "concat_cols",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[m, k], -1.5, 1.5),
        ],
        build: Box::new(|t, v| t.concat_cols(v)),
    });
    cases.push(PrimitiveCase {
        name: "concat_rows",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[k, n], -1.5, 1.5),
        ],
        build: Box::new(|t, v| t.concat_rows(v)),
    });

    let mut softmax_mask = vec![true; n];
    if n > 1 {
        softmax_mask[rng.gen_range(0..n)] = false;
        if !softmax_mask.iter().any(|&b| b) {
            softmax_mask[0] = true;
        }
    }
    cases.push(PrimitiveCase {
        name: "masked_softmax",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(move |t, v| t.masked_softmax_rows(v[0], &softmax_mask)),
    });

    let mut lse_mask = vec![true; m * n];
    for row in lse_mask.chunks_mut(n) {
        if n > 1 {
            row[rng.gen_range(0..n)] = false;
            if !row.iter().any(|&b| b) {
                row[0] = true;
            }
        }
    }
    cases.push(PrimitiveCase {
        name: "log_sum_exp",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(move |t, v| t.masked_logsumexp_rows(v[0], &lse_mask)),
    });

    cases.push(PrimitiveCase {
        name: "layer_norm",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[n], 0.5, 1.5),
            random_tensor(&mut rng, &[n], -0.5, 0.5),
        ],
        build: Box::new(|t, v| t.layer_norm_rows(v[0], v[1], v[2], 1e-6)),
    });
    cases.push(PrimitiveCase {
        name: "gelu",
        inputs: vec![random_tensor(&mut rng, &[m, n], -2.0, 2.0)],
        build: Box::new(|t, v| t.gelu(v[0])),
    });
    cases.push(PrimitiveCase {
        name: "log",
        inputs: vec![random_tensor(&mut rng, &[m, n], 0.4, 2.5)],
        build: Box::new(|t, v| t.log(v[0])),
    });
    cases.push(PrimitiveCase {
        name: "exp",
        inputs: vec![random_tensor(&mut rng, &[m, n], -1.5, 1.5)],
        build: Box::new(|t, v| t.exp(v[0])),
    });

    // Keep sampled points well away from the clamp kinks.
    let clamp_input = {
        let len = m * n;
        let data: Vec<f64> = (0..len)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                if x.abs() < 0.45 {
                    x
                } else {
                    x.signum() * (0.55 + x.abs() * 0.4)
                }
            })
            .collect();
        Tensor::from_vec(&[m, n], data).unwrap()
    };
    cases.push(PrimitiveCase {
        name: "clamp",
        inputs: vec![clamp_input],
        build: Box::new(|t, v| t.clamp(v[0], -0.5, 0.5)),
    });
    cases.push(PrimitiveCase {
        name: "div_scalar",
        inputs: vec![
            random_tensor(&mut rng, &[m, n], -1.5, 1.5),
            random_tensor(&mut rng, &[1], 0.5, 2.0),
        ],
        build: Box::new(|t, v| t.div_scalar_var(v[0], v[1])),
    });
    cases.push(PrimitiveCase {
        name: "trace",
        inputs: vec![random_tensor(&mut rng, &[m, m], -1.5, 1.5)],
        build: Box::new(|t, v| t.trace(v[0])),
    });

    let vocab = 6usize;
    let ids: Vec<usize> = (0..m).map(|_| rng.gen_range(0..vocab)).collect();
    cases.push(PrimitiveCase {
        name: "embedding_lookup",
        inputs: vec![random_tensor(&mut rng, &[vocab, n], -1.5, 1.5)],
        build: Box::new(move |t, v| t.embedding_lookup(v[0], &ids)),
    });

    // Rows comfortably away from the zero-vector corner case.
    let l2_input = {
        let mut t = random_tensor(&mut rng, &[m, n], -1.5, 1.5);
        for row in t.data_mut().chunks_mut(n) {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 0.3 {
                row[0] += 1.0;
            }
        }
        t
    };
    cases.push(PrimitiveCase {
        name: "l2_normalize",
        inputs: vec![l2_input],
        build: Box::new(|t, v| t.l2_normalize_rows(v[0])),
    });

    // Composite masked attention: softmax(Q K^T / sqrt(dk)) V with a key mask.
    let seq = m + 1;
    let dk = k;
    let mut key_mask = vec![true; seq];
    key_mask[seq - 1] = false;
    cases.push(PrimitiveCase {
        name: "masked_attention",
        inputs: vec![
            random_tensor(&mut rng, &[seq, dk], -1.0, 1.0),
            random_tensor(&mut rng, &[seq, dk], -1.0, 1.0),
            random_tensor(&mut rng, &[seq, dk], -1.0, 1.0),
        ],
        build: Box::new(move |t, v| {
            let kt = t.transpose(v[1])?;
            let scores = t.matmul(v[0], kt)?;
            let scaled = t.scale(scores, 1.0 / (dk as f64).sqrt())?;
            let probs = t.masked_softmax_rows(scaled, &key_mask)?;
            t.matmul(probs, v[2])
        }),
    });

    cases
}

/// Run every primitive case for one seed; returns the worst relative error
/// and the name of the primitive that produced it.
pub fn primitive_suite(seed: u64, step: f64) -> Result<(f64, &'static str)> {
    let mut worst = (0.0f64, "none");
    for case in primitive_cases(seed) {
        let err = case.max_error(step)?;
        if err > worst.0 {
            worst = (err, case.name);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_matches_quadratic_exactly_enough() {
        let f = |x: &[f64]| Ok(x.iter().map(|&v| v * v).sum::<f64>());
        let x = [1.0, -2.0, 0.25];
        let g = fd_gradient(f, &x, 1e-5).unwrap();
        let expected = [2.0, -4.0, 0.5];
        assert!(max_relative_error(&expected, &g) < 1e-8);
    }

    #[test]
    fn every_primitive_passes_fd_check() {
        for seed in 0..4 {
            let (err, name) = primitive_suite(seed, DEFAULT_STEP).unwrap();
            assert!(
                err < DEFAULT_TOLERANCE,
                "seed {seed}: primitive {name} off by {err:.3e}"
            );
        }
    }
}
