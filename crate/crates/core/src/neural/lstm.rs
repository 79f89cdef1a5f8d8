//! Fused-gate LSTM with explicit forward tapes and backpropagation through
//! time, plus the bidirectional layer built from two directions.
//!
//! Each direction keeps its four gates stacked in one weight block, rows
//! ordered `[input, forget, cell, output]`, each block `hidden_dim` rows:
//! `z_t = w_input x_t + w_hidden h_(t-1) + bias`, then
//! `c_t = f ⊙ c_(t-1) + i ⊙ g` and `h_t = o ⊙ tanh(c_t)` with zero initial
//! state. The backward pass replays a recorded tape, so gradients are exact
//! for the computation as executed.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

/// Numerically stable logistic function.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Accumulates the outer product `u v^T` into `target`.
pub(crate) fn add_outer(target: &mut Array2<f64>, u: ArrayView1<f64>, v: ArrayView1<f64>) {
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            target.row_mut(i).scaled_add(ui, &v);
        }
    }
}

/// Computes `w^T u` without materializing the transpose, walking rows so
/// the access pattern stays contiguous.
pub(crate) fn transposed_matvec(w: &Array2<f64>, u: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(w.ncols());
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            out.scaled_add(ui, &w.row(i));
        }
    }
    out
}

/// One direction of an LSTM layer. Weight rows are the four gates stacked
/// `[input, forget, cell, output]`, `hidden_dim` rows each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirection {
    /// `4H x I` input weights.
    pub(crate) w_input: Array2<f64>,
    /// `4H x H` recurrent weights.
    pub(crate) w_hidden: Array2<f64>,
    /// `4H` bias.
    pub(crate) bias: Array1<f64>,
}

/// Everything the backward pass needs about one time step.
#[derive(Debug, Clone)]
pub(crate) struct StepTape {
    input: Array1<f64>,
    prev_hidden: Array1<f64>,
    prev_cell: Array1<f64>,
    gate_i: Array1<f64>,
    gate_f: Array1<f64>,
    gate_g: Array1<f64>,
    gate_o: Array1<f64>,
    cell_tanh: Array1<f64>,
    hidden: Array1<f64>,
}

/// Recorded forward pass of one direction over one sequence.
#[derive(Debug, Clone)]
pub struct DirectionTape {
    steps: Vec<StepTape>,
}

impl DirectionTape {
    pub(crate) fn len(&self) -> usize {
        self.steps.len()
    }

    pub(crate) fn hidden(&self, t: usize) -> ArrayView1<'_, f64> {
        self.steps[t].hidden.view()
    }
}

impl LstmDirection {
    pub(crate) fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmDirection {
            w_input: Array2::zeros((4 * hidden_dim, input_dim)),
            w_hidden: Array2::zeros((4 * hidden_dim, hidden_dim)),
            bias: Array1::zeros(4 * hidden_dim),
        }
    }

    pub(crate) fn hidden_dim(&self) -> usize {
        self.w_hidden.ncols()
    }

    pub(crate) fn input_dim(&self) -> usize {
        self.w_input.ncols()
    }

    /// Runs the direction over `inputs`, recording a tape for the backward
    /// pass. Initial hidden and cell states are zero.
    pub(crate) fn forward(&self, inputs: &[Array1<f64>]) -> DirectionTape {
        let h = self.hidden_dim();
        let mut steps = Vec::with_capacity(inputs.len());
        let mut prev_hidden = Array1::zeros(h);
        let mut prev_cell = Array1::zeros(h);
        for x in inputs {
            let mut z = self.w_input.dot(x);
            z += &self.w_hidden.dot(&prev_hidden);
            z += &self.bias;
            let gate_i = z.slice(s![0..h]).mapv(sigmoid);
            let gate_f = z.slice(s![h..2 * h]).mapv(sigmoid);
            let gate_g = z.slice(s![2 * h..3 * h]).mapv(f64::tanh);
            let gate_o = z.slice(s![3 * h..4 * h]).mapv(sigmoid);
            let cell = &gate_f * &prev_cell + &gate_i * &gate_g;
            let cell_tanh = cell.mapv(f64::tanh);
            let hidden = &gate_o * &cell_tanh;
            steps.push(StepTape {
                input: x.clone(),
                prev_hidden: prev_hidden.clone(),
                prev_cell: prev_cell.clone(),
                gate_i,
                gate_f,
                gate_g,
                gate_o,
                cell_tanh,
                hidden: hidden.clone(),
            });
            prev_hidden = hidden;
            prev_cell = cell;
        }
        DirectionTape { steps }
    }

    /// Backpropagates `d_hiddens` (one gradient per output hidden state)
    /// through the recorded tape. Parameter gradients accumulate into
    /// `grads`; returns the gradients with respect to the inputs.
    pub(crate) fn backward(
        &self,
        tape: &DirectionTape,
        d_hiddens: &[Array1<f64>],
        grads: &mut LstmDirection,
    ) -> Vec<Array1<f64>> {
        assert_eq!(tape.steps.len(), d_hiddens.len(), "tape/gradient length mismatch");
        let h = self.hidden_dim();
        let n = tape.steps.len();
        let mut d_inputs = vec![Array1::zeros(self.input_dim()); n];
        let mut dh_rec = Array1::zeros(h);
        let mut dc_rec = Array1::zeros(h);

        for t in (0..n).rev() {
            let step = &tape.steps[t];
            let dh = &d_hiddens[t] + &dh_rec;
            let d_gate_o = &dh * &step.cell_tanh;
            let mut dc = &dh * &step.gate_o;
            dc = &dc * &step.cell_tanh.mapv(|v| 1.0 - v * v);
            dc += &dc_rec;
            let d_gate_i = &dc * &step.gate_g;
            let d_gate_f = &dc * &step.prev_cell;
            let d_gate_g = &dc * &step.gate_i;

            // Pre-activation gradients, gate order [i, f, g, o].
            let mut dz = Array1::zeros(4 * h);
            dz.slice_mut(s![0..h])
                .assign(&(&d_gate_i * &step.gate_i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![h..2 * h])
                .assign(&(&d_gate_f * &step.gate_f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![2 * h..3 * h])
                .assign(&(&d_gate_g * &step.gate_g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(s![3 * h..4 * h])
                .assign(&(&d_gate_o * &step.gate_o.mapv(|v| v * (1.0 - v))));

            grads.bias += &dz;
            add_outer(&mut grads.w_input, dz.view(), step.input.view());
            add_outer(&mut grads.w_hidden, dz.view(), step.prev_hidden.view());
            d_inputs[t] = transposed_matvec(&self.w_input, dz.view());
            dh_rec = transposed_matvec(&self.w_hidden, dz.view());
            dc_rec = &dc * &step.gate_f;
        }
        d_inputs
    }
}

/// A bidirectional layer: one direction reads the sequence left to right,
/// the other right to left, and position `t` outputs the concatenation
/// `[forward h_t ; backward h_t]` (`2H` values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmLayer {
    pub(crate) forward_dir: LstmDirection,
    pub(crate) backward_dir: LstmDirection,
}

/// Recorded forward pass of a bidirectional layer. The backward direction's
/// tape is indexed by *reversed* position.
#[derive(Debug, Clone)]
pub struct BiLayerTape {
    forward: DirectionTape,
    backward: DirectionTape,
}

impl BiLstmLayer {
    pub(crate) fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        BiLstmLayer {
            forward_dir: LstmDirection::zeros(input_dim, hidden_dim),
            backward_dir: LstmDirection::zeros(input_dim, hidden_dim),
        }
    }

    pub(crate) fn hidden_dim(&self) -> usize {
        self.forward_dir.hidden_dim()
    }

    /// Output vectors (one `2H` vector per position) and the tape.
    pub(crate) fn forward(&self, inputs: &[Array1<f64>]) -> (Vec<Array1<f64>>, BiLayerTape) {
        let n = inputs.len();
        let forward = self.forward_dir.forward(inputs);
        let reversed: Vec<Array1<f64>> = inputs.iter().rev().cloned().collect();
        let backward = self.backward_dir.forward(&reversed);
        let outputs = (0..n)
            .map(|t| {
                concatenate(Axis(0), &[forward.hidden(t), backward.hidden(n - 1 - t)])
                    .expect("forward/backward hidden sizes match")
            })
            .collect();
        (outputs, BiLayerTape { forward, backward })
    }

    /// Backpropagates per-position output gradients; accumulates parameter
    /// gradients into `grads`, returns input gradients.
    pub(crate) fn backward(
        &self,
        tape: &BiLayerTape,
        d_outputs: &[Array1<f64>],
        grads: &mut BiLstmLayer,
    ) -> Vec<Array1<f64>> {
        let n = d_outputs.len();
        assert_eq!(tape.forward.len(), n, "tape/gradient length mismatch");
        let h = self.hidden_dim();
        let d_forward: Vec<Array1<f64>> =
            d_outputs.iter().map(|d| d.slice(s![0..h]).to_owned()).collect();
        let d_backward: Vec<Array1<f64>> = (0..n)
            .map(|rev_t| d_outputs[n - 1 - rev_t].slice(s![h..2 * h]).to_owned())
            .collect();
        let dx_forward =
            self.forward_dir
                .backward(&tape.forward, &d_forward, &mut grads.forward_dir);
        let dx_backward_rev =
            self.backward_dir
                .backward(&tape.backward, &d_backward, &mut grads.backward_dir);
        (0..n)
            .map(|t| &dx_forward[t] + &dx_backward_rev[n - 1 - t])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_direction(rng: &mut ChaCha8Rng, input_dim: usize, hidden_dim: usize) -> LstmDirection {
        let mut dir = LstmDirection::zeros(input_dim, hidden_dim);
        for v in dir.w_input.iter_mut().chain(dir.w_hidden.iter_mut()).chain(dir.bias.iter_mut()) {
            *v = rng.random_range(-0.5..0.5);
        }
        dir
    }

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Array1<f64>> {
        (0..n)
            .map(|_| Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dir = random_direction(&mut rng, 5, 3);
        let inputs = random_inputs(&mut rng, 4, 5);
        let tape_a = dir.forward(&inputs);
        let tape_b = dir.forward(&inputs);
        assert_eq!(tape_a.len(), 4);
        for t in 0..4 {
            assert_eq!(tape_a.hidden(t).len(), 3);
            assert_eq!(tape_a.hidden(t), tape_b.hidden(t));
        }
    }

    #[test]
    fn severed_recurrence_makes_steps_independent() {
        // With zero recurrent weights and a forget gate driven to exactly
        // zero, the cell resets every step, so identical inputs must give
        // bitwise-identical hidden states at every position.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut dir = random_direction(&mut rng, 4, 3);
        dir.w_hidden.fill(0.0);
        let h = dir.hidden_dim();
        for v in dir.bias.slice_mut(s![h..2 * h]).iter_mut() {
            *v = -1.0e6; // sigmoid underflows to exactly 0.0
        }
        let x = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let tape = dir.forward(&[x.clone(), x.clone(), x.clone()]);
        assert_eq!(tape.hidden(0), tape.hidden(1));
        assert_eq!(tape.hidden(1), tape.hidden(2));
    }

    #[test]
    fn with_live_recurrence_steps_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir = random_direction(&mut rng, 4, 3);
        let x = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let tape = dir.forward(&[x.clone(), x.clone()]);
        assert_ne!(tape.hidden(0), tape.hidden(1));
    }

    /// Scalar loss used by the finite-difference checks: dot every hidden
    /// state with a fixed probe vector and sum.
    fn probe_loss(dir: &LstmDirection, inputs: &[Array1<f64>], probes: &[Array1<f64>]) -> f64 {
        let tape = dir.forward(inputs);
        (0..inputs.len()).map(|t| tape.hidden(t).dot(&probes[t])).sum()
    }

    #[test]
    fn direction_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dir = random_direction(&mut rng, 3, 2);
        let inputs = random_inputs(&mut rng, 4, 3);
        let probes = random_inputs(&mut rng, 4, 2);

        let tape = dir.forward(&inputs);
        let mut grads = LstmDirection::zeros(3, 2);
        let d_inputs = dir.backward(&tape, &probes, &mut grads);

        let h = 1e-5;
        let tol = 1e-8;
        // Weights and bias.
        let mut perturbed = dir.clone();
        for idx in 0..perturbed.w_input.len() {
            let (r, c) = (idx / 3, idx % 3);
            perturbed.w_input[[r, c]] += h;
            let plus = probe_loss(&perturbed, &inputs, &probes);
            perturbed.w_input[[r, c]] -= 2.0 * h;
            let minus = probe_loss(&perturbed, &inputs, &probes);
            perturbed.w_input[[r, c]] += h;
            assert!(((plus - minus) / (2.0 * h) - grads.w_input[[r, c]]).abs() <= tol);
        }
        for idx in 0..perturbed.w_hidden.len() {
            let (r, c) = (idx / 2, idx % 2);
            perturbed.w_hidden[[r, c]] += h;
            let plus = probe_loss(&perturbed, &inputs, &probes);
            perturbed.w_hidden[[r, c]] -= 2.0 * h;
            let minus = probe_loss(&perturbed, &inputs, &probes);
            perturbed.w_hidden[[r, c]] += h;
            assert!(((plus - minus) / (2.0 * h) - grads.w_hidden[[r, c]]).abs() <= tol);
        }
        for idx in 0..perturbed.bias.len() {
            perturbed.bias[idx] += h;
            let plus = probe_loss(&perturbed, &inputs, &probes);
            perturbed.bias[idx] -= 2.0 * h;
            let minus = probe_loss(&perturbed, &inputs, &probes);
            perturbed.bias[idx] += h;
            assert!(((plus - minus) / (2.0 * h) - grads.bias[idx]).abs() <= tol);
        }
        // Inputs.
        let mut inputs_p = inputs.clone();
        for t in 0..inputs.len() {
            for i in 0..3 {
                inputs_p[t][i] += h;
                let plus = probe_loss(&dir, &inputs_p, &probes);
                inputs_p[t][i] -= 2.0 * h;
                let minus = probe_loss(&dir, &inputs_p, &probes);
                inputs_p[t][i] += h;
                assert!(((plus - minus) / (2.0 * h) - d_inputs[t][i]).abs() <= tol);
            }
        }
    }

    #[test]
    fn bidirectional_output_concatenates_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = BiLstmLayer {
            forward_dir: random_direction(&mut rng, 3, 2),
            backward_dir: random_direction(&mut rng, 3, 2),
        };
        let inputs = random_inputs(&mut rng, 3, 3);
        let (outputs, tape) = layer.forward(&inputs);
        assert_eq!(outputs.len(), 3);
        for (t, out) in outputs.iter().enumerate() {
            assert_eq!(out.len(), 4);
            assert_eq!(out.slice(s![0..2]), tape.forward.hidden(t));
            assert_eq!(out.slice(s![2..4]), tape.backward.hidden(2 - t));
        }
    }

    #[test]
    fn reversing_inputs_swaps_direction_roles_when_weights_are_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shared = random_direction(&mut rng, 3, 2);
        let layer = BiLstmLayer {
            forward_dir: shared.clone(),
            backward_dir: shared,
        };
        let inputs = random_inputs(&mut rng, 4, 3);
        let reversed: Vec<Array1<f64>> = inputs.iter().rev().cloned().collect();
        let (out_fwd, _) = layer.forward(&inputs);
        let (out_rev, _) = layer.forward(&reversed);
        for t in 0..4 {
            let flipped = concatenate(
                Axis(0),
                &[out_rev[3 - t].slice(s![2..4]), out_rev[3 - t].slice(s![0..2])],
            )
            .unwrap();
            assert_eq!(out_fwd[t], flipped);
        }
    }

    #[test]
    fn bidirectional_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = BiLstmLayer {
            forward_dir: random_direction(&mut rng, 3, 2),
            backward_dir: random_direction(&mut rng, 3, 2),
        };
        let inputs = random_inputs(&mut rng, 3, 3);
        let probes = random_inputs(&mut rng, 3, 4);

        let loss = |layer: &BiLstmLayer, inputs: &[Array1<f64>]| -> f64 {
            let (outputs, _) = layer.forward(inputs);
            outputs.iter().zip(probes.iter()).map(|(o, p)| o.dot(p)).sum()
        };

        let (_, tape) = layer.forward(&inputs);
        let mut grads = BiLstmLayer::zeros(3, 2);
        let d_inputs = layer.backward(&tape, &probes, &mut grads);

        let h = 1e-5;
        let tol = 1e-8;
        let mut inputs_p = inputs.clone();
        for t in 0..3 {
            for i in 0..3 {
                inputs_p[t][i] += h;
                let plus = loss(&layer, &inputs_p);
                inputs_p[t][i] -= 2.0 * h;
                let minus = loss(&layer, &inputs_p);
                inputs_p[t][i] += h;
                assert!(((plus - minus) / (2.0 * h) - d_inputs[t][i]).abs() <= tol);
            }
        }
        let mut layer_p = layer.clone();
        for idx in 0..layer_p.forward_dir.bias.len() {
            layer_p.forward_dir.bias[idx] += h;
            let plus = loss(&layer_p, &inputs);
            layer_p.forward_dir.bias[idx] -= 2.0 * h;
            let minus = loss(&layer_p, &inputs);
            layer_p.forward_dir.bias[idx] += h;
            assert!(((plus - minus) / (2.0 * h) - grads.forward_dir.bias[idx]).abs() <= tol);
        }
        for idx in 0..layer_p.backward_dir.bias.len() {
            layer_p.backward_dir.bias[idx] += h;
            let plus = loss(&layer_p, &inputs);
            layer_p.backward_dir.bias[idx] -= 2.0 * h;
            let minus = loss(&layer_p, &inputs);
            layer_p.backward_dir.bias[idx] += h;
            assert!(((plus - minus) / (2.0 * h) - grads.backward_dir.bias[idx]).abs() <= tol);
        }
    }

    #[test]
    fn add_outer_and_transposed_matvec_agree_with_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let v = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let mut target = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let mut expected = target.clone();
        add_outer(&mut target, u.view(), v.view());
        for i in 0..4 {
            for j in 0..3 {
                expected[[i, j]] += u[i] * v[j];
            }
        }
        assert_eq!(target, expected);

        let w = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let got = transposed_matvec(&w, u.view());
        let want = w.t().dot(&u);
        for j in 0..3 {
            assert!((got[j] - want[j]).abs() <= 1e-12);
        }
    }
}
