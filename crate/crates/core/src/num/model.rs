//! Sequential models with reverse-mode differentiation.
//!
//! A `Model` is an input shape plus a stack of layers. A recording forward
//! pass produces a `Tape` (the ordered per-layer caches); replaying the
//! tape in reverse yields gradients for every parameter and for the input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::num::layers::{Layer, LayerCache, LayerSpec};
use crate::num::tensor::Tensor;

/// The seeded random stream used everywhere in this crate. ChaCha keeps
/// seed -> weights reproducible across platforms and rand releases.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Record of one recording forward pass, consumed by [`Model::backward`].
#[derive(Debug)]
pub struct Tape {
    caches: Vec<LayerCache>,
    /// Layer range the pass covered, `[start, end)`.
    range: (usize, usize),
    batch: usize,
    consumed: bool,
}

/// Gradients from one backward pass: one entry per layer (None for
/// parameterless layers) plus the gradient with respect to the input.
#[derive(Debug)]
pub struct Gradients {
    pub layers: Vec<Option<(Tensor, Tensor)>>,
    pub input: Tensor,
}

impl Model {
    /// Build a model with Glorot-uniform weights from the given stream:
    /// uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], rng: &mut SeededRng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            let out_shape = spec.infer_shape(&shape).map_err(|e| {
                Error::InvalidArgument(format!("layer {i} ({}): {e}", spec.name()))
            })?;
            let (weights, bias) = match *spec {
                LayerSpec::Dense { units } => {
                    let fan_in = shape[0];
                    let w = glorot(&[fan_in, units], fan_in, units, rng);
                    (Some(w), Some(Tensor::zeros(&[units])))
                }
                LayerSpec::Conv2d { filters, kernel, .. } => {
                    let c = shape[2];
                    let fan_in = kernel * kernel * c;
                    let fan_out = kernel * kernel * filters;
                    let w = glorot(&[kernel, kernel, c, filters], fan_in, fan_out, rng);
                    (Some(w), Some(Tensor::zeros(&[filters])))
                }
                _ => (None, None),
            };
            layers.push(Layer {
                spec: *spec,
                in_shape: shape.clone(),
                out_shape: out_shape.clone(),
                weights,
                bias,
            });
            shape = out_shape;
        }
        Ok(Model {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.out_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.item_shape() != self.input_shape.as_slice() {
            return Err(Error::shape("model input", &self.input_shape, x.item_shape()));
        }
        Ok(())
    }

    /// Plain forward pass over the whole stack.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_range(x, 0, self.layers.len())
    }

    /// Forward through layers `[0, end)` without recording; `end` equal to
    /// the layer count runs the whole stack.
    pub fn forward_to(&self, x: &Tensor, end: usize) -> Result<Tensor> {
        self.forward_range(x, 0, end)
    }

    fn forward_range(&self, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        if start == 0 {
            self.check_input(x)?;
        }
        let mut h = x.clone();
        for (i, layer) in self.layers[start..end].iter().enumerate() {
            let (y, _) = layer.forward(&h, false).map_err(|e| {
                Error::InvalidArgument(format!("layer {} ({}): {e}", start + i, layer.spec.name()))
            })?;
            h = y;
        }
        Ok(h)
    }

    /// Recording forward pass over the whole stack.
    pub fn forward_recording(&self, x: &Tensor) -> Result<(Tensor, Tape)> {
        self.forward_recording_to(x, self.layers.len())
    }

    /// Recording forward through layers `[0, end)`.
    pub fn forward_recording_to(&self, x: &Tensor, end: usize) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(end);
        let mut h = x.clone();
        for (i, layer) in self.layers[..end].iter().enumerate() {
            let (y, cache) = layer.forward(&h, true).map_err(|e| {
                Error::InvalidArgument(format!("layer {i} ({}): {e}", layer.spec.name()))
            })?;
            // Flatten caches nothing; keep its input shape implicitly.
            caches.push(cache);
            h = y;
        }
        let batch = x.batch_len();
        Ok((
            h,
            Tape {
                caches,
                range: (0, end),
                batch,
                consumed: false,
            },
        ))
    }

    /// Replay a tape in reverse. `output_grad` must match the shape of the
    /// recorded output. The tape is consumed; a second call is rejected.
    pub fn backward(&self, tape: &mut Tape, output_grad: &Tensor) -> Result<Gradients> {
        if tape.consumed {
            return Err(Error::InvalidArgument(
                "computation tape already consumed by a previous backward pass".into(),
            ));
        }
        if output_grad.batch_len() != tape.batch {
            return Err(Error::shape(
                "backward output_grad batch",
                &[tape.batch],
                &[output_grad.batch_len()],
            ));
        }
        tape.consumed = true;
        let (start, end) = tape.range;
        let mut layer_grads: Vec<Option<(Tensor, Tensor)>> = Vec::new();
        layer_grads.resize_with(self.layers.len(), || None);
        let mut g = output_grad.clone();
        for i in (start..end).rev() {
            let layer = &self.layers[i];
            let (dx, params) = layer.backward(&tape.caches[i - start], &g)?;
            layer_grads[i] = params;
            g = dx;
        }
        Ok(Gradients {
            layers: layer_grads,
            input: g,
        })
    }

    /// Flat views of all parameters, weights then bias per layer, in layer
    /// order. The order is the contract between Adam state and gradients.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Some(w) = layer.weights.as_mut() {
                out.push(w.data_mut());
            }
            if let Some(b) = layer.bias.as_mut() {
                out.push(b.data_mut());
            }
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some(w) = layer.weights.as_ref() {
                out.push(w.len());
            }
            if let Some(b) = layer.bias.as_ref() {
                out.push(b.len());
            }
        }
        out
    }

    /// Gradient slices aligned with [`Model::param_slices_mut`].
    pub fn grad_slices<'a>(&self, grads: &'a Gradients) -> Vec<&'a [f64]> {
        let mut out = Vec::new();
        for (layer, lg) in self.layers.iter().zip(&grads.layers) {
            if layer.spec.has_params() {
                let (dw, db) = lg
                    .as_ref()
                    .expect("parameterized layer must have gradients");
                out.push(dw.data());
                out.push(db.data());
            }
        }
        out
    }
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-s..s)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Temperature softmax over the last axis: softmax(v / tau).
///
/// Positive entries summing to one per row; the argmax of each row equals
/// the argmax of the input because scaling by 1/tau > 0 is monotone.
pub fn softmax_temperature(v: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "softmax temperature must be positive, got {tau}"
        )));
    }
    let cols = *v
        .shape()
        .last()
        .ok_or_else(|| Error::InvalidArgument("softmax_temperature needs a non-scalar".into()))?;
    let mut out = v.clone();
    for row in out.data_mut().chunks_mut(cols) {
        for x in row.iter_mut() {
            *x /= tau;
        }
        crate::num::layers::softmax_row(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_model(in_dim: usize, units: usize) -> Model {
        let mut rng = seeded_rng(0);
        Model::new(&[in_dim], &[LayerSpec::Dense { units }], &mut rng).unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut m = dense_model(3, 3);
        let w = m.layers_mut()[0].weights.as_mut().unwrap();
        w.data_mut().copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = Tensor::from_vec(&[1, 3], vec![0.3, -1.5, 2.0]).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn single_softmax_uniform_on_zeros() {
        let mut rng = seeded_rng(0);
        let m = Model::new(&[5], &[LayerSpec::Softmax], &mut rng).unwrap();
        let y = m.forward(&Tensor::zeros(&[1, 5])).unwrap();
        for &p in y.data() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_hand_evaluation() {
        // 2 -> 2 (relu) -> 1, weights set by hand; expected output computed
        // by hand: h = relu(W1 x + b1), y = W2 h + b2.
        let mut rng = seeded_rng(0);
        let mut m = Model::new(
            &[2],
            &[
                LayerSpec::Dense { units: 2 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 },
            ],
            &mut rng,
        )
        .unwrap();
        // W1 = [[1, -1], [2, 0.5]] stored [in,out], b1 = [0.1, -0.2]
        m.layers_mut()[0]
            .weights
            .as_mut()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
        m.layers_mut()[0]
            .bias
            .as_mut()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.1, -0.2]);
        // W2 = [[3], [-2]], b2 = [0.5]
        m.layers_mut()[2]
            .weights
            .as_mut()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[3.0, -2.0]);
        m.layers_mut()[2]
            .bias
            .as_mut()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.5]);
        let x = Tensor::from_vec(&[1, 2], vec![0.4, -0.3]).unwrap();
        // pre1 = [0.4*1 + (-0.3)*2 + 0.1, 0.4*(-1) + (-0.3)*0.5 - 0.2]
        //      = [-0.1, -0.75] -> relu -> [0, 0] -> y = 0.5
        let y = m.forward(&x).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-12);

        let x2 = Tensor::from_vec(&[1, 2], vec![1.0, 0.5]).unwrap();
        // pre1 = [1 + 1 + 0.1, -1 + 0.25 - 0.2] = [2.1, -0.95] -> [2.1, 0]
        // y = 3*2.1 + 0.5 = 6.8
        let y2 = m.forward(&x2).unwrap();
        assert!((y2.data()[0] - 6.8).abs() < 1e-12);
    }

    #[test]
    fn linear_gradient_matches_input() {
        // y = w . x at x = [2, 3]: dy/dw = [2, 3]
        let mut m = dense_model(2, 1);
        m.layers_mut()[0]
            .weights
            .as_mut()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.7, -0.4]);
        let x = Tensor::from_vec(&[1, 2], vec![2.0, 3.0]).unwrap();
        let (_, mut tape) = m.forward_recording(&x).unwrap();
        let g = m
            .backward(&mut tape, &Tensor::from_vec(&[1, 1], vec![1.0]).unwrap())
            .unwrap();
        let (dw, db) = g.layers[0].as_ref().unwrap();
        assert_eq!(dw.data(), &[2.0, 3.0]);
        assert_eq!(db.data(), &[1.0]);
        // input gradient is w
        assert_eq!(g.input.data(), &[0.7, -0.4]);
    }

    #[test]
    fn zero_weight_path_has_zero_gradient() {
        let mut m = dense_model(2, 1);
        m.layers_mut()[0]
            .weights
            .as_mut()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.0, 1.0]);
        let x = Tensor::from_vec(&[1, 2], vec![5.0, 1.0]).unwrap();
        let (_, mut tape) = m.forward_recording(&x).unwrap();
        let g = m
            .backward(&mut tape, &Tensor::from_vec(&[1, 1], vec![1.0]).unwrap())
            .unwrap();
        // gradient wrt the input along the zero-weight path is zero
        assert_eq!(g.input.data()[0], 0.0);
    }

    #[test]
    fn tape_cannot_be_consumed_twice() {
        let m = dense_model(2, 2);
        let x = Tensor::zeros(&[1, 2]);
        let (_, mut tape) = m.forward_recording(&x).unwrap();
        let og = Tensor::zeros(&[1, 2]);
        m.backward(&mut tape, &og).unwrap();
        assert!(m.backward(&mut tape, &og).is_err());
    }

    #[test]
    fn forward_is_deterministic_and_seeded_builds_identical() {
        let mut r1 = seeded_rng(42);
        let mut r2 = seeded_rng(42);
        let specs = [LayerSpec::Dense { units: 4 }, LayerSpec::Sigmoid];
        let m1 = Model::new(&[3], &specs, &mut r1).unwrap();
        let m2 = Model::new(&[3], &specs, &mut r2).unwrap();
        assert_eq!(
            m1.layers()[0].weights.as_ref().unwrap().data(),
            m2.layers()[0].weights.as_ref().unwrap().data()
        );
        let x = Tensor::from_vec(&[1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let y1 = m1.forward(&x).unwrap();
        let y2 = m1.forward(&x).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut rng = seeded_rng(0);
        let m = Model::new(
            &[4],
            &[LayerSpec::Dense { units: 2 }, LayerSpec::Softmax],
            &mut rng,
        )
        .unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model input"), "got: {msg}");
    }

    #[test]
    fn softmax_temperature_contract() {
        let v = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let p = softmax_temperature(&v, 0.37).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-12);
        assert!(softmax_temperature(&v, 0.0).is_err());
        assert!(softmax_temperature(&v, -1.0).is_err());

        // hand-computed: softmax([7, 3, 0 x 8]) = e^7 / (e^7 + e^3 + 8)
        let mut vals = vec![7.0, 3.0];
        vals.extend(std::iter::repeat(0.0).take(8));
        let v = Tensor::from_vec(&[10], vals).unwrap();
        let p = softmax_temperature(&v, 1.0).unwrap();
        let expect = 7f64.exp() / (7f64.exp() + 3f64.exp() + 8.0);
        assert!((p.data()[0] - expect).abs() < 1e-12);
        let sum: f64 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
