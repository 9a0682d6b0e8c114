use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{AdError, ParamStore, ParamVars, Tape, Tensor, Var};

/// Fully connected network with relu between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    widths: Vec<usize>,
}

impl Mlp {
    /// `widths` lists every layer size, input first.
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            prefix: prefix.into(),
            widths,
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AdError> {
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let w = Tensor::from_fn(vec![fan_in, fan_out], |_| normal.sample(rng));
            store.insert(self.weight_name(l), w)?;
            store.insert(self.bias_name(l), Tensor::zeros(vec![fan_out]))?;
        }
        Ok(())
    }

    /// Applies the network to the rows of `x` (`[n, input_width]`).
    pub fn forward(&self, tape: &mut Tape, pv: &ParamVars, x: Var) -> Result<Var, AdError> {
        let mut h = x;
        for l in 0..self.num_layers() {
            h = tape.matmul(h, pv.var(&self.weight_name(l)))?;
            h = tape.add_bias(h, pv.var(&self.bias_name(l)))?;
            if l + 1 < self.num_layers() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass on plain values, `rows × input_width` row-major.
    pub fn eval(&self, params: &ParamStore, rows: usize, input: Vec<f64>) -> Result<Vec<f64>, AdError> {
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape)?;
        let x = tape.constant(Tensor::new(vec![rows, self.input_width()], input)?)?;
        let y = self.forward(&mut tape, &pv, x)?;
        Ok(tape.value(y).data().to_vec())
    }
}
