//! Minimal reverse-mode differentiation for small static networks.

mod matrix;
mod params;
mod tape;

pub use matrix::Matrix;
pub use params::{ParamFile, ParamId, ParamStore, TensorRecord};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected layer `y = x·W + b`, `W` stored `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    /// Uniform weights and biases scaled by the fan-in.
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Result<Self> {
        let limit = 1.0 / (n_in as f64).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)).collect();
        let w = store.add(&format!("{name}.w"), &[n_in, n_out], w)?;
        let b = (0..n_out).map(|_| rng.gen_range(-limit..limit)).collect();
        let b = store.add(&format!("{name}.b"), &[n_out], b)?;
        Ok(Dense { w, b, n_in, n_out })
    }

    /// Binds to an existing layer in `store`, checking shapes.
    pub fn attach(store: &ParamStore, name: &str, n_in: usize, n_out: usize) -> Result<Self> {
        let find = |suffix: &str, shape: &[usize]| -> Result<ParamId> {
            let full = format!("{name}.{suffix}");
            let id = store
                .id(&full)
                .ok_or_else(|| Error::InvalidInput(format!("missing parameter {full}")))?;
            if store.shape(id) != shape {
                return Err(Error::InvalidInput(format!(
                    "parameter {full} has shape {:?}, expected {shape:?}",
                    store.shape(id)
                )));
            }
            Ok(id)
        };
        Ok(Dense {
            w: find("w", &[n_in, n_out])?,
            b: find("b", &[n_out])?,
            n_in,
            n_out,
        })
    }

    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// Chain of dense layers with tanh between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
    last: Activation,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        last: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(store, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
            last,
        })
    }

    pub fn attach(store: &ParamStore, name: &str, sizes: &[usize], last: Activation) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::attach(store, &format!("{name}.l{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
            last,
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                tape.value(x).cols()
            )));
        }
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.record(tape, h)?;
            if i + 1 < n || self.last == Activation::Tanh {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward<'p>(&self, params: &'p ParamStore, input: &Matrix) -> Result<(Matrix, Tape<'p>)> {
        let mut tape = Tape::new(params);
        let x = tape.input(input.clone());
        let y = self.record(&mut tape, x)?;
        Ok((tape.value(y).clone(), tape))
    }
}
