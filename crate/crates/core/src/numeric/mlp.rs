//! Multi-layer perceptrons recorded onto a [`Tape`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::params::{init_uniform, ParamId, ParamStore};
use crate::rng::Rng;
use crate::numeric::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Layer widths including the input extent: `[in, hidden..., out]`.
/// Hidden layers use relu.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs an input and at least one layer, got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be positive, got {widths:?}")));
        }
        Ok(MlpSpec { widths, output })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// An MLP bound to its parameters (`<name>.W<l>` of shape out×in, `<name>.b<l>` of extent out).
#[derive(Debug, Clone)]
pub struct Mlp {
    name: String,
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers freshly initialized parameters under `name`.
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.num_layers());
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, out) = (pair[0], pair[1]);
            let w = store.add(format!("{name}.W{l}"), init_uniform(&[out, fan_in], fan_in, rng))?;
            let b = store.add(format!("{name}.b{l}"), init_uniform(&[out], fan_in, rng))?;
            layers.push((w, b));
        }
        Ok(Mlp {
            name: name.into(),
            spec,
            layers,
        })
    }

    /// Rebinds to parameters already present in `store`, checking their shapes.
    pub fn bind(store: &ParamStore, name: &str, spec: MlpSpec) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.num_layers());
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let lookup = |leaf: String, expected: &[usize]| -> Result<ParamId> {
                let id = store
                    .id(&leaf)
                    .ok_or_else(|| Error::Contract(format!("missing parameter `{leaf}`")))?;
                let found = store.get(id).value.shape();
                if found != expected {
                    return Err(Error::shape(format!("parameter `{leaf}`"), expected, found));
                }
                Ok(id)
            };
            let w = lookup(format!("{name}.W{l}"), &[pair[1], pair[0]])?;
            let b = lookup(format!("{name}.b{l}"), &[pair[1]])?;
            layers.push((w, b));
        }
        Ok(Mlp {
            name: name.into(),
            spec,
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// `(weight, bias)` parameter ids per layer.
    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Applies the MLP to every row of `x`.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let expected = self.spec.widths[l];
            let found = tape.value(h).cols();
            if found != expected {
                return Err(Error::shape(
                    format!("mlp `{}` layer {l} input", self.name),
                    &[expected],
                    &[found],
                ));
            }
            let wv = tape.param(store, *w);
            let bv = tape.param(store, *b);
            let z = tape.matmul(h, wv)?;
            let z = tape.add(z, bv)?;
            h = if l < last {
                tape.relu(z)
            } else {
                match self.spec.output {
                    OutputActivation::Identity => z,
                    OutputActivation::Sigmoid => tape.sigmoid(z),
                }
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::numeric::tensor::Tensor;
    use alloc::vec;

    fn build(widths: Vec<usize>, out: OutputActivation) -> (ParamStore, Mlp) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(3, rng::STREAM_INIT);
        let mlp = Mlp::new(&mut store, "f", MlpSpec::new(widths, out).unwrap(), &mut r).unwrap();
        (store, mlp)
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let (mut store, mlp) = build(vec![3, 5, 2], OutputActivation::Identity);
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[1.0, -2.0, 3.0]));
        let y = mlp.apply(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        let (mut store, mlp) = build(vec![1, 1], OutputActivation::Identity);
        store.set_value("f.W0", Tensor::from_rows(&[[2.0]]).unwrap()).unwrap();
        store.set_value("f.b0", Tensor::vector(&[1.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[3.0]));
        let y = mlp.apply(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0]);
    }

    #[test]
    fn sigmoid_output_is_in_open_unit_interval() {
        let (store, mlp) = build(vec![2, 4, 3], OutputActivation::Sigmoid);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[4.0, -1.0], [0.3, 0.2]]).unwrap());
        let y = mlp.apply(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3]);
        assert!(tape.value(y).data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn wrong_input_extent_names_the_layer() {
        let (store, mlp) = build(vec![3, 2], OutputActivation::Identity);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[1.0, 2.0]));
        match mlp.apply(&mut tape, &store, x) {
            Err(Error::Shape { context, .. }) => assert!(context.contains("`f` layer 0")),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn bind_checks_shapes() {
        let (store, mlp) = build(vec![3, 4, 2], OutputActivation::Identity);
        let rebound = Mlp::bind(&store, "f", mlp.spec().clone()).unwrap();
        assert_eq!(rebound.layers(), mlp.layers());
        let wrong = MlpSpec::new(vec![3, 5, 2], OutputActivation::Identity).unwrap();
        assert!(Mlp::bind(&store, "f", wrong).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], OutputActivation::Identity).is_err());
    }
}
