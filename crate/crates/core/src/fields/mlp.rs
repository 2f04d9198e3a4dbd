use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::geometry::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus { beta: f64 },
}

impl Activation {
    pub fn apply(self, x: Var<'_>) -> Var<'_> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Softplus { beta } => x.softplus_beta(beta),
        }
    }
}

/// `hidden_layers` layers of `width` units followed by a linear output layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Deterministic parameter initializer: tensor `k` draws from stream `k`.
pub struct Init {
    seed: u64,
    next_stream: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            next_stream: 0,
        }
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Tensor {
        let mut rng = stream_rng(self.seed, self.next_stream);
        self.next_stream += 1;
        let data = if bound == 0.0 {
            vec![0.0; rows * cols]
        } else {
            (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect()
        };
        Tensor::matrix(rows, cols, data).expect("init shape")
    }
}

pub fn linear(
    store: &mut ParamStore,
    init: &mut Init,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    bound: f64,
) -> Linear {
    let weight = store.register(&format!("{name}.w"), init.uniform(fan_in, fan_out, bound));
    let bias = store.register(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    Linear { weight, bias }
}

/// Multilayer perceptron whose first layer may also read a per-call
/// conditioning row. The conditioning term `c·W_c + b` is computed once and
/// broadcast over all input rows, which equals feeding `[x, c]` to a single
/// layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    cond: Option<ParamId>,
    activation: Activation,
}

impl Mlp {
    /// `final_bound` overrides the init range of the output layer.
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        input: usize,
        cond_dim: usize,
        output: usize,
        spec: &MlpSpec,
        final_bound: Option<f64>,
    ) -> Self {
        let mut layers = Vec::with_capacity(spec.hidden_layers + 1);
        let mut cond = None;
        let mut fan_in = input;
        for l in 0..=spec.hidden_layers {
            let last = l == spec.hidden_layers;
            let fan_out = if last { output } else { spec.width };
            let total_in = if l == 0 { input + cond_dim } else { fan_in };
            // variance 1/fan_in
            let bound = match (last, final_bound) {
                (true, Some(b)) => b,
                _ => (3.0 / total_in as f64).sqrt(),
            };
            layers.push(linear(store, init, &format!("{name}.{l}"), fan_in, fan_out, bound));
            if l == 0 && cond_dim > 0 {
                cond = Some(store.register(&format!("{name}.0.wc"), init.uniform(cond_dim, fan_out, bound)));
            }
            fan_in = fan_out;
        }
        Self {
            layers,
            cond,
            activation: spec.activation,
        }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        cond: Option<Var<'t>>,
    ) -> Result<Var<'t>, AutodiffError> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight);
            let mut b = tape.param(store, layer.bias);
            if l == 0 {
                match (self.cond, cond) {
                    (Some(wc), Some(c)) => b = c.affine(tape.param(store, wc), b)?,
                    (None, None) => {}
                    _ => return Err(AutodiffError::Invalid("conditioning input does not match layer".into())),
                }
            }
            h = h.affine(w, b)?;
            if l + 1 < self.layers.len() {
                h = self.activation.apply(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MlpSpec {
        MlpSpec {
            hidden_layers: 2,
            width: 6,
            activation: Activation::Softplus { beta: 1.0 },
        }
    }

    #[test]
    fn conditioned_layer_equals_concatenated_input() {
        let mut store = ParamStore::new();
        let mut init = Init::new(3);
        let mlp = Mlp::register(&mut store, &mut init, "m", 3, 2, 1, &spec(), None);
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3], [-0.5, 0.4, 0.0]]);
        let c = Tensor::from_rows(&[[0.7, -0.2]]);
        let tape = Tape::new();
        let split = mlp
            .forward(&tape, &store, tape.constant(x.clone()), Some(tape.constant(c.clone())))
            .unwrap()
            .value();

        // same weights as one layer over [x, c]
        let l0 = mlp.layers()[0];
        let (w, wc, b) = (store.value(l0.weight), store.value(mlp.cond.unwrap()), store.value(l0.bias));
        let mut h = vec![vec![0.0; 6]; 2];
        for r in 0..2 {
            let input: Vec<f64> = x.row(r).iter().chain(c.data()).copied().collect();
            for j in 0..6 {
                let mut acc = b.data()[j];
                for (i, v) in input.iter().enumerate() {
                    let wij = if i < 3 { w.data()[i * 6 + j] } else { wc.data()[(i - 3) * 6 + j] };
                    acc += v * wij;
                }
                h[r][j] = acc.max(0.0) + (-acc.abs()).exp().ln_1p();
            }
        }
        let rest = Tape::new();
        let mut v = rest.constant(Tensor::matrix(2, 6, h.concat()).unwrap());
        for (l, layer) in mlp.layers().iter().enumerate().skip(1) {
            v = v.affine(rest.param(&store, layer.weight), rest.param(&store, layer.bias)).unwrap();
            if l + 1 < mlp.layers().len() {
                v = v.softplus();
            }
        }
        for (a, e) in split.data().iter().zip(v.value().data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_seeded() {
        let build = |seed| {
            let mut store = ParamStore::new();
            Mlp::register(&mut store, &mut Init::new(seed), "m", 3, 0, 2, &spec(), Some(1e-6));
            store
        };
        let (a, b, c) = (build(1), build(1), build(2));
        let first = a.id("m.0.w").unwrap();
        assert_eq!(a.value(first), b.value(first));
        assert_ne!(a.value(first), c.value(first));
        let last = a.value(a.id("m.2.w").unwrap());
        assert!(last.data().iter().all(|w| w.abs() <= 1e-6));
    }

    #[test]
    fn missing_conditioning_rejected() {
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, &mut Init::new(0), "m", 3, 2, 1, &spec(), None);
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(mlp.forward(&tape, &store, x, None).is_err());
    }
}
