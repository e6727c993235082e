use rand::Rng as _;

use super::{Head, ModelConfig, ModuleId};
use crate::numerics::Tensor;
use crate::{rng, Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub module: ModuleId,
    pub tensor: Tensor<S>,
}

/// Indices of a weight/bias pair in the flat parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pair {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub main: Vec<Pair>,
    pub top: Vec<Pair>,
    pub attention: [Pair; 2],
    pub heads: [[Pair; 2]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    params: Vec<Param<S>>,
    pub(crate) layout: Layout,
}

struct Builder<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> Builder<S> {
    fn pair(&mut self, module: ModuleId, layer: &str, wshape: Vec<usize>, bshape: usize) -> Pair {
        let w = self.params.len();
        self.params.push(Param {
            name: format!("{}.{layer}.weight", module.prefix()),
            module,
            tensor: Tensor::zeros(&wshape),
        });
        self.params.push(Param {
            name: format!("{}.{layer}.bias", module.prefix()),
            module,
            tensor: Tensor::zeros(&[bshape]),
        });
        Pair { w, b: w + 1 }
    }
}

impl<S: Scalar> Model<S> {
    /// Zero-valued parameters with the shapes implied by `config`.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder { params: Vec::new() };
        let k = config.kernel;
        let conv_stack = |b: &mut Builder<S>, module| {
            let mut c_in = 1;
            config
                .channels
                .iter()
                .enumerate()
                .map(|(i, &c_out)| {
                    let p = b.pair(module, &format!("conv{i}"), vec![c_out, c_in, k, k], c_out);
                    c_in = c_out;
                    p
                })
                .collect::<Vec<_>>()
        };
        let main = conv_stack(&mut b, ModuleId::MainBranch);
        let top = conv_stack(&mut b, ModuleId::TopBranch);
        let d = config.feature_dim();
        let (ah, hh, kc) = (config.attention_hidden, config.head_hidden, config.num_classes());
        let attention = [
            b.pair(ModuleId::Attention, "fc1", vec![ah, d], ah),
            b.pair(ModuleId::Attention, "fc2", vec![1, ah], 1),
        ];
        let heads = Head::ALL.map(|h| {
            [
                b.pair(h.module(), "fc1", vec![hh, d], hh),
                b.pair(h.module(), "fc2", vec![kc, hh], kc),
            ]
        });
        Ok(Self {
            config,
            params: b.params,
            layout: Layout {
                main,
                top,
                attention,
                heads,
            },
        })
    }

    /// Zero biases; weights uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)),
    /// scaled by `head_output_gain` for each head's output layer.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let head_out: Vec<usize> = m.layout.heads.iter().map(|h| h[1].w).collect();
        let gain = m.config.head_output_gain;
        for (i, p) in m.params.iter_mut().enumerate() {
            if p.name.ends_with(".bias") {
                continue;
            }
            let s = p.tensor.shape();
            let receptive: usize = s[2..].iter().product();
            let (fan_in, fan_out) = (s[1] * receptive, s[0] * receptive);
            let mut a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if head_out.contains(&i) {
                a *= gain;
            }
            let mut r = rng::stream(seed, rng::INIT, &[i as u64]);
            for v in p.tensor.data_mut() {
                *v = S::lit(r.random_range(-a..=a));
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub(crate) fn t(&self, i: usize) -> &Tensor<S> {
        &self.params[i].tensor
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Zero tensors aligned with `params()`.
    pub fn zero_grads(&self) -> Vec<Tensor<S>> {
        self.params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect()
    }

    pub fn module_params(&self, module: ModuleId) -> impl Iterator<Item = &Param<S>> {
        self.params.iter().filter(move |p| p.module == module)
    }

    /// Replace parameter values, checking names and shapes.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<S>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter groups, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.tensor.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    t.shape(),
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor = t;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    module: p.module,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }
}
