//! Network assembly and the forward pass.
//!
//! Data flow for an input `lr` with `K` groups of `N` blocks:
//!
//! ```text
//! x0 = ext(lr)
//! x_k = group_k(x_{k-1})                         k = 1..K
//! sr  = rec(up(trunk(x_K) + x0))
//!
//! group(f0):
//!   r    = gap(drm.out(prelu(drm.in(f0))))         N(N+1)/2 scalars per sample
//!   z_n  = res_n(f_{n-1})
//!   fd_n = sum_{i<n} r[n(n-1)/2 + i] * f_i
//!   f_n  = (z_n + fd_n) * sigmoid(z_n)
//!   out  = fuse(concat[f0, .., fN])
//! ```

use rand::Rng;

use crate::autograd::{Eager, Engine, Graph, Var};
use crate::error::{Error, Result};
use crate::model::config::{ConnectionMode, DrmActivation, NetworkConfig};
use crate::model::params::ParameterStore;
use crate::tensor::{Real, Shape, Tensor};

pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize },
    Bias,
    Slope,
}

/// One trainable array of the architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, in_c: usize, out_c: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: Shape::new(out_c, in_c, k, k),
        kind: ParamKind::ConvWeight { fan_in: in_c * k * k },
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: Shape::new(out_c, 1, 1, 1),
        kind: ParamKind::Bias,
    });
}

fn slope_spec(out: &mut Vec<ParamSpec>, name: String, c: usize) {
    out.push(ParamSpec {
        name,
        shape: Shape::new(c, 1, 1, 1),
        kind: ParamKind::Slope,
    });
}

/// Every parameter the config implies, in construction order.
pub fn param_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mut specs = Vec::new();
    conv_specs(&mut specs, "ext", 3, c, 3);
    for k in 0..cfg.groups {
        for n in 0..cfg.blocks {
            let p = format!("drag.{k}.rb.{n}");
            slope_spec(&mut specs, format!("{p}.act.0.slope"), c);
            conv_specs(&mut specs, &format!("{p}.conv.0"), c, c, 3);
            slope_spec(&mut specs, format!("{p}.act.1.slope"), c);
            conv_specs(&mut specs, &format!("{p}.conv.1"), c, c, 3);
        }
        if cfg.has_drm() {
            conv_specs(&mut specs, &format!("drag.{k}.drm.in"), c, cfg.drm_hidden, 1);
            slope_spec(&mut specs, format!("drag.{k}.drm.act.slope"), cfg.drm_hidden);
            conv_specs(
                &mut specs,
                &format!("drag.{k}.drm.out"),
                cfg.drm_hidden,
                cfg.coefficient_count(),
                1,
            );
        }
        if cfg.concat_enabled {
            conv_specs(&mut specs, &format!("drag.{k}.fuse"), c * (cfg.blocks + 1), c, 1);
        }
    }
    conv_specs(&mut specs, "trunk", c, c, 3);
    for (j, (out_c, _)) in cfg.upsampler_stages().into_iter().enumerate() {
        conv_specs(&mut specs, &format!("up.{j}"), c, out_c, 3);
    }
    conv_specs(&mut specs, "rec", c, 3, 3);
    specs
}

/// Hooks into a forward pass: record the coefficients and attention maps,
/// or substitute externally computed coefficients.
#[derive(Clone, Debug)]
pub struct ForwardProbe<T> {
    pub record: bool,
    /// One `(n, N(N+1)/2, 1, 1)` tensor per group, used instead of the DRM output.
    pub coefficient_override: Option<Vec<Tensor<T>>>,
    /// Constant used for every attention map instead of `sigmoid(z)`.
    pub attention_override: Option<T>,
    pub coefficients: Vec<Tensor<T>>,
    pub attention: Vec<Tensor<T>>,
}

impl<T> Default for ForwardProbe<T> {
    fn default() -> Self {
        ForwardProbe {
            record: false,
            coefficient_override: None,
            attention_override: None,
            coefficients: Vec::new(),
            attention: Vec::new(),
        }
    }
}

impl<T: Real> ForwardProbe<T> {
    pub fn recording() -> Self {
        ForwardProbe {
            record: true,
            ..Default::default()
        }
    }

    pub fn with_coefficients(coeffs: Vec<Tensor<T>>) -> Self {
        ForwardProbe {
            coefficient_override: Some(coeffs),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: NetworkConfig,
    params: ParameterStore<T>,
}

impl<T: Real> Model<T> {
    /// Builds the network with freshly initialised parameters: conv weights
    /// uniform in `±1/sqrt(fan_in)`, biases zero, PReLU slopes 0.25.
    pub fn new(config: NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        for spec in param_specs(&config) {
            let value = match spec.kind {
                ParamKind::ConvWeight { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Tensor::uniform(spec.shape, -bound, bound, rng)
                }
                ParamKind::Bias => Tensor::zeros(spec.shape),
                ParamKind::Slope => Tensor::full(spec.shape, T::of(PRELU_INIT)),
            };
            params.insert(spec.name, value)?;
        }
        Ok(Model { config, params })
    }

    /// Builds the network with every parameter set to zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        for spec in param_specs(&config) {
            params.insert(spec.name, Tensor::zeros(spec.shape))?;
        }
        Ok(Model { config, params })
    }

    pub fn from_parts(config: NetworkConfig, params: ParameterStore<T>) -> Result<Self> {
        config.validate()?;
        for spec in param_specs(&config) {
            let p = params
                .get(&spec.name)
                .ok_or_else(|| Error::MissingParameter(spec.name.clone()))?;
            if p.value.shape() != spec.shape {
                return Err(Error::ParameterShape {
                    name: spec.name,
                    found: p.value.shape().dims(),
                    expected: spec.shape.dims(),
                });
            }
        }
        if let Some(extra) = params
            .names()
            .find(|n| !param_specs(&config).iter().any(|s| s.name == *n))
        {
            return Err(Error::UnknownParameter(extra.to_string()));
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn param<E: Engine<T>>(&self, e: &mut E, name: &str) -> E::Var {
        e.param(name, self.params.value(name))
    }

    fn conv<E: Engine<T>>(&self, e: &mut E, prefix: &str, x: &E::Var) -> Result<E::Var> {
        let w = self.param(e, &format!("{prefix}.weight"));
        let b = self.param(e, &format!("{prefix}.bias"));
        let pad = e.value(&w).shape().h / 2;
        e.conv2d(x, &w, &b, pad)
    }

    fn act<E: Engine<T>>(&self, e: &mut E, name: &str, x: &E::Var) -> Result<E::Var> {
        let a = self.param(e, name);
        e.prelu(x, &a)
    }

    /// Dynamic residual coefficients of group `k` from its input `f0`:
    /// 1x1 conv, PReLU, 1x1 conv over the full map, then global pooling.
    /// Output shape `(n, N(N+1)/2, 1, 1)`.
    pub fn drm_forward<E: Engine<T>>(&self, e: &mut E, k: usize, f0: &E::Var) -> Result<E::Var> {
        if !self.config.has_drm() {
            return Err(Error::contract(
                "drm_forward",
                format!("connection mode {:?} has no DRM", self.config.connection_mode),
            ));
        }
        let h = self.conv(e, &format!("drag.{k}.drm.in"), f0)?;
        let h = self.act(e, &format!("drag.{k}.drm.act.slope"), &h)?;
        let h = self.conv(e, &format!("drag.{k}.drm.out"), &h)?;
        let r = e.global_avg_pool(&h)?;
        Ok(match self.config.drm_activation {
            DrmActivation::None => r,
            DrmActivation::Sigmoid => e.sigmoid(&r),
            DrmActivation::Tanh => e.tanh(&r),
        })
    }

    /// `PReLU -> conv3x3 -> PReLU -> conv3x3` of block `n` (0-based) in group `k`.
    pub fn residual_branch<E: Engine<T>>(&self, e: &mut E, k: usize, n: usize, x: &E::Var) -> Result<E::Var> {
        let p = format!("drag.{k}.rb.{n}");
        let h = self.act(e, &format!("{p}.act.0.slope"), x)?;
        let h = self.conv(e, &format!("{p}.conv.0"), &h)?;
        let h = self.act(e, &format!("{p}.act.1.slope"), &h)?;
        self.conv(e, &format!("{p}.conv.1"), &h)
    }

    /// Output `f_n` of block `n` (1-based) given `features = [f0, .., f_{n-1}]`.
    pub fn drsa_forward<E: Engine<T>>(
        &self,
        e: &mut E,
        k: usize,
        n: usize,
        features: &[E::Var],
        coefficients: Option<&E::Var>,
        probe: &mut ForwardProbe<T>,
    ) -> Result<E::Var> {
        if n == 0 || n > self.config.blocks || features.len() != n {
            return Err(Error::contract(
                "drsa_forward",
                format!(
                    "block {n} of {} needs {n} features, got {}",
                    self.config.blocks,
                    features.len()
                ),
            ));
        }
        let z = self.residual_branch(e, k, n - 1, &features[n - 1])?;
        let skip = match self.config.connection_mode {
            ConnectionMode::StandardRes => features[n - 1].clone(),
            ConnectionMode::AllRes => {
                let mut acc = features[0].clone();
                for f in &features[1..] {
                    acc = e.add(&acc, f)?;
                }
                acc
            }
            ConnectionMode::Dra => {
                let r = coefficients.ok_or_else(|| Error::contract("drsa_forward", "missing coefficients"))?;
                let base = n * (n - 1) / 2;
                let mut acc: Option<E::Var> = None;
                for (i, f) in features.iter().enumerate() {
                    let ri = e.select_channel(r, base + i)?;
                    let term = e.mul(f, &ri)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => e.add(&a, &term)?,
                    });
                }
                acc.expect("at least one feature")
            }
        };
        let combined = e.add(&z, &skip)?;
        if !self.config.rsa_enabled {
            return Ok(combined);
        }
        let alpha = match probe.attention_override {
            Some(a) => e.constant(Tensor::full(e.value(&z).shape(), a)),
            None => e.sigmoid(&z),
        };
        if probe.record {
            probe.attention.push(e.value(&alpha).clone());
        }
        e.mul(&combined, &alpha)
    }

    /// Group `k` (0-based) applied to its input.
    pub fn drag_forward<E: Engine<T>>(
        &self,
        e: &mut E,
        k: usize,
        x: &E::Var,
        probe: &mut ForwardProbe<T>,
    ) -> Result<E::Var> {
        let coefficients = if self.config.has_drm() {
            let r = match &probe.coefficient_override {
                Some(list) => {
                    let t = list
                        .get(k)
                        .ok_or_else(|| Error::contract("drag_forward", format!("no override for group {k}")))?;
                    let want = Shape::new(e.value(x).shape().n, self.config.coefficient_count(), 1, 1);
                    if t.shape() != want {
                        return Err(Error::contract(
                            "drag_forward",
                            format!("override for group {k} has shape {}, expected {want}", t.shape()),
                        ));
                    }
                    e.constant(t.clone())
                }
                None => self.drm_forward(e, k, x)?,
            };
            if probe.record {
                probe.coefficients.push(e.value(&r).clone());
            }
            Some(r)
        } else {
            None
        };

        let mut features = vec![x.clone()];
        for n in 1..=self.config.blocks {
            let f = self.drsa_forward(e, k, n, &features, coefficients.as_ref(), probe)?;
            features.push(f);
        }
        if self.config.concat_enabled {
            let cat = e.concat_channels(&features)?;
            self.conv(e, &format!("drag.{k}.fuse"), &cat)
        } else {
            e.add(features.last().expect("N >= 1"), x)
        }
    }

    /// Full network: `(n, 3, h, w)` in, `(n, 3, s*h, s*w)` out, unclamped.
    pub fn forward<E: Engine<T>>(&self, e: &mut E, input: &E::Var, probe: &mut ForwardProbe<T>) -> Result<E::Var> {
        let s = e.value(input).shape();
        if s.c != 3 {
            return Err(Error::contract(
                "network_forward",
                format!("expected 3 input channels, got {}", s.c),
            ));
        }
        let x0 = self.conv(e, "ext", input)?;
        let mut x = x0.clone();
        for k in 0..self.config.groups {
            x = self.drag_forward(e, k, &x, probe)?;
        }
        let t = self.conv(e, "trunk", &x)?;
        let mut up = e.add(&t, &x0)?;
        for (j, (_, r)) in self.config.upsampler_stages().into_iter().enumerate() {
            let h = self.conv(e, &format!("up.{j}"), &up)?;
            up = e.pixel_shuffle(&h, r)?;
        }
        self.conv(e, "rec", &up)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_with(input, &mut ForwardProbe::default())
    }

    pub fn infer_with(&self, input: &Tensor<T>, probe: &mut ForwardProbe<T>) -> Result<Tensor<T>> {
        let mut e = Eager;
        let x = Engine::<T>::constant(&mut e, input.clone());
        let y = self.forward(&mut e, &x, probe)?;
        Ok(std::rc::Rc::try_unwrap(y).unwrap_or_else(|rc| (*rc).clone()))
    }

    /// Records a forward pass on `g`, with every parameter as a trainable leaf.
    pub fn forward_graph(&self, g: &mut Graph<T>, input: Tensor<T>) -> Result<Var> {
        let x = g.constant(input);
        self.forward(g, &x, &mut ForwardProbe::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn output_shapes_per_scale() {
        let mut r = rng();
        for (scale, lr, hr) in [(2, 24, 48), (3, 8, 24), (4, 12, 48)] {
            let cfg = NetworkConfig {
                channels: 4,
                ..NetworkConfig::tiny(scale)
            };
            let m = Model::<f32>::new(cfg, &mut r).unwrap();
            let x = Tensor::uniform(Shape::new(1, 3, lr, lr), 0.0, 1.0, &mut r);
            assert_eq!(m.infer(&x).unwrap().shape(), Shape::new(1, 3, hr, hr));
        }
    }

    #[test]
    fn zero_model_gives_zero_output() {
        let m = Model::<f32>::zeros(NetworkConfig::tiny(2)).unwrap();
        let x = Tensor::full(Shape::new(1, 3, 6, 6), 0.5);
        assert!(m.infer(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let m = Model::<f32>::zeros(NetworkConfig::tiny(2)).unwrap();
        let x = Tensor::zeros(Shape::new(1, 1, 6, 6));
        assert!(m.infer(&x).is_err());
    }

    #[test]
    fn ablation_modes_run_and_keep_shape() {
        let mut r = rng();
        for mode in [ConnectionMode::StandardRes, ConnectionMode::AllRes, ConnectionMode::Dra] {
            for concat in [true, false] {
                for act in [DrmActivation::None, DrmActivation::Sigmoid, DrmActivation::Tanh] {
                    let cfg = NetworkConfig {
                        connection_mode: mode,
                        concat_enabled: concat,
                        drm_activation: act,
                        channels: 4,
                        ..NetworkConfig::tiny(2)
                    };
                    let m = Model::<f32>::new(cfg, &mut r).unwrap();
                    let x = Tensor::uniform(Shape::new(2, 3, 5, 5), 0.0, 1.0, &mut r);
                    let y = m.infer(&x).unwrap();
                    assert_eq!(y.shape(), Shape::new(2, 3, 10, 10));
                    assert!(y.all_finite());
                }
            }
        }
    }

    #[test]
    fn from_parts_names_offender() {
        let mut r = rng();
        let a = Model::<f32>::new(NetworkConfig::tiny(2), &mut r).unwrap();
        let other = NetworkConfig {
            blocks: 3,
            ..NetworkConfig::tiny(2)
        };
        let err = Model::from_parts(other, a.params().clone()).unwrap_err();
        assert!(
            matches!(err, Error::MissingParameter(_) | Error::ParameterShape { .. }),
            "{err}"
        );
    }
}
