//! Encoder, decoder and latent-dynamics networks.

use crate::autodiff::{kaiming_uniform, Tensor, Var};

use super::config::{Conditioning, ModelConfig};
use super::params::{Bound, ParamId, ParamStore};
use super::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

/// Deterministic per-layer seed.
fn layer_seed(seed: u64, layer: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(layer + 1)
}

struct Init<'a> {
    store: &'a mut ParamStore,
    seed: u64,
    counter: u64,
}

impl Init<'_> {
    fn kaiming(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let t = kaiming_uniform(
            shape,
            fan_in.max(1),
            1.0,
            layer_seed(self.seed, self.counter),
        )?;
        self.counter += 1;
        Ok(self.store.add(name, t))
    }

    fn filled(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value))
    }
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    fn new(
        init: &mut Init<'_>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = init.kaiming(format!("{name}.weight"), &[fan_in, fan_out], fan_in)?;
        let bias = bias.then(|| init.filled(format!("{name}.bias"), &[fan_out], 0.0));
        Ok(Self { weight, bias })
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(p.get(self.weight))?;
        Ok(match self.bias {
            Some(b) => y.add_bias(p.get(b))?,
            None => y,
        })
    }
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    padding: usize,
    output_padding: usize,
    transposed: bool,
    two_d: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        transposed: bool,
        two_d: bool,
        bias: bool,
    ) -> Result<Self> {
        let mut shape = if transposed {
            vec![cin, cout, kernel]
        } else {
            vec![cout, cin, kernel]
        };
        if two_d {
            shape.push(kernel);
        }
        let taps = if two_d { kernel * kernel } else { kernel };
        let fan_in = if transposed { cout * taps } else { cin * taps };
        let weight = init.kaiming(format!("{name}.weight"), &shape, fan_in)?;
        let bias = bias.then(|| init.filled(format!("{name}.bias"), &[cout], 0.0));
        // Stride-1 layers keep the extent (odd kernels); stride-2 layers
        // halve it (conv) or double it exactly (transposed).
        let (padding, output_padding) = match (stride, transposed) {
            (1, _) => (kernel / 2, 0),
            (_, false) => ((kernel - 1) / 2, 0),
            (_, true) => {
                let op = kernel % 2;
                ((kernel + op - 2) / 2, op)
            }
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
            transposed,
            two_d,
        })
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let w = p.get(self.weight);
        let y = match (self.transposed, self.two_d) {
            (false, false) => x.conv1d(w, self.stride, self.padding)?,
            (false, true) => x.conv2d(w, self.stride, self.padding)?,
            (true, false) => {
                x.conv_transpose1d(w, self.stride, self.padding, self.output_padding)?
            }
            (true, true) => {
                x.conv_transpose2d(w, self.stride, self.padding, self.output_padding)?
            }
        };
        Ok(match self.bias {
            Some(b) => y.add_bias(p.get(b))?,
            None => y,
        })
    }
}

/// Strided convolutions, flatten, linear projection to the latent space.
#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    convs: Vec<Conv>,
    linear: Linear,
    final_gelu: bool,
    field_shape: Vec<usize>,
}

impl Encoder {
    fn new(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Self> {
        let two_d = cfg.spatial_dims == 2;
        let mut convs = Vec::with_capacity(cfg.enc_filters.len());
        let mut cin = cfg.channels;
        for (i, (&f, &k)) in cfg.enc_filters.iter().zip(&cfg.enc_kernels).enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            convs.push(Conv::new(
                init,
                &format!("encoder.conv{i}"),
                cin,
                f,
                k,
                stride,
                false,
                two_d,
                cfg.encoder_bias,
            )?);
            cin = f;
        }
        let linear = Linear::new(
            init,
            "encoder.linear",
            cfg.flat_len(),
            cfg.latent_dim,
            cfg.encoder_bias,
        )?;
        Ok(Self {
            convs,
            linear,
            final_gelu: cfg.encoder_final_gelu,
            field_shape: cfg.field_shape(),
        })
    }

    /// `[B, m, N(, N)] -> [B, latent]`
    pub(crate) fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != self.field_shape.len() + 1 || shape[1..] != self.field_shape[..] {
            return Err(ModelError::Shape(format!(
                "encoder expects [B, {:?}], got {:?}",
                self.field_shape, shape
            )));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(p, h)?.gelu()?;
        }
        let z = self.linear.forward(p, h.flatten()?)?;
        Ok(if self.final_gelu { z.gelu()? } else { z })
    }
}

/// Linear lift, reshape, transposed convolutions back to the field.
#[derive(Clone, Debug)]
pub(crate) struct Decoder {
    linear: Linear,
    first_gelu: bool,
    convs: Vec<Conv>,
    start_shape: Vec<usize>,
    latent_dim: usize,
}

impl Decoder {
    fn new(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Self> {
        let two_d = cfg.spatial_dims == 2;
        let base = cfg.bottleneck_extent();
        let spatial = base.pow(cfg.spatial_dims as u32);
        let linear = Linear::new(
            init,
            "decoder.linear",
            cfg.latent_dim,
            cfg.dec_filters[0] * spatial,
            true,
        )?;
        let d = cfg.downsamplings();
        let mut convs = Vec::with_capacity(cfg.dec_filters.len());
        for (i, (&cin, &k)) in cfg.dec_filters.iter().zip(&cfg.dec_kernels).enumerate() {
            let cout = cfg.dec_filters.get(i + 1).copied().unwrap_or(cfg.channels);
            let stride = if i < d { 2 } else { 1 };
            convs.push(Conv::new(
                init,
                &format!("decoder.tconv{i}"),
                cin,
                cout,
                k,
                stride,
                true,
                two_d,
                true,
            )?);
        }
        let mut start_shape = vec![cfg.dec_filters[0]];
        start_shape.extend(std::iter::repeat(base).take(cfg.spatial_dims));
        Ok(Self {
            linear,
            first_gelu: cfg.decoder_first_gelu,
            convs,
            start_shape,
            latent_dim: cfg.latent_dim,
        })
    }

    /// `[B, latent] -> [B, m, N(, N)]`
    pub(crate) fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let shape = z.shape();
        if shape.len() != 2 || shape[1] != self.latent_dim {
            return Err(ModelError::Shape(format!(
                "decoder expects [B, {}], got {:?}",
                self.latent_dim, shape
            )));
        }
        let mut h = self.linear.forward(p, z)?;
        if self.first_gelu {
            h = h.gelu()?;
        }
        let mut target = vec![shape[0]];
        target.extend_from_slice(&self.start_shape);
        h = h.reshape(&target)?;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(p, h)?;
            if i < last {
                h = h.gelu()?;
            }
        }
        Ok(h)
    }
}

/// Right-hand side of the latent ODE, `d eps / dt = f(eps, mu)`.
#[derive(Clone, Debug)]
pub(crate) struct Dynamics {
    film: Option<(Linear, Linear)>,
    layers: Vec<Linear>,
    latent_dim: usize,
    param_dim: usize,
}

impl Dynamics {
    fn new(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Self> {
        let (film, mut width) = match cfg.conditioning {
            Conditioning::Concat => (None, cfg.latent_dim + cfg.param_dim),
            Conditioning::Film => {
                let w_a = init.kaiming(
                    "dynamics.film_scale.weight".into(),
                    &[cfg.param_dim, cfg.latent_dim],
                    cfg.param_dim,
                )?;
                let b_a = init.filled("dynamics.film_scale.bias".into(), &[cfg.latent_dim], 1.0);
                let w_t = init.kaiming(
                    "dynamics.film_shift.weight".into(),
                    &[cfg.param_dim, cfg.latent_dim],
                    cfg.param_dim,
                )?;
                let b_t = init.filled("dynamics.film_shift.bias".into(), &[cfg.latent_dim], 0.0);
                (
                    Some((
                        Linear {
                            weight: w_a,
                            bias: Some(b_a),
                        },
                        Linear {
                            weight: w_t,
                            bias: Some(b_t),
                        },
                    )),
                    cfg.latent_dim,
                )
            }
        };
        let mut layers = Vec::with_capacity(cfg.hidden.len() + 1);
        for (i, &h) in cfg
            .hidden
            .iter()
            .chain(std::iter::once(&cfg.latent_dim))
            .enumerate()
        {
            layers.push(Linear::new(
                init,
                &format!("dynamics.linear{i}"),
                width,
                h,
                true,
            )?);
            width = h;
        }
        Ok(Self {
            film,
            layers,
            latent_dim: cfg.latent_dim,
            param_dim: cfg.param_dim,
        })
    }

    /// `eps: [B, latent]`, `mu: [B, z]` -> `[B, latent]`
    pub(crate) fn forward<'t>(&self, p: &Bound<'t>, eps: Var<'t>, mu: Var<'t>) -> Result<Var<'t>> {
        let (es, ms) = (eps.shape(), mu.shape());
        if es.len() != 2 || es[1] != self.latent_dim {
            return Err(ModelError::Shape(format!(
                "latent batch must be [B, {}], got {:?}",
                self.latent_dim, es
            )));
        }
        if ms.len() != 2 || ms[0] != es[0] || ms[1] != self.param_dim {
            return Err(ModelError::ParamDim {
                expected: self.param_dim,
                got: ms.get(1).copied().unwrap_or(0),
            });
        }
        let mut h = match &self.film {
            None if self.param_dim == 0 => eps,
            None => Var::concat(&[eps, mu], 1)?,
            Some((scale, shift)) => {
                let a = scale.forward(p, mu)?;
                let t = shift.forward(p, mu)?;
                a.mul(eps)?.add(t)?
            }
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, h)?;
            if i < last {
                h = h.gelu()?;
            }
        }
        Ok(h)
    }
}

/// The three networks registered into one store, in a fixed order.
pub(crate) fn build(
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(ParamStore, Encoder, Decoder, Dynamics)> {
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        seed,
        counter: 0,
    };
    let encoder = Encoder::new(cfg, &mut init)?;
    let dynamics = Dynamics::new(cfg, &mut init)?;
    let decoder = Decoder::new(cfg, &mut init)?;
    Ok((store, encoder, decoder, dynamics))
}
