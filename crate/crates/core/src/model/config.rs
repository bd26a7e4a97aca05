use serde::{Deserialize, Serialize};

use super::ModelError;

/// How the latent dynamics sees the PDE parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// `f([eps, mu])`, input width `latent + z`.
    Concat,
    /// `f(alpha(mu) * eps + tau(mu))` with linear `alpha`, `tau`.
    Film,
}

impl Conditioning {
    /// Concat for up to two parameters, FiLM beyond.
    pub fn default_for(param_dim: usize) -> Self {
        if param_dim <= 2 {
            Self::Concat
        } else {
            Self::Film
        }
    }
}

/// Full architecture description; embedded in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// 1 or 2.
    pub spatial_dims: usize,
    /// Grid points per spatial axis.
    pub extent: usize,
    /// Field components `m`.
    pub channels: usize,
    pub latent_dim: usize,
    /// Parameter vector length `z`.
    pub param_dim: usize,
    pub enc_filters: Vec<usize>,
    pub enc_kernels: Vec<usize>,
    pub dec_filters: Vec<usize>,
    pub dec_kernels: Vec<usize>,
    /// Hidden widths of the latent dynamics MLP.
    pub hidden: Vec<usize>,
    pub conditioning: Conditioning,
    /// Runge-Kutta stage, 1..=4.
    pub rk_stage: usize,
    /// Biases in the encoder layers.
    pub encoder_bias: bool,
    /// GELU after the encoder's final linear layer.
    pub encoder_final_gelu: bool,
    /// GELU after the decoder's first linear layer.
    pub decoder_first_gelu: bool,
    /// Rollout aborts when any latent norm exceeds this.
    pub divergence_bound: f64,
}

impl ModelConfig {
    /// Number of stride-2 encoder layers (every conv after the first).
    pub fn downsamplings(&self) -> usize {
        self.enc_filters.len().saturating_sub(1)
    }

    /// Spatial extent per axis after the last encoder conv.
    pub fn bottleneck_extent(&self) -> usize {
        self.extent >> self.downsamplings()
    }

    /// Values per field: `m * extent^dims`.
    pub fn field_len(&self) -> usize {
        self.channels * self.extent.pow(self.spatial_dims as u32)
    }

    /// Shape of one field, `[m, N]` or `[m, N, N]`.
    pub fn field_shape(&self) -> Vec<usize> {
        let mut s = vec![self.channels];
        s.extend(std::iter::repeat(self.extent).take(self.spatial_dims));
        s
    }

    /// Input width of the encoder's linear layer.
    pub fn flat_len(&self) -> usize {
        self.enc_filters.last().copied().unwrap_or(0)
            * self.bottleneck_extent().pow(self.spatial_dims as u32)
    }

    /// Per-layer `(channels, extent)` after each encoder conv.
    pub fn encoder_walk(&self) -> Vec<(usize, usize)> {
        let mut n = self.extent;
        self.enc_filters
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                if i > 0 {
                    n /= 2;
                }
                (f, n)
            })
            .collect()
    }

    /// Per-layer `(channels, extent)` after each decoder transposed conv.
    pub fn decoder_walk(&self) -> Vec<(usize, usize)> {
        let d = self.downsamplings();
        let mut n = self.bottleneck_extent();
        (0..self.dec_filters.len())
            .map(|i| {
                if i < d {
                    n *= 2;
                }
                let out = self
                    .dec_filters
                    .get(i + 1)
                    .copied()
                    .unwrap_or(self.channels);
                (out, n)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(1..=2).contains(&self.spatial_dims) {
            return bad(format!(
                "spatial_dims must be 1 or 2, got {}",
                self.spatial_dims
            ));
        }
        if self.channels == 0 || self.latent_dim == 0 {
            return bad("channels and latent_dim must be positive".into());
        }
        if self.enc_filters.is_empty() || self.enc_filters.len() != self.enc_kernels.len() {
            return bad(format!(
                "encoder needs one kernel per filter ({} filters, {} kernels)",
                self.enc_filters.len(),
                self.enc_kernels.len()
            ));
        }
        if self.dec_filters.len() != self.dec_kernels.len() {
            return bad(format!(
                "decoder needs one kernel per layer ({} filters, {} kernels)",
                self.dec_filters.len(),
                self.dec_kernels.len()
            ));
        }
        let d = self.downsamplings();
        if self.dec_filters.len() < d + 1 {
            return bad(format!(
                "decoder has {} layers but must undo {} downsamplings and map to {} channels",
                self.dec_filters.len(),
                d,
                self.channels
            ));
        }
        if self.extent == 0 || self.extent % (1 << d) != 0 {
            return bad(format!("extent {} not divisible by 2^{}", self.extent, d));
        }
        if self.enc_kernels[0] % 2 == 0 {
            return bad("first encoder layer keeps the extent and needs an odd kernel".into());
        }
        for (i, &k) in self.dec_kernels.iter().enumerate() {
            if k == 0 || (i >= d && k % 2 == 0) {
                return bad(format!(
                    "decoder stride-1 layer {} needs an odd kernel, got {}",
                    i, k
                ));
            }
        }
        if self.enc_kernels.iter().any(|&k| k == 0)
            || self
                .enc_filters
                .iter()
                .chain(&self.dec_filters)
                .any(|&f| f == 0)
        {
            return bad("filters and kernels must be positive".into());
        }
        if !(1..=4).contains(&self.rk_stage) {
            return bad(format!("rk_stage must be in 1..=4, got {}", self.rk_stage));
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound must be positive".into());
        }
        if 4 * self.latent_dim >= self.field_len() {
            log::warn!(
                "latent dimension {} is not small compared to the field size {}",
                self.latent_dim,
                self.field_len()
            );
        }
        Ok(())
    }

    /// Desk-scale 1D model: 64 points, five conv layers.
    pub fn desk_1d(latent_dim: usize, param_dim: usize) -> Self {
        Self {
            spatial_dims: 1,
            extent: 64,
            channels: 1,
            latent_dim,
            param_dim,
            enc_filters: vec![8, 16, 32, 32, 32],
            enc_kernels: vec![5, 5, 5, 5, 5],
            dec_filters: vec![32, 32, 32, 16, 8],
            dec_kernels: vec![4, 4, 4, 4, 5],
            hidden: vec![50, 50],
            conditioning: Conditioning::default_for(param_dim),
            rk_stage: 4,
            encoder_bias: true,
            encoder_final_gelu: false,
            decoder_first_gelu: false,
            divergence_bound: 1e6,
        }
    }

    /// Desk-scale 2D model: 32x32 grid.
    pub fn desk_2d(latent_dim: usize, param_dim: usize) -> Self {
        Self {
            spatial_dims: 2,
            extent: 32,
            channels: 1,
            latent_dim,
            param_dim,
            enc_filters: vec![8, 16, 16, 16],
            enc_kernels: vec![5, 3, 3, 3],
            dec_filters: vec![16, 16, 16, 8],
            dec_kernels: vec![4, 4, 4, 3],
            hidden: vec![50, 50],
            conditioning: Conditioning::default_for(param_dim),
            rk_stage: 4,
            encoder_bias: true,
            encoder_final_gelu: false,
            decoder_first_gelu: false,
            divergence_bound: 1e6,
        }
    }

    fn paper_1d(latent_dim: usize, param_dim: usize) -> Self {
        Self {
            extent: 256,
            ..Self::desk_1d(latent_dim, param_dim)
        }
    }

    /// Fixed-velocity advection, 256 points.
    pub fn paper_advection_fixed() -> Self {
        Self {
            enc_filters: vec![8, 16, 32, 64, 64, 64, 64],
            enc_kernels: vec![5; 7],
            dec_filters: vec![64, 64, 64, 64, 32, 16, 1],
            dec_kernels: vec![6, 6, 6, 6, 6, 6, 5],
            hidden: vec![50, 50],
            ..Self::paper_1d(30, 0)
        }
    }

    /// Velocity-parametric advection, 256 points.
    pub fn paper_advection_param() -> Self {
        Self {
            enc_filters: vec![8, 16, 32, 32, 32, 32, 32],
            enc_kernels: vec![5, 5, 3, 3, 3, 3, 3],
            dec_filters: vec![32, 32, 32, 32, 32, 16, 1],
            dec_kernels: vec![4, 4, 4, 4, 4, 4, 3],
            hidden: vec![200; 4],
            ..Self::paper_1d(30, 1)
        }
    }

    /// Fixed-viscosity Burgers, 256 points.
    pub fn paper_burgers_fixed() -> Self {
        Self {
            enc_filters: vec![8, 16, 32, 32, 32, 32, 32],
            enc_kernels: vec![5, 5, 3, 3, 3, 3, 3],
            dec_filters: vec![32, 32, 32, 32, 32, 16, 1, 1],
            dec_kernels: vec![4, 4, 4, 4, 4, 4, 3, 3],
            hidden: vec![200; 4],
            ..Self::paper_1d(30, 0)
        }
    }

    /// Viscosity-parametric Burgers, 256 points.
    pub fn paper_burgers_param() -> Self {
        Self {
            enc_filters: vec![8, 32, 32, 32, 32, 32, 32],
            param_dim: 1,
            conditioning: Conditioning::Concat,
            ..Self::paper_burgers_fixed()
        }
    }

    /// Five-parameter Molenkamp test on a 128x128 grid.
    pub fn paper_molenkamp() -> Self {
        Self {
            spatial_dims: 2,
            extent: 128,
            channels: 1,
            latent_dim: 50,
            param_dim: 5,
            enc_filters: vec![8, 16, 32, 32, 32, 32, 32],
            enc_kernels: vec![5, 5, 3, 3, 3, 3, 3],
            dec_filters: vec![32, 32, 32, 32, 32, 16, 1, 1],
            dec_kernels: vec![4, 4, 4, 4, 4, 4, 3, 3],
            hidden: vec![100, 100],
            conditioning: Conditioning::Film,
            rk_stage: 4,
            encoder_bias: true,
            encoder_final_gelu: true,
            decoder_first_gelu: true,
            divergence_bound: 1e6,
        }
    }

    /// Shallow-water ingestion model on a 128x128 grid.
    pub fn paper_shallow_water() -> Self {
        Self {
            latent_dim: 20,
            param_dim: 0,
            enc_filters: vec![8, 32, 32, 32, 32, 32, 32],
            hidden: vec![50, 50],
            conditioning: Conditioning::Concat,
            encoder_final_gelu: false,
            decoder_first_gelu: false,
            ..Self::paper_molenkamp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advection_preset_flat_size() {
        let c = ModelConfig::paper_advection_fixed();
        c.validate().unwrap();
        assert_eq!(c.flat_len(), 64 * (256 / 64));
        assert_eq!(c.flat_len(), 256);
        assert_eq!(c.latent_dim, 30);
    }

    #[test]
    fn decoder_mirrors_encoder_extents() {
        for c in [
            ModelConfig::paper_advection_fixed(),
            ModelConfig::paper_advection_param(),
            ModelConfig::paper_burgers_fixed(),
            ModelConfig::paper_burgers_param(),
            ModelConfig::paper_molenkamp(),
            ModelConfig::paper_shallow_water(),
            ModelConfig::desk_1d(16, 0),
            ModelConfig::desk_2d(16, 5),
        ] {
            c.validate().unwrap();
            let enc = c.encoder_walk();
            assert_eq!(enc[0].1, c.extent);
            assert_eq!(enc.last().unwrap().1, c.bottleneck_extent());
            let dec = c.decoder_walk();
            let d = c.downsamplings();
            // each stride-2 decoder layer matches the encoder extent it mirrors
            for i in 0..d {
                assert_eq!(dec[i].1, enc[d - 1 - i].1);
            }
            assert_eq!(*dec.last().unwrap(), (c.channels, c.extent));
        }
    }

    #[test]
    fn rejects_indivisible_extent() {
        let mut c = ModelConfig::desk_1d(16, 0);
        c.extent = 60;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_short_decoder() {
        let mut c = ModelConfig::desk_1d(16, 0);
        c.dec_filters.truncate(3);
        c.dec_kernels.truncate(3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_conditioning_by_param_count() {
        assert_eq!(Conditioning::default_for(0), Conditioning::Concat);
        assert_eq!(Conditioning::default_for(2), Conditioning::Concat);
        assert_eq!(Conditioning::default_for(5), Conditioning::Film);
    }
}
