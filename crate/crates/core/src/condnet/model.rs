use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::CirBlock;
use super::cin::CinLayer;
use super::config::{Conditioning, ModelConfig};
use super::layers::{ConvLayer, ConvTransposeLayer};
use super::mapping::{LatentCode, MappingNetwork};
use super::LEAKY_SLOPE;
use crate::autograd::{Array, Graph, ParamStore, Var};
use crate::grid::{image_pyramid, same_grid, DisplacementField, Image};
use crate::{Error, Result};

/// One pyramid level: encoder, residual blocks, decoder.
#[derive(Clone, Debug)]
pub struct LevelNet {
    pub enc1: ConvLayer,
    pub enc2: ConvLayer,
    pub blocks: Vec<CirBlock>,
    pub up: ConvTransposeLayer,
    pub out: ConvLayer,
}

/// Multi-level registration network in one of the four conditioning variants.
#[derive(Debug)]
pub struct RegistrationModel {
    config: ModelConfig,
    params: ParamStore,
    mappings: Vec<MappingNetwork>,
    levels: Vec<LevelNet>,
    forward_passes: AtomicUsize,
}

impl Clone for RegistrationModel {
    fn clone(&self) -> Self {
        RegistrationModel {
            config: self.config.clone(),
            params: self.params.clone(),
            mappings: self.mappings.clone(),
            levels: self.levels.clone(),
            forward_passes: AtomicUsize::new(self.forward_passes()),
        }
    }
}

/// Parameter counts by role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub total: usize,
    /// Convolutions shared by every variant.
    pub trunk: usize,
    /// Lambda-independent normalization scales and shifts.
    pub static_affine: usize,
    /// Everything that exists only to feed lambda into the network.
    pub conditioning: usize,
    pub mapping_networks: usize,
    pub input_channels: usize,
    /// Size a hypernetwork would need to emit every trunk weight from a
    /// latent code of the same width (a single linear output layer).
    pub hypernetwork_estimate: usize,
}

/// Graph handles of one forward pass.
pub struct ForwardPass {
    /// Displacement field at every computed level, coarsest first.
    pub fields: Vec<Var>,
    /// Fixed and moving images at every computed level, coarsest first.
    pub fixed: Vec<Image>,
    pub moving: Vec<Image>,
}

/// Builds a freshly initialized model.
pub fn build_variant(config: ModelConfig) -> Result<RegistrationModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut store = ParamStore::new();
    let c = config.conv_filters;
    let d = config.dims;
    let mut mappings = Vec::new();
    if config.conditioning == Conditioning::CirCm {
        mappings.push(MappingNetwork::new(
            &mut store,
            &mut rng,
            "mapping.central",
            config.central_mapping_layers,
            config.central_latent_dim,
        ));
    }
    let in_ch = if config.conditioning == Conditioning::Concat {
        3
    } else {
        2
    };
    let mut levels = Vec::with_capacity(config.levels);
    for l in 0..config.levels {
        let name = format!("level{}", l + 1);
        let enc1 = ConvLayer::new(
            &mut store,
            &mut rng,
            &format!("{name}.enc1"),
            d,
            in_ch,
            c,
            2,
            1.0,
        );
        let enc2 = ConvLayer::new(
            &mut store,
            &mut rng,
            &format!("{name}.enc2"),
            d,
            c,
            c,
            2,
            1.0,
        );
        let mut blocks = Vec::with_capacity(config.blocks_per_level);
        for b in 0..config.blocks_per_level {
            let (latent, mapping) = match config.conditioning {
                Conditioning::CirDm => {
                    mappings.push(MappingNetwork::new(
                        &mut store,
                        &mut rng,
                        &format!("mapping.{}.{}", l + 1, b + 1),
                        config.mapping_layers,
                        config.latent_dim,
                    ));
                    (Some(config.latent_dim), Some(mappings.len() - 1))
                }
                Conditioning::CirCm => (Some(config.central_latent_dim), Some(0)),
                Conditioning::Concat | Conditioning::Fixed => (None, None),
            };
            blocks.push(CirBlock::new(
                &mut store,
                &mut rng,
                &format!("{name}.block{}", b + 1),
                d,
                c,
                latent,
                mapping,
            ));
        }
        let up = ConvTransposeLayer::new(&mut store, &mut rng, &format!("{name}.up"), d, c, c);
        let out = ConvLayer::new(
            &mut store,
            &mut rng,
            &format!("{name}.out"),
            d,
            c,
            d,
            1,
            0.1,
        );
        levels.push(LevelNet {
            enc1,
            enc2,
            blocks,
            up,
            out,
        });
    }
    Ok(RegistrationModel {
        config,
        params: store,
        mappings,
        levels,
        forward_passes: AtomicUsize::new(0),
    })
}

impl RegistrationModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mappings(&self) -> &[MappingNetwork] {
        &self.mappings
    }

    pub fn levels(&self) -> &[LevelNet] {
        &self.levels
    }

    pub fn blocks(&self) -> impl Iterator<Item = &CirBlock> {
        self.levels.iter().flat_map(|l| l.blocks.iter())
    }

    /// Every normalization layer together with the block that owns it.
    pub fn cin_layers(&self) -> impl Iterator<Item = (&CirBlock, &CinLayer)> {
        self.blocks().flat_map(|b| [(b, &b.norm1), (b, &b.norm2)])
    }

    pub fn input_channels(&self) -> usize {
        if self.config.conditioning == Conditioning::Concat {
            3
        } else {
            2
        }
    }

    /// Number of completed forward passes (training and inference).
    pub fn forward_passes(&self) -> usize {
        self.forward_passes.load(Ordering::Relaxed)
    }

    /// Latent code consumed by `block` for a normalized lambda.
    pub fn block_code(&self, block: &CirBlock, lambda_norm: f64) -> Result<Option<LatentCode>> {
        block
            .mapping
            .map(|m| self.mappings[m].map_latent(&self.params, lambda_norm))
            .transpose()
    }

    pub fn parameter_report(&self) -> ParameterReport {
        let p = &self.params;
        let mut report = ParameterReport {
            total: p.numel(),
            trunk: 0,
            static_affine: 0,
            conditioning: 0,
            mapping_networks: self.mappings.len(),
            input_channels: self.input_channels(),
            hypernetwork_estimate: 0,
        };
        for id in p.ids() {
            let name = p.name(id);
            let n = p.get(id).len();
            if name.starts_with("mapping.") || name.contains(".head.") {
                report.conditioning += n;
            } else if name.ends_with(".gamma") || name.ends_with(".beta") {
                report.static_affine += n;
            } else {
                report.trunk += n;
            }
        }
        if self.config.conditioning == Conditioning::Concat {
            // weights reading the lambda channel of every first encoder conv
            let lambda_weights =
                self.levels.len() * self.config.conv_filters * 3usize.pow(self.config.dims as u32);
            report.trunk -= lambda_weights;
            report.conditioning += lambda_weights;
        }
        report.hypernetwork_estimate = report.trunk * (self.config.latent_dim + 1);
        report
    }

    fn validate_inputs(&self, fixed: &Image, moving: &Image, lambda_norm: f64) -> Result<()> {
        same_grid(fixed.shape(), moving.shape(), "registration inputs")?;
        if fixed.shape().ndim() != self.config.dims {
            return Err(Error::Shape(format!(
                "model is {}D, images are {}D",
                self.config.dims,
                fixed.shape().ndim()
            )));
        }
        let m = self.config.size_multiple();
        if fixed.shape().dims().iter().any(|d| d % m != 0) {
            return Err(Error::Shape(format!(
                "every axis of {:?} must be divisible by {m}",
                fixed.shape().dims()
            )));
        }
        if !(0.0..=1.0).contains(&lambda_norm) {
            return Err(Error::Range(format!(
                "normalized lambda {lambda_norm} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Records levels `1..=upto` (coarse to fine) into `g`.
    pub fn forward(
        &self,
        g: &mut Graph,
        fixed: &Image,
        moving: &Image,
        lambda_norm: f64,
        upto: usize,
    ) -> Result<ForwardPass> {
        self.validate_inputs(fixed, moving, lambda_norm)?;
        let big_l = self.config.levels;
        if upto == 0 || upto > big_l {
            return Err(Error::Config(format!("level {upto} not in 1..={big_l}")));
        }
        let fpyr = image_pyramid(fixed, big_l)?;
        let mpyr = image_pyramid(moving, big_l)?;
        let store = &self.params;

        let lambda = g.constant(Array::new(vec![1], vec![lambda_norm]));
        let codes: Vec<Var> = match self.config.conditioning {
            Conditioning::CirDm | Conditioning::CirCm => self
                .mappings
                .iter()
                .map(|m| m.forward(g, store, lambda))
                .collect(),
            _ => Vec::new(),
        };

        let mut fields: Vec<Var> = Vec::with_capacity(upto);
        for (li, level) in self.levels.iter().take(upto).enumerate() {
            let f_img = &fpyr[li];
            let m_img = &mpyr[li];
            let mut shape = vec![1];
            shape.extend(f_img.shape().dims());
            let f_var = g.constant(Array::new(shape.clone(), f_img.data().to_vec()));
            let m_var = g.constant(Array::new(shape.clone(), m_img.data().to_vec()));
            let prev = match fields.last() {
                Some(&coarse) => {
                    let up = g.upsample2(coarse);
                    Some(g.scale(up, 2.0))
                }
                None => None,
            };
            let warped = match prev {
                Some(p) => g.warp(m_var, p),
                None => m_var,
            };
            let mut inputs = vec![f_var, warped];
            if self.config.conditioning == Conditioning::Concat {
                let n = f_img.shape().len();
                inputs.push(g.constant(Array::new(shape, vec![lambda_norm; n])));
            }
            let x = g.concat(&inputs);
            let h = level.enc1.forward(g, store, x);
            let h = g.leaky_relu(h, LEAKY_SLOPE);
            let h = level.enc2.forward(g, store, h);
            let mut h = g.leaky_relu(h, LEAKY_SLOPE);
            for block in &level.blocks {
                let z = block.mapping.map(|m| codes[m]);
                h = block.forward(g, store, h, z);
            }
            let h = level.up.forward(g, store, h);
            let h = g.leaky_relu(h, LEAKY_SLOPE);
            let half = level.out.forward(g, store, h);
            let up = g.upsample2(half);
            let residual = g.scale(up, 2.0);
            fields.push(match prev {
                Some(p) => g.add(p, residual),
                None => residual,
            });
        }
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        Ok(ForwardPass {
            fields,
            fixed: fpyr.into_iter().take(upto).collect(),
            moving: mpyr.into_iter().take(upto).collect(),
        })
    }

    /// Finest-level displacement field for a normalized lambda (inference).
    pub fn register(
        &self,
        fixed: &Image,
        moving: &Image,
        lambda_norm: f64,
    ) -> Result<DisplacementField> {
        Ok(self
            .register_levels(fixed, moving, lambda_norm)?
            .pop()
            .expect("at least one level"))
    }

    /// Fields of every level, coarsest first.
    pub fn register_levels(
        &self,
        fixed: &Image,
        moving: &Image,
        lambda_norm: f64,
    ) -> Result<Vec<DisplacementField>> {
        let mut g = Graph::inference();
        let pass = self.forward(&mut g, fixed, moving, lambda_norm, self.config.levels)?;
        pass.fields
            .iter()
            .zip(&pass.fixed)
            .map(|(&v, im)| {
                DisplacementField::new(im.shape().clone(), g.value(v).data().to_vec())
                    .and_then(|f| f.with_spacing(im.spacing().to_vec()))
            })
            .collect()
    }

    /// Same as [`register`](Self::register) with a raw (unnormalized) lambda.
    pub fn register_raw(
        &self,
        fixed: &Image,
        moving: &Image,
        lambda: f64,
    ) -> Result<DisplacementField> {
        let norm = self.config.normalize_lambda(lambda)?;
        self.register(fixed, moving, norm)
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut fresh = build_variant(config)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for id in fresh.params.ids() {
            let (name, want) = (fresh.params.name(id), fresh.params.get(id).shape());
            let got = params.get(id);
            if params.name(id) != name || got.shape() != want {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}; expected {name} with shape {want:?}",
                    params.name(id),
                    got.shape()
                )));
            }
        }
        fresh.params = params;
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn small(conditioning: Conditioning) -> ModelConfig {
        ModelConfig {
            levels: 2,
            blocks_per_level: 2,
            conv_filters: 8,
            latent_dim: 16,
            central_latent_dim: 32,
            dims: 2,
            conditioning,
            fixed_lambda: (conditioning == Conditioning::Fixed).then_some(1.0),
            ..ModelConfig::default()
        }
    }

    fn pair(n: usize) -> (Image, Image) {
        let s = GridShape::new(vec![n, n]).unwrap();
        let f = Image::from_fn(s.clone(), |i| {
            (i[0] as f64 * 0.4).sin() + (i[1] as f64 * 0.3).cos()
        })
        .unwrap();
        let m = Image::from_fn(s, |i| {
            (i[0] as f64 * 0.4 + 0.3).sin() + (i[1] as f64 * 0.3).cos()
        })
        .unwrap();
        (f, m)
    }

    #[test]
    fn output_is_a_field_on_the_fixed_grid() {
        let model = build_variant(small(Conditioning::CirDm)).unwrap();
        let (f, m) = pair(16);
        let u = model.register(&f, &m, 0.5).unwrap();
        assert_eq!(u.shape(), f.shape());
        assert_eq!(u.components(), 2);
        assert_eq!(model.forward_passes(), 1);
    }

    #[test]
    fn mapping_network_counts() {
        let dm = build_variant(small(Conditioning::CirDm)).unwrap();
        assert_eq!(dm.mappings().len(), 2 * 2);
        let cm = build_variant(small(Conditioning::CirCm)).unwrap();
        assert_eq!(cm.mappings().len(), 1);
        assert_eq!(cm.mappings()[0].layers.len(), 8);
        assert_eq!(cm.mappings()[0].latent_dim(), 32);
    }

    #[test]
    fn fixed_variant_has_no_conditioning_parameters() {
        let fixed = build_variant(small(Conditioning::Fixed))
            .unwrap()
            .parameter_report();
        assert_eq!(fixed.conditioning, 0);
        assert_eq!(fixed.input_channels, 2);
        let concat = build_variant(small(Conditioning::Concat))
            .unwrap()
            .parameter_report();
        assert_eq!(concat.input_channels, 3);
        assert_eq!(concat.trunk, fixed.trunk);
        let dm = build_variant(small(Conditioning::CirDm))
            .unwrap()
            .parameter_report();
        assert_eq!(dm.trunk, fixed.trunk);
        assert!(concat.conditioning < dm.conditioning);
        assert!(dm.conditioning < dm.hypernetwork_estimate);
    }

    #[test]
    fn indivisible_and_out_of_range_inputs() {
        let model = build_variant(small(Conditioning::CirDm)).unwrap();
        let (f, m) = pair(12);
        assert!(matches!(model.register(&f, &m, 0.5), Err(Error::Shape(_))));
        let (f, m) = pair(16);
        assert!(matches!(model.register(&f, &m, 1.2), Err(Error::Range(_))));
    }

    #[test]
    fn unknown_variant_in_config_json_is_rejected() {
        let mut v = serde_json::to_value(small(Conditioning::CirDm)).unwrap();
        v["conditioning"] = "hyper".into();
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }
}
