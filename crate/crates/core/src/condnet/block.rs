use rand::Rng;

use super::cin::CinLayer;
use super::layers::ConvLayer;
use super::mapping::LatentCode;
use super::LEAKY_SLOPE;
use crate::autograd::{Array, Graph, ParamStore, Var};
use crate::{Error, Result};

/// Pre-activation residual block:
/// `x + conv(act(cin(conv(act(cin(x, z))), z)))`.
#[derive(Clone, Debug)]
pub struct CirBlock {
    pub norm1: CinLayer,
    pub conv1: ConvLayer,
    pub norm2: CinLayer,
    pub conv2: ConvLayer,
    /// Index of the mapping network feeding this block, if conditional.
    pub mapping: Option<usize>,
    pub channels: usize,
}

impl CirBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: usize,
        channels: usize,
        latent_dim: Option<usize>,
        mapping: Option<usize>,
    ) -> Self {
        let norm = |store: &mut ParamStore, rng: &mut _, n: &str| match latent_dim {
            Some(d) => CinLayer::conditional(store, rng, &format!("{name}.{n}"), channels, d),
            None => CinLayer::fixed(store, &format!("{name}.{n}"), channels),
        };
        let norm1 = norm(store, rng, "cin1");
        let conv1 = ConvLayer::new(
            store,
            rng,
            &format!("{name}.conv1"),
            dims,
            channels,
            channels,
            1,
            1.0,
        );
        let norm2 = norm(store, rng, "cin2");
        let conv2 = ConvLayer::new(
            store,
            rng,
            &format!("{name}.conv2"),
            dims,
            channels,
            channels,
            1,
            1.0,
        );
        CirBlock {
            norm1,
            conv1,
            norm2,
            conv2,
            mapping,
            channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, z: Option<Var>) -> Var {
        let h = self.norm1.forward(g, store, x, z);
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = self.conv1.forward(g, store, h);
        let h = self.norm2.forward(g, store, h, z);
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = self.conv2.forward(g, store, h);
        g.add(x, h)
    }

    /// Graph-free evaluation on a `[C, ...]` feature map.
    pub fn apply(
        &self,
        store: &ParamStore,
        features: &Array,
        code: Option<&LatentCode>,
    ) -> Result<Array> {
        if features.shape().len() < 2 || features.channels() != self.channels {
            return Err(Error::Config(format!(
                "block expects {} channels, got features of shape {:?}",
                self.channels,
                features.shape()
            )));
        }
        if self.norm1.is_conditional() && code.is_none() {
            return Err(Error::Config(
                "conditional block needs a latent code".into(),
            ));
        }
        let mut g = Graph::inference();
        let x = g.constant(features.clone());
        let z = code.map(|c| g.constant(Array::new(vec![c.dim()], c.0.clone())));
        let y = self.forward(&mut g, store, x, z);
        Ok(g.value(y).clone())
    }

    /// Zeroes both convolutions, turning the block into the identity.
    pub fn zero_convolutions(&self, store: &mut ParamStore) {
        for conv in [&self.conv1, &self.conv2] {
            store.get_mut(conv.weight).data_mut().fill(0.0);
            store.get_mut(conv.bias).data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condnet::MappingNetwork;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, CirBlock, MappingNetwork, Array) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = MappingNetwork::new(&mut store, &mut rng, "map", 4, 64);
        let block = CirBlock::new(&mut store, &mut rng, "blk", 2, 28, Some(64), Some(0));
        let x = Array::new(
            vec![28, 6, 5],
            (0..28 * 30)
                .map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0)
                .collect(),
        );
        (store, block, map, x)
    }

    #[test]
    fn zero_weights_give_identity() {
        let (mut store, block, map, x) = setup();
        block.zero_convolutions(&mut store);
        let z = map.map_latent(&store, 0.4).unwrap();
        let y = block.apply(&store, &x, Some(&z)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn shape_is_preserved_and_lambda_matters() {
        let (store, block, map, x) = setup();
        let z0 = map.map_latent(&store, 0.0).unwrap();
        let z1 = map.map_latent(&store, 1.0).unwrap();
        let y0 = block.apply(&store, &x, Some(&z0)).unwrap();
        let y1 = block.apply(&store, &x, Some(&z1)).unwrap();
        assert_eq!(y0.shape(), x.shape());
        let diff: f64 = y0
            .data()
            .iter()
            .zip(y1.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let (store, block, map, _) = setup();
        let z = map.map_latent(&store, 0.5).unwrap();
        let bad = Array::zeros(vec![3, 4, 4]);
        assert!(matches!(
            block.apply(&store, &bad, Some(&z)),
            Err(Error::Config(_))
        ));
    }
}
