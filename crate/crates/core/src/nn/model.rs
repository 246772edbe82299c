//! The image-to-relative-pose quantile regressor.
//!
//! Pipeline: average-pool the slice to a small grid, a four-layer strided
//! conv stem, a class embedding reshaped to one extra feature plane,
//! a mixing conv, four stages of SS-Conv-SSM blocks joined by patch merging,
//! and two linear heads emitting three quantiles per axis.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    silu, silu_backward, BlockCache, Conv2d, LayerNorm, LayerNormCache, Linear, Map, Param,
    PatchMerge, PatchMergeCache, SsConvSsmBlock,
};
use crate::fan::SliceImage;
use crate::phantom::ViewClass;
use crate::se3::Pose;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stage_depths: [usize; 4],
    pub stage_dims: [usize; 4],
    /// Widths of the two stem resolutions.
    pub stem_channels: [usize; 2],
    pub state_dim: usize,
    pub input_size: usize,
    /// Side of the average-pooled grid fed to the stem.
    pub pooled_size: usize,
    pub quantiles: [f64; 3],
    /// Weight of the orientation loss.
    pub lambda: f64,
    /// Output scale of the position head (mm per unit).
    pub position_scale: f64,
    /// Output scale of the orientation head (rad per unit).
    pub orientation_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_depths: [2, 2, 4, 2],
            stage_dims: [16, 32, 48, 64],
            stem_channels: [8, 16],
            state_dim: 8,
            input_size: 224,
            pooled_size: 32,
            quantiles: [0.02, 0.5, 0.98],
            lambda: 10.0,
            position_scale: 30.0,
            orientation_scale: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let q = &self.quantiles;
        if !(q[0] > 0.0 && q[0] < q[1] && q[1] < q[2] && q[2] < 1.0) {
            return Err(ModelError::InvalidConfig(
                "quantile levels must be strictly increasing in (0, 1)",
            ));
        }
        if self.pooled_size == 0 || !self.input_size.is_multiple_of(self.pooled_size) {
            return Err(ModelError::InvalidConfig(
                "input_size must be a multiple of pooled_size",
            ));
        }
        if !self.pooled_size.is_multiple_of(32) {
            return Err(ModelError::InvalidConfig(
                "pooled_size must be a multiple of 32",
            ));
        }
        if self.stage_depths.contains(&0) {
            return Err(ModelError::InvalidConfig("stage depths must be positive"));
        }
        if self.stage_dims.iter().any(|d| *d < 2 || d % 2 != 0) || self.stem_channels.contains(&0) {
            return Err(ModelError::InvalidConfig(
                "stage widths must be positive and even",
            ));
        }
        if self.state_dim == 0
            || !(self.lambda >= 0.0)
            || !(self.position_scale > 0.0)
            || !(self.orientation_scale > 0.0)
        {
            return Err(ModelError::InvalidConfig(
                "state_dim, lambda and output scales must be positive",
            ));
        }
        Ok(())
    }

    /// Side of the feature map entering stage 1.
    pub fn stem_size(&self) -> usize {
        self.pooled_size / 4
    }
}

/// Relative pose label: position (mm) and rotation vector (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLabel {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
}

impl PoseLabel {
    pub fn from_pose(p: &Pose) -> Self {
        Self {
            position: [p.position[0], p.position[1], p.position[2]],
            orientation: [p.orientation[0], p.orientation[1], p.orientation[2]],
        }
    }

    pub fn to_pose(&self) -> Pose {
        Pose::from_array(&[
            self.position[0],
            self.position[1],
            self.position[2],
            self.orientation[0],
            self.orientation[1],
            self.orientation[2],
        ])
    }
}

/// Three quantiles (0.02, 0.50, 0.98) per axis, ascending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePrediction {
    /// `[axis][quantile]`, mm.
    pub position: [[f64; 3]; 3],
    /// `[axis][quantile]`, rotation-vector components in rad.
    pub orientation: [[f64; 3]; 3],
}

impl QuantilePrediction {
    /// Prediction with every quantile equal to `pose`, widened by symmetric margins.
    pub fn from_pose(pose: &Pose, position_margin: f64, orientation_margin: f64) -> Self {
        let mut out = Self {
            position: [[0.0; 3]; 3],
            orientation: [[0.0; 3]; 3],
        };
        for a in 0..3 {
            out.position[a] = [
                pose.position[a] - position_margin,
                pose.position[a],
                pose.position[a] + position_margin,
            ];
            out.orientation[a] = [
                pose.orientation[a] - orientation_margin,
                pose.orientation[a],
                pose.orientation[a] + orientation_margin,
            ];
        }
        out
    }

    /// Pose assembled from quantile `q` (0, 1, 2) of every axis.
    pub fn quantile_pose(&self, q: usize) -> Pose {
        Pose::from_array(&[
            self.position[0][q],
            self.position[1][q],
            self.position[2][q],
            self.orientation[0][q],
            self.orientation[1][q],
            self.orientation[2][q],
        ])
    }

    pub fn median(&self) -> Pose {
        self.quantile_pose(1)
    }

    pub fn is_sorted(&self) -> bool {
        self.position
            .iter()
            .chain(self.orientation.iter())
            .all(|t| t[0] <= t[1] && t[1] <= t[2])
    }

    pub fn to_flat(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for a in 0..3 {
            for q in 0..3 {
                out[a * 3 + q] = self.position[a][q];
                out[9 + a * 3 + q] = self.orientation[a][q];
            }
        }
        out
    }

    pub fn from_flat(v: &[f64; 18]) -> Self {
        let mut out = Self {
            position: [[0.0; 3]; 3],
            orientation: [[0.0; 3]; 3],
        };
        for a in 0..3 {
            for q in 0..3 {
                out.position[a][q] = v[a * 3 + q];
                out.orientation[a][q] = v[9 + a * 3 + q];
            }
        }
        out
    }
}

/// Average-pools a slice to `pooled × pooled` and centres the intensities.
pub fn pool_image(image: &SliceImage, config: &ModelConfig) -> Result<Vec<f64>, ModelError> {
    let n = config.input_size;
    if image.width as usize != n || image.height as usize != n {
        return Err(ModelError::ShapeMismatch {
            expected: "square slice of input_size pixels",
            got: (image.width * image.height) as usize,
        });
    }
    let p = config.pooled_size;
    let f = n / p;
    let mut out = vec![0.0; p * p];
    for i in 0..n {
        for j in 0..n {
            out[(i / f) * p + j / f] += f64::from(image.intensity[i * n + j]);
        }
    }
    let norm = 1.0 / (f * f) as f64;
    for v in out.iter_mut() {
        *v = (*v * norm - 0.2) / 0.15;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRegressor {
    pub config: ModelConfig,
    stem: [Conv2d; 4],
    class_embed: Linear,
    mix: Conv2d,
    stages: Vec<Vec<SsConvSsmBlock>>,
    merges: Vec<PatchMerge>,
    head_norm: LayerNorm,
    position_head: Linear,
    orientation_head: Linear,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stem_in: [Map; 4],
    stem_pre: [Map; 4],
    class_onehot: [f64; 7],
    mix_in: Map,
    block_caches: Vec<Vec<BlockCache>>,
    merge_in: Vec<Map>,
    merge_caches: Vec<PatchMergeCache>,
    head_norm: LayerNormCache,
    head_shape: (usize, usize),
    feature: Vec<f64>,
    /// For each of the 6 (head, axis) groups, output slot → raw index.
    order: [[usize; 3]; 6],
}

impl PoseRegressor {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let [c1, c2] = config.stem_channels;
        let stem = [
            Conv2d::new("stem.0", 1, c1, 3, 2, &mut rng),
            Conv2d::new("stem.1", c1, c1, 3, 1, &mut rng),
            Conv2d::new("stem.2", c1, c2, 3, 2, &mut rng),
            Conv2d::new("stem.3", c2, c2, 3, 1, &mut rng),
        ];
        let side = config.stem_size();
        let class_embed = Linear::new("class_embed", 7, side * side, &mut rng);
        let dims = config.stage_dims;
        let mix = Conv2d::new("mix", c2 + 1, dims[0], 3, 1, &mut rng);
        let stages = (0..4)
            .map(|s| {
                (0..config.stage_depths[s])
                    .map(|b| {
                        SsConvSsmBlock::new(
                            &alloc::format!("stage{s}.block{b}"),
                            dims[s],
                            config.state_dim,
                            &mut rng,
                        )
                    })
                    .collect()
            })
            .collect();
        let merges = (0..3)
            .map(|s| PatchMerge::new(&alloc::format!("merge{s}"), dims[s], dims[s + 1], &mut rng))
            .collect();
        let mut position_head = Linear::new("position_head", dims[3], 9, &mut rng);
        let mut orientation_head = Linear::new("orientation_head", dims[3], 9, &mut rng);
        for head in [&mut position_head, &mut orientation_head] {
            head.weight.value.iter_mut().for_each(|w| *w *= 0.1);
        }
        Ok(Self {
            head_norm: LayerNorm::new("head_norm", dims[3]),
            config,
            stem,
            class_embed,
            mix,
            stages,
            merges,
            position_head,
            orientation_head,
        })
    }

    pub fn forward(
        &self,
        image: &SliceImage,
        target: ViewClass,
    ) -> Result<QuantilePrediction, ModelError> {
        let pooled = pool_image(image, &self.config)?;
        Ok(self.forward_pooled(&pooled, target).0)
    }

    pub fn forward_pooled(
        &self,
        pooled: &[f64],
        target: ViewClass,
    ) -> (QuantilePrediction, ForwardCache) {
        let p = self.config.pooled_size;
        debug_assert_eq!(pooled.len(), p * p);
        let mut x = Map {
            h: p,
            w: p,
            c: 1,
            data: pooled.to_vec(),
        };
        let mut stem_in: [Map; 4] = core::array::from_fn(|_| Map::zeros(0, 0, 0));
        let mut stem_pre: [Map; 4] = core::array::from_fn(|_| Map::zeros(0, 0, 0));
        for (i, conv) in self.stem.iter().enumerate() {
            let pre = conv.forward(&x);
            stem_in[i] = core::mem::replace(&mut x, silu(&pre));
            stem_pre[i] = pre;
        }
        let mut class_onehot = [0.0; 7];
        class_onehot[target.index()] = 1.0;
        let side = self.config.stem_size();
        let mut embed = Map::zeros(side, side, 1);
        self.class_embed.forward_vec(&class_onehot, &mut embed.data);
        let mix_in = Map::concat(&x, &embed);
        let mut x = self.mix.forward(&mix_in);

        let mut block_caches = Vec::with_capacity(4);
        let mut merge_in = Vec::with_capacity(3);
        let mut merge_caches = Vec::with_capacity(3);
        for (s, stage) in self.stages.iter().enumerate() {
            let mut caches = Vec::with_capacity(stage.len());
            for block in stage {
                let (y, cache) = block.forward(&x);
                caches.push(cache);
                x = y;
            }
            block_caches.push(caches);
            if s < 3 {
                let (y, cache) = self.merges[s].forward(&x);
                merge_in.push(core::mem::replace(&mut x, y));
                merge_caches.push(cache);
            }
        }
        let (normed, head_norm) = self.head_norm.forward(&x);
        let positions = normed.positions();
        let c = normed.c;
        let mut feature = vec![0.0; c];
        for pos in 0..positions {
            for (f, v) in feature.iter_mut().zip(&normed.data[pos * c..(pos + 1) * c]) {
                *f += v / positions as f64;
            }
        }
        let mut raw = [0.0; 18];
        self.position_head.forward_vec(&feature, &mut raw[..9]);
        self.orientation_head.forward_vec(&feature, &mut raw[9..]);
        for (i, r) in raw.iter_mut().enumerate() {
            *r *= if i < 9 {
                self.config.position_scale
            } else {
                self.config.orientation_scale
            };
        }
        let mut order = [[0usize; 3]; 6];
        let mut flat = [0.0; 18];
        for (g, slot) in order.iter_mut().enumerate() {
            let mut idx = [g * 3, g * 3 + 1, g * 3 + 2];
            idx.sort_by(|a, b| raw[*a].total_cmp(&raw[*b]));
            for (k, i) in idx.iter().enumerate() {
                flat[g * 3 + k] = raw[*i];
            }
            *slot = idx;
        }
        let prediction = QuantilePrediction::from_flat(&flat);
        debug_assert!(prediction.is_sorted());
        let cache = ForwardCache {
            stem_in,
            stem_pre,
            class_onehot,
            mix_in,
            block_caches,
            merge_in,
            merge_caches,
            head_norm,
            head_shape: (normed.h, normed.w),
            feature,
            order,
        };
        (prediction, cache)
    }

    /// Accumulates parameter gradients for d(loss)/d(prediction) = `grad`.
    pub fn backward(&mut self, cache: &ForwardCache, grad: &[f64; 18]) {
        let mut graw = [0.0; 18];
        for (g, idx) in cache.order.iter().enumerate() {
            for (k, i) in idx.iter().enumerate() {
                graw[*i] += grad[g * 3 + k];
            }
        }
        for (i, v) in graw.iter_mut().enumerate() {
            *v *= if i < 9 {
                self.config.position_scale
            } else {
                self.config.orientation_scale
            };
        }
        let c = cache.feature.len();
        let mut gfeature = vec![0.0; c];
        self.position_head
            .backward_vec(&cache.feature, &graw[..9], &mut gfeature);
        self.orientation_head
            .backward_vec(&cache.feature, &graw[9..], &mut gfeature);
        let (h, w) = cache.head_shape;
        let positions = h * w;
        let mut gnormed = Map::zeros(h, w, c);
        for pos in 0..positions {
            for (g, f) in gnormed.data[pos * c..(pos + 1) * c]
                .iter_mut()
                .zip(&gfeature)
            {
                *g = f / positions as f64;
            }
        }
        let mut gx = self.head_norm.backward(&cache.head_norm, &gnormed);
        for s in (0..4).rev() {
            if s < 3 {
                gx = self.merges[s].backward(&cache.merge_in[s], &cache.merge_caches[s], &gx);
            }
            for (block, bc) in self.stages[s].iter_mut().zip(&cache.block_caches[s]).rev() {
                gx = block.backward(bc, &gx);
            }
        }
        let gmix_in = self.mix.backward(&cache.mix_in, &gx);
        let c2 = self.config.stem_channels[1];
        let g_stem_out = gmix_in.channels(0, c2);
        let g_embed = gmix_in.channels(c2, c2 + 1);
        let mut sink = [0.0; 7];
        self.class_embed
            .backward_vec(&cache.class_onehot, &g_embed.data, &mut sink);
        let mut g = g_stem_out;
        for i in (0..4).rev() {
            let gpre = silu_backward(&cache.stem_pre[i], &g);
            g = self.stem[i].backward(&cache.stem_in[i], &gpre);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        for conv in self.stem.iter_mut() {
            v.extend(conv.params_mut());
        }
        v.extend(self.class_embed.params_mut());
        v.extend(self.mix.params_mut());
        let mut merges = self.merges.iter_mut();
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                v.extend(block.params_mut());
            }
            if let Some(m) = merges.next() {
                v.extend(m.params_mut());
            }
        }
        v.extend(self.head_norm.params_mut());
        v.extend(self.position_head.params_mut());
        v.extend(self.orientation_head.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        for conv in self.stem.iter() {
            v.extend(conv.params());
        }
        v.extend(self.class_embed.params());
        v.extend(self.mix.params());
        for (s, stage) in self.stages.iter().enumerate() {
            for block in stage.iter() {
                v.extend(block.params());
            }
            if s < 3 {
                v.extend(self.merges[s].params());
            }
        }
        v.extend(self.head_norm.params());
        v.extend(self.position_head.params());
        v.extend(self.orientation_head.params());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Overwrites parameters by name; every parameter must be supplied with
    /// its exact element count.
    pub fn load_parameters<'a>(
        &mut self,
        mut lookup: impl FnMut(&str) -> Option<&'a [f64]>,
    ) -> Result<(), ModelError> {
        for p in self.params_mut() {
            let values =
                lookup(&p.name).ok_or_else(|| ModelError::MissingParameter(p.name.clone()))?;
            if values.len() != p.value.len() {
                return Err(ModelError::ShapeMismatch {
                    expected: "parameter element count",
                    got: values.len(),
                });
            }
            p.value.copy_from_slice(values);
        }
        Ok(())
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.params().iter().map(|p| p.name.clone()).collect()
    }
}
