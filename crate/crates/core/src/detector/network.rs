use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DetectorConfig, DetectorError, FusionMode, Result};
use crate::fusion::FeatureReducer;
use crate::geometry::{VoxelGridConfig, VoxelIndex};
use crate::neural::{
    cast, group_max, group_max_backward, join, load_checkpoint, save_checkpoint, Conv, ConvBnRelu, ConvBnReluCache,
    ConvCache, ConvKind, FcnCache, FcnLayer, FeatureStackCache, Mode, Module, Param, PointGroups, Real, Tensor,
    VfeCache, VfeLayer,
};

/// Network input for one scene: non-empty voxels, their decorated points
/// grouped by voxel, and the image vectors the fusion mode calls for.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneInput {
    pub voxels: Vec<VoxelIndex>,
    /// Points per voxel, in `voxels` order.
    pub counts: Vec<usize>,
    pub points: Vec<[f64; 7]>,
    /// `(N, d)` per-point image vectors (feature samples or raw patches).
    pub point_image: Option<Vec<f64>>,
    /// `(K, C)` ROI-pooled image features.
    pub voxel_image: Option<Vec<f64>>,
}

/// Raw head outputs on the anchor lattice: `(Y, rows, cols)` score logits
/// and `(7·Y, rows, cols)` residuals, `Y` being the number of anchor yaws.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput<T> {
    pub score_logits: Tensor<T>,
    pub regression: Tensor<T>,
}

impl<T: Real> NetworkOutput<T> {
    fn dims(&self) -> (usize, usize, usize) {
        let s = self.score_logits.shape();
        (s[0], s[1], s[2])
    }

    pub fn anchor_count(&self) -> usize {
        self.score_logits.len()
    }

    /// Score logit of anchor `i` in row-major, yaw-minor order.
    pub fn logit(&self, i: usize) -> f64 {
        let (y, rows, cols) = self.dims();
        let (cell, k) = (i / y, i % y);
        self.score_logits.data[k * rows * cols + cell].to_f64().expect("finite")
    }

    pub fn score(&self, i: usize) -> f64 {
        sigmoid(self.logit(i))
    }

    pub fn residuals(&self, i: usize) -> [f64; 7] {
        let (y, rows, cols) = self.dims();
        let (cell, k) = (i / y, i % y);
        let plane = rows * cols;
        std::array::from_fn(|j| self.regression.data[(k * 7 + j) * plane + cell].to_f64().expect("finite"))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    cells: Vec<[usize; 3]>,
    rows: usize,
    point_reducer: Option<FeatureStackCache<T>>,
    vfe: Vec<VfeCache<T>>,
    vfe_out: Option<(FcnCache<T>, Vec<usize>)>,
    voxel_reducer: Option<FeatureStackCache<T>>,
    middle: Vec<ConvBnReluCache<T>>,
    folded_shape: Vec<usize>,
    blocks: Vec<Vec<ConvBnReluCache<T>>>,
    upsample: Vec<ConvBnReluCache<T>>,
    up_channels: Vec<usize>,
    score_head: ConvCache<T>,
    reg_head: ConvCache<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Which side of every ReLU and max each unit fell on. Two forward
    /// passes with equal patterns ran through the same linear pieces.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in self.point_reducer.iter().flatten() {
            c.activation_pattern(&mut out);
        }
        for c in &self.vfe {
            c.activation_pattern(&mut out);
        }
        if let Some((c, argmax)) = &self.vfe_out {
            c.activation_pattern(&mut out);
            out.extend_from_slice(argmax);
        }
        for c in self.voxel_reducer.iter().flatten() {
            c.activation_pattern(&mut out);
        }
        for c in self.middle.iter().chain(self.blocks.iter().flatten()).chain(&self.upsample) {
            c.activation_pattern(&mut out);
        }
        out
    }
}

/// VFE stack → dense scatter → 3D middle convolutions → RPN → heads.
#[derive(Clone, Debug)]
pub struct Network<T> {
    pub fusion_mode: FusionMode,
    grid: VoxelGridConfig,
    pub point_reducer: Option<FeatureReducer<T>>,
    pub vfe: Vec<VfeLayer<T>>,
    /// Point-wise layer before the final per-voxel max.
    pub vfe_out: FcnLayer<T>,
    pub voxel_reducer: Option<FeatureReducer<T>>,
    pub middle: Vec<ConvBnRelu<T>>,
    pub blocks: Vec<Vec<ConvBnRelu<T>>>,
    pub upsample: Vec<ConvBnRelu<T>>,
    pub score_head: Conv<T>,
    pub reg_head: Conv<T>,
    point_image_dim: usize,
}

/// Top-level parameter groups, one checkpoint directory each.
const MODULES: [&str; 9] = [
    "point_reducer",
    "vfe",
    "vfe_out",
    "voxel_reducer",
    "middle",
    "rpn",
    "upsample",
    "score_head",
    "reg_head",
];

impl<T: Real> Network<T> {
    pub fn new(cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let n = &cfg.network;
        let mode = cfg.fusion_mode;
        let [nx, ny, nz] = cfg.grid.grid_dims();
        let total_stride = 1usize << n.rpn_channels.len();
        if nx % total_stride != 0 || ny % total_stride != 0 {
            return Err(DetectorError::IndivisibleGrid {
                width: nx,
                height: ny,
                stride: total_stride,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let point_image_dim = match mode.patch_size() {
            Some(k) => 3 * k * k,
            None => n.image_channels,
        };
        let point_reducer = mode.per_point().then(|| {
            let mut dims = vec![point_image_dim];
            dims.extend(&n.point_reducer);
            FeatureReducer::new(&mut rng, &dims)
        });
        let mut width = 7 + point_reducer.as_ref().map_or(0, |r| r.output_dim());
        let mut vfe = Vec::new();
        for &out in &n.vfe {
            vfe.push(VfeLayer::new(&mut rng, width, out));
            width = out;
        }
        let vfe_out = FcnLayer::new(&mut rng, width, width);
        let voxel_reducer = (mode == FusionMode::VoxelFusion).then(|| {
            let mut dims = vec![n.image_channels];
            dims.extend(&n.voxel_reducer);
            FeatureReducer::new(&mut rng, &dims)
        });
        width += voxel_reducer.as_ref().map_or(0, |r| r.output_dim());
        let mut middle = Vec::new();
        let mut depth = nz;
        for (&out, &s) in n.middle_channels.iter().zip(&n.middle_depth_strides) {
            middle.push(ConvBnRelu::new(Conv::new_3d(&mut rng, width, out, [3, 3, 3], [s, 1, 1], [1, 1, 1])));
            depth = (depth + 2 - 3) / s + 1;
            width = out;
        }
        width *= depth;
        let mut blocks = Vec::new();
        let mut upsample = Vec::new();
        for (b, &out) in n.rpn_channels.iter().enumerate() {
            let mut block = Vec::new();
            for j in 0..n.convs_per_block {
                let stride = if j == 0 { 2 } else { 1 };
                block.push(ConvBnRelu::new(Conv::new_2d(&mut rng, width, out, 3, stride, 1, ConvKind::Standard)));
                width = out;
            }
            blocks.push(block);
            let scale = 1 << b;
            upsample.push(ConvBnRelu::new(Conv::new_2d(
                &mut rng,
                out,
                n.upsample_channels,
                scale,
                scale,
                0,
                ConvKind::Transposed,
            )));
        }
        let cat = n.upsample_channels * n.rpn_channels.len();
        let yaws = cfg.anchors.yaws.len();
        let score_head = Conv::new_2d(&mut rng, cat, yaws, 1, 1, 0, ConvKind::Standard).with_bias();
        let reg_head = Conv::new_2d(&mut rng, cat, 7 * yaws, 1, 1, 0, ConvKind::Standard).with_bias();
        let mut net = Self {
            fusion_mode: mode,
            grid: cfg.grid.clone(),
            point_reducer,
            vfe,
            vfe_out,
            voxel_reducer,
            middle,
            blocks,
            upsample,
            score_head,
            reg_head,
            point_image_dim,
        };
        // Every convolution after the scatter reads ReLU or zero-fill output.
        for layer in net.middle.iter_mut().chain(net.blocks.iter_mut().flatten()).chain(&mut net.upsample) {
            layer.conv.sparse_input_grad = true;
        }
        net.score_head.sparse_input_grad = true;
        net.reg_head.sparse_input_grad = true;
        Ok(net)
    }

    /// Width of the per-point image vector the network expects.
    pub fn point_image_dim(&self) -> usize {
        self.point_image_dim
    }

    fn check_input(&self, input: &SceneInput) -> Result<()> {
        let k = input.voxels.len();
        let n = input.points.len();
        let mismatch = |msg: String| Err(DetectorError::ShapeMismatch(msg));
        if input.counts.len() != k || input.counts.iter().sum::<usize>() != n {
            return mismatch(format!("{k} voxels, {} counts, {n} points", input.counts.len()));
        }
        if let Some(i) = input.counts.iter().position(|c| *c == 0) {
            return mismatch(format!("voxel {i} has no points"));
        }
        let [nx, ny, nz] = self.grid.grid_dims();
        if let Some(v) = input.voxels.iter().find(|v| v[0] >= nx || v[1] >= ny || v[2] >= nz) {
            return mismatch(format!("voxel {v:?} outside the {nx}×{ny}×{nz} grid"));
        }
        match (&self.point_reducer, &input.point_image) {
            (Some(_), Some(img)) if img.len() == n * self.point_image_dim => {}
            (None, None) => {}
            (Some(_), _) => return mismatch(format!("{} needs {} image values per point", self.fusion_mode, self.point_image_dim)),
            (None, Some(_)) => return mismatch(format!("{} takes no per-point image input", self.fusion_mode)),
        }
        match (&self.voxel_reducer, &input.voxel_image) {
            (Some(r), Some(img)) if img.len() == k * r.input_dim() => {}
            (None, None) => {}
            (Some(_), _) => return mismatch(format!("{} needs pooled image features per voxel", self.fusion_mode)),
            (None, Some(_)) => return mismatch(format!("{} takes no per-voxel image input", self.fusion_mode)),
        }
        Ok(())
    }

    pub fn forward(&mut self, input: &SceneInput, mode: Mode) -> Result<(NetworkOutput<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let k = input.voxels.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&i| self.grid.linear_index(input.voxels[i]));
        let mut offsets = Vec::with_capacity(k + 1);
        offsets.push(0);
        for c in &input.counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut pts = Vec::with_capacity(input.points.len() * 7);
        let mut img = Vec::new();
        let mut counts = Vec::with_capacity(k);
        for &v in &order {
            let (a, b) = (offsets[v], offsets[v + 1]);
            counts.push(b - a);
            for p in &input.points[a..b] {
                pts.extend(p.iter().map(|x| cast::<T>(*x)));
            }
            if let Some(pi) = &input.point_image {
                let d = self.point_image_dim;
                img.extend(pi[a * d..b * d].iter().map(|x| cast::<T>(*x)));
            }
        }
        let rows = input.points.len();
        let cells: Vec<[usize; 3]> = order.iter().map(|&v| input.voxels[v]).collect();

        let mut point_reducer_cache = None;
        let mut vfe_caches = Vec::new();
        let mut vfe_out_cache = None;
        let mut voxel_reducer_cache = None;
        let vfe_width = self.vfe_out.output_dim();
        let voxel_width = vfe_width + self.voxel_reducer.as_ref().map_or(0, |r| r.output_dim());
        let mut voxel_features = Tensor::zeros(&[k, voxel_width]);
        if k > 0 {
            let mut x = Tensor::from_vec(&[rows, 7], pts);
            if let Some(r) = &mut self.point_reducer {
                let (red, c) = r.forward(&Tensor::from_vec(&[rows, self.point_image_dim], img), mode)?;
                x = Tensor::hcat(&x, &red);
                point_reducer_cache = Some(c);
            }
            let groups = PointGroups::from_counts(&counts)?;
            for layer in &mut self.vfe {
                let (y, _, c) = layer.forward(&x, &groups, mode)?;
                vfe_caches.push(c);
                x = y;
            }
            let (f, fc) = self.vfe_out.forward(&x, mode)?;
            let (mut vf, argmax) = group_max(&f, &groups);
            vfe_out_cache = Some((fc, argmax));
            if let Some(r) = &mut self.voxel_reducer {
                let c_img = r.input_dim();
                let pooled = input.voxel_image.as_ref().expect("checked");
                let mut data = Vec::with_capacity(k * c_img);
                for &v in &order {
                    data.extend(pooled[v * c_img..(v + 1) * c_img].iter().map(|x| cast::<T>(*x)));
                }
                let (red, c) = r.forward(&Tensor::from_vec(&[k, c_img], data), mode)?;
                vf = Tensor::hcat(&vf, &red);
                voxel_reducer_cache = Some(c);
            }
            voxel_features = vf;
        }

        let [nx, ny, nz] = self.grid.grid_dims();
        let plane = nx * ny * nz;
        let mut dense = Tensor::zeros(&[voxel_width, nz, ny, nx]);
        for (row, [ix, iy, iz]) in cells.iter().enumerate() {
            let at = (iz * ny + iy) * nx + ix;
            for (c, v) in voxel_features.row(row).iter().enumerate() {
                dense.data[c * plane + at] = *v;
            }
        }
        let mut h = dense;
        let mut middle_caches = Vec::with_capacity(self.middle.len());
        for layer in &mut self.middle {
            let (y, c) = layer.forward(&h, mode)?;
            middle_caches.push(c);
            h = y;
        }
        let folded_shape = h.shape().to_vec();
        let (c, d) = (folded_shape[0], folded_shape[1]);
        let mut h = h.reshape(&[c * d, ny, nx]);

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut up_caches = Vec::with_capacity(self.blocks.len());
        let mut up_channels = Vec::with_capacity(self.blocks.len());
        let mut cat = Vec::new();
        let mut out_hw = (0, 0);
        for (block, up) in self.blocks.iter_mut().zip(&mut self.upsample) {
            let mut caches = Vec::with_capacity(block.len());
            for layer in block.iter_mut() {
                let (y, c) = layer.forward(&h, mode)?;
                caches.push(c);
                h = y;
            }
            block_caches.push(caches);
            let (u, c) = up.forward(&h, mode)?;
            up_caches.push(c);
            up_channels.push(u.shape()[0]);
            out_hw = (u.shape()[1], u.shape()[2]);
            cat.extend_from_slice(&u.data);
        }
        let cat_channels: usize = up_channels.iter().sum();
        let cat = Tensor::from_vec(&[cat_channels, out_hw.0, out_hw.1], cat);
        let (score_logits, score_cache) = self.score_head.forward(&cat)?;
        let (regression, reg_cache) = self.reg_head.forward(&cat)?;
        Ok((
            NetworkOutput {
                score_logits,
                regression,
            },
            ForwardCache {
                cells,
                rows,
                point_reducer: point_reducer_cache,
                vfe: vfe_caches,
                vfe_out: vfe_out_cache,
                voxel_reducer: voxel_reducer_cache,
                middle: middle_caches,
                folded_shape,
                blocks: block_caches,
                upsample: up_caches,
                up_channels,
                score_head: score_cache,
                reg_head: reg_cache,
            },
        ))
    }

    /// Accumulates parameter gradients given loss gradients for both heads.
    pub fn backward(&mut self, cache: &ForwardCache<T>, d_logits: &Tensor<T>, d_regression: &Tensor<T>) {
        let mut d_cat = self.score_head.backward(&cache.score_head, d_logits);
        let d_cat_reg = self.reg_head.backward(&cache.reg_head, d_regression);
        for (a, b) in d_cat.data.iter_mut().zip(&d_cat_reg.data) {
            *a += *b;
        }
        let plane = d_cat.shape()[1] * d_cat.shape()[2];
        let mut d_up = Vec::with_capacity(self.upsample.len());
        let mut start = 0;
        for (up, (c, ch)) in self.upsample.iter_mut().zip(cache.upsample.iter().zip(&cache.up_channels)) {
            let part = Tensor::from_vec(
                &[*ch, d_cat.shape()[1], d_cat.shape()[2]],
                d_cat.data[start * plane..(start + ch) * plane].to_vec(),
            );
            start += ch;
            d_up.push(up.backward(c, &part));
        }
        let mut carry: Option<Tensor<T>> = None;
        for (b, block) in self.blocks.iter_mut().enumerate().rev() {
            let mut g = d_up[b].clone();
            if let Some(c) = carry.take() {
                for (a, v) in g.data.iter_mut().zip(&c.data) {
                    *a += *v;
                }
            }
            for (layer, c) in block.iter_mut().zip(&cache.blocks[b]).rev() {
                g = layer.backward(c, &g);
            }
            carry = Some(g);
        }
        let mut g = carry.expect("at least one block").reshape(&cache.folded_shape);
        for (layer, c) in self.middle.iter_mut().zip(&cache.middle).rev() {
            g = layer.backward(c, &g);
        }
        let Some((fc, argmax)) = &cache.vfe_out else {
            return;
        };
        let [nx, ny, nz] = self.grid.grid_dims();
        let plane = nx * ny * nz;
        let width = g.shape()[0];
        let k = cache.cells.len();
        let mut d_voxel = Tensor::zeros(&[k, width]);
        for (row, [ix, iy, iz]) in cache.cells.iter().enumerate() {
            let at = (iz * ny + iy) * nx + ix;
            for (c, d) in d_voxel.row_mut(row).iter_mut().enumerate() {
                *d = g.data[c * plane + at];
            }
        }
        let vfe_width = self.vfe_out.output_dim();
        if let (Some(r), Some(rc)) = (&mut self.voxel_reducer, &cache.voxel_reducer) {
            let (dv, dr) = d_voxel.hsplit(vfe_width);
            r.backward(rc, &dr);
            d_voxel = dv;
        }
        let d_f = group_max_backward(&d_voxel, argmax, cache.rows);
        let mut d = self.vfe_out.backward(fc, &d_f);
        for (layer, c) in self.vfe.iter_mut().zip(&cache.vfe).rev() {
            d = layer.backward(c, &d, None);
        }
        if let (Some(r), Some(rc)) = (&mut self.point_reducer, &cache.point_reducer) {
            let (_, dr) = d.hsplit(7);
            r.backward(rc, &dr);
        }
    }

    /// Writes one checkpoint directory per parameter group under `dir`.
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        for name in MODULES {
            let mut view = ModuleView { net: self, name };
            if view.is_empty() {
                continue;
            }
            save_checkpoint(&mut view, dir.as_ref().join(name))?;
        }
        Ok(())
    }

    pub fn load(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        for name in MODULES {
            let mut view = ModuleView { net: self, name };
            if view.is_empty() {
                continue;
            }
            load_checkpoint(&mut view, dir.as_ref().join(name))?;
        }
        Ok(())
    }
}

impl<T: Real> Module<T> for Network<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        if let Some(r) = &mut self.point_reducer {
            r.visit_params(&join(prefix, "point_reducer"), f);
        }
        for (i, l) in self.vfe.iter_mut().enumerate() {
            l.visit_params(&join(prefix, &format!("vfe.{i}")), f);
        }
        self.vfe_out.visit_params(&join(prefix, "vfe_out"), f);
        if let Some(r) = &mut self.voxel_reducer {
            r.visit_params(&join(prefix, "voxel_reducer"), f);
        }
        for (i, l) in self.middle.iter_mut().enumerate() {
            l.visit_params(&join(prefix, &format!("middle.{i}")), f);
        }
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (i, l) in block.iter_mut().enumerate() {
                l.visit_params(&join(prefix, &format!("rpn.{b}.{i}")), f);
            }
        }
        for (i, l) in self.upsample.iter_mut().enumerate() {
            l.visit_params(&join(prefix, &format!("upsample.{i}")), f);
        }
        self.score_head.visit_params(&join(prefix, "score_head"), f);
        self.reg_head.visit_params(&join(prefix, "reg_head"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        if let Some(r) = &mut self.point_reducer {
            r.visit_buffers(&join(prefix, "point_reducer"), f);
        }
        for (i, l) in self.vfe.iter_mut().enumerate() {
            l.visit_buffers(&join(prefix, &format!("vfe.{i}")), f);
        }
        self.vfe_out.visit_buffers(&join(prefix, "vfe_out"), f);
        if let Some(r) = &mut self.voxel_reducer {
            r.visit_buffers(&join(prefix, "voxel_reducer"), f);
        }
        for (i, l) in self.middle.iter_mut().enumerate() {
            l.visit_buffers(&join(prefix, &format!("middle.{i}")), f);
        }
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (i, l) in block.iter_mut().enumerate() {
                l.visit_buffers(&join(prefix, &format!("rpn.{b}.{i}")), f);
            }
        }
        for (i, l) in self.upsample.iter_mut().enumerate() {
            l.visit_buffers(&join(prefix, &format!("upsample.{i}")), f);
        }
    }
}

/// The parameters of one top-level group, with the group name stripped.
struct ModuleView<'a, T> {
    net: &'a mut Network<T>,
    name: &'static str,
}

impl<T: Real> ModuleView<'_, T> {
    fn is_empty(&mut self) -> bool {
        let mut any = false;
        self.visit_params("", &mut |_, _| any = true);
        !any
    }
}

impl<T: Real> Module<T> for ModuleView<'_, T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        let name = self.name;
        self.net.visit_params("", &mut |n, p| {
            if let Some(rest) = n.strip_prefix(name).and_then(|r| r.strip_prefix('.')) {
                f(join(prefix, rest), p);
            }
        });
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        let name = self.name;
        self.net.visit_buffers("", &mut |n, b| {
            if let Some(rest) = n.strip_prefix(name).and_then(|r| r.strip_prefix('.')) {
                f(join(prefix, rest), b);
            }
        });
    }
}
