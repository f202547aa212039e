use rand::Rng;

use super::{join, FcnCache, FcnLayer, Mode, Module, NeuralError, Param, Real, Result, Tensor};

/// Row ranges of a point batch grouped by voxel: voxel `k` owns rows
/// `offsets[k]..offsets[k + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointGroups {
    offsets: Vec<usize>,
}

impl PointGroups {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0);
        for (k, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(NeuralError::EmptyVoxelRow(k));
            }
            offsets.push(offsets[k] + c);
        }
        Ok(Self { offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }
}

/// Element-wise max over each group. Ties go to the first row.
pub fn group_max<T: Real>(x: &Tensor<T>, groups: &PointGroups) -> (Tensor<T>, Vec<usize>) {
    let c = x.shape()[1];
    let mut out = Tensor::zeros(&[groups.len(), c]);
    let mut argmax = vec![0usize; groups.len() * c];
    for k in 0..groups.len() {
        let r = groups.range(k);
        let o = out.row_mut(k);
        o.copy_from_slice(x.row(r.start));
        argmax[k * c..(k + 1) * c].iter_mut().for_each(|a| *a = r.start);
        for i in r.start + 1..r.end {
            for (ch, v) in x.row(i).iter().enumerate() {
                if *v > o[ch] {
                    o[ch] = *v;
                    argmax[k * c + ch] = i;
                }
            }
        }
    }
    (out, argmax)
}

pub fn group_max_backward<T: Real>(dy: &Tensor<T>, argmax: &[usize], rows: usize) -> Tensor<T> {
    let c = dy.shape()[1];
    let mut dx = Tensor::zeros(&[rows, c]);
    for (j, g) in dy.data.iter().enumerate() {
        let ch = j % c;
        dx.data[argmax[j] * c + ch] += *g;
    }
    dx
}

/// Voxel feature encoding: a point-wise [`FcnLayer`] to `out/2` features,
/// an element-wise max over each voxel, and that max concatenated back onto
/// every point.
#[derive(Clone, Debug)]
pub struct VfeLayer<T> {
    pub fcn: FcnLayer<T>,
}

#[derive(Clone, Debug)]
pub struct VfeCache<T> {
    fcn: FcnCache<T>,
    argmax: Vec<usize>,
    groups: PointGroups,
}

impl<T: Real> VfeCache<T> {
    /// ReLU flags followed by the max-pool winners.
    pub fn activation_pattern(&self, out: &mut Vec<usize>) {
        self.fcn.activation_pattern(out);
        out.extend_from_slice(&self.argmax);
    }
}

impl<T: Real> VfeLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        assert!(output % 2 == 0, "VFE output width must be even");
        Self {
            fcn: FcnLayer::new(rng, input, output / 2),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fcn.output_dim()
    }

    /// Returns the concatenated point features `(N, out)` and the voxel
    /// summary `(K, out/2)`.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        groups: &PointGroups,
        mode: Mode,
    ) -> Result<(Tensor<T>, Tensor<T>, VfeCache<T>)> {
        if x.shape()[0] != groups.rows() {
            return Err(NeuralError::ShapeMismatch(format!(
                "{} rows for {} grouped points",
                x.shape()[0],
                groups.rows()
            )));
        }
        let (f, fcn) = self.fcn.forward(x, mode)?;
        let (summary, argmax) = group_max(&f, groups);
        let half = f.shape()[1];
        let n = f.shape()[0];
        let mut out = Tensor::zeros(&[n, 2 * half]);
        for k in 0..groups.len() {
            for i in groups.range(k) {
                let row = out.row_mut(i);
                row[..half].copy_from_slice(f.row(i));
                row[half..].copy_from_slice(summary.row(k));
            }
        }
        Ok((
            out,
            summary,
            VfeCache {
                fcn,
                argmax,
                groups: groups.clone(),
            },
        ))
    }

    pub fn backward(&mut self, cache: &VfeCache<T>, d_out: &Tensor<T>, d_summary: Option<&Tensor<T>>) -> Tensor<T> {
        let half = self.fcn.output_dim();
        let groups = &cache.groups;
        let (mut df, d_max_rows) = d_out.hsplit(half);
        let mut d_max = Tensor::zeros(&[groups.len(), half]);
        for k in 0..groups.len() {
            let acc = d_max.row_mut(k);
            for i in groups.range(k) {
                for (a, g) in acc.iter_mut().zip(d_max_rows.row(i)) {
                    *a += *g;
                }
            }
            if let Some(ds) = d_summary {
                for (a, g) in acc.iter_mut().zip(ds.row(k)) {
                    *a += *g;
                }
            }
        }
        let routed = group_max_backward(&d_max, &cache.argmax, groups.rows());
        for (a, b) in df.data.iter_mut().zip(&routed.data) {
            *a += *b;
        }
        self.fcn.backward(&cache.fcn, &df)
    }
}

impl<T: Real> Module<T> for VfeLayer<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.fcn.visit_params(&join(prefix, "fcn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.fcn.visit_buffers(&join(prefix, "fcn"), f);
    }
}

/// Padded form of [`VfeLayer::forward`]: `points` is `(K, T, in)` and
/// `mask[k * T + t]` marks real points. Masked output rows are zero.
pub fn vfe_forward_masked<T: Real>(
    layer: &mut VfeLayer<T>,
    points: &Tensor<T>,
    mask: &[bool],
    mode: Mode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let shape = points.shape();
    if shape.len() != 3 || mask.len() != shape[0] * shape[1] {
        return Err(NeuralError::ShapeMismatch(format!(
            "masked VFE expects (K, T, in) with K·T mask entries, got {shape:?} and {}",
            mask.len()
        )));
    }
    let (k, t, input) = (shape[0], shape[1], shape[2]);
    let mut counts = Vec::with_capacity(k);
    let mut rows = Vec::new();
    let mut slots = Vec::new();
    for v in 0..k {
        let mut c = 0;
        for s in 0..t {
            if mask[v * t + s] {
                let base = (v * t + s) * input;
                rows.extend_from_slice(&points.data[base..base + input]);
                slots.push(v * t + s);
                c += 1;
            }
        }
        if c == 0 {
            return Err(NeuralError::EmptyVoxelRow(v));
        }
        counts.push(c);
    }
    let groups = PointGroups::from_counts(&counts)?;
    let x = Tensor::from_vec(&[slots.len(), input], rows);
    let (out, summary, _) = layer.forward(&x, &groups, mode)?;
    let width = out.shape()[1];
    let mut padded = Tensor::zeros(&[k, t, width]);
    for (row, slot) in slots.iter().enumerate() {
        padded.data[slot * width..(slot + 1) * width].copy_from_slice(out.row(row));
    }
    Ok((padded, summary))
}
