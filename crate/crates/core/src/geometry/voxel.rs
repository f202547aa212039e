use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::kitti_io::{PointCloud, RawPoint};

/// Integer grid coordinates `(ix, iy, iz)` along LiDAR x, y and z.
pub type VoxelIndex = [usize; 3];

/// `[x, y, z, r, x - v_x, y - v_y, z - v_z]` for a point in a voxel whose
/// centroid is `v`.
pub type DecoratedPoint = [f64; 7];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGridConfig {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    /// Edge lengths along x, y, z.
    pub voxel_size: [f64; 3],
    pub max_points_per_voxel: usize,
    pub rng_seed: u64,
}

impl Default for VoxelGridConfig {
    /// 352 × 400 × 10 grid over x∈[0, 70.4], y∈[-40, 40], z∈[-3, 1].
    fn default() -> Self {
        Self {
            range_min: [0.0, -40.0, -3.0],
            range_max: [70.4, 40.0, 1.0],
            voxel_size: [0.2, 0.2, 0.4],
            max_points_per_voxel: 35,
            rng_seed: 0,
        }
    }
}

impl VoxelGridConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.max_points_per_voxel == 0 {
            return Err(GeometryError::InvalidConfig("max_points_per_voxel must be ≥ 1".into()));
        }
        for axis in 0..3 {
            let size = self.voxel_size[axis];
            let extent = self.range_max[axis] - self.range_min[axis];
            if !(size > 0.0 && extent > 0.0 && size.is_finite() && extent.is_finite()) {
                return Err(GeometryError::InvalidConfig(format!(
                    "axis {axis}: extent {extent} and voxel size {size} must be positive"
                )));
            }
            let n = (extent / size).round();
            if (extent - n * size).abs() > 1e-9 {
                return Err(GeometryError::InvalidConfig(format!(
                    "axis {axis}: extent {extent} is not a multiple of voxel size {size}"
                )));
            }
        }
        Ok(())
    }

    /// Cells along x, y, z.
    pub fn grid_dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| {
            ((self.range_max[a] - self.range_min[a]) / self.voxel_size[a]).round() as usize
        })
    }

    /// Linear index with x fastest: `(iz * ny + iy) * nx + ix`.
    pub fn linear_index(&self, index: VoxelIndex) -> usize {
        let [nx, ny, _] = self.grid_dims();
        (index[2] * ny + index[1]) * nx + index[0]
    }

    pub fn index_of(&self, p: [f64; 3]) -> Option<VoxelIndex> {
        let dims = self.grid_dims();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.range_min[a]) / self.voxel_size[a]).floor();
            if !(f >= 0.0 && f < dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Spatial `[lo, hi)` bounds of a cell.
    pub fn cell_bounds(&self, index: VoxelIndex) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|a| self.range_min[a] + index[a] as f64 * self.voxel_size[a]);
        let hi = std::array::from_fn(|a| self.range_min[a] + (index[a] + 1) as f64 * self.voxel_size[a]);
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Voxel {
    pub index: VoxelIndex,
    /// Retained points in input order.
    pub points: Vec<RawPoint>,
    pub centroid: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Non-empty voxels sorted by linear index.
    pub voxels: Vec<Voxel>,
    /// For each input point, the position in `voxels` of its cell, or `None`
    /// when it fell outside the range. Points dropped by subsampling still
    /// point at their cell.
    pub assignment: Vec<Option<usize>>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.voxels.iter().map(|v| v.points.len()).sum()
    }
}

fn centroid(points: &[RawPoint]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        c[0] += p.x;
        c[1] += p.y;
        c[2] += p.z;
    }
    c.map(|v| v / n)
}

/// Groups points into the grid. Cells with more than
/// `max_points_per_voxel` points keep a uniform random subset drawn from a
/// stream keyed by the seed and the cell's linear index, so the result does
/// not depend on processing order.
pub fn voxelize(points: &PointCloud, cfg: &VoxelGridConfig) -> Result<VoxelGrid, GeometryError> {
    cfg.validate()?;
    let mut cells: Vec<(usize, usize)> = points
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| cfg.index_of(p.xyz()).map(|idx| (cfg.linear_index(idx), i)))
        .collect();
    // Stable: points within a cell stay in input order.
    cells.sort_by_key(|(lin, _)| *lin);

    let mut voxels = Vec::new();
    let mut assignment = vec![None; points.len()];
    let mut start = 0;
    while start < cells.len() {
        let lin = cells[start].0;
        let mut end = start;
        while end < cells.len() && cells[end].0 == lin {
            end += 1;
        }
        let members: Vec<usize> = cells[start..end].iter().map(|(_, i)| *i).collect();
        for &i in &members {
            assignment[i] = Some(voxels.len());
        }
        let cap = cfg.max_points_per_voxel;
        let kept: Vec<RawPoint> = if members.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(lin as u64);
            let mut picks = sample(&mut rng, members.len(), cap).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|k| points.points[members[k]]).collect()
        } else {
            members.iter().map(|&i| points.points[i]).collect()
        };
        let index = cfg.index_of(kept[0].xyz()).expect("member of an in-range cell");
        voxels.push(Voxel {
            index,
            centroid: centroid(&kept),
            points: kept,
        });
        start = end;
    }
    Ok(VoxelGrid {
        dims: cfg.grid_dims(),
        voxels,
        assignment,
    })
}

/// Decorates every retained point of a voxel with its offset from the
/// centroid.
pub fn decorate(voxel: &Voxel) -> Result<Vec<DecoratedPoint>, GeometryError> {
    if voxel.points.is_empty() {
        return Err(GeometryError::EmptyVoxel);
    }
    let [vx, vy, vz] = voxel.centroid;
    Ok(voxel
        .points
        .iter()
        .map(|p| [p.x, p.y, p.z, p.r, p.x - vx, p.y - vy, p.z - vz])
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cloud(points: &[[f64; 4]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| RawPoint::new(p[0], p[1], p[2], p[3])).collect())
    }

    #[test]
    fn default_grid_is_integral() {
        let cfg = VoxelGridConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid_dims(), [352, 400, 10]);
    }

    #[test]
    fn floor_index() {
        let cfg = VoxelGridConfig::default();
        assert_eq!(cfg.index_of([10.05, 0.0, -1.0]), Some([50, 200, 5]));
        assert_eq!(cfg.index_of([70.4, 0.0, 0.0]), None);
        assert_eq!(cfg.index_of([-0.01, 0.0, 0.0]), None);
    }

    #[test]
    fn rejects_fractional_extent() {
        let cfg = VoxelGridConfig {
            voxel_size: [0.3, 0.2, 0.4],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(GeometryError::InvalidConfig(_))));
    }

    #[test]
    fn empty_cloud() {
        let grid = voxelize(&PointCloud::default(), &VoxelGridConfig::default()).unwrap();
        assert!(grid.is_empty());
    }

    #[test]
    fn centroid_of_two_points() {
        let cfg = VoxelGridConfig {
            range_min: [0.0, 0.0, 0.0],
            range_max: [2.0, 2.0, 2.0],
            ..Default::default()
        };
        let grid = voxelize(&cloud(&[[1.0, 1.0, 1.0, 0.5], [1.05, 1.05, 1.05, 0.7]]), &cfg).unwrap();
        assert_eq!(grid.len(), 1);
        for c in grid.voxels[0].centroid {
            assert!((c - 1.025).abs() < 1e-12);
        }
        assert_eq!(grid.assignment, vec![Some(0), Some(0)]);
    }

    #[test]
    fn subsampling_is_capped_and_seeded() {
        let cfg = VoxelGridConfig {
            max_points_per_voxel: 5,
            ..Default::default()
        };
        let pts: Vec<[f64; 4]> = (0..40).map(|i| [1.0 + i as f64 * 1e-3, 0.05, 0.1, 0.2]).collect();
        let a = voxelize(&cloud(&pts), &cfg).unwrap();
        let b = voxelize(&cloud(&pts), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.voxels[0].points.len(), 5);
        // retained points stay in input order
        assert!(a.voxels[0].points.windows(2).all(|w| w[0].x < w[1].x));
        let other = voxelize(&cloud(&pts), &VoxelGridConfig { rng_seed: 9, ..cfg }).unwrap();
        assert_ne!(a.voxels[0].points, other.voxels[0].points);
    }

    #[test]
    fn decorate_single_point() {
        let v = Voxel {
            index: [0, 0, 0],
            points: vec![RawPoint::new(1.0, 2.0, 3.0, 0.5)],
            centroid: [1.0, 2.0, 3.0],
        };
        assert_eq!(decorate(&v).unwrap(), vec![[1.0, 2.0, 3.0, 0.5, 0.0, 0.0, 0.0]]);
    }

    #[test]
    fn decorate_two_points() {
        let points = vec![RawPoint::new(1.0, 1.0, 1.0, 0.5), RawPoint::new(3.0, 3.0, 3.0, 0.7)];
        let v = Voxel {
            index: [0, 0, 0],
            centroid: centroid(&points),
            points,
        };
        assert_eq!(decorate(&v).unwrap()[0], [1.0, 1.0, 1.0, 0.5, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn decorate_empty_voxel() {
        let v = Voxel {
            index: [0, 0, 0],
            points: vec![],
            centroid: [0.0; 3],
        };
        assert_eq!(decorate(&v), Err(GeometryError::EmptyVoxel));
    }

    fn small_cfg() -> VoxelGridConfig {
        VoxelGridConfig {
            range_min: [0.0, -4.0, -2.0],
            range_max: [8.0, 4.0, 2.0],
            voxel_size: [0.5, 0.5, 1.0],
            max_points_per_voxel: 1000,
            rng_seed: 3,
        }
    }

    proptest! {
        #[test]
        fn partition_and_index_bijection(
            pts in prop::collection::vec(
                (-1.0f64..9.0, -5.0f64..5.0, -3.0f64..3.0, 0.0f64..1.0), 0..300)
        ) {
            let cfg = small_cfg();
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z, r)| RawPoint::new(x, y, z, r)).collect());
            let grid = voxelize(&cloud, &cfg).unwrap();
            let in_range = cloud.points.iter().filter(|p| cfg.index_of(p.xyz()).is_some()).count();
            prop_assert_eq!(grid.point_count(), in_range);
            for v in &grid.voxels {
                let (lo, hi) = cfg.cell_bounds(v.index);
                for p in &v.points {
                    for a in 0..3 {
                        prop_assert!(p.xyz()[a] >= lo[a] && p.xyz()[a] < hi[a]);
                    }
                    prop_assert_eq!(cfg.index_of(p.xyz()), Some(v.index));
                }
                let offsets = decorate(v).unwrap();
                for a in 4..7 {
                    let s: f64 = offsets.iter().map(|d| d[a]).sum();
                    prop_assert!(s.abs() < 1e-9);
                }
            }
            for (i, slot) in grid.assignment.iter().enumerate() {
                match slot {
                    Some(k) => prop_assert_eq!(cfg.index_of(cloud.points[i].xyz()), Some(grid.voxels[*k].index)),
                    None => prop_assert!(cfg.index_of(cloud.points[i].xyz()).is_none()),
                }
            }
        }
    }
}
