use super::normalize_angle;

/// Oriented 3D box in the LiDAR frame. `center` is the geometric center,
/// `size` is `(l, w, h)` with `l` along the heading, and `yaw` rotates about
/// +z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    /// Builds a box with its yaw wrapped into `(-π, π]`.
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        Self {
            center,
            size,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn z_range(&self) -> (f64, f64) {
        let half = self.size[2] / 2.0;
        (self.center[2] - half, self.center[2] + half)
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size[0] / 2.0;
        let hw = self.size[1] / 2.0;
        let [cx, cy, _] = self.center;
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| [cx + a * c - b * s, cy + a * s + b * c])
    }

    /// The 8 corners: bottom face first, each face counter-clockwise.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let bev = self.bev_corners();
        let (z0, z1) = self.z_range();
        let mut out = [[0.0; 3]; 8];
        for (i, [x, y]) in bev.iter().enumerate() {
            out[i] = [*x, *y, z0];
            out[i + 4] = [*x, *y, z1];
        }
        out
    }
}
