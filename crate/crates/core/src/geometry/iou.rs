use super::Box3D;

const DEGENERATE_AREA: f64 = 1e-12;

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let [x0, y0] = poly[i];
            let [x1, y1] = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice.abs() / 2.0
}

#[inline]
fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn line_hit(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman clip of `subject` by the convex, counter-clockwise
/// polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    out.push(line_hit(prev, cur, a, b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(line_hit(prev, cur, a, b));
            }
        }
    }
    out
}

/// Overlap area of the two footprints.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()))
}

/// Intersection over union of the yaw-rotated footprints.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    let union = a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter;
    if union < DEGENERATE_AREA {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint overlap times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    let inter = bev_intersection(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union < DEGENERATE_AREA {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
