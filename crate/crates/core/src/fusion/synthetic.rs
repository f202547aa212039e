use crate::kitti_io::{FeatureMap, GroundTruthObject};

/// Number of channels with defined content in [`synthetic_feature_map`].
pub const SYNTHETIC_CHANNELS: usize = 4;

/// Stand-in for a 2D detector's feature map, built from labels.
///
/// Cell `(row, col)` describes pixel `(col·stride, row·stride)`:
/// channel 0 is `u / width`, channel 1 is `v / height`, channel 2 is 1 inside
/// any labelled 2D box, and channel 3 is +1 or −1 depending on whether the
/// nearest box covering the pixel has class `positive_class`. Channels past
/// the fourth are zero. `DontCare` regions are ignored.
pub fn synthetic_feature_map(
    width: u32,
    height: u32,
    objects: &[GroundTruthObject],
    stride: f64,
    channels: usize,
    positive_class: &str,
) -> FeatureMap {
    assert!(channels >= SYNTHETIC_CHANNELS, "need at least {SYNTHETIC_CHANNELS} channels");
    let rows = (height as f64 / stride).ceil() as usize;
    let cols = (width as f64 / stride).ceil() as usize;
    let mut map = FeatureMap::zeros(channels, rows, cols, stride);
    let mut boxes: Vec<&GroundTruthObject> = objects.iter().filter(|o| !o.is_dont_care()).collect();
    boxes.sort_by(|a, b| a.location[2].total_cmp(&b.location[2]));
    for r in 0..rows {
        let v = r as f64 * stride;
        for c in 0..cols {
            let u = c as f64 * stride;
            *map.at_mut(0, r, c) = (u / width as f64) as f32;
            *map.at_mut(1, r, c) = (v / height as f64) as f32;
            let hit = boxes.iter().find(|o| {
                let [l, t, rt, b] = o.bbox2d;
                u >= l && u <= rt && v >= t && v <= b
            });
            if let Some(o) = hit {
                *map.at_mut(2, r, c) = 1.0;
                *map.at_mut(3, r, c) = if o.class_name == positive_class { 1.0 } else { -1.0 };
            }
        }
    }
    map
}
