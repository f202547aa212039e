use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    assign_targets, compute_loss, generate_anchors, infer, AnchorGrid, DetectorConfig, DetectorError, LossBreakdown,
    Network, Result, Scene, SceneInput, TrainingTargets,
};
use crate::geometry::Box3D;
use crate::kitti_io::Detection;
use crate::neural::{sgd_step, zero_grads, Mode, Real, SgdState};

const CONFIG_FILE: &str = "config.toml";

/// A configured network together with its anchor lattice.
#[derive(Clone, Debug)]
pub struct Detector<T> {
    pub config: DetectorConfig,
    pub network: Network<T>,
    pub anchors: AnchorGrid,
}

impl<T: Real> Detector<T> {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        let network = Network::new(&config)?;
        let blocks = config.network.rpn_channels.len();
        let anchors = generate_anchors(&config.grid, &config.anchors, 2, 1 << blocks)?;
        Ok(Self {
            config,
            network,
            anchors,
        })
    }

    pub fn targets(&self, gt_boxes: &[Box3D]) -> TrainingTargets {
        assign_targets(&self.anchors, gt_boxes, &self.config.anchors)
    }

    pub fn infer(&mut self, input: &SceneInput) -> Result<Vec<Detection>> {
        infer(&mut self.network, input, &self.anchors, &self.config.infer, &self.config.target_class)
    }

    /// One SGD step on one scene.
    pub fn step(&mut self, input: &SceneInput, targets: &TrainingTargets, sgd: &mut SgdState<T>) -> Result<LossBreakdown> {
        let (out, cache) = self.network.forward(input, Mode::Train)?;
        let (loss, d_logits, d_reg) = compute_loss(&out, targets, &self.config.loss)?;
        if !loss.total.is_finite() {
            return Ok(loss);
        }
        zero_grads(&mut self.network);
        self.network.backward(&cache, &d_logits, &d_reg);
        sgd_step(sgd, &mut self.network)?;
        Ok(loss)
    }

    /// Writes `config.toml` and one weight directory per parameter group.
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| DetectorError::Config(format!("{}: {e}", dir.display())))?;
        std::fs::write(dir.join(CONFIG_FILE), self.config.to_toml_string())
            .map_err(|e| DetectorError::Config(format!("{}: {e}", dir.display())))?;
        self.network.save(dir)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut det = Self::new(DetectorConfig::load(dir.join(CONFIG_FILE))?)?;
        det.network.load(dir)?;
        Ok(det)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

/// Runs the configured schedule over `scenes`, one scene per step, in an
/// order reshuffled every epoch from the config seed. With a checkpoint
/// directory, `epoch_NNN/` is written every `checkpoint_every` epochs.
pub fn train<T: Real>(
    det: &mut Detector<T>,
    scenes: &[Scene],
    checkpoint_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainReport> {
    if scenes.is_empty() {
        return Err(DetectorError::Config("training set is empty".into()));
    }
    let targets: Vec<TrainingTargets> = scenes.iter().map(|s| det.targets(&s.gt_boxes)).collect();
    let tc = det.config.train.clone();
    let mut sgd = SgdState::new(tc.learning_rate, tc.momentum);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    for epoch in 0..tc.epochs {
        let start = Instant::now();
        sgd.learning_rate = tc.learning_rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(det.config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let loss = det.step(&scenes[i].input, &targets[i], &mut sgd)?;
            if !loss.total.is_finite() {
                return Err(DetectorError::DivergedLoss {
                    epoch,
                    step,
                    scene: scenes[i].id.clone(),
                    loss: loss.total,
                });
            }
            sum += loss.total;
            report.step_losses.push(loss.total);
        }
        let stats = EpochStats {
            epoch,
            mean_loss: sum / scenes.len() as f64,
            learning_rate: sgd.learning_rate,
            seconds: start.elapsed().as_secs_f64(),
        };
        report.epoch_losses.push(stats.mean_loss);
        on_epoch(&stats);
        if let Some(dir) = checkpoint_dir {
            if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
                det.save(dir.join(format!("epoch_{:03}", epoch + 1)))?;
            }
        }
    }
    Ok(report)
}
