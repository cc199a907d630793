//! Finite-difference checks of the analytic loss gradients on small random
//! problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stembed_core::embedding_loss::{weighted_instance_loss, weighted_instance_loss_value, TermWeights};
use stembed_core::geometry::{project, Reduction, SourceView, ViewSynthesis};
use stembed_core::numerics::{finite_diff_grad, relative_error};
use stembed_core::{CameraModel, DepthMap, Image, InstanceLabelMap, InstancePartition, LossConfig, PhotometricConfig, PoseSE3, Tensor};

pub const EMBEDDING_TOLERANCE: f64 = 1e-4;
pub const GEOMETRY_TOLERANCE: f64 = 1e-3;

const EMBEDDING_EPS: f64 = 1e-6;
const DEPTH_EPS: f64 = 1e-5;
/// Depth coordinates whose projection lies this close to a bilinear cell
/// edge are left out of the depth comparison.
const KINK_MARGIN: f64 = 1e-4;

/// Largest relative error seen per loss over all trials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub trials: usize,
    pub attraction: f64,
    pub repulsion: f64,
    pub regularisation: f64,
    pub instance: f64,
    pub depth: f64,
    pub depth_coords: usize,
    pub depth_skipped: usize,
}

impl GradReport {
    pub fn embedding_max(&self) -> f64 {
        self.attraction.max(self.repulsion).max(self.regularisation).max(self.instance)
    }

    pub fn passed(&self) -> bool {
        self.embedding_max() <= EMBEDDING_TOLERANCE && self.depth <= GEOMETRY_TOLERANCE
    }
}

/// Runs `trials` embedding and depth checks seeded from `seed`. With
/// `flip_sign` the analytic gradients are negated before comparison.
pub fn check_gradients(loss: &LossConfig, photometric: &PhotometricConfig, seed: u64, trials: usize, flip_sign: bool) -> GradReport {
    let sign = if flip_sign { -1.0 } else { 1.0 };
    let mut report = GradReport {
        trials,
        ..GradReport::default()
    };
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let (y, part) = embedding_case(&mut rng);
        let terms = [
            (TermWeights::ATTRACTION, &mut report.attraction),
            (TermWeights::REPULSION, &mut report.repulsion),
            (TermWeights::REGULARISATION, &mut report.regularisation),
            (TermWeights::from_config(loss), &mut report.instance),
        ];
        for (weights, worst) in terms {
            let analytic = weighted_instance_loss(&y, &part, loss, weights).expect("valid case").grad;
            let numeric = finite_diff_grad(
                |x| weighted_instance_loss_value(x, &part, loss, weights).expect("valid case"),
                &y,
                EMBEDDING_EPS,
            )
            .expect("finite loss");
            let a: Vec<f64> = analytic.data().iter().map(|g| sign * g).collect();
            *worst = worst.max(relative_error(&a, numeric.data()));
        }

        let (problem, depth) = depth_case(&mut rng, photometric);
        let (_, analytic) = problem.loss_and_grad(&depth).expect("valid case");
        let values = Tensor::new(vec![depth.values().len()], depth.values().to_vec()).expect("flat");
        let (h, w) = (depth.height(), depth.width());
        let numeric = finite_diff_grad(
            |x| {
                let d = DepthMap::new(h, w, x.data().to_vec()).expect("positive depth");
                problem.loss(&d).expect("valid case").value
            },
            &values,
            DEPTH_EPS,
        )
        .expect("finite loss");
        let keep: Vec<usize> = (0..h * w).filter(|&i| !near_kink(&problem, &depth, i)).collect();
        report.depth_coords += h * w;
        report.depth_skipped += h * w - keep.len();
        let a: Vec<f64> = keep.iter().map(|&i| sign * analytic[i]).collect();
        let b: Vec<f64> = keep.iter().map(|&i| numeric.data()[i]).collect();
        report.depth = report.depth.max(relative_error(&a, &b));
    }
    report
}

fn embedding_case(rng: &mut ChaCha8Rng) -> (Tensor<f64>, InstancePartition) {
    let (p, t, h, w) = (3, 2, 4, 5);
    let k = rng.random_range(1..=3u32);
    let labels: Vec<InstanceLabelMap> = (0..t)
        .map(|_| InstanceLabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..=k)).collect()))
        .collect();
    let y = Tensor::from_fn(&[p, t, h, w], |_| rng.random_range(-1.2..1.2)).expect("shape");
    (y, InstancePartition::from_labels(&labels))
}

fn smooth_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                rng.random_range(0.15..0.6),
                rng.random_range(0.15..0.6),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.05..0.12),
            ]
        })
        .collect();
    Image::from_fn(h, w, 3, |row, col, ch| {
        0.5 + waves[ch * 3..ch * 3 + 3]
            .iter()
            .map(|wv| wv[3] * (wv[0] * col as f64 + wv[1] * row as f64 + wv[2]).sin())
            .sum::<f64>()
    })
}

/// One smooth target and source pair with a random depth map. The
/// per-source minimum and auto-mask are piecewise choices, so the check
/// sums over sources with masking off.
fn depth_case(rng: &mut ChaCha8Rng, photometric: &PhotometricConfig) -> (ViewSynthesis, DepthMap) {
    let (h, w) = (10, 12);
    let camera = CameraModel::new(14.0, 13.0, 5.7, 4.6).expect("camera");
    let target = smooth_image(rng, h, w);
    let sources = (0..2)
        .map(|_| SourceView {
            image: smooth_image(rng, h, w),
            pose: PoseSE3::new(
                [rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)],
                [rng.random_range(-0.25..0.25), rng.random_range(-0.15..0.15), rng.random_range(-0.1..0.1)],
            ),
        })
        .collect();
    let config = PhotometricConfig {
        auto_mask: false,
        reduction: Reduction::Sum,
        ..*photometric
    };
    let depth = DepthMap::new(h, w, (0..h * w).map(|_| rng.random_range(2.0..6.0)).collect()).expect("depth");
    (ViewSynthesis::new(target, sources, camera, config).expect("problem"), depth)
}

fn near_kink(problem: &ViewSynthesis, depth: &DepthMap, i: usize) -> bool {
    let (row, col) = (i / depth.width(), i % depth.width());
    let frac = |x: f64| (x - x.round()).abs();
    problem.sources.iter().any(|s| {
        let q = project(col, row, depth, &s.pose, &problem.camera);
        !q.in_front || frac(q.u) < KINK_MARGIN || frac(q.v) < KINK_MARGIN
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_losses_pass_and_flipped_gradients_fail() {
        let (loss, photo) = (LossConfig::default(), PhotometricConfig::default());
        let ok = check_gradients(&loss, &photo, 3, 2, false);
        assert!(ok.passed(), "{ok:?}");
        assert_eq!(ok.depth_coords, 240);
        let bad = check_gradients(&loss, &photo, 3, 2, true);
        assert!(!bad.passed());
        assert!((bad.instance - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_trials_check_nothing() {
        let r = check_gradients(&LossConfig::default(), &PhotometricConfig::default(), 0, 0, true);
        assert_eq!(r.depth_coords, 0);
        assert!(r.passed());
    }
}
