//! Monte-Carlo statistics of the perturbation settings, with a fixed seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vmr_core::data::Segment;
use vmr_core::metrics::temporal_iou;
use vmr_core::perturb::{perturb_annotation_with_rng, NoiseKind};

fn mean_iou(kind: NoiseKind, seed: u64, draws: usize) -> f64 {
    let segment = Segment::new(2.0, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let out = perturb_annotation_with_rng(&segment, &kind, 10.0, &mut rng).unwrap();
        total += temporal_iou(&segment, &out);
    }
    total / draws as f64
}

/// Expected overlap with the original annotation degrades from the mild
/// gaussian to both stronger settings. Measured at 20k draws the means are
/// roughly 0.85 (sigma 0.1), 0.60 (uniform), and 0.50 (sigma 0.5): the wide
/// gaussian ranks below the uniform because its tails can push the segments
/// fully apart, which the bounded uniform draw cannot.
#[test]
fn mean_iou_degrades_from_mild_to_strong_noise() {
    let draws = 20_000;
    let mild = mean_iou(NoiseKind::Gaussian { sigma: 0.1 }, 11, draws);
    let wide = mean_iou(NoiseKind::Gaussian { sigma: 0.5 }, 11, draws);
    let uniform = mean_iou(NoiseKind::Uniform { lo: -0.5, hi: 0.5 }, 11, draws);

    assert!(mild > 0.8, "sigma=0.1 mean IoU {mild}");
    assert!(mild > uniform + 0.1, "mild {mild} vs uniform {uniform}");
    assert!(uniform > wide + 0.05, "uniform {uniform} vs wide {wide}");
    assert!(wide > 0.3, "sigma=0.5 mean IoU {wide}");
}
