//! The numeric kernels run in both f32 and f64; the f32 path must track the
//! f64 path within single-precision tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vmr_core::data::{Segment, VideoRecord};
use vmr_core::fusion::{enhance, FusionConfig};
use vmr_core::loss::{boundary_loss, toy_boundary_head, ToyHeadParams};
use vmr_core::supervision::{generate_supervision, QueryEmbeddings, SupervisionConfig};
use vmr_core::{Mat, Mat32};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Mat {
    Mat::from_vec(
        rows,
        dim,
        (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn f32_enhancement_tracks_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f_v = random_matrix(&mut rng, 6, 4);
    let f_s = random_matrix(&mut rng, 2, 4);
    let f_q = random_matrix(&mut rng, 3, 4);
    let f_e = random_matrix(&mut rng, 2, 4);
    let cfg = FusionConfig::default();

    let wide = enhance(&f_v, &f_s, &f_q, &f_e, &cfg).unwrap();
    let narrow: Mat32 = enhance(
        &f_v.cast::<f32>(),
        &f_s.cast::<f32>(),
        &f_q.cast::<f32>(),
        &f_e.cast::<f32>(),
        &cfg,
    )
    .unwrap();
    for (a, b) in wide.as_slice().iter().zip(narrow.as_slice()) {
        assert!((a - *b as f64).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn f32_supervision_recovers_the_same_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let frames = rng.gen_range(4..24);
        let dim = rng.gen_range(2..8);
        let f_v = random_matrix(&mut rng, frames, dim);
        let queries = QueryEmbeddings {
            start: random_matrix(&mut rng, 2, dim),
            original: random_matrix(&mut rng, 2, dim),
            end: random_matrix(&mut rng, 2, dim),
        };
        let record = VideoRecord::new(
            "v".into(),
            frames as f64,
            1.0,
            Segment::new(0.5, frames as f64 - 0.5).unwrap(),
            "q".into(),
            None,
        )
        .unwrap();
        let cfg = SupervisionConfig::default();
        let wide = generate_supervision(&record, &f_v, &queries, &cfg).unwrap();
        let narrow = generate_supervision(
            &record,
            &f_v.cast::<f32>(),
            &QueryEmbeddings {
                start: queries.start.cast::<f32>(),
                original: queries.original.cast::<f32>(),
                end: queries.end.cast::<f32>(),
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(wide.s_prime, narrow.s_prime);
        assert_eq!(wide.e_prime, narrow.e_prime);
        for (a, b) in wide.probs.iter().zip(narrow.probs.iter()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }
}

#[test]
fn f32_losses_track_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f_v = random_matrix(&mut rng, 5, 3);
    let f_q = random_matrix(&mut rng, 2, 3);
    let params = ToyHeadParams::default();
    let target: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();

    let wide = boundary_loss(
        &target,
        &toy_boundary_head(&f_v, &f_q, &params).unwrap(),
    )
    .unwrap();
    let target32: Vec<f32> = target.iter().map(|&t| t as f32).collect();
    let narrow = boundary_loss(
        &target32,
        &toy_boundary_head(&f_v.cast::<f32>(), &f_q.cast::<f32>(), &params).unwrap(),
    )
    .unwrap();
    assert!((wide - narrow as f64).abs() < 1e-4, "{wide} vs {narrow}");
}
