use lowprec::problems::{blur_matrix, ray_pixel_lengths, tomo_matrix, BlurParams, TomoGeometry};
use lowprec::{
    add_noise, cgls, gen_deblur, gen_tomo, rescale_problem, FloatFormat, PhantomKind, SolverConfig, SparseOperator,
};
use proptest::prelude::*;

#[test]
fn blur_matrix_is_symmetric() {
    for (n, blur) in [(8, BlurParams { sigma: 0.8, bandwidth: 2 }), (16, BlurParams::MILD)] {
        let a = blur_matrix(n, blur).unwrap();
        let at = a.transpose();
        let diff: Vec<(usize, usize, f64)> = a.triplets().collect();
        let back: Vec<(usize, usize, f64)> = at.triplets().collect();
        assert_eq!(diff.len(), back.len());
        for ((i, j, v), (p, q, w)) in diff.iter().zip(&back) {
            assert_eq!((i, j), (p, q));
            assert!((v - w).abs() <= 1e-14);
        }
    }
}

#[test]
fn blur_rows_sum_to_at_most_one() {
    let a = blur_matrix(16, BlurParams::MILD).unwrap();
    let sums = a.row_sums();
    assert!(sums.iter().all(|&s| s <= 1.0 + 1e-12 && s > 0.0));
    // An interior pixel sees the whole truncated kernel.
    assert!(sums[8 * 16 + 8] > 0.99);
}

#[test]
fn tomo_matrix_is_nonnegative_with_bounded_rows() {
    let n = 16;
    let a = tomo_matrix(n, TomoGeometry::default_for(n)).unwrap();
    assert!(a.values().iter().all(|&v| v >= 0.0));
    let diag = (2.0f64).sqrt() * n as f64;
    assert!(a.row_sums().iter().all(|&s| s <= diag + 1e-9));
    assert_eq!(a.n_cols(), n * n);
}

#[test]
fn rescaling_leaves_cgls_iterates_unchanged() {
    let p = add_noise(&gen_deblur(16, BlurParams::MILD, PhantomKind::Shapes).unwrap(), 0.02, 3).unwrap();
    let cfg = SolverConfig::new(FloatFormat::FP64, 15);
    let base = cgls(&SparseOperator::new(p.a.clone()), &p.b, &cfg).unwrap();
    for s in [1e-2, 3.0, 1e3] {
        let q = rescale_problem(&p, s).unwrap();
        let scaled = cgls(&SparseOperator::new(q.a.clone()), &q.b, &cfg).unwrap();
        let diff: f64 = base
            .x_final
            .iter()
            .zip(&scaled.x_final)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = base.x_final.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm <= 1e-8, "scale {s}: {:e}", diff / norm);
    }
}

#[test]
fn generated_problems_are_consistent() {
    let t = gen_tomo(16, TomoGeometry::default_for(16), PhantomKind::Shapes).unwrap();
    assert_eq!(t.b, t.a.mul_vec(&t.x_true).unwrap());
    assert!(t.rhs_image_shape().is_none());
    let d = gen_deblur(16, BlurParams::MILD, PhantomKind::Flat).unwrap();
    assert_eq!(d.rhs_image_shape(), Some((16, 16)));
    assert!(gen_deblur(4, BlurParams::MILD, PhantomKind::Flat).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ray_segments_are_bounded(theta in 0.0f64..std::f64::consts::PI, offset in -12.0f64..12.0) {
        let n = 16;
        let segs = ray_pixel_lengths(n, theta, offset);
        let total: f64 = segs.iter().map(|s| s.1).sum();
        prop_assert!(total <= (2.0f64).sqrt() * n as f64 + 1e-9);
        for (pix, len) in segs {
            prop_assert!(pix < n * n);
            prop_assert!(len > 0.0 && len <= (2.0f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn noise_has_requested_relative_norm(level in 0.0f64..0.5, seed in any::<u64>()) {
        let p = gen_deblur(8, BlurParams::MILD, PhantomKind::Shapes).unwrap();
        let q = add_noise(&p, level, seed).unwrap();
        let ne: f64 = q.noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = q.b_exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((ne - level * nb).abs() <= 1e-12 * nb);
    }
}
