use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use tongue_core::registration::{fit_affine, invert, register_sample, residual, AffineTransform};
use tongue_core::synth::render_sample;
use tongue_core::{BoundingQuad, Error, ImageTensor, Label, Point, ReferenceModel, RngSeed};

fn reference() -> BoundingQuad {
    ReferenceModel::default().reference_quad
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fit_then_invert_maps_moving_corners_home(
        a11 in 0.7f64..1.3, a12 in -0.3f64..0.3, a21 in -0.3f64..0.3, a22 in 0.7f64..1.3,
        tx in -40.0f64..40.0, ty in -40.0f64..40.0,
    ) {
        let t = AffineTransform::from_params([a11, a12, tx, a21, a22, ty]);
        prop_assume!(t.det().abs() > 0.2);
        let moving = BoundingQuad::new(reference().corners.map(|p| t.apply(p)));
        let fit = fit_affine(&moving, &reference()).unwrap();
        let back = invert(&fit).unwrap();
        for (m, r) in moving.corners.iter().zip(reference().corners) {
            prop_assert!(back.apply(*m).dist(r) < 1e-9);
        }
        prop_assert!(residual(&fit, &moving, &reference()) < 1e-15);
    }
}

#[test]
fn least_squares_fit_is_a_local_minimum() {
    let mut rng = RngSeed(8).rng();
    let noise = Normal::new(0.0, 2.0).unwrap();
    let moving = BoundingQuad::new(
        reference()
            .corners
            .map(|p| Point::new(1.1 * p.x + 0.1 * p.y + 5.0, -0.05 * p.x + 0.9 * p.y - 3.0))
            .map(|p| Point::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))),
    );
    let fit = fit_affine(&moving, &reference()).unwrap();
    let best = residual(&fit, &moving, &reference());
    assert!(best > 0.0);
    let scales = [1e-4, 1e-4, 1e-2, 1e-4, 1e-4, 1e-2];
    for _ in 0..1000 {
        let mut p = fit.params();
        for (v, s) in p.iter_mut().zip(scales) {
            *v += s * rng.random_range(-1.0..1.0);
        }
        let r = residual(&AffineTransform::from_params(p), &moving, &reference());
        assert!(r >= best - 1e-9, "perturbation lowered residual: {r} < {best}");
    }
}

#[test]
fn jittered_sample_registers_onto_canonical_rendering() {
    for seed in 0..4 {
        let label = if seed % 2 == 0 { Label::Healthy } else { Label::Patient };
        let canonical = render_sample(label, 0.8, 0.0, RngSeed(seed)).unwrap();
        let jittered = render_sample(label, 0.8, 0.08, RngSeed(seed)).unwrap();
        let reg = register_sample(&jittered.image, &jittered.quad, &ReferenceModel::default()).unwrap();
        assert!(reg.corner_error < 1e-9);
        // compare inside the tongue ellipse, away from its rim
        let (mut err, mut n) = (0.0, 0usize);
        for r in 0..512 {
            for c in 0..512 {
                let (dx, dy) = ((c as f64 - 255.5) / 150.0, (r as f64 - 255.5) / 150.0);
                if dx * dx + dy * dy <= 1.0 {
                    for k in 0..3 {
                        err += (reg.image.get(r, c, k) - canonical.image.get(r, c, k)).abs();
                        n += 1;
                    }
                }
            }
        }
        let mae = err / n as f64;
        assert!(mae < 0.02, "seed {seed}: MAE {mae}");
    }
}

#[test]
fn registration_errors() {
    let img = ImageTensor::filled(512, 512, 3, 0.5).unwrap();
    let line = BoundingQuad::from_pairs([[10.0, 10.0], [20.0, 20.0], [30.0, 30.0], [40.0, 40.0]]);
    let err = register_sample(&img, &line, &ReferenceModel::default()).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)));
    assert_eq!(err.exit_class() as i32, 4);
    let outside = BoundingQuad::axis_aligned(100.0, 100.0, 600.0, 400.0);
    assert!(register_sample(&img, &outside, &ReferenceModel::default()).is_err());
}

#[test]
fn identity_quad_leaves_image_unchanged() {
    let img = ImageTensor::from_fn(512, 512, 3, |r, c, k| ((r * 3 + c * 5 + k) % 17) as f64 / 16.0).unwrap();
    let reg = register_sample(&img, &reference(), &ReferenceModel::default()).unwrap();
    assert_eq!(reg.image, img);
    assert!(reg.residual < 1e-20);
}
