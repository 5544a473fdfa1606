//! Property suite for the spatial attention layer: normalization across
//! extreme magnitudes, shift invariance, argmax consistency, translation
//! equivariance, convexity of the expected point, lateral inhibition, and
//! gradient agreement.

use gplac_core::attention::{expected_points, feature_points, spatial_softmax};
use gplac_core::gradcheck::grad_check;
use gplac_core::rng::Rng;
use gplac_core::tape::Tape;
use gplac_core::tensor::Tensor;

fn random_map(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_vec(
        &[n, c, h, w],
        (0..n * c * h * w)
            .map(|_| rng.uniform(-scale, scale))
            .collect(),
    )
    .unwrap()
}

#[test]
fn normalization_holds_across_magnitudes() {
    let mut rng = Rng::new(40);
    for &scale in &[1e-3, 1.0, 1e3] {
        for _ in 0..20 {
            let h = random_map(&mut rng, 2, 3, 5, 6, scale);
            let mut tape = Tape::new();
            let hid = tape.input(&h);
            let z = spatial_softmax(&mut tape, hid, 1.0).unwrap();
            let v = tape.value(z);
            for g in 0..2 * 3 {
                let sum: f64 = v[g * 30..(g + 1) * 30].iter().sum();
                assert!((sum - 1.0).abs() < 1e-6, "scale {scale}: sum {sum}");
                // strictly positive wherever f64 can represent it; at
                // magnitude 1e3 the far tail underflows to exactly 0
                assert!(v[g * 30..(g + 1) * 30].iter().all(|x| x.is_finite() && *x >= 0.0));
                if scale <= 1.0 {
                    assert!(v[g * 30..(g + 1) * 30].iter().all(|x| *x > 0.0));
                }
            }
        }
    }
}

#[test]
fn constant_shift_leaves_weights_and_points_unchanged() {
    let mut rng = Rng::new(41);
    for _ in 0..20 {
        let base = random_map(&mut rng, 1, 2, 4, 5, 2.0);
        let shift = rng.uniform(-30.0, 30.0);
        let shifted = Tensor::from_vec(
            base.shape(),
            base.data().iter().map(|v| v + shift).collect(),
        )
        .unwrap();
        let fa = feature_points(&base, 1.0).unwrap();
        let fb = feature_points(&shifted, 1.0).unwrap();
        for (a, b) in fa.raw.data().iter().zip(fb.raw.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut ta = Tape::new();
        let ia = ta.input(&base);
        let za = spatial_softmax(&mut ta, ia, 1.0).unwrap();
        let mut tb = Tape::new();
        let ib = tb.input(&shifted);
        let zb = spatial_softmax(&mut tb, ib, 1.0).unwrap();
        for (a, b) in ta.value(za).iter().zip(tb.value(zb).iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn argmax_consistency_with_gap_twenty() {
    // A gap of 20 over every competitor on maps up to 16x16 bounds the
    // off-max mass by (HW-1)*e^-20 < 1e-6, so the expected point sits
    // within 1e-6 of the argmax cell.
    let mut rng = Rng::new(42);
    for trial in 0..30 {
        let h = 2 + (trial % 15);
        let w = 2 + ((trial * 7) % 15);
        let mut data: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let i0 = rng.below(h);
        let j0 = rng.below(w);
        let peak = data.iter().cloned().fold(f64::MIN, f64::max) + 20.0;
        data[i0 * w + j0] = peak;
        let fp = feature_points(&Tensor::from_vec(&[1, 1, h, w], data).unwrap(), 1.0).unwrap();
        let want_r = if h > 1 { 2.0 * i0 as f64 / (h - 1) as f64 - 1.0 } else { 0.0 };
        let want_c = if w > 1 { 2.0 * j0 as f64 / (w - 1) as f64 - 1.0 } else { 0.0 };
        assert!((fp.mapped.data()[0] - want_r).abs() < 1e-6);
        assert!((fp.mapped.data()[1] - want_c).abs() < 1e-6);
    }
}

#[test]
fn interior_translation_shifts_raw_points_exactly() {
    // A pattern fully contained in the interior, shifted by (di, dj),
    // shifts the raw expected point by exactly (di, dj).
    let mut rng = Rng::new(43);
    for _ in 0..20 {
        let (h, w) = (9usize, 11usize);
        let mut base = vec![0.0f64; h * w];
        // a strong 3x3 random bump placed so both placements stay
        // interior; strong so the background mass (which does not
        // translate) is negligible at the 1e-5 tolerance
        let bump: Vec<f64> = (0..9).map(|_| rng.uniform(20.0, 23.0)).collect();
        let (bi, bj) = (1 + rng.below(3), 1 + rng.below(3));
        let (di, dj) = (1 + rng.below(3), 1 + rng.below(4));
        for u in 0..3 {
            for v in 0..3 {
                base[(bi + u) * w + (bj + v)] = bump[u * 3 + v];
            }
        }
        let mut moved = vec![0.0f64; h * w];
        for u in 0..3 {
            for v in 0..3 {
                moved[(bi + di + u) * w + (bj + dj + v)] = bump[u * 3 + v];
            }
        }
        let fa = feature_points(&Tensor::from_vec(&[1, 1, h, w], base).unwrap(), 1.0).unwrap();
        let fb = feature_points(&Tensor::from_vec(&[1, 1, h, w], moved).unwrap(), 1.0).unwrap();
        assert!((fb.raw.data()[0] - fa.raw.data()[0] - di as f64).abs() < 1e-5);
        assert!((fb.raw.data()[1] - fa.raw.data()[1] - dj as f64).abs() < 1e-5);
    }
}

#[test]
fn expected_points_stay_inside_the_grid() {
    let mut rng = Rng::new(44);
    for _ in 0..50 {
        let h = 1 + rng.below(8);
        let w = 1 + rng.below(8);
        let map = random_map(&mut rng, 1, 2, h, w, 50.0);
        let fp = feature_points(&map, 1.0).unwrap();
        for ch in 0..2 {
            let r = fp.raw.data()[2 * ch];
            let c = fp.raw.data()[2 * ch + 1];
            assert!(r >= 0.0 && r <= (h - 1) as f64);
            assert!(c >= 0.0 && c <= (w - 1) as f64);
            let mr = fp.mapped.data()[2 * ch];
            let mc = fp.mapped.data()[2 * ch + 1];
            assert!((-1.0..=1.0).contains(&mr));
            assert!((-1.0..=1.0).contains(&mc));
        }
    }
}

#[test]
fn lateral_inhibition_weight_ratio_is_exponential() {
    // Primary spike a, distractor b < a: the distractor's influence is
    // bounded by its softmax weight, and weight(b)/weight(a) = e^(b-a).
    let mut rng = Rng::new(45);
    for _ in 0..20 {
        let (h, w) = (6usize, 6usize);
        let mut data = vec![0.0f64; h * w];
        let a = rng.uniform(5.0, 12.0);
        let b = a - rng.uniform(0.5, 4.0);
        let pa = (1usize, 2usize);
        let pb = (4usize, 3usize);
        data[pa.0 * w + pa.1] = a;
        data[pb.0 * w + pb.1] = b;
        let mut tape = Tape::new();
        let hid = tape.input(&Tensor::from_vec(&[1, 1, h, w], data).unwrap());
        let z = spatial_softmax(&mut tape, hid, 1.0).unwrap();
        let zv = tape.value(z).to_vec();
        let wa = zv[pa.0 * w + pa.1];
        let wb = zv[pb.0 * w + pb.1];
        assert!((wb / wa - (b - a).exp()).abs() < 1e-6);
        // displacement of the expected point off the primary spike is
        // bounded by the mass not on the spike times the grid diameter
        let (raw, _mapped) = expected_points(&mut tape, z).unwrap();
        let r = tape.value(raw)[0];
        let c = tape.value(raw)[1];
        let diam = ((h * h + w * w) as f64).sqrt();
        let bound = (1.0 - wa) * diam;
        assert!(
            ((r - pa.0 as f64).powi(2) + (c - pa.1 as f64).powi(2)).sqrt() <= bound + 1e-9,
            "displacement exceeds weight bound"
        );
    }
}

#[test]
fn full_layer_gradient_matches_finite_differences() {
    let mut rng = Rng::new(46);
    let map = random_map(&mut rng, 1, 2, 4, 5, 2.0);
    let coeffs = random_map(&mut rng, 1, 2, 2, 1, 1.0); // reshaped below
    let co = Tensor::from_vec(&[1, 4], coeffs.data().to_vec()).unwrap();
    let err = grad_check(
        |tape, id| {
            let z = tape.spatial_softmax(id, 1.0)?;
            let raw = tape.expected_points(z)?;
            let mapped = tape.map_points(raw, 4, 5)?;
            let c = tape.input(&co);
            let prod = tape.mul(mapped, c)?;
            Ok(tape.sum_all(prod))
        },
        &map,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "err {err}");
}
