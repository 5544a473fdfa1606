//! Spatial soft-argmax attention: a per-channel softmax over the spatial
//! positions of the last convolutional map, followed by the expected
//! (row, col) coordinate of each channel. The 2C coordinates are the only
//! signal that crosses from the convolutional trunk into either head,
//! which is what suppresses distractors: the exponential weighting damps
//! every non-maximal activation, so a weaker spurious feature moves the
//! expected point by at most its (exponentially small) softmax weight.

use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Mode, Tape, ValueId};
use crate::tensor::Tensor;

/// Expected coordinates of one forward pass, exported for visualization
/// and tests. `raw` is in grid-index units of the activation map; `mapped`
/// is the affine rescale onto [-1,1] per axis (exactly 0 for an axis of
/// length 1). Layout per sample: (row_1, col_1, row_2, col_2, ...).
#[derive(Debug, Clone)]
pub struct FeaturePoints<S: Scalar> {
    pub raw: Tensor<S>,
    pub mapped: Tensor<S>,
    pub channels: usize,
    pub map_rows: usize,
    pub map_cols: usize,
}

/// Spatial softmax z = softmax_{i,j}(h / T) per (n, c) group.
/// Temperature 1 is the plain exponent form.
pub fn spatial_softmax<S: Scalar>(
    tape: &mut Tape<S>,
    h: ValueId,
    temperature: S,
) -> Result<ValueId> {
    tape.spatial_softmax(h, temperature)
}

/// Expected grid coordinates under a spatial distribution. Returns
/// (raw, mapped) ids; `raw` is what the distribution integrates to,
/// `mapped` is raw rescaled onto [-1,1].
pub fn expected_points<S: Scalar>(tape: &mut Tape<S>, z: ValueId) -> Result<(ValueId, ValueId)> {
    let shape = tape.shape(z).to_vec();
    let (rows, cols) = (shape[2], shape[3]);
    let raw = tape.expected_points(z)?;
    let mapped = tape.map_points(raw, rows, cols)?;
    Ok((raw, mapped))
}

/// The full attention layer: spatial softmax, expected points, then
/// dropout on the coordinate vector (identity in eval mode).
pub fn attention_layer<S: Scalar>(
    tape: &mut Tape<S>,
    h: ValueId,
    temperature: S,
    dropout_p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ValueId> {
    let z = spatial_softmax(tape, h, temperature)?;
    let (_raw, mapped) = expected_points(tape, z)?;
    tape.dropout(mapped, dropout_p, mode, rng)
}

/// Eval-mode feature points of an activation map, with both coordinate
/// systems materialized. Used by the visualization path and tests.
pub fn feature_points<S: Scalar>(h: &Tensor<S>, temperature: S) -> Result<FeaturePoints<S>> {
    let shape = h.shape().to_vec();
    let mut tape = Tape::new();
    let hid = tape.input(h);
    let z = spatial_softmax(&mut tape, hid, temperature)?;
    let (raw, mapped) = expected_points(&mut tape, z)?;
    Ok(FeaturePoints {
        raw: tape.value_tensor(raw),
        mapped: tape.value_tensor(mapped),
        channels: shape[1],
        map_rows: shape[2],
        map_cols: shape[3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Mode;

    fn map4<S: Scalar>(n: usize, c: usize, h: usize, w: usize, data: &[f64]) -> Tensor<S> {
        Tensor::from_vec(&[n, c, h, w], data.iter().map(|v| S::from_f64(*v)).collect()).unwrap()
    }

    #[test]
    fn constant_map_gives_uniform_weights() {
        let h = map4::<f64>(1, 1, 3, 4, &[2.5; 12]);
        let mut tape = Tape::new();
        let hid = tape.input(&h);
        let z = spatial_softmax(&mut tape, hid, 1.0).unwrap();
        for v in tape.value(z) {
            assert!((v - 1.0 / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cell_map_has_weight_one() {
        let h = map4::<f64>(1, 1, 1, 1, &[-7.0]);
        let mut tape = Tape::new();
        let hid = tape.input(&h);
        let z = spatial_softmax(&mut tape, hid, 1.0).unwrap();
        assert_eq!(tape.value(z), &[1.0]);
    }

    #[test]
    fn two_cell_map_quarters() {
        // h = [0, ln 3] at T=1: weights e^0/(e^0+3) = 0.25 and 3/4.
        let h = map4::<f64>(1, 1, 1, 2, &[0.0, 3.0f64.ln()]);
        let mut tape = Tape::new();
        let hid = tape.input(&h);
        let z = spatial_softmax(&mut tape, hid, 1.0).unwrap();
        let v = tape.value(z);
        assert!((v[0] - 0.25).abs() < 1e-12);
        assert!((v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn uniform_distribution_maps_to_origin() {
        let h = map4::<f64>(1, 2, 5, 7, &[0.0; 70]);
        let fp = feature_points(&h, 1.0).unwrap();
        for v in fp.mapped.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn corner_one_hot_maps_to_minus_one() {
        // A sharp spike at (0,0) on 5x5: mapped point (-1,-1).
        let mut data = vec![0.0; 25];
        data[0] = 1e4;
        let h = map4::<f64>(1, 1, 5, 5, &data);
        let fp = feature_points(&h, 1.0).unwrap();
        assert!((fp.mapped.data()[0] + 1.0).abs() < 1e-9);
        assert!((fp.mapped.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_by_two_grid_example() {
        // z = [0.25, 0.75]: raw col 0.75, mapped (0, 0.5); the row axis has
        // length 1 so its mapped coordinate is exactly 0.
        let h = map4::<f64>(1, 1, 1, 2, &[0.0, 3.0f64.ln()]);
        let fp = feature_points(&h, 1.0).unwrap();
        assert!((fp.raw.data()[1] - 0.75).abs() < 1e-12);
        assert_eq!(fp.mapped.data()[0], 0.0);
        assert!((fp.mapped.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sharp_spike_lands_on_its_cell() {
        // Spike of 50 at (i0,j0), zeros elsewhere: softmax weight off the
        // spike is <= (HW-1) e^-50, so the point is within 1e-3 of the
        // mapped spike position.
        let (hh, ww, i0, j0) = (6usize, 5usize, 4usize, 1usize);
        let mut data = vec![0.0; hh * ww];
        data[i0 * ww + j0] = 50.0;
        let h = map4::<f64>(1, 1, hh, ww, &data);
        let fp = feature_points(&h, 1.0).unwrap();
        let want_r = 2.0 * i0 as f64 / (hh - 1) as f64 - 1.0;
        let want_c = 2.0 * j0 as f64 / (ww - 1) as f64 - 1.0;
        assert!((fp.mapped.data()[0] - want_r).abs() < 1e-3);
        assert!((fp.mapped.data()[1] - want_c).abs() < 1e-3);
    }

    #[test]
    fn mirrored_spikes_average_to_midpoint() {
        let (hh, ww) = (5usize, 5usize);
        let mut data = vec![0.0; hh * ww];
        data[1 * ww + 1] = 9.0;
        data[3 * ww + 3] = 9.0;
        let h = map4::<f64>(1, 1, hh, ww, &data);
        let fp = feature_points(&h, 1.0).unwrap();
        // midpoint of (1,1) and (3,3) is (2,2) -> mapped (0,0)
        assert!(fp.mapped.data()[0].abs() < 1e-9);
        assert!(fp.mapped.data()[1].abs() < 1e-9);
    }

    #[test]
    fn eval_layer_reduces_to_softmax_then_expectation() {
        let mut rng = Rng::new(5);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let h = map4::<f64>(2, 3, 4, 4, &data);
        let mut tape = Tape::new();
        let hid = tape.input(&h);
        let out = attention_layer(&mut tape, hid, 1.0, 0.5, Mode::Eval, &mut rng).unwrap();
        let fp = feature_points(&h, 1.0).unwrap();
        assert_eq!(tape.value(out), fp.mapped.data());
    }
}
