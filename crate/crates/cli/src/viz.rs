//! Feature-point visualization: overlay the attention layer's expected
//! coordinates on input images, export the coordinate table, and measure
//! how tightly the points cluster on the object.

use crate::config::Config;
use crate::dataset::write_ppm;
use crate::train::image_batch;
use crate::{Error, Result};
use gplac_core::attention;
use gplac_core::model::GplacModel;
use gplac_core::rng::{stream_seed, Rng};
use gplac_core::sim::{render, EnvironmentSpec, RenderOpts, SimConfig, SimState, GOAL_POS};
use gplac_core::tape::{Mode, Tape};
use std::path::Path;

pub const POINT_COLOR: [u8; 3] = [40, 90, 255];

/// Draw a small ring at each (row_px, col_px) point.
pub fn overlay_points(image: &mut [u8], h: usize, w: usize, points_px: &[(f32, f32)]) {
    for &(pr, pc) in points_px {
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let d2 = dy * dy + dx * dx;
                if !(2..=6).contains(&d2) {
                    continue; // ring, not disc
                }
                let y = pr.round() as i32 + dy;
                let x = pc.round() as i32 + dx;
                if y < 0 || x < 0 || y >= h as i32 || x >= w as i32 {
                    continue;
                }
                let at = (y as usize * w + x as usize) * 3;
                image[at..at + 3].copy_from_slice(&POINT_COLOR);
            }
        }
    }
}

/// Feature points of one image under a trained attention model, in image
/// pixels, plus the raw/mapped coordinate rows for the CSV.
pub struct ImagePoints {
    /// (row_px, col_px) per channel.
    pub points_px: Vec<(f32, f32)>,
    /// (channel, row_raw, col_raw, row_mapped, col_mapped).
    pub rows: Vec<(usize, f32, f32, f32, f32)>,
}

pub fn feature_points_for_image(
    model: &mut GplacModel<f32>,
    image: &[u8],
    h: usize,
    w: usize,
) -> Result<ImagePoints> {
    if !model.arch.use_attention {
        return Err(Error::Usage(
            "no feature points to visualize: checkpoint is a plain CNN variant".into(),
        ));
    }
    let batch = image_batch(&[image], h, w);
    let mut tape = Tape::new();
    let img = tape.input(&batch);
    let hmap = model.forward_trunk(&mut tape, img, Mode::Eval).map_err(Error::from)?;
    let fp = attention::feature_points(&tape.value_tensor(hmap), model.arch.temperature as f32)
        .map_err(Error::from)?;
    let c = fp.channels;
    let mut points_px = Vec::with_capacity(c);
    let mut rows = Vec::with_capacity(c);
    for ch in 0..c {
        let rr = fp.raw.data()[2 * ch];
        let rc = fp.raw.data()[2 * ch + 1];
        let mr = fp.mapped.data()[2 * ch];
        let mc = fp.mapped.data()[2 * ch + 1];
        points_px.push((
            (mr + 1.0) / 2.0 * (h as f32 - 1.0),
            (mc + 1.0) / 2.0 * (w as f32 - 1.0),
        ));
        rows.push((ch, rr, rc, mr, mc));
    }
    Ok(ImagePoints { points_px, rows })
}

/// Fixed probe scene for one (spec, index): an object-bearing weak-style
/// image with known object position and no effector.
pub fn probe_image(
    spec: &EnvironmentSpec,
    sim: &SimConfig,
    seed: u64,
) -> (Vec<u8>, [f32; 2]) {
    let mut rng = Rng::new(seed);
    let object_pos = [
        rng.uniform(0.15, 0.85) as f32,
        rng.uniform(0.15, 0.85) as f32,
    ];
    let distractor_pos = spec
        .distractors
        .iter()
        .map(|_| loop {
            let p = [
                rng.uniform(0.05, 0.95) as f32,
                rng.uniform(0.05, 0.95) as f32,
            ];
            let dx = p[0] - object_pos[0];
            let dy = p[1] - object_pos[1];
            if (dx * dx + dy * dy).sqrt() >= 0.12 {
                break p;
            }
        })
        .collect();
    let state = SimState {
        object_pos,
        effector_pos: [0.5, 0.5],
        effector_vel: [0.0, 0.0],
        goal_pos: GOAL_POS,
        distractor_pos,
        t: 0,
    };
    let img = render(
        spec,
        &state,
        sim,
        RenderOpts {
            include_effector: false,
            include_object: true,
            jitter: (0, 0),
        },
    );
    (img, object_pos)
}

pub struct VizSummary {
    pub images: usize,
    /// Mean distance from feature points to the object centroid, in
    /// pixels, over all channels and images.
    pub mean_point_to_object_px: f32,
}

/// Mean feature-point-to-object distance of a model over fixed probe
/// scenes on the given specs. Deterministic for a fixed seed.
pub fn mean_point_distance(
    model: &mut GplacModel<f32>,
    specs: &[EnvironmentSpec],
    sim: &SimConfig,
    per_spec: usize,
    seed: u64,
) -> Result<f32> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for spec in specs {
        for k in 0..per_spec {
            let (img, opos) = probe_image(
                spec,
                sim,
                stream_seed(seed, &format!("probe_{}_{k}", spec.env_id)),
            );
            let pts = feature_points_for_image(model, &img, sim.image_h, sim.image_w)?;
            let oy = opos[1] * sim.image_h as f32;
            let ox = opos[0] * sim.image_w as f32;
            for (pr, pc) in &pts.points_px {
                total += (((pr - oy).powi(2) + (pc - ox).powi(2)) as f64).sqrt();
                count += 1;
            }
        }
    }
    Ok((total / count.max(1) as f64) as f32)
}

/// Render overlays and the coordinate CSV for probe scenes from every
/// test environment; reports the mean point-to-object distance.
pub fn viz_features(
    model: &mut GplacModel<f32>,
    specs: &[EnvironmentSpec],
    cfg: &Config,
    out_dir: &Path,
) -> Result<VizSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(e, out_dir))?;
    let sim = cfg.sim();
    let mut csv = String::from("sample_id,channel,row_raw,col_raw,row_mapped,col_mapped\n");
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut sample_id = 0usize;
    for spec in specs {
        for k in 0..cfg.viz_per_env {
            let (img, opos) = probe_image(
                spec,
                &sim,
                stream_seed(cfg.seed, &format!("probe_{}_{k}", spec.env_id)),
            );
            let pts = feature_points_for_image(model, &img, sim.image_h, sim.image_w)?;
            for (ch, rr, rc, mr, mc) in &pts.rows {
                csv.push_str(&format!("{sample_id},{ch},{rr},{rc},{mr},{mc}\n"));
            }
            let oy = opos[1] * sim.image_h as f32;
            let ox = opos[0] * sim.image_w as f32;
            for (pr, pc) in &pts.points_px {
                total += (((pr - oy).powi(2) + (pc - ox).powi(2)) as f64).sqrt();
                count += 1;
            }
            let mut overlay = img.clone();
            overlay_points(&mut overlay, sim.image_h, sim.image_w, &pts.points_px);
            write_ppm(
                &out_dir.join(format!("overlay_env{:02}_{k:02}.ppm", spec.env_id)),
                sim.image_w,
                sim.image_h,
                &overlay,
            )?;
            sample_id += 1;
        }
    }
    let csv_path = out_dir.join("feature_points.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(e, &csv_path))?;
    Ok(VizSummary {
        images: sample_id,
        mean_point_to_object_px: (total / count.max(1) as f64) as f32,
    })
}
