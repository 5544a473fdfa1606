//! Deterministic rasterizer. A pixel's color is a pure function of the
//! environment spec, the state, the draw flags and the viewpoint jitter,
//! so identical inputs give bit-identical images across runs and
//! platforms.

use crate::sim::envspec::{EnvironmentSpec, Pattern, ShapeKind, ShapeSpec};
use crate::sim::world::SimState;
use crate::sim::SimConfig;

/// Reserved effector signature color. Palette sampling keeps every other
/// scene color well away from it (see envspec), so scanning for this
/// exact value detects effector pixels reliably.
pub const EFFECTOR_COLOR: [u8; 3] = [255, 0, 255];

/// Effector disc radius in pixels.
pub const EFFECTOR_RADIUS_PX: f32 = 2.5;

#[derive(Debug, Clone, Copy)]
pub struct RenderOpts {
    pub include_effector: bool,
    /// Omit the pushed object (negative weak examples).
    pub include_object: bool,
    /// Whole-scene translation in pixels; the uncovered band fills with
    /// the background pattern extended past the frame.
    pub jitter: (i32, i32),
}

impl Default for RenderOpts {
    fn default() -> Self {
        RenderOpts {
            include_effector: true,
            include_object: true,
            jitter: (0, 0),
        }
    }
}

/// Deterministic per-pixel noise in [-amp, amp] per channel, computed in
/// scene coordinates so it translates together with the jittered scene.
fn pixel_noise(seed: u64, sx: i32, sy: i32, amp: u8) -> [i16; 3] {
    if amp == 0 {
        return [0, 0, 0];
    }
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (sx as i64 as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h = h.rotate_left(27) ^ (h >> 33);
    h ^= (sy as i64 as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    let span = 2 * amp as i64 + 1;
    let pick = |shift: u32| ((h >> shift) as i64).rem_euclid(span) as i16 - amp as i16;
    [pick(0), pick(21), pick(42)]
}

fn background_at(spec: &EnvironmentSpec, sx: i32, sy: i32) -> [u8; 3] {
    let bg = &spec.background;
    let period = bg.period.max(1) as i32;
    let use_pattern = match bg.pattern {
        Pattern::Plain => false,
        Pattern::StripesH => sy.div_euclid(period).rem_euclid(2) == 0,
        Pattern::StripesV => sx.div_euclid(period).rem_euclid(2) == 0,
        Pattern::Checker => {
            (sx.div_euclid(period) + sy.div_euclid(period)).rem_euclid(2) == 0
        }
    };
    let base = if use_pattern { bg.pattern_color } else { bg.base };
    let n = pixel_noise(spec.appearance_seed, sx, sy, bg.noise_amp);
    [
        (base[0] as i16 + n[0]).clamp(0, 255) as u8,
        (base[1] as i16 + n[1]).clamp(0, 255) as u8,
        (base[2] as i16 + n[2]).clamp(0, 255) as u8,
    ]
}

fn inside(shape: &ShapeSpec, px: f32, py: f32, cx: f32, cy: f32) -> bool {
    let dx = px - cx;
    let dy = py - cy;
    let s = shape.size_px;
    match shape.shape {
        ShapeKind::Disc => dx * dx + dy * dy <= s * s,
        ShapeKind::Square => dx.abs() <= s && dy.abs() <= s,
        // point-up isoceles triangle: width grows linearly downward
        ShapeKind::Triangle => dy >= -s && dy <= s && dx.abs() <= (dy + s) * 0.5,
    }
}

/// Rasterize the scene. Paint order per pixel: background, goal marker,
/// distractors, object, then the effector.
pub fn render(
    spec: &EnvironmentSpec,
    state: &SimState,
    cfg: &SimConfig,
    opts: RenderOpts,
) -> Vec<u8> {
    let (h, w) = (cfg.image_h, cfg.image_w);
    let to_px = |p: [f32; 2]| -> (f32, f32) { (p[0] * w as f32, p[1] * h as f32) };
    let goal_px = to_px(state.goal_pos);
    let goal_r = cfg.goal_radius * w as f32;
    let object_px = to_px(state.object_pos);
    let eff_px = to_px(state.effector_pos);
    let mut img = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let sx = x as i32 - opts.jitter.0;
            let sy = y as i32 - opts.jitter.1;
            // pixel-center sample position in scene coordinates
            let fx = sx as f32 + 0.5;
            let fy = sy as f32 + 0.5;
            let mut color = background_at(spec, sx, sy);
            let dgx = fx - goal_px.0;
            let dgy = fy - goal_px.1;
            if dgx * dgx + dgy * dgy <= goal_r * goal_r {
                color = spec.goal_color;
            }
            for (d, pos) in spec.distractors.iter().zip(state.distractor_pos.iter()) {
                let (cx, cy) = to_px(*pos);
                if inside(d, fx, fy, cx, cy) {
                    color = d.color;
                }
            }
            if opts.include_object && inside(&spec.object, fx, fy, object_px.0, object_px.1) {
                color = spec.object.color;
            }
            if opts.include_effector {
                let dex = fx - eff_px.0;
                let dey = fy - eff_px.1;
                if dex * dex + dey * dey <= EFFECTOR_RADIUS_PX * EFFECTOR_RADIUS_PX {
                    color = EFFECTOR_COLOR;
                }
            }
            let at = (y * w + x) * 3;
            img[at..at + 3].copy_from_slice(&color);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::sim::envspec::sample_spec;
    use crate::sim::world::reset;

    fn setup() -> (EnvironmentSpec, SimState, SimConfig) {
        let cfg = SimConfig::default();
        let spec = sample_spec(0, 987, 3).unwrap();
        let mut rng = Rng::new(5);
        let state = reset(&spec, &cfg, &mut rng);
        (spec, state, cfg)
    }

    #[test]
    fn render_is_bit_deterministic() {
        let (spec, state, cfg) = setup();
        let a = render(&spec, &state, &cfg, RenderOpts::default());
        let b = render(&spec, &state, &cfg, RenderOpts::default());
        assert_eq!(a, b);
    }

    #[test]
    fn effector_toggle_only_touches_its_footprint() {
        let (spec, state, cfg) = setup();
        let with = render(&spec, &state, &cfg, RenderOpts::default());
        let without = render(
            &spec,
            &state,
            &cfg,
            RenderOpts {
                include_effector: false,
                ..Default::default()
            },
        );
        let (ex, ey) = (
            state.effector_pos[0] * cfg.image_w as f32,
            state.effector_pos[1] * cfg.image_h as f32,
        );
        for y in 0..cfg.image_h {
            for x in 0..cfg.image_w {
                let at = (y * cfg.image_w + x) * 3;
                if with[at..at + 3] != without[at..at + 3] {
                    let dx = x as f32 + 0.5 - ex;
                    let dy = y as f32 + 0.5 - ey;
                    assert!(
                        dx * dx + dy * dy <= EFFECTOR_RADIUS_PX * EFFECTOR_RADIUS_PX,
                        "difference outside effector footprint at ({x},{y})"
                    );
                }
            }
        }
    }

    #[test]
    fn jitter_is_a_pixel_shift_with_background_fill() {
        // Constrain the scene to the interior so the uncovered band is
        // pure background.
        let cfg = SimConfig::default();
        let spec = sample_spec(1, 55, 2).unwrap();
        let state = SimState {
            object_pos: [0.5, 0.4],
            effector_pos: [0.6, 0.6],
            effector_vel: [0.0, 0.0],
            goal_pos: [0.5, 0.5],
            distractor_pos: spec.distractors.iter().map(|_| [0.4, 0.6]).collect(),
            t: 0,
        };
        let plain = render(&spec, &state, &cfg, RenderOpts::default());
        let jit = render(
            &spec,
            &state,
            &cfg,
            RenderOpts {
                jitter: (2, 0),
                ..Default::default()
            },
        );
        let w = cfg.image_w;
        // shift-by-2 oracle over the overlapping region
        for y in 0..cfg.image_h {
            for x in 2..w {
                let a = (y * w + x) * 3;
                let b = (y * w + (x - 2)) * 3;
                assert_eq!(&jit[a..a + 3], &plain[b..b + 3], "at ({x},{y})");
            }
        }
        // the two uncovered columns contain no shape colors
        for y in 0..cfg.image_h {
            for x in 0..2 {
                let at = (y * w + x) * 3;
                let px: [u8; 3] = jit[at..at + 3].try_into().unwrap();
                assert_ne!(px, spec.object.color);
                assert_ne!(px, spec.goal_color);
                assert_ne!(px, EFFECTOR_COLOR);
                for d in &spec.distractors {
                    assert_ne!(px, d.color);
                }
            }
        }
    }

    #[test]
    fn object_toggle_differs_only_in_object_footprint() {
        let (spec, state, cfg) = setup();
        let pos = render(
            &spec,
            &state,
            &cfg,
            RenderOpts {
                include_effector: false,
                ..Default::default()
            },
        );
        let neg = render(
            &spec,
            &state,
            &cfg,
            RenderOpts {
                include_effector: false,
                include_object: false,
                ..Default::default()
            },
        );
        let (ox, oy) = (
            state.object_pos[0] * cfg.image_w as f32,
            state.object_pos[1] * cfg.image_h as f32,
        );
        let r = spec.object.size_px;
        for y in 0..cfg.image_h {
            for x in 0..cfg.image_w {
                let at = (y * cfg.image_w + x) * 3;
                if pos[at..at + 3] != neg[at..at + 3] {
                    let dx = x as f32 + 0.5 - ox;
                    let dy = y as f32 + 0.5 - oy;
                    assert!(dx * dx + dy * dy <= r * r);
                }
            }
        }
    }
}
