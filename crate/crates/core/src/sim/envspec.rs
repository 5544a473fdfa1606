//! Procedural environment appearance. One spec pins everything needed to
//! re-render an environment bit-exactly: background texture parameters,
//! the pushed object's look, distractor looks, and the goal marker color.

use crate::error::{Error, Result};
use crate::rng::{indexed_seed, Rng};
use crate::sim::render::EFFECTOR_COLOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShapeSpec {
    pub shape: ShapeKind,
    pub color: [u8; 3],
    /// Radius / half-extent in pixels.
    pub size_px: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Pattern {
    Plain,
    StripesH,
    StripesV,
    Checker,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BackgroundSpec {
    pub base: [u8; 3],
    pub pattern: Pattern,
    pub pattern_color: [u8; 3],
    /// Pattern period in pixels.
    pub period: u8,
    /// Per-channel amplitude of the deterministic pixel noise.
    pub noise_amp: u8,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvironmentSpec {
    pub env_id: u32,
    pub appearance_seed: u64,
    pub background: BackgroundSpec,
    pub object: ShapeSpec,
    pub distractors: Vec<ShapeSpec>,
    pub goal_color: [u8; 3],
}

/// The three environment sets of one experiment. The labeled environment
/// is also the first weak environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSets {
    pub weak: Vec<EnvironmentSpec>,
    pub test: Vec<EnvironmentSpec>,
}

impl EnvSets {
    pub fn labeled(&self) -> &EnvironmentSpec {
        &self.weak[0]
    }
}

fn color_dist(a: [u8; 3], b: [u8; 3]) -> f64 {
    let d = |x: u8, y: u8| (x as f64 - y as f64) * (x as f64 - y as f64);
    (d(a[0], b[0]) + d(a[1], b[1]) + d(a[2], b[2])).sqrt()
}

fn linf(a: [u8; 3], b: [u8; 3]) -> u8 {
    let d = |x: u8, y: u8| x.abs_diff(y);
    d(a[0], b[0]).max(d(a[1], b[1])).max(d(a[2], b[2]))
}

/// Noise can shift a background pixel by at most `noise_amp` per channel,
/// so keeping every palette color at least this far (L-inf) from the
/// effector signature guarantees no non-effector pixel ever equals it.
const EFFECTOR_CLEARANCE: u8 = 40;
const MAX_NOISE_AMP: u8 = 6;

fn rand_color(rng: &mut Rng) -> [u8; 3] {
    [
        rng.below(256) as u8,
        rng.below(256) as u8,
        rng.below(256) as u8,
    ]
}

fn rand_color_away(rng: &mut Rng, away_from: &[( [u8; 3], f64)]) -> Result<[u8; 3]> {
    for _ in 0..2000 {
        let c = rand_color(rng);
        if linf(c, EFFECTOR_COLOR) < EFFECTOR_CLEARANCE {
            continue;
        }
        if away_from.iter().all(|(o, d)| color_dist(c, *o) >= *d) {
            return Ok(c);
        }
    }
    Err(Error::Generation(
        "could not sample a color satisfying the distinctness constraints".into(),
    ))
}

/// Sample one environment's appearance from its seed.
///
/// The pushed object is always a disc: that is the visual category the
/// weakly labeled data teaches across environments, playing the role the
/// object class plays at full scale. Distractors are squares and
/// triangles, each at least a minimum RGB distance from the object so the
/// two are visually distinct, and every palette color stays clear of the
/// reserved effector color.
pub fn sample_spec(env_id: u32, appearance_seed: u64, max_distractors: usize) -> Result<EnvironmentSpec> {
    let mut rng = Rng::new(appearance_seed);
    let base = rand_color_away(&mut rng, &[])?;
    let pattern = match rng.below(4) {
        0 => Pattern::Plain,
        1 => Pattern::StripesH,
        2 => Pattern::StripesV,
        _ => Pattern::Checker,
    };
    // The pattern is a muted tint of the base: backgrounds vary strongly
    // across environments (hue, pattern family, period) but stay
    // low-contrast within an image, so foreground shapes carry the
    // dominant activations.
    let pattern_color = {
        let mut c = base;
        for ch in c.iter_mut() {
            let delta = rng.uniform(14.0, 40.0) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            *ch = (*ch as f64 + delta).clamp(0.0, 255.0) as u8;
        }
        if linf(c, EFFECTOR_COLOR) < EFFECTOR_CLEARANCE {
            // fall back to a darker tint away from the reserved color
            for ch in c.iter_mut() {
                *ch = ch.saturating_sub(48);
            }
        }
        c
    };
    let period = 6 + rng.below(10) as u8;
    let noise_amp = rng.below(MAX_NOISE_AMP as usize + 1) as u8;
    let background = BackgroundSpec {
        base,
        pattern,
        pattern_color,
        period,
        noise_amp,
    };

    let object_color = rand_color_away(&mut rng, &[(base, 90.0), (pattern_color, 90.0)])?;
    let object = ShapeSpec {
        shape: ShapeKind::Disc,
        color: object_color,
        size_px: rng.uniform(3.6, 5.4) as f32,
    };

    let goal_color = rand_color_away(
        &mut rng,
        &[(base, 60.0), (pattern_color, 60.0), (object_color, 80.0)],
    )?;

    // at least one distractor: negative images must always contain
    // salient foreground shapes, so "something salient is present" can
    // never separate the classes
    let n_distractors = 1 + rng.below(max_distractors.max(1));
    let mut distractors = Vec::with_capacity(n_distractors);
    for _ in 0..n_distractors {
        let color = rand_color_away(
            &mut rng,
            &[(object_color, 90.0), (base, 50.0), (pattern_color, 50.0)],
        )?;
        let shape = if rng.bernoulli(0.5) {
            ShapeKind::Square
        } else {
            ShapeKind::Triangle
        };
        distractors.push(ShapeSpec {
            shape,
            color,
            size_px: rng.uniform(2.8, 5.2) as f32,
        });
    }

    Ok(EnvironmentSpec {
        env_id,
        appearance_seed,
        background,
        object,
        distractors,
        goal_color,
    })
}

/// Build the weak and unseen environment sets. The labeled environment is
/// `weak[0]`; appearance seeds are pairwise distinct across both sets.
pub fn make_env_sets(
    n_weak: usize,
    n_test: usize,
    master_seed: u64,
    max_distractors: usize,
) -> Result<EnvSets> {
    if n_weak < 1 {
        return Err(Error::Usage("need at least one weak environment".into()));
    }
    let mut used = Vec::new();
    let mut draw_seed = |rng: &mut Rng| -> Result<u64> {
        for _ in 0..1000 {
            let s = rng.next_u64();
            if !used.contains(&s) {
                used.push(s);
                return Ok(s);
            }
        }
        Err(Error::Generation(
            "appearance seed collisions exhausted retries".into(),
        ))
    };
    let mut rng = Rng::new(indexed_seed(master_seed, "envs", 0));
    let mut weak = Vec::with_capacity(n_weak);
    for i in 0..n_weak {
        let s = draw_seed(&mut rng)?;
        weak.push(sample_spec(i as u32, s, max_distractors)?);
    }
    let mut test = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let s = draw_seed(&mut rng)?;
        test.push(sample_spec((n_weak + i) as u32, s, max_distractors)?);
    }
    Ok(EnvSets { weak, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_shared_labeled_env() {
        let sets = make_env_sets(40, 40, 123, 3).unwrap();
        assert_eq!(sets.weak.len(), 40);
        assert_eq!(sets.test.len(), 40);
        // the labeled environment IS the first weak environment
        assert_eq!(sets.labeled(), &sets.weak[0]);
    }

    #[test]
    fn same_master_seed_same_specs() {
        let a = make_env_sets(8, 8, 7, 3).unwrap();
        let b = make_env_sets(8, 8, 7, 3).unwrap();
        assert_eq!(a, b);
        let c = make_env_sets(8, 8, 8, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn appearance_seeds_pairwise_distinct() {
        let sets = make_env_sets(16, 16, 99, 3).unwrap();
        let mut seeds: Vec<u64> = sets
            .weak
            .iter()
            .chain(sets.test.iter())
            .map(|s| s.appearance_seed)
            .collect();
        let n = seeds.len();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), n);
    }

    #[test]
    fn object_distinct_from_distractors_and_effector() {
        let sets = make_env_sets(24, 0, 5, 3).unwrap();
        for spec in &sets.weak {
            assert_eq!(spec.object.shape, ShapeKind::Disc);
            for d in &spec.distractors {
                assert!(color_dist(spec.object.color, d.color) >= 90.0);
                assert_ne!(d.shape, ShapeKind::Disc);
            }
            for c in [
                spec.background.base,
                spec.background.pattern_color,
                spec.object.color,
                spec.goal_color,
            ] {
                assert!(linf(c, EFFECTOR_COLOR) >= EFFECTOR_CLEARANCE);
            }
            assert!(spec.distractors.len() <= 3);
        }
    }
}
