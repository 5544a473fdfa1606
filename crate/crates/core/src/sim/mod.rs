//! Deterministic 2D push-world: procedural environment appearance,
//! kinematic pushing dynamics, a scripted expert, a rasterizer, and the
//! dataset generators for demonstrations, weakly labeled images, and
//! closed-loop evaluation.
//!
//! Everything is a pure function of its seeds; the same seed always
//! produces bit-identical specs, states and pixels.

mod data;
mod envspec;
mod render;
mod world;

pub use data::{
    evaluate_policy, gen_demos, gen_weak, rerender_weak, DemoStep, EvalReport, Trajectory,
    WeakExample,
};
pub use envspec::{make_env_sets, BackgroundSpec, EnvSets, EnvironmentSpec, Pattern, ShapeKind, ShapeSpec};
pub use render::{render, RenderOpts, EFFECTOR_COLOR};
pub use world::{expert_action, reset, step, SimState};

/// World-scale constants of the toy push task. All tunable in one place;
/// the defaults train in minutes on a CPU while preserving the structure
/// of the full-scale task (localize the object, approach it, push it to
/// the goal).
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Steps per episode (fixed length; episodes do not end early).
    pub episode_len: usize,
    /// Control period in seconds (20 Hz).
    pub dt: f32,
    /// Per-axis action clip.
    pub a_max: f32,
    /// Effector-object contact radius in world units.
    pub contact_radius: f32,
    /// Success radius around the goal.
    pub goal_radius: f32,
    /// Maximum viewpoint jitter of weak images, in pixels per axis.
    pub jitter_max: i32,
    /// Demonstration resets sample the object inside the central fraction
    /// of the arena; weak images place it over the full arena.
    pub demo_region: f32,
    pub max_distractors: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            image_h: 64,
            image_w: 64,
            episode_len: 40,
            dt: 1.0 / 20.0,
            a_max: 0.5,
            contact_radius: 0.06,
            goal_radius: 0.08,
            jitter_max: 3,
            demo_region: 0.6,
            max_distractors: 3,
        }
    }
}

/// The goal sits at the arena center in every environment; only its
/// marker color varies. A fixed target keeps worst-case push distances
/// inside the episode horizon and matches the fixed-goal pushing setup
/// the expert data mimics.
pub const GOAL_POS: [f32; 2] = [0.5, 0.5];
