//! Kinematic world state, the pushing dynamics, and the scripted expert.

use crate::rng::Rng;
use crate::sim::envspec::EnvironmentSpec;
use crate::sim::{SimConfig, GOAL_POS};

/// Full state of one episode. Positions are world coordinates in [0,1]^2.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub object_pos: [f32; 2],
    pub effector_pos: [f32; 2],
    pub effector_vel: [f32; 2],
    pub goal_pos: [f32; 2],
    pub distractor_pos: Vec<[f32; 2]>,
    pub t: u32,
}

impl SimState {
    /// [effector x, y, vx, vy] as fed to the policy head.
    pub fn robot_state(&self) -> [f32; 4] {
        [
            self.effector_pos[0],
            self.effector_pos[1],
            self.effector_vel[0],
            self.effector_vel[1],
        ]
    }

    pub fn object_at_goal(&self, cfg: &SimConfig) -> bool {
        dist(self.object_pos, self.goal_pos) <= cfg.goal_radius
    }
}

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

fn clamp01(p: [f32; 2]) -> [f32; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

pub fn clip_action(a: [f32; 2], cfg: &SimConfig) -> [f32; 2] {
    [
        a[0].clamp(-cfg.a_max, cfg.a_max),
        a[1].clamp(-cfg.a_max, cfg.a_max),
    ]
}

/// Episode reset. The object lands uniformly in the central demo region
/// (at least 0.2 away from the goal); the effector starts at a uniformly
/// random angle around the object at a randomized distance, so its own
/// position carries no information about where the object is -- the
/// policy must find the object visually. The distance range keeps the
/// expert's worst approach-plus-push path inside the episode horizon.
/// Distractor positions resample every episode.
pub fn reset(spec: &EnvironmentSpec, cfg: &SimConfig, rng: &mut Rng) -> SimState {
    let margin = (1.0 - cfg.demo_region as f64) / 2.0;
    let goal = GOAL_POS;
    let object_pos = loop {
        let p = [
            rng.uniform(margin, 1.0 - margin) as f32,
            rng.uniform(margin, 1.0 - margin) as f32,
        ];
        if dist(p, goal) >= 0.2 {
            break p;
        }
    };
    let theta = rng.uniform(0.0, core::f64::consts::TAU);
    let (sin, cos) = theta.sin_cos();
    let d = rng.uniform(0.10, 0.32) as f32;
    let behind = [
        object_pos[0] + d * cos as f32,
        object_pos[1] + d * sin as f32,
    ];
    let distractor_pos = spec
        .distractors
        .iter()
        .map(|_| loop {
            let p = [
                rng.uniform(0.05, 0.95) as f32,
                rng.uniform(0.05, 0.95) as f32,
            ];
            // keep scenery off the object so it stays identifiable
            if dist(p, object_pos) >= 0.12 {
                break p;
            }
        })
        .collect();
    SimState {
        object_pos,
        effector_pos: clamp01(behind),
        effector_vel: [0.0, 0.0],
        goal_pos: goal,
        distractor_pos,
        t: 0,
    }
}

/// One control step. The effector integrates the clipped action; if it
/// ends within the contact radius of the object, the object slides along
/// the effector-to-object direction by the projected effector
/// displacement (a frictionless kinematic push; the object can never be
/// pulled and never moves farther than the effector did). Positions clamp
/// to the arena.
pub fn step(state: &SimState, action: [f32; 2], cfg: &SimConfig) -> SimState {
    let a = clip_action(action, cfg);
    let disp = [a[0] * cfg.dt, a[1] * cfg.dt];
    let new_eff = clamp01([
        state.effector_pos[0] + disp[0],
        state.effector_pos[1] + disp[1],
    ]);
    let mut object = state.object_pos;
    let gap = dist(object, new_eff);
    if gap < cfg.contact_radius && gap > 1e-9 {
        let u = [
            (object[0] - new_eff[0]) / gap,
            (object[1] - new_eff[1]) / gap,
        ];
        let push = (disp[0] * u[0] + disp[1] * u[1]).max(0.0);
        object = clamp01([object[0] + u[0] * push, object[1] + u[1] * push]);
    }
    SimState {
        object_pos: object,
        effector_pos: new_eff,
        effector_vel: a,
        goal_pos: state.goal_pos,
        distractor_pos: state.distractor_pos.clone(),
        t: state.t + 1,
    }
}

/// Waypoint for reaching `target` without the straight-line path clipping
/// the object disc: when the segment passes within `r_avoid` of the
/// object, the target is replaced by a point offset perpendicular from
/// the object on the side the path already favors.
fn avoid_object(eff: [f32; 2], object: [f32; 2], target: [f32; 2], r_avoid: f32) -> [f32; 2] {
    let to_t = [target[0] - eff[0], target[1] - eff[1]];
    let len = (to_t[0] * to_t[0] + to_t[1] * to_t[1]).sqrt();
    if len < 1e-6 {
        return target;
    }
    let to_o = [object[0] - eff[0], object[1] - eff[1]];
    let along = (to_o[0] * to_t[0] + to_o[1] * to_t[1]) / len;
    if along <= 0.0 || along >= len {
        return target; // object behind the effector or beyond the target
    }
    let perp2 = to_o[0] * to_o[0] + to_o[1] * to_o[1] - along * along;
    if perp2 >= r_avoid * r_avoid {
        return target; // path clears the object
    }
    // cross > 0: object center lies left of the path, so the path clears
    // it on the right; offset the waypoint to the object's right side
    let cross = to_t[0] * to_o[1] - to_t[1] * to_o[0];
    let side = if cross > 0.0 { 1.0f32 } else { -1.0 };
    let n = [side * to_t[1] / len, -side * to_t[0] / len];
    [
        object[0] + n[0] * r_avoid * 1.5,
        object[1] + n[1] * r_avoid * 1.5,
    ]
}

/// Two-phase proportional controller with a smooth phase blend. Far from
/// the approach point (behind the object on the object-goal line) it
/// steers there, detouring around the object disc rather than shoving
/// through it; within the contact radius of the approach point, the
/// target slides continuously onto the object center, driving the
/// effector toward the goal through the object so contact pushes it
/// ahead. The blend keeps the action a continuous function of state,
/// which matters for the regression that imitates it. Saturation
/// preserves the steering direction (norm clip, so the box clip
/// downstream never binds). Emits zero once the object sits inside the
/// goal radius.
pub fn expert_action(state: &SimState, cfg: &SimConfig) -> [f32; 2] {
    if state.object_at_goal(cfg) {
        return [0.0, 0.0];
    }
    let to_goal = [
        state.goal_pos[0] - state.object_pos[0],
        state.goal_pos[1] - state.object_pos[1],
    ];
    let len = dist(state.object_pos, state.goal_pos).max(1e-6);
    let u = [to_goal[0] / len, to_goal[1] / len];
    let approach = [
        state.object_pos[0] - cfg.contact_radius * u[0],
        state.object_pos[1] - cfg.contact_radius * u[1],
    ];
    let waypoint = avoid_object(
        state.effector_pos,
        state.object_pos,
        approach,
        cfg.contact_radius + 0.02,
    );
    // 1 at or beyond the contact radius from the approach point, 0 on it
    let s = (dist(state.effector_pos, approach) / cfg.contact_radius).min(1.0);
    let target = [
        s * waypoint[0] + (1.0 - s) * state.object_pos[0],
        s * waypoint[1] + (1.0 - s) * state.object_pos[1],
    ];
    const GAIN: f32 = 10.0;
    let raw = [
        GAIN * (target[0] - state.effector_pos[0]),
        GAIN * (target[1] - state.effector_pos[1]),
    ];
    let norm = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
    if norm <= cfg.a_max || norm == 0.0 {
        raw
    } else {
        [raw[0] * cfg.a_max / norm, raw[1] * cfg.a_max / norm]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::envspec::sample_spec;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn blank_state() -> SimState {
        SimState {
            object_pos: [0.5, 0.5],
            effector_pos: [0.2, 0.2],
            effector_vel: [0.0, 0.0],
            goal_pos: GOAL_POS,
            distractor_pos: Vec::new(),
            t: 0,
        }
    }

    #[test]
    fn zero_action_only_advances_time() {
        let s0 = blank_state();
        let s1 = step(&s0, [0.0, 0.0], &cfg());
        assert_eq!(s1.object_pos, s0.object_pos);
        assert_eq!(s1.effector_pos, s0.effector_pos);
        assert_eq!(s1.t, 1);
    }

    #[test]
    fn no_contact_moves_effector_only() {
        let s0 = blank_state();
        let a = 0.4f32;
        let s1 = step(&s0, [a, 0.0], &cfg());
        assert!((s1.effector_pos[0] - (0.2 + a * cfg().dt)).abs() < 1e-7);
        assert_eq!(s1.object_pos, s0.object_pos);
    }

    #[test]
    fn contact_pushes_object_by_projected_displacement() {
        // Effector r_c/2 left of the object, pushing straight along +x.
        let c = cfg();
        let mut s = blank_state();
        s.effector_pos = [0.5 - c.contact_radius / 2.0, 0.5];
        let a = 0.3f32;
        let s1 = step(&s, [a, 0.0], &c);
        // By hand: disp = a*dt; effector ends still within r_c, direction is
        // exactly +x, projection is the full disp, so the object moves a*dt.
        let disp = a * c.dt;
        assert!((s1.object_pos[0] - (0.5 + disp)).abs() < 1e-6);
        assert_eq!(s1.object_pos[1], 0.5);
        // push cannot amplify motion
        let obj_moved = s1.object_pos[0] - 0.5;
        assert!(obj_moved <= disp + 1e-7);
    }

    #[test]
    fn object_is_never_pulled() {
        let c = cfg();
        let mut s = blank_state();
        // effector just right of the object, moving away to the right
        s.effector_pos = [0.5 + c.contact_radius / 2.0, 0.5];
        let s1 = step(&s, [0.3, 0.0], &c);
        assert_eq!(s1.object_pos, s.object_pos);
    }

    #[test]
    fn positions_stay_in_arena_under_any_actions() {
        let c = cfg();
        let mut rng = Rng::new(5);
        let spec = sample_spec(0, 11, 3).unwrap();
        let mut s = reset(&spec, &c, &mut rng);
        for _ in 0..500 {
            let a = [
                rng.uniform(-2.0, 2.0) as f32,
                rng.uniform(-2.0, 2.0) as f32,
            ];
            let before_eff = s.effector_pos;
            let before_obj = s.object_pos;
            s = step(&s, a, &c);
            for p in [s.object_pos, s.effector_pos] {
                assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
            }
            // the kinematic push cannot amplify motion; the unclamped
            // effector displacement bounds the object displacement
            let intended = [
                (a[0].clamp(-c.a_max, c.a_max) * c.dt).abs(),
                (a[1].clamp(-c.a_max, c.a_max) * c.dt).abs(),
            ];
            let eff_intended = (intended[0] * intended[0] + intended[1] * intended[1]).sqrt();
            let obj_moved = dist(before_obj, s.object_pos);
            assert!(obj_moved <= eff_intended + 1e-6, "{obj_moved} > {eff_intended}");
            let _ = before_eff;
        }
    }

    #[test]
    fn expert_stops_at_goal() {
        let c = cfg();
        let mut s = blank_state();
        s.object_pos = [0.5 + c.goal_radius * 0.5, 0.5];
        let a = expert_action(&s, &c);
        assert!(a[0].abs() < 1e-6 && a[1].abs() < 1e-6);
    }

    #[test]
    fn expert_points_east_from_approach_point() {
        // Goal due east of the object, effector on the approach point:
        // phase 2 steers at the goal, which lies exactly east.
        let c = cfg();
        let mut s = blank_state();
        s.object_pos = [0.3, 0.5];
        s.goal_pos = [0.5, 0.5];
        s.effector_pos = [0.3 - c.contact_radius, 0.5];
        let a = expert_action(&s, &c);
        assert!(a[0] > 0.0);
        let angle = (a[1] as f64).atan2(a[0] as f64);
        assert!(angle.abs() < 1e-6, "angle {angle}");
    }

    #[test]
    fn expert_pushes_object_home_from_easy_start() {
        let c = cfg();
        let spec = sample_spec(0, 3, 3).unwrap();
        let mut rng = Rng::new(17);
        let mut s = reset(&spec, &c, &mut rng);
        let mut reached = false;
        for _ in 0..c.episode_len {
            let a = expert_action(&s, &c);
            s = step(&s, a, &c);
            if s.object_at_goal(&c) {
                reached = true;
                break;
            }
        }
        assert!(reached, "expert failed from {:?}", s);
    }
}
