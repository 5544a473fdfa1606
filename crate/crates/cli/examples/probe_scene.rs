use gplac_core::rng::Rng;
use gplac_core::sim::*;

fn main() {
    let cfg = SimConfig::default();
    let sets = make_env_sets(8, 2, gplac_core::rng::stream_seed(gplac_core::rng::stream_seed(0, "dataset"), "envs") ^ 0, 3).unwrap();
    // just sample a fresh env set for looks
    let sets = make_env_sets(3, 0, 123, 3).unwrap();
    let _ = sets;
    let sets = make_env_sets(3, 0, 99, 3).unwrap();
    for spec in &sets.weak {
        let mut rng = Rng::new(7);
        let st = reset(spec, &cfg, &mut rng);
        let img = render(spec, &st, &cfg, RenderOpts::default());
        println!("env {} bg={:?} pat={:?} obj={:?} r={:.1} distractors={}",
            spec.env_id, spec.background.base, spec.background.pattern_color,
            spec.object.color, spec.object.size_px, spec.distractors.len());
        // classify each pixel by nearest scene color
        for y in (0..64).step_by(2) {
            let mut line = String::new();
            for x in 0..64 {
                let at = (y * 64 + x) * 3;
                let px = [img[at], img[at + 1], img[at + 2]];
                let d = |c: [u8; 3]| -> i32 {
                    (px[0] as i32 - c[0] as i32).abs() + (px[1] as i32 - c[1] as i32).abs() + (px[2] as i32 - c[2] as i32).abs()
                };
                let ch = if px == EFFECTOR_COLOR { 'E' }
                    else if d(spec.object.color) < 30 { 'O' }
                    else if d(spec.goal_color) < 30 { 'G' }
                    else if spec.distractors.iter().any(|dd| d(dd.color) < 30) { 'D' }
                    else { '.' };
                line.push(ch);
            }
            println!("{line}");
        }
        println!();
        break;
    }
}
