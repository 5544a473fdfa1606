use gplac_core::rng::{indexed_seed, Rng};
use gplac_core::sim::*;

#[test]
fn expert_success_rate_hard_check() {
    let cfg = SimConfig::default();
    let sets = make_env_sets(8, 0, 3141, 3).unwrap();
    let mut ok = 0usize;
    let mut worst_t = 0usize;
    let mut finish_sum = 0usize;
    let n = 1000usize;
    for trial in 0..n {
        let spec = &sets.weak[trial % sets.weak.len()];
        let mut rng = Rng::new(indexed_seed(777, "sr", trial as u64));
        let mut s = reset(spec, &cfg, &mut rng);
        for t in 0..cfg.episode_len {
            s = step(&s, expert_action(&s, &cfg), &cfg);
            if s.object_at_goal(&cfg) {
                ok += 1;
                worst_t = worst_t.max(t);
                finish_sum += t;
                break;
            }
        }
    }
    eprintln!("expert: {ok}/{n} success, worst t={worst_t}, mean finish t={:.1}", finish_sum as f64 / ok as f64);
    assert!(ok * 100 >= 97 * n, "{ok}/{n}");
}
