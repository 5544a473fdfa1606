use gplac::config::Config;
use gplac::{checkpoint, dataset, train};
use gplac_core::rng::Rng;
use gplac_core::sim::{expert_action, render, reset, step, RenderOpts};
use gplac_core::tape::Mode;

fn main() {
    let mut cfg = Config::default();
    cfg.data_dir = "/tmp/gp_data".into();
    let data = dataset::load(&cfg.data_dir, &cfg).unwrap();
    let sim = cfg.sim();
    let variant = std::env::args().nth(1).unwrap_or("att1".into());
    let ckpt = std::env::args().nth(2).unwrap();
    let v = gplac_core::model::ModelVariant::parse(&variant).unwrap();
    let entries = checkpoint::read(std::path::Path::new(&ckpt)).unwrap();
    let mut model = train::load_model(v, &cfg, &entries).unwrap();

    // success on the TRAINING environment
    let labeled = vec![data.envs.weak[0].clone()];
    let on_train = train::eval_success(&mut model, &labeled, &sim, 40, 123);
    println!("success on labeled env: {on_train:.1}%");
    let on_test = train::eval_success(&mut model, &data.envs.test, &sim, 10, 123);
    println!("success on unseen envs: {on_test:.1}%");

    // trace one rollout on the labeled env vs the expert
    let spec = &data.envs.weak[0];
    let mut rng = Rng::new(5);
    let mut st = reset(spec, &sim, &mut rng);
    let mut policy_rng = Rng::new(0);
    for t in 0..sim.episode_len {
        let img = render(spec, &st, &sim, RenderOpts::default());
        let batch = train::image_batch(&[&img], sim.image_h, sim.image_w);
        let a = model
            .policy_forward(&batch, &st.robot_state(), Mode::Eval, &mut policy_rng)
            .unwrap();
        let e = expert_action(&st, &sim);
        if t % 5 == 0 {
            println!(
                "t={t:2} obj=({:.3},{:.3}) eff=({:.3},{:.3}) policy=({:+.3},{:+.3}) expert=({:+.3},{:+.3})",
                st.object_pos[0], st.object_pos[1], st.effector_pos[0], st.effector_pos[1],
                a.data()[0], a.data()[1], e[0], e[1]
            );
        }
        st = step(&st, [a.data()[0], a.data()[1]], &sim);
        if st.object_at_goal(&sim) {
            println!("reached goal at t={t}");
            break;
        }
    }
}
