use gplac::config::Config;
use gplac::{checkpoint, dataset, train};
use gplac_core::rng::Rng;
use gplac_core::tape::{Mode, Tape};
use gplac_core::tensor::Tensor;

fn main() {
    let mut cfg = Config::default();
    cfg.data_dir = "/tmp/gp_data".into();
    let data = dataset::load(&cfg.data_dir, &cfg).unwrap();
    let variant = std::env::args().nth(1).unwrap();
    let ckpt = std::env::args().nth(2).unwrap();
    let v = gplac_core::model::ModelVariant::parse(&variant).unwrap();
    let entries = checkpoint::read(std::path::Path::new(&ckpt)).unwrap();
    let mut model = train::load_model(v, &cfg, &entries).unwrap();
    let mut rng = Rng::new(0);
    // eval-mode action MSE over stored training tuples
    let mut mse = 0.0f64;
    let mut nonzero_mse = 0.0f64;
    let mut nz = 0usize;
    let n = 400usize;
    for i in 0..n {
        let idx = (i * 6) % data.demo.len();
        let img = train::image_batch(&[&data.demo.images[idx]], 64, 64);
        let st = data.demo.states[idx];
        let a = model
            .policy_forward(&img, &st, Mode::Eval, &mut rng)
            .unwrap();
        let want = data.demo.actions[idx];
        let d = (a.data()[0] - want[0]).powi(2) + (a.data()[1] - want[1]).powi(2);
        mse += d as f64;
        let mag = (want[0] * want[0] + want[1] * want[1]).sqrt();
        if mag > 0.05 {
            nonzero_mse += d as f64;
            nz += 1;
        }
    }
    println!("eval-mode MSE on training tuples: {:.5} (all) {:.5} (moving only, {} of {})",
        mse / n as f64, nonzero_mse / nz as f64, nz, n);

    // same in train mode (batch statistics) for the bn-gap comparison
    let mut tape = Tape::new();
    let idxs: Vec<usize> = (0..32).map(|i| (i * 6) % data.demo.len()).collect();
    let imgs: Vec<&[u8]> = idxs.iter().map(|i| data.demo.images[*i].as_slice()).collect();
    let batch = train::image_batch(&imgs, 64, 64);
    let states = Tensor::from_vec(&[32, 4], idxs.iter().flat_map(|i| data.demo.states[*i]).collect()).unwrap();
    let actions = Tensor::from_vec(&[32, 2], idxs.iter().flat_map(|i| data.demo.actions[*i]).collect()).unwrap();
    let b = tape.input(&batch);
    let s = tape.input(&states);
    let pred = model.policy_forward_batch(&mut tape, b, s, Mode::Train, &mut rng).unwrap();
    let loss = tape.task_loss(pred, &actions).unwrap();
    println!("train-mode task loss, same tuples: {:.5}", tape.scalar_value(loss));
}
