use gplac::config::Config;
use gplac::train::image_batch;
use gplac::{checkpoint, dataset, train};
use gplac_core::kernels::sigmoid;
use gplac_core::rng::Rng;
use gplac_core::tape::{Mode, Tape};

fn main() {
    let mut cfg = Config::default();
    cfg.data_dir = "/tmp/gp_data".into();
    let data = dataset::load(&cfg.data_dir, &cfg).unwrap();
    let ckpt = std::env::args().nth(1).unwrap();
    let entries = checkpoint::read(std::path::Path::new(&ckpt)).unwrap();
    let mut model = train::load_model(gplac_core::model::ModelVariant::Gplac, &cfg, &entries).unwrap();
    let mut rng = Rng::new(0);
    for mode in [Mode::Eval, Mode::Train] {
        let mut correct = 0usize;
        let n = data.weak_holdout.len();
        let mut tape = Tape::new();
        for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
            let imgs: Vec<&[u8]> = chunk.iter().map(|i| data.weak_holdout.images[*i].as_slice()).collect();
            let batch = image_batch(&imgs, 64, 64);
            tape.reset();
            let b = tape.input(&batch);
            let logits = model.classifier_forward_batch(&mut tape, b, mode, &mut rng).unwrap();
            for (k, i) in chunk.iter().enumerate() {
                let p = sigmoid(tape.value(logits)[k]);
                if (p > 0.5) == (data.weak_holdout.labels[*i] == 1) {
                    correct += 1;
                }
            }
        }
        println!("{mode:?} mode holdout accuracy: {:.1}%", 100.0 * correct as f32 / n as f32);
    }
}
