// Isolated classifier-pretraining probe: trunk+classifier on weak data
// only, then measure holdout accuracy and feature-point localization.
use gplac::config::Config;
use gplac::dataset;
use gplac::train::image_batch;
use gplac::viz;
use gplac_core::adam::{adam_step, AdamState};
use gplac_core::model::{build_model, ModelVariant};
use gplac_core::rng::{stream_seed, Rng};
use gplac_core::tape::{Mode, Tape};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let gain: f32 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let temp: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let drop: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let steps: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1500);

    let mut cfg = Config::default();
    cfg.data_dir = "/tmp/gp_data".into();
    cfg.temperature = temp;
    cfg.dropout_p = drop;
    let data = dataset::load(&cfg.data_dir, &cfg).unwrap();
    let sim = cfg.sim();
    let arch = cfg.arch_for(ModelVariant::AttFt);
    let mut model = build_model::<f32>(ModelVariant::AttFt, &arch, 0).unwrap();
    // scale the last conv layer's init (sharper initial spatial softmax)
    if gain != 1.0 {
        let slot = model.params.slot_of("trunk/conv3/weight").unwrap();
        for v in model.params.get_mut(slot).value.data_mut() {
            *v *= gain;
        }
    }
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut rng = Rng::new(stream_seed(0, "dropout"));
    let mut orderesz = Rng::new(stream_seed(0, "weak_order"));
    let n = data.weak_train.len();
    let mut tape = Tape::new();
    for step in 0..steps {
        let idx: Vec<usize> = (0..32).map(|_| orderesz.below(n)).collect();
        let imgs: Vec<&[u8]> = idx.iter().map(|i| data.weak_train.images[*i].as_slice()).collect();
        let labels: Vec<u8> = idx.iter().map(|i| data.weak_train.labels[*i]).collect();
        let batch = image_batch(&imgs, 64, 64);
        tape.reset();
        let b = tape.input(&batch);
        let logits = model.classifier_forward_batch(&mut tape, b, Mode::Train, &mut rng).unwrap();
        let ce = tape.bce_loss(logits, &labels).unwrap();
        tape.backward(ce).unwrap();
        model.params.zero_grads();
        tape.accumulate_param_grads(&mut model.params);
        adam_step(&mut model.params, &mut adam).unwrap();
        if (step + 1) % 500 == 0 {
            eprint!("step {} ce {:.4}  ", step + 1, tape.scalar_value(ce));
        }
    }
    // holdout accuracy
    let mut correct = 0;
    for i in 0..data.weak_holdout.len() {
        let img = image_batch(&[&data.weak_holdout.images[i]], 64, 64);
        let logit = model.classifier_forward(&img, Mode::Eval, &mut rng).unwrap();
        if (logit > 0.0) == (data.weak_holdout.labels[i] == 1) {
            correct += 1;
        }
    }
    let labeled = vec![data.envs.weak[0].clone()];
    let d_train = viz::mean_point_distance(&mut model, &labeled, &sim, 16, 777).unwrap();
    let d_test = viz::mean_point_distance(&mut model, &data.envs.test, &sim, 8, 777).unwrap();
    println!(
        "gain {gain} temp {temp} drop {drop}: holdout acc {:.1}%  fp dist labeled {d_train:.1}px unseen {d_test:.1}px",
        100.0 * correct as f32 / data.weak_holdout.len() as f32
    );
}
