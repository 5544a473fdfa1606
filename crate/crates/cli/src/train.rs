//! The training loop: warmup-gated joint multitask updates, metrics at a
//! fixed cadence, checkpoints, and the two-phase finetuning pipeline.

use crate::checkpoint;
use crate::config::Config;
use crate::dataset::{weak_subset, Dataset, DemoSet, WeakSet};
use crate::{Error, Result};
use gplac_core::adam::{adam_step, AdamState};
use gplac_core::kernels::sigmoid;
use gplac_core::model::{build_model, combined_loss, GplacModel, ModelVariant};
use gplac_core::rng::{stream_seed, Rng};
use gplac_core::sim::{evaluate_policy, EnvironmentSpec, SimConfig};
use gplac_core::tape::{Mode, Tape};
use gplac_core::tensor::Tensor;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Completed optimizer steps at measurement time; strictly increasing.
    pub step: usize,
    pub task_loss: Option<f32>,
    pub ce_loss: Option<f32>,
    /// Held-out weak classification accuracy, percent.
    pub weak_acc: Option<f32>,
    /// Success percentage on the unseen-environment sample.
    pub success_rate: Option<f32>,
    pub wall_clock: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,task_loss,ce_loss,weak_acc,success_rate,wall_clock\n");
        for r in &self.rows {
            let opt = |v: Option<f32>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                r.step,
                opt(r.task_loss),
                opt(r.ce_loss),
                opt(r.weak_acc),
                opt(r.success_rate),
                r.wall_clock
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(e, path))
    }
}

/// Everything a finished (or truncated) run leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: MetricsLog,
    /// Per-step (task, ce) loss values, for reproducibility checks.
    pub loss_trace: Vec<(f32, Option<f32>)>,
    pub final_checkpoint: PathBuf,
    pub final_success: Option<f32>,
    pub final_weak_acc: Option<f32>,
    pub optimizer_steps: u64,
    pub model: GplacModel<f32>,
}

struct Batcher {
    order: Vec<usize>,
    at: usize,
    rng: Rng,
}

impl Batcher {
    fn new(indices: Vec<usize>, seed: u64) -> Self {
        let mut b = Batcher {
            order: indices,
            at: 0,
            rng: Rng::new(seed),
        };
        b.rng.shuffle(&mut b.order);
        b
    }

    fn next(&mut self, k: usize) -> Vec<usize> {
        debug_assert!(!self.order.is_empty());
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.at >= self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.at = 0;
            }
            out.push(self.order[self.at]);
            self.at += 1;
        }
        out
    }
}

/// Label-preserving augmentation of a weak image: the dihedral group of
/// the square (flips and quarter turns) composed with a small translation
/// with edge-replicate fill. Object presence is invariant under all of
/// them, and the composition space is large enough that the classifier
/// cannot memorize the finite weak set pixel-for-pixel.
pub fn augment_weak(img: &[u8], h: usize, w: usize, rng: &mut Rng) -> Vec<u8> {
    let flip_h = rng.bernoulli(0.5);
    let flip_v = rng.bernoulli(0.5);
    let transpose = h == w && rng.bernoulli(0.5);
    let dx = rng.below(7) as i32 - 3;
    let dy = rng.below(7) as i32 - 3;
    let mut out = vec![0u8; img.len()];
    for y in 0..h {
        for x in 0..w {
            // inverse-map the output pixel through translate, then flips
            let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
            let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
            let (mut ux, mut uy) = (sx, sy);
            if transpose {
                core::mem::swap(&mut ux, &mut uy);
            }
            if flip_h {
                ux = w - 1 - ux;
            }
            if flip_v {
                uy = h - 1 - uy;
            }
            let src = (uy * w + ux) * 3;
            let dst = (y * w + x) * 3;
            out[dst..dst + 3].copy_from_slice(&img[src..src + 3]);
        }
    }
    out
}

/// HWC byte image(s) to a [N,3,H,W] float tensor in [0,1].
pub fn image_batch(images: &[&[u8]], h: usize, w: usize) -> Tensor<f32> {
    let n = images.len();
    let mut data = vec![0.0f32; n * 3 * h * w];
    for (s, img) in images.iter().enumerate() {
        debug_assert_eq!(img.len(), h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[((s * 3 + c) * h + y) * w + x] =
                        img[(y * w + x) * 3 + c] as f32 / 255.0;
                }
            }
        }
    }
    Tensor::from_vec(&[n, 3, h, w], data).expect("batch shape consistent")
}

fn demo_batch(set: &DemoSet, idx: &[usize], h: usize, w: usize) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    let imgs: Vec<&[u8]> = idx.iter().map(|i| set.images[*i].as_slice()).collect();
    let images = image_batch(&imgs, h, w);
    let states = Tensor::from_vec(
        &[idx.len(), 4],
        idx.iter().flat_map(|i| set.states[*i]).collect(),
    )
    .unwrap();
    let actions = Tensor::from_vec(
        &[idx.len(), 2],
        idx.iter().flat_map(|i| set.actions[*i]).collect(),
    )
    .unwrap();
    (images, states, actions)
}

/// Eval-mode classifier metrics on a weak set: (mean bce, accuracy %).
fn classifier_metrics(
    model: &mut GplacModel<f32>,
    set: &WeakSet,
    h: usize,
    w: usize,
) -> Result<(f32, f32)> {
    let mut rng = Rng::new(0);
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let n = set.len();
    let mut tape = Tape::new();
    for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
        let imgs: Vec<&[u8]> = chunk.iter().map(|i| set.images[*i].as_slice()).collect();
        let batch = image_batch(&imgs, h, w);
        tape.reset();
        let b = tape.input(&batch);
        let logits = model.classifier_forward_batch(&mut tape, b, Mode::Eval, &mut rng)?;
        for (k, i) in chunk.iter().enumerate() {
            let l = tape.value(logits)[k];
            let y = set.labels[*i];
            let p = sigmoid(l);
            if (p > 0.5) == (y == 1) {
                correct += 1;
            }
            // stable bce
            let yf = y as f32;
            loss_sum += (l.max(0.0) - l * yf + (1.0 + (-l.abs()).exp()).ln()) as f64;
        }
    }
    Ok((
        (loss_sum / n as f64) as f32,
        100.0 * correct as f32 / n as f32,
    ))
}

/// Closed-loop success percentage via the core rollout protocol, one
/// trial at a time. Kept as the reference implementation; the batched
/// evaluator below must agree with it exactly.
pub fn eval_success_sequential(
    model: &mut GplacModel<f32>,
    specs: &[EnvironmentSpec],
    sim: &SimConfig,
    trials_per_spec: usize,
    seed: u64,
) -> f32 {
    let mut rng = Rng::new(0);
    let (h, w) = (sim.image_h, sim.image_w);
    let report = evaluate_policy(
        |image, state| {
            let img = image_batch(&[image], h, w);
            match model.policy_forward(&img, &state.map(|v| v), Mode::Eval, &mut rng) {
                Ok(a) => [a.data()[0], a.data()[1]],
                Err(_) => [f32::NAN, f32::NAN],
            }
        },
        specs,
        sim,
        trials_per_spec,
        seed,
    );
    report.overall_pct
}

/// Closed-loop success percentage with all of a spec's trials rolled in
/// lockstep through batched eval-mode forwards. Episodes are independent
/// and eval-mode batch norm is per-sample, so per-trial outcomes equal
/// the sequential protocol's (same reset seed derivation).
pub fn eval_success(
    model: &mut GplacModel<f32>,
    specs: &[EnvironmentSpec],
    sim: &SimConfig,
    trials_per_spec: usize,
    seed: u64,
) -> f32 {
    use gplac_core::rng::indexed_seed;
    use gplac_core::sim::{render, reset, step, RenderOpts, SimState};
    if trials_per_spec == 0 || specs.is_empty() {
        return 0.0;
    }
    let (h, w) = (sim.image_h, sim.image_w);
    let mut rng = Rng::new(0);
    let mut tape = Tape::new();
    let mut successes = 0usize;
    for spec in specs {
        let mut states: Vec<SimState> = (0..trials_per_spec)
            .map(|trial| {
                let reset_seed = indexed_seed(
                    seed,
                    "eval_reset",
                    (spec.env_id as u64) << 32 | trial as u64,
                );
                reset(spec, sim, &mut Rng::new(reset_seed))
            })
            .collect();
        let mut done = vec![false; trials_per_spec];
        for _t in 0..sim.episode_len {
            let active: Vec<usize> = (0..trials_per_spec).filter(|i| !done[*i]).collect();
            if active.is_empty() {
                break;
            }
            let images: Vec<Vec<u8>> = active
                .iter()
                .map(|i| render(spec, &states[*i], sim, RenderOpts::default()))
                .collect();
            let refs: Vec<&[u8]> = images.iter().map(|v| v.as_slice()).collect();
            let batch = image_batch(&refs, h, w);
            let st = Tensor::from_vec(
                &[active.len(), 4],
                active.iter().flat_map(|i| states[*i].robot_state()).collect(),
            )
            .unwrap();
            tape.reset();
            let img_id = tape.input(&batch);
            let st_id = tape.input(&st);
            let Ok(actions) =
                model.policy_forward_batch(&mut tape, img_id, st_id, Mode::Eval, &mut rng)
            else {
                break; // numeric failure: remaining trials count as failures
            };
            let av = tape.value(actions);
            for (k, i) in active.iter().enumerate() {
                let a = [av[2 * k], av[2 * k + 1]];
                if !a[0].is_finite() || !a[1].is_finite() {
                    done[*i] = true; // failed trial
                    continue;
                }
                states[*i] = step(&states[*i], a, sim);
                if states[*i].object_at_goal(sim) {
                    done[*i] = true;
                    successes += 1;
                }
            }
        }
    }
    100.0 * successes as f32 / (specs.len() * trials_per_spec) as f32
}

fn model_entries(model: &GplacModel<f32>, adam: &AdamState<f32>) -> Vec<checkpoint::Entry> {
    let mut entries = model.export_state();
    for (slot, p) in model.params.iter().enumerate() {
        entries.push((
            format!("adam/{}/m", p.name),
            vec![adam.m[slot].len()],
            adam.m[slot].clone(),
        ));
        entries.push((
            format!("adam/{}/v", p.name),
            vec![adam.v[slot].len()],
            adam.v[slot].clone(),
        ));
    }
    entries.push(("adam/step".into(), vec![1], vec![adam.t as f32]));
    entries
}

/// Restore a model (and optionally the optimizer) from checkpoint entries.
pub fn load_model(
    variant: ModelVariant,
    cfg: &Config,
    entries: &[checkpoint::Entry],
) -> Result<GplacModel<f32>> {
    let arch = cfg.arch_for(variant);
    let mut model = build_model::<f32>(variant, &arch, 0).map_err(Error::from)?;
    model.import_state(entries).map_err(Error::from)?;
    Ok(model)
}

/// Train a single-phase variant. `stop_after` truncates the loop early
/// (used by the warmup-exactness shadow check); `None` runs to
/// `total_steps`.
pub fn train_truncated(
    cfg: &Config,
    data: &Dataset,
    run_dir: &Path,
    stop_after: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let variant = cfg.variant;
    if variant == ModelVariant::AttFt {
        return train_finetune(cfg, data, run_dir);
    }
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(e, run_dir))?;
    let sim = cfg.sim();
    let (h, w) = (cfg.image_h, cfg.image_w);

    let demo_set = if variant.multi_env_demos() {
        if data.demo_multi.is_empty() {
            return Err(Error::Data(format!(
                "variant {} needs the multi-environment demo split, which this dataset lacks",
                variant.name()
            )));
        }
        &data.demo_multi
    } else {
        &data.demo
    };
    let uses_weak = variant.uses_weak_data();
    if uses_weak && data.weak_train.is_empty() {
        return Err(Error::Data(
            "variant consumes weak data but the dataset has none".into(),
        ));
    }

    let arch = cfg.arch_for(variant);
    let mut model = build_model::<f32>(variant, &arch, cfg.seed).map_err(Error::from)?;
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut dropout_rng = Rng::new(stream_seed(cfg.seed, "dropout"));
    let mut augment_rng = Rng::new(stream_seed(cfg.seed, "weak_augment"));
    let mut demo_batcher = Batcher::new(
        (0..demo_set.len()).collect(),
        stream_seed(cfg.seed, "demo_order"),
    );
    let weak_idx = weak_subset(&data.weak_train, cfg.weak_fraction);
    let mut weak_batcher = if uses_weak {
        Some(Batcher::new(weak_idx, stream_seed(cfg.seed, "weak_order")))
    } else {
        None
    };

    let eval_sub_seed = stream_seed(cfg.seed, "eval_subsample");
    let eval_final_seed = stream_seed(cfg.seed, "eval_final");
    let sub_specs: Vec<EnvironmentSpec> = data
        .envs
        .test
        .iter()
        .take(4.min(data.envs.test.len().max(1)))
        .cloned()
        .collect();
    let sub_trials = cfg.eval_subsample_trials.div_ceil(sub_specs.len().max(1));

    let total = stop_after.unwrap_or(cfg.total_steps).min(cfg.total_steps);
    let started = Instant::now();
    let mut metrics = MetricsLog::default();
    let mut loss_trace = Vec::with_capacity(total);
    let mut tape = Tape::new();

    for step in 0..total {
        let idx = demo_batcher.next(cfg.batch_demo);
        let (images, states, actions) = demo_batch(demo_set, &idx, h, w);
        tape.reset();
        let st_id = tape.input(&states);
        let step_err = |e: gplac_core::Error| {
            Error::Numeric(format!("aborted at step {step}: {e}"))
        };
        // Post-warmup multitask steps run demo and weak rows through the
        // trunk as ONE mixed batch: a single forward/backward, with batch
        // statistics shared by both streams, then the feature rows split
        // between the heads.
        let joint = weak_batcher.as_mut().filter(|_| step >= cfg.warmup_steps);
        let (task, ce) = if let Some(wb) = joint {
            let widx = wb.next(cfg.batch_weak);
            let weak_imgs: Vec<Vec<u8>> = widx
                .iter()
                .map(|i| {
                    augment_weak(&data.weak_train.images[*i], h, w, &mut augment_rng)
                })
                .collect();
            let labels: Vec<u8> = widx.iter().map(|i| data.weak_train.labels[*i]).collect();
            let mut all: Vec<&[u8]> = idx.iter().map(|i| demo_set.images[*i].as_slice()).collect();
            all.extend(weak_imgs.iter().map(|v| v.as_slice()));
            let mixed = image_batch(&all, h, w);
            let mix_id = tape.input(&mixed);
            let feats = model
                .forward_features(&mut tape, mix_id, Mode::Train, &mut dropout_rng)
                .map_err(step_err)?;
            let demo_feats = tape.slice_rows(feats, 0, idx.len()).map_err(step_err)?;
            let weak_feats = tape.slice_rows(feats, idx.len(), widx.len()).map_err(step_err)?;
            let pred = model
                .policy_head(&mut tape, demo_feats, st_id)
                .map_err(step_err)?;
            let task = tape.task_loss(pred, &actions).map_err(step_err)?;
            let logits = model
                .classifier_head(&mut tape, weak_feats)
                .map_err(step_err)?;
            let ce = tape.bce_loss(logits, &labels).map_err(step_err)?;
            (task, Some(ce))
        } else {
            let img_id = tape.input(&images);
            let pred = model
                .policy_forward_batch(&mut tape, img_id, st_id, Mode::Train, &mut dropout_rng)
                .map_err(step_err)?;
            (tape.task_loss(pred, &actions).map_err(step_err)?, None)
        };
        let loss = combined_loss(&mut tape, task, ce, cfg.lambda, step, cfg.warmup_steps)
            .map_err(step_err)?;
        let loss_v = tape.scalar_value(loss);
        if !loss_v.is_finite() {
            return Err(Error::Numeric(format!(
                "aborted at step {step}: loss is {loss_v}; last cadence checkpoint retained"
            )));
        }
        tape.backward(loss).map_err(step_err)?;
        model.params.zero_grads();
        tape.accumulate_param_grads(&mut model.params);
        adam_step(&mut model.params, &mut adam).map_err(step_err)?;
        loss_trace.push((
            tape.scalar_value(task),
            ce.map(|c| tape.scalar_value(c)),
        ));

        let done = step + 1;
        if done % cfg.eval_cadence == 0 || done == total {
            // checkpoint before evaluating, so an abort during metric
            // computation still leaves the latest state behind
            checkpoint::write(
                &run_dir.join(format!("checkpoint_step{done:06}.gplc")),
                &model_entries(&model, &adam),
            )?;
            let (ce_eval, acc) = if model.has_classifier() && !data.weak_holdout.is_empty() {
                let (l, a) = classifier_metrics(&mut model, &data.weak_holdout, h, w)
                    .map_err(|e| Error::Numeric(format!("aborted at step {step}: {e}")))?;
                (Some(l), Some(a))
            } else {
                (None, None)
            };
            let success = if done == total && stop_after.is_none() {
                eval_success(&mut model, &data.envs.test, &sim, cfg.eval_trials, eval_final_seed)
            } else {
                eval_success(&mut model, &sub_specs, &sim, sub_trials, eval_sub_seed)
            };
            metrics.rows.push(MetricsRow {
                step: done,
                task_loss: Some(tape.scalar_value(task)),
                ce_loss: ce_eval,
                weak_acc: acc,
                success_rate: Some(success),
                wall_clock: started.elapsed().as_secs_f64(),
            });
        }
    }

    let final_path = run_dir.join("checkpoint.gplc");
    checkpoint::write(&final_path, &model_entries(&model, &adam))?;
    metrics.write_csv(&run_dir.join("metrics.csv"))?;
    let final_success = metrics.rows.last().and_then(|r| r.success_rate);
    let final_weak_acc = metrics.rows.last().and_then(|r| r.weak_acc);
    Ok(TrainOutcome {
        metrics,
        loss_trace,
        final_checkpoint: final_path,
        final_success,
        final_weak_acc,
        optimizer_steps: adam.t,
        model,
    })
}

pub fn train(cfg: &Config, data: &Dataset, run_dir: &Path) -> Result<TrainOutcome> {
    train_truncated(cfg, data, run_dir, None)
}

/// Two-phase pipeline: the trunk and classifier pretrain on weak data
/// alone, then the classifier head is discarded, a fresh policy head is
/// attached, and every weight finetunes on demos. Phase steps sum to
/// `total_steps`.
pub fn train_finetune(cfg: &Config, data: &Dataset, run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(e, run_dir))?;
    if data.weak_train.is_empty() {
        return Err(Error::Data("finetune pretraining needs weak data".into()));
    }
    let sim = cfg.sim();
    let (h, w) = (cfg.image_h, cfg.image_w);
    let arch = cfg.arch_for(ModelVariant::AttFt);
    let mut model = build_model::<f32>(ModelVariant::AttFt, &arch, cfg.seed).map_err(Error::from)?;
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut dropout_rng = Rng::new(stream_seed(cfg.seed, "dropout"));
    let weak_idx = weak_subset(&data.weak_train, cfg.weak_fraction);
    let mut weak_batcher = Batcher::new(weak_idx, stream_seed(cfg.seed, "weak_order"));
    let mut augment_rng = Rng::new(stream_seed(cfg.seed, "weak_augment"));
    let started = Instant::now();
    let mut metrics = MetricsLog::default();
    let mut loss_trace = Vec::new();
    let mut tape = Tape::new();

    // phase 1: binary classification on the weak set
    let phase1 = cfg.ft_phase1_steps;
    for step in 0..phase1 {
        let widx = weak_batcher.next(cfg.batch_weak);
        let aug: Vec<Vec<u8>> = widx
            .iter()
            .map(|i| augment_weak(&data.weak_train.images[*i], h, w, &mut augment_rng))
            .collect();
        let imgs: Vec<&[u8]> = aug.iter().map(|v| v.as_slice()).collect();
        let wbatch = image_batch(&imgs, h, w);
        let labels: Vec<u8> = widx.iter().map(|i| data.weak_train.labels[*i]).collect();
        tape.reset();
        let wid = tape.input(&wbatch);
        let step_err =
            |e: gplac_core::Error| Error::Numeric(format!("aborted at phase-1 step {step}: {e}"));
        let logits = model
            .classifier_forward_batch(&mut tape, wid, Mode::Train, &mut dropout_rng)
            .map_err(step_err)?;
        let ce = tape.bce_loss(logits, &labels).map_err(step_err)?;
        if !tape.scalar_value(ce).is_finite() {
            return Err(Error::Numeric(format!("aborted at phase-1 step {step}")));
        }
        tape.backward(ce).map_err(step_err)?;
        model.params.zero_grads();
        tape.accumulate_param_grads(&mut model.params);
        adam_step(&mut model.params, &mut adam).map_err(step_err)?;
        loss_trace.push((f32::NAN, Some(tape.scalar_value(ce))));
        let done = step + 1;
        if done % cfg.eval_cadence == 0 || done == phase1 {
            let (ce_eval, acc) = classifier_metrics(&mut model, &data.weak_holdout, h, w)?;
            metrics.rows.push(MetricsRow {
                step: done,
                task_loss: None,
                ce_loss: Some(ce_eval),
                weak_acc: Some(acc),
                success_rate: None,
                wall_clock: started.elapsed().as_secs_f64(),
            });
        }
    }
    let phase1_steps = adam.t;
    checkpoint::write(&run_dir.join("phase1.gplc"), &model_entries(&model, &adam))?;

    // phase 2: fresh policy head, demos only, everything trainable
    let mut model = model
        .into_policy_model(ModelVariant::AttFt, stream_seed(cfg.seed, "ft_policy_head"))
        .map_err(Error::from)?;
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut demo_batcher = Batcher::new(
        (0..data.demo.len()).collect(),
        stream_seed(cfg.seed, "demo_order"),
    );
    let phase2 = cfg.total_steps - phase1;
    let eval_sub_seed = stream_seed(cfg.seed, "eval_subsample");
    let eval_final_seed = stream_seed(cfg.seed, "eval_final");
    let sub_specs: Vec<EnvironmentSpec> = data
        .envs
        .test
        .iter()
        .take(4.min(data.envs.test.len().max(1)))
        .cloned()
        .collect();
    let sub_trials = cfg.eval_subsample_trials.div_ceil(sub_specs.len().max(1));
    for step in 0..phase2 {
        let idx = demo_batcher.next(cfg.batch_demo);
        let (images, states, actions) = demo_batch(&data.demo, &idx, h, w);
        tape.reset();
        let img_id = tape.input(&images);
        let st_id = tape.input(&states);
        let step_err =
            |e: gplac_core::Error| Error::Numeric(format!("aborted at phase-2 step {step}: {e}"));
        let pred = model
            .policy_forward_batch(&mut tape, img_id, st_id, Mode::Train, &mut dropout_rng)
            .map_err(step_err)?;
        let task = tape.task_loss(pred, &actions).map_err(step_err)?;
        if !tape.scalar_value(task).is_finite() {
            return Err(Error::Numeric(format!("aborted at phase-2 step {step}")));
        }
        tape.backward(task).map_err(step_err)?;
        model.params.zero_grads();
        tape.accumulate_param_grads(&mut model.params);
        adam_step(&mut model.params, &mut adam).map_err(step_err)?;
        loss_trace.push((tape.scalar_value(task), None));
        let done = step + 1;
        if done % cfg.eval_cadence == 0 || done == phase2 {
            checkpoint::write(
                &run_dir.join(format!("checkpoint_step{:06}.gplc", phase1 + done)),
                &model_entries(&model, &adam),
            )?;
            let success = if done == phase2 {
                eval_success(&mut model, &data.envs.test, &sim, cfg.eval_trials, eval_final_seed)
            } else {
                eval_success(&mut model, &sub_specs, &sim, sub_trials, eval_sub_seed)
            };
            metrics.rows.push(MetricsRow {
                step: phase1 + done,
                task_loss: Some(tape.scalar_value(task)),
                ce_loss: None,
                weak_acc: None,
                success_rate: Some(success),
                wall_clock: started.elapsed().as_secs_f64(),
            });
        }
    }
    let final_path = run_dir.join("checkpoint.gplc");
    checkpoint::write(&final_path, &model_entries(&model, &adam))?;
    metrics.write_csv(&run_dir.join("metrics.csv"))?;
    let final_success = metrics.rows.last().and_then(|r| r.success_rate);
    Ok(TrainOutcome {
        metrics,
        loss_trace,
        final_checkpoint: final_path,
        final_success,
        final_weak_acc: None,
        optimizer_steps: phase1_steps + adam.t,
        model,
    })
}
