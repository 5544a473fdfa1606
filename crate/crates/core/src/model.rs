//! Network construction for the trained variants, the shared-trunk
//! two-head model, and the loss functions.
//!
//! The trunk is a conv stack with batch norm between the layers; the last
//! conv map either feeds the spatial attention layer (attention variants)
//! or is flattened (plain CNN variants). The policy head reads
//! [features || robot state]; the classifier head reads the features
//! alone. Both heads are two hidden layers of `fc_width` and a linear
//! output.

use crate::attention;
use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::rng::{stream_seed, Rng};
use crate::scalar::Scalar;
use crate::tape::{BnRunning, Mode, Tape, ValueId};
use crate::tensor::Tensor;

/// Which training regime / architecture a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// Attention + classifier on weak data from many environments.
    Gplac,
    /// Attention, demos from the single labeled environment only.
    Att1,
    /// Attention, demos from every weak environment (labeled upper bound).
    Att40,
    /// Attention; classifier pretraining on weak data, then policy
    /// finetuning on demos.
    AttFt,
    /// Plain CNN, demos from the single labeled environment.
    Cnn1,
    /// Plain CNN, demos from every weak environment.
    Cnn40,
    /// Plain CNN + classifier on weak data (ablation without attention).
    CnnC,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 7] = [
        ModelVariant::Gplac,
        ModelVariant::Att1,
        ModelVariant::Att40,
        ModelVariant::AttFt,
        ModelVariant::Cnn1,
        ModelVariant::Cnn40,
        ModelVariant::CnnC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Gplac => "gplac",
            ModelVariant::Att1 => "att1",
            ModelVariant::Att40 => "att40",
            ModelVariant::AttFt => "attft",
            ModelVariant::Cnn1 => "cnn1",
            ModelVariant::Cnn40 => "cnn40",
            ModelVariant::CnnC => "cnnc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown variant {s:?}; expected one of gplac, att1, att40, attft, cnn1, cnn40, cnnc"
                ))
            })
    }

    pub fn uses_attention(self) -> bool {
        matches!(
            self,
            ModelVariant::Gplac | ModelVariant::Att1 | ModelVariant::Att40 | ModelVariant::AttFt
        )
    }

    /// Variants whose single-phase training consumes the weak dataset.
    pub fn uses_weak_data(self) -> bool {
        matches!(self, ModelVariant::Gplac | ModelVariant::CnnC)
    }

    /// Variants built with a classifier head. For AttFt this is the
    /// pretraining phase; finetuning swaps in a policy head.
    pub fn builds_classifier(self) -> bool {
        matches!(
            self,
            ModelVariant::Gplac | ModelVariant::CnnC | ModelVariant::AttFt
        )
    }

    pub fn builds_policy(self) -> bool {
        !matches!(self, ModelVariant::AttFt)
    }

    /// Variants trained on demos from every weak environment rather than
    /// the single labeled one.
    pub fn multi_env_demos(self) -> bool {
        matches!(self, ModelVariant::Att40 | ModelVariant::Cnn40)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Input channels, always RGB here.
    pub image_c: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    /// Per-layer strides; by convention only the first differs from 1
    /// (2 for attention variants, 4 for CNN variants).
    pub conv_strides: Vec<usize>,
    pub padding: usize,
    pub fc_width: usize,
    pub use_attention: bool,
    pub state_dim: usize,
    pub action_dim: usize,
    pub temperature: f64,
    pub dropout_p: f64,
}

impl ArchitectureConfig {
    /// Desk-scale defaults: 64x64 images, three conv layers, 64-wide heads.
    pub fn toy(use_attention: bool) -> Self {
        let filters = vec![16, 16, 8];
        ArchitectureConfig {
            image_h: 64,
            image_w: 64,
            image_c: 3,
            conv_strides: Self::default_strides(filters.len(), use_attention),
            conv_filters: filters,
            kernel: 3,
            padding: 1,
            fc_width: 64,
            use_attention,
            state_dim: 4,
            action_dim: 2,
            temperature: 1.0,
            dropout_p: 0.1,
        }
    }

    /// Full-scale configuration (five conv layers, 400-wide heads). Kept
    /// constructible for shape and parameter-count checks; training runs
    /// use the toy scale.
    pub fn paper_scale(use_attention: bool) -> Self {
        let filters = vec![64, 64, 32, 32, 16];
        ArchitectureConfig {
            image_h: 175,
            image_w: 200,
            image_c: 3,
            conv_strides: Self::default_strides(filters.len(), use_attention),
            conv_filters: filters,
            kernel: 3,
            padding: 1,
            fc_width: 400,
            use_attention,
            state_dim: 4,
            action_dim: 2,
            temperature: 1.0,
            dropout_p: 0.1,
        }
    }

    pub fn default_strides(n_layers: usize, use_attention: bool) -> Vec<usize> {
        let mut s = vec![1; n_layers];
        if n_layers > 0 {
            s[0] = if use_attention { 2 } else { 4 };
        }
        s
    }

    /// Spatial dims after each conv layer; configuration error naming the
    /// offending layer if the stack collapses below 1x1.
    pub fn conv_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        if self.conv_filters.is_empty() {
            return Err(Error::Config("at least one conv layer required".into()));
        }
        if self.conv_strides.len() != self.conv_filters.len() {
            return Err(Error::Config(format!(
                "conv_strides has {} entries for {} layers",
                self.conv_strides.len(),
                self.conv_filters.len()
            )));
        }
        let mut shapes = Vec::new();
        let (mut h, mut w) = (self.image_h, self.image_w);
        for (i, (&c, &s)) in self
            .conv_filters
            .iter()
            .zip(self.conv_strides.iter())
            .enumerate()
        {
            if self.kernel > h + 2 * self.padding || self.kernel > w + 2 * self.padding {
                return Err(Error::Config(format!(
                    "conv layer {} collapses spatial dims below 1 (input {}x{}, kernel {}, padding {})",
                    i + 1,
                    h,
                    w,
                    self.kernel,
                    self.padding
                )));
            }
            h = (h + 2 * self.padding - self.kernel) / s + 1;
            w = (w + 2 * self.padding - self.kernel) / s + 1;
            shapes.push((c, h, w));
        }
        Ok(shapes)
    }

    /// Dimension of the head input: 2C feature points for attention
    /// variants, the flattened last conv map otherwise.
    pub fn feature_dim(&self) -> Result<usize> {
        let shapes = self.conv_shapes()?;
        let (c, h, w) = *shapes.last().unwrap();
        Ok(if self.use_attention { 2 * c } else { c * h * w })
    }

    pub fn validate(&self) -> Result<()> {
        self.conv_shapes()?;
        if self.fc_width < self.action_dim {
            return Err(Error::Config(format!(
                "fc_width {} smaller than action_dim {}",
                self.fc_width, self.action_dim
            )));
        }
        if self.action_dim == 0 {
            return Err(Error::Config("action_dim must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvSlots {
    w: usize,
    b: usize,
    /// gamma/beta slots and running-stat index; None for the last layer,
    /// which feeds the attention map (or the flatten) directly.
    bn: Option<(usize, usize, usize)>,
    stride: usize,
}

#[derive(Debug, Clone)]
struct FcSlots {
    w: usize,
    b: usize,
}

/// Shared-trunk two-head network. Trunk parameters are single slots
/// referenced by both heads' forward passes, so gradient contributions
/// from both losses sum into the same buffers.
#[derive(Debug, Clone)]
pub struct GplacModel<S: Scalar> {
    pub variant: ModelVariant,
    pub arch: ArchitectureConfig,
    pub params: ParamSet<S>,
    pub bn: Vec<BnRunning<S>>,
    conv: Vec<ConvSlots>,
    policy: Option<Vec<FcSlots>>,
    classifier: Option<Vec<FcSlots>>,
    pub feature_dim: usize,
    /// (C, H, W) of the last conv map.
    pub conv_out: (usize, usize, usize),
}

fn he_tensor<S: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..crate::tensor::numel(shape))
        .map(|_| S::from_f64(rng.normal() * std))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape consistent")
}

/// Build a variant's network with deterministic He-style initialization
/// from the seed. The classifier head exists only for variants that train
/// on weak data; AttFt starts as trunk + classifier and swaps heads for
/// its finetuning phase via [`GplacModel::into_policy_model`].
pub fn build_model<S: Scalar>(
    variant: ModelVariant,
    arch: &ArchitectureConfig,
    seed: u64,
) -> Result<GplacModel<S>> {
    if arch.use_attention != variant.uses_attention() {
        return Err(Error::Config(format!(
            "variant {} requires use_attention={}, config says {}",
            variant.name(),
            variant.uses_attention(),
            arch.use_attention
        )));
    }
    arch.validate()?;
    build_with_heads(
        variant,
        arch,
        seed,
        variant.builds_policy(),
        variant.builds_classifier(),
    )
}

fn build_with_heads<S: Scalar>(
    variant: ModelVariant,
    arch: &ArchitectureConfig,
    seed: u64,
    with_policy: bool,
    with_classifier: bool,
) -> Result<GplacModel<S>> {
    let shapes = arch.conv_shapes()?;
    let mut rng = Rng::new(stream_seed(seed, "init"));
    let mut params = ParamSet::new();
    let mut bn = Vec::new();
    let mut conv = Vec::new();
    let n_layers = arch.conv_filters.len();
    let mut c_prev = arch.image_c;
    for (i, &c_out) in arch.conv_filters.iter().enumerate() {
        let k = arch.kernel;
        let mut weight = he_tensor::<S>(&mut rng, &[c_out, c_prev, k, k], c_prev * k * k);
        if i + 1 == n_layers && arch.use_attention {
            // The spatial softmax sees this layer raw (no batch norm): a
            // larger initial scale makes the per-channel distributions
            // peaked from the start, so the expected points track real
            // activation maxima instead of washing out to the centroid.
            let gain = S::from_f64(4.0);
            for v in weight.data_mut() {
                *v *= gain;
            }
        }
        let w = params.add(&format!("trunk/conv{}/weight", i + 1), weight)?;
        let b = params.add(&format!("trunk/conv{}/bias", i + 1), Tensor::zeros(&[c_out]))?;
        let bn_slots = if i + 1 < n_layers {
            let gamma = params.add(
                &format!("trunk/bn{}/gamma", i + 1),
                Tensor::filled(&[c_out], S::ONE),
            )?;
            let beta = params.add(&format!("trunk/bn{}/beta", i + 1), Tensor::zeros(&[c_out]))?;
            bn.push(BnRunning::new(c_out));
            Some((gamma, beta, bn.len() - 1))
        } else {
            None
        };
        conv.push(ConvSlots {
            w,
            b,
            bn: bn_slots,
            stride: arch.conv_strides[i],
        });
        c_prev = c_out;
    }
    let feature_dim = arch.feature_dim()?;

    let head = |params: &mut ParamSet<S>, rng: &mut Rng, prefix: &str, d_in: usize, d_out: usize| -> Result<Vec<FcSlots>> {
        let dims = [
            (d_in, arch.fc_width),
            (arch.fc_width, arch.fc_width),
            (arch.fc_width, d_out),
        ];
        let mut layers = Vec::new();
        for (j, (fan_in, width)) in dims.iter().enumerate() {
            let w = params.add(
                &format!("{prefix}/fc{}/weight", j + 1),
                he_tensor(rng, &[*width, *fan_in], *fan_in),
            )?;
            let b = params.add(&format!("{prefix}/fc{}/bias", j + 1), Tensor::zeros(&[*width]))?;
            layers.push(FcSlots { w, b });
        }
        Ok(layers)
    };

    let policy = if with_policy {
        Some(head(
            &mut params,
            &mut rng,
            "policy",
            feature_dim + arch.state_dim,
            arch.action_dim,
        )?)
    } else {
        None
    };
    let classifier = if with_classifier {
        Some(head(&mut params, &mut rng, "classifier", feature_dim, 1)?)
    } else {
        None
    };

    Ok(GplacModel {
        variant,
        arch: arch.clone(),
        params,
        bn,
        conv,
        policy,
        classifier,
        feature_dim,
        conv_out: *shapes.last().unwrap(),
    })
}

impl<S: Scalar> GplacModel<S> {
    pub fn has_classifier(&self) -> bool {
        self.classifier.is_some()
    }

    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }

    /// Conv stack: conv -> batch norm -> relu between layers, plain conv
    /// output at the top (that map is what the attention layer sees).
    pub fn forward_trunk(
        &mut self,
        tape: &mut Tape<S>,
        images: ValueId,
        mode: Mode,
    ) -> Result<ValueId> {
        let mut x = images;
        let n_layers = self.conv.len();
        for i in 0..n_layers {
            let layer = self.conv[i].clone();
            let w = tape.param(&self.params, layer.w);
            let b = tape.param(&self.params, layer.b);
            x = tape.conv2d(x, w, b, layer.stride, self.arch.padding)?;
            if let Some((gamma_slot, beta_slot, bn_idx)) = layer.bn {
                let gamma = tape.param(&self.params, gamma_slot);
                let beta = tape.param(&self.params, beta_slot);
                x = tape.batch_norm(x, gamma, beta, &mut self.bn[bn_idx], mode)?;
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Trunk output reduced to the head input: 2C feature points through
    /// the attention layer, or the flattened conv map.
    pub fn forward_features(
        &mut self,
        tape: &mut Tape<S>,
        images: ValueId,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ValueId> {
        let h = self.forward_trunk(tape, images, mode)?;
        if self.arch.use_attention {
            attention::attention_layer(
                tape,
                h,
                S::from_f64(self.arch.temperature),
                self.arch.dropout_p,
                mode,
                rng,
            )
        } else {
            let n = tape.shape(h)[0];
            tape.reshape(h, &[n, self.feature_dim])
        }
    }

    fn head_forward(
        &self,
        tape: &mut Tape<S>,
        layers: &[FcSlots],
        input: ValueId,
    ) -> Result<ValueId> {
        let mut x = input;
        let last = layers.len() - 1;
        for (j, fc) in layers.iter().enumerate() {
            let w = tape.param(&self.params, fc.w);
            let b = tape.param(&self.params, fc.b);
            x = tape.affine(x, w, b)?;
            if j < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Policy head on precomputed features: actions from
    /// [features || robot state] rows.
    pub fn policy_head(
        &self,
        tape: &mut Tape<S>,
        features: ValueId,
        states: ValueId,
    ) -> Result<ValueId> {
        let layers = self.policy.clone().ok_or_else(|| {
            Error::Usage(format!("variant {} has no policy head", self.variant.name()))
        })?;
        let joined = tape.concat(features, states, 1)?;
        self.head_forward(tape, &layers, joined)
    }

    /// Classifier head on precomputed features: one logit per row.
    pub fn classifier_head(&self, tape: &mut Tape<S>, features: ValueId) -> Result<ValueId> {
        let layers = self.classifier.clone().ok_or_else(|| {
            Error::Usage(format!(
                "variant {} has no classifier head",
                self.variant.name()
            ))
        })?;
        let n = tape.shape(features)[0];
        let logits = self.head_forward(tape, &layers, features)?;
        tape.reshape(logits, &[n])
    }

    fn check_image_batch(&self, shape: &[usize]) -> Result<usize> {
        let want = [self.arch.image_c, self.arch.image_h, self.arch.image_w];
        if shape.len() == 4 && shape[1..] == want {
            Ok(shape[0])
        } else {
            Err(Error::Usage(format!(
                "image batch shape {shape:?} does not match [N, {}, {}, {}]",
                want[0], want[1], want[2]
            )))
        }
    }

    /// Batched policy pass: actions [N, action_dim] from images and robot
    /// states. Robot state enters the policy head only.
    pub fn policy_forward_batch(
        &mut self,
        tape: &mut Tape<S>,
        images: ValueId,
        states: ValueId,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ValueId> {
        if self.policy.is_none() {
            return Err(Error::Usage(format!(
                "variant {} has no policy head",
                self.variant.name()
            )));
        }
        let n = self.check_image_batch(tape.shape(images))?;
        if tape.shape(states) != [n, self.arch.state_dim] {
            return Err(Error::Usage(format!(
                "robot_state shape {:?} does not match [{n}, {}]",
                tape.shape(states),
                self.arch.state_dim
            )));
        }
        let feat = self.forward_features(tape, images, mode, rng)?;
        let joined = tape.concat(feat, states, 1)?;
        let layers = self.policy.clone().unwrap();
        self.head_forward(tape, &layers, joined)
    }

    /// Batched classifier pass: logits [N]. The classifier reads the
    /// features alone; probability is sigmoid(logit).
    pub fn classifier_forward_batch(
        &mut self,
        tape: &mut Tape<S>,
        images: ValueId,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ValueId> {
        if self.classifier.is_none() {
            return Err(Error::Usage(format!(
                "variant {} has no classifier head",
                self.variant.name()
            )));
        }
        let n = self.check_image_batch(tape.shape(images))?;
        let feat = self.forward_features(tape, images, mode, rng)?;
        let layers = self.classifier.clone().unwrap();
        let logits = self.head_forward(tape, &layers, feat)?;
        tape.reshape(logits, &[n])
    }

    /// Single-observation policy pass; deterministic in eval mode.
    pub fn policy_forward(
        &mut self,
        image: &Tensor<S>,
        robot_state: &[S],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Tensor<S>> {
        if robot_state.len() != self.arch.state_dim {
            return Err(Error::Usage(format!(
                "robot_state length {} does not match state_dim {}",
                robot_state.len(),
                self.arch.state_dim
            )));
        }
        let mut tape = Tape::new();
        let img = self.lift_single(&mut tape, image)?;
        let st = tape.input(&Tensor::from_vec(&[1, robot_state.len()], robot_state.to_vec())?);
        let out = self.policy_forward_batch(&mut tape, img, st, mode, rng)?;
        Ok(Tensor::from_vec(&[self.arch.action_dim], tape.value(out).to_vec())?)
    }

    /// Single-observation classifier logit.
    pub fn classifier_forward(
        &mut self,
        image: &Tensor<S>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<S> {
        let mut tape = Tape::new();
        let img = self.lift_single(&mut tape, image)?;
        let out = self.classifier_forward_batch(&mut tape, img, mode, rng)?;
        Ok(tape.value(out)[0])
    }

    fn lift_single(&self, tape: &mut Tape<S>, image: &Tensor<S>) -> Result<ValueId> {
        let want = [self.arch.image_c, self.arch.image_h, self.arch.image_w];
        if image.shape() == want {
            let lifted = Tensor::from_vec(
                &[1, want[0], want[1], want[2]],
                image.data().to_vec(),
            )?;
            Ok(tape.input(&lifted))
        } else if image.shape().len() == 4 && image.shape()[0] == 1 && image.shape()[1..] == want {
            Ok(tape.input(image))
        } else {
            Err(Error::Usage(format!(
                "image shape {:?} does not match [{}, {}, {}]",
                image.shape(),
                want[0],
                want[1],
                want[2]
            )))
        }
    }

    pub fn param_count(&self, partition: Option<&str>) -> usize {
        self.params.count(partition)
    }

    /// AttFt phase handoff: keep the trained trunk (weights and running
    /// batch-norm statistics), drop the classifier head, attach a freshly
    /// initialized policy head.
    pub fn into_policy_model(self, variant: ModelVariant, seed: u64) -> Result<GplacModel<S>> {
        let mut fresh = build_with_heads(variant, &self.arch, seed, true, false)?;
        for p in self.params.iter() {
            if p.partition() == "trunk" {
                let slot = fresh
                    .params
                    .slot_of(&p.name)
                    .ok_or_else(|| Error::State(format!("trunk parameter {} missing", p.name)))?;
                fresh
                    .params
                    .get_mut(slot)
                    .value
                    .data_mut()
                    .copy_from_slice(p.value.data());
            }
        }
        fresh.bn = self.bn.clone();
        Ok(fresh)
    }

    /// All named state: parameters, then batch-norm running statistics.
    /// This is the checkpoint payload (optimizer state is appended by the
    /// trainer).
    pub fn export_state(&self) -> Vec<(String, Vec<usize>, Vec<S>)> {
        let mut entries = Vec::new();
        for p in self.params.iter() {
            entries.push((
                p.name.clone(),
                p.value.shape().to_vec(),
                p.value.data().to_vec(),
            ));
        }
        for (i, layer) in self.conv.iter().enumerate() {
            if let Some((_, _, bn_idx)) = layer.bn {
                let r = &self.bn[bn_idx];
                let base = format!("trunk/bn{}", i + 1);
                entries.push((format!("{base}/running_mean"), vec![r.mean.len()], r.mean.clone()));
                entries.push((format!("{base}/running_var"), vec![r.var.len()], r.var.clone()));
                entries.push((
                    format!("{base}/running_count"),
                    vec![1],
                    vec![S::from_f64(r.count as f64)],
                ));
            }
        }
        entries
    }

    /// Restore parameters and running statistics from checkpoint entries.
    /// Unknown names are ignored (the checkpoint also carries optimizer
    /// state); missing parameters are an error.
    pub fn import_state(&mut self, entries: &[(String, Vec<usize>, Vec<S>)]) -> Result<()> {
        let lookup = |name: &str| -> Result<&(String, Vec<usize>, Vec<S>)> {
            entries
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::State(format!("checkpoint is missing entry {name}")))
        };
        for slot in 0..self.params.len() {
            let name = self.params.get(slot).name.clone();
            let (_, dims, data) = lookup(&name)?;
            if dims != self.params.get(slot).value.shape() {
                return Err(Error::State(format!(
                    "checkpoint entry {name} has shape {dims:?}, model expects {:?}",
                    self.params.get(slot).value.shape()
                )));
            }
            self.params.get_mut(slot).value.data_mut().copy_from_slice(data);
        }
        for (i, layer) in self.conv.clone().iter().enumerate() {
            if let Some((_, _, bn_idx)) = layer.bn {
                let base = format!("trunk/bn{}", i + 1);
                let (_, _, mean) = lookup(&format!("{base}/running_mean"))?;
                let (_, _, var) = lookup(&format!("{base}/running_var"))?;
                let (_, _, count) = lookup(&format!("{base}/running_count"))?;
                self.bn[bn_idx].mean.copy_from_slice(mean);
                self.bn[bn_idx].var.copy_from_slice(var);
                self.bn[bn_idx].count = count[0].to_f64() as u64;
            }
        }
        Ok(())
    }

    /// Human-readable layer table for the `describe` command.
    pub fn describe(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "variant {} ({})",
            self.variant.name(),
            if self.arch.use_attention {
                "spatial attention"
            } else {
                "plain cnn"
            }
        );
        let _ = writeln!(
            out,
            "input image {}x{}x{}",
            self.arch.image_c, self.arch.image_h, self.arch.image_w
        );
        let shapes = self.arch.conv_shapes().expect("validated at build");
        for (i, ((c, h, w), layer)) in shapes.iter().zip(self.conv.iter()).enumerate() {
            let _ = writeln!(
                out,
                "conv{} 3x3 s{} p{} -> {}x{}x{}{}",
                i + 1,
                layer.stride,
                self.arch.padding,
                c,
                h,
                w,
                if layer.bn.is_some() { " +bn +relu" } else { "" }
            );
        }
        if self.arch.use_attention {
            let _ = writeln!(
                out,
                "spatial attention -> {} feature coordinates ({} channels)",
                self.feature_dim, self.conv_out.0
            );
        } else {
            let _ = writeln!(out, "flatten -> {}", self.feature_dim);
        }
        if self.has_policy() {
            let _ = writeln!(
                out,
                "policy head {} -> {} -> {} -> {}",
                self.feature_dim + self.arch.state_dim,
                self.arch.fc_width,
                self.arch.fc_width,
                self.arch.action_dim
            );
        }
        if self.has_classifier() {
            let _ = writeln!(
                out,
                "classifier head {} -> {} -> {} -> 1",
                self.feature_dim, self.arch.fc_width, self.arch.fc_width
            );
        }
        let _ = writeln!(
            out,
            "parameters: trunk {}, policy {}, classifier {}, total {}",
            self.param_count(Some("trunk")),
            self.param_count(Some("policy")),
            self.param_count(Some("classifier")),
            self.param_count(None)
        );
        out
    }
}

/// Mean squared Euclidean distance between predicted and demonstrated
/// action rows.
pub fn task_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pred_actions: ValueId,
    demo_actions: &Tensor<S>,
) -> Result<ValueId> {
    tape.task_loss(pred_actions, demo_actions)
}

/// Mean binary cross-entropy of classifier logits against {0,1} labels.
pub fn ce_loss<S: Scalar>(tape: &mut Tape<S>, logits: ValueId, labels: &[u8]) -> Result<ValueId> {
    tape.bce_loss(logits, labels)
}

/// Warmup-gated multitask objective: the task loss alone before
/// `warmup_steps`, task + lambda * ce afterwards.
pub fn combined_loss<S: Scalar>(
    tape: &mut Tape<S>,
    task: ValueId,
    ce: Option<ValueId>,
    lambda: S,
    step: usize,
    warmup_steps: usize,
) -> Result<ValueId> {
    match ce {
        Some(ce) if step >= warmup_steps => {
            let scaled = tape.scale(ce, lambda);
            tape.add(task, scaled)
        }
        _ => Ok(task),
    }
}
