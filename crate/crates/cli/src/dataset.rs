//! On-disk dataset: binary PPM (P6) images, a `manifest.jsonl` with one
//! record per demonstration step / weak example, and `envs.jsonl` with
//! the full environment specs for bit-exact re-rendering. Generation is a
//! pure function of the config seed; regenerating into a fresh directory
//! reproduces every byte.

use crate::config::Config;
use crate::{Error, Result};
use gplac_core::rng::stream_seed;
use gplac_core::sim::{
    gen_demos, gen_weak, make_env_sets, EnvSets, EnvironmentSpec, SimConfig, Trajectory,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

// ---- PPM -----------------------------------------------------------------

/// Write a binary P6 PPM, maxval 255.
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    debug_assert_eq!(rgb.len(), w * h * 3);
    let mut out = Vec::with_capacity(rgb.len() + 32);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    out.extend_from_slice(rgb);
    std::fs::write(path, out).map_err(|e| Error::io(e, path))
}

/// Strict P6 reader for the files this tool writes.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(e, path))?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    let header_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(2)
        .map(|(i, _)| i + 1)
        .ok_or_else(|| bad("truncated PPM header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("non-ASCII header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("P6") {
        return Err(bad("not a P6 PPM"));
    }
    let dims = lines.next().ok_or_else(|| bad("missing dimensions"))?;
    let (w, h) = dims
        .split_once(' ')
        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
        .ok_or_else(|| bad("bad dimensions"))?;
    if lines.next() != Some("255") {
        return Err(bad("expected maxval 255"));
    }
    let pixels = &bytes[header_end..];
    if pixels.len() != w * h * 3 {
        return Err(bad(&format!(
            "payload is {} bytes, expected {}",
            pixels.len(),
            w * h * 3
        )));
    }
    Ok((w, h, pixels.to_vec()))
}

// ---- manifest records ------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub env_id: u32,
    /// demo | demo_multi | weak_train | weak_holdout
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<[f32; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<[f32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object_pos: Option<[f32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reset_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter: Option<(i32, i32)>,
    /// Pair index of a weak example within its environment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnvRecord {
    set: String,
    spec: EnvironmentSpec,
}

// ---- generation -------------------------------------------------------------

pub struct GenSummary {
    pub demo_steps: usize,
    pub demo_multi_steps: usize,
    pub weak_examples: usize,
    pub expert_discards: usize,
}

/// Generate the full dataset into `cfg.data_dir`. Byte-identical for a
/// fixed seed.
pub fn generate(cfg: &Config) -> Result<GenSummary> {
    let sim = cfg.sim();
    let root = &cfg.data_dir;
    let master = stream_seed(cfg.seed, "dataset");
    std::fs::create_dir_all(root).map_err(|e| Error::io(e, root))?;

    let sets = make_env_sets(cfg.n_weak_envs, cfg.n_test_envs, master, cfg.max_distractors)?;
    write_envs(&root.join("envs.jsonl"), &sets)?;

    let mut records: Vec<ManifestRecord> = Vec::new();
    let mut discards = 0usize;

    // demos from the labeled environment
    let (demos, d) = gen_demos(
        sets.labeled(),
        &sim,
        cfg.demo_episodes,
        stream_seed(master, "demos"),
    )?;
    discards += d;
    let demo_steps = write_demo_set(root, "demo", &demos, &sim, &mut records)?;

    // demos spread round-robin over every weak environment (the
    // many-labeled-environments training regimes)
    let mut demo_multi_steps = 0;
    if cfg.gen_multi_demos {
        let mut per_env: BTreeMap<u32, usize> = BTreeMap::new();
        for ep in 0..cfg.demo_episodes {
            *per_env
                .entry(sets.weak[ep % sets.weak.len()].env_id)
                .or_insert(0) += 1;
        }
        let mut all = Vec::new();
        for spec in &sets.weak {
            let count = per_env.get(&spec.env_id).copied().unwrap_or(0);
            if count == 0 {
                continue;
            }
            let (trajs, d) = gen_demos(
                spec,
                &sim,
                count,
                stream_seed(master, &format!("demos_multi_{}", spec.env_id)),
            )?;
            discards += d;
            all.extend(trajs);
        }
        demo_multi_steps = write_demo_set(root, "demo_multi", &all, &sim, &mut records)?;
    }

    // weak set, split into train / holdout by pair index
    let weak = gen_weak(
        &sets.weak,
        &sim,
        cfg.weak_pos_per_env,
        cfg.weak_neg_per_env,
        stream_seed(master, "weak"),
    );
    let weak_dir = root.join("weak");
    std::fs::create_dir_all(&weak_dir).map_err(|e| Error::io(e, &weak_dir))?;
    let pairs_per_env = cfg.weak_pos_per_env.max(cfg.weak_neg_per_env);
    let train_pairs =
        ((pairs_per_env as f64) * (1.0 - cfg.holdout_fraction)).round() as usize;
    let mut pair_counter: BTreeMap<(u32, u64), u32> = BTreeMap::new();
    let mut next_pair: BTreeMap<u32, u32> = BTreeMap::new();
    for e in &weak {
        let pair = *pair_counter.entry((e.env_id, e.scene_seed)).or_insert_with(|| {
            let c = next_pair.entry(e.env_id).or_insert(0);
            let v = *c;
            *c += 1;
            v
        });
        let kind = if e.label == 1 { "pos" } else { "neg" };
        let rel = format!("weak/env{:02}_{kind}{:03}.ppm", e.env_id, pair);
        write_ppm(&root.join(&rel), sim.image_w, sim.image_h, &e.image)?;
        records.push(ManifestRecord {
            path: rel,
            env_id: e.env_id,
            split: if (pair as usize) < train_pairs {
                "weak_train".into()
            } else {
                "weak_holdout".into()
            },
            episode: None,
            step: None,
            state: None,
            action: None,
            label: Some(e.label),
            object_pos: e.object_pos,
            reset_seed: None,
            scene_seed: Some(e.scene_seed),
            jitter: Some(e.jitter),
            pair: Some(pair),
        });
    }

    write_manifest(&root.join("manifest.jsonl"), &records)?;
    Ok(GenSummary {
        demo_steps,
        demo_multi_steps,
        weak_examples: weak.len(),
        expert_discards: discards,
    })
}

fn write_demo_set(
    root: &Path,
    split: &str,
    trajs: &[Trajectory],
    sim: &SimConfig,
    records: &mut Vec<ManifestRecord>,
) -> Result<usize> {
    let dir = root.join(split);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(e, &dir))?;
    let mut steps = 0;
    for (ep, traj) in trajs.iter().enumerate() {
        for (st, s) in traj.steps.iter().enumerate() {
            let rel = format!("{split}/ep{ep:04}_st{st:03}.ppm");
            write_ppm(&root.join(&rel), sim.image_w, sim.image_h, &s.image)?;
            records.push(ManifestRecord {
                path: rel,
                env_id: traj.env_id,
                split: split.to_string(),
                episode: Some(ep as u32),
                step: Some(st as u32),
                state: Some(s.robot_state),
                action: Some(s.action),
                label: None,
                object_pos: Some(s.object_pos),
                reset_seed: Some(traj.reset_seed),
                scene_seed: None,
                jitter: None,
                pair: None,
            });
            steps += 1;
        }
    }
    Ok(steps)
}

fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(e, path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(e, path))?;
    }
    Ok(())
}

fn write_envs(path: &Path, sets: &EnvSets) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(e, path))?;
    let mut w = BufWriter::new(file);
    for (set, spec) in sets
        .weak
        .iter()
        .map(|s| ("weak", s))
        .chain(sets.test.iter().map(|s| ("test", s)))
    {
        let rec = EnvRecord {
            set: set.to_string(),
            spec: spec.clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(e, path))?;
    }
    Ok(())
}

pub fn read_envs(path: &Path) -> Result<EnvSets> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(e, path))?;
    let mut weak = Vec::new();
    let mut test = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: EnvRecord =
            serde_json::from_str(line).map_err(|e| Error::Data(format!("envs.jsonl: {e}")))?;
        match rec.set.as_str() {
            "weak" => weak.push(rec.spec),
            "test" => test.push(rec.spec),
            other => return Err(Error::Data(format!("envs.jsonl: unknown set {other:?}"))),
        }
    }
    if weak.is_empty() {
        return Err(Error::Data("envs.jsonl has no weak environments".into()));
    }
    Ok(EnvSets { weak, test })
}

// ---- loading ----------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct DemoSet {
    pub images: Vec<Vec<u8>>,
    pub states: Vec<[f32; 4]>,
    pub actions: Vec<[f32; 2]>,
    pub object_pos: Vec<[f32; 2]>,
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct WeakSet {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    pub env_ids: Vec<u32>,
    pub pairs: Vec<u32>,
    pub object_pos: Vec<Option<[f32; 2]>>,
}

impl WeakSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub envs: EnvSets,
    pub demo: DemoSet,
    pub demo_multi: DemoSet,
    pub weak_train: WeakSet,
    pub weak_holdout: WeakSet,
    pub image_h: usize,
    pub image_w: usize,
}

/// Load and validate a dataset directory. Every manifest entry must point
/// at a readable PPM of the configured size; inconsistencies are data
/// errors raised before any training starts.
pub fn load(root: &Path, cfg: &Config) -> Result<Dataset> {
    let manifest_path = root.join("manifest.jsonl");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(e, &manifest_path))?;
    let envs = read_envs(&root.join("envs.jsonl"))?;
    let mut ds = Dataset {
        envs,
        demo: DemoSet::default(),
        demo_multi: DemoSet::default(),
        weak_train: WeakSet::default(),
        weak_holdout: WeakSet::default(),
        image_h: cfg.image_h,
        image_w: cfg.image_w,
    };
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("manifest.jsonl:{}: {e}", lineno + 1)))?;
        let img_path = root.join(&rec.path);
        let (w, h, rgb) = read_ppm(&img_path)?;
        if w != cfg.image_w || h != cfg.image_h {
            return Err(Error::Data(format!(
                "{}: image is {w}x{h}, config expects {}x{}",
                img_path.display(),
                cfg.image_w,
                cfg.image_h
            )));
        }
        match rec.split.as_str() {
            "demo" | "demo_multi" => {
                let (state, action, opos) = match (rec.state, rec.action, rec.object_pos) {
                    (Some(s), Some(a), Some(o)) => (s, a, o),
                    _ => {
                        return Err(Error::Data(format!(
                            "manifest.jsonl:{}: demo record missing state/action",
                            lineno + 1
                        )))
                    }
                };
                let set = if rec.split == "demo" {
                    &mut ds.demo
                } else {
                    &mut ds.demo_multi
                };
                set.images.push(rgb);
                set.states.push(state);
                set.actions.push(action);
                set.object_pos.push(opos);
            }
            "weak_train" | "weak_holdout" => {
                let label = rec.label.ok_or_else(|| {
                    Error::Data(format!(
                        "manifest.jsonl:{}: weak record missing label",
                        lineno + 1
                    ))
                })?;
                let set = if rec.split == "weak_train" {
                    &mut ds.weak_train
                } else {
                    &mut ds.weak_holdout
                };
                set.images.push(rgb);
                set.labels.push(label);
                set.env_ids.push(rec.env_id);
                set.pairs.push(rec.pair.unwrap_or(0));
                set.object_pos.push(rec.object_pos);
            }
            other => {
                return Err(Error::Data(format!(
                    "manifest.jsonl:{}: unknown split {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    if ds.demo.is_empty() {
        return Err(Error::Data("dataset has no demonstration steps".into()));
    }
    Ok(ds)
}

/// Indices of the weak-training examples retained at a reduced budget.
/// Whole positive/negative pairs are taken round-robin across the
/// environments (all first pairs, then all second pairs, ...), so a 1%
/// budget keeps a handful of pairs spread over as many environments as
/// possible. At least one pair always survives.
pub fn weak_subset(set: &WeakSet, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..set.len()).collect();
    }
    let mut keys: Vec<(u32, u32)> = set
        .pairs
        .iter()
        .zip(set.env_ids.iter())
        .map(|(p, e)| (*p, *e))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let total_pairs = keys.len();
    let keep = ((total_pairs as f64 * fraction).round() as usize).max(1);
    // round-robin order: pair index first, then environment
    let kept: std::collections::HashSet<(u32, u32)> = keys.into_iter().take(keep).collect();
    (0..set.len())
        .filter(|i| kept.contains(&(set.pairs[*i], set.env_ids[*i])))
        .collect()
}

/// Build the output path of a run inside the out dir.
pub fn run_dir(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(dir: &Path) -> Config {
        let mut cfg = Config::default();
        cfg.n_weak_envs = 2;
        cfg.n_test_envs = 1;
        cfg.demo_episodes = 2;
        cfg.weak_pos_per_env = 5;
        cfg.weak_neg_per_env = 5;
        cfg.seed = 3;
        cfg.data_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn ppm_round_trip_and_strictness() {
        let dir = std::env::temp_dir().join("gplac_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.ppm");
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8).collect();
        write_ppm(&path, 2, 3, &rgb).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (2, 3));
        assert_eq!(back, rgb);
        std::fs::write(&path, b"P5\n2 3\n255\nxxx").unwrap();
        assert!(read_ppm(&path).is_err());
    }

    #[test]
    fn generate_load_counts_and_split() {
        let dir = std::env::temp_dir().join("gplac_gen_test");
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = tiny_cfg(&dir);
        let summary = generate(&cfg).unwrap();
        assert_eq!(summary.demo_steps, 2 * 40);
        assert_eq!(summary.weak_examples, 2 * 10);
        let ds = load(&dir, &cfg).unwrap();
        assert_eq!(ds.demo.len(), 80);
        assert_eq!(ds.demo_multi.len(), 80);
        // holdout = 20% of 5 pairs per env => 1 pair (pos+neg) per env
        assert_eq!(ds.weak_holdout.len(), 2 * 2);
        assert_eq!(ds.weak_train.len(), 2 * 8);
        assert_eq!(ds.envs.weak.len(), 2);
        assert_eq!(ds.envs.test.len(), 1);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir_a = std::env::temp_dir().join("gplac_gen_a");
        let dir_b = std::env::temp_dir().join("gplac_gen_b");
        for d in [&dir_a, &dir_b] {
            let _ = std::fs::remove_dir_all(d);
        }
        let mut cfg_a = tiny_cfg(&dir_a);
        cfg_a.demo_episodes = 1;
        let mut cfg_b = tiny_cfg(&dir_b);
        cfg_b.demo_episodes = 1;
        generate(&cfg_a).unwrap();
        generate(&cfg_b).unwrap();
        let walk = |root: &Path| -> Vec<(String, Vec<u8>)> {
            let mut files = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(d) = stack.pop() {
                for entry in std::fs::read_dir(&d).unwrap() {
                    let p = entry.unwrap().path();
                    if p.is_dir() {
                        stack.push(p);
                    } else {
                        let rel = p.strip_prefix(root).unwrap().to_string_lossy().to_string();
                        files.push((rel, std::fs::read(&p).unwrap()));
                    }
                }
            }
            files.sort();
            files
        };
        assert_eq!(walk(&dir_a), walk(&dir_b));
    }

    #[test]
    fn weak_subset_round_robin() {
        let mut set = WeakSet::default();
        for env in 0..4u32 {
            for pair in 0..5u32 {
                for label in [1u8, 0] {
                    set.images.push(vec![0; 3]);
                    set.labels.push(label);
                    set.env_ids.push(env);
                    set.pairs.push(pair);
                    set.object_pos.push(None);
                }
            }
        }
        // 20 pairs total; 10% keeps 2 pairs = 4 images, spread over envs
        let idx = weak_subset(&set, 0.1);
        assert_eq!(idx.len(), 4);
        let envs: std::collections::HashSet<u32> =
            idx.iter().map(|i| set.env_ids[*i]).collect();
        assert_eq!(envs.len(), 2);
        // pairs stay whole
        let pos = idx.iter().filter(|i| set.labels[**i] == 1).count();
        assert_eq!(pos, 2);
        // tiny fractions keep at least one pair
        assert_eq!(weak_subset(&set, 1e-6).len(), 2);
    }

    #[test]
    fn load_rejects_missing_image() {
        let dir = std::env::temp_dir().join("gplac_gen_missing");
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = tiny_cfg(&dir);
        generate(&cfg).unwrap();
        std::fs::remove_file(dir.join("demo/ep0000_st000.ppm")).unwrap();
        let err = load(&dir, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("ep0000_st000.ppm"));
    }
}
