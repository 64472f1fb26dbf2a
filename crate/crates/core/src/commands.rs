//! Artifact-producing commands. Each writes its outputs, then appends one
//! manifest record to the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::bundle::{self, load_bundle, BundleMeta};
use crate::corpus::io::{read_jsonl, write_jsonl};
use crate::corpus::{generate_toy_world, Dataset, SplitRole, ToyConfig};
use crate::decode::{sample_diverse, SampleRecord};
use crate::error::{Error, Result};
use crate::evalkit::{consensus_rerank, diversity_report, novel_object_f1, oracle_report, words, ConsensusIndex, MetricReport, Words};
use crate::manifest::{self, fingerprint, RunManifest};
use crate::model::CosModel;
use crate::objective::{write_loss_log, Trainer};
use crate::pipeline::{model_config, paired_examples, train_embedder};
use crate::pseudosup::{build_pseudo_pairs, pseudo_examples, read_pseudo, write_pseudo};
use crate::retrieval::{JointEmbedder, NeighborIndex};

pub const EMBEDDER_FILE: &str = "embedder.ckpt";
pub const INDEX_FILE: &str = "index.bin";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

struct Run<'a> {
    command: &'static str,
    cfg: &'a RunConfig,
    started: String,
    inputs: BTreeMap<String, String>,
    checkpoints: Vec<String>,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            command,
            cfg,
            started: manifest::now(),
            inputs: BTreeMap::new(),
            checkpoints: Vec::new(),
        })
    }

    fn input(&mut self, p: &Path) -> Result<()> {
        self.inputs.insert(p.display().to_string(), fingerprint(p)?);
        Ok(())
    }

    fn checkpoint(&mut self, p: &Path) -> Result<()> {
        self.input(p)?;
        self.checkpoints.push(format!("{}@{}", p.display(), &self.inputs[&p.display().to_string()][..16]));
        Ok(())
    }

    fn finish(self, dir: &Path, outputs: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
        for o in &outputs {
            if !o.exists() {
                return Err(Error::io(o, std::io::Error::new(std::io::ErrorKind::NotFound, "output missing")));
            }
        }
        let m = RunManifest {
            command: self.command.to_string(),
            config: self.cfg.to_pairs(),
            seed: self.cfg.seed,
            inputs: self.inputs,
            checkpoints: self.checkpoints,
            started: self.started,
            finished: manifest::now(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        manifest::append(dir, &m)?;
        Ok(outputs)
    }
}

fn parent(p: &Path) -> Result<PathBuf> {
    let d = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    Ok(d.to_path_buf())
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Synthetic raw inputs (object table, captions and features per split).
pub fn cmd_toyworld(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let run = Run::start("toyworld", cfg)?;
    let tc = ToyConfig {
        held_out: cfg.held_out.clone(),
        ..ToyConfig::default()
    };
    let w = generate_toy_world(cfg.seed_for("toyworld"), cfg.n_images, &tc)?;
    let outputs = bundle::write_raw(out, &w.objects, [&w.train, &w.val, &w.test])?;
    run.finish(out, outputs)
}

/// Validates raw inputs and writes a dataset bundle.
pub fn cmd_prepare(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = Run::start("prepare", cfg)?;
    run.input(input)?;
    let meta = BundleMeta {
        max_len: cfg.max_len,
        held_out: cfg.held_out.clone(),
    };
    let (_, outputs) = bundle::prepare(input, out, &meta)?;
    run.finish(out, outputs)
}

/// Trains the joint embedding and indexes every training context.
pub fn cmd_embed(cfg: &RunConfig, bundle_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = Run::start("embed", cfg)?;
    run.input(bundle_dir)?;
    let (ds, _) = load_bundle(bundle_dir)?;
    mkdir(out)?;
    let (e, idx) = train_embedder(&ds, &cfg.embed, &cfg.embed_train_config())?;
    let (ep, ip) = (out.join(EMBEDDER_FILE), out.join(INDEX_FILE));
    e.save(&ep)?;
    idx.save(&ip)?;
    run.finish(out, vec![ep, ip])
}

/// Trains from scratch or from `init`. With a pseudo file the combined
/// objective runs for `pseudo_iterations` steps, otherwise the paired
/// objective for `iterations` steps.
pub fn cmd_train(cfg: &RunConfig, bundle_dir: &Path, init: Option<&Path>, pseudo: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = Run::start("train", cfg)?;
    run.input(bundle_dir)?;
    let (ds, _) = load_bundle(bundle_dir)?;
    let model = match init {
        Some(p) => {
            run.checkpoint(p)?;
            CosModel::load(p)?
        }
        None => CosModel::new(model_config(&ds, cfg.model.clone(), cfg.seed_for("model-init")))?,
    };
    let (images, paired) = paired_examples(&ds)?;
    let mut t = Trainer::new(model, cfg.train_config())?;
    match pseudo {
        Some(p) => {
            run.input(p)?;
            let caps = read_pseudo(p, &ds.vocab)?;
            let ex = pseudo_examples(&caps, &images, &ds.vocab, &ds.objects, cfg.pseudo.top_k)?;
            t.run(&images, &paired, &ex, cfg.pseudo_iterations)?;
        }
        None => t.run(&images, &paired, &[], cfg.train.iterations)?,
    }
    mkdir(out)?;
    let (mp, lp) = (out.join(MODEL_FILE), out.join(LOSS_FILE));
    t.model.save(&mp)?;
    write_loss_log(&lp, &t.log)?;
    run.finish(out, vec![mp, lp])
}

/// Builds pseudo captions for every training image.
pub fn cmd_pseudo(cfg: &RunConfig, bundle_dir: &Path, embed_dir: &Path, checkpoint: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = Run::start("pseudo", cfg)?;
    run.input(bundle_dir)?;
    run.input(embed_dir)?;
    run.checkpoint(checkpoint)?;
    let (ds, _) = load_bundle(bundle_dir)?;
    let e = JointEmbedder::load(&embed_dir.join(EMBEDDER_FILE))?;
    let idx = NeighborIndex::load(&embed_dir.join(INDEX_FILE))?;
    let model = CosModel::load(checkpoint)?;
    let build = build_pseudo_pairs(&ds, &idx, &e, &model, &cfg.pseudo_config())?;
    log::info!(
        "pseudo: {} captions, {} of {} contexts rejected, {} short queries",
        build.captions.len(),
        build.rejected,
        build.attempted,
        build.short_queries
    );
    let dir = parent(out)?;
    write_pseudo(out, &build.captions, &ds.vocab)?;
    run.finish(&dir, vec![out.to_path_buf()])
}

/// Draws `samples_n` captions for every image of a split.
pub fn cmd_sample(cfg: &RunConfig, bundle_dir: &Path, checkpoint: &Path, role: SplitRole, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = Run::start("sample", cfg)?;
    run.input(bundle_dir)?;
    run.checkpoint(checkpoint)?;
    let (ds, _) = load_bundle(bundle_dir)?;
    let model = CosModel::load(checkpoint)?;
    let seed = cfg.seed_for("sample");
    let mut records = Vec::new();
    for img in ds.split(role).images() {
        let caps = sample_diverse(&model, &ds.vocab, img, cfg.samples_n, seed, &cfg.sample)?;
        records.push(SampleRecord {
            image_id: img.image_id.clone(),
            samples: caps.iter().map(|c| ds.vocab.decode(c.words())).collect(),
            seed,
        });
    }
    let dir = parent(out)?;
    write_jsonl(out, &records)?;
    run.finish(&dir, vec![out.to_path_buf()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Oracle,
    Consensus,
    Diversity,
    F1,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "consensus" => Ok(Self::Consensus),
            "diversity" => Ok(Self::Diversity),
            "f1" => Ok(Self::F1),
            _ => Err(Error::Config(format!("unknown eval mode {s:?}"))),
        }
    }
}

/// Number of nearest training images whose captions form the consensus
/// reference pool.
pub const CONSENSUS_M: usize = 5;

/// Scores a samples file against the bundle split it was drawn from.
pub fn evaluate(ds: &Dataset, role: SplitRole, samples: &[SampleRecord], mode: EvalMode, objects: &[String]) -> Result<MetricReport> {
    let split = ds.split(role);
    let mut by_image: Vec<Vec<Words>> = Vec::with_capacity(samples.len());
    let mut pairs = Vec::with_capacity(samples.len());
    for r in samples {
        let p = split
            .find(&r.image_id)
            .ok_or_else(|| Error::Unknown(format!("image {} not in the {} split", r.image_id, role.as_str())))?;
        by_image.push(r.samples.iter().map(|s| words(s)).collect());
        pairs.push(p);
    }
    let refs = || -> Vec<Vec<Words>> {
        pairs
            .iter()
            .map(|p| p.captions.iter().map(|c| ds.vocab.words(c.words())).collect())
            .collect()
    };
    let mut report = MetricReport::default();
    match mode {
        EvalMode::Oracle => report.accuracy = oracle_report(&by_image, &refs())?,
        EvalMode::Consensus => {
            let index = ConsensusIndex::from_dataset(ds);
            let mut best = Vec::with_capacity(by_image.len());
            for (s, p) in by_image.iter().zip(&pairs) {
                let r = consensus_rerank(s, p.image.pooled(), &index, CONSENSUS_M, 1)?;
                best.push(vec![s[r[0].0].clone()]);
            }
            report.accuracy = oracle_report(&best, &refs())?;
        }
        EvalMode::Diversity => {
            let (d, flags) = diversity_report(&by_image, &ds.train_texts())?;
            report.set_diversity(&d);
            report.flags = flags;
        }
        EvalMode::F1 => {
            let objects: Vec<String> = if objects.is_empty() {
                split.held_out_objects.iter().cloned().collect()
            } else {
                objects.to_vec()
            };
            if objects.is_empty() {
                return Err(Error::Config("f1 mode needs --object or held-out objects in the bundle".into()));
            }
            for o in &objects {
                let present: Vec<bool> = pairs.iter().map(|p| p.image.region_classes().iter().any(|c| c == o)).collect();
                let (f, undefined) = novel_object_f1(&by_image, o, &ds.objects, &present)?;
                report.f1.insert(o.clone(), f);
                if undefined {
                    report.flags.push(format!("{o}: no sample mentions it, precision undefined"));
                }
            }
        }
    }
    Ok(report)
}

/// Writes the JSON report; returns it for display.
pub fn cmd_eval(
    cfg: &RunConfig,
    samples_path: &Path,
    bundle_dir: &Path,
    role: SplitRole,
    mode: EvalMode,
    objects: &[String],
    out: &Path,
) -> Result<MetricReport> {
    let mut run = Run::start("eval", cfg)?;
    run.input(samples_path)?;
    run.input(bundle_dir)?;
    let (ds, _) = load_bundle(bundle_dir)?;
    let samples: Vec<SampleRecord> = read_jsonl(samples_path)?;
    let report = evaluate(&ds, role, &samples, mode, objects)?;
    let dir = parent(out)?;
    std::fs::write(out, report.to_json()?).map_err(|e| Error::io(out, e))?;
    run.finish(&dir, vec![out.to_path_buf()])?;
    Ok(report)
}
