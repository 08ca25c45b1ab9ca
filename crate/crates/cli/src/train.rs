//! Training-loop orchestration.
//!
//! A step builds one tape per example (audio and text towers), couples the
//! resulting embeddings on a small loss tape, then seeds each example tape
//! with its embedding gradient. Example work fans out across workers; the
//! gradient reduction always folds in example order, so results are
//! bit-identical for any worker count.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use mulan_core::corpus::{Corpus, MixingSpec, SampledPair, Sampler, SamplerSettings};
use mulan_core::error::{Error, Result};
use mulan_core::loss::{cmc_loss_graph, init_temperature, read_tau, THETA_PARAM};
use mulan_core::nn::checkpoint::{Checkpoint, RngState, FORMAT_VERSION};
use mulan_core::nn::store::lr_at;
use mulan_core::nn::tape::Tape;
use mulan_core::nn::tensor::Tensor;
use mulan_core::nn::ParameterStore;
use mulan_core::text::Vocabulary;
use mulan_core::towers::{
    audio_tower_forward, init_audio_tower, init_text_tower, text_tower_forward,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;

/// Worker pool honoring `MULAN_NUM_WORKERS`; `None` means rayon's default.
pub fn worker_pool() -> Result<Option<rayon::ThreadPool>> {
    match std::env::var("MULAN_NUM_WORKERS") {
        Ok(raw) => {
            let n: usize = raw
                .parse()
                .map_err(|_| Error::Config(format!("MULAN_NUM_WORKERS={raw:?} is not a count")))?;
            if n == 0 {
                return Ok(None);
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            Ok(Some(pool))
        }
        Err(_) => Ok(None),
    }
}

fn in_pool<F, T>(pool: Option<&rayon::ThreadPool>, f: F) -> T
where
    F: FnOnce() -> T + Send,
    T: Send,
{
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

struct EncodedExample {
    tape: Tape,
    out: mulan_core::nn::Var,
    embedding: Vec<f64>,
}

fn encode_example(
    params: &ParameterStore,
    config: &RunConfig,
    pair: &SampledPair,
) -> Result<(EncodedExample, EncodedExample)> {
    let mut audio_tape = Tape::new();
    let audio_out = audio_tower_forward(&mut audio_tape, params, &config.audio_tower, &pair.window)?;
    let audio_embedding = audio_tape.value(audio_out).data().to_vec();
    let mut text_tape = Tape::new();
    let text_out = text_tower_forward(&mut text_tape, params, &config.text_tower, &pair.tokens)?;
    let text_embedding = text_tape.value(text_out).data().to_vec();
    Ok((
        EncodedExample {
            tape: audio_tape,
            out: audio_out,
            embedding: audio_embedding,
        },
        EncodedExample {
            tape: text_tape,
            out: text_out,
            embedding: text_embedding,
        },
    ))
}

/// One full forward/backward over a batch: returns the batch-sum loss and a
/// gradient for every parameter in the store.
pub fn loss_and_grads(
    params: &ParameterStore,
    config: &RunConfig,
    pairs: &[SampledPair],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, HashMap<String, Tensor>)> {
    let b = pairs.len();
    let d = config.audio_tower.transformer.embed_dim;

    let encoded: Vec<(EncodedExample, EncodedExample)> = in_pool(pool, || {
        pairs
            .par_iter()
            .map(|pair| encode_example(params, config, pair))
            .collect::<Result<_>>()
    })?;

    // couple the embeddings on the loss tape
    let mut audio_data = Vec::with_capacity(b * d);
    let mut text_data = Vec::with_capacity(b * d);
    for (a, t) in &encoded {
        audio_data.extend_from_slice(&a.embedding);
        text_data.extend_from_slice(&t.embedding);
    }
    let mut loss_tape = Tape::new();
    let audio_var = loss_tape.leaf(Tensor::from_vec(&[b, d], audio_data)?)?;
    let text_var = loss_tape.leaf(Tensor::from_vec(&[b, d], text_data)?)?;
    let theta_var = loss_tape.param(THETA_PARAM, params.get(THETA_PARAM)?)?;
    let loss_var = cmc_loss_graph(
        &mut loss_tape,
        audio_var,
        text_var,
        theta_var,
        config.loss.denominator,
        config.loss.tau_min,
    )?;
    let loss = loss_tape.value(loss_var).item();
    let loss_grads = loss_tape.backward(loss_var)?;
    let d_audio = loss_grads
        .wrt(audio_var)
        .ok_or_else(|| Error::State("loss did not reach the audio embeddings".to_string()))?
        .clone();
    let d_text = loss_grads
        .wrt(text_var)
        .ok_or_else(|| Error::State("loss did not reach the text embeddings".to_string()))?
        .clone();
    let theta_grad = loss_grads
        .named(THETA_PARAM)
        .ok_or_else(|| Error::State("loss did not reach the temperature".to_string()))?
        .clone();

    // seed each example tape with its embedding gradient
    let per_example: Vec<(HashMap<String, Tensor>, HashMap<String, Tensor>)> =
        in_pool(pool, || {
            encoded
                .par_iter()
                .enumerate()
                .map(|(i, (a, t))| {
                    let seed_a = Tensor::from_vec(&[1, d], d_audio.row(i).to_vec())?;
                    let seed_t = Tensor::from_vec(&[1, d], d_text.row(i).to_vec())?;
                    let ga = a.tape.backward_with_seed(a.out, seed_a)?.into_named();
                    let gt = t.tape.backward_with_seed(t.out, seed_t)?.into_named();
                    Ok((ga, gt))
                })
                .collect::<Result<_>>()
        })?;

    // fold in example order: audio then text per example
    let mut grads: HashMap<String, Tensor> = HashMap::new();
    grads.insert(THETA_PARAM.to_string(), theta_grad);
    for (ga, gt) in per_example {
        for source in [ga, gt] {
            for (name, grad) in source {
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_in_place(&grad),
                    None => {
                        grads.insert(name, grad);
                    }
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Forward-only loss for the same batch; the finite-difference oracle for
/// the full composition differentiates this.
pub fn loss_value(
    params: &ParameterStore,
    config: &RunConfig,
    pairs: &[SampledPair],
) -> Result<f64> {
    let b = pairs.len();
    let d = config.audio_tower.transformer.embed_dim;
    let mut audio_data = Vec::with_capacity(b * d);
    let mut text_data = Vec::with_capacity(b * d);
    for pair in pairs {
        let mut tape = Tape::new();
        let out = audio_tower_forward(&mut tape, params, &config.audio_tower, &pair.window)?;
        audio_data.extend_from_slice(tape.value(out).data());
        let mut tape = Tape::new();
        let out = text_tower_forward(&mut tape, params, &config.text_tower, &pair.tokens)?;
        text_data.extend_from_slice(tape.value(out).data());
    }
    let mut tape = Tape::new();
    let audio_var = tape.leaf(Tensor::from_vec(&[b, d], audio_data)?)?;
    let text_var = tape.leaf(Tensor::from_vec(&[b, d], text_data)?)?;
    let theta_var = tape.param(THETA_PARAM, params.get(THETA_PARAM)?)?;
    let loss_var = cmc_loss_graph(
        &mut tape,
        audio_var,
        text_var,
        theta_var,
        config.loss.denominator,
        config.loss.tau_min,
    )?;
    Ok(tape.value(loss_var).item())
}

/// Initialize all trainable parameters from the config seed.
pub fn init_params(config: &RunConfig) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_audio_tower(&mut store, &config.audio_tower, &mut rng)?;
    init_text_tower(&mut store, &config.text_tower, &mut rng)?;
    init_temperature(&mut store, &config.loss)?;
    Ok(store)
}

/// Exclusive ownership of a checkpoint directory for the duration of a run.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join("LOCK");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::State(format!(
                "checkpoint directory {} is locked by another training process \
                 (remove LOCK if that run is dead)",
                dir.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub steps_run: u64,
    pub final_loss: f64,
}

/// Steps per epoch: enough steps for `steps * B` to cover the corpus once
/// (coverage itself is stochastic by design).
pub fn steps_per_epoch(corpus_len: usize, batch_size: usize) -> u64 {
    ((corpus_len + batch_size - 1) / batch_size).max(1) as u64
}

/// Run (or resume) training. Writes a CSV log, per-epoch checkpoints, and
/// `final.ckpt` into `out_dir`; aborts save the last good state first.
pub fn train(
    config: &RunConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if vocab.len() > config.text_tower.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary of {} tokens exceeds text_tower.vocab_size {}",
            vocab.len(),
            config.text_tower.vocab_size
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let _lock = LockGuard::acquire(out_dir)?;
    let pool = worker_pool()?;

    let config_json = config.to_json()?;
    let (mut params, mut rng, start_step) = match resume_from {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config_json != config_json {
                return Err(Error::Config(
                    "resume checkpoint was written with a different config".to_string(),
                ));
            }
            let rng = ckpt.rng.restore();
            (ckpt.params, rng, ckpt.global_step)
        }
        None => {
            let params = init_params(config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1); // sampler stream, distinct from the init stream
            (params, rng, 0)
        }
    };

    let settings = SamplerSettings {
        window_frames: config.audio_tower.window_frames,
        token_len: config.token_len,
        spec_augment: Some(config.spec_augment.clone()),
    };
    let sampler = Sampler::new(corpus, vocab, &config.spectrogram, settings)?;
    let mix = MixingSpec::from_ratio(config.batch_size, config.mixing_ratio)?;
    let per_epoch = steps_per_epoch(corpus.len(), config.batch_size);
    let total_steps = per_epoch * config.epochs as u64;
    let mix_label = {
        let c = mix.counts();
        format!("{}:{}:{}:{}", c[0], c[1], c[2], c[3])
    };

    let log_path = out_dir.join("train_log.csv");
    let mut log = if start_step == 0 {
        let mut f = std::fs::File::create(&log_path)?;
        writeln!(f, "step,loss,tau,lr,pairs_per_source")?;
        f
    } else {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?
    };

    let save_checkpoint = |params: &ParameterStore,
                           rng: &ChaCha8Rng,
                           step: u64,
                           name: &str|
     -> Result<PathBuf> {
        let ckpt = Checkpoint {
            version: FORMAT_VERSION,
            config_json: config_json.clone(),
            global_step: step,
            rng: RngState::capture(rng),
            params: params.clone(),
        };
        let path = out_dir.join(name);
        ckpt.save(&path)?;
        Ok(path)
    };

    let mut final_loss = f64::NAN;
    for step in start_step..total_steps {
        let step_result = (|| -> Result<f64> {
            let batch = sampler.assemble_batch(&mix, &mut rng)?;
            let (loss, grads) = loss_and_grads(&params, config, &batch, pool.as_ref())?;
            let before = params.clone();
            if let Err(e) = params.adam_step(&grads, &config.optimizer, step) {
                params = before;
                return Err(e);
            }
            Ok(loss)
        })();
        let loss = match step_result {
            Ok(loss) => loss,
            Err(e) => {
                let path = save_checkpoint(&params, &rng, step, "abort.ckpt")?;
                return Err(Error::Training(format!(
                    "step {step} failed ({e}); last good state saved to {}",
                    path.display()
                )));
            }
        };
        final_loss = loss;
        let tau = read_tau(&params, &config.loss)?;
        let lr = lr_at(step, &config.optimizer);
        writeln!(log, "{step},{loss:.9},{tau:.9},{lr:.9e},{mix_label}")?;

        let completed = step + 1;
        if completed % (per_epoch * config.checkpoint_every_epochs as u64) == 0
            && completed < total_steps
        {
            let epoch = completed / per_epoch;
            save_checkpoint(&params, &rng, completed, &format!("epoch{epoch}.ckpt"))?;
        }
    }
    let final_checkpoint = save_checkpoint(&params, &rng, total_steps, "final.ckpt")?;
    Ok(TrainOutcome {
        final_checkpoint,
        log_path,
        steps_run: total_steps - start_step,
        final_loss,
    })
}
