//! Cross-modal contrastive objective: critic, trainable temperature, and
//! the batch-wise loss.
//!
//! For a batch of aligned audio/text embedding pairs with cosine matrix
//! `c[i][j] = a_i . t_j` and logits `z = c / tau`, the per-pair term is
//!
//! ```text
//! -z[i][i] + log( sum_j exp(z[i][j]) + exp(z[j][i]) )
//! ```
//!
//! where the sum runs over `j != i` in the default (exclusive) form and over
//! all `j` in the inclusive form. The exclusive denominator omits the target
//! pair entirely, which permits negative losses; the inclusive variant adds
//! the target term twice (once per direction) and matches the usual
//! InfoNCE/NT-Xent convention. Both are computed in log space, so logits up
//! to `1/tau_min` stay finite. The loss is the batch sum, not the mean.

use crate::corpus::types::SourceType;
use crate::error::{Error, Result};
use crate::nn::store::OptimizerConfig;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::nn::ParameterStore;
use crate::towers::Embedding;

/// Name of the unconstrained temperature parameter in the store.
pub const THETA_PARAM: &str = "contrastive.theta";

/// Which pairs the denominator sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenominatorMode {
    /// Non-target pairs only (the default).
    Exclusive,
    /// All pairs, counting the target once per direction.
    Inclusive,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub denominator: DenominatorMode,
    pub tau_init: f64,
    pub tau_min: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            denominator: DenominatorMode::Exclusive,
            tau_init: 0.1,
            tau_min: 1e-3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min <= 1.0) {
            return Err(Error::Config(format!(
                "tau_min {} must be in (0, 1]",
                self.tau_min
            )));
        }
        if !(self.tau_init >= self.tau_min && self.tau_init <= 1.0) {
            return Err(Error::Config(format!(
                "tau_init {} must be in [tau_min, 1]",
                self.tau_init
            )));
        }
        Ok(())
    }
}

/// Register the temperature parameter, initialized so `tau = tau_init`.
pub fn init_temperature(store: &mut ParameterStore, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    store.insert(THETA_PARAM, Tensor::scalar(cfg.tau_init.ln()))
}

/// `tau = clamp(exp(theta), tau_min, 1)`.
pub fn tau_from_theta(theta: f64, tau_min: f64) -> f64 {
    theta.exp().clamp(tau_min, 1.0)
}

/// Current temperature held by the store.
pub fn read_tau(store: &ParameterStore, cfg: &LossConfig) -> Result<f64> {
    Ok(tau_from_theta(store.get(THETA_PARAM)?.item(), cfg.tau_min))
}

/// Update theta with the shared optimizer; tau re-clamps on the next read.
pub fn update_temperature(
    store: &mut ParameterStore,
    grad_theta: &Tensor,
    opt: &OptimizerConfig,
    global_step: u64,
) -> Result<()> {
    store.adam_step_single(THETA_PARAM, grad_theta, opt, global_step)
}

/// The critic `h[a, b] = exp(a . b / tau)`.
pub fn critic(a: &Embedding, b: &Embedding, tau: f64) -> f64 {
    (a.cosine(b) / tau).exp()
}

/// A batch of index-aligned embedding pairs with per-pair source tags.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub audio: Vec<Embedding>,
    pub text: Vec<Embedding>,
    pub sources: Vec<SourceType>,
}

impl PairBatch {
    pub fn new(
        audio: Vec<Embedding>,
        text: Vec<Embedding>,
        sources: Vec<SourceType>,
    ) -> Result<Self> {
        if audio.len() != text.len() || audio.len() != sources.len() {
            return Err(Error::Batch("pair counts differ across modalities".to_string()));
        }
        if audio.len() < 2 {
            return Err(Error::Batch(format!(
                "batch size {} < 2: the contrastive denominator would be empty",
                audio.len()
            )));
        }
        Ok(PairBatch {
            audio,
            text,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }

    /// Stack the two sides into [B,d] tensors.
    pub fn tensors(&self) -> Result<(Tensor, Tensor)> {
        let b = self.len();
        let d = self.audio[0].dim();
        let mut a = Vec::with_capacity(b * d);
        let mut t = Vec::with_capacity(b * d);
        for (ea, et) in self.audio.iter().zip(&self.text) {
            if ea.dim() != d || et.dim() != d {
                return Err(Error::Shape("embedding dimensions differ".to_string()));
            }
            a.extend_from_slice(ea.as_slice());
            t.extend_from_slice(et.as_slice());
        }
        Ok((Tensor::from_vec(&[b, d], a)?, Tensor::from_vec(&[b, d], t)?))
    }
}

/// Build the loss graph over [B,d] embedding matrices and the temperature
/// parameter. Returns the scalar batch-sum loss node.
pub fn cmc_loss_graph(
    tape: &mut Tape,
    audio: Var,
    text: Var,
    theta: Var,
    mode: DenominatorMode,
    tau_min: f64,
) -> Result<Var> {
    let b = tape.value(audio).rows();
    if b < 2 || tape.value(text).rows() != b {
        return Err(Error::Batch(format!(
            "loss needs B >= 2 aligned pairs (got {b} x {})",
            tape.value(text).rows()
        )));
    }
    let text_t = tape.transpose(text)?;
    let cosines = tape.matmul(audio, text_t)?;
    let tau_raw = tape.exp(theta)?;
    let tau = tape.clamp(tau_raw, tau_min, 1.0)?;
    let logits = tape.div_scalar_var(cosines, tau)?;

    // Row i of [Z | Z^T] holds z[i][*] then z[*][i]; the target appears at
    // columns i and B+i.
    let logits_t = tape.transpose(logits)?;
    let both = tape.concat_cols(&[logits, logits_t])?;
    let mask = denominator_mask(b, mode);
    let lse = tape.masked_logsumexp_rows(both, &mask)?;
    let denom_sum = tape.sum(lse)?;
    let target_sum = tape.trace(logits)?;
    tape.sub(denom_sum, target_sum)
}

fn denominator_mask(b: usize, mode: DenominatorMode) -> Vec<bool> {
    let mut mask = vec![true; b * 2 * b];
    if mode == DenominatorMode::Exclusive {
        for i in 0..b {
            mask[i * 2 * b + i] = false;
            mask[i * 2 * b + b + i] = false;
        }
    }
    mask
}

/// Evaluate the loss for a batch at a fixed temperature (no gradients).
pub fn cmc_loss_value(batch: &PairBatch, tau: f64, mode: DenominatorMode) -> Result<f64> {
    if !(0.0 < tau && tau <= 1.0) {
        return Err(Error::Argument(format!("tau {tau} outside (0, 1]")));
    }
    let (a, t) = batch.tensors()?;
    let mut tape = Tape::new();
    let av = tape.leaf(a)?;
    let tv = tape.leaf(t)?;
    let theta = tape.leaf(Tensor::scalar(tau.ln()))?;
    let loss = cmc_loss_graph(&mut tape, av, tv, theta, mode, tau.min(1e-3))?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::new(crate::nn::tensor::l2_normalized(&v)).unwrap()
    }

    fn sources(b: usize) -> Vec<SourceType> {
        (0..b).map(|i| SourceType::ALL[i % 4]).collect()
    }

    /// Independent oracle: evaluate the printed formula directly from the
    /// cosine matrix in log space, no tape involved.
    fn oracle_loss(cosines: &[Vec<f64>], tau: f64, mode: DenominatorMode) -> f64 {
        let b = cosines.len();
        let z =
            |i: usize, j: usize| cosines[i][j] / tau;
        let mut total = 0.0;
        for i in 0..b {
            let mut terms = Vec::new();
            for j in 0..b {
                if mode == DenominatorMode::Exclusive && j == i {
                    continue;
                }
                terms.push(z(i, j));
                terms.push(z(j, i));
            }
            let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + terms.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += -z(i, i) + lse;
        }
        total
    }

    fn perfect_pairs_batch() -> PairBatch {
        // a_i = t_i, everything else orthogonal (d = 4)
        let a1 = unit(vec![1.0, 0.0, 0.0, 0.0]);
        let a2 = unit(vec![0.0, 1.0, 0.0, 0.0]);
        PairBatch::new(
            vec![a1.clone(), a2.clone()],
            vec![a1, a2],
            sources(2),
        )
        .unwrap()
    }

    #[test]
    fn critic_closed_forms() {
        let a = unit(vec![1.0, 0.0]);
        let b = unit(vec![0.0, 1.0]);
        assert_eq!(critic(&a, &b, 0.3), 1.0);
        let c = unit(vec![1.0, 0.0]);
        assert!((critic(&a, &c, 0.1) - 22026.465794806718).abs() < 1e-6);
        let neg = unit(vec![-1.0, 0.0]);
        assert!((critic(&a, &neg, 1.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn perfect_pairs_exclusive_closed_form() {
        let batch = perfect_pairs_batch();
        let loss = cmc_loss_value(&batch, 0.1, DenominatorMode::Exclusive).unwrap();
        // per-pair term: -10 + ln 2
        let expected = 2.0 * (std::f64::consts::LN_2 - 10.0);
        assert!((loss - expected).abs() < 1e-9);
        assert!((loss - (-18.61371)).abs() < 1e-4);
    }

    #[test]
    fn perfect_pairs_inclusive_closed_form() {
        let batch = perfect_pairs_batch();
        let loss = cmc_loss_value(&batch, 0.1, DenominatorMode::Inclusive).unwrap();
        // per-pair term: -log(e^10 / (2 e^10 + 2))
        let expected = 2.0 * ((2.0 * (10.0f64).exp() + 2.0).ln() - 10.0);
        assert!((loss - expected).abs() < 1e-9);
        // equivalently log(2 + 2 e^-10) per pair
        let alt = 2.0 * (2.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((loss - alt).abs() < 1e-9);
    }

    #[test]
    fn identical_embeddings_are_tau_independent() {
        let e = unit(vec![0.5, 0.5, 0.5, 0.5]);
        let batch = PairBatch::new(
            vec![e.clone(), e.clone()],
            vec![e.clone(), e],
            sources(2),
        )
        .unwrap();
        for tau in [1e-3, 0.01, 0.1, 0.5, 1.0] {
            let loss = cmc_loss_value(&batch, tau, DenominatorMode::Exclusive).unwrap();
            assert!(
                (loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-9,
                "tau {tau}: loss {loss}"
            );
            let inc = cmc_loss_value(&batch, tau, DenominatorMode::Inclusive).unwrap();
            assert!((inc - 2.0 * (4.0f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn inclusive_terms_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let b = rng.gen_range(2..6);
            let batch = random_batch(&mut rng, b, 5);
            let loss = cmc_loss_value(&batch, 0.2, DenominatorMode::Inclusive).unwrap();
            assert!(loss >= 0.0);
        }
    }

    fn random_batch<R: Rng>(rng: &mut R, b: usize, d: usize) -> PairBatch {
        let mut mk = |_: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            unit(v)
        };
        let audio: Vec<Embedding> = (0..b).map(&mut mk).collect();
        let text: Vec<Embedding> = (0..b).map(&mut mk).collect();
        PairBatch::new(audio, text, sources(b)).unwrap()
    }

    #[test]
    fn tape_loss_matches_the_oracle_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let b = rng.gen_range(2..7);
            let d = rng.gen_range(2..6);
            let batch = random_batch(&mut rng, b, d);
            let cosines: Vec<Vec<f64>> = batch
                .audio
                .iter()
                .map(|a| batch.text.iter().map(|t| a.cosine(t)).collect())
                .collect();
            for mode in [DenominatorMode::Exclusive, DenominatorMode::Inclusive] {
                let got = cmc_loss_value(&batch, 0.15, mode).unwrap();
                let want = oracle_loss(&cosines, 0.15, mode);
                assert!((got - want).abs() < 1e-10, "mode {mode:?}");
            }
        }
    }

    #[test]
    fn loss_is_invariant_under_pair_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let batch = random_batch(&mut rng, 6, 4);
        let base = cmc_loss_value(&batch, 0.1, DenominatorMode::Exclusive).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = PairBatch::new(
            perm.iter().map(|&i| batch.audio[i].clone()).collect(),
            perm.iter().map(|&i| batch.text[i].clone()).collect(),
            perm.iter().map(|&i| batch.sources[i]).collect(),
        )
        .unwrap();
        let shuffled = cmc_loss_value(&permuted, 0.1, DenominatorMode::Exclusive).unwrap();
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn loss_stays_finite_at_tau_min_with_aligned_pairs() {
        let e1 = unit(vec![1.0, 0.0]);
        let e2 = unit(vec![0.0, 1.0]);
        let batch = PairBatch::new(
            vec![e1.clone(), e2.clone()],
            vec![e1, e2],
            sources(2),
        )
        .unwrap();
        // cosine/tau reaches 1/tau_min = 1000 here
        let loss = cmc_loss_value(&batch, 1e-3, DenominatorMode::Exclusive).unwrap();
        assert!(loss.is_finite());
        let expected = 2.0 * (std::f64::consts::LN_2 - 1000.0);
        assert!((loss - expected).abs() < 1e-6);
    }

    #[test]
    fn raising_a_non_target_cosine_never_lowers_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let b = 4;
            let mut cosines: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..b).map(|_| rng.gen_range(-0.9..0.9)).collect())
                .collect();
            let base = oracle_loss(&cosines, 0.2, DenominatorMode::Exclusive);
            let (i, j) = (rng.gen_range(0..b), rng.gen_range(0..b));
            if i == j {
                continue;
            }
            cosines[i][j] += rng.gen_range(0.0..0.1);
            let bumped = oracle_loss(&cosines, 0.2, DenominatorMode::Exclusive);
            assert!(bumped >= base - 1e-12);
        }
    }

    #[test]
    fn matched_pairing_beats_a_derangement() {
        // orthogonal basis pairs: each audio is closest to its own text
        let d = 4;
        let basis: Vec<Embedding> = (0..d)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                unit(v)
            })
            .collect();
        let matched = PairBatch::new(basis.clone(), basis.clone(), sources(d)).unwrap();
        let deranged_text: Vec<Embedding> =
            (0..d).map(|i| basis[(i + 1) % d].clone()).collect();
        let deranged = PairBatch::new(basis.clone(), deranged_text, sources(d)).unwrap();
        let l_matched = cmc_loss_value(&matched, 0.1, DenominatorMode::Exclusive).unwrap();
        let l_deranged = cmc_loss_value(&deranged, 0.1, DenominatorMode::Exclusive).unwrap();
        assert!(l_matched < l_deranged);
    }

    #[test]
    fn undersized_batch_is_a_batch_error() {
        let e = unit(vec![1.0, 0.0]);
        assert!(matches!(
            PairBatch::new(vec![e.clone()], vec![e], vec![SourceType::SF]),
            Err(Error::Batch(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::nn::gradcheck;
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for trial in 0..5 {
            let b = rng.gen_range(2..5);
            let d = rng.gen_range(2..5);
            let batch = random_batch(&mut rng, b, d);
            let (a, t) = batch.tensors().unwrap();
            let theta0 = rng.gen_range(-3.0..-0.5);
            let mode = if trial % 2 == 0 {
                DenominatorMode::Exclusive
            } else {
                DenominatorMode::Inclusive
            };

            let mut tape = Tape::new();
            let av = tape.leaf(a.clone()).unwrap();
            let tv = tape.leaf(t.clone()).unwrap();
            let th = tape.leaf(Tensor::scalar(theta0)).unwrap();
            let loss = cmc_loss_graph(&mut tape, av, tv, th, mode, 1e-3).unwrap();
            let grads = tape.backward(loss).unwrap();

            let eval = |a_data: &[f64], t_data: &[f64], theta: f64| -> f64 {
                let mut tape = Tape::new();
                let av = tape
                    .leaf(Tensor::from_vec(a.shape(), a_data.to_vec()).unwrap())
                    .unwrap();
                let tv = tape
                    .leaf(Tensor::from_vec(t.shape(), t_data.to_vec()).unwrap())
                    .unwrap();
                let th = tape.leaf(Tensor::scalar(theta)).unwrap();
                let loss = cmc_loss_graph(&mut tape, av, tv, th, mode, 1e-3).unwrap();
                tape.value(loss).item()
            };

            let fd_a = gradcheck::fd_gradient(
                |x| Ok(eval(x, t.data(), theta0)),
                a.data(),
                gradcheck::DEFAULT_STEP,
            )
            .unwrap();
            let err_a =
                gradcheck::max_relative_error(grads.wrt(av).unwrap().data(), &fd_a);
            assert!(err_a < gradcheck::DEFAULT_TOLERANCE, "audio grads: {err_a:.2e}");

            let fd_t = gradcheck::fd_gradient(
                |x| Ok(eval(a.data(), x, theta0)),
                t.data(),
                gradcheck::DEFAULT_STEP,
            )
            .unwrap();
            let err_t =
                gradcheck::max_relative_error(grads.wrt(tv).unwrap().data(), &fd_t);
            assert!(err_t < gradcheck::DEFAULT_TOLERANCE, "text grads: {err_t:.2e}");

            let fd_th = gradcheck::fd_gradient(
                |x| Ok(eval(a.data(), t.data(), x[0])),
                &[theta0],
                gradcheck::DEFAULT_STEP,
            )
            .unwrap();
            let err_th =
                gradcheck::max_relative_error(grads.wrt(th).unwrap().data(), &fd_th);
            assert!(err_th < gradcheck::DEFAULT_TOLERANCE, "theta grad: {err_th:.2e}");
        }
    }

    #[test]
    fn temperature_clamps_and_updates() {
        let cfg = LossConfig::default();
        let mut store = ParameterStore::new();
        init_temperature(&mut store, &cfg).unwrap();
        assert!((read_tau(&store, &cfg).unwrap() - 0.1).abs() < 1e-12);

        // zero gradient: unchanged
        let opt = OptimizerConfig::default();
        update_temperature(&mut store, &Tensor::scalar(0.0), &opt, 0).unwrap();
        assert!((read_tau(&store, &cfg).unwrap() - 0.1).abs() < 1e-12);

        // theta above 0 reads as exactly 1
        store.get_mut(THETA_PARAM).unwrap().data_mut()[0] = 0.7;
        assert_eq!(read_tau(&store, &cfg).unwrap(), 1.0);
        // theta far below the floor reads as exactly tau_min
        store.get_mut(THETA_PARAM).unwrap().data_mut()[0] = -50.0;
        assert_eq!(read_tau(&store, &cfg).unwrap(), 1e-3);

        // any further updates keep tau in range
        for step in 0..20 {
            let g = if step % 2 == 0 { 5.0 } else { -5.0 };
            update_temperature(&mut store, &Tensor::scalar(g), &opt, step).unwrap();
            let tau = read_tau(&store, &cfg).unwrap();
            assert!((1e-3..=1.0).contains(&tau));
        }
    }
}
