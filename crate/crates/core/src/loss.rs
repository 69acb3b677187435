//! Training objectives.
//!
//! The main loss is pairwise ranking over (user, positive group, negative
//! group) triples. Two contrastive losses align a user's item-level and
//! group-level representations against in-batch negatives: a vanilla one,
//! and one that drops likely false negatives — batch users whose item-level
//! interest Gaussian sits within 2-Wasserstein distance `mu` of the
//! anchor's. A logistic schedule over epochs shifts weight between the two,
//! and everything combines with L2 regularization into the joint objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{sigmoid_scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Wasserstein threshold for false-negative filtering.
    pub mu_w2: f64,
    /// Weight of the contrastive term.
    pub lambda1: f64,
    /// Weight of the L2 term.
    pub lambda2: f64,
    /// Slope of the annealing schedule.
    pub k_anneal: f64,
    /// Epoch at which the schedule crosses 1/2.
    pub e_anneal: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 1.0,
            mu_w2: 1.5,
            lambda1: 1e-4,
            lambda2: 1e-4,
            k_anneal: 0.1,
            e_anneal: 20.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, v) in [
            ("mu_w2", self.mu_w2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pairwise ranking loss: mean over triples of −ln σ(s⁺ − s⁻), computed as
/// softplus(s⁻ − s⁺) for stability.
pub fn bpr_loss(tape: &mut Tape, scores_pos: &Tensor, scores_neg: &Tensor) -> Result<Tensor> {
    if scores_pos.shape() != scores_neg.shape() {
        return Err(Error::ShapeMismatch {
            op: "bpr_loss",
            lhs: scores_pos.shape().to_vec(),
            rhs: scores_neg.shape().to_vec(),
        });
    }
    if scores_pos.is_empty() {
        return Err(Error::Usage("bpr_loss on an empty batch".into()));
    }
    let margin = tape.sub(scores_pos, scores_neg)?;
    let neg_margin = tape.scale(&margin, -1.0)?;
    let per_triple = tape.softplus(&neg_margin)?;
    tape.mean_all(&per_triple)
}

/// Exact 2-Wasserstein distance between axis-aligned Gaussians:
/// sqrt(‖μ₁−μ₂‖² + ‖σ₁−σ₂‖²).
pub fn w2_diag_gauss(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if sigma1.len() != d || mu2.len() != d || sigma2.len() != d {
        return Err(Error::ShapeMismatch {
            op: "w2_diag_gauss",
            lhs: vec![d, sigma1.len()],
            rhs: vec![mu2.len(), sigma2.len()],
        });
    }
    if let Some(&bad) = sigma1.iter().chain(sigma2).find(|&&s| s <= 0.0) {
        return Err(Error::NumericDomain {
            op: "w2_diag_gauss",
            detail: format!("non-positive sigma {bad}"),
        });
    }
    let mut total = 0.0;
    for i in 0..d {
        let dm = mu1[i] - mu2[i];
        let ds = sigma1[i] - sigma2[i];
        total += dm * dm + ds * ds;
    }
    Ok(total.sqrt())
}

/// Per-anchor negative sets over a contrastive batch, stored row-major:
/// `allows(i, j)` says whether batch user j serves as a negative for anchor
/// i. An anchor is never its own negative.
#[derive(Clone, Debug)]
pub struct NegativeMask {
    mask: Vec<bool>,
    b: usize,
}

impl NegativeMask {
    /// All other batch users are negatives.
    pub fn vanilla(b: usize) -> Self {
        let mut mask = vec![true; b * b];
        for i in 0..b {
            mask[i * b + i] = false;
        }
        NegativeMask { mask, b }
    }

    /// Only batch users whose interest Gaussian is farther than `mu_w2`
    /// from the anchor's. `mean` and `sigma` are [B × d] row-major.
    pub fn filtered(mean: &Tensor, sigma: &Tensor, mu_w2: f64) -> Result<Self> {
        let b = mean.rows();
        let d = mean.row_width();
        if sigma.shape() != mean.shape() {
            return Err(Error::ShapeMismatch {
                op: "NegativeMask::filtered",
                lhs: mean.shape().to_vec(),
                rhs: sigma.shape().to_vec(),
            });
        }
        let (m, s) = (mean.data(), sigma.data());
        let mut mask = vec![false; b * b];
        for i in 0..b {
            for j in 0..b {
                if i == j {
                    continue;
                }
                let dist = w2_diag_gauss(
                    &m[i * d..(i + 1) * d],
                    &s[i * d..(i + 1) * d],
                    &m[j * d..(j + 1) * d],
                    &s[j * d..(j + 1) * d],
                )?;
                mask[i * b + j] = dist > mu_w2;
            }
        }
        Ok(NegativeMask { mask, b })
    }

    pub fn allows(&self, anchor: usize, other: usize) -> bool {
        self.mask[anchor * self.b + other]
    }

    pub fn batch_size(&self) -> usize {
        self.b
    }

    fn to_tensor(&self) -> Tensor {
        let data = self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(vec![self.b, self.b], data).expect("mask is square")
    }
}

/// Shared InfoNCE core. For each anchor i with positive pair
/// (û_i^v, û_i^s), the denominator extends the positive by the masked sums
/// over exp(cos(û_j^v, û_i^s)/τ) and exp(cos(û_i^v, û_j^s)/τ). Anchors with
/// an empty negative set contribute exactly zero.
fn infonce_masked(
    tape: &mut Tape,
    u_v: &Tensor,
    u_s: &Tensor,
    tau: f64,
    mask: &NegativeMask,
) -> Result<Tensor> {
    if u_v.shape() != u_s.shape() || u_v.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "infonce",
            lhs: u_v.shape().to_vec(),
            rhs: u_s.shape().to_vec(),
        });
    }
    let b = u_v.rows();
    if b == 0 {
        return Err(Error::Usage("infonce on an empty batch".into()));
    }
    if mask.batch_size() != b {
        return Err(Error::Usage(format!(
            "negative mask is for batch {} but got {b} rows",
            mask.batch_size()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let v_norm = tape.l2_normalize_rows(u_v)?;
    let s_norm = tape.l2_normalize_rows(u_s)?;
    let s_t = tape.transpose(&s_norm)?;
    let cos = tape.matmul(&v_norm, &s_t)?; // cos[i][j] = cos(û_i^v, û_j^s)
    let scaled = tape.scale(&cos, 1.0 / tau)?;
    let e = tape.exp(&scaled)?;

    let eye = {
        let mut data = vec![0.0; b * b];
        for i in 0..b {
            data[i * b + i] = 1.0;
        }
        Tensor::from_vec(vec![b, b], data)?
    };
    let m = mask.to_tensor();

    let pos_masked = tape.mul(&e, &eye)?;
    let pos = tape.row_sum(&pos_masked)?; // e[i][i]
    let s_side_masked = tape.mul(&e, &m)?;
    let n_s = tape.row_sum(&s_side_masked)?; // Σ_j m[i][j]·e[i][j]
    let e_t = tape.transpose(&e)?;
    let v_side_masked = tape.mul(&e_t, &m)?;
    let n_v = tape.row_sum(&v_side_masked)?; // Σ_j m[i][j]·e[j][i]

    let partial = tape.add(&pos, &n_v)?;
    let denom = tape.add(&partial, &n_s)?;
    // log(denom/pos) is exactly 0 when the negative sums vanish
    let ratio = tape.div(&denom, &pos)?;
    let per_anchor = tape.log(&ratio)?;
    tape.sum_all(&per_anchor)
}

/// Contrastive alignment against all other batch users.
pub fn infonce_vanilla(tape: &mut Tape, u_v: &Tensor, u_s: &Tensor, tau: f64) -> Result<Tensor> {
    let mask = NegativeMask::vanilla(u_v.rows());
    infonce_masked(tape, u_v, u_s, tau, &mask)
}

/// Contrastive alignment with false-negative filtering: negatives are
/// restricted to batch users whose interest Gaussian (given by `gauss_mean`,
/// `gauss_sigma`) is farther than `mu_w2` from the anchor's. The mask is
/// recomputed from the forward state on every call.
pub fn infonce_filtered(
    tape: &mut Tape,
    u_v: &Tensor,
    u_s: &Tensor,
    gauss_mean: &Tensor,
    gauss_sigma: &Tensor,
    tau: f64,
    mu_w2: f64,
) -> Result<Tensor> {
    let mask = NegativeMask::filtered(gauss_mean, gauss_sigma, mu_w2)?;
    infonce_masked(tape, u_v, u_s, tau, &mask)
}

/// Logistic annealing weight β(epoch) = σ(k·(epoch − E)); strictly
/// increasing in epoch, exactly 1/2 at epoch = E.
pub fn anneal_beta(epoch: f64, k: f64, e: f64) -> f64 {
    sigmoid_scalar(k * (epoch - e))
}

/// Squared L2 norm of every learnable tensor, as a tape node.
pub fn l2_norm_sq(tape: &mut Tape, params: &ModelParams) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (_, t) in params.tensors() {
        let sq = tape.mul(t, t)?;
        let sum = tape.sum_all(&sq)?;
        total = Some(match total {
            Some(acc) => tape.add(&acc, &sum)?,
            None => sum,
        });
    }
    total.ok_or_else(|| Error::Usage("no parameters".into()))
}

/// Joint objective: main + λ₁·(β·ssl1 + (1−β)·ssl2) + λ₂·‖Θ‖², with β from
/// the annealing schedule unless overridden. `swap_weights` exchanges the
/// two contrastive weights; disabled components are simply absent.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    main: &Tensor,
    ssl1: Option<&Tensor>,
    ssl2: Option<&Tensor>,
    l2_norm_sq: &Tensor,
    cfg: &LossConfig,
    epoch: f64,
    const_beta: Option<f64>,
    swap_weights: bool,
) -> Result<Tensor> {
    let beta = match const_beta {
        Some(b) => b,
        None => anneal_beta(epoch, cfg.k_anneal, cfg.e_anneal),
    };
    let (w1, w2) = if swap_weights { (1.0 - beta, beta) } else { (beta, 1.0 - beta) };

    let mut total = main.clone();
    let mut contrast: Option<Tensor> = None;
    if let Some(s1) = ssl1 {
        contrast = Some(tape.scale(s1, w1)?);
    }
    if let Some(s2) = ssl2 {
        let scaled = tape.scale(s2, w2)?;
        contrast = Some(match contrast {
            Some(c) => tape.add(&c, &scaled)?,
            None => scaled,
        });
    }
    if let Some(c) = contrast {
        let weighted = tape.scale(&c, cfg.lambda1)?;
        total = tape.add(&total, &weighted)?;
    }
    let reg = tape.scale(l2_norm_sq, cfg.lambda2)?;
    tape.add(&total, &reg)
}

/// Gather the contrastive batch rows for the given (unique) users from a
/// full representation matrix.
pub fn batch_rows(tape: &mut Tape, full: &Tensor, users: &[usize]) -> Result<Tensor> {
    let idx = Arc::new(users.to_vec());
    tape.gather_rows(full, &idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bpr_zero_margin_is_ln_two() {
        let mut tape = Tape::disabled();
        let s = Tensor::vector(vec![1.0, -2.0, 0.3]);
        let loss = bpr_loss(&mut tape, &s, &s).unwrap();
        assert!((loss.item() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn bpr_unit_margin() {
        let mut tape = Tape::disabled();
        let pos = Tensor::vector(vec![1.0]);
        let neg = Tensor::vector(vec![0.0]);
        let loss = bpr_loss(&mut tape, &pos, &neg).unwrap();
        assert!((loss.item() - 0.313_261_687_5).abs() < 1e-9);
    }

    #[test]
    fn bpr_saturates_to_zero() {
        let mut tape = Tape::disabled();
        let pos = Tensor::vector(vec![40.0]);
        let neg = Tensor::vector(vec![0.0]);
        let loss = bpr_loss(&mut tape, &pos, &neg).unwrap();
        assert!(loss.item() < 1e-15);
    }

    #[test]
    fn bpr_empty_batch_rejected() {
        let mut tape = Tape::disabled();
        let empty = Tensor::vector(vec![]);
        assert!(matches!(
            bpr_loss(&mut tape, &empty, &empty),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn w2_identical_distributions() {
        let mu = [0.4, -1.0];
        let s = [0.5, 2.0];
        assert_eq!(w2_diag_gauss(&mu, &s, &mu, &s).unwrap(), 0.0);
    }

    #[test]
    fn w2_matched_covariance_is_mean_distance() {
        let d = w2_diag_gauss(&[0.0, 0.0], &[1.0, 1.0], &[3.0, 4.0], &[1.0, 1.0]).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn w2_closed_form_with_sigma_shift() {
        // 25 from the means + 2 from the sigmas = 27
        let d = w2_diag_gauss(&[0.0, 0.0], &[1.0, 1.0], &[3.0, 4.0], &[2.0, 2.0]).unwrap();
        assert!((d - 27.0_f64.sqrt()).abs() < 1e-12);
        assert!((d - 5.19615).abs() < 1e-5);
    }

    #[test]
    fn w2_rejects_non_positive_sigma() {
        assert!(matches!(
            w2_diag_gauss(&[0.0], &[0.0], &[1.0], &[1.0]),
            Err(Error::NumericDomain { .. })
        ));
    }

    #[test]
    fn w2_is_a_metric_on_random_triples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let draw = |rng: &mut rand_chacha::ChaCha20Rng| {
                let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..2.0)).collect();
                (mu, s)
            };
            let (m1, s1) = draw(&mut rng);
            let (m2, s2) = draw(&mut rng);
            let (m3, s3) = draw(&mut rng);
            let d12 = w2_diag_gauss(&m1, &s1, &m2, &s2).unwrap();
            let d21 = w2_diag_gauss(&m2, &s2, &m1, &s1).unwrap();
            assert_eq!(d12, d21, "symmetry must be exact");
            let d13 = w2_diag_gauss(&m1, &s1, &m3, &s3).unwrap();
            let d23 = w2_diag_gauss(&m2, &s2, &m3, &s3).unwrap();
            assert!(d13 <= d12 + d23 + 1e-12, "triangle inequality violated");
        }
    }

    #[test]
    fn infonce_single_anchor_is_zero() {
        let mut tape = Tape::disabled();
        let v = Tensor::matrix(1, 2, vec![1.0, 0.5]).unwrap();
        let s = Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap();
        let loss = infonce_vanilla(&mut tape, &v, &s, 1.0).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn infonce_two_identical_pairs() {
        // all four vectors identical: every cosine is 1, per-anchor term is
        // ln 3, total 2·ln 3
        let mut tape = Tape::disabled();
        let row = vec![0.6, 0.8];
        let v = Tensor::matrix(2, 2, [row.clone(), row.clone()].concat()).unwrap();
        let loss = infonce_vanilla(&mut tape, &v, &v, 1.0).unwrap();
        assert!((loss.item() - 2.0 * 3.0_f64.ln()).abs() < 1e-12);
        assert!((loss.item() - 2.19722).abs() < 1e-5);
    }

    #[test]
    fn infonce_rewards_tighter_positive_pairs() {
        let build = |c: f64| -> (Tensor, Tensor) {
            // anchor 0's positive-pair cosine is c; everything else fixed
            let v = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
            let s =
                Tensor::matrix(2, 2, vec![c, (1.0 - c * c).sqrt(), 0.0, 1.0]).unwrap();
            (v, s)
        };
        let mut tape = Tape::disabled();
        let (v, s) = build(0.2);
        let low = infonce_vanilla(&mut tape, &v, &s, 1.0).unwrap().item();
        let (v, s) = build(0.8);
        let high = infonce_vanilla(&mut tape, &v, &s, 1.0).unwrap().item();
        assert!(high < low, "loss must fall as the positive cosine rises");
    }

    #[test]
    fn infonce_rejects_zero_rows() {
        let mut tape = Tape::disabled();
        let v = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let s = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            infonce_vanilla(&mut tape, &v, &s, 1.0),
            Err(Error::NumericDomain { .. })
        ));
    }

    #[test]
    fn filtered_with_zero_threshold_matches_vanilla() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        let v = Tensor::standard_normal(vec![5, 3], &mut rng);
        let s = Tensor::standard_normal(vec![5, 3], &mut rng);
        let mean = Tensor::standard_normal(vec![5, 3], &mut rng);
        let mut sigma = Tensor::standard_normal(vec![5, 3], &mut rng);
        for x in sigma.data_mut() {
            *x = x.abs() + 0.1;
        }
        let mut tape = Tape::disabled();
        let vanilla = infonce_vanilla(&mut tape, &v, &s, 1.0).unwrap();
        let filtered = infonce_filtered(&mut tape, &v, &s, &mean, &sigma, 1.0, 0.0).unwrap();
        assert!((vanilla.item() - filtered.item()).abs() <= 1e-12);
    }

    #[test]
    fn filtered_with_huge_threshold_is_zero() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(22);
        let v = Tensor::standard_normal(vec![4, 3], &mut rng);
        let s = Tensor::standard_normal(vec![4, 3], &mut rng);
        let mean = Tensor::standard_normal(vec![4, 3], &mut rng);
        let mut sigma = Tensor::standard_normal(vec![4, 3], &mut rng);
        for x in sigma.data_mut() {
            *x = x.abs() + 0.1;
        }
        let mut tape = Tape::disabled();
        let loss =
            infonce_filtered(&mut tape, &v, &s, &mean, &sigma, 1.0, f64::INFINITY).unwrap();
        assert_eq!(loss.item(), 0.0, "all negatives filtered must give exactly 0");
    }

    #[test]
    fn filtered_masks_distribution_clone() {
        // user 1 is a distribution clone of user 0; with mu between 0 and
        // the 0-2 distance, anchor 0 keeps only user 2 as negative
        let v = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.7, 0.7]).unwrap();
        let s = Tensor::matrix(3, 2, vec![0.9, 0.1, 0.2, 0.8, 0.6, -0.4]).unwrap();
        let mean = Tensor::matrix(3, 2, vec![0.0, 0.0, 0.0, 0.0, 5.0, 5.0]).unwrap();
        let sigma = Tensor::matrix(3, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let mask = NegativeMask::filtered(&mean, &sigma, 1.5).unwrap();
        assert!(!mask.allows(0, 1), "clone must be filtered");
        assert!(!mask.allows(1, 0));
        assert!(mask.allows(0, 2));
        assert!(!mask.allows(0, 0), "anchor never its own negative");

        let mut tape = Tape::disabled();
        let loss = infonce_filtered(&mut tape, &v, &s, &mean, &sigma, 1.0, 1.5)
            .unwrap()
            .item();

        // hand-reduced value with the clone removed from anchor 0 and 1
        let cos = |a: &[f64], b: &[f64]| {
            let dot = a[0] * b[0] + a[1] * b[1];
            let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
            dot / (na * nb)
        };
        let vd = v.data();
        let sd = s.data();
        let vrow = |i: usize| &vd[i * 2..(i + 1) * 2];
        let srow = |i: usize| &sd[i * 2..(i + 1) * 2];
        let mut expect = 0.0;
        for i in 0..3 {
            let pos = cos(vrow(i), srow(i)).exp();
            let mut denom = pos;
            for j in 0..3 {
                if mask.allows(i, j) {
                    denom += cos(vrow(j), srow(i)).exp();
                    denom += cos(vrow(i), srow(j)).exp();
                }
            }
            expect += (denom / pos).ln();
        }
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn anneal_beta_midpoint_and_values() {
        assert_eq!(anneal_beta(20.0, 0.1, 20.0), 0.5);
        assert!((anneal_beta(30.0, 0.1, 20.0) - 0.731_058_578_6).abs() < 1e-9);
        assert!((anneal_beta(0.0, 0.1, 20.0) - 0.119_202_922_0).abs() < 1e-9);
    }

    #[test]
    fn anneal_beta_strictly_increasing() {
        let mut prev = anneal_beta(0.0, 0.1, 20.0);
        for epoch in 1..100 {
            let b = anneal_beta(epoch as f64, 0.1, 20.0);
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn total_loss_weights_off_gives_main() {
        let mut tape = Tape::disabled();
        let main = Tensor::scalar(0.7);
        let ssl1 = Tensor::scalar(2.0);
        let ssl2 = Tensor::scalar(4.0);
        let l2 = Tensor::scalar(100.0);
        let cfg = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..LossConfig::default()
        };
        let total = total_loss(
            &mut tape,
            &main,
            Some(&ssl1),
            Some(&ssl2),
            &l2,
            &cfg,
            5.0,
            None,
            false,
        )
        .unwrap();
        assert_eq!(total.item(), 0.7);
    }

    #[test]
    fn total_loss_equal_ssl_is_split_independent() {
        let mut tape = Tape::disabled();
        let main = Tensor::scalar(0.0);
        let s = Tensor::scalar(3.0);
        let l2 = Tensor::scalar(0.0);
        let cfg = LossConfig {
            lambda1: 0.5,
            lambda2: 0.0,
            ..LossConfig::default()
        };
        for epoch in [0.0, 20.0, 73.0] {
            let total = total_loss(
                &mut tape,
                &main,
                Some(&s),
                Some(&s),
                &l2,
                &cfg,
                epoch,
                None,
                false,
            )
            .unwrap();
            assert!((total.item() - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_hand_value_at_midpoint() {
        let mut tape = Tape::disabled();
        let main = Tensor::scalar(1.0);
        let ssl1 = Tensor::scalar(2.0);
        let ssl2 = Tensor::scalar(4.0);
        let l2 = Tensor::scalar(9.0);
        let cfg = LossConfig {
            lambda1: 0.1,
            lambda2: 0.0,
            e_anneal: 20.0,
            ..LossConfig::default()
        };
        let total = total_loss(
            &mut tape,
            &main,
            Some(&ssl1),
            Some(&ssl2),
            &l2,
            &cfg,
            20.0,
            None,
            false,
        )
        .unwrap();
        assert!((total.item() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn total_loss_swap_exchanges_weights() {
        let mut tape = Tape::disabled();
        let main = Tensor::scalar(0.0);
        let ssl1 = Tensor::scalar(1.0);
        let ssl2 = Tensor::scalar(0.0);
        let l2 = Tensor::scalar(0.0);
        let cfg = LossConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            k_anneal: 0.1,
            e_anneal: 0.0,
            ..LossConfig::default()
        };
        let epoch = 30.0; // beta well above 1/2
        let plain = total_loss(&mut tape, &main, Some(&ssl1), Some(&ssl2), &l2, &cfg, epoch, None, false)
            .unwrap()
            .item();
        let swapped = total_loss(&mut tape, &main, Some(&ssl1), Some(&ssl2), &l2, &cfg, epoch, None, true)
            .unwrap()
            .item();
        let beta = anneal_beta(epoch, 0.1, 0.0);
        assert!((plain - beta).abs() < 1e-12);
        assert!((swapped - (1.0 - beta)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_const_beta_override() {
        let mut tape = Tape::disabled();
        let main = Tensor::scalar(0.0);
        let ssl1 = Tensor::scalar(1.0);
        let ssl2 = Tensor::scalar(0.0);
        let l2 = Tensor::scalar(0.0);
        let cfg = LossConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            ..LossConfig::default()
        };
        let total = total_loss(
            &mut tape,
            &main,
            Some(&ssl1),
            Some(&ssl2),
            &l2,
            &cfg,
            999.0,
            Some(0.5),
            false,
        )
        .unwrap();
        assert!((total.item() - 0.5).abs() < 1e-12);
    }
}
