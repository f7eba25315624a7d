//! Loss functions composed on the gradient tape, plus plain-`f64`
//! reference evaluators in [`reference`] that the test suite checks the
//! tape versions against. The reference code shares no numerics with the
//! tape; keep it that way, it is the independent witness.
//!
//! Four losses appear in training:
//!
//! * **classification**: masked mean cross-entropy over logits;
//! * **discriminator**: soft-target cross-entropy pulling the
//!   discriminator's view of generated cluster features toward its view
//!   of the real cluster prototypes;
//! * **generative diversity**: a generalized Jensen-Shannon objective
//!   between the discriminator's view of real data and the pooled
//!   generator-induced class distribution;
//! * **mutual information**: InfoNCE over projected prototype pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{discriminator_forward, DiscriminatorValues};
use crate::tensor::{Tape, Tensor, Value, LOG_FLOOR};

/// Normalized class frequencies. Zero totals yield the uniform
/// distribution rather than NaN.
pub fn class_frequency_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn one_hot_rows(rows: usize, cols: usize, hot: impl Iterator<Item = (usize, usize)>) -> Tensor {
    let mut t = Tensor::zeros(&[rows, cols]);
    for (r, c) in hot {
        t.values_mut()[r * cols + c] = 1.0;
    }
    t
}

/// Masked mean cross-entropy: `-(1/|mask|) * sum_i ln softmax(logits)_i[y_i]`
/// over the masked rows.
pub fn classification_loss(
    tape: &mut Tape,
    logits: Value,
    labels: &[usize],
    mask: &[bool],
    num_classes: usize,
) -> Result<Value> {
    let (n, h) = {
        let t = tape.value(logits);
        t.dims2()
    };
    if h != num_classes || n != labels.len() || n != mask.len() {
        return Err(Error::shape(
            "classification_loss",
            format!("logits {n}x{h}, {} labels, {} mask entries", labels.len(), mask.len()),
        ));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::Config(
            "classification loss needs at least one masked node".into(),
        ));
    }
    let hot = one_hot_rows(
        n,
        h,
        labels
            .iter()
            .enumerate()
            .filter(|(i, _)| mask[*i])
            .map(|(i, &y)| (i, y)),
    );
    let hot = tape.constant(&hot);
    let probs = tape.softmax_rows(logits);
    let logp = tape.ln_clamped(probs);
    let picked = tape.mul(hot, logp)?;
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, -1.0 / active as f64))
}

/// Soft-target cross-entropy for the cluster discriminator. Row `h` of
/// `synth_feats` is the generated cluster feature for class `h`, row `h`
/// of `proto_feats` the real cluster prototype:
///
/// ```text
/// L = -(1/R) * sum_h sum_y D(cp_h)[y] * ln D(cz~_h)[y]
/// ```
///
/// The target distribution `D(cp_h)` is gradient-blocked; gradients reach
/// the discriminator parameters and the synthetic features only through
/// the prediction path.
pub fn discriminator_loss(
    tape: &mut Tape,
    disc: &DiscriminatorValues,
    synth_feats: Value,
    proto_feats: Value,
) -> Result<Value> {
    let (rs, ds) = tape.value(synth_feats).dims2();
    let (rp, dp) = tape.value(proto_feats).dims2();
    if (rs, ds) != (rp, dp) {
        return Err(Error::shape(
            "discriminator_loss",
            format!("synthetic rows {rs}x{ds}, prototype rows {rp}x{dp}"),
        ));
    }
    if rs == 0 {
        return Err(Error::shape(
            "discriminator_loss",
            "needs at least one class row".to_string(),
        ));
    }
    let pred = discriminator_forward(tape, disc, synth_feats)?;
    let target = discriminator_forward(tape, disc, proto_feats)?;
    let target = tape.detach(target);
    let logp = tape.ln_clamped(pred);
    let picked = tape.mul(target, logp)?;
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, -1.0 / rs as f64))
}

/// Generalized KL term `sum a * (ln a - ln b)` for same-shape rows.
fn generalized_kl(tape: &mut Tape, a: Value, b: Value) -> Result<Value> {
    let ln_a = tape.ln_clamped(a);
    let ln_b = tape.ln_clamped(b);
    let diff = tape.sub(ln_a, ln_b)?;
    let prod = tape.mul(a, diff)?;
    Ok(tape.sum_all(prod))
}

/// Diversity objective for a set of generator-induced class
/// distributions against the discriminator's view of real data.
///
/// With `S = sum_g q_g` (left unnormalized on purpose), `M = (p + S) / 2`
/// and `H = num_classes`:
///
/// ```text
/// L = gKL(p || M) + H * gKL(S || M) - (H+1) ln(H+1) + H ln H
/// ```
///
/// Note the weight and the constants use the class count, not the number
/// of generator distributions; the generator count only shows up through
/// the mass of `S`. `p` is detached internally: the real side never
/// receives gradients.
pub fn gan_diversity_loss(
    tape: &mut Tape,
    true_dist: Value,
    generated: &[Value],
    num_classes: usize,
) -> Result<Value> {
    if generated.is_empty() {
        return Err(Error::Config(
            "diversity loss needs at least one generator distribution".into(),
        ));
    }
    let (pr, h) = tape.value(true_dist).dims2();
    if pr != 1 {
        return Err(Error::shape(
            "gan_diversity_loss",
            format!("true distribution must be one row, got {pr}"),
        ));
    }
    for &g in generated {
        if tape.value(g).dims2() != (1, h) {
            return Err(Error::shape(
                "gan_diversity_loss",
                "generator distribution shape mismatch".to_string(),
            ));
        }
    }
    let hw = num_classes as f64;
    let p = tape.detach(true_dist);
    let mut s = generated[0];
    for &g in &generated[1..] {
        s = tape.add(s, g)?;
    }
    let ps = tape.add(p, s)?;
    let m = tape.scale(ps, 0.5);
    let kl_p = generalized_kl(tape, p, m)?;
    let kl_s = generalized_kl(tape, s, m)?;
    let kl_s = tape.scale(kl_s, hw);
    let sum = tape.add(kl_p, kl_s)?;
    let shift = hw * hw.ln() - (hw + 1.0) * (hw + 1.0).ln();
    let shift = tape.constant(&Tensor::scalar(shift));
    tape.add(sum, shift)
}

/// InfoNCE over already-projected rows. Anchor and candidate rows are
/// L2-normalized, their cosine similarities divided by `temperature`,
/// and each anchor must pick out its positive candidate:
///
/// ```text
/// L = -(1/A) * sum_a ln softmax(sim_a / tau)[positive_a]
/// ```
pub fn infonce_mi_loss(
    tape: &mut Tape,
    anchor_proj: Value,
    candidate_proj: Value,
    positive: &[usize],
    temperature: f64,
) -> Result<Value> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let (a, d) = tape.value(anchor_proj).dims2();
    let (c, dc) = tape.value(candidate_proj).dims2();
    if d != dc || a != positive.len() {
        return Err(Error::shape(
            "infonce_mi_loss",
            format!("anchors {a}x{d}, candidates {c}x{dc}, {} positives", positive.len()),
        ));
    }
    if a == 0 {
        return Err(Error::Config(
            "mutual-information loss needs at least one represented class".into(),
        ));
    }
    if positive.iter().any(|&p| p >= c) {
        return Err(Error::shape(
            "infonce_mi_loss",
            "positive index out of candidate range".to_string(),
        ));
    }
    let an = tape.l2_normalize_rows(anchor_proj);
    let cn = tape.l2_normalize_rows(candidate_proj);
    let ct = tape.transpose(cn);
    let sims = tape.matmul(an, ct)?;
    let sims = tape.scale(sims, 1.0 / temperature);
    let probs = tape.softmax_rows(sims);
    let logp = tape.ln_clamped(probs);
    let hot = one_hot_rows(a, c, positive.iter().enumerate().map(|(i, &p)| (i, p)));
    let hot = tape.constant(&hot);
    let picked = tape.mul(hot, logp)?;
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, -1.0 / a as f64))
}

/// Per-term values of one composite loss evaluation, together with the
/// mixing weights that were in force. Terms that were not active
/// contribute zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub gan: f64,
    pub mi: f64,
    pub composite: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn ce_only(ce: f64, lambda1: f64, lambda2: f64) -> Self {
        LossBreakdown {
            ce,
            gan: 0.0,
            mi: 0.0,
            composite: ce,
            lambda1,
            lambda2,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.gan.is_finite() && self.mi.is_finite()
    }
}

/// `composite = ce + lambda1 * gan + lambda2 * mi`, with absent terms
/// skipped. The returned breakdown's `composite` is computed with the
/// same expression order the tape uses, so the two agree exactly.
pub fn compose_total(
    tape: &mut Tape,
    ce: Value,
    gan: Option<Value>,
    mi: Option<Value>,
    lambda1: f64,
    lambda2: f64,
) -> Result<(Value, LossBreakdown)> {
    for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::Config(format!(
                "{name} must be finite and nonnegative, got {l}"
            )));
        }
    }
    let ce_v = tape.scalar_value(ce)?;
    let mut total = ce;
    let mut total_v = ce_v;
    let mut gan_v = 0.0;
    let mut mi_v = 0.0;
    if let Some(g) = gan {
        gan_v = tape.scalar_value(g)?;
        let scaled = tape.scale(g, lambda1);
        total = tape.add(total, scaled)?;
        total_v += lambda1 * gan_v;
    }
    if let Some(m) = mi {
        mi_v = tape.scalar_value(m)?;
        let scaled = tape.scale(m, lambda2);
        total = tape.add(total, scaled)?;
        total_v += lambda2 * mi_v;
    }
    Ok((
        total,
        LossBreakdown {
            ce: ce_v,
            gan: gan_v,
            mi: mi_v,
            composite: total_v,
            lambda1,
            lambda2,
        },
    ))
}

/// KL divergence with the same log floor the tape uses. Inputs are
/// trusted; use [`jensen_shannon_divergence`] for validated distances.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()))
        .sum()
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Config(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{name} must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

/// Jensen-Shannon divergence between two normalized distributions;
/// symmetric, bounded by `ln 2`, zero exactly when the inputs agree.
/// Inputs whose mass strays from 1 by more than 1e-6 are rejected.
pub fn jensen_shannon_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Config(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution("first distribution", p)?;
    check_distribution("second distribution", q)?;
    if p == q {
        return Ok(0.0);
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl_divergence(p, &m) + 0.5 * kl_divergence(q, &m))
}

pub mod reference {
    //! Brute-force evaluators mirroring each loss, written directly over
    //! `f64` slices with no tape involvement. Tests compare the tape
    //! losses against these; runtime code must never call them.

    use crate::models::DiscriminatorParams;
    use crate::tensor::{Tensor, LOG_FLOOR};

    fn softmax_row(row: &[f64]) -> Vec<f64> {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    fn ln_floor(x: f64) -> f64 {
        x.max(LOG_FLOOR).ln()
    }

    pub fn classification_reference(
        logits: &Tensor,
        labels: &[usize],
        mask: &[bool],
    ) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..logits.rows() {
            if !mask[i] {
                continue;
            }
            let probs = softmax_row(logits.row_slice(i));
            total += ln_floor(probs[labels[i]]);
            count += 1;
        }
        -total / count as f64
    }

    fn linear_ref(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
        let (din, dout) = w.dims2();
        (0..dout)
            .map(|o| {
                let mut acc = b.values()[o];
                for i in 0..din {
                    acc += x[i] * w.get(i, o);
                }
                acc
            })
            .collect()
    }

    fn relu_vec(v: Vec<f64>) -> Vec<f64> {
        v.into_iter().map(|x| x.max(0.0)).collect()
    }

    /// Hand-rolled discriminator forward: two ReLU layers, softmax out.
    pub fn discriminator_probs_reference(p: &DiscriminatorParams, row: &[f64]) -> Vec<f64> {
        let h1 = relu_vec(linear_ref(row, &p.fc1.weight, &p.fc1.bias));
        let h2 = relu_vec(linear_ref(&h1, &p.fc2.weight, &p.fc2.bias));
        softmax_row(&linear_ref(&h2, &p.out.weight, &p.out.bias))
    }

    /// Soft-target cross-entropy by direct double summation.
    pub fn discriminator_reference(
        p: &DiscriminatorParams,
        synth_feats: &Tensor,
        proto_feats: &Tensor,
    ) -> f64 {
        let rows = synth_feats.rows();
        let mut total = 0.0;
        for r in 0..rows {
            let pred = discriminator_probs_reference(p, synth_feats.row_slice(r));
            let target = discriminator_probs_reference(p, proto_feats.row_slice(r));
            for y in 0..pred.len() {
                total += target[y] * ln_floor(pred[y]);
            }
        }
        -total / rows as f64
    }

    /// The diversity objective in its expanded integral form:
    ///
    /// ```text
    /// sum_y p ln(p / (p + S)) + H * sum_y S ln(S / (p + S))
    ///   + (1 + H * mass(S)) ln 2 - (H+1) ln(H+1) + H ln H
    /// ```
    ///
    /// Algebraically identical to the midpoint form the tape computes;
    /// any disagreement beyond rounding is a bug in one of the two.
    pub fn gan_integral_reference(
        true_dist: &[f64],
        generated: &[Vec<f64>],
        num_classes: usize,
    ) -> f64 {
        let hw = num_classes as f64;
        let width = true_dist.len();
        let s: Vec<f64> = (0..width)
            .map(|y| generated.iter().map(|g| g[y]).sum())
            .collect();
        let mass_s: f64 = s.iter().sum();
        let mut total = 0.0;
        for y in 0..width {
            let p = true_dist[y];
            let both = p + s[y];
            total += p * (ln_floor(p) - ln_floor(both));
            total += hw * s[y] * (ln_floor(s[y]) - ln_floor(both));
        }
        total += (1.0 + hw * mass_s) * std::f64::consts::LN_2;
        total + hw * hw.ln() - (hw + 1.0) * (hw + 1.0).ln()
    }

    pub fn infonce_reference(
        anchor_proj: &Tensor,
        candidate_proj: &Tensor,
        positive: &[usize],
        temperature: f64,
    ) -> f64 {
        let normalize = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..t.rows())
                .map(|r| {
                    let row = t.row_slice(r);
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(LOG_FLOOR);
                    row.iter().map(|x| x / norm).collect()
                })
                .collect()
        };
        let an = normalize(anchor_proj);
        let cn = normalize(candidate_proj);
        let mut total = 0.0;
        for (i, a) in an.iter().enumerate() {
            let sims: Vec<f64> = cn
                .iter()
                .map(|c| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>() / temperature)
                .collect();
            let probs = softmax_row(&sims);
            total += ln_floor(probs[positive[i]]);
        }
        -total / an.len() as f64
    }
}
