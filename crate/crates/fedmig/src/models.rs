//! Model parameter containers, initialization, forward passes, and the
//! plumbing shared by every arm: named tensor access, weighted averaging,
//! uniform scaling, per-tensor Adam state, and JSON checkpoints.
//!
//! Three networks appear in the protocol:
//!
//! * the **generator**: a two-layer GraphSAGE backbone followed by a
//!   classification head and an adaptation layer that maps hidden node
//!   embeddings into the shared feature space the server reasons about;
//! * the **discriminator**: a per-cluster MLP that maps a shared-space
//!   vector to a distribution over classes;
//! * the **projection**: a small MLP used only inside the
//!   mutual-information loss.
//!
//! Every parameter container exposes its tensors in one fixed named
//! order. That order is the contract: optimizer state, tape registration,
//! checkpoints, and traffic accounting all walk it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::tensor::{AdamState, Tape, Tensor, Value};

/// Widths of every network. Kept configurable so gradient checks can run
/// on deliberately tiny models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Raw node feature width.
    pub feature_dim: usize,
    /// GraphSAGE layer width; also the classification head input.
    pub hidden: usize,
    /// Shared-space width produced by the adaptation layer.
    pub embed: usize,
    pub num_classes: usize,
    pub disc_hidden: usize,
    pub proj_hidden: usize,
    pub proj_out: usize,
}

impl ModelDims {
    pub fn new(feature_dim: usize, hidden: usize, num_classes: usize) -> Self {
        ModelDims {
            feature_dim,
            hidden,
            embed: hidden,
            num_classes,
            disc_hidden: hidden,
            proj_hidden: hidden,
            proj_out: (hidden / 2).max(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("disc_hidden", self.disc_hidden),
            ("proj_hidden", self.proj_hidden),
            ("proj_out", self.proj_out),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform matrix: entries from `(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`, drawn row-major.
fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect();
    Tensor::from_values(&[fan_in, fan_out], values)
        .expect("glorot dims are positive")
        .with_requires_grad()
}

fn zero_bias(n: usize) -> Tensor {
    Tensor::zeros(&[1, n]).with_requires_grad()
}

/// Access to a model's tensors in a fixed named order. Implementations
/// must return the same names in the same order from both methods.
pub trait ParamSet {
    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)>;
    fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    fn element_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.element_count())
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        LinearParams {
            weight: glorot(rng, fan_in, fan_out),
            bias: zero_bias(fan_out),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SageLayerParams {
    pub w_self: Tensor,
    pub w_neigh: Tensor,
    pub bias: Tensor,
}

impl SageLayerParams {
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        SageLayerParams {
            w_self: glorot(rng, fan_in, fan_out),
            w_neigh: glorot(rng, fan_in, fan_out),
            bias: zero_bias(fan_out),
        }
    }
}

/// GraphSAGE backbone + classification head + adaptation layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub sage1: SageLayerParams,
    pub sage2: SageLayerParams,
    pub head: LinearParams,
    pub adapt: LinearParams,
}

/// Generator tensors exchanged by averaging arms: everything the
/// cross-entropy objective trains. The adaptation layer is excluded; it
/// only matters to arms that never average.
pub const GENERATOR_BACKBONE_HEAD: &[&str] = &[
    "sage1.w_self",
    "sage1.w_neigh",
    "sage1.bias",
    "sage2.w_self",
    "sage2.w_neigh",
    "sage2.bias",
    "head.weight",
    "head.bias",
];

impl GeneratorParams {
    pub fn init<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        GeneratorParams {
            sage1: SageLayerParams::init(rng, dims.feature_dim, dims.hidden),
            sage2: SageLayerParams::init(rng, dims.hidden, dims.hidden),
            head: LinearParams::init(rng, dims.hidden, dims.num_classes),
            adapt: LinearParams::init(rng, dims.hidden, dims.embed),
        }
    }
}

impl ParamSet for GeneratorParams {
    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("sage1.w_self", &self.sage1.w_self),
            ("sage1.w_neigh", &self.sage1.w_neigh),
            ("sage1.bias", &self.sage1.bias),
            ("sage2.w_self", &self.sage2.w_self),
            ("sage2.w_neigh", &self.sage2.w_neigh),
            ("sage2.bias", &self.sage2.bias),
            ("head.weight", &self.head.weight),
            ("head.bias", &self.head.bias),
            ("adapt.weight", &self.adapt.weight),
            ("adapt.bias", &self.adapt.bias),
        ]
    }

    fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("sage1.w_self", &mut self.sage1.w_self),
            ("sage1.w_neigh", &mut self.sage1.w_neigh),
            ("sage1.bias", &mut self.sage1.bias),
            ("sage2.w_self", &mut self.sage2.w_self),
            ("sage2.w_neigh", &mut self.sage2.w_neigh),
            ("sage2.bias", &mut self.sage2.bias),
            ("head.weight", &mut self.head.weight),
            ("head.bias", &mut self.head.bias),
            ("adapt.weight", &mut self.adapt.weight),
            ("adapt.bias", &mut self.adapt.bias),
        ]
    }
}

/// MLP over shared-space vectors ending in a class distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminatorParams {
    pub fc1: LinearParams,
    pub fc2: LinearParams,
    pub out: LinearParams,
}

impl DiscriminatorParams {
    pub fn init<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        DiscriminatorParams {
            fc1: LinearParams::init(rng, dims.embed, dims.disc_hidden),
            fc2: LinearParams::init(rng, dims.disc_hidden, dims.disc_hidden),
            out: LinearParams::init(rng, dims.disc_hidden, dims.num_classes),
        }
    }
}

impl ParamSet for DiscriminatorParams {
    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("fc1.weight", &self.fc1.weight),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weight", &self.fc2.weight),
            ("fc2.bias", &self.fc2.bias),
            ("out.weight", &self.out.weight),
            ("out.bias", &self.out.bias),
        ]
    }

    fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("fc1.weight", &mut self.fc1.weight),
            ("fc1.bias", &mut self.fc1.bias),
            ("fc2.weight", &mut self.fc2.weight),
            ("fc2.bias", &mut self.fc2.bias),
            ("out.weight", &mut self.out.weight),
            ("out.bias", &mut self.out.bias),
        ]
    }
}

/// Two-layer MLP used by the mutual-information loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

impl ProjectionParams {
    pub fn init<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        ProjectionParams {
            fc1: LinearParams::init(rng, dims.embed, dims.proj_hidden),
            fc2: LinearParams::init(rng, dims.proj_hidden, dims.proj_out),
        }
    }
}

impl ParamSet for ProjectionParams {
    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("fc1.weight", &self.fc1.weight),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weight", &self.fc2.weight),
            ("fc2.bias", &self.fc2.bias),
        ]
    }

    fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("fc1.weight", &mut self.fc1.weight),
            ("fc1.bias", &mut self.fc1.bias),
            ("fc2.weight", &mut self.fc2.weight),
            ("fc2.bias", &mut self.fc2.bias),
        ]
    }
}

// ---------------------------------------------------------------------
// Aggregation helpers.

/// `result = sum_i weights[i] * sets[i]`, accumulated set by set in call
/// order. Shapes must agree across sets; weight vectors are taken as
/// given (callers normalize).
pub fn weighted_average<P: ParamSet + Clone>(sets: &[P], weights: &[f64]) -> Result<P> {
    if sets.is_empty() || sets.len() != weights.len() {
        return Err(Error::Protocol(format!(
            "weighted_average over {} sets with {} weights",
            sets.len(),
            weights.len()
        )));
    }
    let mut result = sets[0].clone();
    for (_, t) in result.named_tensors_mut() {
        t.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for (set, &w) in sets.iter().zip(weights) {
        let mut dst = result.named_tensors_mut();
        let src = set.named_tensors();
        for ((dn, d), (sn, s)) in dst.iter_mut().zip(src.iter()) {
            if dn != sn || d.shape() != s.shape() {
                return Err(Error::Protocol(format!(
                    "mismatched tensors in weighted_average: {dn} vs {sn}"
                )));
            }
            for (dv, sv) in d.values_mut().iter_mut().zip(s.values()) {
                *dv += w * sv;
            }
        }
    }
    Ok(result)
}

/// Multiplies every tensor in the set by `factor`.
pub fn scale_params<P: ParamSet>(params: &mut P, factor: f64) {
    for (_, t) in params.named_tensors_mut() {
        t.values_mut().iter_mut().for_each(|v| *v *= factor);
    }
}

/// Copies the tensors whose names appear in `names` from `src` to `dst`,
/// leaving everything else in `dst` untouched.
pub fn copy_named<P: ParamSet>(dst: &mut P, src: &P, names: &[&str]) -> Result<()> {
    let src_tensors = src.named_tensors();
    for (dn, d) in dst.named_tensors_mut() {
        if !names.contains(&dn) {
            continue;
        }
        let (_, s) = src_tensors
            .iter()
            .find(|(sn, _)| *sn == dn)
            .ok_or_else(|| Error::Protocol(format!("source set lacks tensor {dn}")))?;
        if d.shape() != s.shape() {
            return Err(Error::Protocol(format!("shape mismatch copying {dn}")));
        }
        d.values_mut().copy_from_slice(s.values());
    }
    Ok(())
}

/// One Adam state per tensor, aligned with the set's named order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamSet {
    pub states: Vec<AdamState>,
}

impl AdamSet {
    pub fn for_params<P: ParamSet>(params: &P, learning_rate: f64) -> Self {
        let states = params
            .named_tensors()
            .iter()
            .map(|(_, t)| AdamState::new(t.element_count(), learning_rate))
            .collect();
        AdamSet { states }
    }
}

/// Registers every tensor of a set on a tape, preserving named order.
pub fn register_params<P: ParamSet>(tape: &mut Tape, params: &P) -> Vec<Value> {
    params
        .named_tensors()
        .iter()
        .map(|(_, t)| tape.param(t))
        .collect()
}

/// Reads gradients for `values` off the tape and applies one Adam step to
/// each tensor. `values` must come from [`register_params`] on the same
/// set and the tape must have had `backward` run.
pub fn apply_adam_updates<P: ParamSet>(
    tape: &Tape,
    values: &[Value],
    params: &mut P,
    opt: &mut AdamSet,
) -> Result<()> {
    let mut tensors = params.named_tensors_mut();
    if tensors.len() != values.len() || tensors.len() != opt.states.len() {
        return Err(Error::Training {
            component: "optimizer/parameter alignment".into(),
        });
    }
    for (((_, t), v), state) in tensors.iter_mut().zip(values).zip(&mut opt.states) {
        let grad = tape.grad(*v)?;
        crate::tensor::adam_step(t, &grad, state)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Tape registration and forward passes.

#[derive(Debug, Clone, Copy)]
pub struct LinearValues {
    pub weight: Value,
    pub bias: Value,
}

#[derive(Debug, Clone, Copy)]
pub struct SageLayerValues {
    pub w_self: Value,
    pub w_neigh: Value,
    pub bias: Value,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorValues {
    pub sage1: SageLayerValues,
    pub sage2: SageLayerValues,
    pub head: LinearValues,
    pub adapt: LinearValues,
}

impl GeneratorValues {
    pub fn register(tape: &mut Tape, p: &GeneratorParams) -> Self {
        GeneratorValues {
            sage1: SageLayerValues {
                w_self: tape.param(&p.sage1.w_self),
                w_neigh: tape.param(&p.sage1.w_neigh),
                bias: tape.param(&p.sage1.bias),
            },
            sage2: SageLayerValues {
                w_self: tape.param(&p.sage2.w_self),
                w_neigh: tape.param(&p.sage2.w_neigh),
                bias: tape.param(&p.sage2.bias),
            },
            head: LinearValues {
                weight: tape.param(&p.head.weight),
                bias: tape.param(&p.head.bias),
            },
            adapt: LinearValues {
                weight: tape.param(&p.adapt.weight),
                bias: tape.param(&p.adapt.bias),
            },
        }
    }

    /// Values in the same order as [`GeneratorParams::named_tensors`].
    pub fn ordered(&self) -> Vec<Value> {
        vec![
            self.sage1.w_self,
            self.sage1.w_neigh,
            self.sage1.bias,
            self.sage2.w_self,
            self.sage2.w_neigh,
            self.sage2.bias,
            self.head.weight,
            self.head.bias,
            self.adapt.weight,
            self.adapt.bias,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorValues {
    pub fc1: LinearValues,
    pub fc2: LinearValues,
    pub out: LinearValues,
}

impl DiscriminatorValues {
    pub fn register(tape: &mut Tape, p: &DiscriminatorParams) -> Self {
        DiscriminatorValues {
            fc1: LinearValues {
                weight: tape.param(&p.fc1.weight),
                bias: tape.param(&p.fc1.bias),
            },
            fc2: LinearValues {
                weight: tape.param(&p.fc2.weight),
                bias: tape.param(&p.fc2.bias),
            },
            out: LinearValues {
                weight: tape.param(&p.out.weight),
                bias: tape.param(&p.out.bias),
            },
        }
    }

    /// Registers every tensor as a constant: the discriminator is used
    /// but never trained on this tape.
    pub fn register_frozen(tape: &mut Tape, p: &DiscriminatorParams) -> Self {
        DiscriminatorValues {
            fc1: LinearValues {
                weight: tape.constant(&p.fc1.weight),
                bias: tape.constant(&p.fc1.bias),
            },
            fc2: LinearValues {
                weight: tape.constant(&p.fc2.weight),
                bias: tape.constant(&p.fc2.bias),
            },
            out: LinearValues {
                weight: tape.constant(&p.out.weight),
                bias: tape.constant(&p.out.bias),
            },
        }
    }

    pub fn ordered(&self) -> Vec<Value> {
        vec![
            self.fc1.weight,
            self.fc1.bias,
            self.fc2.weight,
            self.fc2.bias,
            self.out.weight,
            self.out.bias,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionValues {
    pub fc1: LinearValues,
    pub fc2: LinearValues,
}

impl ProjectionValues {
    pub fn register(tape: &mut Tape, p: &ProjectionParams) -> Self {
        ProjectionValues {
            fc1: LinearValues {
                weight: tape.param(&p.fc1.weight),
                bias: tape.param(&p.fc1.bias),
            },
            fc2: LinearValues {
                weight: tape.param(&p.fc2.weight),
                bias: tape.param(&p.fc2.bias),
            },
        }
    }

    pub fn ordered(&self) -> Vec<Value> {
        vec![self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias]
    }
}

fn linear(tape: &mut Tape, x: Value, l: &LinearValues) -> Result<Value> {
    let xw = tape.matmul(x, l.weight)?;
    tape.add_row(xw, l.bias)
}

fn sage_layer(
    tape: &mut Tape,
    x: Value,
    adj: &Csr,
    layer: &SageLayerValues,
) -> Result<Value> {
    let own = tape.matmul(x, layer.w_self)?;
    let agg = tape.neighbor_mean(x, adj)?;
    let agg = tape.matmul(agg, layer.w_neigh)?;
    let sum = tape.add(own, agg)?;
    let sum = tape.add_row(sum, layer.bias)?;
    Ok(tape.relu(sum))
}

/// Everything the generator produces for one graph in one pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    /// `N x hidden` node embeddings after the second GraphSAGE layer.
    pub hidden: Value,
    /// `N x H` unnormalized class scores.
    pub logits: Value,
    /// `N x embed` shared-space vectors from the adaptation layer.
    pub adapted: Value,
}

pub fn generator_forward(
    tape: &mut Tape,
    gen: &GeneratorValues,
    x: Value,
    adj: &Csr,
) -> Result<GeneratorOutput> {
    let h1 = sage_layer(tape, x, adj, &gen.sage1)?;
    let hidden = sage_layer(tape, h1, adj, &gen.sage2)?;
    let logits = linear(tape, hidden, &gen.head)?;
    let adapted = linear(tape, hidden, &gen.adapt)?;
    Ok(GeneratorOutput {
        hidden,
        logits,
        adapted,
    })
}

/// Class distribution rows for each input row.
pub fn discriminator_forward(
    tape: &mut Tape,
    disc: &DiscriminatorValues,
    z: Value,
) -> Result<Value> {
    let h1 = linear(tape, z, &disc.fc1)?;
    let h1 = tape.relu(h1);
    let h2 = linear(tape, h1, &disc.fc2)?;
    let h2 = tape.relu(h2);
    let logits = linear(tape, h2, &disc.out)?;
    Ok(tape.softmax_rows(logits))
}

pub fn projection_forward(
    tape: &mut Tape,
    proj: &ProjectionValues,
    z: Value,
) -> Result<Value> {
    let h = linear(tape, z, &proj.fc1)?;
    let h = tape.relu(h);
    linear(tape, h, &proj.fc2)
}

// ---------------------------------------------------------------------
// Checkpoints.

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Serializable snapshot of one parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

pub fn to_checkpoint<P: ParamSet>(params: &P) -> Checkpoint {
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        tensors: params
            .named_tensors()
            .iter()
            .map(|(n, t)| NamedTensor {
                name: (*n).to_string(),
                tensor: (*t).clone(),
            })
            .collect(),
    }
}

/// Restores a checkpoint into an existing set; names and shapes must
/// match exactly.
pub fn apply_checkpoint<P: ParamSet>(ckpt: &Checkpoint, params: &mut P) -> Result<()> {
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint format version {} not supported",
            ckpt.format_version
        )));
    }
    let mut tensors = params.named_tensors_mut();
    if tensors.len() != ckpt.tensors.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, model has {}",
            ckpt.tensors.len(),
            tensors.len()
        )));
    }
    for ((name, t), stored) in tensors.iter_mut().zip(&ckpt.tensors) {
        if *name != stored.name {
            return Err(Error::Config(format!(
                "checkpoint tensor {} does not match model tensor {name}",
                stored.name
            )));
        }
        if t.shape() != stored.tensor.shape() {
            return Err(Error::Config(format!("shape mismatch restoring {name}")));
        }
        t.values_mut().copy_from_slice(stored.tensor.values());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            feature_dim: 3,
            hidden: 4,
            embed: 4,
            num_classes: 2,
            disc_hidden: 4,
            proj_hidden: 4,
            proj_out: 2,
        }
    }

    fn tiny_graph() -> Csr {
        Csr::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_glorot_bounds_and_zero_biases() {
        let dims = tiny_dims();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = GeneratorParams::init(&dims, &mut r1);
        let b = GeneratorParams::init(&dims, &mut r2);
        for ((_, ta), (_, tb)) in a.named_tensors().iter().zip(b.named_tensors()) {
            for (x, y) in ta.values().iter().zip(tb.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let bound = (6.0_f64 / 7.0).sqrt();
        assert!(a.sage1.w_self.values().iter().all(|v| v.abs() < bound));
        assert!(a.sage1.bias.values().iter().all(|&v| v == 0.0));
        assert!(a.head.bias.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classification_gradients_skip_the_adaptation_layer() {
        let dims = tiny_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = GeneratorParams::init(&dims, &mut rng);
        let adj = tiny_graph();
        let x = Tensor::from_values(
            &[5, 3],
            (0..15).map(|i| (i as f64) * 0.1 - 0.7).collect(),
        )
        .unwrap();

        let mut tape = Tape::new();
        let gen = GeneratorValues::register(&mut tape, &params);
        let xin = tape.constant(&x);
        let out = generator_forward(&mut tape, &gen, xin, &adj).unwrap();
        // A loss that only touches the logits path.
        let s = tape.softmax_rows(out.logits);
        let l = tape.ln_clamped(s);
        let loss = tape.sum_all(l);
        tape.backward(loss).unwrap();

        let adapt_grad = tape.grad(gen.adapt.weight).unwrap();
        assert!(adapt_grad.values().iter().all(|&g| g == 0.0));
        let head_grad = tape.grad(gen.head.weight).unwrap();
        assert!(head_grad.values().iter().any(|&g| g != 0.0));

        // And the reverse: a loss through the adaptation path leaves the
        // head untouched.
        let mut tape2 = Tape::new();
        let gen2 = GeneratorValues::register(&mut tape2, &params);
        let xin2 = tape2.constant(&x);
        let out2 = generator_forward(&mut tape2, &gen2, xin2, &adj).unwrap();
        let loss2 = tape2.sum_all(out2.adapted);
        tape2.backward(loss2).unwrap();
        assert!(tape2
            .grad(gen2.head.weight)
            .unwrap()
            .values()
            .iter()
            .all(|&g| g == 0.0));
        assert!(tape2
            .grad(gen2.adapt.weight)
            .unwrap()
            .values()
            .iter()
            .any(|&g| g != 0.0));
    }

    #[test]
    fn discriminator_outputs_distributions() {
        let dims = tiny_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = DiscriminatorParams::init(&dims, &mut rng);
        let mut tape = Tape::new();
        let disc = DiscriminatorValues::register_frozen(&mut tape, &params);
        let z = tape.constant(&Tensor::from_values(&[3, 4], vec![0.5; 12]).unwrap());
        let p = discriminator_forward(&mut tape, &disc, z).unwrap();
        let v = tape.value(p);
        for r in 0..3 {
            let sum: f64 = v.row_slice(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dyadic_weighted_average_is_exact() {
        let dims = tiny_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = GeneratorParams::init(&dims, &mut rng);
        let mut b = a.clone();
        for (_, t) in a.named_tensors_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 1.0);
        }
        for (_, t) in b.named_tensors_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 5.0);
        }
        // Client sizes 3 and 1: weights 0.75 and 0.25 are dyadic, so the
        // blend of 1 and 5 must be exactly 2.
        let avg = weighted_average(&[a, b], &[0.75, 0.25]).unwrap();
        for (_, t) in avg.named_tensors() {
            assert!(t.values().iter().all(|&v| v == 2.0));
        }
    }

    #[test]
    fn copy_named_touches_only_the_subset() {
        let dims = tiny_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = GeneratorParams::init(&dims, &mut rng);
        let mut dst = GeneratorParams::init(&dims, &mut rng);
        let dst_adapt = dst.adapt.weight.values().to_vec();
        copy_named(&mut dst, &src, GENERATOR_BACKBONE_HEAD).unwrap();
        assert_eq!(dst.sage1.w_self.values(), src.sage1.w_self.values());
        assert_eq!(dst.head.weight.values(), src.head.weight.values());
        assert_eq!(dst.adapt.weight.values(), dst_adapt.as_slice());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dims = tiny_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = GeneratorParams::init(&dims, &mut rng);
        let json = serde_json::to_string(&to_checkpoint(&params)).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut restored = GeneratorParams::init(&dims, &mut ChaCha8Rng::seed_from_u64(99));
        apply_checkpoint(&back, &mut restored).unwrap();
        for ((_, a), (_, b)) in params.named_tensors().iter().zip(restored.named_tensors()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn adam_updates_move_parameters() {
        let dims = tiny_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = GeneratorParams::init(&dims, &mut rng);
        let before = params.head.bias.values().to_vec();
        let mut opt = AdamSet::for_params(&params, 0.01);
        let adj = tiny_graph();
        let x = Tensor::from_values(
            &[5, 3],
            (0..15).map(|i| (i as f64) * 0.2 - 1.4).collect(),
        )
        .unwrap();

        let mut tape = Tape::new();
        let gen = GeneratorValues::register(&mut tape, &params);
        let values = gen.ordered();
        let xin = tape.constant(&x);
        let out = generator_forward(&mut tape, &gen, xin, &adj).unwrap();
        let loss = tape.sum_all(out.logits);
        tape.backward(loss).unwrap();
        apply_adam_updates(&tape, &values, &mut params, &mut opt).unwrap();
        // The head bias gradient is the node count per class column, so
        // it always moves.
        assert_ne!(params.head.bias.values(), before.as_slice());
        assert_eq!(opt.states[7].step_count(), 1);
    }

    proptest! {
        // Averaging identical sets with weights that sum to one must
        // reproduce the set up to accumulation error.
        #[test]
        fn averaging_identical_sets_is_identity(seed in 0u64..1000, w1 in 0.01f64..0.99) {
            let dims = tiny_dims();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = GeneratorParams::init(&dims, &mut rng);
            let avg = weighted_average(&[p.clone(), p.clone()], &[w1, 1.0 - w1]).unwrap();
            for ((_, a), (_, b)) in avg.named_tensors().iter().zip(p.named_tensors()) {
                prop_assert!(a.max_abs_diff(b) < 1e-12);
            }
        }
    }
}
