//! Communication accounting. Every transmitted tensor is one message
//! costing `4 * element_count + 64` bytes: elements are serialized as
//! 32-bit floats on the wire and each message carries a fixed header.
//!
//! Per-round inventory for the protocol arm, per client, gated by the
//! ablation flags:
//!
//! upload
//!   - prototype rows + their count vector, when the discriminator path
//!     or the correction path consumes them (gan or migma)
//!   - generated-mean rows + their count vector, when anything consumes
//!     cluster-level synthetic features (gan, mi_loss, or migma)
//!   - the full generator (10 tensors), when the correction path is on:
//!     the server synthesizes cluster knowledge from member generators,
//!     and generator parameters dominate the protocol's overhead
//!   - the backbone + head (8 tensors), when the correction path is off
//!     and within-cluster averaging runs instead
//!
//! download
//!   - the cluster discriminator (6 tensors), aggregated prototypes, and
//!     the mean member distribution, when the feedback term is on (gan)
//!   - aggregated generated means, when the feedback term or the
//!     contrastive term is on (gan or mi_loss)
//!   - the correction weight (1 element), when the correction path is on
//!   - the averaged backbone + head (8 tensors), when it is off
//!
//! The projection head never travels: it is a client-local auxiliary.
//! Broadcasts are billed in the round that produces them; every round,
//! including the first, carries the same inventory. The local baseline
//! communicates nothing; FedAvg-style arms exchange backbone + head both
//! ways.

use crate::models::{DiscriminatorParams, GeneratorParams, ParamSet, GENERATOR_BACKBONE_HEAD};

use super::{AblationFlags, ClientUpload, ClusterContext};

pub const BYTES_PER_ELEMENT: u64 = 4;
pub const MESSAGE_HEADER_BYTES: u64 = 64;

/// Wire cost of one message carrying `elements` float values.
pub fn message_bytes(elements: usize) -> u64 {
    elements as u64 * BYTES_PER_ELEMENT + MESSAGE_HEADER_BYTES
}

/// Wire cost of a parameter set sent as one message per tensor.
pub fn param_set_bytes<P: ParamSet>(params: &P) -> u64 {
    params
        .named_tensors()
        .iter()
        .map(|(_, t)| message_bytes(t.element_count()))
        .sum()
}

/// Wire cost of the backbone + head subset, one message per tensor.
pub fn backbone_head_bytes(params: &GeneratorParams) -> u64 {
    params
        .named_tensors()
        .iter()
        .filter(|(name, _)| GENERATOR_BACKBONE_HEAD.contains(name))
        .map(|(_, t)| message_bytes(t.element_count()))
        .sum()
}

/// Upload cost for one protocol-arm client this round.
pub fn protocol_upload_bytes(
    flags: AblationFlags,
    upload: Option<&ClientUpload>,
    generator: &GeneratorParams,
    num_classes: usize,
) -> u64 {
    let mut bytes = 0;
    if let Some(up) = upload {
        if flags.discriminator_active() {
            bytes += message_bytes(up.prototypes.rows.element_count());
            bytes += message_bytes(num_classes);
        }
        if flags.generated_means_active() {
            bytes += message_bytes(up.generated.rows.element_count());
            bytes += message_bytes(num_classes);
        }
    }
    if flags.migma {
        bytes += param_set_bytes(generator);
    } else {
        bytes += backbone_head_bytes(generator);
    }
    bytes
}

/// Download cost for one protocol-arm client this round.
pub fn protocol_download_bytes(
    flags: AblationFlags,
    ctx: Option<&ClusterContext>,
    disc: &DiscriminatorParams,
    generator: &GeneratorParams,
    num_classes: usize,
) -> u64 {
    let mut bytes = 0;
    if flags.gan {
        bytes += param_set_bytes(disc);
        bytes += message_bytes(num_classes); // mean member distribution
        if let Some(ctx) = ctx {
            if let Some(cp) = &ctx.cp {
                bytes += message_bytes(cp.rows.element_count());
            }
        }
    }
    if flags.gan || flags.mi_loss {
        if let Some(ctx) = ctx {
            bytes += message_bytes(ctx.cz.rows.element_count());
        }
    }
    if flags.migma {
        bytes += message_bytes(1); // correction weight
    } else {
        bytes += backbone_head_bytes(generator);
    }
    bytes
}

/// Per-round cost for one FedAvg-style client: backbone + head up, the
/// average back down.
pub fn fedavg_round_bytes(generator: &GeneratorParams) -> (u64, u64) {
    let b = backbone_head_bytes(generator);
    (b, b)
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::models::{DiscriminatorParams, GeneratorParams, ModelDims, ParamSet};
    use crate::tensor::Tensor;

    use super::*;

    #[test]
    fn prototype_block_costs_match_the_formula() {
        // One 64x4 block: 64*4 elements at 4 bytes plus one header.
        assert_eq!(message_bytes(64 * 4), 64 * 4 * 4 + 64);
        assert_eq!(message_bytes(0), 64);
    }

    #[test]
    fn param_set_cost_is_one_header_per_tensor() {
        let dims = ModelDims::new(6, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let disc = DiscriminatorParams::init(&dims, &mut rng);
        let elements: usize = disc
            .named_tensors()
            .iter()
            .map(|(_, t)| t.element_count())
            .sum();
        let tensors = disc.named_tensors().len() as u64;
        assert_eq!(
            param_set_bytes(&disc),
            elements as u64 * BYTES_PER_ELEMENT + tensors * MESSAGE_HEADER_BYTES
        );
    }

    #[test]
    fn backbone_head_excludes_the_adaptation_layer() {
        let dims = ModelDims::new(6, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = GeneratorParams::init(&dims, &mut rng);
        let full = param_set_bytes(&gen);
        let bh = backbone_head_bytes(&gen);
        let adapt_elems =
            gen.adapt.weight.element_count() + gen.adapt.bias.element_count();
        assert_eq!(
            full - bh,
            adapt_elems as u64 * BYTES_PER_ELEMENT + 2 * MESSAGE_HEADER_BYTES
        );
    }

    #[test]
    fn full_protocol_exceeds_fedavg_by_less_than_four_to_one() {
        let dims = ModelDims::new(16, 64, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = GeneratorParams::init(&dims, &mut rng);
        let disc = DiscriminatorParams::init(&dims, &mut rng);
        let flags = AblationFlags::default();
        let block = |classes: usize| crate::federation::ClassBlock {
            classes: (0..classes).collect(),
            counts: vec![1; classes],
            rows: Tensor::zeros(&[classes, dims.embed]),
        };
        let upload = ClientUpload {
            prototypes: block(4),
            generated: block(4),
        };
        let ctx = ClusterContext {
            cp: Some(block(4)),
            cz: block(4),
            qbar: Some(vec![0.25; 4]),
        };
        let up = protocol_upload_bytes(flags, Some(&upload), &gen, 4);
        let down = protocol_download_bytes(flags, Some(&ctx), &disc, &gen, 4);
        let (fa_up, fa_down) = fedavg_round_bytes(&gen);
        let protocol = up + down;
        let fedavg = fa_up + fa_down;
        assert!(protocol > fedavg, "{protocol} vs {fedavg}");
        assert!((protocol as f64) < 4.0 * fedavg as f64);
    }
}
