#![allow(dead_code)]

use std::sync::OnceLock;

use fedsdg::data::{gen_madelon_like, partition_vertical, MadelonSpec, PartitionStrategy, VerticalPartition, VflDataset};
use fedsdg::phe::{keygen, PrivateKey, PublicKey};
use fedsdg::protocol::TrainConfig;
use fedsdg::rng::{stream, Stream};

pub fn keys() -> &'static (PublicKey, PrivateKey) {
    static K: OnceLock<(PublicKey, PrivateKey)> = OnceLock::new();
    K.get_or_init(|| keygen(512, &mut stream(77, Stream::Keys)).unwrap())
}

pub fn madelon(n_inf: usize, n_red: usize, n_noisy: usize, n: usize, seed: u64) -> VflDataset {
    let spec = MadelonSpec {
        n_informative: n_inf,
        n_redundant: n_red,
        n_noisy,
        n_samples: n,
        ..MadelonSpec::default()
    };
    gen_madelon_like(&spec, seed).unwrap()
}

pub fn split(ds: &VflDataset, m: usize, seed: u64) -> VerticalPartition {
    partition_vertical(ds.n_features(), m, PartitionStrategy::Random, seed).unwrap()
}

/// Small-key configuration for protocol tests.
pub fn test_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        key_bits: 512,
        insecure_test_mode: true,
        ..TrainConfig::default()
    }
}
