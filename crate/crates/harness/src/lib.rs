//! Experiment harness: configuration, pretraining, pruning sweeps,
//! checkpoints, CSV records and the two-arm comparison.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod records;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use records::ExperimentRecord;

const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);

/// CRC-64/XZ, used for checkpoint integrity and configuration hashes.
pub fn checksum(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}
