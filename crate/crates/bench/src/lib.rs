//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use reed::data::{partition, synth_dataset, SynthKind};
use reed::fedlearn::{build_objective, Objective, ObjectiveKind};
use reed::{LabeledDataset, PartitionKind, PartitionSpec, StreamKey};

/// `clients` increments of dimension `dim` with mixed signs.
pub fn increments(clients: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = StreamKey::new(seed).rng();
    (0..clients)
        .map(|_| (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect())
        .collect()
}

pub struct LogisticFixture {
    pub data: Arc<LabeledDataset>,
    pub objective: Arc<dyn Objective>,
    pub partitions: Vec<Vec<usize>>,
}

/// Ten-class blobs split over `clients` clients with Dirichlet(0.3).
pub fn logistic_fixture(n: usize, features: usize, clients: usize) -> LogisticFixture {
    let data = Arc::new(
        synth_dataset(&SynthKind::GaussianBlobs { classes: 10, features, separation: 2.0 }, n, 1)
            .expect("valid blobs"),
    );
    let objective = build_objective(&ObjectiveKind::Logistic, data.clone()).expect("valid objective");
    let partitions = partition(&data, &PartitionSpec { kind: PartitionKind::Dirichlet { alpha: 0.3 }, clients, seed: 1 })
        .expect("valid partition");
    LogisticFixture { data, objective, partitions }
}
