use proptest::prelude::*;

use reed::analytics::{energy_audit, eta_schedule};
use reed::data::{partition, synth_dataset, SynthKind};
use reed::phy::{aggregate_ideal, aggregate_reed};
use reed::{PartitionKind, PartitionSpec, ReedPhyConfig, StreamKey};

fn increments(k: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Exact coordinate-wise when every client agrees on the sign.
    #[test]
    fn ideal_channel_reed_is_exact_for_power_of_two_clients(
        (k, mags) in (0u32..4).prop_flat_map(|e| {
            let k = 1usize << e;
            (Just(k), increments(k, 5))
        }),
        signs in prop::collection::vec(prop::bool::ANY, 5),
        seed in any::<u64>(),
    ) {
        let incs: Vec<Vec<f64>> = mags
            .iter()
            .map(|v| v.iter().zip(&signs).map(|(x, &neg)| if neg { -x.abs() } else { x.abs() }).collect())
            .collect();
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, k).with_ideal_channel(true);
        let reed = aggregate_reed(&incs, &cfg, &StreamKey::new(seed)).unwrap();
        let ideal = aggregate_ideal(&incs, 5).unwrap();
        prop_assert_eq!(reed, ideal);
    }

    #[test]
    fn aggregation_is_thread_count_independent(incs in increments(3, 17), seed in any::<u64>()) {
        let cfg = ReedPhyConfig::rayleigh(2.0, 0.5, 3).with_chips(2);
        let key = StreamKey::new(seed);
        let a = aggregate_reed(&incs, &cfg, &key).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| aggregate_reed(&incs, &cfg, &key).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scheduled_gain_respects_every_budget(
        budgets in prop::collection::vec(0.01f64..10.0, 4),
        powers in prop::collection::vec(0.1f64..4.0, 4),
        dirs in increments(4, 9),
        beta in 1e-3f64..1.0,
        q in 1usize..12,
        g in 0.1f64..10.0,
        chips in 1usize..5,
    ) {
        let mut cfg = ReedPhyConfig::rayleigh(1.0, 1.0, 4).with_chips(chips);
        cfg.mean_powers = powers;
        cfg.eta = eta_schedule(&budgets, 4, 9, &cfg.mean_powers, cfg.total_chip_weight(), beta, q, g).unwrap();
        let radius = beta * q as f64 * g;
        let incs: Vec<Vec<f64>> = dirs
            .iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x / n * radius).collect()
            })
            .collect();
        for (e, b) in energy_audit(&incs, &cfg, 4).unwrap().iter().zip(&budgets) {
            prop_assert!(*e <= b * (1.0 + 1e-12), "{} > {}", e, b);
        }
    }

    #[test]
    fn partitions_are_deterministic_disjoint_covers(
        n in 1usize..300,
        classes in 1usize..8,
        k_frac in 0.0f64..1.0,
        alpha in prop::option::of(0.05f64..3.0),
        seed in any::<u64>(),
    ) {
        let data = synth_dataset(&SynthKind::GaussianBlobs { classes, features: 1, separation: 1.0 }, n, seed).unwrap();
        let clients = 1 + ((n - 1) as f64 * k_frac) as usize;
        let kind = alpha.map_or(PartitionKind::Iid, |alpha| PartitionKind::Dirichlet { alpha });
        let spec = PartitionSpec { kind, clients, seed };
        let a = partition(&data, &spec).unwrap();
        prop_assert_eq!(&a, &partition(&data, &spec).unwrap());
        let mut all: Vec<usize> = a.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
