use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::LabeledDataset;
use crate::channel::{Axis, Domain, StreamKey};
use crate::error::{ensure_positive, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartitionKind {
    /// Shuffle and split into near-equal shares.
    Iid,
    /// Per class, client shares drawn from a symmetric Dirichlet(alpha).
    Dirichlet { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub clients: usize,
    pub seed: u64,
}

/// Splits the rows of `dataset` into `spec.clients` disjoint index lists
/// covering every row. Each list is sorted ascending.
///
/// Dirichlet shares are rounded by largest remainder (ties go to the lower
/// client index). A client left without any sample receives the last sample
/// assigned to the currently largest client.
pub fn partition(dataset: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let n = dataset.len();
    let k = spec.clients;
    if k == 0 {
        return Err(Error::invalid("at least one client is required"));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} clients for only {n} samples")));
    }
    let key = StreamKey::new(spec.seed).domain(Domain::Partition);
    let mut parts = match spec.kind {
        PartitionKind::Iid => iid(n, k, &key),
        PartitionKind::Dirichlet { alpha } => {
            ensure_positive("alpha", alpha)?;
            dirichlet(dataset, k, alpha, &key)?
        }
    };
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

fn iid(n: usize, k: usize, key: &StreamKey) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut key.rng());
    let (base, extra) = (n / k, n % k);
    let mut rest = order.as_slice();
    (0..k)
        .map(|c| {
            let (head, tail) = rest.split_at(base + usize::from(c < extra));
            rest = tail;
            head.to_vec()
        })
        .collect()
}

/// Largest-remainder rounding of `shares * total`.
fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet(dataset: &LabeledDataset, k: usize, alpha: f64, key: &StreamKey) -> Result<Vec<Vec<usize>>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(format!("alpha: {e}")))?;
    let mut parts = vec![Vec::new(); k];
    for (class, mut members) in dataset.class_indices().into_iter().enumerate() {
        let mut rng = key.child(Axis::Client, class as u64).rng();
        members.shuffle(&mut rng);
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let shares: Vec<f64> = if total > 0.0 {
            draws.iter().map(|g| g / total).collect()
        } else {
            // All draws underflowed: give the class to one client.
            let mut s = vec![0.0; k];
            s[class % k] = 1.0;
            s
        };
        let mut rest = members.as_slice();
        for (part, count) in parts.iter_mut().zip(apportion(&shares, members.len())) {
            let (head, tail) = rest.split_at(count);
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    while let Some(empty) = parts.iter().position(Vec::is_empty) {
        let donor = (0..k)
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
            .expect("k >= 1");
        let moved = parts[donor].pop().expect("n >= k leaves a donor with two samples");
        parts[empty].push(moved);
    }
    Ok(parts)
}
