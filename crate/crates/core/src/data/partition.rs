//! Splitting a dataset across simulated clients.

use serde::{Deserialize, Serialize};

use super::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Partitioner {
    Iid,
    LabelSkew,
    QuantitySkew { ratio: f64 },
}

impl Partitioner {
    pub fn apply(
        &self,
        dataset: &Dataset,
        k: usize,
        stream: &RngStream,
    ) -> Result<ClientPartition> {
        match *self {
            Partitioner::Iid => partition_iid(dataset, k, stream),
            Partitioner::LabelSkew => partition_label_skew(dataset, k, stream),
            Partitioner::QuantitySkew { ratio } => {
                partition_quantity_skew(dataset, k, ratio, stream)
            }
        }
    }
}

fn check_counts(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::TooManyClients {
            clients: k,
            examples: n,
        });
    }
    Ok(())
}

/// Cuts `order` into consecutive chunks of the given sizes.
fn split_by_sizes(order: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let chunk = order[start..start + s].to_vec();
            start += s;
            chunk
        })
        .collect()
}

/// `n` split into `k` sizes differing by at most one, larger ones first.
fn even_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Shuffle, then contiguous split into near-equal shards.
pub fn partition_iid(dataset: &Dataset, k: usize, stream: &RngStream) -> Result<ClientPartition> {
    let n = dataset.len();
    check_counts(k, n)?;
    let mut order: Vec<usize> = (0..n).collect();
    stream.rng().shuffle(&mut order);
    ClientPartition::new(split_by_sizes(&order, &even_sizes(n, k)), n)
}

/// Every client holds exactly one class: client `i` gets class
/// `i mod num_classes`, and each class's examples are spread evenly over the
/// clients that share it.
pub fn partition_label_skew(
    dataset: &Dataset,
    k: usize,
    stream: &RngStream,
) -> Result<ClientPartition> {
    let classes = dataset.num_classes();
    check_counts(k, dataset.len())?;
    if k < classes {
        return Err(Error::TooFewClientsForLabelSkew {
            clients: k,
            classes,
        });
    }
    let mut clients = vec![Vec::new(); k];
    for class in 0..classes {
        let owners: Vec<usize> = (class..k).step_by(classes).collect();
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels()[i] == class)
            .collect();
        if members.len() < owners.len() {
            return Err(Error::ClassTooSmall {
                class,
                examples: members.len(),
                clients: owners.len(),
            });
        }
        stream.child(class as u64).rng().shuffle(&mut members);
        let shards = split_by_sizes(&members, &even_sizes(members.len(), owners.len()));
        for (owner, shard) in owners.into_iter().zip(shards) {
            clients[owner] = shard;
        }
    }
    ClientPartition::new(clients, dataset.len())
}

/// Client sizes for a geometric progression from smallest to largest with
/// `max/min ≈ ratio`, summing exactly to `n` (largest-remainder rounding,
/// ties to the lower client index).
pub fn quantity_skew_sizes(n: usize, k: usize, ratio: f64) -> Result<Vec<usize>> {
    check_counts(k, n)?;
    if !(ratio.is_finite() && ratio >= 1.0) {
        return Err(Error::InvalidPartition(format!(
            "quantity skew ratio must be finite and at least 1, got {ratio}"
        )));
    }
    let weights: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                1.0
            } else {
                ratio.powf(i as f64 / (k - 1) as f64)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    // Stable sort keeps lower indices first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite remainders")
    });
    let short = n - sizes.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        sizes[i] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::ZeroSizedClient { ratio, clients: k });
    }
    Ok(sizes)
}

/// Geometric client sizes with IID label assignment.
pub fn partition_quantity_skew(
    dataset: &Dataset,
    k: usize,
    ratio: f64,
    stream: &RngStream,
) -> Result<ClientPartition> {
    let n = dataset.len();
    let sizes = quantity_skew_sizes(n, k, ratio)?;
    let mut order: Vec<usize> = (0..n).collect();
    stream.rng().shuffle(&mut order);
    ClientPartition::new(split_by_sizes(&order, &sizes), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{label_histogram, synth_dataset};
    use proptest::prelude::*;

    fn data(n_per_class: usize, classes: usize) -> Dataset {
        synth_dataset(&RngStream::new(0), n_per_class, classes, 3).unwrap()
    }

    #[test]
    fn iid_single_client() {
        let d = data(5, 4);
        let p = partition_iid(&d, 1, &RngStream::new(1)).unwrap();
        assert_eq!(p.sizes(), vec![20]);
    }

    #[test]
    fn iid_equal_sizes() {
        let d = data(10, 10);
        let p = partition_iid(&d, 10, &RngStream::new(1)).unwrap();
        assert_eq!(p.sizes(), vec![10; 10]);
        assert!(partition_iid(&d, 101, &RngStream::new(1)).is_err());
    }

    #[test]
    fn iid_histograms_track_global_proportions() {
        // Chi-squared statistic per client against uniform class proportions;
        // 9 degrees of freedom, 0.999 quantile is 27.88.
        let d = data(1000, 10);
        let p = partition_iid(&d, 5, &RngStream::new(3)).unwrap();
        for row in label_histogram(&d, &p).rows() {
            let n: usize = row.iter().sum();
            let e = n as f64 / 10.0;
            let chi2: f64 = row.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
            assert!(chi2 < 27.88, "chi2 {chi2}");
        }
    }

    #[test]
    fn label_skew_one_class_per_client() {
        let d = data(30, 10);
        let p = partition_label_skew(&d, 10, &RngStream::new(1)).unwrap();
        let h = label_histogram(&d, &p);
        for (i, row) in h.rows().iter().enumerate() {
            assert_eq!(row[i], 30);
            assert_eq!(row.iter().sum::<usize>(), 30);
        }
    }

    #[test]
    fn label_skew_shared_classes_split_evenly() {
        let d = synth_dataset(&RngStream::new(0), 21, 10, 3).unwrap();
        let p = partition_label_skew(&d, 20, &RngStream::new(1)).unwrap();
        let h = label_histogram(&d, &p);
        assert_eq!(h.classes_per_client(), vec![1; 20]);
        assert_eq!(h.rows()[3][3], 11);
        assert_eq!(h.rows()[13][3], 10);
    }

    #[test]
    fn label_skew_rejects_degenerate_cases() {
        let d = data(5, 10);
        assert!(matches!(
            partition_label_skew(&d, 1, &RngStream::new(1)),
            Err(Error::TooFewClientsForLabelSkew {
                clients: 1,
                classes: 10
            })
        ));
        // Class 0 keeps one example but has two owners (clients 0 and 3).
        let d = data(5, 3);
        let keep: Vec<usize> = (0..d.len())
            .filter(|&i| d.labels()[i] != 0 || i == 0)
            .collect();
        let d = d.subset(&keep).unwrap();
        assert!(matches!(
            partition_label_skew(&d, 6, &RngStream::new(1)),
            Err(Error::ClassTooSmall {
                class: 0,
                examples: 1,
                clients: 2
            })
        ));
    }

    #[test]
    fn label_skew_empty_class_with_owner() {
        // Class 1 has no examples while client 1 is assigned to it.
        let d = data(4, 3);
        let no_class_one: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] != 1).collect();
        let d = d.subset(&no_class_one).unwrap();
        assert!(matches!(
            partition_label_skew(&d, 3, &RngStream::new(1)),
            Err(Error::ClassTooSmall {
                class: 1,
                examples: 0,
                clients: 1
            })
        ));
    }

    #[test]
    fn quantity_skew_worked_example() {
        assert_eq!(quantity_skew_sizes(150, 3, 4.0).unwrap(), vec![21, 43, 86]);
    }

    #[test]
    fn quantity_skew_ratio_one_matches_iid() {
        assert_eq!(
            quantity_skew_sizes(103, 10, 1.0).unwrap(),
            even_sizes(103, 10)
        );
        let d = data(10, 10);
        let q = partition_quantity_skew(&d, 10, 1.0, &RngStream::new(2)).unwrap();
        assert_eq!(
            q.sizes(),
            partition_iid(&d, 10, &RngStream::new(2)).unwrap().sizes()
        );
    }

    #[test]
    fn quantity_skew_errors() {
        assert!(matches!(
            quantity_skew_sizes(5, 3, 1000.0),
            Err(Error::ZeroSizedClient { .. })
        ));
        assert!(quantity_skew_sizes(10, 3, 0.5).is_err());
        assert!(quantity_skew_sizes(10, 11, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn quantity_skew_ratio_property(k in 2usize..8, ratio in 1.0f64..8.0, extra in 0usize..500) {
            let n = (100.0 * k as f64 / ratio).ceil() as usize + extra;
            let sizes = quantity_skew_sizes(n, k, ratio).unwrap();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
            let measured = *sizes.last().unwrap() as f64 / sizes[0] as f64;
            prop_assert!((measured - ratio).abs() <= 0.2 * ratio, "{:?} ratio {}", sizes, ratio);
        }
    }
}
