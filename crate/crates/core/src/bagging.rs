//! Bag generation: turning a labeled dataset into bags with proportion
//! labels, plus the train/validation bag split.

use crate::data::{standardize, LabeledDataset, PcaModel};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::rng::{self, rng_from, seeded_permutation};
use serde::{Deserialize, Serialize};

/// Default PCA dimensionality used ahead of k-means clustering.
pub const DEFAULT_PCA_DIM: usize = 10;
/// Default cap on bag size before subsampling.
pub const DEFAULT_SUBSAMPLE_THRESHOLD: usize = 256;

/// A set of instance indices with its class-proportion label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub indices: Vec<usize>,
    /// Point on the probability simplex. Equal to the empirical histogram of
    /// the hidden labels at construction; subsampled bags keep the original
    /// vector instead of recomputing it.
    pub proportion: Vec<f64>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// How a collection was generated; serialized flat into the bag file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BagMethod {
    Uniform { bag_size: usize },
    Kmeans { k: usize, pca_dim: usize, max_iter: usize },
}

/// Bags plus provenance. JSON layout:
/// `{"method":..., "seed":..., "source":..., "bags":[{"indices":[...], "proportion":[...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagCollection {
    #[serde(flatten)]
    pub method: BagMethod,
    pub seed: u64,
    /// Identifier of the dataset the indices refer to.
    pub source: String,
    pub bags: Vec<Bag>,
}

impl BagCollection {
    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Checks indices against the dataset size and proportions against the
    /// simplex.
    pub fn validate(&self, n_instances: usize) -> Result<()> {
        if self.bags.is_empty() {
            return Err(Error::InvalidArgument("empty bag collection".into()));
        }
        for (i, bag) in self.bags.iter().enumerate() {
            if bag.indices.is_empty() {
                return Err(Error::InvalidArgument(format!("bag {i} is empty")));
            }
            if let Some(&bad) = bag.indices.iter().find(|&&ix| ix >= n_instances) {
                return Err(Error::InvalidArgument(format!(
                    "bag {i} references instance {bad} beyond dataset size {n_instances}"
                )));
            }
            check_simplex(&bag.proportion)
                .map_err(|e| Error::InvalidArgument(format!("bag {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub(crate) fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty proportion vector".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| v < -1e-6) {
        return Err(Error::InvalidArgument(format!(
            "vector off the simplex (sum {sum})"
        )));
    }
    Ok(())
}

/// Empirical class histogram of `labels` as a point on the simplex.
pub fn proportion_label(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "proportion of an empty bag is undefined".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    Ok(counts
        .iter()
        .map(|&c| c as f64 / labels.len() as f64)
        .collect())
}

fn bag_from_indices(ds: &LabeledDataset, indices: Vec<usize>) -> Result<Bag> {
    let labels: Vec<usize> = indices.iter().map(|&i| ds.labels[i]).collect();
    let proportion = proportion_label(&labels, ds.n_classes)?;
    Ok(Bag {
        indices,
        proportion,
    })
}

/// Random partition into `floor(N / bag_size)` disjoint bags of equal size;
/// leftover instances are dropped.
pub fn uniform_bags(ds: &LabeledDataset, bag_size: usize, seed: u64) -> Result<BagCollection> {
    let n = ds.len();
    if bag_size == 0 || bag_size > n {
        return Err(Error::InvalidArgument(format!(
            "bag size {bag_size} out of range 1..={n}"
        )));
    }
    let mut rng = rng_from(&[seed, rng::tag::BAGGING]);
    let perm = seeded_permutation(n, &mut rng);
    let m = n / bag_size;
    let mut bags = Vec::with_capacity(m);
    for b in 0..m {
        let indices = perm[b * bag_size..(b + 1) * bag_size].to_vec();
        bags.push(bag_from_indices(ds, indices)?);
    }
    Ok(BagCollection {
        method: BagMethod::Uniform { bag_size },
        seed,
        source: format!("dataset(n={n})"),
        bags,
    })
}

/// Bags from Lloyd's-algorithm clusters over `standardize -> PCA` features.
/// Empty clusters are dropped, so the collection may hold fewer than `k` bags.
pub fn kmeans_bags(
    ds: &LabeledDataset,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<BagCollection> {
    kmeans_bags_with_dim(ds, k, seed, max_iter, DEFAULT_PCA_DIM.min(ds.dim()))
}

pub fn kmeans_bags_with_dim(
    ds: &LabeledDataset,
    k: usize,
    seed: u64,
    max_iter: usize,
    pca_dim: usize,
) -> Result<BagCollection> {
    let n = ds.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range 1..={n}"
        )));
    }
    let standardized = standardize(&ds.features)?;
    let dim = pca_dim.min(ds.dim()).min(n).max(1);
    let projected = PcaModel::fit(&standardized, dim)?.project(&standardized)?;
    let fit = kmeans(&projected, k, seed, max_iter)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in fit.assignments.iter().enumerate() {
        members[c].push(i);
    }
    let mut bags = Vec::new();
    for indices in members.into_iter().filter(|m| !m.is_empty()) {
        bags.push(bag_from_indices(ds, indices)?);
    }
    Ok(BagCollection {
        method: BagMethod::Kmeans {
            k,
            pca_dim: dim,
            max_iter,
        },
        seed,
        source: format!("dataset(n={n})"),
        bags,
    })
}

/// Caps a bag at `threshold` instances by sampling without replacement while
/// keeping the original proportion vector verbatim.
pub fn subsample_bag(bag: &Bag, threshold: usize, seed: u64) -> Result<Bag> {
    if threshold == 0 {
        return Err(Error::InvalidArgument("threshold must be >= 1".into()));
    }
    if bag.len() <= threshold {
        return Ok(bag.clone());
    }
    let mut rng = rng_from(&[seed, rng::tag::SUBSAMPLE]);
    let perm = seeded_permutation(bag.len(), &mut rng);
    let indices: Vec<usize> = perm[..threshold].iter().map(|&i| bag.indices[i]).collect();
    Ok(Bag {
        indices,
        proportion: bag.proportion.clone(),
    })
}

/// Seeded shuffle, then the first `round(fraction * M)` bags train and the
/// rest validate.
pub fn split_bags(
    bags: &BagCollection,
    train_fraction: f64,
    seed: u64,
) -> Result<(BagCollection, BagCollection)> {
    let m = bags.len();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "need at least two bags to split".into(),
        ));
    }
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n_train = (train_fraction * m as f64).round() as usize;
    if n_train == 0 || n_train == m {
        return Err(Error::InvalidArgument(format!(
            "splitting {m} bags at {train_fraction} would leave one side empty"
        )));
    }
    let mut rng = rng_from(&[seed, rng::tag::SPLIT]);
    let perm = seeded_permutation(m, &mut rng);
    let pick = |range: &[usize]| BagCollection {
        method: bags.method.clone(),
        seed: bags.seed,
        source: bags.source.clone(),
        bags: range.iter().map(|&i| bags.bags[i].clone()).collect(),
    };
    Ok((pick(&perm[..n_train]), pick(&perm[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, two_moons};

    #[test]
    fn proportion_label_counts() {
        assert_eq!(
            proportion_label(&[0, 0, 1, 2], 3).unwrap(),
            vec![0.5, 0.25, 0.25]
        );
        assert_eq!(proportion_label(&[1], 2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(proportion_label(&[2, 2, 2], 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(proportion_label(&[], 2).is_err());
        assert!(proportion_label(&[3], 2).is_err());
    }

    #[test]
    fn uniform_bags_drop_remainder() {
        let ds = two_moons(50, 0.1, 1).unwrap();
        let coll = uniform_bags(&ds, 16, 2).unwrap();
        assert_eq!(coll.len(), 6);
        let mut seen: Vec<usize> = coll.bags.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(seen.len(), 96);
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 96, "bags must be disjoint");
    }

    #[test]
    fn singleton_bags_are_one_hot() {
        let ds = two_moons(10, 0.1, 3).unwrap();
        let coll = uniform_bags(&ds, 1, 4).unwrap();
        assert_eq!(coll.len(), 20);
        for bag in &coll.bags {
            assert_eq!(bag.len(), 1);
            let label = ds.labels[bag.indices[0]];
            let mut expect = vec![0.0, 0.0];
            expect[label] = 1.0;
            assert_eq!(bag.proportion, expect);
        }
    }

    #[test]
    fn one_bag_holds_global_distribution() {
        let ds = two_moons(25, 0.1, 5).unwrap();
        let coll = uniform_bags(&ds, ds.len(), 6).unwrap();
        assert_eq!(coll.len(), 1);
        assert_eq!(coll.bags[0].proportion, vec![0.5, 0.5]);
    }

    #[test]
    fn kmeans_k1_is_one_full_bag() {
        let ds = two_moons(20, 0.1, 7).unwrap();
        let coll = kmeans_bags(&ds, 1, 8, 50).unwrap();
        assert_eq!(coll.len(), 1);
        assert_eq!(coll.bags[0].len(), ds.len());
    }

    #[test]
    fn kmeans_separated_blobs_match_classes() {
        // Separation dominates the noise even after standardization.
        let ds = gaussian_blobs(&[vec![-100.0], vec![100.0]], 25, 1.0, 9).unwrap();
        let coll = kmeans_bags(&ds, 2, 10, 100).unwrap();
        assert_eq!(coll.len(), 2);
        for bag in &coll.bags {
            assert!(
                bag.proportion.contains(&1.0),
                "each bag should be pure, got {:?}",
                bag.proportion
            );
        }
    }

    #[test]
    fn subsample_is_identity_below_threshold() {
        let ds = two_moons(50, 0.1, 11).unwrap();
        let coll = uniform_bags(&ds, 100, 12).unwrap();
        let bag = &coll.bags[0];
        let same = subsample_bag(bag, 256, 13).unwrap();
        assert_eq!(&same, bag);
    }

    #[test]
    fn subsample_keeps_original_proportion() {
        let ds = two_moons(150, 0.1, 14).unwrap();
        let coll = uniform_bags(&ds, 300, 15).unwrap();
        let bag = &coll.bags[0];
        let small = subsample_bag(bag, 256, 16).unwrap();
        assert_eq!(small.len(), 256);
        // Proportion is kept bit-identical even though the histogram changed.
        assert_eq!(small.proportion, bag.proportion);
        let mut sorted = small.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 256, "no duplicate indices");
        assert!(small.indices.iter().all(|i| bag.indices.contains(i)));
    }

    #[test]
    fn split_respects_rounding_and_partitions() {
        let ds = two_moons(80, 0.1, 17).unwrap();
        let coll = uniform_bags(&ds, 16, 18).unwrap();
        assert_eq!(coll.len(), 10);
        let (train, val) = split_bags(&coll, 0.9, 19).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(val.len(), 1);

        let mut union: Vec<&Bag> = train.bags.iter().chain(&val.bags).collect();
        assert_eq!(union.len(), coll.len());
        union.sort_by_key(|b| b.indices.clone());
        let mut orig: Vec<&Bag> = coll.bags.iter().collect();
        orig.sort_by_key(|b| b.indices.clone());
        assert_eq!(union, orig);
    }

    #[test]
    fn split_two_bags_in_half() {
        let ds = two_moons(16, 0.1, 20).unwrap();
        let coll = uniform_bags(&ds, 16, 21).unwrap();
        assert_eq!(coll.len(), 2);
        let (train, val) = split_bags(&coll, 0.5, 22).unwrap();
        assert_eq!((train.len(), val.len()), (1, 1));
    }

    #[test]
    fn split_rejects_degenerate_requests() {
        let ds = two_moons(16, 0.1, 23).unwrap();
        let coll = uniform_bags(&ds, 16, 24).unwrap();
        assert!(split_bags(&coll, 0.0, 0).is_err());
        assert!(split_bags(&coll, 1.0, 0).is_err());
        let one = uniform_bags(&ds, 32, 25).unwrap();
        assert!(split_bags(&one, 0.5, 0).is_err());
    }

    #[test]
    fn json_round_trip_with_exact_field_names() {
        let ds = two_moons(20, 0.1, 26).unwrap();
        let coll = uniform_bags(&ds, 8, 27).unwrap();
        let json = coll.to_json().unwrap();
        assert!(json.contains("\"method\": \"uniform\""));
        assert!(json.contains("\"seed\": 27"));
        assert!(json.contains("\"bags\""));
        assert!(json.contains("\"indices\""));
        assert!(json.contains("\"proportion\""));
        let back = BagCollection::from_json(&json).unwrap();
        assert_eq!(back, coll);
    }
}
