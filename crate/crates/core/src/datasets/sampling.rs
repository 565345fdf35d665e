use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::DatasetError;
use crate::domain::{validate_instance, BiasInstance, Dataset};

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Draws `per_category` instances from every (dataset, category) group
/// without replacement. Groups keep their order of first appearance and
/// each sample keeps source order, so a full-size sample is the identity.
/// Every group gets its own generator, which keeps a group's draw
/// independent of the other groups present.
pub fn sample_subset(
    instances: &[BiasInstance],
    per_category: usize,
    seed: u64,
) -> Result<Vec<BiasInstance>, DatasetError> {
    let mut groups: Vec<((Dataset, &str), Vec<usize>)> = Vec::new();
    for (i, instance) in instances.iter().enumerate() {
        let key = (instance.dataset(), instance.category());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let mut out = Vec::with_capacity(groups.len() * per_category);
    for ((dataset, category), members) in groups {
        if members.len() < per_category {
            return Err(DatasetError::InsufficientCategory {
                dataset,
                category: category.to_owned(),
                needed: per_category,
                available: members.len(),
            });
        }
        let mut rng = rng_for(seed, &format!("{dataset}/{category}"));
        let mut picked = index::sample(&mut rng, members.len(), per_category).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|p| instances[members[p]].clone()));
    }
    Ok(out)
}

/// Permutes each instance's options with a generator keyed by `seed` and the
/// instance id, remapping the gold index.
pub fn shuffle_options(instances: &[BiasInstance], seed: u64) -> Vec<BiasInstance> {
    instances
        .iter()
        .map(|instance| {
            let mut raw = instance.as_raw().clone();
            let mut order: Vec<usize> = (0..raw.options.len()).collect();
            order.shuffle(&mut rng_for(seed, &raw.id));
            let options = order.iter().map(|&i| raw.options[i].clone()).collect();
            raw.gold = order.iter().position(|&i| i == raw.gold).expect("gold is in range");
            raw.options = options;
            validate_instance(raw).expect("permuting options keeps every invariant")
        })
        .collect()
}
