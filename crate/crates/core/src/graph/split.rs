use rand::seq::SliceRandom;

use super::{DatasetBundle, Splits};
use crate::error::{Error, Result};
use crate::seed;

/// Few-shot protocols never label more than this many graphs per class.
pub const MAX_SHOTS_PER_CLASS: usize = 10;

/// Sample `shots_per_class` labeled graphs per class and split them
/// train:val at 1:1, with the extra sample of an odd count going to train.
/// Every graph not sampled becomes test.
pub fn few_shot_split(bundle: DatasetBundle, shots_per_class: usize, seed: u64) -> Result<DatasetBundle> {
    if shots_per_class == 0 || shots_per_class > MAX_SHOTS_PER_CLASS {
        return Err(Error::InvalidArgument(format!(
            "shots per class must be in 1..={MAX_SHOTS_PER_CLASS}, got {shots_per_class}"
        )));
    }
    let mut rng = seed::rng_for(seed, "few-shot-split");
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut chosen = vec![false; bundle.len()];
    for class in 0..bundle.num_classes() {
        let mut members: Vec<usize> = bundle
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < shots_per_class {
            return Err(Error::InsufficientSamples(format!(
                "class {class} ({}) has {} graphs, {shots_per_class} shots requested",
                bundle.label_texts()[class],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let picked = &members[..shots_per_class];
        let n_train = shots_per_class.div_ceil(2);
        train.extend_from_slice(&picked[..n_train]);
        val.extend_from_slice(&picked[n_train..]);
        for &i in picked {
            chosen[i] = true;
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    let test = (0..bundle.len()).filter(|&i| !chosen[i]).collect();
    bundle.with_splits(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, TaskLevel};
    use ndarray::Array2;

    fn bundle(per_class: &[usize]) -> DatasetBundle {
        let mut graphs = Vec::new();
        let mut labels = Vec::new();
        for (c, &count) in per_class.iter().enumerate() {
            for _ in 0..count {
                graphs.push(Graph::new(1, &[], Array2::ones((1, 1))).unwrap());
                labels.push(c);
            }
        }
        let texts = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        DatasetBundle::new(graphs, labels, texts, Splits::default(), TaskLevel::Graph).unwrap()
    }

    fn count(b: &DatasetBundle, idx: &[usize], class: usize) -> usize {
        idx.iter().filter(|&&i| b.labels()[i] == class).count()
    }

    #[test]
    fn ten_shots_split_five_five() {
        let b = few_shot_split(bundle(&[20, 15]), 10, 3).unwrap();
        for c in 0..2 {
            assert_eq!(count(&b, &b.splits().train, c), 5);
            assert_eq!(count(&b, &b.splits().val, c), 5);
        }
        assert_eq!(b.splits().test.len(), 35 - 20);
    }

    #[test]
    fn one_shot_goes_to_train() {
        let b = few_shot_split(bundle(&[4, 4]), 1, 3).unwrap();
        assert_eq!(b.splits().train.len(), 2);
        assert!(b.splits().val.is_empty());
    }

    #[test]
    fn too_few_samples() {
        let err = few_shot_split(bundle(&[3, 20]), 10, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples(_)));
    }

    #[test]
    fn shot_cap_enforced() {
        assert!(few_shot_split(bundle(&[30]), 11, 0).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = few_shot_split(bundle(&[12, 12]), 6, 9).unwrap();
        let b = few_shot_split(bundle(&[12, 12]), 6, 9).unwrap();
        assert_eq!(a.splits(), b.splits());
    }
}
