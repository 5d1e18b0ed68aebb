//! Leave-one-group-out cross-validation folds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Trajectory;

/// Group id of every trajectory in a corpus, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoSpec {
    pub groups: Vec<String>,
}

impl LosoSpec {
    /// Reads the super-trial group recorded in each trajectory.
    pub fn from_corpus(corpus: &[Trajectory]) -> Result<Self> {
        let groups = corpus
            .iter()
            .map(|t| {
                t.meta
                    .group
                    .clone()
                    .ok_or_else(|| Error::Config(format!("trajectory '{}' has no group id", t.meta.name)))
            })
            .collect::<Result<_>>()?;
        Ok(LosoSpec { groups })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_group: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct group, in sorted group order.
pub fn make_loso_folds(spec: &LosoSpec) -> Result<Vec<Fold>> {
    let distinct: BTreeSet<&String> = spec.groups.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-group-out needs at least two groups, found {}",
            distinct.len()
        )));
    }
    Ok(distinct
        .into_iter()
        .map(|g| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..spec.groups.len()).partition(|&i| &spec.groups[i] == g);
            Fold {
                test_group: g.clone(),
                train,
                test,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn spec(groups: &[&str]) -> LosoSpec {
        LosoSpec {
            groups: groups.iter().map(|g| g.to_string()).collect(),
        }
    }

    #[test]
    fn thirty_nine_demos_in_five_super_trials() {
        let groups: Vec<String> = (0..39).map(|i| format!("S{}", i % 5 + 1)).collect();
        let folds = make_loso_folds(&LosoSpec { groups }).unwrap();
        assert_eq!(folds.len(), 5);
        assert_eq!(folds[0].test_group, "S1");
        assert_eq!(folds[0].test.len(), 8);
        assert_eq!(folds[4].test.len(), 7);
    }

    #[test]
    fn two_groups_and_one_group() {
        let folds = make_loso_folds(&spec(&["A", "B", "A", "B", "A", "B", "A", "B", "A", "B"])).unwrap();
        assert_eq!(folds.len(), 2);
        assert!(make_loso_folds(&spec(&["A", "A", "A"])).is_err());
        assert!(make_loso_folds(&spec(&[])).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_the_corpus(groups in prop::collection::vec(0u8..6, 2..60)) {
            let names: Vec<String> = groups.iter().map(|g| format!("G{g}")).collect();
            let spec = LosoSpec { groups: names };
            let Ok(folds) = make_loso_folds(&spec) else {
                prop_assert!(groups.iter().all(|&g| g == groups[0]));
                return Ok(());
            };
            let mut seen = vec![0usize; groups.len()];
            for f in &folds {
                for &i in &f.test {
                    seen[i] += 1;
                    prop_assert_eq!(&spec.groups[i], &f.test_group);
                }
                prop_assert_eq!(f.train.len() + f.test.len(), groups.len());
                prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
