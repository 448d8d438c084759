use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};

/// Fraction of the CNN half held out as the fixed test set.
pub const TEST_FRACTION: f64 = 0.2;

/// Stratified CNN/LR halving, then a stratified 20% CNN test set with the
/// remainder dealt round-robin into `n_folds` validation folds.
pub fn split_dataset(ds: &Dataset, seed: u64, n_folds: usize) -> Result<Dataset> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument("n_folds must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = vec![SplitTag::LrHalf; ds.len()];
    let mut next_fold = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.instances[i].label == class)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class {} has {} instance(s), need at least 2",
                class as u8,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_cnn = idx.len().div_ceil(2);
        let n_test = (TEST_FRACTION * n_cnn as f64).round() as usize;
        for (pos, &i) in idx[..n_cnn].iter().enumerate() {
            tags[i] = if pos < n_test {
                SplitTag::CnnTest
            } else {
                let t = SplitTag::CnnVal(next_fold);
                next_fold = (next_fold + 1) % n_folds;
                t
            };
        }
    }

    let out = Dataset {
        instances: ds.instances.clone(),
        split_tags: tags,
    };
    let mut parts = vec![
        ("cnn_test".to_string(), out.indices_where(|t| t == SplitTag::CnnTest)),
        ("lr_half".to_string(), out.indices_where(|t| t == SplitTag::LrHalf)),
    ];
    for f in 0..n_folds {
        parts.push((format!("cnn_val:{f}"), out.indices_where(|t| t == SplitTag::CnnVal(f))));
    }
    for (name, idx) in parts {
        for class in [false, true] {
            if !idx.iter().any(|&i| out.instances[i].label == class) {
                return Err(Error::Split(format!(
                    "class {} absent from partition {name}",
                    class as u8
                )));
            }
        }
    }
    Ok(out)
}
