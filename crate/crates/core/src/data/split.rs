use rand::seq::SliceRandom;

use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Disjoint train/validation/test user lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shuffles `users` under `seed` and cuts 80/10/10. Validation and test get
/// `⌊n/10⌋` users each; training absorbs the remainder.
pub fn split_dataset(users: &[String], seed: u64) -> Result<DatasetSplit> {
    let n = users.len();
    if n < 10 {
        return Err(Error::Sizing(format!("need at least 10 labeled users to split, got {n}")));
    }
    let mut order = users.to_vec();
    order.shuffle(&mut substream(seed, Stream::Split));
    let held_out = n / 10;
    let test = order.split_off(n - held_out);
    let validation = order.split_off(n - 2 * held_out);
    Ok(DatasetSplit {
        train: order,
        validation,
        test,
        seed,
    })
}
