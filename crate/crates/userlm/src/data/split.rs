//! Deterministic train/dev/test partition by hashing user ids.

use super::{DataError, UserHistory};
use crate::rng::hash_bytes;

/// Default fractions mirroring the reference split's 117k/5k/5k proportions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.957, 0.0215, 0.0215];

/// Assign each user to train/dev/test by hashing (salt, user_id) to a point
/// in [0, 1) and comparing against cumulative fractions. Deterministic,
/// disjoint, exhaustive; membership depends only on the user's own id, so
/// adding or removing other users never reassigns anyone.
pub fn split_users(
    users: Vec<UserHistory>,
    fractions: [f64; 3],
    salt: &str,
) -> Result<(Vec<UserHistory>, Vec<UserHistory>, Vec<UserHistory>), DataError> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(DataError::BadFractions { sum });
    }
    let salt_seed = hash_bytes(0x73_70_6c_69_74, salt.as_bytes());
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for user in users {
        let point =
            hash_bytes(salt_seed, user.user_id.as_bytes()) as f64 / (u64::MAX as f64 + 1.0);
        if point < fractions[0] {
            train.push(user);
        } else if point < fractions[0] + fractions[1] {
            dev.push(user);
        } else {
            test.push(user);
        }
    }
    Ok((train, dev, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn users(n: usize) -> Vec<UserHistory> {
        (0..n)
            .map(|i| UserHistory { user_id: format!("user-{i:06}"), items: vec![] })
            .collect()
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let (a1, b1, c1) = split_users(users(500), [0.8, 0.1, 0.1], "salt").unwrap();
        let (a2, b2, c2) = split_users(users(500), [0.8, 0.1, 0.1], "salt").unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        assert_eq!(a1.len() + b1.len() + c1.len(), 500);
    }

    #[test]
    fn different_salt_changes_assignment() {
        let (a1, ..) = split_users(users(500), [0.5, 0.25, 0.25], "one").unwrap();
        let (a2, ..) = split_users(users(500), [0.5, 0.25, 0.25], "two").unwrap();
        let ids1: Vec<&String> = a1.iter().map(|u| &u.user_id).collect();
        let ids2: Vec<&String> = a2.iter().map(|u| &u.user_id).collect();
        assert_ne!(ids1, ids2);
    }

    #[test]
    fn proportions_approach_fractions() {
        let n = 20_000;
        let (train, dev, test) = split_users(users(n), DEFAULT_FRACTIONS, "x").unwrap();
        let frac = |len: usize| len as f64 / n as f64;
        assert!((frac(train.len()) - DEFAULT_FRACTIONS[0]).abs() < 0.02);
        assert!((frac(dev.len()) - DEFAULT_FRACTIONS[1]).abs() < 0.02);
        assert!((frac(test.len()) - DEFAULT_FRACTIONS[2]).abs() < 0.02);
    }

    #[test]
    fn membership_is_independent_of_other_users() {
        let all = users(100);
        let (train_all, dev_all, test_all) =
            split_users(all.clone(), [0.6, 0.2, 0.2], "s").unwrap();
        let subset: Vec<UserHistory> = all.into_iter().take(50).collect();
        let (train_sub, dev_sub, test_sub) = split_users(subset, [0.6, 0.2, 0.2], "s").unwrap();
        for u in &train_sub {
            assert!(train_all.iter().any(|v| v.user_id == u.user_id));
        }
        for u in &dev_sub {
            assert!(dev_all.iter().any(|v| v.user_id == u.user_id));
        }
        for u in &test_sub {
            assert!(test_all.iter().any(|v| v.user_id == u.user_id));
        }
    }

    #[test]
    fn bad_fractions_are_rejected() {
        assert!(split_users(users(1), [0.5, 0.5, 0.5], "s").is_err());
        assert!(split_users(users(1), [1.2, -0.1, -0.1], "s").is_err());
        assert!(split_users(users(1), [0.957, 0.0215, 0.0215], "s").is_ok());
    }
}
