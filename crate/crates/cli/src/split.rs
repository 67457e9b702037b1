//! Class-stratified train/validation/test split.

use capsim_core::sampler::group_keys;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn parts(&self) -> [&Vec<usize>; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Splits positions `0..keys.len()` by class (equal key). Every class gives
/// each part `floor(n·f)` or `floor(n·f) + 1` members; leftover members go
/// to the parts that are furthest below their global target, so small
/// classes still populate validation and test overall. Output lists are
/// ascending.
pub fn stratified(keys: &[u64], fractions: [f64; 3], seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut assigned = [0usize; 3];
    let mut seen = 0usize;
    for class in group_keys(keys) {
        let mut members = class.members.clone();
        members.shuffle(&mut rng);
        let n = members.len();
        let mut counts = fractions.map(|f| (n as f64 * f).floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        seen += n;
        let mut given = [false; 3];
        while left > 0 {
            // largest deficit against the running global target
            let pick = (0..3)
                .filter(|&p| !given[p] && fractions[p] > 0.0)
                .max_by(|&a, &b| {
                    let da = seen as f64 * fractions[a] - (assigned[a] + counts[a]) as f64;
                    let db = seen as f64 * fractions[b] - (assigned[b] + counts[b]) as f64;
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap_or(0);
            counts[pick] += 1;
            given[pick] = true;
            left -= 1;
        }
        let mut it = members.into_iter();
        for p in 0..3 {
            parts[p].extend(it.by_ref().take(counts[p]));
            assigned[p] += counts[p];
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Split { train, val, test }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions_per_class_within_one() {
        let mut keys = Vec::new();
        for (k, n) in [(1u64, 57usize), (2, 10), (3, 1), (4, 2), (5, 33), (6, 1), (7, 1)] {
            keys.extend(std::iter::repeat(k).take(n));
        }
        let s = stratified(&keys, [0.8, 0.1, 0.1], 3);
        for k in 1..=7u64 {
            let n = keys.iter().filter(|&&x| x == k).count() as f64;
            for (part, f) in s.parts().iter().zip([0.8, 0.1, 0.1]) {
                let c = part.iter().filter(|&&i| keys[i] == k).count() as f64;
                assert!((c - n * f).abs() <= 1.0, "class {k}: {c} vs {}", n * f);
            }
        }
        let mut all: Vec<usize> = s.parts().iter().flat_map(|p| p.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
    }

    #[test]
    fn singletons_reach_every_part() {
        let keys: Vec<u64> = (0..40).collect();
        let s = stratified(&keys, [0.8, 0.1, 0.1], 0);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (32, 4, 4));
    }

    #[test]
    fn deterministic() {
        let keys: Vec<u64> = (0..200).map(|i| i % 7).collect();
        assert_eq!(stratified(&keys, [0.8, 0.1, 0.1], 5), stratified(&keys, [0.8, 0.1, 0.1], 5));
    }
}
