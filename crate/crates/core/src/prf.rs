//! Keyed pseudorandomness seeded by the preceding `h` tokens.
//!
//! Everything here is a pure function of its integer inputs built from the
//! splitmix64 finalizer, so generation and detection agree bit-for-bit on any
//! platform.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textmodel::TokenId;

/// Domain tag for green-list membership draws.
pub const DS_GREEN: u64 = 0x6772_6565;
/// Domain tag for exponential-minimum race draws.
pub const DS_GUMBEL: u64 = 0x6775_6d62;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const ITEM_OFFSET: u64 = 0x9E37;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Error, PartialEq)]
pub enum PrfError {
    #[error("context width mismatch: expected {expected}, got {got}")]
    ContextWidth { expected: usize, got: usize },
    #[error("gamma must lie in (0, 1), got {0}")]
    Gamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SecretKey(pub u64);

/// splitmix64 output finalizer.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `h` most recent token ids preceding a position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedContext<'a> {
    window: &'a [TokenId],
}

impl<'a> SeedContext<'a> {
    pub fn new(window: &'a [TokenId], h: usize) -> Result<Self, PrfError> {
        if window.len() != h {
            return Err(PrfError::ContextWidth {
                expected: h,
                got: window.len(),
            });
        }
        Ok(Self { window })
    }

    pub fn window(&self) -> &'a [TokenId] {
        self.window
    }

    pub fn width(&self) -> usize {
        self.window.len()
    }

    pub fn seed(&self, key: SecretKey) -> u64 {
        fold_seed(key, self.window)
    }
}

#[inline]
pub(crate) fn fold_seed(key: SecretKey, window: &[TokenId]) -> u64 {
    window
        .iter()
        .fold(key.0, |s, &t| mix64(s ^ mix64(u64::from(t) + 1)))
}

/// Order-sensitive fold of the key with the context window.
pub fn context_seed(key: SecretKey, window: &[TokenId], h: usize) -> Result<u64, PrfError> {
    Ok(SeedContext::new(window, h)?.seed(key))
}

#[inline]
fn to_unit(u: u64) -> f64 {
    (u >> 11) as f64 * INV_2_53
}

/// Counter-based uniform on `[0, 1)` with 53 bits of resolution.
pub fn unit_uniform(seed: u64, domain_tag: u64, item: u64) -> f64 {
    to_unit(mix64(
        seed ^ mix64(domain_tag) ^ mix64(item.wrapping_add(ITEM_OFFSET)),
    ))
}

pub fn check_gamma(gamma: f64) -> Result<f64, PrfError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(gamma)
    } else {
        Err(PrfError::Gamma(gamma))
    }
}

pub fn is_green(seed: u64, token: TokenId, gamma: f64) -> Result<bool, PrfError> {
    check_gamma(gamma)?;
    Ok(unit_uniform(seed, DS_GREEN, u64::from(token)) < gamma)
}

/// Precomputed per-token halves of [`unit_uniform`] for one domain tag.
///
/// `table.uniform(seed, v)` is bit-identical to `unit_uniform(seed, tag, v)`;
/// the table just avoids re-hashing the tag and item on every position.
#[derive(Debug, Clone)]
pub struct UniformTable {
    salts: Vec<u64>,
}

impl UniformTable {
    pub fn new(domain_tag: u64, vocab_size: usize) -> Self {
        let tag = mix64(domain_tag);
        let salts = (0..vocab_size as u64)
            .map(|v| tag ^ mix64(v.wrapping_add(ITEM_OFFSET)))
            .collect();
        Self { salts }
    }

    pub fn len(&self) -> usize {
        self.salts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.salts.is_empty()
    }

    #[inline]
    pub fn uniform(&self, seed: u64, token: TokenId) -> f64 {
        to_unit(mix64(seed ^ self.salts[token as usize]))
    }

    /// Fills `out` with the uniforms for every token under `seed`.
    pub fn fill(&self, seed: u64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.salts.iter().map(|&s| to_unit(mix64(seed ^ s))));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// The three splitmix64 finalizer lines evaluated in u128 and reduced.
    fn mix64_wide(x: u128) -> u64 {
        let m = 1u128 << 64;
        let mut z = (x + 0x9E37_79B9_7F4A_7C15) % m;
        z = ((z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9) % m;
        z = ((z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB) % m;
        (z ^ (z >> 31)) as u64
    }

    #[test]
    fn mix64_reference_values() {
        assert_eq!(mix64(0), 0xE220_A839_7B1D_CDAF);
        for x in [1u64, 2, 0xDEAD_BEEF, u64::MAX, 1 << 63] {
            assert_eq!(mix64(x), mix64_wide(x as u128));
        }
        // x and x + 2^64 coincide.
        assert_eq!(mix64_wide(5 + (1u128 << 64)), mix64(5));
    }

    #[test]
    fn context_seed_examples() {
        assert_eq!(context_seed(SecretKey(0), &[], 0).unwrap(), 0);
        assert_eq!(
            context_seed(SecretKey(0), &[0], 1).unwrap(),
            mix64_wide(mix64_wide(1) as u128)
        );
        assert_eq!(
            context_seed(SecretKey(7), &[1, 2], 3),
            Err(PrfError::ContextWidth { expected: 3, got: 2 })
        );
        assert!(context_seed(SecretKey(7), &[1, 2], 3)
            .unwrap_err()
            .to_string()
            .starts_with("context width mismatch"));
    }

    #[test]
    fn context_seed_is_order_sensitive() {
        let key = SecretKey(0x1234);
        let mut collisions = 0;
        let mut x = 99u64;
        for _ in 0..10_000 {
            x = mix64(x);
            let a = (x % 50_000) as u32;
            let b = ((x >> 32) % 50_000) as u32;
            if a == b {
                continue;
            }
            if context_seed(key, &[a, b], 2).unwrap() == context_seed(key, &[b, a], 2).unwrap() {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn unit_uniform_range_and_determinism() {
        for i in 0..1000 {
            let u = unit_uniform(i * 31, DS_GUMBEL, i);
            assert!((0.0..1.0).contains(&u));
            assert!(u <= 1.0 - INV_2_53);
            assert_eq!(u, unit_uniform(i * 31, DS_GUMBEL, i));
        }
    }

    #[test]
    fn unit_uniform_passes_ks() {
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n as u64).map(|i| unit_uniform(42, DS_GREEN, i)).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((hi - x).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic 0.1% critical value: 1.949 / sqrt(n).
        assert!(d < 1.949 / (n as f64).sqrt(), "KS D = {d}");
    }

    #[test]
    fn table_matches_direct() {
        let t = UniformTable::new(DS_GUMBEL, 300);
        let mut buf = Vec::new();
        for seed in [0u64, 1, 0xABCDEF, u64::MAX] {
            t.fill(seed, &mut buf);
            for v in 0..300u32 {
                assert_eq!(buf[v as usize], unit_uniform(seed, DS_GUMBEL, v as u64));
                assert_eq!(t.uniform(seed, v), buf[v as usize]);
            }
        }
    }

    #[test]
    fn green_membership() {
        let g = 1.0 - INV_2_53;
        assert!((0..5000).all(|v| is_green(17, v, g).unwrap()));
        assert!(is_green(1, 1, 0.0).is_err());
        assert!(is_green(1, 1, 1.0).is_err());

        let count = (0..10_000).filter(|&v| is_green(0xFEED, v, 0.25).unwrap()).count();
        let sd = (10_000.0f64 * 0.25 * 0.75).sqrt();
        assert!((count as f64 - 2500.0).abs() < 3.0 * sd, "green count {count}");
    }

    #[test]
    fn domain_tags_are_independent() {
        // Membership under DS_GREEN vs the same rule under DS_GUMBEL: overlap ~ gamma^2.
        let gamma = 0.25;
        let n = 100_000u64;
        let mut both = 0;
        let mut cells = [[0u64; 4]; 4];
        for v in 0..n {
            let a = unit_uniform(5, DS_GREEN, v);
            let b = unit_uniform(5, DS_GUMBEL, v);
            if a < gamma && b < gamma {
                both += 1;
            }
            cells[(a * 4.0) as usize][(b * 4.0) as usize] += 1;
        }
        let expect = n as f64 * gamma * gamma;
        assert!((both as f64 - expect).abs() < 4.0 * (expect * (1.0 - gamma * gamma)).sqrt());

        // 4x4 chi-square independence, 9 dof; 0.1% critical value 27.877.
        let e = n as f64 / 16.0;
        let chi2: f64 = cells
            .iter()
            .flatten()
            .map(|&o| (o as f64 - e).powi(2) / e)
            .sum();
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn random_seed_green_fraction_matches_gamma() {
        let mut seeds = HashSet::new();
        let mut green = 0u64;
        let mut total = 0u64;
        for i in 0..200u64 {
            let seed = mix64(i ^ 0xA5A5);
            seeds.insert(seed);
            for v in 0..500u32 {
                total += 1;
                green += is_green(seed, v, 0.4).unwrap() as u64;
            }
        }
        let p = green as f64 / total as f64;
        let se = (0.4 * 0.6 / total as f64).sqrt();
        assert!((p - 0.4).abs() < 3.3 * se);
        assert_eq!(seeds.len(), 200);
    }
}
