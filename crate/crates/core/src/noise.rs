//! Counter-based noise keyed by `(seed, site)`.
//!
//! Each site owns a fixed window of a ChaCha8 keystream: the stream id packs
//! every coordinate but the last, the word position encodes the last one.
//! A site therefore yields the same values whether it is generated inside a
//! dense row or looked up on its own, and no state is shared between sites.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::{open_unit, Marginal};
use crate::error::{Error, Result};

/// 32-bit words consumed per scalar draw (two `u64`).
const WORDS_PER_DRAW: u128 = 4;
const LAST_OFFSET: i128 = 1 << 31;

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

#[derive(Clone, Debug)]
pub struct NoiseSource {
    key: [u8; 32],
    law: Marginal,
    width: usize,
}

impl NoiseSource {
    /// `width` independent draws of `law` per site.
    pub fn new(seed: u64, law: Marginal, width: usize) -> Self {
        assert!(width >= 1);
        debug_assert!(
            law.from_uniforms(0.5, 0.5).is_some(),
            "noise must be a base law"
        );
        let key = ChaCha8Rng::seed_from_u64(seed).get_seed();
        NoiseSource { key, law, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Bits available to each leading coordinate in the stream id.
    fn lead_bits(nu: usize) -> u32 {
        if nu <= 1 {
            0
        } else {
            (64 / (nu - 1)).min(32) as u32
        }
    }

    /// Whether `site` has its own keystream window.
    pub fn addressable(site: &[i64]) -> bool {
        let nu = site.len();
        let last_ok = (site[nu - 1] as i128).abs() < LAST_OFFSET;
        let bits = Self::lead_bits(nu);
        let lead_ok = site[..nu - 1]
            .iter()
            .all(|&c| (c as i128).abs() < (1i128 << (bits - 1)));
        last_ok && lead_ok
    }

    pub fn check_addressable(site: &[i64]) -> Result<()> {
        if Self::addressable(site) {
            Ok(())
        } else {
            Err(Error::Planning(format!(
                "site {site:?} is outside the addressable noise range"
            )))
        }
    }

    fn stream_id(site: &[i64]) -> u64 {
        let nu = site.len();
        let bits = Self::lead_bits(nu);
        let mut id = 0u64;
        for &c in &site[..nu - 1] {
            let shifted = (c as i128 + (1i128 << (bits - 1))) as u64;
            id = (id << bits) | shifted;
        }
        id
    }

    fn word_pos(&self, last: i64) -> u128 {
        (last as i128 + LAST_OFFSET) as u128 * WORDS_PER_DRAW * self.width as u128
    }

    fn rng_at(&self, site: &[i64]) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(Self::stream_id(site));
        rng.set_word_pos(self.word_pos(site[site.len() - 1]));
        rng
    }

    #[inline]
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u1 = open_unit(rng.next_u64());
        let u2 = open_unit(rng.next_u64());
        self.law.from_uniforms(u1, u2).expect("base law")
    }

    /// Noise vector `ε(site) ∈ ℝ^width`.
    pub fn fill(&self, site: &[i64], out: &mut [f64]) {
        debug_assert!(Self::addressable(site));
        let mut rng = self.rng_at(site);
        for x in out.iter_mut().take(self.width) {
            *x = self.draw(&mut rng);
        }
    }

    /// Noise for the row `prefix × [lo, hi]` (last coordinate varying),
    /// written consecutively into `out`.
    pub fn fill_row(&self, site_lo: &[i64], hi: i64, out: &mut [f64]) {
        let lo = site_lo[site_lo.len() - 1];
        let count = (hi - lo + 1) as usize * self.width;
        let mut rng = self.rng_at(site_lo);
        for x in out.iter_mut().take(count) {
            *x = self.draw(&mut rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_and_site_agree() {
        let src = NoiseSource::new(7, Marginal::standard_normal(), 2);
        let mut row = vec![0.0; 2 * 11];
        src.fill_row(&[3, -5], 5, &mut row);
        for (k, c) in (-5..=5).enumerate() {
            let mut one = [0.0; 2];
            src.fill(&[3, c], &mut one);
            assert_eq!(&row[2 * k..2 * k + 2], &one);
        }
    }

    #[test]
    fn different_sites_and_seeds_differ() {
        let a = NoiseSource::new(1, Marginal::standard_normal(), 1);
        let b = NoiseSource::new(2, Marginal::standard_normal(), 1);
        let v = |s: &NoiseSource, p: &[i64]| {
            let mut o = [0.0];
            s.fill(p, &mut o);
            o[0]
        };
        assert_ne!(v(&a, &[0, 1]), v(&a, &[1, 0]));
        assert_ne!(v(&a, &[0, 1]), v(&b, &[0, 1]));
        assert_eq!(v(&a, &[4, 4]), v(&a, &[4, 4]));
    }

    #[test]
    fn addressable_ranges() {
        assert!(NoiseSource::addressable(&[1 << 30]));
        assert!(!NoiseSource::addressable(&[1 << 31]));
        assert!(NoiseSource::addressable(&[-(1 << 30), 1 << 30]));
        assert!(NoiseSource::addressable(&[-(1 << 30), 0, 5]));
        assert!(!NoiseSource::addressable(&[1 << 20, 0, 0, 0]));
    }

    #[test]
    fn standard_normal_moments() {
        let src = NoiseSource::new(11, Marginal::standard_normal(), 1);
        let n = 100_000;
        let mut v = vec![0.0; n];
        src.fill_row(&[0], n as i64 - 1, &mut v);
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
