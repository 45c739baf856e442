//! Comparator, minimum and one-hot argmin circuits.
//!
//! Every circuit applies the same gates regardless of the encrypted values,
//! so gate counts depend only on the word width and the number of words.

use alloc::format;
use alloc::vec::Vec;

use super::{BitBackend, EncryptedWord, Evaluator};
use crate::{Error, Result};

fn same_width<C>(a: &EncryptedWord<C>, b: &EncryptedWord<C>) -> Result<()> {
    if a.n_b() != b.n_b() || a.n_b() == 0 {
        return Err(Error::input(format!("word widths differ or are empty: {} vs {}", a.n_b(), b.n_b())));
    }
    Ok(())
}

/// Encrypted `a < b`, scanning from the most significant bit down.
pub fn circuit_less_than<B: BitBackend>(
    ev: &Evaluator<'_, B>,
    a: &EncryptedWord<B::Cipher>,
    b: &EncryptedWord<B::Cipher>,
) -> Result<B::Cipher> {
    same_width(a, b)?;
    let mut lt = ev.constant(false);
    let mut eq = ev.constant(true);
    for i in (0..a.n_b()).rev() {
        let not_a = ev.not(&a.bits[i])?;
        let here = ev.and(&not_a, &b.bits[i])?;
        let here = ev.and(&eq, &here)?;
        lt = ev.or(&lt, &here)?;
        let same = ev.xnor(&a.bits[i], &b.bits[i])?;
        eq = ev.and(&eq, &same)?;
    }
    Ok(lt)
}

pub fn circuit_min<B: BitBackend>(
    ev: &Evaluator<'_, B>,
    a: &EncryptedWord<B::Cipher>,
    b: &EncryptedWord<B::Cipher>,
) -> Result<EncryptedWord<B::Cipher>> {
    let lt = circuit_less_than(ev, a, b)?;
    let bits = a.bits.iter().zip(&b.bits).map(|(x, y)| ev.mux(&lt, x, y)).collect::<Result<Vec<_>>>()?;
    Ok(EncryptedWord { bits })
}

fn circuit_equal<B: BitBackend>(
    ev: &Evaluator<'_, B>,
    a: &EncryptedWord<B::Cipher>,
    b: &EncryptedWord<B::Cipher>,
) -> Result<B::Cipher> {
    same_width(a, b)?;
    let mut eq = ev.xnor(&a.bits[0], &b.bits[0])?;
    for i in 1..a.n_b() {
        let same = ev.xnor(&a.bits[i], &b.bits[i])?;
        eq = ev.and(&eq, &same)?;
    }
    Ok(eq)
}

/// Encrypted selection vector with a single one at the first index holding
/// the minimum.
pub fn circuit_argmin_onehot<B: BitBackend>(
    ev: &Evaluator<'_, B>,
    words: &[EncryptedWord<B::Cipher>],
) -> Result<Vec<B::Cipher>> {
    let first = words.first().ok_or_else(|| Error::input("argmin over zero words"))?;
    for w in &words[1..] {
        same_width(first, w)?;
    }
    if words.len() == 1 {
        return Ok(alloc::vec![ev.constant(true)]);
    }

    let mut level: Vec<EncryptedWord<B::Cipher>> = words.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.chunks(2);
        for pair in &mut it {
            match pair {
                [a, b] => next.push(circuit_min(ev, a, b)?),
                [a] => next.push(a.clone()),
                _ => unreachable!(),
            }
        }
        level = next;
    }
    let min = &level[0];

    let mut out = Vec::with_capacity(words.len());
    let mut seen = circuit_equal(ev, &words[0], min)?;
    out.push(seen.clone());
    for w in &words[1..] {
        let eq = circuit_equal(ev, w, min)?;
        let fresh = ev.not(&seen)?;
        let hot = ev.and(&eq, &fresh)?;
        seen = ev.or(&seen, &hot)?;
        out.push(hot);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{decrypt_word, encrypt_int, GateCounts, PlainSimBackend, SimBit, SimSecretKey};
    use alloc::vec;
    use proptest::prelude::*;

    fn setup() -> (PlainSimBackend, SimSecretKey, crate::gates::SimCloudKey) {
        let be = PlainSimBackend::default();
        let (sk, ck) = be.keygen(42);
        (be, sk, ck)
    }

    fn argmin_plain(v: &[u64]) -> usize {
        let mut best = 0;
        for k in 1..v.len() {
            if v[k] < v[best] {
                best = k;
            }
        }
        best
    }

    fn run_argmin(values: &[u64], n_b: u32) -> (Vec<bool>, GateCounts) {
        let (be, sk, ck) = setup();
        let ev = Evaluator::new(&be, &ck);
        let words: Vec<_> = values.iter().map(|&v| encrypt_int(&be, v, n_b, &sk).unwrap()).collect();
        let out = circuit_argmin_onehot(&ev, &words).unwrap();
        let bits = out.iter().map(|c: &SimBit| be.decrypt(c, &sk).unwrap()).collect();
        (bits, ev.counts())
    }

    #[test]
    fn comparator_examples() {
        let (be, sk, ck) = setup();
        let ev = Evaluator::new(&be, &ck);
        let lt = |a, b| {
            let wa = encrypt_int(&be, a, 4, &sk).unwrap();
            let wb = encrypt_int(&be, b, 4, &sk).unwrap();
            be.decrypt(&circuit_less_than(&ev, &wa, &wb).unwrap(), &sk).unwrap()
        };
        assert!(lt(3, 5));
        assert!(!lt(7, 7));
        assert!(!lt(5, 3));
    }

    #[test]
    fn exhaustive_four_bit_tables() {
        let (be, sk, ck) = setup();
        let words: Vec<_> = (0..16).map(|v| encrypt_int(&be, v, 4, &sk).unwrap()).collect();
        let mut per_call = None;
        for a in 0..16u64 {
            for b in 0..16u64 {
                let ev = Evaluator::new(&be, &ck);
                let lt = circuit_less_than(&ev, &words[a as usize], &words[b as usize]).unwrap();
                assert_eq!(be.decrypt(&lt, &sk).unwrap(), a < b);
                let c = ev.counts();
                assert_eq!(*per_call.get_or_insert(c), c);
                let m = circuit_min(&ev, &words[a as usize], &words[b as usize]).unwrap();
                assert_eq!(decrypt_word(&be, &m, &sk).unwrap(), a.min(b));
            }
        }
    }

    #[test]
    fn comparator_rejects_width_mismatch() {
        let (be, sk, ck) = setup();
        let ev = Evaluator::new(&be, &ck);
        let a = encrypt_int(&be, 1, 4, &sk).unwrap();
        let b = encrypt_int(&be, 1, 8, &sk).unwrap();
        assert!(circuit_less_than(&ev, &a, &b).is_err());
        assert!(circuit_min(&ev, &a, &b).is_err());
        assert!(circuit_argmin_onehot(&ev, &[a, b]).is_err());
        assert!(circuit_argmin_onehot::<PlainSimBackend>(&ev, &[]).is_err());
    }

    #[test]
    fn argmin_examples() {
        assert_eq!(run_argmin(&[5, 3, 9], 8).0, vec![false, true, false]);
        assert_eq!(run_argmin(&[4, 4], 8).0, vec![true, false]);
        let (bits, counts) = run_argmin(&[17], 8);
        assert_eq!(bits, vec![true]);
        assert_eq!(counts.total(), 0);
    }

    #[test]
    fn gate_count_is_affine_in_k() {
        let count = |k: usize| run_argmin(&vec![1; k], 16).1;
        let (c2, c4, c6) = (count(2), count(4), count(6));
        assert_eq!(c4.total() - c2.total(), c6.total() - c4.total());
        assert_eq!(c4.bootstraps() - c2.bootstraps(), c6.bootstraps() - c4.bootstraps());
        // Per extra word: one min (5 per bit + 2 per MUX bit), one equality
        // (2 per bit - 1) and the suppression AND + OR.
        assert_eq!(c4.bootstraps() - c2.bootstraps(), 2 * (16 * 7 + 31 + 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn argmin_matches_plain(
            wide in any::<bool>(),
            raw in proptest::collection::vec(any::<u64>(), 1..=8),
            narrow in any::<bool>(),
        ) {
            let n_b = if wide { 16 } else { 8 };
            // Narrow values provoke ties.
            let mask = if narrow { 3 } else { (1u64 << n_b) - 1 };
            let values: Vec<u64> = raw.iter().map(|v| v & mask).collect();
            let (bits, _) = run_argmin(&values, n_b);
            prop_assert_eq!(bits.iter().filter(|b| **b).count(), 1);
            prop_assert!(bits[argmin_plain(&values)]);
        }
    }
}
