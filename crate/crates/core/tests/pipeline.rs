//! Two parties, each holding autoencoders for its own classes, classify
//! through the encrypted argmin and agree with the plaintext rule.

use mmfhe_core::autoencoder::{learn_wide_cdmma, WideConfig};
use mmfhe_core::fuzzy::{local_classify, select_global_quantized, AttributeBank, FuzzyAttribute, MembershipKind};
use mmfhe_core::gates::{
    circuit_argmin_onehot, decrypt_word, encode_unit_interval, encrypt_int_public, BitBackend, Evaluator,
    PlainSimBackend,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 4;

/// Points near a line through `centre`, one row each.
fn blob(rng: &mut ChaCha8Rng, centre: &[f64; DIM], dir: &[f64; DIM], n: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(n, DIM);
    for i in 0..n {
        let s: f64 = rng.random_range(-1.0..1.0);
        for k in 0..DIM {
            y[(i, k)] = centre[k] + s * dir[k] + 0.02 * rng.random_range(-1.0..1.0);
        }
    }
    y
}

fn bank(classes: &[(u32, DMatrix<f64>)], kind: MembershipKind) -> AttributeBank {
    let cfg = WideConfig { layers: 2, subspace_dim: 2, ..WideConfig::default() };
    let entries = classes
        .iter()
        .map(|(label, y)| (*label, FuzzyAttribute { model: learn_wide_cdmma(y, &cfg).unwrap(), kind }))
        .collect();
    AttributeBank::new(entries).unwrap()
}

#[test]
fn encrypted_global_label_matches_quantized_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let centres = [[0.2, 0.2, 0.8, 0.5], [0.8, 0.3, 0.2, 0.4], [0.5, 0.9, 0.5, 0.1], [0.3, 0.6, 0.1, 0.9]];
    let dirs = [[0.2, -0.1, 0.1, 0.0], [0.0, 0.2, 0.1, -0.1], [0.1, 0.1, -0.2, 0.1], [-0.1, 0.0, 0.1, 0.2]];
    let train: Vec<(u32, DMatrix<f64>)> =
        (0..4).map(|c| (c as u32, blob(&mut rng, &centres[c], &dirs[c], 40))).collect();

    for kind in [MembershipKind::Gaussian, MembershipKind::StudentT { nu: 2.001 }] {
        let parties = [bank(&train[..2], kind), bank(&train[2..], kind)];
        let be = PlainSimBackend::default();
        let (sk, ck) = be.keygen(9);
        let mut correct = 0;
        let mut total = 0;
        for c in 0..4 {
            let test = blob(&mut rng, &centres[c], &dirs[c], 15);
            for row in test.row_iter() {
                let y: Vec<f64> = row.iter().copied().collect();
                let local: Vec<_> = parties.iter().map(|b| local_classify(&y, b).unwrap()).collect();
                for n_b in [8, 16] {
                    let words: Vec<_> = local
                        .iter()
                        .map(|s| encrypt_int_public(&be, encode_unit_interval(s.mu_bar, n_b).unwrap(), n_b, &ck).unwrap())
                        .collect();
                    let ev = Evaluator::new(&be, &ck);
                    let onehot = circuit_argmin_onehot(&ev, &words).unwrap();
                    let deltas: Vec<bool> = onehot.iter().map(|d| be.decrypt(d, &sk).unwrap()).collect();
                    assert_eq!(deltas.iter().filter(|d| **d).count(), 1);
                    let label: u32 = deltas.iter().zip(&local).filter(|(d, _)| **d).map(|(_, s)| s.label).sum();
                    let expect = local[select_global_quantized(&local, n_b).unwrap()].label;
                    assert_eq!(label, expect);
                    // The words the cloud saw decrypt to what the parties encoded.
                    for (w, s) in words.iter().zip(&local) {
                        assert_eq!(decrypt_word(&be, w, &sk).unwrap(), encode_unit_interval(s.mu_bar, n_b).unwrap());
                    }
                    if n_b == 16 {
                        total += 1;
                        correct += (label == c as u32) as usize;
                    }
                }
            }
        }
        assert!(correct as f64 / total as f64 > 0.9, "{kind:?}: {correct}/{total}");
    }
}
