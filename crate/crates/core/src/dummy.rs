//! Oblivious dummy-token generation.
//!
//! The AS prepares `B` blinded queries `Q_i = r_i·Hash(n_i) − b_i·G_i` with secret bits
//! `b_i`; the sender answers with its own bits `b′_i` and `R_i = esk·(Q_i + b′_i·G_i)`
//! under one batched DLEQ proof. Wherever the bits agree the AS unblinds a valid token,
//! so the dummy count is `Binomial(B, 1/2)` and neither side controls it alone.

use rand::{CryptoRng, Rng, RngCore};
use thiserror::Error;

use crate::error::CryptoError;
use crate::group::{
    hash_to_group, nizk_dleq_prove_batch, nizk_dleq_verify_batch, pp_unblind,
    random_nonzero_scalar, DleqProof, GroupElement, GroupParams, Scalar,
};
use crate::tag::{SenderToken, NONCE_LEN};

pub const PROTOCOL_ID: &str = "dummy-gen/v1";
const GENERATOR_DST: &[u8] = b"sandi/dummy/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DummyError {
    #[error("reply has {actual} entries, batch has {expected}")]
    Shape { expected: usize, actual: usize },
    #[error("batched proof does not verify")]
    Proof,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// `G_i = Hash("sandi/dummy/v1" ‖ epoch ‖ i)`, outside either party's control.
pub fn dummy_generator(epoch: u64, index: u32) -> GroupElement {
    let mut input = Vec::with_capacity(GENERATOR_DST.len() + 12);
    input.extend_from_slice(GENERATOR_DST);
    input.extend_from_slice(&epoch.to_be_bytes());
    input.extend_from_slice(&index.to_be_bytes());
    hash_to_group(&input)
}

fn generators(epoch: u64, count: usize) -> Vec<GroupElement> {
    (0..count as u32)
        .map(|i| dummy_generator(epoch, i))
        .collect()
}

/// Public half of a batch, sent to the sender.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DummyQueries {
    pub epoch: u64,
    pub queries: Vec<GroupElement>,
}

/// AS-private half of a batch.
#[derive(Clone, Debug)]
pub struct DummySecrets {
    pub nonces: Vec<[u8; NONCE_LEN]>,
    pub blindings: Vec<Scalar>,
    pub bits: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DummyReply {
    pub bits: Vec<bool>,
    pub responses: Vec<GroupElement>,
    pub proof: DleqProof,
}

/// `B = ⌈4σ²⌉`, matching the binomial variance `B/4` to `σ²`.
pub fn batch_size_for_sigma(noise_std: f64) -> u32 {
    let v = 4.0 * noise_std * noise_std;
    let nearest = v.round();
    // Absorb the last-bit error of the product, e.g. 4·1.1² = 4.840000000000001.
    let b = if (v - nearest).abs() <= 1e-9 * v.max(1.0) {
        nearest
    } else {
        v.ceil()
    };
    b.max(1.0) as u32
}

pub fn as_start<R: RngCore + CryptoRng>(
    batch: usize,
    epoch: u64,
    rng: &mut R,
) -> (DummyQueries, DummySecrets) {
    let gens = generators(epoch, batch);
    let mut secrets = DummySecrets {
        nonces: Vec::with_capacity(batch),
        blindings: Vec::with_capacity(batch),
        bits: Vec::with_capacity(batch),
    };
    let mut queries = Vec::with_capacity(batch);
    for g in &gens {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let r = random_nonzero_scalar(rng);
        let bit: bool = rng.gen();
        let mut q = r * hash_to_group(&nonce);
        if bit {
            q -= g;
        }
        queries.push(q);
        secrets.nonces.push(nonce);
        secrets.blindings.push(r);
        secrets.bits.push(bit);
    }
    (DummyQueries { epoch, queries }, secrets)
}

pub fn sender_respond<R: RngCore + CryptoRng>(
    params: &GroupParams,
    queries: &DummyQueries,
    esk: &Scalar,
    rng: &mut R,
) -> Result<DummyReply, DummyError> {
    let gens = generators(queries.epoch, queries.queries.len());
    let bits: Vec<bool> = (0..gens.len()).map(|_| rng.gen()).collect();
    let ys: Vec<GroupElement> = queries
        .queries
        .iter()
        .zip(&gens)
        .zip(&bits)
        .map(|((q, g), &b)| if b { q + g } else { *q })
        .collect();
    let responses: Vec<GroupElement> = ys.iter().map(|y| esk * y).collect();
    let epk = esk * params.generator;
    let proof = nizk_dleq_prove_batch(&params.generator, &epk, &ys, &responses, esk, rng)?;
    Ok(DummyReply {
        bits,
        responses,
        proof,
    })
}

/// Returns the dummies for indices where the bits agree.
pub fn as_finish(
    params: &GroupParams,
    epk: &GroupElement,
    queries: &DummyQueries,
    secrets: &DummySecrets,
    reply: &DummyReply,
) -> Result<Vec<SenderToken>, DummyError> {
    let n = queries.queries.len();
    for len in [reply.bits.len(), reply.responses.len(), secrets.bits.len()] {
        if len != n {
            return Err(DummyError::Shape {
                expected: n,
                actual: len,
            });
        }
    }
    let gens = generators(queries.epoch, n);
    let ys: Vec<GroupElement> = queries
        .queries
        .iter()
        .zip(&gens)
        .zip(&reply.bits)
        .map(|((q, g), &b)| if b { q + g } else { *q })
        .collect();
    if !nizk_dleq_verify_batch(&params.generator, epk, &ys, &reply.responses, &reply.proof) {
        return Err(DummyError::Proof);
    }
    let mut tokens = Vec::new();
    for i in 0..n {
        if secrets.bits[i] == reply.bits[i] {
            tokens.push(SenderToken {
                nonce: secrets.nonces[i],
                sigma: pp_unblind(&reply.responses[i], &secrets.blindings[i])?,
            });
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{pp_keygen, pp_verify};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn batch_sizes() {
        assert_eq!(batch_size_for_sigma(1.1), 5);
        assert_eq!(batch_size_for_sigma(0.5), 1);
        assert_eq!(batch_size_for_sigma(3.5), 49);
        assert_eq!(batch_size_for_sigma(1.0), 4);
        assert_eq!(batch_size_for_sigma(1.01), 5);
    }

    #[test]
    fn dummies_verify_and_mismatches_do_not() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let params = GroupParams::default();
        let (esk, epk) = pp_keygen(&params, &mut rng);
        let (queries, secrets) = as_start(16, 3, &mut rng);
        assert_eq!(queries.queries.len(), 16);
        let reply = sender_respond(&params, &queries, &esk, &mut rng).unwrap();
        let tokens = as_finish(&params, &epk, &queries, &secrets, &reply).unwrap();
        let agree = (0..16)
            .filter(|&i| secrets.bits[i] == reply.bits[i])
            .count();
        assert_eq!(tokens.len(), agree);
        for t in &tokens {
            assert!(pp_verify(&t.nonce, &t.sigma, &esk));
        }
        // Where the bits differ the unblinded element is off by ±(esk/r)·G_i.
        for i in (0..16).filter(|&i| secrets.bits[i] != reply.bits[i]) {
            let sigma = pp_unblind(&reply.responses[i], &secrets.blindings[i]).unwrap();
            assert!(!pp_verify(&secrets.nonces[i], &sigma, &esk));
            let g = dummy_generator(3, i as u32);
            let offset = secrets.blindings[i].invert() * esk * g;
            let expected = esk * hash_to_group(&secrets.nonces[i]);
            let sign_fixed = if secrets.bits[i] {
                sigma + offset
            } else {
                sigma - offset
            };
            assert_eq!(sign_fixed, expected);
        }
    }

    #[test]
    fn tampered_reply_aborts() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let params = GroupParams::default();
        let (esk, epk) = pp_keygen(&params, &mut rng);
        let (queries, secrets) = as_start(5, 0, &mut rng);
        let reply = sender_respond(&params, &queries, &esk, &mut rng).unwrap();

        let mut bad = reply.clone();
        bad.responses[2] += params.generator;
        assert_eq!(
            as_finish(&params, &epk, &queries, &secrets, &bad),
            Err(DummyError::Proof)
        );

        let mut flipped = reply.clone();
        flipped.bits[0] = !flipped.bits[0];
        assert_eq!(
            as_finish(&params, &epk, &queries, &secrets, &flipped),
            Err(DummyError::Proof)
        );

        let mut short = reply.clone();
        short.bits.pop();
        assert!(matches!(
            as_finish(&params, &epk, &queries, &secrets, &short),
            Err(DummyError::Shape { .. })
        ));

        let (_, other_epk) = pp_keygen(&params, &mut rng);
        assert_eq!(
            as_finish(&params, &other_epk, &queries, &secrets, &reply),
            Err(DummyError::Proof)
        );
    }

    #[test]
    fn bits_are_balanced_and_independent() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let params = GroupParams::default();
        let (esk, _) = pp_keygen(&params, &mut rng);
        let (mut ones_as, mut ones_sender, mut agree, mut total) = (0, 0, 0, 0);
        for epoch in 0..400 {
            let (queries, secrets) = as_start(5, epoch, &mut rng);
            let reply = sender_respond(&params, &queries, &esk, &mut rng).unwrap();
            for i in 0..5 {
                ones_as += secrets.bits[i] as u32;
                ones_sender += reply.bits[i] as u32;
                agree += (secrets.bits[i] == reply.bits[i]) as u32;
                total += 1;
            }
        }
        let frac = |c: u32| c as f64 / total as f64;
        assert!((frac(ones_as) - 0.5).abs() < 0.05);
        assert!((frac(ones_sender) - 0.5).abs() < 0.05);
        assert!((frac(agree) - 0.5).abs() < 0.05);
    }
}
