//! Signing keys for simulated nodes (ed25519).

use std::collections::HashMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;

use crate::hash::{sha256, Hash, NodeId};

/// An ed25519 key pair. The private half never leaves the owning node.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair { signing: SigningKey::from_bytes(&seed) }
    }

    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn node_id(&self) -> NodeId {
        NodeId(self.public_key())
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.signing.sign(msg).to_bytes().to_vec()
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyPair({:?})", self.node_id())
    }
}

/// Verifies `sig` over `msg` under a raw 32-byte public key. Malformed keys or
/// signatures simply fail verification.
pub fn verify(public_key: &[u8; 32], msg: &[u8], sig: &[u8]) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(sig) else {
        return false;
    };
    vk.verify(msg, &sig).is_ok()
}

/// Memoizes verification results. Verification is a pure function of
/// (key, message, signature), so every simulated receiver may share one cache.
#[derive(Debug, Default, Clone)]
pub struct VerifyCache {
    results: HashMap<Hash, bool>,
    pub hits: u64,
    pub misses: u64,
}

impl VerifyCache {
    pub fn verify(&mut self, public_key: &[u8; 32], msg: &[u8], sig: &[u8]) -> bool {
        let mut buf = Vec::with_capacity(32 + msg.len() + sig.len() + 8);
        buf.extend_from_slice(public_key);
        buf.extend_from_slice(&(msg.len() as u64).to_le_bytes());
        buf.extend_from_slice(msg);
        buf.extend_from_slice(sig);
        let key = sha256(&buf);
        if let Some(&ok) = self.results.get(&key) {
            self.hits += 1;
            return ok;
        }
        self.misses += 1;
        let ok = verify(public_key, msg, sig);
        self.results.insert(key, ok);
        ok
    }
}
