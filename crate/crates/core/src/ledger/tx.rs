use serde::{Deserialize, Serialize};

use super::LedgerError;
use crate::crypto::{self, KeyPair};
use crate::hash::{double_sha256, Hash, NodeId};

/// A spend of one or more opaque resources.
///
/// `tx_id` is the double SHA-256 of the canonical serialization, which covers
/// every other field including the signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Hash,
    pub sender: NodeId,
    /// Spend references, kept sorted ascending.
    pub inputs: Vec<Hash>,
    pub payload_size: u32,
    /// Simulated seconds.
    pub submit_time: u64,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl Transaction {
    /// Builds a transaction from parts. Inputs are sorted; duplicates are
    /// rejected.
    pub fn new(
        sender: NodeId,
        mut inputs: Vec<Hash>,
        payload_size: u32,
        submit_time: u64,
        signature: Vec<u8>,
    ) -> Result<Self, LedgerError> {
        inputs.sort_unstable();
        if inputs.windows(2).any(|w| w[0] == w[1]) {
            return Err(LedgerError::DuplicateInput);
        }
        if inputs.len() > u16::MAX as usize || signature.len() > u16::MAX as usize {
            return Err(LedgerError::Malformed("transaction field too long".into()));
        }
        let mut tx = Transaction { tx_id: Hash::ZERO, sender, inputs, payload_size, submit_time, signature };
        tx.tx_id = double_sha256(&tx.serialize());
        Ok(tx)
    }

    /// Builds and signs a transaction with the sender's keys.
    pub fn signed(keys: &KeyPair, inputs: Vec<Hash>, payload_size: u32, submit_time: u64) -> Result<Self, LedgerError> {
        let unsigned = Transaction::new(keys.node_id(), inputs, payload_size, submit_time, Vec::new())?;
        let sig = keys.sign(&unsigned.signing_bytes());
        Transaction::new(unsigned.sender, unsigned.inputs, payload_size, submit_time, sig)
    }

    /// sender(32) ∥ input_count(u16) ∥ inputs(32 each) ∥ payload_size(u32) ∥
    /// submit_time(u64) ∥ sig_len(u16) ∥ signature. Little-endian.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = self.serialize_without_signature();
        out.extend_from_slice(&(self.signature.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    /// The message a sender signs: the serialization with a zero-length
    /// signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = self.serialize_without_signature();
        out.extend_from_slice(&0u16.to_le_bytes());
        out
    }

    fn serialize_without_signature(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 2 + 32 * self.inputs.len() + 4 + 8 + 2 + 64);
        out.extend_from_slice(self.sender.as_bytes());
        out.extend_from_slice(&(self.inputs.len() as u16).to_le_bytes());
        let mut sorted = self.inputs.clone();
        sorted.sort_unstable();
        for input in &sorted {
            out.extend_from_slice(input.as_bytes());
        }
        out.extend_from_slice(&self.payload_size.to_le_bytes());
        out.extend_from_slice(&self.submit_time.to_le_bytes());
        out
    }

    /// Checks the cached id and the input invariants.
    pub fn check(&self) -> Result<(), LedgerError> {
        if self.inputs.windows(2).any(|w| w[0] >= w[1]) {
            return if self.inputs.windows(2).any(|w| w[0] == w[1]) {
                Err(LedgerError::DuplicateInput)
            } else {
                Err(LedgerError::Malformed("transaction inputs not sorted".into()))
            };
        }
        if double_sha256(&self.serialize()) != self.tx_id {
            return Err(LedgerError::TxIdMismatch(self.tx_id));
        }
        Ok(())
    }

    pub fn verify_signature(&self) -> bool {
        crypto::verify(self.sender.as_bytes(), &self.signing_bytes(), &self.signature)
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(b: u8) -> Hash {
        Hash([b; 32])
    }

    #[test]
    fn duplicate_inputs_rejected() {
        let err = Transaction::new(NodeId::from_byte(1), vec![input(2), input(2)], 10, 0, vec![]);
        assert_eq!(err, Err(LedgerError::DuplicateInput));
    }

    #[test]
    fn inputs_are_sorted_and_id_is_canonical() {
        let a = Transaction::new(NodeId::from_byte(1), vec![input(9), input(3)], 10, 5, vec![1, 2]).unwrap();
        let b = Transaction::new(NodeId::from_byte(1), vec![input(3), input(9)], 10, 5, vec![1, 2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.inputs, vec![input(3), input(9)]);
        assert!(a.check().is_ok());
    }

    #[test]
    fn serialization_layout() {
        let tx = Transaction::new(NodeId::from_byte(0xaa), vec![input(1)], 0x01020304, 7, vec![0xee]).unwrap();
        let bytes = tx.serialize();
        assert_eq!(bytes.len(), 32 + 2 + 32 + 4 + 8 + 2 + 1);
        assert_eq!(bytes[0], 0xaa);
        assert_eq!(&bytes[32..34], &[1, 0]);
        assert_eq!(&bytes[66..70], &[4, 3, 2, 1]);
        assert_eq!(&bytes[70..78], &7u64.to_le_bytes());
        assert_eq!(&bytes[78..80], &[1, 0]);
        assert_eq!(bytes[80], 0xee);
    }

    #[test]
    fn signed_transaction_verifies_and_tamper_fails() {
        let keys = KeyPair::from_seed([4u8; 32]);
        let tx = Transaction::signed(&keys, vec![input(1)], 100, 3).unwrap();
        assert!(tx.verify_signature());
        let mut sig = tx.signature.clone();
        sig[0] ^= 1;
        let bad = Transaction::new(tx.sender, tx.inputs.clone(), 100, 3, sig).unwrap();
        assert!(!bad.verify_signature());
        assert_ne!(bad.tx_id, tx.tx_id);
    }

    #[test]
    fn stale_id_detected() {
        let mut tx = Transaction::new(NodeId::from_byte(1), vec![input(1)], 1, 1, vec![]).unwrap();
        tx.payload_size = 2;
        assert!(matches!(tx.check(), Err(LedgerError::TxIdMismatch(_))));
    }
}
