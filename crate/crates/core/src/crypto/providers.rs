//! The two cipher suites behind [`CryptoProvider`].

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use rsa::pkcs1::{DecodeRsaPublicKey, EncodeRsaPublicKey};
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey};
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use sha2::Sha256;

use super::{AsymmetricKeypair, CipherChunk, CryptoError, CryptoProvider, SymmetricKey};
use crate::digest::Digest;

/// Production-shaped suite: AES-256-GCM chunks, RSA-OAEP(SHA-256) key wrap.
///
/// Key generation draws from a ChaCha20 stream seeded by the caller, so the
/// same seed always yields the same RSA key. OAEP padding randomness comes
/// from the explicit `entropy` argument for the same reason.
pub struct StandardProvider {
    rsa_bits: usize,
}

pub const DEFAULT_RSA_BITS: usize = 2048;

impl StandardProvider {
    pub fn new(rsa_bits: usize) -> StandardProvider {
        StandardProvider { rsa_bits }
    }
}

impl Default for StandardProvider {
    fn default() -> StandardProvider {
        StandardProvider::new(DEFAULT_RSA_BITS)
    }
}

/// GCM wants exactly 12 nonce bytes; other lengths are folded down by hash
/// so the provider accepts the same inputs as the deterministic one.
fn gcm_nonce(nonce: &[u8]) -> [u8; 12] {
    let mut out = [0u8; 12];
    if nonce.len() == 12 {
        out.copy_from_slice(nonce);
    } else {
        out.copy_from_slice(&Digest::of(nonce).0[..12]);
    }
    out
}

fn gcm_aad(index: u32, item_id: &Digest) -> Vec<u8> {
    let mut aad = Vec::with_capacity(36);
    aad.extend_from_slice(&index.to_be_bytes());
    aad.extend_from_slice(&item_id.0);
    aad
}

impl CryptoProvider for StandardProvider {
    fn name(&self) -> &'static str {
        "standard"
    }

    fn generate_keypair(&self, seed: &[u8; 32]) -> Result<AsymmetricKeypair, CryptoError> {
        let derived = Digest::of_parts(&[b"chainshare.rsa.keygen:", seed]);
        let mut rng = ChaCha20Rng::from_seed(derived.0);
        let private = RsaPrivateKey::new(&mut rng, self.rsa_bits)
            .map_err(|e| CryptoError::Asymmetric(e.to_string()))?;
        let public = private.to_public_key();
        let private_der = private
            .to_pkcs8_der()
            .map_err(|e| CryptoError::Asymmetric(e.to_string()))?;
        let public_der = public
            .to_pkcs1_der()
            .map_err(|e| CryptoError::Asymmetric(e.to_string()))?;
        Ok(AsymmetricKeypair {
            public_key: public_der.as_bytes().to_vec(),
            private_key: private_der.as_bytes().to_vec(),
        })
    }

    fn encrypt_chunk(
        &self,
        key: &SymmetricKey,
        index: u32,
        nonce: &[u8],
        plaintext: &[u8],
    ) -> Result<CipherChunk, CryptoError> {
        let cipher = Aes256Gcm::new(key.bytes.as_slice().into());
        let n = gcm_nonce(nonce);
        let aad = gcm_aad(index, &key.item_id);
        let ciphertext = cipher
            .encrypt(
                Nonce::from_slice(&n),
                Payload {
                    msg: plaintext,
                    aad: &aad,
                },
            )
            .map_err(|_| CryptoError::AuthenticationFailure)?;
        Ok(CipherChunk::new(index, nonce.to_vec(), ciphertext))
    }

    fn decrypt_chunk(&self, key: &SymmetricKey, chunk: &CipherChunk) -> Result<Vec<u8>, CryptoError> {
        let cipher = Aes256Gcm::new(key.bytes.as_slice().into());
        let n = gcm_nonce(&chunk.nonce);
        let aad = gcm_aad(chunk.index, &key.item_id);
        cipher
            .decrypt(
                Nonce::from_slice(&n),
                Payload {
                    msg: &chunk.ciphertext,
                    aad: &aad,
                },
            )
            .map_err(|_| CryptoError::AuthenticationFailure)
    }

    fn wrap_key(
        &self,
        key: &SymmetricKey,
        recipient_public: &[u8],
        entropy: &[u8; 32],
    ) -> Result<Vec<u8>, CryptoError> {
        let public = RsaPublicKey::from_pkcs1_der(recipient_public)
            .map_err(|_| CryptoError::BadRecipientKey)?;
        let mut rng = ChaCha20Rng::from_seed(*entropy);
        public
            .encrypt(&mut rng, Oaep::new::<Sha256>(), &key.bytes)
            .map_err(|e| CryptoError::Asymmetric(e.to_string()))
    }

    fn unwrap_key(
        &self,
        envelope: &[u8],
        private_key: &[u8],
        item_id: Digest,
    ) -> Result<SymmetricKey, CryptoError> {
        let private =
            RsaPrivateKey::from_pkcs8_der(private_key).map_err(|_| CryptoError::UnwrapFailure)?;
        let bytes = private
            .decrypt(Oaep::new::<Sha256>(), envelope)
            .map_err(|_| CryptoError::UnwrapFailure)?;
        let key: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::UnwrapFailure)?;
        Ok(SymmetricKey {
            bytes: key,
            item_id,
        })
    }
}

/// Deterministic test suite: SHA-256 keystream + truncated-SHA-256 MAC, with
/// hash-derived keypairs. Every output byte is a pure function of the inputs.
///
/// Not a real cipher — the key wrap hides the content key only from parties
/// who never see the recipient "public" key bytes, so treat those bytes as a
/// capability. Its purpose is golden vectors and bit-identical simulation
/// logs; pick [`StandardProvider`] for anything resembling production use.
#[derive(Default)]
pub struct DeterministicProvider;

const TAG_LEN: usize = 16;

fn det_keystream(key: &SymmetricKey, nonce: &[u8], index: u32, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut counter = 0u32;
    while out.len() < len {
        let block = Digest::of_parts(&[
            b"chainshare.det.ks:",
            &key.bytes,
            &key.item_id.0,
            nonce,
            &index.to_be_bytes(),
            &counter.to_be_bytes(),
        ]);
        out.extend_from_slice(&block.0);
        counter += 1;
    }
    out.truncate(len);
    out
}

fn det_tag(key: &SymmetricKey, nonce: &[u8], index: u32, ciphertext: &[u8]) -> [u8; TAG_LEN] {
    let d = Digest::of_parts(&[
        b"chainshare.det.tag:",
        &key.bytes,
        &key.item_id.0,
        nonce,
        &index.to_be_bytes(),
        ciphertext,
    ]);
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&d.0[..TAG_LEN]);
    tag
}

impl CryptoProvider for DeterministicProvider {
    fn name(&self) -> &'static str {
        "deterministic"
    }

    fn generate_keypair(&self, seed: &[u8; 32]) -> Result<AsymmetricKeypair, CryptoError> {
        let private = Digest::of_parts(&[b"chainshare.det.priv:", seed]);
        let public = Digest::of_parts(&[b"chainshare.det.pub:", &private.0]);
        Ok(AsymmetricKeypair {
            public_key: public.0.to_vec(),
            private_key: private.0.to_vec(),
        })
    }

    fn encrypt_chunk(
        &self,
        key: &SymmetricKey,
        index: u32,
        nonce: &[u8],
        plaintext: &[u8],
    ) -> Result<CipherChunk, CryptoError> {
        let ks = det_keystream(key, nonce, index, plaintext.len());
        let mut ciphertext: Vec<u8> = plaintext.iter().zip(&ks).map(|(p, k)| p ^ k).collect();
        let tag = det_tag(key, nonce, index, &ciphertext);
        ciphertext.extend_from_slice(&tag);
        Ok(CipherChunk::new(index, nonce.to_vec(), ciphertext))
    }

    fn decrypt_chunk(&self, key: &SymmetricKey, chunk: &CipherChunk) -> Result<Vec<u8>, CryptoError> {
        if chunk.ciphertext.len() < TAG_LEN {
            return Err(CryptoError::AuthenticationFailure);
        }
        let split = chunk.ciphertext.len() - TAG_LEN;
        let (body, tag) = chunk.ciphertext.split_at(split);
        if det_tag(key, &chunk.nonce, chunk.index, body) != tag {
            return Err(CryptoError::AuthenticationFailure);
        }
        let ks = det_keystream(key, &chunk.nonce, chunk.index, body.len());
        Ok(body.iter().zip(&ks).map(|(c, k)| c ^ k).collect())
    }

    fn wrap_key(
        &self,
        key: &SymmetricKey,
        recipient_public: &[u8],
        _entropy: &[u8; 32],
    ) -> Result<Vec<u8>, CryptoError> {
        if recipient_public.len() != 32 {
            return Err(CryptoError::BadRecipientKey);
        }
        let mask = Digest::of_parts(&[b"chainshare.det.wrap:", recipient_public, &key.item_id.0]);
        let mut envelope: Vec<u8> = key.bytes.iter().zip(&mask.0).map(|(k, m)| k ^ m).collect();
        let tag = Digest::of_parts(&[
            b"chainshare.det.wraptag:",
            recipient_public,
            &key.item_id.0,
            &key.bytes,
        ]);
        envelope.extend_from_slice(&tag.0[..TAG_LEN]);
        Ok(envelope)
    }

    fn unwrap_key(
        &self,
        envelope: &[u8],
        private_key: &[u8],
        item_id: Digest,
    ) -> Result<SymmetricKey, CryptoError> {
        if envelope.len() != 32 + TAG_LEN {
            return Err(CryptoError::UnwrapFailure);
        }
        let public = Digest::of_parts(&[b"chainshare.det.pub:", private_key]);
        let mask = Digest::of_parts(&[b"chainshare.det.wrap:", &public.0, &item_id.0]);
        let mut key = [0u8; 32];
        for (i, b) in envelope[..32].iter().enumerate() {
            key[i] = b ^ mask.0[i];
        }
        let tag = Digest::of_parts(&[
            b"chainshare.det.wraptag:",
            &public.0,
            &item_id.0,
            &key,
        ]);
        if tag.0[..TAG_LEN] != envelope[32..] {
            return Err(CryptoError::UnwrapFailure);
        }
        Ok(SymmetricKey {
            bytes: key,
            item_id,
        })
    }
}
