"""Concrete primitives with the widths the three protocols use.

* 64-bit block / 192-bit key PRP for ROBERT EBIDs (3DES-EDE3 in ECB mode),
* AES-128 for GAEN rolling identifiers and the ROBERT country-code mask,
* HKDF-SHA256 for labelled key derivation,
* HMAC-SHA256 truncated to 40 bits for HELLO authentication,
* X25519 for ROBERT registration, Ed25519 for every signature,
* AES-GCM for the in-model secure channels.

Everything is deterministic given its key material; key generation takes
the simulation RNG so whole runs replay bit-identically.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass

from cryptography.hazmat.decrepit.ciphers.algorithms import TripleDES
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.exceptions import InvalidSignature, InvalidTag

from .errors import BadLength

PRP64_KEY_LEN = 24
TAG40_LEN = 5
EBID_EPOCH_BITS = 24
EBID_ID_BITS = 40

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


def _need(name: str, data: bytes, n: int) -> None:
    if len(data) != n:
        raise BadLength(f"{name}: expected {n} bytes, got {len(data)}")


# -- 64-bit PRP ---------------------------------------------------------------

def prp64_encrypt(key: bytes, block: bytes) -> bytes:
    _need("prp64 key", key, PRP64_KEY_LEN)
    _need("prp64 block", block, 8)
    enc = Cipher(TripleDES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def prp64_decrypt(key: bytes, block: bytes) -> bytes:
    _need("prp64 key", key, PRP64_KEY_LEN)
    _need("prp64 block", block, 8)
    dec = Cipher(TripleDES(key), modes.ECB()).decryptor()
    return dec.update(block) + dec.finalize()


def pack_epoch_id(epoch: int, ident: int) -> bytes:
    """24-bit epoch number followed by 40-bit identifier, big endian."""
    if not 0 <= epoch < 1 << EBID_EPOCH_BITS:
        raise BadLength(f"epoch {epoch} exceeds 24 bits")
    if not 0 <= ident < 1 << EBID_ID_BITS:
        raise BadLength(f"id {ident} exceeds 40 bits")
    return ((epoch << EBID_ID_BITS) | ident).to_bytes(8, "big")


def unpack_epoch_id(block: bytes) -> tuple[int, int]:
    _need("epoch/id block", block, 8)
    v = int.from_bytes(block, "big")
    return v >> EBID_ID_BITS, v & ((1 << EBID_ID_BITS) - 1)


# -- 128-bit block cipher -----------------------------------------------------

def block128_encrypt(key: bytes, block: bytes) -> bytes:
    _need("aes key", key, 16)
    _need("aes block", block, 16)
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def block128_decrypt(key: bytes, block: bytes) -> bytes:
    _need("aes key", key, 16)
    _need("aes block", block, 16)
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    return dec.update(block) + dec.finalize()


def pad_ebid(ebid: bytes) -> bytes:
    _need("ebid", ebid, 8)
    return ebid + bytes(8)


def ecc_encrypt(k_fed: bytes, ebid: bytes, country_code: int) -> int:
    """One-byte encrypted country code bound to ``ebid``."""
    return block128_encrypt(k_fed, pad_ebid(ebid))[0] ^ (country_code & 0xFF)


def ecc_decrypt(k_fed: bytes, ebid: bytes, ecc: int) -> int:
    return block128_encrypt(k_fed, pad_ebid(ebid))[0] ^ (ecc & 0xFF)


# -- KDF / MAC / hash ---------------------------------------------------------

def kdf(key: bytes, label: bytes, length: int = 16) -> bytes:
    if not label:
        raise ValueError("kdf label must be non-empty")
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=None, info=label).derive(key)


def mac40(key: bytes, msg: bytes) -> bytes:
    return hmac.new(key, msg, hashlib.sha256).digest()[:TAG40_LEN]


def verify40(key: bytes, msg: bytes, tag: bytes) -> bool:
    return len(tag) == TAG40_LEN and hmac.compare_digest(mac40(key, msg), tag)


def hash256(msg: bytes) -> bytes:
    return hashlib.sha256(msg).digest()


# -- Diffie-Hellman -----------------------------------------------------------

@dataclass(frozen=True)
class DhKeyPair:
    secret: bytes
    public: bytes

    @classmethod
    def generate(cls, rng: random.Random) -> "DhKeyPair":
        return cls.from_secret(rng.randbytes(32))

    @classmethod
    def from_secret(cls, secret: bytes) -> "DhKeyPair":
        sk = X25519PrivateKey.from_private_bytes(secret)
        return cls(secret, sk.public_key().public_bytes(_RAW, _RAW_PUB))


def dh_shared(secret: bytes, peer_public: bytes) -> bytes:
    sk = X25519PrivateKey.from_private_bytes(secret)
    return sk.exchange(X25519PublicKey.from_public_bytes(peer_public))


def derive_registration_keys(shared: bytes) -> tuple[bytes, bytes]:
    """Split a DH secret into (K_enc, K_auth) via independent labels."""
    return kdf(shared, b"enc", 32), kdf(shared, b"auth", 32)


# -- signatures ---------------------------------------------------------------

@dataclass(frozen=True)
class SigKeyPair:
    secret: bytes
    public: bytes

    @classmethod
    def generate(cls, rng: random.Random) -> "SigKeyPair":
        return cls.from_secret(rng.randbytes(32))

    @classmethod
    def from_secret(cls, secret: bytes) -> "SigKeyPair":
        sk = Ed25519PrivateKey.from_private_bytes(secret)
        return cls(secret, sk.public_key().public_bytes(_RAW, _RAW_PUB))


def sign(secret: bytes, msg: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret).sign(msg)


def verify(public: bytes, msg: bytes, sig: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(sig, msg)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- secure channel -----------------------------------------------------------

def seal(key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    return nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def open_sealed(key: bytes, sealed: bytes) -> bytes | None:
    try:
        return AESGCM(key).decrypt(sealed[:12], sealed[12:], None)
    except (InvalidTag, ValueError):
        return None
