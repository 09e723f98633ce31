"""Keyed bucket labels and authenticated bucket encryption.

Labels are HMAC-SHA256 over a fixed-width big-endian encoding of
``(epoch, bucket, replica)`` truncated to 16 bytes.  Payloads are sealed
with AES-256-GCM under a fresh random nonce, with the label bound as
associated data so a ciphertext cannot be replayed under another label.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

LABEL_SIZE = 16
NONCE_SIZE = 12
TAG_SIZE = 16
KEY_SIZE = 32

_LABEL_INPUT = struct.Struct(">QQQ")


class IntegrityError(Exception):
    """Raised when a ciphertext fails authentication."""


@dataclass(frozen=True)
class KeyPair:
    """Label (PRF) key and seal (AEAD) key held by the proxy."""

    label_key: bytes
    seal_key: bytes

    def __post_init__(self):
        if len(self.label_key) < 16 or len(self.seal_key) < 16:
            raise ValueError("key material must be at least 16 bytes")

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls(os.urandom(KEY_SIZE), os.urandom(KEY_SIZE))

    @classmethod
    def from_seed(cls, seed: int) -> "KeyPair":
        """Deterministic keys for reproducible experiment runs.

        Never use this for data you care about; the keys are a public
        function of the seed.
        """
        base = hashlib.sha512(b"smoothstore-keys" + str(seed).encode()).digest()
        return cls(base[:KEY_SIZE], base[KEY_SIZE:])


def label_for(key: bytes, epoch: int, bucket: int, replica: int) -> bytes:
    """Return the 16-byte server-side label of one bucket replica."""
    msg = _LABEL_INPUT.pack(epoch, bucket, replica)
    return hmac.new(key, msg, hashlib.sha256).digest()[:LABEL_SIZE]


def sealed_size(plaintext_size: int) -> int:
    """Ciphertext length produced by :func:`seal_bucket` for a given input."""
    return NONCE_SIZE + plaintext_size + TAG_SIZE


class BucketCipher:
    """AEAD wrapper that caches the AES key schedule.

    Stateless after construction, so one instance may be shared between
    threads.
    """

    def __init__(self, seal_key: bytes):
        if len(seal_key) not in (16, 24, 32):
            seal_key = hashlib.sha256(seal_key).digest()
        self._key = seal_key
        self._aead = AESGCM(seal_key)

    def __reduce__(self):
        return type(self), (self._key,)

    def seal(self, plaintext: bytes, label: bytes) -> bytes:
        nonce = os.urandom(NONCE_SIZE)
        return nonce + self._aead.encrypt(nonce, plaintext, label)

    def open(self, ciphertext: bytes, label: bytes) -> bytes:
        if len(ciphertext) < NONCE_SIZE + TAG_SIZE:
            raise IntegrityError("ciphertext too short")
        nonce, body = ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:]
        try:
            return self._aead.decrypt(nonce, body, label)
        except InvalidTag:
            raise IntegrityError(f"authentication failed for label {label.hex()}") from None


def seal_bucket(key: bytes, bucket: bytes, associated_data: bytes) -> bytes:
    return BucketCipher(key).seal(bucket, associated_data)


def open_bucket(key: bytes, ciphertext: bytes, associated_data: bytes) -> bytes:
    return BucketCipher(key).open(ciphertext, associated_data)
