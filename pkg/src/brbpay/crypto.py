"""Authenticators: pairwise MACs, signatures and a 32-byte digest.

Two signature backends share one interface.  ``SimBackend`` signs with a keyed
BLAKE2b over the message digest, which is fast and bit-reproducible; only the
holder of the secret can produce a verifying tag, so it behaves like a
signature inside the simulator.  ``EcdsaBackend`` uses real ECDSA P-256.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple

DIGEST_SIZE = 32


class UnknownSigner(KeyError):
    pass


class UnknownPair(KeyError):
    pass


def digest(message: bytes) -> bytes:
    return hashlib.sha256(message).digest()


@dataclass(frozen=True)
class Signature:
    signer: Tuple[str, int]  # ("r", id) or ("c", id)
    value: bytes


def replica_party(r: int) -> Tuple[str, int]:
    return ("r", r)


def client_party(c: int) -> Tuple[str, int]:
    return ("c", c)


class SimBackend:
    name = "sim"

    def keygen(self, rng: random.Random):
        secret = rng.getrandbits(256).to_bytes(32, "little")
        return hashlib.sha256(b"pub" + secret).digest(), secret

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return hashlib.blake2b(digest(message), key=secret, digest_size=32).digest()

    def verify(self, public, secret: bytes, message: bytes, sig: bytes) -> bool:
        expected = hashlib.blake2b(digest(message), key=secret, digest_size=32).digest()
        return hmac.compare_digest(expected, sig)


class EcdsaBackend:
    name = "ecdsa"

    def __init__(self) -> None:
        from cryptography.hazmat.primitives.asymmetric import ec
        from cryptography.hazmat.primitives import hashes
        self._ec = ec
        self._hashes = hashes

    def keygen(self, rng: random.Random):
        # derive from the seeded rng so registries are reproducible
        order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
        value = rng.randrange(1, order)
        sk = self._ec.derive_private_key(value, self._ec.SECP256R1())
        return sk.public_key(), sk

    def sign(self, secret, message: bytes) -> bytes:
        return secret.sign(message, self._ec.ECDSA(self._hashes.SHA256()))

    def verify(self, public, secret, message: bytes, sig: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        try:
            public.verify(sig, message, self._ec.ECDSA(self._hashes.SHA256()))
            return True
        except (InvalidSignature, ValueError):
            return False


@dataclass
class KeyRegistry:
    backend: object = field(default_factory=SimBackend)
    keys: Dict[Tuple[str, int], tuple] = field(default_factory=dict)
    mac_keys: Dict[Tuple[int, int], bytes] = field(default_factory=dict)

    @classmethod
    def build(cls, replicas: Iterable[int], clients: Iterable[int], seed: int = 0,
              backend=None) -> "KeyRegistry":
        reg = cls(backend or SimBackend())
        rng = random.Random(f"keys:{seed}")
        replicas = sorted(replicas)
        for r in replicas:
            reg.keys[replica_party(r)] = reg.backend.keygen(rng)
        for c in sorted(clients):
            reg.keys[client_party(c)] = reg.backend.keygen(rng)
        for i, a in enumerate(replicas):
            for b in replicas[i:]:
                reg.add_mac_pair(a, b, rng)
        return reg

    def add_replica(self, r: int, seed: int = 0) -> None:
        rng = random.Random(f"keys:{seed}:join:{r}")
        self.keys[replica_party(r)] = self.backend.keygen(rng)
        for other in sorted({a for a, _ in self.mac_keys} | {b for _, b in self.mac_keys} | {r}):
            self.add_mac_pair(r, other, rng)

    def add_mac_pair(self, a: int, b: int, rng: random.Random) -> None:
        key = rng.getrandbits(256).to_bytes(32, "little")
        self.mac_keys[(a, b)] = key
        self.mac_keys[(b, a)] = key

    def sign(self, signer: Tuple[str, int], message: bytes) -> Signature:
        try:
            _, secret = self.keys[signer]
        except KeyError:
            raise UnknownSigner(signer) from None
        return Signature(signer, self.backend.sign(secret, message))

    def verify(self, signer: Tuple[str, int], message: bytes, sig: Signature) -> bool:
        if sig.signer != signer:
            return False
        entry = self.keys.get(signer)
        if entry is None:
            return False
        return self.backend.verify(entry[0], entry[1], message, sig.value)

    def mac(self, sender: int, receiver: int, message: bytes) -> bytes:
        try:
            key = self.mac_keys[(sender, receiver)]
        except KeyError:
            raise UnknownPair((sender, receiver)) from None
        return hashlib.blake2b(message, key=key, digest_size=16).digest()

    def verify_mac(self, sender: int, receiver: int, message: bytes, tag: bytes) -> bool:
        key = self.mac_keys.get((sender, receiver))
        if key is None:
            return False
        return hmac.compare_digest(hashlib.blake2b(message, key=key, digest_size=16).digest(), tag)


def sign_batch(registry: KeyRegistry, signer: int, payload_digest: bytes) -> Signature:
    """One signature covers a whole batch: it is taken over the batch digest."""
    return registry.sign(replica_party(signer), payload_digest)
