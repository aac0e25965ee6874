"""In-memory content-addressed blob store with per-pair sealed envelopes.

Stands in for IPFS: blobs are keyed by their SHA-256 digest, any holder may
re-host any blob, and every read is verified against its address.  Who can
fetch from whom is decided by a :class:`Reachability` relation, which is how
firewalled peers are simulated.

Confidentiality between a sender and a receiver is emulated with keys
derived per ordered pair from a :class:`Keyring` secret and AES-GCM.  This
models access control and tamper evidence only; it is not a key exchange.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF


class StoreError(Exception):
    pass


class UnknownAddress(StoreError):
    pass


class Unreachable(StoreError):
    pass


class TamperDetected(StoreError):
    pass


class AccessDenied(StoreError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True, order=True)
class ContentAddress:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("content address must be a 32-byte digest")

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def from_hex(cls, text: str) -> ContentAddress:
        return cls(bytes.fromhex(text))

    @classmethod
    def of(cls, data: bytes) -> ContentAddress:
        return cls(sha256(data))

    def __str__(self):
        return self.hex


@dataclass
class Reachability:
    """Directed "can fetch from" relation; every account reaches itself.

    Only the exceptions are stored: ``blocked`` holds ``(requester, provider)``
    pairs that cannot connect.
    """

    blocked: set[tuple[str, str]] = field(default_factory=set)

    def reachable(self, requester: str, provider: str) -> bool:
        return requester == provider or (requester, provider) not in self.blocked

    def block(self, requester: str, provider: str) -> None:
        if requester == provider:
            raise ValueError("an account always reaches itself")
        self.blocked.add((requester, provider))


class BlobStore:
    def __init__(self, reachability: Reachability | None = None):
        self.reachability = reachability or Reachability()
        self._blobs: dict[bytes, bytes] = {}
        self._providers: dict[bytes, set[str]] = {}
        self._lock = threading.Lock()

    def put(self, holder: str, data: bytes) -> ContentAddress:
        if not data:
            raise StoreError("refusing to store an empty blob")
        addr = ContentAddress.of(data)
        with self._lock:
            self._blobs.setdefault(addr.digest, bytes(data))
            self._providers.setdefault(addr.digest, set()).add(holder)
        return addr

    def providers(self, addr: ContentAddress) -> frozenset[str]:
        return frozenset(self._providers.get(addr.digest, ()))

    def __contains__(self, addr: ContentAddress) -> bool:
        return addr.digest in self._blobs

    def get(self, requester: str, addr: ContentAddress) -> bytes:
        if addr.digest not in self._blobs:
            raise UnknownAddress(addr.hex)
        if not any(self.reachability.reachable(requester, p) for p in self.providers(addr)):
            raise Unreachable(f"{requester} reaches no provider of {addr.hex[:12]}")
        data = self._blobs[addr.digest]
        if sha256(data) != addr.digest:
            raise TamperDetected(f"blob {addr.hex[:12]} does not match its address")
        return data

    def corrupt(self, addr: ContentAddress, bit: int) -> None:
        """Flip one bit of a stored blob in place (fault injection)."""
        with self._lock:
            data = bytearray(self._blobs[addr.digest])
            data[bit // 8] ^= 1 << (bit % 8)
            self._blobs[addr.digest] = bytes(data)

    def save(self, directory) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        with self._lock:
            for digest, data in self._blobs.items():
                (root / f"{digest.hex()}.blob").write_bytes(data)
            index = {d.hex(): sorted(p) for d, p in sorted(self._providers.items())}
        (root / "providers.json").write_text(json.dumps(index, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory, reachability: Reachability | None = None) -> BlobStore:
        root = Path(directory)
        store = cls(reachability)
        index = json.loads((root / "providers.json").read_text())
        for hexdigest, holders in index.items():
            digest = bytes.fromhex(hexdigest)
            # stored as-is; verification happens on get
            store._blobs[digest] = (root / f"{hexdigest}.blob").read_bytes()
            store._providers[digest] = set(holders)
        return store


@dataclass(frozen=True)
class Envelope:
    sender: str
    receiver: str
    ciphertext: bytes

    def to_json(self) -> dict:
        return {"sender": self.sender, "receiver": self.receiver, "ciphertext": self.ciphertext.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> Envelope:
        return cls(obj["sender"], obj["receiver"], bytes.fromhex(obj["ciphertext"]))


class Keyring:
    """Derives a symmetric key per ordered (sender, receiver) pair."""

    NONCE = 12

    def __init__(self, secret: bytes):
        if len(secret) < 16:
            raise ValueError("keyring secret must be at least 16 bytes")
        self._secret = secret

    def _key(self, sender: str, receiver: str) -> bytes:
        info = f"envelope|{sender}|{receiver}".encode()
        return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=info).derive(self._secret)

    def seal(self, sender: str, receiver: str, data: bytes) -> Envelope:
        if sender == receiver:
            raise ValueError("sender and receiver must differ")
        key = self._key(sender, receiver)
        # deterministic nonce: distinct plaintexts never share one under a key
        nonce = hashlib.sha256(key + data).digest()[: self.NONCE]
        aad = f"{sender}|{receiver}".encode()
        return Envelope(sender, receiver, nonce + AESGCM(key).encrypt(nonce, data, aad))

    def open(self, party: str, env: Envelope) -> bytes:
        if party not in (env.sender, env.receiver):
            raise AccessDenied(f"{party} is not a party to this envelope")
        key = self._key(env.sender, env.receiver)
        nonce, body = env.ciphertext[: self.NONCE], env.ciphertext[self.NONCE:]
        aad = f"{env.sender}|{env.receiver}".encode()
        try:
            return AESGCM(key).decrypt(nonce, body, aad)
        except InvalidTag:
            raise TamperDetected("envelope failed authentication") from None


def pack_bundle(sender: str, envelopes: list[Envelope]) -> bytes:
    """Serialize one sender's envelopes (one per receiver) into a single blob."""
    body = {"sender": sender, "envelopes": [e.to_json() for e in sorted(envelopes, key=lambda e: e.receiver)]}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def unpack_bundle(blob: bytes) -> tuple[str, dict[str, Envelope]]:
    try:
        body = json.loads(blob.decode())
        envs = [Envelope.from_json(e) for e in body["envelopes"]]
        sender = body["sender"]
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise StoreError(f"malformed bundle: {exc}") from None
    return sender, {e.receiver: e for e in envs}
