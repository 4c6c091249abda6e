"""Pairwise-mask secure aggregation.

Protocol, per round:

  1. every agent holds an X25519 key pair; the participant set is frozen
     before any masking (energy-based eligibility);
  2. each pair (i, j) derives a seed with
     SHA-256(shared_secret || round u32 LE || min(i,j) u16 LE || max(i,j) u16 LE);
  3. the seed's first 16 bytes key AES-128-CTR (zero nonce); the keystream,
     read as little-endian u32 words, is the pair mask;
  4. agent i quantizes its parameters to Z/2^32 (scale 2^16) and adds the
     mask for every peer j > i, subtracting it for every j < i;
  5. the aggregator sums all masked vectors mod 2^32 (masks cancel),
     lifts to signed integers and divides by N.

A round that does not receive exactly the committed set aborts without
releasing anything.
"""
from __future__ import annotations

import hashlib
import logging
import struct
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import KeyAgreementError, RoundAbort, SecAggError

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
SCALE_BITS = 16
SCALE = 1 << SCALE_BITS
MODULUS = 1 << 32
QUANT_LIMIT = float(1 << 15)
ROUND_HEADER = struct.Struct("<BIIH")


@dataclass(frozen=True)
class KeyPair:
    """X25519 key pair; the private key never appears in reprs or transcripts."""
    secret: X25519PrivateKey = field(repr=False)
    public: bytes

    def shared_secret(self, their_public: bytes) -> bytes:
        try:
            peer = X25519PublicKey.from_public_bytes(bytes(their_public))
            return self.secret.exchange(peer)
        except ValueError as e:
            raise KeyAgreementError(f"unusable X25519 public key: {e}") from e


def keygen(rng: np.random.Generator = None) -> KeyPair:
    """A fresh key pair from the OS entropy source.

    Passing ``rng`` derives the private scalar from that stream instead; only
    reproducible test fixtures do that, since anyone holding the seed can
    rebuild the key.
    """
    if rng is None:
        secret = X25519PrivateKey.generate()
    else:
        secret = X25519PrivateKey.from_private_bytes(rng.bytes(32))
    public = secret.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return KeyPair(secret=secret, public=public)


def pair_seed_from_shared(shared: bytes, round_number: int, a: int, b: int) -> bytes:
    lo, hi = sorted((a, b))
    return hashlib.sha256(shared + struct.pack("<IHH", round_number, lo, hi)).digest()


def derive_pair_seed(my_keys: KeyPair, their_public: bytes, round_number: int, me: int, them: int) -> bytes:
    """32-byte seed shared by ``me`` and ``them`` for one round; symmetric in the pair."""
    return pair_seed_from_shared(my_keys.shared_secret(their_public), round_number, me, them)


def expand_mask(seed: bytes, dim: int) -> np.ndarray:
    """``dim`` u32 words of AES-128-CTR keystream keyed by ``seed[:16]``."""
    if dim <= 0:
        raise SecAggError(f"mask dimension must be > 0, got {dim}")
    if len(seed) < 16:
        raise SecAggError("mask seed must be at least 16 bytes")
    encryptor = Cipher(algorithms.AES(seed[:16]), modes.CTR(bytes(16))).encryptor()
    stream = encryptor.update(bytes(4 * dim)) + encryptor.finalize()
    return np.frombuffer(stream, dtype="<u4").astype(np.uint32)


def quantize(x) -> np.ndarray:
    """Fixed point with 16 fractional bits, reduced into Z/2^32."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise SecAggError("cannot quantize non-finite parameters")
    if np.any(np.abs(x) >= QUANT_LIMIT):
        raise SecAggError(f"parameter magnitude must stay below 2^15, got {np.abs(x).max()}")
    return (np.rint(x * SCALE).astype(np.int64) % MODULUS).astype(np.uint32)


def centered_lift(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return np.where(v >= MODULUS // 2, v - MODULUS, v)


def dequantize(q) -> np.ndarray:
    return centered_lift(q).astype(np.float64) / SCALE


@dataclass(frozen=True)
class MaskedUpdate:
    agent: int
    round_number: int
    vector: np.ndarray

    def encode(self, participants: Sequence[int]) -> bytes:
        return encode_round(self.round_number, participants, self.vector)


def mask_update(w_q, me: int, peers: Iterable[int], seeds: Mapping[int, bytes],
                round_number: int = 0) -> MaskedUpdate:
    """Add the pair mask for each peer above ``me`` and subtract it for each peer below."""
    w = np.asarray(w_q, dtype=np.uint32)
    total = w.astype(np.uint64)
    for peer in sorted(set(peers) - {me}):
        if peer not in seeds:
            raise RoundAbort(round_number, f"agent {me} has no seed for peer {peer}")
        m = expand_mask(seeds[peer], w.size).astype(np.uint64)
        if peer > me:
            total = total + m
        else:
            total = total + (MODULUS - m)
        total &= MODULUS - 1
    return MaskedUpdate(agent=me, round_number=round_number, vector=total.astype(np.uint32))


def sum_mod(vectors: Sequence[np.ndarray]) -> np.ndarray:
    acc = np.zeros(len(vectors[0]), dtype=np.uint64)
    for v in vectors:
        acc = (acc + np.asarray(v, dtype=np.uint64)) & (MODULUS - 1)
    return acc.astype(np.uint32)


def average_from_sum(total, count: int) -> np.ndarray:
    return centered_lift(total).astype(np.float64) / count / SCALE


def encode_round(round_number: int, participants: Sequence[int], vector) -> bytes:
    """Wire frame: version, round, dim, count, sorted participant ids, then the vector."""
    ids = sorted(participants)
    vector = np.asarray(vector, dtype=np.uint32)
    header = ROUND_HEADER.pack(PROTOCOL_VERSION, round_number, vector.size, len(ids))
    return header + struct.pack(f"<{len(ids)}H", *ids) + vector.astype("<u4").tobytes()


def decode_round(blob: bytes):
    """Inverse of ``encode_round``: ``(round, participants, vector)``."""
    if len(blob) < ROUND_HEADER.size:
        raise SecAggError("frame shorter than its header")
    version, round_number, dim, count = ROUND_HEADER.unpack_from(blob)
    if version != PROTOCOL_VERSION:
        raise SecAggError(f"unsupported protocol version {version}")
    offset = ROUND_HEADER.size
    expected = offset + 2 * count + 4 * dim
    if len(blob) != expected:
        raise SecAggError(f"frame is {len(blob)} bytes, header implies {expected}")
    ids = list(struct.unpack_from(f"<{count}H", blob, offset))
    vector = np.frombuffer(blob, dtype="<u4", offset=offset + 2 * count, count=dim).astype(np.uint32)
    return round_number, ids, vector


def eligibility_filter(agents: Iterable[int], energies, threshold: float) -> List[int]:
    """Agents whose energy is strictly above ``threshold``."""
    energies = np.asarray(energies, dtype=np.float64)
    return [a for a in agents if energies[a] > threshold]


def fedavg(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Plain float average."""
    return np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), axis=0)


class RoundAggregator:
    """Round state owner. Submissions may arrive from several threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self.round_number: Optional[int] = None
        self.participants: List[int] = []
        self.dim = 0
        self._received: Dict[int, np.ndarray] = {}
        self.bytes_received = 0

    def open_round(self, round_number: int, participants: Iterable[int], dim: int):
        with self._lock:
            self.round_number = round_number
            self.participants = sorted(set(participants))
            self.dim = dim
            self._received = {}
            self.bytes_received = 0

    def submit(self, frame: bytes, sender: int):
        round_number, ids, vector = decode_round(frame)
        with self._lock:
            if self.round_number is None:
                raise RoundAbort(round_number, "no round is open")
            if round_number != self.round_number or ids != self.participants or vector.size != self.dim:
                raise RoundAbort(self.round_number, f"frame from agent {sender} does not match the committed round")
            if sender not in self.participants:
                raise RoundAbort(self.round_number, f"agent {sender} is not a committed participant")
            if sender in self._received:
                raise RoundAbort(self.round_number, f"agent {sender} submitted twice")
            self._received[sender] = vector
            self.bytes_received += len(frame)

    def close(self) -> np.ndarray:
        """Release the dequantized average, or abort if any participant is missing."""
        with self._lock:
            try:
                missing = [a for a in self.participants if a not in self._received]
                if missing:
                    raise RoundAbort(self.round_number, f"missing submissions from {missing}")
                total = sum_mod([self._received[a] for a in self.participants])
                return average_from_sum(total, len(self.participants))
            finally:
                self.round_number = None
                self._received = {}


def aggregate(updates: Sequence[MaskedUpdate], n_expected: int, round_number: int = 0) -> np.ndarray:
    """Sum masked updates mod 2^32 and return the dequantized mean."""
    agents = [u.agent for u in updates]
    if len(updates) != n_expected or len(set(agents)) != len(agents):
        raise RoundAbort(round_number, f"expected {n_expected} distinct submissions, got {len(updates)}")
    return average_from_sum(sum_mod([u.vector for u in updates]), n_expected)


def secure_round(params: Mapping[int, np.ndarray], keys: Mapping[int, KeyPair], round_number: int,
                 aggregator: RoundAggregator = None, drop: Iterable[int] = ()):
    """Run one full round in process over ``params`` keyed by participant id.

    Returns ``(average, bytes_on_wire)``. Agents in ``drop`` never submit,
    which aborts the round.
    """
    participants = sorted(params)
    if not participants:
        raise SecAggError("secure round needs at least one participant")
    aggregator = aggregator or RoundAggregator()
    dim = len(next(iter(params.values())))
    aggregator.open_round(round_number, participants, dim)
    dropped = set(drop)
    for me in participants:
        seeds = {peer: derive_pair_seed(keys[me], keys[peer].public, round_number, me, peer)
                 for peer in participants if peer != me}
        update = mask_update(quantize(params[me]), me, participants, seeds, round_number)
        if me in dropped:
            continue
        aggregator.submit(update.encode(participants), me)
    sent = aggregator.bytes_received
    return aggregator.close(), sent
