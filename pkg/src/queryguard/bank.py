"""Global embedding bank: append-only fingerprint store with max-similarity search.

Search is an exact linear scan.  Dense banks take a contiguous-matrix dot
product fast path; hash banks go through the packed-signature kernels.  The
interface would admit an approximate index, but none is provided.

Concurrency: appends are serialized by the owning detector; a search sees all
entries appended before it began and none after (the arrays grow append-only
and scans bound themselves by the entry count captured at entry).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .core import (
    DENSE,
    PERCEPTUAL_BITS,
    WINDOW_HASH,
    DenseEmbedding,
    Fingerprint,
    HashSignature,
)
from .encoders import AQDE_MAGIC
from .errors import BankFullError, ConfigError, ContractViolation, NoHistoryError

GLOBAL = "global"
PER_USER = "per-user"

NO_MATCH_SCORE = float("-inf")


@dataclass(frozen=True)
class BankConfig:
    scope: str = GLOBAL
    capacity: Optional[int] = None
    eviction: str = "none"
    precision: str = "single"

    def __post_init__(self):
        if self.scope not in (GLOBAL, PER_USER):
            raise ConfigError(f"unknown scope {self.scope!r}")
        if self.eviction not in ("none", "fifo"):
            raise ConfigError(f"unknown eviction {self.eviction!r}")
        if self.capacity is not None and self.capacity < 1:
            raise ConfigError("capacity must be >= 1 when set")
        if self.precision not in ("single", "half"):
            raise ConfigError(f"unknown precision {self.precision!r}")


@dataclass(frozen=True)
class BankEntry:
    """One stored query: fingerprint, provenance, and the output served for it."""

    fingerprint: Fingerprint
    user_id: str
    seq: int
    cached_output: object = None
    insert_index: int = -1

    def with_index(self, idx: int) -> "BankEntry":
        return BankEntry(
            fingerprint=self.fingerprint,
            user_id=self.user_id,
            seq=self.seq,
            cached_output=self.cached_output,
            insert_index=idx,
        )


class EmbeddingBank:
    """Append-only store of fingerprints of one kind, with linear-scan search."""

    def __init__(self, kind: str, config: Optional[BankConfig] = None,
                 dim: Optional[int] = None):
        if kind not in (DENSE, WINDOW_HASH, PERCEPTUAL_BITS):
            raise ConfigError(f"unknown bank kind {kind!r}")
        self.kind = kind
        self.config = config or BankConfig()
        self.dim = dim
        self._entries: list[BankEntry] = []
        self._next_index = 0
        self._evicted = 0
        # packed fingerprint storage, grown append-only
        self._dense: Optional[np.ndarray] = None     # (cap, dim) storage dtype
        self._sig_flat = np.empty(0, dtype=np.uint64)
        self._sig_offsets = [0]
        self._sig_budget: Optional[int] = None
        self._bits: Optional[np.ndarray] = None      # (cap, bit length) uint8
        self._count = 0
        # hash-kind fast path: signature bytes -> position of first occurrence.
        # A similarity of exactly 1.0 implies set equality, so an exact-dup hit
        # is always the scan's answer; usable only while positions are stable
        # (no eviction) and scope is global.
        self._exact = ({} if kind != DENSE and self.config.eviction == "none"
                       and self.config.scope == GLOBAL else None)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def size(self) -> int:
        return len(self._entries)

    def entries(self) -> list:
        return list(self._entries)

    # -- storage ------------------------------------------------------------

    def _dense_dtype(self):
        return np.float16 if self.config.precision == "half" else np.float32

    def _grow_dense(self, dim: int):
        if self._dense is None:
            self._dense = np.empty((16, dim), dtype=self._dense_dtype())
        elif self._count == self._dense.shape[0]:
            bigger = np.empty((2 * self._dense.shape[0], dim), dtype=self._dense_dtype())
            bigger[:self._count] = self._dense[:self._count]
            self._dense = bigger

    def _grow_bits(self, length: int):
        if self._bits is None:
            self._bits = np.empty((16, length), dtype=np.uint8)
        elif self._count == self._bits.shape[0]:
            bigger = np.empty((2 * self._bits.shape[0], length), dtype=np.uint8)
            bigger[:self._count] = self._bits[:self._count]
            self._bits = bigger

    def _check_kind(self, kind: str):
        if kind != self.kind:
            raise ContractViolation(f"fingerprint kind {kind!r} != bank kind {self.kind!r}")

    def _store_fingerprint(self, fp: Fingerprint):
        if self.kind == DENSE:
            emb = fp.dense
            if self.dim is None:
                self.dim = emb.dim
            elif emb.dim != self.dim:
                raise ContractViolation(f"embedding dim {emb.dim} != bank dim {self.dim}")
            self._grow_dense(self.dim)
            self._dense[self._count] = emb.values.astype(self._dense_dtype())
        elif self.kind == WINDOW_HASH:
            sig = fp.signature
            if self._sig_budget is None:
                self._sig_budget = sig.budget
            if self._sig_flat.size < self._sig_offsets[-1] + sig.size:
                bigger = np.empty(max(64, 2 * self._sig_flat.size + sig.size),
                                  dtype=np.uint64)
                bigger[:self._sig_offsets[-1]] = self._sig_flat[:self._sig_offsets[-1]]
                self._sig_flat = bigger
            start = self._sig_offsets[-1]
            self._sig_flat[start:start + sig.size] = sig.entries
            self._sig_offsets.append(start + sig.size)
        else:
            bits = fp.signature.bits
            if self.dim is None:
                self.dim = bits.size
            elif bits.size != self.dim:
                raise ContractViolation("bit length differs from bank's fixed length")
            self._grow_bits(self.dim)
            self._bits[self._count] = bits
        self._count += 1

    def _evict_oldest(self):
        # fifo keeps the most recent `capacity` entries; oldest leaves first
        self._entries.pop(0)
        self._evicted += 1
        if self.kind == DENSE:
            self._dense[:self._count - 1] = self._dense[1:self._count]
        elif self.kind == WINDOW_HASH:
            first = self._sig_offsets[1]
            used = self._sig_offsets[-1]
            self._sig_flat[:used - first] = self._sig_flat[first:used]
            self._sig_offsets = [o - first for o in self._sig_offsets[1:]]
        else:
            self._bits[:self._count - 1] = self._bits[1:self._count]
        self._count -= 1

    # -- operations ----------------------------------------------------------

    def append(self, entry: BankEntry) -> int:
        """Store an entry; returns its insert_index. May evict under fifo."""
        self._check_kind(entry.fingerprint.kind)
        cap = self.config.capacity
        if cap is not None and len(self._entries) >= cap:
            if self.config.eviction == "fifo":
                self._evict_oldest()
            else:
                raise BankFullError(f"bank at capacity {cap} with eviction disabled")
        idx = self._next_index
        self._next_index += 1
        self._store_fingerprint(entry.fingerprint)
        self._entries.append(entry.with_index(idx))
        if self._exact is not None:
            self._exact.setdefault(self._sig_key(entry.fingerprint),
                                   len(self._entries) - 1)
        return idx

    @staticmethod
    def _sig_key(fp: Fingerprint) -> bytes:
        sig = fp.signature
        if sig.kind == WINDOW_HASH:
            return sig.entries.tobytes()
        return sig.bits.tobytes()

    def _scope_mask(self, scope_user: Optional[str]) -> Optional[np.ndarray]:
        if self.config.scope == GLOBAL:
            return None
        if scope_user is None:
            raise ContractViolation("per-user bank search requires scope_user")
        return np.fromiter(
            (e.user_id == scope_user for e in self._entries),
            dtype=bool, count=len(self._entries),
        )

    def _all_scores(self, probe: Fingerprint) -> np.ndarray:
        n = len(self._entries)
        if self.kind == DENSE:
            matrix = self._dense[:n].astype(np.float32, copy=False)
            p = probe.dense.values.astype(np.float32, copy=False)
            return (matrix @ p).astype(np.float64)
        if self.kind == WINDOW_HASH:
            sig = probe.signature
            budget = max(self._sig_budget or sig.budget, sig.budget)
            offsets = np.asarray(self._sig_offsets, dtype=np.int64)
            return kernels.window_sig_scan(self._sig_flat, offsets, None,
                                           sig.entries, budget)
        return kernels.bit_sig_scan(self._bits[:n], probe.signature.bits)

    def search_max(self, probe: Fingerprint, scope_user: Optional[str] = None):
        """Maximum similarity over in-scope entries, ties to smallest insert_index.

        Returns (score, entry); (-inf, None) when the scope is empty.  Equal to
        a brute-force linear scan by construction.
        """
        self._check_kind(probe.kind)
        if not self._entries:
            return NO_MATCH_SCORE, None
        if self._exact is not None:
            pos = self._exact.get(self._sig_key(probe))
            if pos is not None:
                return 1.0, self._entries[pos]
        scores = self._all_scores(probe)
        mask = self._scope_mask(scope_user)
        if mask is not None:
            if not mask.any():
                return NO_MATCH_SCORE, None
            scores = np.where(mask, scores, NO_MATCH_SCORE)
        best = int(np.argmax(scores))  # first max <=> smallest insert_index
        return float(scores[best]), self._entries[best]

    def knn_mean_distance(self, probe: DenseEmbedding, k: int, scope_user: str) -> float:
        """Mean L2 distance from the probe to its k nearest same-user entries."""
        if self.kind != DENSE:
            raise ContractViolation("knn_mean_distance requires a dense bank")
        if k < 1:
            raise ContractViolation("k must be >= 1")
        rows = [i for i, e in enumerate(self._entries) if e.user_id == scope_user]
        if not rows:
            raise NoHistoryError(f"no history for user {scope_user!r}")
        matrix = self._dense[np.asarray(rows)].astype(np.float64)
        dists = np.linalg.norm(matrix - probe.as_float64()[None, :], axis=1)
        if dists.size > k:
            dists = np.partition(dists, k - 1)[:k]
        return float(dists.mean())

    def user_history_count(self, user_id: str) -> int:
        return sum(1 for e in self._entries if e.user_id == user_id)


# ---------------------------------------------------------------------------
# storage model
# ---------------------------------------------------------------------------

_BYTES_PER_VALUE = {"single": 4, "half": 2}


@dataclass(frozen=True)
class StorageEstimate:
    total_bytes: int
    gib: float
    bytes_per_embedding: int


def storage_estimate(users: int, queries_per_user: int, dim: int,
                     precision: str = "single") -> StorageEstimate:
    """Bytes (and GiB, 2^30 divisor) needed to store every user's embeddings."""
    if min(users, queries_per_user, dim) < 1:
        raise ContractViolation("all storage inputs must be >= 1")
    if precision not in _BYTES_PER_VALUE:
        raise ContractViolation(f"unknown precision {precision!r}")
    per_value = _BYTES_PER_VALUE[precision]
    total = users * queries_per_user * dim * per_value
    return StorageEstimate(
        total_bytes=total,
        gib=total / 2**30,
        bytes_per_embedding=dim * per_value,
    )


# ---------------------------------------------------------------------------
# persistence (AQDE container, version 2, with a metadata trailer)
# ---------------------------------------------------------------------------

def _serialize_output(out) -> bytes:
    if out is None:
        return b""
    probs = getattr(out, "probs", None)
    label = int(getattr(out, "label"))
    if probs is None:
        return struct.pack("<BiI", 0, label, 0)
    p = np.asarray(probs, dtype="<f4")
    return struct.pack("<BiI", 1, label, p.size) + p.tobytes()


def _deserialize_output(raw: bytes):
    from .target import ModelOutput

    if not raw:
        return None
    has_probs, label, n = struct.unpack("<BiI", raw[:9])
    if not has_probs:
        return ModelOutput(probs=None, label=label)
    probs = np.frombuffer(raw[9:9 + 4 * n], dtype="<f4").astype(np.float64)
    return ModelOutput(probs=probs, label=label)


def save_bank(bank: EmbeddingBank, path) -> None:
    """Persist a bank: AQDE records plus a per-entry metadata trailer (v2)."""
    n = len(bank._entries)
    if bank.kind == DENSE:
        dtype_code = 1 if bank.config.precision == "half" else 0
        dim = bank.dim or 0
        width = 2 if dtype_code else 4
    elif bank.kind == WINDOW_HASH:
        dtype_code = 2
        dim = bank._sig_budget or 0
        width = 8
    else:
        dtype_code = 3
        dim = bank.dim or 0
        width = 1
    with open(path, "wb") as fh:
        fh.write(AQDE_MAGIC)
        fh.write(struct.pack("<IBIQ", 2, dtype_code, dim, n))
        for i, entry in enumerate(bank._entries):
            fp = entry.fingerprint
            if bank.kind == DENSE:
                values = bank._dense[i].tobytes()
                key_src = values
            elif bank.kind == WINDOW_HASH:
                sig = fp.signature
                padded = np.full(dim, np.uint64(0xFFFFFFFFFFFFFFFF), dtype="<u8")
                padded[:sig.size] = sig.entries
                values = padded.tobytes()
                key_src = sig.entries.tobytes()
            else:
                values = fp.signature.bits.astype("<u1").tobytes()
                key_src = values
            fh.write(hashlib.sha256(key_src).digest())
            assert len(values) == dim * width
            fh.write(values)
        for entry in bank._entries:
            uid = entry.user_id.encode()
            out = _serialize_output(entry.cached_output)
            fh.write(struct.pack("<H", len(uid)))
            fh.write(uid)
            fh.write(struct.pack("<Q", entry.seq))
            fh.write(struct.pack("<I", len(out)))
            fh.write(out)


def load_bank(path, config: Optional[BankConfig] = None) -> EmbeddingBank:
    """Rebuild a bank from a v2 file.

    Insert order is preserved; insert indexes are reassigned densely from 0
    (eviction history does not survive a round trip).
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != AQDE_MAGIC:
            raise ContractViolation(f"bad magic {magic!r}")
        version, dtype_code, dim, count = struct.unpack("<IBIQ", fh.read(17))
        if version != 2:
            raise ContractViolation(f"expected bank file version 2, got {version}")
        widths = {0: 4, 1: 2, 2: 8, 3: 1}
        if dtype_code not in widths:
            raise ContractViolation(f"unknown dtype code {dtype_code}")
        raw_values = []
        for _ in range(count):
            fh.read(32)  # content key, informational
            raw_values.append(fh.read(dim * widths[dtype_code]))
        metadata = []
        for _ in range(count):
            (ulen,) = struct.unpack("<H", fh.read(2))
            uid = fh.read(ulen).decode()
            (seq,) = struct.unpack("<Q", fh.read(8))
            (olen,) = struct.unpack("<I", fh.read(4))
            out = _deserialize_output(fh.read(olen))
            metadata.append((uid, seq, out))

    if dtype_code in (0, 1):
        kind = DENSE
        precision = "half" if dtype_code == 1 else "single"
        cfg = config or BankConfig(precision=precision)
        bank = EmbeddingBank(DENSE, cfg, dim=dim)
    elif dtype_code == 2:
        kind = WINDOW_HASH
        bank = EmbeddingBank(WINDOW_HASH, config or BankConfig())
    else:
        kind = PERCEPTUAL_BITS
        bank = EmbeddingBank(PERCEPTUAL_BITS, config or BankConfig(), dim=dim)

    for raw, (uid, seq, out) in zip(raw_values, metadata):
        if kind == DENSE:
            dtype = "<f2" if dtype_code == 1 else "<f4"
            emb = DenseEmbedding(
                values=np.frombuffer(raw, dtype=dtype).astype(np.float64),
                precision="half" if dtype_code == 1 else "single",
            )
            fp = Fingerprint(dense=emb)
        elif kind == WINDOW_HASH:
            vals = np.frombuffer(raw, dtype="<u8")
            vals = vals[vals != np.uint64(0xFFFFFFFFFFFFFFFF)]
            fp = Fingerprint(signature=HashSignature(
                kind=WINDOW_HASH, entries=vals, budget=dim))
        else:
            bits = np.frombuffer(raw, dtype="<u1")
            fp = Fingerprint(signature=HashSignature(kind=PERCEPTUAL_BITS, bits=bits))
        bank.append(BankEntry(fingerprint=fp, user_id=uid, seq=seq, cached_output=out))
    return bank
