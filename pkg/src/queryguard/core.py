"""Domain types and the two similarity kernels everything else builds on.

Images, fingerprints and query records are immutable after construction;
the similarity kernels are pure functions, so everything here is safe for
arbitrary concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation

WINDOW_HASH = "window-hash"
PERCEPTUAL_BITS = "perceptual-bits"

DENSE = "dense"

_PRECISION_DTYPES = {"single": np.float32, "half": np.float16}


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImageTensor:
    """An H x W x C array of intensities in [0, 1], the unit of every query."""

    height: int
    width: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ContractViolation("image dimensions must be positive")
        if self.channels not in (1, 3):
            raise ContractViolation("channels must be 1 or 3")
        d = np.asarray(self.data, dtype=np.float64)
        if d.size != self.height * self.width * self.channels:
            raise ContractViolation(
                f"data length {d.size} != {self.height}x{self.width}x{self.channels}"
            )
        d = d.reshape(self.height, self.width, self.channels)
        if not np.all(np.isfinite(d)):
            raise ContractViolation("image contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ContractViolation("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _as_readonly(d))

    @classmethod
    def from_array(cls, a: np.ndarray) -> "ImageTensor":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise ContractViolation(f"expected HxWxC array, got shape {a.shape}")
        h, w, c = a.shape
        return cls(height=h, width=w, channels=c, data=a)

    @property
    def side(self) -> int:
        return max(self.height, self.width)


@dataclass(frozen=True)
class DenseEmbedding:
    """A unit-norm dense vector; normalization happens once, at construction.

    Half-precision embeddings are stored as 16-bit values but promoted to
    32-bit (and above) for arithmetic, so kernel semantics do not depend on
    the storage precision.
    """

    values: np.ndarray
    precision: str = "single"
    dim: int = field(default=0)

    def __post_init__(self):
        if self.precision not in _PRECISION_DTYPES:
            raise ContractViolation(f"unknown precision {self.precision!r}")
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size < 1:
            raise ContractViolation("embedding must be non-empty")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("embedding contains non-finite values")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ContractViolation("cannot normalize a zero embedding")
        dtype = _PRECISION_DTYPES[self.precision]
        stored = (v / norm).astype(dtype)
        # storage rounding can leave a residual; re-normalize in promoted
        # arithmetic until it stops helping
        for _ in range(2):
            check = float(np.linalg.norm(stored.astype(np.float64)))
            if abs(check - 1.0) <= 1e-4:
                break
            again = (stored.astype(np.float64) / check).astype(dtype)
            if np.array_equal(again, stored):
                break
            stored = again
        object.__setattr__(self, "values", _as_readonly(stored))
        object.__setattr__(self, "dim", int(stored.size))
        check = float(np.linalg.norm(stored.astype(np.float64)))
        # half precision cannot always reach 1e-4: coordinate rounding is
        # bounded by 2^-11 relative, which is the limit for worst-case inputs
        tol = 1e-4 if self.precision == "single" else 7.5e-4
        if abs(check - 1.0) > tol:
            raise ContractViolation(f"stored embedding norm {check} deviates from 1")

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)


@dataclass(frozen=True)
class HashSignature:
    """Hash fingerprint: a set of 64-bit window hashes or a fixed bit string.

    For the window-hash kind `entries` is kept sorted and deduplicated and its
    size never exceeds `budget`.  For the perceptual-bits kind `bits` has one
    0/1 byte per block, with length fixed by the image geometry.
    """

    kind: str
    entries: Optional[np.ndarray] = None
    bits: Optional[np.ndarray] = None
    budget: int = 50

    def __post_init__(self):
        if self.kind == WINDOW_HASH:
            if self.entries is None or self.bits is not None:
                raise ContractViolation("window-hash signature needs entries only")
            e = np.unique(np.asarray(self.entries, dtype=np.uint64))
            if e.size == 0:
                raise ContractViolation("window-hash signature must be non-empty")
            if self.budget < 1:
                raise ContractViolation("signature budget must be >= 1")
            if e.size > self.budget:
                raise ContractViolation(
                    f"signature size {e.size} exceeds budget {self.budget}"
                )
            object.__setattr__(self, "entries", _as_readonly(e))
        elif self.kind == PERCEPTUAL_BITS:
            if self.bits is None or self.entries is not None:
                raise ContractViolation("perceptual-bits signature needs bits only")
            b = np.asarray(self.bits, dtype=np.uint8).ravel()
            if b.size == 0:
                raise ContractViolation("bit string must be non-empty")
            if b.max(initial=0) > 1:
                raise ContractViolation("bits must be 0/1")
            object.__setattr__(self, "bits", _as_readonly(b))
        else:
            raise ContractViolation(f"unknown signature kind {self.kind!r}")

    @property
    def size(self) -> int:
        return int(self.entries.size if self.kind == WINDOW_HASH else self.bits.size)


@dataclass(frozen=True)
class Fingerprint:
    """Encoder output: exactly one of a dense embedding or a hash signature."""

    dense: Optional[DenseEmbedding] = None
    signature: Optional[HashSignature] = None

    def __post_init__(self):
        if (self.dense is None) == (self.signature is None):
            raise ContractViolation("exactly one fingerprint variant must be set")

    @property
    def kind(self) -> str:
        return DENSE if self.dense is not None else self.signature.kind


@dataclass(frozen=True)
class QueryRecord:
    """One user query: who sent it, in what order, and the image itself."""

    user_id: str
    seq: int
    image: ImageTensor
    timestamp_ms: int = 0

    def __post_init__(self):
        if not self.user_id:
            raise ContractViolation("user_id must be non-empty")
        if self.seq < 0:
            raise ContractViolation("seq must be non-negative")


def cosine_similarity(a: DenseEmbedding, b: DenseEmbedding) -> float:
    """Cosine similarity <a,b> / (|a||b|) of two dense embeddings.

    Arithmetic runs in float64 regardless of storage precision, with a single
    left-to-right dot product, so results are symmetric and bit-reproducible.
    The value lies in [-1, 1] up to ~1e-6 rounding and is not clamped.
    """
    if a.dim != b.dim:
        raise ContractViolation(f"dimension mismatch: {a.dim} != {b.dim}")
    av = a.as_float64()
    bv = b.as_float64()
    denom = float(np.linalg.norm(av)) * float(np.linalg.norm(bv))
    return float(np.dot(av, bv)) / denom


def window_hash_similarity(a: HashSignature, b: HashSignature) -> float:
    """|a & b| / denom for two window-hash signatures.

    denom is the signature budget, reduced to max(|a|, |b|) when both
    signatures are smaller than the budget (tiny images), which keeps the
    identity sim(s, s) = 1 without breaking symmetry.
    """
    inter = np.intersect1d(a.entries, b.entries, assume_unique=True).size
    denom = min(max(a.budget, b.budget), max(a.size, b.size))
    return inter / denom


def hash_similarity(a: HashSignature, b: HashSignature) -> float:
    """Similarity in [0, 1] between two hash signatures of the same kind.

    window-hash: fraction of shared hash entries (see window_hash_similarity).
    perceptual-bits: 1 - hamming distance / bit length.
    """
    if a.kind != b.kind:
        raise ContractViolation(f"kind mismatch: {a.kind} vs {b.kind}")
    if a.kind == WINDOW_HASH:
        return window_hash_similarity(a, b)
    if a.bits.size != b.bits.size:
        raise ContractViolation(
            f"bit length mismatch: {a.bits.size} != {b.bits.size}"
        )
    hamming = int(np.count_nonzero(a.bits != b.bits))
    return 1.0 - hamming / a.bits.size


def fingerprint_similarity(a: Fingerprint, b: Fingerprint) -> float:
    """Dispatch to the kernel matching the fingerprint kind."""
    if a.kind != b.kind:
        raise ContractViolation(f"kind mismatch: {a.kind} vs {b.kind}")
    if a.dense is not None:
        return cosine_similarity(a.dense, b.dense)
    return hash_similarity(a.signature, b.signature)
