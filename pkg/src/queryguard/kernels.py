"""Hot numeric kernels: batch window hashing and signature-bank scans.

Every kernel has two implementations: a numba ``@njit`` version and a pure
numpy/hashlib fallback.  The fallback is selected by setting the environment
variable ``QUERYGUARD_DISABLE_NUMBA=1`` before import (or automatically when
numba is not installed).  Both paths are bit-identical; ``benchmarks/`` and
the ``queryguard kernel-bench`` subcommand compare their speed.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

_DISABLE = os.environ.get("QUERYGUARD_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


USING_NUMBA = HAVE_NUMBA and not _DISABLE

# SHA-256 round constants.
_K256 = np.array([
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2], dtype=np.uint32)


def _n_windows(length: int, window: int, stride: int) -> int:
    if length < window:
        return 0
    return (length - window) // stride + 1


# ---------------------------------------------------------------------------
# pure-python / numpy implementations
# ---------------------------------------------------------------------------

def sha256_low64_windows_numpy(data: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Low 64 bits of SHA-256 for each sliding window over a byte buffer."""
    buf = np.ascontiguousarray(data, dtype=np.uint8).tobytes()
    n = _n_windows(len(buf), window, stride)
    out = np.empty(n, dtype=np.uint64)
    sha = hashlib.sha256
    for i in range(n):
        base = i * stride
        digest = sha(buf[base:base + window]).digest()
        out[i] = int.from_bytes(digest[24:32], "big")
    return out


def window_sig_scan_numpy(
    flat: np.ndarray, offsets: np.ndarray, sizes_unused: np.ndarray,
    probe: np.ndarray, budget: int,
) -> np.ndarray:
    """Per-entry window-hash similarity of a probe against a packed bank."""
    n = offsets.shape[0] - 1
    scores = np.empty(n, dtype=np.float64)
    psize = probe.shape[0]
    for i in range(n):
        entry = flat[offsets[i]:offsets[i + 1]]
        inter = np.intersect1d(entry, probe, assume_unique=True).size
        denom = min(budget, max(entry.size, psize))
        scores[i] = inter / denom
    return scores


def bit_sig_scan_numpy(bits: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """Per-entry bit similarity (1 - hamming/len) against a bank of bit rows."""
    if bits.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    mismatches = np.count_nonzero(bits != probe[None, :], axis=1)
    return 1.0 - mismatches / bits.shape[1]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _rotr(x, n):
        return ((x >> np.uint32(n)) | (x << np.uint32(32 - n))) & np.uint32(0xFFFFFFFF)

    @njit(cache=True)
    def _sha256_low64_windows_jit(data, window, stride, K):
        n = (data.shape[0] - window) // stride + 1
        out = np.empty(n, dtype=np.uint64)
        w = np.empty(64, dtype=np.uint32)
        bitlen = np.uint32(window * 8)
        for i in range(n):
            base = i * stride
            for j in range(16):
                w[j] = np.uint32(0)
            for j in range(window):
                w[j >> 2] |= np.uint32(data[base + j]) << np.uint32(24 - 8 * (j & 3))
            w[window >> 2] |= np.uint32(0x80) << np.uint32(24 - 8 * (window & 3))
            w[15] = bitlen
            for j in range(16, 64):
                x = w[j - 15]
                s0 = _rotr(x, 7) ^ _rotr(x, 18) ^ (x >> np.uint32(3))
                x = w[j - 2]
                s1 = _rotr(x, 17) ^ _rotr(x, 19) ^ (x >> np.uint32(10))
                w[j] = (w[j - 16] + s0 + w[j - 7] + s1) & np.uint32(0xFFFFFFFF)
            a = np.uint32(0x6a09e667); b = np.uint32(0xbb67ae85)
            c = np.uint32(0x3c6ef372); d = np.uint32(0xa54ff53a)
            e = np.uint32(0x510e527f); f = np.uint32(0x9b05688c)
            g = np.uint32(0x1f83d9ab); h = np.uint32(0x5be0cd19)
            for j in range(64):
                s1 = _rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)
                ch = (e & f) ^ ((~e) & g)
                t1 = (h + s1 + ch + K[j] + w[j]) & np.uint32(0xFFFFFFFF)
                s0 = _rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)
                maj = (a & b) ^ (a & c) ^ (b & c)
                t2 = (s0 + maj) & np.uint32(0xFFFFFFFF)
                h = g; g = f; f = e
                e = (d + t1) & np.uint32(0xFFFFFFFF)
                d = c; c = b; b = a
                a = (t1 + t2) & np.uint32(0xFFFFFFFF)
            h6 = (np.uint32(0x1f83d9ab) + g) & np.uint32(0xFFFFFFFF)
            h7 = (np.uint32(0x5be0cd19) + h) & np.uint32(0xFFFFFFFF)
            out[i] = (np.uint64(h6) << np.uint64(32)) | np.uint64(h7)
        return out

    def sha256_low64_windows_numba(data: np.ndarray, window: int, stride: int) -> np.ndarray:
        data = np.ascontiguousarray(data, dtype=np.uint8).ravel()
        if data.shape[0] < window:
            return np.empty(0, dtype=np.uint64)
        if window > 55:
            # multi-block messages are not needed for any supported config
            return sha256_low64_windows_numpy(data, window, stride)
        return _sha256_low64_windows_jit(data, window, stride, _K256)

    @njit(cache=True)
    def _window_sig_scan_jit(flat, offsets, probe, budget):
        n = offsets.shape[0] - 1
        scores = np.empty(n, dtype=np.float64)
        psize = probe.shape[0]
        for i in range(n):
            lo = offsets[i]
            hi = offsets[i + 1]
            a = lo
            b = 0
            inter = 0
            while a < hi and b < psize:
                va = flat[a]
                vb = probe[b]
                if va == vb:
                    inter += 1
                    a += 1
                    b += 1
                elif va < vb:
                    a += 1
                else:
                    b += 1
            size = hi - lo
            denom = size if size > psize else psize
            if denom > budget:
                denom = budget
            scores[i] = inter / denom
        return scores

    def window_sig_scan_numba(flat, offsets, sizes_unused, probe, budget):
        return _window_sig_scan_jit(flat, offsets, probe, budget)

    @njit(cache=True)
    def _bit_sig_scan_jit(bits, probe):
        n = bits.shape[0]
        length = bits.shape[1]
        scores = np.empty(n, dtype=np.float64)
        for i in range(n):
            mism = 0
            for j in range(length):
                if bits[i, j] != probe[j]:
                    mism += 1
            scores[i] = 1.0 - mism / length
        return scores

    def bit_sig_scan_numba(bits: np.ndarray, probe: np.ndarray) -> np.ndarray:
        if bits.shape[0] == 0:
            return np.empty(0, dtype=np.float64)
        return _bit_sig_scan_jit(bits, probe)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USING_NUMBA:
    sha256_low64_windows = sha256_low64_windows_numba
    window_sig_scan = window_sig_scan_numba
    bit_sig_scan = bit_sig_scan_numba
else:
    sha256_low64_windows = sha256_low64_windows_numpy
    window_sig_scan = window_sig_scan_numpy
    bit_sig_scan = bit_sig_scan_numpy


def smallest_k_distinct(values: np.ndarray, k: int) -> np.ndarray:
    """The k numerically smallest distinct values, sorted ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    distinct = np.unique(np.asarray(values, dtype=np.uint64))
    return distinct[:k].copy()


def warmup() -> None:
    """Force JIT compilation of the hot kernels (one-time cost)."""
    data = np.arange(64, dtype=np.uint8)
    sha256_low64_windows(data, 20, 1)
    flat = np.arange(10, dtype=np.uint64)
    offsets = np.array([0, 5, 10], dtype=np.int64)
    window_sig_scan(flat, offsets, None, flat[:5], 5)
    bit_sig_scan(np.zeros((2, 4), dtype=np.uint8), np.zeros(4, dtype=np.uint8))
