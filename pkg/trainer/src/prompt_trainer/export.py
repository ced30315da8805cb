"""Bridge to the detector: AQDE exchange files and the round-trip protocol.

These speak the detector's external interfaces byte for byte; nothing here
imports the detector package.  Exports are single-threaded so re-exporting
the same directory yields a byte-identical file.
"""

from __future__ import annotations

import hashlib
import struct
import sys
from pathlib import Path

import numpy as np

AQDE_MAGIC = b"AQDE"


def image_wire_bytes(image: np.ndarray) -> bytes:
    """Raw image bytes: u32 height, u32 width, u8 channels, then f32 pixels."""
    image = np.asarray(image, dtype="<f4")
    h, w, c = image.shape
    return struct.pack("<IIB", h, w, c) + image.tobytes()


def content_digest(image: np.ndarray) -> bytes:
    return hashlib.sha256(image_wire_bytes(image)).digest()


def write_aqde(path, keys, vectors: np.ndarray, half: bool = False) -> None:
    vectors = np.asarray(vectors, dtype="<f2" if half else "<f4")
    dim = vectors.shape[1] if vectors.size else 0
    with open(path, "wb") as fh:
        fh.write(AQDE_MAGIC)
        fh.write(struct.pack("<IBIQ", 1, 1 if half else 0, dim, len(keys)))
        for key, vec in zip(keys, vectors):
            fh.write(key)
            fh.write(vec.tobytes())


def export_embeddings(encoder, image_dir, out_path) -> dict:
    """One AQDE record per readable image, keyed by content digest."""
    files = sorted(Path(image_dir).glob("*.npy"))
    keys, rows = [], []
    skipped = 0
    for f in files:
        try:
            image = np.load(f)
        except (OSError, ValueError):
            skipped += 1
            continue
        if image.ndim != 3 or not np.isfinite(image).all():
            skipped += 1
            continue
        image = image.astype(np.float32)
        keys.append(content_digest(image))
        rows.append(encoder.embed_numpy(image)[0])
        if skipped:
            pass
    if skipped:
        print(f"warning: skipped {skipped} unreadable images", file=sys.stderr)
    vectors = (np.stack(rows) if rows
               else np.empty((0, encoder.embed_dim), dtype=np.float32))
    write_aqde(out_path, keys, vectors)
    return {"exported": len(keys), "skipped": skipped}


def serve_protocol(encoder, stdin=None, stdout=None) -> int:
    """Round-trip protocol server: length-framed image in, f32 embedding out."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    served = 0
    while True:
        head = stdin.read(4)
        if not head:
            return served
        (length,) = struct.unpack("<I", head)
        payload = stdin.read(length)
        if len(payload) != length:
            raise IOError("truncated request")
        h, w, c = struct.unpack("<IIB", payload[:9])
        pixels = np.frombuffer(payload[9:], dtype="<f4").reshape(h, w, c)
        vector = encoder.embed_numpy(pixels.astype(np.float32))[0]
        stdout.write(np.asarray(vector, dtype="<f4").tobytes())
        stdout.flush()
        served += 1
