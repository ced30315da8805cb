"""The three interchangeable query encoders and the embedding exchange formats.

Two hash encoders run in-process; dense embeddings come from outside, either
preloaded from an AQDE exchange file keyed by image content digest or fetched
per query over a byte-exact round-trip protocol (stdio to a subprocess).
Learned encoders stay behind that file/protocol boundary.
"""

from __future__ import annotations

import hashlib
import struct
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .core import (
    PERCEPTUAL_BITS,
    WINDOW_HASH,
    DenseEmbedding,
    Fingerprint,
    HashSignature,
    ImageTensor,
)
from .errors import (
    ConfigError,
    ContractViolation,
    DegenerateInputError,
    LookupMissError,
    TransportError,
)

PIXEL_HASH = "pixel-hash"
PERCEPTUAL_HASH = "perceptual-hash"
EXTERNAL = "external"

AQDE_MAGIC = b"AQDE"

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)

ExternalSource = Union[str, Path, Sequence[str], None]


@dataclass(frozen=True)
class EncoderConfig:
    """Knobs for all encoder variants; unused fields are ignored per variant.

    window_size=None picks 20 for images with side <= 64 px and 50 otherwise.
    external_source is a path to an AQDE file, or an argv list for a protocol
    subprocess.
    """

    variant: str = PIXEL_HASH
    quantization_step: int = 50
    window_size: Optional[int] = None
    window_stride: int = 1
    signature_budget: int = 50
    block_size: int = 7
    external_source: ExternalSource = None

    def __post_init__(self):
        if self.variant not in (PIXEL_HASH, PERCEPTUAL_HASH, EXTERNAL):
            raise ConfigError(f"unknown encoder variant {self.variant!r}")
        if not 1 <= self.quantization_step <= 255:
            raise ConfigError("quantization_step must be in [1, 255]")
        if self.window_size is not None and self.window_size < 1:
            raise ConfigError("window_size must be >= 1")
        if self.window_stride < 1:
            raise ConfigError("window_stride must be >= 1")
        if self.signature_budget < 1:
            raise ConfigError("signature_budget must be >= 1")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")

    def effective_window(self, image: ImageTensor) -> int:
        if self.window_size is not None:
            return self.window_size
        return 20 if image.side <= 64 else 50

    @property
    def fingerprint_kind(self) -> str:
        if self.variant == PIXEL_HASH:
            return WINDOW_HASH
        if self.variant == PERCEPTUAL_HASH:
            return PERCEPTUAL_BITS
        return "dense"


def quantized_bytes(image: ImageTensor, step: int) -> np.ndarray:
    """Round intensities to 0-255 and floor-quantize them to the given step."""
    scaled = np.rint(image.data * 255.0).astype(np.uint8)
    return ((scaled // step) * step).astype(np.uint8)


def encode_pixel_hash(image: ImageTensor, cfg: EncoderConfig) -> HashSignature:
    """Sliding-window SHA fingerprint over the quantized flattened image.

    The signature is the `signature_budget` numerically smallest distinct
    low-64-bit window hashes, an order-independent set summary that is
    deterministic for a given image and config.
    """
    if cfg.variant != PIXEL_HASH:
        raise ContractViolation("config variant is not pixel-hash")
    window = cfg.effective_window(image)
    flat = quantized_bytes(image, cfg.quantization_step).ravel()
    if flat.size < window:
        raise DegenerateInputError(
            f"image has {flat.size} bytes, smaller than one window of {window}"
        )
    hashes = kernels.sha256_low64_windows(flat, window, cfg.window_stride)
    sig = kernels.smallest_k_distinct(hashes, cfg.signature_budget)
    return HashSignature(kind=WINDOW_HASH, entries=sig, budget=cfg.signature_budget)


def _grayscale(image: ImageTensor) -> np.ndarray:
    if image.channels == 1:
        return image.data[:, :, 0]
    return image.data @ _LUMA


def _mean_filter_3x3(g: np.ndarray) -> np.ndarray:
    padded = np.pad(g, 1, mode="edge")
    acc = np.zeros_like(g)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy:dy + g.shape[0], dx:dx + g.shape[1]]
    return acc / 9.0


def encode_perceptual_hash(image: ImageTensor, cfg: EncoderConfig) -> HashSignature:
    """Block-mean perceptual bits: grayscale, 3x3 mean filter, per-tile means.

    Bit i is 1 iff tile i's mean exceeds the global mean of all tile means
    (strict comparison, so a constant image hashes to all zeros).  Partial
    edge tiles are truncated.
    """
    if cfg.variant != PERCEPTUAL_HASH:
        raise ContractViolation("config variant is not perceptual-hash")
    b = cfg.block_size
    if image.height < b or image.width < b:
        raise DegenerateInputError(
            f"image {image.height}x{image.width} smaller than one {b}x{b} block"
        )
    g = _mean_filter_3x3(_grayscale(image))
    th, tw = image.height // b, image.width // b
    tiles = g[:th * b, :tw * b].reshape(th, b, tw, b)
    tile_means = tiles.mean(axis=(1, 3)).ravel()
    bits = (tile_means > tile_means.mean()).astype(np.uint8)
    return HashSignature(kind=PERCEPTUAL_BITS, bits=bits)


# ---------------------------------------------------------------------------
# image wire format and content digest
# ---------------------------------------------------------------------------

def image_to_bytes(image: ImageTensor) -> bytes:
    """Raw image bytes: height u32, width u32, channels u8, then f32 pixels (LE)."""
    header = struct.pack("<IIB", image.height, image.width, image.channels)
    return header + image.data.astype("<f4").tobytes()


def image_from_bytes(payload: bytes) -> ImageTensor:
    if len(payload) < 9:
        raise TransportError("image payload shorter than its header")
    h, w, c = struct.unpack("<IIB", payload[:9])
    expected = 9 + h * w * c * 4
    if len(payload) != expected:
        raise TransportError(f"image payload length {len(payload)} != {expected}")
    data = np.frombuffer(payload[9:], dtype="<f4").astype(np.float64)
    return ImageTensor(height=h, width=w, channels=c, data=data)


def content_digest(image: ImageTensor) -> bytes:
    """32-byte SHA-256 digest of the raw image bytes.

    Keyed purely by content, so identical images from different users collide
    on purpose (global-bank semantics).
    """
    return hashlib.sha256(image_to_bytes(image)).digest()


# ---------------------------------------------------------------------------
# AQDE embedding exchange file
# ---------------------------------------------------------------------------

_AQDE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f2")}
_AQDE_CODES = {np.dtype("<f4"): 0, np.dtype("<f2"): 1}


@dataclass
class EmbeddingTable:
    """Decoded contents of an AQDE exchange file."""

    dim: int
    dtype_code: int
    keys: list = field(default_factory=list)      # 32-byte digests
    vectors: Optional[np.ndarray] = None          # (count, dim) in file dtype

    @property
    def count(self) -> int:
        return len(self.keys)


def write_embedding_file(path, keys: Sequence[bytes], vectors: np.ndarray,
                         half: bool = False) -> None:
    """Write an AQDE v1 exchange file: digest-keyed dense embeddings."""
    vectors = np.atleast_2d(np.asarray(vectors))
    dtype = np.dtype("<f2") if half else np.dtype("<f4")
    vectors = vectors.astype(dtype)
    if len(keys) != vectors.shape[0]:
        raise ContractViolation("one key per vector required")
    dim = vectors.shape[1] if vectors.size else 0
    with open(path, "wb") as fh:
        fh.write(AQDE_MAGIC)
        fh.write(struct.pack("<IBIQ", 1, _AQDE_CODES[dtype], dim, len(keys)))
        for key, vec in zip(keys, vectors):
            if len(key) != 32:
                raise ContractViolation("keys must be 32-byte digests")
            fh.write(key)
            fh.write(vec.tobytes())


def read_embedding_header(fh):
    """Parse the fixed header; returns (table, count) with vectors unread."""
    magic = fh.read(4)
    if magic != AQDE_MAGIC:
        raise TransportError(f"bad magic {magic!r}, expected {AQDE_MAGIC!r}")
    version, dtype_code, dim, count = struct.unpack("<IBIQ", fh.read(17))
    if version not in (1, 2):
        raise TransportError(f"unsupported AQDE version {version}")
    if dtype_code not in _AQDE_DTYPES:
        raise TransportError(f"unsupported dtype code {dtype_code}")
    return EmbeddingTable(dim=dim, dtype_code=dtype_code), count


def read_embedding_file(path) -> EmbeddingTable:
    """Read an AQDE v1 exchange file back into memory."""
    with open(path, "rb") as fh:
        table, count = read_embedding_header(fh)
        dtype = _AQDE_DTYPES[table.dtype_code]
        vecs = np.empty((count, table.dim), dtype=dtype)
        for i in range(count):
            key = fh.read(32)
            if len(key) != 32:
                raise TransportError("truncated record key")
            raw = fh.read(table.dim * dtype.itemsize)
            if len(raw) != table.dim * dtype.itemsize:
                raise TransportError("truncated record values")
            table.keys.append(key)
            vecs[i] = np.frombuffer(raw, dtype=dtype)
        table.vectors = vecs
    return table


class FileEncoder:
    """Dense encoder backed by a preloaded AQDE file, keyed by content digest."""

    def __init__(self, path):
        self.path = Path(path)
        table = read_embedding_file(self.path)
        self.dim = table.dim
        self.precision = "half" if table.dtype_code == 1 else "single"
        self._index = {k: i for i, k in enumerate(table.keys)}
        self._vectors = table.vectors

    def embed(self, image: ImageTensor) -> np.ndarray:
        key = content_digest(image)
        idx = self._index.get(key)
        if idx is None:
            raise LookupMissError(
                f"digest {key.hex()[:16]}... not present in {self.path.name}"
            )
        return np.asarray(self._vectors[idx], dtype=np.float64)

    def close(self):
        pass


# ---------------------------------------------------------------------------
# embedding round-trip protocol (stdio)
# ---------------------------------------------------------------------------

def write_request(stream, image: ImageTensor) -> None:
    payload = image_to_bytes(image)
    stream.write(struct.pack("<I", len(payload)))
    stream.write(payload)
    stream.flush()


def read_request(stream) -> Optional[ImageTensor]:
    head = stream.read(4)
    if not head:
        return None
    if len(head) != 4:
        raise TransportError("truncated request length")
    (length,) = struct.unpack("<I", head)
    payload = stream.read(length)
    if len(payload) != length:
        raise TransportError("truncated request payload")
    return image_from_bytes(payload)


def write_response(stream, vector: np.ndarray) -> None:
    stream.write(np.asarray(vector, dtype="<f4").tobytes())
    stream.flush()


def read_response(stream, dim: int) -> np.ndarray:
    raw = stream.read(dim * 4)
    if len(raw) != dim * 4:
        raise TransportError("truncated response")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


class ProtocolEncoder:
    """Dense encoder that round-trips each image to a subprocess over stdio.

    Round trips are serialized per connection; run several instances for
    parallelism.
    """

    def __init__(self, command: Sequence[str], dim: int):
        self.command = list(command)
        self.dim = dim
        self.precision = "single"
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE
                )
            except OSError as exc:
                raise TransportError(f"cannot start encoder process: {exc}") from exc

    def embed(self, image: ImageTensor) -> np.ndarray:
        self._ensure()
        try:
            write_request(self._proc.stdin, image)
            return read_response(self._proc.stdout, self.dim)
        except (BrokenPipeError, TransportError) as exc:
            self.close()
            raise TransportError(f"encoder round trip failed: {exc}") from exc

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.wait(timeout=5)
            self._proc = None


def serve_protocol(embed_fn, stdin=None, stdout=None) -> int:
    """Run the server side of the round-trip protocol until EOF.

    embed_fn maps an ImageTensor to a 1-D float vector.  Returns the number
    of requests served.
    """
    import sys

    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    served = 0
    while True:
        image = read_request(stdin)
        if image is None:
            return served
        write_response(stdout, embed_fn(image))
        served += 1


def open_external(cfg: EncoderConfig, dim: Optional[int] = None):
    """Build the dense-encoder client described by cfg.external_source."""
    src = cfg.external_source
    if src is None:
        raise ConfigError("external encoder requires external_source")
    if isinstance(src, (str, Path)):
        return FileEncoder(src)
    if dim is None:
        raise ConfigError("protocol encoder requires an explicit dim")
    return ProtocolEncoder(src, dim=dim)


def encode_external(image: ImageTensor, cfg: EncoderConfig,
                    client=None, dim: Optional[int] = None) -> DenseEmbedding:
    """Fetch a dense embedding for the image and normalize it.

    A persistent client can be passed to amortize setup; otherwise one is
    opened (and, for protocol sources, torn down) per call.
    """
    if cfg.variant != EXTERNAL:
        raise ContractViolation("config variant is not external")
    own = client is None
    if own:
        client = open_external(cfg, dim=dim)
    try:
        vector = client.embed(image)
    finally:
        if own:
            client.close()
    return DenseEmbedding(values=vector, precision=getattr(client, "precision", "single"))


def encode(image: ImageTensor, cfg: EncoderConfig, client=None) -> Fingerprint:
    """Fingerprint an image with whichever encoder the config selects."""
    if cfg.variant == PIXEL_HASH:
        return Fingerprint(signature=encode_pixel_hash(image, cfg))
    if cfg.variant == PERCEPTUAL_HASH:
        return Fingerprint(signature=encode_perceptual_hash(image, cfg))
    return Fingerprint(dense=encode_external(image, cfg, client=client))

