"""queryguard: stateful detection of query-based black-box adversarial attacks."""

from .bank import BankConfig, BankEntry, EmbeddingBank, StorageEstimate, storage_estimate
from .core import (
    DenseEmbedding,
    Fingerprint,
    HashSignature,
    ImageTensor,
    QueryRecord,
    cosine_similarity,
    fingerprint_similarity,
    hash_similarity,
)
from .detector import Detector, DetectorConfig, Verdict
from .encoders import (
    EncoderConfig,
    content_digest,
    encode,
    encode_external,
    encode_perceptual_hash,
    encode_pixel_hash,
    read_embedding_file,
    write_embedding_file,
)
from .projection import ProjectionEncoder
from .target import BlobDataConfig, BlobDataset, ModelOutput, TargetModel

__version__ = "0.1.0"

__all__ = [
    "BankConfig",
    "BankEntry",
    "BlobDataConfig",
    "BlobDataset",
    "DenseEmbedding",
    "Detector",
    "DetectorConfig",
    "EmbeddingBank",
    "EncoderConfig",
    "Fingerprint",
    "HashSignature",
    "ImageTensor",
    "ModelOutput",
    "ProjectionEncoder",
    "QueryRecord",
    "StorageEstimate",
    "TargetModel",
    "Verdict",
    "content_digest",
    "cosine_similarity",
    "encode",
    "encode_external",
    "encode_perceptual_hash",
    "encode_pixel_hash",
    "fingerprint_similarity",
    "hash_similarity",
    "read_embedding_file",
    "storage_estimate",
    "write_embedding_file",
]
