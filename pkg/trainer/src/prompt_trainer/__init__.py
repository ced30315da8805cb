"""prompt_trainer: contrastive prompt tuning for the detector's dense encoder."""

from .data import load_corpus, make_corpus
from .encoder import PromptedEncoder
from .export import content_digest, export_embeddings, serve_protocol, write_aqde
from .losses import two_stream_loss, default_pairs, nt_xent_loss
from .train import TuningConfig, TrainResult, robust_pair_similarity, token_sweep, train
from .views import PgdConfig, augment_pair, interleave_views, pgd_views

__all__ = [
    "TuningConfig",
    "PgdConfig",
    "PromptedEncoder",
    "TrainResult",
    "two_stream_loss",
    "augment_pair",
    "content_digest",
    "default_pairs",
    "export_embeddings",
    "interleave_views",
    "load_corpus",
    "make_corpus",
    "nt_xent_loss",
    "pgd_views",
    "robust_pair_similarity",
    "serve_protocol",
    "token_sweep",
    "train",
    "write_aqde",
]
