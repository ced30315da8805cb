"""Prompt tuning loop: the backbone stays frozen, only the pad learns.

SGD with cosine annealing on the combined contrastive objective; adversarial
views are regenerated against the current prompts every step, so the pad is
trained against its own worst case.  Deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import load_corpus
from .encoder import PromptedEncoder
from .losses import two_stream_loss, default_pairs
from .views import PgdConfig, augment_pair, interleave_views, pgd_views


@dataclass
class TuningConfig:
    tokens: int = 20
    temperature: float = 0.2
    alpha: float = 0.5
    pgd: PgdConfig = field(default_factory=PgdConfig)
    batch_size: int = 32
    epochs: int = 8
    learning_rate: float = 3.0
    seed: int = 0
    embed_dim: int = 64
    encoder_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tokens < 0:
            raise ValueError("tokens must be >= 0")

    @classmethod
    def from_json(cls, path) -> "TuningConfig":
        with open(path) as fh:
            raw = json.load(fh)
        pgd = PgdConfig(**raw.pop("pgd", {}))
        return cls(pgd=pgd, **raw)


@dataclass
class TrainResult:
    encoder: PromptedEncoder
    losses: list
    epoch_means: list
    backbone_unchanged: bool


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


def train(config: TuningConfig, dataset_path) -> TrainResult:
    images = load_corpus(dataset_path)
    if images.shape[0] == 0:
        raise ValueError(f"no usable images under {dataset_path}")
    if images.shape[0] < config.batch_size:
        raise ValueError("corpus smaller than one batch")
    torch.manual_seed(config.seed)
    h, w, c = images.shape[1:]
    encoder = PromptedEncoder(height=h, width=w, channels=c,
                              embed_dim=config.embed_dim, tokens=config.tokens,
                              seed=config.encoder_seed)
    frozen_before = encoder.backbone_state_bytes()
    data = torch.from_numpy(images).permute(0, 3, 1, 2).contiguous()

    params = encoder.prompt_parameters()
    losses: list[float] = []
    epoch_means: list[float] = []
    if params:
        optim = torch.optim.SGD(params, lr=config.learning_rate)
        schedule = torch.optim.lr_scheduler.CosineAnnealingLR(
            optim, T_max=max(1, config.epochs * (len(data) // config.batch_size)))
    else:
        optim = schedule = None  # K=0: nothing to learn

    aug_gen = torch.Generator().manual_seed(config.seed + 17)
    batch_rng = np.random.default_rng(config.seed + 29)
    pairs = default_pairs(config.batch_size)
    for epoch in range(config.epochs):
        epoch_losses = []
        for idx in _batches(len(data), config.batch_size, batch_rng):
            batch = data[idx]
            view_i, view_j = augment_pair(batch, aug_gen)
            clean_views = interleave_views(view_i, view_j)
            adv_views = pgd_views(encoder, clean_views, config.pgd,
                                  config.temperature)
            loss = two_stream_loss(encoder(clean_views), encoder(adv_views), pairs,
                             config.alpha, config.temperature)
            if optim is not None:
                optim.zero_grad()
                loss.backward()
                optim.step()
                schedule.step()
            losses.append(float(loss.detach()))
            epoch_losses.append(losses[-1])
        epoch_means.append(float(np.mean(epoch_losses)))
    return TrainResult(
        encoder=encoder,
        losses=losses,
        epoch_means=epoch_means,
        backbone_unchanged=encoder.backbone_state_bytes() == frozen_before,
    )


@torch.no_grad()
def _mean_pair_similarity(encoder, views_a: torch.Tensor, views_b: torch.Tensor) -> float:
    za = encoder(views_a)
    zb = encoder(views_b)
    return float((za * zb).sum(dim=1).mean())


def robust_pair_similarity(encoder: PromptedEncoder, images: np.ndarray,
                           pgd: PgdConfig, temperature: float = 0.5,
                           seed: int = 1234):
    """(benign-pair sim, adversarial-pair sim) on a held-out batch.

    benign: sim of the two clean views of each image.  adversarial: sim of a
    clean view and its own PGD counterpart, generated against this encoder,
    so the number measures how well the embedding space resists its own
    worst case.
    """
    torch.manual_seed(seed)
    data = torch.from_numpy(np.asarray(images, dtype=np.float32))
    data = data.permute(0, 3, 1, 2).contiguous()
    gen = torch.Generator().manual_seed(seed)
    view_i, view_j = augment_pair(data, gen)
    clean = interleave_views(view_i, view_j)
    adv = pgd_views(encoder, clean, pgd, temperature)
    benign = _mean_pair_similarity(encoder, clean[0::2], clean[1::2])
    adversarial = _mean_pair_similarity(encoder, clean, adv)
    return benign, adversarial


def token_sweep(dataset_path, tokens_list, base: TuningConfig, heldout: np.ndarray):
    """(K, benign-pair sim, adversarial-pair sim) rows for a token-count sweep."""
    rows = []
    for k in tokens_list:
        cfg = TuningConfig(**{**asdict_flat(base), "tokens": int(k)})
        result = train(cfg, dataset_path)
        benign, adv = robust_pair_similarity(result.encoder, heldout, cfg.pgd,
                                             cfg.temperature)
        rows.append((int(k), benign, adv))
    return rows


def asdict_flat(cfg: TuningConfig) -> dict:
    d = asdict(cfg)
    d["pgd"] = PgdConfig(**d["pgd"])
    return d
