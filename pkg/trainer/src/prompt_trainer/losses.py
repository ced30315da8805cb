"""Contrastive losses over paired views.

The normalized-temperature cross entropy runs over all 2N views of a batch;
for each ordered positive direction (i -> j) the denominator sums the
similarity exponentials over every other view k != i.  The adversarial-stream
loss is the same functional applied to adversarially perturbed views, and the
combined objective is their convex combination.
"""

from __future__ import annotations

import torch


def nt_xent_loss(embeddings: torch.Tensor, pairs, temperature: float) -> torch.Tensor:
    """Mean contrastive loss over ordered positive pairs.

    embeddings: (2N, d), unit-normalized rows.
    pairs: iterable of (i, j) index pairs; both directions are scored.
    """
    n_views = embeddings.shape[0]
    if n_views < 4:
        raise ValueError("need at least two pairs (four views) for negatives")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    sims = embeddings @ embeddings.T / temperature
    # exclude self-similarity from every denominator
    eye = torch.eye(n_views, dtype=torch.bool, device=embeddings.device)
    logits = sims.masked_fill(eye, float("-inf"))
    log_denom = torch.logsumexp(logits, dim=1)
    total = embeddings.new_zeros(())
    count = 0
    for i, j in pairs:
        total = total + (log_denom[i] - sims[i, j]) + (log_denom[j] - sims[j, i])
        count += 2
    return total / count


def two_stream_loss(clean_embeddings: torch.Tensor, adv_embeddings: torch.Tensor,
              pairs, alpha: float, temperature: float) -> torch.Tensor:
    """alpha * clean-stream loss + (1 - alpha) * adversarial-stream loss."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    clean = nt_xent_loss(clean_embeddings, pairs, temperature)
    adv = nt_xent_loss(adv_embeddings, pairs, temperature)
    return alpha * clean + (1.0 - alpha) * adv


def default_pairs(n_images: int):
    """View layout (2k, 2k+1) per source image."""
    return [(2 * k, 2 * k + 1) for k in range(n_images)]
