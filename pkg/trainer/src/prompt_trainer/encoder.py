"""Frozen compact convolutional encoder with learnable prompt parameters.

The backbone never trains; the only learnable state is an additive input pad
parameterized by K rank-one components (the convolutional stand-in for K
prompt tokens — K=0 disables prompting entirely and the encoder degenerates
to the frozen backbone).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class PromptPad(nn.Module):
    """Rank-K additive input pad: sum_k u_k (x) v_k, one rank per token."""

    def __init__(self, height: int, width: int, channels: int, tokens: int,
                 init_scale: float = 0.05, generator: torch.Generator = None):
        super().__init__()
        self.tokens = tokens
        if tokens > 0:
            shape_u = (tokens, channels, height, 1)
            shape_v = (tokens, channels, 1, width)
            u = torch.randn(shape_u, generator=generator) * init_scale
            v = torch.randn(shape_v, generator=generator) * init_scale
            self.u = nn.Parameter(u)
            self.v = nn.Parameter(v)
        else:
            self.register_parameter("u", None)
            self.register_parameter("v", None)

    def pad(self) -> torch.Tensor:
        if self.tokens == 0:
            return torch.zeros(1)
        return (self.u * self.v).sum(dim=0)  # (C, H, W)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.tokens == 0:
            return x
        return x + self.pad().unsqueeze(0)


class ConvBackbone(nn.Module):
    """Small seeded conv net; weights are fixed at construction and frozen.

    No pooling: the toy corpus carries its class signal at pixel scale, so
    the conv map is flattened and projected instead of spatially averaged.
    """

    def __init__(self, height: int, width: int, channels: int = 3,
                 embed_dim: int = 64, hidden: int = 12, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv2d(channels, hidden, 3, padding=1)
        nn.init.kaiming_normal_(self.conv1.weight, generator=gen)
        nn.init.zeros_(self.conv1.bias)
        self.proj = nn.Linear(hidden * height * width, embed_dim, bias=False)
        nn.init.normal_(self.proj.weight, std=1.0 / (hidden * height * width) ** 0.5,
                        generator=gen)
        for p in self.parameters():
            p.requires_grad_(False)
        # reference features of a mid-gray image; subtracting them removes the
        # large constant component every input shares, so raw embeddings key
        # on image content rather than the operating point
        with torch.no_grad():
            ref = torch.full((1, channels, height, width), 0.5)
            self.register_buffer("ref_features", self._features(ref))

    def _features(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(torch.tanh(self.conv1(x)).flatten(1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._features(x) - self.ref_features  # (B, embed_dim)


class PromptedEncoder(nn.Module):
    """E(x, p): prompt pad, frozen backbone, unit-normalized embedding."""

    def __init__(self, height: int = 24, width: int = 24, channels: int = 3,
                 embed_dim: int = 64, tokens: int = 20, seed: int = 0):
        super().__init__()
        self.height, self.width, self.channels = height, width, channels
        self.embed_dim = embed_dim
        self.tokens = tokens
        self.seed = seed
        gen = torch.Generator().manual_seed(seed + 1)
        self.prompt = PromptPad(height, width, channels, tokens, generator=gen)
        self.backbone = ConvBackbone(height, width, channels, embed_dim, seed=seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.backbone(self.prompt(x))
        return F.normalize(z, dim=1)

    def prompt_parameters(self):
        return [p for p in self.prompt.parameters() if p is not None]

    def backbone_state_bytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        torch.save({k: v.clone() for k, v in self.backbone.state_dict().items()}, buf)
        return buf.getvalue()

    @torch.no_grad()
    def embed_numpy(self, images) -> "np.ndarray":
        """Float32 embeddings for an (N, H, W, C) array in [0, 1]."""
        import numpy as np

        x = torch.from_numpy(np.asarray(images, dtype=np.float32))
        if x.dim() == 3:
            x = x.unsqueeze(0)
        x = x.permute(0, 3, 1, 2).contiguous()
        was_training = self.training
        self.eval()
        z = self.forward(x)
        if was_training:
            self.train()
        return z.numpy().astype(np.float32)

    def save(self, path):
        torch.save({
            "geometry": (self.height, self.width, self.channels),
            "embed_dim": self.embed_dim,
            "tokens": self.tokens,
            "seed": self.seed,
            "state": self.state_dict(),
        }, path)

    @classmethod
    def load(cls, path) -> "PromptedEncoder":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        h, w, c = blob["geometry"]
        enc = cls(height=h, width=w, channels=c, embed_dim=blob["embed_dim"],
                  tokens=blob["tokens"], seed=blob["seed"])
        enc.load_state_dict(blob["state"])
        return enc
