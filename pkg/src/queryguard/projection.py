"""Built-in reference dense encoder: a seeded sign-permute isometry.

Serves three roles without any learned weights in the loop: the server side
of the embedding round-trip protocol (``queryguard encode-serve``), the dense
encoder for harness experiments when no exchange file is supplied, and a
differentiable embedding for the white-box adaptive attack.

E(x) = normalize(s * (v - mean(v))[perm]) where v is the flattened image,
s is a seeded +-1 vector and perm a seeded permutation.  Mean removal kills
brightness; the sign-permute map is an exact isometry, so cosine similarity
in embedding space equals cosine similarity of the centered pixel vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DenseEmbedding, ImageTensor
from .errors import ContractViolation


@dataclass
class ProjectionEncoder:
    """Deterministic dense encoder for a fixed image geometry."""

    height: int
    width: int
    channels: int = 3
    seed: int = 0
    precision: str = "single"

    def __post_init__(self):
        self.dim = self.height * self.width * self.channels
        rng = np.random.default_rng(self.seed)
        self._signs = rng.choice(np.array([-1.0, 1.0]), size=self.dim)
        self._perm = rng.permutation(self.dim)

    def _check(self, image: ImageTensor):
        if (image.height, image.width, image.channels) != (
            self.height, self.width, self.channels,
        ):
            raise ContractViolation(
                f"image geometry {image.height}x{image.width}x{image.channels} "
                f"does not match encoder {self.height}x{self.width}x{self.channels}"
            )

    def raw(self, image: ImageTensor) -> np.ndarray:
        """Unnormalized embedding (float64)."""
        self._check(image)
        v = image.data.ravel()
        centered = v - v.mean()
        return self._signs * centered[self._perm]

    def embed(self, image: ImageTensor) -> np.ndarray:
        """Unit-norm embedding as float32, the protocol wire type."""
        z = self.raw(image)
        norm = np.linalg.norm(z)
        if norm == 0.0:
            # constant image: fall back to a fixed unit vector
            z = np.zeros(self.dim)
            z[0] = 1.0
            return z.astype(np.float32)
        return (z / norm).astype(np.float32)

    def embed_array(self, arr: np.ndarray) -> np.ndarray:
        """embed() for a plain HxWxC array already known to be in range."""
        v = np.asarray(arr, dtype=np.float64).ravel()
        centered = v - v.mean()
        z = self._signs * centered[self._perm]
        norm = np.linalg.norm(z)
        if norm == 0.0:
            z = np.zeros(self.dim)
            z[0] = 1.0
            return z.astype(np.float32)
        return (z / norm).astype(np.float32)

    def embedding(self, image: ImageTensor) -> DenseEmbedding:
        return DenseEmbedding(values=self.embed(image), precision=self.precision)

    def close(self):
        pass

    # -- gradients, used by the white-box adaptive attack ------------------

    def cosine_and_grad(self, image_arr: np.ndarray, ref: np.ndarray):
        """cos(E(x), ref) and its gradient w.r.t. the raw image array.

        ref must be a unit vector (e.g. a previous embed() output promoted to
        float64).  Works on plain arrays so attack code can iterate cheaply.
        """
        v = np.asarray(image_arr, dtype=np.float64).ravel()
        centered = v - v.mean()
        z = self._signs * centered[self._perm]
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0, np.zeros_like(v).reshape(image_arr.shape)
        ref = np.asarray(ref, dtype=np.float64)
        cos = float(np.dot(z, ref)) / nz
        # d cos / d z, then pull back through perm, signs and centering
        gz = ref / nz - (cos / nz**2) * z
        gv = np.empty_like(v)
        gv[self._perm] = self._signs * gz
        grad = gv - gv.mean()  # pull back through the mean-removal Jacobian
        return cos, grad.reshape(np.asarray(image_arr).shape)
