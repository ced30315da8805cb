"""Deterministic toy victim classifiers and their synthetic data distribution.

The victims expose both a score oracle (probability vectors) and a decision
oracle (labels), plus exact input gradients for white-box checks.  Weights
are derived analytically from seeded class patterns, never trained, so every
number downstream is reproducible from the seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ImageTensor
from .errors import ContractViolation

AQTM_MAGIC = b"AQTM"

SOFTMAX_LINEAR = "softmax-linear"
MLP_1_HIDDEN = "mlp-1-hidden"

_KIND_CODES = {SOFTMAX_LINEAR: 0, MLP_1_HIDDEN: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class ModelOutput:
    """Probability vector (score oracle) and/or the predicted label."""

    label: int
    probs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if abs(float(p.sum()) - 1.0) > 1e-6 or p.min() < 0:
                raise ContractViolation("probs must be a probability vector")
            if int(np.argmax(p)) != self.label:
                raise ContractViolation("label must equal argmax(probs)")
            object.__setattr__(self, "probs", p)

    def label_only(self) -> "ModelOutput":
        return ModelOutput(label=self.label)


REFUSAL_LABEL = -1


def refusal_output() -> ModelOutput:
    """Marker served instead of a model output when a query is rejected."""
    return ModelOutput(label=REFUSAL_LABEL)


def is_refusal(out: ModelOutput) -> bool:
    return out.label == REFUSAL_LABEL and out.probs is None


@dataclass(frozen=True)
class BlobDataConfig:
    """Class-conditional pixel-sign patterns plus Gaussian noise, clipped to [0,1].

    Each class has a fixed seeded +-amplitude pattern around a 0.5 base; the
    pattern is white at tile scale, so block-mean perceptual hashes see only
    the per-image noise.  amplitude controls how many coordinated +-epsilon
    pixel flips an attack needs.
    """

    height: int = 24
    width: int = 24
    channels: int = 3
    num_classes: int = 10
    amplitude: float = 0.03
    noise: float = 0.18
    seed: int = 7

    @property
    def dim(self) -> int:
        return self.height * self.width * self.channels


class BlobDataset:
    """Sampler for the victim's data distribution."""

    def __init__(self, config: BlobDataConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        signs = rng.choice([-1.0, 1.0], size=(config.num_classes, config.dim))
        self.patterns = 0.5 + config.amplitude * signs

    def sample(self, rng: np.random.Generator, label: Optional[int] = None):
        """One (image, label) draw; continuous noise makes collisions impossible."""
        cfg = self.config
        if label is None:
            label = int(rng.integers(cfg.num_classes))
        flat = self.patterns[label] + cfg.noise * rng.standard_normal(cfg.dim)
        np.clip(flat, 0.0, 1.0, out=flat)
        image = ImageTensor(
            height=cfg.height, width=cfg.width, channels=cfg.channels, data=flat
        )
        return image, label

    def sample_batch(self, n: int, rng: np.random.Generator):
        return [self.sample(rng) for _ in range(n)]


@dataclass
class TargetModel:
    """Toy victim f(x): softmax over a linear or one-hidden-layer map.

    Probability outputs are non-negative and sum to 1 within 1e-6; label ties
    break toward the smallest class id.
    """

    kind: str
    weights: dict
    num_classes: int
    height: int
    width: int
    channels: int
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.height * self.width * self.channels

    # -- constructors --------------------------------------------------------

    @classmethod
    def nearest_centroid(cls, dataset: BlobDataset, gain: float = 4.5) -> "TargetModel":
        """Linear victim whose rows are the (scaled) class patterns.

        Equivalent to a nearest-centroid rule, which is Bayes-optimal for the
        blob distribution, so no training is needed.
        """
        cfg = dataset.config
        W = gain * dataset.patterns
        b = -0.5 * gain * np.einsum("cd,cd->c", dataset.patterns, dataset.patterns)
        return cls(
            kind=SOFTMAX_LINEAR,
            weights={"W": W, "b": b},
            num_classes=cfg.num_classes,
            height=cfg.height,
            width=cfg.width,
            channels=cfg.channels,
            seed=cfg.seed,
        )

    @classmethod
    def mlp_centroid(cls, dataset: BlobDataset, hidden: int = 64,
                     gain: float = 6.0, seed: int = 11) -> "TargetModel":
        """One-hidden-layer victim: tanh features, centroid readout."""
        cfg = dataset.config
        rng = np.random.default_rng(seed)
        W1 = rng.standard_normal((hidden, cfg.dim)) / np.sqrt(cfg.dim)
        b1 = np.zeros(hidden)
        feats = np.tanh(dataset.patterns @ W1.T + b1)
        W2 = gain * feats
        b2 = -0.5 * gain * np.einsum("ch,ch->c", feats, feats)
        return cls(
            kind=MLP_1_HIDDEN,
            weights={"W1": W1, "b1": b1, "W2": W2, "b2": b2},
            num_classes=cfg.num_classes,
            height=cfg.height,
            width=cfg.width,
            channels=cfg.channels,
            seed=seed,
        )

    # -- forward pass ---------------------------------------------------------

    def _flat(self, x) -> np.ndarray:
        if isinstance(x, ImageTensor):
            if (x.height, x.width, x.channels) != (self.height, self.width, self.channels):
                raise ContractViolation("image geometry does not match the model")
            return x.data.ravel()
        arr = np.asarray(x, dtype=np.float64)
        if arr.size != self.dim:
            raise ContractViolation(f"input size {arr.size} != model dim {self.dim}")
        return arr.ravel()

    def logits(self, x) -> np.ndarray:
        v = self._flat(x)
        if self.kind == SOFTMAX_LINEAR:
            return self.weights["W"] @ v + self.weights["b"]
        h = np.tanh(self.weights["W1"] @ v + self.weights["b1"])
        return self.weights["W2"] @ h + self.weights["b2"]

    def predict_proba(self, x) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def predict_label(self, x) -> int:
        return int(np.argmax(self.predict_proba(x)))

    def output(self, x, scores: bool = True) -> ModelOutput:
        probs = self.predict_proba(x)
        label = int(np.argmax(probs))
        return ModelOutput(label=label, probs=probs if scores else None)

    def loss_and_grad(self, x, y: int):
        """Cross-entropy loss and its exact gradient w.r.t. the input."""
        if not 0 <= y < self.num_classes:
            raise ContractViolation(f"label {y} out of range")
        v = self._flat(x)
        if self.kind == SOFTMAX_LINEAR:
            W = self.weights["W"]
            z = W @ v + self.weights["b"]
            z = z - z.max()
            e = np.exp(z)
            p = e / e.sum()
            loss = -float(np.log(max(p[y], 1e-300)))
            grad = W.T @ (p - np.eye(self.num_classes)[y])
        else:
            W1, b1 = self.weights["W1"], self.weights["b1"]
            W2, b2 = self.weights["W2"], self.weights["b2"]
            a = W1 @ v + b1
            h = np.tanh(a)
            z = W2 @ h + b2
            z = z - z.max()
            e = np.exp(z)
            p = e / e.sum()
            loss = -float(np.log(max(p[y], 1e-300)))
            dz = p - np.eye(self.num_classes)[y]
            dh = W2.T @ dz
            da = dh * (1.0 - h * h)
            grad = W1.T @ da
        shape = (self.height, self.width, self.channels)
        return loss, grad.reshape(shape)

    # -- serialization ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = sorted(self.weights.items())
        with open(path, "wb") as fh:
            fh.write(AQTM_MAGIC)
            fh.write(struct.pack(
                "<IBIIIIi", 1, _KIND_CODES[self.kind], self.num_classes,
                self.height, self.width, self.channels, self.seed,
            ))
            fh.write(struct.pack("<I", len(arrays)))
            for name, arr in arrays:
                encoded = name.encode()
                a = np.asarray(arr, dtype="<f4")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", a.ndim))
                for s in a.shape:
                    fh.write(struct.pack("<I", s))
                fh.write(a.tobytes())

    @classmethod
    def load(cls, path) -> "TargetModel":
        with open(path, "rb") as fh:
            if fh.read(4) != AQTM_MAGIC:
                raise ContractViolation("not a model weights file")
            version, kind_code, C, H, W, ch, seed = struct.unpack("<IBIIIIi", fh.read(25))
            if version != 1:
                raise ContractViolation(f"unsupported model file version {version}")
            (n_arrays,) = struct.unpack("<I", fh.read(4))
            weights = {}
            for _ in range(n_arrays):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode()
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(4 * count), dtype="<f4")
                weights[name] = data.reshape(shape).astype(np.float64)
        return cls(
            kind=_KIND_NAMES[kind_code], weights=weights, num_classes=C,
            height=H, width=W, channels=ch, seed=seed,
        )
