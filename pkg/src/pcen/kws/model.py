"""Context windows and a one-hidden-layer keyword classifier in plain numpy."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import EmptyOutputError, FormatError
from ..frontend import FeatureGram

CONTEXT_LEFT = 23
CONTEXT_RIGHT = 8


def context_windows(features, left: int = CONTEXT_LEFT, right: int = CONTEXT_RIGHT) -> np.ndarray:
    """Stack ``left + 1 + right`` frames around every centre that has full context.

    Returns an array of shape ``(T - left - right, (left + right + 1) * F)``;
    row ``i`` is centred on frame ``left + i``. No padding at the edges.
    """
    values = features.values if isinstance(features, FeatureGram) else np.asarray(features)
    span = left + right + 1
    n_frames = values.shape[0]
    if n_frames < span:
        raise EmptyOutputError(f"{n_frames} frames is fewer than one {span}-frame context window")
    windows = np.lib.stride_tricks.sliding_window_view(values, span, axis=0)
    # sliding_window_view puts the window axis last: (n, F, span) -> (n, span, F)
    return windows.transpose(0, 2, 1).reshape(n_frames - span + 1, span * values.shape[1])


def scatter_window_grad(grad_windows, n_frames, n_channels, left=CONTEXT_LEFT, right=CONTEXT_RIGHT):
    """Adjoint of :func:`context_windows`: fold window gradients back onto frames."""
    span = left + right + 1
    n = grad_windows.shape[0]
    grad = grad_windows.reshape(n, span, n_channels)
    out = np.zeros((n_frames, n_channels))
    for j in range(span):
        out[j:j + n] += grad[:, j]
    return out


def window_labels(n_frames, keyword_frames, left=CONTEXT_LEFT, right=CONTEXT_RIGHT) -> np.ndarray:
    """1 for windows that contain the whole keyword, else 0.

    ``keyword_frames`` is ``(first, last)`` frame index or None.
    """
    n = n_frames - left - right
    labels = np.zeros(max(n, 0), dtype=np.int64)
    if keyword_frames is not None and n > 0:
        first, last = keyword_frames
        centers = np.arange(left, left + n)
        labels[(centers - left <= first) & (last <= centers + right)] = 1
    return labels


def keyword_frames(span, hop, win):
    """Frames whose centre sample falls inside ``span = (first, last)``."""
    if span is None:
        return None
    first, last = span
    half = win // 2
    return max(0, -((half - first) // hop)), (last - half) // hop


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class ToyModel:
    """``input -> ReLU(hidden) -> 2 logits`` (class 1 is the keyword)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden: int = 64, seed: int = 0) -> "ToyModel":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, np.sqrt(2.0 / input_dim), (input_dim, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, np.sqrt(1.0 / hidden), (hidden, 2)),
            b2=np.zeros(2),
        )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "ToyModel":
        return ToyModel(*(p.copy() for p in self.params()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def logits(self, x):
        return np.maximum(x @ self.w1 + self.b1, 0.0) @ self.w2 + self.b2

    def posteriors(self, x) -> np.ndarray:
        """Keyword posterior for each row of ``x``."""
        return _softmax(self.logits(x))[:, 1]

    def loss(self, x, y, sample_weight=None) -> float:
        probs = _softmax(self.logits(x))
        nll = -np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))
        w = np.ones(len(y)) if sample_weight is None else sample_weight
        return float(np.sum(w * nll) / np.sum(w))

    def loss_and_grads(self, x, y, sample_weight=None):
        """Weighted mean cross-entropy, parameter gradients, and dL/dx."""
        pre = x @ self.w1 + self.b1
        hidden = np.maximum(pre, 0.0)
        probs = _softmax(hidden @ self.w2 + self.b2)
        n = len(y)
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        w = w / w.sum()
        nll = -np.log(np.maximum(probs[np.arange(n), y], 1e-300))
        loss = float(np.sum(w * nll))

        d_logits = probs.copy()
        d_logits[np.arange(n), y] -= 1.0
        d_logits *= w[:, None]
        d_w2 = hidden.T @ d_logits
        d_b2 = d_logits.sum(axis=0)
        d_hidden = (d_logits @ self.w2.T) * (pre > 0)
        d_w1 = x.T @ d_hidden
        d_b1 = d_hidden.sum(axis=0)
        d_x = d_hidden @ self.w1.T
        return loss, [d_w1, d_b1, d_w2, d_b2], d_x

    def sgd_update(self, grads, lr: float) -> None:
        for p, g in zip(self.params(), grads):
            p -= lr * g

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, w1=self.w1, b1=self.b1, w2=self.w2, b2=self.b2)

    @classmethod
    def load(cls, path) -> "ToyModel":
        try:
            with np.load(Path(path)) as data:
                return cls(data["w1"], data["b1"], data["w2"], data["b2"])
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"{path}: not a model checkpoint ({exc})") from None
