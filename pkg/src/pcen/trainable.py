"""Trainable PCEN layer with a hand-derived backward pass.

Positive parameters (alpha, delta, r) are stored as logs and exponentiated
in the forward pass, so plain SGD on the stored values can never make them
non-positive. The smoothing coefficients are fixed; what is learned is a
per-channel softmax mixture over the ``K`` smoother outputs.

The layer owns no loss: ``trainable_backward`` takes the gradient of some
scalar loss with respect to the output features and returns gradients for
every stored parameter (and optionally for the input energies).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from .errors import FormatError, ShapeError, TrainingError
from .frontend import (
    DEFAULT_EPS,
    FeatureGram,
    PcenParams,
    PerChannelSmoother,
    SmootherBank,
    _energy_values,
    _mix,
    _smooth_stack,
    softmax_weights,
)

STANDARD_SMOOTHERS = {
    1: (0.025,),
    2: (0.015, 0.08),
    4: (0.015, 0.02, 0.04, 0.08),
}

GROUPS = ("log_alpha", "log_delta", "log_r", "z", "energies")


def default_coefficients(n_smoothers: int) -> np.ndarray:
    if n_smoothers in STANDARD_SMOOTHERS:
        return np.array(STANDARD_SMOOTHERS[n_smoothers])
    return np.geomspace(0.015, 0.08, n_smoothers)


@dataclass(eq=False)
class TrainablePcen:
    log_alpha: np.ndarray
    log_delta: np.ndarray
    log_r: np.ndarray
    z: np.ndarray
    coefficients: np.ndarray
    eps: float = DEFAULT_EPS
    init: str = "first-frame"
    seed: Optional[int] = None
    step: int = 0

    def __post_init__(self):
        for name in ("log_alpha", "log_delta", "log_r", "z", "coefficients"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        n = self.log_alpha.shape
        if self.log_alpha.ndim != 1 or self.log_delta.shape != n or self.log_r.shape != n:
            raise ShapeError("log_alpha, log_delta and log_r must be equal-length vectors")
        if self.coefficients.ndim != 1 or self.coefficients.size < 1:
            raise ShapeError("need at least one smoothing coefficient")
        if self.z.shape != (self.coefficients.size, n[0]):
            raise ShapeError(f"z must have shape (K, F) = {(self.coefficients.size, n[0])}, got {self.z.shape}")

    @property
    def n_channels(self) -> int:
        return self.log_alpha.size

    @property
    def n_smoothers(self) -> int:
        return self.coefficients.size

    @property
    def alpha(self):
        return np.exp(self.log_alpha)

    @property
    def delta(self):
        return np.exp(self.log_delta)

    @property
    def r(self):
        return np.exp(self.log_r)

    @property
    def weights(self):
        return softmax_weights(self.z)

    def copy(self) -> "TrainablePcen":
        return replace(self)

    @classmethod
    def from_scalars(cls, n_channels, alpha=0.98, delta=2.0, r=0.5, coefficients=(0.025,), **kwargs):
        """Layer whose effective parameters are the given constants on every channel."""
        coefficients = np.atleast_1d(np.asarray(coefficients, dtype=np.float64))
        ones = np.ones(n_channels)
        return cls(
            log_alpha=np.log(alpha) * ones,
            log_delta=np.log(delta) * ones,
            log_r=np.log(r) * ones,
            z=np.zeros((coefficients.size, n_channels)),
            coefficients=coefficients,
            **kwargs,
        )


@dataclass
class ForwardCache:
    energies: np.ndarray
    smoothed_bank: np.ndarray  # (K, T, F)
    smoothed: np.ndarray  # (T, F)
    weights: np.ndarray  # (K, F)
    coefficients: np.ndarray  # (K, F), broadcast per channel
    alpha: np.ndarray
    delta: np.ndarray
    r: np.ndarray
    denom: np.ndarray  # eps + M
    ratio: np.ndarray  # E / denom**alpha
    pre_root: np.ndarray  # ratio + delta
    init: str = "first-frame"


@dataclass
class GradBundle:
    """Gradients in the unconstrained (stored) parameter domains."""

    d_log_alpha: np.ndarray
    d_log_delta: np.ndarray
    d_log_r: np.ndarray
    d_z: np.ndarray
    d_energies: Optional[np.ndarray] = None

    def __add__(self, other: "GradBundle") -> "GradBundle":
        if (self.d_energies is None) != (other.d_energies is None):
            raise ShapeError("cannot add bundles with and without energy gradients")
        return GradBundle(
            self.d_log_alpha + other.d_log_alpha,
            self.d_log_delta + other.d_log_delta,
            self.d_log_r + other.d_log_r,
            self.d_z + other.d_z,
            None if self.d_energies is None else self.d_energies + other.d_energies,
        )

    def scaled(self, factor: float) -> "GradBundle":
        return GradBundle(
            self.d_log_alpha * factor,
            self.d_log_delta * factor,
            self.d_log_r * factor,
            self.d_z * factor,
            None if self.d_energies is None else self.d_energies * factor,
        )

    def as_dict(self) -> Dict[str, np.ndarray]:
        out = {
            "log_alpha": self.d_log_alpha,
            "log_delta": self.d_log_delta,
            "log_r": self.d_log_r,
            "z": self.d_z,
        }
        if self.d_energies is not None:
            out["energies"] = self.d_energies
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.as_dict().values())

    @classmethod
    def zeros_like(cls, layer: TrainablePcen) -> "GradBundle":
        f, k = layer.n_channels, layer.n_smoothers
        return cls(np.zeros(f), np.zeros(f), np.zeros(f), np.zeros((k, f)))


def accumulate(bundles) -> GradBundle:
    """Sum bundles left to right (serial order is bit-deterministic)."""
    bundles = iter(bundles)
    total = next(bundles)
    for bundle in bundles:
        total = total + bundle
    return total


def smoother_bank(energies, layer: TrainablePcen) -> np.ndarray:
    """The ``(K, T, F)`` smoother outputs; parameter-free, so cacheable per clip."""
    values = _energy_values(energies)
    coefs = np.repeat(layer.coefficients[:, None], values.shape[1], axis=1)
    return _smooth_stack(values, coefs, layer.init)


def trainable_forward(energies, layer: TrainablePcen, smoothed_bank: np.ndarray = None):
    """PCEN with per-channel parameters and a learned smoother mixture.

    ``smoothed_bank`` may be passed in when it was computed earlier for the
    same energies (it does not depend on any trainable parameter).
    Returns ``(FeatureGram, ForwardCache)``.
    """
    values = _energy_values(energies)
    if values.shape[1] != layer.n_channels:
        raise ShapeError(f"layer has {layer.n_channels} channels, energies have {values.shape[1]}")
    coefs = np.repeat(layer.coefficients[:, None], values.shape[1], axis=1)
    if smoothed_bank is None:
        smoothed_bank = _smooth_stack(values, coefs, layer.init)
    elif smoothed_bank.shape != (layer.n_smoothers,) + values.shape:
        raise ShapeError(f"smoothed_bank shape {smoothed_bank.shape} does not match energies")
    weights = softmax_weights(layer.z)
    smoothed = _mix(weights, smoothed_bank)
    alpha, delta, r = layer.alpha, layer.delta, layer.r

    denom = layer.eps + smoothed
    ratio = values / denom**alpha
    pre_root = ratio + delta
    features = pre_root**r - delta**r

    cache = ForwardCache(
        energies=values,
        smoothed_bank=smoothed_bank,
        smoothed=smoothed,
        weights=weights,
        coefficients=coefs,
        alpha=alpha,
        delta=delta,
        r=r,
        denom=denom,
        ratio=ratio,
        pre_root=pre_root,
        init=layer.init,
    )
    return FeatureGram(features, "pcen"), cache


def _smoother_adjoint(grad_bank, coefs, init):
    """Backward scan through ``K`` IIR recursions; returns dL/dE of shape (T, F)."""
    n_frames = grad_bank.shape[1]
    keep = 1.0 - coefs
    d_energies = np.zeros(grad_bank.shape[1:])
    start = 1 if init == "first-frame" else 0
    acc = np.zeros(coefs.shape)
    for t in range(n_frames - 1, -1, -1):
        acc = grad_bank[:, t] + keep * acc
        if t >= start:
            d_energies[t] = (coefs * acc).sum(axis=0)
        else:
            d_energies[t] = acc.sum(axis=0)
    return d_energies


def trainable_backward(
    cache: ForwardCache,
    upstream,
    energies_grad: bool = True,
    through_smoother: bool = True,
) -> GradBundle:
    """Exact gradients of a scalar loss given ``upstream = dL/dfeatures``.

    Parameter gradients are summed over time. ``energies_grad`` toggles the
    ``d_energies`` output; ``through_smoother`` decides whether it includes
    the path through the IIR recursion (a backward scan over time) or
    treats the smoother output as a constant.
    """
    grad = np.asarray(upstream, dtype=np.float64)
    if grad.shape != cache.energies.shape:
        raise ShapeError(f"upstream shape {grad.shape} != feature shape {cache.energies.shape}")
    alpha, delta, r = cache.alpha, cache.delta, cache.r
    u, ratio, denom = cache.pre_root, cache.ratio, cache.denom

    u_pow_r = u**r
    u_pow_rm1 = u_pow_r / u
    d_r = (grad * u_pow_r * np.log(u)).sum(axis=0) - grad.sum(axis=0) * delta**r * np.log(delta)
    d_delta = r * ((grad * u_pow_rm1).sum(axis=0) - grad.sum(axis=0) * delta ** (r - 1.0))

    g_ratio = grad * r * u_pow_rm1
    d_alpha = -(g_ratio * ratio * np.log(denom)).sum(axis=0)
    g_smoothed = -g_ratio * alpha * ratio / denom

    # softmax mixture: M = sum_k w_k M_k
    g_weights = (g_smoothed[None] * cache.smoothed_bank).sum(axis=1)
    w = cache.weights
    d_z = w * (g_weights - (w * g_weights).sum(axis=0, keepdims=True))

    d_energies = None
    if energies_grad:
        d_energies = g_ratio / denom**alpha
        if through_smoother:
            grad_bank = w[:, None, :] * g_smoothed[None]
            d_energies = d_energies + _smoother_adjoint(grad_bank, cache.coefficients, cache.init)

    return GradBundle(
        d_log_alpha=d_alpha * alpha,
        d_log_delta=d_delta * delta,
        d_log_r=d_r * r,
        d_z=d_z,
        d_energies=d_energies,
    )


def sgd_step(layer: TrainablePcen, grads: GradBundle, lr: float) -> TrainablePcen:
    """One plain SGD update of every stored parameter; returns a new layer."""
    if not lr >= 0:
        raise TrainingError(f"learning rate must be >= 0, got {lr}")
    if not grads.is_finite():
        raise TrainingError("non-finite PCEN gradients")
    return replace(
        layer,
        log_alpha=layer.log_alpha - lr * grads.d_log_alpha,
        log_delta=layer.log_delta - lr * grads.d_log_delta,
        log_r=layer.log_r - lr * grads.d_log_r,
        z=layer.z - lr * grads.d_z,
        step=layer.step + 1,
    )


def _positive_normal(rng, mean, std, size):
    draw = rng.normal(mean, std, size)
    bad = draw <= 0
    while np.any(bad):
        draw[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = draw <= 0
    return draw


def init_trainable(
    n_channels: int,
    n_smoothers: int = 2,
    seed: int = 0,
    coefficients=None,
    eps: float = DEFAULT_EPS,
) -> TrainablePcen:
    """Random layer: alpha, delta, r ~ N(1, 0.1); logits ~ N(log(1/K), 0.1).

    Non-positive draws for alpha/delta/r are redrawn before taking logs.
    """
    if n_channels < 1 or n_smoothers < 1:
        raise ValueError("need n_channels >= 1 and n_smoothers >= 1")
    if coefficients is None:
        coefficients = default_coefficients(n_smoothers)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (n_smoothers,):
        raise ShapeError(f"expected {n_smoothers} coefficients, got {coefficients.shape}")
    rng = np.random.default_rng(seed)
    alpha = _positive_normal(rng, 1.0, 0.1, n_channels)
    delta = _positive_normal(rng, 1.0, 0.1, n_channels)
    r = _positive_normal(rng, 1.0, 0.1, n_channels)
    z = rng.normal(np.log(1.0 / n_smoothers), 0.1, (n_smoothers, n_channels))
    return TrainablePcen(
        log_alpha=np.log(alpha),
        log_delta=np.log(delta),
        log_r=np.log(r),
        z=z,
        coefficients=coefficients,
        eps=eps,
        seed=seed,
    )


def freeze(layer: TrainablePcen, onehot_tol: float = 1e-6) -> PcenParams:
    """Export the effective parameters as a fixed ``PcenParams``.

    When every channel's mixture weight is within ``onehot_tol`` of one-hot,
    the bank collapses to a single smoother with per-channel coefficients.
    That collapse is exact only for exactly one-hot weights; otherwise the
    smoother output moves by at most ``onehot_tol`` times the spread
    between smoother outputs.
    """
    weights = layer.weights
    if np.all(weights.max(axis=0) >= 1.0 - onehot_tol):
        smoother = PerChannelSmoother(layer.coefficients[weights.argmax(axis=0)])
    else:
        smoother = SmootherBank(layer.coefficients.copy(), layer.z.copy())
    return PcenParams(
        eps=layer.eps,
        alpha=layer.alpha,
        delta=layer.delta,
        r=layer.r,
        smoother=smoother,
        init=layer.init,
    )


@dataclass
class FiniteDiffReport:
    errors: Dict[str, float]
    tolerance: float = 1e-5
    through_smoother: bool = True
    worst: Dict[str, tuple] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.errors.values())

    def format(self) -> str:
        mode = "through smoother" if self.through_smoother else "smoother held fixed"
        lines = [f"finite-difference check ({mode}), tolerance {self.tolerance:.0e}"]
        lines.append(f"{'group':<10} {'max rel err':>12}  status")
        for name, err in self.errors.items():
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(f"{name:<10} {err:12.3e}  {status}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _error(analytic, numeric, floor=1e-8):
    diff = abs(analytic - numeric)
    if abs(analytic) < floor:
        return diff
    return diff / max(abs(analytic), abs(numeric))


def finite_diff_check(
    layer: TrainablePcen,
    energies,
    seed: int = 0,
    step: float = 1e-6,
    through_smoother: bool = True,
    tolerance: float = 1e-5,
    loss_weights=None,
    backward: Callable = trainable_backward,
) -> FiniteDiffReport:
    """Compare ``backward`` against central differences of a random linear loss.

    The loss is ``sum(W * features)`` with ``W`` standard normal from
    ``seed`` unless ``loss_weights`` is given. Each stored parameter and each
    energy is perturbed by ``+-step``. With ``through_smoother=False`` the
    energy perturbations leave the smoother output at its unperturbed value,
    matching what the analytic gradient claims in that mode.
    """
    values = _energy_values(energies)
    if loss_weights is None:
        loss_weights = np.random.default_rng(seed).standard_normal(values.shape)
    loss_weights = np.asarray(loss_weights, dtype=np.float64)

    _, cache = trainable_forward(values, layer)
    analytic = backward(cache, loss_weights, energies_grad=True, through_smoother=through_smoother)
    analytic = analytic.as_dict()
    frozen_bank = None if through_smoother else cache.smoothed_bank

    def features(lay, vals, bank=None):
        return trainable_forward(vals, lay, smoothed_bank=bank)[0].values

    def central(plus, minus):
        return float(np.sum(loss_weights * (plus - minus))) / (2.0 * step)

    errors, worst = {}, {}
    for name in ("log_alpha", "log_delta", "log_r", "z"):
        base = getattr(layer, name)
        group_err, where = 0.0, None
        for idx in np.ndindex(base.shape):
            shifted = []
            for sign in (1.0, -1.0):
                arr = base.copy()
                arr[idx] += sign * step
                shifted.append(features(replace(layer, **{name: arr}), values))
            err = _error(analytic[name][idx], central(*shifted))
            if err >= group_err:
                group_err, where = err, idx
        errors[name], worst[name] = group_err, where

    group_err, where = 0.0, None
    for idx in np.ndindex(values.shape):
        shifted = []
        for sign in (1.0, -1.0):
            arr = values.copy()
            arr[idx] += sign * step
            shifted.append(features(layer, arr, frozen_bank))
        err = _error(analytic["energies"][idx], central(*shifted))
        if err >= group_err:
            group_err, where = err, idx
    errors["energies"], worst["energies"] = group_err, where

    return FiniteDiffReport(errors, tolerance, through_smoother, worst)


def layer_to_dict(layer: TrainablePcen) -> dict:
    return {
        "format": "pcen-trainable",
        "version": 1,
        "log_alpha": layer.log_alpha.tolist(),
        "log_delta": layer.log_delta.tolist(),
        "log_r": layer.log_r.tolist(),
        "z": layer.z.tolist(),
        "coefficients": layer.coefficients.tolist(),
        "eps": layer.eps,
        "init": layer.init,
        "seed": layer.seed,
        "step": layer.step,
    }


def layer_from_dict(doc: dict) -> TrainablePcen:
    if doc.get("format") != "pcen-trainable" or doc.get("version") != 1:
        raise FormatError("not a pcen-trainable v1 checkpoint")
    try:
        return TrainablePcen(
            log_alpha=doc["log_alpha"],
            log_delta=doc["log_delta"],
            log_r=doc["log_r"],
            z=np.array(doc["z"], dtype=np.float64).reshape(len(doc["coefficients"]), -1),
            coefficients=doc["coefficients"],
            eps=doc["eps"],
            init=doc.get("init", "first-frame"),
            seed=doc.get("seed"),
            step=doc.get("step", 0),
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint missing key {exc}") from None


def save_layer(path, layer: TrainablePcen) -> None:
    Path(path).write_text(json.dumps(layer_to_dict(layer), indent=1) + "\n")


def load_layer(path) -> TrainablePcen:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint is not valid JSON: {exc}") from None
    return layer_from_dict(doc)
