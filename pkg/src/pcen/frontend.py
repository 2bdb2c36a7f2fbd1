"""Fixed (non-trainable) feature frontends: IIR smoothing, PCEN, log-mel.

PCEN maps linear filterbank energies ``E`` to::

    M(t) = (1 - s) * M(t-1) + s * E(t)
    PCEN(t) = (E(t) / (eps + M(t)) ** alpha + delta) ** r - delta ** r

per channel. ``M`` can come from one smoother, a per-channel coefficient
vector, or a softmax-weighted bank of smoothers with fixed coefficients.

Every smoother layout is lowered to a ``(K, F)`` coefficient plan so the
batch path, the streaming path, and the equivalent layouts all perform the
same floating point operations and agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .dsp import EnergyGram
from .errors import ParameterError, ShapeError

SMOOTHER_INITS = ("first-frame", "zero")
LOG_MODES = ("clipped", "stabilized")

# Default operating point for the fixed frontend.
DEFAULT_EPS = 1e-6
DEFAULT_S = 0.025
DEFAULT_ALPHA = 0.98
DEFAULT_DELTA = 2.0
DEFAULT_R = 0.5

# Per-channel layout learned for the two-smoother model: slow on even channels.
ALTERNATING_SLOW = 0.015
ALTERNATING_FAST = 0.08


def _check_coefficients(s, what="smoothing coefficient"):
    s = np.asarray(s, dtype=np.float64)
    if not np.all((s > 0) & (s <= 1)):
        raise ParameterError(f"{what} must lie in (0, 1], got {s}")
    return s


@dataclass(frozen=True)
class SingleSmoother:
    s: float = DEFAULT_S

    def __post_init__(self):
        _check_coefficients(self.s)


@dataclass(frozen=True, eq=False)
class PerChannelSmoother:
    s: np.ndarray

    def __post_init__(self):
        s = _check_coefficients(self.s)
        if s.ndim != 1:
            raise ShapeError(f"per-channel coefficients must be 1-D, got shape {s.shape}")
        object.__setattr__(self, "s", s)


@dataclass(frozen=True, eq=False)
class SmootherBank:
    """``K`` fixed smoothers mixed per channel by ``softmax(logits, axis=0)``."""

    coefficients: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        coefficients = _check_coefficients(self.coefficients)
        logits = np.asarray(self.logits, dtype=np.float64)
        if coefficients.ndim != 1 or coefficients.size == 0:
            raise ParameterError("a smoother bank needs at least one coefficient")
        if logits.ndim != 2 or logits.shape[0] != coefficients.size:
            raise ShapeError(
                f"logits must have shape (K={coefficients.size}, F), got {logits.shape}"
            )
        if not np.all(np.isfinite(logits)):
            raise ParameterError("smoother logits must be finite")
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "logits", logits)


Smoother = Union[SingleSmoother, PerChannelSmoother, SmootherBank]


@dataclass(eq=False)
class PcenParams:
    """PCEN hyperparameters; ``alpha``, ``delta`` and ``r`` are scalars or length-F.

    ``eps=0`` is accepted for exact gain-invariance experiments and then
    requires strictly positive smoothed energies. ``delta=0`` requires
    strictly positive energies in that channel.
    """

    eps: float = DEFAULT_EPS
    alpha: Union[float, np.ndarray] = DEFAULT_ALPHA
    delta: Union[float, np.ndarray] = DEFAULT_DELTA
    r: Union[float, np.ndarray] = DEFAULT_R
    smoother: Smoother = field(default_factory=SingleSmoother)
    init: str = "first-frame"

    def __post_init__(self):
        self.eps = float(self.eps)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        if not (np.isfinite(self.eps) and self.eps >= 0):
            raise ParameterError(f"eps must be finite and >= 0, got {self.eps}")
        for name in ("alpha", "delta", "r"):
            value = getattr(self, name)
            if value.ndim > 1:
                raise ShapeError(f"{name} must be a scalar or 1-D, got shape {value.shape}")
            if not np.all(np.isfinite(value)):
                raise ParameterError(f"{name} must be finite")
        if np.any(self.alpha < 0):
            raise ParameterError("alpha must be >= 0")
        if np.any(self.delta < 0):
            raise ParameterError("delta must be >= 0")
        if np.any(self.r <= 0):
            raise ParameterError("r must be > 0")
        if self.init not in SMOOTHER_INITS:
            raise ParameterError(f"init must be one of {SMOOTHER_INITS}, got {self.init!r}")
        self.n_channels  # consistency check

    @property
    def n_channels(self):
        """Channel count implied by per-channel fields, or None if all scalar."""
        sizes = {v.size for v in (self.alpha, self.delta, self.r) if v.ndim == 1}
        if isinstance(self.smoother, PerChannelSmoother):
            sizes.add(self.smoother.s.size)
        elif isinstance(self.smoother, SmootherBank):
            sizes.add(self.smoother.logits.shape[1])
        if len(sizes) > 1:
            raise ShapeError(f"per-channel parameters disagree on channel count: {sorted(sizes)}")
        return sizes.pop() if sizes else None

    def check_channels(self, n_channels: int) -> None:
        expected = self.n_channels
        if expected is not None and expected != n_channels:
            raise ShapeError(f"parameters are for {expected} channels, energies have {n_channels}")

    @classmethod
    def alternating(cls, n_channels: int, slow=ALTERNATING_SLOW, fast=ALTERNATING_FAST, **kwargs):
        """Single smoother whose coefficient alternates slow/fast across channels."""
        return cls(smoother=PerChannelSmoother(alternating_coefficients(n_channels, slow, fast)), **kwargs)


@dataclass
class FeatureGram:
    values: np.ndarray
    kind: str = "pcen"

    KINDS = ("pcen", "log-mel")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}, got {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class SmootherState:
    """Running smoother outputs, one row per smoother in the plan."""

    m: np.ndarray
    initialized: bool = False


def alternating_coefficients(n_channels, slow=ALTERNATING_SLOW, fast=ALTERNATING_FAST):
    """Even channels (0-based) get ``slow``, odd channels get ``fast``."""
    return np.where(np.arange(n_channels) % 2 == 0, slow, fast).astype(np.float64)


def one_hot_logits(choice, n_smoothers, gap=1000.0):
    """Logits whose softmax is exactly one-hot: ``exp(-gap)`` underflows to 0."""
    choice = np.asarray(choice)
    logits = np.full((n_smoothers, choice.size), -float(gap))
    logits[choice, np.arange(choice.size)] = 0.0
    return logits


def _energy_values(energies) -> np.ndarray:
    if isinstance(energies, EnergyGram):
        return energies.values
    values = np.asarray(energies, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"energies must be 2-D (T, F), got shape {values.shape}")
    return values


def softmax_weights(logits) -> np.ndarray:
    """Column-wise softmax over the smoother axis (axis 0)."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def _plan(smoother: Smoother, n_channels: int):
    """Lower a smoother spec to ``(coefficients (K, F), weights (K, F) or None)``."""
    if isinstance(smoother, SingleSmoother):
        return np.full((1, n_channels), float(smoother.s)), None
    if isinstance(smoother, PerChannelSmoother):
        if smoother.s.size != n_channels:
            raise ShapeError(f"{smoother.s.size} coefficients for {n_channels} channels")
        return smoother.s[None, :].copy(), None
    if isinstance(smoother, SmootherBank):
        if smoother.logits.shape[1] != n_channels:
            raise ShapeError(f"logits cover {smoother.logits.shape[1]} channels, need {n_channels}")
        coefs = np.repeat(smoother.coefficients[:, None], n_channels, axis=1)
        return coefs, softmax_weights(smoother.logits)
    raise TypeError(f"unknown smoother spec {type(smoother).__name__}")


def _smooth_stack(values, coefs, init):
    """Run ``K`` IIR smoothers at once: values (T, F), coefs (K, F) -> (K, T, F)."""
    if init not in SMOOTHER_INITS:
        raise ParameterError(f"init must be one of {SMOOTHER_INITS}, got {init!r}")
    n_frames = values.shape[0]
    keep = 1.0 - coefs
    out = np.empty((coefs.shape[0],) + values.shape)
    if n_frames == 0:
        return out
    if init == "first-frame":
        m = np.broadcast_to(values[0], coefs.shape).copy()
        start = 1
    else:
        m = np.zeros(coefs.shape)
        start = 0
    out[:, 0] = m
    for t in range(start, n_frames):
        m = keep * m + coefs * values[t]
        out[:, t] = m
    return out


def _mix(weights, stack):
    """``sum_k weights[k] * stack[k]`` with a fixed left-to-right order."""
    if weights is None:
        return stack[0]
    total = weights[0] * stack[0]
    for k in range(1, stack.shape[0]):
        total = total + weights[k] * stack[k]
    return total


def iir_smooth(energies, s, init: str = "first-frame") -> np.ndarray:
    """First-order IIR smoothing along time, per channel.

    ``s`` is a scalar or a length-F vector in (0, 1]. With ``"first-frame"``
    init ``M(0) = E(0)``; with ``"zero"`` the state before frame 0 is zero,
    so ``M(0) = s * E(0)``.
    """
    values = _energy_values(energies)
    s = _check_coefficients(s)
    if s.ndim > 1 or (s.ndim == 1 and s.size != values.shape[1]):
        raise ShapeError(f"s must be scalar or length {values.shape[1]}, got shape {s.shape}")
    coefs = np.broadcast_to(s, (1, values.shape[1])).copy()
    return _smooth_stack(values, coefs, init)[0]


def combine_smoothers(energies, coefficients, logits, init: str = "first-frame") -> np.ndarray:
    """Per-channel convex combination of ``K`` smoothers, weights ``softmax(logits)``."""
    values = _energy_values(energies)
    coefficients = np.atleast_1d(np.asarray(coefficients, dtype=np.float64))
    if coefficients.size == 0:
        raise ParameterError("combine_smoothers needs at least one coefficient")
    bank = SmootherBank(coefficients, logits)
    coefs, weights = _plan(bank, values.shape[1])
    return _mix(weights, _smooth_stack(values, coefs, init))


def _compress(values, smoothed, params: PcenParams):
    if params.eps == 0 and np.any(smoothed <= 0):
        raise ParameterError("eps=0 requires strictly positive smoothed energies")
    zero_delta = np.broadcast_to(params.delta == 0, values.shape[1:])
    if np.any(zero_delta) and np.any(values[:, zero_delta] <= 0):
        raise ParameterError("delta=0 requires strictly positive energies in that channel")
    ratio = values / (params.eps + smoothed) ** params.alpha
    return (ratio + params.delta) ** params.r - params.delta ** params.r


def pcen_compress(energies, smoothed, params: PcenParams) -> FeatureGram:
    """Apply AGC and root compression given a precomputed smoother output."""
    values = _energy_values(energies)
    smoothed = np.asarray(smoothed, dtype=np.float64)
    if smoothed.shape != values.shape:
        raise ShapeError(f"smoothed shape {smoothed.shape} != energies shape {values.shape}")
    if np.any(smoothed < 0):
        raise ParameterError("smoothed energies must be non-negative")
    params.check_channels(values.shape[1])
    return FeatureGram(_compress(values, smoothed, params), "pcen")


def smoothed_energy(energies, params: PcenParams) -> np.ndarray:
    """The combined smoother output ``M`` that ``pcen_forward`` would use."""
    values = _energy_values(energies)
    params.check_channels(values.shape[1])
    coefs, weights = _plan(params.smoother, values.shape[1])
    return _mix(weights, _smooth_stack(values, coefs, params.init))


def pcen_forward(energies, params: PcenParams = None) -> FeatureGram:
    """Full PCEN frontend: smoothing (any layout) followed by compression."""
    params = PcenParams() if params is None else params
    values = _energy_values(energies)
    return pcen_compress(values, smoothed_energy(values, params), params)


def log_mel(energies, offset: float = 0.1, mode: str = "stabilized") -> FeatureGram:
    """Static log compression: ``log(E + offset)`` or ``log(max(offset, E))``."""
    if not offset > 0:
        raise ParameterError(f"offset must be > 0, got {offset}")
    values = _energy_values(energies)
    if mode == "stabilized":
        out = np.log(values + offset)
    elif mode == "clipped":
        out = np.log(np.maximum(offset, values))
    else:
        raise ParameterError(f"mode must be one of {LOG_MODES}, got {mode!r}")
    return FeatureGram(out, "log-mel")


class StreamHandle:
    """Causal frame-by-frame PCEN; owns mutable smoother state.

    Not safe for concurrent stepping from several threads; independent
    handles share nothing.
    """

    def __init__(self, params: PcenParams, n_channels: int):
        params.check_channels(n_channels)
        self.params = params
        self.n_channels = n_channels
        self._coefs, self._weights = _plan(params.smoother, n_channels)
        self._keep = 1.0 - self._coefs
        self.state = SmootherState(np.zeros(self._coefs.shape), initialized=False)

    def step(self, energy_frame) -> np.ndarray:
        frame = np.asarray(energy_frame, dtype=np.float64)
        if frame.shape != (self.n_channels,):
            raise ShapeError(f"expected a frame of shape ({self.n_channels},), got {frame.shape}")
        state = self.state
        if not state.initialized and self.params.init == "first-frame":
            state.m = np.broadcast_to(frame, self._coefs.shape).copy()
        else:
            state.m = self._keep * state.m + self._coefs * frame
        state.initialized = True
        smoothed = _mix(self._weights, state.m[:, None, :])
        return _compress(frame[None, :], smoothed, self.params)[0]

    def reset(self) -> None:
        self.state = SmootherState(np.zeros(self._coefs.shape), initialized=False)


def stream_init(params: PcenParams, n_channels: int) -> StreamHandle:
    return StreamHandle(params, n_channels)


def stream_step(handle: StreamHandle, energy_frame) -> np.ndarray:
    return handle.step(energy_frame)
