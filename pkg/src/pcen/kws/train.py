"""Joint training of the toy keyword classifier with a chosen frontend.

Three frontends are supported:

* ``log-mel``: stabilized (or clipped) log of the mel energies;
* ``fixed-pcen``: PCEN with constant parameters;
* ``trainable-pcen``: the trainable layer, updated jointly with the
  classifier by backpropagating the classifier's input gradient.

Training is single-writer and bit-deterministic for a given seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..dsp import FrontendConfig, filterbank_energies
from ..errors import FormatError, TrainingError
from ..frontend import FeatureGram, PcenParams, log_mel, pcen_forward
from ..serialization import params_from_dict, params_to_dict
from ..trainable import (
    TrainablePcen,
    accumulate,
    freeze,
    init_trainable,
    sgd_step,
    smoother_bank,
    trainable_backward,
    trainable_forward,
)
from .data import KEYWORD, NON_KEYWORD, LabeledClip
from .model import (
    CONTEXT_LEFT,
    CONTEXT_RIGHT,
    ToyModel,
    context_windows,
    keyword_frames,
    scatter_window_grad,
    window_labels,
)
from .roc import RocCurve

MODES = ("log-mel", "fixed-pcen", "trainable-pcen")


def _energies(args):
    audio, config = args
    return filterbank_energies(audio, config).values


def clip_energies(clips, config: FrontendConfig = FrontendConfig(), jobs: int = 1):
    """Filterbank energies for every clip, in order; ``jobs > 1`` uses worker processes."""
    work = [(clip.audio, config) for clip in clips]
    if jobs <= 1 or len(work) < 2:
        return [_energies(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_energies, work, chunksize=8))


@dataclass
class Frontend:
    """A fixed feature extractor: energies -> FeatureGram."""

    kind: str = "pcen"
    pcen: Optional[PcenParams] = None
    offset: float = 0.1
    log_mode: str = "stabilized"
    config: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        if self.kind not in ("pcen", "log-mel"):
            raise ValueError(f"frontend kind must be 'pcen' or 'log-mel', got {self.kind!r}")
        if self.kind == "pcen" and self.pcen is None:
            self.pcen = PcenParams()

    def features(self, energies) -> FeatureGram:
        if self.kind == "log-mel":
            return log_mel(energies, self.offset, self.log_mode)
        return pcen_forward(energies, self.pcen)

    def clip_features(self, clip: LabeledClip) -> FeatureGram:
        return self.features(filterbank_energies(clip.audio, self.config))

    def to_dict(self) -> dict:
        doc = {"format": "kws-frontend", "version": 1, "kind": self.kind, "config": asdict(self.config)}
        if self.kind == "log-mel":
            doc.update(offset=self.offset, log_mode=self.log_mode)
        else:
            doc["pcen"] = params_to_dict(self.pcen)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Frontend":
        if doc.get("format") != "kws-frontend" or doc.get("version") != 1:
            raise FormatError("not a kws-frontend v1 file")
        try:
            config = FrontendConfig(**doc["config"])
            if doc["kind"] == "log-mel":
                return cls("log-mel", offset=doc["offset"], log_mode=doc["log_mode"], config=config)
            return cls("pcen", pcen=params_from_dict(doc["pcen"]), config=config)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad kws-frontend file: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Frontend":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from None
        return cls.from_dict(doc)


@dataclass
class TrainResult:
    model: ToyModel
    frontend: Frontend
    layer: Optional[TrainablePcen] = None
    history: List[float] = field(default_factory=list)


@dataclass
class _ClipData:
    energies: np.ndarray
    labels: np.ndarray
    features: Optional[np.ndarray] = None
    windows: Optional[np.ndarray] = None
    bank: Optional[np.ndarray] = None


def _check_dataset(dataset):
    if not dataset:
        raise TrainingError("empty dataset")
    labels = {clip.label for clip in dataset}
    if labels != {KEYWORD, NON_KEYWORD}:
        raise TrainingError(f"training needs both classes, got labels {sorted(labels)}")


def _prepare(dataset, config, left, right, jobs=1):
    prepared = []
    for clip, energies in zip(dataset, clip_energies(dataset, config, jobs)):
        rate = clip.audio.sample_rate
        frames = keyword_frames(clip.keyword_span, config.hop_length(rate), config.window_length(rate))
        labels = window_labels(energies.shape[0], frames, left, right)
        if labels.size == 0:
            raise TrainingError("clip shorter than one context window")
        prepared.append(_ClipData(energies, labels))
    return prepared


def _class_weights(prepared, balance):
    labels = np.concatenate([c.labels for c in prepared])
    n_pos = int(labels.sum())
    if not balance or n_pos == 0:
        return np.ones(2)
    return np.array([1.0, (labels.size - n_pos) / n_pos])


def _set_fixed_features(prepared, frontend, left, right):
    for c in prepared:
        c.features = frontend.features(c.energies).values
        c.windows = context_windows(c.features, left, right)


def _dataset_loss(model, prepared, class_weights, layer=None, left=CONTEXT_LEFT, right=CONTEXT_RIGHT):
    xs, ys = [], []
    for c in prepared:
        if layer is None:
            xs.append(c.windows)
        else:
            feats, _ = trainable_forward(c.energies, layer, c.bank)
            xs.append(context_windows(feats, left, right))
        ys.append(c.labels)
    y = np.concatenate(ys)
    return model.loss(np.concatenate(xs), y, class_weights[y])


def train_joint(
    dataset,
    frontend_mode: str,
    epochs: int = 30,
    lr: float = 0.01,
    seed: int = 0,
    *,
    hidden: int = 64,
    batch_clips: int = 8,
    frontend_lr: Optional[float] = None,
    pcen_params: Optional[PcenParams] = None,
    log_offset: float = 0.1,
    log_mode: str = "stabilized",
    layer: Optional[TrainablePcen] = None,
    n_smoothers: int = 2,
    bootstrap: bool = True,
    init_model: Optional[ToyModel] = None,
    balance: bool = True,
    config: FrontendConfig = FrontendConfig(),
    left: int = CONTEXT_LEFT,
    right: int = CONTEXT_RIGHT,
    jobs: int = 1,
) -> TrainResult:
    """Mini-batch SGD on window-level cross-entropy.

    Windows that contain the whole keyword are positives; everything else,
    including windows with a partial keyword, is negative. With
    ``balance`` the two classes get equal total weight.

    In ``trainable-pcen`` mode the layer starts from ``layer`` (default:
    ``init_trainable(F, n_smoothers, seed)``) and the classifier from
    ``init_model``; if none is given and ``bootstrap`` is set, the
    classifier is first trained for ``epochs`` epochs on fixed PCEN
    features. ``history[0]`` is the loss before training, followed by one
    full-dataset loss per epoch.
    """
    if frontend_mode not in MODES:
        raise ValueError(f"frontend_mode must be one of {MODES}, got {frontend_mode!r}")
    if lr < 0 or (frontend_lr is not None and frontend_lr < 0):
        raise ValueError("learning rates must be >= 0")
    _check_dataset(dataset)
    prepared = _prepare(dataset, config, left, right, jobs)
    n_channels = prepared[0].energies.shape[1]
    input_dim = (left + right + 1) * n_channels
    class_weights = _class_weights(prepared, balance)
    frontend_lr = lr if frontend_lr is None else frontend_lr
    rng = np.random.default_rng(seed)

    trainable = frontend_mode == "trainable-pcen"
    if frontend_mode == "log-mel":
        frontend = Frontend("log-mel", offset=log_offset, log_mode=log_mode, config=config)
    else:
        frontend = Frontend("pcen", pcen=pcen_params or PcenParams(), config=config)

    if trainable:
        layer = layer.copy() if layer is not None else init_trainable(n_channels, n_smoothers, seed)
        for c in prepared:
            c.bank = smoother_bank(c.energies, layer)
        if init_model is None and bootstrap:
            init_model = train_joint(
                dataset, "fixed-pcen", epochs, lr, seed,
                hidden=hidden, batch_clips=batch_clips, pcen_params=pcen_params,
                balance=balance, config=config, left=left, right=right, jobs=jobs,
            ).model
    else:
        layer = None
        _set_fixed_features(prepared, frontend, left, right)
    model = init_model.copy() if init_model is not None else ToyModel.init(input_dim, hidden, seed)
    if model.input_dim != input_dim:
        raise TrainingError(f"model expects {model.input_dim} inputs, windows have {input_dim}")

    history = [_dataset_loss(model, prepared, class_weights, layer, left, right)]
    for _ in range(epochs):
        order = rng.permutation(len(prepared))
        for start in range(0, len(order), batch_clips):
            batch = [prepared[i] for i in order[start:start + batch_clips]]
            caches = []
            if trainable:
                xs = []
                for c in batch:
                    feats, cache = trainable_forward(c.energies, layer, c.bank)
                    caches.append(cache)
                    xs.append(context_windows(feats, left, right))
            else:
                xs = [c.windows for c in batch]
            y = np.concatenate([c.labels for c in batch])
            loss, grads, d_x = model.loss_and_grads(np.concatenate(xs), y, class_weights[y])
            if not np.isfinite(loss):
                raise TrainingError("loss diverged (non-finite)")
            model.sgd_update(grads, lr)
            if trainable:
                bundles, offset = [], 0
                for c, x, cache in zip(batch, xs, caches):
                    d_feats = scatter_window_grad(d_x[offset:offset + len(x)], *c.energies.shape, left, right)
                    offset += len(x)
                    bundles.append(trainable_backward(cache, d_feats, energies_grad=False))
                layer = sgd_step(layer, accumulate(bundles), frontend_lr)
            if not model.is_finite():
                raise TrainingError("classifier weights became non-finite")
        epoch_loss = _dataset_loss(model, prepared, class_weights, layer, left, right)
        if not np.isfinite(epoch_loss):
            raise TrainingError("loss diverged (non-finite)")
        history.append(epoch_loss)

    if trainable:
        frontend = Frontend("pcen", pcen=freeze(layer), config=config)
    return TrainResult(model, frontend, layer, history)


def clip_scores(model: ToyModel, frontend: Frontend, clips, left=CONTEXT_LEFT, right=CONTEXT_RIGHT, jobs=1):
    """Keyword score per clip: the maximum window posterior."""
    scores = np.empty(len(clips))
    for i, energies in enumerate(clip_energies(clips, frontend.config, jobs)):
        windows = context_windows(frontend.features(energies), left, right)
        scores[i] = model.posteriors(windows).max()
    return scores


def evaluate_roc(
    model: ToyModel, frontend: Frontend, clips, left=CONTEXT_LEFT, right=CONTEXT_RIGHT, jobs=1
) -> RocCurve:
    if not clips:
        raise ValueError("evaluation set is empty")
    scores = clip_scores(model, frontend, clips, left, right, jobs)
    return RocCurve.from_scores(scores, [clip.label for clip in clips])
