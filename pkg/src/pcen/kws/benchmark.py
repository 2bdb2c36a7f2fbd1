"""Seeded loudness benchmarks comparing log-mel, fixed PCEN and trained PCEN.

``mismatch``: every model is trained on clips at one level and scored on
copies of the test clips at a much quieter and a much louder level.

``multi-loudness``: training clips get random levels, test clips get random
levels from a slightly wider range.

Trained PCEN starts from a classifier pretrained on fixed PCEN for
``epochs`` epochs and then trains jointly for another ``epochs``. Its
fixed-PCEN reference, ``fixed-pcen-matched``, continues the same pretrained
classifier for the same number of extra epochs, so both see an equal
update budget. The plain ``fixed-pcen`` entry is the pretrained model itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .data import at_level, augment_loudness, synth_dataset
from .roc import RocCurve
from .train import evaluate_roc, train_joint


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train: int = 100  # per class
    n_test: int = 300  # per class
    snr_db: Tuple[float, float] = (-16.0, -6.0)
    epochs: int = 30
    lr: float = 0.01
    frontend_lr: Optional[float] = None  # None: same as lr
    seed: int = 0
    train_data_seed: int = 1
    test_data_seed: int = 2
    train_dbfs: float = -30.0
    mismatch_dbfs: Tuple[float, ...] = (-50.0, -10.0)
    train_range: Tuple[float, float] = (-45.0, -15.0)
    test_range: Tuple[float, float] = (-50.0, -10.0)
    fa_target: float = 0.05
    jobs: int = 1


@dataclass
class BenchmarkResult:
    name: str
    config: BenchmarkConfig
    rocs: Dict[str, RocCurve] = field(default_factory=dict)

    def operating_point(self, mode: str):
        """``(threshold, fa, fr)`` at the FA point nearest the target."""
        return self.rocs[mode].nearest_point(self.config.fa_target)

    def fr(self, mode: str) -> float:
        return self.operating_point(mode)[2]

    def summary(self) -> str:
        lines = [f"{self.name} benchmark, FR at the FA point nearest {self.config.fa_target:g}"]
        for mode, roc in self.rocs.items():
            _, fa, fr = self.operating_point(mode)
            lines.append(f"  {mode:<19} FA {fa:.4f}  FR {fr:.4f}  (interp FR {roc.fr_at_fa(self.config.fa_target):.4f}, AUC {roc.auc():.4f})")
        return "\n".join(lines)


def _data(cfg: BenchmarkConfig):
    train = synth_dataset(cfg.n_train, seed=cfg.train_data_seed, snr_db=cfg.snr_db)
    test = synth_dataset(cfg.n_test, seed=cfg.test_data_seed, snr_db=cfg.snr_db)
    return train, test


def _train_all(cfg, train, test, result, with_matched):
    common = dict(epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seed, jobs=cfg.jobs)
    models = {"log-mel": train_joint(train, "log-mel", **common)}
    fixed = train_joint(train, "fixed-pcen", **common)
    models["fixed-pcen"] = fixed
    if with_matched:
        models["fixed-pcen-matched"] = train_joint(train, "fixed-pcen", init_model=fixed.model, **common)
    models["trainable-pcen"] = train_joint(
        train, "trainable-pcen", init_model=fixed.model, frontend_lr=cfg.frontend_lr, **common
    )
    for mode, trained in models.items():
        result.rocs[mode] = evaluate_roc(trained.model, trained.frontend, test, jobs=cfg.jobs)
    return models


def mismatch_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), with_matched: bool = True) -> BenchmarkResult:
    train, test = _data(cfg)
    train = [at_level(c, cfg.train_dbfs) for c in train]
    test = [at_level(c, level) for level in cfg.mismatch_dbfs for c in test]
    result = BenchmarkResult("mismatch", cfg)
    _train_all(cfg, train, test, result, with_matched)
    return result


def multi_loudness_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), with_matched: bool = True) -> BenchmarkResult:
    train, test = _data(cfg)
    train = [augment_loudness(c, [cfg.train_data_seed, i], *cfg.train_range) for i, c in enumerate(train)]
    test = [augment_loudness(c, [cfg.test_data_seed, i], *cfg.test_range) for i, c in enumerate(test)]
    result = BenchmarkResult("multi-loudness", cfg)
    _train_all(cfg, train, test, result, with_matched)
    return result
