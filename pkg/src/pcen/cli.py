"""``pcen`` command line: extract, compare, gradcheck, synth, train, eval, inspect-params.

Exit codes: 0 success, 1 a check failed, 2 usage or parameter error,
3 file could not be read, written or decoded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dsp import FrontendConfig, filterbank_energies
from .errors import DecodeError, FormatError, PcenError, TrainingError, UnsupportedFormatError
from .frontend import (
    PcenParams,
    PerChannelSmoother,
    SingleSmoother,
    SmootherBank,
    log_mel,
    pcen_forward,
    softmax_weights,
)
from .kws.data import augment_loudness, at_level, read_manifest, synth_dataset, write_dataset
from .kws.model import ToyModel
from .kws.train import Frontend, evaluate_roc, train_joint
from .serialization import load_params, params_from_dict, read_feature_gram, write_feature_gram
from .trainable import finite_diff_check, init_trainable, layer_from_dict, save_layer, trainable_backward
from .wav import read_wav

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

MODE_ALIASES = {"logmel": "log-mel", "log-mel": "log-mel", "pcen": "fixed-pcen", "fixed-pcen": "fixed-pcen",
                "trainable-pcen": "trainable-pcen"}


class CheckFailed(Exception):
    pass


class FileFailure(Exception):
    """A named file could not be read, written or decoded."""


@contextmanager
def _file(path):
    try:
        yield
    except OSError as exc:
        raise FileFailure(f"{path}: {exc.strerror or exc}") from None
    except (DecodeError, UnsupportedFormatError, FormatError) as exc:
        raise FileFailure(f"{path}: {exc}") from None


def _add_frontend_flags(p):
    g = p.add_argument_group("filterbank")
    g.add_argument("--window-ms", type=float, default=25.0)
    g.add_argument("--hop-ms", type=float, default=10.0)
    g.add_argument("--fft-size", type=int, default=None, help="default: next power of two >= window")
    g.add_argument("--n-mels", type=int, default=40)
    g.add_argument("--fmin", type=float, default=125.0)
    g.add_argument("--fmax", type=float, default=7500.0)


def _add_pcen_flags(p):
    g = p.add_argument_group("PCEN (ignored for log-mel; overrides --params fields when given)")
    g.add_argument("--params", type=Path, help="pcen-params JSON file")
    g.add_argument("--eps", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--r", type=float)
    g.add_argument("--s", type=float, help="single smoothing coefficient")
    g.add_argument("--init", choices=("first-frame", "zero"))
    g = p.add_argument_group("log-mel")
    g.add_argument("--offset", type=float, default=0.1)
    g.add_argument("--log", dest="log_mode", choices=("stabilized", "clipped"), default="stabilized")


def _frontend_config(args) -> FrontendConfig:
    return FrontendConfig(args.window_ms, args.hop_ms, args.fft_size, args.n_mels, args.fmin, args.fmax)


def _pcen_params(args) -> PcenParams:
    if args.params:
        with _file(args.params):
            params = load_params(args.params)
    else:
        params = PcenParams()
    overrides = {k: getattr(args, k) for k in ("eps", "alpha", "delta", "r", "init") if getattr(args, k) is not None}
    if args.s is not None:
        overrides["smoother"] = SingleSmoother(args.s)
    return replace(params, **overrides) if overrides else params


def _mode(name):
    if name not in MODE_ALIASES:
        raise argparse.ArgumentTypeError(f"unknown mode {name!r}")
    return MODE_ALIASES[name]


# --- subcommands ----------------------------------------------------------


def cmd_extract(args):
    with _file(args.wav):
        audio = read_wav(args.wav)
    energies = filterbank_energies(audio, _frontend_config(args))
    if args.mode == "log-mel":
        gram = log_mel(energies, args.offset, args.log_mode)
    else:
        gram = pcen_forward(energies, _pcen_params(args))
    with _file(args.out):
        write_feature_gram(args.out, gram, args.format)
    t, f = gram.shape
    print(f"T={t} F={f} mode={gram.kind}")


def cmd_compare(args):
    with _file(args.a):
        a = read_feature_gram(args.a).values
    with _file(args.b):
        b = read_feature_gram(args.b).values
    if a.shape != b.shape:
        print(f"shape mismatch: {a.shape} vs {b.shape}")
        raise CheckFailed
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
    print(f"shape {a.shape[0]}x{a.shape[1]}")
    print(f"max_abs {diff.max():.6e}")
    print(f"mean_abs {diff.mean():.6e}")
    print(f"rms {np.sqrt(np.mean(diff**2)):.6e}")
    print(f"max_rel {rel.max():.6e}")
    print(f"identical_bins {int(np.sum(diff == 0))}/{diff.size}")
    if args.tolerance is not None and diff.max() > args.tolerance:
        raise CheckFailed


def _flipped_backward(cache, upstream, **kwargs):
    good = trainable_backward(cache, upstream, **kwargs)
    return replace(good, d_log_alpha=-good.d_log_alpha)


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    energies = 10 ** rng.uniform(-2, 2, (args.frames, args.channels))
    layer = init_trainable(args.channels, args.smoothers, seed=args.seed)
    backward = _flipped_backward if args.corrupt else trainable_backward
    modes = {"both": (True, False), "through": (True,), "fixed": (False,)}[args.smoother_grad]
    ok = True
    for through in modes:
        report = finite_diff_check(
            layer, energies, seed=args.seed, step=args.step, through_smoother=through,
            tolerance=args.tolerance, backward=backward,
        )
        print(report.format())
        ok = ok and report.passed
    if not ok:
        raise CheckFailed


def cmd_synth(args):
    clips = synth_dataset(args.n_per_class, seed=args.seed, snr_db=tuple(args.snr))
    if args.levels:
        clips = [at_level(c, level) for level in args.levels for c in clips]
    elif args.augment:
        lo, hi = args.augment
        clips = [augment_loudness(c, [args.seed, i], lo, hi) for i, c in enumerate(clips)]
    with _file(args.out_dir):
        manifest = write_dataset(clips, args.out_dir)
    print(f"wrote {len(clips)} clips to {manifest}")


def _manifest(path):
    with _file(path):
        return read_manifest(path)


def cmd_train(args):
    out = args.out_dir
    with _file(out):
        out.mkdir(parents=True, exist_ok=True)
    clips = _manifest(args.manifest)
    pcen = _pcen_params(args) if args.params or any(
        getattr(args, k) is not None for k in ("eps", "alpha", "delta", "r", "s", "init")) else None
    result = train_joint(
        clips, args.mode, epochs=args.epochs, lr=args.lr, seed=args.seed, hidden=args.hidden,
        batch_clips=args.batch_clips, frontend_lr=args.frontend_lr, pcen_params=pcen,
        log_offset=args.offset, log_mode=args.log_mode, n_smoothers=args.smoothers,
        config=_frontend_config(args), jobs=args.jobs,
    )
    with _file(out):
        result.model.save(out / "model.npz")
        result.frontend.save(out / "frontend.json")
        if result.layer is not None:
            save_layer(out / "layer.json", result.layer)
        with open(out / "history.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss"])
            for epoch, loss in enumerate(result.history):
                writer.writerow([epoch, repr(loss)])
    print(f"mode={args.mode} epochs={args.epochs} loss {result.history[0]:.6f} -> {result.history[-1]:.6f}")


def cmd_eval(args):
    with _file(args.model_dir / "model.npz"):
        model = ToyModel.load(args.model_dir / "model.npz")
    with _file(args.model_dir / "frontend.json"):
        frontend = Frontend.load(args.model_dir / "frontend.json")
    clips = _manifest(args.manifest)
    roc = evaluate_roc(model, frontend, clips, jobs=args.jobs)
    if args.roc:
        with _file(args.roc):
            roc.to_csv(args.roc)
    for target in args.fa or [0.05]:
        thr, fa, fr = roc.nearest_point(target)
        print(f"FA target {target:g}: FR {roc.fr_at_fa(target):.6f} (interpolated); "
              f"nearest point FA {fa:.6f} FR {fr:.6f} threshold {thr:.6g}")
    print(f"AUC {roc.auc():.6f}")


def _fmt_vec(v):
    v = np.atleast_1d(v)
    return " ".join(f"{x:.6g}" for x in v)


def _print_params(params: PcenParams):
    print(f"eps {params.eps:g}  init {params.init}")
    sm = params.smoother
    if isinstance(sm, SingleSmoother):
        print(f"smoother single s={sm.s:g}")
    elif isinstance(sm, PerChannelSmoother):
        print("smoother per-channel")
    else:
        print(f"smoother bank coefficients {_fmt_vec(sm.coefficients)}")
    n = params.n_channels
    if n is None:
        print(f"alpha {params.alpha:g}  delta {params.delta:g}  r {params.r:g}")
        return
    bcast = lambda v: np.broadcast_to(v, (n,))  # noqa: E731
    header = f"{'ch':>3} {'alpha':>9} {'delta':>9} {'r':>9}"
    if isinstance(sm, PerChannelSmoother):
        header += f" {'s':>9}"
    elif isinstance(sm, SmootherBank):
        weights = softmax_weights(sm.logits)
        header += "".join(f" {'w' + str(k):>8}" for k in range(weights.shape[0]))
    print(header)
    for f in range(n):
        row = f"{f:>3} {bcast(params.alpha)[f]:9.4f} {bcast(params.delta)[f]:9.4f} {bcast(params.r)[f]:9.4f}"
        if isinstance(sm, PerChannelSmoother):
            row += f" {sm.s[f]:9.4f}"
        elif isinstance(sm, SmootherBank):
            row += "".join(f" {w:8.4f}" for w in weights[:, f])
        print(row)


def cmd_inspect(args):
    with _file(args.file):
        try:
            doc = json.loads(args.file.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"not valid JSON: {exc}") from None
    kind = doc.get("format") if isinstance(doc, dict) else None
    with _file(args.file):
        _inspect_doc(doc, kind)


def _inspect_doc(doc, kind):
    if kind == "pcen-params":
        _print_params(params_from_dict(doc))
    elif kind == "pcen-trainable":
        layer = layer_from_dict(doc)
        print(f"trainable layer: {layer.n_channels} channels, {layer.n_smoothers} smoothers, step {layer.step}")
        _print_params(PcenParams(layer.eps, layer.alpha, layer.delta, layer.r,
                                 SmootherBank(layer.coefficients, layer.z), layer.init))
    elif kind == "kws-frontend":
        frontend = Frontend.from_dict(doc)
        if frontend.kind == "log-mel":
            print(f"log-mel offset {frontend.offset:g} mode {frontend.log_mode}")
        else:
            _print_params(frontend.pcen)
    else:
        raise FormatError(f"unknown checkpoint format {kind!r}")


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="WAV -> PCEN or log-mel feature file")
    p.add_argument("wav", type=Path)
    p.add_argument("out", type=Path, help=".fgrm (binary) or .csv")
    p.add_argument("--mode", type=_mode, default="fixed-pcen", help="pcen or logmel")
    p.add_argument("--format", choices=("fgrm", "csv"), help="override the extension")
    _add_frontend_flags(p)
    _add_pcen_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("compare", help="per-bin difference statistics between two feature files")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("--tolerance", type=float, help="exit 1 if the max abs difference exceeds this")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of the trainable PCEN gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--smoothers", type=int, default=2)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--smoother-grad", choices=("both", "through", "fixed"), default="both",
                   help="energy gradients through the IIR recursion, with it held fixed, or both")
    p.add_argument("--corrupt", action="store_true", help="flip a gradient sign (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic keyword dataset with a manifest")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, nargs=2, default=(0.0, 12.0), metavar=("LO", "HI"))
    level = p.add_mutually_exclusive_group()
    level.add_argument("--levels", type=float, nargs="+", metavar="DBFS", help="one copy per level")
    level.add_argument("--augment", type=float, nargs=2, metavar=("LO", "HI"), help="random level per clip")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the toy keyword model on a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--mode", type=_mode, default="fixed-pcen", help="logmel, fixed-pcen or trainable-pcen")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--frontend-lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--batch-clips", type=int, default=8)
    p.add_argument("--smoothers", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1, help="processes for feature extraction")
    _add_frontend_flags(p)
    _add_pcen_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a manifest and write the ROC")
    p.add_argument("manifest", type=Path)
    p.add_argument("model_dir", type=Path)
    p.add_argument("--roc", type=Path, help="ROC CSV output (threshold, fa, fr)")
    p.add_argument("--fa", type=float, action="append", help="FA target (repeatable, default 0.05)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-params", help="pretty-print a parameter file or checkpoint")
    p.add_argument("file", type=Path)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CheckFailed:
        return EXIT_CHECK
    except FileFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (PcenError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
