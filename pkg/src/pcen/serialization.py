"""On-disk formats for energy/feature grams and PCEN parameter files.

Binary grams (little-endian)::

    EGRM: magic "EGRM" | version u32 | T u32 | F u32 | T*F float32, row-major
    FGRM: magic "FGRM" | version u32 | T u32 | F u32 | kind u8 | T*F float32

``kind`` is 0 for PCEN features and 1 for log-mel features. The CSV form
has one frame per line and no header.

Parameter files are JSON objects (schema ``pcen-params``, version 1)::

    {"format": "pcen-params", "version": 1,
     "eps": float, "alpha": float | [F floats], "delta": ..., "r": ...,
     "init": "first-frame" | "zero",
     "smoother": {"type": "single", "s": float}
               | {"type": "per-channel", "s": [F floats]}
               | {"type": "bank", "coefficients": [K floats], "logits": [[F floats] * K]}}

Floats are written with ``repr`` precision, so a save/load cycle is exact.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .dsp import EnergyGram, FrontendConfig
from .errors import FormatError
from .frontend import FeatureGram, PcenParams, PerChannelSmoother, SingleSmoother, SmootherBank

GRAM_VERSION = 1
PARAMS_FORMAT = "pcen-params"
PARAMS_VERSION = 1
FEATURE_KIND_CODES = {"pcen": 0, "log-mel": 1}
_KIND_BY_CODE = {v: k for k, v in FEATURE_KIND_CODES.items()}


def _pack(magic: bytes, values: np.ndarray, kind_code=None) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"gram must be 2-D, got shape {values.shape}")
    header = magic + struct.pack("<III", GRAM_VERSION, *values.shape)
    if kind_code is not None:
        header += struct.pack("<B", kind_code)
    return header + np.ascontiguousarray(values, dtype="<f4").tobytes()


def _unpack(data: bytes, magic: bytes, with_kind: bool):
    head = 16 + (1 if with_kind else 0)
    if len(data) < head or data[:4] != magic:
        raise FormatError(f"not a {magic.decode()} file")
    version, n_frames, n_channels = struct.unpack_from("<III", data, 4)
    if version != GRAM_VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")
    kind_code = data[16] if with_kind else None
    payload = data[head:]
    if len(payload) != 4 * n_frames * n_channels:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {4 * n_frames * n_channels} for {n_frames}x{n_channels}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(n_frames, n_channels).astype(np.float64)
    return values, kind_code


def encode_energy_gram(gram: EnergyGram) -> bytes:
    return _pack(b"EGRM", gram.values)


def decode_energy_gram(data: bytes, config: FrontendConfig = FrontendConfig()) -> EnergyGram:
    values, _ = _unpack(data, b"EGRM", with_kind=False)
    return EnergyGram(values, config)


def encode_feature_gram(gram: FeatureGram) -> bytes:
    return _pack(b"FGRM", gram.values, FEATURE_KIND_CODES[gram.kind])


def decode_feature_gram(data: bytes) -> FeatureGram:
    values, code = _unpack(data, b"FGRM", with_kind=True)
    if code not in _KIND_BY_CODE:
        raise FormatError(f"unknown feature kind code {code}")
    return FeatureGram(values, _KIND_BY_CODE[code])


def gram_to_csv(values) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(np.asarray(values, dtype=np.float64)), fmt="%.17g", delimiter=",")
    return buf.getvalue()


def gram_from_csv(text: str) -> np.ndarray:
    try:
        values = np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"bad gram CSV: {exc}") from None
    return values


def write_feature_gram(path, gram: FeatureGram, fmt: str = None) -> None:
    """Write ``.fgrm`` binary or ``.csv`` text; ``fmt`` overrides the suffix."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "fgrm")
    if fmt == "csv":
        path.write_text(gram_to_csv(gram.values))
    elif fmt == "fgrm":
        path.write_bytes(encode_feature_gram(gram))
    else:
        raise FormatError(f"unknown feature format {fmt!r}")


def read_feature_gram(path, kind: str = "pcen") -> FeatureGram:
    """Read a feature file; CSV carries no kind tag so ``kind`` is assumed."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == b"FGRM":
        return decode_feature_gram(data)
    return FeatureGram(gram_from_csv(data.decode()), kind)


def write_energy_gram(path, gram: EnergyGram) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(gram_to_csv(gram.values))
    else:
        path.write_bytes(encode_energy_gram(gram))


def _jsonable(value):
    value = np.asarray(value, dtype=np.float64)
    return float(value) if value.ndim == 0 else value.tolist()


def params_to_dict(params: PcenParams) -> dict:
    smoother = params.smoother
    if isinstance(smoother, SingleSmoother):
        spec = {"type": "single", "s": float(smoother.s)}
    elif isinstance(smoother, PerChannelSmoother):
        spec = {"type": "per-channel", "s": smoother.s.tolist()}
    else:
        spec = {
            "type": "bank",
            "coefficients": smoother.coefficients.tolist(),
            "logits": smoother.logits.tolist(),
        }
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "eps": params.eps,
        "alpha": _jsonable(params.alpha),
        "delta": _jsonable(params.delta),
        "r": _jsonable(params.r),
        "init": params.init,
        "smoother": spec,
    }


def params_from_dict(doc: dict) -> PcenParams:
    if doc.get("format") != PARAMS_FORMAT or doc.get("version") != PARAMS_VERSION:
        raise FormatError(f"not a {PARAMS_FORMAT} v{PARAMS_VERSION} document")
    try:
        spec = doc["smoother"]
        kind = spec["type"]
        if kind == "single":
            smoother = SingleSmoother(float(spec["s"]))
        elif kind == "per-channel":
            smoother = PerChannelSmoother(np.array(spec["s"], dtype=np.float64))
        elif kind == "bank":
            smoother = SmootherBank(
                np.array(spec["coefficients"], dtype=np.float64),
                np.array(spec["logits"], dtype=np.float64),
            )
        else:
            raise FormatError(f"unknown smoother type {kind!r}")
        return PcenParams(
            eps=doc["eps"],
            alpha=np.array(doc["alpha"], dtype=np.float64),
            delta=np.array(doc["delta"], dtype=np.float64),
            r=np.array(doc["r"], dtype=np.float64),
            smoother=smoother,
            init=doc.get("init", "first-frame"),
        )
    except KeyError as exc:
        raise FormatError(f"parameter file missing key {exc}") from None


def dumps_params(params: PcenParams) -> str:
    return json.dumps(params_to_dict(params), indent=1) + "\n"


def loads_params(text: str) -> PcenParams:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"parameter file is not valid JSON: {exc}") from None
    return params_from_dict(doc)


def save_params(path, params: PcenParams) -> None:
    Path(path).write_text(dumps_params(params))


def load_params(path) -> PcenParams:
    return loads_params(Path(path).read_text())
