"""Versioned binary model files and JSON report writing.

Model file layout::

    b"N2CMDL1"        magic (7 bytes)
    u8                format version (currently 1)
    u16 LE + ascii    scheme tag
    u8                content flags: 1 stack, 2 net, 4 translator
    i64 LE            training seed
    [stack block]     u32 LE length + UTF-8 JSON text
    [net block]       manifest JSON (u32 LE length prefix) +
    [translator]      u64 LE count + count little-endian float32 values

The stack block is a JSON map layer index -> effective positive sigmas
(human readable) plus the exact unconstrained values as C99 hex floats,
so filter parameters reload bit-exactly.  Network weights are stored as
float32 (the native storage precision); saving quantizes float64 training
values once, after which save/load cycles are byte-stable.  Files with an
unknown magic or version are refused with distinct errors.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .bilateral import BilateralLayerParams, BilateralStackParams
from .errors import ModelFormatError, ModelVersionError
from .training import ModelBundle, TrainReport
from .unet import DomainNetParams, NetConfig, build_manifest

MODEL_MAGIC = b"N2CMDL1"
MODEL_VERSION = 1
MODEL_SUFFIX = ".n2cmdl"

_FLAG_STACK, _FLAG_NET, _FLAG_TRANSLATOR = 1, 2, 4


def _stack_to_json(stack: BilateralStackParams) -> str:
    layers = {}
    for i, lay in enumerate(stack.layers):
        layers[str(i)] = {
            "sigma_sx": lay.sigma_spatial_x,
            "sigma_sy": lay.sigma_spatial_y,
            "sigma_r": lay.sigma_range,
            "theta_sx": float(lay.theta_sx).hex(),
            "theta_sy": float(lay.theta_sy).hex(),
            "theta_r": float(lay.theta_r).hex(),
        }
    return json.dumps({"layers": layers}, sort_keys=True)


def _stack_from_json(text: str) -> BilateralStackParams:
    try:
        doc = json.loads(text)
        layer_map = doc["layers"]
        layers = []
        for i in range(len(layer_map)):
            entry = layer_map[str(i)]
            layers.append(
                BilateralLayerParams(
                    theta_sx=float.fromhex(entry["theta_sx"]),
                    theta_sy=float.fromhex(entry["theta_sy"]),
                    theta_r=float.fromhex(entry["theta_r"]),
                )
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"corrupt filter-stack block: {exc}") from exc
    return BilateralStackParams(layers)


def _net_header(params: DomainNetParams) -> str:
    cfg = params.config
    return json.dumps(
        {
            "base_features": cfg.base_features,
            "depth": cfg.depth,
            "kernel_size": cfg.kernel_size,
            "activation": cfg.activation,
            "final_activation": cfg.final_activation,
            "tensors": [[name, list(shape)] for name, shape in params.manifest],
        },
        sort_keys=True,
    )


def _net_from_parts(header: str, values: np.ndarray) -> DomainNetParams:
    try:
        doc = json.loads(header)
        cfg = NetConfig(
            base_features=int(doc["base_features"]),
            depth=int(doc["depth"]),
            kernel_size=int(doc["kernel_size"]),
            activation=doc["activation"],
            final_activation=doc["final_activation"],
        )
        manifest = [(name, tuple(int(d) for d in shape)) for name, shape in doc["tensors"]]
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"corrupt network manifest: {exc}") from exc
    if manifest != build_manifest(cfg):
        raise ModelFormatError("network manifest inconsistent with its config")
    expected = sum(int(np.prod(shape)) for _, shape in manifest)
    if values.size != expected:
        raise ModelFormatError(
            f"network block holds {values.size} values, manifest expects {expected}"
        )
    return DomainNetParams(cfg, values.astype(np.float64), manifest)


def _write_block(f, data: bytes) -> None:
    f.write(struct.pack("<I", len(data)))
    f.write(data)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ModelFormatError(f"model file truncated while reading {what}")
    return data


def _read_block(f, what: str) -> bytes:
    (length,) = struct.unpack("<I", _read_exact(f, 4, f"{what} length"))
    return _read_exact(f, length, what)


def save_model(bundle: ModelBundle, path) -> None:
    """Write ``bundle`` to ``path``; see module docstring for the layout."""
    flags = 0
    if bundle.stack is not None:
        flags |= _FLAG_STACK
    if bundle.net is not None:
        flags |= _FLAG_NET
    if bundle.translator is not None:
        flags |= _FLAG_TRANSLATOR
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<B", MODEL_VERSION))
        scheme = bundle.scheme.encode("ascii")
        f.write(struct.pack("<H", len(scheme)))
        f.write(scheme)
        f.write(struct.pack("<B", flags))
        f.write(struct.pack("<q", bundle.seed))
        if bundle.stack is not None:
            _write_block(f, _stack_to_json(bundle.stack).encode("utf-8"))
        for net in (bundle.net, bundle.translator):
            if net is not None:
                _write_block(f, _net_header(net).encode("utf-8"))
                vals = net.flat.astype("<f4")
                f.write(struct.pack("<Q", vals.size))
                f.write(vals.tobytes())


def load_model(path) -> ModelBundle:
    """Read a model file; refuses unknown magic or version."""
    with open(path, "rb") as f:
        magic = f.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: bad magic string {magic!r}")
        (version,) = struct.unpack("<B", _read_exact(f, 1, "version"))
        if version != MODEL_VERSION:
            raise ModelVersionError(
                f"{path}: format version {version} is not supported (expected {MODEL_VERSION})"
            )
        (scheme_len,) = struct.unpack("<H", _read_exact(f, 2, "scheme length"))
        try:
            scheme = _read_exact(f, scheme_len, "scheme").decode("ascii")
        except UnicodeDecodeError as exc:
            raise ModelFormatError(f"{path}: scheme tag is not ASCII") from exc
        (flags,) = struct.unpack("<B", _read_exact(f, 1, "flags"))
        (seed,) = struct.unpack("<q", _read_exact(f, 8, "seed"))

        stack = None
        if flags & _FLAG_STACK:
            stack = _stack_from_json(_read_block(f, "filter-stack block").decode("utf-8"))

        def read_net() -> DomainNetParams:
            header = _read_block(f, "network manifest").decode("utf-8")
            (count,) = struct.unpack("<Q", _read_exact(f, 8, "network value count"))
            raw = _read_exact(f, count * 4, "network values")
            return _net_from_parts(header, np.frombuffer(raw, dtype="<f4"))

        net = read_net() if flags & _FLAG_NET else None
        translator = read_net() if flags & _FLAG_TRANSLATOR else None
        trailing = f.read(1)
        if trailing:
            raise ModelFormatError(f"{path}: trailing bytes after model payload")
    return ModelBundle(scheme=scheme, stack=stack, net=net, translator=translator, seed=seed)


def write_report(report: TrainReport, path) -> None:
    """Write a TrainReport as JSON with stable key order."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
