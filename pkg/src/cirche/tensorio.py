"""TSR tensor files and JSON network configs.

TSR layout (all little-endian):

    offset 0   4 bytes   magic b"TSR1"
    offset 4   u32       dtype code: 0 = u64 residues, 1 = f64
    offset 8   u32       rank r
    offset 12  r x u64   dims
    then       row-major payload, prod(dims) x 8 bytes
"""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .costmodel import LayerShape, UnitCosts
from .ring import is_power_of_two

MAGIC = b"TSR1"
DTYPES = {0: np.dtype("<u8"), 1: np.dtype("<f8")}
CODES = {np.dtype("uint64"): 0, np.dtype("float64"): 1}


class TsrError(ValueError):
    pass


class BadMagic(TsrError):
    pass


class TruncatedPayload(TsrError):
    pass


class DtypeMismatch(TsrError):
    pass


class ConfigError(ValueError):
    """Invalid network config; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ------------------------------------------------------------------ TSR


def tsr_bytes(tensor) -> bytes:
    arr = np.asarray(tensor)
    code = CODES.get(arr.dtype)
    if code is None:
        raise DtypeMismatch(f"TSR stores uint64 or float64 only, got {arr.dtype}")
    header = MAGIC + struct.pack("<II", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def tsr_from_bytes(data: bytes, expect_dtype=None) -> np.ndarray:
    if len(data) < 12 or data[:4] != MAGIC:
        raise BadMagic(f"not a TSR file (magic {data[:4]!r})")
    code, rank = struct.unpack_from("<II", data, 4)
    if code not in DTYPES:
        raise DtypeMismatch(f"unknown dtype code {code}")
    dtype = DTYPES[code]
    if expect_dtype is not None and np.dtype(expect_dtype) != dtype.newbyteorder("="):
        raise DtypeMismatch(f"file holds {dtype.name}, caller expected {np.dtype(expect_dtype).name}")
    head = 12 + 8 * rank
    if len(data) < head:
        raise TruncatedPayload(f"header needs {head} bytes, file has {len(data)}")
    dims = struct.unpack_from(f"<{rank}Q", data, 12)
    size = math.prod(dims) * dtype.itemsize
    if len(data) < head + size:
        raise TruncatedPayload(f"payload needs {size} bytes, file has {len(data) - head}")
    if len(data) > head + size:
        raise TsrError(f"{len(data) - head - size} trailing bytes after payload")
    arr = np.frombuffer(data, dtype=dtype, count=math.prod(dims), offset=head)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def write_tsr(tensor, path) -> None:
    Path(path).write_bytes(tsr_bytes(tensor))


def read_tsr(path, expect_dtype=None) -> np.ndarray:
    return tsr_from_bytes(Path(path).read_bytes(), expect_dtype)


# ------------------------------------------------------------------ configs

_BLOCKS = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

_LAYER = {
    "type": "object",
    "required": ["name", "kind", "dims"],
    "properties": {
        "name": {"type": "string"},
        "kind": {"enum": ["gemm", "conv"]},
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "allowed_block_sizes": _BLOCKS,
        "padding": {"enum": ["valid", "same"]},
        "weight": {"type": "string"},
        "grad": {"type": "string"},
        "residual_from": {"type": "integer", "minimum": 0},
        "fuse_with_next": {"type": "boolean"},
    },
    "additionalProperties": False,
}

_REPEAT = {
    "type": "object",
    "required": ["repeat", "layers"],
    "properties": {
        "repeat": {"type": "integer", "minimum": 1},
        "name": {"type": "string"},
        "layers": {"type": "array", "items": _LAYER, "minItems": 1},
    },
    "additionalProperties": False,
}

NETWORK_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "network config",
    "type": "object",
    "required": ["layers"],
    "properties": {
        "name": {"type": "string"},
        "layers": {"type": "array", "items": {"if": {"required": ["repeat"]}, "then": _REPEAT, "else": _LAYER}, "minItems": 1},
        "allowed_block_sizes": _BLOCKS,
        "unit_costs": {
            "type": "object",
            "properties": {k: {"type": "number", "minimum": 0} for k in ("t_pmult", "t_rot", "t_comm")},
            "additionalProperties": False,
        },
        "latency_limit": {"type": "number", "exclusiveMinimum": 0},
        "prime": {
            "type": "object",
            "properties": {"bits": {"type": "integer", "minimum": 8, "maximum": 62}, "n": {"type": "integer", "minimum": 2}},
            "additionalProperties": False,
        },
        "synthetic_seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

DEFAULT_BLOCKS = [1, 2, 4, 8, 16]


@dataclass
class LayerConfig:
    name: str
    shape: LayerShape  # block size 1
    allowed_block_sizes: list
    weight: str | None = None
    grad: str | None = None
    residual_from: int | None = None
    fuse_with_next: bool = False


@dataclass
class NetworkConfig:
    name: str
    layers: list
    unit_costs: UnitCosts
    latency_limit: float | None
    prime_bits: int = 41
    n: int = 8192
    synthetic_seed: int | None = None
    source: Path | None = field(default=None, repr=False)

    def shapes(self) -> list[LayerShape]:
        return [layer.shape for layer in self.layers]


def _json_path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def _expand(layers: list) -> list[tuple[str, dict]]:
    out = []
    for i, item in enumerate(layers):
        if "repeat" in item:
            prefix = item.get("name", f"group{i}")
            for r in range(item["repeat"]):
                for j, layer in enumerate(item["layers"]):
                    lay = copy.deepcopy(layer)
                    lay["name"] = f"{prefix}{r}.{layer['name']}"
                    out.append((f"$.layers[{i}].layers[{j}]", lay))
        else:
            out.append((f"$.layers[{i}]", item))
    return out


def _check_layer(path: str, layer: dict, blocks: list) -> LayerShape:
    kind, dims = layer["kind"], layer["dims"]
    want = 3 if kind == "gemm" else 5
    if len(dims) != want:
        raise ConfigError(f"{path}.dims", f"{kind} layers need {want} dims, got {len(dims)}")
    for k, b in enumerate(blocks):
        if not is_power_of_two(b):
            raise ConfigError(f"{path}.allowed_block_sizes[{k}]", f"block size {b} is not a power of two")
    if kind == "gemm":
        shape = LayerShape.gemm(*dims, name=layer["name"])
        split = {"d2": dims[1], "d3": dims[2]}
    else:
        H, W, C, K, R = dims
        if R > H or R > W:
            raise ConfigError(f"{path}.dims", f"kernel {R} larger than input {H}x{W}")
        shape = LayerShape.conv(*dims, padding=layer.get("padding", "valid"), name=layer["name"])
        split = {"C": C, "K": K}
    for b in blocks:
        for label, v in split.items():
            if v % b:
                raise ConfigError(f"{path}.allowed_block_sizes", f"block size {b} does not divide {label}={v}")
    return shape


def parse_network(doc: dict, source: Path | None = None) -> NetworkConfig:
    validator = jsonschema.Draft202012Validator(NETWORK_SCHEMA)
    errors = list(validator.iter_errors(doc))
    if errors:
        err = max(errors, key=lambda e: len(e.absolute_path))  # deepest is most specific
        raise ConfigError(_json_path(err), err.message)
    top_blocks = doc.get("allowed_block_sizes")
    layers = []
    for path, layer in _expand(doc["layers"]):
        blocks = layer.get("allowed_block_sizes", top_blocks)
        if blocks is None:
            # implicit defaults shrink to the sizes the layer admits
            shape = _check_layer(path, layer, [1])
            blocks = [b for b in DEFAULT_BLOCKS if shape.divisible(b)]
        else:
            shape = _check_layer(path, layer, blocks)
        layers.append(
            LayerConfig(
                layer["name"],
                shape,
                list(blocks),
                layer.get("weight"),
                layer.get("grad"),
                layer.get("residual_from"),
                layer.get("fuse_with_next", False),
            )
        )
    for i, layer in enumerate(layers):
        if layer.residual_from is not None and layer.residual_from >= i:
            raise ConfigError(f"$.layers[{i}].residual_from", "residual must come from an earlier activation")
        if layer.fuse_with_next and i + 1 >= len(layers):
            raise ConfigError(f"$.layers[{i}].fuse_with_next", "last layer has no successor to fuse with")
    prime = doc.get("prime", {})
    return NetworkConfig(
        name=doc.get("name", source.stem if source else "network"),
        layers=layers,
        unit_costs=UnitCosts(**doc.get("unit_costs", {})),
        latency_limit=doc.get("latency_limit"),
        prime_bits=prime.get("bits", 41),
        n=prime.get("n", 8192),
        synthetic_seed=doc.get("synthetic_seed"),
        source=source,
    )


def load_network(path) -> NetworkConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    return parse_network(doc, path)


def layer_snapshot_arrays(cfg: NetworkConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight and gradient tensors of one layer, from TSR files or the synthetic seed."""
    layer = cfg.layers[index]
    if layer.weight and layer.grad:
        base = cfg.source.parent if cfg.source else Path(".")
        W = read_tsr(base / layer.weight, expect_dtype=np.float64)
        G = read_tsr(base / layer.grad, expect_dtype=np.float64)
        return W, G
    if cfg.synthetic_seed is None:
        raise ConfigError(f"$.layers[{index}]", "no weight/grad files and no synthetic_seed")
    rng = np.random.default_rng([cfg.synthetic_seed, index])
    shape = weight_shape(layer.shape)
    return rng.normal(size=shape), rng.normal(size=shape)


def weight_shape(shape: LayerShape) -> tuple:
    if shape.kind == "gemm":
        _, d2, d3 = shape.dims
        return (d3, d2)
    _, _, C, K, R = shape.dims
    return (K, C, R, R)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
