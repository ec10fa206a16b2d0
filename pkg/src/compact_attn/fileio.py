"""Bit-exact persistence: binary tensors, bit-packed masks, JSON configs.

The tensor container is deliberately tiny: magic, version, dtype code,
rank, little-endian u64 dims, then the row-major float32 payload. Masks
pack their boolean grid with a dimension header. Configs and schedules are
JSON documents validated against a schema on load, then re-checked against
the mask-module invariants so loading can never construct an invalid
value.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .errors import (
    BadMagic,
    InvariantViolation,
    SchemaViolation,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
    ValidationError,
)
from .layout import TileShape, VideoGrid
from .masks import (
    DualWindow,
    FrameGroup,
    HeadMaskConfig,
    ModelMaskSchedule,
    ScheduleEntry,
    SpatialWindow,
    BlockMask,
)

TENSOR_MAGIC = b"CATN"
MASK_MAGIC = b"CATM"
FORMAT_VERSION = 1
DTYPE_F32 = 0


def write_tensor(path, array: np.ndarray) -> None:
    """Store a float32 array; other dtypes are converted before writing."""
    array = np.ascontiguousarray(array, dtype=np.float32)
    header = struct.pack(
        f"<4sHBB{array.ndim}Q",
        TENSOR_MAGIC,
        FORMAT_VERSION,
        DTYPE_F32,
        array.ndim,
        *array.shape,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.tobytes(order="C"))


def _take(data: bytes, offset: int, size: int, what: str) -> tuple[bytes, int]:
    if offset + size > len(data):
        raise TruncatedPayload(f"file ends inside {what}")
    return data[offset : offset + size], offset + size


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != TENSOR_MAGIC:
        raise BadMagic(f"expected magic {TENSOR_MAGIC!r}, got {data[:4]!r}")
    chunk, offset = _take(data, 4, 4, "header")
    version, dtype, rank = struct.unpack("<HBB", chunk)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version} not supported")
    if dtype != DTYPE_F32:
        raise UnsupportedDtype(f"dtype code {dtype} not supported")
    chunk, offset = _take(data, offset, 8 * rank, "dims")
    dims = struct.unpack(f"<{rank}Q", chunk)
    expected = int(np.prod(dims, dtype=np.uint64)) * 4 if rank else 4
    if len(data) - offset != expected:
        raise TruncatedPayload(
            f"payload is {len(data) - offset} bytes, dims {dims} need {expected}"
        )
    flat = np.frombuffer(data, dtype="<f4", count=expected // 4, offset=offset)
    return flat.reshape(dims).copy()


def write_mask(path, mask: BlockMask) -> None:
    rows, cols = mask.allowed.shape
    header = struct.pack(
        "<4sHIQQ", MASK_MAGIC, FORMAT_VERSION, mask.block_size, rows, cols
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.packbits(mask.allowed, axis=None).tobytes())


def read_mask(path) -> BlockMask:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MASK_MAGIC:
        raise BadMagic(f"expected magic {MASK_MAGIC!r}, got {data[:4]!r}")
    chunk, offset = _take(data, 4, 2 + 4 + 16, "header")
    version, block_size, rows, cols = struct.unpack("<HIQQ", chunk)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version} not supported")
    nbits = rows * cols
    expected = (nbits + 7) // 8
    if len(data) - offset != expected:
        raise TruncatedPayload(
            f"payload is {len(data) - offset} bytes, {rows}x{cols} bits need {expected}"
        )
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=offset), count=nbits)
    return BlockMask(block_size=block_size, allowed=bits.reshape(rows, cols).astype(bool))


@dataclass(frozen=True)
class ConfigFile:
    """On-disk form of one head config plus its geometry context."""

    grid: VideoGrid
    tile: TileShape
    block_size: int
    config: HeadMaskConfig


@dataclass(frozen=True)
class ScheduleFile:
    """On-disk form of a full-model mask schedule."""

    grid: VideoGrid
    tile: TileShape
    block_size: int
    schedule: ModelMaskSchedule


_DIM = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "integer", "minimum": 0}
_WINDOW = {
    "oneOf": [
        {"type": "null"},
        {
            "type": "object",
            "properties": {"omega": _NONNEG, "eta": _NONNEG},
            "required": ["omega", "eta"],
            "additionalProperties": False,
        },
    ]
}
_GROUPS = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "properties": {"d_lo": _NONNEG, "d_hi": _NONNEG, "w1": _WINDOW, "w2": _WINDOW},
        "required": ["d_lo", "d_hi", "w1", "w2"],
        "additionalProperties": False,
    },
}
_COMMON = {
    "grid": {
        "type": "object",
        "properties": {"f": _DIM, "h": _DIM, "w": _DIM},
        "required": ["f", "h", "w"],
        "additionalProperties": False,
    },
    "tile": {
        "type": "object",
        "properties": {"tf": _DIM, "th": _DIM, "tw": _DIM},
        "required": ["tf", "th", "tw"],
        "additionalProperties": False,
    },
    "block_size": _DIM,
}
CONFIG_SCHEMA = {
    "type": "object",
    "properties": {**_COMMON, "groups": _GROUPS},
    "required": ["grid", "tile", "block_size", "groups"],
    "additionalProperties": False,
}
SCHEDULE_SCHEMA = {
    "type": "object",
    "properties": {
        **_COMMON,
        "full_prefix": _NONNEG,
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "layer": _NONNEG,
                    "head": _NONNEG,
                    "step_lo": _NONNEG,
                    "step_hi": _NONNEG,
                    "config": {
                        "type": "object",
                        "properties": {"groups": _GROUPS},
                        "required": ["groups"],
                        "additionalProperties": False,
                    },
                },
                "required": ["layer", "head", "step_lo", "step_hi", "config"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["grid", "tile", "block_size", "full_prefix", "entries"],
    "additionalProperties": False,
}


def _window_to_json(w: SpatialWindow | None):
    return None if w is None else {"omega": w.omega, "eta": w.eta}


def _groups_to_json(config: HeadMaskConfig) -> list[dict]:
    return [
        {
            "d_lo": g.d_lo,
            "d_hi": g.d_hi,
            "w1": _window_to_json(g.window.w1),
            "w2": _window_to_json(g.window.w2),
        }
        for g in config.groups
    ]


def _window_from_json(obj) -> SpatialWindow | None:
    return None if obj is None else SpatialWindow(omega=obj["omega"], eta=obj["eta"])


def _groups_from_json(items: list[dict]) -> HeadMaskConfig:
    groups = tuple(
        FrameGroup(
            d_lo=item["d_lo"],
            d_hi=item["d_hi"],
            window=DualWindow(
                w1=_window_from_json(item["w1"]), w2=_window_from_json(item["w2"])
            ),
        )
        for item in items
    )
    return HeadMaskConfig(groups=groups)


def save_config(path, value: ConfigFile | ScheduleFile) -> None:
    doc: dict = {
        "grid": {"f": value.grid.f, "h": value.grid.h, "w": value.grid.w},
        "tile": {"tf": value.tile.tf, "th": value.tile.th, "tw": value.tile.tw},
        "block_size": value.block_size,
    }
    if isinstance(value, ConfigFile):
        doc["groups"] = _groups_to_json(value.config)
    else:
        doc["full_prefix"] = value.schedule.full_attention_prefix
        doc["entries"] = [
            {
                "layer": e.layer,
                "head": e.head,
                "step_lo": e.step_lo,
                "step_hi": e.step_hi,
                "config": {"groups": _groups_to_json(e.config)},
            }
            for e in value.schedule.entries
        ]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_config(path) -> ConfigFile | ScheduleFile:
    """Parse and fully validate a config or schedule document.

    Schema problems raise :class:`SchemaViolation` carrying the JSON path
    of the offending field; structurally valid documents that break a
    mask-module invariant raise :class:`InvariantViolation`.
    """
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("$", "top-level value must be an object")
    schema = SCHEDULE_SCHEMA if "entries" in doc else CONFIG_SCHEMA
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        first = errors[0]
        raise SchemaViolation(first.json_path, first.message)
    grid = VideoGrid(**doc["grid"])
    tile = TileShape(**doc["tile"])
    try:
        if "entries" in doc:
            entries = tuple(
                ScheduleEntry(
                    layer=e["layer"],
                    head=e["head"],
                    step_lo=e["step_lo"],
                    step_hi=e["step_hi"],
                    config=_validated_config(_groups_from_json(e["config"]["groups"]), grid),
                )
                for e in doc["entries"]
            )
            schedule = ModelMaskSchedule(
                full_attention_prefix=doc["full_prefix"], entries=entries
            )
            return ScheduleFile(
                grid=grid, tile=tile, block_size=doc["block_size"], schedule=schedule
            )
        config = _validated_config(_groups_from_json(doc["groups"]), grid)
        return ConfigFile(grid=grid, tile=tile, block_size=doc["block_size"], config=config)
    except InvariantViolation:
        raise
    except ValidationError as exc:
        raise InvariantViolation(str(exc)) from exc


def _validated_config(config: HeadMaskConfig, grid: VideoGrid) -> HeadMaskConfig:
    config.validate_for_grid(grid)
    return config
