"""Bit-exact volume persistence and config/manifest handling.

Volumes are written either as uncompressed baseline multipage TIFF (one
grayscale page per z-slice, little-endian, single strip per page) or as a
raw little-endian z-major payload with a JSON sidecar header. Both round-trip
bit-exactly. Scene manifests carry every sampled model parameter, so a label
volume can be re-rasterized from the manifest alone.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import (BadSidecar, CorruptHeader, LengthMismatch, SchemaError,
                     UnsupportedTiffFeature)
from .scene import Scene
from .volume import DTYPES, Volume

# ---------------------------------------------------------------------------
# TIFF tag ids

_TAG_WIDTH = 256
_TAG_LENGTH = 257
_TAG_BITS = 258
_TAG_COMPRESSION = 259
_TAG_PHOTOMETRIC = 262
_TAG_STRIP_OFFSETS = 273
_TAG_SAMPLES = 277
_TAG_ROWS_PER_STRIP = 278
_TAG_STRIP_COUNTS = 279
_TAG_SAMPLE_FORMAT = 339
_TAG_TILE_WIDTH = 322
_TAG_TILE_LENGTH = 323

_TYPE_SHORT = 3
_TYPE_LONG = 4
_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 7: 1, 8: 2, 9: 4,
               10: 8, 11: 4, 12: 8}

_TIFF_DTYPES = {"u8": np.uint8, "u16": np.uint16, "u32": np.uint32}


def write_tiff(vol: Volume, path) -> None:
    """Write an uncompressed little-endian grayscale multipage TIFF."""
    data = vol.data
    name = vol.dtype_name()
    if name not in _TIFF_DTYPES:
        raise UnsupportedTiffFeature(f"dtype {name} not supported for TIFF")
    nz, ny, nx = data.shape
    bits = data.dtype.itemsize * 8
    page_bytes = ny * nx * data.dtype.itemsize

    with open(path, "wb") as fh:
        fh.write(b"II*\x00")
        fh.write(struct.pack("<I", 8))       # offset of first IFD
        offset = 8
        for z in range(nz):
            entries = [
                (_TAG_WIDTH, _TYPE_LONG, 1, nx),
                (_TAG_LENGTH, _TYPE_LONG, 1, ny),
                (_TAG_BITS, _TYPE_SHORT, 1, bits),
                (_TAG_COMPRESSION, _TYPE_SHORT, 1, 1),
                (_TAG_PHOTOMETRIC, _TYPE_SHORT, 1, 1),
                (_TAG_STRIP_OFFSETS, _TYPE_LONG, 1, 0),   # patched below
                (_TAG_SAMPLES, _TYPE_SHORT, 1, 1),
                (_TAG_ROWS_PER_STRIP, _TYPE_LONG, 1, ny),
                (_TAG_STRIP_COUNTS, _TYPE_LONG, 1, page_bytes),
                (_TAG_SAMPLE_FORMAT, _TYPE_SHORT, 1, 1),
            ]
            ifd_size = 2 + 12 * len(entries) + 4
            strip_offset = offset + ifd_size
            next_ifd = 0 if z == nz - 1 else strip_offset + page_bytes
            buf = bytearray()
            buf += struct.pack("<H", len(entries))
            for tag, typ, count, value in entries:
                if tag == _TAG_STRIP_OFFSETS:
                    value = strip_offset
                buf += struct.pack("<HHI", tag, typ, count)
                buf += struct.pack("<I", value) if typ == _TYPE_LONG \
                    else struct.pack("<HH", value, 0)
            buf += struct.pack("<I", next_ifd)
            fh.write(bytes(buf))
            fh.write(np.ascontiguousarray(data[z]).astype(
                data.dtype.newbyteorder("<")).tobytes())
            offset = strip_offset + page_bytes


def _read_ifd(blob: bytes, offset: int, fmt: str):
    if offset + 2 > len(blob):
        raise CorruptHeader("IFD offset beyond end of file")
    (count,) = struct.unpack_from(fmt + "H", blob, offset)
    entries = {}
    pos = offset + 2
    for _ in range(count):
        if pos + 12 > len(blob):
            raise CorruptHeader("truncated IFD entry")
        tag, typ, n = struct.unpack_from(fmt + "HHI", blob, pos)
        size = _TYPE_SIZES.get(typ, 1) * n
        if size <= 4:
            raw = blob[pos + 8:pos + 12]
        else:
            (value_offset,) = struct.unpack_from(fmt + "I", blob, pos + 8)
            raw = blob[value_offset:value_offset + size]
        if typ == _TYPE_SHORT:
            values = struct.unpack_from(fmt + f"{n}H", raw, 0)
        elif typ == _TYPE_LONG:
            values = struct.unpack_from(fmt + f"{n}I", raw, 0)
        else:
            values = (0,)
        entries[tag] = values
        pos += 12
    (next_ifd,) = struct.unpack_from(fmt + "I", blob, pos)
    return entries, next_ifd


def read_tiff(path, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Read an uncompressed grayscale multipage TIFF (ours or external)."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise CorruptHeader("file shorter than TIFF header")
    order = blob[:2]
    if order == b"II":
        fmt = "<"
    elif order == b"MM":
        fmt = ">"
    else:
        raise CorruptHeader(f"bad byte-order mark {order!r}")
    (magic,) = struct.unpack_from(fmt + "H", blob, 2)
    if magic != 42:
        raise CorruptHeader(f"bad TIFF magic {magic}")
    (offset,) = struct.unpack_from(fmt + "I", blob, 4)

    pages = []
    shape = None
    dtype = None
    while offset:
        entries, offset = _read_ifd(blob, offset, fmt)
        if _TAG_TILE_WIDTH in entries or _TAG_TILE_LENGTH in entries:
            raise UnsupportedTiffFeature("tiled TIFF not supported")
        if entries.get(_TAG_COMPRESSION, (1,))[0] != 1:
            raise UnsupportedTiffFeature("compressed TIFF not supported")
        if entries.get(_TAG_SAMPLES, (1,))[0] != 1:
            raise UnsupportedTiffFeature("only single-sample grayscale supported")
        if entries.get(_TAG_SAMPLE_FORMAT, (1,))[0] != 1:
            raise UnsupportedTiffFeature("only unsigned sample format supported")
        bits = entries.get(_TAG_BITS, (1,))[0]
        if bits not in (8, 16, 32):
            raise UnsupportedTiffFeature(f"{bits}-bit samples not supported")
        try:
            nx = entries[_TAG_WIDTH][0]
            ny = entries[_TAG_LENGTH][0]
            offsets = entries[_TAG_STRIP_OFFSETS]
            counts = entries[_TAG_STRIP_COUNTS]
        except KeyError as exc:
            raise CorruptHeader(f"missing required tag: {exc}") from exc
        if shape is None:
            shape = (ny, nx)
            dtype = np.dtype(f"{fmt}u{bits // 8}")
        elif shape != (ny, nx):
            raise UnsupportedTiffFeature("pages with differing shapes")
        payload = b"".join(blob[o:o + c] for o, c in zip(offsets, counts))
        if len(payload) != ny * nx * dtype.itemsize:
            raise CorruptHeader("strip data length does not match page shape")
        pages.append(np.frombuffer(payload, dtype=dtype).reshape(ny, nx))
    if not pages:
        raise CorruptHeader("TIFF contains no pages")
    stack = np.stack(pages).astype(dtype.newbyteorder("="))
    return Volume(stack, spacing)


# ---------------------------------------------------------------------------
# Raw + sidecar


def config_digest(config_dict: dict) -> str:
    """SHA-256 of the canonicalized (sorted, compact) JSON of a config."""
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_raw(vol: Volume, path, seed: int = 0, digest: str = "") -> None:
    """Raw little-endian z-major payload + JSON sidecar header."""
    path = Path(path)
    data = np.ascontiguousarray(vol.data)
    le = data.astype(data.dtype.newbyteorder("<"), copy=False)
    path.write_bytes(le.tobytes())
    header = {
        "shape": list(vol.shape),
        "dtype": vol.dtype_name(),
        "spacing": list(vol.spacing),
        "endianness": "little",
        "seed": int(seed),
        "config_digest": digest,
    }
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def read_raw(path) -> Volume:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise BadSidecar(f"missing sidecar {sidecar}")
    try:
        header = json.loads(sidecar.read_text())
        shape = tuple(int(v) for v in header["shape"])
        dtype_name = header["dtype"]
        spacing = tuple(float(v) for v in header["spacing"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise BadSidecar(f"malformed sidecar {sidecar}: {exc}") from exc
    if dtype_name not in DTYPES:
        raise BadSidecar(f"unknown dtype {dtype_name!r}")
    dtype = np.dtype(DTYPES[dtype_name]).newbyteorder("<")
    payload = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise LengthMismatch(
            f"{path}: payload {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return Volume(data.astype(dtype.newbyteorder("=")), spacing)


# ---------------------------------------------------------------------------
# Manifests and configs


def write_manifest(scene: Scene, stats, path) -> None:
    doc = scene.to_dict()
    doc["config_digest"] = config_digest(scene.config.to_dict())
    doc["rasterization_stats"] = stats
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> Scene:
    doc = json.loads(Path(path).read_text())
    return Scene.from_dict(doc)


def load_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc


def parse_scene_config(path, strict: bool = True, warn=None):
    from .scene import SceneConfig
    return SceneConfig.from_dict(load_json(path), strict=strict, warn=warn)


def parse_dataset_config(path):
    from .scene import DatasetConfig
    return DatasetConfig.from_dict(load_json(path))
