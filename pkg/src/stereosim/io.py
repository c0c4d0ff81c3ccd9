"""PNG codecs for every stored layer plus JSON helpers.

Layouts:

* depth: 16-bit grayscale, 0.1 mm units, 0 = invalid
* normals: 16-bit RGB, ``round((n + 1) / 2 * 65535)`` per component (x, y, z)
* NOCS: 16-bit RGB, ``round(nocs * 65535)``; background is 0
* instance mask: 16-bit grayscale ids, 0 = background
* IR / colour: 8-bit after clamping to [0, 1]
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import cv2
import numpy as np

from .depth_eval import DepthMap
from .errors import DecodeError, DepthOutOfRange

DEPTH_SCALE = 10000.0  # stored units per metre
MAX_STORED_DEPTH = 65535 / DEPTH_SCALE
U16 = 65535


def _encode(img):
    if img.ndim == 3:
        img = img[..., ::-1]  # OpenCV stores BGR
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(img))
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def _decode(data, dtype, channels):
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    img = cv2.imdecode(arr, cv2.IMREAD_UNCHANGED) if arr.size else None
    if img is None:
        raise DecodeError("not a decodable PNG")
    if img.dtype != dtype:
        raise DecodeError(f"expected {np.dtype(dtype).name} samples, got {img.dtype.name}")
    got = 1 if img.ndim == 2 else img.shape[2]
    if got != channels:
        raise DecodeError(f"expected {channels} channel(s), got {got}")
    return img[..., ::-1] if channels == 3 else img


def encode_depth_png(depth):
    v = depth.values if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        raise DepthOutOfRange("depth must be finite and non-negative")
    q = np.round(v * DEPTH_SCALE)
    if q.max(initial=0) > U16:
        raise DepthOutOfRange(f"depth above {MAX_STORED_DEPTH} m cannot be stored")
    return _encode(q.astype(np.uint16))


def decode_depth_png(data):
    return DepthMap(_decode(data, np.uint16, 1).astype(np.float64) / DEPTH_SCALE)


def encode_normal_png(normals):
    """Unit normals H x W x 3; non-unit vectors are renormalised, zero vectors stored as (0, 0, 0)."""
    n = np.asarray(normals, dtype=np.float64)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    zero = norm[..., 0] == 0
    n = n / np.where(norm > 0, norm, 1.0)
    q = np.round((n + 1.0) / 2.0 * U16).astype(np.uint16)
    q[zero] = 0
    return _encode(q)


def decode_normal_png(data):
    q = _decode(data, np.uint16, 3)
    n = q.astype(np.float64) / U16 * 2.0 - 1.0
    zero = ~q.any(axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n[zero] = 0.0
    return n


def encode_nocs_png(nocs):
    return _encode(np.round(np.clip(nocs, 0.0, 1.0) * U16).astype(np.uint16))


def decode_nocs_png(data):
    return _decode(data, np.uint16, 3).astype(np.float64) / U16


def encode_mask_png(mask):
    m = np.asarray(mask)
    if m.min(initial=0) < 0 or m.max(initial=0) > U16:
        raise ValueError("instance ids must fit in 16 bits")
    return _encode(m.astype(np.uint16))


def decode_mask_png(data):
    img = cv2.imdecode(np.frombuffer(bytes(data), dtype=np.uint8), cv2.IMREAD_UNCHANGED) if data else None
    if img is None or img.ndim != 2:
        raise DecodeError("not a single-channel PNG mask")
    return img.astype(np.int64)


def to_uint8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_image_png(img):
    """8-bit PNG of a float image in [0, 1] (grayscale H x W or RGB H x W x 3)."""
    return _encode(to_uint8(np.asarray(img, dtype=np.float64)))


def decode_image_png(data):
    """Float image in [0, 1]; grayscale or RGB as stored."""
    img = cv2.imdecode(np.frombuffer(bytes(data), dtype=np.uint8), cv2.IMREAD_UNCHANGED) if data else None
    if img is None or img.dtype != np.uint8:
        raise DecodeError("not an 8-bit PNG")
    if img.ndim == 3:
        img = img[..., 2::-1]
    return img.astype(np.float64) / 255.0


def quantize(img):
    """What an image looks like after an 8-bit round trip."""
    return to_uint8(img).astype(np.float64) / 255.0


def read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc.strerror or exc}") from exc


def _load(decoder, path):
    data = read_bytes(path)
    try:
        return decoder(data)
    except DecodeError as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def load_depth(path):
    return _load(decode_depth_png, path)


def load_mask(path):
    return _load(decode_mask_png, path)


def load_image(path):
    return _load(decode_image_png, path)


def load_nocs(path):
    return _load(decode_nocs_png, path)


def load_normal(path):
    return _load(decode_normal_png, path)


def dumps_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_atomic(path, data):
    """Write ``data`` (bytes or str) through a temporary sibling and rename it into place."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data.encode() if isinstance(data, str) else data)
    os.replace(tmp, path)
