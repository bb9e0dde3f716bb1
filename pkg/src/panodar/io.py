"""File interchange: NPY tensors, RLE mask sets, JSON reports, digests.

Readers reject anything off-format instead of guessing. Writers go through
a temporary file and ``os.replace`` so a failed run never leaves a
half-written output behind.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numba
import numpy as np
from numpy.lib import format as npformat

from .errors import ConsistencyError, FormatError, InvalidInputError
from .fusion import InstanceMaskSet

NPY_MAGIC = b"\x93NUMPY"
NPY_HEADER_OFFSET = 10
LABEL_DTYPES = (np.dtype("<u2"), np.dtype("u1"))
LOGITS_DTYPE = np.dtype("<f4")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


# --- atomic writes -------------------------------------------------------

def _file_mode() -> int:
    umask = os.umask(0)
    os.umask(umask)
    return 0o666 & ~umask


_FILE_MODE = _file_mode()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def write_json(obj, path) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))


def read_json(path):
    try:
        with open(path, "rb") as f:
            return json.loads(f.read().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


# --- NPY -------------------------------------------------------------------

def _describe(dtype: np.dtype, shape) -> str:
    return f"{dtype.str} with shape {tuple(shape)}"


def _check_tensor(arr: np.ndarray, kind: str | None) -> str:
    """Classify an array as 'logits' or 'labels', enforcing ``kind``."""
    if arr.dtype == LOGITS_DTYPE and arr.ndim == 3:
        found = "logits"
    elif arr.dtype in LABEL_DTYPES and arr.ndim == 2:
        found = "labels"
    else:
        found = None
    if kind is not None and found != kind:
        expected = ("<f4 with shape (C, H, W)" if kind == "logits"
                    else "|u1 or <u2 with shape (H, W)")
        raise FormatError(f"expected {kind} as {expected}, found {_describe(arr.dtype, arr.shape)}")
    if found is None:
        raise FormatError(
            "expected <f4 (C, H, W) logits or |u1/<u2 (H, W) labels, "
            f"found {_describe(arr.dtype, arr.shape)}"
        )
    return found


def decode_npy(data: bytes, kind: str | None = None) -> np.ndarray:
    if len(data) < NPY_HEADER_OFFSET or data[:6] != NPY_MAGIC:
        raise FormatError("missing NPY magic string", offset=0)
    if data[6:8] != b"\x01\x00":
        raise FormatError(f"unsupported NPY version {data[6]}.{data[7]}, only 1.0 is accepted", offset=6)
    fp = io.BytesIO(data)
    fp.seek(8)
    try:
        header = npformat.read_array_header_1_0(fp)
    except ValueError as exc:
        raise FormatError(f"malformed NPY header: {exc}", offset=NPY_HEADER_OFFSET) from exc
    shape, fortran, dtype = header
    if fortran:
        raise FormatError("fortran_order arrays are not accepted", offset=NPY_HEADER_OFFSET)
    if dtype.byteorder == ">" or (dtype.byteorder == "=" and not np.little_endian):
        raise FormatError(f"big-endian dtype {dtype.str} is not accepted", offset=NPY_HEADER_OFFSET)
    start = fp.tell()
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) - start != expected:
        raise FormatError(
            f"payload holds {len(data) - start} bytes, header implies {expected}", offset=start
        )
    arr = np.frombuffer(data, dtype=dtype, offset=start).reshape(shape).copy()
    _check_tensor(arr, kind)
    return arr


def encode_npy(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.byteorder == ">":
        raise FormatError("refusing to write a big-endian array")
    _check_tensor(arr, None)
    buf = io.BytesIO()
    npformat.write_array(buf, np.ascontiguousarray(arr), version=(1, 0), allow_pickle=False)
    return buf.getvalue()


def read_tensor(path, kind: str | None = None) -> np.ndarray:
    """Read a float32 ``(C, H, W)`` logits grid or a uint8/uint16 ``(H, W)``
    label map from an NPY 1.0 file. ``kind`` ('logits'/'labels') pins which."""
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_npy(data, kind)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_tensor(arr: np.ndarray, path) -> None:
    atomic_write_bytes(path, encode_npy(arr))


def label_array(labels) -> np.ndarray:
    """Narrowest accepted on-disk dtype for a label/boundary map."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise InvalidInputError("labels must lie in [0, 65535] to be stored")
    dtype = np.uint8 if not labels.size or labels.max() <= 0xFF else np.dtype("<u2")
    return labels.astype(dtype)


def write_labels(labels, path) -> None:
    write_tensor(label_array(labels), path)


def read_binary_map(path) -> np.ndarray:
    arr = read_tensor(path, "labels")
    if arr.size and arr.max() > 1:
        raise FormatError(f"{path}: expected a 0/1 map, found value {int(arr.max())}")
    return arr.astype(bool)


# --- RLE masks ---------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> list[int]:
    """Uncompressed COCO-style run lengths over the column-major flattening,
    starting with the zero run (possibly 0)."""
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(counts, height: int, width: int) -> np.ndarray:
    counts = list(counts)
    if any(not isinstance(c, int) or isinstance(c, bool) or c < 0 for c in counts):
        raise FormatError("RLE counts must be non-negative integers")
    if sum(counts) != height * width:
        raise FormatError(f"RLE counts sum to {sum(counts)}, expected {height * width}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((height, width), order="F")


def masks_to_dict(masks: InstanceMaskSet) -> dict:
    return {
        "height": masks.height,
        "width": masks.width,
        "masks": [
            {"id": int(i), "area": int(a), "rle": {"counts": rle_encode(m)}}
            for i, a, m in zip(masks.ids, masks.areas, masks.masks)
        ],
    }


def _require_keys(obj, keys: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise FormatError(f"{where} must be a JSON object")
    missing = sorted(keys - set(obj))
    extra = sorted(set(obj) - keys)
    if missing:
        raise FormatError(f"{where} is missing keys: {', '.join(missing)}")
    if extra:
        raise FormatError(f"{where} has unexpected keys: {', '.join(extra)}")


def _require_int(value, where: str, minimum: int = 0) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise FormatError(f"{where} must be an integer >= {minimum}")
    return value


def masks_from_dict(doc) -> InstanceMaskSet:
    _require_keys(doc, {"height", "width", "masks"}, "mask document")
    h = _require_int(doc["height"], "height", 1)
    w = _require_int(doc["width"], "width", 1)
    if not isinstance(doc["masks"], list):
        raise FormatError("masks must be a list")
    stack, ids = [], []
    for k, entry in enumerate(doc["masks"]):
        where = f"masks[{k}]"
        _require_keys(entry, {"id", "area", "rle"}, where)
        _require_keys(entry["rle"], {"counts"}, f"{where}.rle")
        if not isinstance(entry["rle"]["counts"], list):
            raise FormatError(f"{where}.rle.counts must be a list")
        area = _require_int(entry["area"], f"{where}.area", 1)
        try:
            m = rle_decode(entry["rle"]["counts"], h, w)
        except FormatError as exc:
            raise FormatError(f"{where}: {exc}") from exc
        if int(m.sum()) != area:
            raise ConsistencyError(f"{where}: declared area {area}, decoded {int(m.sum())} pixels")
        stack.append(m)
        ids.append(_require_int(entry["id"], f"{where}.id"))
    if len(set(ids)) != len(ids):
        raise FormatError("mask ids must be unique")
    arr = np.stack(stack) if stack else np.zeros((0, h, w), dtype=bool)
    return InstanceMaskSet(arr, tuple(ids))


def read_masks(path) -> InstanceMaskSet:
    try:
        return masks_from_dict(read_json(path))
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def write_masks(masks: InstanceMaskSet, path) -> None:
    atomic_write_bytes(path, json.dumps(masks_to_dict(masks), separators=(",", ":")).encode("utf-8"))


# --- digests -----------------------------------------------------------------

@numba.njit(cache=True)
def _fnv1a_64(data, h):
    prime = np.uint64(FNV_PRIME)
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a of a byte string."""
    return int(_fnv1a_64(np.frombuffer(data, dtype=np.uint8), np.uint64(FNV_OFFSET)))


def file_digest(path) -> str:
    with open(path, "rb") as f:
        return f"{fnv1a_64(f.read()):016x}"
