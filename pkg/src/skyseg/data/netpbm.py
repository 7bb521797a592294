"""Binary PPM (P6) and PGM (P5) with maxval 255."""
from __future__ import annotations

import os

import numpy as np


class NetpbmError(ValueError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments.
    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one."""
    out, pos, n = [], 0, len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise NetpbmError("truncated header")
        out.append(buf[start:pos])
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise NetpbmError("header must end with a single whitespace byte")
    return out, pos + 1


def decode(buf: bytes) -> np.ndarray:
    """Return [H, W] uint8 for P5 or [H, W, 3] uint8 for P6."""
    toks, off = _tokens(buf, 4)
    magic = toks[0]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError as exc:
        raise NetpbmError("non-numeric header field") from exc
    if w < 1 or h < 1:
        raise NetpbmError("image dims must be positive")
    if maxval != 255:
        raise NetpbmError(f"maxval must be 255, got {maxval}")
    ch = 3 if magic == b"P6" else 1
    need = w * h * ch
    payload = buf[off:off + need]
    if len(payload) < need:
        raise NetpbmError(f"truncated payload: {len(payload)} of {need} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).copy()
    return arr.reshape(h, w, 3) if ch == 3 else arr.reshape(h, w)


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise NetpbmError("values must fit in 0..255")
        arr = arr.astype(np.uint8)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise NetpbmError(f"cannot store array of shape {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes()


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write(path, arr: np.ndarray) -> None:
    data = encode(arr)
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_ppm(path) -> np.ndarray:
    arr = read(path)
    if arr.ndim != 3:
        raise NetpbmError(f"{path}: expected a P6 colour image")
    return arr


def read_pgm(path) -> np.ndarray:
    arr = read(path)
    if arr.ndim != 2:
        raise NetpbmError(f"{path}: expected a P5 grey image")
    return arr
