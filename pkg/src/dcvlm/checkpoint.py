"""Checkpoint container: plain-text header + little-endian raw arrays.

Layout:

    DCVLM-CKPT v1
    count <n>
    tensor <name> <dtype> <shape> <offset>
    ...
    end
    <raw bytes>

Offsets are relative to the first byte after the header. Entries are
written in sorted name order so identical state produces identical bytes.
dtype tokens: f32, f64. shape is 'x'-joined dims, '-' for rank 0.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "DCVLM-CKPT v1"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_TOKENS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class CheckpointError(ValueError):
    code = "E_CKPT"


def _shape_token(shape: tuple[int, ...]) -> str:
    return "x".join(str(s) for s in shape) if shape else "-"


def _parse_shape(token: str) -> tuple[int, ...]:
    if token == "-":
        return ()
    return tuple(int(s) for s in token.split("x"))


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    lines = [MAGIC, f"count {len(arrays)}"]
    payload = bytearray()
    for name in sorted(arrays):
        if " " in name or "\n" in name:
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype not in _DTYPE_TOKENS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        token = _DTYPE_TOKENS[arr.dtype]
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        lines.append(f"tensor {name} {token} {_shape_token(arr.shape)} {len(payload)}")
        payload.extend(raw)
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(header + bytes(payload))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    sep = blob.find(b"end\n")
    if not blob.startswith(MAGIC.encode()) or sep < 0:
        raise CheckpointError(f"{path}: not a checkpoint container")
    header = blob[:sep].decode("utf-8").splitlines()
    payload = blob[sep + 4:]
    count = int(header[1].split()[1])
    out: dict[str, np.ndarray] = {}
    for line in header[2:2 + count]:
        _, name, token, shape_tok, offset = line.split()
        dtype = _DTYPES[token]
        shape = _parse_shape(shape_tok)
        n = int(np.prod(shape)) if shape else 1
        start = int(offset)
        arr = np.frombuffer(payload, dtype=dtype, count=n, offset=start)
        out[name] = arr.reshape(shape).copy()
    if len(out) != count:
        raise CheckpointError(f"{path}: header promises {count} tensors, found {len(out)}")
    return out
