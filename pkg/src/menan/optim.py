"""Adam with polynomial learning-rate decay, plus checkpoint serialization.

Checkpoint container format (documented here, stable across releases):

    magic   8 bytes   b"SERCKPT1"
    version u32       1
    meta    u32 length + UTF-8 JSON (sorted keys, compact separators)
    n_param u32
    per parameter, sorted by name:
        u16 name length, UTF-8 name
        u8 ndim, u32 dims...
        float64 row-major values
    n_state u32       optimizer slots (moments), same entry layout
    n_step  u32       step counters: u16 name length + name + u64 count

All integers and floats are little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Parameter
from .errors import DataError, NumericError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_MAGIC = b"SERCKPT1"
_VERSION = 1


def polynomial_lr(base_lr: float, step: int, total_steps: int, power: float = 0.9) -> float:
    """Effective learning rate at ``step`` (0-based): base * (1 - t/T)^power."""
    if total_steps <= 0:
        return base_lr
    frac = min(step, total_steps - 1) / total_steps
    return base_lr * (1.0 - frac) ** power


class Adam:
    """Adam with bias correction over one named parameter group.

    Frozen parameters are skipped entirely: values and moment slots stay
    bitwise unchanged no matter how many steps run.
    """

    def __init__(self, params: list[Parameter], lr: float = 0.001,
                 total_steps: int = 0, decay_power: float = 0.9):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise DataError("optimizer parameters must have unique names")
        self.params = list(params)
        self.lr = lr
        self.total_steps = total_steps
        self.decay_power = decay_power
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update; returns the effective learning rate used."""
        lr_t = polynomial_lr(self.lr, self.step_count, self.total_steps, self.decay_power)
        t = self.step_count + 1
        bc1 = 1.0 - ADAM_BETA1 ** t
        bc2 = 1.0 - ADAM_BETA2 ** t
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{p.name}'")
            m = self.m[p.name]
            v = self.v[p.name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            p.data -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        self.step_count += 1
        return lr_t


def _write_array(chunks: list[bytes], name: str, arr: np.ndarray) -> None:
    enc = name.encode("utf-8")
    chunks.append(struct.pack("<H", len(enc)))
    chunks.append(enc)
    chunks.append(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        chunks.append(struct.pack("<I", d))
    chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def name(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def array(self) -> np.ndarray:
        ndim = self.u8()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(count * 8), dtype="<f8").astype(np.float64)
        return data.reshape(shape)


def save_checkpoint(path, params: dict[str, np.ndarray],
                    opt_state: dict[str, np.ndarray] | None = None,
                    step_counts: dict[str, int] | None = None,
                    meta: dict | None = None) -> None:
    """Write a checkpoint; entries are sorted by name so output is stable."""
    opt_state = opt_state or {}
    step_counts = step_counts or {}
    meta_json = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks: list[bytes] = [_MAGIC, struct.pack("<I", _VERSION)]
    chunks.append(struct.pack("<I", len(meta_json)))
    chunks.append(meta_json)
    chunks.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        _write_array(chunks, name, params[name])
    chunks.append(struct.pack("<I", len(opt_state)))
    for name in sorted(opt_state):
        _write_array(chunks, name, opt_state[name])
    chunks.append(struct.pack("<I", len(step_counts)))
    for name in sorted(step_counts):
        enc = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<Q", step_counts[name]))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint; returns (params, opt_state, step_counts, meta)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    rd = _Reader(buf)
    if rd.take(8) != _MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    version = rd.u32()
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    meta = json.loads(rd.take(rd.u32()).decode("utf-8"))
    params = {}
    for _ in range(rd.u32()):
        name = rd.name()
        params[name] = rd.array()
    opt_state = {}
    for _ in range(rd.u32()):
        name = rd.name()
        opt_state[name] = rd.array()
    step_counts = {}
    for _ in range(rd.u32()):
        name = rd.name()
        step_counts[name] = rd.u64()
    return params, opt_state, step_counts, meta


def adam_state_dict(tag: str, opt: Adam) -> dict[str, np.ndarray]:
    """Flatten an optimizer's moment slots under a tag prefix."""
    out = {}
    for name in opt.m:
        out[f"{tag}/m/{name}"] = opt.m[name]
        out[f"{tag}/v/{name}"] = opt.v[name]
    return out


def load_adam_state(tag: str, opt: Adam, state: dict[str, np.ndarray],
                    step_counts: dict[str, int]) -> None:
    for name in opt.m:
        opt.m[name] = state[f"{tag}/m/{name}"].copy()
        opt.v[name] = state[f"{tag}/v/{name}"].copy()
    opt.step_count = step_counts[tag]
