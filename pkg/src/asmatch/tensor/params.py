"""Named parameters, AdamW, and the binary checkpoint format.

Checkpoint layout::

    b"ASMCKPT\\0" | u64 header length | JSON header | float64 LE blob | sha256

The header lists every array (name, kind, shape, offset) plus free-form
metadata; the digest covers all preceding bytes.  Headers are written with
sorted keys so that save -> load -> save is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ConfigError
from .core import Tensor

MAGIC = b"ASMCKPT\0"
FORMAT_VERSION = 1


class ParamStore:
    """Owns the trainable tensors, non-trainable buffers and optimizer state."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = False
        self.rng = np.random.default_rng(seed)
        self.opt_m: dict[str, np.ndarray] = {}
        self.opt_v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def _fresh(self, name: str) -> None:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"parameter name {name!r} already in use")

    def add(self, name: str, value: np.ndarray) -> Tensor:
        self._fresh(name)
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def linear(self, name: str, fan_in: int, fan_out: int, bias: bool = True):
        """Glorot-uniform weight ``(fan_in, fan_out)`` and zero bias."""
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = self.add(f"{name}.w", self.rng.uniform(-lim, lim, (fan_in, fan_out)))
        b = self.add(f"{name}.b", np.zeros(fan_out)) if bias else None
        return w, b

    def buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._fresh(name)
        arr = np.array(value, dtype=np.float64)
        self.buffers[name] = arr
        return arr

    def train(self) -> "ParamStore":
        self.training = True
        return self

    def eval(self) -> "ParamStore":
        self.training = False
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self.params[k].data[...] = v

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # -- persistence -------------------------------------------------------

    def _arrays(self):
        for name in sorted(self.params):
            yield "param", name, self.params[name].data
        for name in sorted(self.buffers):
            yield "buffer", name, self.buffers[name]
        for name in sorted(self.opt_m):
            yield "adam_m", name, self.opt_m[name]
        for name in sorted(self.opt_v):
            yield "adam_v", name, self.opt_v[name]

    def to_bytes(self, metadata: dict | None = None) -> bytes:
        entries, chunks, offset = [], [], 0
        for kind, name, arr in self._arrays():
            flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
            entries.append({"kind": kind, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(flat.tobytes())
            offset += flat.size
        header = {
            "format_version": FORMAT_VERSION,
            "entries": entries,
            "step_count": self.step_count,
            "metadata": metadata or {},
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        body = MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)
        return body + hashlib.sha256(body).digest()

    def save(self, path, metadata: dict | None = None) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes(metadata))
        return path

    def load_bytes(self, data: bytes, strict: bool = True) -> dict:
        """Restore values from checkpoint bytes; returns the metadata block."""
        header, blob = _parse(data)
        arrays = {}
        for e in header["entries"]:
            size = int(np.prod(e["shape"], dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=8 * e["offset"])
            arrays[(e["kind"], e["name"])] = arr.reshape(e["shape"]).astype(np.float64)
        names = {n for k, n in arrays if k == "param"}
        if strict and names != set(self.params):
            missing = sorted(set(self.params) - names)
            extra = sorted(names - set(self.params))
            raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for (kind, name), arr in arrays.items():
            if kind == "param":
                if name in self.params:
                    if self.params[name].shape != arr.shape:
                        raise CheckpointError(
                            f"{name}: checkpoint shape {arr.shape} vs model shape {self.params[name].shape}")
                    self.params[name].data = arr
            elif kind == "buffer":
                if name in self.buffers:
                    self.buffers[name][...] = arr
            elif kind == "adam_m":
                self.opt_m[name] = arr
            elif kind == "adam_v":
                self.opt_v[name] = arr
        self.step_count = int(header["step_count"])
        return header["metadata"]

    def load(self, path, strict: bool = True) -> dict:
        return self.load_bytes(Path(path).read_bytes(), strict)


def _parse(data: bytes):
    if len(data) < len(MAGIC) + 8 + 32 or not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    (hlen,) = struct.unpack("<Q", body[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start:start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    return header, body[start + hlen:]


def read_metadata(path) -> dict:
    header, _ = _parse(Path(path).read_bytes())
    return header["metadata"]


class AdamW:
    """Adam with decoupled weight decay applied to every parameter."""

    def __init__(self, store: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay

    def step(self) -> None:
        s = self.store
        s.step_count += 1
        t = s.step_count
        c1 = 1.0 - self.b1 ** t
        c2 = 1.0 - self.b2 ** t
        for name, p in s.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = s.opt_m.get(name)
            if m is None:
                m = s.opt_m[name] = np.zeros_like(p.data)
                s.opt_v[name] = np.zeros_like(p.data)
            v = s.opt_v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
