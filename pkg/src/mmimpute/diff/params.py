"""Named parameter collections with Adam state, plus a tensor file format."""
import hashlib
from collections import OrderedDict

import numpy as np

from mmimpute.diff.tensor import Tensor


class TrainingError(RuntimeError):
    """Non-finite values met during training; message carries coordinates."""


class ParamSet:
    """Ordered name -> trainable :class:`Tensor` map with Adam moments."""

    def __init__(self, tensors=None):
        self._t = OrderedDict()
        self.m = {}
        self.v = {}
        self.step = 0
        for name, arr in (tensors or {}).items():
            self.add(name, arr)

    def add(self, name, arr):
        if name in self._t:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._t[name] = Tensor(np.array(arr), requires_grad=True, name=name)
        return self._t[name]

    def __getitem__(self, name):
        return self._t[name]

    def __contains__(self, name):
        return name in self._t

    def __iter__(self):
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self):
        return list(self._t)

    def zero_grad(self):
        for t in self._t.values():
            t.grad = None

    def grads(self):
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self._t.items()}

    def arrays(self):
        return {k: t.data for k, t in self._t.items()}

    def snapshot(self):
        return {k: t.data.copy() for k, t in self._t.items()}

    def load(self, arrays):
        for k, arr in arrays.items():
            if self._t[k].data.shape != arr.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {self._t[k].data.shape}")
            self._t[k].data = np.array(arr, dtype=self._t[k].data.dtype)

    def astype(self, dtype):
        """Copy with every tensor cast (optimizer state dropped)."""
        return ParamSet({k: t.data.astype(dtype) for k, t in self._t.items()})

    def n_params(self):
        return int(np.sum([t.data.size for t in self._t.values()]))

    def digest(self):
        h = hashlib.sha256()
        for k, t in self._t.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def check_finite(self, where=""):
        for k, t in self._t.items():
            if not np.all(np.isfinite(t.data)):
                raise TrainingError(f"non-finite parameter {k!r} {where}".strip())


def merge(*sets, prefixes=None):
    """View over several ParamSets under one namespace (shares tensors)."""
    out = ParamSet()
    for i, ps in enumerate(sets):
        pre = prefixes[i] if prefixes else ""
        for k, t in ps.items():
            if pre + k in out._t:
                raise KeyError(f"duplicate parameter name {pre + k!r}")
            out._t[pre + k] = t
    return out


MAGIC = "MMTENSORS v1"


def save_tensors(arrays, path):
    """Manifest of names/shapes then a little-endian float32 payload."""
    header = [MAGIC, str(len(arrays))]
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        shape = "x".join(str(s) for s in a.shape) or "scalar"
        header.append(f"{name} {shape} {offset} {a.size}")
        blobs.append(a.tobytes())
        offset += a.size
    head = ("\n".join(header) + "\n").encode()
    with open(path, "wb") as f:
        f.write(len(head).to_bytes(8, "little"))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_tensors(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated at byte {len(raw)} (no header length)")
    hlen = int.from_bytes(raw[:8], "little")
    lines = raw[8:8 + hlen].decode().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}: bad magic on line 1")
    payload = np.frombuffer(raw[8 + hlen:], dtype="<f4")
    out = OrderedDict()
    for lineno, line in enumerate(lines[2:], start=3):
        name, shape, off, size = line.split()
        off, size = int(off), int(size)
        if off + size > payload.size:
            raise ValueError(f"{path}: payload truncated; tensor {name!r} (line {lineno}) "
                             f"needs float {off + size}, have {payload.size}")
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        out[name] = payload[off:off + size].reshape(dims).astype(np.float32)
    return out
