"""Named parameters with trainable flags, and their binary container.

Container layout (all integers little-endian)::

    magic     b"RSPS"
    version   uint32 (= 1)
    count     uint32
    count x:
        name_len  uint32, name (UTF-8)
        ndim      uint32, shape uint64 x ndim
        trainable uint8
        values    float64 x prod(shape), row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

MAGIC = b"RSPS"
VERSION = 1


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    trainable: bool = False

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise ValueError(f"parameter {self.name} has non-finite values")


class ParameterStore:
    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise KeyError(f"duplicate parameter name {p.name!r}")
        self._params[p.name] = p
        return p

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def get(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def trainable_names(self) -> list[str]:
        return [n for n, p in self._params.items() if p.trainable]

    def set_trainable(self, names: Iterable[str]) -> None:
        wanted = set(names)
        unknown = wanted - set(self._params)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        for n, p in self._params.items():
            p.trainable = n in wanted

    def copy(self) -> "ParameterStore":
        return ParameterStore(Parameter(p.name, p.value.copy(), p.trainable) for p in self)

    def snapshot(self) -> dict[str, bytes]:
        return {p.name: p.value.tobytes() for p in self}

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<II", VERSION, len(self._params))]
        for p in self:
            name = p.name.encode("utf-8")
            out.append(struct.pack("<I", len(name)) + name)
            out.append(struct.pack("<I", p.value.ndim) + struct.pack(f"<{p.value.ndim}Q", *p.value.shape))
            out.append(struct.pack("<B", int(p.trainable)))
            out.append(p.value.astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParameterStore":
        if data[:4] != MAGIC:
            raise ValueError("not a parameter store container")
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise ValueError(f"unsupported container version {version}")
        pos = 12
        store = cls()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            (trainable,) = struct.unpack_from("<B", data, pos)
            pos += 1
            size = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            store.add(Parameter(name, values.astype(np.float64), bool(trainable)))
        if pos != len(data):
            raise ValueError("trailing bytes in parameter container")
        return store

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ParameterStore":
        return cls.from_bytes(Path(path).read_bytes())
