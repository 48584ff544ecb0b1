"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"ADRD1\\n"
    u32 length + UTF-8 key=value text      network config
    u32 length + UTF-8 key=value text      training state (step, Adam scalars, train config)
    u32 record count
    per record: u16 name length, name, u8 ndim, ndim x u32 extents,
                float32 little-endian payload

Records hold the network parameters in definition order followed by the Adam
moments as ``adam.m/<name>`` and ``adam.v/<name>``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import ADRD, NetworkConfig
from .errors import CheckpointFormatError, DataError
from .kvtext import format_kv, parse_kv

MAGIC = b"ADRD1\n"
_PAYLOAD = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: NetworkConfig
    state: dict[str, str]
    records: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.state.get("step", 0))


def _write_text(buf, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _write_record(buf, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=_PAYLOAD).tobytes())


def save_checkpoint(path, net: ADRD, optimizer=None, step: int = 0, train_config=None) -> None:
    state = {"step": step}
    records: list[tuple[str, np.ndarray]] = list(net.state_dict().items())
    if optimizer is not None:
        state.update(adam_t=optimizer.t, adam_lr=optimizer.lr, adam_beta1=optimizer.beta1,
                     adam_beta2=optimizer.beta2, adam_eps=optimizer.eps)
        names = [p.name for p in optimizer.params]
        records += [(f"adam.m/{n}", m) for n, m in zip(names, optimizer.m)]
        records += [(f"adam.v/{n}", v) for n, v in zip(names, optimizer.v)]
    if train_config is not None:
        state.update({f"train.{k}": v for k, v in vars(train_config).items()})

    buf = io.BytesIO()
    buf.write(MAGIC)
    _write_text(buf, net.config.to_kv())
    _write_text(buf, format_kv(state))
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _write_record(buf, name, arr)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"corrupt text section: {exc}") from None


def read_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    if not data.startswith(MAGIC):
        if data.startswith(b"ADRD"):
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {data[:8]!r}")
        raise CheckpointFormatError(f"{path}: not an ADRD checkpoint (missing ADRD1 magic)")
    r = _Reader(data)
    r.take(len(MAGIC))
    try:
        config = NetworkConfig.from_kv(r.text())
        state = parse_kv(r.text())
    except (DataError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: bad header ({exc})") from None
    (count,) = r.unpack("<I")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(n * _PAYLOAD.itemsize), dtype=_PAYLOAD).reshape(shape)
        records[name] = arr
    if r.pos != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Checkpoint(config, state, records)


def load_into(net: ADRD, ckpt: Checkpoint) -> None:
    params = dict(net.named_parameters())
    for name, arr in ckpt.records.items():
        if name.startswith("adam."):
            continue
        if name not in params:
            raise CheckpointFormatError(f"unknown parameter {name!r} in checkpoint")
        p = params[name]
        if p.shape != arr.shape:
            raise CheckpointFormatError(f"parameter {name!r}: shape {arr.shape} != network {p.shape}")
        p.data[...] = arr
    missing = [n for n in params if n not in ckpt.records]
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks parameters: {missing[:5]}")


def load_checkpoint(path, dtype=np.float32):
    """Rebuild the network (and the Adam optimizer, if saved) from ``path``.

    Returns ``(net, optimizer_or_None, checkpoint)``.
    """
    from .train import Adam

    ckpt = read_checkpoint(path)
    net = ADRD(ckpt.config, dtype=dtype)
    load_into(net, ckpt)
    opt = None
    if "adam_t" in ckpt.state:
        s = ckpt.state
        opt = Adam(net.parameters(), float(s["adam_lr"]), float(s["adam_beta1"]),
                   float(s["adam_beta2"]), float(s["adam_eps"]))
        opt.t = int(s["adam_t"])
        for i, p in enumerate(opt.params):
            try:
                opt.m[i][...] = ckpt.records[f"adam.m/{p.name}"]
                opt.v[i][...] = ckpt.records[f"adam.v/{p.name}"]
            except KeyError as exc:
                raise CheckpointFormatError(f"checkpoint lacks optimizer moment {exc}") from None
    return net, opt, ckpt


def train_config_from(ckpt: Checkpoint):
    from .train import TrainConfig

    items = {k[len("train."):]: v for k, v in ckpt.state.items() if k.startswith("train.")}
    return TrainConfig.from_kv(items) if items else None
