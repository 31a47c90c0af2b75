"""Reconstruction backbones: plain autoencoder (AE) and its uncertainty
variant (AE-U), plus their losses and a binary checkpoint format.

Both nets share one shape pyramid: four stride-2 convolutions take a
64x64 input down to 4x4, three fully connected layers squeeze the 1024
flattened features through a 16-dim latent and back, and four transposed
convolutions mirror the encoder.  The AE-U head emits a second output
channel interpreted as per-pixel log-variance.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, ShapeError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"DDAD"
CHECKPOINT_VERSION = 1
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class Parameter:
    name: str
    value: Tensor


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "ae"  # "ae" | "aeu"
    input_size: int = 64
    enc_channels: tuple[int, ...] = (16, 32, 64, 64)
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    fc_dims: tuple[int, ...] = (1024, 128, 16)
    dec_channels: tuple[int, ...] = (64, 32, 16, 1)
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("ae", "aeu"):
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        side = self.input_size
        for _ in self.enc_channels:
            side = (side + 2 * self.padding - self.kernel) // self.stride + 1
            if side < 1:
                raise ConfigError("input_size too small for the conv pyramid")
        flat = self.enc_channels[-1] * side * side
        if self.fc_dims[0] != flat:
            raise ConfigError(
                f"fc_dims[0]={self.fc_dims[0]} must equal flattened encoder output {flat}")
        if self.dec_channels[-1] != 1:
            raise ConfigError("dec_channels must end in 1 output channel")

    @property
    def bottleneck_side(self) -> int:
        return self.input_size // (self.stride ** len(self.enc_channels))


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class _Conv:
    def __init__(self, rng, name, cin, cout, k, stride, padding, transpose=False):
        self.stride, self.padding, self.transpose = stride, padding, transpose
        wshape = (cin, cout, k, k) if transpose else (cout, cin, k, k)
        fan_in = cin * k * k
        self.weight = Parameter(f"{name}.weight", Tensor(_uniform(rng, wshape, fan_in), requires_grad=True))
        self.bias = Parameter(f"{name}.bias", Tensor(_uniform(rng, (cout,), fan_in), requires_grad=True))

    def __call__(self, x):
        op = T.conv_transpose2d if self.transpose else T.conv2d
        return op(x, self.weight.value, self.bias.value, stride=self.stride, padding=self.padding)

    def params(self):
        return [self.weight, self.bias]


class _Linear:
    def __init__(self, rng, name, fin, fout):
        self.weight = Parameter(f"{name}.weight", Tensor(_uniform(rng, (fout, fin), fin), requires_grad=True))
        self.bias = Parameter(f"{name}.bias", Tensor(_uniform(rng, (fout,), fin), requires_grad=True))

    def __call__(self, x):
        return T.linear(x, self.weight.value, self.bias.value)

    def params(self):
        return [self.weight, self.bias]


class _BatchNorm:
    def __init__(self, name, c, eps=1e-5, momentum=0.1):
        self.name, self.eps, self.momentum = name, eps, momentum
        self.gamma = Parameter(f"{name}.gamma", Tensor(np.ones(c, np.float32), requires_grad=True))
        self.beta = Parameter(f"{name}.beta", Tensor(np.zeros(c, np.float32), requires_grad=True))
        self.running_mean = np.zeros(c, np.float32)
        self.running_var = np.ones(c, np.float32)

    def __call__(self, x, training):
        squeeze = x.data.ndim == 2
        if squeeze:
            x = T.reshape(x, (x.shape[0], x.shape[1], 1, 1))
        y = T.batchnorm2d(x, self.gamma.value, self.beta.value,
                          self.running_mean, self.running_var,
                          training=training, eps=self.eps, momentum=self.momentum)
        if squeeze:
            y = T.reshape(y, (y.shape[0], y.shape[1]))
        return y

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]


class BackboneNet:
    """One reconstruction network built from a BackboneConfig."""

    def __init__(self, config: BackboneConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        k, s, p = config.kernel, config.stride, config.padding
        self.enc_convs, self.enc_bns = [], []
        cin = 1
        for i, cout in enumerate(config.enc_channels):
            self.enc_convs.append(_Conv(rng, f"enc{i}.conv", cin, cout, k, s, p))
            self.enc_bns.append(_BatchNorm(f"enc{i}.bn", cout))
            cin = cout
        dims = list(config.fc_dims) + [config.fc_dims[0]]
        self.fcs, self.fc_bns = [], []
        for i in range(len(dims) - 1):
            self.fcs.append(_Linear(rng, f"fc{i}.linear", dims[i], dims[i + 1]))
            self.fc_bns.append(_BatchNorm(f"fc{i}.bn", dims[i + 1]))
        self.dec_convs, self.dec_bns = [], []
        cin = config.enc_channels[-1]
        n_dec = len(config.dec_channels)
        for i, cout in enumerate(config.dec_channels):
            last = i == n_dec - 1
            if last and config.kind == "aeu":
                cout = 2
            self.dec_convs.append(_Conv(rng, f"dec{i}.conv", cin, cout, k, s, p, transpose=True))
            if not last:
                self.dec_bns.append(_BatchNorm(f"dec{i}.bn", cout))
            cin = cout

    # -- parameter access -------------------------------------------------

    def params(self) -> list[Parameter]:
        out: list[Parameter] = []
        for conv, bn in zip(self.enc_convs, self.enc_bns):
            out += conv.params() + bn.params()
        for fc, bn in zip(self.fcs, self.fc_bns):
            out += fc.params() + bn.params()
        for i, conv in enumerate(self.dec_convs):
            out += conv.params()
            if i < len(self.dec_bns):
                out += self.dec_bns[i].params()
        return out

    def bn_state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for bn in self.enc_bns + self.fc_bns + self.dec_bns:
            out += bn.state()
        return out

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.value.data) for p in self.params()] + self.bn_state()

    def param_count(self) -> int:
        return sum(p.value.data.size for p in self.params())

    def zero_grads(self) -> None:
        for p in self.params():
            p.value.grad = None

    # -- forward ----------------------------------------------------------

    def forward(self, batch: Tensor, training: bool = False):
        if not isinstance(batch, Tensor):
            batch = Tensor(batch)
        size = self.config.input_size
        if batch.data.ndim != 4 or batch.shape[1] != 1 or batch.shape[2:] != (size, size):
            raise ShapeError(f"expected input [N,1,{size},{size}], got {batch.shape}")
        h = batch
        for conv, bn in zip(self.enc_convs, self.enc_bns):
            h = T.relu(bn(conv(h), training))
        h = T.reshape(h, (h.shape[0], self.config.fc_dims[0]))
        for fc, bn in zip(self.fcs, self.fc_bns):
            h = T.relu(bn(fc(h), training))
        side = self.config.bottleneck_side
        h = T.reshape(h, (h.shape[0], self.config.enc_channels[-1], side, side))
        for i, conv in enumerate(self.dec_convs):
            h = conv(h)
            if i < len(self.dec_bns):
                h = T.relu(self.dec_bns[i](h, training))
        if self.config.kind == "aeu":
            n = h.shape[0]
            flat = T.reshape(h, (n, 2, size * size))
            recon = T.sigmoid(T.reshape(_narrow_channel(flat, 0), (n, 1, size, size)))
            logvar = T.clamp(T.reshape(_narrow_channel(flat, 1), (n, 1, size, size)),
                             LOGVAR_MIN, LOGVAR_MAX)
            return recon, logvar
        return T.sigmoid(h)


def _narrow_channel(flat: Tensor, ch: int) -> Tensor:
    """Select channel `ch` of a [N,2,P] tensor, with gradient."""
    data = flat.data[:, ch]
    idx = ch

    def backward(g):
        if flat.requires_grad:
            full = np.zeros_like(flat.data)
            full[:, idx] = g
            flat._accumulate(full)

    return T._make(data, (flat,), backward)


def build_backbone(config: BackboneConfig) -> BackboneNet:
    return BackboneNet(config)


def forward_ae(net: BackboneNet, batch, training: bool = False) -> Tensor:
    if net.config.kind != "ae":
        raise ConfigError("forward_ae requires an AE backbone")
    return net.forward(batch, training)


def forward_aeu(net: BackboneNet, batch, training: bool = False):
    if net.config.kind != "aeu":
        raise ConfigError("forward_aeu requires an AEU backbone")
    return net.forward(batch, training)


# -- losses ---------------------------------------------------------------


def loss_mse(batch, reconstruction) -> Tensor:
    """Mean over batch and pixels of (x - x_hat)^2."""
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    if batch.shape != reconstruction.shape:
        raise ShapeError(f"loss_mse: {batch.shape} vs {reconstruction.shape}")
    return T.mean(T.square(T.sub(batch, reconstruction)))


def loss_aeu(batch, reconstruction, log_variance) -> Tensor:
    """Gaussian NLL-style loss: mean of (x - x_hat)^2 / sigma^2 + log sigma^2.

    Evaluated in log-variance form; with log_variance frozen at 0 this
    reduces exactly to loss_mse.
    """
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    if batch.shape != reconstruction.shape or batch.shape != log_variance.shape:
        raise ShapeError("loss_aeu: operand shapes disagree")
    sq = T.square(T.sub(batch, reconstruction))
    return T.mean(T.add(T.mul(sq, T.exp(T.mul(log_variance, -1.0))), log_variance))


# -- checkpoints ----------------------------------------------------------


def _config_words(config: BackboneConfig) -> list[int]:
    return ([config.input_size, config.kernel, config.stride, config.padding,
             len(config.enc_channels), *config.enc_channels,
             len(config.fc_dims), *config.fc_dims,
             len(config.dec_channels), *config.dec_channels,
             config.seed])


def save_checkpoint(net: BackboneNet, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(bytes([0 if net.config.kind == "ae" else 1]))
    words = _config_words(net.config)
    buf.write(struct.pack("<I", len(words)))
    buf.write(struct.pack(f"<{len(words)}I", *words))
    for name, arr in net.named_arrays():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(bytes([arr.ndim]))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("truncated checkpoint", offset=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    @property
    def done(self) -> bool:
        return self.pos >= len(self.blob)


def load_checkpoint(path, expect_kind: str | None = None) -> BackboneNet:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError("bad magic", offset=0)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    kind = {0: "ae", 1: "aeu"}.get(r.u8())
    if kind is None:
        raise FormatError("unknown backbone kind byte", offset=8)
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"checkpoint kind {kind!r} does not match expected {expect_kind!r}")
    n_words = r.u32()
    words = list(struct.unpack(f"<{n_words}I", r.take(4 * n_words)))
    pos = 0

    def pop(n: int) -> list[int]:
        nonlocal pos
        if pos + n > len(words):
            raise FormatError("config block too short", offset=r.pos)
        out = words[pos:pos + n]
        pos += n
        return out

    input_size, kernel, stride, padding = pop(4)
    enc = tuple(pop(pop(1)[0]))
    fc = tuple(pop(pop(1)[0]))
    dec = tuple(pop(pop(1)[0]))
    seed = pop(1)[0]
    config = BackboneConfig(kind=kind, input_size=input_size, enc_channels=enc,
                            kernel=kernel, stride=stride, padding=padding,
                            fc_dims=fc, dec_channels=dec, seed=seed)
    records: dict[str, np.ndarray] = {}
    while not r.done:
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = r.take(4 * count)
        records[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    net = BackboneNet(config)
    expected = net.named_arrays()
    missing = [n for n, _ in expected if n not in records]
    extra = set(records) - {n for n, _ in expected}
    if missing or extra:
        raise FormatError(f"checkpoint records mismatch: missing {missing}, extra {sorted(extra)}")
    for name, arr in expected:
        stored = records[name]
        if stored.shape != arr.shape:
            raise FormatError(f"record {name}: shape {stored.shape} != {arr.shape}")
        arr[...] = stored
    return net
