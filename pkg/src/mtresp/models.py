"""CONF-A..E: a shared down-sampling encoder feeding a waveform decoder,
a scalar rate head, or both."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn.layers import (BatchNorm1d, Conv1d, ConvTranspose1d, Dense, Flatten, InceptionRes, Layer, LeakyReLU,
                        Sequential, param_count)
from .signal_core import RESP_LEN

RAW_LEN = 2048
BOTTLENECK_LEN = 2


@dataclass(frozen=True)
class ConfSpec:
    id: str
    input_kind: str  # "raw" or "resp"
    wave_head: bool
    rr_head: bool

    def __post_init__(self):
        if self.input_kind not in ("raw", "resp"):
            raise ValueError(f"unknown input kind {self.input_kind!r}")
        if not (self.wave_head or self.rr_head):
            raise ValueError("a configuration needs at least one head")

    @property
    def input_len(self) -> int:
        return RAW_LEN if self.input_kind == "raw" else RESP_LEN


CONFS = {
    "A": ConfSpec("A", "raw", wave_head=False, rr_head=True),
    "B": ConfSpec("B", "raw", wave_head=True, rr_head=True),
    "C": ConfSpec("C", "resp", wave_head=True, rr_head=False),
    "D": ConfSpec("D", "resp", wave_head=False, rr_head=True),
    "E": ConfSpec("E", "resp", wave_head=True, rr_head=True),
}


@dataclass(frozen=True)
class Widths:
    """Filter schedule. Defaults follow the published block description."""

    in_channels: int = 3
    enc_base: int = 32
    enc_max: int = 1024
    dec_start: int = 512
    dec_min: int = 16
    head_start: int = 128
    head_min: int = 2
    incres_kernel: int = 15


TOY = Widths(enc_base=2, enc_max=4, dec_start=4, dec_min=2, head_start=4, head_min=2, incres_kernel=15)


def get_conf(conf) -> ConfSpec:
    if isinstance(conf, ConfSpec):
        return conf
    try:
        return CONFS[str(conf).upper()]
    except KeyError:
        raise ValueError(f"unknown configuration {conf!r}; choose from {sorted(CONFS)}") from None


def _log2_exact(n: int) -> int:
    k = int(round(np.log2(n)))
    if 2 ** k != n:
        raise ValueError(f"{n} is not a power of two")
    return k


def _down_block(cin, cout, k, rng, kernel):
    return Sequential([
        Conv1d(cin, cout, k, stride=2, padding=1, rng=rng),
        BatchNorm1d(cout),
        LeakyReLU(),
        InceptionRes(cout, kernel, rng=rng),
    ])


def _up_block(cin, cout, rng, kernel):
    return Sequential([
        ConvTranspose1d(cin, cout, 3, stride=2, padding=1, output_padding=1, rng=rng),
        BatchNorm1d(cout),
        LeakyReLU(),
        InceptionRes(cout, kernel, rng=rng),
    ])


def build_encoder(input_len: int, widths: Widths, rng) -> Sequential:
    n_down = _log2_exact(input_len // BOTTLENECK_LEN)
    enc = Sequential()
    cin = widths.in_channels
    for i in range(n_down):
        cout = min(widths.enc_base * 2 ** i, widths.enc_max)
        enc.append(_down_block(cin, cout, 3, rng, widths.incres_kernel))
        cin = cout
    return enc


def build_decoder(z_channels: int, widths: Widths, rng) -> Sequential:
    n_up = _log2_exact(RESP_LEN // BOTTLENECK_LEN)
    dec = Sequential()
    cin = z_channels
    for i in range(n_up):
        cout = max(widths.dec_start // 2 ** i, widths.dec_min)
        dec.append(_up_block(cin, cout, rng, widths.incres_kernel))
        cin = cout
    dec.append(Conv1d(cin, 1, 1, rng=rng, slope=None))
    return dec


def build_head(z_channels: int, widths: Widths, rng) -> Sequential:
    head = Sequential()
    cin, length, i = z_channels, BOTTLENECK_LEN, 0
    while length > 1:
        cout = max(widths.head_start // 2 ** i, widths.head_min)
        head.append(_down_block(cin, cout, 4, rng, widths.incres_kernel))
        cin, length, i = cout, length // 2, i + 1
    head.append(Flatten())
    head.append(Dense(cin * length, 1, rng=rng))
    return head


class Model(Layer):
    """Shared encoder z = F1(x); waveform = F2(z); rate = F3(z)."""

    kind = "model"

    def __init__(self, conf: ConfSpec, encoder: Sequential, decoder: Sequential | None,
                 head: Sequential | None, widths: Widths, seed: int):
        self.conf, self.encoder, self.decoder, self.head = conf, encoder, decoder, head
        self.widths, self.seed = widths, seed
        self._z_shape = None

    def children(self):
        out = [("encoder", self.encoder)]
        if self.decoder is not None:
            out.append(("decoder", self.decoder))
        if self.head is not None:
            out.append(("head", self.head))
        return out

    def forward(self, x, training=False):
        want = (self.widths.in_channels, self.conf.input_len)
        if x.ndim != 3 or x.shape[1:] != want:
            raise ValueError(f"CONF-{self.conf.id} expects input (B, {want[0]}, {want[1]}), got {x.shape}")
        z = self.encoder.forward(x, training)
        self._z_shape = z.shape
        wave = self.decoder.forward(z, training) if self.decoder is not None else None
        rr = self.head.forward(z, training) if self.head is not None else None
        return wave, rr

    def backward(self, g_wave=None, g_rr=None):
        gz = np.zeros(self._z_shape)
        if self.decoder is not None and g_wave is not None:
            gz = gz + self.decoder.backward(g_wave)
        if self.head is not None and g_rr is not None:
            gz = gz + self.head.backward(g_rr)
        return self.encoder.backward(gz)

    def encode(self, x, training=False):
        return self.encoder.forward(x, training)

    def spec(self):
        return {"kind": self.kind, "conf": asdict(self.conf), "widths": asdict(self.widths), "seed": self.seed,
                "encoder": self.encoder.spec(),
                "decoder": self.decoder.spec() if self.decoder is not None else None,
                "head": self.head.spec() if self.head is not None else None}

    def joint(self) -> "JointView":
        return JointView(self)


class JointView(Layer):
    """Presents a model's heads as one flat output, for gradient checking."""

    def __init__(self, model: Model):
        self.model = model
        self._split = None

    def children(self):
        return [("model", self.model)]

    def forward(self, x, training=False):
        wave, rr = self.model.forward(x, training)
        parts = [p.reshape(p.shape[0], -1) for p in (wave, rr) if p is not None]
        self._split = (wave.shape if wave is not None else None, rr.shape if rr is not None else None)
        return np.concatenate(parts, axis=1)

    def backward(self, g):
        ws, rs = self._split
        off = 0
        gw = gr = None
        if ws is not None:
            n = int(np.prod(ws[1:]))
            gw, off = g[:, :n].reshape(ws), n
        if rs is not None:
            gr = g[:, off:].reshape(rs)
        return self.model.backward(gw, gr)


def build_conf(conf, seed: int = 0, widths: Widths = Widths()) -> Model:
    """Build CONF-A..E. Encoder, decoder and head draw from independent
    seeded streams, so configurations sharing a part initialize it identically."""
    spec = get_conf(conf)
    ss = np.random.SeedSequence(seed)
    enc_rng, dec_rng, head_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    enc = build_encoder(spec.input_len, widths, enc_rng)
    z_ch = enc.layers[-1].layers[0].cout
    dec = build_decoder(z_ch, widths, dec_rng) if spec.wave_head else None
    head = build_head(z_ch, widths, head_rng) if spec.rr_head else None
    return Model(spec, enc, dec, head, widths, seed)


def model_from_spec(spec: dict) -> Model:
    """Rebuild the architecture recorded in a checkpoint header."""
    conf = ConfSpec(**spec["conf"])
    return build_conf(conf, spec.get("seed", 0), Widths(**spec["widths"]))


__all__ = ["CONFS", "ConfSpec", "Model", "TOY", "Widths", "build_conf", "get_conf", "model_from_spec", "param_count"]
