"""The hourglass encoder-decoder and its three multi-transmit fusion variants.

Encoder: four (3x3 conv, stride 2 in width) stages then three (3x3 conv +
2x2 maxpool) stages, each conv followed by batchnorm and relu. Decoder:
three (conv + x2 nearest upsample) stages, one (conv + linear resize to the
output dims) stage, one plain conv stage, then a 1x1 conv down to a single
channel.

Variants: ``single`` takes one transmit; ``start`` concatenates transmits as
input channels; ``middle`` runs a shared-weight encoder per transmit and
concatenates features before the decoder; ``end`` runs the full shared
branch per transmit and concatenates just before the 1x1 conv. Shared means
one parameter store: replica passes accumulate into the same gradients.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DivergenceError, FormatError
from .layers import BatchNorm2d, Conv2d, LinearResize, MaxPool2x2, Param, ReLU, Upsample2x

VARIANTS = ("single", "start", "middle", "end")
DEFAULT_ENC_CHANNELS = (32, 64, 128, 128, 256, 256, 512)
DEFAULT_DEC_CHANNELS = (256, 128, 64, 32, 32)


class Network:
    def __init__(self, variant: str, n_transmits: int, in_h: int, in_w: int,
                 out_h: int, out_w: int, enc_channels: tuple, dec_channels: tuple,
                 seed: int = 0, dtype=np.float32):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        if variant == "single" and n_transmits != 1:
            raise ConfigError("single variant takes exactly 1 transmit")
        if variant != "single" and n_transmits < 2:
            raise ConfigError(f"{variant} variant needs multiple transmits")
        if len(enc_channels) != 7 or len(dec_channels) != 5:
            raise ConfigError("channel plan must have 7 encoder and 5 decoder stages")
        if in_h < 8 or in_w < 8:
            raise ConfigError("input dims too small for the downsampling stage count")
        self.variant = variant
        self.n_transmits = n_transmits
        self.in_h, self.in_w = in_h, in_w
        self.out_h, self.out_w = out_h, out_w
        self.enc_channels = tuple(enc_channels)
        self.dec_channels = tuple(dec_channels)
        self.seed = seed
        self.dtype = np.dtype(dtype)

        rng = np.random.default_rng(seed)
        in_ch = n_transmits if variant == "start" else 1

        def block(cin, cout, stride):
            return [Conv2d(cin, cout, 3, stride, rng, dtype), BatchNorm2d(cout, dtype=dtype),
                    ReLU()]

        self.encoder = []
        c = in_ch
        for i, cout in enumerate(enc_channels):
            stage = block(c, cout, (1, 2) if i < 4 else (1, 1))
            if i >= 4:
                stage.append(MaxPool2x2())
            self.encoder.append(stage)
            c = cout

        dec_in = c * n_transmits if variant == "middle" else c
        self.decoder = []
        c = dec_in
        for i, cout in enumerate(dec_channels):
            stage = block(c, cout, (1, 1))
            if i < 3:
                stage.append(Upsample2x())
            elif i == 3:
                stage.append(LinearResize(out_h, out_w))
            self.decoder.append(stage)
            c = cout
        final_in = c * n_transmits if variant == "end" else c
        self.final = Conv2d(final_in, 1, 1, (1, 1), rng, dtype)
        self._caches = None

    # parameter traversal order used by optimizers and checkpoints
    def stages(self):
        yield from self.encoder
        yield from self.decoder
        yield [self.final]

    def parameters(self) -> list:
        out = []
        for stage in self.stages():
            for layer in stage:
                out.extend(layer.params())
        return out

    def batchnorms(self) -> list:
        out = []
        for stage in self.stages():
            for layer in stage:
                if isinstance(layer, BatchNorm2d):
                    out.append(layer)
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def _run_stages(self, stages, x, train, caches, tag):
        for si, stage in enumerate(stages):
            for li, layer in enumerate(stage):
                x, cache = layer.forward(x, train)
                caches.append((layer, cache))
            if not np.isfinite(x).all():
                raise DivergenceError(f"non-finite activations after {tag} stage {si}")
        return x

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        """x: (batch, n_transmits, in_h, in_w) -> (batch, out_h, out_w)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.n_transmits:
            raise ConfigError(f"expected (b, {self.n_transmits}, h, w), got {x.shape}")
        caches = {"enc": [], "dec": [], "final": None, "shapes": None}
        if self.variant in ("single", "start"):
            h = self._run_stages(self.encoder, x, train, caches["enc"], "encoder")
            h = self._run_stages(self.decoder, h, train, caches["dec"], "decoder")
        elif self.variant == "middle":
            feats = []
            for t in range(self.n_transmits):
                branch = []
                f = self._run_stages(self.encoder, x[:, t:t + 1], train, branch, "encoder")
                caches["enc"].append(branch)
                feats.append(f)
            caches["shapes"] = feats[0].shape
            h = np.concatenate(feats, axis=1)
            h = self._run_stages(self.decoder, h, train, caches["dec"], "decoder")
        else:  # end
            feats = []
            for t in range(self.n_transmits):
                branch = []
                f = self._run_stages(self.encoder, x[:, t:t + 1], train, branch, "encoder")
                f = self._run_stages(self.decoder, f, train, branch, "decoder")
                caches["enc"].append(branch)
                feats.append(f)
            caches["shapes"] = feats[0].shape
            h = np.concatenate(feats, axis=1)
        y, fc = self.final.forward(h, train)
        caches["final"] = fc
        self._caches = caches
        return y[:, 0]

    def _back_stages(self, caches, dy):
        for layer, cache in reversed(caches):
            dy = layer.backward(dy, cache)
        return dy

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """dy: gradient w.r.t. the (batch, out_h, out_w) output."""
        if self._caches is None:
            raise RuntimeError("backward before forward")
        c = self._caches
        dy = np.asarray(dy, dtype=self.dtype)[:, None]
        dh = self.final.backward(dy, c["final"])
        if self.variant in ("single", "start"):
            dh = self._back_stages(c["dec"], dh)
            dx = self._back_stages(c["enc"], dh)
            return dx
        n_ch = c["shapes"][1]
        grads = []
        for t in range(self.n_transmits):
            if self.variant == "middle":
                if t == 0:
                    dh_all = self._back_stages(c["dec"], dh)
                db = dh_all[:, t * n_ch:(t + 1) * n_ch]
            else:
                db = dh[:, t * n_ch:(t + 1) * n_ch]
            grads.append(self._back_stages(c["enc"][t], db))
        return np.concatenate([g for g in grads], axis=1)


def build_network(variant: str, in_h: int, in_w: int, out_h: int, out_w: int,
                  n_transmits: int | None = None,
                  enc_channels: tuple = DEFAULT_ENC_CHANNELS,
                  dec_channels: tuple = DEFAULT_DEC_CHANNELS,
                  seed: int = 0, dtype=np.float32) -> Network:
    """Construct a network and dry-run a zero input to verify the shape plan."""
    if n_transmits is None:
        n_transmits = 1 if variant == "single" else 3
    net = Network(variant, n_transmits, in_h, in_w, out_h, out_w,
                  enc_channels, dec_channels, seed=seed, dtype=dtype)
    probe = np.zeros((1, n_transmits, in_h, in_w), dtype=dtype)
    y = net.forward(probe, train=False)
    if y.shape != (1, out_h, out_w):
        raise ConfigError(f"dry run produced {y.shape}, expected (1, {out_h}, {out_w})")
    net._caches = None
    return net


CKPT_MAGIC = b"USNN"
CKPT_VERSION = 1


def _net_arrays(net: Network) -> list[np.ndarray]:
    arrays = []
    for stage in net.stages():
        for layer in stage:
            for p in layer.params():
                arrays.append(p.value)
            if isinstance(layer, BatchNorm2d):
                arrays.append(layer.running_mean)
                arrays.append(layer.running_var)
    return arrays


def save_checkpoint(net: Network, path: str | Path) -> None:
    """Binary checkpoint: topology header + parameter/running-stat tensors."""
    header = {
        "variant": net.variant,
        "n_transmits": net.n_transmits,
        "in_h": net.in_h, "in_w": net.in_w,
        "out_h": net.out_h, "out_w": net.out_w,
        "enc_channels": list(net.enc_channels),
        "dec_channels": list(net.dec_channels),
        "seed": net.seed,
        "dtype": net.dtype.str,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<HI", CKPT_VERSION, len(hbytes)))
        f.write(hbytes)
        arrays = _net_arrays(net)
        f.write(struct.pack("<I", len(arrays)))
        for a in arrays:
            dt = np.dtype(a.dtype).str.encode()
            f.write(struct.pack("<B", len(dt)))
            f.write(dt)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}q", *a.shape))
            f.write(np.ascontiguousarray(a).tobytes())


def load_checkpoint(path: str | Path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    header = json.loads(raw[off:off + hlen])
    off += hlen
    net = Network(header["variant"], header["n_transmits"], header["in_h"],
                  header["in_w"], header["out_h"], header["out_w"],
                  tuple(header["enc_channels"]), tuple(header["dec_channels"]),
                  seed=header["seed"], dtype=np.dtype(header["dtype"]))
    (n_arrays,) = struct.unpack_from("<I", raw, off)
    off += 4
    targets = _net_arrays(net)
    if n_arrays != len(targets):
        raise FormatError(f"{path}: {n_arrays} arrays, expected {len(targets)}")
    for tgt in targets:
        (dlen,) = struct.unpack_from("<B", raw, off)
        off += 1
        dt = np.dtype(raw[off:off + dlen].decode())
        off += dlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}q", raw, off)
        off += 8 * ndim
        if shape != tgt.shape or dt != tgt.dtype:
            raise FormatError(f"{path}: tensor mismatch {shape}/{dt} vs "
                              f"{tgt.shape}/{tgt.dtype}")
        n_bytes = dt.itemsize * int(np.prod(shape)) if ndim else dt.itemsize
        tgt[...] = np.frombuffer(raw[off:off + n_bytes], dtype=dt).reshape(shape)
        off += n_bytes
    return net
