"""Conv2 / Conv3 / Conv4 embedding networks.

Every block is 3x3 same-padded conv -> batch norm -> ReLU -> 2x2 max pool,
so the spatial side shrinks 84 -> 42 -> 21 -> 10 -> 5.  With 64 channels the
trainable parameter counts are 38,976 / 76,032 / 113,088.

Weights live in a :class:`ConvBackbone` module.  The functional helpers
below (``embed``, ``forward_cached``, ``backward``, ``sgd_step``) are what
the few-shot code uses; they never mutate weights except ``forward_cached``
in training mode, which advances the batch-norm running statistics.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .exceptions import BackboneStateError, DataFormatError, DimensionError, NumericError

ARCH_BLOCKS = {"conv2": 2, "conv3": 3, "conv4": 4}
LATENT_MODES = ("flatten", "gap")
IMAGE_SHAPE = (3, 84, 84)
BN_MOMENTUM = 0.1  # running <- 0.9 * running + 0.1 * batch
WEIGHTS_MAGIC = b"TSBW"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    arch: str = "conv4"
    channels: int = 64
    latent_mode: str = "flatten"

    def __post_init__(self):
        object.__setattr__(self, "arch", self.arch.lower())
        object.__setattr__(self, "latent_mode", self.latent_mode.lower())
        if self.arch not in ARCH_BLOCKS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {sorted(ARCH_BLOCKS)}")
        if self.latent_mode not in LATENT_MODES:
            raise ValueError(f"unknown latent mode {self.latent_mode!r}")
        if self.channels < 1:
            raise ValueError("channels must be positive")

    @property
    def n_blocks(self) -> int:
        return ARCH_BLOCKS[self.arch]

    @property
    def output_side(self) -> int:
        side = IMAGE_SHAPE[1]
        for _ in range(self.n_blocks):
            side //= 2
        return side

    @property
    def latent_dim(self) -> int:
        if self.latent_mode == "gap":
            return self.channels
        return self.channels * self.output_side ** 2


def conv_block(in_channels, out_channels):
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, 3, padding=1),
        nn.BatchNorm2d(out_channels, momentum=BN_MOMENTUM),
        nn.ReLU(),
        nn.MaxPool2d(2),
    )


class ConvBackbone(nn.Module):
    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        chans = [IMAGE_SHAPE[0]] + [spec.channels] * spec.n_blocks
        self.encoder = nn.Sequential(*[conv_block(a, b) for a, b in zip(chans[:-1], chans[1:])])
        self._cache = None

    def forward(self, x):
        h = self.encoder(x)
        if self.spec.latent_mode == "gap":
            return h.mean(dim=(2, 3))
        return h.flatten(1)


def build_backbone(spec: BackboneSpec, seed: int = 0, dtype=torch.float32) -> ConvBackbone:
    """He-normal conv kernels, zero biases, BN scale 1 / shift 0."""
    gen = torch.Generator().manual_seed(int(seed))
    net = ConvBackbone(spec)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu", generator=gen)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return net.to(dtype).eval()


def param_count(w: ConvBackbone) -> int:
    """Trainable scalars only; batch-norm running statistics are excluded."""
    return sum(p.numel() for p in w.parameters() if p.requires_grad)


def _dtype_of(w: ConvBackbone):
    return next(w.parameters()).dtype


def check_images(images, dtype=None) -> torch.Tensor:
    """Validate an image batch and return it as a tensor of shape (n, 3, 84, 84)."""
    x = torch.as_tensor(np.asarray(images) if not torch.is_tensor(images) else images)
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if tuple(x.shape[1:]) != IMAGE_SHAPE:
        raise DimensionError(f"expected images of shape (n, 3, 84, 84), got {tuple(x.shape)}")
    if dtype is not None:
        x = x.to(dtype)
    if not torch.isfinite(x).all():
        raise NumericError("non-finite pixel values")
    return x


def embed(w: ConvBackbone, images, batch_size: int = 128) -> np.ndarray:
    """Eval-mode latents, one row per image.  Does not touch ``w``'s mode or stats."""
    x = check_images(images, _dtype_of(w))
    was_training = w.training
    w.eval()
    try:
        with torch.no_grad():
            out = torch.cat([w(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)])
    finally:
        w.train(was_training)
    return out.numpy()


def forward_cached(w: ConvBackbone, images) -> torch.Tensor:
    """Forward pass in ``w``'s current mode, keeping the graph for :func:`backward`.

    In training mode batch norm uses batch statistics and updates its
    running averages; in eval mode it uses (and leaves alone) the running
    averages.
    """
    x = check_images(images, _dtype_of(w))
    with torch.enable_grad():
        out = w(x)
    w._cache = out
    return out.detach()


def backward(w: ConvBackbone, upstream) -> "OrderedDict[str, torch.Tensor]":
    """Gradients of ``sum(latents * upstream)`` w.r.t. every trainable tensor.

    Consumes the graph cached by the last :func:`forward_cached` call.
    """
    out = w._cache
    if out is None:
        raise BackboneStateError("backward() needs a preceding forward_cached() on the same batch")
    g = torch.as_tensor(upstream, dtype=out.dtype)
    if g.shape != out.shape:
        raise DimensionError(f"upstream gradient shape {tuple(g.shape)} != latents {tuple(out.shape)}")
    names, params = zip(*[(n, p) for n, p in w.named_parameters() if p.requires_grad])
    grads = torch.autograd.grad(out, params, grad_outputs=g, allow_unused=True)
    w._cache = None
    return OrderedDict(
        (n, torch.zeros_like(p) if gr is None else gr.detach()) for n, p, gr in zip(names, params, grads)
    )


def sgd_step(w: ConvBackbone, grads, lr: float) -> ConvBackbone:
    """Return a copy of ``w`` with ``param -= lr * grad`` applied."""
    new = copy.deepcopy(w)
    new._cache = None
    params = dict(new.named_parameters())
    with torch.no_grad():
        for name, g in grads.items():
            p = params[name]
            g = torch.as_tensor(g, dtype=p.dtype)
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
            p -= lr * g
    return new


def _tensors_for_io(w: ConvBackbone):
    return [(k, v) for k, v in w.state_dict().items() if not k.endswith("num_batches_tracked")]


def save_weights(w: ConvBackbone, path) -> dict:
    """Write the binary container and a ``<path>.json`` manifest; returns the manifest.

    Layout: magic ``TSBW``, uint32 version, uint32 header length, UTF-8 JSON
    header, then every tensor as little-endian float32 in declaration order.
    """
    path = Path(path)
    tensors = _tensors_for_io(w)
    header = {
        "format_version": WEIGHTS_VERSION,
        "arch": w.spec.arch,
        "channels": w.spec.channels,
        "latent_mode": w.spec.latent_mode,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray(WEIGHTS_MAGIC)
    blob += struct.pack("<II", WEIGHTS_VERSION, len(hbytes))
    blob += hbytes
    for _, v in tensors:
        blob += v.detach().cpu().numpy().astype("<f4").tobytes()
    path.write_bytes(bytes(blob))
    manifest = dict(header, sha256=hashlib.sha256(blob).hexdigest(), n_bytes=len(blob))
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_weights(path, dtype=torch.float32) -> ConvBackbone:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read weights file {path}: {e}") from e
    if blob[:4] != WEIGHTS_MAGIC or len(blob) < 12:
        raise DataFormatError(f"{path}: not a weights file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != WEIGHTS_VERSION:
        raise DataFormatError(f"{path}: unsupported weights format version {version}")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
        spec = BackboneSpec(header["arch"], header["channels"], header["latent_mode"])
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise DataFormatError(f"{path}: corrupt header ({e})") from e
    manifest_path = Path(str(path) + ".json")
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("sha256") != hashlib.sha256(blob).hexdigest():
            raise DataFormatError(f"{path}: content hash does not match manifest")
    net = ConvBackbone(spec)
    state = net.state_dict()
    offset = 12 + hlen
    expected = [(k, list(v.shape)) for k, v in _tensors_for_io(net)]
    if [(t["name"], t["shape"]) for t in header["tensors"]] != expected:
        raise DataFormatError(f"{path}: tensor table does not match arch {spec.arch}")
    for name, shape in expected:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(blob):
            raise DataFormatError(f"{path}: truncated at tensor {name}")
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        offset = end
    if offset != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    net.load_state_dict(state)
    return net.to(dtype).eval()
