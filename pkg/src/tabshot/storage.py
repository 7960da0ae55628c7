"""On-disk image tensors: raw little-endian float32 plus a JSON shape manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DataFormatError

TENSOR_FILE = "images.f32"
TENSOR_MANIFEST = "images.json"
PNG_SUFFIXES = (".png", ".jpg", ".jpeg")


def write_tensor_dump(directory, images, labels, extra=None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(images, dtype="<f4")
    arr.tofile(directory / TENSOR_FILE)
    manifest = {"file": TENSOR_FILE, "dtype": "<f4", "shape": list(arr.shape),
                "labels": [int(v) for v in labels]}
    manifest.update(extra or {})
    (directory / TENSOR_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_tensor_dump(directory):
    """Returns ``(images memmap, labels, manifest)``."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / TENSOR_MANIFEST).read_text())
        shape = tuple(int(s) for s in manifest["shape"])
        labels = np.asarray(manifest["labels"], dtype=np.int64)
    except (OSError, ValueError, KeyError) as e:
        raise DataFormatError(f"{directory}: unreadable tensor manifest ({e})") from e
    path = directory / manifest.get("file", TENSOR_FILE)
    expected = 4 * int(np.prod(shape))
    if not path.exists() or path.stat().st_size != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes of float32 data")
    if len(labels) != shape[0]:
        raise DataFormatError(f"{directory}: {len(labels)} labels for {shape[0]} images")
    images = np.memmap(path, dtype="<f4", mode="r", shape=shape)
    return images, labels, manifest


def read_image_folder(directory, size: int = 84):
    """Class-per-subdirectory image folder -> ``(images, labels, class_names)``.

    Images are converted to RGB, resized to ``size x size`` and scaled to [0, 1].
    """
    directory = Path(directory)
    classes = sorted(p.name for p in directory.iterdir() if p.is_dir())
    if not classes:
        raise DataFormatError(f"{directory}: no class subdirectories")
    images, labels = [], []
    for c, name in enumerate(classes):
        files = sorted(f for f in (directory / name).iterdir() if f.suffix.lower() in PNG_SUFFIXES)
        for f in files:
            with Image.open(f) as im:
                im = im.convert("RGB").resize((size, size), Image.BILINEAR)
                images.append(np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0)
            labels.append(c)
    if not images:
        raise DataFormatError(f"{directory}: no images found")
    return np.stack(images), np.asarray(labels), classes


def load_images(source):
    """Tensor dump directory or image folder -> ``(images, labels)``."""
    source = Path(source)
    if (source / TENSOR_MANIFEST).exists():
        images, labels, _ = read_tensor_dump(source)
        return images, labels
    if source.is_dir():
        images, labels, _ = read_image_folder(source)
        return images, labels
    raise DataFormatError(f"{source}: neither a tensor dump nor an image folder")
