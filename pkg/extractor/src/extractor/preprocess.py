"""Input normalization: images to fixed-size float arrays, captions to
prefixed lowercase text.

Images are resized so the shortest edge hits the target size, then
center-cropped square. Captions are lowercased, lose one leading
article, and gain the fixed caption prefix; preprocessing happens
before tokenization.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

CAPTION_PREFIX = "this image shows"
_ARTICLES = ("a", "an", "the")


def load_image(path: str, size: int = 512) -> np.ndarray:
    """(size, size, 3) float32 in [0, 1]: shortest-edge resize, center crop."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        scale = size / min(w, h)
        img = img.resize((max(size, round(w * scale)), max(size, round(h * scale))),
                         Image.BICUBIC)
        w, h = img.size
        left = (w - size) // 2
        top = (h - size) // 2
        img = img.crop((left, top, left + size, top + size))
        return np.asarray(img, dtype=np.float32) / 255.0


def preprocess_caption(caption: str, prefix: str = CAPTION_PREFIX) -> str:
    """Lowercase, drop one leading article, prepend the caption prefix."""
    words = caption.lower().split()
    if words and words[0] in _ARTICLES:
        words = words[1:]
    return " ".join([prefix, *words]) if words else prefix
