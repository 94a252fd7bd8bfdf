"""Regenerate the desk-scale grayscale corpus under data/images/.

Images come from scikit-image's bundled sample data (public domain / CC0).
Each image is converted to grayscale, center-cropped to a square and resized
to 256x256, then written as binary PGM.
"""
import pathlib

import numpy as np
from skimage import color, data, transform

NAMES = {
    "train": ["astronaut", "coins", "moon", "clock", "coffee", "rocket", "brick", "page"],
    "test": ["camera", "chelsea"],
}
SIZE = 256


def to_gray_u8(img):
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    img = img.astype(np.float64)
    if img.max() > 1.0:
        img = img / 255.0
    h, w = img.shape
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    img = img[y0:y0 + s, x0:x0 + s]
    img = transform.resize(img, (SIZE, SIZE), anti_aliasing=True)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img):
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5 {w} {h} 255\n".encode())
        f.write(img.tobytes())


def main():
    root = pathlib.Path(__file__).resolve().parent.parent / "data" / "images"
    for split, names in NAMES.items():
        out = root / split
        out.mkdir(parents=True, exist_ok=True)
        for name in names:
            write_pgm(out / f"{name}.pgm", to_gray_u8(getattr(data, name)()))


if __name__ == "__main__":
    main()
