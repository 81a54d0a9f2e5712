#!/usr/bin/env python3
"""Regenerate the bundled handwritten-digit corpus under data/.

Source is scikit-learn's `digits` set (1797 8x8 grayscale digit images, 10
classes). Two IDX pairs are written:

  digits-images-idx3-ubyte / digits-labels-idx1-ubyte
      the base images, untouched apart from rescaling 0..16 -> 0..240
  digits-aug-images-idx3-ubyte / digits-aug-labels-idx1-ubyte
      30000 images: the base set plus one-pixel integer shifts (8 directions,
      zero fill) and half-pixel bilinear shifts (8 directions), shuffled with
      a fixed seed and truncated

Everything is deterministic; rerunning reproduces byte-identical files.
"""

import struct
import sys
from pathlib import Path

import numpy as np
from scipy.ndimage import shift as ndshift
from sklearn.datasets import load_digits

AUG_TOTAL = 30000
SHUFFLE_SEED = 716253


def write_idx_images(path: Path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def shifted(img: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(img)
    src_r = slice(max(0, -dr), img.shape[0] - max(0, dr))
    dst_r = slice(max(0, dr), img.shape[0] - max(0, -dr))
    src_c = slice(max(0, -dc), img.shape[1] - max(0, dc))
    dst_c = slice(max(0, dc), img.shape[1] - max(0, -dc))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data"
    out_dir.mkdir(parents=True, exist_ok=True)

    bunch = load_digits()
    base = (bunch.images * 15.0).round().astype(np.uint8)  # 0..16 -> 0..240
    labels = bunch.target.astype(np.uint8)

    write_idx_images(out_dir / "digits-images-idx3-ubyte", base)
    write_idx_labels(out_dir / "digits-labels-idx1-ubyte", labels)

    variants = [base]
    for dr, dc in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]:
        variants.append(np.stack([shifted(img, dr, dc) for img in base]))
    for dr, dc in [(-0.5, 0), (0.5, 0), (0, -0.5), (0, 0.5), (-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]:
        moved = np.stack([ndshift(img.astype(np.float64), (dr, dc), order=1, cval=0.0) for img in base])
        variants.append(np.clip(moved.round(), 0, 255).astype(np.uint8))
    aug_images = np.concatenate(variants)
    aug_labels = np.concatenate([labels] * len(variants))

    order = np.random.default_rng(SHUFFLE_SEED).permutation(len(aug_images))[:AUG_TOTAL]
    write_idx_images(out_dir / "digits-aug-images-idx3-ubyte", aug_images[order])
    write_idx_labels(out_dir / "digits-aug-labels-idx1-ubyte", aug_labels[order])

    print(f"wrote base {base.shape} and augmented {aug_images[order].shape} to {out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
