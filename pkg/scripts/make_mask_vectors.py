"""Regenerate the shared mask-codec test vectors.

The JSON file pins the RLE wire format for every codec implementation
(service and browser): each vector carries the dense pixels as '0'/'1' row
strings plus the expected encoding. Deterministic, so reruns are no-ops.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gradia.attention import encode_mask_rle

OUT = Path(__file__).resolve().parents[1] / "shared" / "mask_rle_vectors.json"


def rows(grid: np.ndarray) -> list[str]:
    return ["".join("1" if v else "0" for v in row) for row in grid]


def vector(name: str, grid: np.ndarray) -> dict:
    grid = np.asarray(grid, dtype=bool)
    h, w = grid.shape
    return {
        "name": name,
        "width": w,
        "height": h,
        "pixels": rows(grid),
        "rle": encode_mask_rle(grid),
    }


def blob(rng: np.random.Generator, h: int, w: int, strokes: int) -> np.ndarray:
    grid = np.zeros((h, w), dtype=bool)
    for _ in range(strokes):
        if rng.random() < 0.5:
            y0 = int(rng.integers(0, h))
            x0 = int(rng.integers(0, w))
            y1 = int(rng.integers(y0, h)) + 1
            x1 = int(rng.integers(x0, w)) + 1
            grid[y0:y1, x0:x1] = rng.random() < 0.8
        else:
            cy = rng.uniform(0, h)
            cx = rng.uniform(0, w)
            r = rng.uniform(0.8, max(1.2, max(h, w) / 3))
            yy, xx = np.mgrid[0:h, 0:w]
            grid[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = True
    return grid


def main() -> None:
    rng = np.random.default_rng(20240814)
    vectors = [
        vector("empty-1x1", np.zeros((1, 1))),
        vector("full-1x1", np.ones((1, 1))),
        vector("empty-5x7", np.zeros((5, 7))),
        vector("full-64x64", np.ones((64, 64))),
        vector("checkerboard-8x8", np.indices((8, 8)).sum(axis=0) % 2 == 0),
        vector("single-row", np.array([[0, 1, 1, 0, 1, 0, 0, 0, 1, 1]])),
        vector("single-column", np.array([[1], [0], [0], [1], [1], [1], [0]])),
        vector("first-pixel-set", np.eye(4, 6, k=0)),
        vector("last-pixel-set", np.flip(np.eye(4, 6, k=2), axis=(0, 1))),
    ]
    for i in range(26):
        h = int(rng.integers(1, 13))
        w = int(rng.integers(1, 13))
        vectors.append(vector(f"small-{i:02d}", blob(rng, h, w, int(rng.integers(1, 4)))))
    for i in range(12):
        h = int(rng.integers(13, 41))
        w = int(rng.integers(13, 41))
        vectors.append(vector(f"medium-{i:02d}", blob(rng, h, w, int(rng.integers(2, 6)))))
    for i in range(5):
        vectors.append(vector(f"image-res-{i}", blob(rng, 64, 64, int(rng.integers(2, 7)))))

    payload = {
        "format": "[width, height, run...] alternating runs starting with the zero-pixel count",
        "count": len(vectors),
        "vectors": vectors,
    }
    OUT.parent.mkdir(exist_ok=True)
    OUT.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(vectors)} vectors to {OUT}")


if __name__ == "__main__":
    main()
