"""Small fixed models and tiles behind the committed golden files.

Run ``python tests/golden_support.py`` to rewrite ``tests/golden``; only do
that on a deliberate format change, since the tests pin these bytes.
"""
from pathlib import Path

import numpy as np

from oecpipe.entropy_models import GaussianConditional, LatentSpec, LatentTile, fit_factorized
from oecpipe.tile_codec import encode_tile

GOLDEN_DIR = Path(__file__).parent / "golden"
SPEC = LatentSpec("S", y_channels=4, z_channels=2)
TILE_DIM = 128


def models():
    gc = GaussianConditional()
    fp = fit_factorized([np.array([-2, -1, 0, 0, 0, 1, 2]), np.array([0, 0, 1, -1])])
    return gc, fp


def golden_tiles():
    gc, _ = models()
    zs = {
        "sparse": np.array([[[0, 1], [0, -2]], [[0, 0], [1, 0]]], dtype=np.int32),
        "zeros": np.zeros((2, 2, 2), dtype=np.int32),
    }
    out = {}
    for k, (name, z) in enumerate(zs.items()):
        scale_idx = gc.scale_indices(z, SPEC, TILE_DIM)
        lo, hi = gc.support(scale_idx)
        y = np.zeros(scale_idx.shape, dtype=np.int64)
        if name == "sparse":
            pattern = (np.arange(y.size).reshape(y.shape) * 7919) % 11 - 5
            y = np.where(pattern % 3 == 0, pattern, 0)
        y = np.clip(y, lo, hi).astype(np.int32)
        out[name] = LatentTile(k, 2 * k + 1, TILE_DIM, "S", y, z, scale_idx)
    return out


def main():
    gc, fp = models()
    GOLDEN_DIR.mkdir(exist_ok=True)
    for name, tile in golden_tiles().items():
        (GOLDEN_DIR / f"{name}.fcf").write_bytes(encode_tile(tile, gc, fp).to_bytes())


if __name__ == "__main__":
    main()
