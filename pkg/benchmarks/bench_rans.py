"""Compare the compiled and pure-Python rANS kernels on one synthetic tile.

    python benchmarks/bench_rans.py [--model M] [--repeat 3]

Prints symbols/s for encode and decode per kernel and the speedup of each
kernel over the pure-Python one. Output is CSV on stdout.
"""
import argparse
import csv
import sys
import time

import numpy as np

from oecpipe import rans
from oecpipe.entropy_models import (
    GaussianConditional,
    LatentSpec,
    SyntheticLatentConfig,
    generate_synthetic_latent,
)


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="M", choices=("S", "M", "L"))
    ap.add_argument("--tile-dim", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    gc = GaussianConditional()
    spec = LatentSpec.for_size(args.model)
    tile = generate_synthetic_latent(spec, SyntheticLatentConfig(), 0, gc, args.tile_dim)
    values = np.ascontiguousarray(tile.y.ravel())
    ids = np.ascontiguousarray(tile.scale_idx.ravel())
    p = gc.packed
    n = values.size

    writer = csv.writer(sys.stdout)
    writer.writerow(["kernel", "symbols", "encode_sym_per_s", "decode_sym_per_s", "encode_speedup", "decode_speedup"])
    results = {}
    reference = None
    for name, k in rans.kernels().items():
        scratch = np.empty(2 * n + 8, dtype=np.uint8)
        enc_t, data = best_of(
            lambda: k.encode_indexed(values, ids, p.cdf, p.starts, p.sizes, p.offsets, p.precision_bits, scratch),
            args.repeat,
        )
        dec_t, decoded = best_of(
            lambda: k.decode_indexed(data, ids, p.cdf, p.starts, p.sizes, p.offsets, p.precision_bits),
            args.repeat,
        )
        if not np.array_equal(decoded, values):
            raise SystemExit(f"{name}: round trip failed")
        if reference is None:
            reference = data
        elif data != reference:
            raise SystemExit(f"{name}: bytes differ from the other kernel")
        results[name] = (n / enc_t, n / dec_t)

    base_enc, base_dec = results["python"]
    for name, (enc, dec) in results.items():
        writer.writerow([name, n, f"{enc:.0f}", f"{dec:.0f}", f"{enc / base_enc:.1f}", f"{dec / base_dec:.1f}"])


if __name__ == "__main__":
    main()
