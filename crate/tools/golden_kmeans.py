"""Reference residual k-means for the tokenizer golden test.

Generates 256 random unit vectors (seed 7), writes them in the embedding file
format, and records the mean squared residual after each of three levels of a
plain Lloyd k-means (32 centroids, best of 20 random restarts per level), plus
the best and worst first-level restart.

    python tools/golden_kmeans.py crates/core/tests/data
"""
import json
import sys
from pathlib import Path

import numpy as np

ROWS, DIM, K, LEVELS, SEED = 256, 16, 32, 3, 7


def lloyd(x, k, rng, iters=100):
    c = x[rng.choice(len(x), size=k, replace=False)].copy()
    for _ in range(iters):
        d = ((x[:, None, :] - c[None, :, :]) ** 2).sum(-1)
        a = d.argmin(1)
        new = np.array([x[a == j].mean(0) if (a == j).any() else c[j] for j in range(k)])
        if np.allclose(new, c):
            break
        c = new
    d = ((x[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    return c, d.min(1).mean()


def main(out):
    out = Path(out)
    rng = np.random.default_rng(SEED)
    x = rng.standard_normal((ROWS, DIM))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    x = x.astype(np.float32)
    x.astype("<f4").tofile(out / "kmeans256.f32")
    ids = [f"v{i:03d}" for i in range(ROWS)]
    (out / "kmeans256.json").write_text(json.dumps({"rows": ROWS, "cols": DIM, "ids": ids}))

    r = x.astype(np.float64)
    errors = [float((r**2).sum(1).mean())]
    spread = None
    for _ in range(LEVELS):
        runs = [lloyd(r, K, rng) for _ in range(20)]
        best = min(runs, key=lambda t: t[1])
        if spread is None:
            spread = [float(min(e for _, e in runs)), float(max(e for _, e in runs))]
        c = best[0]
        a = ((r[:, None, :] - c[None, :, :]) ** 2).sum(-1).argmin(1)
        r = r - c[a]
        errors.append(float((r**2).sum(1).mean()))
    golden = out / "kmeans256_golden.json"
    doc = json.loads(golden.read_text()) if golden.exists() else {}
    doc["reference"] = errors
    doc["level1_restart_range"] = spread
    golden.write_text(json.dumps(doc, indent=2) + "\n")
    print(errors)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
