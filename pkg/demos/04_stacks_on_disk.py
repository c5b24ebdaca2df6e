"""From files on disk to a corrected table of model-pair verdicts.

Writes three pseudo-models as directories of ``layer_<i>`` files, calibrates
the max-over-layers mutual-kNN score for every pair, and adjusts the pair
p-values with Benjamini-Hochberg. The same flow is available from the shell:

    repsim calibrate-agg --stack-a DIR --stack-b DIR --metric mknn --k 10
    repsim adjust --pvalues p.txt --method bh

Run: python demos/04_stacks_on_disk.py
"""
import itertools
import tempfile
from pathlib import Path

import numpy as np

from repsim import calibrate_aggregate, load_stack, multiplicity_adjust, save_matrix
from repsim.metrics import MetricSpec


def write_model(root, name, latent, widths, rng):
    # each layer: nonlinear readout of the previous one plus fresh noise
    path = Path(root) / name
    path.mkdir()
    H = latent
    for i, w in enumerate(widths):
        W = rng.standard_normal((H.shape[1], w)) / np.sqrt(H.shape[1])
        H = np.tanh(H @ W) + 0.3 * rng.standard_normal((H.shape[0], w))
        save_matrix(path / f"layer_{i}.rawbin", H)
    return path


rng = np.random.default_rng(0)
n = 200
world = rng.standard_normal((n, 10))
with tempfile.TemporaryDirectory() as root:
    models = {
        "vision": write_model(root, "vision", world, [64, 128, 64], rng),
        "text": write_model(root, "text", world, [32, 96, 96, 48], rng),
        "noise": write_model(root, "noise", rng.standard_normal((n, 10)), [64, 64], rng),
    }
    stacks = {k: load_stack(v) for k, v in models.items()}

spec = MetricSpec.from_name("mknn", k=10)
pairs, pvals = [], []
for a, b in itertools.combinations(stacks, 2):
    res = calibrate_aggregate(stacks[a], stacks[b], spec, "max", K=199, seed=1)
    pairs.append((a, b, res))
    pvals.append(res.p_agg)

adj = multiplicity_adjust(pvals, "bh")
print(f"{'pair':>14} {'raw max':>8} {'tau':>7} {'p':>6} {'p_bh':>6} {'T_cal':>6}")
for (a, b, r), q in zip(pairs, adj):
    print(f"{a + '-' + b:>14} {r.T_obs:8.4f} {r.tau_agg:7.4f} {r.p_agg:6.3f} {q:6.3f} {r.T_cal:6.3f}")
