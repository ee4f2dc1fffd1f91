"""Smoke test for the pyssdrl extension.

Build first with `cargo build --release -p ssdrl-py`, then run
`python3 python/smoke_test.py` from the repository root.
"""

import importlib
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    built = os.path.join(ROOT, "target", "release", "libpyssdrl.so")
    if not os.path.exists(built):
        sys.exit(f"missing {built}; run `cargo build --release -p ssdrl-py` first")
    lib_dir = tempfile.mkdtemp()
    shutil.copy(built, os.path.join(lib_dir, "pyssdrl.so"))
    sys.path.insert(0, lib_dir)
    return importlib.import_module("pyssdrl")


def main():
    m = load()

    a = m.ParticleSet([3.0, 1.0, 2.0])
    assert a.values == [1.0, 2.0, 3.0]
    assert len(a) == 3 and a.mean() == 2.0
    assert abs(a.cumulative_quantile(1 / 3) - 1 / 3) < 1e-12
    assert a.dominates(m.ParticleSet([0.0, 1.0, 2.0]))

    r = m.sinkhorn([0.0], [2.0], epsilon=0.01)
    assert abs(r.distance - 4.0) < 1e-9, r.distance
    x, y = [0.0, 1.0, 4.0], [0.5, 2.0, 3.0]
    r = m.sinkhorn(x, y, epsilon=0.005)
    for row in r.plan:
        assert abs(sum(row) - 1 / 3) < 1e-6
    assert abs(r.distance - m.exact_w2(x, y)) < 0.05

    assert m.compare([1.0, 2.0], [0.0, 1.0]) == "first"
    assert m.compare([1.0, 2.0], [1.0, 2.0]) == "mutual"
    assert m.compare([0.0, 4.0], [1.0, 2.0]) == "incomparable"

    z = m.proximal_step([-1.0, 0.0, 1.0], [2.0, 3.0, 4.0])
    loss0, _ = m.proximal_loss([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], [2.0, 3.0, 4.0])
    loss1, grad = m.proximal_loss(z, [-1.0, 0.0, 1.0], [2.0, 3.0, 4.0])
    assert loss1 < loss0 and len(grad) == 3 and all(math.isfinite(g) for g in grad)

    # action 1 dominates action 0 at equal mean
    assert m.select_action([[-2.0, 2.0], [0.0, 0.0]], policy="ssd", seed=1) == 1

    try:
        m.ParticleSet([])
    except ValueError:
        pass
    else:
        raise AssertionError("empty particle set accepted")

    with tempfile.TemporaryDirectory() as out:
        cfg = os.path.join(out, "regress.toml")
        with open(cfg, "w") as f:
            f.write(
                "[regress]\nsample_counts = [5]\nreference_samples = 200\n"
                "gradient_steps = 5\nqr_iterations = 50\n"
            )
        files = m.run_experiment("regress", config=cfg, trials=2, out=os.path.join(out, "run"), threads=1)
        names = sorted(os.path.basename(p) for p in files)
        assert "agg_wgf.csv" in names and "raw_qr_1.csv" in names, names

    print("pyssdrl smoke test passed")


if __name__ == "__main__":
    main()
