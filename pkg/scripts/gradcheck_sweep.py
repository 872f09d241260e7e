"""Worst analytic-vs-numeric gradient error per tensor over random instances."""

import argparse

import numpy as np

from patchmine.checks import random_instance
from patchmine.gradcheck import numerical_grad
from patchmine.mining import mine, mine_grad


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--eps", type=float, default=1e-5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    worst_abs, worst_rel = {}, {}
    for i in range(args.instances):
        n, m, c = int(rng.integers(1, 9)), int(rng.integers(1, 3)), int(rng.integers(2, 7))
        q, k, v, w = random_instance(rng, n, m, c, seed=i)
        up = rng.normal(size=(n, c))
        grads = mine_grad(q, k, v, w, up)
        loss = lambda: float(np.sum(up * mine(q, k, v, w).data))  # noqa: E731
        for name, arr in {"q": q, "k": k, "v": v, **{f: getattr(w, f) for f in grads.weights()}}.items():
            num = numerical_grad(loss, arr, eps=args.eps)
            err = np.abs(getattr(grads, name) - num)
            worst_abs[name] = max(worst_abs.get(name, 0.0), float(err.max()))
            rel = err / np.maximum(np.abs(num), 1e-12)
            worst_rel[name] = max(worst_rel.get(name, 0.0), float(rel[np.abs(num) > 1e-6].max(initial=0.0)))

    print(f"{'tensor':<8} {'max abs':>10} {'max rel':>10}")
    for name in worst_abs:
        print(f"{name:<8} {worst_abs[name]:10.2e} {worst_rel[name]:10.2e}")


if __name__ == "__main__":
    main()
