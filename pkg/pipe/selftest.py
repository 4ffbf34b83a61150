#!/usr/bin/env python3
"""
selftest.py – Gradientenprüfungen, Orakel und Loss-Identitäten.
Druckt eine Tabelle; Exit-Code 1, sobald eine Prüfung fehlschlägt.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from core import diffcore as dc  # noqa: E402
from core.clm import LabelGrid, contrastive_loss, softplus  # noqa: E402
from core.evalmetrics import match_points, match_points_exhaustive  # noqa: E402
from core.gradcheck import central_difference, grad_check  # noqa: E402
from core.losses import (  # noqa: E402
    LossWeights, SinkhornConfig, combined_loss, count_loss, density_loss, exact_ot_cost, make_ground_truth,
    ot_term, ot_tolerance, solve_ot, tv_loss,
)
from core.mpm import consistent_loss, make_mask  # noqa: E402

GRAD_TOL = 1e-4


# ------------------------------------------------------------
# Einzelprüfungen: liefern (bestanden, kennzahl)
# ------------------------------------------------------------
def _primitive_cases(rng):
    w = rng.normal(size=(2, 2, 3, 3))
    m = rng.normal(size=(3, 4))
    return {
        "mul/div": (lambda x: dc.sum_(x * x / (1.5 + x * x)), rng.normal(size=(3, 4))),
        "exp/log/sqrt": (lambda x: dc.sum_(dc.log(1.0 + dc.exp(x)) + dc.sqrt(x * x + 1.0)), rng.normal(size=5)),
        "matmul": (lambda x: dc.sum_(dc.matmul(x, m) ** 2), rng.normal(size=(2, 3))),
        "softmax": (lambda x: dc.sum_(dc.softmax(x) * np.arange(4.0)), rng.normal(size=(3, 4))),
        "logsumexp": (lambda x: dc.sum_(dc.logsumexp(x, axis=1)), rng.normal(size=(3, 4))),
        "layer_norm": (lambda x: dc.sum_(dc.layer_norm(x, np.full(4, 1.3), np.zeros(4)) * np.arange(4.0)),
                       rng.normal(size=(2, 4))),
        "cosine": (lambda x: dc.sum_(dc.cosine_similarity(x, m.T[:2])), rng.normal(size=(3, 3))),
        "conv2d": (lambda x: dc.sum_(dc.conv2d(x, w, padding=1) ** 2), rng.normal(size=(2, 4, 4))),
        "max_pool2d": (lambda x: dc.sum_(dc.max_pool2d(x) ** 2), rng.normal(size=(1, 4, 4))),
        "upsample": (lambda x: dc.sum_(dc.upsample_bilinear(x, 4) ** 2), rng.normal(size=(1, 2, 2))),
    }


def check_primitives(seed=0):
    rng = np.random.default_rng(seed)
    worst = max(grad_check(f, x) for f, x in _primitive_cases(rng).values())
    return worst < GRAD_TOL, worst


def check_loss_grads(seed=0):
    rng = np.random.default_rng(seed)
    mask = make_mask(6, 0.5, "random", (2, 3), seed)
    target = rng.normal(size=(6, 4))
    labels = LabelGrid(labels=np.array([[1, 0], [1, 0]], dtype=np.int8), target_count=2, background_count=2)
    gt = make_ground_truth([[4.0, 4.0], [12.0, 4.0]], 16, 16)
    sink = SinkhornConfig(epsilon=1.0, tol=1e-12, max_iters=20000)
    w = LossWeights()

    errs = [
        grad_check(lambda x: consistent_loss(x, target, mask), rng.normal(size=(6, 4))),
        grad_check(lambda x: contrastive_loss(x, labels, verbose=False), rng.normal(size=(3, 2, 2))),
        grad_check(lambda x: tv_loss(x, gt, 0.0, verbose=False), rng.uniform(0.5, 1.5, size=(1, 2, 2))),
        grad_check(lambda x: count_loss(x, gt), rng.uniform(0.5, 1.5, size=(1, 2, 2))),
        grad_check(lambda x: ot_term(x, gt, sink, verbose=False)[0], rng.uniform(0.2, 1.0, size=(1, 2, 2))),
        grad_check(lambda x: density_loss(x, gt, w, sink)[0], rng.uniform(0.2, 1.0, size=(1, 2, 2))),
        grad_check(lambda x: combined_loss(x, gt, dc.sum_(x * x), dc.mean(dc.exp(-x)), w, sink),
                   rng.uniform(0.2, 1.0, size=(1, 2, 2))),
    ]
    return max(errs) < GRAD_TOL, max(errs)


def check_ot_oracle(n_instances=20, seed=0):
    rng = np.random.default_rng(seed)
    cfg = SinkhornConfig(max_iters=20000, tol=1e-10)
    worst = 0.0
    for _ in range(n_instances):
        n, m = rng.integers(1, 7, size=2)
        a, b = rng.uniform(0.1, 1.0, n), rng.uniform(0.1, 1.0, m)
        C = ((rng.uniform(0, 4, (n, 1, 2)) - rng.uniform(0, 4, (1, m, 2))) ** 2).sum(-1)
        lp = exact_ot_cost(a, b, C)
        sink = solve_ot(a, b, C, cfg).cost
        worst = max(worst, abs(sink - lp) / ot_tolerance(lp, C))
    return worst <= 1.0, worst


def check_ot_gradient(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.2, 1.0, 4)
    b = rng.uniform(0.2, 1.0, 3)
    C = ((rng.uniform(0, 3, (4, 1, 2)) - rng.uniform(0, 3, (1, 3, 2))) ** 2).sum(-1)
    cfg = SinkhornConfig(epsilon=0.5, max_iters=20000, tol=1e-12)

    res = solve_ot(x, b, C, cfg)
    s = x.sum()
    grad = res.grad / s - (res.grad @ x) / s ** 2
    fd = central_difference(lambda v: solve_ot(v, b, C, cfg).objective, x, 1e-6)
    err = float(np.max(np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))))
    return err < 1e-3, err


def check_matching(n_instances=50, seed=0):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_instances):
        sigma = float(rng.choice([4.0, 8.0, 16.0]))
        preds = rng.uniform(0, 32, (rng.integers(0, 7), 2))
        gts = rng.uniform(0, 32, (rng.integers(0, 7), 2))
        res = match_points(preds, gts, sigma)
        tp, tot = match_points_exhaustive(preds, gts, sigma)
        if res.tp != tp or abs(sum(p[2] for p in res.pairs) - tot) > 1e-9:
            bad += 1
    return bad == 0, float(bad)


def check_identities():
    ln2 = softplus(dc.DenseArray([0.0])).item()
    gt = make_ground_truth([[4.0, 4.0]], 16, 16)
    tv = tv_loss(np.array([[[0.0, 1.0], [0.0, 0.0]]]), gt, 0.0, verbose=False).item()
    err = max(abs(ln2 - np.log(2.0)), abs(tv - 1.0))
    return err < 1e-12, err


CHECKS = {
    "Primitive (grad_check)": check_primitives,
    "Loss-Gradienten": check_loss_grads,
    "OT vs. LP": check_ot_oracle,
    "OT-Dualgradient": check_ot_gradient,
    "Zuordnung vs. Aufzählung": check_matching,
    "Loss-Identitäten": check_identities,
}


def run_selftest(verbose=True):
    rows = []
    for name, check in CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, value = check()
        except Exception as exc:
            ok, value = False, f"{type(exc).__name__}: {exc}"
        rows.append({"Prüfung": name, "ok": "✔" if ok else "❌", "Kennzahl": value,
                     "Sekunden": round(time.perf_counter() - t0, 2)})
    table = pd.DataFrame(rows)
    if verbose:
        print(table.to_string(index=False))
    return table


def main(argv=None):
    argparse.ArgumentParser(description="Selbsttest").parse_args(argv)
    table = run_selftest()
    failed = (table["ok"] != "✔").sum()
    print("✅ Alle Prüfungen bestanden." if not failed else f"❌ {failed} Prüfung(en) fehlgeschlagen.")
    return 1 if failed else 0


if __name__ == "__main__":
    from cli import guarded
    sys.exit(guarded(main))
