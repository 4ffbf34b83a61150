# crowd_counting_desk/core/gradcheck.py

"""
Gradientenprüfung: Reverse-Mode gegen zentrale Differenzen.
"""

import numpy as np

from core.diffcore import DenseArray, no_grad
from utils.errors import NonFiniteValue, NonScalarOutput


def central_difference(func, x, eps=1e-5):
    """
    Numerischer Gradient einer numpy-Funktion func(ndarray) -> float
    per zentraler Differenz in jeder Koordinate.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        f_plus = float(func(x))
        flat[i] = old - eps
        f_minus = float(func(x))
        flat[i] = old
        g[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def grad_check(f, x, eps=1e-5):
    """
    Maximaler relativer Fehler zwischen Autodiff- und FD-Gradient:
        max_i |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)

    f: DenseArray -> skalares DenseArray
    x: Startpunkt (DenseArray oder array-artig)
    """
    if eps <= 0:
        raise ValueError(f"❌ eps muss > 0 sein, bekam {eps}")

    base = np.array(x.data if isinstance(x, DenseArray) else x, dtype=np.float64)

    leaf = DenseArray(base.copy(), requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise NonScalarOutput(f"❌ grad_check: f liefert Form {out.shape}")
    out.backward()
    g_ad = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    def value(arr):
        with no_grad():
            return f(DenseArray(arr)).item()

    g_fd = central_difference(value, base, eps)

    if not (np.all(np.isfinite(g_ad)) and np.all(np.isfinite(g_fd)) and np.isfinite(out.item())):
        raise NonFiniteValue("❌ grad_check: NaN/Inf in Funktionswert oder Gradient")

    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if base.size else 0.0
