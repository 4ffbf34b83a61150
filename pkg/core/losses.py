# crowd_counting_desk/core/losses.py

"""
Zähl-Loss-Stapel:

    L_d   = |‖D′‖₁ − ‖D‖₁|  +  λ1 · OT(D′, D)  +  λ2 · TV(D′, D)
    L     = L_d + α · L_mp + β · L_cl

OT: balancierter entropischer Transport zwischen den normierten Verteilungen,
gelöst mit Sinkhorn im Log-Bereich. Der Gradient kommt aus den konvergierten
Dualpotentialen, nicht aus den Iterationen.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import linprog
from scipy.special import logsumexp

from core import diffcore as dc
from core.diffcore import DenseArray
from utils.errors import ConfigError, EmptySide, PointOutOfBounds, ShapeMismatch

STRIDE = 8


# ----------------------------------------------------------------------
# Konfiguration
# ----------------------------------------------------------------------
@dataclass
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.01
    alpha: float = 0.1
    beta: float = 0.01
    tv_sigma: float = 1.0

    def validate(self):
        for name in ("lambda1", "lambda2", "alpha", "beta", "tv_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"❌ loss.{name}={getattr(self, name)} muss >= 0 sein")
        return self


@dataclass
class SinkhornConfig:
    epsilon: float = None      # absolut; None → eps_scale · max(C)
    eps_scale: float = 0.01
    max_iters: int = 500
    tol: float = 1e-8

    def validate(self):
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError(f"❌ sinkhorn.epsilon={self.epsilon} muss > 0 sein")
        if self.eps_scale <= 0 or self.max_iters < 1 or self.tol <= 0:
            raise ConfigError("❌ sinkhorn: eps_scale > 0, max_iters >= 1 und tol > 0 erforderlich")
        return self


@dataclass
class GroundTruth:
    points: np.ndarray
    dot_grid: np.ndarray

    @property
    def count(self):
        return len(self.points)


@dataclass
class OtResult:
    cost: float
    objective: float
    grad: np.ndarray
    converged: bool
    iterations: int
    skipped: bool = False


def make_ground_truth(points, image_h, image_w, stride=STRIDE):
    """Punkte (x, y) in Bildpixeln → Punktgitter 1×(H/8)×(W/8), eine Einheit pro Kopf."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = image_h // stride, image_w // stride
    grid = np.zeros((1, h, w))
    for p in pts:
        if not (0.0 <= p[0] < image_w and 0.0 <= p[1] < image_h):
            raise PointOutOfBounds(p, image_h, image_w)
    if len(pts):
        rows = np.minimum((pts[:, 1] // stride).astype(int), h - 1)
        cols = np.minimum((pts[:, 0] // stride).astype(int), w - 1)
        np.add.at(grid[0], (rows, cols), 1.0)
    return GroundTruth(points=pts, dot_grid=grid)


def _density(d_pred):
    return dc.as_array(getattr(d_pred, "d", d_pred))


def _check_shapes(d, gt):
    if d.shape != gt.dot_grid.shape:
        raise ShapeMismatch(f"❌ Dichtekarte {d.shape} passt nicht zum Punktgitter {gt.dot_grid.shape}")


# ----------------------------------------------------------------------
# Zählterm
# ----------------------------------------------------------------------
def count_loss(d_pred, gt):
    d = _density(d_pred)
    _check_shapes(d, gt)
    return dc.abs_(dc.sum_(d) - float(gt.count))


# ----------------------------------------------------------------------
# Optimaler Transport
# ----------------------------------------------------------------------
def cell_centers(h, w):
    """Zellmittelpunkte (r + 0.5, c + 0.5) in Gittereinheiten, zeilenweise."""
    rows, cols = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    return np.stack([rows.reshape(-1), cols.reshape(-1)], axis=1)


def squared_cost(src, dst):
    diff = src[:, None, :] - dst[None, :, :]
    return (diff ** 2).sum(axis=-1)


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.log(np.maximum(x, 0.0)), -np.inf)


def solve_ot(a, b, C, cfg=None):
    """
    Entropischer OT zwischen Wahrscheinlichkeitsvektoren a (n) und b (m).

    Plan  P_ij = a_i b_j exp((f_i + g_j − C_ij) / ε)
    f_i   = −ε LSE_j(log b_j + (g_j − C_ij) / ε)
    g_j   = −ε LSE_i(log a_i + (f_i − C_ij) / ε)

    f ist auch auf Zellen mit a_i = 0 definiert und dort der Gradient.
    """
    cfg = cfg or SinkhornConfig()
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ShapeMismatch(f"❌ solve_ot: C {C.shape}, a {a.shape}, b {b.shape}")
    if a.sum() <= 0 or b.sum() <= 0:
        raise EmptySide(f"❌ OT: leere Seite (Masse a={a.sum():.3g}, b={b.sum():.3g})")
    a, b = a / a.sum(), b / b.sum()

    max_c = float(C.max()) if C.size else 0.0
    eps = cfg.epsilon if cfg.epsilon is not None else cfg.eps_scale * (max_c if max_c > 0 else 1.0)
    log_a, log_b = _safe_log(a), _safe_log(b)

    def f_update(g):
        return -eps * logsumexp(log_b[None, :] + (g[None, :] - C) / eps, axis=1)

    f = f_update(np.zeros(b.size))
    converged, it = False, 0
    for it in range(1, cfg.max_iters + 1):
        g = -eps * logsumexp(log_a[:, None] + (f[:, None] - C) / eps, axis=0)
        # Zeilensummen des Plans: a · exp((f − f_next) / ε)
        f_next = f_update(g)
        err = np.abs(a * np.exp(np.minimum((f - f_next) / eps, 700.0)) - a).sum()
        if err <= cfg.tol:
            converged = True
            break
        if it < cfg.max_iters:
            f = f_next

    plan = np.exp(log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - C) / eps)
    objective = float(f @ a + g @ b)
    return OtResult(cost=float((plan * C).sum()), objective=objective, grad=f,
                    converged=converged, iterations=it)


def ot_loss(d_pred, gt, cfg=None, verbose=True):
    """
    Entropischer Transport zwischen D′/‖D′‖₁ und dem Punktgitter.
    grad ist d(objective)/dD′ für das unnormierte D′:
        f/s − ⟨f, D′⟩/s²
    """
    cfg = cfg or SinkhornConfig()
    d = _density(d_pred)
    _check_shapes(d, gt)
    _, h, w = d.shape
    dens = d.data.reshape(-1)
    s = float(dens.sum())

    support = np.flatnonzero(gt.dot_grid.reshape(-1) > 0)
    centers = cell_centers(h, w)
    try:
        if s <= 0 or support.size == 0:
            raise EmptySide(f"❌ OT: leere Seite (Σ D′ = {s:.3g}, Punkte = {gt.count})")
        res = solve_ot(dens, gt.dot_grid.reshape(-1)[support],
                       squared_cost(centers, centers[support]), cfg)
    except EmptySide as exc:
        if verbose:
            print(f"⚠️ OT übersprungen: {str(exc).lstrip('❌ ')}")
        return OtResult(cost=0.0, objective=0.0, grad=np.zeros(d.shape), converged=True,
                        iterations=0, skipped=True)

    if not res.converged and verbose:
        print(f"⚠️ Sinkhorn nicht konvergiert nach {res.iterations} Iterationen")
    f = res.grad
    res.grad = ((f / s) - float(f @ dens) / s ** 2).reshape(d.shape)
    return res


def ot_term(d_pred, gt, cfg=None, verbose=True):
    """
    OT als Graphknoten: Wert = Dualobjektiv (Kosten + ε·KL), Gradient = dessen
    Dualgradient. `res.cost` dient nur Logs und dem LP-Vergleich.
    """
    d = _density(d_pred)
    res = ot_loss(d, gt, cfg, verbose=verbose)
    return dc.attach_gradient(d, res.objective, res.grad), res


def exact_ot_cost(a, b, C):
    """Unregularisierte OT-Kosten als lineares Programm (HiGHS)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    a, b = a / a.sum(), b / b.sum()
    n, m = a.size, b.size
    rows = np.kron(np.eye(n), np.ones((1, m)))
    cols = np.kron(np.ones((1, n)), np.eye(m))
    res = linprog(
        np.asarray(C, dtype=np.float64).reshape(-1),
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise ValueError(f"❌ linprog fehlgeschlagen: {res.message}")
    return float(res.fun)


def ot_tolerance(lp_cost, C, eps_scale=0.01):
    """
    Erlaubte Abweichung Sinkhorn ↔ LP bei ε = eps_scale · max(C):
    1 % relativ plus die Entropie-Schranke ε · log(min(n, m)).
    """
    C = np.asarray(C, dtype=np.float64)
    eps = eps_scale * float(C.max()) if C.size else 0.0
    return 0.01 * lp_cost + eps * np.log(min(C.shape)) + 1e-9


def ot_loss_unrolled(x, b, C, epsilon, iters=200):
    """
    Gleiches Dualobjektiv, aber durch die Iterationen differenziert.
    Nur als Vergleich für den Dualgradienten gedacht (x > 0 überall).
    """
    x = dc.as_array(x)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    b = b / b.sum()
    C = np.asarray(C, dtype=np.float64)
    a = x / dc.sum_(x)
    log_a = dc.log(a)
    log_b = DenseArray(np.log(b))

    n, m = C.shape
    g = DenseArray(np.zeros(m))
    f = None
    for _ in range(iters):
        f = -epsilon * dc.logsumexp(dc.reshape(log_b, (1, m)) + (dc.reshape(g, (1, m)) - C) / epsilon, axis=1)
        g = -epsilon * dc.logsumexp(dc.reshape(log_a, (n, 1)) + (dc.reshape(f, (n, 1)) - C) / epsilon, axis=0)
    return dc.sum_(f * a) + dc.sum_(g * DenseArray(b))


# ----------------------------------------------------------------------
# Total Variation
# ----------------------------------------------------------------------
def smoothed_target(gt, sigma_g):
    grid = gt.dot_grid[0]
    if sigma_g > 0:
        grid = gaussian_filter(grid, sigma=sigma_g, mode="constant")
    return grid[None] / grid.sum()


def tv_loss(d_pred, gt, sigma_g=1.0, verbose=True):
    """½ ‖D′/‖D′‖₁ − G_σ(D)/‖G_σ(D)‖₁‖₁ ∈ [0, 1]."""
    d = _density(d_pred)
    _check_shapes(d, gt)
    s = float(d.data.sum())
    if s <= 0 or gt.count == 0:
        if verbose:
            print(f"⚠️ TV übersprungen: leere Seite (Σ D′ = {s:.3g}, Punkte = {gt.count})")
        return DenseArray(0.0)
    target = smoothed_target(gt, sigma_g)
    return 0.5 * dc.sum_(dc.abs_(d / dc.sum_(d) - target))


# ----------------------------------------------------------------------
# Kombination
# ----------------------------------------------------------------------
def density_loss(d_pred, gt, w, cfg=None, verbose=False):
    """L_d = Zählterm + λ1·OT + λ2·TV. Gibt (L_d, OtResult) zurück."""
    d = _density(d_pred)
    l_count = count_loss(d, gt)
    loss = l_count
    res = None
    if w.lambda1 > 0:
        l_ot, res = ot_term(d, gt, cfg, verbose=verbose)
        loss = loss + w.lambda1 * l_ot
    if w.lambda2 > 0:
        loss = loss + w.lambda2 * tv_loss(d, gt, w.tv_sigma, verbose=verbose)
    return loss, res


def combine_terms(l_d, l_mp, l_cl, w):
    total = dc.as_array(l_d)
    if w.alpha > 0:
        total = total + w.alpha * dc.as_array(l_mp)
    if w.beta > 0:
        total = total + w.beta * dc.as_array(l_cl)
    return total


def combined_loss(d_pred, gt, l_mp, l_cl, w, cfg=None, verbose=False):
    l_d, _ = density_loss(d_pred, gt, w, cfg, verbose=verbose)
    return combine_terms(l_d, l_mp, l_cl, w)
