# crowd_counting_desk/core/diffcore.py

"""
Kleiner Reverse-Mode-Autodiff-Kern auf numpy-Basis.

Jede Operation erzeugt ein neues `DenseArray` und merkt sich ihre Eltern
plus eine Rückwärtsfunktion (Vektor-Jacobi-Produkt). `backward` sortiert
den Graphen topologisch und besucht jeden Knoten genau einmal.

Alles läuft in float64; float32 ist bewusst nicht vorgesehen.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as _np_logsumexp

from utils.errors import NonScalarOutput, ShapeMismatch

DTYPE = np.float64
COS_FLOOR = 1e-12

_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Vorwärtsrechnung ohne Graph (Inferenz, Finite Differenzen)."""
    old = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = old


# ======================================================================
# DenseArray
# ======================================================================
class DenseArray:
    """N-dimensionales float64-Array mit optionalem Gradienten."""

    # numpy soll bei `ndarray ⊕ DenseArray` an __radd__ & Co. abgeben
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # ------------------------------------------------------------
    # Eigenschaften
    # ------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.data.size != 1:
            raise NonScalarOutput(f"❌ item() auf Array der Form {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DenseArray(shape={self.shape}{flag}, op={self._op})"

    # ------------------------------------------------------------
    # Operatoren
    # ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def backward(self):
        backward(self)


def as_array(x):
    if isinstance(x, DenseArray):
        return x
    return DenseArray(x)


def _make(data, parents, backward_fn, op):
    """Knoten anlegen; Graph nur, wenn ein Elternteil Gradienten braucht."""
    out = DenseArray(data)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _unbroadcast(grad, shape):
    """Summiert einen gebroadcasteten Gradienten auf `shape` zurück."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"❌ {op}: Formen {a.shape} und {b.shape} passen nicht")


# ======================================================================
# Graph + Backward
# ======================================================================
@dataclass
class Graph:
    """Topologisch sortierte Knotenliste (Eingaben vor Verbrauchern)."""
    nodes: list = field(default_factory=list)
    output: DenseArray = None


def build_graph(output):
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return Graph(nodes=order, output=output)


def backward(output, graph=None):
    """
    Berechnet d(output)/d(blatt) für alle Blätter mit requires_grad.
    Gradienten werden auf `blatt.grad` aufsummiert.
    """
    if output.size != 1:
        raise NonScalarOutput(f"❌ backward braucht einen Skalar, bekam Form {output.shape}")
    if not output.requires_grad:
        return graph

    graph = graph or build_graph(output)
    grads = {id(output): np.ones_like(output.data)}

    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return graph


# ======================================================================
# Elementweise
# ======================================================================
def add(a, b):
    a, b = as_array(a), as_array(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_array(a), as_array(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_array(a), as_array(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_array(a), as_array(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _make(out, (a, b), bw, "div")


def neg(x):
    x = as_array(x)
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def power(x, p):
    x = as_array(x)
    p = float(p)

    def bw(g):
        return (g * p * x.data ** (p - 1.0),)
    return _make(x.data ** p, (x,), bw, "pow")


def exp(x):
    x = as_array(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = as_array(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x):
    x = as_array(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def abs_(x):
    # Subgradient 0 bei x == 0
    x = as_array(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x):
    # Subgradient 0 bei x == 0
    x = as_array(x)
    active = x.data > 0
    return _make(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,), "relu")


# ======================================================================
# Reduktionen / Form
# ======================================================================
def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    x = as_array(x)
    axes = _normalize_axis(axis, x.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_array(x)
    axes = _normalize_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return sum_(x, axis=axis, keepdims=keepdims) / float(max(n, 1))


def reshape(x, shape):
    x = as_array(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"❌ reshape: {x.shape} → {shape} unmöglich")
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    x = as_array(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(arrays, axis=0):
    arrays = [as_array(a) for a in arrays]
    try:
        out = np.concatenate([a.data for a in arrays], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"❌ concat: Formen {[a.shape for a in arrays]} (Achse {axis})")
    splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))
    return _make(out, tuple(arrays), bw, "concat")


def gather(x, idx, axis=0):
    """Auswahl entlang einer Achse (index_select)."""
    x = as_array(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[axis]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeMismatch(f"❌ gather: Index außerhalb [0,{n}) auf Achse {axis}")

    def bw(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (gx,)
    return _make(np.take(x.data, idx, axis=axis), (x,), bw, "gather")


def scatter(x, idx, values, axis=0):
    """Kopie von x, in der die Scheiben `idx` entlang `axis` durch `values` ersetzt sind."""
    x, values = as_array(x), as_array(values)
    idx = np.asarray(idx, dtype=np.int64)
    expected = list(x.shape)
    expected[axis] = idx.size
    if tuple(values.shape) != tuple(expected):
        raise ShapeMismatch(f"❌ scatter: values {values.shape}, erwartet {tuple(expected)}")

    out = x.data.copy()
    np.moveaxis(out, axis, 0)[idx] = np.moveaxis(values.data, axis, 0)

    def bw(g):
        gx = g.copy()
        np.moveaxis(gx, axis, 0)[idx] = 0.0
        return gx, np.take(g, idx, axis=axis)
    return _make(out, (x, values), bw, "scatter")


def detach(x):
    """Stop-Gradient: gleiche Werte, kein Graph."""
    return DenseArray(as_array(x).data.copy())


def attach_gradient(x, value, grad):
    """
    Skalar mit vorgegebenem Wert, dessen Gradient bzgl. x konstant `grad` ist.
    Genutzt für Terme, deren Gradient analytisch (z.B. aus Dualpotentialen)
    vorliegt.
    """
    x = as_array(x)
    grad = np.asarray(grad, dtype=DTYPE)
    if grad.shape != x.shape:
        raise ShapeMismatch(f"❌ attach_gradient: grad {grad.shape} vs x {x.shape}")
    return _make(np.array(float(value)), (x,), lambda g: (g * grad,), "attach")


# ======================================================================
# Lineare Algebra
# ======================================================================
def matmul(a, b):
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"❌ matmul: {a.shape} @ {b.shape}")

    def bw(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g
    return _make(a.data @ b.data, (a, b), bw, "matmul")


def softmax(x, axis=-1):
    x = as_array(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _make(y, (x,), bw, "softmax")


def logsumexp(x, axis=-1, keepdims=False):
    x = as_array(x)
    out = _np_logsumexp(x.data, axis=axis, keepdims=True)
    p = np.exp(x.data - out)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * p,)
    value = out if keepdims else np.squeeze(out, axis=axis)
    return _make(value, (x,), bw, "logsumexp")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalisierung über die letzte Achse."""
    x, gamma, beta = as_array(x), as_array(gamma), as_array(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"❌ layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")

    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    red = tuple(range(x.ndim - 1))

    def bw(g):
        dxhat = g * gamma.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)
    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def cosine_similarity(a, b, floor=COS_FLOOR):
    """
    Paarweise Kosinus-Ähnlichkeit: a (n, D), b (m, D) → (n, m).
    Nenner ‖a‖‖b‖ wird nach unten auf `floor` begrenzt.
    """
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"❌ cosine_similarity: {a.shape} vs {b.shape}")

    na = np.sqrt((a.data ** 2).sum(axis=1))
    nb = np.sqrt((b.data ** 2).sum(axis=1))
    prod = np.outer(na, nb)
    active = prod > floor
    denom = np.where(active, prod, floor)
    s = (a.data @ b.data.T) / denom

    def bw(g):
        gd = g / denom
        gs = g * s * active
        with np.errstate(divide="ignore", invalid="ignore"):
            ca = np.where(na > 0, gs.sum(axis=1) / na ** 2, 0.0)
            cb = np.where(nb > 0, gs.sum(axis=0) / nb ** 2, 0.0)
        ga = gd @ b.data - a.data * ca[:, None]
        gb = gd.T @ a.data - b.data * cb[:, None]
        return ga, gb
    return _make(s, (a, b), bw, "cosine")


def norm(x, ord=2):
    """L1- oder L2-Norm über alle Einträge."""
    x = as_array(x)
    if ord == 1:
        return sum_(abs_(x))
    if ord != 2:
        raise ValueError(f"❌ norm: ord={ord} nicht unterstützt")
    value = np.sqrt((x.data ** 2).sum())

    def bw(g):
        return (g * x.data / value if value > 0 else np.zeros_like(x.data),)
    return _make(value, (x,), bw, "l2norm")


# ======================================================================
# Bildoperationen (C×H×W)
# ======================================================================
def _im2col(xp, kh, kw, stride, ho, wo):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # (C, Ho, Wo, kh, kw) → (C*kh*kw, Ho*Wo)
    return win.transpose(0, 3, 4, 1, 2).reshape(-1, ho * wo)


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D-Faltung per im2col, Zero-Padding. x (C,H,W), w (O,C,kh,kw), b (O,)."""
    x, w = as_array(x), as_array(w)
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"❌ conv2d: x {x.shape}, w {w.shape}")
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"❌ conv2d: Kernel {kh}×{kw} größer als Eingabe {h}×{wd}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = w.data.reshape(o, -1)
    out = w2 @ cols

    parents = (x, w)
    if b is not None:
        b = as_array(b)
        if b.shape != (o,):
            raise ShapeMismatch(f"❌ conv2d: bias {b.shape}, erwartet ({o},)")
        out = out + b.data[:, None]
        parents = (x, w, b)

    def bw(g):
        g2 = g.reshape(o, -1)
        gw = (g2 @ cols.T).reshape(w.shape)
        gcols = (w2.T @ g2).reshape(c, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
        gx = gxp[:, padding : padding + h, padding : padding + wd]
        grads = (gx, gw)
        if b is not None:
            grads = grads + (g2.sum(axis=1),)
        return grads
    return _make(out.reshape(o, ho, wo), parents, bw, "conv2d")


def max_pool2d(x, k=2):
    """Max-Pooling mit Fenster = Schrittweite = k; H und W müssen durch k teilbar sein."""
    x = as_array(x)
    if x.ndim != 3 or x.shape[1] % k or x.shape[2] % k:
        raise ShapeMismatch(f"❌ max_pool2d: Form {x.shape} nicht durch {k} teilbar")
    c, h, w = x.shape
    ho, wo = h // k, w // k
    win = x.data.reshape(c, ho, k, wo, k).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, k * k)
    # bei Gleichstand gewinnt der erste Eintrag
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        return (gw.reshape(c, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)
    return _make(out, (x,), bw, "max_pool2d")


def bilinear_matrix(n_in, scale):
    """Interpolationsmatrix (n_in*scale × n_in), align_corners=False."""
    n_out = n_in * scale
    src = (np.arange(n_out) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - w1)
    np.add.at(m, (np.arange(n_out), i1), w1)
    return m


def upsample_bilinear(x, scale):
    """Bilineares Hochskalieren (C,H,W) → (C,H*s,W*s)."""
    x = as_array(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"❌ upsample_bilinear: erwartet C×H×W, bekam {x.shape}")
    ah = bilinear_matrix(x.shape[1], scale)
    aw = bilinear_matrix(x.shape[2], scale)
    out = np.einsum("ih,chw,jw->cij", ah, x.data, aw)

    def bw(g):
        return (np.einsum("ih,cij,jw->chw", ah, g, aw),)
    return _make(out, (x,), bw, "upsample")
