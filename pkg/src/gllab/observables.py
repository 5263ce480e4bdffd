"""Local observables with machine-precision partial derivatives.

Observables are scalar functions of a window of tilt values.  First and
second partials come either from closed forms supplied at construction or
from forward-mode differentiation of the evaluation routine with hyperdual
numbers; finite differences are used only to cross-check at construction.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgumentError


class HyperDual:
    """Second-order forward-mode number: f + d1*e1 + d2*e2 + d12*e1*e2.

    Seeding d1, d2 with unit tangents along coordinates y and z makes one
    evaluation return f, df/dy, df/dz and d2f/dydz exactly.
    """

    __slots__ = ("f", "d1", "d2", "d12")

    def __init__(self, f, d1=0.0, d2=0.0, d12=0.0):
        self.f = float(f)
        self.d1 = float(d1)
        self.d2 = float(d2)
        self.d12 = float(d12)

    @staticmethod
    def lift(x):
        return x if isinstance(x, HyperDual) else HyperDual(x)

    def __add__(self, other):
        o = HyperDual.lift(other)
        return HyperDual(self.f + o.f, self.d1 + o.d1, self.d2 + o.d2, self.d12 + o.d12)

    __radd__ = __add__

    def __neg__(self):
        return HyperDual(-self.f, -self.d1, -self.d2, -self.d12)

    def __sub__(self, other):
        return self + (-HyperDual.lift(other))

    def __rsub__(self, other):
        return HyperDual.lift(other) + (-self)

    def __mul__(self, other):
        o = HyperDual.lift(other)
        return HyperDual(
            self.f * o.f,
            self.f * o.d1 + self.d1 * o.f,
            self.f * o.d2 + self.d2 * o.f,
            self.f * o.d12 + self.d1 * o.d2 + self.d2 * o.d1 + self.d12 * o.f,
        )

    __rmul__ = __mul__

    def _reciprocal(self):
        inv = 1.0 / self.f
        inv2 = inv * inv
        return HyperDual(
            inv,
            -self.d1 * inv2,
            -self.d2 * inv2,
            -self.d12 * inv2 + 2.0 * self.d1 * self.d2 * inv2 * inv,
        )

    def __truediv__(self, other):
        return self * HyperDual.lift(other)._reciprocal()

    def __rtruediv__(self, other):
        return HyperDual.lift(other) * self._reciprocal()

    def __pow__(self, n):
        n = float(n)
        fp = self.f ** (n - 1.0)
        fpp = self.f ** (n - 2.0) if n != 1.0 else 0.0
        return self._chain(self.f**n, n * fp, n * (n - 1.0) * fpp)

    def _chain(self, u, du, ddu):
        """Compose with scalar u(f) given u'(f), u''(f)."""
        return HyperDual(
            u,
            du * self.d1,
            du * self.d2,
            du * self.d12 + ddu * self.d1 * self.d2,
        )

    def __repr__(self):
        return f"HyperDual({self.f}, {self.d1}, {self.d2}, {self.d12})"


def _unary(fn, dfn, ddfn):
    def wrapped(x):
        if isinstance(x, HyperDual):
            return x._chain(fn(x.f), dfn(x.f), ddfn(x.f))
        return fn(x)

    return wrapped


# math shims usable inside observable evaluation routines
exp = _unary(math.exp, math.exp, math.exp)
sin = _unary(math.sin, math.cos, lambda t: -math.sin(t))
cos = _unary(math.cos, lambda t: -math.sin(t), lambda t: -math.cos(t))
log = _unary(math.log, lambda t: 1.0 / t, lambda t: -1.0 / (t * t))
sqrt = _unary(math.sqrt, lambda t: 0.5 / math.sqrt(t), lambda t: -0.25 * t**-1.5)
tanh = _unary(
    math.tanh,
    lambda t: 1.0 / math.cosh(t) ** 2,
    lambda t: -2.0 * math.tanh(t) / math.cosh(t) ** 2,
)


class Observable:
    """Scalar local function of the tilt window [-w, w].

    Parameters
    ----------
    window : int
        Radius w; ``evaluate`` receives a length 2w+1 sequence where index
        y+w holds the tilt at offset y.  Pass ``offsets`` instead for an
        asymmetric support (e.g. a block average over [-ell, ell-1]).
    evaluate : callable
        Scalar evaluation; must also accept HyperDual entries unless closed
        forms for both partial orders are supplied.
    grad, hess : callable, optional
        Closed-form partials: window -> (K,) and window -> (K, K).
    value_tau : callable, optional
        Vectorized torus sweep: (..., N) states -> (..., N) values of the
        observable translated to every site.
    grad_batch, hess_batch : callable, optional
        Vectorized partials on stacked windows (R, K).

    On the torus, offset y refers to site (anchor + y) with the anchor at
    site 1 by default; on a block, offset y is the site y itself.
    """

    def __init__(
        self,
        window,
        evaluate,
        grad=None,
        hess=None,
        name="observable",
        value_tau=None,
        value_windows=None,
        grad_batch=None,
        hess_batch=None,
        validate=True,
        rng=None,
        offsets=None,
    ):
        if offsets is not None:
            self.offsets = np.asarray(offsets, dtype=int)
            if self.offsets.ndim != 1 or len(np.unique(self.offsets)) != self.offsets.size:
                raise InvalidArgumentError("offsets must be distinct integers")
            self.window = int(np.max(np.abs(self.offsets)))
        else:
            self.window = int(window)
            if self.window < 0:
                raise InvalidArgumentError("window radius must be >= 0")
            self.offsets = np.arange(-self.window, self.window + 1)
        self.size = self.offsets.size
        self._evaluate = evaluate
        self._grad = grad
        self._hess = hess
        self._value_tau = value_tau
        self._value_windows = value_windows
        self._grad_batch = grad_batch
        self._hess_batch = hess_batch
        self.name = name
        # closed-form (value, d/du, d2/du2) of the quadratic-ensemble
        # average, set by factories that know it; None means use the
        # finite-difference pipeline
        self.tilde_quadratic = None
        if validate:
            self._validate_partials(rng)

    # -- scalar interface ------------------------------------------------

    def value(self, window_vals) -> float:
        w = np.asarray(window_vals, dtype=float)
        if w.shape != (self.size,):
            raise InvalidArgumentError(f"window must have length {self.size}")
        return float(self._evaluate(w))

    def gradient(self, window_vals) -> np.ndarray:
        w = np.asarray(window_vals, dtype=float)
        if self._grad is not None:
            return np.asarray(self._grad(w), dtype=float)
        out = np.empty(self.size)
        for k in range(self.size):
            args = [HyperDual(v, d1=1.0 if i == k else 0.0) for i, v in enumerate(w)]
            out[k] = HyperDual.lift(self._evaluate(args)).d1
        return out

    def hessian(self, window_vals) -> np.ndarray:
        w = np.asarray(window_vals, dtype=float)
        if self._hess is not None:
            return np.asarray(self._hess(w), dtype=float)
        out = np.empty((self.size, self.size))
        for k in range(self.size):
            for j in range(k, self.size):
                args = [
                    HyperDual(v, d1=1.0 if i == k else 0.0, d2=1.0 if i == j else 0.0)
                    for i, v in enumerate(w)
                ]
                out[k, j] = out[j, k] = HyperDual.lift(self._evaluate(args)).d12
        return out

    # -- vectorized interface ---------------------------------------------

    @property
    def has_batch_partials(self) -> bool:
        return self._grad_batch is not None and self._hess_batch is not None

    def value_tau(self, states: np.ndarray) -> np.ndarray:
        """Observable translated to every torus site, vectorized when possible."""
        states = np.asarray(states, dtype=float)
        if self._value_tau is not None:
            return np.asarray(self._value_tau(states), dtype=float)
        n = states.shape[-1]
        flat = states.reshape(-1, n)
        out = np.empty_like(flat)
        for x in range(n):
            win = flat[:, (x + self.offsets) % n]
            out[:, x] = [self._evaluate(row) for row in win]
        return out.reshape(states.shape)

    def value_windows(self, windows: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on stacked windows (..., 2w+1)."""
        windows = np.asarray(windows, dtype=float)
        if self._value_windows is not None:
            return np.asarray(self._value_windows(windows), dtype=float)
        if self.size == 1 and self._value_tau is not None:
            return np.asarray(self._value_tau(windows[..., 0]), dtype=float)
        flat = windows.reshape(-1, self.size)
        return np.array([self._evaluate(row) for row in flat]).reshape(windows.shape[:-1])

    def gradient_batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        if self._grad_batch is not None:
            return np.asarray(self._grad_batch(windows), dtype=float)
        return np.apply_along_axis(self.gradient, -1, windows)

    def hessian_batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        if self._hess_batch is not None:
            return np.asarray(self._hess_batch(windows), dtype=float)
        flat = windows.reshape(-1, self.size)
        out = np.stack([self.hessian(row) for row in flat])
        return out.reshape(windows.shape[:-1] + (self.size, self.size))

    # -- extraction --------------------------------------------------------

    def fits_block(self, ell: int, anchor: int = 0) -> bool:
        lo = anchor + int(self.offsets.min())
        hi = anchor + int(self.offsets.max())
        return lo >= -ell and hi <= ell - 1

    def window_of(self, fld, x: int | None = None) -> np.ndarray:
        """Window values anchored at site x (torus default 1, block 0)."""
        values = fld.values
        if hasattr(fld, "ell"):
            x = 0 if x is None else int(x)
            if not self.fits_block(fld.ell, x):
                raise InvalidArgumentError("observable window leaves the block")
            return values[self.offsets + x + fld.ell]
        x = 1 if x is None else int(x)
        return values[(self.offsets + x - 1) % fld.N]

    def _validate_partials(self, rng=None):
        rng = np.random.default_rng(0 if rng is None else rng)
        h = 1e-5
        for _ in range(3):
            w = rng.normal(size=self.size)
            g = self.gradient(w)
            hess = self.hessian(w)
            for k in range(self.size):
                wp, wm = w.copy(), w.copy()
                wp[k] += h
                wm[k] -= h
                fd = (self.value(wp) - self.value(wm)) / (2 * h)
                if abs(fd - g[k]) > 1e-6 * (1.0 + abs(g[k])):
                    raise InvalidArgumentError(
                        f"partial d/d_eta({k - self.window}) of {self.name} "
                        f"disagrees with finite differences: {g[k]} vs {fd}"
                    )
                gp = self.gradient(wp)
                gm = self.gradient(wm)
                fd2 = (gp - gm) / (2 * h)
                if np.max(np.abs(fd2 - hess[k])) > 1e-6 * (1.0 + np.max(np.abs(hess[k]))):
                    raise InvalidArgumentError(
                        f"second partials of {self.name} disagree with finite differences"
                    )

    def __repr__(self):
        return f"Observable({self.name}, window={self.window})"


# ----------------------------------------------------------------------
# shipped observable family


def obs_site(u0: float = 0.0) -> Observable:
    """f = eta(0) - u0."""

    def _vt(states):
        return states - u0

    obs = Observable(
        window=0,
        evaluate=lambda w: w[0] - u0,
        grad=lambda w: np.ones(1),
        hess=lambda w: np.zeros((1, 1)),
        value_tau=_vt,
        grad_batch=lambda W: np.ones_like(W),
        hess_batch=lambda W: np.zeros(W.shape + (1,)),
        name=f"site(u0={u0:g})",
        validate=False,
    )
    obs.tilde_quadratic = lambda u: (u - u0, 1.0, 0.0)
    return obs


def obs_pair(u0: float = 0.0) -> Observable:
    """f = (eta(0) - u0) * (eta(1) - u0), window radius 1."""

    def _ev(w):
        return (w[1] - u0) * (w[2] - u0)

    def _grad(w):
        return np.array([0.0, w[2] - u0, w[1] - u0])

    _h = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])

    def _vt(states):
        c = states - u0
        return c * np.roll(c, -1, axis=-1)

    def _gb(W):
        out = np.zeros_like(W)
        out[..., 1] = W[..., 2] - u0
        out[..., 2] = W[..., 1] - u0
        return out

    def _hb(W):
        return np.broadcast_to(_h, W.shape + (3,)).copy()

    obs = Observable(
        window=1,
        evaluate=_ev,
        grad=_grad,
        hess=lambda w: _h,
        value_tau=_vt,
        value_windows=lambda W: (W[..., 1] - u0) * (W[..., 2] - u0),
        grad_batch=_gb,
        hess_batch=_hb,
        name=f"pair(u0={u0:g})",
        validate=False,
    )
    obs.tilde_quadratic = lambda u: ((u - u0) ** 2, 2.0 * (u - u0), 2.0)
    return obs


def obs_square(u0: float = 0.0, var: float = 1.0) -> Observable:
    """f = (eta(0) - u0)^2 - var."""

    def _vt(states):
        return np.square(states - u0) - var

    def _gb(W):
        return 2.0 * (W - u0)

    obs = Observable(
        window=0,
        evaluate=lambda w: (w[0] - u0) ** 2 - var,
        grad=lambda w: np.array([2.0 * (w[0] - u0)]),
        hess=lambda w: np.array([[2.0]]),
        value_tau=_vt,
        grad_batch=_gb,
        hess_batch=lambda W: np.full(W.shape + (1,), 2.0),
        name=f"square(u0={u0:g},var={var:g})",
        validate=False,
    )
    obs.tilde_quadratic = lambda u: ((u - u0) ** 2 + 1.0 - var, 2.0 * (u - u0), 2.0)
    return obs


def obs_block_mean(ell: int) -> Observable:
    """f = mean of the 2*ell sites [-ell, ell-1] (asymmetric support)."""
    size = 2 * ell
    g = np.full(size, 1.0 / size)

    def _ev(w):
        out = w[0]
        for v in w[1:]:
            out = out + v
        return out * (1.0 / size)

    return Observable(
        window=0,
        offsets=np.arange(-ell, ell),
        evaluate=_ev,
        grad=lambda w: g.copy(),
        hess=lambda w: np.zeros((size, size)),
        value_windows=lambda W: np.asarray(W, dtype=float).mean(axis=-1),
        grad_batch=lambda W: np.broadcast_to(g, W.shape).copy(),
        hess_batch=lambda W: np.zeros(W.shape + (size,)),
        name=f"block_mean(ell={ell})",
        validate=False,
    )


OBSERVABLES = {
    "site": obs_site,
    "pair": obs_pair,
    "square": obs_square,
}


def make_observable(kind: str, u0: float = 0.0, **kwargs) -> Observable:
    """Look up a shipped observable family by id."""
    try:
        factory = OBSERVABLES[kind]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown observable {kind!r}; available: {sorted(OBSERVABLES)}"
        ) from None
    return factory(u0, **kwargs)
