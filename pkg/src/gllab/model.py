"""Lattice geometry, tilt/height configurations, energies and block averages.

Torus sites carry labels 1..N; internally storage is 0-based with position
i holding site i+1, and all index arithmetic is cyclic.  Block fields live
on the 2*ell-site window [-ell, ell-1], position i holding site i-ell.
Every type here is an immutable value object: operations return new fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

_DERIV_CHECK_GRID = np.arange(-10.0, 10.0 + 1e-12, 1e-2)


@dataclass(frozen=True)
class Potential:
    """Single-bond energy with two-sided curvature bounds.

    ``v``, ``dv``, ``ddv`` must be vectorized callables (accept and return
    ndarrays).  Construction checks c_minus <= v'' <= c_plus on a dense grid
    and cross-checks dv, ddv against central differences of v, dv at relative
    tolerance 1e-6.
    """

    v: callable
    dv: callable
    ddv: callable
    c_minus: float
    c_plus: float
    is_quadratic: bool = False
    name: str = "custom"

    def __post_init__(self):
        if not (0.0 < self.c_minus <= self.c_plus < np.inf):
            raise InvalidArgumentError("need 0 < c_minus <= c_plus < inf")
        z = _DERIV_CHECK_GRID
        curv = np.asarray(self.ddv(z), dtype=float)
        if curv.min() < self.c_minus - 1e-9 or curv.max() > self.c_plus + 1e-9:
            raise InvalidArgumentError(
                "v'' leaves [c_minus, c_plus] on the check grid: "
                f"range [{curv.min():.6g}, {curv.max():.6g}]"
            )
        h = 1e-5
        fd1 = (np.asarray(self.v(z + h)) - np.asarray(self.v(z - h))) / (2 * h)
        fd2 = (np.asarray(self.dv(z + h)) - np.asarray(self.dv(z - h))) / (2 * h)
        d1 = np.asarray(self.dv(z), dtype=float)
        if not np.allclose(fd1, d1, rtol=1e-6, atol=1e-8):
            raise InvalidArgumentError("dv is not the derivative of v")
        if not np.allclose(fd2, curv, rtol=1e-6, atol=1e-8):
            raise InvalidArgumentError("ddv is not the derivative of dv")

    @classmethod
    def quadratic(cls) -> "Potential":
        """v(z) = z^2/2, the exactly solvable Gaussian case."""
        return cls(
            v=lambda z: 0.5 * np.square(z),
            dv=lambda z: np.asarray(z, dtype=float),
            ddv=lambda z: np.ones_like(np.asarray(z, dtype=float)),
            c_minus=1.0,
            c_plus=1.0,
            is_quadratic=True,
            name="quadratic",
        )

    @classmethod
    def quadratic_cosine(cls, eps: float = 0.1) -> "Potential":
        """v(z) = z^2/2 + eps*cos(z); uniformly convex for eps < 1."""
        if not 0 <= eps < 1:
            raise InvalidArgumentError("need 0 <= eps < 1 for convexity")
        return cls(
            v=lambda z: 0.5 * np.square(z) + eps * np.cos(z),
            dv=lambda z: np.asarray(z, dtype=float) - eps * np.sin(z),
            ddv=lambda z: 1.0 - eps * np.cos(z),
            c_minus=1.0 - eps,
            c_plus=1.0 + eps,
            is_quadratic=False,
            name=f"quadratic_cosine_{eps:g}",
        )


@dataclass(frozen=True)
class Asymmetry:
    """Drift asymmetry strength; p = 1/2 + gamma, q = 1/2 - gamma.

    One of p, q is derived as 1 minus the other (Sterbenz-exact), so
    p + q == 1 holds exactly in floating point for every gamma.
    """

    gamma: float
    p: float = field(init=False)
    q: float = field(init=False)

    def __post_init__(self):
        g = float(self.gamma)
        if g >= 0:
            p = 0.5 + g
            q = 1.0 - p
        else:
            q = 0.5 - g
            p = 1.0 - q
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def is_symmetric(self) -> bool:
        return self.gamma == 0.0


def _freeze(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


class TorusField:
    """Tilt configuration on the N-site torus (sites 1..N, cyclic)."""

    __slots__ = ("N", "_values")

    def __init__(self, values):
        arr = _freeze(values)
        if arr.ndim != 1 or arr.size < 2:
            raise InvalidArgumentError("torus field needs a 1-d array, N >= 2")
        self.N = int(arr.size)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        """Read-only array; position i holds site i+1."""
        return self._values

    @property
    def m(self) -> float:
        """Conserved mean, recomputed on access."""
        return float(self._values.mean())

    def site(self, x: int) -> float:
        """Value at site x, any integer (cyclic)."""
        return float(self._values[(int(x) - 1) % self.N])

    def shift(self, k: int) -> "TorusField":
        """Shifted field (tau_k eta)(x) = eta(x + k)."""
        return TorusField(np.roll(self._values, -int(k)))

    def to_json(self) -> str:
        return json.dumps({"N": self.N, "m": self.m, "values": self._values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "TorusField":
        obj = json.loads(text)
        f = cls(obj["values"])
        if f.N != obj["N"]:
            raise InvalidArgumentError("inconsistent N in serialized field")
        return f

    def __repr__(self):
        return f"TorusField(N={self.N}, m={self.m:.6g})"


class LocalField:
    """Configuration on the block [-ell, ell-1] of 2*ell sites, no wrap."""

    __slots__ = ("ell", "_values")

    def __init__(self, values):
        arr = _freeze(values)
        if arr.ndim != 1 or arr.size < 2 or arr.size % 2:
            raise InvalidArgumentError("local field needs 2*ell values, ell >= 1")
        self.ell = int(arr.size // 2)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        """Read-only array; position i holds site i-ell."""
        return self._values

    @property
    def m(self) -> float:
        return float(self._values.mean())

    def site(self, x: int) -> float:
        x = int(x)
        if not -self.ell <= x <= self.ell - 1:
            raise InvalidArgumentError(f"site {x} outside [-{self.ell}, {self.ell - 1}]")
        return float(self._values[x + self.ell])

    def to_json(self) -> str:
        return json.dumps(
            {"N": 2 * self.ell, "ell": self.ell, "m": self.m, "values": self._values.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "LocalField":
        obj = json.loads(text)
        f = cls(obj["values"])
        if f.ell != obj["ell"]:
            raise InvalidArgumentError("inconsistent ell in serialized field")
        return f

    def __repr__(self):
        return f"LocalField(ell={self.ell}, m={self.m:.6g})"


class HeightField:
    """Interface heights phi(1..N) with extension phi(x+N) = phi(x) + N*m."""

    __slots__ = ("N", "m", "_values")

    def __init__(self, values, m: float):
        arr = _freeze(values)
        if arr.ndim != 1 or arr.size < 2:
            raise InvalidArgumentError("height field needs a 1-d array, N >= 2")
        self.N = int(arr.size)
        self.m = float(m)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        """Heights at sites 1..N; use site() for extended labels."""
        return self._values

    def site(self, x: int) -> float:
        """phi(x) for any integer x via the winding extension rule."""
        x = int(x)
        wind, pos = divmod(x - 1, self.N)
        return float(self._values[pos] + self.N * self.m * wind)

    def to_json(self) -> str:
        return json.dumps({"N": self.N, "m": self.m, "values": self._values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "HeightField":
        obj = json.loads(text)
        return cls(obj["values"], obj["m"])

    def __repr__(self):
        return f"HeightField(N={self.N}, m={self.m:.6g})"


def eta_from_phi(phi: HeightField) -> TorusField:
    """Tilt variables eta(x) = phi(x+1) - phi(x), x = 1..N."""
    base = phi.values
    out = np.empty(phi.N)
    out[:-1] = base[1:] - base[:-1]
    out[-1] = (base[0] + phi.N * phi.m) - base[-1]
    return TorusField(out)


def phi_from_eta(eta: TorusField, phi0: float) -> HeightField:
    """Heights from tilts: phi(1) = phi0, phi(x+1) = phi(x) + eta(x)."""
    out = np.empty(eta.N)
    out[0] = phi0
    out[1:] = phi0 + np.cumsum(eta.values[:-1])
    return HeightField(out, eta.m)


def hamiltonian_phi(phi: HeightField, pot: Potential) -> float:
    """Sum of bond energies V(phi(x+1) - phi(x)) around the torus."""
    return hamiltonian_eta(eta_from_phi(phi), pot)


def hamiltonian_eta(eta, pot: Potential) -> float:
    """Sum of single-site energies V(eta(x))."""
    return float(np.sum(pot.v(eta.values)))


def block_average(fld, x: int, ell: int) -> float:
    """Mean of the 2*ell sites [x-ell, x+ell-1] around x.

    Cyclic on the torus (requires 2*ell <= N); a local field only supports
    its own full block (x=0, ell=field.ell).
    """
    ell = int(ell)
    if ell < 1:
        raise InvalidArgumentError("ell >= 1 required")
    if isinstance(fld, LocalField):
        if x != 0 or ell != fld.ell:
            raise InvalidArgumentError("local fields only average their own block")
        return fld.m
    if 2 * ell > fld.N:
        raise InvalidArgumentError(f"block 2*ell={2 * ell} exceeds torus N={fld.N}")
    pos = (np.arange(x - ell, x + ell) - 1) % fld.N
    return float(fld.values[pos].mean())


def block_average_all(values: np.ndarray, ell: int) -> np.ndarray:
    """Block averages at every torus site, vectorized.

    ``values`` has sites along the last axis; returns an array of the same
    shape where entry x (0-based position) is the mean over the cyclic
    window [x-ell, x+ell-1] in 0-based positions, matching
    ``block_average(field, x+1, ell)``.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if 2 * ell > n:
        raise InvalidArgumentError(f"block 2*ell={2 * ell} exceeds torus N={n}")
    pad = np.concatenate([values, values[..., : 2 * ell]], axis=-1)
    csum = np.cumsum(pad, axis=-1)
    starts = (np.arange(n) - ell) % n
    ends = starts + 2 * ell - 1
    prefix = np.where(starts > 0, csum[..., starts - 1], 0.0)
    return (csum[..., ends] - prefix) / (2.0 * ell)


def grad(g, cyclic: bool = True) -> np.ndarray:
    """Forward difference (grad g)(x) = g(x+1) - g(x)."""
    g = np.asarray(g, dtype=float)
    if cyclic:
        return np.roll(g, -1) - g
    return g[1:] - g[:-1]


def grad_star(g, cyclic: bool = True) -> np.ndarray:
    """Backward difference (grad* g)(x) = g(x-1) - g(x).

    Off the torus this is only defined away from the lower edge, so the
    non-cyclic result drops the first site.
    """
    g = np.asarray(g, dtype=float)
    if cyclic:
        return np.roll(g, 1) - g
    return g[:-1] - g[1:]
