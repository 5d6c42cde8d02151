"""Piecewise expanding Markov interval maps with roof and potential data.

A system is a finite partition 0 = a_0 < ... < a_m = 1 of the unit
interval, one monotone expanding branch per element mapping it onto a
union of consecutive elements, and per-element roof and potential
expressions.  Elements are taken left-closed: [a_i, a_{i+1}).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, compile_expr, differentiate, parse

__all__ = [
    "Branch", "MarkovSystem", "Cylinder", "ValidationReport",
    "NotMarkovError", "NotExpandingError", "NotCoveringError",
    "RoofBoundsError", "CapExceededError", "system_from_config",
    "validate", "cylinders", "branch_chain", "birkhoff_sum",
]


class NotMarkovError(ValueError):
    pass


class NotExpandingError(ValueError):
    pass


class NotCoveringError(ValueError):
    pass


class RoofBoundsError(ValueError):
    pass


class CapExceededError(RuntimeError):
    pass


@dataclass(frozen=True)
class Branch:
    expr: Expr
    image: tuple[int, int]  # half-open range of partition element indices


@dataclass(frozen=True)
class Cylinder:
    """Depth-n cylinder: the set of x whose first n symbols match ``word``."""
    word: tuple[int, ...]
    left: float
    right: float

    @property
    def depth(self) -> int:
        return len(self.word)

    @property
    def diam(self) -> float:
        return self.right - self.left

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.left + self.right)


@dataclass
class ValidationReport:
    expansion: float          # lam: inf |T'|
    rho: float                # sup |T'|
    c2: float                 # distortion constant of inverse branch derivatives
    c4: float                 # sup |D(r o h)| over inverse branches h
    roof_inf: float
    roof_sup: float
    markov_residual: float    # worst endpoint mismatch of branch images
    covering_power: int       # least k with all-positive transition matrix power
    ok: bool = True
    messages: list[str] = field(default_factory=list)


class MarkovSystem:
    """Markov map with roof and potential; all pieces given as expressions."""

    def __init__(self, partition, branches, roof, potential, alpha=1.0):
        self.partition = np.asarray(partition, dtype=float)
        if self.partition.ndim != 1 or len(self.partition) < 2:
            raise NotMarkovError("partition needs at least two breakpoints")
        if abs(self.partition[0]) > 1e-12 or abs(self.partition[-1] - 1.0) > 1e-12:
            raise NotMarkovError("partition must span [0, 1]")
        if np.any(np.diff(self.partition) <= 0):
            raise NotMarkovError("partition breakpoints must be strictly increasing")
        self.m = len(self.partition) - 1
        if len(branches) != self.m or len(roof) != self.m or len(potential) != self.m:
            raise NotMarkovError("need one branch, roof and potential per element")
        self.branches = list(branches)
        self.roof = list(roof)
        self.potential = list(potential)
        self.alpha = float(alpha)
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must lie in (0, 1]")

        for b in self.branches:
            lo, hi = b.image
            if not (0 <= lo < hi <= self.m):
                raise NotMarkovError(f"branch image range {b.image} out of bounds")

        # compiled branch maps and derivatives
        self._T = [compile_expr(b.expr) for b in self.branches]
        self._dT = [compile_expr(differentiate(b.expr)) for b in self.branches]
        self._r = [compile_expr(e) for e in self.roof]
        self._dr = [compile_expr(differentiate(e)) for e in self.roof]
        self._phi = [compile_expr(e) for e in self.potential]

        # transition[i, j]: symbol j may follow symbol i
        self.transition = np.zeros((self.m, self.m), dtype=bool)
        for i, b in enumerate(self.branches):
            self.transition[i, b.image[0]:b.image[1]] = True

        # orientation of each branch, from the derivative at the midpoint
        mids = 0.5 * (self.partition[:-1] + self.partition[1:])
        self.increasing = np.array(
            [float(self._dT[i](x=mids[i])) > 0 for i in range(self.m)])

    # -- pointwise structure ------------------------------------------------

    def element_of(self, x):
        """Index of the partition element containing x (left-closed)."""
        idx = np.searchsorted(self.partition, x, side="right") - 1
        return np.clip(idx, 0, self.m - 1)

    def element_interval(self, i: int) -> tuple[float, float]:
        return float(self.partition[i]), float(self.partition[i + 1])

    def image_interval(self, i: int) -> tuple[float, float]:
        lo, hi = self.branches[i].image
        return float(self.partition[lo]), float(self.partition[hi])

    def _piecewise(self, fns, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        idx = self.element_of(x)
        for i in range(self.m):
            mask = idx == i
            if np.any(mask):
                out[mask] = fns[i](x=x[mask])
        return out

    def apply_T(self, x):
        return self._piecewise(self._T, x)

    def d_T(self, x):
        return self._piecewise(self._dT, x)

    def roof_at(self, x):
        return self._piecewise(self._r, x)

    def d_roof_at(self, x):
        return self._piecewise(self._dr, x)

    def potential_at(self, x):
        return self._piecewise(self._phi, x)

    # -- inverse branches ---------------------------------------------------

    def inverse_branch(self, i: int, y):
        """Solve T_i(z) = y on element i; safeguarded Newton, |residual| tol 1e-13.

        y must lie in the closed image interval of branch i.
        """
        a, b = self.element_interval(i)
        y = np.asarray(y, dtype=float)
        lo = np.full(y.shape, a)
        hi = np.full(y.shape, b)
        z = np.full(y.shape, 0.5 * (a + b))
        T, dT = self._T[i], self._dT[i]
        sign = 1.0 if self.increasing[i] else -1.0
        for _ in range(200):
            f = T(x=z) - y
            if np.all(np.abs(f) < 1e-13):
                break
            fs = f * sign
            lo = np.where(fs <= 0, z, lo)
            hi = np.where(fs > 0, z, hi)
            zn = z - f / (dT(x=z) + 0.0 * z)
            zn = np.where((zn < lo) | (zn > hi), 0.5 * (lo + hi), zn)
            z = zn
        return np.clip(z, a, b)

    def admissible_branches(self, x):
        """Branch indices i with element_of(x) in the image range of branch i."""
        e = int(self.element_of(float(x)))
        return [i for i in range(self.m) if self.transition[i, e]]

    # -- serialization ------------------------------------------------------

    def to_config(self) -> dict:
        return {
            "partition": [float(a) for a in self.partition],
            "branches": [
                {"expr": str(b.expr), "image": [b.image[0], b.image[1]]}
                for b in self.branches
            ],
            "roof": [str(e) for e in self.roof],
            "potential": [str(e) for e in self.potential],
            "alpha": self.alpha,
        }


def system_from_config(cfg: dict) -> MarkovSystem:
    """Build a system from the JSON config layout (see README)."""
    if isinstance(cfg, str):
        cfg = json.loads(cfg)
    known = {"partition", "branches", "roof", "potential", "alpha"}
    extra = set(cfg) - known
    if extra:
        raise NotMarkovError(f"unknown system config keys: {sorted(extra)}")
    branches = [
        Branch(parse(b["expr"]), (int(b["image"][0]), int(b["image"][1])))
        for b in cfg["branches"]
    ]
    roof = [parse(s) for s in cfg["roof"]]
    potential = [parse(s) for s in cfg["potential"]]
    return MarkovSystem(cfg["partition"], branches, roof, potential,
                        alpha=cfg.get("alpha", 1.0))


# -- validation ---------------------------------------------------------------


def validate(sys: MarkovSystem, grid: int = 2048, raise_on_fail: bool = True
             ) -> ValidationReport:
    """Check the standing hypotheses on a per-element grid.

    Verifies: expansion inf|T'| > 1, branch monotonicity, Markov property
    (branch endpoints land on breakpoints of the declared image), covering
    (some power of the transition matrix is strictly positive), roof bounds
    0 < inf r <= sup r <= 1, and estimates the distortion constant of
    inverse-branch derivatives and sup |D(r o h)|.
    """
    msgs: list[str] = []
    lam = np.inf
    rho = 0.0
    c4 = 0.0
    r_inf, r_sup = np.inf, -np.inf
    markov_res = 0.0

    for i in range(sys.m):
        a, b = sys.element_interval(i)
        xs = np.linspace(a, b, grid)
        dT = sys._dT[i](x=xs) + np.zeros_like(xs)
        if np.any(dT > 0) and np.any(dT < 0):
            raise NotExpandingError(f"branch {i} is not monotone")
        absdT = np.abs(dT)
        lam = min(lam, float(absdT.min()))
        rho = max(rho, float(absdT.max()))
        dr = sys._dr[i](x=xs) + np.zeros_like(xs)
        c4 = max(c4, float(np.max(np.abs(dr) / absdT)))
        r = sys._r[i](x=xs) + np.zeros_like(xs)
        r_inf = min(r_inf, float(r.min()))
        r_sup = max(r_sup, float(r.max()))
        # Markov endpoints: closure of T(element) must be the closure of the
        # declared image interval
        lo, hi = sys.image_interval(i)
        ta, tb = float(sys._T[i](x=a)), float(sys._T[i](x=b))
        t0, t1 = min(ta, tb), max(ta, tb)
        markov_res = max(markov_res, abs(t0 - lo), abs(t1 - hi))

    def fail(exc, msg):
        if raise_on_fail:
            raise exc(msg)
        msgs.append(msg)

    if lam <= 1.0:
        fail(NotExpandingError, f"inf |T'| = {lam} <= 1")
    if markov_res > 1e-9:
        fail(NotMarkovError,
             f"branch images miss declared breakpoints by {markov_res:.3e}")
    if not (r_inf > 0 and r_sup <= 1.0 + 1e-12):
        fail(RoofBoundsError, f"roof range [{r_inf}, {r_sup}] outside (0, 1]")

    # covering: some power of the transition matrix is strictly positive
    power = 0
    A = np.eye(sys.m, dtype=bool)
    for k in range(1, 2 * sys.m * sys.m + 1):
        A = (A.astype(int) @ sys.transition.astype(int)) > 0
        if A.all():
            power = k
            break
    if power == 0:
        fail(NotCoveringError,
             "transition matrix has no strictly positive power")

    # distortion of inverse-branch derivatives at small depths:
    # sup |Dh_n(x) - Dh_n(y)| / (|Dh_n(x)| d(x,y)^alpha)
    c2 = 0.0
    for depth in (1, 2, 3):
        for cyl in cylinders(sys, depth):
            dom = _domain_interval(sys, cyl.word)
            ys = np.linspace(dom[0], dom[1], 64)
            ch = branch_chain(sys, cyl.word, ys)
            dh = 1.0 / ch["dTn"]
            d = np.abs(dh[:, None] - dh[None, :])
            scale = np.abs(dh)[:, None] * np.abs(ys[:, None] - ys[None, :]) ** sys.alpha
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(scale > 0, d / scale, 0.0)
            c2 = max(c2, float(np.nanmax(q)))

    return ValidationReport(
        expansion=lam, rho=rho, c2=c2, c4=c4,
        roof_inf=r_inf, roof_sup=r_sup,
        markov_residual=markov_res, covering_power=power,
        ok=not msgs, messages=msgs,
    )


# -- cylinders and branch chains ----------------------------------------------


def _count_words(sys: MarkovSystem, n: int) -> int:
    counts = np.ones(sys.m, dtype=np.int64)
    for _ in range(n - 1):
        counts = sys.transition.astype(np.int64) @ counts
    return int(counts.sum())


def admissible_words(sys: MarkovSystem, n: int, cap: int = 2_000_000
                     ) -> list[tuple[int, ...]]:
    if n < 1:
        raise ValueError("depth must be >= 1")
    total = _count_words(sys, n)
    if total > cap:
        raise CapExceededError(f"{total} depth-{n} cylinders exceed cap {cap}")
    words: list[tuple[int, ...]] = [(i,) for i in range(sys.m)]
    for _ in range(n - 1):
        words = [w + (j,) for w in words for j in range(sys.m)
                 if sys.transition[w[-1], j]]
    return words


def _domain_interval(sys: MarkovSystem, word: tuple[int, ...]) -> tuple[float, float]:
    """Domain of the inverse branch h_word, i.e. closure of T^n(cylinder)."""
    return sys.image_interval(word[-1])


def branch_chain(sys: MarkovSystem, word: tuple[int, ...], y) -> dict:
    """Pull y back along the inverse branch of ``word`` and accumulate orbit data.

    Returns x = h_word(y), the orbit points z_j = T^j x, and the forward
    quantities needed everywhere: DT^n(x), S_n r, S_n phi, D(S_n r)(x),
    and D(S_n r o h)(y) = D(S_n r)(x) / DT^n(x).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = len(word)
    z = [None] * (n + 1)
    z[n] = y
    for j in range(n - 1, -1, -1):
        z[j] = sys.inverse_branch(word[j], z[j + 1])

    dTn = np.ones_like(y)
    dTj = np.ones_like(y)   # DT^j(x), running
    snr = np.zeros_like(y)
    snphi = np.zeros_like(y)
    dsnr = np.zeros_like(y)
    for j in range(n):
        i = word[j]
        zj = z[j]
        dsnr = dsnr + (sys._dr[i](x=zj) + np.zeros_like(y)) * dTj
        snr = snr + sys._r[i](x=zj)
        snphi = snphi + sys._phi[i](x=zj)
        dt = sys._dT[i](x=zj) + np.zeros_like(y)
        dTj = dTj * dt
        dTn = dTn * dt
    return {
        "x": z[0], "orbit": z[:n], "dTn": dTn, "Snr": snr, "Snphi": snphi,
        "DSnr": dsnr, "DSnr_h": dsnr / dTn,
    }


def cylinders(sys: MarkovSystem, n: int, cap: int = 2_000_000) -> list[Cylinder]:
    """All depth-n cylinders, sorted by left endpoint.

    Built by prepending symbols: [iw] = h_i([w]), so each level costs one
    vectorised branch inversion per symbol over all suffix endpoints.
    """
    if n < 1:
        raise ValueError("depth must be >= 1")
    if _count_words(sys, n) > cap:
        raise CapExceededError(f"too many depth-{n} cylinders for cap {cap}")
    cur = {(i,): sys.element_interval(i) for i in range(sys.m)}
    for _ in range(n - 1):
        new = {}
        for i in range(sys.m):
            words = [w for w in cur if sys.transition[i, w[0]]]
            if not words:
                continue
            ends = np.array([e for w in words for e in cur[w]])
            z = sys.inverse_branch(i, ends)
            for k, w in enumerate(words):
                lo, hi = z[2 * k], z[2 * k + 1]
                new[(i,) + w] = (float(min(lo, hi)), float(max(lo, hi)))
        cur = new
    out = [Cylinder(w, lo, hi) for w, (lo, hi) in cur.items()]
    out.sort(key=lambda c: (c.left, c.word))
    return out


def cylinder_of(sys: MarkovSystem, x: float, n: int) -> tuple[int, ...]:
    """Itinerary of x over n steps (symbols of the orbit's elements)."""
    word = []
    z = float(x)
    for _ in range(n):
        word.append(int(sys.element_of(z)))
        z = float(sys.apply_T(np.array([z]))[0])
    return tuple(word)


def itineraries(sys: MarkovSystem, x, n: int) -> np.ndarray:
    """(len(x), n) array of symbol sequences along forward orbits."""
    z = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    out = np.empty((len(z), n), dtype=int)
    for j in range(n):
        out[:, j] = sys.element_of(z)
        if j < n - 1:
            z = sys.apply_T(z)
            z = np.where(z >= 1.0, np.nextafter(1.0, 0.0), np.maximum(z, 0.0))
    return out


def birkhoff_sum(sys: MarkovSystem, which: str, x, n: int):
    """S_n g(x) for g the roof or the potential, along the forward orbit.

    Orbit points landing within 1e-13 of a breakpoint are nudged into the
    element interior to keep the itinerary well defined.
    """
    fns = sys._r if which == "roof" else sys._phi
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = np.zeros_like(x)
    z = x.copy()
    for _ in range(n):
        near = np.abs(z[:, None] - sys.partition[None, :]).min(axis=1) < 1e-13
        z = np.where(near, z + 1e-12, z)
        total = total + sys._piecewise(fns, z)
        z = sys.apply_T(z)
        z = np.where(z >= 1.0, np.nextafter(1.0, 0.0), np.maximum(z, 0.0))
    return total if total.size > 1 else float(total[0])
