"""Energy-dependent lattice operator ``M_L(E) - lambda A_L`` and band conditions."""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import special, stats

from .edge import (
    EdgeProfile,
    boundary_values,
    dirichlet_eigenvalues,
    dirichlet_guard,
)
from .errors import DirichletProximity
from .roots import refine_root

DENSE_LIMIT = 4096
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class LatticeSpec:
    """Z^d lattice whose edges in direction ``j`` carry ``edge_profiles[j]``."""

    dimension: int
    edge_profiles: tuple

    def __post_init__(self):
        object.__setattr__(self, "edge_profiles", tuple(self.edge_profiles))
        if not 1 <= self.dimension <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        if len(self.edge_profiles) != self.dimension:
            raise ValueError("need one edge profile per lattice direction")
        if not all(isinstance(p, EdgeProfile) for p in self.edge_profiles):
            raise TypeError("edge_profiles must be EdgeProfile instances")

    @classmethod
    def isotropic(cls, dimension, profile):
        return cls(dimension, (profile,) * dimension)

    def dirichlet_points(self, window):
        """Sorted Dirichlet eigenvalues of all edge directions inside ``window``."""
        pts = set()
        for p in self.edge_profiles:
            pts.update(dirichlet_eigenvalues(p, window))
        return sorted(pts)

    def to_dict(self):
        return {"dimension": self.dimension, "edges": [p.to_dict() for p in self.edge_profiles]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["dimension"]), tuple(EdgeProfile.from_dict(e) for e in d["edges"]))


@dataclass(frozen=True)
class HoppingCoefficients:
    energy: float
    a: float
    b: np.ndarray
    eta: np.ndarray
    phi_l: np.ndarray


def hopping_arrays(lattice, energies):
    """Unguarded ``(a, b, phi_l)`` for an array of energies; ``b`` has shape ``(n, d)``."""
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    b = np.empty((energies.size, lattice.dimension))
    phi = np.empty_like(b)
    a = np.zeros(energies.size)
    for j, prof in enumerate(lattice.edge_profiles):
        ph, dph, th, _ = boundary_values(prof, energies)
        with np.errstate(divide="ignore", invalid="ignore"):
            b[:, j] = 1.0 / ph
        a += (th + dph) * b[:, j]
        phi[:, j] = ph
    return a, b, phi


def hopping_coefficients(lattice, energy):
    """``a(E) = sum_j eta_j b_j`` and ``b_j(E) = 1 / phi_j(l_j; E)``."""
    energy = float(energy)
    b = np.empty(lattice.dimension)
    eta = np.empty(lattice.dimension)
    phi = np.empty(lattice.dimension)
    for j, prof in enumerate(lattice.edge_profiles):
        ph, dph, th, _ = boundary_values(prof, energy)
        if abs(ph) < dirichlet_guard(prof):
            raise DirichletProximity(energy, j, float(ph))
        phi[j] = ph
        b[j] = 1.0 / ph
        eta[j] = th + dph
    return HoppingCoefficients(energy, float(np.dot(eta, b)), b, eta, phi)


@dataclass(frozen=True)
class Box:
    """The cube ``{m in Z^d : max_j |m_j| <= radius}`` in lexicographic order."""

    radius: int
    dimension: int
    sites: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.radius < 0 or self.dimension < 1:
            raise ValueError("radius must be >= 0 and dimension >= 1")
        r = range(-self.radius, self.radius + 1)
        sites = np.array(list(itertools.product(r, repeat=self.dimension)), dtype=np.int64)
        object.__setattr__(self, "sites", sites.reshape(-1, self.dimension))

    def __len__(self):
        return len(self.sites)

    def index(self, site):
        m = np.asarray(site, dtype=np.int64)
        if m.shape != (self.dimension,) or np.max(np.abs(m)) > self.radius:
            raise KeyError(tuple(m))
        side = 2 * self.radius + 1
        return int(np.ravel_multi_index(tuple(m + self.radius), (side,) * self.dimension))

    def contains(self, site):
        return bool(np.max(np.abs(np.asarray(site))) <= self.radius)


def as_sites(region, dimension=None):
    """Integer ``(n, d)`` site array from a :class:`Box` or an array-like."""
    if isinstance(region, Box):
        return region.sites
    sites = np.asarray(region, dtype=np.int64)
    if sites.ndim == 1:
        sites = sites.reshape(-1, 1) if dimension in (None, 1) else sites.reshape(1, -1)
    if dimension is not None and sites.shape[1] != dimension:
        raise ValueError(f"sites must have {dimension} coordinates")
    if len({tuple(s) for s in sites}) != len(sites):
        raise ValueError("duplicate sites")
    return sites


def site_index(sites):
    return {tuple(int(x) for x in s): i for i, s in enumerate(sites)}


def neighbor_pairs(sites):
    """Per direction ``j``: index arrays ``(i, k)`` with ``sites[k] = sites[i] + h_j``."""
    idx = site_index(sites)
    out = []
    for j in range(sites.shape[1]):
        ii, kk = [], []
        for i, s in enumerate(sites):
            t = list(int(x) for x in s)
            t[j] += 1
            k = idx.get(tuple(t))
            if k is not None:
                ii.append(i)
                kk.append(k)
        out.append((np.array(ii, dtype=np.int64), np.array(kk, dtype=np.int64)))
    return out


def assemble(pairs, n, a, b, diagonal, sparse=None):
    """Matrix with ``b[j]`` on ``(m, m +- h_j)`` and ``-a - diagonal`` on the diagonal."""
    sparse = n > DENSE_LIMIT if sparse is None else sparse
    diag = -a - np.asarray(diagonal, dtype=float) * np.ones(n)
    if sparse:
        rows = [np.arange(n)]
        cols = [np.arange(n)]
        vals = [diag]
        for j, (i, k) in enumerate(pairs):
            rows += [i, k]
            cols += [k, i]
            vals += [np.full(len(i), b[j]), np.full(len(i), b[j])]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
    H = np.diag(diag)
    for j, (i, k) in enumerate(pairs):
        H[i, k] = b[j]
        H[k, i] = b[j]
    return H


@dataclass
class LatticeOperator:
    """``M_L(E) - lambda A_L`` on a finite site set."""

    sites: np.ndarray
    energy: float
    matrix: object
    disorder_sample: np.ndarray
    coupling: float
    hopping: HoppingCoefficients

    @property
    def size(self):
        return len(self.sites)

    def dense(self):
        return self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix


def build_operator(lattice, energy, region, disorder_sample, coupling, hopping=None):
    """Restriction of ``M(E) - coupling * diag(alpha)`` to the sites of ``region``."""
    sites = as_sites(region, lattice.dimension)
    alpha = np.asarray(disorder_sample, dtype=float)
    if alpha.shape != (len(sites),):
        raise ValueError("disorder sample must have one value per site")
    if hopping is None:
        hopping = hopping_coefficients(lattice, energy)
    pairs = neighbor_pairs(sites)
    M = assemble(pairs, len(sites), hopping.a, hopping.b, coupling * alpha)
    return LatticeOperator(sites, float(energy), M, alpha, float(coupling), hopping)


# ---------------------------------------------------------------- disorder


def _mix64(x):
    # splitmix64 finalizer on uint64 arrays (wrapping arithmetic)
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def counter_uniform(seed, sample_index, sites):
    """Uniform ``(0, 1)`` draws keyed by ``(seed, sample_index, site coordinates)``.

    ``sample_index`` may be an array; the result then has shape
    ``(len(sample_index), len(sites))``. Values depend only on the key, never
    on evaluation order or batching.
    """
    sites = np.asarray(sites, dtype=np.int64)
    scalar = np.ndim(sample_index) == 0
    samples = np.atleast_1d(np.asarray(sample_index, dtype=np.int64)).astype(np.uint64)
    golden = np.uint64(0x9E3779B97F4A7C15)
    with np.errstate(over="ignore"):
        h = _mix64(np.uint64(int(seed) & _MASK64) + golden)
        h = _mix64(h ^ (samples * golden + np.uint64(0x632BE59BD9B4E019)))[:, None]
        for k in range(sites.shape[1]):
            c = sites[:, k]
            zz = ((c << 1) ^ (c >> 63)).astype(np.uint64)  # zigzag keeps negatives distinct
            h = _mix64(h + zz[None, :] * golden + np.uint64(k + 1))
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return u[0] if scalar else u


@dataclass(frozen=True)
class DisorderModel:
    """I.i.d. coupling constants with density ``rho`` on ``[low, high]``.

    ``density`` is ``"uniform"`` or ``"truncated_gaussian"`` (with ``mean``
    and ``std`` of the underlying normal law). ``low == high`` gives a
    deterministic (degenerate) model, useful as a reference but not a bounded
    density.
    """

    low: float
    high: float
    coupling: float = 1.0
    density: str = "uniform"
    mean: float = 0.0
    std: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise ValueError("need finite low <= high")
        if self.coupling < 0:
            raise ValueError("coupling must be nonnegative")
        if self.density not in ("uniform", "truncated_gaussian"):
            raise ValueError(f"unknown density {self.density!r}")
        if self.density == "truncated_gaussian" and not self.std > 0:
            raise ValueError("std must be positive")
        if not 0 <= int(self.master_seed) <= _MASK64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def support(self):
        return self.low, self.high

    @property
    def is_degenerate(self):
        return self.low == self.high

    def _trunc(self):
        a = (self.low - self.mean) / self.std
        b = (self.high - self.mean) / self.std
        return stats.truncnorm(a, b, loc=self.mean, scale=self.std)

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_degenerate:
            return np.where(v == self.low, np.inf, 0.0)
        inside = (v >= self.low) & (v <= self.high)
        if self.density == "uniform":
            return np.where(inside, 1.0 / (self.high - self.low), 0.0)
        return np.where(inside, self._trunc().pdf(v), 0.0)

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_degenerate:
            return np.where(v >= self.low, 1.0, 0.0)
        if self.density == "uniform":
            return np.clip((v - self.low) / (self.high - self.low), 0.0, 1.0)
        return self._trunc().cdf(v)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.is_degenerate:
            return np.full(u.shape, self.low)
        if self.density == "uniform":
            return self.low + (self.high - self.low) * u
        a = (self.low - self.mean) / self.std
        b = (self.high - self.mean) / self.std
        # inverse CDF of the truncated normal, clipped against round-off
        pa, pb = special.ndtr(a), special.ndtr(b)
        x = self.mean + self.std * special.ndtri(pa + u * (pb - pa))
        return np.clip(x, self.low, self.high)

    @property
    def sup_density(self):
        if self.is_degenerate:
            return math.inf
        if self.density == "uniform":
            return 1.0 / (self.high - self.low)
        peak = min(max(self.mean, self.low), self.high)
        return float(self._trunc().pdf(peak))

    def total_mass(self):
        if self.is_degenerate:
            return 1.0
        return float(self.cdf(self.high) - self.cdf(self.low))

    def require_bounded_density(self):
        if not math.isfinite(self.sup_density):
            raise ValueError("disorder law has no bounded density (point mass)")

    def with_coupling(self, coupling):
        return DisorderModel(
            self.low, self.high, coupling, self.density, self.mean, self.std, self.master_seed
        )

    def to_dict(self):
        d = {"density": self.density, "low": self.low, "high": self.high,
             "coupling": self.coupling, "master_seed": int(self.master_seed)}
        if self.density == "truncated_gaussian":
            d.update(mean=self.mean, std=self.std)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["low"]), float(d["high"]), float(d.get("coupling", 1.0)),
            d.get("density", "uniform"), float(d.get("mean", 0.0)), float(d.get("std", 1.0)),
            int(d.get("master_seed", 0)),
        )


def sample_disorder(model, region, sample_index, dimension=None):
    """``alpha_omega(m)`` for every site of ``region``.

    Each value is a deterministic function of ``(master_seed, sample_index,
    m)``, so boxes of different size share values on common sites. An array
    of sample indices returns one row per index.
    """
    sites = as_sites(region, dimension)
    return model.ppf(counter_uniform(model.master_seed, sample_index, sites))


# ---------------------------------------------------------------- bands


def band_factors(lattice, model, energies):
    """``(2 sum|b| - a - lam alpha_-, 2 sum|b| + a + lam alpha_+)`` on an energy grid."""
    a, b, _ = hopping_arrays(lattice, energies)
    s = 2.0 * np.sum(np.abs(b), axis=1)
    lam = model.coupling
    return s - a - lam * model.low, s + a + lam * model.high


def band_indicator(lattice, model, energy):
    """Whether ``energy`` satisfies the almost-sure spectrum condition."""
    h = hopping_coefficients(lattice, energy)
    s = 2.0 * np.sum(np.abs(h.b))
    lam = model.coupling
    return bool((s - h.a - lam * model.low) * (s + h.a + lam * model.high) >= 0)


def dirichlet_windows(lattice, window):
    """Guard intervals ``{E : |phi_j(l_j; E)| < guard}`` meeting ``window``."""
    out = []
    for prof in lattice.edge_profiles:
        g = dirichlet_guard(prof)
        f = lambda e: abs(float(boundary_values(prof, e)[0])) - g
        for r in dirichlet_eigenvalues(prof, window):
            ends = []
            for sign in (-1.0, 1.0):
                step = 1e-12 * max(1.0, abs(r))
                while f(r + sign * step) < 0:
                    step *= 2.0
                x0, x1 = sorted((r + sign * step / 2, r + sign * step))
                tol = 1e-14 * max(1.0, abs(r))
                ends.append(refine_root(f, x0, x1, xtol=tol, bisect_width=tol))
            out.append((ends[0], ends[1]))
    out.sort()
    merged = []
    for lo, hi in out:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
        else:
            merged.append((lo, hi))
    return merged


@dataclass
class BandScan:
    """Result of a band scan: bands, unclassified Dirichlet windows and the grid."""

    window: tuple
    bands: list
    dirichlet_windows: list
    energies: np.ndarray
    indicator: np.ndarray
    lower_factor: np.ndarray
    upper_factor: np.ndarray
    in_dirichlet_window: np.ndarray

    def rows(self):
        for k in range(len(self.energies)):
            yield (
                self.energies[k],
                int(self.indicator[k]),
                self.lower_factor[k],
                self.upper_factor[k],
                int(self.in_dirichlet_window[k]),
            )


def _segments(window, holes):
    lo, hi = window
    segs, cur = [], lo
    for a, b in holes:
        if b <= lo or a >= hi:
            continue
        if a > cur:
            segs.append((cur, a))
        cur = max(cur, b)
    if cur < hi:
        segs.append((cur, hi))
    return segs


def band_edges(lattice, model, window, resolution=1e-3, tol=1e-8):
    """Closed intervals of ``window`` where :func:`band_indicator` holds.

    Dirichlet guard windows are excluded and reported separately; bands end
    at their boundary rather than being continued through them.
    """
    lo, hi = map(float, window)
    holes = dirichlet_windows(lattice, (lo, hi))
    n = max(2, int(math.ceil((hi - lo) / resolution)) + 1)
    grid = np.linspace(lo, hi, n)
    in_hole = np.zeros(n, dtype=bool)
    for a, b in holes:
        in_hole |= (grid >= a) & (grid <= b)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower, upper = band_factors(lattice, model, grid)
    lower = np.where(in_hole, np.nan, lower)
    upper = np.where(in_hole, np.nan, upper)
    ind = np.where(in_hole, -1, (lower * upper >= 0).astype(int))

    def product(e):
        lf, uf = band_factors(lattice, model, [e])
        return float(lf[0] * uf[0])

    bands = []
    for a, b in _segments((lo, hi), holes):
        xs = np.concatenate([[a], grid[(grid > a) & (grid < b)], [b]])
        ps = np.array([product(x) for x in (a, b)])
        ps = np.concatenate([[ps[0]], (lower * upper)[(grid > a) & (grid < b)], [ps[1]]])
        inside = ps >= 0
        start = xs[0] if inside[0] else None
        for i in range(len(xs) - 1):
            if inside[i] == inside[i + 1]:
                continue
            if ps[i] == 0.0 or ps[i + 1] == 0.0:
                x = xs[i] if ps[i] == 0.0 else xs[i + 1]
            else:
                x = refine_root(product, xs[i], xs[i + 1], ps[i], ps[i + 1], xtol=tol)
            if inside[i]:
                bands.append((float(start), float(x)))
                start = None
            else:
                start = x
        if start is not None:
            bands.append((float(start), float(xs[-1])))
    return BandScan((lo, hi), bands, holes, grid, ind, lower, upper, in_hole)
