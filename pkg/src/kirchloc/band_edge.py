"""Band-edge diagnostics: edge detection, integrated density of states, Lifshitz tails.

All eigenvalue work happens on the edge-shifted operator
``M_L(E0) - lambda A_L - m_-(E0)``, whose spectrum starts at 0 or above.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import linregress

from .errors import ConditioningFailure, InsufficientData
from .lattice import (
    Box,
    _segments,
    assemble,
    dirichlet_windows,
    hopping_arrays,
    hopping_coefficients,
    neighbor_pairs,
    sample_disorder,
)
from .parallel import ordered_map
from .roots import refine_root, sign_changes


def band_ends(lattice, model, energies):
    """``(m_-(E), m_+(E))``, the ends of the almost-sure spectrum of ``M(E) - lambda A``."""
    a, b, _ = hopping_arrays(lattice, energies)
    s = 2.0 * np.sum(np.abs(b), axis=1)
    lam = model.coupling
    return -s - a - lam * model.high, s - a - lam * model.low


@dataclass
class EdgeReport:
    energies: np.ndarray
    m_minus: np.ndarray
    m_plus: np.ndarray
    edges: list
    factors: list
    dirichlet_windows: list

    def rows(self):
        for e, lo, hi in zip(self.energies, self.m_minus, self.m_plus):
            yield e, lo, hi


def detect_edges(lattice, model, window, resolution=1e-3, tol=1e-8):
    """Energies in ``window`` where ``m_- * m_+`` changes sign.

    Each edge is refined by bisection on the factor that vanishes there;
    Dirichlet guard windows are skipped.
    """
    lo, hi = map(float, window)
    holes = dirichlet_windows(lattice, (lo, hi))
    n = max(2, int(math.ceil((hi - lo) / resolution)) + 1)
    grid = np.linspace(lo, hi, n)
    inside = np.ones(n, dtype=bool)
    for a, b in holes:
        inside &= ~((grid >= a) & (grid <= b))
    with np.errstate(divide="ignore", invalid="ignore"):
        mm, mp = band_ends(lattice, model, grid)
    mm = np.where(inside, mm, np.nan)
    mp = np.where(inside, mp, np.nan)

    def factor(k):
        return lambda e: float(band_ends(lattice, model, [e])[k][0])

    edges, which = [], []
    for a, b in _segments((lo, hi), holes):
        xs = np.concatenate([[a], grid[(grid > a) & (grid < b)], [b]])
        ends = band_ends(lattice, model, [a, b])
        cols = []
        for k in (0, 1):
            mid = (mm if k == 0 else mp)[(grid > a) & (grid < b)]
            cols.append(np.concatenate([[ends[k][0]], mid, [ends[k][1]]]))
        for k, name in ((0, "m_minus"), (1, "m_plus")):
            f, other = cols[k], cols[1 - k]
            for i in sign_changes(f):
                if np.sign(other[i]) != np.sign(other[i + 1]):
                    continue  # both factors flip: no change of the product
                e = refine_root(factor(k), xs[i], xs[i + 1], f[i], f[i + 1], xtol=tol,
                                bisect_width=tol)
                edges.append(float(e))
                which.append(name)
            # a factor vanishing exactly on a grid node
            for i in np.nonzero(f[1:-1] == 0.0)[0] + 1:
                if f[i - 1] * f[i + 1] < 0 and other[i - 1] * other[i + 1] > 0:
                    edges.append(float(xs[i]))
                    which.append(name)
    order = np.argsort(edges)
    return EdgeReport(grid, mm, mp, [edges[i] for i in order], [which[i] for i in order], holes)


# ------------------------------------------------------------ shifted operators


class ShiftedOperator:
    """``M_L(E0) - lambda A_L - shift`` on a box, with fast eigenvalue counting."""

    def __init__(self, lattice, model, E0, radius, coupling=None, shift=None):
        self.lattice = lattice
        self.model = model
        self.lam = model.coupling if coupling is None else float(coupling)
        hop = hopping_coefficients(lattice, E0)
        if shift is None:
            shift = -2.0 * float(np.sum(np.abs(hop.b))) - hop.a - self.lam * model.high
        self.shift = float(shift)
        self.box = Box(int(radius), lattice.dimension)
        self.sites = self.box.sites
        self.n = len(self.sites)
        self.hop = hop
        self.chain = lattice.dimension == 1
        self.pairs = neighbor_pairs(self.sites)

    def diagonal(self, alpha):
        return -self.hop.a - self.lam * alpha - self.shift

    def dense(self, alpha):
        base = assemble(self.pairs, self.n, self.hop.a + self.shift, self.hop.b, 0.0, sparse=False)
        base[np.diag_indices(self.n)] -= self.lam * alpha
        return base

    def banded(self, alpha):
        """Lower banded storage; bandwidth is the stride of the last direction."""
        d = self.lattice.dimension
        width = 2 * self.box.radius + 1
        bw = width ** (d - 1)
        ab = np.zeros((bw + 1, self.n))
        ab[0] = self.diagonal(alpha)
        for j, (i, k) in enumerate(self.pairs):
            off = width ** (d - 1 - j)
            ab[off, i] = self.hop.b[j]
        return ab

    def eigenvalues(self, alpha, upper=None):
        """Sorted eigenvalues, or only those ``<= upper``."""
        rng = "a" if upper is None else "v"
        vr = (-np.inf, upper) if upper is not None else None
        if self.chain:
            d = self.diagonal(alpha)
            if self.n == 1:
                return d if upper is None else d[d <= upper]
            e = np.full(self.n - 1, self.hop.b[0])
            if upper is None:
                return linalg.eigvalsh_tridiagonal(d, e)
            return linalg.eigvalsh_tridiagonal(d, e, select=rng, select_range=vr)
        if self.n <= 4096:
            H = self.dense(alpha)
            if upper is None:
                return linalg.eigvalsh(H)
            return linalg.eigvalsh(H, subset_by_value=vr)
        ab = self.banded(alpha)
        if upper is None:
            return linalg.eigvals_banded(ab, lower=True)
        return linalg.eigvals_banded(ab, lower=True, select=rng, select_range=vr)

    def count_below(self, alphas, eps):
        """Eigenvalue counts ``#{w < eps}`` per sample (rows of ``alphas``) and per ``eps``.

        Chains use Sturm sequences (negative pivots of ``LDL^T``), vectorized
        over samples and thresholds; other lattices fall back to eigenvalues.
        """
        alphas = np.atleast_2d(alphas)
        eps = np.asarray(eps, dtype=float)
        if not self.chain:
            top = float(eps.max())
            out = np.empty((len(alphas), len(eps)), dtype=np.int64)
            for i, al in enumerate(alphas):
                w = np.sort(self.eigenvalues(al, upper=top))
                out[i] = np.searchsorted(w, eps, side="left")
            return out
        diag = self.diagonal(alphas)[:, :, None] - eps[None, None, :]
        b2 = self.hop.b[0] ** 2
        tiny = np.finfo(float).tiny
        piv = diag[:, 0, :].copy()
        count = (piv < 0).astype(np.int64)
        for k in range(1, self.n):
            piv = np.where(piv == 0.0, -tiny, piv)
            piv = diag[:, k, :] - b2 / piv
            count += piv < 0
        return count

    def smallest(self, alpha):
        if self.chain and self.n > 1:
            d = self.diagonal(alpha)
            e = np.full(self.n - 1, self.hop.b[0])
            return float(linalg.eigvalsh_tridiagonal(d, e, select="i", select_range=(0, 0))[0])
        if self.n <= 4096:
            return float(linalg.eigvalsh(self.dense(alpha), subset_by_index=[0, 0])[0])
        return float(linalg.eigvals_banded(self.banded(alpha), lower=True, select="i",
                                           select_range=(0, 0))[0])


def log_grid(lo, hi, per_decade=16):
    """Logarithmic grid from ``lo`` to ``hi`` with ``per_decade`` points per decade."""
    n = max(2, int(round(per_decade * math.log10(hi / lo))) + 1)
    return np.logspace(math.log10(lo), math.log10(hi), n)


@dataclass
class IDSCurve:
    reference_energy: float
    radius: int
    samples: int
    epsilon: np.ndarray
    ids: np.ndarray
    half_width: np.ndarray
    shift: float
    min_eigenvalue: float
    sites: int = 0

    def rows(self):
        for e, v, h in zip(self.epsilon, self.ids, self.half_width):
            yield e, v, h


def ids_curve(lattice, model, E0, radius, n_samples, eps_grid, coupling=None, shift=None,
              threads=1, sample_offset=0):
    """Empirical integrated density of states of the edge-shifted operator.

    ``ids[k]`` is the mean fraction of eigenvalues ``<= eps_grid[k]``; the
    half-width is 1.96 standard errors of the per-sample fractions.
    """
    op = ShiftedOperator(lattice, model, E0, radius, coupling, shift)
    eps = np.sort(np.asarray(eps_grid, dtype=float))

    def one(chunk):
        alphas = sample_disorder(model, op.sites, np.arange(*chunk))
        counts = op.count_below(alphas, np.nextafter(eps, np.inf))
        lowest = min(op.smallest(al) for al in alphas)
        return counts / op.n, lowest

    chunks = [(sample_offset + c, sample_offset + min(c + 64, int(n_samples)))
              for c in range(0, int(n_samples), 64)]
    res = ordered_map(one, chunks, threads)
    counts = np.concatenate([r[0] for r in res])
    lowest = min(r[1] for r in res)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(len(counts)) if len(counts) > 1 else 0 * mean
    return IDSCurve(float(E0), int(radius), int(n_samples), eps, mean, 1.96 * se, op.shift,
                    float(lowest), op.n)


@dataclass
class LifshitzFit:
    slope: float
    stderr: float
    intercept: float
    used: np.ndarray
    dropped: list = field(default_factory=list)


def lifshitz_fit(curve, eps_range=None):
    """Slope of ``log|log N(eps)|`` against ``log eps``.

    ``curve`` is an :class:`IDSCurve` or a pair ``(eps, ids)``. Points with
    ``ids`` outside ``(0, 1)`` are dropped and reported.
    """
    if isinstance(curve, IDSCurve):
        eps, ids = curve.epsilon, curve.ids
    else:
        eps, ids = (np.asarray(x, dtype=float) for x in curve)
    sel = np.ones(len(eps), dtype=bool)
    if eps_range is not None:
        sel = (eps >= eps_range[0]) & (eps <= eps_range[1])
    ok = sel & (ids > 0) & (ids < 1) & (eps > 0)
    dropped = [float(e) for e in eps[sel & ~ok]]
    if ok.sum() < 4:
        raise InsufficientData(f"only {int(ok.sum())} usable points for the Lifshitz fit")
    x, y = np.log(eps[ok]), np.log(-np.log(ids[ok]))
    r = linregress(x, y)
    return LifshitzFit(float(r.slope), float(r.stderr), float(r.intercept), eps[ok], dropped)


@dataclass
class ProbabilityBound:
    epsilon: float
    radii: list
    p_hat: np.ndarray
    standard_error: np.ndarray
    bound_rhs: np.ndarray
    ratio: np.ndarray
    reference_ids: float

    def rows(self):
        for n, p, b, r in zip(self.radii, self.p_hat, self.bound_rhs, self.ratio):
            yield n, p, b, r


def probability_bound_check(lattice, model, E0, eps, radii, n_samples, coupling=None,
                            reference_radius=None, reference_samples=None, threads=1):
    """``P(min eig <= eps)`` per box radius next to ``N^d * N(eps)``.

    ``N(eps)`` comes from an IDS estimate on a reference box (default: the
    largest radius). Disorder is shared between boxes site by site, so the
    estimated probability can only grow with the radius.
    """
    radii = [int(n) for n in radii]
    d = lattice.dimension
    ref_n = max(radii) if reference_radius is None else int(reference_radius)
    ref_s = n_samples if reference_samples is None else int(reference_samples)
    ref = ids_curve(lattice, model, E0, ref_n, ref_s, [eps], coupling, threads=threads)
    nref = float(ref.ids[0])
    p, se = [], []
    for n in radii:
        op = ShiftedOperator(lattice, model, E0, n, coupling)
        mins = ordered_map(lambda i: op.smallest(sample_disorder(model, op.sites, i)),
                           range(int(n_samples)), threads)
        hit = np.asarray(mins) <= eps
        p.append(hit.mean())
        se.append(math.sqrt(max(hit.mean() * (1 - hit.mean()), 0.0) / len(hit)))
    rhs = np.array([n**d * nref for n in radii], dtype=float)
    p = np.array(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, p / rhs, np.nan)
    return ProbabilityBound(float(eps), radii, p, np.array(se), rhs, ratio, nref)


@dataclass
class CombesThomasReport:
    epsilon: float
    distances: np.ndarray
    max_abs_entry: np.ndarray
    rate: float
    intercept: float
    r_squared: float
    kept: int
    discarded: int
    shift: float

    def rows(self):
        for k, v in zip(self.distances, self.max_abs_entry):
            yield k, v


def combes_thomas_check(lattice, model, E, radius, n_samples, eps, coupling=None, shift=None,
                        threads=1):
    """Resolvent decay over samples whose shifted operator has spectrum above ``eps``.

    Returns, per lattice distance, the largest ``|G(m, m')|`` over kept
    samples and pairs, and the rate of an exponential fit to it.
    """
    op = ShiftedOperator(lattice, model, E, radius, coupling, shift)
    sites = op.sites
    dist = np.abs(sites[:, None, :] - sites[None, :, :]).sum(axis=-1)
    kmax = int(dist.max())

    def one(i):
        alpha = sample_disorder(model, sites, i)
        H = op.dense(alpha)
        w = linalg.eigvalsh(H, subset_by_index=[0, 0])[0]
        if not w > eps:
            return None
        G = np.abs(linalg.inv(H))
        return np.array([G[dist == k].max() for k in range(kmax + 1)])

    res = [r for r in ordered_map(one, range(int(n_samples)), threads) if r is not None]
    if not res:
        raise ConditioningFailure(f"no sample has its spectrum above eps = {eps}")
    env = np.max(res, axis=0)
    k = np.arange(kmax + 1, dtype=float)
    ok = env > 0
    r = linregress(k[ok], np.log(env[ok]))
    return CombesThomasReport(float(eps), k, env, -float(r.slope), float(r.intercept),
                              float(r.rvalue**2), len(res), int(n_samples) - len(res), op.shift)
