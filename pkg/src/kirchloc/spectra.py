"""Finite-volume quantum-graph eigenvalues, eigenfunctions and Green kernel.

An energy ``E`` outside the Dirichlet spectrum is an eigenvalue of the graph
operator on a box iff ``M_L(E) - lambda A_L`` has a zero eigenvalue. Every
sorted eigenvalue branch of that matrix is nondecreasing in ``E`` between
Dirichlet points (``dM/dE = gamma* gamma``), so each branch crosses zero at
most once and a sign change brackets the crossing.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.integrate import simpson

from .edge import dirichlet_guard, solve_basis
from .errors import NearSingular, WindowSplitRequired
from .lattice import (
    Box,
    as_sites,
    assemble,
    hopping_arrays,
    hopping_coefficients,
    neighbor_pairs,
    sample_disorder,
    site_index,
)
from .roots import refine_root, sign_changes

MULTIPLICITY_TOL = 1e-9


class _Pencil:
    """``E -> M_L(E) - lambda A_L`` on a fixed site set."""

    def __init__(self, lattice, sites, disorder_sample, coupling):
        self.lattice = lattice
        self.sites = sites
        self.pairs = neighbor_pairs(sites)
        self.n = len(sites)
        self.diag = coupling * np.asarray(disorder_sample, dtype=float)
        # a single chain in lexicographic order is tridiagonal
        self.chain = lattice.dimension == 1 and np.all(np.diff(sites[:, 0]) == 1)

    def matrix(self, energy, a=None, b=None):
        if a is None:
            h = hopping_coefficients(self.lattice, energy)
            a, b = h.a, h.b
        return assemble(self.pairs, self.n, a, b, self.diag, sparse=False)

    def eigvals(self, energy, a=None, b=None, index=None):
        if a is None:
            h = hopping_coefficients(self.lattice, energy)
            a, b = h.a, h.b
        if self.chain:
            d = -a - self.diag
            e = np.full(self.n - 1, b[0])
            if self.n == 1:
                return d.copy() if index is None else d[0]
            if index is None:
                return linalg.eigvalsh_tridiagonal(d, e)
            return linalg.eigvalsh_tridiagonal(d, e, select="i", select_range=(index, index))[0]
        H = self.matrix(energy, a, b)
        if index is None:
            return linalg.eigvalsh(H)
        return linalg.eigvalsh(H, subset_by_index=[index, index])[0]


@dataclass
class GraphEigenpair:
    """Eigenvalue of the finite graph operator with its lattice vector.

    ``edge_functions`` maps ``(m, j)`` to samples of the eigenfunction on the
    grid ``edge_grids[j]`` of edge ``m -> m + h_j``; it is filled by
    :func:`reconstruct_eigenfunction`.
    """

    energy: float
    lattice_vector: np.ndarray
    sites: np.ndarray
    lattice: object
    disorder_sample: np.ndarray
    coupling: float
    residual: float
    multiplicity_flag: bool = False
    edge_functions: dict = field(default_factory=dict, repr=False)
    edge_derivatives: dict = field(default_factory=dict, repr=False)
    edge_grids: tuple = field(default=(), repr=False)
    edge_norms: dict = field(default_factory=dict, repr=False)
    continuity_defect: float = math.nan
    coupling_defect: float = math.nan
    boundary_defect: float = math.nan

    def decay_profile(self):
        """``(sites, sup_j ||f||_{L2(edge (m, j))})`` over the box sites."""
        sup = np.zeros(len(self.sites))
        idx = site_index(self.sites)
        for (m, _), nrm in self.edge_norms.items():
            i = idx.get(m)
            if i is not None:
                sup[i] = max(sup[i], nrm)
        return self.sites, sup

    def decay_fit(self):
        """Least-squares slope of ``log sup-norm`` against ``|m - m_peak|_1``."""
        sites, sup = self.decay_profile()
        peak = sites[int(np.argmax(sup))]
        dist = np.abs(sites - peak).sum(axis=1)
        keep = sup > 0
        slope, _ = np.polyfit(dist[keep], np.log(sup[keep]), 1)
        return float(slope)

    def to_record(self):
        return {
            "energy": self.energy,
            "lattice_vector": [float(x) for x in self.lattice_vector],
            "sites": [[int(c) for c in s] for s in self.sites],
            "multiplicity_flag": bool(self.multiplicity_flag),
            "residual": self.residual,
            "edge_sup_norms": [
                {"m": list(m), "j": j, "l2_norm": float(v)}
                for (m, j), v in sorted(self.edge_norms.items())
            ],
        }

    def profile_rows(self):
        """``(m, j, t, value)`` rows of the reconstructed eigenfunction."""
        for (m, j), vals in sorted(self.edge_functions.items()):
            for t, v in zip(self.edge_grids[j], vals):
                yield m, j, t, v


def _check_window(lattice, window):
    lo, hi = map(float, window)
    if not hi > lo:
        raise ValueError("window must have positive width")
    pts = lattice.dirichlet_points((lo, hi))
    if pts:
        raise WindowSplitRequired((lo, hi), pts)
    _, _, phi = hopping_arrays(lattice, [lo, hi])
    for j, prof in enumerate(lattice.edge_profiles):
        if np.any(np.abs(phi[:, j]) < dirichlet_guard(prof)):
            raise WindowSplitRequired((lo, hi), [])
    return lo, hi


def find_eigenvalues(lattice, region, disorder_sample, coupling, window, grid_points=512,
                     reconstruct=True):
    """All graph eigenvalues in a Dirichlet-free ``window``.

    Sorted branches of ``M_L(E) - coupling A_L`` are sampled on a uniform
    grid; each sign change is refined to ``|dE| <= 1e-10``.
    """
    lo, hi = _check_window(lattice, window)
    sites = as_sites(region, lattice.dimension)
    pencil = _Pencil(lattice, sites, disorder_sample, coupling)
    grid = np.linspace(lo, hi, grid_points + 1)
    a, b, _ = hopping_arrays(lattice, grid)
    branches = np.array([pencil.eigvals(e, a[i], b[i]) for i, e in enumerate(grid)])

    roots = []
    for k in range(pencil.n):
        f = branches[:, k]
        f_k = lambda e, k=k: float(pencil.eigvals(e, index=k))
        hits = [float(grid[i]) for i in np.nonzero(f == 0.0)[0]]
        for i in sign_changes(f):
            hits.append(float(refine_root(f_k, grid[i], grid[i + 1], f[i], f[i + 1])))
        roots += [(e, k) for e in hits]
    roots.sort()

    pairs = []
    for r, (e, k) in enumerate(roots):
        H = pencil.matrix(e)
        w, v = linalg.eigh(H)
        xi = v[:, k]
        xi = xi * np.sign(xi[np.argmax(np.abs(xi))])
        near = [abs(e - roots[q][0]) < MULTIPLICITY_TOL for q in (r - 1, r + 1) if 0 <= q < len(roots)]
        pair = GraphEigenpair(
            energy=e,
            lattice_vector=xi,
            sites=sites,
            lattice=lattice,
            disorder_sample=np.asarray(disorder_sample, dtype=float),
            coupling=float(coupling),
            residual=float(np.linalg.norm(H @ xi)),
            multiplicity_flag=any(near),
        )
        if reconstruct:
            reconstruct_eigenfunction(pair)
        pairs.append(pair)
    return pairs


def _incident_edges(sites):
    """Edges ``(m, j)`` with at least one endpoint in ``sites``."""
    edges = set()
    for s in sites:
        m = tuple(int(x) for x in s)
        for j in range(len(m)):
            edges.add((m, j))
            prev = list(m)
            prev[j] -= 1
            edges.add((tuple(prev), j))
    return sorted(edges)


def reconstruct_eigenfunction(pair):
    """Fill in the edge functions ``gamma(E) xi`` and check the vertex conditions.

    Vertex derivatives come from the integrated derivatives of ``phi`` and
    ``phihat`` at the edge ends, not from differencing the samples.
    """
    lattice = pair.lattice
    idx = site_index(pair.sites)
    xi = lambda m: pair.lattice_vector[idx[m]] if m in idx else 0.0
    bases = [solve_basis(p, pair.energy) for p in lattice.edge_profiles]
    pair.edge_grids = tuple(bs.t for bs in bases)

    funcs, ders, norms = {}, {}, {}
    for m, j in _incident_edges(pair.sites):
        bs = bases[j]
        nxt = list(m)
        nxt[j] += 1
        x0, x1 = xi(m), xi(tuple(nxt))
        f = (x1 * bs.phi + x0 * bs.phihat) / bs.phi_l
        df = (x1 * bs.dphi + x0 * bs.dphihat) / bs.phi_l
        funcs[(m, j)] = f
        ders[(m, j)] = df
        norms[(m, j)] = math.sqrt(simpson(f * f, x=bs.t))
    pair.edge_functions, pair.edge_derivatives, pair.edge_norms = funcs, ders, norms

    cont, coup = 0.0, 0.0
    for i, s in enumerate(pair.sites):
        m = tuple(int(x) for x in s)
        val = pair.lattice_vector[i]
        flux = 0.0
        for j in range(lattice.dimension):
            prev = list(m)
            prev[j] -= 1
            prev = tuple(prev)
            cont = max(cont, abs(funcs[(m, j)][0] - val), abs(funcs[(prev, j)][-1] - val))
            flux += ders[(m, j)][0] - ders[(prev, j)][-1]
        coup = max(coup, abs(flux - pair.coupling * pair.disorder_sample[i] * val))
    bnd = 0.0
    for (m, j), f in funcs.items():
        if m not in idx:
            bnd = max(bnd, abs(f[0]))
        nxt = list(m)
        nxt[j] += 1
        if tuple(nxt) not in idx:
            bnd = max(bnd, abs(f[-1]))
    pair.continuity_defect, pair.coupling_defect, pair.boundary_defect = cont, coup, bnd
    return pair


@dataclass(frozen=True)
class GreenKernelQuery:
    """Energy plus source/target points ``(m, j, t)`` on a finite box."""

    energy: float
    source: tuple
    target: tuple
    region: object

    def __post_init__(self):
        for m, j, t in (self.source, self.target):
            if not 0 <= j < len(m):
                raise ValueError("edge direction out of range")


def green_kernel(query, lattice, disorder_sample, coupling):
    """Resolvent kernel of the finite graph operator between two edge points.

    Combines the Dirichlet kernel of the source edge with the four
    resolvent-weighted products of ``phi`` and ``phihat``; ``t`` values may be
    arrays and broadcast against each other.
    """
    E = float(query.energy)
    sites = as_sites(query.region, lattice.dimension)
    hop = hopping_coefficients(lattice, E)
    pencil = _Pencil(lattice, sites, disorder_sample, coupling)
    K = pencil.matrix(E, hop.a, hop.b)
    w = linalg.eigvalsh(K)
    if np.min(np.abs(w)) <= 1e-10:
        raise NearSingular(f"M_L(E) - lambda A_L is singular at E = {E!r}")
    R = linalg.inv(K)
    R = 0.5 * (R + R.T)
    idx = site_index(sites)

    def r(n, n2):
        i, k = idx.get(n), idx.get(n2)
        return 0.0 if i is None or k is None else R[i, k]

    def shift(m, j):
        m = list(m)
        m[j] += 1
        return tuple(m)

    (m, j, t), (m2, j2, t2) = query.source, query.target
    m, m2 = tuple(int(x) for x in m), tuple(int(x) for x in m2)
    bs = solve_basis(lattice.edge_profiles[j], E)
    bs2 = bs if j2 == j else solve_basis(lattice.edge_profiles[j2], E)
    ph, _, phh, _ = bs.at(t)
    ph2, _, phh2, _ = bs2.at(t2)
    g = -(
        r(m, m2) * phh * phh2
        + r(shift(m, j), m2) * ph * phh2
        + r(m, shift(m2, j2)) * phh * ph2
        + r(shift(m, j), shift(m2, j2)) * ph * ph2
    ) / (bs.phi_l * bs2.phi_l)
    if m == m2 and j == j2:
        t, t2 = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(t2, dtype=float))
        lo_ph = bs.at(np.minimum(t, t2))[0]
        hi_phh = bs.at(np.maximum(t, t2))[2]
        g = g + lo_ph * hi_phh / bs.phi_l
    g = np.asarray(g, dtype=float)
    return float(g) if g.ndim == 0 else g


@dataclass
class ConvergenceTable:
    target_energy: float
    radii: list
    eigenvalues: list
    differences: list

    def rows(self):
        for k, (n, e) in enumerate(zip(self.radii, self.eigenvalues)):
            yield n, e, (self.differences[k - 1] if k > 0 else math.nan)


def convergence_test(lattice, model, target_energy, radii, coupling=None, sample_index=0,
                     half_width=0.25, grid_points=512):
    """Eigenvalue nearest ``target_energy`` on boxes of growing radius.

    The disorder realization is shared across boxes (values are keyed by site),
    so each larger box extends the smaller one.
    """
    lam = model.coupling if coupling is None else coupling
    e0 = float(target_energy)
    pts = lattice.dirichlet_points((e0 - 2 * half_width, e0 + 2 * half_width))
    w = half_width
    if pts:
        w = min(w, 0.5 * min(abs(p - e0) for p in pts))
    window = (e0 - w, e0 + w)
    radii = [int(n) for n in radii]
    eigs = []
    for n in radii:
        box = Box(n, lattice.dimension)
        alpha = sample_disorder(model, box, sample_index)
        found = find_eigenvalues(lattice, box, alpha, lam, window, grid_points, reconstruct=False)
        if found:
            eigs.append(min((p.energy for p in found), key=lambda x: abs(x - e0)))
        else:
            eigs.append(math.nan)
    diffs = [abs(eigs[k + 1] - eigs[k]) for k in range(len(eigs) - 1)]
    return ConvergenceTable(e0, radii, eigs, diffs)
