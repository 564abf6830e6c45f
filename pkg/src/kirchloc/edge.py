"""Per-edge Sturm-Liouville solutions.

Every edge of direction ``j`` carries the operator ``-y'' + U_j y`` on
``[0, l_j]``. The lattice reduction only needs two fundamental solutions,
``phi`` (``phi(0)=0, phi'(0)=1``) and ``theta`` (``theta(0)=1, theta'(0)=0``),
together with the solution ``phihat = phi(l) theta - theta(l) phi`` that
vanishes at the far end.

Piecewise-constant potentials are propagated exactly with 2x2 transfer
matrices; sampled potentials use fixed-step RK4.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import DirichletProximity, InvalidProfile, NumericalOverflow
from .roots import refine_root, sign_changes

DEFAULT_STEPS = 4096
MAX_ENERGY = 1e8
OVERFLOW_LIMIT = 1e300
DIRICHLET_GUARD = 1e-6


@dataclass(frozen=True)
class EdgeProfile:
    """Length and potential of one edge class.

    ``kind`` is one of ``"zero"``, ``"constant"``, ``"piecewise"`` or
    ``"sampled"``. For ``"piecewise"`` the interior ``breakpoints`` split the
    edge into ``len(values)`` pieces; for ``"sampled"`` ``values`` are the
    potential on a uniform grid over ``[0, length]`` (linearly interpolated).
    """

    length: float
    kind: str = "zero"
    values: tuple = ()
    breakpoints: tuple = ()
    integration_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "breakpoints", tuple(float(v) for v in self.breakpoints))
        if not (np.isfinite(self.length) and self.length > 0):
            raise InvalidProfile(f"edge length must be positive, got {self.length!r}")
        if int(self.integration_steps) != self.integration_steps or self.integration_steps < 1:
            raise InvalidProfile("integration_steps must be a positive integer")
        object.__setattr__(self, "integration_steps", int(self.integration_steps))
        if not all(np.isfinite(self.values)):
            raise InvalidProfile("potential values must be finite")

        if self.kind == "zero":
            if self.values or self.breakpoints:
                raise InvalidProfile("zero potential takes no values")
        elif self.kind == "constant":
            if len(self.values) != 1 or self.breakpoints:
                raise InvalidProfile("constant potential takes exactly one value")
        elif self.kind == "piecewise":
            if len(self.values) != len(self.breakpoints) + 1:
                raise InvalidProfile("piecewise potential needs len(values) == len(breakpoints) + 1")
            bp = np.array((0.0,) + self.breakpoints + (self.length,))
            if np.any(np.diff(bp) <= 0):
                raise InvalidProfile("breakpoints must be strictly increasing inside (0, length)")
        elif self.kind == "sampled":
            if len(self.values) < 2 or self.breakpoints:
                raise InvalidProfile("sampled potential needs at least two grid values")
        else:
            raise InvalidProfile(f"unknown potential kind {self.kind!r}")

    @classmethod
    def zero(cls, length, integration_steps=DEFAULT_STEPS):
        return cls(length, "zero", integration_steps=integration_steps)

    @classmethod
    def constant(cls, length, value, integration_steps=DEFAULT_STEPS):
        return cls(length, "constant", (value,), integration_steps=integration_steps)

    @classmethod
    def piecewise(cls, length, breakpoints, values, integration_steps=DEFAULT_STEPS):
        return cls(length, "piecewise", tuple(values), tuple(breakpoints), integration_steps)

    @classmethod
    def sampled(cls, length, values, integration_steps=DEFAULT_STEPS):
        return cls(length, "sampled", tuple(values), integration_steps=integration_steps)

    @property
    def is_piecewise_constant(self):
        return self.kind != "sampled"

    def pieces(self):
        """``(starts, ends, values)`` arrays of the constant pieces."""
        if self.kind == "zero":
            return np.array([0.0]), np.array([self.length]), np.array([0.0])
        if self.kind == "constant":
            return np.array([0.0]), np.array([self.length]), np.array(self.values)
        if self.kind == "piecewise":
            bp = np.array((0.0,) + self.breakpoints + (self.length,))
            return bp[:-1], bp[1:], np.array(self.values)
        raise InvalidProfile("sampled potential has no constant pieces")

    def potential(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "sampled":
            grid = np.linspace(0.0, self.length, len(self.values))
            return np.interp(t, grid, self.values)
        starts, _, vals = self.pieces()
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(vals) - 1)
        return vals[idx]

    def min_potential(self):
        return min(self.values) if self.values else 0.0

    def grid(self):
        return np.linspace(0.0, self.length, self.integration_steps + 1)

    def to_dict(self):
        d = {"length": self.length, "kind": self.kind, "integration_steps": self.integration_steps}
        if self.values:
            d["values"] = list(self.values)
        if self.breakpoints:
            d["breakpoints"] = list(self.breakpoints)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["length"]),
            d.get("kind", "zero"),
            tuple(d.get("values", ())),
            tuple(d.get("breakpoints", ())),
            int(d.get("integration_steps", DEFAULT_STEPS)),
        )


@dataclass
class EdgeBasis:
    """Fundamental solutions of one edge at a fixed real energy."""

    energy: float
    profile: EdgeProfile
    t: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    _spline: object = field(default=None, repr=False, compare=False)

    @property
    def phi_l(self):
        return float(self.phi[-1])

    @property
    def dphi_l(self):
        return float(self.dphi[-1])

    @property
    def theta_l(self):
        return float(self.theta[-1])

    @property
    def dtheta_l(self):
        return float(self.dtheta[-1])

    @property
    def eta(self):
        return self.theta_l + self.dphi_l

    @property
    def phihat(self):
        return self.phi_l * self.theta - self.theta_l * self.phi

    @property
    def dphihat(self):
        return self.phi_l * self.dtheta - self.theta_l * self.dphi

    @property
    def phi_profile(self):
        return self.phi

    @property
    def phihat_profile(self):
        return self.phihat

    def wronskian_defect(self):
        """Pointwise ``|phi theta' - theta phi' + 1|`` on the grid."""
        return np.abs(self.phi * self.dtheta - self.theta * self.dphi + 1.0)

    def at(self, t):
        """``(phi, dphi, phihat, dphihat)`` at arbitrary points ``t``.

        Exact for piecewise-constant potentials, cubic Hermite interpolation
        of the RK4 grid otherwise.
        """
        t = np.asarray(t, dtype=float)
        if np.any((t < -1e-12) | (t > self.profile.length + 1e-12)):
            raise ValueError("t outside the edge")
        if self.profile.is_piecewise_constant:
            th, dth, ph, dph = _piecewise_fundamental(self.profile, self.energy, t)
        else:
            if self._spline is None:
                y = np.stack([self.theta, self.phi])
                dy = np.stack([self.dtheta, self.dphi])
                q = self.profile.potential(self.t) - self.energy
                self._spline = (
                    CubicHermiteSpline(self.t, y, dy, axis=1),
                    CubicHermiteSpline(self.t, dy, q * y, axis=1),
                )
            th, ph = self._spline[0](t)
            dth, dph = self._spline[1](t)
        phl, thl = self.phi_l, self.theta_l
        return ph, dph, phl * th - thl * ph, phl * dth - thl * dph


def _transfer(q, h):
    """Entries ``(c, s, q*s)`` of the exact propagator of ``y'' = q y`` over ``h``."""
    q, h = np.broadcast_arrays(np.asarray(q, dtype=float), np.asarray(h, dtype=float))
    k = np.sqrt(np.abs(q))
    x = k * h
    with np.errstate(over="ignore", invalid="ignore"):
        pos = q > 0
        c = np.where(pos, np.cosh(x), np.cos(x))
        sh = np.where(x > 0, np.sinh(x) / np.where(x > 0, x, 1.0), 1.0)
        s = h * np.where(pos, sh, np.sinc(x / np.pi))
    return c, s, q * s


def _piecewise_fundamental(profile, energy, t):
    """Exact ``(theta, dtheta, phi, dphi)`` at points ``t`` for one energy."""
    starts, ends, vals = profile.pieces()
    q = vals - energy
    # fundamental matrix [[theta, phi], [theta', phi']] at each piece start
    F = np.empty((len(vals), 2, 2))
    cur = np.eye(2)
    for i in range(len(vals)):
        F[i] = cur
        c, s, qs = _transfer(q[i], ends[i] - starts[i])
        cur = np.array([[c, s], [qs, c]]) @ cur
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(vals) - 1)
    c, s, qs = _transfer(q[idx], t - starts[idx])
    F0 = F[idx]
    th = c * F0[..., 0, 0] + s * F0[..., 1, 0]
    dth = qs * F0[..., 0, 0] + c * F0[..., 1, 0]
    ph = c * F0[..., 0, 1] + s * F0[..., 1, 1]
    dph = qs * F0[..., 0, 1] + c * F0[..., 1, 1]
    return th, dth, ph, dph


def _rk4_fundamental(profile, energies, keep_path):
    """RK4 for ``Y' = [[0, 1], [U - E, 0]] Y`` with ``Y(0) = I``, vectorized in E."""
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    n = profile.integration_steps
    h = profile.length / n
    t = np.linspace(0.0, profile.length, n + 1)
    U = profile.potential(t)
    Umid = profile.potential(t[:-1] + 0.5 * h)
    # state rows: theta, dtheta, phi, dphi
    y = np.zeros((2, energies.size))
    dy = np.zeros((2, energies.size))
    y[0] = 1.0
    dy[1] = 1.0
    path = np.empty((n + 1, 4, energies.size)) if keep_path else None
    if keep_path:
        path[0] = np.concatenate([y, dy])[[0, 2, 1, 3]]
    for i in range(n):
        q0 = U[i] - energies
        qm = Umid[i] - energies
        q1 = U[i + 1] - energies
        k1y, k1d = dy, q0 * y
        y2, d2 = y + 0.5 * h * k1y, dy + 0.5 * h * k1d
        k2y, k2d = d2, qm * y2
        y3, d3 = y + 0.5 * h * k2y, dy + 0.5 * h * k2d
        k3y, k3d = d3, qm * y3
        y4, d4 = y + h * k3y, dy + h * k3d
        k4y, k4d = d4, q1 * y4
        y = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        dy = dy + h / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d)
        if keep_path:
            path[i + 1, 0], path[i + 1, 1] = y[0], dy[0]
            path[i + 1, 2], path[i + 1, 3] = y[1], dy[1]
    if keep_path:
        return t, path
    return np.stack([y[0], dy[0], y[1], dy[1]])


def _check_energy(energy):
    e = np.asarray(energy, dtype=float)
    if not np.all(np.isfinite(e)) or np.any(np.abs(e) > MAX_ENERGY):
        raise ValueError(f"energy must be finite with |E| <= {MAX_ENERGY:g}")


def _check_overflow(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)) or np.any(np.abs(a) > OVERFLOW_LIMIT):
            raise NumericalOverflow("edge solution exceeded 1e300")


def solve_basis(profile, energy):
    """Fundamental solutions of ``-y'' + U y = E y`` sampled on the edge grid."""
    if not isinstance(profile, EdgeProfile):
        raise InvalidProfile("expected an EdgeProfile")
    _check_energy(energy)
    energy = float(energy)
    if profile.is_piecewise_constant:
        t = profile.grid()
        th, dth, ph, dph = _piecewise_fundamental(profile, energy, t)
    else:
        t, path = _rk4_fundamental(profile, [energy], keep_path=True)
        th, dth, ph, dph = (path[:, k, 0] for k in range(4))
    _check_overflow(th, dth, ph, dph)
    return EdgeBasis(energy, profile, t, ph, dph, th, dth)


def boundary_values(profile, energies):
    """``(phi_l, dphi_l, theta_l, dtheta_l)`` arrays for an array of energies."""
    _check_energy(energies)
    energies = np.asarray(energies, dtype=float)
    flat = np.atleast_1d(energies).ravel()
    if profile.is_piecewise_constant:
        starts, ends, vals = profile.pieces()
        F = np.broadcast_to(np.eye(2), (flat.size, 2, 2)).copy()
        for i in range(len(vals)):
            c, s, qs = _transfer(vals[i] - flat, ends[i] - starts[i])
            T = np.stack([np.stack([c, s], -1), np.stack([qs, c], -1)], -2)
            F = T @ F
        th, dth, ph, dph = F[:, 0, 0], F[:, 1, 0], F[:, 0, 1], F[:, 1, 1]
    else:
        th, dth, ph, dph = _rk4_fundamental(profile, flat, keep_path=False)
    _check_overflow(th, dth, ph, dph)
    shape = energies.shape
    return tuple(np.reshape(v, shape) for v in (ph, dph, th, dth))


def dirichlet_guard(profile):
    """Threshold below which ``|phi(l; E)|`` counts as a Dirichlet point."""
    return DIRICHLET_GUARD * max(1.0, profile.length)


def check_dirichlet(profile, energy, direction=None):
    """Raise :class:`DirichletProximity` if ``energy`` fails the guard."""
    phi_l = boundary_values(profile, energy)[0]
    if abs(phi_l) < dirichlet_guard(profile):
        raise DirichletProximity(float(energy), direction, float(phi_l))
    return float(phi_l)


def _scan_count(profile, lo, hi):
    # roots of phi(l; E) are spaced ~ pi / l in sqrt(E - U)
    top = max(hi - profile.min_potential(), 0.0)
    expected = profile.length * np.sqrt(top) / np.pi + 2
    return int(min(max(256, 64 * expected), 2_000_000))


def dirichlet_eigenvalues(profile, window):
    """All roots of ``E -> phi(l; E)`` in the closed window, increasing."""
    lo, hi = map(float, window)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ValueError("window must be a bounded interval")
    # Dirichlet eigenvalues lie above min U
    lo_eff = max(lo, profile.min_potential() - 1.0)
    if lo_eff > hi:
        return []
    grid = np.linspace(lo_eff, hi, _scan_count(profile, lo_eff, hi))
    vals = boundary_values(profile, grid)[0]
    f = lambda e: float(boundary_values(profile, e)[0])
    roots = [float(grid[i]) for i in np.nonzero(vals == 0.0)[0]]
    for i in sign_changes(vals):
        roots.append(refine_root(f, grid[i], grid[i + 1], vals[i], vals[i + 1]))
    return sorted(roots)


def dirichlet_green(profile, energy, t, t_prime):
    """Kernel of ``(-d^2/dt^2 + U - E)^{-1}`` with Dirichlet ends.

    ``G(t, t') = phi(min) phihat(max) / phi(l)``; vectorized over ``t`` and
    ``t_prime``.
    """
    check_dirichlet(profile, energy)
    basis = solve_basis(profile, energy)
    t, tp = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(t_prime, dtype=float))
    lo, hi = np.minimum(t, tp), np.maximum(t, tp)
    ph_lo = basis.at(lo)[0]
    phh_hi = basis.at(hi)[2]
    g = ph_lo * phh_hi / basis.phi_l
    return float(g) if g.ndim == 0 else g
