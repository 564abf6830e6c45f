"""Exception and warning types raised by kirchloc."""


class KirchlocError(Exception):
    """Base class for all errors raised by this package."""


class InvalidProfile(KirchlocError, ValueError):
    pass


class NumericalOverflow(KirchlocError, ArithmeticError):
    pass


class RootFindingFailure(KirchlocError):
    pass


class DirichletProximity(KirchlocError, ValueError):
    """Energy lies inside the guard window around a Dirichlet eigenvalue."""

    def __init__(self, energy, direction=None, phi_l=None):
        self.energy = energy
        self.direction = direction
        self.phi_l = phi_l
        msg = f"energy {energy!r} is too close to a Dirichlet eigenvalue"
        if direction is not None:
            msg += f" of edge direction {direction} (phi(l) = {phi_l:.3e})"
        super().__init__(msg)


class WindowSplitRequired(KirchlocError, ValueError):
    """Energy window contains a Dirichlet eigenvalue and must be split."""

    def __init__(self, window, dirichlet_points):
        self.window = tuple(float(w) for w in window)
        self.dirichlet_points = [float(p) for p in dirichlet_points]
        super().__init__(
            f"window {self.window} contains Dirichlet eigenvalues {self.dirichlet_points}"
        )


class NearSingular(KirchlocError, ArithmeticError):
    pass


class QuadratureFailure(KirchlocError):
    pass


class InsufficientData(KirchlocError, ValueError):
    pass


class ConditioningFailure(KirchlocError):
    pass


class ConfigError(KirchlocError, ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class HeavyTailWarning(UserWarning):
    """Too many Monte Carlo samples hit the resolvent cap."""
