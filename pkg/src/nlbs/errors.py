"""Exception hierarchy shared by the engine modules."""


class NLBSError(Exception):
    """Base class for every error raised by the package."""


class Singular(NLBSError, ArithmeticError):
    """The amplification factor is infinite (the re-hedge series diverges)."""


class NoFiniteRoot(Singular):
    """The intensity-dependent relation for F has no root below the bracket cap."""


class InvalidMu(NLBSError, ValueError):
    """A sampled amplification curve violates mu(0) = 1, mu > 0 or smoothness at 0."""


class InvalidParams(NLBSError, ValueError):
    pass


class NonConvergence(NLBSError, RuntimeError):
    pass


class NumericalBlowup(NLBSError, RuntimeError):
    pass


class NonEllipticInput(NLBSError, ValueError):
    """The effective nonlinearity is decreasing somewhere on the sampled range."""


class PathEscapedGrid(NLBSError, RuntimeError):
    pass


class SingularMu(NLBSError, RuntimeError):
    pass


class ConfigError(NLBSError, ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
