"""Exception types raised across the package."""


class PicardRomError(Exception):
    """Base class for all library errors."""


class SingularMatrix(PicardRomError):
    """Direct solver detected numerical singularity while pivoting."""


class ConvergenceFailure(PicardRomError):
    """Iterative SVD kernel failed to converge."""


class DimensionMismatch(PicardRomError):
    """Operand shapes are inconsistent."""


class TooFewSnapshots(PicardRomError):
    """Basis construction requires at least two snapshots."""


class SvdFailure(PicardRomError):
    """SVD-based basis construction failed; Gram-Schmidt may be used instead."""


class SingularReducedSystem(PicardRomError):
    """The projected low-order system is singular; force a full-order step."""


class InvalidRange(PicardRomError):
    """Index arguments outside the valid system range."""


class MissingConstants(PicardRomError):
    """A criterion requires constants the ledger has not estimated yet."""


class NonPositiveDiffusion(PicardRomError):
    """Diffusion field must be strictly positive."""


class ViscosityOutOfRange(PicardRomError):
    """Temperature too close to the singularity of the viscosity law."""


class MissingDerivativeBounds(PicardRomError):
    """Analytic contraction estimate needs coupling derivative bounds."""


class ConfigError(PicardRomError):
    """Invalid problem or run configuration."""


class MaxIterationsExceeded(PicardRomError):
    """The iteration budget was exhausted before convergence."""


class TooFewSamples(PicardRomError):
    """Runtime statistics require a minimal sample count."""
