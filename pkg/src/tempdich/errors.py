"""Exception types raised across the package.

Numeric failures that signal "no dichotomy here" (detection, gaps,
convergence) derive from :class:`CertificateFailure` so the CLI can map
them to a single exit code.
"""

from __future__ import annotations

from typing import Any


class DichotomyError(Exception):
    """Base class for every error raised by ``tempdich``."""


class DomainError(DichotomyError, ValueError):
    """An argument lies outside the domain of a closed-form formula."""


class WindowMismatch(DichotomyError, ValueError):
    """Two windowed objects do not share the same index range."""


class ProductOverflow(DichotomyError, FloatingPointError):
    """A matrix product left the representable float range."""


class SingularRestriction(DichotomyError):
    """The forward map restricted to an unstable fiber is not invertible."""


class RankDeficient(DichotomyError):
    """A windowed linear system has non-unique minimal-boundary solutions."""


class IllConditionedBackward(DichotomyError):
    """A backward continuation step has no accurate preimage."""


class CertificateFailure(DichotomyError):
    """A numerical certificate did not hold.

    ``report`` carries the measured defects so callers never see a bare
    boolean.
    """

    def __init__(self, message: str, report: dict[str, Any] | None = None):
        super().__init__(message)
        self.report = dict(report or {})


class NotAProjection(CertificateFailure):
    pass


class DetectionFailure(CertificateFailure):
    pass


class NoGap(CertificateFailure):
    pass


class Degenerate(CertificateFailure):
    pass


class NoReturn(CertificateFailure):
    pass


class NoConvergence(CertificateFailure):
    pass


class ConfigError(DichotomyError, ValueError):
    """A scenario file failed validation; ``field`` is a dotted path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
