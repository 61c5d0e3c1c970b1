"""Exception types shared across the package.

Every error raised on a user-facing path derives from :class:`Error` so the
command line driver can map failures onto stable exit codes.
"""

from __future__ import annotations


class Error(Exception):
    """Base class for all treefem errors."""


class ParseError(Error):
    """Syntax error in an expression or a problem script.

    Carries 1-based ``line`` and ``col`` positions when they are known.
    ``line`` is relative to the document the text came from; expression
    fragments embedded in a script are re-anchored by the script parser.
    """

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        pos = ""
        if line is not None and col is not None:
            pos = f"line {line}, column {col}: "
        elif line is not None:
            pos = f"line {line}: "
        elif col is not None:
            pos = f"column {col}: "
        super().__init__(pos + message)
        self.message = message


class EvalError(Error):
    """Raised when a scalar expression cannot be evaluated."""


class ValidationError(Error):
    """A parsed problem specification violates a semantic rule."""


class FormError(Error):
    """A weak form is outside the supported fragment (nonlinear, malformed)."""


class GeometryError(Error):
    """Geometry input could not be loaded or queried."""


class MeshError(Error):
    """Tree construction, balancing, carving, or numbering failed."""


class EmptyMeshError(MeshError):
    """Carving removed every element (domain box does not meet the geometry)."""


class AssemblyError(Error):
    """Element or face evaluation produced an invalid contribution."""


class SolverError(Error):
    """Linear solver failed to converge or broke down.

    ``history`` holds the residual norms observed before the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class CodegenError(Error):
    """Kernel template rendering or IR serialization failed."""
