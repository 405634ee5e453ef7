"""Exception hierarchy shared by every stage of the pipeline."""


class PonqError(Exception):
    """Base class for all errors raised by this package."""


class ObjParseError(PonqError, ValueError):
    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MeshStructureError(PonqError, ValueError):
    """Mesh arrays violate the indexed-triangle invariants."""


class GeometryError(PonqError, ValueError):
    """Input is structurally valid but geometrically unusable."""


class NotWatertightError(GeometryError):
    def __init__(self, report):
        super().__init__(
            f"mesh is not watertight ({report.boundary_edge_count} boundary edges)"
        )
        self.report = report


class FormatError(PonqError, ValueError):
    """Binary payload has a bad magic, version or length."""


class ExtractionError(PonqError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DiffusionError(PonqError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
