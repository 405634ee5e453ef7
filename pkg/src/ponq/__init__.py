"""Shapes as per-cell points, normals and quadrics on a voxel grid, with
closed-surface extraction, occupancy masking, latent diffusion plumbing and
generation metrics."""

__version__ = "0.1.0"

from .errors import (
    DiffusionError, ExtractionError, FormatError, GeometryError, MeshStructureError, NotWatertightError,
    ObjParseError, PonqError,
)
from .extraction import extract_mesh
from .geometry import TriangleMesh, audit_mesh, read_obj, write_obj
from .rep import FitConfig, PoNQGrid, encode_mesh, read_ponq, write_ponq

__all__ = [
    "DiffusionError", "ExtractionError", "FitConfig", "FormatError", "GeometryError", "MeshStructureError",
    "NotWatertightError", "ObjParseError", "PoNQGrid", "PonqError", "TriangleMesh", "audit_mesh",
    "encode_mesh", "extract_mesh", "read_obj", "read_ponq", "write_obj", "write_ponq",
]
