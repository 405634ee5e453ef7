"""Triangle meshes: I/O, sampling, distance fields and quality audits."""
from .audit import MeshAuditReport, audit_mesh, edge_face_counts, self_intersecting_pairs, triangles_intersect
from .boxes import rasterize_triangles, triangle_box_overlap
from .distance import closest_point_on_triangle, mesh_distance, point_triangle_distance
from .mesh import TriangleMesh, normalization_transform, normalize_mesh
from .obj import load_obj, read_obj, save_obj, write_obj
from .sampling import SurfaceSampleSet, sample_surface
from .sdf import SdfGrid, mesh_to_sdf_grid, ray_parity_inside, read_sdf, write_sdf

__all__ = [
    "MeshAuditReport", "SdfGrid", "SurfaceSampleSet", "TriangleMesh",
    "audit_mesh", "closest_point_on_triangle", "edge_face_counts", "load_obj",
    "mesh_distance", "mesh_to_sdf_grid", "normalization_transform", "normalize_mesh",
    "point_triangle_distance", "rasterize_triangles", "ray_parity_inside", "read_obj",
    "read_sdf", "sample_surface", "save_obj", "self_intersecting_pairs",
    "triangle_box_overlap", "triangles_intersect", "write_obj", "write_sdf",
]
