"""Command-line entry point: ``ponq <subcommand> ...``.

Exit codes: 0 ok, 2 I/O, 3 geometry, 4 extraction, 5 format, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diffusion import DatasetNearestDenoiser, NormStats, make_linear_schedule, normalize, denormalize, sample
from .errors import (
    DiffusionError, ExtractionError, FormatError, GeometryError, MeshStructureError, ObjParseError, PonqError,
)
from .extraction import extract_mesh
from .geometry import audit_mesh, mesh_to_sdf_grid, normalize_mesh, read_obj, read_sdf, write_obj, write_sdf
from .metrics import EvalConfig, evaluate_generation
from .occupancy import (
    LatentGrid, latent_from_occupancy, mask_apply, occupancy_from_mesh, read_latent, read_occupancy, write_latent,
    write_occupancy,
)
from .qem import cluster_decimate
from .rep import FitConfig, encode_mesh, loss_summary, read_ponq, write_ponq
from .seeding import SEED_MAX, derive_seed

log = logging.getLogger("ponq")

EXIT_OK, EXIT_ERROR, EXIT_IO, EXIT_GEOMETRY, EXIT_EXTRACTION, EXIT_FORMAT = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --- argument types --------------------------------------------------------

def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _int_at_least(lo: int):
    def parse(text: str) -> int:
        v = int(text)
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}")
        return v
    return parse


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EXIT_IO) from exc


def _load_mesh(path, normalize: bool = False):
    try:
        mesh = read_obj(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc
    if normalize:
        if mesh.n_faces == 0:
            raise CliError(f"{path}: mesh has no faces", EXIT_GEOMETRY)
        mesh = normalize_mesh(mesh)
    return mesh


def _save_mesh(path, mesh, precision=None):
    try:
        write_obj(path, mesh, precision)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EXIT_IO) from exc


# --- subcommands -----------------------------------------------------------

def cmd_encode(args) -> int:
    mesh = _load_mesh(args.mesh)
    config = FitConfig(K=args.K, seed=derive_seed(args.seed, "encode.fit"))
    res = encode_mesh(
        mesh, args.N, args.K, args.samples, derive_seed(args.seed, "encode.sample"),
        config=config, normalize=not args.no_normalize, full_output=True,
    )
    _write_bytes(args.out, write_ponq(res.grid))
    losses = loss_summary(res.grid, res.bins, res.samples, config)
    print(f"occupied cells: {res.grid.n_cells}")
    print(f"samples stored: {res.grid.n_samples}")
    for k, v in losses.items():
        print(f"{k}: {v:.6e}")
    return EXIT_OK


def cmd_extract(args) -> int:
    grid = read_ponq(_read_bytes(args.ponq))
    if args.mask:
        mask = read_occupancy(_read_bytes(args.mask), grid.bounds)
        if mask.N != grid.N:
            raise CliError(f"mask resolution {mask.N} does not match grid resolution {grid.N}", EXIT_FORMAT)
        grid = mask_apply(grid, mask)
    mesh = extract_mesh(grid)
    _save_mesh(args.out, mesh)
    _print_audit(mesh, not args.skip_self_intersections)
    return EXIT_OK


def cmd_decimate(args) -> int:
    mesh = _load_mesh(args.mesh)
    out = cluster_decimate(mesh, args.res)
    _save_mesh(args.out, out)
    print(f"vertices: {mesh.n_vertices} -> {out.n_vertices}")
    print(f"faces: {mesh.n_faces} -> {out.n_faces}")
    return EXIT_OK


def cmd_occupancy(args) -> int:
    mesh = _load_mesh(args.mesh, normalize=not args.no_normalize)
    occ = occupancy_from_mesh(mesh, args.N)
    _write_bytes(args.out, write_occupancy(occ))
    print(f"occupied cells: {int(occ.values.sum())} of {args.N ** 3}")
    return EXIT_OK


def cmd_sdf(args) -> int:
    mesh = _load_mesh(args.mesh)
    _write_bytes(args.out, write_sdf(mesh_to_sdf_grid(mesh, args.res, args.padding)))
    return EXIT_OK


def _library(path, n: int) -> list[LatentGrid]:
    d = Path(path)
    if not d.is_dir():
        raise CliError(f"library directory {d} does not exist", EXIT_IO)
    out = []
    for p in sorted(d.iterdir()):
        suffix = p.suffix.lower()
        if suffix == ".latg":
            out.append(read_latent(_read_bytes(p)))
        elif suffix == ".obj":
            out.append(latent_from_occupancy(occupancy_from_mesh(_load_mesh(p, normalize=True), n)))
        else:
            continue
        log.info("library element %d: %s", len(out) - 1, p.name)
    if not out:
        raise CliError(f"no .latg or .obj files in {d}", EXIT_IO)
    shapes = {lat.values.shape for lat in out}
    if len(shapes) > 1:
        raise CliError(f"library latents differ in shape: {sorted(shapes)}", EXIT_FORMAT)
    return out


def cmd_diffuse_demo(args) -> int:
    library = _library(args.library, args.N)
    normed, stats = [], []
    for lat in library:
        z, st = normalize(lat.values, NormStats(*lat.stats) if lat.stats else None)
        normed.append(z)
        stats.append(st)
    schedule = make_linear_schedule(args.steps, args.beta_start, args.beta_end)
    denoiser = DatasetNearestDenoiser(normed, schedule)
    z0 = sample(denoiser, normed[0].shape, schedule, derive_seed(args.seed, "diffuse.sample"))
    j = denoiser.nearest(z0)
    # denormalize with the stats of the library element the sample landed on
    st = stats[j]
    out = LatentGrid(denormalize(z0, st).astype(np.float32), library[j].bounds, st.as_tuple())
    _write_bytes(args.out, write_latent(out))
    print(f"nearest library element: {j}")
    print(f"max deviation from it: {float(np.abs(out.values - library[j].values).max()):.3e}")
    return EXIT_OK


def cmd_eval_gen(args) -> int:
    for d in (args.gen_dir, args.ref_dir):
        if not Path(d).is_dir():
            raise CliError(f"{d} is not a directory", EXIT_IO)
    config = EvalConfig(n_points=args.points, seed=args.seed, self_intersections=not args.skip_self_intersections)
    try:
        report = evaluate_generation(args.gen_dir, args.ref_dir, config)
    except PonqError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    for e in report.errors:
        print(f"error: {e}", file=sys.stderr)
    _write_bytes(args.out, (json.dumps(report.to_dict(), indent=2) + "\n").encode())
    table = report.table()
    if args.table:
        _write_bytes(args.table, table.encode())
    print(table, end="")
    return EXIT_OK


def _print_audit(mesh, self_intersections=True):
    rep = audit_mesh(mesh, self_intersections=self_intersections)
    print(f"vertices: {mesh.n_vertices}")
    print(f"faces: {mesh.n_faces}")
    print(f"watertight: {str(rep.watertight).lower()}")
    print(f"boundary edges: {rep.boundary_edge_count}")
    print(f"non-manifold edges: {rep.non_manifold_edge_count}")
    if self_intersections:
        print(f"self-intersecting pairs: {rep.self_intersection_pair_count}")
    return rep


def cmd_check(args) -> int:
    mesh = _load_mesh(args.mesh)
    _print_audit(mesh, not args.skip_self_intersections)
    return EXIT_OK


def _info_lines(data: bytes) -> list[str]:
    magic = data[:4]
    if magic == b"PONQ":
        g = read_ponq(data)
        lines = [f"magic: PONQ", "version: 1", f"N: {g.N}", f"K: {g.K}", f"occupied cells: {g.n_cells}",
                 f"samples: {g.n_samples}", f"bounds: {list(g.bounds)}"]
        if g.n_samples:
            lines.append(f"point range: {g.points.min(axis=0).tolist()} .. {g.points.max(axis=0).tolist()}")
        return lines
    if magic == b"OCCG":
        o = read_occupancy(data)
        return ["magic: OCCG", "version: 1", f"N: {o.N}", f"occupied cells: {int(o.values.sum())}"]
    if magic == b"LATG":
        lat = read_latent(data)
        v = lat.values
        lines = ["magic: LATG", f"version: {1 if lat.stats is None else 2}", f"c: {lat.c}", f"n: {lat.n}",
                 f"bounds: {list(lat.bounds)}", f"value range: {float(v.min())} .. {float(v.max())}",
                 f"value mean: {float(v.mean())}"]
        if lat.stats is not None:
            lines.append(f"norm stats: {list(lat.stats)}")
        return lines
    if magic == b"SDFG":
        s = read_sdf(data)
        return ["magic: SDFG", "version: 1", f"resolution: {list(s.resolution)}", f"origin: {list(s.origin)}",
                f"spacing: {s.spacing}", f"value range: {float(s.values.min())} .. {float(s.values.max())}",
                f"inside nodes: {int((s.values < 0).sum())}"]
    from .geometry import load_obj

    try:
        mesh = load_obj(data)
    except (ObjParseError, MeshStructureError, UnicodeDecodeError) as exc:
        raise FormatError(f"unrecognized file (magic {magic!r}): {exc}") from exc
    lo, hi = mesh.bounds() if mesh.n_vertices else (np.zeros(3), np.zeros(3))
    return ["format: OBJ", f"vertices: {mesh.n_vertices}", f"faces: {mesh.n_faces}",
            f"bounds: {lo.tolist()} .. {hi.tolist()}"]


def cmd_info(args) -> int:
    for line in _info_lines(_read_bytes(args.file)):
        print(line)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror or exc}", EXIT_IO) from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value", EXIT_FORMAT)
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.lstrip("-").replace("-", "_")] = v.strip().strip('"').strip("'")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ponq", description="Point/normal/quadric shape pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log more (repeatable)")
    p.add_argument("--config", help="file of key = value defaults for the subcommand")
    sub = p.add_subparsers(dest="command", required=True)

    def seed_arg(sp):
        sp.add_argument("--seed", type=_seed, default=0, help="run seed, unsigned 64-bit (default 0)")

    sp = sub.add_parser("encode", help="encode an OBJ mesh into a PONQ grid")
    sp.add_argument("mesh")
    sp.add_argument("--N", "-N", type=_int_at_least(2), default=32, help="grid resolution (default 32)")
    sp.add_argument("--K", "-K", type=_int_at_least(1), default=1, help="samples per cell (default 1)")
    sp.add_argument("--samples", type=_int_at_least(1), default=100_000, help="surface samples (default 100000)")
    sp.add_argument("--no-normalize", action="store_true", help="skip scaling into [-0.45, 0.45]^3")
    seed_arg(sp)
    sp.add_argument("--out", "-o", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("extract", help="extract a closed mesh from a PONQ grid")
    sp.add_argument("ponq")
    sp.add_argument("--mask", help="OCCG occupancy mask to apply first")
    sp.add_argument("--skip-self-intersections", action="store_true")
    sp.add_argument("--out", "-o", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("decimate", help="vertex-clustering QEM decimation")
    sp.add_argument("mesh")
    sp.add_argument("--res", type=_int_at_least(1), default=16, help="clustering resolution (default 16)")
    sp.add_argument("--out", "-o", required=True)
    sp.set_defaults(func=cmd_decimate)

    sp = sub.add_parser("occupancy", help="crust occupancy grid of a mesh")
    sp.add_argument("mesh")
    sp.add_argument("--N", "-N", type=_int_at_least(2), default=32)
    sp.add_argument("--no-normalize", action="store_true")
    sp.add_argument("--out", "-o", required=True)
    sp.set_defaults(func=cmd_occupancy)

    sp = sub.add_parser("sdf", help="signed distance grid of a closed mesh")
    sp.add_argument("mesh")
    sp.add_argument("--res", type=_int_at_least(2), default=32)
    sp.add_argument("--padding", type=float, default=0.05)
    sp.add_argument("--out", "-o", required=True)
    sp.set_defaults(func=cmd_sdf)

    sp = sub.add_parser("diffuse-demo", help="sample a latent with the dataset-nearest denoiser")
    sp.add_argument("--library", required=True, help="directory of .latg latents or .obj meshes")
    sp.add_argument("--steps", type=_int_at_least(1), default=1000)
    sp.add_argument("--beta-start", type=float, default=1e-4)
    sp.add_argument("--beta-end", type=float, default=0.02)
    sp.add_argument("--N", "-N", type=_int_at_least(2), default=16, help="latent resolution for .obj library files")
    seed_arg(sp)
    sp.add_argument("--out", "-o", required=True)
    sp.set_defaults(func=cmd_diffuse_demo)

    sp = sub.add_parser("eval-gen", help="generation metrics of one OBJ directory against another")
    sp.add_argument("gen_dir")
    sp.add_argument("ref_dir")
    sp.add_argument("--points", type=_int_at_least(1), default=2048, help="points sampled per mesh (default 2048)")
    sp.add_argument("--skip-self-intersections", action="store_true")
    seed_arg(sp)
    sp.add_argument("--out", "-o", required=True, help="JSON report path")
    sp.add_argument("--table", help="also write the text table here")
    sp.set_defaults(func=cmd_eval_gen)

    sp = sub.add_parser("check", help="audit an OBJ mesh")
    sp.add_argument("mesh")
    sp.add_argument("--skip-self-intersections", action="store_true")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("info", help="describe any file this tool writes")
    sp.add_argument("file")
    sp.set_defaults(func=cmd_info)
    return p


_BOOL = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def _apply_config(parser: argparse.ArgumentParser, argv, config: dict[str, str]) -> None:
    """Install config values as defaults of the invoked subcommand; explicit flags still win."""
    choices = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    command = next((t for t in argv if t in choices), None)
    if command is None:
        return
    sub = choices[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in config.items():
        if k not in known or k == "help":
            raise CliError(f"config key {k!r} is not an option of {command}", EXIT_FORMAT)
        action = known[k]
        if isinstance(action, argparse._StoreTrueAction):
            if v.lower() not in _BOOL:
                raise CliError(f"config key {k!r} expects a boolean", EXIT_FORMAT)
            defaults[k] = _BOOL[v.lower()]
        else:
            # argparse converts string defaults with the option's type
            defaults[k] = v
            if action.option_strings:
                action.required = False
            else:
                action.nargs = "?"
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("-v", "--verbose", action="count", default=0)
    early, _ = pre.parse_known_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(early.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
    )
    try:
        if early.config:
            _apply_config(parser, argv, _read_config(early.config))
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"ponq: error: {exc}", file=sys.stderr)
        return exc.code
    except ExtractionError as exc:
        print(f"ponq: extraction failed: {exc}", file=sys.stderr)
        for k, v in exc.diagnostics.items():
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_EXTRACTION
    except (FormatError, ObjParseError) as exc:
        print(f"ponq: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (GeometryError, MeshStructureError) as exc:
        print(f"ponq: geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except OSError as exc:
        print(f"ponq: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DiffusionError, PonqError) as exc:
        print(f"ponq: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
