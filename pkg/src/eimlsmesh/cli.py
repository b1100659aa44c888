"""Command-line driver: preprocess, sample the field, adapt a mesh, or run all of it.

Exit codes: 0 ok, 2 I/O failure, 3 invalid configuration, 4 input data not
meeting preconditions (e.g. no normals), 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from ._validation import check_box, check_count, check_positive
from .adaptation import STATS_COLUMNS, adaptation_loop, default_domain
from .eimls import EimlsConfig, EimlsField, sample_on_grid, write_vtk_structured_points
from .isosurface import (extract_contour_2d, extract_surface_3d, write_polylines_csv,
                         write_polylines_vtk, write_surface_ply, write_surface_vtk)
from .mesh import MeshError
from .mesh_io import save_mesh
from .pointcloud import CloudFormatError, load_cloud, save_cloud
from .preprocessing import estimate_normals, grazing_angles, remove_outliers_density, subsample_octree

logger = logging.getLogger("eimlsmesh")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4, 5


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# (flag, type, default, help); ``nargs`` is "+" for list-valued flags
PREPROCESS_OPTIONS = [
    ("--outlier-k", int, 3, "neighbour rank used by the density outlier filter"),
    ("--outlier-dist", float, 0.30, "maximum distance to that neighbour"),
    ("--grazing-deg", float, 2.0, "minimum angle between scan ray and surface, degrees"),
    ("--leaf", float, 0.02, "octree leaf size for subsampling"),
    ("--normals-k", int, 100, "neighbourhood size for PCA normals; 0 keeps input normals"),
]
FIELD_OPTIONS = [
    ("--h0", float, 0.003, "minimum space parameter"),
    ("--gamma", float, 7.0, "weight floor exponent: weights below 10^-gamma are negligible"),
    ("--knn", int, 80, "number of nearest points summed per query"),
    ("--epsilon", float, None, "tanh truncation width (omit for the raw field)"),
]
ADAPT_OPTIONS = [
    ("--nodes", int, None, "node budget N (required)"),
    ("--iters", int, 10, "number of metric/remesh iterations"),
    ("--init-h", float, None, "spacing of the initial isotropic mesh"),
    ("--snapshots", bool, False, "write a VTK mesh after every iteration"),
]
COMMON_OPTIONS = [
    ("--dim", int, None, "force 2 (drop z) or 3"),
    ("--threads", int, 1, "worker cap for field evaluation"),
    ("--json", bool, False, "print machine-readable stats on stdout"),
]
PIPELINE_REQUIRED = ("input", "outdir", "nodes", "epsilon")


def _key(flag):
    return flag.lstrip("-")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add(parser, options):
    for flag, typ, default, help_ in options:
        if typ is bool:
            parser.add_argument(flag, action="store_true", help=help_)
        else:
            parser.add_argument(flag, type=typ, default=default, help=f"{help_} (default: {default})")


def _add_domain(parser):
    parser.add_argument("--domain", type=float, nargs="+", default=None,
                        metavar="X", help="box corners: x0 y0 [z0] x1 y1 [z1]")


def build_parser():
    p = _Parser(prog="eimlsmesh", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pre = sub.add_parser("preprocess", help="filter, subsample and estimate normals")
    pre.add_argument("input")
    pre.add_argument("output")
    pre.add_argument("--report", default=None, help="JSON report path (default: OUTPUT.report.json)")
    _add(pre, PREPROCESS_OPTIONS + COMMON_OPTIONS)

    fld = sub.add_parser("field", help="sample the implicit field on a regular grid")
    fld.add_argument("input")
    fld.add_argument("output")
    _add(fld, FIELD_OPTIONS)
    _add_domain(fld)
    fld.add_argument("--res", type=int, nargs="+", default=[200], help="grid points per axis (default: 200)")
    fld.add_argument("--plain-imls", action="store_true", help="constant bandwidth h0, NaN where undefined")
    _add(fld, COMMON_OPTIONS)

    ad = sub.add_parser("adapt", help="adapt a mesh to the zero level set")
    ad.add_argument("input")
    ad.add_argument("outdir")
    _add(ad, FIELD_OPTIONS + ADAPT_OPTIONS)
    _add_domain(ad)
    _add(ad, COMMON_OPTIONS)

    pipe = sub.add_parser("pipeline", help="run preprocess and adapt from a JSON config")
    pipe.add_argument("config")
    pipe.add_argument("--json", action="store_true", help="print machine-readable stats on stdout")
    return p


# --- validation -----------------------------------------------------------------

def _config_check(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_common(ns):
    if ns.dim not in (None, 2, 3):
        raise ConfigError(f"--dim must be 2 or 3, got {ns.dim}")
    _config_check(check_count, ns.threads, "--threads", minimum=1)


def _check_preprocess(ns):
    _config_check(check_count, ns.outlier_k, "--outlier-k", minimum=1)
    _config_check(check_positive, ns.outlier_dist, "--outlier-dist")
    _config_check(check_positive, ns.grazing_deg, "--grazing-deg", strict=False)
    if ns.grazing_deg >= 90:
        raise ConfigError("--grazing-deg must be below 90")
    _config_check(check_positive, ns.leaf, "--leaf")
    _config_check(check_count, ns.normals_k, "--normals-k", minimum=0)
    if ns.normals_k in (1, 2):
        raise ConfigError("--normals-k must be 0 or at least 3")


def _eimls_config(ns):
    return _config_check(EimlsConfig, ns.h0, ns.gamma, ns.knn, ns.epsilon)


def _domain(ns, cloud, pad):
    if ns.domain is None:
        return default_domain(cloud, pad)
    if len(ns.domain) != 2 * cloud.dim:
        raise ConfigError(f"--domain needs {2 * cloud.dim} numbers for a {cloud.dim}D cloud")
    return _config_check(check_box, ns.domain[:cloud.dim], ns.domain[cloud.dim:], cloud.dim)


# --- stages ------------------------------------------------------------------------

def _load(path, dim):
    cloud = load_cloud(path, dim=dim)
    if cloud.is_empty:
        raise DataError(f"{path}: the cloud is empty")
    return cloud


def run_preprocess(ns, cloud):
    """Returns (processed cloud, report dict)."""
    n_in = cloud.n_points
    removed = {}
    if 0 < ns.normals_k <= cloud.dim:
        raise ConfigError(f"--normals-k must be 0 or at least {cloud.dim + 1} for a {cloud.dim}D cloud")
    if ns.outlier_k >= cloud.n_points:
        raise DataError(f"--outlier-k {ns.outlier_k} needs more than {ns.outlier_k} points")
    cloud, removed["outliers"] = remove_outliers_density(cloud, ns.outlier_k, ns.outlier_dist)
    judge = cloud
    if cloud.normals is None and cloud.scan_origins is not None and ns.normals_k > 0 \
            and cloud.n_points > cloud.dim:
        # provisional normals, only to measure the incidence angle
        judge = estimate_normals(cloud, min(ns.normals_k, cloud.n_points))
    grazing_skipped = judge.normals is None or judge.scan_origins is None
    if grazing_skipped:
        removed["grazing"] = 0
    else:
        keep = grazing_angles(judge) >= ns.grazing_deg
        cloud = cloud.subset(keep)
        removed["grazing"] = int((~keep).sum())
    before = cloud.n_points
    cloud = subsample_octree(cloud, ns.leaf)
    removed["subsample"] = before - cloud.n_points
    if ns.normals_k > 0:
        if cloud.n_points <= cloud.dim:
            raise DataError("too few points left to estimate normals")
        cloud = estimate_normals(cloud, min(ns.normals_k, cloud.n_points))
    elif cloud.normals is None:
        raise DataError("--normals-k 0 keeps input normals, but the input has none")
    report = {
        "input_points": n_in,
        "output_points": cloud.n_points,
        "removed": removed,
        "grazing_skipped": grazing_skipped,
        "normals_estimated": ns.normals_k > 0,
        "normals_oriented": bool(cloud.oriented),
    }
    return cloud, report


def run_field(ns, cloud):
    if cloud.normals is None:
        raise DataError("the field needs a cloud with normals")
    config = _eimls_config(ns)
    lo, hi = _domain(ns, cloud, pad=1.0)
    res = ns.res * cloud.dim if len(ns.res) == 1 else ns.res
    if len(res) != cloud.dim or min(res) < 2:
        raise ConfigError(f"--res needs 1 or {cloud.dim} values, each >= 2")
    field = EimlsField(cloud, config, workers=ns.threads)
    values = sample_on_grid(field, lo, hi, res, truncated=config.epsilon is not None,
                            plain_h=ns.h0 if ns.plain_imls else None)
    write_vtk_structured_points(ns.output, values, lo, hi)
    return {
        "cells": int(values.size),
        "nan_cells": int(np.isnan(values).sum()),
        "min": float(np.nanmin(values)) if np.isfinite(values).any() else None,
        "max": float(np.nanmax(values)) if np.isfinite(values).any() else None,
        "domain": [lo.tolist(), hi.tolist()],
        "plain_imls": bool(ns.plain_imls),
    }


def _check_adapt(ns):
    if ns.nodes is None:
        raise ConfigError("--nodes is required")
    _config_check(check_count, ns.nodes, "--nodes", minimum=100)
    _config_check(check_count, ns.iters, "--iters", minimum=0)
    if ns.epsilon is None:
        raise ConfigError("--epsilon is required for adaptation")
    if ns.init_h is not None:
        _config_check(check_positive, ns.init_h, "--init-h")


def run_adapt(ns, cloud):
    if cloud.normals is None:
        raise DataError("adaptation needs a cloud with normals")
    config = _eimls_config(ns)
    lo, hi = _domain(ns, cloud, pad=0.5)
    os.makedirs(ns.outdir, exist_ok=True)
    callback = None
    if ns.snapshots:
        snapdir = os.path.join(ns.outdir, "snapshots")
        os.makedirs(snapdir, exist_ok=True)

        def callback(it, mesh):
            save_mesh(mesh, os.path.join(snapdir, f"mesh_{it:04d}.vtk"))

    res = adaptation_loop(cloud, config, ns.nodes, ns.iters, domain=(lo, hi), init_h=ns.init_h,
                          callback=callback, workers=ns.threads)
    mesh = res.mesh
    out = ns.outdir
    save_mesh(mesh, os.path.join(out, "mesh.vtk"))
    save_mesh(mesh, os.path.join(out, "mesh.json"))
    with open(os.path.join(out, "stats.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for row in res.history:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row.as_dict().values()])
    if mesh.dim == 2:
        lines = extract_contour_2d(mesh, res.alpha)
        write_polylines_csv(os.path.join(out, "contour.csv"), lines)
        write_polylines_vtk(os.path.join(out, "contour.vtk"), lines)
        level = {"polylines": len(lines), "closed": sum(p.closed for p in lines)}
    else:
        surf = extract_surface_3d(mesh, res.alpha)
        write_surface_ply(os.path.join(out, "surface.ply"), surf)
        write_surface_vtk(os.path.join(out, "surface.vtk"), surf)
        level = {"triangles": int(surf.triangles.shape[0]), "closed": surf.is_closed(),
                 "euler_characteristic": surf.euler_characteristic(), "area": surf.area()}
    last = res.history[-1]
    return {"nodes": mesh.n_nodes, "elements": mesh.n_elements, "iterations": ns.iters,
            "fraction_in_range": last.fraction_in_range, "level_set": level, "outdir": out}


# --- pipeline ------------------------------------------------------------------------

def _pipeline_namespace(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: the config must be a JSON object")
    doc = {k.replace("_", "-"): v for k, v in doc.items()}
    for key in PIPELINE_REQUIRED:
        if key not in doc:
            raise ConfigError(f"missing required key {key!r}")
    options = PREPROCESS_OPTIONS + FIELD_OPTIONS + ADAPT_OPTIONS + COMMON_OPTIONS
    known = {_key(f) for f, *_ in options} | {"input", "outdir", "domain"}
    for key in sorted(set(doc) - known):
        warnings.warn(f"ignoring unknown config key {key!r}", stacklevel=2)
    ns = argparse.Namespace(json=False)
    for flag, typ, default, _ in options:
        value = doc.get(_key(flag), default)
        if value is not None and typ is not bool:
            if typ is int and (isinstance(value, bool) or not float(value).is_integer()):
                raise ConfigError(f"config key {_key(flag)!r} must be an integer")
            value = typ(value)
        setattr(ns, _key(flag).replace("-", "_"), value)
    ns.input = str(doc["input"])
    ns.outdir = str(doc["outdir"])
    ns.domain = doc.get("domain")
    return ns


def run_pipeline(ns):
    cfg = _pipeline_namespace(ns.config)
    cfg.json = ns.json = ns.json or bool(cfg.json)
    _check_common(cfg)
    _check_preprocess(cfg)
    _check_adapt(cfg)
    _eimls_config(cfg)
    cloud = _load(cfg.input, cfg.dim)
    cloud, report = run_preprocess(cfg, cloud)
    os.makedirs(cfg.outdir, exist_ok=True)
    save_cloud(cloud, os.path.join(cfg.outdir, "preprocessed.ply"))
    with open(os.path.join(cfg.outdir, "preprocess_report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    stats = run_adapt(cfg, cloud)
    return {"preprocess": report, "adapt": stats}


# --- entry point ------------------------------------------------------------------------

def _dispatch(ns):
    if ns.command == "pipeline":
        return run_pipeline(ns)
    _check_common(ns)
    if ns.command == "preprocess":
        _check_preprocess(ns)
        cloud, report = run_preprocess(ns, _load(ns.input, ns.dim))
        save_cloud(cloud, ns.output, "ply-binary-le" if not ns.output.endswith((".xyz", ".txt")) else None)
        with open(ns.report or ns.output + ".report.json", "w") as fh:
            json.dump(report, fh, indent=2)
        return report
    if ns.command == "field":
        _eimls_config(ns)
        return run_field(ns, _load(ns.input, ns.dim))
    _check_adapt(ns)
    _eimls_config(ns)
    return run_adapt(ns, _load(ns.input, ns.dim))


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    ns = build_parser().parse_args(argv)
    try:
        stats = _dispatch(ns)
    except ConfigError as exc:
        print(f"eimlsmesh: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CloudFormatError, OSError) as exc:
        print(f"eimlsmesh: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AssertionError, MeshError) as exc:
        # mesh invariants are internal here: the CLI never reads meshes
        print(f"eimlsmesh: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataError, ValueError) as exc:
        print(f"eimlsmesh: input data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if ns.json:
        json.dump(stats, sys.stdout, indent=2, default=float)
        sys.stdout.write("\n")
    else:
        for key, val in stats.items():
            print(f"{key}: {val}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
