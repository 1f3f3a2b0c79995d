"""
Export utilities for run reports.

Writes report.json, CSV (and optionally Excel) tables, raw field dumps with
JSON sidecars, the bubble tree as JSON and DOT, and grayscale heatmaps of
energy densities. JSON documents are validated against the schemas shipped
in ``schemas/`` before they are written.
"""
import json
import logging
import math
import os
import shutil
from typing import Any, Dict, List, Optional, Union

import jsonschema
import numpy as np
import pandas as pd
from PIL import Image

from bubble_tree import tree_to_dot, tree_to_json
from errors import DataError
from gauge_holonomy import ConnectionSample
from sphere_geometry import ScalarField, build_grid

logger = logging.getLogger(__name__)

SCHEMA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "schemas")
SCHEMA_NAMES = ("report", "tree", "atoms", "condition")


def ensure_dir(path: str) -> str:
    """Ensure a directory exists."""
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def to_builtin(value: Any) -> Any:
    """Plain-JSON copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return [to_builtin(value.real), to_builtin(value.imag)]
    return value


def load_schema(name: str) -> Dict[str, Any]:
    with open(os.path.join(SCHEMA_DIR, f"{name}.schema.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def validate_document(data: Dict[str, Any], name: str) -> None:
    """Raise jsonschema.ValidationError when ``data`` does not match schema ``name``."""
    jsonschema.validate(instance=data, schema=load_schema(name))


def export_schemas(out_dir: str) -> List[str]:
    """Copy the shipped schemas into ``out_dir``."""
    ensure_dir(out_dir)
    written = []
    for name in SCHEMA_NAMES:
        target = os.path.join(out_dir, f"{name}.schema.json")
        shutil.copyfile(os.path.join(SCHEMA_DIR, f"{name}.schema.json"), target)
        written.append(target)
    logger.info(f"Successfully exported {len(written)} schemas to {out_dir}")
    return written


def write_json(data: Dict[str, Any], path: str, schema: Optional[str] = None) -> str:
    data = to_builtin(data)
    if schema is not None:
        validate_document(data, schema)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")
    logger.info(f"Successfully exported {os.path.basename(path)} to {path}")
    return path


def export_table(df: pd.DataFrame, out_dir: str, name: str, excel: bool = False) -> List[str]:
    """Write a table as CSV, plus .xlsx when requested."""
    ensure_dir(out_dir)
    paths = [os.path.join(out_dir, f"{name}.csv")]
    df.to_csv(paths[0], index=False, float_format="%.17g")
    if excel:
        paths.append(os.path.join(out_dir, f"{name}.xlsx"))
        df.to_excel(paths[1], index=False, engine="openpyxl")
    logger.info(f"Successfully exported table {name} ({len(df)} rows) to {out_dir}")
    return paths


# raw dumps -------------------------------------------------------------------------

def write_field_dump(field: ScalarField, out_dir: str, name: str) -> str:
    """Little-endian float64 values in grid order with a JSON sidecar."""
    ensure_dir(out_dir)
    path = os.path.join(out_dir, f"{name}.f64")
    np.ascontiguousarray(field.values, dtype="<f8").tofile(path)
    sidecar = {"kind": "field", "quantity": field.quantity or name, "L_max": field.grid.L_max,
               "shape": list(field.values.shape), "dtype": "<f8", "order": "lat,lon"}
    write_json(sidecar, path[:-4] + ".json")
    return path


def write_connection_dump(sample: ConnectionSample, path: str) -> str:
    """A_ρ then A_θ as interleaved (re, im) float64 pairs, radii and angles in the sidecar."""
    stacked = np.stack([sample.A_rho, sample.A_theta]).astype("<c16")
    stacked.view("<f8").tofile(path)
    sidecar = {"kind": "connection", "rho": sample.rho.tolist(), "n_theta": sample.n_theta,
               "shape": list(stacked.shape), "dtype": "<c16"}
    write_json(sidecar, os.path.splitext(path)[0] + ".json")
    return path


def _sidecar(path: str) -> Dict[str, Any]:
    side = os.path.splitext(path)[0] + ".json"
    if not os.path.exists(side):
        raise DataError(f"missing sidecar {side}")
    with open(side, "r", encoding="utf-8") as fh:
        return json.load(fh)


def read_field_dump(path: str) -> Union[ScalarField, ConnectionSample]:
    """Read back a field or connection dump written by this module."""
    meta = _sidecar(path)
    raw = np.fromfile(path, dtype="<f8")
    if meta.get("kind") == "connection":
        shape = tuple(meta["shape"])
        data = raw.view("<c16").reshape(shape)
        n_theta = int(meta["n_theta"])
        theta = 2 * np.pi * np.arange(n_theta) / n_theta
        return ConnectionSample(np.asarray(meta["rho"]), theta, data[0], data[1])
    grid = build_grid(int(meta["L_max"]))
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)) or shape != grid.shape:
        raise DataError(f"{path} holds {raw.size} values, sidecar expects {shape}")
    return ScalarField(raw.reshape(shape), grid, meta.get("quantity", ""))


# heatmaps --------------------------------------------------------------------------

def heatmap_pixels(field: ScalarField) -> np.ndarray:
    """Linear map of log(1 + e) to [0, 255], one pixel per grid node."""
    v = np.log1p(np.maximum(field.values, 0.0))
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.rint(255.0 * (v - lo) / (hi - lo)).astype(np.uint8)


def write_heatmap(field: ScalarField, out_dir: str, name: str) -> str:
    ensure_dir(out_dir)
    path = os.path.join(out_dir, f"{name}.pgm")
    image = Image.fromarray(heatmap_pixels(field))
    image.convert("L").save(path)
    logger.info(f"Successfully exported heatmap {name} to {path}")
    return path


# full run --------------------------------------------------------------------------

def emit_outputs(report, out_dir: str, excel: bool = False) -> List[str]:
    """Write every artifact a (possibly partial) run produced."""
    ensure_dir(out_dir)
    written = []
    try:
        for name, df in sorted(report.tables.items()):
            written += export_table(df, os.path.join(out_dir, "tables"), name, excel)
        for name, field in sorted(report.fields.items()):
            written.append(write_field_dump(field, os.path.join(out_dir, "fields"), name))
        for name, field in sorted(report.heatmaps.items()):
            written.append(write_heatmap(field, os.path.join(out_dir, "heatmaps"), name))
        if report.tree is not None:
            written.append(write_json(tree_to_json(report.tree), os.path.join(out_dir, "tree.json"), "tree"))
            dot = os.path.join(out_dir, "tree.dot")
            with open(dot, "w", encoding="utf-8") as fh:
                fh.write(tree_to_dot(report.tree))
            written.append(dot)
        atoms = report.results.get("atoms")
        if atoms is not None:
            written.append(write_json(atoms, os.path.join(out_dir, "atoms.json"), "atoms"))
        holonomy = report.results.get("holonomy")
        if holonomy is not None:
            for key in ("conic_model", "smooth_model"):
                validate_document(to_builtin(holonomy[key]), "condition")
        written.append(write_json(report.to_json(), os.path.join(out_dir, "report.json"), "report"))
    except OSError as e:
        logger.error(f"Error writing outputs to {out_dir}: {str(e)}")
        raise
    logger.info(f"Wrote {len(written)} files to {out_dir}")
    return written
