"""CSV persistence for trajectories, certificate reports and study reports.

Every file starts with ``# key = value`` metadata lines (schema version,
config hash, and for reports the partial flag).  Floats are written with
``repr`` (shortest round-trip form), so loading reproduces the stored values
bit for bit.
"""
from __future__ import annotations

import csv
import math
import os

import numpy as np

from .errors import SchemaError
from .evolver import CertificateReport, Trajectory

TRAJ_SCHEMA = "homoglab-traj/1"
REPORT_SCHEMA = "homoglab-report/1"
CERT_SCHEMA = "homoglab-cert/1"


def _f(x):
    return repr(float(x))


def output_path(path, default_dir=None):
    """Resolve an output path; ``HOMOGLAB_OUT`` overrides the output directory."""
    env = os.environ.get("HOMOGLAB_OUT")
    if os.path.isabs(path):
        return path
    base = env or default_dir
    return os.path.join(base, path) if base else path


def _write_meta(fh, meta):
    for key in meta:
        fh.write(f"# {key} = {meta[key]}\n")


def _read_table(path):
    meta, rows = {}, []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    rows = list(reader)
    return meta, header, rows


def _check_schema(meta, schema, path, config_hash=None):
    if meta.get("schema") != schema:
        raise SchemaError(f"{path}: expected schema {schema}, found {meta.get('schema')!r}")
    if config_hash is not None and meta.get("config_hash", "none") not in ("none", config_hash):
        raise SchemaError(f"{path}: config hash {meta.get('config_hash')} does not match {config_hash}")


# -- trajectories --------------------------------------------------------------

def persist_trajectory(traj: Trajectory, path, config_hash="none"):
    """Long format ``t,x,u,w,z``: node rows leave z blank, midpoint rows u and w."""
    meta = {"schema": TRAJ_SCHEMA, "config_hash": config_hash}
    for k in sorted(traj.meta):
        meta[f"meta.{k}"] = repr(traj.meta[k]) if isinstance(traj.meta[k], float) else traj.meta[k]
    xm = traj.xm
    with open(path, "w", newline="") as fh:
        _write_meta(fh, meta)
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "u", "w", "z"])
        for n, t in enumerate(traj.t):
            ts = _f(t)
            for j, x in enumerate(traj.x):
                wr.writerow([ts, _f(x), _f(traj.u[n, j]), _f(traj.w[n, j]), ""])
            for e, x in enumerate(xm):
                wr.writerow([ts, _f(x), "", "", _f(traj.z[n, e])])


def _meta_value(v):
    if v == "None":
        return None
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def load_trajectory(path, config_hash=None) -> Trajectory:
    meta, header, rows = _read_table(path)
    _check_schema(meta, TRAJ_SCHEMA, path, config_hash)
    if header != ["t", "x", "u", "w", "z"]:
        raise SchemaError(f"{path}: unexpected trajectory header {header}")
    ts, xs, U, W, Z = [], [], {}, {}, {}
    xm_set = {}
    for t, x, u, w, z in rows:
        tf, xf = float(t), float(x)
        if tf not in U:
            ts.append(tf)
            U[tf], W[tf], Z[tf] = [], [], []
        if z == "":
            if tf == ts[0]:
                xs.append(xf)
            U[tf].append(float(u))
            W[tf].append(float(w))
        else:
            Z[tf].append(float(z))
            xm_set[xf] = True
    t = np.array(ts)
    m = {k[5:]: _meta_value(v) for k, v in meta.items() if k.startswith("meta.")}
    return Trajectory(t, np.array(xs), np.array([U[s] for s in ts]), np.array([W[s] for s in ts]),
                      np.array([Z[s] for s in ts]), [], m)


# -- certificate reports ---------------------------------------------------------

def persist_certificate(rep: CertificateReport, path, run_id="run", config_hash="none"):
    with open(path, "w", newline="") as fh:
        _write_meta(fh, {"schema": CERT_SCHEMA, "config_hash": config_hash,
                         "representative": rep.representative, "scale": _f(rep.scale)})
        wr = csv.writer(fh)
        wr.writerow(["run_id", "step", "alpha", "gamma"])
        for n, (a, g) in enumerate(zip(rep.per_step_alpha, rep.per_step_gamma), start=1):
            wr.writerow([run_id, n, _f(a), _f(g)])
        wr.writerow([run_id, "total", _f(rep.alpha), _f(rep.gamma)])


# -- study reports -----------------------------------------------------------------

REPORT_COLUMNS = ["run_id", "eps", "n_el", "status", "error_L2", "rel_error", "cert_alpha",
                  "cert_gamma", "cert_total", "cert_scale", "u_L2H1", "z_L2", "w_LinfL2",
                  "dtw_L2Hm1", "twoscale_gap", "corrector_error", "config_hash", "message"]


def _cell(v):
    if isinstance(v, float):
        return _f(v)
    return "" if v is None else str(v)


def persist_report(report, path):
    meta = {"schema": REPORT_SCHEMA, "config_hash": report.config_hash,
            "partial": "true" if report.partial else "false"}
    for k in sorted(report.meta):
        meta[f"meta.{k}"] = report.meta[k]
    with open(path, "w", newline="") as fh:
        _write_meta(fh, meta)
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        for row in report.rows:
            wr.writerow([_cell(row.get(c)) for c in REPORT_COLUMNS])


def load_report(path, config_hash=None):
    from .study import StudyReport
    meta, header, rows = _read_table(path)
    _check_schema(meta, REPORT_SCHEMA, path, config_hash)
    if header != REPORT_COLUMNS:
        raise SchemaError(f"{path}: unexpected report columns")
    out = []
    for r in rows:
        row = dict(zip(header, r))
        for c in REPORT_COLUMNS:
            if c in ("run_id", "status", "config_hash", "message"):
                continue
            if c == "n_el":
                row[c] = int(row[c]) if row[c] else None
            else:
                row[c] = float(row[c]) if row[c] else math.nan
        out.append(row)
    m = {k[5:]: v for k, v in meta.items() if k.startswith("meta.")}
    return StudyReport(out, meta["config_hash"], meta["partial"] == "true", m)
