"""CSV ingestion/output and the binary model artifact.

Data CSVs have the header ``x,y,outcome,cov_1..cov_p`` (an optional
``fold`` column carries user-supplied fold labels); prediction-location
CSVs have ``x,y,cov_1..cov_p``. An intercept is added on read and never
written.

Model artifact layout::

    slgp-model
    version=1
    <key>=<JSON value>            one line per scalar/metadata entry
    array <name> <rows> <cols>    one line per array, in payload order
    end
    <payload>                     float64 little-endian, row-major

The payload starts immediately after the newline that ends ``end``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .conjugate import ConjugateFit, PriorSpec, augment_design
from .covariance import CovarianceSpec, MarginalOperator, OmegaOperator, ResidualCorrelation
from .geometry import KnotSet, SpatialDataset
from .model import SpatialModel

MAGIC = "slgp-model"
SCHEMA_VERSION = 1


class InputError(ValueError):
    pass


def fmt(v: float) -> str:
    """Shortest decimal text that parses back to the same double."""
    return repr(float(v))


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file, header row required") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _covariate_columns(header, path):
    covs = [h for h in header if h.startswith("cov_")]
    expected = [f"cov_{i}" for i in range(1, len(covs) + 1)]
    if covs != expected:
        raise InputError(f"{path}: covariate columns must be named {expected}, got {covs}")
    return covs


def read_dataset(path, sqrt_transform=False, dedupe=False) -> tuple[SpatialDataset, np.ndarray | None]:
    """Read a data CSV; returns the dataset and the fold column if present."""
    header, data = _read_rows(path)
    for col in ("x", "y", "outcome"):
        if col not in header:
            raise InputError(f"{path}: missing column {col!r}")
    covs = _covariate_columns(header, path)
    extra = set(header) - {"x", "y", "outcome", "fold", *covs}
    if extra:
        raise InputError(f"{path}: unexpected columns {sorted(extra)}")
    col = {h: i for i, h in enumerate(header)}
    coords = data[:, [col["x"], col["y"]]]
    y = data[:, col["outcome"]]
    X = np.column_stack([np.ones(len(data))] + [data[:, col[c]] for c in covs])
    folds = data[:, col["fold"]].astype(int) if "fold" in col else None
    if len(data) == 0:
        raise InputError(f"{path}: no data rows")
    if sqrt_transform:
        if np.any(y < 0):
            raise InputError(f"{path}: square-root transform needs nonnegative outcomes")
        y = np.sqrt(y)
    if dedupe:
        coords, y, X, folds = dedupe_rows(coords, y, X, folds)
    return SpatialDataset(coords, y, X), folds


def dedupe_rows(coords, y, X, folds=None):
    """Collapse exact duplicate locations, averaging outcomes and covariates."""
    uniq, first, inv = np.unique(coords, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    if len(uniq) == len(coords):
        return coords, y, X, folds
    keep = np.sort(first)
    rank = np.empty(len(uniq), dtype=int)
    rank[np.argsort(first)] = np.arange(len(uniq))
    group = rank[inv]
    counts = np.bincount(group)
    y_out = np.bincount(group, weights=y) / counts
    X_out = np.column_stack([np.bincount(group, weights=X[:, j]) / counts for j in range(X.shape[1])])
    f_out = None if folds is None else folds[keep]
    return coords[keep], y_out, X_out, f_out


def read_locations(path) -> tuple[np.ndarray, np.ndarray]:
    """Read prediction locations; ``outcome`` and ``fold`` columns are ignored."""
    header, data = _read_rows(path)
    for col in ("x", "y"):
        if col not in header:
            raise InputError(f"{path}: missing column {col!r}")
    covs = _covariate_columns(header, path)
    extra = set(header) - {"x", "y", "outcome", "fold", *covs}
    if extra:
        raise InputError(f"{path}: unexpected columns {sorted(extra)}")
    col = {h: i for i, h in enumerate(header)}
    coords = data[:, [col["x"], col["y"]]]
    X = np.column_stack([np.ones(len(data))] + [data[:, col[c]] for c in covs])
    return coords, X


def write_dataset(path, ds: SpatialDataset, idx=None) -> None:
    idx = np.arange(ds.n) if idx is None else np.asarray(idx)
    p = ds.p - 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "outcome"] + [f"cov_{i}" for i in range(1, p + 1)])
        for i in idx:
            w.writerow([fmt(ds.coords[i, 0]), fmt(ds.coords[i, 1]), fmt(ds.y[i])] + [fmt(v) for v in ds.X[i, 1:]])


def write_table(path, header, columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def coords_digest(coords) -> str:
    return hashlib.sha256(np.ascontiguousarray(coords, dtype="<f8").tobytes()).hexdigest()


def save_model(path, model: SpatialModel, extra: dict | None = None) -> None:
    post = model.fit
    meta = {
        "schema_version": SCHEMA_VERSION,
        "variant": model.variant,
        "coords_digest": coords_digest(model.coords),
        "alpha": model.cov.alpha,
        "phi": model.cov.phi,
        "m": model.m,
        "n": post.n,
        "p": post.p,
        "r": post.r,
        "ordering": model.ordering,
        "jitter": None if model.rc is None else model.rc.jitter,
        "a_sigma": model.prior.a_sigma,
        "b_sigma": model.prior.b_sigma,
        "a_star": post.a_star,
        "b_star": post.b_star,
    }
    meta.update(extra or {})
    arrays = {
        "coords": model.coords,
        "y": model.y,
        "X": model.X,
        "mu_beta": model.prior.mu_beta,
        "V_beta": model.prior.V_beta,
        "g": post.g,
        "V": post.V,
    }
    if model.rc is not None:
        arrays["knots"] = model.rc.knots.knots
    lines = [MAGIC, f"version={SCHEMA_VERSION}"]
    lines += [f"{k}={json.dumps(v)}" for k, v in meta.items()]
    blobs = []
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        a2 = a.reshape(len(a), -1) if a.ndim else a.reshape(1, 1)
        lines.append(f"array {name} {a2.shape[0]} {a2.shape[1]}")
        blobs.append(np.ascontiguousarray(a2).tobytes())
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for b in blobs:
            fh.write(b)


def read_artifact(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    meta, specs = {}, []
    pos = 0
    first = True
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise InputError(f"{path}: truncated header")
        line = raw[pos:nl].decode("utf-8")
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise InputError(f"{path}: not a model artifact")
            first = False
            continue
        if line == "end":
            break
        if line.startswith("array "):
            _, name, rows, cols = line.split()
            specs.append((name, int(rows), int(cols)))
        else:
            key, _, val = line.partition("=")
            meta[key] = int(val) if key == "version" else json.loads(val)
    if meta.get("version") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported artifact version {meta.get('version')}")
    arrays = {}
    for name, rows, cols in specs:
        nbytes = rows * cols * 8
        if pos + nbytes > len(raw):
            raise InputError(f"{path}: payload size mismatch (array {name} truncated)")
        arrays[name] = np.frombuffer(raw[pos : pos + nbytes], dtype="<f8").reshape(rows, cols).astype(float)
        pos += nbytes
    if pos != len(raw):
        raise InputError(f"{path}: payload size mismatch")
    return meta, arrays


def load_model(path) -> tuple[SpatialModel, dict]:
    """Rebuild a prediction-ready model from an artifact (no sparse factor)."""
    meta, arr = read_artifact(path)
    coords = arr["coords"]
    if coords_digest(coords) != meta["coords_digest"]:
        raise InputError(f"{path}: coordinate digest mismatch")
    cov = CovarianceSpec(meta["phi"], meta["alpha"])
    prior = PriorSpec(arr["mu_beta"].ravel(), arr["V_beta"], meta["a_sigma"], meta["b_sigma"])
    X = arr["X"]
    if meta["variant"] == "slgp":
        rc = ResidualCorrelation(KnotSet(arr["knots"]), cov.phi, cov.alpha, meta["jitter"])
        op = OmegaOperator(coords, rc)
        design = augment_design(X, rc.J_from_loadings(op.H), rc, prior)
    else:
        rc = None
        op = MarginalOperator(coords, cov.phi, cov.alpha)
        design = augment_design(X, prior=prior)
    n, p, r = meta["n"], meta["p"], meta["r"]
    post = ConjugateFit(None, None, arr["g"].ravel(), arr["V"], meta["a_star"], meta["b_star"], n, p, r)
    model = SpatialModel(
        cov, meta["m"], prior, np.arange(n), coords, arr["y"].ravel(), X, rc, op, design, None, post, meta["ordering"]
    )
    return model, meta
