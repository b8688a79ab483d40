"""On-disk formats for tensors, datasets, chains and result tables.

Tensor file (``.btq``)
    An ASCII header of newline-terminated lines followed by the raw payload::

        BTQ1
        dims 250 16 16
        dtype float64
        endian little
        count 64000
        END

    The payload is ``8 * count`` bytes of little-endian IEEE-754 doubles in
    row-major order, starting right after the ``END`` line.

Dataset directory
    ``records.csv`` (subject, visit, time, y; one row per observed record,
    0-based subject and visit), ``images.btq`` (N, *dims) in record order,
    ``covariates.csv`` (one row per subject, may have no columns) and
    ``meta.json`` (n_subjects, n_visits, dims).

Chain archive directory
    ``manifest.json`` (sampler config, hyperparameters, dims, package version
    and an index of stored arrays), one ``.btq`` file per array-valued draw
    group (``B0``, ``Bt``, ``pi``, ``b0i``, ``eta``) and ``scalars.csv`` with one
    column per scalar draw series.

Text files write floats with ``repr`` so every value reads back bit-exactly.
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .inference import ChainOutput
from .model import Dataset

MAGIC = "BTQ1"
_MAX_HEADER = 4096
_ARRAY_GROUPS = ("B0", "Bt", "pi", "b0i", "eta")


class FormatError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _fmt(x) -> str:
    return repr(float(x))


def encode_tensor(arr) -> bytes:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 0:
        raise FormatError("cannot store a 0-d array as a tensor file")
    header = f"{MAGIC}\ndims {' '.join(str(p) for p in a.shape)}\ndtype float64\nendian little\ncount {a.size}\nEND\n"
    return header.encode("ascii") + np.ascontiguousarray(a).astype("<f8").tobytes()


def decode_tensor(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    end = raw.find(b"END\n", 0, _MAX_HEADER)
    if not raw.startswith(MAGIC.encode() + b"\n"):
        raise FormatError(f"{source}: bad magic at byte 0, expected {MAGIC!r}")
    if end < 0:
        raise FormatError(f"{source}: no END line within the first {_MAX_HEADER} bytes")
    offset = end + 4
    fields = {}
    for line in raw[:end].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        dims = tuple(int(v) for v in fields["dims"].split())
        count = int(fields["count"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{source}: malformed header ({exc})") from None
    if fields.get("dtype") != "float64" or fields.get("endian") != "little":
        raise FormatError(f"{source}: unsupported element type {fields.get('dtype')}/{fields.get('endian')}")
    if any(p < 0 for p in dims) or int(np.prod(dims)) != count:
        raise FormatError(f"{source}: dims {dims} disagree with count {count}")
    expected = 8 * count
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(f"{source}: payload at byte offset {offset} has {actual} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(dims)


def write_tensor(path, arr):
    _atomic_write(Path(path), encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    return decode_tensor(path.read_bytes(), str(path))


def _write_csv(path: Path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file, expected a header row")
    return rows[0], rows[1:]


def write_json(path, obj):
    _atomic_write(Path(path), (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path):
    return json.loads(Path(path).read_text())


def write_dataset(directory, data: Dataset):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "records.csv", ["subject", "visit", "time", "y"],
               ([int(s), int(v), _fmt(t), _fmt(y)] for s, v, t, y in zip(data.subject, data.visit, data.time, data.y)))
    write_tensor(d / "images.btq", data.X)
    _write_csv(d / "covariates.csv", [f"z{k}" for k in range(data.n_covariates)],
               ([_fmt(v) for v in row] for row in data.Z))
    write_json(d / "meta.json", {"n_subjects": data.n_subjects, "n_visits": data.n_visits, "dims": list(data.dims)})


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "records.csv").exists():
        raise FormatError(f"{d}: not a dataset directory (records.csv missing)")
    meta = read_json(d / "meta.json")
    header, rows = _read_csv(d / "records.csv")
    if header != ["subject", "visit", "time", "y"]:
        raise FormatError(f"{d / 'records.csv'}: unexpected columns {header}")
    rec = np.array([[float(v) for v in r] for r in rows]).reshape(-1, 4)
    X = read_tensor(d / "images.btq")
    if X.shape[0] != rec.shape[0] or list(X.shape[1:]) != list(meta["dims"]):
        raise FormatError(f"{d}: images shape {X.shape} does not match {rec.shape[0]} records of dims {meta['dims']}")
    zh, zrows = _read_csv(d / "covariates.csv")
    Z = np.array([[float(v) for v in r] for r in zrows]).reshape(len(zrows), len(zh))
    if len(zrows) == 0:
        Z = np.zeros((meta["n_subjects"], len(zh)))
    return Dataset(rec[:, 3], X, rec[:, 0].astype(np.int64), rec[:, 1].astype(np.int64), rec[:, 2], Z,
                   meta["n_subjects"], meta["n_visits"])


def _scalar_columns(draws):
    cols = {}
    for key in ("sigma", "b0", "b1", "tau0"):
        if key in draws:
            cols[key] = draws[key]
    if "taut" in draws:
        for t in range(draws["taut"].shape[1]):
            cols[f"taut_{t}"] = draws["taut"][:, t]
    return cols


def write_chain(directory, chain: ChainOutput, keep_timing: bool = False):
    """Write a chain archive; the directory is created if needed.

    Wall-clock timing is left out unless ``keep_timing`` so that repeated runs
    with the same seed give byte-identical archives.
    """
    from . import __version__

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for key in _ARRAY_GROUPS:
        if key in chain.draws:
            arr = chain.draws[key]
            write_tensor(d / f"{key}.btq", arr)
            arrays[key] = {"file": f"{key}.btq", "dtype": str(arr.dtype), "shape": list(arr.shape)}
    cols = _scalar_columns(chain.draws)
    _write_csv(d / "scalars.csv", list(cols), ([_fmt(v) for v in row] for row in zip(*cols.values())))
    manifest = dict(chain.manifest)
    if not keep_timing:
        manifest.pop("timing_seconds", None)
    manifest["arrays"] = arrays
    manifest["version"] = __version__
    manifest["n_draws"] = chain.n_draws
    write_json(d / "manifest.json", manifest)


def read_chain(directory) -> ChainOutput:
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise FormatError(f"{d}: not a chain archive (manifest.json missing)")
    manifest = read_json(d / "manifest.json")
    draws = {}
    for key, info in manifest.get("arrays", {}).items():
        arr = read_tensor(d / info["file"])
        if list(arr.shape) != info["shape"]:
            raise FormatError(f"{d / info['file']}: shape {list(arr.shape)} differs from manifest {info['shape']}")
        draws[key] = arr.astype(info["dtype"])
    header, rows = _read_csv(d / "scalars.csv")
    table = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    taut = []
    for k, name in enumerate(header):
        if name.startswith("taut_"):
            taut.append(table[:, k])
        else:
            draws[name] = table[:, k].copy()
    if taut:
        draws["taut"] = np.stack(taut, axis=1)
    if len(rows) != manifest.get("n_draws", len(rows)):
        raise FormatError(f"{d / 'scalars.csv'}: {len(rows)} rows, manifest says {manifest['n_draws']}")
    manifest.pop("arrays", None)
    return ChainOutput(draws, manifest)


ESTIMATION_COLUMNS = ["scenario", "method", "visit", "relative_error", "rmse", "correlation"]
SELECTION_COLUMNS = ["scenario", "method", "visit", "sensitivity", "specificity", "f1", "mcc"]
PREDICTION_COLUMNS = ["scenario", "method", "visit", "check_loss"]


def write_table(path, columns, rows):
    """Delimited results table; ``rows`` are dicts keyed by ``columns``."""
    out = []
    for row in rows:
        missing = [c for c in columns if c not in row]
        if missing:
            raise FormatError(f"row lacks columns {missing}")
        out.append([_fmt(row[c]) if isinstance(row[c], (float, np.floating)) else row[c] for c in columns])
    _write_csv(Path(path), columns, out)


def read_table(path) -> list[dict]:
    header, rows = _read_csv(Path(path))
    return [dict(zip(header, r)) for r in rows]
