"""Hyperspectral cube, library and abundance containers plus file IO.

Pixel ordering is row-major everywhere: pixel ``(i, j)`` of a
``rows x cols`` image is column ``p = i * cols + j`` of the ``B x P``
matrix view.  The TV neighbourhoods used by the solver rely on this.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "HsiCube",
    "SpectralLibrary",
    "AbundanceImage",
    "HsiFormatError",
    "flatten",
    "unflatten",
    "reshape_row",
    "load_cube",
    "save_cube",
    "load_library",
    "save_matrix_csv",
    "load_matrix_csv",
]


class HsiFormatError(ValueError):
    """Raised for malformed cube, library or matrix files."""


@dataclass(frozen=True)
class HsiCube:
    """A ``rows x cols x bands`` reflectance image."""

    values: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"cube must be a non-empty 3-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("cube contains non-finite values")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.wavelengths is not None:
            wl = np.asarray(self.wavelengths, dtype=np.float64).copy()
            if wl.shape != (values.shape[2],):
                raise ValueError(
                    f"expected {values.shape[2]} wavelengths, got {wl.shape[0] if wl.ndim else 0}"
                )
            wl.setflags(write=False)
            object.__setattr__(self, "wavelengths", wl)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def matrix(self) -> np.ndarray:
        """The ``B x P`` matrix view (a copy)."""
        return flatten(self)

    @classmethod
    def from_matrix(cls, x, rows, cols, wavelengths=None) -> HsiCube:
        return cls(unflatten(x, rows, cols), wavelengths)


@dataclass(frozen=True)
class SpectralLibrary:
    names: list[str]
    wavelengths: np.ndarray
    signatures: np.ndarray  # B x Q, one spectrum per column

    def __post_init__(self):
        sig = np.asarray(self.signatures, dtype=np.float64)
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if sig.ndim != 2 or sig.shape[1] < 1:
            raise ValueError("library needs at least one signature column")
        if wl.shape != (sig.shape[0],):
            raise ValueError("wavelength count does not match signature length")
        if len(self.names) != sig.shape[1]:
            raise ValueError("names do not match signature columns")
        if not np.all(np.isfinite(sig)) or np.any(sig < 0):
            raise ValueError("library signatures must be finite and nonnegative")
        object.__setattr__(self, "signatures", sig)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "names", list(self.names))

    @property
    def bands(self) -> int:
        return self.signatures.shape[0]

    def __len__(self):
        return self.signatures.shape[1]

    def select(self, indices) -> np.ndarray:
        indices = list(indices)
        if max(indices, default=-1) >= len(self):
            raise ValueError(
                f"library has {len(self)} signatures, cannot select index {max(indices)}"
            )
        return self.signatures[:, indices].copy()


@dataclass(frozen=True)
class AbundanceImage:
    """``M x P`` abundance matrix laid out on a ``rows x cols`` grid."""

    values: np.ndarray
    rows: int
    cols: int
    asc: bool = field(default=False)

    def __post_init__(self):
        s = np.asarray(self.values, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != self.rows * self.cols:
            raise ValueError(
                f"abundances of shape {s.shape} do not fit a {self.rows}x{self.cols} grid"
            )
        if np.any(s < 0):
            raise ValueError("abundances must be nonnegative")
        if self.asc and not np.allclose(s.sum(axis=0), 1.0, rtol=0, atol=1e-9):
            raise ValueError("abundance columns do not sum to one")
        object.__setattr__(self, "values", s)

    @property
    def n_endmembers(self) -> int:
        return self.values.shape[0]

    def grid(self, j: int) -> np.ndarray:
        return reshape_row(self.values[j], self.rows, self.cols)


def flatten(cube: HsiCube) -> np.ndarray:
    values = cube.values if isinstance(cube, HsiCube) else np.asarray(cube)
    rows, cols, bands = values.shape
    return values.reshape(rows * cols, bands).T.copy()


def unflatten(x, rows: int, cols: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != rows * cols:
        raise ValueError(f"matrix of shape {x.shape} does not have {rows}*{cols} pixels")
    return x.T.reshape(rows, cols, x.shape[0]).copy()


def reshape_row(row, rows: int, cols: int) -> np.ndarray:
    """Lay a length-``P`` pixel vector out on its ``rows x cols`` grid."""
    row = np.asarray(row)
    if row.ndim != 1 or row.size != rows * cols:
        raise ValueError(f"row of length {row.size} cannot be reshaped to {rows}x{cols}")
    return row.reshape(rows, cols)


# -- cube files ------------------------------------------------------------

_DTYPE_TAG = "float64-le"


def _cube_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".f64"):
        path = path.with_suffix("")
    return path.with_suffix(".json"), path.with_suffix(".f64")


def save_cube(cube: HsiCube, path) -> Path:
    """Write ``<path>.json`` header and ``<path>.f64`` payload; returns the header path."""
    header_path, payload_path = _cube_paths(path)
    header = {
        "rows": cube.rows,
        "cols": cube.cols,
        "bands": cube.bands,
        "dtype": _DTYPE_TAG,
        "wavelengths": None if cube.wavelengths is None else [float(w) for w in cube.wavelengths],
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    payload_path.write_bytes(np.ascontiguousarray(cube.values, dtype="<f8").tobytes())
    return header_path


def load_cube(path, allow_negative: bool = False) -> HsiCube:
    header_path, payload_path = _cube_paths(path)
    if not header_path.exists():
        raise FileNotFoundError(header_path)
    if not payload_path.exists():
        raise FileNotFoundError(payload_path)
    try:
        header = json.loads(header_path.read_text())
        rows, cols, bands = (int(header[k]) for k in ("rows", "cols", "bands"))
        dtype = header.get("dtype", _DTYPE_TAG)
    except (KeyError, TypeError, ValueError) as exc:
        raise HsiFormatError(f"{header_path}: malformed header ({exc})") from exc
    if dtype != _DTYPE_TAG:
        raise HsiFormatError(f"{header_path}: unsupported dtype tag {dtype!r}")
    if min(rows, cols, bands) < 1:
        raise HsiFormatError(f"{header_path}: dimensions must be positive")

    payload = np.frombuffer(payload_path.read_bytes(), dtype="<f8")
    expected = rows * cols * bands
    if payload.size != expected or payload_path.stat().st_size != 8 * expected:
        raise HsiFormatError(
            f"{payload_path}: header declares {rows}x{cols}x{bands} = {expected} values, "
            f"payload holds {payload_path.stat().st_size / 8:g}"
        )
    values = payload.astype(np.float64).reshape(rows, cols, bands)
    if not np.all(np.isfinite(values)):
        raise HsiFormatError(f"{payload_path}: payload contains non-finite values")
    if np.any(values < 0):
        if not allow_negative:
            raise HsiFormatError(
                f"{payload_path}: {int(np.sum(values < 0))} negative reflectance values "
                "(use allow_negative to clamp them to 0)"
            )
        values = np.maximum(values, 0.0)
    return HsiCube(values, header.get("wavelengths"))


# -- libraries ---------------------------------------------------------------


def load_library(path, delimiter: str | None = None) -> SpectralLibrary:
    """Read a delimited text library: ``wavelength,<name1>,<name2>,...`` header."""
    path = Path(path)
    text = path.read_text()
    if delimiter is None:
        first = text.splitlines()[0] if text else ""
        delimiter = "\t" if "\t" in first else ","
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delimiter) if r]
    if not rows:
        raise HsiFormatError(f"{path}: empty library file")
    header = [c.strip() for c in rows[0]]
    if _all_numeric(header):
        raise HsiFormatError(f"{path}: missing header row (first row is numeric)")
    if len(header) < 2:
        raise HsiFormatError(f"{path}: need a wavelength column and at least one signature")

    data = np.empty((len(rows) - 1, len(header)))
    for r, line in enumerate(rows[1:], start=2):
        if len(line) != len(header):
            raise HsiFormatError(
                f"{path}: row {r} has {len(line)} cells, header has {len(header)}"
            )
        for c, cell in enumerate(line):
            try:
                data[r - 2, c] = float(cell)
            except ValueError:
                raise HsiFormatError(
                    f"{path}: non-numeric cell {cell!r} at row {r}, column {c + 1} ({header[c]})"
                ) from None
    if data.shape[0] == 0:
        raise HsiFormatError(f"{path}: library has no bands")
    if not np.all(np.isfinite(data)):
        raise HsiFormatError(f"{path}: non-finite values")
    neg = np.argwhere(data[:, 1:] < 0)
    if neg.size:
        r, c = neg[0]
        raise HsiFormatError(
            f"{path}: negative reflectance {data[r, c + 1]} at row {r + 2}, "
            f"column {c + 2} ({header[c + 1]})"
        )
    return SpectralLibrary(header[1:], data[:, 0], data[:, 1:])


def _all_numeric(cells) -> bool:
    try:
        [float(c) for c in cells]
    except ValueError:
        return False
    return True


# -- matrix CSV ----------------------------------------------------------------


def save_matrix_csv(matrix, path) -> None:
    """Headered CSV with 17 significant digits (round-trips float64 exactly)."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# rows={m.shape[0]} cols={m.shape[1]}"]
    lines.extend(",".join(format(v, ".17g") for v in row) for row in m)
    path.write_text("\n".join(lines) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().strip()
        try:
            meta = dict(tok.split("=") for tok in first.lstrip("#").split())
            rows, cols = int(meta["rows"]), int(meta["cols"])
        except (KeyError, ValueError) as exc:
            raise HsiFormatError(f"{path}: bad matrix header {first!r}") from exc
        body = fh.read()
    try:
        values = [float(v) for line in body.splitlines() if line.strip() for v in line.split(",")]
    except ValueError as exc:
        raise HsiFormatError(f"{path}: {exc}") from None
    if len(values) != rows * cols:
        raise HsiFormatError(
            f"{path}: header declares {rows}x{cols}, found {len(values)} values"
        )
    m = np.array(values, dtype=np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise HsiFormatError(f"{path}: non-finite values")
    return m


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
