"""File formats: spectra CSV, binary alm tables, map CSV, coefficient JSON-lines.

Every writer goes through a temporary file in the target directory and an
atomic rename, so readers never observe a partial file.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidSpectraError
from .harmonics import AlmSet
from .needlet import NeedletBank, NeedletCoeffs, build_bank, build_filter
from .sht import SphericalGrid, SpinMap, make_grid
from .stochastic import PowerSpectra

ALM_MAGIC = b"NDLALM1\0"
COEFF_FORMAT = "mixneedlets-coeffs"
COEFF_VERSION = 1
SPECTRA_HEADER = ["l", "C_T", "C_E", "C_M", "C_TE", "C_TM"]
MAP_HEADER = ["theta", "phi", "re", "im"]


def _g(x) -> str:
    return repr(float(x))


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (int, np.integer, str)) else _g(v) for v in row])
    return atomic_write(path, buf.getvalue())


def _read_csv(path, header):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    if not rows or [c.strip() for c in rows[0]] != header:
        raise FormatError(f"{path}: expected header {','.join(header)}")
    body = [r for r in rows[1:] if r]
    try:
        return np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_spectra(path, spectra: PowerSpectra) -> Path:
    rows = ([l, spectra.C_T[l], spectra.C_E[l], spectra.C_M[l], spectra.C_TE[l], spectra.C_TM[l]]
            for l in range(spectra.lmax + 1))
    return write_csv(path, SPECTRA_HEADER, rows)


def read_spectra(path) -> PowerSpectra:
    a = _read_csv(path, SPECTRA_HEADER)
    if a.shape[0] == 0:
        raise FormatError(f"{path}: no spectrum rows")
    ls = a[:, 0]
    if not np.array_equal(ls, np.arange(ls.size)):
        raise FormatError(f"{path}: rows must list l = 0, 1, ..., lmax in order")
    return PowerSpectra(ls.size - 1, *(a[:, i] for i in range(1, 6)))


def write_alm(path, alm: AlmSet) -> Path:
    """Magic, int32 spin, uint32 lmax, then float64 (re, im) pairs, l outer, m inner."""
    head = ALM_MAGIC + struct.pack("<iI", alm.spin, alm.lmax)
    vals = alm.flat().astype("<c16")
    return atomic_write(path, head + vals.tobytes())


def read_alm(path) -> AlmSet:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    if raw[:8] != ALM_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    spin, lmax = struct.unpack("<iI", raw[8:16])
    if lmax < abs(spin):
        raise FormatError(f"{path}: lmax {lmax} below |s| = {abs(spin)}")
    n = (lmax + 1) ** 2 - spin * spin
    body = raw[16:]
    if len(body) != 16 * n:
        raise FormatError(f"{path}: expected {n} coefficients, found {len(body) / 16:g}")
    return AlmSet.from_flat(spin, lmax, np.frombuffer(body, dtype="<c16").astype(complex))


def write_map(path, smap: SpinMap) -> Path:
    th, ph = smap.grid.points()
    v = smap.values.ravel()
    return write_csv(path, MAP_HEADER, zip(th, ph, v.real, v.imag))


def read_map(path, spin: int) -> SpinMap:
    """Map on a make_grid(L) grid; L is inferred from the row count."""
    a = _read_csv(path, MAP_HEADER)
    n = a.shape[0]
    # n = (L+1)(2L+1)
    L = int(round((-3 + np.sqrt(1 + 8 * n)) / 4))
    if (L + 1) * (2 * L + 1) != n:
        raise FormatError(f"{path}: {n} rows do not form a Gauss-Legendre grid")
    grid = make_grid(L)
    th, ph = grid.points()
    if np.max(np.abs(a[:, 0] - th), initial=0) > 1e-12 or np.max(np.abs(a[:, 1] - ph), initial=0) > 1e-12:
        raise FormatError(f"{path}: node coordinates differ from the bandlimit-{L} grid")
    return SpinMap(spin, grid, (a[:, 2] + 1j * a[:, 3]).reshape(grid.ntheta, grid.nphi))


def write_coeffs(path, coeffs: NeedletCoeffs, bank: NeedletBank) -> Path:
    header = {
        "format": COEFF_FORMAT, "version": COEFF_VERSION, "kind": coeffs.kind,
        "spin": coeffs.spin, "field_spin": coeffs.field_spin, "lmax": coeffs.lmax,
        "B": bank.B, "j_min": bank.j_min, "j_max": bank.j_max,
        "levels": [{"j": j, "L": bank.level(j).Ld, "npoints": int(coeffs[j].size)}
                   for j in coeffs.js],
    }
    lines = [json.dumps(header)]
    for j in coeffs.js:
        lv = bank.level(j)
        th, ph = lv.points
        beta = coeffs[j]
        lines.append(json.dumps({"level": j, "L": lv.Ld, "npoints": int(beta.size)}))
        for k in range(beta.size):
            lines.append(json.dumps({"k": k, "theta": float(th[k]), "phi": float(ph[k]),
                                     "lambda": float(lv.weights[k]),
                                     "re": float(beta[k].real), "im": float(beta[k].imag)}))
    return atomic_write(path, "\n".join(lines) + "\n")


def read_coeffs(path) -> tuple[NeedletCoeffs, NeedletBank]:
    """Coefficients plus the bank rebuilt from the archive header."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(x) for x in fh if x.strip()]
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    if not lines:
        raise FormatError(f"{path}: empty archive")
    h = lines[0]
    if h.get("format") != COEFF_FORMAT:
        raise FormatError(f"{path}: not a coefficient archive")
    if h.get("version") != COEFF_VERSION:
        raise FormatError(f"{path}: unsupported archive version {h.get('version')}")
    bank = build_bank(build_filter(h["B"]), h["spin"], h["j_max"], h["j_min"])
    betas, pos = {}, 1
    for meta in h["levels"]:
        j, npts = meta["j"], meta["npoints"]
        if pos >= len(lines) or lines[pos].get("level") != j:
            raise FormatError(f"{path}: missing header line for level {j}")
        lv = bank.level(j)
        if lines[pos]["L"] != lv.Ld or npts != lv.npoints or lines[pos]["npoints"] != npts:
            raise FormatError(f"{path}: level {j} sizes disagree with the bank")
        rows = lines[pos + 1:pos + 1 + npts]
        if len(rows) != npts or any(r.get("k") != i for i, r in enumerate(rows)):
            raise FormatError(f"{path}: level {j} holds {len(rows)} rows, header says {npts}")
        betas[j] = np.array([complex(r["re"], r["im"]) for r in rows])
        pos += 1 + npts
    if pos != len(lines):
        raise FormatError(f"{path}: trailing lines after the last level")
    return NeedletCoeffs(h["kind"], h["spin"], h["lmax"], betas, h.get("field_spin")), bank


__all__ = [
    "atomic_write", "sha256_file", "write_csv", "write_spectra", "read_spectra",
    "write_alm", "read_alm", "write_map", "read_map", "write_coeffs", "read_coeffs",
    "InvalidSpectraError",
]
