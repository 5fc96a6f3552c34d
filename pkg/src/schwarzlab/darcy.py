"""Permeability fields and TPFA pressure systems on uniform Cartesian grids.

Cells are indexed x-fastest: flat = i + nx*(j + ny*k).  The domain is the
unit box, h = 1/dims per axis.  Interface transmissibilities use harmonic
averaging; Dirichlet faces contribute half-cell transmissibilities to the
diagonal, Neumann faces prescribe the outward flux.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError, DimensionMismatchError, FormatError, NotSPDError
from .lacore import SymSparseMatrix

KL_MODES = 512
KL_CELL_CAP = 16384


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid over the unit box."""

    dims: tuple

    def __post_init__(self):
        if len(self.dims) not in (2, 3):
            raise ConfigError("grid must be 2D or 3D")
        if any(d < 2 for d in self.dims):
            raise ConfigError("all grid dims must be >= 2")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def n_cells(self):
        return int(np.prod(self.dims))

    @property
    def h(self):
        return tuple(1.0 / d for d in self.dims)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def face_area(self, axis):
        return self.cell_volume / self.h[axis]

    def coords(self):
        """Cell centers, shape (n_cells, ndim), flat order x-fastest."""
        axes = [(np.arange(d) + 0.5) * h for d, h in zip(self.dims, self.h)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.reshape(-1, order="F") for m in mesh])

    def reshape(self, flat):
        return np.asarray(flat).reshape(self.dims, order="F")

    def flatten(self, arr):
        return np.asarray(arr).reshape(-1, order="F")


@dataclass
class PermeabilityField:
    values: np.ndarray  # strictly positive, one per cell, x-fastest
    provenance: dict

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.min() <= 0.0:
            raise ConfigError("permeability must be strictly positive")


FACE_NAMES = {2: ("xmin", "xmax", "ymin", "ymax"),
              3: ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")}


@dataclass
class BoundaryConfig:
    """Per-face boundary tags: ("dirichlet", p_D) or ("neumann", g)."""

    faces: dict
    name: str = "custom"

    def validate(self, ndim):
        names = FACE_NAMES[ndim]
        unknown = set(self.faces) - set(names)
        if unknown:
            raise ConfigError(f"unknown boundary faces: {sorted(unknown)}")
        missing = set(names) - set(self.faces)
        if missing:
            raise ConfigError(f"missing boundary faces: {sorted(missing)}")
        for f, (kind, _) in self.faces.items():
            if kind not in ("dirichlet", "neumann"):
                raise ConfigError(f"bad tag {kind!r} on face {f}")
        if not any(kind == "dirichlet" for kind, _ in self.faces.values()):
            raise NotSPDError("all-Neumann boundary configuration rejected")

    @classmethod
    def preset(cls, name, ndim):
        """Named presets: C1 drives flow in y, C2 drives flow in x."""
        n = name.upper()
        neu = ("neumann", 0.0)
        if n == "C1":
            faces = {f: neu for f in FACE_NAMES[ndim]}
            faces["ymin"] = ("dirichlet", 0.0)
            faces["ymax"] = ("dirichlet", 1.0)
        elif n == "C2":
            faces = {f: neu for f in FACE_NAMES[ndim]}
            faces["xmin"] = ("dirichlet", 1.0)
            faces["xmax"] = ("dirichlet", 0.0)
        else:
            raise ConfigError(f"unknown boundary preset {name!r}")
        return cls(faces=faces, name=n)


@dataclass
class LinearSystem:
    A: SymSparseMatrix
    b: np.ndarray
    grid: Grid
    perm: PermeabilityField
    bc: BoundaryConfig


# ---------------------------------------------------------------------------
# permeability generators
# ---------------------------------------------------------------------------

def _embedding_eigenvalues(grid, sigma2, corr_lengths, pad):
    M = tuple(pad * d for d in grid.dims)
    parts = []
    for md, h, eta in zip(M, grid.h, corr_lengths):
        lag = np.minimum(np.arange(md), md - np.arange(md)) * h
        parts.append((lag / eta) ** 2)
    if grid.ndim == 2:
        r2 = parts[0][:, None] + parts[1][None, :]
    else:
        r2 = (parts[0][:, None, None] + parts[1][None, :, None]
              + parts[2][None, None, :])
    cov = sigma2 * np.exp(-np.sqrt(r2))
    return np.fft.fftn(cov).real, M


def _sample_embedded(grid, lam, M, rng):
    xi = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    big = (np.sqrt(float(np.prod(M))) * np.fft.ifftn(np.sqrt(lam) * xi)).real
    sl = tuple(slice(0, d) for d in grid.dims)
    # embedding array is indexed [i, j(, k)]; flat storage is x-fastest
    return big[sl].ravel(order="F")


def _kl_sample(grid, sigma2, corr_lengths, rng):
    n = grid.n_cells
    if n > KL_CELL_CAP:
        raise ConfigError(
            f"KL fallback capped at {KL_CELL_CAP} cells (requested {n})")
    X = grid.coords()
    scaled = X / np.asarray(corr_lengths)
    d2 = ((scaled[:, None, :] - scaled[None, :, :]) ** 2).sum(axis=2)
    C = sigma2 * np.exp(-np.sqrt(d2))
    k = min(KL_MODES, n - 1)
    w, V = spla.eigsh(C, k=k, which="LA")
    w = np.clip(w, 0.0, None)
    return V @ (np.sqrt(w) * rng.standard_normal(k))


def gen_lognormal(grid, sigma2, corr_lengths, seed):
    """Log-normal field exp(Z), Z stationary Gaussian with exponential
    covariance sigma2 * exp(-sqrt(sum (dx_d/eta_d)^2)).

    Sampling uses circulant embedding with escalating padding; if the
    embedding stays indefinite the field falls back to a truncated
    Karhunen-Loeve expansion.
    """
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be > 0")
    corr_lengths = tuple(float(e) for e in np.broadcast_to(
        np.asarray(corr_lengths, dtype=np.float64), (grid.ndim,)))
    if min(corr_lengths) <= 0:
        raise ConfigError("correlation lengths must be > 0")
    rng = np.random.default_rng(seed)
    z = None
    for pad in (2, 4, 8):
        lam, M = _embedding_eigenvalues(grid, sigma2, corr_lengths, pad)
        lmin, lmax = lam.min(), lam.max()
        if lmin >= -1e-12 * lmax:
            z = _sample_embedded(grid, np.clip(lam, 0.0, None), M, rng)
            break
    if z is None:
        z = _kl_sample(grid, sigma2, corr_lengths, rng)
    return PermeabilityField(
        values=np.exp(z),
        provenance={"kind": "lognormal", "sigma2": sigma2,
                    "corr_lengths": list(corr_lengths), "seed": seed})


def stamp_channel(values, grid, p0, p1, width, kappa_c):
    """Set cells whose center lies within width/2 of segment p0-p1 (grid
    units, centers at integer+0.5) to kappa_c.  3D widths act as tube
    diameters."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    half = 0.5 * width
    lo = np.maximum(np.floor(np.minimum(p0, p1) - half - 1).astype(int), 0)
    hi = np.minimum(np.ceil(np.maximum(p0, p1) + half + 1).astype(int),
                    np.asarray(grid.dims))
    if (lo >= hi).any():
        return
    axes = [np.arange(l, h) + 0.5 for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    seg = p1 - p0
    seg2 = float(seg @ seg)
    if seg2 == 0.0:
        closest = np.broadcast_to(p0, pts.shape)
    else:
        t = np.clip(((pts - p0) @ seg) / seg2, 0.0, 1.0)
        closest = p0 + t[:, None] * seg
    inside = np.linalg.norm(pts - closest, axis=1) <= half
    cells = np.floor(pts[inside]).astype(int)
    flat = cells[:, 0]
    mult = 1
    for ax in range(1, grid.ndim):
        mult *= grid.dims[ax - 1]
        flat = flat + cells[:, ax] * mult
    values[flat] = kappa_c


def gen_channels(grid, n_range, len_range, width_range, kappa_c, seed):
    """Background kappa=1 plus randomly placed high-permeability channels.

    ``n_range`` is an inclusive integer range for the channel count;
    lengths and widths are in grid units.  ``len_range=None`` rescales to
    Unif[0.15, 0.5]*nx so geometry stays proportionate off paper scale.
    In 3D ``width_range`` is the tube radius range.
    """
    if kappa_c <= 0:
        raise ConfigError("kappa_c must be > 0")
    rng = np.random.default_rng(seed)
    values = np.ones(grid.n_cells)
    if len_range is None:
        len_range = (0.15 * grid.dims[0], 0.5 * grid.dims[0])
    n_lo, n_hi = int(n_range[0]), int(n_range[1])
    n_channels = int(rng.integers(n_lo, n_hi + 1)) if n_hi > n_lo else n_lo
    for _ in range(n_channels):
        start = rng.uniform(0.0, np.asarray(grid.dims, dtype=np.float64))
        length = rng.uniform(*len_range)
        if grid.ndim == 2:
            theta = rng.uniform(0.0, np.pi)
            direction = np.array([np.cos(theta), np.sin(theta)])
            width = rng.uniform(*width_range)
        else:
            v = rng.standard_normal(3)
            direction = v / np.linalg.norm(v)
            width = 2.0 * rng.uniform(*width_range)  # radius -> diameter
        stamp_channel(values, grid, start, start + length * direction,
                      width, kappa_c)
    return PermeabilityField(
        values=values,
        provenance={"kind": "channels", "n_range": [n_lo, n_hi],
                    "len_range": list(len_range),
                    "width_range": list(width_range),
                    "kappa_c": kappa_c, "seed": seed,
                    "n_channels": n_channels})


def constant_field(grid, value=1.0):
    return PermeabilityField(values=np.full(grid.n_cells, float(value)),
                             provenance={"kind": "constant", "value": value})


# ---------------------------------------------------------------------------
# TPFA assembly
# ---------------------------------------------------------------------------

def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def assemble_tpfa(grid, perm, bc, source=None):
    """Assemble the pressure-only TPFA system A p = b."""
    bc.validate(grid.ndim)
    if perm.values.size != grid.n_cells:
        raise DimensionMismatchError("permeability size does not match grid")
    k = grid.reshape(perm.values)
    n = grid.n_cells
    diag = np.zeros(n)
    b = np.zeros(n)
    rows, cols, vals = [], [], []

    strides = [1, grid.dims[0], grid.dims[0] * grid.dims[1]][:grid.ndim]
    flat_idx = grid.reshape(np.arange(n))

    for axis in range(grid.ndim):
        area = grid.face_area(axis)
        h = grid.h[axis]
        lo_sl = tuple(slice(0, -1) if a == axis else slice(None)
                      for a in range(grid.ndim))
        hi_sl = tuple(slice(1, None) if a == axis else slice(None)
                      for a in range(grid.ndim))
        T = (area / h) * _harmonic(k[lo_sl], k[hi_sl])
        left = flat_idx[lo_sl].ravel(order="F")
        Tf = T.ravel(order="F")
        np.add.at(diag, left, Tf)
        np.add.at(diag, left + strides[axis], Tf)
        rows.append(left)
        cols.append(left + strides[axis])
        vals.append(-Tf)

    face_slices = {}
    for axis in range(grid.ndim):
        lo = tuple(0 if a == axis else slice(None) for a in range(grid.ndim))
        hi = tuple(-1 if a == axis else slice(None) for a in range(grid.ndim))
        names = FACE_NAMES[grid.ndim]
        face_slices[names[2 * axis]] = (axis, lo)
        face_slices[names[2 * axis + 1]] = (axis, hi)

    for face, (axis, sl) in face_slices.items():
        kind, value = bc.faces[face]
        cells = flat_idx[sl].ravel(order="F")
        area = grid.face_area(axis)
        if kind == "dirichlet":
            Tb = 2.0 * area * k[sl].ravel(order="F") / grid.h[axis]
            np.add.at(diag, cells, Tb)
            np.add.at(b, cells, Tb * value)
        else:
            np.add.at(b, cells, -value * area)

    if source is not None:
        source = np.asarray(source, dtype=np.float64)
        if source.size != n:
            raise DimensionMismatchError("source size does not match grid")
        b += source * grid.cell_volume

    all_rows = np.concatenate([np.arange(n)] + rows)
    all_cols = np.concatenate([np.arange(n)] + cols)
    all_vals = np.concatenate([diag] + vals)
    A = SymSparseMatrix(n, all_rows, all_cols, all_vals)
    return LinearSystem(A=A, b=b, grid=grid, perm=perm, bc=bc)


def boundary_flux_report(system, p):
    """Per-Dirichlet-face outward flux sums plus the net/gross balance."""
    grid, bc = system.grid, system.bc
    k = grid.reshape(system.perm.values)
    flat_idx = grid.reshape(np.arange(grid.n_cells))
    names = FACE_NAMES[grid.ndim]
    fluxes = {}
    for axis in range(grid.ndim):
        for side, sl_idx in ((0, 0), (1, -1)):
            face = names[2 * axis + side]
            kind, value = bc.faces[face]
            if kind != "dirichlet":
                continue
            sl = tuple(sl_idx if a == axis else slice(None)
                       for a in range(grid.ndim))
            cells = flat_idx[sl].ravel(order="F")
            Tb = 2.0 * grid.face_area(axis) * k[sl].ravel(order="F") / grid.h[axis]
            fluxes[face] = float(np.sum(Tb * (p[cells] - value)))
    net = sum(fluxes.values())
    gross = sum(abs(f) for f in fluxes.values())
    return {"per_face": fluxes, "net": net, "gross": gross}


# ---------------------------------------------------------------------------
# file exports
# ---------------------------------------------------------------------------

def write_field_raster(path, values, dims, provenance=None, seed=None):
    """Raw little-endian float64 raster preceded by a one-line JSON header."""
    header = {"dims": list(dims), "seed": seed,
              "provenance": provenance or {}}
    payload = np.asarray(values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)


def read_field_raster(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("raster missing header line", offset=0)
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad raster header: {exc}", offset=0)
    values = np.frombuffer(raw[nl + 1:], dtype="<f8")
    expect = int(np.prod(header["dims"]))
    if values.size != expect:
        raise FormatError(
            f"raster payload has {values.size} values, header says {expect}",
            offset=nl + 1)
    return values.copy(), header


def write_system_coo(matrix_path, rhs_path, system):
    """Upper-triangle COO text ("i j v" per line, sorted) plus raw rhs."""
    A, b = system.A, system.b
    with open(matrix_path, "w") as fh:
        fh.write(f"% {A.n} {A.nnz_stored}\n")
        for i, j, v in A.entries():
            fh.write(f"{i} {j} {v!r}\n")
    with open(rhs_path, "wb") as fh:
        fh.write(np.asarray(b, dtype="<f8").tobytes())
