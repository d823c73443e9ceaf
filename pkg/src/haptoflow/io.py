"""File formats: binary water-tensor fields, legacy-VTK structured points,
convergence CSV, and the TOML run configuration.

All outputs are deterministic for a fixed input; numbers are written with
repr-level precision and a '.' decimal separator regardless of locale.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .grid import Grid
from .verification import ConvergenceStudy

TENSOR_MAGIC = b"DWTF"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sH8s3I3d")
_COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")


# ---------------------------------------------------------------------------
# water-tensor field files
# ---------------------------------------------------------------------------
def write_tensor_field(path, tensors: np.ndarray, spacing=(1.0, 1.0, 1.0),
                       units: str = "mm2/s") -> None:
    """Binary voxel tensor field: 6 little-endian f64 per voxel, x fastest.

    ``tensors`` has shape (nx, ny, nz, 3, 3) (use nz = 1 for planar data).
    """
    tensors = np.asarray(tensors, dtype=float)
    if tensors.ndim != 5 or tensors.shape[-2:] != (3, 3):
        raise ValueError("expected a (nx, ny, nz, 3, 3) tensor array")
    nx, ny, nz = tensors.shape[:3]
    header = _HEADER.pack(
        TENSOR_MAGIC, TENSOR_VERSION, units.encode("ascii")[:8].ljust(8),
        nx, ny, nz, *[float(s) for s in spacing],
    )
    comps = np.stack(
        [
            tensors[..., 0, 0], tensors[..., 1, 1], tensors[..., 2, 2],
            tensors[..., 0, 1], tensors[..., 0, 2], tensors[..., 1, 2],
        ],
        axis=-1,
    )
    # voxel-major with x fastest: write in (z, y, x) outer order
    payload = np.ascontiguousarray(comps.transpose(2, 1, 0, 3), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_tensor_field(path, spd_mode: str = "reject", spd_tol: float = 1e-12):
    """Read a voxel tensor field; returns (tensors, spacing, units).

    ``spd_mode`` is 'reject' (raise on a non-SPD voxel, reporting its index)
    or 'clamp' (shift eigenvalues up to ``spd_tol``).
    """
    if spd_mode not in ("reject", "clamp"):
        raise ValueError("spd_mode must be 'reject' or 'clamp'")
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"truncated header: file has {len(raw)} bytes, "
                         f"need {_HEADER.size}")
    magic, version, units, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor-field version {version}")
    expected = _HEADER.size + nx * ny * nz * 6 * 8
    if len(raw) != expected:
        raise ValueError(
            f"truncated payload: file ends at byte {len(raw)}, expected {expected}"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    comps = flat.reshape(nz, ny, nx, 6).transpose(2, 1, 0, 3)
    tensors = np.empty((nx, ny, nz, 3, 3))
    tensors[..., 0, 0] = comps[..., 0]
    tensors[..., 1, 1] = comps[..., 1]
    tensors[..., 2, 2] = comps[..., 2]
    tensors[..., 0, 1] = tensors[..., 1, 0] = comps[..., 3]
    tensors[..., 0, 2] = tensors[..., 2, 0] = comps[..., 4]
    tensors[..., 1, 2] = tensors[..., 2, 1] = comps[..., 5]

    evals = np.linalg.eigvalsh(tensors)
    bad = evals[..., 0] < spd_tol
    if np.any(bad):
        if spd_mode == "reject":
            idx = tuple(int(k) for k in np.argwhere(bad)[0])
            raise ValueError(f"non-SPD tensor at voxel {idx} "
                             f"(min eigenvalue {evals[..., 0].min():.3e})")
        w, v = np.linalg.eigh(tensors)
        w = np.maximum(w, spd_tol)
        tensors = np.einsum("...ij,...j,...kj->...ik", v, w, v)
    return tensors, (sx, sy, sz), units.rstrip(b"\x00 ").decode("ascii")


# ---------------------------------------------------------------------------
# legacy VTK structured points
# ---------------------------------------------------------------------------
def write_field_vtk(path, grid: Grid, fields: dict, title: str = "haptoflow") -> None:
    """ASCII STRUCTURED_POINTS file with one SCALARS block per named field.

    Fields live on the dual vertices (POINT_DATA); shapes must match the
    grid's vertex counts.
    """
    counts = grid.counts + (1,) * (3 - grid.dim)
    origin = grid.origin + (0.0,) * (3 - grid.dim)
    spacing = grid.spacing + (1.0,) * (3 - grid.dim)
    n_points = int(np.prod(counts))
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*counts),
        "ORIGIN {:.17g} {:.17g} {:.17g}".format(*origin),
        "SPACING {:.17g} {:.17g} {:.17g}".format(*spacing),
        f"POINT_DATA {n_points}",
    ]
    for name, values in fields.items():
        values = np.asarray(values)
        if values.shape != grid.counts:
            raise ValueError(
                f"field {name!r} has shape {values.shape}, grid wants {grid.counts}"
            )
        if any(ch.isspace() for ch in name):
            raise ValueError(f"field name {name!r} must not contain whitespace")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        flat = values.reshape(grid.counts, order="C")
        # VTK expects x fastest: iterate in Fortran order over (x, y[, z])
        lines.extend("{:.17g}".format(v) for v in flat.flatten(order="F"))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_field_vtk(path):
    """Minimal reader for the files produced by :func:`write_field_vtk`."""
    tokens = Path(path).read_text(encoding="ascii").splitlines()
    dims = None
    origin = spacing = (0.0, 0.0, 0.0)
    fields = {}
    i = 0
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(v) for v in line.split()[1:4])
        elif line.startswith("ORIGIN"):
            origin = tuple(float(v) for v in line.split()[1:4])
        elif line.startswith("SPACING"):
            spacing = tuple(float(v) for v in line.split()[1:4])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            n = int(np.prod(dims))
            vals = []
            j = i + 2  # skip LOOKUP_TABLE
            while len(vals) < n:
                vals.extend(float(v) for v in tokens[j].split())
                j += 1
            arr = np.array(vals).reshape(dims, order="F")
            squeeze = tuple(k for k, d in enumerate(dims) if d == 1 and k >= 2)
            fields[name] = arr.squeeze(axis=squeeze) if squeeze else arr
            i = j - 1
        i += 1
    if dims is None:
        raise ValueError(f"{path}: not a structured-points file")
    return {"dims": dims, "origin": origin, "spacing": spacing, "fields": fields}


# ---------------------------------------------------------------------------
# convergence CSV
# ---------------------------------------------------------------------------
def write_convergence_csv(path, study: ConvergenceStudy) -> None:
    if not study.levels:
        raise ValueError("refusing to write an empty convergence study")
    rows = ["level,points,dx,l2_error,rate"]
    rate_list = study.rates
    for k, (points, dx, err) in enumerate(study.levels):
        rate = "" if k == 0 else "{:.17g}".format(rate_list[k - 1])
        rows.append(f"{k},{points},{dx:.17g},{err:.17g},{rate}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="ascii")


def read_convergence_csv(path) -> ConvergenceStudy:
    lines = Path(path).read_text(encoding="ascii").strip().splitlines()
    if lines[0] != "level,points,dx,l2_error,rate":
        raise ValueError(f"{path}: unexpected CSV header {lines[0]!r}")
    study = ConvergenceStudy(base_points=0, refine=0.0)
    for line in lines[1:]:
        _, points, dx, err, _rate = line.split(",")
        study.add(int(points), float(dx), float(err))
    if study.levels:
        study.base_points = study.levels[0][0]
        if len(study.levels) > 1:
            study.refine = study.levels[1][0] / study.levels[0][0]
    return study


# ---------------------------------------------------------------------------
# run configuration (TOML)
# ---------------------------------------------------------------------------
DEFAULT_CONFIG = """\
# haptoflow run configuration

[grid]
cells = [40, 40]          # primal cells per axis (2 or 3 entries)
extents = [1.0, 1.0]
origin = [0.0, 0.0]

[model]
# exactly one of the two parameter blocks may be present
[model.dimensionless]
eps = 1e-5
delta = 0.01
nu = 0.0
theta = 0.0

#[model.physical]
#c = 2.1e-4        # cell speed
#lam0 = 0.8        # turning rate
#lam1 = 150.0      # state-dependent turning rate
#M = 8.44e-7       # growth rate
#X = 80.0          # length scale
#T = 6.31e7        # time scale

[model.growth]
rho_cc = 1.0
k_plus = 0.1
k_minus = 0.1

[scheme]
variant = "mi1"            # mi1 | mi2 | iv1 | iv2
stencil = "improved"       # plain | improved
drift = "centered"         # centered | upwind
bc = "u_turn"              # u_turn | thermal | dirichlet
cfl_safety = 0.9
order = 1                  # moment order N

[initial]
kind = "point"             # point | constant
value = 1.0

[run]
t_end = 1.0
steady_tol = 0.0           # 0 disables steady detection
output_every = 0           # steps between VTK dumps, 0 = final only

[tensor_field]
# path = "dw.tensors"      # binary water-tensor file; omit for identity
"""


@dataclass
class RunConfig:
    cells: tuple
    extents: tuple
    origin: tuple
    scaling_kind: str             # "dimensionless" | "physical"
    scaling_params: dict
    growth: dict
    scheme: dict
    order: int
    initial: dict
    t_end: float
    steady_tol: float | None
    output_every: int
    tensor_path: str | None = None

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        grid = data.get("grid", {})
        model = data.get("model", {})
        has_dimless = "dimensionless" in model
        has_phys = "physical" in model
        if has_dimless == has_phys:
            raise ValueError(
                "exactly one of [model.dimensionless] and [model.physical] is required"
            )
        scheme = dict(data.get("scheme", {}))
        order = int(scheme.pop("order", 1))
        runsec = data.get("run", {})
        steady = float(runsec.get("steady_tol", 0.0))
        return cls(
            cells=tuple(grid.get("cells", (40, 40))),
            extents=tuple(grid.get("extents", (1.0, 1.0))),
            origin=tuple(grid.get("origin", (0.0,) * len(grid.get("cells", (40, 40))))),
            scaling_kind="dimensionless" if has_dimless else "physical",
            scaling_params=dict(model["dimensionless" if has_dimless else "physical"]),
            growth=dict(model.get("growth", {"rho_cc": 1.0, "k_plus": 0.1, "k_minus": 0.1})),
            scheme=scheme,
            order=order,
            initial=dict(data.get("initial", {"kind": "point", "value": 1.0})),
            t_end=float(runsec.get("t_end", 1.0)),
            steady_tol=steady if steady > 0.0 else None,
            output_every=int(runsec.get("output_every", 0)),
            tensor_path=data.get("tensor_field", {}).get("path"),
        )


# ---------------------------------------------------------------------------
# synthetic tensor-field generators
# ---------------------------------------------------------------------------
def constant_field(cells, d_water) -> np.ndarray:
    return np.broadcast_to(np.asarray(d_water, dtype=float),
                           tuple(cells) + (3, 3)).copy()


def smooth_anisotropy_field(grid: Grid) -> np.ndarray:
    """diag(1 + xi, 1, 1) evaluated at the cell centers."""
    xc = grid.cell_centers()[0]
    out = np.zeros(grid.cell_counts + (3, 3))
    out[..., 0, 0] = 1.0 + xc
    out[..., 1, 1] = 1.0
    out[..., 2, 2] = 1.0
    return out
