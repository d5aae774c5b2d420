"""Raw grid dumps and CSV exports.

Dump format: a 64-byte ASCII header line
``LEVELFLOW-GRID v1 dim=<d> n=<n1[,n2]> origin=<o1[,o2]> dx=<dx>\\n``
padded with spaces, followed by little-endian IEEE-754 64-bit values in
row-major order. Numbers are written with repr so they round-trip exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .grids import Grid, ScalarField

HEADER_BYTES = 64
MAGIC = "LEVELFLOW-GRID v1"


def _fmt_floats(vals) -> str:
    return ",".join(repr(float(v)) for v in vals)


def write_grid(path, fld: ScalarField) -> None:
    grid = fld.grid
    header = (f"{MAGIC} dim={grid.dim} n={','.join(str(n) for n in grid.shape)} "
              f"origin={_fmt_floats(grid.origin)} dx={repr(float(grid.dx))}")
    if len(header) > HEADER_BYTES - 1:
        raise ConfigError(f"grid header does not fit 64 bytes: {header!r}")
    header = header.ljust(HEADER_BYTES - 1) + "\n"
    data = np.ascontiguousarray(fld.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_grid(path) -> ScalarField:
    with open(path, "rb") as fh:
        header = fh.read(HEADER_BYTES).decode("ascii")
        if not header.startswith(MAGIC):
            raise ConfigError(f"not a grid dump: {path}")
        fields = dict(tok.split("=", 1) for tok in header[len(MAGIC):].split())
        dim = int(fields["dim"])
        shape = tuple(int(x) for x in fields["n"].split(","))
        origin = tuple(float(x) for x in fields["origin"].split(","))
        dx = float(fields["dx"])
        grid = Grid(dim=dim, origin=origin, dx=dx, shape=shape)
        values = np.frombuffer(fh.read(8 * grid.n_cells), dtype="<f8").reshape(shape)
    return ScalarField(grid, values.copy())


def write_csv(path, fld: ScalarField) -> None:
    """(x[,y],value) rows in row-major cell order."""
    grid = fld.grid
    with open(path, "w") as fh:
        if grid.dim == 1:
            fh.write("x,value\n")
            xs = grid.axis_coords(0)
            for x, v in zip(xs, fld.values):
                fh.write(f"{x!r},{v!r}\n")
        else:
            fh.write("x,y,value\n")
            xs = grid.axis_coords(0)
            ys = grid.axis_coords(1)
            for i, x in enumerate(xs):
                row = fld.values[i]
                for y, v in zip(ys, row):
                    fh.write(f"{x!r},{y!r},{v!r}\n")
