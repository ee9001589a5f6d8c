"""Field files, the delimited cycle report, and the run manifest.

Two field formats, chosen by file suffix:

* ``.csv`` -- line 1 is the header names ``nx,ny,dx,dy``, line 2 their
  values, then ``nx`` rows of ``ny`` comma-separated values (row-major,
  x along rows).  Floats are written with ``repr``, whose shortest
  round-trip form makes read(write(f)) bit-exact.
* ``.pgm`` -- binary 16-bit (P5, maxval 65535, big-endian), values
  min-max scaled to the full range; the scale is recorded in a comment
  line ``# min <m> max <M>`` so readers can undo it (quantized).

The manifest is a JSON document recording the resolved config, the seed
and per-stream spawn keys, wall-clock timings, and the files written.
"""
from __future__ import annotations

import json
import time as _time
from pathlib import Path

import numpy as np

from . import __version__, streams
from .config import ExperimentConfig, config_values
from .grid import Grid, make_grid

ERROR_SUFFIX = "unsupported field file suffix (use .csv or .pgm)"
ERROR_CSV_HEADER = "malformed field CSV header"
ERROR_CSV_BODY = "malformed field CSV body"
ERROR_PGM = "malformed 16-bit PGM field file"

PGM_MAX = 65535


def _fmt(value: float) -> str:
    return repr(float(value))


def write_field(field: np.ndarray, grid: Grid, path: str | Path) -> None:
    """Write a field as CSV or 16-bit PGM depending on the suffix."""
    path = Path(path)
    field = np.asarray(field, dtype=float)
    if path.suffix == ".csv":
        _write_csv(field, grid, path)
    elif path.suffix == ".pgm":
        _write_pgm(field, grid, path)
    else:
        raise ValueError(ERROR_SUFFIX)


def read_field(path: str | Path) -> tuple[np.ndarray, Grid]:
    """Read a field file; PGM values are unscaled using the comment line."""
    path = Path(path)
    if path.suffix == ".csv":
        return _read_csv(path)
    if path.suffix == ".pgm":
        return _read_pgm(path)
    raise ValueError(ERROR_SUFFIX)


def _write_csv(field: np.ndarray, grid: Grid, path: Path) -> None:
    lines = ["nx,ny,dx,dy", f"{grid.nx},{grid.ny},{_fmt(grid.dx)},{_fmt(grid.dy)}"]
    for row in field:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _read_csv(path: Path) -> tuple[np.ndarray, Grid]:
    lines = path.read_text(encoding="ascii").splitlines()
    if len(lines) < 3 or lines[0].strip() != "nx,ny,dx,dy":
        raise ValueError(ERROR_CSV_HEADER)
    try:
        nx_s, ny_s, dx_s, dy_s = lines[1].split(",")
        grid = make_grid(int(nx_s), int(ny_s), float(dx_s), float(dy_s))
    except ValueError as exc:
        raise ValueError(f"{ERROR_CSV_HEADER}: {exc}") from None
    body = lines[2:]
    if len(body) != grid.nx:
        raise ValueError(ERROR_CSV_BODY)
    try:
        field = np.array([[float(v) for v in line.split(",")] for line in body])
    except ValueError:
        raise ValueError(ERROR_CSV_BODY) from None
    if field.shape != grid.shape:
        raise ValueError(ERROR_CSV_BODY)
    return field, grid


def _write_pgm(field: np.ndarray, grid: Grid, path: Path) -> None:
    lo = float(np.min(field))
    hi = float(np.max(field))
    if hi > lo:
        scaled = np.round((field - lo) / (hi - lo) * PGM_MAX)
    else:
        scaled = np.zeros_like(field)
    header = f"P5\n# min {_fmt(lo)} max {_fmt(hi)}\n{grid.ny} {grid.nx}\n{PGM_MAX}\n"
    path.write_bytes(header.encode("ascii") + scaled.astype(">u2").tobytes())


def _read_pgm(path: Path) -> tuple[np.ndarray, Grid]:
    raw = path.read_bytes()
    # Header: magic, comment with the scale, dims, maxval, then raster.
    parts = raw.split(b"\n", 4)
    if len(parts) != 5 or parts[0] != b"P5" or not parts[1].startswith(b"# min "):
        raise ValueError(ERROR_PGM)
    try:
        tokens = parts[1].decode("ascii").split()
        lo, hi = float(tokens[2]), float(tokens[4])
        width, height = (int(t) for t in parts[2].split())
        maxval = int(parts[3])
        pixels = np.frombuffer(parts[4], dtype=">u2", count=width * height)
    except (ValueError, IndexError):
        raise ValueError(ERROR_PGM) from None
    if maxval != PGM_MAX:
        raise ValueError(ERROR_PGM)
    field = pixels.reshape(height, width).astype(float)
    if hi > lo:
        field = lo + field / PGM_MAX * (hi - lo)
    else:
        field = np.full((height, width), lo)
    # Spacing is not stored in PGM; report unit spacing.
    return field, make_grid(height, width, 1.0, 1.0)


def write_report_csv(reports, path: str | Path) -> None:
    """Per-cycle metrics as CSV; deterministic (no timing columns)."""
    from .experiment import REPORT_COLUMNS

    lines = [",".join(REPORT_COLUMNS)]
    for report in reports:
        row = [str(report.cycle), _fmt(report.time)]
        row += [
            _fmt(getattr(report, name))
            for name in REPORT_COLUMNS[2:]
        ]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


class ExperimentWriter:
    """Writes the per-cycle dumps, figures, report, and manifest of a run."""

    def __init__(self, out_dir: Path, config: ExperimentConfig, figures: bool = True):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.figures = figures
        self.files: list[str] = []

    def _dump(self, field: np.ndarray, stem: str, title: str) -> None:
        for suffix in (".csv", ".pgm"):
            path = self.out_dir / (stem + suffix)
            write_field(field, self.config.grid, path)
            self.files.append(path.name)
        if self.figures:
            from . import figures as _figures

            path = self.out_dir / (stem + ".png")
            _figures.save_field_figure(field, self.config.grid, path, title=title)
            self.files.append(path.name)

    def write_spinup(self, state) -> None:
        self._dump(state.infected, "spinup_infected", f"infected, t={state.time:g}")

    def write_cycle(self, report) -> None:
        base = f"cycle_{report.cycle:02d}"
        self._dump(report.forecast_infected, base + "_forecast_infected",
                   f"cycle {report.cycle} forecast mean")
        self._dump(report.data_infected, base + "_data_infected",
                   f"cycle {report.cycle} data")
        self._dump(report.analysis_infected, base + "_analysis_infected",
                   f"cycle {report.cycle} analysis mean")
        if self.figures:
            from . import figures as _figures

            path = self.out_dir / (base + "_panel.png")
            _figures.save_cycle_figure(report, self.config.grid, path, self.config.variant)
            self.files.append(path.name)

    def write_report(self, reports) -> None:
        path = self.out_dir / "report.csv"
        write_report_csv(reports, path)
        self.files.append(path.name)

    def write_manifest(self, reports, timings: dict) -> None:
        def finite_or_none(value: float):
            return float(value) if np.isfinite(value) else None

        manifest = {
            "artifact": "epifilter",
            "version": __version__,
            "created_unix": _time.time(),
            "variant": self.config.variant,
            "master_seed": self.config.master_seed,
            "lanes": self.config.lanes,
            "streams": streams.stream_table(self.config.master_seed, self.config.n_members),
            "config": config_values(self.config),
            "observation_variance_used": [finite_or_none(r.obs_variance_used) for r in reports],
            "position_variance_used": [finite_or_none(r.position_variance_used) for r in reports],
            "timings_seconds": timings,
            "files": sorted(set(self.files)),
        }
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="ascii")
