"""Cellular-automaton compaction of a rasterized surface under a rigid plate.

The surface is rasterized into solid material columns on a cell grid.  A
horizontal plate descends one cell row per step; material cells touching the
plate are displaced, one at a time in ascending column order, each to the
nearest eligible air cell (strictly below the row the plate is about to
reach).  Distances are physical: columns are ``eps_x`` apart, rows ``eps_z``.
The degree of intimate contact (DIC) after each step is the fraction of
columns whose material touches the plate.

The automaton terminates when the cells in contact outnumber the remaining
eligible air cells.  The raw curve is padded past that point with the
fractional part of ``N_c / N_w`` (a rasterization artifact); the correction
step replaces that artifact plateau with the physical value 1.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    InvalidArgumentError,
    InvalidDataError,
    ParseError,
    ResourceLimitError,
    TerminalState,
)

DEFAULT_HORIZON = 352
DEFAULT_BASE_ROWS = 2
DEFAULT_WINDOW = 5
# Grid allocation guard: n_w * n_h cells of one byte each.
DEFAULT_CELL_CAP = 100_000_000

__all__ = [
    "DEFAULT_HORIZON",
    "DEFAULT_BASE_ROWS",
    "DEFAULT_WINDOW",
    "DEFAULT_CELL_CAP",
    "CellGrid",
    "DicCurve",
    "rasterize",
    "simulate",
    "simulate_profiles",
    "correct",
    "smooth",
    "save_curves",
    "load_curves",
]


@njit(cache=True)
def _step_kernel(occ, best_air, row_count, state, eps_x, eps_z):
    """Advance the plate by one row in place.

    ``state`` holds (plate_row, eligible_air_total).  Returns
    ``(status, value)`` where status 0 means a completed step and ``value``
    is the new contact count, status 1 means terminal and ``value`` is the
    number of contact cells that could not be relocated.  Terminal detection
    happens before any mutation.
    """
    n_w = occ.shape[0]
    p = state[0]
    eligible = state[1]
    contact_row = p - 1
    n_c = row_count[contact_row]
    if n_c > eligible:
        return 1, n_c
    ceiling = p - 2
    for c0 in range(n_w):
        if occ[c0, contact_row] == 0:
            continue
        occ[c0, contact_row] = 0
        row_count[contact_row] -= 1
        # Nearest eligible air cell.  Per column only the topmost eligible
        # air row can win (it minimizes the vertical gap), so candidates are
        # best_air[c].  Expand the column offset outward; once the horizontal
        # term alone reaches the best distance nothing further can win or tie.
        best_d2 = np.inf
        best_c = -1
        r = best_air[c0]
        if r >= 0:
            dz = (contact_row - r) * eps_z
            best_d2 = dz * dz
            best_c = c0
        dc = 1
        while True:
            left = c0 - dc
            right = c0 + dc
            if left < 0 and right >= n_w:
                break
            dx = dc * eps_x
            dx2 = dx * dx
            if best_c >= 0 and dx2 >= best_d2:
                break
            if left >= 0:
                r = best_air[left]
                if r >= 0:
                    dz = (contact_row - r) * eps_z
                    d2 = dx2 + dz * dz
                    if d2 < best_d2 or (d2 == best_d2 and left < best_c):
                        best_d2 = d2
                        best_c = left
            if right < n_w:
                r = best_air[right]
                if r >= 0:
                    dz = (contact_row - r) * eps_z
                    d2 = dx2 + dz * dz
                    if d2 < best_d2 or (d2 == best_d2 and right < best_c):
                        best_d2 = d2
                        best_c = right
            dc += 1
        if best_c < 0:
            # Unreachable: eligible air was counted before the loop.
            return -1, 0
        rr = best_air[best_c]
        occ[best_c, rr] = 1
        row_count[rr] += 1
        nb = rr - 1
        while nb >= 0 and occ[best_c, nb] == 1:
            nb -= 1
        best_air[best_c] = nb
        eligible -= 1
    # Row `ceiling` leaves the eligible band when the plate advances.
    eligible -= n_w - row_count[ceiling]
    new_ceiling = ceiling - 1
    for c in range(n_w):
        if best_air[c] > new_ceiling:
            nb = new_ceiling
            while nb >= 0 and occ[c, nb] == 1:
                nb -= 1
            best_air[c] = nb
    state[0] = p - 1
    state[1] = eligible
    return 0, row_count[ceiling]


class CellGrid:
    """Two-state cell grid with a descending compression plate.

    Construct via :func:`rasterize` or :meth:`from_column_cells`.  Columns
    are indexed 0..n_w-1 left to right, rows 0..n_h-1 bottom to top.  The
    plate starts one row above the tallest column, so the first step brings
    it down onto the highest peaks.
    """

    def __init__(self, counts: np.ndarray, eps_x: float, eps_z: float, cell_cap: int = DEFAULT_CELL_CAP):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise InvalidArgumentError("counts must be a non-empty 1-d integer array")
        if np.any(counts < 0):
            raise InvalidArgumentError("column cell counts must be non-negative")
        top = int(counts.max())
        if top < 1:
            raise InvalidArgumentError("grid has no material")
        if not (np.isfinite(eps_x) and eps_x > 0 and np.isfinite(eps_z) and eps_z > 0):
            raise InvalidArgumentError(f"cell sizes must be positive, got eps_x={eps_x}, eps_z={eps_z}")
        n_w = counts.size
        n_h = top + 1
        if n_w * n_h > cell_cap:
            raise ResourceLimitError(
                f"grid of {n_w} x {n_h} = {n_w * n_h} cells exceeds the cap of {cell_cap}"
            )
        self.eps_x = float(eps_x)
        self.eps_z = float(eps_z)
        self.n_w = n_w
        self.n_h = n_h
        self.occ = np.zeros((n_w, n_h), dtype=np.uint8)
        for c in range(n_w):
            self.occ[c, : counts[c]] = 1
        self.material_count = int(counts.sum())
        self._row_count = np.zeros(n_h, dtype=np.int64)
        for r in range(n_h):
            self._row_count[r] = int(np.count_nonzero(counts > r))
        # plate starts just above the grid; contact row of the first step is
        # the top row, which is air by construction.
        self._state = np.array([n_h, 0], dtype=np.int64)
        ceiling = n_h - 2
        self._best_air = np.full(n_w, -1, dtype=np.int64)
        for c in range(n_w):
            if counts[c] <= ceiling:
                self._best_air[c] = ceiling
        self._state[1] = int(np.sum(np.maximum(0, (ceiling + 1) - counts)))
        self.terminated = False
        self.steps_done = 0

    @classmethod
    def from_column_cells(cls, cells, eps_x: float = 1.0, eps_z: float = 1.0,
                          cell_cap: int = DEFAULT_CELL_CAP) -> "CellGrid":
        """Build a grid directly from material cell counts per column."""
        return cls(np.asarray(cells), eps_x, eps_z, cell_cap)

    @property
    def plate_row(self) -> int:
        return int(self._state[0])

    @property
    def eligible_air(self) -> int:
        """Air cells currently below the next contact row."""
        return int(self._state[1])

    def column_cells(self) -> np.ndarray:
        """Material cells per column (holes excluded), for inspection."""
        return self.occ.sum(axis=1).astype(np.int64)

    def step(self) -> int:
        """Lower the plate one row, relocating displaced material.

        Returns
        -------
        int
            Number of columns whose material touches the plate after the
            step.

        Raises
        ------
        TerminalState
            When the cells in contact outnumber the eligible air cells.  The
            grid is left untouched and every later call raises again.
        """
        if self.terminated:
            raise TerminalState(int(self._row_count[self.plate_row - 1]))
        status, value = _step_kernel(
            self.occ, self._best_air, self._row_count, self._state, self.eps_x, self.eps_z
        )
        if status == 1:
            self.terminated = True
            raise TerminalState(int(value))
        if status != 0:
            raise RuntimeError("automaton bookkeeping failed to locate counted air")
        self.steps_done += 1
        return int(value)


def rasterize(profile, eps_z: float, base_rows: int = DEFAULT_BASE_ROWS,
              cell_cap: int = DEFAULT_CELL_CAP) -> CellGrid:
    """Rasterize a profile into solid material columns.

    Each height is measured from the profile minimum and converted to a
    cell count by round-half-up, plus ``base_rows`` cells of substrate so
    even the lowest valley has material to displace.

    Parameters
    ----------
    profile : RoughnessProfile or MicroProfile
        Anything with ``heights`` (micrometres) and ``spacing``.
    eps_z : float
        Vertical cell size in micrometres.
    base_rows : int
        Substrate cells added below every column.
    cell_cap : int
        Upper bound on total grid cells; exceeding it raises
        :class:`ResourceLimitError` instead of allocating.
    """
    if not (np.isfinite(eps_z) and eps_z > 0):
        raise InvalidArgumentError(f"eps_z must be positive, got {eps_z}")
    if base_rows < 0:
        raise InvalidArgumentError(f"base_rows must be non-negative, got {base_rows}")
    h = np.asarray(profile.heights, dtype=np.float64)
    counts = np.floor((h - h.min()) / eps_z + 0.5).astype(np.int64) + base_rows
    if counts.max() < 1:
        raise InvalidArgumentError("rasterization produced an empty grid; increase base_rows")
    return CellGrid(counts, float(profile.spacing), float(eps_z), cell_cap)


@dataclass(frozen=True, eq=False)
class DicCurve:
    """Degree of intimate contact versus plate step.

    ``stage`` is one of ``raw``, ``corrected``, ``smoothed``.
    ``artifact_value`` is the rasterization plateau ``frac(N_c / N_w)`` the
    raw curve was padded with, or None if the horizon was reached before the
    automaton terminated.
    """

    id: str
    values: np.ndarray
    stage: str
    eps_z: float
    artifact_value: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise InvalidArgumentError("curve values must be a non-empty vector")
        if not np.all(np.isfinite(values)):
            raise InvalidDataError(f"curve {self.id!r} has non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise InvalidDataError(f"curve {self.id!r} leaves [0, 1]")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.stage not in ("raw", "corrected", "smoothed"):
            raise InvalidArgumentError(f"unknown curve stage {self.stage!r}")
        if not (np.isfinite(self.eps_z) and self.eps_z > 0):
            raise InvalidArgumentError(f"eps_z must be positive, got {self.eps_z}")
        if self.artifact_value is not None and not (0.0 <= self.artifact_value < 1.0):
            raise InvalidDataError(f"artifact value {self.artifact_value} outside [0, 1)")

    @property
    def horizon(self) -> int:
        return self.values.size


def simulate(profile, eps_z: float, horizon: int = DEFAULT_HORIZON,
             base_rows: int = DEFAULT_BASE_ROWS, cell_cap: int = DEFAULT_CELL_CAP) -> DicCurve:
    """Run the automaton on one profile and record the raw DIC curve.

    The curve holds one contact fraction per step.  If the automaton
    terminates before ``horizon`` steps the remaining entries are padded
    with the artifact value ``frac(N_c / N_w)``; if the horizon is reached
    first, ``artifact_value`` is None.
    """
    if horizon < 1:
        raise InvalidArgumentError(f"horizon must be positive, got {horizon}")
    grid = rasterize(profile, eps_z, base_rows=base_rows, cell_cap=cell_cap)
    values = np.empty(horizon, dtype=np.float64)
    artifact = None
    n_w = grid.n_w
    for k in range(horizon):
        try:
            values[k] = grid.step() / n_w
        except TerminalState as term:
            # Exact in integer arithmetic: frac(n_c / n_w) = (n_c mod n_w) / n_w.
            artifact = (term.n_c % n_w) / n_w
            values[k:] = artifact
            break
    return DicCurve(id=profile.id, values=values, stage="raw", eps_z=float(eps_z), artifact_value=artifact)


def _simulate_task(args):
    profile, eps_z, horizon, base_rows, window = args
    raw = simulate(profile, eps_z, horizon=horizon, base_rows=base_rows)
    return raw, smooth(correct(raw), window=window)


def simulate_profiles(profiles, eps_z: float, horizon: int = DEFAULT_HORIZON,
                      base_rows: int = DEFAULT_BASE_ROWS, window: int = DEFAULT_WINDOW,
                      jobs: int = 1):
    """Simulate a batch of profiles, optionally on a worker pool.

    Returns ``(raw_curves, smoothed_curves)`` in input order regardless of
    ``jobs``; workers only change wall time.
    """
    if jobs < 1:
        raise InvalidArgumentError(f"jobs must be positive, got {jobs}")
    tasks = [(p, eps_z, horizon, base_rows, window) for p in profiles]
    if jobs == 1 or len(tasks) < 2:
        results = [_simulate_task(t) for t in tasks]
    else:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(processes=jobs) as pool:
            results = pool.map(_simulate_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))
    raws = [r for r, _ in results]
    smoothed = [s for _, s in results]
    return raws, smoothed


def correct(curve: DicCurve) -> DicCurve:
    """Replace the trailing artifact plateau of a raw curve with 1.

    The raw curve is padded with ``frac(N_c / N_w)`` after termination; the
    physical surface is fully compacted there, so the plateau (including the
    final pre-terminal sample if it happens to equal the artifact value)
    becomes exactly 1.  A curve without an artifact is returned unchanged
    apart from the stage marker.
    """
    if curve.stage != "raw":
        raise InvalidArgumentError(f"can only correct a raw curve, got stage {curve.stage!r}")
    values = curve.values.copy()
    if curve.artifact_value is not None:
        i = values.size
        while i > 0 and values[i - 1] == curve.artifact_value:
            i -= 1
        values[i:] = 1.0
    return DicCurve(id=curve.id, values=values, stage="corrected", eps_z=curve.eps_z,
                    artifact_value=curve.artifact_value)


def smooth(curve: DicCurve, window: int = DEFAULT_WINDOW) -> DicCurve:
    """Centered moving average with a window truncated at the curve ends."""
    if curve.stage != "corrected":
        raise InvalidArgumentError(f"can only smooth a corrected curve, got stage {curve.stage!r}")
    if window < 1 or window % 2 == 0:
        raise InvalidArgumentError(f"window must be odd and positive, got {window}")
    v = curve.values
    n = v.size
    half = window // 2
    cum = np.concatenate(([0.0], np.cumsum(v)))
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    out = (cum[hi] - cum[lo]) / (hi - lo)
    # Guard the [0, 1] invariant against cumulative-sum rounding.
    np.clip(out, 0.0, 1.0, out=out)
    return DicCurve(id=curve.id, values=out, stage="smoothed", eps_z=curve.eps_z,
                    artifact_value=curve.artifact_value)


# ---------------------------------------------------------------------------
# CSV io
#
# Schema: id,stage,eps_z_um,artifact_value,d_0,...  artifact empty when None.

_CURVE_FIXED = ["id", "stage", "eps_z_um", "artifact_value"]


def save_curves(curves: list[DicCurve], path, config=None) -> None:
    """Write DIC curves to CSV.  All curves must share one horizon."""
    if not curves:
        raise InvalidArgumentError("nothing to save")
    horizon = curves[0].horizon
    for c in curves:
        if c.horizon != horizon:
            raise InvalidDataError(f"curve {c.id!r} has horizon {c.horizon}, expected {horizon}")
    header = _CURVE_FIXED + [f"d_{i}" for i in range(horizon)]
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for c in curves:
            artifact = "" if c.artifact_value is None else repr(float(c.artifact_value))
            writer.writerow([c.id, c.stage, repr(float(c.eps_z)), artifact]
                            + [repr(float(v)) for v in c.values])


def load_curves(path) -> list[DicCurve]:
    """Read DIC curves from CSV."""
    curves = []
    header = None
    with open(path, "r", newline="") as fh:
        for row_no, cells in enumerate(csv.reader(fh), start=1):
            if not cells or cells[0].startswith("#"):
                continue
            if header is None:
                header = cells
                if header[: len(_CURVE_FIXED)] != _CURVE_FIXED:
                    raise ParseError(f"missing header, expected leading columns {_CURVE_FIXED}", row=row_no)
                if len(header) - len(_CURVE_FIXED) < 1:
                    raise ParseError("header defines no value columns", row=row_no)
                continue
            if len(cells) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(cells)}", row=row_no)
            stage = cells[1]
            try:
                eps_z = float(cells[2])
            except ValueError:
                raise ParseError(f"expected a number, got {cells[2]!r}", row=row_no, column=3) from None
            artifact = None
            if cells[3] != "":
                try:
                    artifact = float(cells[3])
                except ValueError:
                    raise ParseError(f"expected a number, got {cells[3]!r}", row=row_no, column=4) from None
            values = []
            for i, cell in enumerate(cells[4:]):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"expected a number, got {cell!r}", row=row_no, column=i + 5) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite curve value", row=row_no)
            try:
                curves.append(DicCurve(id=cells[0], values=values, stage=stage, eps_z=eps_z,
                                       artifact_value=artifact))
            except (InvalidArgumentError, InvalidDataError) as exc:
                raise ParseError(str(exc), row=row_no) from exc
    if header is None:
        raise ParseError("empty file", row=1)
    return curves
