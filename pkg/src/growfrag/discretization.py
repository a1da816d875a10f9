"""Finite-volume grid on (0, L], operator assembly and weighted functionals.

Fields are vectors of cell averages.  The transport part is an upwind flux
scheme with zero inflow at the origin; the fragmentation gain is assembled
in source form: every mother cell deposits its fragments at the scaled
positions, and each deposit is split between the two bracketing cell
centers so that fragment number and fragment mass are both conserved.
For power-law density pieces the split is integrated in closed form, so
the per-column number and mass identities hold to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse

from .errors import BadLayout, ConfigError
from .model import _power_integral


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        object.__setattr__(self, "edges", edges)
        if edges.ndim != 1 or edges.size < 3:
            raise BadLayout("grid needs at least two cells")
        if edges[0] != 0.0:
            raise BadLayout("first edge must be exactly 0")
        if np.any(np.diff(edges) <= 0.0):
            raise BadLayout("edges must strictly increase")

    @property
    def n(self):
        return self.edges.size - 1

    @property
    def L(self):
        return float(self.edges[-1])

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self):
        return np.diff(self.edges)

    def cell_of(self, x):
        """Index of the cell containing x (clipped to the grid)."""
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return int(np.clip(idx, 0, self.n - 1))

    def to_csv_rows(self):
        c, w = self.centers, self.widths
        return [(i, self.edges[i], self.edges[i + 1], c[i], w[i])
                for i in range(self.n)]


def build_grid(L, N, layout="geometric", ratio=None, first_width=None):
    """Construct a grid of N cells on (0, L].

    layout 'uniform' gives equal widths; 'geometric' grows widths by a fixed
    ratio, refining near the origin.  The ratio is solved from the requested
    first cell width (default min(L/N, 1e-3 L)) unless given explicitly.
    """
    if L <= 0.0 or N < 2:
        raise BadLayout(f"need L > 0 and N >= 2, got L={L}, N={N}")
    if layout == "uniform":
        edges = np.linspace(0.0, L, N + 1)
    elif layout == "geometric":
        if ratio is None:
            target = first_width if first_width is not None else min(L / N, 1e-3 * L)
            if target <= 0.0 or target * N > L:
                raise BadLayout(f"first width {target} infeasible for N={N}, L={L}")
            if abs(target - L / N) / (L / N) < 1e-12:
                ratio = 1.0
            else:
                def excess(r):
                    # log of first-width fraction (r-1)/(r^N - 1), overflow-safe
                    n_log_r = N * math.log(r)
                    log_denom = n_log_r if n_log_r > 50.0 else \
                        math.log(math.expm1(n_log_r))
                    return math.log(r - 1.0) - log_denom - math.log(target / L)

                hi = 1.0 + 1.0 / N
                while excess(hi) > 0.0:
                    hi = 1.0 + 2.0 * (hi - 1.0)
                    if hi > 1e6:
                        raise BadLayout(
                            f"first width {target} unreachable for N={N}, L={L}")
                ratio = optimize.brentq(excess, 1.0 + 1e-15, hi, xtol=1e-14)
        if ratio < 1.0:
            raise BadLayout(f"geometric ratio {ratio} must be >= 1")
        if ratio == 1.0:
            edges = np.linspace(0.0, L, N + 1)
        else:
            w1 = L * (ratio - 1.0) / (ratio ** N - 1.0)
            widths = w1 * ratio ** np.arange(N)
            edges = np.concatenate(([0.0], np.cumsum(widths)))
            edges[-1] = L
    else:
        raise BadLayout(f"unknown layout {layout!r}")
    edges[0] = 0.0
    return Grid(edges=edges)


# ---------------------------------------------------------------------------
# fields and weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteField:
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.n,):
            raise ConfigError(
                f"field length {values.shape} does not match grid ({self.grid.n},)")
        if not np.all(np.isfinite(values)):
            raise ConfigError("field has non-finite entries")

    @classmethod
    def from_function(cls, grid, fn):
        return cls(values=np.asarray(fn(grid.centers), dtype=float), grid=grid)

    @classmethod
    def indicator(cls, grid, a, b):
        """Cell averages of the indicator of [a, b]."""
        lo = np.maximum(grid.edges[:-1], a)
        hi = np.minimum(grid.edges[1:], b)
        overlap = np.maximum(hi - lo, 0.0)
        return cls(values=overlap / grid.widths, grid=grid)

    def copy_with(self, values):
        return DiscreteField(values=np.asarray(values, dtype=float), grid=self.grid)


@dataclass(frozen=True)
class WeightVector:
    """Strictly positive per-cell weight samples."""

    values: np.ndarray
    descriptor: str = "custom"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if np.any(values <= 0.0) or not np.all(np.isfinite(values)):
            raise ConfigError("weights must be strictly positive and finite")

    @classmethod
    def from_field(cls, field, descriptor="phi"):
        return cls(values=field.values.copy(), descriptor=descriptor)

    @classmethod
    def power(cls, grid, r):
        return cls(values=1.0 + grid.centers ** r, descriptor=f"1+x^{r:g}")


def _values(obj):
    if isinstance(obj, (DiscreteField, WeightVector)):
        return obj.values
    return np.asarray(obj, dtype=float)


def weighted_norm(field, weight, grid=None):
    """Weighted L1 functional sum(|v| * w * dx)."""
    v, w = _values(field), _values(weight)
    g = grid or getattr(field, "grid", None)
    if g is None:
        raise ConfigError("weighted_norm needs a grid")
    return float(np.sum(np.abs(v) * w * g.widths))


def bracket(field, weight, grid=None):
    """Signed pairing sum(v * w * dx)."""
    v, w = _values(field), _values(weight)
    g = grid or getattr(field, "grid", None)
    if g is None:
        raise ConfigError("bracket needs a grid")
    return float(np.sum(v * w * g.widths))


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteOperator:
    """Matrix form of the grid operators at a fixed spectral shift."""

    transport_decay: sparse.csr_matrix   # -(tau .)' - lambda - B, upwind
    frag_gain: sparse.csr_matrix
    lambda_shift: float
    grid: Grid

    def full_matrix(self):
        return (self.transport_decay + self.frag_gain).tocsr()


def transport_bands(grid, coeffs):
    """Upwind transport stencil of -(tau g)': subdiagonal and diagonal.

    Inflow at the origin is zero and the top edge is closed (zero flux), so
    the stencil conserves cell mass exactly; mass reaching L piles up in the
    last cell instead of leaking, keeping the discrete conservation pairing
    intact on truncated domains.
    """
    tau_e = np.asarray(coeffs.tau.value(grid.edges), dtype=float)
    dx = grid.widths
    sub = tau_e[1:-1] / dx[1:]          # inflow into cell i from cell i-1
    diag = -tau_e[1:] / dx              # outflow through the right edge
    diag[-1] = 0.0
    return sub, diag


def assemble_transport(grid, coeffs, lam):
    """Sparse upwind matrix of -(tau g)' - lam g - B g with zero inflow."""
    sub, diag = transport_bands(grid, coeffs)
    b = np.asarray(coeffs.b_value(grid.centers), dtype=float)
    full_diag = diag - lam - b
    return sparse.diags([sub, full_diag], offsets=[-1, 0]).tocsr()


def _deposit_closed_form(centers, j, number_mass_segments, rows, cols, vals):
    """Split (number, mass) deposits between bracketing centers; deposits
    below the first center go wholly to cell 0 (number preserving)."""
    c0 = centers[0]
    for (i_gap, n_dep, m_dep) in number_mass_segments:
        if n_dep <= 0.0:
            continue
        if i_gap < 0:
            rows.append(0)
            cols.append(j)
            vals.append(n_dep)
            continue
        xa, xb = centers[i_gap], centers[i_gap + 1]
        share_hi = (m_dep - xa * n_dep) / (xb - xa)
        share_lo = n_dep - share_hi
        rows.append(i_gap)
        cols.append(j)
        vals.append(share_lo)
        rows.append(i_gap + 1)
        cols.append(j)
        vals.append(share_hi)


def assemble_frag_gain(grid, coeffs, log_piece_subdivisions=256):
    """Fragmentation gain matrix in source form.

    A mother cell j with rate B(x_j) deposits, for each kernel atom (z, w),
    w fragments at z*x_j, and for each density piece the z-integral is done
    exactly on every interval between consecutive center crossings, so the
    two-cell split conserves both fragment number and mass.  Log-damped
    pieces are first condensed to moment-matched point deposits.
    """
    centers = grid.centers
    dx = grid.widths
    n = grid.n
    b = np.asarray(coeffs.b_value(centers), dtype=float)
    kernel = coeffs.kernel

    eff_atoms = list(kernel.atoms)
    for (beta, p, zlo, zhi) in kernel.log_pieces:
        eff_atoms.extend(
            _condense_log_piece(beta, p, zlo, zhi, log_piece_subdivisions))

    rows, cols, vals = [], [], []
    for j in range(n):
        scale = b[j] * dx[j]
        if scale == 0.0:
            continue
        xj = centers[j]
        segs = []
        for z, w in eff_atoms:
            y = z * xj
            idx = int(np.searchsorted(centers, y, side="right")) - 1
            if y < centers[0]:
                segs.append((-1, w * scale, 0.0))
            else:
                idx = min(idx, n - 2)
                segs.append((idx, w * scale, w * scale * y))
        for (nu, p, zlo, zhi) in kernel.pieces:
            segs.extend(_piece_segments(nu, p, zlo, zhi, xj, centers, scale))
        _deposit_closed_form(centers, j, segs, rows, cols, vals)

    gain = sparse.coo_matrix(
        (np.asarray(vals) / dx[np.asarray(rows, dtype=int)],
         (rows, cols)), shape=(n, n)).tocsr()
    gain.sum_duplicates()
    return gain


def _piece_segments(nu, p, zlo, zhi, xj, centers, scale):
    """Closed-form (gap index, number, mass) deposits of one density piece."""
    # z-values at which the deposit position z*xj crosses a cell center
    z_cross = centers / xj
    lo_i = int(np.searchsorted(z_cross, zlo, side="right"))
    hi_i = int(np.searchsorted(z_cross, zhi, side="left"))
    knots = np.concatenate(([zlo], z_cross[lo_i:hi_i], [zhi]))
    out = []
    for za, zb in zip(knots[:-1], knots[1:]):
        if zb <= za:
            continue
        num = p * _power_integral(nu, za, zb) * scale
        mass = p * _power_integral(nu + 1.0, za, zb) * scale * xj
        mid = 0.5 * (za + zb) * xj
        if mid < centers[0]:
            out.append((-1, num, mass))
        else:
            gap = int(np.searchsorted(centers, mid, side="right")) - 1
            out.append((min(gap, centers.size - 2), num, mass))
    return out


def _condense_log_piece(beta, p, zlo, zhi, subdivisions):
    """Replace a log-damped piece by point deposits matching the number and
    mass of each subinterval."""
    from .model import _log_piece_moment

    knots = np.linspace(max(zlo, 1e-12), zhi, subdivisions + 1)
    atoms = []
    for za, zb in zip(knots[:-1], knots[1:]):
        num = _log_piece_moment(beta, p, za, zb, 0.0)
        if num <= 0.0:
            continue
        mass = _log_piece_moment(beta, p, za, zb, 1.0)
        atoms.append((mass / num, num))
    return atoms


def assemble_operator(grid, coeffs, lam):
    return DiscreteOperator(
        transport_decay=assemble_transport(grid, coeffs, lam),
        frag_gain=assemble_frag_gain(grid, coeffs),
        lambda_shift=float(lam),
        grid=grid,
    )


def weighted_adjoint(matrix, grid):
    """Adjoint with respect to the cell-measure inner product sum(u v dx)."""
    dx = grid.widths
    return (sparse.diags(1.0 / dx) @ matrix.T @ sparse.diags(dx)).tocsr()


def column_operator_norm(matrix, weight, grid):
    """Operator norm on the weighted-L1 field space, attained column-wise."""
    w = _values(weight) * grid.widths
    scaled = abs(matrix).T @ w          # sum_i |M_ij| w_i dx_i per column j
    return float(np.max(scaled / w))


# ---------------------------------------------------------------------------
# text exports
# ---------------------------------------------------------------------------

def matrix_to_coo_rows(matrix):
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return [(int(coo.row[k]), int(coo.col[k]), float(coo.data[k])) for k in order]
