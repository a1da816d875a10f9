"""Coefficient-level model: fragmentation kernels, growth and fragmentation
rates, their moments and the scalar laws derived from them.

The fragmentation kernel is represented exactly as a finite list of atoms
plus piecewise power-law density pieces on subintervals of (0, 1).  All
moments, truncations and restricted mass/count integrals then have closed
forms, which the discretization and calibration layers rely on.  A third,
optional family of log-damped density pieces ``p * z**-1 * (-ln z)**-beta``
exists solely to express pathological kernels whose moment curve has a
finite limit at its left endpoint; their moments fall back to quadrature.

All model objects are immutable after construction and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize

from .errors import (
    ConfigError,
    EmptyTruncation,
    QuadratureFailure,
    TargetOutOfRange,
)

MASS_TOL = 1e-12
K_RESIDUAL_TOL = 1e-12


# ---------------------------------------------------------------------------
# fragmentation kernel
# ---------------------------------------------------------------------------

def _power_integral(expo, a, b):
    """Integral of z**expo over [a, b], +inf when divergent at a = 0."""
    if a == b:
        return 0.0
    q = expo + 1.0
    if a == 0.0 and q <= 0.0:
        return math.inf
    if abs(q) < 1e-14:
        return math.log(b / a)
    return (b ** q - a ** q) / q


def _power_integral_vec(expo, a, bs):
    """Vectorized integral of z**expo over [a, b] for an array of b >= a."""
    bs = np.asarray(bs, dtype=float)
    q = expo + 1.0
    if a == 0.0 and q <= 0.0:
        return np.full_like(bs, math.inf)
    if abs(q) < 1e-14:
        with np.errstate(divide="ignore"):
            return np.log(bs / a)
    return (np.power(bs, q) - a ** q) / q


def _log_piece_moment(beta, p, zlo, zhi, r):
    """r-th moment of p * z**-1 * (-ln z)**-beta on (zlo, zhi)."""
    u_hi = -math.log(zhi)
    u_lo = math.inf if zlo == 0.0 else -math.log(zlo)
    if r == 0.0:
        if beta <= 1.0 and zlo == 0.0:
            return math.inf
        if zlo == 0.0:
            return p * u_hi ** (1.0 - beta) / (beta - 1.0)
        if abs(beta - 1.0) < 1e-14:
            return p * math.log(u_lo / u_hi)
        return p * (u_hi ** (1.0 - beta) - u_lo ** (1.0 - beta)) / (beta - 1.0)
    if r < 0.0 and zlo == 0.0:
        return math.inf
    val, err = integrate.quad(
        lambda u: math.exp(-r * u) * u ** (-beta), u_hi, u_lo, limit=200)
    if err > 1e-8 * (1.0 + abs(val)):
        raise QuadratureFailure(f"log-piece moment r={r}: error estimate {err:.2e}")
    return p * val


@dataclass(frozen=True)
class FragmentationKernel:
    """Fragment-size distribution: atoms plus power-law density pieces.

    atoms       : tuple of (z, w), z in (0,1), w > 0
    pieces      : tuple of (nu, p, zlo, zhi), density p*z**nu on (zlo, zhi)
    log_pieces  : tuple of (beta, p, zlo, zhi), density p*z**-1*(-ln z)**-beta
    """

    atoms: tuple = ()
    pieces: tuple = ()
    log_pieces: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(tuple(map(float, a)) for a in self.atoms))
        object.__setattr__(self, "pieces", tuple(tuple(map(float, p)) for p in self.pieces))
        object.__setattr__(self, "log_pieces",
                           tuple(tuple(map(float, p)) for p in self.log_pieces))
        if not (self.atoms or self.pieces or self.log_pieces):
            raise ConfigError("empty fragmentation kernel")
        for z, w in self.atoms:
            if not (0.0 < z < 1.0):
                raise ConfigError(f"atom location {z} outside (0, 1)")
            if w <= 0.0:
                raise ConfigError(f"atom weight {w} must be positive")
        for nu, p, zlo, zhi in self.pieces:
            if not (0.0 <= zlo < zhi <= 1.0):
                raise ConfigError(f"piece support ({zlo}, {zhi}) invalid")
            if p <= 0.0:
                raise ConfigError("piece coefficient must be positive")
            if zlo == 0.0 and nu <= -1.0:
                raise ConfigError(
                    f"piece exponent {nu} with support touching 0 gives an "
                    "infinite measure")
        for beta, p, zlo, zhi in self.log_pieces:
            if not (0.0 <= zlo < zhi < 1.0):
                raise ConfigError("log-damped piece support must stay below 1")
            if p <= 0.0:
                raise ConfigError("log-damped coefficient must be positive")
            if zlo == 0.0 and beta <= 1.0:
                raise ConfigError("log damping needs beta > 1 at the origin")
        m1 = self.moment(1.0)
        if not math.isfinite(m1) or abs(m1 - 1.0) > MASS_TOL:
            raise ConfigError(
                f"mass conservation violated: first moment {m1!r} != 1")

    # -- moments ------------------------------------------------------------

    def moment(self, r):
        """r-th moment; +inf when the integral diverges."""
        total = 0.0
        for z, w in self.atoms:
            total += w * z ** r
        for nu, p, zlo, zhi in self.pieces:
            val = _power_integral(nu + r, zlo, zhi)
            if not math.isfinite(val):
                return math.inf
            total += p * val
        for beta, p, zlo, zhi in self.log_pieces:
            val = _log_piece_moment(beta, p, zlo, zhi, r)
            if not math.isfinite(val):
                return math.inf
            total += val
        return total

    def count_between(self, a, b):
        """Restricted zero-moment: kernel measure of [a, b]."""
        return self._restricted_moment(0.0, a, b)

    def mass_between(self, a, b):
        """Restricted first moment of the kernel over [a, b]."""
        return self._restricted_moment(1.0, a, b)

    def _restricted_moment(self, r, a, b):
        total = 0.0
        for z, w in self.atoms:
            if a <= z <= b:
                total += w * z ** r
        for nu, p, zlo, zhi in self.pieces:
            lo, hi = max(zlo, a), min(zhi, b)
            if lo < hi:
                total += p * _power_integral(nu + r, lo, hi)
        for beta, p, zlo, zhi in self.log_pieces:
            lo, hi = max(zlo, a), min(zhi, b)
            if lo < hi:
                total += _log_piece_moment(beta, p, lo, hi, r)
        return total

    # -- structure ------------------------------------------------------------

    @property
    def z0(self):
        """Infimum of the kernel support."""
        cands = [z for z, _ in self.atoms]
        cands += [zlo for _, _, zlo, _ in self.pieces]
        cands += [zlo for _, _, zlo, _ in self.log_pieces]
        return min(cands)

    @property
    def r_lower(self):
        """Left endpoint of the finite-moment range, computed structurally."""
        cands = [-math.inf]
        for nu, _, zlo, _ in self.pieces:
            if zlo == 0.0:
                cands.append(-(nu + 1.0))
        for _, _, zlo, _ in self.log_pieces:
            if zlo == 0.0:
                cands.append(0.0)
        return max(cands)

    def moment_left_limit_is_infinite(self):
        """Whether the moment curve blows up at its left endpoint.

        Decided from the representation: power-law pieces at the origin and
        anything supported away from the origin diverge; a log-damped piece
        at the origin has a finite limit and breaks the property when it is
        the binding constraint.
        """
        rl = self.r_lower
        if rl == -math.inf:
            return True
        for nu, _, zlo, _ in self.pieces:
            if zlo == 0.0 and -(nu + 1.0) == rl:
                return True
        return False

    def describe(self):
        parts = []
        if self.atoms:
            parts.append("atoms " + ", ".join(f"({z:g},{w:g})" for z, w in self.atoms))
        if self.pieces:
            parts.append("pieces " + ", ".join(
                f"{p:g}*z^{nu:g} on ({a:g},{b:g})" for nu, p, a, b in self.pieces))
        if self.log_pieces:
            parts.append("log-damped " + ", ".join(
                f"beta={beta:g} on ({a:g},{b:g})" for beta, _, a, b in self.log_pieces))
        return "; ".join(parts)


def moment(kernel, r):
    """r-th moment of the kernel, +inf when divergent."""
    return kernel.moment(r)


def infimum_support(kernel):
    """Smallest fragment fraction the kernel can produce."""
    return kernel.z0


def solve_k(kernel, lam, B_inf):
    """Solve ``moment(k) = 1 + lam/B_inf`` for the unique k < 1.

    The moment curve is strictly decreasing, so the root is bracketed by
    expanding downward from r = 1 until the curve exceeds the target.
    """
    if lam <= 0.0 or B_inf <= 0.0:
        raise ConfigError("solve_k needs lam > 0 and B_inf > 0")
    target = 1.0 + lam / B_inf
    rl = kernel.r_lower

    lo = None
    if math.isfinite(rl):
        delta = 0.5 * (1.0 - rl)
        for _ in range(60):
            cand = rl + delta
            if kernel.moment(cand) > target:
                lo = cand
                break
            delta *= 0.5
    else:
        step = 1.0
        cand = 0.0
        for _ in range(80):
            if kernel.moment(cand) > target:
                lo = cand
                break
            cand -= step
            step *= 2.0
    if lo is None:
        raise TargetOutOfRange(
            f"moment target {target:g} not reachable; the moment curve stays "
            f"below it near r_lower={rl:g}")

    k = optimize.brentq(lambda r: kernel.moment(r) - target, lo, 1.0,
                        xtol=1e-15, rtol=8.9e-16, maxiter=200)
    resid = abs(kernel.moment(k) - target)
    if resid > K_RESIDUAL_TOL:
        raise TargetOutOfRange(
            f"moment residual {resid:.2e} above {K_RESIDUAL_TOL:g} at k={k!r}")
    return k


def truncate_kernel(kernel, eps):
    """Restrict the kernel to [eps, 1] and renormalize to unit mass."""
    if not (0.0 < eps < 1.0):
        raise ConfigError(f"truncation level {eps} outside (0, 1)")
    rho = kernel.mass_between(eps, 1.0)
    if rho <= 0.0:
        raise EmptyTruncation(f"no kernel mass at or above eps={eps:g}")
    atoms = tuple((z, w / rho) for z, w in kernel.atoms if z >= eps)
    pieces = tuple((nu, p / rho, max(zlo, eps), zhi)
                   for nu, p, zlo, zhi in kernel.pieces if zhi > eps)
    log_pieces = tuple((beta, p / rho, max(zlo, eps), zhi)
                       for beta, p, zlo, zhi in kernel.log_pieces if zhi > eps)
    return FragmentationKernel(atoms=atoms, pieces=pieces, log_pieces=log_pieces)


# ---------------------------------------------------------------------------
# growth rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthRate:
    """Particle growth speed, either a power law or a tabulated profile.

    The power-law form is tau_inf * x**alpha.  Tables are piecewise linear
    in x with constant extension beyond both ends, which keeps travel times
    and the characteristic flow in closed form.
    """

    kind: str
    tau_inf: float = 1.0
    alpha: float = 0.0
    table_x: tuple = ()
    table_v: tuple = ()

    @classmethod
    def power_law(cls, tau_inf, alpha):
        if tau_inf <= 0.0:
            raise ConfigError("tau_inf must be positive")
        return cls(kind="powerlaw", tau_inf=float(tau_inf), alpha=float(alpha))

    @classmethod
    def constant(cls, value):
        return cls.power_law(value, 0.0)

    @classmethod
    def from_table(cls, xs, values):
        xs = tuple(float(x) for x in xs)
        vs = tuple(float(v) for v in values)
        if len(xs) != len(vs) or len(xs) < 2:
            raise ConfigError("growth table needs at least two points")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError("growth table abscissae must increase")
        if min(vs) <= 0.0:
            raise ConfigError("growth rate must be positive")
        if xs[0] <= 0.0:
            raise ConfigError("growth table abscissae must be positive")
        return cls(kind="table", table_x=xs, table_v=vs)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "powerlaw":
            if self.alpha == 0.0:
                return np.full_like(x, self.tau_inf)
            with np.errstate(divide="ignore"):
                return self.tau_inf * np.power(x, self.alpha)
        return np.interp(x, self.table_x, self.table_v)

    def travel_time_from_zero(self, x):
        """Time for the flow started at 0+ to reach x; +inf when unreachable."""
        x = np.asarray(x, dtype=float)
        if self.kind == "powerlaw":
            if self.alpha >= 1.0:
                return np.full_like(x, math.inf)
            q = 1.0 - self.alpha
            return np.power(x, q) / (self.tau_inf * q)
        knots, times = self._table_time_knots()
        return np.interp(x, knots, times) + self._table_tail_time(x, knots, times)

    def _table_time_knots(self):
        # travel time accumulated at each table knot, exact for the
        # piecewise-linear representation
        xs = np.asarray(self.table_x)
        vs = np.asarray(self.table_v)
        segs = [xs[0] / vs[0]]
        for (x0, x1, v0, v1) in zip(xs[:-1], xs[1:], vs[:-1], vs[1:]):
            if v1 == v0:
                segs.append((x1 - x0) / v0)
            else:
                segs.append((x1 - x0) / (v1 - v0) * math.log(v1 / v0))
        times = np.cumsum(segs)
        return xs, times

    def _table_tail_time(self, x, knots, times):
        tail = np.maximum(np.asarray(x, dtype=float) - knots[-1], 0.0)
        return tail / self.table_v[-1]

    def flow(self, x, t):
        """Position after time t along dX/dt = tau(X); 0 when the backward
        characteristic reaches the origin first."""
        x = np.asarray(x, dtype=float)
        if self.kind == "powerlaw":
            if self.alpha == 0.0:
                return np.maximum(x + self.tau_inf * t, 0.0)
            q = 1.0 - self.alpha
            base = np.power(x, q) + q * self.tau_inf * t
            out = np.where(base > 0.0, np.power(np.maximum(base, 0.0), 1.0 / q), 0.0)
            return out
        # tabulated: invert the travel-time map
        knots, times = self._table_time_knots()
        tt = self.travel_time_from_zero(x) + t
        out = np.empty_like(x)
        below = tt <= 0.0
        out[below] = 0.0
        inside = (~below) & (tt <= times[-1])
        out[inside] = np.interp(tt[inside], times, knots)
        above = tt > times[-1]
        out[above] = knots[-1] + (tt[above] - times[-1]) * self.table_v[-1]
        if not np.all(np.isfinite(out)):
            from .errors import FlowFailure
            raise FlowFailure("non-finite characteristic position")
        return out


# ---------------------------------------------------------------------------
# fragmentation rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FragmentationRate:
    """Total fragmentation rate with an optional step modifier.

    Representations of the base rate:
      constant  -- B_inf everywhere
      plateau   -- piecewise-constant profile on [0, A0), B_inf beyond
      powerlaw  -- B_inf * max(x, x_cap)**gamma (capped near the origin)
    The modifier adds eta on [A, infinity).
    """

    kind: str
    B_inf: float
    profile_edges: tuple = ()
    profile_values: tuple = ()
    gamma: float = 0.0
    x_cap: float = 1e-6
    eta: float = 0.0
    A: float = None

    @classmethod
    def constant(cls, B_inf):
        # zero is representable (pure transport); the positivity of the
        # plateau is a hypothesis, checked by validate_hypotheses
        if B_inf < 0.0:
            raise ConfigError("B_inf must be nonnegative")
        return cls(kind="constant", B_inf=float(B_inf))

    @classmethod
    def plateau(cls, profile_edges, profile_values, B_inf):
        edges = tuple(float(e) for e in profile_edges)
        vals = tuple(float(v) for v in profile_values)
        if len(edges) != len(vals):
            raise ConfigError("plateau profile edges and values differ in length")
        if any(b <= a for a, b in zip((0.0,) + edges, edges)):
            raise ConfigError("plateau profile edges must increase from 0")
        if B_inf <= 0.0:
            raise ConfigError("B_inf must be positive")
        if any(v < 0.0 for v in vals):
            raise ConfigError("fragmentation rate must be nonnegative")
        return cls(kind="plateau", B_inf=float(B_inf),
                   profile_edges=edges, profile_values=vals)

    @classmethod
    def power_law(cls, B_inf, gamma, x_cap=1e-6):
        if B_inf <= 0.0 or x_cap <= 0.0:
            raise ConfigError("B_inf and x_cap must be positive")
        return cls(kind="powerlaw", B_inf=float(B_inf), gamma=float(gamma),
                   x_cap=float(x_cap))

    def __post_init__(self):
        if self.A is not None:
            if self.eta <= -self.B_inf:
                raise ConfigError("modifier eta must exceed -B_inf")
            if self.A < self.A0:
                raise ConfigError("modifier threshold A must be >= A0")

    def with_modifier(self, eta, A):
        return replace(self, eta=float(eta), A=float(A))

    @property
    def A0(self):
        """Right endpoint of the non-plateau region (0 when none)."""
        if self.kind == "plateau":
            return self.profile_edges[-1]
        return 0.0

    @property
    def has_plateau(self):
        return self.kind in ("constant", "plateau") or \
            (self.kind == "powerlaw" and self.gamma == 0.0)

    def base_value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.B_inf)
        if self.kind == "plateau":
            out = np.full_like(x, self.B_inf)
            prev = 0.0
            for edge, val in zip(self.profile_edges, self.profile_values):
                out[(x >= prev) & (x < edge)] = val
                prev = edge
            return out
        return self.B_inf * np.power(np.maximum(x, self.x_cap), self.gamma)

    def value(self, x):
        out = self.base_value(x)
        if self.A is not None and self.eta != 0.0:
            out = out + self.eta * (np.asarray(x, dtype=float) >= self.A)
        return out

    def base_sup(self, x_max=None):
        """Essential sup of the base rate over [0, x_max] (whole axis if None)."""
        if self.kind == "constant":
            return self.B_inf
        if self.kind == "plateau":
            return max(max(self.profile_values, default=0.0), self.B_inf)
        if self.gamma == 0.0:
            return self.B_inf
        if self.gamma < 0.0:
            return self.B_inf * self.x_cap ** self.gamma
        if x_max is None:
            return math.inf
        return self.B_inf * max(x_max, self.x_cap) ** self.gamma

    def support_is_connected(self):
        vals = list(self.profile_values) + [self.B_inf]
        positive = [v > 0.0 for v in vals]
        if not any(positive):
            return False
        first = positive.index(True)
        return all(positive[first:])

    def breakpoints(self):
        """Positions where the (modified) rate changes analytic form."""
        pts = set()
        if self.kind == "plateau":
            pts.update(self.profile_edges)
        if self.kind == "powerlaw":
            pts.add(self.x_cap)
        if self.A is not None:
            pts.add(self.A)
        return sorted(pts)

    def segments(self, upper):
        """Analytic segments (a, b, const, coeff, expo) covering (0, upper];
        the modified rate is const + coeff * x**expo on each."""
        cuts = [0.0] + [c for c in self.breakpoints() if c < upper] + [upper]
        cuts = sorted(set(cuts))
        segs = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            step = self.eta if (self.A is not None and mid >= self.A) else 0.0
            if self.kind == "powerlaw" and mid >= self.x_cap:
                segs.append((a, b, step, self.B_inf, self.gamma))
            else:
                base = float(self.base_value(np.array([mid]))[0])
                segs.append((a, b, base + step, 0.0, 0.0))
        return segs


# ---------------------------------------------------------------------------
# coefficient set and scalar laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSet:
    tau: GrowthRate
    frag: FragmentationRate
    kernel: FragmentationKernel

    def b_value(self, x):
        return self.frag.value(x)

    def lambda_primitive(self, x, lam):
        """Primitive of (lam + B)/tau vanishing at x = 1, vectorized in x.

        Closed form whenever tau is a power law; tabulated growth rates fall
        back to adaptive quadrature segment by segment.
        """
        if lam < 0.0:
            raise ConfigError("lambda_primitive needs lam >= 0")
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(xs < 0.0):
            raise ConfigError("lambda_primitive defined for x >= 0 only")
        hi = max(float(xs.max()), 1.0)
        segs = self.frag.segments(hi * (1.0 + 1e-15))
        if self.tau.kind == "powerlaw":
            out = self._primitive_power_tau(xs, lam, segs)
        else:
            out = self._primitive_quad(xs, lam)
        return out if np.ndim(x) else float(out[0])

    def _primitive_power_tau(self, xs, lam, segs):
        tau_inf, alpha = self.tau.tau_inf, self.tau.alpha

        def seg_integral_vec(a, b, const, coeff, expo, ub):
            # integral over [a, min(b, ub)] of (lam + const + coeff*y**expo)/tau
            top = np.minimum(ub, b)
            val = (lam + const) * _power_integral_vec(-alpha, a, top)
            if coeff != 0.0:
                val = val + coeff * _power_integral_vec(expo - alpha, a, top)
            return val / tau_inf

        # accumulated primitive at every segment cut, anchored at x = 1
        cuts = np.array([s[0] for s in segs] + [segs[-1][1]])
        acc = np.zeros(len(cuts))
        for i, (a, b, const, coeff, expo) in enumerate(segs):
            acc[i + 1] = acc[i] + float(
                seg_integral_vec(a, b, const, coeff, expo, np.array([b]))[0])

        def evaluate(points):
            idx = np.clip(np.searchsorted(cuts, points, side="right") - 1,
                          0, len(segs) - 1)
            out = acc[idx].copy()
            for si in np.unique(idx):
                a, b, const, coeff, expo = segs[si]
                sel = idx == si
                out[sel] += seg_integral_vec(a, b, const, coeff, expo, points[sel])
            return out

        anchor = float(evaluate(np.array([1.0]))[0])
        return evaluate(xs) - anchor

    def _primitive_quad(self, xs, lam):
        def integrand(y):
            return (lam + float(self.b_value(np.array([y]))[0])) / \
                float(self.tau.value(np.array([y]))[0])

        pts = [p for p in self.frag.breakpoints() if p > 0.0]
        out = np.empty_like(xs)
        for i, xv in enumerate(xs):
            inner = [p for p in pts if min(1.0, xv) < p < max(1.0, xv)]
            val, err = integrate.quad(integrand, 1.0, xv, points=inner or None,
                                      limit=200)
            if err > 1e-8 * (1.0 + abs(val)):
                raise QuadratureFailure(
                    f"primitive quadrature error {err:.2e} at x={xv:g}")
            out[i] = val
        return out


def capital_lambda(coeffs, x, lam):
    """Primitive of (lam + B)/tau vanishing at x = 1."""
    return coeffs.lambda_primitive(x, lam)


# ---------------------------------------------------------------------------
# hypothesis report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClauseCheck:
    clause: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class HypothesisReport:
    clauses: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.clauses)

    def failed_clauses(self):
        return [c for c in self.clauses if not c.passed]

    def summary(self):
        lines = []
        for c in self.clauses:
            mark = "ok  " if c.passed else "FAIL"
            lines.append(f"{mark} {c.clause}: {c.detail}")
        return "\n".join(lines)

    def as_dict(self):
        return {
            "passed": self.passed,
            "clauses": [
                {"clause": c.clause, "passed": c.passed, "detail": c.detail}
                for c in self.clauses
            ],
        }


def validate_hypotheses(coeffs):
    """Check every structural hypothesis on the coefficients and report
    pass/fail per clause; never raises."""
    checks = []
    tau, frag, kernel = coeffs.tau, coeffs.frag, coeffs.kernel

    if tau.kind == "powerlaw":
        ok = tau.alpha < 1.0
        checks.append(ClauseCheck(
            "growth.inv_tau_locally_integrable", ok,
            f"power law with alpha={tau.alpha:g}" + ("" if ok else " >= 1")))
        checks.append(ClauseCheck(
            "growth.subcritical_exponent", tau.alpha < 1.0,
            f"alpha={tau.alpha:g} (needs < 1)"))
    else:
        checks.append(ClauseCheck(
            "growth.inv_tau_locally_integrable", True,
            "tabulated rate, positive constant near 0"))
        checks.append(ClauseCheck(
            "growth.subcritical_exponent", True, "tabulated rate is bounded"))

    sup = frag.base_sup()
    ok = math.isfinite(sup)
    checks.append(ClauseCheck(
        "frag_rate.bounded", ok,
        f"sup B = {sup:g}" if ok else "base rate unbounded"))
    ok = frag.support_is_connected()
    checks.append(ClauseCheck(
        "frag_rate.connected_support", ok,
        "support is an interval" if ok else "support has a gap"))
    ok = frag.has_plateau and frag.B_inf > 0.0
    checks.append(ClauseCheck(
        "frag_rate.plateau", ok,
        f"B = B_inf = {frag.B_inf:g} for x >= {frag.A0:g}" if ok
        else ("plateau level is zero" if frag.B_inf == 0.0
              else f"power law with gamma={frag.gamma:g} never settles")))

    m1 = kernel.moment(1.0)
    ok = abs(m1 - 1.0) <= MASS_TOL
    checks.append(ClauseCheck(
        "kernel.mass_conservation", ok, f"first moment = {m1!r}"))
    m0 = kernel.moment(0.0)
    ok = math.isfinite(m0) and m0 > 1.0
    checks.append(ClauseCheck(
        "kernel.mean_fragment_count", ok, f"zeroth moment = {m0!r}"))
    ok = kernel.moment_left_limit_is_infinite()
    checks.append(ClauseCheck(
        "kernel.moment_divergence", ok,
        "moment curve blows up at its left endpoint" if ok
        else f"finite limit at r_lower={kernel.r_lower:g}"))

    return HypothesisReport(clauses=tuple(checks))


# ---------------------------------------------------------------------------
# named kernels
# ---------------------------------------------------------------------------

def mitosis_kernel():
    """Equal binary splitting: two fragments of half size."""
    return FragmentationKernel(atoms=((0.5, 2.0),))


def uniform_kernel():
    """Uniform fragment-size density 2 on (0, 1)."""
    return FragmentationKernel(pieces=((0.0, 2.0, 0.0, 1.0),))


def asymmetric_kernel(nu):
    """Binary splitting into fractions nu and 1 - nu."""
    if not (0.0 < nu < 0.5):
        raise ConfigError("asymmetric kernel needs nu in (0, 1/2)")
    return FragmentationKernel(atoms=((nu, 1.0), (1.0 - nu, 1.0)))


def power_law_kernel(nu):
    """Density (nu + 2) z**nu on (0, 1); needs nu > -1 for a finite measure."""
    if nu <= -1.0:
        raise ConfigError("power-law kernel needs nu > -1")
    return FragmentationKernel(pieces=((nu, nu + 2.0, 0.0, 1.0),))


def log_damped_kernel(beta=2.0, z_hi=0.5):
    """Pathological kernel with a finite moment limit at its left endpoint.

    Density proportional to z**-1 * (-ln z)**-beta on (0, z_hi), normalized
    to unit mass.  Violates the moment-divergence hypothesis.
    """
    raw_mass = _log_piece_moment(beta, 1.0, 0.0, z_hi, 1.0)
    return FragmentationKernel(log_pieces=((beta, 1.0 / raw_mass, 0.0, z_hi),))


KERNEL_PRESETS = {
    "mitosis": mitosis_kernel,
    "uniform": uniform_kernel,
}
