"""Exponent calculus and regime classification for u_t - div a(t,x,u,Du) = gamma|Du|^q + f.

Every formula accepts ``int``, ``Fraction`` or ``float`` arguments.  When all
arguments are exact (``int``/``Fraction``, or decimal strings parsed with
:func:`exact`) the evaluation is carried out in rational arithmetic, so that
breakpoint membership tests never flap.  Any ``float`` argument switches the
whole evaluation to double precision, with comparisons made at a relative
tolerance of ``BOUNDARY_TOL``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Optional, Union

Number = Union[int, float, Fraction]

INF = math.inf
BOUNDARY_TOL = 1e-12


class DomainError(ValueError):
    """An exponent lies outside the range where a formula or statement applies."""


def exact(value) -> Number:
    """Parse ``value`` into an exact ``Fraction`` when possible.

    Strings such as ``"1.35"`` or ``"27/20"`` become ``Fraction(27, 20)``; the
    strings ``"inf"``/``"infinity"`` map to :data:`INF`.  Floats are returned
    unchanged (their binary value is not what the user typed).
    """
    if isinstance(value, str):
        s = value.strip().lower()
        if s in ("inf", "+inf", "infinity", "oo"):
            return INF
        return Fraction(s)
    if isinstance(value, bool):
        raise TypeError("boolean is not an exponent")
    if isinstance(value, int):
        return Fraction(value)
    return value


def _is_exact(v) -> bool:
    return isinstance(v, (int, Fraction)) and not isinstance(v, bool)


def _coerce(*vals):
    if all(_is_exact(v) for v in vals):
        return tuple(Fraction(v) for v in vals), True
    return tuple(float(v) for v in vals), False


def _cmp(a, b, is_exact: bool) -> int:
    """Three-way comparison; tolerant in floating point."""
    if is_exact:
        return (a > b) - (a < b)
    scale = max(1.0, abs(a), abs(b))
    if abs(a - b) <= BOUNDARY_TOL * scale:
        return 0
    return 1 if a > b else -1


def _check_np(N, p):
    if int(N) != N or N < 2:
        raise DomainError(f"dimension N must be an integer >= 2, got {N}")
    if not (1 < p < N):
        raise DomainError(f"need 1 < p < N, got p={p}, N={N}")


# ---------------------------------------------------------------------------
# thresholds and breakpoints


def superlinear_threshold(N: Number, p: Number) -> Number:
    """max{p/2, (N(p-1)+p)/(N+2)}; the two branches coincide at p = 2."""
    (N, p), _ = _coerce(N, p)
    _check_np(N, p)
    return max(p / 2, (N * (p - 1) + p) / (N + 2))


def q_sigma2(N: Number, p: Number) -> Number:
    """Growth rate at which the critical datum exponent equals 2."""
    (N, p), _ = _coerce(N, p)
    return p - N / (N + 2)


def q_sigma1(N: Number, p: Number) -> Number:
    """Growth rate at which the critical datum exponent equals 1."""
    (N, p), _ = _coerce(N, p)
    return p - N / (N + 1)


def harnack_exponent(N: Number, p: Number) -> Number:
    """lambda = p(N+1) - 2N from the intrinsic Harnack inequality."""
    (N, p), _ = _coerce(N, p)
    return p * (N + 1) - 2 * N


def critical_sigma(N: Number, p: Number, q: Number) -> Number:
    """Minimal Lebesgue exponent N(q-(p-1))/(p-q) of the initial datum."""
    (N, p, q), ex = _coerce(N, p, q)
    _check_np(N, p)
    lower = max(p - 1, superlinear_threshold(N, p))
    if _cmp(q, lower, ex) <= 0:
        raise DomainError(
            f"critical sigma needs q > max(p-1, superlinear threshold) = {float(lower):.12g}, got q={float(q):.12g}"
        )
    if _cmp(q, p, ex) >= 0:
        raise DomainError(f"critical sigma needs q < p, got q={float(q):.12g} >= p={float(p):.12g}")
    return N * (q - (p - 1)) / (p - q)


def beta_exponent(sigma: Number, p: Number) -> Number:
    """Gradient weight exponent (sigma + p - 2)/p."""
    (sigma, p), ex = _coerce(sigma, p)
    if _cmp(sigma, 1, ex) < 0:
        raise DomainError(f"beta needs sigma >= 1, got {sigma}")
    if p <= 1:
        raise DomainError(f"beta needs p > 1, got {p}")
    return (sigma + p - 2) / p


def conjugate(a: Number) -> Number:
    if a == 1:
        return INF
    return a / (a - 1)


def a_cap(N: Number, p: Number) -> Number:
    """Upper bound (p(N+2)/N)' on the forcing exponent in the energy argument."""
    (N, p), _ = _coerce(N, p)
    return conjugate(p * (N + 2) / N)


def nu_of_a(N: Number, p: Number, a: Number) -> Number:
    (N, p, a), ex = _coerce(N, p, a)
    _check_np(N, p)
    if _cmp(a, 1, ex) < 0:
        raise DomainError(f"need a >= 1, got {a}")
    cap = a_cap(N, p)
    if _cmp(a, cap, ex) > 0:
        raise DomainError(f"a={float(a):.12g} exceeds the cap (p(N+2)/N)' = {float(cap):.12g}")
    den = N - p * (a - 1)
    if den <= 0:
        raise DomainError("nonpositive denominator N - p(a-1)")
    return N * (a * (p - 1) - (p - 2)) / den


def b_of_nu(N: Number, p: Number, nu: Number) -> Number:
    (N, p, nu), ex = _coerce(N, p, nu)
    _check_np(N, p)
    if _cmp(nu, 1, ex) < 0:
        raise DomainError(f"need nu >= 1, got {nu}")
    return (N * (nu + p - 2) + nu * p) / (N + nu)


def b_of_a(N: Number, p: Number, a: Number) -> Number:
    (N, p, a), ex = _coerce(N, p, a)
    nu_of_a(N, p, a)  # range checks
    return a * (p * (N + 1) - N) / (N - a + 2)


def nu_mixed(N: Number, p: Number, m: Number, r: Number) -> Number:
    """Datum exponent for forcing in L^r(0,T;L^m) on the lowest-regularity curve.

    ``r = INF`` is evaluated as the limit N m (p-1)/(N - p m).
    """
    if r == INF:
        (N, p, m), _ = _coerce(N, p, m)
        den = N - p * m
        if den <= 0:
            raise DomainError(f"nonpositive denominator N - p m = {float(den):.12g}")
        return N * m * (p - 1) / den
    (N, p, m, r), _ = _coerce(N, p, m, r)
    den = N * r - p * m * (r - 1)
    if den <= 0:
        raise DomainError(f"nonpositive denominator N r - p m (r-1) = {float(den):.12g}")
    return N * m * (r * (p - 1) - (p - 2)) / den


class SublinearExponents(NamedTuple):
    mu: Number
    b: Number


def sublinear_exponents(N: Number, p: Number, m: Number) -> SublinearExponents:
    (N, p, m), ex = _coerce(N, p, m)
    if not (1 < p < 2):
        raise DomainError(f"sublinear exponents are stated for 1 < p < 2, got p={p}")
    if _cmp(m, 1, ex) < 0:
        raise DomainError(f"need m >= 1, got {m}")
    mu = (m + p - 2) / p
    if _cmp(p, 2 * N / (N + m), ex) <= 0:
        b = p * m / 2
    else:
        b = (N * (m - 2 + p) + p * m) / (N + m)
    return SublinearExponents(mu, b)


# ---------------------------------------------------------------------------
# problem data and classification


class Regime(str, enum.Enum):
    RED = "FiniteEnergyRed"
    ORANGE = "InfiniteEnergyOrange"
    YELLOW = "RenormalizedYellow"
    BOUNDARY_LLOGL = "BoundaryLLogL"
    LINEAR_BORDERLINE = "LinearBorderline"
    SUBLINEAR = "Sublinear"
    NATURAL_GROWTH = "NaturalGrowth"


class SolutionNotion(str, enum.Enum):
    WEAK_FINITE_ENERGY = "WeakFiniteEnergy"
    TRUNCATION_RENORMALIZED = "TruncationRenormalized"
    FULLY_RENORMALIZED = "FullyRenormalized"


class MSubcase(str, enum.Enum):
    M_GE_2 = "mGE2"
    M_IN_12 = "mIn12"
    M_EQ_1 = "mEQ1"


COLOURS = {
    Regime.RED: "red",
    Regime.ORANGE: "orange",
    Regime.YELLOW: "yellow",
}


@dataclass(frozen=True)
class ProblemExponents:
    """The tuple (N, p, q, gamma).  ``q = p`` is allowed (classification only)."""

    N: int
    p: Number
    q: Number
    gamma: Number = 1

    def __post_init__(self):
        (N, p, q, gamma), ex = _coerce(self.N, self.p, self.q, self.gamma)
        _check_np(N, p)
        if q <= 0:
            raise DomainError(f"need q > 0, got q={q}")
        if _cmp(q, p, ex) > 0:
            raise DomainError(f"supernatural growth: q={float(q):.12g} > p={float(p):.12g}")
        if gamma <= 0:
            raise DomainError(f"need gamma > 0, got {gamma}")

    @property
    def is_exact(self) -> bool:
        return all(_is_exact(v) for v in (self.N, self.p, self.q, self.gamma))


@dataclass(frozen=True)
class DerivedExponents:
    sigma: Optional[Number]
    beta: Optional[Number]
    eta_grad: Optional[Number]
    q_superlinear: Number
    q_sigma2: Number
    q_sigma1: Number
    lambda_harnack: Number


def derived_exponents(e: ProblemExponents) -> DerivedExponents:
    N, p, q = e.N, e.p, e.q
    try:
        sigma = critical_sigma(N, p, q)
    except DomainError:
        sigma = None
    beta = beta_exponent(sigma, p) if sigma is not None and sigma >= 1 else None
    try:
        eta = eta_gradient(N, p, q)
    except DomainError:
        eta = None
    return DerivedExponents(
        sigma=sigma,
        beta=beta,
        eta_grad=eta,
        q_superlinear=superlinear_threshold(N, p),
        q_sigma2=q_sigma2(N, p),
        q_sigma1=q_sigma1(N, p),
        lambda_harnack=harnack_exponent(N, p),
    )


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    required_sigma: Optional[Number]
    solution_notion: Optional[SolutionNotion]
    notes: str = ""
    m_subcase: Optional[MSubcase] = None
    sigma: Optional[Number] = None
    beta: Optional[Number] = None
    datum_space: str = ""
    forcing_space: str = ""

    @property
    def colour(self) -> Optional[str]:
        return COLOURS.get(self.regime)


def _m_subcase(m, ex) -> MSubcase:
    if _cmp(m, 2, ex) >= 0:
        return MSubcase.M_GE_2
    if _cmp(m, 1, ex) > 0:
        return MSubcase.M_IN_12
    if _cmp(m, 1, ex) == 0:
        return MSubcase.M_EQ_1
    raise DomainError(f"datum exponent m must be >= 1, got {m}")


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return str(x) if x.denominator != 1 else str(x.numerator)
    return f"{float(x):.6g}"


def regime_of(N: Number, p: Number, q: Number) -> Regime:
    """Regime tag of (N, p, q) with the boundary memberships used throughout."""
    (N, p, q), ex = _coerce(N, p, q)
    _check_np(N, p)
    if q <= 0:
        raise DomainError(f"need q > 0, got q={q}")
    c = _cmp(q, p, ex)
    if c > 0:
        raise DomainError(f"supernatural growth: q={float(q):.12g} > p={float(p):.12g}")
    if c == 0:
        return Regime.NATURAL_GROWTH
    thr = superlinear_threshold(N, p)
    c = _cmp(q, thr, ex)
    if c < 0:
        return Regime.SUBLINEAR
    if c == 0:
        return Regime.LINEAR_BORDERLINE if p >= 2 else Regime.SUBLINEAR
    if _cmp(p, 2 * N / (N + 2), ex) <= 0:
        return Regime.RED
    if _cmp(q, p - N / (N + 2), ex) >= 0:
        return Regime.RED
    if _cmp(q, max(p / 2, p - N / (N + 1)), ex) > 0:
        return Regime.ORANGE
    if _cmp(q, p - N / (N + 1), ex) == 0:
        return Regime.BOUNDARY_LLOGL
    return Regime.YELLOW


def classify(e: ProblemExponents, m: Optional[Number] = None) -> RegimeReport:
    """Regime, required datum integrability and solution notion for ``e``.

    ``m`` is the integrability of the datum; it only matters in the sublinear
    regime, where it selects the solution notion.
    """
    N, p, q = e.N, e.p, e.q
    ex = e.is_exact
    regime = regime_of(N, p, q)
    if regime in (Regime.RED, Regime.ORANGE):
        sigma = critical_sigma(N, p, q)
        beta = beta_exponent(sigma, p)
        notion = SolutionNotion.WEAK_FINITE_ENERGY if regime is Regime.RED else SolutionNotion.TRUNCATION_RENORMALIZED
        if regime is Regime.RED:
            notes = f"finite energy; |u|^beta in L^p(0,T;W^1,p_0) with beta={_fmt(beta)}"
        else:
            notes = f"infinite energy; (1+|u|)^(beta-1)u in L^p(0,T;W^1,p_0) with beta={_fmt(beta)}"
        return RegimeReport(
            regime,
            sigma,
            notion,
            notes,
            sigma=sigma,
            beta=beta,
            datum_space=f"L^{_fmt(sigma)}",
            forcing_space="L^r(0,T;L^m) with N*sigma/m + (N(p-2)+p*sigma)/r <= N(p-1)+p*sigma",
        )
    if regime is Regime.YELLOW:
        return RegimeReport(
            regime, 1, SolutionNotion.FULLY_RENORMALIZED,
            "L^1 data; renormalized solution with vanishing energy on {n<=|u|<=2n}",
            datum_space="L^1", forcing_space="L^1(Q_T)",
        )
    if regime is Regime.BOUNDARY_LLOGL:
        return RegimeReport(
            regime, 1, SolutionNotion.TRUNCATION_RENORMALIZED,
            "sigma = 1 is not sufficient; datum in L^(1+omega), omega > 0 (or L log L)",
            datum_space="L^(1+omega), omega>0", forcing_space="L^1(Q_T)",
        )
    if regime is Regime.LINEAR_BORDERLINE:
        return RegimeReport(
            regime, None, None,
            "q equals the linear-growth threshold (p(N+1)-N)/(N+2); excluded from solver claims",
        )
    if regime is Regime.NATURAL_GROWTH:
        return RegimeReport(regime, None, None, "q = p: natural growth, classification only")
    # sublinear
    if p >= 2:
        return RegimeReport(
            regime, 1, None,
            "sublinear growth with p >= 2; the 1<p<2 sublinear estimates do not apply",
        )
    strict = _cmp(q, p / 2, ex) == 0
    sub = None
    if m is not None:
        m = exact(m) if isinstance(m, str) else m
        sub = _m_subcase(m, ex and _is_exact(m))
        if strict and sub is MSubcase.M_EQ_1:
            raise DomainError("q = p/2 requires a datum in L^m with m > 1")
    else:
        sub = MSubcase.M_IN_12 if strict else MSubcase.M_EQ_1
    notion = {
        MSubcase.M_GE_2: SolutionNotion.WEAK_FINITE_ENERGY,
        MSubcase.M_IN_12: SolutionNotion.TRUNCATION_RENORMALIZED,
        MSubcase.M_EQ_1: SolutionNotion.FULLY_RENORMALIZED,
    }[sub]
    notes = "linear case q = p/2, needs m > 1" if strict else "sublinear case q < p/2, m >= 1"
    return RegimeReport(
        regime, 1, notion, notes, m_subcase=sub,
        datum_space="L^m, m>1" if strict else "L^m, m>=1",
        forcing_space="L^1(0,T;L^m)",
    )


# ---------------------------------------------------------------------------
# data admissibility and the gradient exponent


@dataclass(frozen=True)
class DataSpaceSpec:
    """Integrabilities of the data: f in L^r(0,T;L^m), u0 in L^sigma_datum."""

    m: Number
    r: Number = INF
    sigma_datum: Optional[Number] = None

    def __post_init__(self):
        if self.m < 1 or self.r < 1:
            raise DomainError(f"need m >= 1 and r >= 1, got m={self.m}, r={self.r}")


def f1_terms(N: Number, p: Number, q: Number, m: Number, r: Number):
    """Left and right sides of the admissibility inequality for (m, r)."""
    sigma = critical_sigma(N, p, q)
    vals = [N, p, q, sigma] + [v for v in (m, r) if v != INF]
    _, ex = _coerce(*vals)
    conv = Fraction if ex else float
    N, p, sigma = conv(N), conv(p), conv(sigma)
    lhs = conv(0)
    if m != INF:
        lhs += N * sigma / conv(m)
    if r != INF:
        lhs += (N * (p - 2) + p * sigma) / conv(r)
    rhs = N * (p - 1) + p * sigma
    return lhs, rhs, ex


def admissible_data(e: ProblemExponents, spec: DataSpaceSpec) -> bool:
    """True iff (m, r) satisfies the mixed-norm admissibility inequality (equality admitted)."""
    regime = regime_of(e.N, e.p, e.q)
    if regime not in (Regime.RED, Regime.ORANGE):
        raise DomainError(f"admissibility is defined for the Red/Orange regimes, got {regime.value}")
    lhs, rhs, ex = f1_terms(e.N, e.p, e.q, spec.m, spec.r)
    return _cmp(lhs, rhs, ex) <= 0


def stationary_m_bound(N: Number, p: Number, q: Number) -> Number:
    """N(q-(p-1))/q, the r = infinity limit of the admissibility curve."""
    (N, p, q), _ = _coerce(N, p, q)
    return N * (q - (p - 1)) / q


def eta_gradient(N: Number, p: Number, q: Number, form: str = "direct") -> Number:
    """Gradient integrability exponent in the infinite-energy regime.

    ``form="direct"`` evaluates N(q-(p-1)) + 2q - p, ``form="weighted"`` the
    equivalent p(N beta + sigma)/(N + sigma).
    """
    if regime_of(N, p, q) is not Regime.ORANGE:
        raise DomainError("eta is defined in the InfiniteEnergyOrange regime")
    (N, p, q), _ = _coerce(N, p, q)
    if form == "direct":
        return N * (q - (p - 1)) + 2 * q - p
    if form == "weighted":
        sigma = critical_sigma(N, p, q)
        beta = beta_exponent(sigma, p)
        return p * (N * beta + sigma) / (N + sigma)
    raise ValueError(f"unknown form {form!r}")


# ---------------------------------------------------------------------------
# regime atlas

BREAKPOINT_LABELS = (
    "p/2",
    "(p(N+1)-N)/(N+2)",
    "p-1",
    "p-N/(N+1)",
    "p-N/(N+2)",
    "p",
)

FIGURE_CASES = {
    1: "2<=p<N",
    2: "2N/(N+1)<p<2",
    3: "2N/(N+2)<p<=2N/(N+1)",
    4: "1<p<=2N/(N+2)",
}


def figure_case(N: Number, p: Number) -> int:
    """Which of the four q-axis layouts applies to (N, p)."""
    (N, p), ex = _coerce(N, p)
    _check_np(N, p)
    if _cmp(p, 2, ex) >= 0:
        return 1
    if _cmp(p, 2 * N / (N + 1), ex) > 0:
        return 2
    if _cmp(p, 2 * N / (N + 2), ex) > 0:
        return 3
    return 4


@dataclass(frozen=True)
class AtlasBreak:
    label: str
    q: Number
    regime_left: str
    regime_at: str
    regime_right: str


@dataclass(frozen=True)
class Atlas:
    N: int
    p: Number
    case: int
    breaks: tuple = field(default_factory=tuple)

    def segments(self):
        """Coloured open intervals (q_lo, q_hi, regime) of positive length."""
        out = []
        prev = 0
        for b in self.breaks:
            if b.q > prev:
                out.append((prev, b.q, b.regime_left))
            prev = b.q
        return out


def _regime_name(N, p, q) -> str:
    try:
        return regime_of(N, p, q).value
    except DomainError:
        return "Supernatural"


def atlas(N: Number, p: Number) -> Atlas:
    (Nc, pc), ex = _coerce(N, p)
    _check_np(Nc, pc)
    values = [
        pc / 2,
        (pc * (Nc + 1) - Nc) / (Nc + 2),
        pc - 1,
        pc - Nc / (Nc + 1),
        pc - Nc / (Nc + 2),
        pc,
    ]
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    distinct = []
    for i in order:
        v = values[i]
        if not distinct or _cmp(v, distinct[-1], ex) != 0:
            distinct.append(v)
    breaks = []
    for i in order:
        v = values[i]
        k = next(j for j, d in enumerate(distinct) if _cmp(v, d, ex) == 0)
        lo = distinct[k - 1] if k > 0 else 0
        hi = distinct[k + 1] if k + 1 < len(distinct) else v + 1
        left = _regime_name(Nc, pc, (lo + v) / 2) if v > 0 else "None"
        right = _regime_name(Nc, pc, (v + hi) / 2)
        breaks.append(AtlasBreak(BREAKPOINT_LABELS[i], v, left, _regime_name(Nc, pc, v) if v > 0 else "None", right))
    return Atlas(int(Nc), pc, figure_case(Nc, pc), tuple(breaks))


def format_number(x: Number) -> str:
    return f"{float(x):.12g}"


def atlas_csv_rows(atlases: Iterable[Atlas]):
    header = ["N", "p", "case", "label", "q_break", "regime_left", "regime_at", "regime_right"]
    rows = [header]
    for a in atlases:
        for b in a.breaks:
            rows.append([
                str(a.N), format_number(a.p), str(a.case), b.label, format_number(b.q),
                b.regime_left, b.regime_at, b.regime_right,
            ])
    return rows
