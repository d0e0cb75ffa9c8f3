"""Scalar Gaussian numerics and the pairwise latent-Gaussian likelihoods.

The three pair kernels cover continuous/continuous, continuous/ordinal
(polyserial) and ordinal/ordinal (polychoric) pairs. Each returns a
per-observation log-likelihood in the correlation ``r``; :func:`fit_pair`
maximizes it over ``r in [-R_BOUND, R_BOUND]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .datamodel import level_counts
from .exceptions import DataError, NumericalError

EPS_PROB = 1e-300
R_BOUND = 0.99
FIT_XTOL = 1e-6
FIT_MAXITER = 500

_TWO_PI = 2.0 * math.pi
_LOG_SQRT_2PI = 0.5 * math.log(_TWO_PI)

# Gauss-Legendre half-rules (nodes in (0, 1), used as 1 -/+ x) for the
# Drezner-Wesolowsky integral, as tabulated by Genz.
_GL6 = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
)
_GL12 = (
    np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
              0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
              0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
)
_GL20 = (
    np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
              0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
              0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
              0.1527533871307259]),
    np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
              0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
              0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
              0.07652652113349733]),
)


def _gl_rule(abs_r: float) -> tuple[np.ndarray, np.ndarray]:
    w, x = _GL6 if abs_r < 0.3 else _GL12 if abs_r < 0.75 else _GL20
    return np.concatenate([w, w]), np.concatenate([1.0 - x, 1.0 + x])


class PairKind(enum.Enum):
    CONT_CONT = "cont-cont"
    CONT_ORD = "cont-ord"
    ORD_ORD = "ord-ord"

    @classmethod
    def of(cls, a_ordinal: bool, b_ordinal: bool) -> "PairKind":
        if a_ordinal and b_ordinal:
            return cls.ORD_ORD
        if a_ordinal or b_ordinal:
            return cls.CONT_ORD
        return cls.CONT_CONT


def std_normal_cdf(x):
    """Standard normal CDF; total on the extended reals."""
    out = ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0) & (arr < 1)):
        raise DataError("normal quantile needs 0 < p < 1")
    out = ndtri(arr)
    return float(out) if out.ndim == 0 else out


def _bvnu_finite(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """P(X > h, Y > k) for finite ``h``, ``k`` and ``|r| < 1`` (Genz's BVNU)."""
    if r == 0.0:
        return ndtr(-h) * ndtr(-k)
    w, x = _gl_rule(abs(r))
    hk = h * k
    if abs(r) < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        sn = np.sin(asr * x)
        terms = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn * sn))
        bvn = (terms @ w) * asr / _TWO_PI + ndtr(-h) * ndtr(-k)
        return np.clip(bvn, 0.0, 1.0)

    if r < 0:
        k = -k
        hk = -hk
    one_m_r2 = 1.0 - r * r
    a = math.sqrt(one_m_r2)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 80.0
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        asr = -0.5 * (bs / one_m_r2 + hk)
        bvn = np.where(
            asr > -100,
            a * np.exp(asr) * (1.0 - c * (bs - one_m_r2) * (1.0 - d * bs) / 3.0
                               + c * d * one_m_r2 ** 2),
            0.0,
        )
        b = np.sqrt(bs)
        sp = math.sqrt(_TWO_PI) * ndtr(-b / a)
        bvn = np.where(
            hk > -100,
            bvn - np.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
            bvn,
        )
        a2 = 0.5 * a
        xs = (a2 * x) ** 2
        asr2 = -0.5 * (bs[..., None] / xs + hk[..., None])
        sp2 = 1.0 + c[..., None] * xs * (1.0 + 5.0 * d[..., None] * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-0.5 * hk[..., None] * xs / (1.0 + rs) ** 2) / rs
        terms = np.where(asr2 > -100, np.exp(asr2) * (sp2 - ep), 0.0)
    bvn = (a2 * (terms @ w) - bvn) / _TWO_PI
    if r > 0:
        bvn = bvn + ndtr(-np.maximum(h, k))
    else:
        tail = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
        bvn = np.where(h >= k, -bvn, tail - bvn)
    return np.clip(bvn, 0.0, 1.0)


def bvn_cdf(x, y, r: float):
    """Bivariate standard normal CDF ``P(X <= x, Y <= y)`` with correlation ``r``.

    ``x`` and ``y`` broadcast against each other and may contain ``±inf``.
    Uses Genz's refinement of the Drezner-Wesolowsky algorithm (absolute
    error around 1e-15).
    """
    r = float(r)
    if not abs(r) < 1.0:
        raise DataError(f"bvn_cdf needs |r| < 1, got {r}")
    xa, ya = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    out = np.empty(xa.shape)
    fin = np.isfinite(xa) & np.isfinite(ya)
    if fin.any():
        out[fin] = _bvnu_finite(-xa[fin], -ya[fin], r)
    if not fin.all():
        nf = ~fin
        xs, ys = xa[nf], ya[nf]
        val = np.where(xs == np.inf, ndtr(ys), ndtr(xs))
        val = np.where((xs == -np.inf) | (ys == -np.inf), 0.0, val)
        out[nf] = val
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ThresholdVector:
    """Finite interior cut points ``T_2 < ... < T_C`` of an ordinal variable."""

    interior: np.ndarray

    def __post_init__(self):
        t = np.array(self.interior, dtype=float).reshape(-1)
        if t.size < 1 or not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise DataError("thresholds must be finite and strictly ascending")
        t.setflags(write=False)
        object.__setattr__(self, "interior", t)
        ext = np.concatenate([[-np.inf], t, [np.inf]])
        ext.setflags(write=False)
        object.__setattr__(self, "_extended", ext)

    @property
    def levels(self) -> int:
        return self.interior.size + 1

    @property
    def extended(self) -> np.ndarray:
        """``[-inf, T_2, ..., T_C, +inf]``; level ``t`` is ``(ext[t-1], ext[t]]``."""
        return self._extended

    def __eq__(self, other):
        return isinstance(other, ThresholdVector) and np.array_equal(self.interior, other.interior)

    def __hash__(self):
        return hash(self.interior.tobytes())

    def tolist(self) -> list[float]:
        return self.interior.tolist()


def estimate_thresholds(codes, levels: int) -> ThresholdVector:
    """Cut points from cumulative level proportions via the normal quantile."""
    codes = np.asarray(codes)
    counts = level_counts(codes, levels)
    if counts.sum() != codes.size:
        raise DataError(f"ordinal codes must lie in 1..{levels}")
    cum = np.cumsum(counts)[:-1] / codes.size
    if np.any(cum <= 0) or np.any(cum >= 1):
        raise DataError("unidentifiable threshold: an extreme level is empty")
    if np.any(np.diff(cum) <= 0):
        raise DataError("unidentifiable threshold: an interior level is empty")
    return ThresholdVector(ndtri(cum))


# ---------------------------------------------------------------- kernels


def loglik_cont_cont(r: float, sample_corr: float) -> float:
    """Gaussian log-likelihood of a standardized pair, up to constants.

    Equals ``-(tr(R^-1 S) + log det R) / 2`` with ``R = [[1, r], [r, 1]]`` and
    ``S`` the unit-diagonal sample correlation matrix; maximized at ``r = s``.
    """
    one_m_r2 = 1.0 - r * r
    if one_m_r2 <= 0:
        return -math.inf
    return -0.5 * ((2.0 - 2.0 * r * sample_corr) / one_m_r2 + math.log(one_m_r2))


class _PolyserialData:
    """Continuous values grouped by ordinal level for the polyserial kernel.

    End levels have one infinite bound and need a single CDF evaluation.
    """

    __slots__ = ("groups", "const", "n")

    def __init__(self, cont: np.ndarray, codes: np.ndarray, thr: ThresholdVector):
        cont = np.asarray(cont, dtype=float)
        codes = np.asarray(codes, dtype=np.intp)
        if cont.shape != codes.shape:
            raise DataError("polyserial inputs must have equal length")
        if codes.min() < 1 or codes.max() > thr.levels:
            raise DataError("ordinal codes outside threshold range")
        ext = thr.extended
        order = np.argsort(codes, kind="stable")
        sorted_codes = codes[order]
        bounds = np.searchsorted(sorted_codes, np.arange(1, thr.levels + 2))
        self.groups = []
        for t in range(1, thr.levels + 1):
            xs = cont[order[bounds[t - 1]:bounds[t]]]
            if xs.size:
                self.groups.append((xs, float(ext[t - 1]), float(ext[t])))
        self.n = cont.size
        self.const = float(np.mean(-0.5 * cont * cont)) - _LOG_SQRT_2PI

    def interval_loglik(self, r: float) -> float:
        """Mean log interval probability (the ``r``-dependent part)."""
        s = math.sqrt(1.0 - r * r)
        total = 0.0
        for xs, lo, hi in self.groups:
            rx = r * xs
            if lo == -math.inf:
                p = ndtr((hi - rx) / s)
            elif hi == math.inf:
                p = ndtr((rx - lo) / s)
            else:
                # mirror intervals centred above 0 to avoid cancellation
                sgn = np.where(rx < 0.5 * (lo + hi), 1.0, -1.0)
                p = sgn * (ndtr(sgn * (rx - lo) / s) - ndtr(sgn * (rx - hi) / s))
            total += float(np.sum(np.log(np.maximum(p, EPS_PROB))))
        return total / self.n


def loglik_polyserial(r: float, cont_values, ord_values, thresholds: ThresholdVector) -> float:
    """Mean log-likelihood of a continuous/ordinal pair.

    Per row: ``log phi(x) + log[Phi((T_hi - r x)/s) - Phi((T_lo - r x)/s)]`` with
    ``s = sqrt(1 - r^2)``; interval probabilities are floored at ``EPS_PROB``.
    """
    data = _PolyserialData(cont_values, ord_values, thresholds)
    return data.const + data.interval_loglik(float(r))


def contingency_table(codes_a, codes_b, levels_a: int, levels_b: int) -> np.ndarray:
    a = np.asarray(codes_a, dtype=np.intp) - 1
    b = np.asarray(codes_b, dtype=np.intp) - 1
    flat = np.bincount(a * levels_b + b, minlength=levels_a * levels_b)
    return flat[: levels_a * levels_b].reshape(levels_a, levels_b)


def rectangle_probs(r: float, thr_i: ThresholdVector, thr_j: ThresholdVector) -> np.ndarray:
    """Latent-Gaussian probability of every ``(level_i, level_j)`` cell."""
    ei, ej = thr_i.extended, thr_j.extended
    grid = np.zeros((ei.size, ej.size))
    # first row/column sit at -inf and stay 0
    grid[1:, 1:] = bvn_cdf(ei[1:, None], ej[None, 1:], r)
    return grid[1:, 1:] - grid[:-1, 1:] - grid[1:, :-1] + grid[:-1, :-1]


def loglik_polychoric(r: float, table, thr_i: ThresholdVector, thr_j: ThresholdVector) -> float:
    """Mean log-likelihood of an ordinal/ordinal contingency table."""
    table = np.asarray(table, dtype=float)
    if table.shape != (thr_i.levels, thr_j.levels):
        raise DataError(f"table shape {table.shape} does not match threshold levels")
    probs = np.maximum(rectangle_probs(float(r), thr_i, thr_j), EPS_PROB)
    return float(np.sum(table * np.log(probs)) / table.sum())


# -------------------------------------------------------------- optimizer

_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))
_SQRT_EPS = math.sqrt(2.2e-16)


def bounded_minimize(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    x0: float | None = None,
    xtol: float = FIT_XTOL,
    maxiter: int = FIT_MAXITER,
) -> tuple[float, float, int]:
    """Brent's golden-section/parabolic minimizer on ``[lo, hi]``.

    ``x0`` seeds the first interior point (golden point if omitted or
    outside the open interval). Returns ``(x, f(x), n_evals)``.
    """
    a, b = float(lo), float(hi)
    if x0 is None or not a < x0 < b:
        x0 = a + _GOLDEN * (b - a)
    xf = nfc = fulc = float(x0)
    fx = f(xf)
    ffulc = fnfc = fx
    rat = e = 0.0
    num = 1
    xm = 0.5 * (a + b)
    tol1 = _SQRT_EPS * abs(xf) + xtol / 3.0
    tol2 = 2.0 * tol1
    while abs(xf - xm) > tol2 - 0.5 * (b - a):
        golden = True
        if abs(e) > tol1:
            golden = False
            r = (xf - nfc) * (fx - ffulc)
            q = (xf - fulc) * (fx - fnfc)
            p = (xf - fulc) * q - (xf - nfc) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            r, e = e, rat
            if abs(p) < abs(0.5 * q * r) and q * (a - xf) < p < q * (b - xf):
                rat = p / q
                x = xf + rat
                if x - a < tol2 or b - x < tol2:
                    rat = tol1 if xm >= xf else -tol1
            else:
                golden = True
        if golden:
            e = (a - xf) if xf >= xm else (b - xf)
            rat = _GOLDEN * e
        step = max(abs(rat), tol1)
        x = xf + (step if rat >= 0 else -step)
        fu = f(x)
        num += 1
        if fu <= fx:
            if x >= xf:
                a = xf
            else:
                b = xf
            fulc, ffulc = nfc, fnfc
            nfc, fnfc = xf, fx
            xf, fx = x, fu
        else:
            if x < xf:
                a = x
            else:
                b = x
            if fu <= fnfc or nfc == xf:
                fulc, ffulc = nfc, fnfc
                nfc, fnfc = x, fu
            elif fu <= ffulc or fulc == xf or fulc == nfc:
                fulc, ffulc = x, fu
        xm = 0.5 * (a + b)
        tol1 = _SQRT_EPS * abs(xf) + xtol / 3.0
        tol2 = 2.0 * tol1
        if num >= maxiter:
            raise NumericalError(f"1-D search did not converge in {maxiter} evaluations", best=xf)
    return xf, fx, num


def _maximize(loglik: Callable[[float], float], r_init: float) -> float:
    if not abs(r_init) <= R_BOUND:
        raise DataError(f"|r_init| must be <= {R_BOUND}")
    x, _, _ = bounded_minimize(lambda r: -loglik(r), -R_BOUND, R_BOUND, x0=r_init)
    return x


def fit_cont_cont(sample_corr: float, r_init: float = 0.0) -> float:
    return _maximize(lambda r: loglik_cont_cont(r, sample_corr), r_init)


def fit_polyserial(cont, codes, thr: ThresholdVector, r_init: float = 0.0) -> float:
    data = _PolyserialData(cont, codes, thr)
    return _maximize(data.interval_loglik, r_init)


def fit_polychoric(table, thr_i: ThresholdVector, thr_j: ThresholdVector, r_init: float = 0.0) -> float:
    table = np.asarray(table, dtype=float)
    return _maximize(lambda r: loglik_polychoric(r, table, thr_i, thr_j), r_init)


def fit_pair(
    kind: PairKind,
    a,
    b,
    thr_a: ThresholdVector | None = None,
    thr_b: ThresholdVector | None = None,
    r_init: float = 0.0,
) -> float:
    """Maximum pairwise-likelihood latent correlation of columns ``a`` and ``b``.

    Continuous columns must be standardized. For ``CONT_ORD`` either side may
    be the ordinal one; the side carrying a threshold vector is taken as
    ordinal.
    """
    if kind is PairKind.CONT_CONT:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return fit_cont_cont(float(a @ b) / (a.size - 1), r_init)
    if kind is PairKind.CONT_ORD:
        if thr_b is not None and thr_a is None:
            return fit_polyserial(a, b, thr_b, r_init)
        if thr_a is not None and thr_b is None:
            return fit_polyserial(b, a, thr_a, r_init)
        raise DataError("cont-ord pair needs exactly one threshold vector")
    if thr_a is None or thr_b is None:
        raise DataError("ord-ord pair needs both threshold vectors")
    table = contingency_table(a, b, thr_a.levels, thr_b.levels)
    return fit_polychoric(table, thr_a, thr_b, r_init)

