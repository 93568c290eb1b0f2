"""Signal-detection scoring and the statistics used to compare runs.

Rates follow the convention that hit rate and false-alarm rate are both
fractions of the *detections made* (so they sum to one), while the miss
rate is the fraction of true calls that went undetected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .errors import UsvkitError


class NoDetections(UsvkitError):
    pass


class NoTruth(UsvkitError):
    pass


class OutOfRange(UsvkitError):
    pass


class ExtremeRateNoN(UsvkitError):
    """Rate of exactly 0 or 1 cannot be z-transformed without a count."""


class DegenerateSample(UsvkitError):
    pass


class LengthMismatch(UsvkitError):
    pass


class Empty(UsvkitError):
    pass


@dataclass(frozen=True)
class OutcomeTally:
    detections: int
    hits: int
    false_alarms: int
    misses: int

    def __post_init__(self):
        if min(self.detections, self.hits, self.false_alarms, self.misses) < 0:
            raise ValueError("counts must be non-negative")
        if self.detections != self.hits + self.false_alarms:
            raise ValueError("detections must equal hits + false_alarms")


@dataclass(frozen=True)
class RatesReport:
    hit_rate: float
    false_alarm_rate: float
    miss_rate: float


@dataclass(frozen=True)
class DPrime:
    value: float
    corrected: bool = False


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_two_tailed: float
    kind: str  # "welch_unpaired" | "paired"


@dataclass(frozen=True)
class GeneralizationResult:
    per_recording: List[float]
    mean: float
    sem: float


# --------------------------------------------------------------------------
# detection-truth matching


def _interval(obj) -> Tuple[float, float]:
    if hasattr(obj, "t_start"):
        return float(obj.t_start), float(obj.t_end)
    return float(obj[0]), float(obj[1])


def _time_iou(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def match_detections(candidates: Sequence, truth: Sequence, min_overlap: float = 0.3) -> OutcomeTally:
    """Greedy one-to-one matching by descending temporal IoU; pairs at or
    above min_overlap count as hits. Frequency bounds are ignored."""
    cand = [_interval(c) for c in candidates]
    true = [_interval(t) for t in truth]
    pairs = []
    for i, c in enumerate(cand):
        for j, t in enumerate(true):
            iou = _time_iou(c, t)
            if iou >= min_overlap:
                pairs.append((-iou, i, j))
    pairs.sort()
    used_c = set()
    used_t = set()
    hits = 0
    for _, i, j in pairs:
        if i in used_c or j in used_t:
            continue
        used_c.add(i)
        used_t.add(j)
        hits += 1
    return OutcomeTally(
        detections=len(cand),
        hits=hits,
        false_alarms=len(cand) - hits,
        misses=len(true) - hits,
    )


def rates(tally: OutcomeTally) -> RatesReport:
    if tally.detections == 0:
        raise NoDetections("no detections to rate")
    if tally.hits + tally.misses == 0:
        raise NoTruth("no true calls to rate against")
    return RatesReport(
        hit_rate=tally.hits / tally.detections,
        false_alarm_rate=tally.false_alarms / tally.detections,
        miss_rate=tally.misses / (tally.hits + tally.misses),
    )


# --------------------------------------------------------------------------
# normal / t distribution machinery

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation of the inverse normal CDF
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / _SQRT2)


def probit(p: float) -> float:
    """Inverse standard normal CDF, |error| < 1e-9 on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise OutOfRange(f"probit requires 0 < p < 1, got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            (((( _D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((( _A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            ((((( _B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            (((( _D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # one Halley refinement against the erfc-based CDF
    err = normal_cdf(x) - p
    u = err * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def d_prime(hit_rate: float, fa_rate: float, n_for_correction: Optional[int] = None) -> DPrime:
    """probit(hit) - probit(fa), with the 1/(2N) rule for rates of 0 or 1."""
    if not (0.0 <= hit_rate <= 1.0 and 0.0 <= fa_rate <= 1.0):
        raise OutOfRange("rates must lie in [0, 1]")
    corrected = False

    def adjust(rate: float) -> float:
        nonlocal corrected
        if rate in (0.0, 1.0):
            if n_for_correction is None:
                raise ExtremeRateNoN(f"rate {rate} needs n_for_correction")
            corrected = True
            return 1.0 / (2 * n_for_correction) if rate == 0.0 else 1.0 - 1.0 / (2 * n_for_correction)
        return rate

    h = adjust(hit_rate)
    f = adjust(fa_rate)
    return DPrime(value=probit(h) - probit(f), corrected=corrected)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    eps = 3e-16
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def _betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
             + a * math.log(x) + b * math.log(1.0 - x))
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper-tail probability of Student's t."""
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * _betainc_reg(df / 2.0, 0.5, x)
    return tail if t > 0 else 1.0 - tail


def welch_t(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-tailed unpaired t-test with Welch-Satterthwaite df."""
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise DegenerateSample("need at least two values per sample")
    ma = sum(a) / na
    mb = sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    if va == 0.0 and vb == 0.0:
        raise DegenerateSample("both samples have zero variance")
    sa, sb = va / na, vb / nb
    t = (ma - mb) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    return TTestResult(t=t, df=df, p_two_tailed=2.0 * t_sf(abs(t), df), kind="welch_unpaired")


def paired_t(pairs: Sequence[Tuple[float, float]]) -> TTestResult:
    """Two-tailed paired t-test on the differences (second - first)."""
    n = len(pairs)
    if n < 2:
        raise DegenerateSample("need at least two pairs")
    diffs = [y - x for x, y in pairs]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        raise DegenerateSample("zero variance of differences")
    t = mean / math.sqrt(var / n)
    df = n - 1
    return TTestResult(t=t, df=float(df), p_two_tailed=2.0 * t_sf(abs(t), df), kind="paired")


def proportion_correct(predicted: Sequence, true: Sequence) -> float:
    if len(predicted) != len(true):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(true)} labels")
    if len(predicted) == 0:
        raise Empty("nothing to score")
    correct = sum(1 for p, t in zip(predicted, true) if p == t)
    return correct / len(predicted)


def generalization(per_recording: Sequence[float]) -> GeneralizationResult:
    props = [float(p) for p in per_recording]
    if not props:
        raise Empty("no recordings")
    for p in props:
        if not 0.0 <= p <= 1.0:
            raise OutOfRange(f"proportion {p} outside [0, 1]")
    n = len(props)
    mean = sum(props) / n
    if n > 1:
        sd = math.sqrt(sum((p - mean) ** 2 for p in props) / (n - 1))
        sem = sd / math.sqrt(n)
    else:
        sem = 0.0
    return GeneralizationResult(per_recording=props, mean=mean, sem=sem)


def evaluation_report(
    tally: OutcomeTally,
    d_prime_n: Optional[int] = None,
) -> dict:
    """JSON-ready report: tally, rates and d' for one recording."""
    report = {
        "tally": {
            "detections": tally.detections,
            "hits": tally.hits,
            "false_alarms": tally.false_alarms,
            "misses": tally.misses,
        }
    }
    rr = rates(tally)
    report["rates"] = {
        "hit_rate": rr.hit_rate,
        "false_alarm_rate": rr.false_alarm_rate,
        "miss_rate": rr.miss_rate,
    }
    n = d_prime_n if d_prime_n is not None else tally.detections
    dp = d_prime(rr.hit_rate, rr.false_alarm_rate, n_for_correction=n)
    report["d_prime"] = {"value": dp.value, "corrected": dp.corrected}
    return report
