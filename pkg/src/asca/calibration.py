"""Bisection search for the noise factor that yields a target character accuracy."""

import logging
from dataclasses import asdict, dataclass

from .errors import BracketError, NonConvergence

log = logging.getLogger(__name__)

# Low / Medium / High operating points, as mean character accuracy.
TARGET_ACCURACY = {"low": 0.95, "medium": 0.85, "high": 0.70}
DEFAULT_TOLERANCE = 0.02
DEFAULT_SAMPLES_PER_PROBE = 50
MAX_ITERATIONS = 30


@dataclass(frozen=True)
class CalibrationResult:
    eta: float
    achieved_accuracy: float
    target: float
    iterations: int
    samples_per_probe: int
    seed: int
    converged: bool = True

    def to_json(self):
        return asdict(self)


def _sentences(corpus):
    return list(getattr(corpus, "sentences", corpus))


def measure_accuracy(eta, probe_corpus, model_or_channel, seed):
    """Mean character accuracy of the attack at ``eta`` over ``probe_corpus``.

    ``model_or_channel`` is any callable ``(eta, sentences, seed) -> accuracy``,
    e.g. :class:`asca.attack.AudioProbe`.
    """
    sentences = _sentences(probe_corpus)
    if not sentences:
        raise ValueError("probe corpus is empty")
    return float(model_or_channel(eta, sentences, seed))


def calibrate_eta(target_accuracy, tolerance, eta_bounds, probe_corpus, model, seed,
                  max_iterations=MAX_ITERATIONS, raise_on_failure=True, cache=None):
    """Bisect ``eta`` within ``eta_bounds`` until accuracy is within ``tolerance`` of target.

    Every probe reuses ``seed``, so all probes share clip choices and noise
    draws and the measured curve is (nearly) monotone in ``eta``.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    lo, hi = float(eta_bounds[0]), float(eta_bounds[1])
    if not 0 <= lo < hi:
        raise ValueError("eta bounds must satisfy 0 <= low < high")
    n = len(_sentences(probe_corpus))

    cache = {} if cache is None else cache

    def probe(eta):
        if eta not in cache:
            cache[eta] = measure_accuracy(eta, probe_corpus, model, seed)
            log.debug("eta=%.6g accuracy=%.4f", eta, cache[eta])
        return cache[eta]

    acc_lo, acc_hi = probe(lo), probe(hi)
    if not acc_lo >= target_accuracy >= acc_hi:
        raise BracketError(
            f"target {target_accuracy} not bracketed: accuracy {acc_lo:.4f} at eta={lo}, {acc_hi:.4f} at eta={hi}")
    best = min(((lo, acc_lo), (hi, acc_hi)), key=lambda p: abs(p[1] - target_accuracy))
    iterations = 0
    while abs(best[1] - target_accuracy) > tolerance and iterations < max_iterations:
        mid = 0.5 * (lo + hi)
        acc = probe(mid)
        iterations += 1
        if abs(acc - target_accuracy) < abs(best[1] - target_accuracy):
            best = (mid, acc)
        if acc > target_accuracy:
            lo = mid
        else:
            hi = mid
    converged = abs(best[1] - target_accuracy) <= tolerance
    result = CalibrationResult(best[0], best[1], target_accuracy, iterations, n, int(seed), converged)
    if not converged and raise_on_failure:
        raise NonConvergence(f"accuracy {best[1]:.4f} still outside ±{tolerance} of {target_accuracy} "
                             f"after {iterations} iterations", result)
    return result


def calibrate_presets(probe_corpus, model, seed, eta_bounds, tolerance=DEFAULT_TOLERANCE,
                      targets=None, max_iterations=MAX_ITERATIONS):
    """Calibrated eta for each named noise level, lowest noise first."""
    targets = targets or TARGET_ACCURACY
    cache = {}  # probes are deterministic in (eta, seed), so levels share them
    return {level: calibrate_eta(target, tolerance, eta_bounds, probe_corpus, model, seed, max_iterations,
                                 cache=cache)
            for level, target in targets.items()}
