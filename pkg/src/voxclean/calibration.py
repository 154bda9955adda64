"""Logistic calibration of audit judgments and FAR/FRR/EER computation.

The fit is a plain fixed-effects Bernoulli logistic regression of the
same-speaker outcome on the similarity score, maximized by damped Newton
iterations (step-halving when a step would lower the likelihood). Per-group
refits stand in as diagnostics for the heterogeneity a mixed model would
absorb. The calibrated operating threshold is the crossover -b0/b1 where
the fitted probability reaches one half.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .audit import AuditLabel, ScoredTrialRecord
from .errors import (
    ConsistencyError,
    ContractError,
    SeparationError,
    UndefinedCrossoverError,
)

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
GRADIENT_TOLERANCE = 1e-8
SEPARATION_NORM = 1e6

BINARY_OUTCOMES = {"same_speaker": 1, "different_speaker": 0}


@dataclass(frozen=True)
class BinaryTrial:
    score: float
    outcome: int  # 1 = same speaker, 0 = different speaker
    annotator: str
    language: str


@dataclass(frozen=True)
class LogisticFit:
    beta0: float
    beta1: float
    converged: bool
    iterations: int
    log_likelihood: float


@dataclass(frozen=True)
class Crossover:
    value: float
    in_range: bool  # crossover lies inside the cosine range [-1, 1]
    slope_negative: bool


@dataclass(frozen=True)
class ErrorRates:
    operating_points: tuple[tuple[float, float, float], ...]  # (threshold, FAR, FRR)
    eer: float
    eer_threshold: float


def build_binary_trials(
    labels: Sequence[AuditLabel],
    scored_index: Mapping[str, ScoredTrialRecord],
) -> list[BinaryTrial]:
    """Join same/different labels to their scores; other labels are dropped."""
    trials: list[BinaryTrial] = []
    dropped: dict[str, int] = {}
    for label in labels:
        record = scored_index.get(label.trial_id)
        if record is None:
            raise ConsistencyError(f"label references unknown trial: {label.trial_id}")
        outcome = BINARY_OUTCOMES.get(label.label)
        if outcome is None:
            dropped[label.label] = dropped.get(label.label, 0) + 1
            continue
        trials.append(
            BinaryTrial(
                score=record.score,
                outcome=outcome,
                annotator=label.annotator,
                language=record.language,
            )
        )
    if dropped:
        logger.info("build_binary_trials: dropped %s", dropped)
    return trials


def log_likelihood(
    beta0: float, beta1: float, scores: np.ndarray, outcomes: np.ndarray
) -> float:
    """Bernoulli log-likelihood of P(y=1) = sigmoid(b0 + b1*s)."""
    eta = beta0 + beta1 * scores
    # y*eta - log(1 + exp(eta)), stable for large |eta|
    return float(np.sum(outcomes * eta - np.logaddexp(0.0, eta)))


def log_likelihood_gradient(
    beta0: float, beta1: float, scores: np.ndarray, outcomes: np.ndarray
) -> np.ndarray:
    eta = beta0 + beta1 * scores
    mu = 1.0 / (1.0 + np.exp(-eta))
    residual = outcomes - mu
    return np.array([np.sum(residual), np.sum(residual * scores)])


def fit_logistic(
    trials: Sequence[BinaryTrial] | tuple[np.ndarray, np.ndarray],
    ridge: float = 0.0,
) -> LogisticFit:
    """Maximum-likelihood logistic fit of outcome on score.

    Damped Newton from (0, 0): a step that lowers the likelihood is halved
    until it does not. Convergence is max|step| < 1e-10 or gradient norm
    < 1e-8 within 200 iterations; anything else returns converged=False.
    A diverging coefficient norm (> 1e6) signals complete separation and
    raises SeparationError unless a ridge penalty is active.

    `ridge` adds a penalty of -ridge/2 * ||beta||^2, the escape hatch for
    separable audit data.
    """
    if isinstance(trials, tuple):
        scores, outcomes = trials
        scores = np.asarray(scores, dtype=np.float64)
        outcomes = np.asarray(outcomes, dtype=np.float64)
    else:
        scores = np.array([t.score for t in trials], dtype=np.float64)
        outcomes = np.array([t.outcome for t in trials], dtype=np.float64)

    if scores.shape[0] < 2:
        raise ContractError("need at least 2 trials")
    if len(np.unique(outcomes)) < 2:
        raise ContractError("both outcomes must be present")
    if float(np.var(scores)) == 0.0:
        raise ContractError("score variance is zero")
    if ridge == 0.0:
        # A threshold on the score classifying perfectly means the MLE does
        # not exist; Newton would drift off to infinity (the norm guard in
        # the loop backstops quasi-separable cases the check misses).
        neg_max = float(np.max(scores[outcomes == 0]))
        pos_min = float(np.min(scores[outcomes == 1]))
        neg_min = float(np.min(scores[outcomes == 0]))
        pos_max = float(np.max(scores[outcomes == 1]))
        if neg_max < pos_min or pos_max < neg_min:
            raise SeparationError(
                "a threshold on the score classifies the outcomes perfectly"
            )

    def objective(b0: float, b1: float) -> float:
        value = log_likelihood(b0, b1, scores, outcomes)
        if ridge > 0.0:
            value -= 0.5 * ridge * (b0 * b0 + b1 * b1)
        return value

    beta = np.zeros(2)
    current = objective(beta[0], beta[1])
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        eta = beta[0] + beta[1] * scores
        mu = 1.0 / (1.0 + np.exp(-eta))
        grad = log_likelihood_gradient(beta[0], beta[1], scores, outcomes)
        if ridge > 0.0:
            grad = grad - ridge * beta
        weights = mu * (1.0 - mu)
        h00 = float(np.sum(weights)) + ridge
        h01 = float(np.sum(weights * scores))
        h11 = float(np.sum(weights * scores * scores)) + ridge
        hessian = np.array([[h00, h01], [h01, h11]])
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            raise SeparationError(
                "singular Hessian: predicted probabilities saturated"
            ) from None

        # Step halving keeps the likelihood nondecreasing.
        scale = 1.0
        for _ in range(40):
            candidate = beta + scale * step
            value = objective(candidate[0], candidate[1])
            if value >= current:
                break
            scale *= 0.5
        else:
            converged = True  # no improving step at any scale: at the optimum
            break
        beta = beta + scale * step
        current = value

        if ridge == 0.0 and float(np.linalg.norm(beta)) > SEPARATION_NORM:
            raise SeparationError(
                "coefficient norm diverged: data are perfectly separable"
            )
        grad_after = log_likelihood_gradient(beta[0], beta[1], scores, outcomes)
        if ridge > 0.0:
            grad_after = grad_after - ridge * beta
        if (
            float(np.max(np.abs(scale * step))) < STEP_TOLERANCE
            or float(np.linalg.norm(grad_after)) < GRADIENT_TOLERANCE
        ):
            converged = True
            break

    if not converged:
        logger.warning("fit_logistic: no convergence in %d iterations", iterations)
    return LogisticFit(
        beta0=float(beta[0]),
        beta1=float(beta[1]),
        converged=converged,
        iterations=iterations,
        log_likelihood=log_likelihood(beta[0], beta[1], scores, outcomes),
    )


def crossover(fit: LogisticFit) -> Crossover:
    """Score at which the fitted same-speaker probability is one half."""
    if not fit.converged:
        raise ContractError("crossover requires a converged fit")
    if fit.beta1 == 0.0:
        raise UndefinedCrossoverError("flat fit: slope is zero")
    value = -fit.beta0 / fit.beta1
    slope_negative = fit.beta1 < 0.0
    if slope_negative:
        logger.warning(
            "crossover: negative slope %.6g, probability decreases with similarity",
            fit.beta1,
        )
    return Crossover(
        value=value,
        in_range=(-1.0 <= value <= 1.0),
        slope_negative=slope_negative,
    )


def compute_eer(
    same_scores: Sequence[float], different_scores: Sequence[float]
) -> ErrorRates:
    """FAR/FRR sweep and equal error rate.

    Thresholds run over all distinct scores (accept same-speaker iff
    score >= threshold) plus one reject-everything point just above the
    maximum, so the FAR/FRR curves always bracket their crossing. The EER
    and its threshold are linearly interpolated between the two adjacent
    operating points where FAR - FRR changes sign.
    """
    same = np.asarray(same_scores, dtype=np.float64)
    diff = np.asarray(different_scores, dtype=np.float64)
    if same.size == 0 or diff.size == 0:
        raise ContractError("both classes must be present")

    all_scores = np.concatenate([same, diff])
    thresholds = np.unique(all_scores)
    thresholds = np.append(thresholds, np.nextafter(thresholds[-1], np.inf))

    points: list[tuple[float, float, float]] = []
    for tau in thresholds:
        far = float(np.count_nonzero(diff >= tau)) / diff.size
        frr = float(np.count_nonzero(same < tau)) / same.size
        points.append((float(tau), far, frr))

    eer = None
    eer_threshold = None
    for i in range(len(points)):
        tau_i, far_i, frr_i = points[i]
        d_i = far_i - frr_i
        if d_i == 0.0:
            eer = far_i
            eer_threshold = tau_i
            break
        if d_i < 0.0:
            tau_p, far_p, frr_p = points[i - 1]
            d_p = far_p - frr_p
            t = d_p / (d_p - d_i)
            eer = far_p + t * (far_i - far_p)
            eer_threshold = tau_p + t * (tau_i - tau_p)
            break
    if eer is None:  # d stayed positive: crossing sits at the sentinel
        tau_i, far_i, frr_i = points[-1]
        eer = (far_i + frr_i) / 2.0
        eer_threshold = tau_i

    if eer > 0.5:
        logger.warning(
            "compute_eer: EER %.3f exceeds 0.5, scorer looks inverted", eer
        )
    return ErrorRates(
        operating_points=tuple(points), eer=eer, eer_threshold=eer_threshold
    )


def error_rates_tsv(rates: ErrorRates) -> str:
    """Operating points as TSV for external DET plotting."""
    lines = ["threshold\tfar\tfrr"]
    for tau, far, frr in rates.operating_points:
        lines.append(f"{tau:.9g}\t{far:.9g}\t{frr:.9g}")
    return "\n".join(lines) + "\n"


def subgroup_fits(
    trials: Sequence[BinaryTrial], key: str
) -> dict[str, dict]:
    """Refit per annotator or per language as heterogeneity diagnostics."""
    if key not in ("annotator", "language"):
        raise ContractError(f"unknown subgroup key: {key}")
    groups: dict[str, list[BinaryTrial]] = {}
    for t in trials:
        groups.setdefault(getattr(t, key), []).append(t)

    out: dict[str, dict] = {}
    for name in sorted(groups):
        subset = groups[name]
        entry: dict = {"n": len(subset)}
        try:
            fit = fit_logistic(subset)
            entry.update(
                beta0=fit.beta0,
                beta1=fit.beta1,
                converged=fit.converged,
                log_likelihood=fit.log_likelihood,
            )
            if fit.converged and fit.beta1 != 0.0:
                cross = crossover(fit)
                entry["crossover"] = cross.value
                entry["crossover_in_range"] = cross.in_range
        except (ContractError, SeparationError) as exc:
            entry["skipped"] = str(exc)
        out[name] = entry
    return out


def fit_report(trials: Sequence[BinaryTrial], ridge: float = 0.0) -> dict:
    """Overall fit, crossover, and per-group diagnostics as one JSON-ready dict."""
    fit = fit_logistic(trials, ridge=ridge)
    report: dict = {
        "n_trials": len(trials),
        "beta0": fit.beta0,
        "beta1": fit.beta1,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "log_likelihood": fit.log_likelihood,
        "ridge": ridge,
    }
    if fit.converged and fit.beta1 != 0.0:
        cross = crossover(fit)
        report["crossover"] = cross.value
        report["crossover_in_range"] = cross.in_range
        report["slope_negative"] = cross.slope_negative
    report["by_annotator"] = subgroup_fits(trials, "annotator")
    report["by_language"] = subgroup_fits(trials, "language")
    return report
