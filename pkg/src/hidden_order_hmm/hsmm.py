"""
Hidden Semi-Markov Model

Explicit-duration HSMM with nonparametric sojourn distributions d_j(l),
l = 1..L_max. Transitions have a zero diagonal: leaving a state is governed by
its sojourn law, the transition row only picks the next state. The final
sojourn of a sequence is right-censored and enters the likelihood through the
survivor function sum_{l' >= l} d_j(l').
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .config import FitConfig
from .errors import DomainError, GuardError, NumericError
from .hmm import (
    FitReport,
    _argmax_with_ties,
    _normalize_rows,
    _stochastic,
    as_observations,
    write_json_atomic,
)

logger = logging.getLogger(__name__)

SOJOURN_TOLERANCE = 1e-10
MONOTONE_TOLERANCE = 1e-6
RECOMMENDED_LENGTH = 20_000
DEFAULT_MAX_SOJOURN = 200
BRUTE_FORCE_MAX_LENGTH = 16


@dataclass(frozen=True, eq=False)
class HsmmModel:
    """Parameters of an explicit-duration HSMM

    sojourn[j, l - 1] = d_j(l). With a single state the transition matrix is
    [[0.0]] and the one segment spans the whole sequence.
    """

    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray
    sojourn: np.ndarray

    def __post_init__(self) -> None:
        transition = np.array(self.transition, dtype=np.float64)
        n = transition.shape[0] if transition.ndim == 2 else 0
        if transition.ndim != 2 or transition.shape != (n, n) or n < 1:
            raise DomainError(f"transition must be square, got shape {transition.shape}")
        if np.any(np.diag(transition) != 0.0):
            raise DomainError("HSMM transition diagonal must be exactly 0")
        if n > 1:
            transition = _stochastic(transition, "transition", 2)
        elif transition[0, 0] != 0.0:
            raise DomainError("Single-state HSMM transition must be [[0.0]]")
        else:
            transition.setflags(write=False)

        emission = _stochastic(self.emission, "emission", 2)
        initial = _stochastic(self.initial, "initial", 1)
        sojourn = np.array(self.sojourn, dtype=np.float64)
        if emission.shape[0] != n or initial.shape != (n,):
            raise DomainError("emission / initial do not match the number of states")
        if sojourn.ndim != 2 or sojourn.shape[0] != n or sojourn.shape[1] < 1:
            raise DomainError(f"sojourn must have shape ({n}, L_max), got {sojourn.shape}")
        if not np.all(np.isfinite(sojourn)) or np.any(sojourn < 0.0):
            raise DomainError("sojourn probabilities must be finite and non-negative")
        if np.any(np.abs(sojourn.sum(axis=1) - 1.0) > SOJOURN_TOLERANCE):
            raise DomainError("each sojourn distribution must sum to 1")
        sojourn.setflags(write=False)

        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "emission", emission)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "sojourn", sojourn)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_symbols(self) -> int:
        return self.emission.shape[1]

    @property
    def max_sojourn(self) -> int:
        return self.sojourn.shape[1]

    def survivor(self) -> np.ndarray:
        """survivor[j, l - 1] = P(sojourn in j >= l)"""
        tail = np.cumsum(self.sojourn[:, ::-1], axis=1)[:, ::-1]
        return np.ascontiguousarray(np.minimum(tail, 1.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_states": self.num_states,
            "num_symbols": self.num_symbols,
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "initial": self.initial.tolist(),
            "sojourn": self.sojourn.tolist(),
            "max_sojourn": self.max_sojourn,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HsmmModel":
        try:
            model = cls(
                transition=data["transition"],
                emission=data["emission"],
                initial=data["initial"],
                sojourn=data["sojourn"],
            )
        except KeyError as e:
            raise DomainError(f"HSMM JSON missing field {e}") from e
        if data.get("max_sojourn", model.max_sojourn) != model.max_sojourn:
            raise DomainError("max_sojourn does not match the sojourn arrays")
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HsmmModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class HsmmDecoding:
    path: np.ndarray
    gamma: np.ndarray
    ties: np.ndarray
    # a decoded run is longer than L_max (posterior argmax merged segments)
    max_run_exceeded: bool = False


@dataclass
class _Pass:
    log_likelihood: float
    gamma: np.ndarray
    durations: np.ndarray
    jumps: np.ndarray
    initial_counts: np.ndarray


def _arrays(model: HsmmModel) -> Tuple[np.ndarray, ...]:
    return (
        np.ascontiguousarray(model.initial),
        np.ascontiguousarray(model.transition),
        np.ascontiguousarray(model.emission),
        np.ascontiguousarray(model.sojourn),
        model.survivor(),
    )


def _single_state_log_likelihood(model: HsmmModel, obs: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        return float(np.log(model.emission[0, obs]).sum())


def _forward_backward(model: HsmmModel, obs: np.ndarray) -> _Pass:
    initial, transition, emission, sojourn, survivor = _arrays(model)
    ends, starts, scale = _kernels.hsmm_forward(
        initial, transition, emission, sojourn, survivor, obs
    )
    if np.any(scale <= 0.0):
        raise NumericError("Observation sequence has zero probability under the HSMM")
    entry, exit_ = _kernels.hsmm_backward(transition, emission, sojourn, survivor, obs, scale)
    gamma, durations, jumps = _kernels.hsmm_expectations(
        transition, emission, sojourn, survivor, obs, ends, starts, scale, entry, exit_
    )
    gamma /= gamma.sum(axis=1, keepdims=True)
    return _Pass(
        log_likelihood=float(np.log(scale).sum()),
        gamma=gamma,
        durations=durations,
        jumps=jumps,
        initial_counts=initial * entry[0],
    )


def hsmm_log_likelihood(model: HsmmModel, obs: Sequence[int] | np.ndarray) -> float:
    """ln P(O | model) including the censored final sojourn; -inf if impossible"""
    obs = as_observations(obs, model.num_symbols)
    if model.num_states == 1:
        return _single_state_log_likelihood(model, obs)
    initial, transition, emission, sojourn, survivor = _arrays(model)
    _, _, scale = _kernels.hsmm_forward(initial, transition, emission, sojourn, survivor, obs)
    if np.any(scale <= 0.0):
        return float("-inf")
    return float(np.log(scale).sum())


def _zero_diagonal_rows(counts: np.ndarray, floor: float) -> np.ndarray:
    n = counts.shape[0]
    if n == 1:
        return np.zeros((1, 1))
    off = ~np.eye(n, dtype=bool)
    rows = np.zeros((n, n))
    for i in range(n):
        rows[i, off[i]] = _normalize_rows(counts[i, off[i]], floor)
    return rows


def _normalize_sojourn(counts: np.ndarray, previous: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=1, keepdims=True)
    sojourn = np.where(totals > 0.0, counts / np.where(totals > 0.0, totals, 1.0), previous)
    return sojourn / sojourn.sum(axis=1, keepdims=True)


def _em_update(model: HsmmModel, obs: np.ndarray, floor: float) -> Tuple[HsmmModel, float]:
    fb = _forward_backward(model, obs)
    emission_counts = np.zeros((model.num_states, model.num_symbols))
    for k in range(model.num_symbols):
        emission_counts[:, k] = fb.gamma[obs == k].sum(axis=0)
    updated = HsmmModel(
        transition=_zero_diagonal_rows(fb.jumps, floor),
        emission=_normalize_rows(emission_counts, floor),
        initial=_normalize_rows(fb.initial_counts, floor),
        sojourn=_normalize_sojourn(fb.durations, model.sojourn),
    )
    return updated, fb.log_likelihood


def _random_start(
    num_states: int, num_symbols: int, max_sojourn: int, rng: np.random.Generator
) -> HsmmModel:
    transition = np.zeros((num_states, num_states))
    if num_states > 1:
        off = ~np.eye(num_states, dtype=bool)
        for i in range(num_states):
            transition[i, off[i]] = _normalize_rows(
                rng.dirichlet(np.ones(num_states - 1)), 0.0
            )
    return HsmmModel(
        transition=transition,
        emission=_normalize_rows(rng.dirichlet(np.ones(num_symbols), size=num_states), 0.0),
        initial=_normalize_rows(rng.dirichlet(np.ones(num_states)), 0.0),
        sojourn=np.full((num_states, max_sojourn), 1.0 / max_sojourn),
    )


def _fit_single_state(
    obs: np.ndarray, num_symbols: int, max_sojourn: int
) -> Tuple[HsmmModel, FitReport]:
    counts = np.bincount(obs, minlength=num_symbols).astype(np.float64)
    model = HsmmModel(
        transition=np.zeros((1, 1)),
        emission=(counts / counts.sum())[None, :],
        initial=np.ones(1),
        sojourn=np.full((1, max_sojourn), 1.0 / max_sojourn),
    )
    ll = _single_state_log_likelihood(model, obs)
    report = FitReport(
        fitted_model=model,
        log_likelihood_trace=[ll],
        iterations=1,
        converged=True,
        restarts_used=1,
    )
    return model, report


def fit_hsmm(
    obs: Sequence[int] | np.ndarray,
    num_states: int,
    max_sojourn: int = DEFAULT_MAX_SOJOURN,
    config: Optional[FitConfig] = None,
) -> Tuple[HsmmModel, FitReport]:
    """Nonparametric-sojourn HSMM by explicit-duration EM

    Each restart starts from random transition/emission/initial parameters and
    uniform sojourn laws over 1..max_sojourn. Cost per iteration is
    O(T * N * max_sojourn). With config.time_budget_seconds set, the fit stops
    once the budget is spent and returns the best result so far with
    report.aborted set.

    Raises:
        DomainError: max_sojourn < 2 or len(obs) < num_states * max_sojourn
        NumericError: the likelihood decreased by more than 1e-6 in one step
    """
    config = config or FitConfig()
    if max_sojourn < 2:
        raise DomainError(f"max_sojourn must be >= 2, got {max_sojourn}")
    if num_states < 1:
        raise DomainError(f"num_states must be >= 1, got {num_states}")
    obs = as_observations(obs, config.num_symbols)
    if obs.size < num_states * max_sojourn:
        raise DomainError(
            f"Sequence of length {obs.size} is shorter than N * max_sojourn = "
            f"{num_states * max_sojourn}"
        )
    warnings: List[str] = []
    if obs.size < RECOMMENDED_LENGTH:
        message = (
            f"sequence length {obs.size} is below the {RECOMMENDED_LENGTH} observations "
            f"recommended for nonparametric sojourn estimation"
        )
        logger.warning(f"HSMM fit: {message}")
        warnings.append(message)

    if num_states == 1:
        model, report = _fit_single_state(obs, config.num_symbols, max_sojourn)
        report.warnings = warnings
        return model, report

    rng = np.random.default_rng(config.seed)
    started = time.monotonic()
    aborted = False
    best: Optional[Tuple[HsmmModel, List[float], int, bool]] = None
    restart_lls: List[float] = []

    for restart in range(config.restarts):
        model = _random_start(num_states, config.num_symbols, max_sojourn, rng)
        scored = model
        trace: List[float] = []
        converged = False
        iteration = 0
        for iteration in range(1, config.max_iterations + 1):
            updated, ll = _em_update(model, obs, config.probability_floor)
            if trace and ll < trace[-1] - MONOTONE_TOLERANCE:
                raise NumericError(
                    f"HSMM EM likelihood decreased by {trace[-1] - ll:.3e} at iteration "
                    f"{iteration} of restart {restart + 1}"
                )
            trace.append(ll)
            scored = model
            logger.debug(f"HSMM EM iteration {iteration}: ln P = {ll:.8f}")
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tolerance:
                converged = True
                break
            model = updated
            if (
                config.time_budget_seconds is not None
                and time.monotonic() - started > config.time_budget_seconds
            ):
                aborted = True
                break

        restart_lls.append(trace[-1])
        if best is None or trace[-1] > best[1][-1]:
            best = (scored, trace, iteration, converged)
        if aborted:
            logger.warning(
                f"HSMM fit hit the {config.time_budget_seconds}s budget during restart "
                f"{restart + 1}; returning the best partial result"
            )
            warnings.append("time budget exhausted")
            break

    model, trace, iterations, converged = best
    logger.info(
        f"HSMM fit N={num_states} L_max={max_sojourn} T={obs.size}: best ln P = "
        f"{trace[-1]:.4f} ({iterations} iterations, converged={converged})"
    )
    report = FitReport(
        fitted_model=model,
        log_likelihood_trace=trace,
        iterations=iterations,
        converged=converged,
        restarts_used=len(restart_lls),
        restart_log_likelihoods=restart_lls,
        aborted=aborted,
        warnings=warnings,
    )
    return model, report


def _max_run(path: np.ndarray) -> int:
    change = np.flatnonzero(np.diff(path) != 0)
    bounds = np.concatenate(([0], change + 1, [path.size]))
    return int(np.diff(bounds).max())


def decode_hsmm(model: HsmmModel, obs: Sequence[int] | np.ndarray) -> HsmmDecoding:
    """Per-position most probable state from the explicit-duration posterior"""
    obs = as_observations(obs, model.num_symbols)
    if model.num_states == 1:
        gamma = np.ones((obs.size, 1))
        path = np.zeros(obs.size, dtype=np.int64)
        return HsmmDecoding(path=path, gamma=gamma, ties=np.array([], dtype=np.int64))
    fb = _forward_backward(model, obs)
    path, ties = _argmax_with_ties(fb.gamma)
    exceeded = _max_run(path) > model.max_sojourn
    if exceeded:
        logger.info("HSMM decode: a decoded run exceeds max_sojourn")
    return HsmmDecoding(path=path, gamma=fb.gamma, ties=ties, max_run_exceeded=exceeded)


def simulate_hsmm(model: HsmmModel, length: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (symbols, states): state, sojourn, emissions, jump; truncated at length"""
    if length < 1:
        raise DomainError(f"Simulation length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    durations = np.arange(1, model.max_sojourn + 1)
    states = np.empty(length, dtype=np.int64)
    state = int(rng.choice(model.num_states, p=model.initial))
    position = 0
    while position < length:
        sojourn = int(rng.choice(durations, p=model.sojourn[state]))
        states[position : position + sojourn] = state
        position += sojourn
        if model.num_states > 1:
            state = int(rng.choice(model.num_states, p=model.transition[state]))

    cum_emission = np.cumsum(model.emission, axis=1)
    draws = rng.random(length)
    symbols = (draws[:, None] >= cum_emission[states]).sum(axis=1)
    symbols = np.minimum(symbols, model.num_symbols - 1).astype(np.int64)
    return symbols, states


def _segmentations(
    model: HsmmModel, length: int
) -> Iterator[Tuple[List[int], List[int]]]:
    """All (states, durations) with durations <= L_max summing to length"""

    def extend(states: List[int], durations: List[int], used: int):
        if used == length:
            yield states, durations
            return
        candidates = range(model.num_states) if not states else [
            k for k in range(model.num_states) if k != states[-1]
        ]
        for state in candidates:
            for d in range(1, min(model.max_sojourn, length - used) + 1):
                yield from extend(states + [state], durations + [d], used + d)

    yield from extend([], [], 0)


def brute_force_hsmm_posterior(
    model: HsmmModel, obs: Sequence[int] | np.ndarray
) -> Tuple[np.ndarray, float]:
    """Exact state posteriors and P(O) by enumerating segmentations (test oracle)"""
    obs = as_observations(obs, model.num_symbols)
    if obs.size > BRUTE_FORCE_MAX_LENGTH:
        raise GuardError(
            f"Segmentation enumeration is limited to {BRUTE_FORCE_MAX_LENGTH} observations"
        )
    survivor = model.survivor()
    gamma = np.zeros((obs.size, model.num_states))
    total = 0.0
    for states, durations in _segmentations(model, obs.size):
        p = model.initial[states[0]]
        position = 0
        for index, (state, d) in enumerate(zip(states, durations)):
            if index > 0:
                p *= model.transition[states[index - 1], state]
            last = index == len(states) - 1
            p *= survivor[state, d - 1] if last else model.sojourn[state, d - 1]
            p *= np.prod(model.emission[state, obs[position : position + d]])
            position += d
            if p == 0.0:
                break
        if p == 0.0:
            continue
        total += p
        position = 0
        for state, d in zip(states, durations):
            gamma[position : position + d, state] += p
            position += d
    if total <= 0.0:
        raise NumericError("Observation sequence has zero probability under the HSMM")
    return gamma / total, total


def save_hsmm(model: HsmmModel, path: Path) -> None:
    write_json_atomic(path, model.to_dict())


def load_hsmm(path: Path) -> HsmmModel:
    with open(path, encoding="utf-8") as handle:
        return HsmmModel.from_dict(json.load(handle))
