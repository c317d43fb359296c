"""
Hidden Markov Model

Discrete-emission HMM: parameter container, scaled forward-backward likelihood,
Baum-Welch fitting with random restarts, posterior and Viterbi decoding,
simulation, and the geometric sojourn law of a state.

Symbols are integer indices in [0, M). For transaction signs M = 2 with
symbol 0 for a sell (-1) and symbol 1 for a buy (+1).
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .config import FitConfig
from .errors import DomainError, GuardError, NumericError

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-12
TIE_TOLERANCE = 1e-12
BRUTE_FORCE_LIMIT = 10**7


def _stochastic(values: Any, name: str, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise DomainError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if not np.all(np.isfinite(array)) or np.any(array < 0.0) or np.any(array > 1.0):
        raise DomainError(f"{name} entries must lie in [0, 1]")
    sums = array.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_TOLERANCE):
        raise DomainError(f"{name} rows must sum to 1 (got {np.atleast_1d(sums).tolist()})")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class HmmModel:
    """Parameter set (A, B, pi) of a discrete-emission HMM

    Arrays are validated on construction and stored read-only.
    """

    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray

    def __post_init__(self) -> None:
        transition = _stochastic(self.transition, "transition", 2)
        emission = _stochastic(self.emission, "emission", 2)
        initial = _stochastic(self.initial, "initial", 1)
        n = transition.shape[0]
        if transition.shape != (n, n) or n < 1:
            raise DomainError(f"transition must be square, got shape {transition.shape}")
        if emission.shape[0] != n or emission.shape[1] < 1:
            raise DomainError(f"emission must have {n} rows, got shape {emission.shape}")
        if initial.shape != (n,):
            raise DomainError(f"initial must have length {n}, got {initial.shape}")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "emission", emission)
        object.__setattr__(self, "initial", initial)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_symbols(self) -> int:
        return self.emission.shape[1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_states": self.num_states,
            "num_symbols": self.num_symbols,
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "initial": self.initial.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HmmModel":
        try:
            model = cls(
                transition=data["transition"],
                emission=data["emission"],
                initial=data["initial"],
            )
        except KeyError as e:
            raise DomainError(f"Model JSON missing field {e}") from e
        if data.get("num_states", model.num_states) != model.num_states:
            raise DomainError("num_states does not match the transition matrix")
        if data.get("num_symbols", model.num_symbols) != model.num_symbols:
            raise DomainError("num_symbols does not match the emission matrix")
        return model

    def to_json(self) -> str:
        # float repr is the shortest string that round-trips to the same double
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HmmModel":
        return cls.from_dict(json.loads(text))


@dataclass
class FitReport:
    """Outcome of a Baum-Welch fit (best restart)"""

    # HmmModel, or HsmmModel for an HSMM fit
    fitted_model: Any
    log_likelihood_trace: List[float]
    iterations: int
    converged: bool
    restarts_used: int
    degenerate: bool = False
    restart_log_likelihoods: List[float] = field(default_factory=list)
    aborted: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1] if self.log_likelihood_trace else float("-inf")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "restarts_used": self.restarts_used,
            "degenerate": self.degenerate,
            "aborted": self.aborted,
            "restart_log_likelihoods": list(self.restart_log_likelihoods),
            "log_likelihood_trace": list(self.log_likelihood_trace),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class PosteriorDecoding:
    """Smoothed posteriors and their per-position argmax path"""

    gamma: np.ndarray
    path: np.ndarray
    # positions where the best two posteriors were within TIE_TOLERANCE
    ties: np.ndarray

    @property
    def has_ties(self) -> bool:
        return self.ties.size > 0


@dataclass(frozen=True, eq=False)
class SojournPmf:
    pmf: np.ndarray
    tail_mass: float


def as_observations(obs: Sequence[int] | np.ndarray, num_symbols: int) -> np.ndarray:
    """Validate a symbol sequence and return it as a contiguous int64 array

    Raises:
        DomainError: empty sequence or symbol outside [0, num_symbols)
    """
    array = np.ascontiguousarray(np.asarray(obs), dtype=np.int64)
    if array.ndim != 1 or array.size == 0:
        raise DomainError("Observation sequence must be a non-empty 1-d sequence")
    if array.min() < 0 or array.max() >= num_symbols:
        raise DomainError(
            f"Observation symbols must lie in [0, {num_symbols}), "
            f"found range [{array.min()}, {array.max()}]"
        )
    return array


def signs_to_symbols(signs: Sequence[int] | np.ndarray) -> np.ndarray:
    """Map transaction signs (+1 buy, -1 sell) to symbols (1, 0)"""
    signs = np.asarray(signs)
    if not np.all(np.isin(signs, (-1, 1))):
        raise DomainError("Transaction signs must be +1 or -1")
    return (signs > 0).astype(np.int64)


def _forward(model: HmmModel, obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return _kernels.forward_scaled(model.initial, model.transition, model.emission, obs)


def _scale_log_likelihood(scale: np.ndarray) -> float:
    if np.any(scale <= 0.0):
        return float("-inf")
    return float(np.log(scale).sum())


def log_likelihood(model: HmmModel, obs: Sequence[int] | np.ndarray) -> float:
    """ln P(O | model) by the scaled forward recursion

    Returns -inf when the sequence has zero probability under the model.
    """
    obs = as_observations(obs, model.num_symbols)
    _, scale = _forward(model, obs)
    return _scale_log_likelihood(scale)


def _check_enumerable(model: HmmModel, length: int) -> None:
    if model.num_states**length > BRUTE_FORCE_LIMIT:
        raise GuardError(
            f"Path enumeration over {model.num_states}^{length} paths exceeds "
            f"the limit of {BRUTE_FORCE_LIMIT}"
        )


def _path_probability(model: HmmModel, path: Sequence[int], obs: np.ndarray) -> float:
    p = model.initial[path[0]] * model.emission[path[0], obs[0]]
    for t in range(1, len(path)):
        if p == 0.0:
            return 0.0
        p *= model.transition[path[t - 1], path[t]] * model.emission[path[t], obs[t]]
    return float(p)


def brute_force_likelihood(model: HmmModel, obs: Sequence[int] | np.ndarray) -> float:
    """Exact P(O | model) by summing over every state path (test oracle)"""
    obs = as_observations(obs, model.num_symbols)
    _check_enumerable(model, obs.size)
    total = 0.0
    for path in itertools.product(range(model.num_states), repeat=obs.size):
        total += _path_probability(model, path, obs)
    return total


def brute_force_posterior(model: HmmModel, obs: Sequence[int] | np.ndarray) -> np.ndarray:
    """Exact P(q_t = i | O) by path enumeration (test oracle)"""
    obs = as_observations(obs, model.num_symbols)
    _check_enumerable(model, obs.size)
    gamma = np.zeros((obs.size, model.num_states))
    for path in itertools.product(range(model.num_states), repeat=obs.size):
        p = _path_probability(model, path, obs)
        if p > 0.0:
            gamma[np.arange(obs.size), path] += p
    total = gamma[0].sum()
    if total <= 0.0:
        raise NumericError("Observation sequence has zero probability under the model")
    return gamma / total


def brute_force_best_path(model: HmmModel, obs: Sequence[int] | np.ndarray) -> np.ndarray:
    """Most probable joint state path by exhaustive search (test oracle)

    Paths are visited in lexicographic order and only a strictly better score
    replaces the incumbent, so ties resolve toward lower state indices.
    """
    obs = as_observations(obs, model.num_symbols)
    _check_enumerable(model, obs.size)
    best_path: Optional[Tuple[int, ...]] = None
    best = -1.0
    for path in itertools.product(range(model.num_states), repeat=obs.size):
        p = _path_probability(model, path, obs)
        if p > best:
            best = p
            best_path = path
    return np.array(best_path, dtype=np.int64)


def _argmax_with_ties(gamma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    best = gamma.max(axis=1, keepdims=True)
    near = gamma >= best - TIE_TOLERANCE
    path = np.argmax(near, axis=1).astype(np.int64)
    ties = np.flatnonzero(near.sum(axis=1) > 1)
    return path, ties


def _posteriors(model: HmmModel, obs: np.ndarray):
    alpha, scale = _forward(model, obs)
    if np.any(scale <= 0.0):
        raise NumericError("Observation sequence has zero probability under the model")
    beta = _kernels.backward_scaled(model.transition, model.emission, obs, scale)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    return alpha, beta, scale, gamma


def posterior_decode(model: HmmModel, obs: Sequence[int] | np.ndarray) -> PosteriorDecoding:
    """Individually most likely state at every position

    Ties within 1e-12 resolve to the lowest state index; their positions are
    reported in the result.
    """
    obs = as_observations(obs, model.num_symbols)
    _, _, _, gamma = _posteriors(model, obs)
    path, ties = _argmax_with_ties(gamma)
    if ties.size:
        logger.warning(f"Posterior decode: {ties.size} positions with tied state posteriors")
    return PosteriorDecoding(gamma=gamma, path=path, ties=ties)


def _safe_log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(values)


def viterbi_decode(model: HmmModel, obs: Sequence[int] | np.ndarray) -> np.ndarray:
    """Single most probable joint state path (log-space dynamic programming)"""
    obs = as_observations(obs, model.num_symbols)
    path, score = _kernels.viterbi_path(
        _safe_log(model.initial), _safe_log(model.transition), _safe_log(model.emission), obs
    )
    if not np.isfinite(score):
        raise NumericError("Observation sequence has zero probability under the model")
    return path


def simulate(model: HmmModel, length: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (symbols, states) of the given length; reproducible given seed"""
    if length < 1:
        raise DomainError(f"Simulation length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    cum_transition = np.cumsum(model.transition, axis=1)
    cum_emission = np.cumsum(model.emission, axis=1)
    state_draws = rng.random(length)
    symbol_draws = rng.random(length)

    states = np.empty(length, dtype=np.int64)
    state = int(np.searchsorted(np.cumsum(model.initial), state_draws[0], side="right"))
    states[0] = min(state, model.num_states - 1)
    for t in range(1, length):
        row = cum_transition[states[t - 1]]
        state = int(np.searchsorted(row, state_draws[t], side="right"))
        states[t] = min(state, model.num_states - 1)

    symbols = (symbol_draws[:, None] >= cum_emission[states]).sum(axis=1)
    symbols = np.minimum(symbols, model.num_symbols - 1).astype(np.int64)
    return symbols, states


def sojourn_pmf(model: HmmModel, state: int, max_len: int) -> SojournPmf:
    """Geometric run-length law p(l) = a_ii^(l-1) (1 - a_ii), l = 1..max_len"""
    if not 0 <= state < model.num_states:
        raise DomainError(f"State {state} outside [0, {model.num_states})")
    if max_len < 1:
        raise DomainError(f"max_len must be >= 1, got {max_len}")
    stay = float(model.transition[state, state])
    if stay >= 1.0:
        raise DomainError(f"State {state} is absorbing (a_ii = 1): infinite expected sojourn")
    lengths = np.arange(1, max_len + 1)
    pmf = stay ** (lengths - 1) * (1.0 - stay)
    return SojournPmf(pmf=pmf, tail_mass=stay**max_len)


def run_lengths(states: Sequence[int] | np.ndarray) -> Dict[int, np.ndarray]:
    """Lengths of completed runs per state (the final, censored run is dropped)"""
    states = np.asarray(states)
    change = np.flatnonzero(np.diff(states) != 0)
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change + 1, [states.size]))
    result: Dict[int, List[int]] = {}
    for start, end in zip(starts[:-1], ends[:-1]):
        result.setdefault(int(states[start]), []).append(int(end - start))
    return {state: np.array(lengths) for state, lengths in result.items()}


def permute_states(model: HmmModel, order: Sequence[int]) -> HmmModel:
    """Model whose state k is the original state order[k]"""
    order = np.asarray(order)
    if sorted(order.tolist()) != list(range(model.num_states)):
        raise DomainError(f"Not a permutation of the states: {order.tolist()}")
    return HmmModel(
        transition=model.transition[np.ix_(order, order)],
        emission=model.emission[order],
        initial=model.initial[order],
    )


def align_states(model: HmmModel, reference: HmmModel) -> HmmModel:
    """Relabel states to best match the reference emission rows (L1 distance)"""
    if model.num_states != reference.num_states or model.num_symbols != reference.num_symbols:
        raise DomainError("Models differ in state or symbol count")
    best_order = None
    best_cost = np.inf
    for order in itertools.permutations(range(model.num_states)):
        cost = np.abs(model.emission[list(order)] - reference.emission).sum()
        if cost < best_cost:
            best_cost = cost
            best_order = order
    return permute_states(model, best_order)


def _normalize_rows(counts: np.ndarray, floor: float) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    width = counts.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(totals > 0.0, counts / totals, 1.0 / width)
    if floor > 0.0:
        probs = np.maximum(probs, floor)
        probs /= probs.sum(axis=-1, keepdims=True)
    return probs


def _em_step(model: HmmModel, obs: np.ndarray, floor: float) -> Tuple[HmmModel, float]:
    """One Baum-Welch update; returns the new model and ln P under the old one"""
    alpha, beta, scale, gamma = _posteriors(model, obs)
    xi = _kernels.transition_counts(alpha, beta, model.transition, model.emission, obs, scale)
    emission_counts = np.zeros((model.num_states, model.num_symbols))
    for k in range(model.num_symbols):
        emission_counts[:, k] = gamma[obs == k].sum(axis=0)
    updated = HmmModel(
        transition=_normalize_rows(xi, floor),
        emission=_normalize_rows(emission_counts, floor),
        initial=_normalize_rows(gamma[0], floor),
    )
    return updated, float(np.log(scale).sum())


def random_model(num_states: int, num_symbols: int, rng: np.random.Generator) -> HmmModel:
    """Row-stochastic parameters from symmetric Dirichlet(1) draws"""
    return HmmModel(
        transition=_normalize_rows(rng.dirichlet(np.ones(num_states), size=num_states), 0.0),
        emission=_normalize_rows(rng.dirichlet(np.ones(num_symbols), size=num_states), 0.0),
        initial=_normalize_rows(rng.dirichlet(np.ones(num_states)), 0.0),
    )


def _run_em(
    model: HmmModel, obs: np.ndarray, config: FitConfig
) -> Tuple[HmmModel, List[float], int, bool]:
    trace: List[float] = []
    converged = False
    iteration = 0
    scored = model
    for iteration in range(1, config.max_iterations + 1):
        updated, ll = _em_step(model, obs, config.probability_floor)
        if trace and ll < trace[-1] - 1e-9:
            logger.warning(
                f"EM likelihood decreased by {trace[-1] - ll:.3e} at iteration {iteration}"
            )
        trace.append(ll)
        scored = model
        logger.debug(f"EM iteration {iteration}: ln P = {ll:.10f}")
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tolerance:
            converged = True
            break
        model = updated
    return scored, trace, iteration, converged


def fit_baum_welch(
    obs: Sequence[int] | np.ndarray,
    num_states: int,
    config: Optional[FitConfig] = None,
    start: Optional[HmmModel] = None,
) -> FitReport:
    """Maximum-likelihood HMM by Baum-Welch EM with random restarts

    Each restart starts from Dirichlet(1) parameters; EM stops when the change in
    ln P drops below config.tolerance or after config.max_iterations. The restart
    with the highest final likelihood is returned. The trace holds ln P of each
    evaluated parameter set and the returned model is the one scored last.

    Args:
        obs: Symbol sequence
        num_states: Number of hidden states N
        config: EM settings (defaults to FitConfig())
        start: Run EM once from these parameters instead of random restarts

    Returns:
        FitReport for the best restart

    Raises:
        DomainError: sequence shorter than 10 * N * M or invalid symbols
    """
    config = config or FitConfig()
    if num_states < 1:
        raise DomainError(f"num_states must be >= 1, got {num_states}")
    obs = as_observations(obs, config.num_symbols)
    floor_length = 10 * num_states * config.num_symbols
    if obs.size < floor_length:
        raise DomainError(
            f"Sequence of length {obs.size} is shorter than the minimum {floor_length} "
            f"for N={num_states}, M={config.num_symbols}"
        )

    degenerate = num_states > 1 and np.unique(obs).size == 1
    warnings: List[str] = []
    if degenerate:
        message = "all observed symbols are identical; states are not identifiable"
        logger.warning(f"Degenerate fit: {message}")
        warnings.append(message)

    if start is not None and (
        start.num_states != num_states or start.num_symbols != config.num_symbols
    ):
        raise DomainError(
            f"Start model has N={start.num_states}, M={start.num_symbols}; "
            f"expected N={num_states}, M={config.num_symbols}"
        )
    rng = np.random.default_rng(config.seed)
    restarts = 1 if start is not None else config.restarts
    best: Optional[Tuple[HmmModel, List[float], int, bool]] = None
    restart_lls: List[float] = []
    for restart in range(restarts):
        initial = start if start is not None else random_model(num_states, config.num_symbols, rng)
        result = _run_em(initial, obs, config)
        restart_lls.append(result[1][-1])
        logger.debug(
            f"Restart {restart + 1}/{restarts}: ln P = {result[1][-1]:.6f} "
            f"after {result[2]} iterations"
        )
        if best is None or result[1][-1] > best[1][-1]:
            best = result

    model, trace, iterations, converged = best
    if not np.isfinite(trace[-1]):
        raise NumericError("Baum-Welch produced a non-finite log-likelihood")
    logger.info(
        f"Baum-Welch fit N={num_states} T={obs.size}: best ln P = {trace[-1]:.4f} "
        f"({iterations} iterations, converged={converged})"
    )
    return FitReport(
        fitted_model=model,
        log_likelihood_trace=trace,
        iterations=iterations,
        converged=converged,
        restarts_used=restarts,
        degenerate=degenerate,
        restart_log_likelihoods=restart_lls,
        warnings=warnings,
    )


def write_json_atomic(path: Path, payload: Dict[str, Any]) -> None:
    """Write JSON next to the target and rename into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: HmmModel, path: Path) -> None:
    write_json_atomic(path, model.to_dict())


def load_model(path: Path) -> HmmModel:
    with open(path, encoding="utf-8") as handle:
        return HmmModel.from_dict(json.load(handle))
