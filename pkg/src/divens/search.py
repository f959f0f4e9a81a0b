"""Novelty search over architecture genomes with pluggable distance oracles.

The loop itself is oracle-agnostic: surrogate mode answers pairwise
distance queries from the pretrained forest, exact mode trains the current
population first and measures distances on real prediction profiles. Both
modes consume the search RNG identically, so swapping oracles that return
the same values reproduces the same trajectory bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .diversity import METRIC_NAMES, exact_distance
from .genome import Genome, SearchSpaceBounds, mutate, normalize, random_genome
from .learner import TrainConfig, train_models, train_population

_TAG_SEARCH = 4


class EmptyPeersError(ValueError):
    """Novelty score requested with no peers to compare against."""


class InsufficientElitesError(ValueError):
    """Elite archive smaller than the requested ensemble size."""


@dataclass(frozen=True)
class NsConfig:
    iterations: int
    population_size: int
    ensemble_size: int
    metric: str
    k_neighbours: int
    archive_sample_size: int
    tournament_size: int
    mode: str
    seed: int

    def __post_init__(self):
        if self.metric not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.mode not in ("surrogate", "exact"):
            raise ValueError(f"mode must be surrogate or exact, got {self.mode!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 1 <= self.ensemble_size <= self.iterations:
            raise ValueError("need 1 <= ensemble_size <= iterations")
        if self.k_neighbours < 1:
            raise ValueError("k_neighbours must be >= 1")
        if not 1 <= self.archive_sample_size <= self.population_size:
            raise ValueError("archive_sample_size must be in [1, population_size]")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must be in [1, population_size]")


class Individual:
    """A genome plus its cached normalized/architectural vectors.

    ``profile`` is attached by exact mode once the individual has been
    trained; surrogate mode never sets it.
    """

    __slots__ = ("genome", "rep", "arch", "profile")

    def __init__(self, genome: Genome, bounds: SearchSpaceBounds):
        self.genome = genome
        self.rep = normalize(genome, bounds)
        self.arch = self.rep[1:]
        self.profile = None


# -- distance oracles -----------------------------------------------------------
class SurrogateDistanceOracle:
    """Answers distance queries from the pretrained forest, batched."""

    def __init__(self, rf, metric: str):
        self.rf = rf
        self.metric_index = METRIC_NAMES.index(metric)

    def prepare(self, population: list[Individual]) -> None:
        pass

    def pair_distances(self, pairs) -> np.ndarray:
        if not pairs:
            return np.empty(0)
        reps_a = np.stack([a.rep for a, _ in pairs])
        reps_b = np.stack([b.rep for _, b in pairs])
        return self.rf.predict_pairs(reps_a, reps_b)[:, self.metric_index]


class ExactDistanceOracle:
    """Trains not-yet-profiled individuals, then measures true metric values."""

    def __init__(self, data, train_cfg: TrainConfig, metric: str):
        self.data = data
        self.train_cfg = train_cfg
        self.metric_index = METRIC_NAMES.index(metric)

    def prepare(self, population: list[Individual]) -> None:
        fresh = [ind for ind in population if ind.profile is None]
        if fresh:
            profiles = train_population([ind.genome for ind in fresh], self.data, self.train_cfg)
            for ind, profile in zip(fresh, profiles):
                ind.profile = profile

    def pair_distances(self, pairs) -> np.ndarray:
        out = np.empty(len(pairs))
        for n, (a, b) in enumerate(pairs):
            vec = exact_distance(a.profile, b.profile, a.arch, b.arch)
            out[n] = vec.as_array()[self.metric_index]
        return out


class RecordingOracle:
    """Wraps an oracle and logs every answered distance in query order."""

    def __init__(self, inner):
        self.inner = inner
        self.log: list[float] = []

    def prepare(self, population) -> None:
        self.inner.prepare(population)

    def pair_distances(self, pairs) -> np.ndarray:
        values = self.inner.pair_distances(pairs)
        self.log.extend(float(v) for v in values)
        return values


class ReplayOracle:
    """Replays a recorded distance log; a lookup table over query order."""

    def __init__(self, log: list[float]):
        self.queue = deque(log)

    def prepare(self, population) -> None:
        pass

    def pair_distances(self, pairs) -> np.ndarray:
        if len(self.queue) < len(pairs):
            raise RuntimeError("replay log exhausted")
        return np.array([self.queue.popleft() for _ in pairs])


class ScaledOracle:
    """Multiplies another oracle's distances by a positive constant."""

    def __init__(self, inner, factor: float):
        if factor <= 0:
            raise ValueError("factor must be positive")
        self.inner = inner
        self.factor = factor

    def prepare(self, population) -> None:
        self.inner.prepare(population)

    def pair_distances(self, pairs) -> np.ndarray:
        return self.factor * self.inner.pair_distances(pairs)


# -- scores ----------------------------------------------------------------------
def _mean_k_smallest(values: np.ndarray, k: int) -> float:
    take = min(k, len(values))
    if take == len(values):
        return float(values.mean())
    smallest = np.partition(values, take - 1)[:take]
    return float(smallest.mean())


def novelty_score(ind: Individual, peers: list[Individual], dist_fn, k: int) -> float:
    """Mean distance to the k nearest peers (all peers when fewer than k)."""
    if not peers:
        raise EmptyPeersError("novelty score needs at least one peer")
    values = np.array([dist_fn(ind, p) for p in peers])
    return _mean_k_smallest(values, k)


def elite_score(ind: Individual, elite_archive: list[Individual], dist_fn) -> float:
    """Sum of distances to every elite member; 0 for an empty archive."""
    return float(sum(dist_fn(ind, e) for e in elite_archive))


# -- state and loop ---------------------------------------------------------------
@dataclass
class SearchState:
    population: list[Individual]
    archive: list[Individual]
    elite_archive: list[Individual]
    iteration: int
    rng: np.random.Generator
    log: list[dict] = field(default_factory=list)


def init_state(cfg: NsConfig, bounds: SearchSpaceBounds) -> SearchState:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_SEARCH]))
    population = [Individual(random_genome(bounds, rng), bounds) for _ in range(cfg.population_size)]
    return SearchState(population=population, archive=[], elite_archive=[], iteration=0, rng=rng)


def state_digest(state: SearchState) -> str:
    payload = {
        "population": [ind.genome.to_record() for ind in state.population],
        "archive": [ind.genome.to_record() for ind in state.archive],
        "elite_archive": [ind.genome.to_record() for ind in state.elite_archive],
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def step(state: SearchState, cfg: NsConfig, bounds: SearchSpaceBounds, oracle) -> SearchState:
    """One generation: score, archive, elect an elite, select and mutate.

    All oracle work happens before any state mutation or RNG draw, so an
    oracle failure leaves the state untouched.
    """
    pop = state.population
    size = len(pop)

    t0 = time.perf_counter()
    oracle.prepare(pop)
    t_prepare = time.perf_counter() - t0

    # one batched query covering population pairs, archive peers and elites
    pairs = []
    for i in range(size):
        for j in range(i + 1, size):
            pairs.append((pop[i], pop[j]))
    for ind in pop:
        for peer in state.archive:
            pairs.append((ind, peer))
    for ind in pop:
        for member in state.elite_archive:
            pairs.append((ind, member))
    t0 = time.perf_counter()
    values = oracle.pair_distances(pairs)
    t_distances = time.perf_counter() - t0

    pop_pop = np.zeros((size, size))
    cursor = 0
    for i in range(size):
        for j in range(i + 1, size):
            pop_pop[i, j] = pop_pop[j, i] = values[cursor]
            cursor += 1
    n_archive = len(state.archive)
    pop_archive = values[cursor : cursor + size * n_archive].reshape(size, n_archive)
    cursor += size * n_archive
    n_elite = len(state.elite_archive)
    pop_elite = values[cursor : cursor + size * n_elite].reshape(size, n_elite)

    t0 = time.perf_counter()
    novelty = np.empty(size)
    for i in range(size):
        peer_dists = np.concatenate([pop_pop[i, :i], pop_pop[i, i + 1 :], pop_archive[i]])
        novelty[i] = _mean_k_smallest(peer_dists, cfg.k_neighbours)
    elite_scores = pop_elite.sum(axis=1) if n_elite else np.zeros(size)

    sample_idx = state.rng.choice(size, size=cfg.archive_sample_size, replace=False)
    state.archive.extend(pop[i] for i in sample_idx)
    best_elite = int(np.argmax(elite_scores))  # ties resolve to the lowest index
    state.elite_archive.append(pop[best_elite])

    children = []
    for _ in range(size):
        entrants = np.sort(state.rng.choice(size, size=cfg.tournament_size, replace=False))
        winner = int(entrants[np.argmax(novelty[entrants])])
        children.append(Individual(mutate(pop[winner].genome, bounds, state.rng), bounds))
    state.population = children
    state.iteration += 1
    t_evolve = time.perf_counter() - t0

    state.log.append(
        {
            "iteration": state.iteration,
            "mean_novelty": float(novelty.mean()),
            "max_novelty": float(novelty.max()),
            "elite_score": float(elite_scores[best_elite]),
            "state_digest": state_digest(state),
            "wall_clock": {
                "prepare_s": t_prepare,
                "distances_s": t_distances,
                "evolve_s": t_evolve,
            },
        }
    )
    return state


def select_final_ensemble(elite_archive: list[Individual], oracle, ensemble_size: int):
    """Top members by total distance to the other elites (ties keep insertion order)."""
    n = len(elite_archive)
    if n < ensemble_size:
        raise InsufficientElitesError(f"elite archive has {n} members, need {ensemble_size}")
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            pairs.append((elite_archive[i], elite_archive[j]))
    values = oracle.pair_distances(pairs)
    ns_star = np.zeros(n)
    cursor = 0
    for i in range(n):
        for j in range(i + 1, n):
            ns_star[i] += values[cursor]
            ns_star[j] += values[cursor]
            cursor += 1
    order = sorted(range(n), key=lambda i: (-ns_star[i], i))
    chosen = [elite_archive[i] for i in order[:ensemble_size]]
    return chosen, ns_star


@dataclass
class RunResult:
    genomes: list[Genome]
    models: list
    state: SearchState
    report: dict


def run(
    cfg: NsConfig,
    bounds: SearchSpaceBounds,
    data,
    train_cfg: TrainConfig,
    rf=None,
    oracle=None,
) -> RunResult:
    """Full search: iterate, pick the final ensemble, train it.

    ``oracle`` overrides the mode-derived oracle (used for replay and
    scaling experiments); otherwise surrogate mode requires ``rf``.
    """
    if oracle is None:
        if cfg.mode == "surrogate":
            if rf is None:
                raise ValueError("surrogate mode needs a loaded forest")
            oracle = SurrogateDistanceOracle(rf, cfg.metric)
        else:
            oracle = ExactDistanceOracle(data, train_cfg, cfg.metric)

    t_start = time.perf_counter()
    state = init_state(cfg, bounds)
    for _ in range(cfg.iterations):
        step(state, cfg, bounds, oracle)
    t_search = time.perf_counter() - t_start

    chosen, ns_star = select_final_ensemble(state.elite_archive, oracle, cfg.ensemble_size)
    genomes = [ind.genome for ind in chosen]
    t0 = time.perf_counter()
    models = train_models(genomes, data, train_cfg)
    t_final_train = time.perf_counter() - t0

    report = {
        "seed": cfg.seed,
        "mode": cfg.mode,
        "metric": cfg.metric,
        "iterations": state.log,
        "ensemble": {
            "genomes": [g.to_record() for g in genomes],
            "ns_star": [float(v) for v in ns_star],
        },
        "wall_clock": {
            "search_s": t_search,
            "final_train_s": t_final_train,
            "total_s": t_search + t_final_train,
        },
    }
    return RunResult(genomes=genomes, models=models, state=state, report=report)
