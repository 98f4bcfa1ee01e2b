"""Hypothesis classes of optimal action-value functions.

Builds small model families over states (countdown, bit_1, ..., bit_k),
enumerates every transition function in a family, and compares two ways of
narrowing the set of optimal value functions with a dataset of transitions:

- H_B(D): value functions of the family that satisfy the Bellman optimality
  equation on the observed transitions;
- H_M(D): optimal value functions of those models that reproduce the
  observed transitions.

H_M(D) is always a subset of H_B(D). For factored families it can be a
strict subset; for tabular families the two coincide.
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from src.config import ConfigError, iter_key_values
from src.exact_mdp import (
    TERMINAL,
    ExplicitMDP,
    QFunction,
    UnknownStateError,
    bellman_consistent,
    greedy_actions,
    solve_optimal_q,
)

logger = logging.getLogger(__name__)

# Largest family we are willing to enumerate.
MAX_MODELS = 2 ** 24

# Witnesses listed in a report; the full count is always given.
WITNESS_CAP = 10


class HypothesisError(Exception):
    """Base exception for hypothesis-class computations."""
    pass


class EnumerationLimitError(HypothesisError):
    """Raised when a family is too large to enumerate."""

    def __init__(self, count: int, limit: int = MAX_MODELS):
        self.count = count
        self.limit = limit
        super().__init__(f"family has {count} models, refusing to enumerate more than {limit}")


class InconsistentDatasetError(HypothesisError):
    """Raised when no member of a family reproduces a dataset."""
    pass


class TheoremViolationError(HypothesisError):
    """Raised when a computed class relation contradicts the subset theorem."""
    pass


@dataclass(frozen=True)
class FixedAction:
    """An action whose dynamics are known: it sets the bits and pays a fixed reward."""

    action: int
    bits: tuple[int, ...]
    reward: int


@dataclass(frozen=True)
class ModelFamily:
    """
    Shared state space and reward of the model families.

    States are tuples (countdown, bit_1, ..., bit_k). The countdown
    decrements on every step and the episode ends on the step taken at
    countdown 0. Reward is 1 for a step taken at countdown 0 with every bit
    set, 0 otherwise; a fixed action always pays its own reward instead.
    """

    countdown_max: int
    bit_count: int
    action_count: int
    fixed_actions: tuple[FixedAction, ...] = ()

    def __post_init__(self):
        if self.countdown_max < 0 or self.bit_count < 1 or self.action_count < 1:
            raise ValueError(
                "need countdown_max >= 0, bit_count >= 1 and action_count >= 1, got "
                f"{self.countdown_max}, {self.bit_count}, {self.action_count}"
            )
        for fixed in self.fixed_actions:
            if not 0 <= fixed.action < self.action_count:
                raise ValueError(f"fixed action {fixed.action} out of range")
            if len(fixed.bits) != self.bit_count:
                raise ValueError(f"fixed action {fixed.action} must set {self.bit_count} bits")

    @property
    def kind(self) -> str:
        raise NotImplementedError

    @property
    def model_count(self) -> int:
        raise NotImplementedError

    def successor(self, index: int, state: tuple, action: int):
        """Next state of state under action in model number `index`."""
        raise NotImplementedError

    @cached_property
    def fixed_by_action(self) -> dict[int, FixedAction]:
        return {f.action: f for f in self.fixed_actions}

    def states(self) -> tuple:
        """All nonterminal states in canonical order."""
        return self._states

    @cached_property
    def _states(self) -> tuple:
        bit_vectors = list(itertools.product((0, 1), repeat=self.bit_count))
        return tuple(
            (c, *bits) for c in range(self.countdown_max + 1) for bits in bit_vectors
        )

    def reward(self, state: tuple, action: int) -> int:
        fixed = self.fixed_by_action.get(action)
        if fixed is not None:
            return fixed.reward
        return 1 if state[0] == 0 and all(state[1:]) else 0

    def check_enumerable(self) -> None:
        if self.model_count > MAX_MODELS:
            raise EnumerationLimitError(self.model_count)

    def model(self, index: int) -> ExplicitMDP:
        """Materialize model number `index` as an explicit MDP."""
        states = self.states()
        next_state = {}
        reward = {}
        for s in states:
            for a in range(self.action_count):
                next_state[(s, a)] = self.successor(index, s, a)
                reward[(s, a)] = self.reward(s, a)
        return ExplicitMDP(states, self.action_count, next_state, reward)

    def agrees(self, index: int, dataset: "Dataset") -> bool:
        """True if model `index` reproduces every transition of the dataset."""
        return all(self.successor(index, s, a) == s_next for s, a, s_next in dataset)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "countdown_max": self.countdown_max,
            "bit_count": self.bit_count,
            "action_count": self.action_count,
            "fixed_actions": [
                {"action": f.action, "bits": list(f.bits), "reward": f.reward}
                for f in self.fixed_actions
            ],
            "model_count": self.model_count,
        }


@dataclass(frozen=True)
class FactoredFamily(ModelFamily):
    """
    Factored family: each bit evolves from its own value and the action only.

    For every free (non-fixed) action, the next value of bit i is an arbitrary
    function of (bit i, action). A model is one such function per bit, so
    each bit contributes 2^(2 * free actions) choices.
    """

    @property
    def kind(self) -> str:
        return "factored"

    @cached_property
    def free_actions(self) -> tuple[int, ...]:
        fixed = self.fixed_by_action
        return tuple(a for a in range(self.action_count) if a not in fixed)

    @property
    def component_space(self) -> int:
        return 2 ** (2 * len(self.free_actions))

    @property
    def model_count(self) -> int:
        return self.component_space ** self.bit_count

    def component_codes(self, index: int) -> tuple[int, ...]:
        """Split a model index into one dynamics code per bit."""
        codes = []
        for _ in range(self.bit_count):
            index, code = divmod(index, self.component_space)
            codes.append(code)
        return tuple(codes)

    def index_for(self, rules) -> int:
        """
        Model index for per-bit update rules.

        Args:
            rules: One callable per bit, (bit_value, action) -> next bit value,
                consulted for free actions only

        Returns:
            The index of that model in the enumeration order
        """
        index = 0
        for rule in reversed(rules):
            code = 0
            for j, a in enumerate(self.free_actions):
                for bit in (0, 1):
                    code |= (rule(bit, a) & 1) << (2 * j + bit)
            index = index * self.component_space + code
        return index

    def successor(self, index: int, state: tuple, action: int):
        if state[0] == 0:
            return TERMINAL
        fixed = self.fixed_by_action.get(action)
        if fixed is not None:
            return (state[0] - 1, *fixed.bits)
        j = self.free_actions.index(action)
        bits = tuple(
            (code >> (2 * j + bit)) & 1
            for code, bit in zip(self.component_codes(index), state[1:])
        )
        return (state[0] - 1, *bits)


@dataclass(frozen=True)
class TabularFamily(ModelFamily):
    """
    Tabular family restricted to keep the countdown.

    Every nonterminal (state, action) with a positive countdown may move to
    any bit vector with the countdown decremented, independently of every
    other pair. Steps at countdown 0 terminate, so all members are episodic.
    """

    @property
    def kind(self) -> str:
        return "tabular"

    @cached_property
    def choice_pairs(self) -> tuple:
        """State-action pairs whose successor is free to choose."""
        return tuple(
            (s, a) for s in self.states() if s[0] > 0 for a in range(self.action_count)
        )

    @cached_property
    def successor_bits(self) -> tuple:
        return tuple(itertools.product((0, 1), repeat=self.bit_count))

    @cached_property
    def _pair_slot(self) -> dict:
        return {pair: i for i, pair in enumerate(self.choice_pairs)}

    @property
    def model_count(self) -> int:
        return len(self.successor_bits) ** len(self.choice_pairs)

    def successor(self, index: int, state: tuple, action: int):
        if state[0] == 0:
            return TERMINAL
        radix = len(self.successor_bits)
        digit = (index // radix ** self._pair_slot[(state, action)]) % radix
        return (state[0] - 1, *self.successor_bits[digit])


@dataclass(frozen=True)
class Dataset:
    """Observed deterministic transitions (state, action, next_state)."""

    transitions: tuple = ()

    def __iter__(self) -> Iterator[tuple]:
        return iter(self.transitions)

    def __len__(self) -> int:
        return len(self.transitions)

    def extended(self, more: Iterable[tuple]) -> "Dataset":
        return Dataset(self.transitions + tuple(more))

    def check_states(self, family: ModelFamily) -> None:
        """
        Reject transitions that mention states outside the family.

        Raises:
            UnknownStateError: If a state id is unknown
        """
        known = set(family.states())
        for s, a, s_next in self.transitions:
            for state in (s, s_next):
                if state != TERMINAL and state not in known:
                    raise UnknownStateError(f"dataset references unknown state {state!r}")
            if s == TERMINAL:
                raise UnknownStateError("dataset contains a transition out of the terminal state")
            if not 0 <= a < family.action_count:
                raise UnknownStateError(f"dataset references unknown action {a}")

    def validate(self, family: ModelFamily) -> None:
        """
        Check the dataset against a family.

        Raises:
            UnknownStateError: If a state id is unknown
            InconsistentDatasetError: If no member of the family reproduces it
        """
        self.check_states(family)
        family.check_enumerable()
        if not any(family.agrees(i, self) for i in range(family.model_count)):
            raise InconsistentDatasetError("no member of the family is consistent with the dataset")


@dataclass
class HypothesisReport:
    """Sizes of the three classes and the subset relation between H_M and H_B."""

    family: dict
    dataset_size: int
    family_size: int
    hq_size: int
    hb_size: int
    hm_size: int
    subset_holds: bool
    strict: bool
    equality_required: bool
    witness_count: int
    witnesses: list = field(default_factory=list)
    model_consistent: list = field(default_factory=list)
    suboptimal_witness_count: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "dataset_size": self.dataset_size,
            "family_size": self.family_size,
            "H_Q": self.hq_size,
            "H_B": self.hb_size,
            "H_M": self.hm_size,
            "subset_holds": self.subset_holds,
            "strict": self.strict,
            "equality_required": self.equality_required,
            "witness_count": self.witness_count,
            "witnesses": [q.to_dict() for q in self.witnesses],
            "H_M_members": [q.to_dict() for q in self.model_consistent],
            "suboptimal_witness_count": self.suboptimal_witness_count,
        }


def enumerate_models(family: ModelFamily) -> Iterator[ExplicitMDP]:
    """
    Yield every transition function of the family exactly once.

    Raises:
        EnumerationLimitError: If the family has more than MAX_MODELS members
    """
    family.check_enumerable()
    for index in range(family.model_count):
        yield family.model(index)


def _classify_range(family: ModelFamily, start: int, stop: int, dataset: Optional[Dataset]):
    """Solve models [start, stop) and split their value functions into H_Q and H_M."""
    hq, hm = set(), set()
    for index in range(start, stop):
        q = solve_optimal_q(family.model(index))
        hq.add(q)
        if dataset is not None and family.agrees(index, dataset):
            hm.add(q)
    return hq, hm


def _classify(family: ModelFamily, dataset: Optional[Dataset], workers: int = 1):
    family.check_enumerable()
    total = family.model_count
    if workers <= 1 or total < 1024:
        return _classify_range(family, 0, total, dataset)

    chunk = -(-total // (workers * 4))
    bounds = [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]
    hq, hm = set(), set()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_classify_range, family, lo, hi, dataset) for lo, hi in bounds]
        # single writer: merge in submission order
        for future in futures:
            part_q, part_m = future.result()
            hq |= part_q
            hm |= part_m
    return hq, hm


def compute_HQ(family: ModelFamily, workers: int = 1) -> set[QFunction]:
    """Deduplicated optimal value functions of every model in the family."""
    hq, _ = _classify(family, None, workers)
    logger.info("H_Q has %d members over %d models", len(hq), family.model_count)
    return hq


def compute_HB(family: ModelFamily, dataset: Dataset, workers: int = 1) -> set[QFunction]:
    """
    Members of H_Q that satisfy the Bellman equation on every transition of D.

    Raises:
        UnknownStateError: If D references states outside the family
    """
    dataset.check_states(family)
    hq = compute_HQ(family, workers)
    return {q for q in hq if bellman_consistent(q, family.reward, dataset)}


def compute_HM(family: ModelFamily, dataset: Dataset, workers: int = 1) -> set[QFunction]:
    """
    Optimal value functions of the models that reproduce every transition of D.

    An empty result means D lies outside the family; it is logged as a warning.
    """
    dataset.check_states(family)
    _, hm = _classify(family, dataset, workers)
    if not hm:
        logger.warning("No model in the %s family is consistent with the dataset", family.kind)
    return hm


def _witness_order(q: QFunction):
    return q.total(), q.canonical_key()


def _policy_is_suboptimal(q: QFunction, true_model: ExplicitMDP, q_star: QFunction) -> bool:
    """True if q has a unique greedy action everywhere and that policy loses value somewhere."""
    policy = {}
    for s in true_model.states:
        best = greedy_actions(q, s)
        if len(best) != 1:
            return False
        policy[s] = next(iter(best))
    value = {true_model.terminal: 0}
    for s in true_model.topological_order:
        nxt, r = true_model.step(s, policy[s])
        value[s] = r + value[nxt]
    return any(value[s] < q_star.max_value(s) for s in true_model.states)


def verify_theorem(family: ModelFamily, dataset: Dataset, workers: int = 1) -> HypothesisReport:
    """
    Compute H_Q, H_B(D) and H_M(D) and check their relation.

    Asserts H_M(D) is a subset of H_B(D), reports whether the inclusion is
    strict and lists witnesses from H_B(D) minus H_M(D), ordered by total
    value so the most pessimistic ones come first. For a tabular family the
    two classes must coincide.

    Args:
        family: Family to enumerate
        dataset: Observed transitions
        workers: Process count for enumeration

    Returns:
        HypothesisReport

    Raises:
        UnknownStateError: If the dataset mentions unknown states
        InconsistentDatasetError: If no member of the family reproduces the dataset
        TheoremViolationError: If a class relation fails
    """
    dataset.validate(family)
    hq, hm = _classify(family, dataset, workers)
    hb = {q for q in hq if bellman_consistent(q, family.reward, dataset)}

    subset_holds = hm <= hb
    if not subset_holds:
        raise TheoremViolationError(
            f"{len(hm - hb)} model-consistent value functions fail the Bellman check"
        )
    equality_required = isinstance(family, TabularFamily)
    if equality_required and hm != hb:
        raise TheoremViolationError(
            f"tabular family gives |H_M|={len(hm)} but |H_B|={len(hb)}"
        )

    extra = sorted(hb - hm, key=_witness_order)

    suboptimal = None
    if len(hm) == 1:
        q_star = next(iter(hm))
        true_index = next(i for i in range(family.model_count) if family.agrees(i, dataset))
        true_model = family.model(true_index)
        suboptimal = sum(_policy_is_suboptimal(q, true_model, q_star) for q in extra)

    report = HypothesisReport(
        family=family.describe(),
        dataset_size=len(dataset),
        family_size=family.model_count,
        hq_size=len(hq),
        hb_size=len(hb),
        hm_size=len(hm),
        subset_holds=subset_holds,
        strict=hm < hb,
        equality_required=equality_required,
        witness_count=len(extra),
        witnesses=extra[:WITNESS_CAP],
        model_consistent=sorted(hm, key=_witness_order)[:WITNESS_CAP],
        suboptimal_witness_count=suboptimal,
    )
    logger.info(
        "%s family: |H_Q|=%d |H_B|=%d |H_M|=%d strict=%s",
        family.kind, report.hq_size, report.hb_size, report.hm_size, report.strict,
    )
    return report


def build_counterexample() -> tuple[FactoredFamily, Dataset]:
    """Two toggled bits, a countdown from 2, three actions and six transitions."""
    family = FactoredFamily(countdown_max=2, bit_count=2, action_count=3)
    dataset = Dataset((
        ((2, 0, 0), 0, (1, 1, 0)),
        ((2, 1, 1), 0, (1, 0, 1)),
        ((2, 0, 0), 1, (1, 0, 1)),
        ((2, 1, 1), 1, (1, 1, 0)),
        ((2, 0, 0), 2, (1, 0, 0)),
        ((2, 1, 1), 2, (1, 1, 1)),
    ))
    return family, dataset


def build_extended_example() -> tuple[FactoredFamily, Dataset]:
    """
    Counterexample with a fourth action whose effect is known.

    Action 3 sets both bits to 1 and always pays -1. The dataset gains one
    episode that reaches the rewarding transition using it.
    """
    family = FactoredFamily(
        countdown_max=2,
        bit_count=2,
        action_count=4,
        fixed_actions=(FixedAction(action=3, bits=(1, 1), reward=-1),),
    )
    _, base = build_counterexample()
    dataset = base.extended((
        ((2, 0, 0), 2, (1, 0, 0)),
        ((1, 0, 0), 3, (0, 1, 1)),
        ((0, 1, 1), 2, TERMINAL),
    ))
    return family, dataset


def build_tabular_family(countdown_max: int = 1, bit_count: int = 1, action_count: int = 2) -> TabularFamily:
    """
    Tabular family that keeps the countdown.

    Raises:
        EnumerationLimitError: If the family is too large to enumerate
    """
    family = TabularFamily(countdown_max=countdown_max, bit_count=bit_count, action_count=action_count)
    family.check_enumerable()
    return family


def toggle_model_index(family: FactoredFamily) -> int:
    """Index of the model where free action i toggles bit i and leaves the others alone."""
    rules = [
        (lambda bit, a, i=i: 1 - bit if a == i else bit)
        for i in range(family.bit_count)
    ]
    return family.index_for(rules)


def reset_model_index(family: FactoredFamily) -> int:
    """Index of the model where free actions clear every bit."""
    return family.index_for([lambda bit, a: 0] * family.bit_count)


def bad_action_value(family: ModelFamily) -> QFunction:
    """The value function that only credits the final rewarding step."""
    return QFunction.from_function(
        family.states(),
        family.action_count,
        lambda s, a: 1 if s[0] == 0 and all(s[1:]) else 0,
    )


def extended_bad_action_value(family: ModelFamily) -> QFunction:
    """Pessimistic value function for the family with a known, costly action."""
    fixed = family.fixed_by_action

    def q(s, a):
        if a in fixed:
            return fixed[a].reward if s[0] != 1 else 0
        return 1 if s[0] == 0 and all(s[1:]) else 0

    return QFunction.from_function(family.states(), family.action_count, q)


def sample_dataset(family: ModelFamily, model_index: int, size: int, rng: np.random.Generator) -> Dataset:
    """Draw `size` distinct state-action pairs and label them with model `model_index`."""
    pairs = [(s, a) for s in family.states() for a in range(family.action_count)]
    size = min(size, len(pairs))
    chosen = rng.choice(len(pairs), size=size, replace=False) if size else []
    return Dataset(tuple(
        (pairs[i][0], pairs[i][1], family.successor(model_index, *pairs[i])) for i in chosen
    ))


def random_factored_family(rng: np.random.Generator) -> FactoredFamily:
    """Small random factored family for fuzzing."""
    return FactoredFamily(
        countdown_max=int(rng.integers(0, 3)),
        bit_count=int(rng.integers(1, 3)),
        action_count=int(rng.integers(1, 3)),
    )


def fuzz_subset(trials: int, rng: np.random.Generator) -> int:
    """
    Check H_M(D) ⊆ H_B(D) on random small families and datasets.

    Each dataset is drawn from a random member so that it is always
    consistent with the family.

    Returns:
        Number of cases checked

    Raises:
        TheoremViolationError: On the first failing case
    """
    for trial in range(trials):
        family = random_factored_family(rng)
        member = int(rng.integers(family.model_count))
        pair_count = len(family.states()) * family.action_count
        dataset = sample_dataset(family, member, int(rng.integers(0, pair_count + 1)), rng)
        verify_theorem(family, dataset)
        logger.debug("fuzz case %d: %s with %d transitions", trial, family.describe(), len(dataset))
    return trials


def _parse_state(text: str):
    text = text.strip()
    if text in (TERMINAL, "T", "terminal"):
        return TERMINAL
    return tuple(int(v) for v in text.split(","))


def load_family_file(path: Union[str, Path]) -> tuple[ModelFamily, Dataset]:
    """
    Read a family and dataset from a flat `key = value` file.

    Recognised keys: `family` (factored or tabular), `countdown_max`,
    `bit_count`, `action_count`, repeated `fixed_action = action:b1,b2:reward`
    and repeated `transition = c,b1,b2 action c,b1,b2` (use T for terminal).

    Raises:
        ConfigError: For unknown keys or malformed values
        UnknownStateError: If a transition mentions states outside the family
        InconsistentDatasetError: If no member of the family reproduces the transitions
    """
    params = {"family": "factored", "countdown_max": "2", "bit_count": "2", "action_count": "3"}
    fixed = []
    transitions = []
    for key, value in iter_key_values(Path(path).read_text()):
        try:
            if key == "transition":
                s, a, s_next = value.split()
                transitions.append((_parse_state(s), int(a), _parse_state(s_next)))
            elif key == "fixed_action":
                action, bits, reward = value.split(":")
                fixed.append(FixedAction(int(action), tuple(int(b) for b in bits.split(",")), int(reward)))
            elif key in params:
                params[key] = value
            else:
                raise ConfigError(f"unknown key {key!r} in family file {path}")
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r} in {path}: {value!r} ({e})")

    kinds = {"factored": FactoredFamily, "tabular": TabularFamily}
    if params["family"] not in kinds:
        raise ConfigError(f"family must be one of {sorted(kinds)}, got {params['family']!r}")
    family = kinds[params["family"]](
        countdown_max=int(params["countdown_max"]),
        bit_count=int(params["bit_count"]),
        action_count=int(params["action_count"]),
        fixed_actions=tuple(fixed),
    )
    dataset = Dataset(tuple(transitions))
    dataset.validate(family)
    return family, dataset


def _value_check(report: HypothesisReport, family: ModelFamily, dataset: Dataset,
                 q_hat: QFunction, workers: int) -> dict:
    data = report.to_dict()
    data["q_hat"] = q_hat.to_dict()
    data["q_hat_in_H_B"] = bellman_consistent(q_hat, family.reward, dataset)
    data["q_hat_in_H_M"] = q_hat in compute_HM(family, dataset, workers)
    data["q_hat_first_witness"] = bool(report.witnesses) and report.witnesses[0] == q_hat
    return data


def counterexample_report(workers: int = 1) -> dict:
    """Class report for the six-transition counterexample, with q_hat checked."""
    family, dataset = build_counterexample()
    report = verify_theorem(family, dataset, workers)
    return _value_check(report, family, dataset, bad_action_value(family), workers)


def extended_report(workers: int = 1) -> dict:
    """Class report for the variant with the known costly action."""
    family, dataset = build_extended_example()
    report = verify_theorem(family, dataset, workers)
    return _value_check(report, family, dataset, extended_bad_action_value(family), workers)


def tabular_report(datasets: int, rng: np.random.Generator, workers: int = 1) -> dict:
    """
    Check H_M(D) = H_B(D) for the tabular family on random consistent datasets.

    Raises:
        TheoremViolationError: If any dataset separates the two classes
    """
    family = build_tabular_family()
    pair_count = len(family.states()) * family.action_count
    sizes = []
    for _ in range(datasets):
        member = int(rng.integers(family.model_count))
        dataset = sample_dataset(family, member, int(rng.integers(0, pair_count + 1)), rng)
        report = verify_theorem(family, dataset, workers)
        sizes.append({"dataset_size": report.dataset_size, "H_B": report.hb_size, "H_M": report.hm_size})
    return {"family": family.describe(), "datasets": datasets, "all_equal": True, "classes": sizes}
