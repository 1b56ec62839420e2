"""Deterministic grid combat simulator for team micromanagement episodes.

Two teams of units fight on a bounded integer grid. Allied units are driven
by an external policy, enemy units by a built-in script. Every source of
dynamics is deterministic: simultaneous intents are resolved in ascending
unit id order, so identical (scenario, seed, action sequence) always yields
an identical episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

import numpy as np
import yaml

from .errors import ContractError, ScenarioError, StateError

ALLY = "ally"
ENEMY = "enemy"

# Shared team reward: each step contributes (damage * KILL_WEIGHT * kills),
# a win adds WIN_BONUS, and the episode total is scaled into [0, REWARD_CEILING].
KILL_WEIGHT = 10.0
WIN_BONUS = 200.0
REWARD_CEILING = 20.0


class Action(IntEnum):
    MOVE_NORTH = 0
    MOVE_SOUTH = 1
    MOVE_EAST = 2
    MOVE_WEST = 3
    ATTACK_CLOSEST = 4
    STOP = 5


N_ACTIONS = len(Action)

_MOVE_DELTAS = {
    Action.MOVE_NORTH: (0, 1),
    Action.MOVE_SOUTH: (0, -1),
    Action.MOVE_EAST: (1, 0),
    Action.MOVE_WEST: (-1, 0),
}


@dataclass(frozen=True)
class UnitTypeSpec:
    """Immutable stat block shared by every unit of one type."""

    type_id: int
    name: str
    max_hitpoints: float
    max_shield: float
    damage: float
    attack_range: float
    cooldown_steps: int
    move_speed: int = 1


@dataclass
class UnitState:
    """One unit's live attributes during an episode."""

    unit_id: int
    team: str
    spec: UnitTypeSpec
    x: int
    y: int
    hitpoints: float
    shield: float
    cooldown_remaining: int = 0
    last_action: Action = Action.STOP

    @property
    def alive(self) -> bool:
        return self.hitpoints > 0

    @property
    def position(self) -> tuple[int, int]:
        return (self.x, self.y)

    @property
    def health_fraction(self) -> float:
        return self.hitpoints / self.spec.max_hitpoints

    @property
    def shield_fraction(self) -> float:
        if self.spec.max_shield <= 0:
            return 0.0
        return self.shield / self.spec.max_shield

    @property
    def cooldown_fraction(self) -> float:
        if self.spec.cooldown_steps <= 0:
            return 0.0
        return self.cooldown_remaining / self.spec.cooldown_steps


@dataclass(frozen=True)
class SpawnGroup:
    """A (unit type, count) block placed inside a rectangular map region."""

    type_id: int
    count: int
    region: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive


@dataclass(frozen=True)
class Scenario:
    """Validated, immutable description of a map and both team compositions.

    ``spawn_points`` is resolved at load time so spawn placement is a fixed
    property of the scenario, not of the episode seed.
    """

    name: str
    map_width: int
    map_height: int
    unit_types: tuple[UnitTypeSpec, ...]
    ally_groups: tuple[SpawnGroup, ...]
    enemy_groups: tuple[SpawnGroup, ...]
    sight_range: float
    max_steps: int
    spawn_points: tuple[tuple[str, int, int, int], ...]  # (team, type_id, x, y)
    r_max: float

    def type_by_id(self, type_id: int) -> UnitTypeSpec:
        for spec in self.unit_types:
            if spec.type_id == type_id:
                return spec
        raise ScenarioError(f"unknown unit type_id {type_id}")

    @property
    def ally_count(self) -> int:
        return sum(g.count for g in self.ally_groups)

    @property
    def enemy_count(self) -> int:
        return sum(g.count for g in self.enemy_groups)


@dataclass(frozen=True)
class VisibleUnit:
    """One unit as seen from an observer, with observer-relative features."""

    unit_id: int
    distance: float
    dx: float
    dy: float
    health_fraction: float
    shield_fraction: float
    type_id: int


@dataclass(frozen=True)
class LocalObservation:
    """Everything one allied agent can see within its sight range."""

    observer_id: int
    observer_x: int
    observer_y: int
    sight_range: float
    visible_allies: tuple[VisibleUnit, ...]
    visible_enemies: tuple[VisibleUnit, ...]
    health_fraction: float
    shield_fraction: float
    cooldown_fraction: float
    last_action: Action


@dataclass(frozen=True)
class DamageEvent:
    """Damage inflicted on an enemy unit during one step."""

    attacker_id: int
    target_id: int
    damage_dealt: float
    kill: bool


@dataclass(frozen=True)
class StepOutcome:
    """Result of advancing the episode by one step."""

    observations: tuple[LocalObservation, ...]
    damage_events: tuple[DamageEvent, ...]
    terminal: bool
    win: bool
    step_reward: float


class Episode:
    """Mutable state of one running episode.

    Single-threaded by design; distinct episodes share nothing except the
    immutable Scenario.
    """

    def __init__(self, scenario: Scenario, rng_seed: int):
        self.scenario = scenario
        self.rng_seed = int(rng_seed)
        # Engine dynamics never consume this stream; it is the per-episode
        # randomness source reserved for callers (e.g. action sampling).
        self.rng = np.random.default_rng(self.rng_seed)
        self.step_count = 0
        self.terminal = False
        self.win = False
        self.damage_log: list[tuple[DamageEvent, ...]] = []
        self.units: list[UnitState] = []
        self._by_id: dict[int, UnitState] = {}
        self._occupied: dict[tuple[int, int], int] = {}
        for unit_id, (team, type_id, x, y) in enumerate(scenario.spawn_points):
            spec = scenario.type_by_id(type_id)
            unit = UnitState(
                unit_id=unit_id,
                team=team,
                spec=spec,
                x=x,
                y=y,
                hitpoints=spec.max_hitpoints,
                shield=spec.max_shield,
            )
            self.units.append(unit)
            self._by_id[unit_id] = unit
            self._occupied[(x, y)] = unit_id

    def unit(self, unit_id: int) -> UnitState:
        try:
            return self._by_id[unit_id]
        except KeyError:
            raise ContractError(f"unknown unit_id {unit_id}") from None

    def living(self, team: str) -> list[UnitState]:
        return [u for u in self.units if u.team == team and u.alive]

    def is_free(self, x: int, y: int) -> bool:
        s = self.scenario
        return 0 <= x < s.map_width and 0 <= y < s.map_height and (x, y) not in self._occupied

    def _move_unit(self, unit: UnitState, x: int, y: int) -> None:
        del self._occupied[(unit.x, unit.y)]
        unit.x, unit.y = x, y
        self._occupied[(x, y)] = unit.unit_id

    def _remove_from_play(self, unit: UnitState) -> None:
        self._occupied.pop((unit.x, unit.y), None)


def _distance(a: UnitState, b: UnitState) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


# ---------------------------------------------------------------------------
# Scenario loading
# ---------------------------------------------------------------------------

_BUILTIN_DIR = Path(__file__).parent / "scenarios"
BUILTIN_SCENARIOS = ("3m", "8m", "25m", "2s3z")


def _require(mapping: dict, key: str, kind, context: str):
    if key not in mapping:
        raise ScenarioError(f"{context}: missing key '{key}'")
    value = mapping[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ScenarioError(f"{context}: key '{key}' must be a number")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ScenarioError(f"{context}: key '{key}' must be an integer")
        return value
    if not isinstance(value, kind):
        raise ScenarioError(f"{context}: key '{key}' has wrong type")
    return value


def _parse_unit_type(entry, index: int) -> UnitTypeSpec:
    ctx = f"unit_types[{index}]"
    if not isinstance(entry, dict):
        raise ScenarioError(f"{ctx}: must be a mapping")
    spec = UnitTypeSpec(
        type_id=_require(entry, "type_id", int, ctx),
        name=_require(entry, "name", str, ctx),
        max_hitpoints=_require(entry, "max_hitpoints", float, ctx),
        max_shield=_require(entry, "max_shield", float, ctx),
        damage=_require(entry, "damage", float, ctx),
        attack_range=_require(entry, "attack_range", float, ctx),
        cooldown_steps=_require(entry, "cooldown_steps", int, ctx),
        move_speed=entry.get("move_speed", 1),
    )
    if spec.max_hitpoints <= 0:
        raise ScenarioError(f"{ctx}: key 'max_hitpoints' must be > 0")
    if spec.max_shield < 0:
        raise ScenarioError(f"{ctx}: key 'max_shield' must be >= 0")
    if spec.damage <= 0:
        raise ScenarioError(f"{ctx}: key 'damage' must be > 0")
    if spec.attack_range <= 0:
        raise ScenarioError(f"{ctx}: key 'attack_range' must be > 0")
    if spec.cooldown_steps < 0:
        raise ScenarioError(f"{ctx}: key 'cooldown_steps' must be >= 0")
    if not isinstance(spec.move_speed, int) or spec.move_speed < 1:
        raise ScenarioError(f"{ctx}: key 'move_speed' must be an integer >= 1")
    return spec


def _parse_group(entry, index: int, side: str, types: dict[int, UnitTypeSpec],
                 width: int, height: int) -> SpawnGroup:
    ctx = f"{side}[{index}]"
    if not isinstance(entry, dict):
        raise ScenarioError(f"{ctx}: must be a mapping")
    type_id = _require(entry, "type_id", int, ctx)
    if type_id not in types:
        raise ScenarioError(f"{ctx}: key 'type_id' references unknown unit type {type_id}")
    count = _require(entry, "count", int, ctx)
    if count < 1:
        raise ScenarioError(f"{ctx}: key 'count' must be >= 1")
    region = _require(entry, "region", list, ctx)
    if len(region) != 4 or not all(isinstance(v, int) for v in region):
        raise ScenarioError(f"{ctx}: key 'region' must be [x0, y0, x1, y1]")
    x0, y0, x1, y1 = region
    if x0 > x1 or y0 > y1:
        raise ScenarioError(f"{ctx}: key 'region' has inverted corners")
    if x0 < 0 or y0 < 0 or x1 >= width or y1 >= height:
        raise ScenarioError(f"{ctx}: key 'region' extends outside the map")
    return SpawnGroup(type_id=type_id, count=count, region=(x0, y0, x1, y1))


def _place_groups(groups: tuple[SpawnGroup, ...], team: str, side: str,
                  taken: set[tuple[int, int]]) -> list[tuple[str, int, int, int]]:
    # Deterministic placement: walk each group's region row by row and take
    # the first free cells. Spawn layout is therefore a scenario property.
    points = []
    for index, group in enumerate(groups):
        x0, y0, x1, y1 = group.region
        cells = [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)
                 if (x, y) not in taken]
        if len(cells) < group.count:
            raise ScenarioError(
                f"{side}[{index}]: key 'region' has only {len(cells)} free cells "
                f"for count {group.count}")
        for x, y in cells[:group.count]:
            taken.add((x, y))
            points.append((team, group.type_id, x, y))
    return points


def load_scenario(descriptor: str) -> Scenario:
    """Parse and validate a YAML scenario descriptor given as text.

    Raises ScenarioError naming the offending key on any schema violation.
    """
    try:
        raw = yaml.safe_load(descriptor)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"could not parse scenario descriptor: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario descriptor must be a key-value mapping")

    name = _require(raw, "name", str, "scenario")
    width = _require(raw, "map_width", int, "scenario")
    height = _require(raw, "map_height", int, "scenario")
    if width < 2 or height < 2:
        raise ScenarioError("scenario: keys 'map_width'/'map_height' must be >= 2")
    sight = _require(raw, "sight_range", float, "scenario")
    if sight <= 0:
        raise ScenarioError("scenario: key 'sight_range' must be > 0")
    max_steps = _require(raw, "max_steps", int, "scenario")
    if max_steps < 1:
        raise ScenarioError("scenario: key 'max_steps' must be >= 1")

    type_entries = _require(raw, "unit_types", list, "scenario")
    if not type_entries:
        raise ScenarioError("scenario: key 'unit_types' must not be empty")
    unit_types = tuple(_parse_unit_type(e, i) for i, e in enumerate(type_entries))
    types = {}
    for spec in unit_types:
        if spec.type_id in types:
            raise ScenarioError(f"unit_types: duplicate type_id {spec.type_id}")
        if spec.attack_range > sight:
            raise ScenarioError(
                f"unit_types[{spec.type_id}]: key 'attack_range' exceeds sight_range")
        types[spec.type_id] = spec

    ally_entries = _require(raw, "allies", list, "scenario")
    enemy_entries = _require(raw, "enemies", list, "scenario")
    if not ally_entries:
        raise ScenarioError("scenario: key 'allies' must not be empty")
    if not enemy_entries:
        raise ScenarioError("scenario: key 'enemies' must not be empty")
    ally_groups = tuple(_parse_group(e, i, "allies", types, width, height)
                        for i, e in enumerate(ally_entries))
    enemy_groups = tuple(_parse_group(e, i, "enemies", types, width, height)
                         for i, e in enumerate(enemy_entries))

    taken: set[tuple[int, int]] = set()
    points = _place_groups(ally_groups, ALLY, "allies", taken)
    points += _place_groups(enemy_groups, ENEMY, "enemies", taken)

    scenario = Scenario(
        name=name,
        map_width=width,
        map_height=height,
        unit_types=unit_types,
        ally_groups=ally_groups,
        enemy_groups=enemy_groups,
        sight_range=sight,
        max_steps=max_steps,
        spawn_points=tuple(points),
        r_max=0.0,
    )
    return replace(scenario, r_max=compute_r_max(scenario))


def load_scenario_file(path: str | Path) -> Scenario:
    """Load a scenario from a descriptor file path."""
    p = Path(path)
    if not p.is_file():
        raise ScenarioError(f"scenario descriptor not found: {p}")
    return load_scenario(p.read_text(encoding="utf-8"))


def builtin_scenario(name: str) -> Scenario:
    """Load one of the packaged scenario analogues by name."""
    if name not in BUILTIN_SCENARIOS:
        raise ScenarioError(
            f"unknown builtin scenario '{name}' (have: {', '.join(BUILTIN_SCENARIOS)})")
    return load_scenario_file(_BUILTIN_DIR / f"{name}.yaml")


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------

def compute_r_max(scenario: Scenario) -> float:
    """Best-case reward numerator used to scale episode rewards.

    Assumes the entire enemy hitpoint+shield pool is dealt in a single step
    in which every enemy dies at once, plus the win bonus.
    """
    pool = 0.0
    n_enemies = 0
    for group in scenario.enemy_groups:
        spec = scenario.type_by_id(group.type_id)
        pool += group.count * (spec.max_hitpoints + spec.max_shield)
        n_enemies += group.count
    return pool * KILL_WEIGHT * n_enemies + WIN_BONUS


def compute_episode_reward(damage_steps, win: bool, r_max: float) -> float:
    """Scaled shared team reward for a full episode.

    ``damage_steps`` is a sequence of per-step DamageEvent sequences. Each
    step contributes (total damage * KILL_WEIGHT * max(kills, 1)); a win adds
    WIN_BONUS. The total is scaled by REWARD_CEILING / r_max and clamped to
    [0, REWARD_CEILING].
    """
    if r_max <= 0:
        raise ContractError(f"r_max must be > 0, got {r_max}")
    numerator = 0.0
    for events in damage_steps:
        damage = 0.0
        kills = 0
        for event in events:
            if event.damage_dealt < 0:
                raise ContractError("damage values must be non-negative")
            damage += event.damage_dealt
            kills += int(event.kill)
        numerator += damage * KILL_WEIGHT * max(kills, 1)
    if win:
        numerator += WIN_BONUS
    return min(max(REWARD_CEILING * numerator / r_max, 0.0), REWARD_CEILING)


# ---------------------------------------------------------------------------
# Episode dynamics
# ---------------------------------------------------------------------------

def reset(scenario: Scenario, rng_seed: int) -> tuple[Episode, tuple[LocalObservation, ...]]:
    """Start a fresh episode: all units at full health on their spawn cells."""
    episode = Episode(scenario, rng_seed)
    return episode, _team_observations(episode)


def resolve_attack_closest(episode: Episode, agent_id: int) -> int | None:
    """Unit id of the closest living opponent within sight, or None.

    Ties are broken by the lowest unit id, making target choice a total
    deterministic function of the episode state.
    """
    agent = episode.unit(agent_id)
    if not agent.alive:
        raise ContractError(f"unit {agent_id} is dead")
    opposing = ENEMY if agent.team == ALLY else ALLY
    best: tuple[float, int] | None = None
    for unit in episode.living(opposing):
        d = _distance(agent, unit)
        if d <= episode.scenario.sight_range:
            key = (d, unit.unit_id)
            if best is None or key < best:
                best = key
    return None if best is None else best[1]


def scripted_opponent(episode: Episode) -> list[Action]:
    """Deterministic enemy policy: attack the closest visible ally when ready,
    otherwise advance one cell along the axis of largest coordinate gap.

    Returns one action per living enemy, in ascending unit id order.
    """
    actions = []
    for enemy in episode.living(ENEMY):
        target_id = resolve_attack_closest(episode, enemy.unit_id)
        if target_id is None:
            actions.append(Action.STOP)
            continue
        target = episode.unit(target_id)
        if (_distance(enemy, target) <= enemy.spec.attack_range
                and enemy.cooldown_remaining == 0):
            actions.append(Action.ATTACK_CLOSEST)
        else:
            actions.append(_approach_action(enemy, target))
    return actions


def _approach_action(unit: UnitState, target: UnitState) -> Action:
    # Largest coordinate gap wins; ties prefer the x axis.
    gap_x = target.x - unit.x
    gap_y = target.y - unit.y
    if abs(gap_x) >= abs(gap_y) and gap_x != 0:
        return Action.MOVE_EAST if gap_x > 0 else Action.MOVE_WEST
    if gap_y != 0:
        return Action.MOVE_NORTH if gap_y > 0 else Action.MOVE_SOUTH
    return Action.STOP


def step(episode: Episode, ally_actions) -> StepOutcome:
    """Advance the episode one step.

    ``ally_actions`` carries one action per living ally, in ascending unit
    id order. Enemy actions come from the built-in script. All intents are
    resolved unit by unit in ascending unit id; a unit killed earlier in the
    order forfeits its turn.
    """
    if episode.terminal:
        raise StateError("episode is already terminal")
    allies = episode.living(ALLY)
    if len(ally_actions) != len(allies):
        raise ContractError(
            f"expected {len(allies)} ally actions, got {len(ally_actions)}")
    intents: dict[int, Action] = {}
    for unit, action in zip(allies, ally_actions):
        intents[unit.unit_id] = _coerce_action(action)
    for unit, action in zip(episode.living(ENEMY), scripted_opponent(episode)):
        intents[unit.unit_id] = action

    events: list[DamageEvent] = []
    for unit in episode.units:
        action = intents.get(unit.unit_id)
        if action is None or not unit.alive:
            continue
        unit.last_action = action
        if action in _MOVE_DELTAS:
            _apply_move(episode, unit, action)
        elif action == Action.ATTACK_CLOSEST:
            _apply_attack(episode, unit, events)

    for unit in episode.units:
        if unit.alive and unit.cooldown_remaining > 0:
            unit.cooldown_remaining -= 1

    episode.step_count += 1
    allies_alive = any(u.alive for u in episode.units if u.team == ALLY)
    enemies_alive = any(u.alive for u in episode.units if u.team == ENEMY)
    terminal = (not allies_alive or not enemies_alive
                or episode.step_count >= episode.scenario.max_steps)
    win = terminal and not enemies_alive and allies_alive
    episode.terminal = terminal
    episode.win = win

    step_events = tuple(events)
    episode.damage_log.append(step_events)
    damage = sum(e.damage_dealt for e in step_events)
    kills = sum(1 for e in step_events if e.kill)
    increment = damage * KILL_WEIGHT * max(kills, 1)
    if win:
        increment += WIN_BONUS
    step_reward = REWARD_CEILING * increment / episode.scenario.r_max

    return StepOutcome(
        observations=_team_observations(episode),
        damage_events=step_events,
        terminal=terminal,
        win=win,
        step_reward=step_reward,
    )


def _coerce_action(action) -> Action:
    try:
        return Action(int(action))
    except (ValueError, TypeError):
        raise ContractError(f"invalid action {action!r}") from None


def _apply_move(episode: Episode, unit: UnitState, action: Action) -> None:
    dx, dy = _MOVE_DELTAS[action]
    for _ in range(unit.spec.move_speed):
        nx, ny = unit.x + dx, unit.y + dy
        if not episode.is_free(nx, ny):
            break
        episode._move_unit(unit, nx, ny)


def _apply_attack(episode: Episode, unit: UnitState, events: list[DamageEvent]) -> None:
    target_id = resolve_attack_closest(episode, unit.unit_id)
    if target_id is None:
        return  # nothing in sight: acts as stop
    target = episode.unit(target_id)
    if _distance(unit, target) <= unit.spec.attack_range and unit.cooldown_remaining == 0:
        dealt, kill = _apply_damage(episode, unit, target)
        unit.cooldown_remaining = unit.spec.cooldown_steps
        if target.team == ENEMY:
            events.append(DamageEvent(unit.unit_id, target.unit_id, dealt, kill))
    else:
        # Out of range or cooling down: close in on the target instead.
        chase = _approach_action(unit, target)
        if chase in _MOVE_DELTAS:
            dx, dy = _MOVE_DELTAS[chase]
            nx, ny = unit.x + dx, unit.y + dy
            if episode.is_free(nx, ny):
                episode._move_unit(unit, nx, ny)


def _apply_damage(episode: Episode, attacker: UnitState,
                  target: UnitState) -> tuple[float, bool]:
    # Shields absorb first; recorded damage never exceeds what the target
    # actually lost, so per-step damage events conserve hitpoint+shield loss.
    damage = attacker.spec.damage
    shield_loss = min(target.shield, damage)
    target.shield -= shield_loss
    hp_loss = min(target.hitpoints, damage - shield_loss)
    target.hitpoints -= hp_loss
    kill = not target.alive
    if kill:
        episode._remove_from_play(target)
    return shield_loss + hp_loss, kill


def _team_observations(episode: Episode) -> tuple[LocalObservation, ...]:
    return tuple(_local_observation(episode, unit) for unit in episode.living(ALLY))


def _local_observation(episode: Episode, observer: UnitState) -> LocalObservation:
    sight = episode.scenario.sight_range
    allies = []
    enemies = []
    for unit in episode.units:
        if not unit.alive or unit.unit_id == observer.unit_id:
            continue
        d = _distance(observer, unit)
        if d > sight:
            continue
        seen = VisibleUnit(
            unit_id=unit.unit_id,
            distance=d,
            dx=float(unit.x - observer.x),
            dy=float(unit.y - observer.y),
            health_fraction=unit.health_fraction,
            shield_fraction=unit.shield_fraction,
            type_id=unit.spec.type_id,
        )
        (allies if unit.team == observer.team else enemies).append(seen)
    return LocalObservation(
        observer_id=observer.unit_id,
        observer_x=observer.x,
        observer_y=observer.y,
        sight_range=sight,
        visible_allies=tuple(allies),
        visible_enemies=tuple(enemies),
        health_fraction=observer.health_fraction,
        shield_fraction=observer.shield_fraction,
        cooldown_fraction=observer.cooldown_fraction,
        last_action=observer.last_action,
    )
