"""Fixed-size spatial state encoding built from signed influence maps.

Every unit deposits a distance-decayed intensity (its health fraction at the
source cell, decaying as intensity / (1 + distance)) onto a grid: positive
for allies, negative for enemies. Two grids are built per decision:

* a local egocentric grid spanning the observer's sight range, and
* one shared global grid covering the whole map at 64x64.

Stacked with the prior step's local grid, the prior action one-hot and five
self scalars, this yields a state vector whose length depends only on the
chosen local resolution, never on how many units a scenario contains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .engine import Action, LocalObservation, N_ACTIONS, UnitState, ALLY
from .errors import ContractError

GLOBAL_SIDE = 64
LOCAL_RESOLUTIONS = (19, 37, 55)
LOCAL_FRAME = "local-egocentric"
GLOBAL_FRAME = "global-map"
N_SELF_FEATURES = 5
LAYOUT_VERSION = 1


@dataclass(frozen=True)
class InfluenceParams:
    """Per-unit deposit parameters: source intensity and influence radius."""

    source_intensity: float
    radius: float
    decay: str = "inverse_distance"

    def __post_init__(self):
        if not 0.0 <= self.source_intensity <= 1.0:
            raise ContractError(
                f"source_intensity must be in [0, 1], got {self.source_intensity}")
        if self.radius <= 0:
            raise ContractError(f"radius must be > 0, got {self.radius}")
        if self.decay != "inverse_distance":
            raise ContractError(f"unsupported decay '{self.decay}'")


@dataclass
class InfluenceGrid:
    """A signed influence matrix with every cell in [-1, 1]."""

    cells: np.ndarray
    frame: str

    @property
    def resolution(self) -> tuple[int, int]:
        return self.cells.shape


@dataclass(frozen=True)
class GridSpec:
    """How world coordinates map onto one grid's integer cells."""

    side: int
    frame: str
    scale_x: float  # grid cells per world cell
    scale_y: float
    origin_x: float = 0.0  # world point mapped to the grid center (local frame)
    origin_y: float = 0.0

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        if self.frame == LOCAL_FRAME:
            center = (self.side - 1) // 2
            row = center + int(np.rint((y - self.origin_y) * self.scale_y))
            col = center + int(np.rint((x - self.origin_x) * self.scale_x))
        else:
            row = int(np.rint(y * self.scale_y))
            col = int(np.rint(x * self.scale_x))
        if not (0 <= row < self.side and 0 <= col < self.side):
            raise ContractError(
                f"position ({x}, {y}) falls outside the {self.side}x{self.side} grid")
        return row, col

    def radius_cells(self, radius_world: float) -> float:
        return radius_world * min(self.scale_x, self.scale_y)


def local_grid_spec(resolution: int, sight_range: float,
                    origin: tuple[float, float] = (0.0, 0.0)) -> GridSpec:
    """Egocentric square grid spanning [-sight_range, +sight_range] per axis."""
    if resolution not in LOCAL_RESOLUTIONS:
        raise ContractError(
            f"resolution must be one of {LOCAL_RESOLUTIONS}, got {resolution}")
    scale = (resolution - 1) / (2.0 * sight_range)
    return GridSpec(resolution, LOCAL_FRAME, scale, scale, origin[0], origin[1])


def global_grid_spec(map_width: int, map_height: int) -> GridSpec:
    """Whole-map grid at the fixed global resolution."""
    if map_width < 1 or map_height < 1:
        raise ContractError("map dimensions must be positive")
    sx = (GLOBAL_SIDE - 1) / max(map_width - 1, 1)
    sy = (GLOBAL_SIDE - 1) / max(map_height - 1, 1)
    return GridSpec(GLOBAL_SIDE, GLOBAL_FRAME, sx, sy)


@lru_cache(maxsize=8)
def _distance_kernel(side: int) -> np.ndarray:
    # (2*side-1)^2 matrix of Euclidean distances from its center cell; one
    # slice of it covers any deposit position inside a side x side grid.
    offsets = np.arange(2 * side - 1, dtype=np.float64) - (side - 1)
    dy = offsets[:, None]
    dx = offsets[None, :]
    return np.sqrt(dy * dy + dx * dx)


def _deposit(cells: np.ndarray, row: int, col: int, intensity: float,
             sign: float, radius_cells: float) -> None:
    side = cells.shape[0]
    reach = int(math.floor(radius_cells))
    r0, r1 = max(row - reach, 0), min(row + reach, side - 1)
    c0, c1 = max(col - reach, 0), min(col + reach, side - 1)
    kernel = _distance_kernel(side)
    k = side - 1  # kernel center index
    dist = kernel[k - row + r0:k - row + r1 + 1, k - col + c0:k - col + c1 + 1]
    cells[r0:r1 + 1, c0:c1 + 1] += np.where(
        dist <= radius_cells, sign * intensity / (1.0 + dist), 0.0)


def build_unit_influence(unit: UnitState, spec: GridSpec, sign: float,
                         influence_radius: float) -> InfluenceGrid:
    """One unit's influence on a fresh grid.

    Cell value is sign * health_fraction / (1 + distance) out to the
    influence radius, zero beyond it. A dead unit contributes nothing.
    """
    if sign not in (1.0, -1.0, 1, -1):
        raise ContractError(f"sign must be +1 or -1, got {sign}")
    cells = np.zeros((spec.side, spec.side), dtype=np.float64)
    if unit.alive:
        row, col = spec.cell_of(unit.x, unit.y)
        params = InfluenceParams(unit.health_fraction, influence_radius)
        _deposit(cells, row, col, params.source_intensity, float(sign),
                 spec.radius_cells(params.radius))
    return InfluenceGrid(cells=cells, frame=spec.frame)


def build_global_influence_map(units, map_width: int, map_height: int,
                               influence_radius: float) -> InfluenceGrid:
    """Shared whole-map influence grid aggregated over all living units.

    Identical for every observer; allies deposit with positive sign and
    enemies negative, and the summed cells are clamped to [-1, 1].
    """
    spec = global_grid_spec(map_width, map_height)
    cells = np.zeros((GLOBAL_SIDE, GLOBAL_SIDE), dtype=np.float64)
    radius_cells = spec.radius_cells(influence_radius)
    for unit in units:
        if not unit.alive:
            continue
        row, col = spec.cell_of(unit.x, unit.y)
        sign = 1.0 if unit.team == ALLY else -1.0
        _deposit(cells, row, col, unit.health_fraction, sign, radius_cells)
    np.clip(cells, -1.0, 1.0, out=cells)
    return InfluenceGrid(cells=cells, frame=GLOBAL_FRAME)


def build_local_influence_map(obs: LocalObservation, resolution: int) -> InfluenceGrid:
    """Egocentric influence grid from one agent's local observation.

    The observer sits on the center cell and contributes its own positive
    influence; each visible unit lands at its relative offset scaled by
    (resolution - 1) / (2 * sight_range) and rounded to the nearest cell.
    """
    spec = local_grid_spec(resolution, obs.sight_range)
    cells = np.zeros((resolution, resolution), dtype=np.float64)
    radius_cells = spec.radius_cells(obs.sight_range)
    center = (resolution - 1) // 2
    _deposit(cells, center, center, obs.health_fraction, 1.0, radius_cells)
    for seen, sign in ((obs.visible_allies, 1.0), (obs.visible_enemies, -1.0)):
        for unit in seen:
            if unit.distance > obs.sight_range:
                raise ContractError(
                    f"unit {unit.unit_id} at distance {unit.distance} exceeds "
                    f"sight range {obs.sight_range}")
            row = center + int(np.rint(unit.dy * spec.scale_y))
            col = center + int(np.rint(unit.dx * spec.scale_x))
            _deposit(cells, row, col, unit.health_fraction, sign, radius_cells)
    np.clip(cells, -1.0, 1.0, out=cells)
    return InfluenceGrid(cells=cells, frame=LOCAL_FRAME)


@dataclass
class NormalizationDiagnostics:
    """Counts raw feature values that fell outside their declared range."""

    clamped_count: int = 0


def normalize_feature(value: float, lower: float, upper: float,
                      diagnostics: NormalizationDiagnostics | None = None) -> float:
    """Affine map of a raw scalar with declared range onto [0, 1].

    Out-of-range inputs are clamped and tallied in the diagnostics object.
    """
    if not (math.isfinite(lower) and math.isfinite(upper)):
        raise ContractError("feature range must be finite")
    if upper < lower:
        raise ContractError(f"invalid feature range [{lower}, {upper}]")
    if upper == lower:
        return 0.0
    t = (value - lower) / (upper - lower)
    if t < 0.0 or t > 1.0:
        if diagnostics is not None:
            diagnostics.clamped_count += 1
        t = min(max(t, 0.0), 1.0)
    return t


def self_feature_vector(obs: LocalObservation, map_width: int, map_height: int,
                        diagnostics: NormalizationDiagnostics | None = None) -> np.ndarray:
    """The five per-agent scalars: health, shield, cooldown, x and y fractions."""
    return np.array([
        normalize_feature(obs.health_fraction, 0.0, 1.0, diagnostics),
        normalize_feature(obs.shield_fraction, 0.0, 1.0, diagnostics),
        normalize_feature(obs.cooldown_fraction, 0.0, 1.0, diagnostics),
        normalize_feature(obs.observer_x, 0.0, map_width - 1, diagnostics),
        normalize_feature(obs.observer_y, 0.0, map_height - 1, diagnostics),
    ], dtype=np.float64)


def encoded_state_length(resolution: int) -> int:
    """Flat state length for a local resolution: 2*r^2 + 64^2 + 6 + 5."""
    if resolution not in LOCAL_RESOLUTIONS:
        raise ContractError(
            f"resolution must be one of {LOCAL_RESOLUTIONS}, got {resolution}")
    return 2 * resolution * resolution + GLOBAL_SIDE * GLOBAL_SIDE + N_ACTIONS + N_SELF_FEATURES


@dataclass
class EncodedState:
    """Fixed-length flat policy input.

    Layout (layout version 1), in order:
      [0, r^2)                       current local influence grid, row-major
      [r^2, r^2 + 4096)              global influence grid, row-major
      [r^2 + 4096, 2r^2 + 4096)      prior-step local influence grid
      [2r^2 + 4096, 2r^2 + 4102)     prior action one-hot
      [2r^2 + 4102, 2r^2 + 4107)     self features
    """

    vector: np.ndarray
    resolution: int

    @property
    def current_local(self) -> np.ndarray:
        r2 = self.resolution ** 2
        return self.vector[:r2]

    @property
    def global_map(self) -> np.ndarray:
        r2 = self.resolution ** 2
        return self.vector[r2:r2 + GLOBAL_SIDE ** 2]

    @property
    def prev_local(self) -> np.ndarray:
        r2 = self.resolution ** 2
        g = GLOBAL_SIDE ** 2
        return self.vector[r2 + g:2 * r2 + g]

    @property
    def prev_action_one_hot(self) -> np.ndarray:
        r2 = self.resolution ** 2
        g = GLOBAL_SIDE ** 2
        return self.vector[2 * r2 + g:2 * r2 + g + N_ACTIONS]

    @property
    def self_features(self) -> np.ndarray:
        return self.vector[-N_SELF_FEATURES:]


def assemble_state(obs: LocalObservation, global_grid: InfluenceGrid,
                   prev_grid: InfluenceGrid | None, prev_action: Action | None,
                   resolution: int, map_width: int, map_height: int,
                   diagnostics: NormalizationDiagnostics | None = None,
                   ) -> tuple[EncodedState, InfluenceGrid]:
    """Build the flat policy input for one agent at one step.

    On an episode's first step pass prev_grid=None and prev_action=None:
    the prior grid is all zeros and the prior action defaults to stop.
    Returns the encoded state together with the freshly built current local
    grid so callers can feed it back as prev_grid next step.
    """
    current = build_local_influence_map(obs, resolution)
    if global_grid.cells.shape != (GLOBAL_SIDE, GLOBAL_SIDE):
        raise ContractError(
            f"global grid must be {GLOBAL_SIDE}x{GLOBAL_SIDE}, "
            f"got {global_grid.cells.shape}")
    if prev_grid is None:
        prev_cells = np.zeros_like(current.cells)
    else:
        if prev_grid.cells.shape != current.cells.shape:
            raise ContractError(
                f"prior grid resolution {prev_grid.cells.shape} does not match "
                f"current {current.cells.shape}")
        prev_cells = prev_grid.cells
    action = Action.STOP if prev_action is None else Action(prev_action)
    one_hot = np.zeros(N_ACTIONS, dtype=np.float64)
    one_hot[int(action)] = 1.0
    vector = np.concatenate([
        current.cells.ravel(),
        global_grid.cells.ravel(),
        prev_cells.ravel(),
        one_hot,
        self_feature_vector(obs, map_width, map_height, diagnostics),
    ])
    return EncodedState(vector=vector, resolution=resolution), current
