"""
Episodic environments: the linear grid, the 5x5 maze and cart-pole.

Each environment keeps its own episode state, like a game object stepped
frame by frame, and exposes the same reset/step/action_count surface.
"""
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
import math

import numpy as np

from .errors import ConfigError, EnvironmentUsageError


class Move(IntEnum):
    """grid actions, in the order the tie-break sees them"""
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3


# (row, col) deltas
MOVE_DELTAS = {
    Move.NORTH: (-1, 0),
    Move.SOUTH: (1, 0),
    Move.EAST: (0, 1),
    Move.WEST: (0, -1),
}


@dataclass(frozen=True)
class Experience:
    """one transition (s, a, r, s', terminal)"""
    state: object
    action: int
    reward: float
    next_state: object
    terminal: bool

    def fields(self) -> tuple:
        """(state, action, reward, next_state, terminal)"""
        return self.state, self.action, self.reward, self.next_state, self.terminal


@dataclass(frozen=True)
class ExperienceBatch:
    """struct-of-arrays view over experiences"""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    @classmethod
    def stack(cls, experiences) -> 'ExperienceBatch':
        """Stack experiences; feature-vector states become a 2-D array"""
        experiences = list(experiences)
        return cls(
            states=np.array([e.state for e in experiences]),
            actions=np.array([e.action for e in experiences], dtype=np.int64),
            rewards=np.array([e.reward for e in experiences], dtype=np.float64),
            next_states=np.array([e.next_state for e in experiences]),
            terminals=np.array([e.terminal for e in experiences], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.actions)

    def fields(self) -> tuple:
        """(states, actions, rewards, next_states, terminals)"""
        return self.states, self.actions, self.rewards, self.next_states, self.terminals


@dataclass(frozen=True)
class StepResult:
    """outcome of one environment step"""
    next_state: object
    reward: float
    terminal: bool
    # time limit reached without failure; the transition still bootstraps
    truncated: bool = False


class Environment(ABC):
    """uniform episodic interface"""
    state: object
    done: bool

    @property
    @abstractmethod
    def action_count(self) -> int:
        """number of discrete actions"""

    @abstractmethod
    def reset(self, rng: np.random.Generator) -> object:
        """start a new episode and return its first state"""

    @abstractmethod
    def step(self, action: int) -> StepResult:
        """advance the current episode by one action"""

    def encode(self, state) -> str:
        """trace representation of a state"""
        return str(int(state))

    def _check_action(self, action: int) -> None:
        if not 0 <= action < self.action_count:
            raise EnvironmentUsageError(f"action {action} outside [0, {self.action_count})")


class GridEnvironment(Environment):
    """deterministic tabular environment with a pure transition function"""
    state_count: int

    @property
    def action_count(self) -> int:
        return len(Move)

    @abstractmethod
    def transition(self, state: int, action: int) -> StepResult:
        """deterministic transition from any non-terminal state"""

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EnvironmentUsageError("episode has ended; call reset() first")
        result = self.transition(self.state, action)
        self.state = result.next_state
        self.done = result.terminal
        return result


# linear grid


@dataclass(frozen=True)
class LinearGridConfig:
    """corridor of n grids; the goal lies east of the last grid"""
    n: int = 5
    gamma: float = 0.99

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"linear grid needs n >= 2, got {self.n}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")


class LinearGridWorld(GridEnvironment):
    """linear grid world: east moves towards the goal, off-axis moves stay"""
    config: LinearGridConfig
    # constants
    goal_: int

    def __init__(self, config: LinearGridConfig) -> None:
        self.config = config
        self.goal_ = config.n
        # the goal is an absorbing extra state with an all-zero row
        self.state_count = config.n + 1
        self.state = 0
        self.done = False

    def reset(self, rng: np.random.Generator = None) -> int:
        self.state = 0
        self.done = False
        return self.state

    def transition(self, state: int, action: int) -> StepResult:
        self._check_action(action)
        if not 0 <= state < self.goal_:
            raise EnvironmentUsageError(f"state {state} is not a non-terminal grid")
        if action == Move.EAST:
            if state == self.goal_ - 1:
                return StepResult(self.goal_, 1.0, True)
            return StepResult(state + 1, 0.0, False)
        if action == Move.WEST and state > 0:
            return StepResult(state - 1, 0.0, False)
        # north, south and west at grid 0 are blocked
        return StepResult(state, 0.0, False)


def enumerate_linear_buffer(config: LinearGridConfig) -> list[Experience]:
    """Every (state, action) pair of the linear grid once, 4N experiences"""
    env = LinearGridWorld(config)
    buffer = []
    for state in range(config.n):
        for action in Move:
            result = env.transition(state, int(action))
            buffer.append(Experience(
                state, int(action), result.reward, result.next_state, result.terminal))
    return buffer


# maze


Cell = tuple[int, int]

DEFAULT_MAZE_WALLS = frozenset(
    # barrier under row 1, open at columns 3-4
    [((1, c), (2, c)) for c in range(0, 3)]
    # barrier under row 3, open at columns 0-1
    + [((3, c), (4, c)) for c in range(2, 5)]
)


def _edge(a: Cell, b: Cell) -> tuple[Cell, Cell]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class MazeConfig:
    """walled grid maze with a goal zone"""
    width: int = 5
    height: int = 5
    walls: frozenset = DEFAULT_MAZE_WALLS
    start: Cell = (0, 0)
    goal: frozenset = frozenset({(4, 4)})
    step_reward: float = -0.004
    goal_reward: float = 1.0
    gamma: float = 0.99
    max_episode_steps: int = 5000
    # an episode succeeds when it reaches the goal within factor * shortest path steps
    success_factor: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, 'walls', frozenset(
            _edge(tuple(a), tuple(b)) for a, b in self.walls))
        object.__setattr__(self, 'goal', frozenset(tuple(g) for g in self.goal))
        object.__setattr__(self, 'start', tuple(self.start))
        if self.width < 1 or self.height < 1:
            raise ConfigError("maze needs a positive width and height")
        if self.success_factor < 1.0:
            raise ConfigError(f"success_factor must be at least 1, got {self.success_factor}")
        if not self.goal:
            raise ConfigError("maze goal zone is empty")
        for cell in (self.start, *self.goal):
            if not self.contains(cell):
                raise ConfigError(f"cell {cell} lies outside the maze")
        if self.start in self.goal:
            raise ConfigError("maze start lies in the goal zone")
        for a, b in self.walls:
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ConfigError(f"wall {a}-{b} does not separate adjacent cells")

    def contains(self, cell: Cell) -> bool:
        """cell lies inside the border"""
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width


class Maze(GridEnvironment):
    """grid-world maze; blocked moves keep the agent in place"""
    config: MazeConfig
    # constants
    start_: int
    goal_: frozenset

    def __init__(self, config: MazeConfig) -> None:
        self.config = config
        self.state_count = config.width * config.height
        self.start_ = self.cell_id(config.start)
        self.goal_ = frozenset(self.cell_id(g) for g in config.goal)
        if self.shortest_path_length() is None:
            raise ConfigError("maze goal is unreachable from the start")
        self.state = self.start_
        self.done = False

    def cell_id(self, cell: Cell) -> int:
        """row-major state id"""
        return cell[0] * self.config.width + cell[1]

    def cell_of(self, state: int) -> Cell:
        """inverse of cell_id"""
        return divmod(state, self.config.width)

    def neighbour(self, cell: Cell, action: int) -> Cell:
        """cell reached by a move, honouring walls and the border"""
        d_row, d_col = MOVE_DELTAS[Move(action)]
        target = (cell[0] + d_row, cell[1] + d_col)
        if not self.config.contains(target) or _edge(cell, target) in self.config.walls:
            return cell
        return target

    def reset(self, rng: np.random.Generator = None) -> int:
        self.state = self.start_
        self.done = False
        return self.state

    def transition(self, state: int, action: int) -> StepResult:
        self._check_action(action)
        if state in self.goal_ or not 0 <= state < self.state_count:
            raise EnvironmentUsageError(f"state {state} is not a non-terminal cell")
        next_state = self.cell_id(self.neighbour(self.cell_of(state), action))
        if next_state in self.goal_:
            return StepResult(next_state, self.config.goal_reward, True)
        return StepResult(next_state, self.config.step_reward, False)

    def shortest_path_length(self) -> int | None:
        """breadth-first distance from the start to the goal zone"""
        seen = {self.start_: 0}
        queue = deque([self.start_])
        while queue:
            state = queue.popleft()
            if state in self.goal_:
                return seen[state]
            for action in Move:
                nxt = self.cell_id(self.neighbour(self.cell_of(state), action))
                if nxt not in seen:
                    seen[nxt] = seen[state] + 1
                    queue.append(nxt)
        return None


# cart-pole


@dataclass(frozen=True)
class CartPoleConfig:
    """classic cart-pole constants"""
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_pole_length: float = 0.5
    force_magnitude: float = 10.0
    timestep: float = 0.02
    angle_limit_degrees: float = 12.0
    position_limit: float = 2.4
    max_steps: int = 200

    def __post_init__(self):
        for name in ('gravity', 'cart_mass', 'pole_mass', 'half_pole_length',
                     'force_magnitude', 'timestep', 'angle_limit_degrees',
                     'position_limit', 'max_steps'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"cart-pole {name} must be positive")


@dataclass
class CartPoleState:
    """cart position/velocity and pole angle/angular velocity"""
    x: float = 0.0
    x_dot: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0

    def as_array(self) -> np.ndarray:
        """raw feature vector"""
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])


@dataclass(init=False)
class CartPole(Environment):
    """cart-pole balancing, one Euler step per action"""
    config: CartPoleConfig
    physics: CartPoleState
    steps: int
    done: bool
    # constants
    total_mass_: float
    polemass_length_: float
    angle_limit_: float

    def __init__(self, config: CartPoleConfig) -> None:
        self.config = config
        self.physics = CartPoleState()
        self.steps = 0
        self.done = True
        self.total_mass_ = config.cart_mass + config.pole_mass
        self.polemass_length_ = config.pole_mass * config.half_pole_length
        self.angle_limit_ = config.angle_limit_degrees * 2 * math.pi / 360

    @property
    def action_count(self) -> int:
        return 2

    @property
    def state(self) -> np.ndarray:
        """current feature vector"""
        return self.physics.as_array()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.physics = CartPoleState(*rng.uniform(-0.05, 0.05, size=4))
        self.steps = 0
        self.done = False
        return self.state

    def integrate(self, physics: CartPoleState, force: float) -> CartPoleState:
        """one explicit Euler step of the cart-pole equations of motion"""
        cfg = self.config
        sin_theta = math.sin(physics.theta)
        cos_theta = math.cos(physics.theta)
        temp = (force + self.polemass_length_ * physics.theta_dot ** 2 * sin_theta) \
            / self.total_mass_
        theta_acc = (cfg.gravity * sin_theta - cos_theta * temp) / (
            cfg.half_pole_length
            * (4.0 / 3.0 - cfg.pole_mass * cos_theta ** 2 / self.total_mass_))
        x_acc = temp - self.polemass_length_ * theta_acc * cos_theta / self.total_mass_
        return CartPoleState(
            x=physics.x + cfg.timestep * physics.x_dot,
            x_dot=physics.x_dot + cfg.timestep * x_acc,
            theta=physics.theta + cfg.timestep * physics.theta_dot,
            theta_dot=physics.theta_dot + cfg.timestep * theta_acc,
        )

    def failed(self, physics: CartPoleState) -> bool:
        """cart left the track or pole fell past the angle limit"""
        return (abs(physics.x) > self.config.position_limit
                or abs(physics.theta) > self.angle_limit_)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EnvironmentUsageError("episode has ended; call reset() first")
        self._check_action(action)
        force = self.config.force_magnitude if action == 1 else -self.config.force_magnitude
        self.physics = self.integrate(self.physics, force)
        self.steps += 1
        terminal = self.failed(self.physics)
        truncated = not terminal and self.steps >= self.config.max_steps
        self.done = terminal or truncated
        return StepResult(self.state, 0.0 if terminal else 1.0, terminal, truncated)

    def encode(self, state) -> str:
        return ';'.join(repr(float(v)) for v in state)
