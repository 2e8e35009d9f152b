"""
Experiment config files.

One JSON object per experiment:

    {"kind": "linear" | "maze" | "cartpole",
     "env": {...}, "agent": {...}, "replay": {...},
     "seeds": [0, 1, ...] or a count, "total_steps": int, "output_dir": str}

Each section is checked by a form. Unknown keys are rejected, missing keys
take the defaults of the matching dataclass.
"""
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
import json
from pathlib import Path

from django import forms

from .envs import CartPoleConfig, LinearGridConfig, Maze, MazeConfig
from .errors import ConfigError
from .funcapprox import FaUpdateConfig, Optimizer
from .metrics import MetricFlavor
from .replay import PrioritySamplerConfig, ReplayStrategy
from .tabular import (BehaviorMode, BehaviorPolicy, EpsilonSchedule, QAgentConfig,
                      SoftQAgentConfig)

DEFAULT_TOTAL_STEPS = {'linear': 0, 'maze': 10000, 'cartpole': 50000}
DEFAULT_AGENT = {'linear': {}, 'maze': {'flavor': 'q'}, 'cartpole': {'flavor': 'dqn'}}


class ExperimentKind(str, Enum):
    """which runner an experiment goes to"""
    LINEAR = 'linear'
    MAZE = 'maze'
    CARTPOLE = 'cartpole'


class AgentFlavor(str, Enum):
    """update rule of the trained agent"""
    Q = 'q'
    SOFT_Q = 'soft_q'
    DQN = 'dqn'
    SOFT_DQN = 'soft_dqn'

    @property
    def is_soft(self) -> bool:
        """soft Bellman targets and softmax behavior"""
        return self in (AgentFlavor.SOFT_Q, AgentFlavor.SOFT_DQN)

    @property
    def metric_flavor(self) -> MetricFlavor:
        """flavor of the records this agent logs"""
        return {
            AgentFlavor.Q: MetricFlavor.PLAIN,
            AgentFlavor.SOFT_Q: MetricFlavor.SOFT,
            AgentFlavor.DQN: MetricFlavor.FA_PLAIN,
            AgentFlavor.SOFT_DQN: MetricFlavor.FA_SOFT,
        }[self]


def _choices(enum) -> list[tuple[str, str]]:
    return [(member.value, member.value) for member in enum]


# forms


class ExperimentForm(forms.Form):
    kind = forms.ChoiceField(choices=_choices(ExperimentKind))
    env = forms.JSONField(required=False)
    agent = forms.JSONField(required=False)
    replay = forms.JSONField(required=False)
    seeds = forms.JSONField(required=False)
    total_steps = forms.IntegerField(required=False, min_value=0)
    output_dir = forms.CharField(required=False)

    def clean_seeds(self):
        seeds = self.cleaned_data['seeds']
        if seeds is None:
            if 'seeds' in self.data:
                raise forms.ValidationError("seeds must not be empty")
            return (0,)
        if isinstance(seeds, int) and not isinstance(seeds, bool):
            if seeds < 1:
                raise forms.ValidationError("seed count must be positive")
            return tuple(range(seeds))
        if not isinstance(seeds, list) or not all(
                isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2 ** 64 for s in seeds):
            raise forms.ValidationError("seeds must be a count or a list of unsigned 64-bit integers")
        if len(set(seeds)) != len(seeds):
            raise forms.ValidationError("seeds must be distinct")
        return tuple(seeds)


class LinearEnvForm(forms.Form):
    n_values = forms.JSONField(required=False)
    gamma = forms.FloatField(required=False, min_value=0.0, max_value=1.0)

    def clean_n_values(self):
        values = self.cleaned_data['n_values']
        if values is None:
            return None
        if not isinstance(values, list) or not all(isinstance(n, int) and n >= 2 for n in values):
            raise forms.ValidationError("n_values must be a list of integers >= 2")
        return tuple(values)


class LinearAgentForm(forms.Form):
    alpha = forms.FloatField(required=False, min_value=0.0, max_value=1.0)


class LinearReplayForm(forms.Form):
    strategies = forms.JSONField(required=False)
    max_replays_factor = forms.IntegerField(required=False, min_value=1)

    def clean_strategies(self):
        values = self.cleaned_data['strategies']
        if values is None:
            return None
        allowed = {ReplayStrategy.UNIFORM, ReplayStrategy.ORACLE_TD, ReplayStrategy.ORACLE_EVB}
        if not isinstance(values, list) or not values or not set(values) <= {s.value for s in allowed}:
            raise forms.ValidationError("strategies must be a subset of uniform, oracle_td, oracle_evb")
        return tuple(ReplayStrategy(v) for v in values)


def _cell_list(value, what):
    if not isinstance(value, list) or not all(
            isinstance(c, list) and len(c) == 2 and all(isinstance(i, int) for i in c) for c in value):
        raise forms.ValidationError(f"{what} must be a list of [row, col] cells")
    return [tuple(c) for c in value]


class MazeEnvForm(forms.Form):
    width = forms.IntegerField(required=False, min_value=1)
    height = forms.IntegerField(required=False, min_value=1)
    walls = forms.JSONField(required=False)
    start = forms.JSONField(required=False)
    goal = forms.JSONField(required=False)
    step_reward = forms.FloatField(required=False)
    goal_reward = forms.FloatField(required=False)
    gamma = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    max_episode_steps = forms.IntegerField(required=False, min_value=1)
    success_factor = forms.FloatField(required=False, min_value=1.0)

    def clean_walls(self):
        walls = self.cleaned_data['walls']
        if walls is None:
            return None
        if not isinstance(walls, list):
            raise forms.ValidationError("walls must be a list of [[r, c], [r, c]] pairs")
        pairs = [tuple(_cell_list(w, "each wall")) for w in walls]
        if any(len(p) != 2 for p in pairs):
            raise forms.ValidationError("each wall joins exactly two cells")
        return frozenset(pairs)

    def clean_start(self):
        start = self.cleaned_data['start']
        return None if start is None else _cell_list([start], "start")[0]

    def clean_goal(self):
        goal = self.cleaned_data['goal']
        return None if goal is None else frozenset(_cell_list(goal, "goal"))


class MazeAgentForm(forms.Form):
    flavor = forms.ChoiceField(choices=[('q', 'q'), ('soft_q', 'soft_q')])
    alpha = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    beta = forms.FloatField(required=False, min_value=0.0)
    epsilon_start = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    epsilon_end = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    epsilon_horizon = forms.IntegerField(required=False, min_value=1)


class MazeReplayForm(forms.Form):
    strategy = forms.ChoiceField(required=False, choices=[('uniform', 'uniform')])
    capacity = forms.IntegerField(required=False, min_value=1)
    replays_per_step = forms.IntegerField(required=False, min_value=0)
    snapshot_size = forms.IntegerField(required=False, min_value=0)


class CartPoleEnvForm(forms.Form):
    gravity = forms.FloatField(required=False)
    cart_mass = forms.FloatField(required=False)
    pole_mass = forms.FloatField(required=False)
    half_pole_length = forms.FloatField(required=False)
    force_magnitude = forms.FloatField(required=False)
    timestep = forms.FloatField(required=False)
    angle_limit_degrees = forms.FloatField(required=False)
    position_limit = forms.FloatField(required=False)
    max_steps = forms.IntegerField(required=False)


class CartPoleAgentForm(forms.Form):
    flavor = forms.ChoiceField(choices=[('dqn', 'dqn'), ('soft_dqn', 'soft_dqn')])
    learning_rate = forms.FloatField(required=False)
    gamma = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    beta = forms.FloatField(required=False)
    batch = forms.IntegerField(required=False)
    target_sync_period = forms.IntegerField(required=False)
    hidden = forms.JSONField(required=False)
    optimizer = forms.ChoiceField(required=False, choices=_choices(Optimizer))
    td_clip = forms.FloatField(required=False, min_value=0.0)
    epsilon_start = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    epsilon_end = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    epsilon_horizon = forms.IntegerField(required=False, min_value=1)
    eval_interval = forms.IntegerField(required=False, min_value=1)
    eval_episodes = forms.IntegerField(required=False, min_value=1)
    checkpoint = forms.BooleanField(required=False)

    def clean_hidden(self):
        hidden = self.cleaned_data['hidden']
        if hidden is None:
            return None
        if not isinstance(hidden, list) or not hidden or not all(
                isinstance(h, int) and h >= 1 for h in hidden):
            raise forms.ValidationError("hidden must be a nonempty list of layer widths")
        return tuple(hidden)


class CartPoleReplayForm(forms.Form):
    strategy = forms.ChoiceField(required=False, choices=[
        ('uniform', 'uniform'), ('per', 'per'), ('ver', 'ver')])
    capacity = forms.IntegerField(required=False, min_value=1)
    alpha_exp = forms.FloatField(required=False)
    beta_is = forms.FloatField(required=False)
    beta_is_end = forms.FloatField(required=False)
    epsilon_prio = forms.FloatField(required=False)
    snapshot_size = forms.IntegerField(required=False, min_value=0)


def _clean_section(form_class, section, where: str) -> dict:
    """validated keys that were present in the section"""
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(section) - set(form_class.base_fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
    form = form_class(data=section)
    if not form.is_valid():
        errors = '; '.join(f"{name}: {' '.join(msgs)}" for name, msgs in form.errors.items())
        raise ConfigError(f"{where}: {errors}")
    return {k: v for k, v in form.cleaned_data.items() if k in section and v is not None}


def _epsilon(values: dict, start: float, end: float, horizon: int) -> EpsilonSchedule:
    return EpsilonSchedule(
        start=values.pop('epsilon_start', start),
        end=values.pop('epsilon_end', end),
        horizon=values.pop('epsilon_horizon', horizon),
    )


# validated tree


@dataclass(frozen=True)
class LinearSpec:
    """replay-count comparison on linear grids"""
    n_values: tuple[int, ...] = (3, 5, 10, 20)
    gamma: float = 0.99
    alpha: float = 1.0
    strategies: tuple[ReplayStrategy, ...] = (
        ReplayStrategy.UNIFORM, ReplayStrategy.ORACLE_TD, ReplayStrategy.ORACLE_EVB)
    # a run that has not converged after factor * N^2 replays counts as failed
    max_replays_factor: int = 100

    def __post_init__(self):
        QAgentConfig(alpha=self.alpha, gamma=self.gamma)

    def grid(self, n: int) -> LinearGridConfig:
        """config of the grid with n states"""
        return LinearGridConfig(n=n, gamma=self.gamma)


@dataclass(frozen=True)
class MazeAgentSpec:
    """tabular agent trained on the maze"""
    flavor: AgentFlavor = AgentFlavor.Q
    alpha: float = 1.0
    beta: float = 100.0
    epsilon: EpsilonSchedule = EpsilonSchedule()

    def __post_init__(self):
        self.q_config(0.99)
        self.soft_config(0.99)

    def q_config(self, gamma: float) -> QAgentConfig:
        """Q-learning settings"""
        return QAgentConfig(alpha=self.alpha, gamma=gamma, epsilon=self.epsilon)

    def soft_config(self, gamma: float) -> SoftQAgentConfig:
        """soft Q-learning settings"""
        return SoftQAgentConfig(beta=self.beta, gamma=gamma)

    def behavior(self) -> BehaviorPolicy:
        """softmax over soft values, epsilon-greedy otherwise"""
        if self.flavor.is_soft:
            return BehaviorPolicy(BehaviorMode.SOFTMAX, beta=self.beta)
        return BehaviorPolicy(BehaviorMode.EPSILON_GREEDY, epsilon=self.epsilon)


@dataclass(frozen=True)
class MazeReplaySpec:
    """uniform replay alongside online updates"""
    strategy: ReplayStrategy = ReplayStrategy.UNIFORM
    capacity: int = 10000
    replays_per_step: int = 1
    snapshot_size: int = 50


@dataclass(frozen=True)
class CartPoleAgentSpec:
    """network agent trained on cart-pole"""
    flavor: AgentFlavor = AgentFlavor.DQN
    update: FaUpdateConfig = FaUpdateConfig()
    epsilon: EpsilonSchedule = EpsilonSchedule(start=1.0, end=0.01, horizon=10000)
    eval_interval: int = 1000
    eval_episodes: int = 10
    checkpoint: bool = True

    def behavior(self) -> BehaviorPolicy:
        """softmax over the network outputs for soft_dqn, epsilon-greedy for dqn"""
        if self.flavor.is_soft:
            return BehaviorPolicy(BehaviorMode.SOFTMAX, beta=self.update.beta)
        return BehaviorPolicy(BehaviorMode.EPSILON_GREEDY, epsilon=self.epsilon)


@dataclass(frozen=True)
class CartPoleReplaySpec:
    """replay strategy of the network agent"""
    strategy: ReplayStrategy = ReplayStrategy.UNIFORM
    sampler: PrioritySamplerConfig = PrioritySamplerConfig()
    snapshot_size: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    """a validated experiment file"""
    name: str
    kind: ExperimentKind
    env: object
    agent: object
    replay: object
    seeds: tuple[int, ...]
    total_steps: int
    output_dir: Path | None = None
    source: Path | None = field(default=None, compare=False)

    def with_overrides(self, seeds=None, output_dir=None) -> 'ExperimentConfig':
        """copy with command-line overrides applied"""
        changes = {}
        if seeds is not None:
            changes['seeds'] = tuple(seeds)
        if output_dir is not None:
            changes['output_dir'] = Path(output_dir)
        return replace(self, **changes)

    def describe(self) -> dict:
        """JSON-ready dump of the validated config"""
        return json.loads(json.dumps(asdict(self), default=_json_default))


def _json_default(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (frozenset, set)):
        return sorted(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def _linear(env: dict, agent: dict, replay: dict):
    spec = LinearSpec(**env, **agent, **replay)
    for n in spec.n_values:
        spec.grid(n)
    # agent and replay settings are folded into the one spec
    return spec, None, None


def _maze(env: dict, agent: dict, replay: dict, total_steps: int):
    maze = MazeConfig(**env)
    Maze(maze)
    epsilon = _epsilon(agent, 1.0, 0.001, total_steps)
    flavor = AgentFlavor(agent.pop('flavor'))
    agent_spec = MazeAgentSpec(flavor=flavor, epsilon=epsilon, **agent)
    return maze, agent_spec, MazeReplaySpec(
        **{**replay, 'strategy': ReplayStrategy(replay.get('strategy', 'uniform'))})


def _cartpole(env: dict, agent: dict, replay: dict, total_steps: int):
    cartpole = CartPoleConfig(**env)
    epsilon = _epsilon(agent, 1.0, 0.01, 10000)
    flavor = AgentFlavor(agent.pop('flavor'))
    outer = {k: agent.pop(k) for k in ('eval_interval', 'eval_episodes', 'checkpoint') if k in agent}
    strategy = ReplayStrategy(replay.pop('strategy', 'uniform'))
    snapshot = {k: replay.pop(k) for k in ('snapshot_size',) if k in replay}
    capacity = replay.pop('capacity', FaUpdateConfig.buffer_capacity)
    update = FaUpdateConfig(buffer_capacity=capacity, total_steps=total_steps, **agent)
    if strategy == ReplayStrategy.VER and not flavor.is_soft:
        raise ConfigError("replay: ver priorities need the soft_dqn agent")
    return (cartpole,
            CartPoleAgentSpec(flavor=flavor, update=update, epsilon=epsilon, **outer),
            CartPoleReplaySpec(strategy=strategy, sampler=PrioritySamplerConfig(**replay), **snapshot))


_SECTION_FORMS = {
    ExperimentKind.LINEAR: (LinearEnvForm, LinearAgentForm, LinearReplayForm),
    ExperimentKind.MAZE: (MazeEnvForm, MazeAgentForm, MazeReplayForm),
    ExperimentKind.CARTPOLE: (CartPoleEnvForm, CartPoleAgentForm, CartPoleReplayForm),
}


def parse_config(data, name: str = 'experiment', source: Path | None = None) -> ExperimentConfig:
    """Validate a decoded config object"""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = _clean_section(ExperimentForm, data, 'config')
    kind = ExperimentKind(top['kind'])
    total_steps = top.get('total_steps', DEFAULT_TOTAL_STEPS[kind.value])
    if kind != ExperimentKind.LINEAR and total_steps < 1:
        raise ConfigError("total_steps must be positive")
    env_form, agent_form, replay_form = _SECTION_FORMS[kind]
    env = _clean_section(env_form, data.get('env'), 'env')
    agent = _clean_section(agent_form, data.get('agent', DEFAULT_AGENT[kind.value]), 'agent')
    replay = _clean_section(replay_form, data.get('replay'), 'replay')
    try:
        if kind == ExperimentKind.LINEAR:
            env_cfg, agent_cfg, replay_cfg = _linear(env, agent, replay)
        elif kind == ExperimentKind.MAZE:
            env_cfg, agent_cfg, replay_cfg = _maze(env, agent, replay, total_steps)
        else:
            env_cfg, agent_cfg, replay_cfg = _cartpole(env, agent, replay, total_steps)
    except TypeError as err:
        raise ConfigError(str(err)) from err
    output_dir = Path(top['output_dir']) if top.get('output_dir') else None
    return ExperimentConfig(name, kind, env_cfg, agent_cfg, replay_cfg,
                            top.get('seeds', (0,)), total_steps, output_dir, source)


def load_config(path: Path) -> ExperimentConfig:
    """Read and validate an experiment file"""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return parse_config(data, name=path.stem, source=path)
