"""
Experiment runners.

Each runner trains one seed and writes that seed's files into the output
directory. run_experiment fans the seeds of a config out over a process
pool, joins the per-seed summaries and writes run.json. No state is shared
between seeds.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
import json
import logging
import os
from pathlib import Path

import django
import numpy as np

from .config import ExperimentConfig, ExperimentKind, LinearSpec
from .envs import CartPole, CartPoleConfig, Experience, Maze, Move, enumerate_linear_buffer
from .errors import DivergenceError, TraceFormatError
from .funcapprox import (AdamState, FaSnapshot, MlpParams, Optimizer, adam_minibatch_update,
                         forward, init_params, metrics_fa, save_checkpoint, sgd_minibatch_update)
from .metrics import DEFAULT_TOLERANCE, metric_record_tabular
from .numerics import argmax_tiebreak, make_streams, softmax
from .replay import (OracleCriterion, PrioritizedReplayBuffer, ReplayBuffer, ReplayStrategy,
                     oracle_criteria, raw_priority_of, sample_uniform, shape_priority)
from .tabular import QAgentConfig, QTable, behavior_action, q_update, select_action, soft_q_update
from .traces import (SCATTER_COLUMNS, BoundReport, NonzeroTally, TraceRow, TraceWriter, check_rows,
                     iter_trace, scatter_rows, trace_files, write_csv)

logger = logging.getLogger(__name__)

# VER priorities must reproduce rho_max * |TD| of the logged record
PRIORITY_TOLERANCE = 1e-9

CURVE_COLUMNS = ('episode', 'end_step', 'steps', 'return', 'reached', 'success')
EVAL_COLUMNS = ('step', 'mean_return')
SNAPSHOT_COLUMNS = ('upper_bound', 'abs_td', 'rho_max', 'state', 'action')
LINEAR_COUNT_COLUMNS = ('n', 'strategy', 'seed', 'replays_to_optimal', 'replays_to_quiescence',
                        'failed')
LINEAR_SUMMARY_COLUMNS = ('n', 'strategy', 'seeds', 'failures', 'mean_to_optimal',
                          'std_to_optimal', 'min_to_optimal', 'max_to_optimal',
                          'mean_to_quiescence', 'reference')
SUMMARY_COLUMNS = ('seed', 'flavor', 'records', 'violating_records', 'nonzero_evb',
                   'nonzero_piv', 'nonzero_eiv')


class SeedStatus(str, Enum):
    """outcome of one seed"""
    PASSED = 'passed'
    VIOLATION = 'violation'
    DIVERGED = 'diverged'


@dataclass
class SeedResult:
    """what one seed produced"""
    seed: int
    kind: str
    flavor: str
    strategy: str
    trace: str
    records: int = 0
    violating_records: int = 0
    violations: dict = field(default_factory=dict)
    nonzero: dict = field(default_factory=dict)
    episodes: int = 0
    success_rate_final: float | None = None
    eval_returns: list = field(default_factory=list)
    priority_checks: int = 0
    priority_mismatches: int = 0
    error: str = ''

    @property
    def status(self) -> SeedStatus:
        """diverged, violated or passed"""
        if self.error:
            return SeedStatus.DIVERGED
        if self.violating_records or self.priority_mismatches:
            return SeedStatus.VIOLATION
        return SeedStatus.PASSED

    def quarter_means(self) -> tuple[float | None, float | None]:
        """mean evaluation return over the first and final quarter of evaluations"""
        returns = [r for _, r in self.eval_returns]
        quarter = len(returns) // 4
        if quarter == 0:
            return None, None
        return float(np.mean(returns[:quarter])), float(np.mean(returns[-quarter:]))

    def as_dict(self) -> dict:
        """summary for run.json"""
        first, final = self.quarter_means()
        return {**asdict(self), 'status': self.status.value,
                'first_quarter_return': first, 'final_quarter_return': final}

    def absorb(self, writer: TraceWriter) -> None:
        """copy the counts of a closed trace"""
        self.records = writer.rows
        self.violating_records = writer.violating_rows
        self.violations = dict(writer.violations)
        self.nonzero = writer.nonzero.fractions()


# linear grid


@dataclass(frozen=True)
class LinearOutcome:
    """replays one strategy needed on one grid"""
    n: int
    strategy: ReplayStrategy
    seed: int
    replays_to_optimal: int | None
    replays_to_quiescence: int | None

    @property
    def failed(self) -> bool:
        """the greedy policy never became optimal within the replay cap"""
        return self.replays_to_optimal is None


def east_optimal(q: QTable, n: int) -> bool:
    """east is the strict greedy action in every grid"""
    rows = q.values[:n]
    others = np.delete(rows, int(Move.EAST), axis=1)
    return bool(np.all(rows[:, Move.EAST] > others.max(axis=1)))


_ORACLES = {
    ReplayStrategy.ORACLE_TD: OracleCriterion.ABS_TD,
    ReplayStrategy.ORACLE_EVB: OracleCriterion.ABS_EVB,
}


def replay_linear(n: int, strategy: ReplayStrategy, seed: int, spec: LinearSpec) -> LinearOutcome:
    """
    Replay the full linear-grid buffer into a zero table until the greedy
    policy is optimal.

    Oracle strategies keep replaying until every criterion is zero, so both
    counts are known. Uniform replay stops at the optimal policy.
    """
    strategy = ReplayStrategy(strategy)
    buffer = ReplayBuffer(4 * n)
    for e in enumerate_linear_buffer(spec.grid(n)):
        buffer.push(e)
    q = QTable.zeros(n + 1, len(Move))
    agent = QAgentConfig(alpha=spec.alpha, gamma=spec.gamma)
    rng = make_streams(seed).replay
    oracle = _ORACLES.get(strategy)
    cap = spec.max_replays_factor * n * n
    to_optimal = to_quiescence = None
    for replays in range(cap + 1):
        if to_optimal is None and east_optimal(q, n):
            to_optimal = replays
        if oracle is None:
            if to_optimal is not None or replays == cap:
                break
            index = int(sample_uniform(buffer, 1, rng)[0])
        else:
            criteria = oracle_criteria(buffer, oracle, q, agent)
            if to_quiescence is None and not criteria.any():
                to_quiescence = replays
            if (to_optimal is not None and to_quiescence is not None) or replays == cap:
                break
            index = int(argmax_tiebreak(criteria))
        q, _ = q_update(q, buffer[index], agent)
    if to_optimal is None:
        logger.warning("n=%d %s seed %d: no optimal policy after %d replays",
                       n, strategy.value, seed, cap)
    return LinearOutcome(n, strategy, seed, to_optimal, to_quiescence)


def _linear_point(n: int, strategy: ReplayStrategy, seeds, spec: LinearSpec) -> list[LinearOutcome]:
    return [replay_linear(n, strategy, seed, spec) for seed in seeds]


def linear_reference(n: int, strategy: ReplayStrategy) -> int:
    """closed-form replay count each strategy is expected to need"""
    return {
        ReplayStrategy.ORACLE_EVB: n,
        ReplayStrategy.ORACLE_TD: 4 * n,
        ReplayStrategy.UNIFORM: 4 * n * n,
    }[ReplayStrategy(strategy)]


def summarize_linear(outcomes: list[LinearOutcome]) -> list[dict]:
    """one row per (n, strategy)"""
    points = {}
    for outcome in outcomes:
        points.setdefault((outcome.n, outcome.strategy), []).append(outcome)
    rows = []
    for (n, strategy), group in points.items():
        optimal = [o.replays_to_optimal for o in group if not o.failed]
        quiescent = [o.replays_to_quiescence for o in group if o.replays_to_quiescence is not None]
        rows.append({
            'n': n,
            'strategy': strategy.value,
            'seeds': len(group),
            'failures': len(group) - len(optimal),
            'mean_to_optimal': float(np.mean(optimal)) if optimal else None,
            'std_to_optimal': float(np.std(optimal)) if optimal else None,
            'min_to_optimal': min(optimal) if optimal else None,
            'max_to_optimal': max(optimal) if optimal else None,
            'mean_to_quiescence': float(np.mean(quiescent)) if quiescent else None,
            'reference': linear_reference(n, strategy),
        })
    return rows


def _blank(value):
    return '' if value is None else value


def run_linear_comparison(spec: LinearSpec, seeds, out_dir: Path | None = None,
                          workers: int = 1) -> list[dict]:
    """
    Replay counts for every (n, strategy) pair over the given seeds.

    Writes linear_counts.csv (one row per seed) and linear_summary.csv when
    out_dir is given, and returns the summary rows.
    """
    tasks = [(n, strategy, tuple(seeds), spec) for n in spec.n_values for strategy in spec.strategies]
    outcomes = [o for point in _map_seeds(_linear_point, tasks, workers) for o in point]
    summary = summarize_linear(outcomes)
    for row in summary:
        logger.info("n=%d %s: mean %s replays to optimal (reference %d), %d failures",
                    row['n'], row['strategy'], row['mean_to_optimal'], row['reference'],
                    row['failures'])
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / 'linear_counts.csv', LINEAR_COUNT_COLUMNS, (
            (o.n, o.strategy.value, o.seed, _blank(o.replays_to_optimal),
             _blank(o.replays_to_quiescence), o.failed)
            for o in outcomes))
        write_csv(out_dir / 'linear_summary.csv', LINEAR_SUMMARY_COLUMNS,
                  ([_blank(row[c]) for c in LINEAR_SUMMARY_COLUMNS] for row in summary))
    return summary


# maze


def run_maze(cfg: ExperimentConfig, seed: int, out_dir: Path,
             tolerance: float = DEFAULT_TOLERANCE) -> SeedResult:
    """
    Tabular training on the maze: one online update per environment step
    followed by replays_per_step uniform replays, every update logged.
    """
    out_dir = Path(out_dir)
    env = Maze(cfg.env)
    agent = cfg.agent
    flavor = agent.flavor.metric_flavor
    if agent.flavor.is_soft:
        update, update_cfg = soft_q_update, agent.soft_config(cfg.env.gamma)
    else:
        update, update_cfg = q_update, agent.q_config(cfg.env.gamma)
    policy = agent.behavior()
    streams = make_streams(seed)
    buffer = ReplayBuffer(cfg.replay.capacity)
    q = QTable.zeros(env.state_count, env.action_count)
    trace_path = out_dir / f'trace_seed{seed}.csv'
    result = SeedResult(seed, cfg.kind.value, agent.flavor.value, cfg.replay.strategy.value,
                        trace_path.name)
    success_limit = cfg.env.success_factor * env.shortest_path_length()
    curve = []

    def learn(q: QTable, e: Experience, step: int, episode: int, writer: TraceWriter) -> QTable:
        q_new, _ = update(q, e, update_cfg)
        record = metric_record_tabular(q, q_new, e, flavor, update_cfg)
        writer.write(TraceRow.from_record(step, episode, env.encode(e.state), e.action,
                                          e.reward, record))
        return q_new

    logger.info("maze %s seed %d: %d steps", agent.flavor.value, seed, cfg.total_steps)
    with TraceWriter(trace_path, tolerance) as writer:
        state = env.reset(streams.env)
        episode, episode_steps, episode_return = 1, 0, 0.0
        for step in range(cfg.total_steps):
            action = behavior_action(q, state, policy, step, streams.action)
            outcome = env.step(action)
            e = Experience(state, action, outcome.reward, outcome.next_state, outcome.terminal)
            q = learn(q, e, step, episode, writer)
            buffer.push(e)
            for _ in range(cfg.replay.replays_per_step):
                replayed = buffer[int(sample_uniform(buffer, 1, streams.replay)[0])]
                q = learn(q, replayed, step, episode, writer)
            episode_steps += 1
            episode_return += outcome.reward
            if outcome.terminal or episode_steps >= cfg.env.max_episode_steps:
                success = outcome.terminal and episode_steps <= success_limit
                curve.append((episode, step + 1, episode_steps, episode_return, outcome.terminal,
                              success))
                logger.debug("seed %d episode %d: %d steps, return %.3f",
                             seed, episode, episode_steps, episode_return)
                state = env.reset(streams.env)
                episode, episode_steps, episode_return = episode + 1, 0, 0.0
            else:
                state = outcome.next_state
    result.absorb(writer)
    result.episodes = len(curve)
    write_csv(out_dir / f'curve_seed{seed}.csv', CURVE_COLUMNS, curve)

    late = [row[-1] for row in curve if row[1] > 0.9 * cfg.total_steps]
    result.success_rate_final = sum(late) / len(late) if late else None

    if agent.flavor.is_soft and cfg.replay.snapshot_size and len(buffer):
        rows = []
        for index in streams.replay.integers(0, len(buffer), size=cfg.replay.snapshot_size):
            e = buffer[int(index)]
            record = metric_record_tabular(q, update(q, e, update_cfg)[0], e, flavor, update_cfg)
            rows.append((record.upper_bound, abs(record.td), record.rho_max,
                         env.encode(e.state), e.action))
        write_csv(out_dir / f'snapshot_seed{seed}.csv', SNAPSHOT_COLUMNS,
                  sorted(rows, key=lambda r: -r[0]))

    logger.info("maze %s seed %d: %d episodes, final success rate %s, %d records, %d violating",
                agent.flavor.value, seed, result.episodes, result.success_rate_final,
                result.records, result.violating_records)
    return result


# cart-pole


def evaluate_policy(params: MlpParams, env_cfg: CartPoleConfig, soft: bool, beta: float,
                    episodes: int, rng: np.random.Generator) -> float:
    """mean return over full episodes, greedy or sampling from the softmax"""
    env = CartPole(env_cfg)
    returns = []
    for _ in range(episodes):
        state = env.reset(rng)
        total = 0.0
        while not env.done:
            q = forward(params, state)
            if soft:
                action = int(rng.choice(len(q), p=softmax(beta, q)))
            else:
                action = int(argmax_tiebreak(q))
            total += env.step(action).reward
        returns.append(total)
    return float(np.mean(returns))


def run_cartpole(cfg: ExperimentConfig, seed: int, out_dir: Path,
                 tolerance: float = DEFAULT_TOLERANCE) -> SeedResult:
    """
    DQN or soft DQN on cart-pole with uniform, PER or VER replay.

    Every sample of every minibatch is logged with its target-substituted
    metrics. Prioritised runs cross-check the priority of each sample
    against the logged record.
    """
    out_dir = Path(out_dir)
    env = CartPole(cfg.env)
    agent = cfg.agent
    update_cfg = agent.update
    flavor = agent.flavor.metric_flavor
    strategy = cfg.replay.strategy
    sampler = cfg.replay.sampler
    policy = agent.behavior()
    streams = make_streams(seed)
    params = init_params((4, *update_cfg.hidden, env.action_count), streams.init)
    target = params.copy()
    adam = AdamState.zeros_like(params) if update_cfg.optimizer == Optimizer.ADAM else None
    if strategy.prioritized:
        buffer = PrioritizedReplayBuffer(update_cfg.buffer_capacity, sampler)
    else:
        buffer = ReplayBuffer(update_cfg.buffer_capacity)
    trace_path = out_dir / f'trace_seed{seed}.csv'
    result = SeedResult(seed, cfg.kind.value, agent.flavor.value, strategy.value, trace_path.name)

    logger.info("cartpole %s/%s seed %d: %d steps", agent.flavor.value, strategy.value, seed,
                cfg.total_steps)
    with TraceWriter(trace_path, tolerance) as writer:
        state = env.reset(streams.env)
        episode = 1
        try:
            for step in range(cfg.total_steps):
                action = select_action(forward(params, state), policy, step, streams.action)
                outcome = env.step(action)
                buffer.push(Experience(state, action, outcome.reward, outcome.next_state,
                                       outcome.terminal))
                if len(buffer) >= update_cfg.batch:
                    bootstrap = target if update_cfg.target_sync_period else params
                    params = _train_step(params, bootstrap, buffer, step, episode, env, cfg,
                                         streams.replay, writer, result, adam)
                    if update_cfg.target_sync_period and (step + 1) % update_cfg.target_sync_period == 0:
                        target = params.copy()
                if env.done:
                    episode += 1
                    state = env.reset(streams.env)
                else:
                    state = outcome.next_state
                if (step + 1) % agent.eval_interval == 0:
                    mean_return = evaluate_policy(params, cfg.env, agent.flavor.is_soft,
                                                  update_cfg.beta, agent.eval_episodes,
                                                  streams.evaluation)
                    result.eval_returns.append((step + 1, mean_return))
                    logger.info("seed %d step %d: evaluation return %.1f",
                                seed, step + 1, mean_return)
        except DivergenceError as err:
            logger.error("cartpole seed %d diverged at episode %d: %s", seed, episode, err)
            result.error = str(err)
    result.absorb(writer)
    result.episodes = episode - 1
    write_csv(out_dir / f'eval_seed{seed}.csv', EVAL_COLUMNS, result.eval_returns)
    if result.error:
        return result
    if agent.checkpoint:
        save_checkpoint(params, out_dir / f'params_seed{seed}.bin')
    if agent.flavor.is_soft and cfg.replay.snapshot_size and len(buffer):
        indices = streams.replay.integers(0, len(buffer), size=cfg.replay.snapshot_size)
        batch = buffer.batch(indices)
        bootstrap = target if update_cfg.target_sync_period else params
        records = metrics_fa(params, batch, flavor, update_cfg, bootstrap)
        rows = [(r.upper_bound, abs(r.td), r.rho_max, env.encode(s), int(a))
                for r, s, a in zip(records, batch.states, batch.actions)]
        write_csv(out_dir / f'snapshot_seed{seed}.csv', SNAPSHOT_COLUMNS,
                  sorted(rows, key=lambda r: -r[0]))
    logger.info("cartpole seed %d: %d records, %d violating, %d priority mismatches",
                seed, result.records, result.violating_records, result.priority_mismatches)
    return result


def _train_step(params: MlpParams, bootstrap: MlpParams, buffer: ReplayBuffer, step: int,
                episode: int, env: CartPole, cfg: ExperimentConfig, rng: np.random.Generator,
                writer: TraceWriter, result: SeedResult,
                adam: AdamState | None = None) -> MlpParams:
    """sample, log, refresh priorities and apply one optimizer step"""
    update_cfg = cfg.agent.update
    flavor = cfg.agent.flavor.metric_flavor
    strategy = cfg.replay.strategy
    if strategy.prioritized:
        progress = step / max(cfg.total_steps - 1, 1)
        drawn = buffer.sample(update_cfg.batch, rng, cfg.replay.sampler.beta_is_at(progress))
        indices, weights = drawn.indices, drawn.weights
    else:
        indices = sample_uniform(buffer, update_cfg.batch, rng)
        weights = np.ones(len(indices))
    batch = buffer.batch(indices)
    records = metrics_fa(params, batch, flavor, update_cfg, bootstrap)
    if strategy.prioritized:
        raw = raw_priority_of(batch, strategy, FaSnapshot(params, bootstrap, flavor, update_cfg))
        logged = np.array([r.upper_bound if strategy == ReplayStrategy.VER else abs(r.td)
                           for r in records])
        mismatched = int(np.count_nonzero(np.abs(raw - logged) > PRIORITY_TOLERANCE))
        result.priority_checks += len(raw)
        if mismatched:
            logger.warning("step %d: %d priorities differ from the logged bound", step, mismatched)
            result.priority_mismatches += mismatched
        buffer.update_priorities(indices, shape_priority(raw, cfg.replay.sampler))
    if adam is None:
        params, _ = sgd_minibatch_update(params, batch, weights, update_cfg, flavor, bootstrap)
    else:
        params, _ = adam_minibatch_update(params, batch, weights, update_cfg, flavor, adam, bootstrap)
    for record, state, action, reward in zip(records, batch.states, batch.actions, batch.rewards):
        writer.write(TraceRow.from_record(step, episode, env.encode(state), action, reward, record))
    return params


# seeds and experiments


def _init_worker() -> None:
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'ver_lab.settings')
    django.setup()


def _map_seeds(fn, tasks: list[tuple], workers: int) -> list:
    """Run fn over tasks, in a process pool when there is more than one worker"""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)),
                             initializer=_init_worker) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path,
             tolerance: float = DEFAULT_TOLERANCE) -> SeedResult:
    """train one seed of a maze or cart-pole config"""
    if cfg.kind == ExperimentKind.MAZE:
        return run_maze(cfg, seed, out_dir, tolerance)
    if cfg.kind == ExperimentKind.CARTPOLE:
        return run_cartpole(cfg, seed, out_dir, tolerance)
    raise ValueError(f"{cfg.kind.value} experiments do not train per seed")


@dataclass
class ExperimentOutcome:
    """joined result of a config"""
    out_dir: Path
    seeds: list[SeedResult] = field(default_factory=list)
    linear: list[dict] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        """some seed aborted"""
        return any(r.status == SeedStatus.DIVERGED for r in self.seeds)

    @property
    def violated(self) -> bool:
        """some seed logged a broken invariant or a priority mismatch"""
        return any(r.status == SeedStatus.VIOLATION for r in self.seeds)


def run_experiment(cfg: ExperimentConfig, out_dir: Path, workers: int = 1,
                   tolerance: float = DEFAULT_TOLERANCE) -> ExperimentOutcome:
    """Run every seed of a config and write run.json next to the seed files"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcome = ExperimentOutcome(out_dir)
    if cfg.kind == ExperimentKind.LINEAR:
        outcome.linear = run_linear_comparison(cfg.env, cfg.seeds, out_dir, workers)
    else:
        tasks = [(cfg, seed, out_dir, tolerance) for seed in cfg.seeds]
        outcome.seeds = _map_seeds(run_seed, tasks, workers)
    manifest = {
        'name': cfg.name,
        'config': cfg.describe(),
        'tolerance': tolerance,
        'seeds': [r.as_dict() for r in outcome.seeds],
        'linear': outcome.linear,
    }
    with open(out_dir / 'run.json', 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
    return outcome


# reports


def verify_bounds(directory: Path, tolerance: float = DEFAULT_TOLERANCE) -> dict[str, BoundReport]:
    """Per-trace invariant report; raises TraceFormatError when there is nothing to check"""
    paths = trace_files(directory)
    if not paths:
        raise TraceFormatError(f"no trace files in {directory}")
    return {path.name: check_rows(iter_trace(path), tolerance) for path in paths}


def merge_reports(reports: dict[str, BoundReport]) -> BoundReport:
    """one report over every trace"""
    reports = list(reports.values())
    counts = {name: sum(r.counts[name] for r in reports) for name in reports[0].counts}
    max_excess = {name: max(r.max_excess[name] for r in reports) for name in reports[0].counts}
    return BoundReport(sum(r.records for r in reports), reports[0].tolerance, counts, max_excess,
                       sum(r.violating_records for r in reports))


def emit_summary(directory: Path) -> list[dict]:
    """
    Scatter data for every trace plus one summary row per seed and flavor.

    Writes scatter_seed<seed>.csv (one row per record) and summary.csv.
    """
    directory = Path(directory)
    rows = []
    for path in trace_files(directory):
        seed = int(path.stem.removeprefix('trace_seed'))
        tally = NonzeroTally()

        def tallied(trace):
            for row in trace:
                tally.add(row)
                yield row

        write_csv(directory / f'scatter_seed{seed}.csv', SCATTER_COLUMNS,
                  scatter_rows(tallied(iter_trace(path))))
        report = check_rows(iter_trace(path))
        for flavor, share in tally.fractions().items():
            rows.append({
                'seed': seed,
                'flavor': flavor,
                'records': share['records'],
                'violating_records': report.violating_records,
                'nonzero_evb': share['evb'],
                'nonzero_piv': share['piv'],
                'nonzero_eiv': share['eiv'],
            })
    write_csv(directory / 'summary.csv', SUMMARY_COLUMNS,
              ([row[c] for c in SUMMARY_COLUMNS] for row in rows))
    return rows
