import json
from pathlib import Path
import tempfile

from django.conf import settings
from django.test import SimpleTestCase

from experience.config import (AgentFlavor, ExperimentKind, LinearSpec, load_config, parse_config)
from experience.envs import MazeConfig
from experience.errors import ConfigError
from experience.metrics import MetricFlavor
from experience.replay import ReplayStrategy
from experience.tabular import BehaviorMode


class ParseConfigTests(SimpleTestCase):
    def test_maze_defaults(self):
        cfg = parse_config({'kind': 'maze'})
        self.assertEqual(cfg.kind, ExperimentKind.MAZE)
        self.assertEqual(cfg.total_steps, 10000)
        self.assertEqual(cfg.seeds, (0,))
        self.assertEqual(cfg.env, MazeConfig())
        self.assertEqual(cfg.agent.flavor, AgentFlavor.Q)
        self.assertEqual(cfg.agent.alpha, 1.0)
        self.assertEqual((cfg.agent.epsilon.start, cfg.agent.epsilon.end, cfg.agent.epsilon.horizon),
                         (1.0, 0.001, 10000))
        self.assertEqual(cfg.replay.strategy, ReplayStrategy.UNIFORM)
        self.assertEqual(cfg.replay.replays_per_step, 1)

    def test_soft_maze_behaves_by_softmax(self):
        cfg = parse_config({'kind': 'maze', 'agent': {'flavor': 'soft_q'}})
        self.assertEqual(cfg.agent.beta, 100.0)
        self.assertEqual(cfg.agent.behavior().mode, BehaviorMode.SOFTMAX)
        self.assertEqual(cfg.agent.flavor.metric_flavor, MetricFlavor.SOFT)

    def test_cartpole_defaults(self):
        cfg = parse_config({'kind': 'cartpole'})
        update = cfg.agent.update
        self.assertEqual(cfg.total_steps, 50000)
        self.assertEqual((update.learning_rate, update.batch, update.buffer_capacity, update.beta),
                         (0.005, 16, 1000, 0.5))
        self.assertEqual(update.hidden, (256, 256))
        self.assertEqual(update.total_steps, 50000)
        self.assertEqual(cfg.agent.epsilon.end, 0.01)
        self.assertEqual(cfg.agent.epsilon.horizon, 10000)
        self.assertEqual(cfg.agent.flavor.metric_flavor, MetricFlavor.FA_PLAIN)
        self.assertEqual(cfg.replay.sampler.alpha_exp, 0.6)

    def test_cartpole_overrides(self):
        cfg = parse_config({
            'kind': 'cartpole',
            'agent': {'flavor': 'soft_dqn', 'hidden': [32], 'beta': 0.25, 'eval_interval': 50},
            'replay': {'strategy': 'ver', 'capacity': 64, 'beta_is': 0.5},
            'total_steps': 300,
        })
        self.assertEqual(cfg.agent.update.hidden, (32,))
        self.assertEqual(cfg.agent.update.buffer_capacity, 64)
        self.assertEqual(cfg.agent.update.total_steps, 300)
        self.assertEqual(cfg.agent.eval_interval, 50)
        self.assertEqual(cfg.replay.strategy, ReplayStrategy.VER)
        self.assertEqual(cfg.replay.sampler.beta_is, 0.5)

    def test_linear(self):
        cfg = parse_config({'kind': 'linear', 'env': {'n_values': [3, 4]},
                            'replay': {'strategies': ['oracle_evb']}, 'seeds': 4})
        self.assertIsInstance(cfg.env, LinearSpec)
        self.assertEqual(cfg.env.n_values, (3, 4))
        self.assertEqual(cfg.env.strategies, (ReplayStrategy.ORACLE_EVB,))
        self.assertEqual(cfg.seeds, (0, 1, 2, 3))
        self.assertIsNone(cfg.agent)

    def test_seed_lists(self):
        self.assertEqual(parse_config({'kind': 'maze', 'seeds': [5, 2]}).seeds, (5, 2))
        for seeds in ([], [1, 1], [-1], 0, 'three', [True]):
            with self.assertRaises(ConfigError):
                parse_config({'kind': 'maze', 'seeds': seeds})

    def test_unknown_keys(self):
        with self.assertRaisesMessage(ConfigError, 'colour'):
            parse_config({'kind': 'maze', 'colour': 'red'})
        with self.assertRaisesMessage(ConfigError, 'temperature'):
            parse_config({'kind': 'maze', 'agent': {'flavor': 'soft_q', 'temperature': 1}})
        with self.assertRaises(ConfigError):
            parse_config({'kind': 'linear', 'env': {'walls': []}})

    def test_invalid_values(self):
        bad = [
            {'kind': 'atari'},
            {'kind': 'maze', 'total_steps': 0},
            {'kind': 'maze', 'agent': {'flavor': 'dqn'}},
            {'kind': 'maze', 'agent': {'flavor': 'q', 'alpha': 0.0}},
            {'kind': 'maze', 'env': {'gamma': 2.0}},
            {'kind': 'maze', 'env': {'success_factor': 0.5}},
            {'kind': 'maze', 'agent': {'flavor': 'q', 'epsilon_start': 0.5, 'epsilon_end': 0.0}},
            {'kind': 'maze', 'env': {'walls': [[[0, 0], [0, 1]], [[0, 0], [1, 0]]]}},
            {'kind': 'cartpole', 'agent': {'flavor': 'dqn', 'learning_rate': -1.0}},
            {'kind': 'cartpole', 'replay': {'strategy': 'oracle_td'}},
            {'kind': 'linear', 'env': {'n_values': [1]}},
            {'kind': 'linear', 'replay': {'strategies': ['per']}},
            [],
        ]
        for data in bad:
            with self.subTest(data=data), self.assertRaises(ConfigError):
                parse_config(data)

    def test_ver_needs_soft_agent(self):
        with self.assertRaisesMessage(ConfigError, 'soft_dqn'):
            parse_config({'kind': 'cartpole', 'agent': {'flavor': 'dqn'}, 'replay': {'strategy': 'ver'}})

    def test_overrides_and_describe(self):
        cfg = parse_config({'kind': 'maze'}).with_overrides(seeds=[7], output_dir='/tmp/x')
        self.assertEqual(cfg.seeds, (7,))
        self.assertEqual(cfg.output_dir, Path('/tmp/x'))
        described = cfg.describe()
        self.assertEqual(described['kind'], 'maze')
        self.assertEqual(described['agent']['flavor'], 'q')
        self.assertIn([[1, 0], [2, 0]], described['env']['walls'])


class LoadConfigTests(SimpleTestCase):
    def test_presets_load(self):
        presets = sorted(settings.VER_PRESET_DIR.glob('*.json'))
        self.assertGreaterEqual(len(presets), 7)
        for path in presets:
            with self.subTest(preset=path.name):
                cfg = load_config(path)
                self.assertEqual(cfg.name, path.stem)

    def test_preset_values(self):
        soft = load_config(settings.VER_PRESET_DIR / 'maze_soft.json')
        self.assertEqual(len(soft.seeds), 50)
        self.assertEqual(soft.agent.beta, 0.002)
        self.assertEqual(soft.env.success_factor, 2.0)
        ver = load_config(settings.VER_PRESET_DIR / 'cartpole_soft_ver.json')
        self.assertEqual(ver.replay.strategy, ReplayStrategy.VER)
        self.assertEqual(ver.agent.update.beta, 0.5)

    def test_bad_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'broken.json'
            path.write_text('{"kind": ', encoding='utf-8')
            with self.assertRaises(ConfigError):
                load_config(path)
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / 'absent.json')
            path.write_text(json.dumps({'kind': 'maze', 'seeds': 2}), encoding='utf-8')
            self.assertEqual(load_config(path).seeds, (0, 1))
