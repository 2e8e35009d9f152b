from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
import numpy as np

from experience.envs import Experience, ExperienceBatch, LinearGridConfig, Move, enumerate_linear_buffer
from experience.errors import ConfigError, DomainError, EmptyBufferError
from experience.funcapprox import FaSnapshot, FaUpdateConfig, init_params, metrics_fa
from experience.metrics import MetricFlavor
from experience.replay import (OracleCriterion, PrioritizedReplayBuffer, PrioritySamplerConfig,
                               ReplayBuffer, ReplayStrategy, SumTree, buffer_push, is_weights,
                               oracle_criteria, priority_of, raw_priority_of, sample_greedy_oracle,
                               sample_uniform, shape_priority, sumtree_sample, sumtree_update)
from experience.tabular import QAgentConfig, QTable, q_update

# upper 0.1% point of chi-square with 63 degrees of freedom
CHI2_63_P001 = 103.44


def linear_buffer(n: int) -> ReplayBuffer:
    buffer = ReplayBuffer(4 * n)
    for e in enumerate_linear_buffer(LinearGridConfig(n=n)):
        buffer_push(buffer, e)
    return buffer


class ReplayBufferTests(SimpleTestCase):
    def test_evicts_oldest(self):
        buffer = ReplayBuffer(3)
        slots = [buffer.push(Experience(i, 0, 0.0, i, False)) for i in range(4)]
        self.assertEqual(slots, [0, 1, 2, 0])
        self.assertEqual(len(buffer), 3)
        self.assertEqual([e.state for e in buffer.entries], [3, 1, 2])

    def test_stacked_cache_refreshes_on_push(self):
        buffer = ReplayBuffer(4)
        buffer.push(Experience(0, 0, 0.0, 1, False))
        self.assertEqual(len(buffer.stacked()), 1)
        buffer.push(Experience(1, 0, 0.0, 2, False))
        self.assertEqual(len(buffer.stacked()), 2)

    def test_capacity_check(self):
        with self.assertRaises(ConfigError):
            ReplayBuffer(0)

    def test_uniform_sampling(self):
        buffer = linear_buffer(3)
        indices = sample_uniform(buffer, 5000, np.random.default_rng(0))
        self.assertEqual(indices.min(), 0)
        self.assertEqual(indices.max(), 11)
        with self.assertRaises(EmptyBufferError):
            sample_uniform(ReplayBuffer(2), 1, np.random.default_rng(0))


class GreedyOracleTests(SimpleTestCase):
    def setUp(self):
        self.buffer = linear_buffer(5)
        self.cfg = QAgentConfig(alpha=1.0, gamma=0.99)

    def test_first_pick_is_goal_entry(self):
        q = QTable.zeros(6, 4)
        goal_slot = 4 * 4 + Move.EAST
        for criterion in OracleCriterion:
            self.assertEqual(sample_greedy_oracle(self.buffer, criterion, q, self.cfg), goal_slot)

    def test_evb_oracle_walks_backwards(self):
        q = QTable.zeros(6, 4)
        picked = []
        for _ in range(5):
            slot = sample_greedy_oracle(self.buffer, OracleCriterion.ABS_EVB, q, self.cfg)
            picked.append(slot)
            q, _ = q_update(q, self.buffer[slot], self.cfg)
        self.assertEqual(picked, [4 * s + Move.EAST for s in (4, 3, 2, 1, 0)])
        self.assertFalse(oracle_criteria(self.buffer, OracleCriterion.ABS_EVB, q, self.cfg).any())

    def test_td_criterion_matches_td_errors(self):
        q = QTable(np.random.default_rng(1).normal(size=(6, 4)))
        q.values[5] = 0.0
        criteria = oracle_criteria(self.buffer, OracleCriterion.ABS_TD, q, self.cfg)
        for slot, e in enumerate(self.buffer.entries):
            target = e.reward + (0.0 if e.terminal else 0.99 * q.values[e.next_state].max())
            self.assertAlmostEqual(criteria[slot], abs(target - q.values[e.state, e.action]), places=12)

    def test_empty(self):
        with self.assertRaises(EmptyBufferError):
            sample_greedy_oracle(ReplayBuffer(2), OracleCriterion.ABS_TD, QTable.zeros(1, 4), self.cfg)


class SumTreeTests(SimpleTestCase):
    def test_prefix_lookup(self):
        tree = SumTree(2)
        sumtree_update(tree, 0, 1.0)
        sumtree_update(tree, 1, 3.0)
        self.assertEqual(tree.total, 4.0)
        self.assertEqual(sumtree_sample(tree, 0.5), 0)
        self.assertEqual(sumtree_sample(tree, 2.5), 1)

    def test_padding_is_never_sampled(self):
        tree = SumTree(3)
        for leaf in range(3):
            tree.update(leaf, 1.0)
        self.assertEqual(tree.sample(np.nextafter(3.0, 0.0)), 2)
        self.assertEqual(tree.sample(3.0), 2)

    def test_zero_priority_leaf_is_skipped(self):
        tree = SumTree(3)
        tree.update(0, 1.0)
        tree.update(2, 1.0)
        self.assertEqual(tree.sample(1.0), 2)

    def test_total_tracks_updates(self):
        tree = SumTree(5)
        rng = np.random.default_rng(2)
        priorities = rng.uniform(0, 3, size=5)
        for leaf, p in enumerate(priorities):
            tree.update(leaf, p)
        tree.update(3, 0.25)
        priorities[3] = 0.25
        self.assertAlmostEqual(tree.total, priorities.sum(), places=12)
        self.assertEqual(tree.leaf(3), 0.25)

    def test_errors(self):
        tree = SumTree(2)
        with self.assertRaises(EmptyBufferError):
            tree.sample(0.0)
        with self.assertRaises(DomainError):
            tree.update(2, 1.0)
        with self.assertRaises(DomainError):
            tree.update(0, -1.0)
        with self.assertRaises(DomainError):
            tree.update(0, float('nan'))

    def test_batched_sampling_matches_single_lookups(self):
        rng = np.random.default_rng(8)
        tree = SumTree(37)
        for leaf in range(37):
            tree.update(leaf, float(rng.uniform(0.0, 5.0)) if leaf % 5 else 0.0)
        prefixes = np.append(rng.uniform(0.0, tree.total, size=500), [0.0, np.nextafter(tree.total, 0.0)])
        np.testing.assert_array_equal(tree.sample_many(prefixes), [tree.sample(p) for p in prefixes])
        with self.assertRaises(DomainError):
            tree.sample_many([-1.0])

    def test_sampling_is_proportional(self):
        tree = SumTree(64)
        priorities = np.arange(1, 65, dtype=np.float64)
        for leaf, p in enumerate(priorities):
            tree.update(leaf, p)
        rng = np.random.default_rng(7)
        draws = 1_000_000
        counts = np.bincount(tree.sample_many(rng.uniform(0.0, tree.total, size=draws)), minlength=64)
        expected = draws * priorities / priorities.sum()
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        self.assertLess(chi2, CHI2_63_P001)


class ImportanceWeightTests(SimpleTestCase):
    def test_worked_example(self):
        np.testing.assert_allclose(is_weights([0.75, 0.25], 2, 1.0), [1 / 3, 1.0])

    def test_no_correction(self):
        np.testing.assert_array_equal(is_weights([0.1, 0.6, 0.3], 3, 0.0), [1.0, 1.0, 1.0])

    @given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=32),
           st.floats(min_value=0.0, max_value=1.0))
    def test_largest_weight_is_one(self, probabilities, beta_is):
        weights = is_weights(probabilities, 100, beta_is)
        self.assertAlmostEqual(weights.max(), 1.0, places=12)
        self.assertTrue(np.all(weights > 0.0))

    def test_annealing(self):
        sampler = PrioritySamplerConfig()
        self.assertEqual(sampler.beta_is_at(0.0), 0.4)
        self.assertAlmostEqual(sampler.beta_is_at(0.5), 0.7)
        self.assertEqual(sampler.beta_is_at(1.0), 1.0)
        self.assertEqual(sampler.beta_is_at(2.0), 1.0)

    def test_sampler_checks(self):
        with self.assertRaises(ConfigError):
            PrioritySamplerConfig(alpha_exp=1.5)
        with self.assertRaises(ConfigError):
            PrioritySamplerConfig(epsilon_prio=0.0)


class PrioritizedBufferTests(SimpleTestCase):
    def setUp(self):
        self.buffer = PrioritizedReplayBuffer(4, PrioritySamplerConfig())
        for i in range(4):
            self.buffer.push(Experience(np.full(4, float(i)), i % 2, 1.0, np.zeros(4), False))

    def test_new_entries_take_max_priority(self):
        self.assertEqual([self.buffer.tree.leaf(i) for i in range(4)], [1.0] * 4)
        self.buffer.update_priorities([0], [5.0])
        self.assertEqual(self.buffer.max_priority, 5.0)
        slot = self.buffer.push(Experience(np.ones(4), 0, 1.0, np.zeros(4), False))
        self.assertEqual(slot, 0)
        self.assertEqual(self.buffer.tree.leaf(0), 5.0)

    def test_sampling_follows_priorities(self):
        self.buffer.update_priorities([0, 1, 2, 3], [1.0, 2.0, 3.0, 4.0])
        rng = np.random.default_rng(3)
        counts = np.zeros(4)
        for _ in range(2000):
            drawn = self.buffer.sample(10, rng, 0.4)
            counts += np.bincount(drawn.indices, minlength=4)
            np.testing.assert_allclose(drawn.probabilities,
                                       (drawn.indices + 1) / 10.0)
            self.assertEqual(drawn.weights.max(), 1.0)
        np.testing.assert_allclose(counts / counts.sum(), [0.1, 0.2, 0.3, 0.4], atol=0.01)

    def test_empty(self):
        with self.assertRaises(EmptyBufferError):
            PrioritizedReplayBuffer(2, PrioritySamplerConfig()).sample(1, np.random.default_rng(0), 0.4)


class PriorityTests(SimpleTestCase):
    def snapshot(self, seed: int, flavor: MetricFlavor) -> tuple[FaSnapshot, ExperienceBatch]:
        rng = np.random.default_rng(seed)
        cfg = FaUpdateConfig(beta=0.5, hidden=(8,))
        params = init_params((4, 8, 2), rng)
        target = init_params((4, 8, 2), rng)
        experiences = [
            Experience(rng.normal(scale=0.5, size=4), int(rng.integers(2)), float(rng.integers(2)),
                       rng.normal(scale=0.5, size=4), bool(rng.random() < 0.1))
            for _ in range(32)
        ]
        return FaSnapshot(params, target, flavor, cfg), ExperienceBatch.stack(experiences)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    def test_ver_priority_is_the_logged_upper_bound(self, seed):
        snapshot, batch = self.snapshot(seed, MetricFlavor.FA_SOFT)
        records = metrics_fa(snapshot.params, batch, snapshot.flavor, snapshot.cfg,
                             snapshot.target_params)
        ver = raw_priority_of(batch, ReplayStrategy.VER, snapshot)
        per = raw_priority_of(batch, ReplayStrategy.PER, snapshot)
        np.testing.assert_allclose(ver, [r.upper_bound for r in records], rtol=0, atol=1e-12)
        np.testing.assert_allclose(per, [abs(r.td) for r in records], rtol=0, atol=1e-12)
        self.assertTrue(np.all(ver <= per + 1e-15))

    def test_ver_needs_soft_agent(self):
        snapshot, batch = self.snapshot(0, MetricFlavor.FA_PLAIN)
        with self.assertRaises(ConfigError):
            raw_priority_of(batch, ReplayStrategy.VER, snapshot)
        raw_priority_of(batch, ReplayStrategy.PER, snapshot)

    def test_single_experience_matches_batch(self):
        snapshot, batch = self.snapshot(1, MetricFlavor.FA_SOFT)
        sampler = PrioritySamplerConfig()
        shaped = priority_of(batch, ReplayStrategy.VER, snapshot, sampler)
        first = Experience(batch.states[0], int(batch.actions[0]), float(batch.rewards[0]),
                           batch.next_states[0], bool(batch.terminals[0]))
        single = priority_of(first, ReplayStrategy.VER, snapshot, sampler)
        self.assertIsInstance(single, float)
        self.assertAlmostEqual(single, shaped[0], places=12)

    def test_shaping(self):
        sampler = PrioritySamplerConfig(alpha_exp=0.5, epsilon_prio=1e-6)
        np.testing.assert_allclose(shape_priority(np.array([0.0, 4.0]), sampler),
                                   [1e-3, np.sqrt(4.0 + 1e-6)])
        uniform = PrioritySamplerConfig(alpha_exp=0.0)
        np.testing.assert_array_equal(shape_priority(np.array([0.0, 9.0]), uniform), [1.0, 1.0])
