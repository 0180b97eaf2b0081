import itertools

import numpy as np
import pytest

from gnnplan.baselines import (dijkstra, graph_path, lazy_prm_plan, path_cost, path_is_valid,
                               prm_plan, rrt_star_plan)
from gnnplan.graph import Rgg, build_rgg
from gnnplan.world import BoxObstacle, PointWorld, ProblemInstance, default_resolution, segment_free


def all_valid(i, j):
    return True


def brute_shortest(rgg, valid, s, t):
    """Cheapest simple path by enumeration; ties keep the first found."""
    best = None
    others = [v for v in range(rgg.n_nodes) if v not in (s, t)]
    if s == t:
        return 0.0, (s,)
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            seq = (s,) + mid + (t,)
            ok = all(b in rgg.adjacency[a] and valid(a, b) for a, b in zip(seq[:-1], seq[1:]))
            if not ok:
                continue
            c = sum(rgg.edge_length(a, b) for a, b in zip(seq[:-1], seq[1:]))
            if best is None or c < best[0] - 1e-12:
                best = (c, seq)
    return best


def random_graph(rng):
    n = int(rng.integers(2, 9))
    pts = rng.uniform(0, 1, size=(n, 2))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    blocked = {e for e in pairs if rng.random() < 0.2}
    return Rgg(pts, tuple(pairs), 2.0), blocked


class TestDijkstra:
    def test_source_is_target(self):
        g = Rgg(np.zeros((2, 2)), (), 1.0)
        p = dijkstra(g, all_valid, 1, 1)
        assert p.nodes == (1,) and p.cost == 0.0

    def test_triangle(self):
        g = Rgg(np.array([[0, 0], [1, 0], [0.5, 2]]), ((0, 1), (0, 2), (1, 2)), 3.0)
        p = dijkstra(g, all_valid, 0, 1)
        assert p.nodes == (0, 1) and p.cost == 1.0

    def test_unreachable(self):
        g = Rgg(np.zeros((3, 2)), ((0, 1),), 1.0)
        assert dijkstra(g, all_valid, 0, 2) is None

    def test_respects_oracle(self):
        g = Rgg(np.array([[0, 0], [1, 0], [0.5, 2]]), ((0, 1), (0, 2), (1, 2)), 3.0)
        p = dijkstra(g, lambda i, j: {i, j} != {0, 1}, 0, 1)
        assert p.nodes == (0, 2, 1)

    def test_tie_break_smaller_predecessor(self):
        # 0 -> {1,2} -> 3 with equal costs; predecessor 1 wins
        pts = np.array([[0, 0], [1, 1], [1, -1], [2, 0]], dtype=float)
        g = Rgg(pts, ((0, 1), (0, 2), (1, 3), (2, 3)), 2.0)
        assert dijkstra(g, all_valid, 0, 3).nodes == (0, 1, 3)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            g, blocked = random_graph(rng)
            valid = lambda i, j: (min(i, j), max(i, j)) not in blocked  # noqa: E731
            got = dijkstra(g, valid, 0, 1)
            want = brute_shortest(g, valid, 0, 1)
            if want is None:
                assert got is None
                continue
            assert got.cost == pytest.approx(want[0], abs=1e-12)
            assert path_cost(g.nodes[list(got.nodes)]) == pytest.approx(want[0], abs=1e-12)
            # ties are measure-zero with random coordinates, so the paths agree
            assert got.nodes == want[1]


def empty_problem():
    return ProblemInstance(PointWorld(2, ((0, 0), (1, 1))), (0.1, 0.1), (0.9, 0.9))


class TestPrm:
    def test_empty_world_checks_all(self, rng):
        p = empty_problem()
        g = build_rgg(p, 100, 0.25, rng)
        r = prm_plan(p, g)
        assert r.success and r.edge_checks == g.n_edges
        assert path_is_valid(p, r.path)
        assert r.path.nodes[0] == 0 and r.path.nodes[-1] == 1

    def test_disconnected(self, rng):
        p = empty_problem()
        g = build_rgg(p, 5, 0.05, rng)
        r = prm_plan(p, g)
        assert not r.success and r.edge_checks == g.n_edges
        assert r.cost is None

    def test_gap_world_success_rate(self, wall_problem):
        ok = 0
        for seed in range(50):
            g = build_rgg(wall_problem, 200, 0.15, np.random.default_rng(seed))
            r = prm_plan(wall_problem, g)
            ok += r.success
            if r.success:
                assert path_is_valid(wall_problem, r.path)
        assert ok / 50 >= 0.95


class TestLazyPrm:
    def test_empty_world(self, rng):
        p = empty_problem()
        g = build_rgg(p, 100, 0.25, rng)
        r = lazy_prm_plan(p, g)
        assert r.success
        assert r.edge_checks == len(r.path.nodes) - 1

    def test_blocked(self, rng):
        world = PointWorld(2, ((0, 0), (1, 1)), (BoxObstacle((0.5, 0.5), (0.02, 0.6)),))
        p = ProblemInstance(world, (0.1, 0.5), (0.9, 0.5))
        g = build_rgg(p, 80, 0.3, rng)
        r = lazy_prm_plan(p, g)
        assert not r.success
        assert r.edge_checks <= g.n_edges

    def test_never_cheaper_than_prm_and_valid(self):
        rng = np.random.default_rng(11)
        for k in range(100):
            obs = [BoxObstacle(tuple(rng.uniform(0.2, 0.8, 2)), tuple(rng.uniform(0.03, 0.15, 2)))
                   for _ in range(int(rng.integers(0, 5)))]
            world = PointWorld(2, ((0, 0), (1, 1)), tuple(obs))
            p = ProblemInstance(world, (0.02, 0.02), (0.98, 0.98))
            g = build_rgg(p, 60, 0.25, rng)
            lazy, full = lazy_prm_plan(p, g), prm_plan(p, g)
            assert lazy.edge_checks <= full.edge_checks
            assert lazy.success == full.success
            if lazy.success:
                res = default_resolution(world)
                from gnnplan.world import CollisionCounter
                for a, b in zip(lazy.path.nodes[:-1], lazy.path.nodes[1:]):
                    assert segment_free(world, g.nodes[a], g.nodes[b], res, CollisionCounter())
                assert lazy.cost == pytest.approx(full.cost, abs=1e-12)


class TestRrtStar:
    def test_goal_within_step(self):
        p = ProblemInstance(PointWorld(2, ((0, 0), (1, 1))), (0.5, 0.5), (0.55, 0.5))
        for seed in range(50):
            r = rrt_star_plan(p, 100, 0.1, np.random.default_rng(seed))
            assert r.success
            assert path_is_valid(p, r.path)

    def test_blocked_goal(self):
        world = PointWorld(2, ((0, 0), (1, 1)), (BoxObstacle((0.9, 0.5), (0.05, 0.6)),))
        p = ProblemInstance(world, (0.1, 0.5), (0.98, 0.5))
        r = rrt_star_plan(p, 200, 0.1, np.random.default_rng(0))
        assert not r.success and r.cost is None

    def test_gap_world(self, wall_problem):
        ok = 0
        for seed in range(50):
            r = rrt_star_plan(wall_problem, 2000, 0.1, np.random.default_rng(seed))
            ok += r.success
            if r.success:
                assert path_is_valid(wall_problem, r.path)
                assert r.path.cost == pytest.approx(path_cost(r.path.states))
        assert ok / 50 >= 0.9

    def test_deterministic(self, wall_problem):
        a = rrt_star_plan(wall_problem, 500, 0.1, np.random.default_rng(3))
        b = rrt_star_plan(wall_problem, 500, 0.1, np.random.default_rng(3))
        assert a.success == b.success and a.edge_checks == b.edge_checks
        if a.success:
            assert np.array_equal(a.path.states, b.path.states)


def test_graph_path_cost():
    g = Rgg(np.array([[0, 0], [3, 4], [3, 0]], dtype=float), ((0, 2), (1, 2)), 5.0)
    p = graph_path(g, [0, 2, 1])
    assert p.cost == 7.0 and p.n_waypoints == 3
