import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashsmc.estimation import (EstimationCache, StaleCacheError, SyntheticGame, UtilityEstimate,
                                cache_get_or_estimate, estimate_utility, open_cache, pair_key)
from nashsmc.game import StrategySpace, StrategyError
from nashsmc.protocols import build_aloha

SPACE = StrategySpace("p", (0.1, 0.5, 0.9))


def game(q=0.3):
    return SyntheticGame(SPACE, {(a, b): q for a in SPACE for b in SPACE})


class TestUtilityEstimate:
    def test_fields(self):
        e = UtilityEstimate(30, 100, 0.1, 0.5)
        assert e.estimate() == 0.3 and e.violations == 70
        assert e.stderr() == pytest.approx((0.3 * 0.7 / 100) ** 0.5)

    @pytest.mark.parametrize("k,n", [(5, 0), (-1, 10), (11, 10)])
    def test_invalid(self, k, n):
        with pytest.raises(ValueError):
            UtilityEstimate(k, n, 0, 0)


class TestEstimates:
    def test_phase_domains_disjoint(self):
        assert pair_key(1, 0.1, 0.5) != pair_key(2, 0.1, 0.5)

    @settings(max_examples=20)
    @given(st.integers(1, 3000), st.integers(0, 2**31))
    def test_chunking_invariant(self, n, seed):
        g = game(0.37)
        whole = g.run_chunk(1, 0.1, 0.5, 0, n, seed)
        cut = n // 3
        parts = g.run_chunk(1, 0.1, 0.5, 0, cut, seed) + g.run_chunk(1, 0.1, 0.5, cut, n - cut, seed)
        assert list(whole) == list(parts)

    def test_simulation_chunking_invariant(self):
        cfg = build_aloha(2)
        from nashsmc.estimation import SimulationSource
        src = SimulationSource(cfg)
        whole = src.run_chunk(1, 0.5, 0.5, 0, 500, 4)
        parts = src.run_chunk(1, 0.5, 0.5, 0, 123, 4) + src.run_chunk(1, 0.5, 0.5, 123, 377, 4)
        assert list(whole) == list(parts)

    def test_synthetic_mean(self):
        e = estimate_utility(game(0.3), 0.1, 0.9, 20_000, 1)
        assert abs(e.estimate() - 0.3) < 4 * (0.21 / 20_000) ** 0.5

    def test_unknown_strategy(self):
        with pytest.raises(StrategyError):
            estimate_utility(game(), 0.2, 0.5, 10, 0)

    def test_table_must_be_complete(self):
        with pytest.raises(ValueError):
            SyntheticGame(SPACE, {(0.1, 0.1): 0.5})


class TestCache:
    def test_hit_and_supersede(self, tmp_path):
        g = game()
        path = tmp_path / "c.jsonl"
        c = open_cache(g, 3, path)
        a = cache_get_or_estimate(c, g, 0.1, 0.5, 100)
        assert cache_get_or_estimate(c, g, 0.1, 0.5, 50) is a
        b = cache_get_or_estimate(c, g, 0.1, 0.5, 400)
        assert b.n == 400
        again = EstimationCache(g.fingerprint(), 3, path)
        assert again.get(1, 0.1, 0.5) == b and len(again) == 1

    def test_stale_fingerprint(self, tmp_path):
        path = tmp_path / "c.jsonl"
        open_cache(game(0.3), 0, path)
        with pytest.raises(StaleCacheError):
            open_cache(game(0.4), 0, path)

    def test_stale_seed(self, tmp_path):
        path = tmp_path / "c.jsonl"
        open_cache(game(), 0, path)
        with pytest.raises(StaleCacheError):
            open_cache(game(), 1, path)

    def test_torn_last_line_dropped(self, tmp_path):
        g = game()
        path = tmp_path / "c.jsonl"
        c = open_cache(g, 0, path)
        cache_get_or_estimate(c, g, 0.1, 0.1, 10)
        cache_get_or_estimate(c, g, 0.5, 0.1, 10)
        text = path.read_text()
        path.write_text(text[:-7])
        again = open_cache(g, 0, path)
        assert len(again) == 1

    def test_corrupt_middle_line(self, tmp_path):
        g = game()
        path = tmp_path / "c.jsonl"
        c = open_cache(g, 0, path)
        for q in SPACE:
            cache_get_or_estimate(c, g, q, 0.1, 10)
        lines = path.read_text().splitlines()
        lines[2] = "{oops"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(StaleCacheError):
            open_cache(g, 0, path)

    def test_phases_kept_apart(self):
        g = game()
        c = open_cache(g, 0)
        cache_get_or_estimate(c, g, 0.1, 0.5, 10, phase=1)
        assert c.get(2, 0.1, 0.5) is None
        cache_get_or_estimate(c, g, 0.1, 0.5, 10, phase=2)
        assert len(c) == 2

    def test_lines_are_json(self, tmp_path):
        g = game()
        path = tmp_path / "c.jsonl"
        c = open_cache(g, 0, path)
        cache_get_or_estimate(c, g, 0.9, 0.1, 10)
        head, line = [json.loads(x) for x in path.read_text().splitlines()]
        assert head == {"format": 1, "fingerprint": g.fingerprint(), "seed": 0}
        assert line["phase"] == 1 and line["n"] == 10
