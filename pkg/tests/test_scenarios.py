"""Perturbation, contingency enumeration and dataset pipeline tests."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from gridmae.errors import EmptyOutput, InvalidRef, ValidationError
from gridmae.network import BusType, injection_mismatch
from gridmae.scenarios import (
    ContingencySpec,
    LoadScale,
    PerturbConfig,
    Rejected,
    TopologyDrop,
    branch_candidates,
    enumerate_contingencies,
    generate_dataset,
    load_dataset,
    perturb_load,
    perturb_topology,
    sample_from_record,
    sample_to_record,
    topology_hash,
)


def uniform_cfg(lo, hi, seed=0, **kwargs) -> PerturbConfig:
    return PerturbConfig(
        load_scale=LoadScale(kind="uniform", lo=lo, hi=hi), seed=seed, **kwargs
    )


class TestPerturbLoad:
    def test_degenerate_distribution_is_identity(self, case14_grid):
        out = perturb_load(case14_grid, uniform_cfg(1.0, 1.0), draw=3)
        assert out == case14_grid

    def test_factor_mean_close_to_one(self, two_bus_grid):
        cfg = uniform_cfg(0.8, 1.2, seed=11)
        base = two_bus_grid.buses[1].p_set
        factors = [
            perturb_load(two_bus_grid, cfg, draw=d).buses[1].p_set / base
            for d in range(10_000)
        ]
        assert abs(np.mean(factors) - 1.0) < 0.01

    def test_deterministic_in_seed_and_draw(self, case14_grid):
        cfg = uniform_cfg(0.8, 1.2, seed=5)
        a = perturb_load(case14_grid, cfg, draw=7)
        b = perturb_load(case14_grid, cfg, draw=7)
        assert a == b
        c = perturb_load(case14_grid, cfg, draw=8)
        assert a != c

    def test_only_load_buses_touched(self, case14_grid):
        out = perturb_load(case14_grid, uniform_cfg(0.5, 0.9, seed=1), draw=0)
        for before, after in zip(case14_grid.buses, out.buses):
            if before.type is BusType.LOAD:
                assert after.p_set != before.p_set or before.p_set == 0.0
            else:
                assert after == before

    def test_q_tracks_p(self, case14_grid):
        cfg = uniform_cfg(0.5, 0.9, seed=2, q_tracks_p=True)
        out = perturb_load(case14_grid, cfg, draw=0)
        for i, (before, after) in enumerate(zip(case14_grid.buses, out.buses)):
            if before.type is BusType.LOAD and before.p_set != 0.0:
                assert after.q_set / before.q_set == pytest.approx(
                    after.p_set / before.p_set
                ) or before.q_set == 0.0

    def test_q_fixed_when_not_tracking(self, case14_grid):
        cfg = uniform_cfg(0.5, 0.9, seed=2, q_tracks_p=False)
        out = perturb_load(case14_grid, cfg, draw=0)
        for before, after in zip(case14_grid.buses, out.buses):
            assert after.q_set == before.q_set

    def test_shared_factor(self, case14_grid):
        cfg = uniform_cfg(0.5, 0.9, seed=3, shared_factor=True)
        out = perturb_load(case14_grid, cfg, draw=0)
        ratios = {
            round(after.p_set / before.p_set, 12)
            for before, after in zip(case14_grid.buses, out.buses)
            if before.type is BusType.LOAD and before.p_set != 0.0
        }
        assert len(ratios) == 1

    def test_lognormal_kind(self, two_bus_grid):
        cfg = PerturbConfig(
            load_scale=LoadScale(kind="lognormal", mu=0.0, sigma=0.1), seed=4
        )
        out = perturb_load(two_bus_grid, cfg, draw=0)
        assert out.buses[1].p_set != two_bus_grid.buses[1].p_set


class TestPerturbTopology:
    def test_leaf_drop_rejected(self, ring_spur_grid):
        result = perturb_topology(ring_spur_grid, [("branch", 3)])
        assert isinstance(result, Rejected)

    def test_triangle_drop_keeps_path(self, triangle_grid):
        result = perturb_topology(triangle_grid, [("branch", 1)])
        assert not isinstance(result, Rejected)
        assert result.n_branch == 2

    def test_gen_drop_retypes_to_zero_load(self, case14_grid):
        gen_idx = next(
            i for i, b in enumerate(case14_grid.buses)
            if b.type is BusType.GENERATOR
        )
        result = perturb_topology(case14_grid, [("gen", gen_idx)])
        assert not isinstance(result, Rejected)
        bus = result.buses[gen_idx]
        assert bus.type is BusType.LOAD
        assert bus.p_set == 0.0 and bus.q_set == 0.0

    def test_invalid_branch_ref(self, triangle_grid):
        with pytest.raises(InvalidRef):
            perturb_topology(triangle_grid, [("branch", 99)])

    def test_invalid_gen_ref(self, triangle_grid):
        with pytest.raises(InvalidRef):
            perturb_topology(triangle_grid, [("gen", 2)])  # bus 2 is a load

    def test_unknown_kind(self, triangle_grid):
        with pytest.raises(InvalidRef):
            perturb_topology(triangle_grid, [("transformer", 0)])


class TestEnumerate:
    def test_thousand_singles(self):
        spec = ContingencySpec(k=1, candidates=tuple(("branch", i) for i in range(1000)))
        assert sum(1 for _ in enumerate_contingencies(spec)) == 1000

    def test_half_million_pairs(self):
        spec = ContingencySpec(k=2, candidates=tuple(("branch", i) for i in range(1000)))
        assert sum(1 for _ in enumerate_contingencies(spec)) == 499_500

    def test_exhaustive_small(self):
        spec = ContingencySpec(
            k=2, candidates=(("branch", 0), ("branch", 1), ("branch", 2))
        )
        got = list(enumerate_contingencies(spec))
        assert got == [
            (("branch", 0), ("branch", 1)),
            (("branch", 0), ("branch", 2)),
            (("branch", 1), ("branch", 2)),
        ]

    @pytest.mark.parametrize("n", [1, 2, 5, 10, 17, 25])
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_counts_match_binomial(self, n, k):
        if k > n:
            pytest.skip("k > n")
        spec = ContingencySpec(k=k, candidates=tuple(("branch", i) for i in range(n)))
        count = sum(1 for _ in enumerate_contingencies(spec))
        assert count == math.comb(n, k)

    def test_bad_spec(self):
        with pytest.raises(ValidationError):
            ContingencySpec(k=0, candidates=(("branch", 0),))
        with pytest.raises(ValidationError):
            ContingencySpec(k=3, candidates=(("branch", 0),))


class TestDatasetPipeline:
    def test_degenerate_config_five_identical_samples(self, case14_raw, tmp_path):
        report = generate_dataset(
            [case14_raw], uniform_cfg(1.0, 1.0), n_samples=5, out=tmp_path
        )
        assert report.produced == 5
        header, samples = load_dataset(tmp_path)
        assert header["schema"] == 1
        assert len(samples) == 5
        assert all(s.converged for s in samples)
        for s in samples[1:]:
            assert np.array_equal(s.state, samples[0].state)

    def test_perturbed_case14_low_skip_rate(self, case14_raw, tmp_path):
        report = generate_dataset(
            [case14_raw], uniform_cfg(0.8, 1.2, seed=9), n_samples=200, out=tmp_path
        )
        assert report.produced > 0
        assert report.skipped / max(report.produced, 1) < 0.05

    def test_voltage_collapse_region_empty_output(self, two_bus_case, tmp_path):
        with pytest.raises(EmptyOutput):
            generate_dataset(
                [two_bus_case],
                uniform_cfg(50.0, 60.0, seed=1),
                n_samples=10,
                out=tmp_path,
            )

    def test_reloaded_samples_reverify_mismatch(self, case14_raw, tmp_path):
        generate_dataset(
            [case14_raw], uniform_cfg(0.8, 1.2, seed=13), n_samples=20, out=tmp_path
        )
        header, samples = load_dataset(tmp_path)
        for s in samples:
            mis = injection_mismatch(s.grid, s.state)
            assert np.abs(mis).max() < header["tol"]

    def test_byte_identical_reruns(self, case14_raw, tmp_path):
        cfg = uniform_cfg(0.8, 1.2, seed=21)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        generate_dataset([case14_raw], cfg, n_samples=30, out=out_a)
        generate_dataset([case14_raw], cfg, n_samples=30, out=out_b)
        for pa in sorted(out_a.glob("*.jsonl")):
            pb = out_b / pa.name
            assert pa.read_bytes() == pb.read_bytes()

    def test_topology_drops_recorded(self, case14_raw, tmp_path):
        cfg = PerturbConfig(
            load_scale=LoadScale(kind="uniform", lo=0.9, hi=1.1),
            topology_drop=TopologyDrop(kind="n_minus_k", k=1, element_kinds=("branch",)),
            seed=33,
        )
        report = generate_dataset([case14_raw], cfg, n_samples=40, out=tmp_path)
        _, samples = load_dataset(tmp_path)
        assert report.produced == len(samples)
        assert any(s.dropped_elements for s in samples)
        dropped_hashes = {s.topology_hash for s in samples}
        assert len(dropped_hashes) > 1  # different outages, different topologies

    def test_sharding(self, case14_raw, tmp_path):
        generate_dataset(
            [case14_raw], uniform_cfg(1.0, 1.0), n_samples=5, out=tmp_path,
            shard_size=2,
        )
        shards = sorted(p.name for p in tmp_path.glob("shard-*.jsonl"))
        assert shards == ["shard-00000.jsonl", "shard-00001.jsonl", "shard-00002.jsonl"]
        first = (tmp_path / shards[0]).read_text().splitlines()
        assert json.loads(first[0])["schema"] == 1
        _, samples = load_dataset(tmp_path)
        assert len(samples) == 5

    def test_record_key_order(self, case14_raw, tmp_path):
        generate_dataset([case14_raw], uniform_cfg(1.0, 1.0), n_samples=1, out=tmp_path)
        lines = (tmp_path / "shard-00000.jsonl").read_text().splitlines()
        rec = json.loads(lines[1])
        assert list(rec.keys()) == [
            "case_id", "topology_hash", "dropped_elements", "bus_type", "x",
            "edges", "r", "x_react", "converged", "iterations",
        ]

    def test_record_round_trip(self, case14_grid):
        from gridmae.scenarios import sample_from_solution
        from gridmae.solver import solve_ac

        sol = solve_ac(case14_grid)
        sample = sample_from_solution(
            case14_grid, sol.state, "case14", (), True, sol.iterations
        )
        rec = sample_to_record(sample)
        back = sample_from_record(json.loads(json.dumps(rec)))
        assert np.array_equal(back.state, sample.state)
        assert back.topology_hash == sample.topology_hash
        assert topology_hash(back.grid) == sample.topology_hash


def test_topology_hash_sensitive_to_edges(triangle_grid):
    base = topology_hash(triangle_grid)
    dropped = perturb_topology(triangle_grid, [("branch", 0)])
    assert topology_hash(dropped) != base


def test_branch_candidates(case14_grid):
    cands = branch_candidates(case14_grid)
    assert len(cands) == 20
    assert cands[0] == ("branch", 0)
