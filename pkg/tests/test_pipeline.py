import json
from pathlib import Path

import numpy as np
import pytest

from cirche.assign import AssignmentInfeasible, assign_exhaustive
from cirche.pipeline import (
    assign_network,
    build_protocol_network,
    check_reconstruction,
    dense_forward,
    random_input,
    run_protocol_network,
)
from cirche.tensorio import ConfigError, load_network, parse_network

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["toy_protocol.json", "toy_conv_protocol.json"])
@pytest.mark.parametrize("fuse", [False, True])
def test_toy_networks_reconstruct(name, fuse):
    cfg = load_network(CONFIGS / name)
    ctx, layers = build_protocol_network(cfg, seed=1)
    x = random_input(layers, ctx, 1)
    run = run_protocol_network(layers, x, ctx, 1, fuse=fuse)
    assert check_reconstruction(run, dense_forward(layers, x, ctx.p), ctx) == []


@pytest.mark.parametrize("name", ["toy_protocol.json", "toy_conv_protocol.json"])
def test_fusion_saves_one_round_per_pair(name):
    cfg = load_network(CONFIGS / name)
    pairs = sum(layer.fuse_with_next for layer in cfg.layers)
    ctx, layers = build_protocol_network(cfg, seed=2)
    x = random_input(layers, ctx, 2)
    plain = run_protocol_network(layers, x, ctx, 2)
    fused = run_protocol_network(layers, x, ctx, 2, fuse=True)
    assert plain.transcript.rounds == len(layers)
    assert fused.transcript.rounds == len(layers) - pairs


def test_vit_assignment_respects_limit():
    cfg = load_network(CONFIGS / "vit_tiny.json")
    res = assign_network(cfg, 0.5)
    assert len(res.solution.blocks) == 36
    assert res.solution.total_latency <= res.limit + 1e-9
    assert res.limit == pytest.approx(0.5 * res.uncompressed_latency)


def test_full_budget_keeps_dense_layers():
    cfg = load_network(CONFIGS / "small_cnn.json")
    res = assign_network(cfg, 1.0)
    assert set(res.solution.blocks) == {1}
    assert res.solution.total_sensitivity == 0


def test_infeasible_budget():
    with pytest.raises(AssignmentInfeasible):
        assign_network(load_network(CONFIGS / "small_cnn.json"), 0.1)


def test_missing_limit():
    doc = {"layers": [{"name": "a", "kind": "gemm", "dims": [4, 8, 8]}], "synthetic_seed": 1}
    with pytest.raises(ConfigError):
        assign_network(parse_network(doc))


def test_ten_layer_assignment_matches_enumeration():
    layers = [{"name": f"l{i}", "kind": "gemm", "dims": [64 * (1 + i % 3), 64, 128], "allowed_block_sizes": [1, 2, 4, 8]} for i in range(10)]
    cfg = parse_network({"layers": layers, "synthetic_seed": 11})
    for frac in (0.3, 0.5, 0.8):
        res = assign_network(cfg, frac)
        best, _ = assign_exhaustive(res.sensitivities, res.latencies, res.limit)
        assert res.solution.total_sensitivity == pytest.approx(best, rel=1e-9)
