import numpy as np
import pytest

from burstwall.burst import BurstConfig
from burstwall.pipeline import (BlacklistTable, Pipeline, PipelineConfig, compare_strategies,
                                equivalence_check, replay_trace)
from burstwall.rulegen import CombinedRuleSet, WhitelistRuleSet
from burstwall.synth import MS, S, TraceConfig, attack_flow, make_trace, uniform_burst_trace
from burstwall.traffic import FeatureSchema, FiveTuple, PacketRecord

BL = FeatureSchema.of(("mean_size", "BL", True, 11))
PL = FeatureSchema.of(("dst_port", "PL", True, 16))
A = FiveTuple(1, 2, 5000, 80, 6)
B = FiveTuple(3, 4, 5001, 443, 6)


def hand_rules():
    """Benign bursts have mean size above 100; port 23 is never whitelisted."""
    bl = WhitelistRuleSet([[99]], [[2047]], BL)
    pl = WhitelistRuleSet([[-1], [23]], [[22], [65535]], PL, tag="pl")
    return CombinedRuleSet(bl, pl)


def burst(t, start, n, size, label="benign", gap=MS):
    return [PacketRecord(start + i * gap, t, size, label) for i in range(n)]


def test_blacklist_table_is_direction_independent_and_bounded():
    bl = BlacklistTable(2)
    assert bl.install(A, 1) and bl.install(B.reversed(), 2)
    assert B in bl and bl.lookup(A.reversed(), 5)
    assert not bl.install(FiveTuple(9, 9, 9, 9, 6), 3)
    bl.remove(A)
    assert A not in bl and len(bl) == 1


def test_verdicts_and_outcomes():
    cfg = PipelineConfig(hand_rules(), burst_cfg=BurstConfig(n_threshold=4))
    trace = sorted(burst(A, 0, 4, 500) + burst(B, 10, 4, 60, "malicious"), key=lambda p: p.ts_ns)
    res = replay_trace(trace, cfg)
    verdicts = {b.flow: b.verdict for b in res.bursts.values()}
    assert verdicts == {A.canonical(): 0, B.canonical(): 1}
    assert res.log[-1].outcome == "flagged" and res.log[-2].outcome == "forwarded"
    assert [d.verdict for d in res.digests] == ["normal", "malicious"]
    assert res.stats.mirrors_to_cpu == 1 and res.stats.mirrors_to_loopback == 2


def test_packet_level_rules_drop_single_packets():
    t = FiveTuple(1, 2, 5000, 23, 6)
    res = replay_trace(burst(t, 0, 3, 500), PipelineConfig(hand_rules()))
    assert [e.outcome for e in res.log] == ["dropped_pl"] * 3


def test_blacklisted_packets_skip_the_burst_logic():
    cfg = PipelineConfig(hand_rules(), burst_cfg=BurstConfig(n_threshold=4))
    pipe = Pipeline(cfg)
    pipe.blacklist.install(A, 0)
    res = replay_trace(burst(A.reversed(), 0, 6, 500), cfg, pipeline=pipe)
    assert {e.outcome for e in res.log} == {"dropped_blacklist"}
    assert res.stats.bursts_closed == 0 and not res.digests


def test_resubmit_all_counts_every_packet():
    cfg = PipelineConfig(hand_rules(), strategy="resubmit_all", burst_cfg=BurstConfig(n_threshold=4))
    res = replay_trace(burst(A, 0, 8, 500), cfg)
    assert res.stats.resubmissions == 8 and res.stats.mirrors_to_loopback == 0


def test_normal_digests_can_be_suppressed():
    cfg = PipelineConfig(hand_rules(), digest_normal=False, burst_cfg=BurstConfig(n_threshold=4))
    res = replay_trace(burst(A, 0, 4, 500), cfg)
    assert res.digests == [] and res.stats.mirrors_to_cpu == 1


def test_digest_delay_defers_the_hook():
    cfg = PipelineConfig(hand_rules(), digest_delay_ns=5 * MS, burst_cfg=BurstConfig(n_threshold=2))
    seen = []

    def hook(d, pipe):
        seen.append((d.ts_ns, pipe.stats.packets_in))

    replay_trace(burst(A, 0, 2, 500) + burst(A, 3 * MS, 8, 500), cfg, hook)
    # the first digest leaves at 1 ms; it is delivered just before the packet at 6 ms,
    # once the five earlier packets (0, 1, 3, 4, 5 ms) have gone through
    assert seen[0] == (MS, 5)


def test_packets_must_arrive_in_order():
    pipe = Pipeline(PipelineConfig(hand_rules()))
    pipe.process_packet(PacketRecord(10, A, 100))
    with pytest.raises(ValueError):
        pipe.process_packet(PacketRecord(5, A, 100))


def test_uniform_bursts_mirror_once_per_burst():
    trace = uniform_burst_trace(n_flows=10, bursts_per_flow=3, burst_len=15, seed=1)
    rep = compare_strategies(trace, PipelineConfig(hand_rules()))
    assert rep.loopback_mirrors_atomic * 15 == rep.packets
    assert rep.resubmit_fraction == 1.0


def test_trained_rules_match_offline_verdicts(trace_models):
    df, rules = trace_models
    trace = make_trace(TraceConfig(), seed=2)
    cfg = PipelineConfig(rules)
    res = replay_trace(trace, cfg, scorer=lambda v: float(df.score(v)[0]))
    compared, mismatched = equivalence_check(res, trace, rules)
    assert compared > 100 and mismatched == 0
    y, pred, score = res.packet_predictions()
    assert len(y) == len(trace)
    assert pred[y == 1].mean() > 0.9


def test_log_and_stats_files(tmp_path, trace_models):
    _, rules = trace_models
    trace = make_trace(TraceConfig(n_benign_flows=10, n_attack_flows=2), seed=6)
    res = replay_trace(trace, PipelineConfig(rules))
    res.write_log(tmp_path / "v.jsonl")
    res.write_stats(tmp_path / "s.json")
    assert len((tmp_path / "v.jsonl").read_text().splitlines()) == len(trace)
    assert res.stats.packets_in == len(trace) == sum(res.stats.verdicts.values())


def test_attack_flow_bursts_are_flagged(trace_models):
    _, rules = trace_models
    res = replay_trace(attack_flow(A, 0, n_bursts=3), PipelineConfig(rules))
    assert [b.verdict for b in res.bursts.values()] == [1, 1, 1]
