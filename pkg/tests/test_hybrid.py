import numpy as np
import pytest

from radstack.errors import HorizonMismatchError
from radstack.hybrid import hybrid_select, inject_learned
from radstack.proposals import ProposalConfig, ProposalSet, generate_proposals
from radstack.scene import EgoState, Pose2, Trajectory
from radstack.scoring import ScoreContext, ScoreWeights, forecast_agents, select_best
from radstack.topology import graph_search

from conftest import static_car, straight_path, straight_scenario


def _straight_learned(v=8.0, steps=40, dt=0.1, y=0.0, tag="learned"):
    xs = np.arange(steps + 1) * v * dt
    samples = tuple(
        (Pose2(float(x), float(y), 0.0), float(v)) for x in xs
    )
    return Trajectory(dt=dt, samples=samples, tag=tag)


def _rule_proposals(scenario, agents=()):
    path = straight_path(scenario)
    return generate_proposals(scenario.ego, [path], list(agents), ProposalConfig()), path


def test_inject_adds_one_without_offsets(plain_scenario):
    ps, _ = _rule_proposals(plain_scenario)
    n = len(ps)
    out = inject_learned(ps, _straight_learned(), offsets=())
    assert len(out) == n + 1
    assert out[n].trajectory.tag == "learned"
    assert len(ps) == n  # input set untouched


def test_inject_offsets_cardinality_and_tags(plain_scenario):
    ps, _ = _rule_proposals(plain_scenario)
    n = len(ps)
    out = inject_learned(ps, _straight_learned(), offsets=(-0.5, 0.5))
    assert len(out) == n + 3
    tags = [p.trajectory.tag for p in out.proposals[n:]]
    assert tags == ["learned", "learned_offset", "learned_offset"]


def test_inject_normal_shift_oracle(plain_scenario):
    ps, _ = _rule_proposals(plain_scenario)
    learned = _straight_learned()
    out = inject_learned(ps, learned, offsets=(0.5,))
    shifted = out.proposals[-1].trajectory
    delta = shifted.positions - learned.positions
    assert np.allclose(delta[:, 0], 0.0, atol=1e-12)
    assert np.allclose(delta[:, 1], 0.5, atol=1e-12)


def test_inject_horizon_mismatch(plain_scenario):
    ps, _ = _rule_proposals(plain_scenario)
    with pytest.raises(HorizonMismatchError):
        inject_learned(ps, _straight_learned(steps=20))
    with pytest.raises(HorizonMismatchError):
        inject_learned(ps, _straight_learned(dt=0.2))


def _ctx(scenario, path, agents=()):
    return ScoreContext(
        scenario=scenario,
        forecast=forecast_agents(list(agents), 40, 0.1),
        route_path=path,
        goal_norm=100.0,
    )


def test_hybrid_without_learned_equals_rule_selection(plain_scenario):
    ps, path = _rule_proposals(plain_scenario)
    ctx = _ctx(plain_scenario, path)
    rad_winner, rad_breakdowns = select_best(ps, ctx)
    winner, breakdowns, out = hybrid_select(ps, None, ctx)
    assert winner is rad_winner
    assert len(out) == len(ps)
    assert [b.aggregate for b in breakdowns] == [b.aggregate for b in rad_breakdowns]


def test_hybrid_tie_keeps_idm_tag(plain_scenario):
    ps, path = _rule_proposals(plain_scenario)
    ctx = _ctx(plain_scenario, path)
    rad_winner, _ = select_best(ps, ctx)
    # Inject a learned plan identical to the rule winner: tie broken by tag.
    learned = rad_winner.retag("learned")
    winner, breakdowns, out = hybrid_select(ps, learned, ctx, offsets=())
    assert winner.tag == "idm"
    learned_b = breakdowns[len(ps)]
    winner_b = breakdowns[[p.trajectory for p in out].index(winner)]
    assert learned_b.aggregate == pytest.approx(winner_b.aggregate, abs=1e-9)


def test_hybrid_learned_wins_when_only_escape(plain_scenario):
    # Two parked cars leave a 2.4 m gap: wide enough to drive through but
    # inside the rule rollouts' caution band, so every IDM proposal creeps
    # short while the learned plan threads the gap collision-free.
    agents = [
        static_car("a", 25.0, -2.2),
        static_car("b", 25.0, 2.2),
    ]
    ps, path = _rule_proposals(plain_scenario, agents)
    ctx = _ctx(plain_scenario, agents=agents, path=path)
    learned = _straight_learned(v=5.0, y=0.0)
    winner, breakdowns, out = hybrid_select(ps, learned, ctx, offsets=())
    assert winner.tag == "learned"
    idx = [p.trajectory for p in out].index(winner)
    assert breakdowns[idx].c_col == 1
    assert breakdowns[idx].c_ttc == 1


def test_hybrid_monotone_safety_collision_variants(plain_scenario):
    # If every learned variant collides, the winner equals the rule-only one.
    blocker = static_car("c", 30.0, 0.0)
    ps, path = _rule_proposals(plain_scenario, [blocker])
    ctx = _ctx(plain_scenario, agents=[blocker], path=path)
    rad_winner, _ = select_best(ps, ctx)
    learned = _straight_learned(v=10.0, y=0.0)  # rams the blocker
    winner, breakdowns, out = hybrid_select(ps, learned, ctx, offsets=(-0.3, 0.3))
    for p, b in zip(out.proposals[len(ps):], breakdowns[len(ps):]):
        assert b.c_col == 0
    assert np.array_equal(winner.positions, rad_winner.positions)


def test_hybrid_breakdown_schema_shared(plain_scenario):
    # Learned proposals are scored by the same operations: identical record
    # fields and identical values on identical inputs.
    ps, path = _rule_proposals(plain_scenario)
    ctx = _ctx(plain_scenario, path)
    idm_clone = ps[10].trajectory.retag("learned")
    winner, breakdowns, out = hybrid_select(ps, idm_clone, ctx, offsets=())
    rec_idm = breakdowns[10].to_record()
    rec_learned = breakdowns[len(ps)].to_record()
    assert rec_idm.keys() == rec_learned.keys()
    for key in ("c_col", "c_ra", "c_ttc", "c_sp", "c_cf", "goal_cost"):
        assert rec_idm[key] == pytest.approx(rec_learned[key], abs=1e-9)
