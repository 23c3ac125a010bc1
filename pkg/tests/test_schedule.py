import math

import pytest

from streamcode.schedule import (
    SEQUENTIAL,
    SIMULTANEOUS,
    DecodeStep,
    ScheduleError,
    StreamParams,
    cl_defaults,
    decode_plan,
    deadline,
    dump,
    encode_span,
    group_of,
    message_alphabet,
    message_group,
    period_blocks,
    vardelay_plan,
)


def cl(a=9, b=4, t=2):
    return StreamParams(n=8, m=2, t=t, scheme="cl_truncated", a=a, b=b)


def test_truncated_spans_from_figure():
    p = cl()
    assert encode_span(p, 10) == (7, 10)
    assert encode_span(p, 15) == (7, 15)
    assert encode_span(p, 16) == (13, 16)
    assert encode_span(p, 9) == (1, 9)


@pytest.mark.parametrize("scheme,extra", [
    ("md_infinite", {}), ("erasure", {"gamma": 0.5}), ("vardelay", {"gamma": 0.5}),
    ("alternating", {"r": 0.5}), ("cl_truncated", {"a": 9, "b": 4}),
])
def test_first_block_carries_only_first_message(scheme, extra):
    p = StreamParams(n=4, m=16, t=2, scheme=scheme, **extra)
    assert encode_span(p, 1) == (1, 1)
    for k in range(1, 40):
        assert encode_span(p, k)[1] == k


def test_truncated_memory_cycles_between_b_and_a():
    p = cl()
    mem = [encode_span(p, k)[1] - encode_span(p, k)[0] + 1 for k in range(10, 40)]
    assert min(mem) == 4 and max(mem) == 9
    assert all(mem[i] == mem[i + p.period] for i in range(len(mem) - p.period))


def test_period_sets_tile():
    p = cl()
    covered = [k for q in range(1, 8) for k in period_blocks(p, q)]
    assert covered == list(range(p.a + 1, p.a + 1 + 7 * p.period))
    grouped = [k for q in range(1, 8) for k in message_group(p, q)]
    assert grouped == list(range(1, 1 + 7 * p.period))
    assert all(group_of(p, k) == q for q in range(1, 8) for k in message_group(p, q))
    # P(q)'s last encoding block sits at the end of S(q-1)
    for q in range(2, 6):
        last_msg = message_group(p, q)[0]
        assert max(k for k in range(1, 80) if encode_span(p, k)[0] <= last_msg <= encode_span(p, k)[1]) \
            == p.period * q + p.b - 1


def test_md_plan_for_third_message():
    p = StreamParams(n=4, m=2, t=2)
    plan = decode_plan(p, 3)
    assert [s.targets for s in plan] == [(1, 1), (2, 2), (3, 3)]
    assert [s.window for s in plan] == [(1, 4), (2, 4), (3, 4)]
    assert [s.multiplier for s in plan] == [4, 3, 2]
    assert all(s.kind == SEQUENTIAL for s in plan)


def test_truncated_third_group_example():
    p = cl()
    assert list(message_group(p, 3)) == [13, 14, 15, 16, 17, 18]
    for k in message_group(p, 3):
        plan = decode_plan(p, k)
        first = plan[0]
        nu = min(deadline(p, k), 15)
        assert first.kind == SIMULTANEOUS
        assert first.targets == (7, 10)
        assert first.window == (10, nu)
        assert plan[-1].targets == (k, k)
        assert plan[-1].window[1] == deadline(p, k)


def test_truncated_second_group_rule():
    p = cl()
    k = 8
    plan = decode_plan(p, k)
    nu = min(p.a, deadline(p, k))
    assert plan[0] == DecodeStep((1, 4), (4, nu), float(nu), SIMULTANEOUS)
    assert [s.targets[0] for s in plan[1:]] == list(range(5, k + 1))
    assert all(s.window == (s.targets[0], nu) for s in plan[1:3])
    assert all(s.window == (s.targets[0], deadline(p, k)) for s in plan[3:])


def test_truncated_needs_long_enough_period():
    p = StreamParams(n=8, m=2, t=2, scheme="cl_truncated", a=6, b=4)
    assert decode_plan(p, 2)
    with pytest.raises(ScheduleError):
        decode_plan(p, 5)


@pytest.mark.parametrize("params", [
    StreamParams(n=4, m=2, t=3),
    StreamParams(n=4, m=2, t=2, scheme="erasure", gamma=0.3),
    cl(),
    cl(a=12, b=5, t=3),
])
def test_multiplier_counts_free_blocks(params):
    for k in range(1, 30):
        plan = decode_plan(params, k)
        for step in plan:
            assert step.multiplier > 0
            assert step.multiplier == step.window[1] - step.window[0] + 1 or step.kind == SIMULTANEOUS
            assert step.multiplier == step.window[1] - step.targets[0] + 1


def test_md_plan_shape():
    p = StreamParams(n=4, m=2, t=3)
    for k in range(1, 12):
        plan = decode_plan(p, k)
        assert len(plan) == k
        lengths = [s.window[1] - s.window[0] + 1 for s in plan]
        assert lengths == list(range(k + 2, 2, -1))


def test_plans_are_deterministic():
    assert dump(cl(), 1, 30) == dump(cl(), 1, 30)


@pytest.mark.parametrize("t", [2, 3, 4])
def test_alternating_parity_rules(t):
    r = 0.5
    p = StreamParams(n=4, m=16, t=t, scheme="alternating", r=r)
    for k in range(1, 10):
        plan = decode_plan(p, k)
        tk = deadline(p, k)
        end = tk if k % 2 == t % 2 else tk - 1
        assert all(s.window[1] == end for s in plan)
        last = plan[-1]
        if k % 2 == 1:
            assert last.multiplier == pytest.approx(t + r - 1 if t % 2 else t + r - 2)
        else:
            assert last.multiplier == end - k + 1


def test_alternating_odd_t_odd_k_last_step():
    p = StreamParams(n=4, m=16, t=3, scheme="alternating", r=0.5)
    last = decode_plan(p, 5)[-1]
    assert last.window == (5, 7)
    assert last.multiplier == pytest.approx(2.5)


def test_message_alphabets():
    p = StreamParams(n=4, m=16, t=2, scheme="alternating", r=0.5)
    assert [message_alphabet(p, k) for k in (1, 2, 3, 4)] == [4, 64, 4, 64]
    q = StreamParams(n=4, m=10, t=2, scheme="alternating", r=0.5)
    assert (message_alphabet(q, 1), message_alphabet(q, 2)) == (3, 32)
    assert message_alphabet(StreamParams(n=4, m=5, t=2), 7) == 5
    with pytest.raises(ScheduleError) as err:
        StreamParams(n=4, m=2, t=2, scheme="alternating", r=0.2)
    assert err.value.field == "r"


def test_vardelay_plan_uses_delay():
    p = StreamParams(n=4, m=2, t=2, scheme="vardelay", gamma=0.5)
    plan = vardelay_plan(p, 3, 5)
    assert [s.window for s in plan] == [(1, 7), (2, 7), (3, 7)]
    assert vardelay_plan(p, 3, 2) == decode_plan(p, 3)
    with pytest.raises(ScheduleError):
        vardelay_plan(p, 3, 0)


def test_cl_defaults_example():
    assert cl_defaults(4096, 0.25, 1.0, 1.0, 2) == (512, 3)


def test_cl_defaults_small_delta_approaches_full_memory():
    a, _ = cl_defaults(4096, 1e-6, 1.0, 1.0, 2)
    assert a == 4096


def test_cl_defaults_infeasible():
    with pytest.raises(ScheduleError, match="increase n"):
        cl_defaults(16, 0.45, 0.2, 1.0, 2)


@pytest.mark.parametrize("kwargs,field", [
    ({"t": 0}, "t"),
    ({"m": 1}, "m"),
    ({"n": -1}, "n"),
    ({"scheme": "bogus"}, "scheme"),
    ({"scheme": "erasure"}, "gamma"),
    ({"scheme": "erasure", "gamma": 1.0}, "gamma"),
    ({"scheme": "cl_truncated", "a": 3, "b": 4}, "a"),
    ({"scheme": "cl_truncated", "a": 9, "b": 3, "t": 4}, "b"),
    ({"m_log": 5.0}, "m_log"),
])
def test_invalid_params_name_field(kwargs, field):
    base = {"n": 4, "m": 4, "t": 2}
    base.update(kwargs)
    with pytest.raises(ScheduleError) as err:
        StreamParams(**base)
    assert err.value.field == field


def test_m_log_slack():
    p = StreamParams(n=4, m=4, t=1, m_log=math.log(4.5))
    assert p.m_log == pytest.approx(math.log(4.5))
    assert StreamParams(n=4, m=4, t=1).m_log == pytest.approx(math.log(4))


def test_params_round_trip():
    p = cl()
    assert StreamParams.from_dict(p.to_dict()) == p


def test_dump_layout():
    d = dump(cl(), 10, 10)
    row = d["blocks"][0]
    assert row["encode_span"] == [7, 10]
    assert row["memory"] == 4
    md = dump(StreamParams(n=4, m=2, t=2), 3, 3)["blocks"][0]
    assert md["encode_span"] == [1, 3]
    assert len(md["decode_plan"]) == 3
