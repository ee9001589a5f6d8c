import numpy as np

from epifilter import streams


def test_derive_is_deterministic_and_keyed():
    a = streams.derive(42, streams.SPINUP).normal(size=8)
    b = streams.derive(42, streams.SPINUP).normal(size=8)
    np.testing.assert_array_equal(a, b)
    c = streams.derive(42, streams.TRUTH).normal(size=8)
    d = streams.derive(43, streams.SPINUP).normal(size=8)
    assert np.max(np.abs(a - c)) > 0.0
    assert np.max(np.abs(a - d)) > 0.0


def test_member_streams_are_mutually_independent_draws():
    draws = [streams.member_stream(1, k).normal(size=16) for k in range(1, 5)]
    for k in range(4):
        for kp in range(k + 1, 4):
            assert np.max(np.abs(draws[k] - draws[kp])) > 0.0


def test_slot_values_are_stable():
    # Frozen contract: renumbering slots changes the meaning of old seeds.
    assert streams.POPULATION == 0
    assert streams.SPINUP == 1
    assert streams.TRUTH == 2
    assert streams.INIT == 3
    assert streams.NOISE == 4
    assert streams.MEMBER == 5


def test_stream_table_layout():
    table = streams.stream_table(9, 3)
    assert table["population"] == [0]
    assert table["noise"] == [4]
    assert table["member-1"] == [5, 1]
    assert table["member-3"] == [5, 3]
    assert table["member-4-reference"] == [5, 4]
    assert len(table) == 5 + 3 + 1
