from flatnf.diffgeo import (
    Distribution,
    VectorField,
    annihilator,
    is_involutive,
    is_projectable,
    kernel_distribution,
    largest_projectable_subdistribution,
    lie_bracket,
    pushforward_distribution,
    span_equal,
    xu_chart,
)
from conftest import span


def test_bracket_of_coordinate_fields_vanishes(s30):
    ch = xu_chart(s30.states, s30.inputs)
    a = VectorField.coordinate(ch, s30.states[0])
    b = VectorField.coordinate(ch, s30.states[1])
    assert lie_bracket(a, b).is_zero()


def test_bracket_is_antisymmetric(s30):
    ch = xu_chart(s30.states, s30.inputs)
    a = span(ch, [{"x1": "x3", "x2": "1"}]).generators[0]
    b = span(ch, [{"x3": "x1*x2"}]).generators[0]
    assert (lie_bracket(a, b) + lie_bracket(b, a)).is_zero()


def test_non_involutive_pair(s30):
    ch = xu_chart(s30.states, s30.inputs)
    d = span(ch, [{"x1": "1"}, {"x2": "1", "x3": "x1"}])
    ok, witness = is_involutive(d)
    assert not ok and witness is not None


def test_span_equality_ignores_generator_choice(s30):
    ch = xu_chart(s30.states, s30.inputs)
    a = span(ch, [{"u1": "1"}, {"u2": "1"}])
    b = span(ch, [{"u1": "1", "u2": "x1"}, {"u1": "-2", "u2": "1"}])
    assert span_equal(a, b)


def test_annihilator_dimension(s30):
    ch = xu_chart(s30.states, s30.inputs)
    d = span(ch, [{"u1": "1"}, {"x2": "-3", "x4": "1"}])
    assert annihilator(d).dim == ch.dim - 2


def test_kernel_fields_annihilate_the_map(s30):
    k = kernel_distribution(s30)
    assert k.dim == 6 - 4
    for g in k.generators:
        assert all(g(fi).is_zero() for fi in s30.f)


def test_input_directions_are_not_projectable(s30):
    ch = xu_chart(s30.states, s30.inputs)
    e0 = Distribution.coordinate(ch, s30.inputs)
    assert not is_projectable(s30, e0)
    res = largest_projectable_subdistribution(s30, e0)
    assert span_equal(res.D, span(ch, [{"u1": "-2", "u2": "1"}]))


def test_pushforward_of_projectable_part(s30):
    ch = xu_chart(s30.states, s30.inputs)
    d = span(ch, [{"u1": "-2", "u2": "1"}])
    out = pushforward_distribution(s30, d)
    expect = span(out.chart, [{"x2": "-3", "x4": "1"}])
    assert span_equal(out, expect)
