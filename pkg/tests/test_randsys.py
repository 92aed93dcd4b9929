import pytest

from flatnf.flattest import compute_sequences
from flatnf.normalform import verify_parameterization
from flatnf.randsys import RandomSystemConfig, oracle_parameterization, random_flat_system
from flatnf.symkernel import Expr, substitute


@pytest.mark.parametrize("seed", range(8))
def test_oracle_parameterizes_the_generated_system(seed):
    gen = random_flat_system(seed)
    assert verify_parameterization(gen.system, oracle_parameterization(gen)).ok


@pytest.mark.parametrize("seed", range(8))
def test_generated_systems_are_flat(seed):
    gen = random_flat_system(seed)
    r = compute_sequences(gen.system)
    assert r.flat and r.delta_dims[-1] == gen.system.n
    # the generated levels are one triangular presentation; the canonical filtration may be coarser
    assert len(r.delta_dims) <= max(gen.level.values())


@pytest.mark.parametrize("seed", [3, 17])
def test_scramble_round_trips(seed):
    gen = random_flat_system(seed)
    for h, e in gen.to_hat.items():
        assert (substitute(e, gen.to_scrambled) - Expr.var(h)).is_zero()


def test_same_seed_same_system():
    a, b = random_flat_system(11), random_flat_system(11)
    assert a.system.f == b.system.f


def test_config_bounds_size():
    cfg = RandomSystemConfig(max_levels=2, max_states=3)
    for seed in range(5):
        gen = random_flat_system(seed, cfg)
        assert gen.system.n <= 3
        assert max(gen.level.values()) <= 2
