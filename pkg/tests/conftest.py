import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rejective import BalanceCriterion, SRSDesign, draw_tprs, generate_synthetic

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        request.config.stash[ACCEPTANCE].append(line)
        assert ok, line

    return record


@pytest.fixture(scope="session")
def small_pop():
    return generate_synthetic(seed=3, n_units=2000, beta=1.0)


@pytest.fixture
def chain(small_pop):
    rng = np.random.default_rng(5)
    return draw_tprs(rng, small_pop, SRSDesign(300), SRSDesign(60), BalanceCriterion(0.1))


def make_srs_chain(pop, a_units, b_pos, gamma_sq=float("inf")):
    """Two-phase SRS chain with given phase-I frame units and phase-II positions within A."""
    from rejective import PhaseChain
    from rejective.designs import DrawnSample, prepare_srswor

    a_units = np.asarray(a_units, dtype=np.intp)
    b_pos = np.asarray(b_pos, dtype=np.intp)
    p1 = prepare_srswor(pop.n_units, a_units.size)
    p2 = prepare_srswor(a_units.size, b_pos.size)
    a = DrawnSample(a_units, p1.first_order, p1.pairwise, "srswor")
    b = DrawnSample(b_pos, p2.first_order, p2.pairwise, "srswor")
    return PhaseChain(pop=pop, samples=(a, b), units=(a_units, a_units[b_pos]),
                      pi_star=(a.pi, a.pi[b_pos] * b.pi), x_cols=tuple(range(pop.p)), gamma_sq=(gamma_sq,))


@pytest.fixture
def srs_chain():
    return make_srs_chain
