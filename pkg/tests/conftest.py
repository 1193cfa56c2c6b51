import numpy as np
import pytest

from halfcar_nmpc.mpc import DisturbanceConfig, MpcConfig, Scenario
from halfcar_nmpc.ocp import OcpConfig
from halfcar_nmpc.road_profile import AxleDelay, SyntheticProfile
from halfcar_nmpc.vehicle_model import HalfCarParams, static_equilibrium


@pytest.fixture(scope="session")
def params():
    return HalfCarParams()


@pytest.fixture(scope="session")
def equilibrium(params):
    return static_equilibrium(params)


def random_instance(seed, params=None, spread=0.02, rate_spread=0.2):
    """Seeded non-equilibrium initial state and horizon road."""
    params = params or HalfCarParams()
    rng = np.random.default_rng(seed)
    x0 = static_equilibrium(params).as_array()
    x0[:4] += rng.uniform(-spread, spread, 4)
    x0[4:] += rng.uniform(-rate_spread, rate_spread, 4)
    n = OcpConfig().n_road
    w = np.zeros(n)
    w[0::2] = rng.uniform(-spread, spread, n // 2)
    w[1::2] = rng.uniform(-rate_spread, rate_spread, n // 2)
    return x0, w


@pytest.fixture(scope="session")
def small_scenario(params):
    prof = SyntheticProfile(
        duration=2.5, seed=3, n_tones=3, tone_amplitude=0.01, min_hz=0.5, max_hz=2.5,
        bumps=((0.8, 0.02, 0.3),),
    )
    return Scenario(params, prof.measurement(), cutoff_hz=7.0, delay=AxleDelay.from_speed(2.0, 15.0))


def short_config(run_length=8, seed=0, amplitude=0.025, **kw):
    return MpcConfig(
        run_length=run_length, seed=seed,
        disturbance=DisturbanceConfig(road_amplitude=amplitude, **kw),
    )


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
