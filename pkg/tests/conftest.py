import numpy as np
import pytest
from hypothesis import settings

from skipdiff.denoisers import GmmDenoiser, GmmModel
from skipdiff.schedulers import build_ddim_plan, build_euler_ve_plan, build_sde_euler_plan

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return GmmModel.random(0)


@pytest.fixture
def denoiser(model):
    return GmmDenoiser(model)


PLAN_BUILDERS = {
    "ddim": lambda T: build_ddim_plan(T),
    "euler-ve": lambda T: build_euler_ve_plan(T),
    "sde-euler-0": lambda T: build_sde_euler_plan(T, churn=0.0),
    "sde-euler-1": lambda T: build_sde_euler_plan(T, churn=1.0),
}


@pytest.fixture(params=sorted(PLAN_BUILDERS))
def plan50(request):
    return PLAN_BUILDERS[request.param](50)


def scalar_plan(f, g):
    """One-step plan with given coefficients, for direct formula checks."""
    from skipdiff.schedulers import NoiseSchedule, SchedulerPlan, ScheduleKind

    sched = NoiseSchedule(ScheduleKind.VE, np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    return SchedulerPlan(np.array([f]), np.array([g]), sched, "scalar", np.zeros(1))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[k])
