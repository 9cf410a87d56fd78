import pytest

from gridbroker.plan import expand_jobs, parse_plan

SWEEP_PLAN = """\
parameter angle range from 1 to 165 step 1
task main
  execute calc -a $angle
endtask
"""


@pytest.fixture(scope="session")
def sweep_plan_text() -> str:
    return SWEEP_PLAN


@pytest.fixture(scope="session")
def sweep_jobs():
    return expand_jobs(parse_plan(SWEEP_PLAN))
