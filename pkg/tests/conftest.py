import pytest

from rigidplan.experiment import build_problem
from rigidplan.planner import plan_all
from rigidplan.scenario import bundled_scenario


@pytest.fixture(scope="session")
def corridor():
    """The bundled corridor scenario, its problem and its RCGP plan."""
    scenario = bundled_scenario("corridor_6")
    _, problem = build_problem(scenario)
    return scenario, problem, plan_all(problem)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    lines = test_acceptance.RESULTS
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        ok, title, detail = lines[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
