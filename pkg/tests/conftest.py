import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from phonertk import sim  # noqa: E402


@pytest.fixture(scope="session")
def default_run():
    """The packaged scenario, generated once per session."""
    return sim.generate(sim.default_scenario())


@pytest.fixture(scope="session")
def default_epochs(default_run):
    return default_run.epochs("base"), default_run.epochs("rover")


@pytest.fixture(scope="session")
def short_run():
    return sim.generate(sim.default_scenario(duration=30))


@pytest.fixture(scope="session")
def default_rover(default_run, tmp_path_factory):
    """In-process rover run over the default scenario, written to disk.

    Uses the CLI's code weighting, which matches the simulator's code noise.
    """
    from phonertk import pipeline
    from phonertk.cli import DEFAULT_CODE_SIGMA
    from phonertk.rtk import SolverConfig

    res = pipeline.run_rover_in_process(default_run.epochs("rover"), default_run.epochs("base"),
                                        default_run.scenario.base_ecef, default_run.ephemerides,
                                        SolverConfig(code_sigma=DEFAULT_CODE_SIGMA))
    out = tmp_path_factory.mktemp("rover")
    paths = pipeline.write_rover_outputs(res, out)
    paths.update(sim.write_outputs(default_run, out / "sim"))
    return res, paths


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
