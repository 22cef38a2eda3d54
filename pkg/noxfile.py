from __future__ import annotations

from pathlib import Path

import nox
from nox import Session

ROOT = Path(__file__).parent
PACKAGE = "svie_lift"
SOURCES = [PACKAGE, "tests", "noxfile.py"]
COVERAGE_THRESHOLD = 85

# default actions to be run if nothing is explicitly specified with the -s option
nox.options.sessions = ["format:fix"]


def _pytest(session: Session, test_path: Path, coverage: bool, parallel: bool) -> None:
    command = ["pytest", "-v"]
    if coverage:
        command += [f"--cov={PACKAGE}", "--cov-append", f"--cov-config={ROOT / 'pyproject.toml'}"]
    # Functional runs are independent scenarios, spread them over workers unless -n was passed
    if parallel and not any(arg.startswith("-n") or arg.startswith("--numprocesses") for arg in session.posargs):
        command.append("-n8")
    session.run(*command, str(test_path), *session.posargs)


def _run_unit_tests(session: Session, coverage: bool = False) -> None:
    _pytest(session, ROOT / "tests" / "unit", coverage, parallel=False)


def _run_integration_tests(session: Session, coverage: bool = False) -> None:
    _pytest(session, ROOT / "tests" / "functional", coverage, parallel=True)


@nox.session(name="format:fix", python=False)
def format_fix(session: Session) -> None:
    """Runs all automated format fixes on the code base"""
    session.run("isort", *SOURCES)
    session.run("black", *SOURCES)


@nox.session(name="format:check", python=False)
def format_check(session: Session) -> None:
    """Checks the project for correct formatting"""
    session.run("isort", "--check", *SOURCES)
    session.run("black", "--check", *SOURCES)


@nox.session(name="lint:code", python=False)
def lint_code(session: Session) -> None:
    """Runs the static code analyzers"""
    session.run("ruff", "check", *SOURCES)
    session.run("pylint", PACKAGE)


@nox.session(name="lint:typing", python=False)
def lint_typing(session: Session) -> None:
    """Runs the type checker on the package"""
    session.run("mypy", PACKAGE)


@nox.session(name="test:unit", python=False)
def unit_tests(session: Session) -> None:
    """Runs all unit tests"""
    _run_unit_tests(session)


@nox.session(name="test:integration", python=False)
def integration_tests(session: Session) -> None:
    """Runs the reduced-size acceptance runs on the bundled scenarios"""
    _run_integration_tests(session)


@nox.session(name="test:coverage", python=False)
def coverage(session: Session) -> None:
    """Runs all tests (unit + integration) and reports the code coverage"""
    (ROOT / ".coverage").unlink(missing_ok=True)
    _run_unit_tests(session, coverage=True)
    _run_integration_tests(session, coverage=True)
    session.run("coverage", "report", "-m", f"--fail-under={COVERAGE_THRESHOLD}")


@nox.session(name="selftest", python=False)
def selftest(session: Session) -> None:
    """Runs the built-in correctness battery through the installed CLI"""
    session.run("svie-lift", "selftest", *session.posargs)


@nox.session(name="project:check", python=False)
def project_check(session: Session) -> None:
    """Runs all available checks on the project"""
    format_check(session)
    lint_code(session)
    lint_typing(session)
    coverage(session)
