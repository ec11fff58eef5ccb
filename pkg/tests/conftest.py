import pytest

from vsrcheck.dynamics import CtLaw, DtLaw, Plant
from vsrcheck.sysdsl import parse_system


def make_system(f, uc=None, laws=None, n=1, m=1, params=None):
    """System from expression strings; ``laws`` maps variant name to expressions."""
    lines = ["[system]", f"n = {n}", f"m = {m}", "[f]"]
    lines += [f"f{i + 1} = {e}" for i, e in enumerate([f] if isinstance(f, str) else f)]
    if uc is not None:
        lines += ["[u_c]"] + [f"uc{i + 1} = {e}" for i, e in enumerate([uc] if isinstance(uc, str) else uc)]
    for name, exprs in (laws or {}).items():
        lines += [f"[U.{name}]"] + [f"U{i + 1} = {e}" for i, e in enumerate([exprs] if isinstance(exprs, str) else exprs)]
    if params:
        lines += ["[params]"] + [f"{k} = {v}" for k, v in params.items()]
    return parse_system("\n".join(lines) + "\n", "test")


@pytest.fixture
def scalar():
    """Factory for (plant, ct law, dt law) of a scalar system."""
    def build(f, uc=None, U=None):
        s = make_system(f, uc, {"U": U} if U is not None else None)
        return (Plant.from_system(s), CtLaw.from_system(s) if uc is not None else None,
                DtLaw.from_system(s) if U is not None else None)
    return build


# -- acceptance log ------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line, then asserts it."""
    def record(n: int, ok: bool, detail: str):
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
