import pytest

from mvsfm.motionfield import write_mvf
from mvsfm.synth import generate_scene, render_mv_fields, save_scene

_acceptance: dict[int, dict] = {}


@pytest.fixture(scope="session")
def synth_inputs(tmp_path_factory):
    """Noiseless 200-point, 12-frame orbit scene saved as scene.json + scene.mvf."""
    d = tmp_path_factory.mktemp("synth200")
    scene = generate_scene(200, 12, "orbit", seed=3)
    save_scene(scene, d / "scene.json")
    (d / "scene.mvf").write_bytes(write_mvf(render_mv_fields(scene)))
    return d


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    n, title = marker
    entry = _acceptance.setdefault(n, {"title": title, "ok": True, "seen": False})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["ok"] = entry["ok"] and not report.failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().acceptance = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        e = _acceptance[n]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {n:2d} {status}  {e['title']}")
