import json
import math
import os

import pytest

from mvsfm.config import PipelineConfig, load_config, parse_config_text
from mvsfm.errors import ConfigTypeError, MissingInput, PipelineError, UnknownKey
from mvsfm.export import check_integrity, image_name, read_ply
from mvsfm.motionfield import load_mvf, upsample_zoh
from mvsfm.pipeline import MANIFEST_FILE, run_pipeline, thread_count, upsample_all
from mvsfm.trajectory import (
    TRAJECTORIES_FILE,
    TrackParams,
    build_trajectories,
    filter_persistent,
    load_trajectories,
    read_staged,
)

# -- config --------------------------------------------------------------------


def test_defaults_from_empty_file(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = load_config(p)
    assert cfg == PipelineConfig()
    assert (cfg.tau, cfg.min_frames, cfg.pair_span) == (0.3, 4, 8)
    assert cfg.link_radius == pytest.approx(2 * math.sqrt(2))
    assert cfg.track_params() == TrackParams()


def test_flag_beats_file_beats_default(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("tau = 0.5\nmin_frames = 5  # trailing comment\n")
    cfg = load_config(p, {"tau": 0.2, "min_frames": None})
    assert cfg.tau == 0.2 and cfg.min_frames == 5


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "typo.cfg"
    p.write_text("# comment\ntau = 0.3\ntaau = 0.5\n")
    with pytest.raises(UnknownKey) as e:
        load_config(p)
    assert e.value.key == "taau" and e.value.lineno == 3 and "taau = 0.5" in e.value.line


@pytest.mark.parametrize(
    "text",
    ["tau = abc", "min_frames = 2.5", "pair_span = 0", "emit = features, pictures", "log_level = loud", "tau 0.3"],
)
def test_type_errors(text):
    with pytest.raises(ConfigTypeError):
        parse_config_text(text)


def test_type_error_is_a_type_error():
    assert issubclass(ConfigTypeError, TypeError)


def test_invariant_failures_surface_as_type_errors():
    with pytest.raises(ConfigTypeError):
        load_config(overrides={"tau": 3.0})


def test_missing_config_file(tmp_path):
    with pytest.raises(MissingInput):
        load_config(tmp_path / "nope.cfg")


def test_pair_span_unlimited_and_emit_parsing():
    v = parse_config_text("pair_span = unlimited\nemit = trajectories ply\n")
    assert v["pair_span"] is None and v["emit"] == {"trajectories", "ply"}
    assert PipelineConfig(pair_span=None).snapshot()["pair_span"] == "unlimited"


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("MVSFM_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("MVSFM_THREADS", "0")
    assert thread_count() == (os.cpu_count() or 1)


def test_parallel_upsampling_matches_serial(synth_inputs):
    fields = load_mvf(synth_inputs / "scene.mvf")
    assert upsample_all(fields, threads=4) == [upsample_zoh(f) for f in fields]


# -- pipeline ------------------------------------------------------------------


def config_for(d, out, **kw):
    return PipelineConfig(
        mvf_path=str(d / "scene.mvf"), scene_path=str(d / "scene.json"), output_dir=str(out), **kw
    )


def assert_manifest_consistent(m):
    c = m.counts
    assert c["trajectories_after"] <= c["trajectories_before"]
    assert c["matches_total"] <= c["match_bound"]
    assert c["matches_total"] == sum(c["matches_per_pair"].values())


@pytest.fixture(scope="module")
def full_run(synth_inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_pipeline(config_for(synth_inputs, out))


def test_synth_run_counts(full_run, synth_inputs):
    out, m = full_run
    assert_manifest_consistent(m)
    assert m.counts["frames"] == 12
    assert m.counts["trajectories_after"] >= 190
    # recompute the bound independently of the pipeline's own count
    params = TrackParams()
    dense = [upsample_zoh(f) for f in load_mvf(synth_inputs / "scene.mvf")]
    kept = filter_persistent(build_trajectories(dense, params), params)
    bound = 0
    for t in kept:
        n = len(t.samples)
        bound += sum(1 for i in range(n) for j in range(i + 1, n) if j - i <= params.pair_span_cap)
    assert len(kept) == m.counts["trajectories_after"]
    assert m.counts["matches_total"] == bound


def test_synth_run_artifacts(full_run):
    out, m = full_run
    names = {int(f): image_name(int(f)) for f in m.counts["keypoints_per_frame"]}
    integ = check_integrity(out, names)
    assert integ["matches"] == m.counts["matches_total"]
    assert integ["keypoints"] == sum(m.counts["keypoints_per_frame"].values())
    with open(out / "cloud.ply", "rb") as fh:
        assert len(read_ply(fh)) == m.counts["cloud_points"] > 0
    rows = load_trajectories(out / TRAJECTORIES_FILE)
    assert len(rows) == m.counts["trajectories_after"]
    images, matches = read_staged(out)
    assert matches.total() == m.counts["matches_total"]
    on_disk = json.loads((out / MANIFEST_FILE).read_text())
    assert on_disk == json.loads(json.dumps(m.to_dict()))
    assert set(on_disk["inputs"]) == {"mvf_path", "scene_path"}


def test_emit_trajectories_only(synth_inputs, tmp_path):
    run_pipeline(config_for(synth_inputs, tmp_path, emit=frozenset({"trajectories"})))
    files = sorted(p.name for p in tmp_path.iterdir())
    assert TRAJECTORIES_FILE in files and MANIFEST_FILE in files
    assert "matches.txt" not in files and "cloud.ply" not in files
    assert not any(f.endswith(".png.txt") for f in files)


def test_missing_mvf_path_fails_before_work(tmp_path):
    with pytest.raises(MissingInput):
        run_pipeline(PipelineConfig(output_dir=str(tmp_path / "o")))
    with pytest.raises(MissingInput):
        run_pipeline(PipelineConfig(mvf_path=str(tmp_path / "x.mvf"), output_dir=str(tmp_path / "o")))
    assert not (tmp_path / "o").exists()


def test_stage_errors_are_tagged(tmp_path):
    bad = tmp_path / "bad.mvf"
    bad.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(PipelineError) as e:
        run_pipeline(PipelineConfig(mvf_path=str(bad), output_dir=str(tmp_path / "o")))
    assert e.value.stage == "extract" and e.value.exit_code == 1


def test_pair_span_unlimited_bound(synth_inputs, tmp_path):
    m = run_pipeline(config_for(synth_inputs, tmp_path, pair_span=None, emit=frozenset()))
    assert_manifest_consistent(m)
    assert m.counts["matches_total"] == m.counts["match_bound"]
