import json

import numpy as np
import pytest
from PIL import Image

from mvsfm.cli import main
from mvsfm.container import StreamInfo, encode_obu, write_ivf


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, "--json", *argv)
    assert code == 0, err
    return json.loads(out)


def ivf_file(path, units):
    payloads = [b"".join(encode_obu(t, b"\x00") for t in u) for u in units]
    path.write_bytes(write_ivf(StreamInfo("AV01", 64, 64, 1, 30, len(payloads)), payloads))
    return path


@pytest.fixture(scope="module")
def tracked(synth_inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert main(["track", "--mvf", str(synth_inputs / "scene.mvf"), "--out", str(out / "tracks")]) == 0
    return out


def test_inspect_conforming_stream(tmp_path, capsys):
    p = ivf_file(tmp_path / "a.ivf", [(2, 1, 6), (2, 6), (2, 6)])
    d = run_json(capsys, "inspect", p)
    assert d["validation"]["conforms"] and d["frame_kinds_source"] == "sequence-header heuristic"
    assert d["obu_histogram"] == {"Frame": 3, "SequenceHeader": 1, "TemporalDelimiter": 3}
    assert [f["size"] for f in d["frames"]] == [9, 6, 6]  # 3 bytes per one-byte OBU


def test_inspect_flags_hidden_frames_text_output(tmp_path, capsys):
    p = ivf_file(tmp_path / "b.ivf", [(2, 1, 6), (2, 6, 6)])
    code, out, _ = run(capsys, "inspect", p)
    assert code == 0 and "VIOLATES" in out and "MultiFrameTemporalUnit @ 1" in out


def test_inspect_uses_mvf_kinds(tmp_path, synth_inputs, capsys):
    p = ivf_file(tmp_path / "c.ivf", [(2, 6)] * 12)
    d = run_json(capsys, "inspect", p, "--mvf", synth_inputs / "scene.mvf")
    assert d["frame_kinds_source"] == "mvf" and d["validation"]["conforms"]


def test_global_flags_after_subcommand(tmp_path, capsys):
    p = ivf_file(tmp_path / "d.ivf", [(2, 1, 6)])
    code, out, _ = run(capsys, "inspect", p, "--json", "--log-level", "debug")
    assert code == 0 and json.loads(out)["validation"]["key_frame_count"] == 1


@pytest.mark.parametrize(
    "argv",
    [["inspect", "missing.ivf"], ["extract", "--mvf", "missing.mvf"], ["run"], ["track", "--mvf", "nope.mvf"]],
)
def test_missing_inputs_exit_one(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    assert code == 1 and err.startswith("error:")


def test_bad_ivf_exits_one(tmp_path, capsys):
    p = tmp_path / "bad.ivf"
    p.write_bytes(b"RIFF" + bytes(28))
    assert run(capsys, "inspect", p)[0] == 1


def test_unknown_config_key_exits_one(tmp_path, synth_inputs, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("taau = 0.5\n")
    code, _, err = run(capsys, "--config", cfg, "track", "--mvf", synth_inputs / "scene.mvf")
    assert code == 1 and "taau" in err


def test_internal_error_exits_two(capsys, monkeypatch):
    import mvsfm.cli as cli

    def boom(_):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(cli, "load_mvf", boom)
    code, _, err = run(capsys, "extract", "--mvf", __file__)
    assert code == 2 and "internal error" in err


def test_extract_dump_and_frame_filter(synth_inputs, capsys):
    d = run_json(capsys, "extract", "--mvf", synth_inputs / "scene.mvf", "--frame", 3)
    (f,) = d["fields"]
    assert f["frame_index"] == 3 and f["valid_cells"] > 0 and f["grid"] == [480, 270]


def test_extract_renders_scene(synth_inputs, tmp_path, capsys):
    out = tmp_path / "again.mvf"
    d = run_json(capsys, "extract", "--synth-from", synth_inputs / "scene.json", "--out", out)
    assert d["frames"] == 12
    assert out.read_bytes() == (synth_inputs / "scene.mvf").read_bytes()


def test_synth_writes_scene_and_fields(tmp_path, capsys):
    d = run_json(capsys, "synth", "--points", 20, "--frames", 3, "--motion", "lateral", "--out", tmp_path)
    assert d["points"] == 20 and d["frames"] == 3
    assert (tmp_path / "scene.json").exists() and (tmp_path / "scene.mvf").stat().st_size == d["mvf_bytes"]


def test_track_export_eval_chain(tracked, synth_inputs, capsys):
    out = tracked / "colmap"
    d = run_json(capsys, "export", "--tracks", tracked / "tracks", "--out", out, "--scene", synth_inputs / "scene.json")
    assert d["images"] == 12 and d["matches"] > 0 and d["cloud_points"] > 0
    r = run_json(capsys, "eval", "reproj", "--scene", synth_inputs / "scene.json",
                 "--cloud", out / "cloud.ply", "--tracks", out)
    assert r["count"] > 0 and r["mean"] < 0.6
    c = run_json(capsys, "eval", "cloud", "--a", out / "cloud.ply", "--b", out / "cloud.ply")
    assert c["chamfer"] == 0.0 and c["hausdorff"] == 0.0


def test_track_flags_change_result(synth_inputs, tmp_path, capsys):
    base = run_json(capsys, "track", "--mvf", synth_inputs / "scene.mvf", "--out", tmp_path / "a")
    strict = run_json(capsys, "track", "--mvf", synth_inputs / "scene.mvf", "--out", tmp_path / "b",
                      "--min-frames", 10, "--pair-span", "unlimited")
    assert strict["trajectories_after"] < base["trajectories_after"]
    assert strict["trajectories_before"] == base["trajectories_before"]


def test_export_with_name_manifest(tracked, tmp_path, capsys):
    names = tmp_path / "names.txt"
    names.write_text("".join(f"img{k:02d}.jpg\n" for k in range(12)))
    run_json(capsys, "export", "--tracks", tracked / "tracks", "--out", tmp_path / "o", "--name-manifest", names)
    assert (tmp_path / "o" / "img05.jpg.txt").exists()
    assert (tmp_path / "o" / "matches.txt").read_text().startswith("img00.jpg img01.jpg\n")


def test_eval_image(tmp_path, capsys):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    Image.fromarray(img).save(tmp_path / "a.png")
    Image.fromarray(np.clip(img.astype(int) + 1, 0, 255).astype(np.uint8)).save(tmp_path / "b.png")
    d = run_json(capsys, "eval", "image", "--ref", tmp_path / "a.png", "--test", tmp_path / "a.png")
    assert d["psnr_y"] == "inf" and d["delta_q"] == 0.0
    d = run_json(capsys, "eval", "image", "--ref", tmp_path / "a.png", "--test", tmp_path / "b.png")
    assert 40 < d["psnr_y"] < 60


def test_run_subcommand_with_config(synth_inputs, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"mvf_path = {synth_inputs / 'scene.mvf'}\nemit = matches\ntau = 0.5\n")
    d = run_json(capsys, "--config", cfg, "run", "--out", tmp_path / "o", "--tau", 0.3)
    assert d["config"]["tau"] == 0.3 and d["config"]["emit"] == ["matches"]
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["manifest.json", "matches.txt"]
