import csv
import json

import numpy as np
import pytest

from conftest import build_pipeline_inputs, make_track, synthetic_corpus
from emoprosody import __version__, formats
from emoprosody.cli import main
from emoprosody.plans import Factors, RawScalingPlan
from emoprosody.prosody import PitchRange, ProsodyTrack
from emoprosody.ranking import Emotion

ESD_EMOTIONS = (Emotion.ANGRY, Emotion.HAPPY, Emotion.SAD, Emotion.SURPRISE)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def esd_like(tmp_path_factory):
    root = tmp_path_factory.mktemp("esd")
    speakers = tuple(f"{k:04d}" for k in range(1, 11))
    corpus = synthetic_corpus(speakers, ESD_EMOTIONS, n_per=4, dim=384, seed=1)
    formats.write_features(root / "features.csv", corpus)
    return root


def test_train_rank_one_model_per_speaker_emotion(esd_like, tmp_path):
    assert run("train-rank", esd_like / "features.csv", "--out", tmp_path / "m", "--jobs", 4) == 0
    models = formats.read_models_dir(tmp_path / "m")
    assert len(models) == 40
    assert {e for _, e in models} == set(ESD_EMOTIONS)
    with (tmp_path / "m" / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40 and all(r["status"] == "trained" for r in rows)


def test_train_rank_rerun_is_byte_identical(esd_like, tmp_path):
    for d in ("a", "b"):
        assert run("train-rank", esd_like / "features.csv", "--out", tmp_path / d, "--jobs", 3) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_train_rank_speaker_without_neutral_is_partial(tmp_path):
    corpus = synthetic_corpus(("s1",), n_per=4, dim=384)
    corpus += synthetic_corpus(("s2",), n_per=4, dim=384, with_neutral=False)
    formats.write_features(tmp_path / "f.csv", corpus)
    assert run("train-rank", tmp_path / "f.csv", "--out", tmp_path / "m") == 2
    assert set(formats.read_models_dir(tmp_path / "m")) == {("s1", Emotion.ANGRY)}
    summary = (tmp_path / "m" / "summary.csv").read_text()
    assert "s2,Angry,skipped" in summary


def test_train_rank_nothing_trainable_fails(tmp_path):
    formats.write_features(tmp_path / "f.csv", synthetic_corpus(n_per=3, with_neutral=False))
    assert run("train-rank", tmp_path / "f.csv", "--out", tmp_path / "m") == 1


def test_train_rank_bad_header_fails(tmp_path):
    formats.write_features(tmp_path / "f.csv", synthetic_corpus(n_per=2, dim=383))
    assert run("train-rank", tmp_path / "f.csv", "--out", tmp_path / "m") == 1


def test_usage_errors_exit_one(capsys):
    assert run() == 1
    with pytest.raises(SystemExit) as exc:
        run("train-rank")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("scale", "x.json", "--out", "y.json", "--prompt-control", "loud")
    assert exc.value.code == 1


def test_version(capsys):
    assert run("--version") == 0
    out = capsys.readouterr().out
    assert __version__ in out and "track=1" in out and "prosody_prompt_v1" in out


def _write_single(tmp_path, plan=None):
    t = make_track([2, 1, 3], uid="u1", pitch_range=PitchRange(-3.0, 3.0))
    t = ProsodyTrack(t.utterance_id, t.text, t.phonemes, t.words, t.pitch_range, emotion="Angry")
    formats.write_tracks(tmp_path / "t.jsonl", [t])
    if plan is not None:
        formats.write_plans(tmp_path / "p.jsonl", [("u1", plan)])
    return t


def test_scale_none_copies_tracks(tmp_path):
    t = _write_single(tmp_path)
    assert run("scale", tmp_path / "t.jsonl", "--out", tmp_path / "o.jsonl", "--prompt-control", "none") == 0
    assert formats.read_tracks(tmp_path / "o.jsonl")[0] == [t]


def test_scale_neutral_plan_is_identity(tmp_path):
    t = _write_single(tmp_path, RawScalingPlan.neutral(["w0", "w1", "w2"]))
    assert run("scale", tmp_path / "t.jsonl", tmp_path / "p.jsonl", "--out", tmp_path / "o.jsonl") == 0
    assert formats.read_tracks(tmp_path / "o.jsonl")[0] == [t]


def test_scale_global_energy_five_doubles_energy(tmp_path):
    t = _write_single(tmp_path, RawScalingPlan(Factors(energy=5.0), (Factors(),) * 3, ("w0", "w1", "w2")))
    assert run("scale", tmp_path / "t.jsonl", tmp_path / "p.jsonl", "--out", tmp_path / "o.jsonl") == 0
    (out,), _ = formats.read_tracks(tmp_path / "o.jsonl")
    assert [p.energy for p in out.phonemes] == pytest.approx([2 * p.energy for p in t.phonemes], rel=1e-12)
    assert [p.duration for p in out.phonemes] == [p.duration for p in t.phonemes]


def test_scale_local_mode_drops_global(tmp_path):
    plan = RawScalingPlan(Factors(energy=5.0), (Factors(),) * 3, ("w0", "w1", "w2"))
    t = _write_single(tmp_path, plan)
    assert run("scale", tmp_path / "t.jsonl", tmp_path / "p.jsonl", "--out", tmp_path / "o.jsonl",
               "--prompt-control", "local") == 0
    assert formats.read_tracks(tmp_path / "o.jsonl")[0] == [t]


def test_scale_missing_plan_is_partial(tmp_path):
    _write_single(tmp_path)
    formats.write_plans(tmp_path / "p.jsonl", [])
    assert run("scale", tmp_path / "t.jsonl", tmp_path / "p.jsonl", "--out", tmp_path / "o.jsonl") == 2


def test_stub_neutral_pipeline_is_identity(tmp_path):
    t = _write_single(tmp_path)
    assert run("prompt", tmp_path / "t.jsonl", "--out", tmp_path / "p.jsonl", "--provider", "stub:neutral") == 0
    assert run("scale", tmp_path / "t.jsonl", tmp_path / "p.jsonl", "--out", tmp_path / "o.jsonl") == 0
    assert formats.read_tracks(tmp_path / "o.jsonl")[0] == [t]


def test_prompt_needs_an_emotion(tmp_path):
    formats.write_tracks(tmp_path / "t.jsonl", [make_track([1, 1], uid="a")])
    assert run("prompt", tmp_path / "t.jsonl", "--out", tmp_path / "p.jsonl", "--provider", "stub") == 2
    assert run("prompt", tmp_path / "t.jsonl", "--out", tmp_path / "p.jsonl", "--provider", "stub",
               "--emotion", "Sad") == 0
    (rec,), _ = formats.read_plans(tmp_path / "p.jsonl")
    assert rec[0] == "a"


def test_prompt_replay_missing_utterance_is_partial(tmp_path):
    _write_single(tmp_path)
    formats.write_plans(tmp_path / "r.jsonl", [])
    assert run("prompt", tmp_path / "t.jsonl", "--out", tmp_path / "p.jsonl",
               "--provider", f"replay:{tmp_path / 'r.jsonl'}") == 2


def test_config_flag(tmp_path):
    _write_single(tmp_path, RawScalingPlan(Factors(energy=5.0), (Factors(),) * 3, ("w0", "w1", "w2")))
    (tmp_path / "c.toml").write_text("[scaling]\nenergy_target = [0.5, 1.5]\n")
    assert run("scale", tmp_path / "t.jsonl", tmp_path / "p.jsonl", "--out", tmp_path / "o.jsonl",
               "--config", tmp_path / "c.toml") == 0
    (out,), _ = formats.read_tracks(tmp_path / "o.jsonl")
    (t,), _ = formats.read_tracks(tmp_path / "t.jsonl")
    assert out.phonemes[0].energy == pytest.approx(1.5 * t.phonemes[0].energy)
    (tmp_path / "bad.toml").write_text("[scaling]\npich_gain = 1\n")
    assert run("scale", tmp_path / "t.jsonl", tmp_path / "p.jsonl", "--out", tmp_path / "o.jsonl",
               "--config", tmp_path / "bad.toml") == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    build_pipeline_inputs(root, n_per=5, dim=384)
    return root


def test_eval_rates_and_mcd(pipeline, tmp_path, capsys):
    assert run("eval", "wer", "--ref", pipeline / "ref.csv", "--hyp", pipeline / "hyp.csv",
               "--out", tmp_path / "wer.json") == 0
    rep = json.loads((tmp_path / "wer.json").read_text())
    assert rep["metric"] == "wer" and rep["aggregate"]["count"] == 30
    assert rep["aggregate"]["mean"] == pytest.approx(0.125)
    assert (tmp_path / "wer.csv").exists()
    assert run("eval", "cer", "--ref", pipeline / "ref.csv", "--hyp", pipeline / "hyp.csv",
               "--out", tmp_path / "cer.json") == 0
    assert run("eval", "mcd", "--ref", pipeline / "ref_cep", "--hyp", pipeline / "hyp_cep",
               "--out", tmp_path / "mcd.json") == 0
    assert json.loads((tmp_path / "mcd.json").read_text())["aggregate"]["mean"] > 0
    assert "mcd:" in capsys.readouterr().out


def test_eval_missing_input_fails(tmp_path):
    assert run("eval", "wer", "--out", tmp_path / "x.json") == 1


def test_eval_eca_pir_mos(tmp_path):
    (tmp_path / "l.csv").write_text("utterance_id,pred,truth\na,Sad,Sad\nb,Angry,Sad\n")
    assert run("eval", "eca", "--labels", tmp_path / "l.csv", "--out", tmp_path / "e.json") == 0
    assert json.loads((tmp_path / "e.json").read_text())["aggregate"]["mean"] == 0.5
    (tmp_path / "r.csv").write_text("rater_id,utterance_id,perceived,annotated\nr,a,Low,Low\nr,b,High,Medium\n")
    assert run("eval", "pir", "--responses", tmp_path / "r.csv", "--out", tmp_path / "p.json") == 0
    assert json.loads((tmp_path / "p.json").read_text())["confusion"][1] == [0, 0, 1]
    (tmp_path / "m.csv").write_text("rater_id,utterance_id,score,pc\nr,a,4,GL\nr,b,3,GL\nr,c,2,None\n")
    assert run("eval", "mos", "--ratings", tmp_path / "m.csv", "--group-by", "pc",
               "--out", tmp_path / "m.json") == 0
    groups = json.loads((tmp_path / "m.json").read_text())["groups"]
    assert groups["GL"]["mean"] == 3.5 and groups["None"]["count"] == 1


def test_full_pipeline(pipeline, tmp_path):
    out = tmp_path
    assert run("train-rank", pipeline / "features.csv", "--out", out / "models") == 0
    assert len(formats.read_models_dir(out / "models")) == 6
    assert run("annotate", pipeline / "features.csv", "--models", out / "models", "--out", out / "ann.csv") == 0
    ann, _ = formats.read_annotations(out / "ann.csv")
    assert len(ann) == 30
    assert run("prompt", pipeline / "tracks.jsonl", "--annotations", out / "ann.csv", "--out", out / "plans.jsonl",
               "--provider", f"replay:{pipeline / 'replay.jsonl'}") == 0
    assert run("scale", pipeline / "tracks.jsonl", out / "plans.jsonl", "--out", out / "scaled.jsonl") == 0
    scaled, errors = formats.read_tracks(out / "scaled.jsonl")
    src, _ = formats.read_tracks(pipeline / "tracks.jsonl")
    assert not errors and len(scaled) == len(src) == 30
    angry = [(a, b) for a, b in zip(src, scaled) if a.emotion == "Angry"]
    ratio = np.array([q.energy / p.energy for a, b in angry for p, q in zip(a.phonemes, b.phonemes)])
    assert np.all((ratio >= 0.5) & (ratio <= 2.0))
