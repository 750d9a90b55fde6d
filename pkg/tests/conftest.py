import numpy as np
import pytest
from hypothesis import strategies as st

from emoprosody.plans import Factors, RawScalingPlan
from emoprosody.prosody import PhonemeProsody, PitchRange, ProsodyTrack, WordSpan
from emoprosody.ranking import AcousticFeatureVector, Emotion


def make_track(word_sizes, durations=None, energies=None, pitches=None, uid="utt",
               pitch_range=None, rng=None):
    """Track whose words own ``word_sizes[i]`` consecutive phonemes."""
    n = sum(word_sizes)
    rng = rng or np.random.default_rng(0)
    durations = durations if durations is not None else rng.uniform(1.0, 20.0, n)
    energies = energies if energies is not None else rng.uniform(0.1, 3.0, n)
    pitches = pitches if pitches is not None else rng.uniform(-2.0, 2.0, n)
    phonemes = [PhonemeProsody(f"p{k}", float(durations[k]), float(energies[k]), float(pitches[k]))
                for k in range(n)]
    words, start = [], 0
    for i, size in enumerate(word_sizes):
        words.append(WordSpan(f"w{i}", start, start + size - 1))
        start += size
    return ProsodyTrack(uid, " ".join(w.word for w in words), phonemes, words, pitch_range)


@st.composite
def tracks(draw, max_words=6):
    sizes = draw(st.lists(st.integers(1, 4), min_size=1, max_size=max_words))
    n = sum(sizes)
    pos = st.floats(0.05, 60.0, allow_nan=False)
    durations = draw(st.lists(pos, min_size=n, max_size=n))
    energies = draw(st.lists(st.floats(0.01, 10.0), min_size=n, max_size=n))
    pitches = draw(st.lists(st.floats(-4.0, 4.0), min_size=n, max_size=n))
    lo = draw(st.floats(-5.0, -0.1))
    hi = draw(st.floats(0.1, 5.0))
    return make_track(sizes, durations, energies, pitches, pitch_range=PitchRange(lo, hi))


def raw_factor_values(bound, overshoot=3.0):
    return st.floats(-bound - overshoot, bound + overshoot, allow_nan=False)


@st.composite
def raw_plans(draw, n_words, overshoot=3.0):
    def triple():
        return Factors(
            pitch=draw(raw_factor_values(5.0, overshoot)),
            energy=draw(raw_factor_values(5.0, overshoot)),
            duration=draw(raw_factor_values(2.0, overshoot)),
        )

    g = triple()
    locs = tuple(triple() for _ in range(n_words))
    return RawScalingPlan(g, locs, tuple(f"w{i}" for i in range(n_words)))


def synthetic_corpus(speakers=("s1",), emotions=(Emotion.ANGRY,), n_per=6, dim=384, seed=0,
                     signal_dims=(0,), with_neutral=True):
    """Feature vectors where ``signal_dims`` carry intensity and the rest is noise."""
    rng = np.random.default_rng(seed)
    out = []
    cats = list(emotions) + ([Emotion.NEUTRAL] if with_neutral else [])
    for spk in speakers:
        for emo in cats:
            for k in range(n_per):
                x = rng.normal(0.0, 1.0, dim)
                level = 0.0 if emo == Emotion.NEUTRAL else 3.0 + rng.uniform(0.0, 3.0)
                for d in signal_dims:
                    x[d] = level + 0.1 * rng.normal()
                out.append(AcousticFeatureVector(f"{spk}_{emo.value}_{k:03d}", spk, emo, x))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def build_pipeline_inputs(root, speakers=("s1", "s2", "s3"), emotions=(Emotion.ANGRY, Emotion.HAPPY),
                          n_per=6, dim=384, seed=0):
    """Write features, tracks, a replay plans file and eval inputs under ``root``."""
    from emoprosody import formats
    from emoprosody.prompting import PromptRequest, StubProvider, parse_response

    root.mkdir(parents=True, exist_ok=True)
    corpus = synthetic_corpus(speakers, emotions, n_per=n_per, dim=dim, seed=seed)
    formats.write_features(root / "features.csv", corpus)

    rng = np.random.default_rng(seed)
    tracks_, plans = [], []
    stub = StubProvider()
    for u in corpus:
        if u.emotion == Emotion.NEUTRAL:
            continue
        sizes = list(rng.integers(1, 4, size=int(rng.integers(2, 6))))
        t = make_track(sizes, uid=u.utterance_id, rng=rng)
        t = ProsodyTrack(t.utterance_id, t.text, t.phonemes, t.words, PitchRange(-2.5, 2.5),
                         emotion=u.emotion.value)
        tracks_.append(t)
        req = PromptRequest(t.text, t.word_strings, u.emotion, utterance_id=t.utterance_id)
        plans.append((t.utterance_id, parse_response(stub.complete([], req), t.word_strings)))
    formats.write_tracks(root / "tracks.jsonl", tracks_)
    formats.write_plans(root / "replay.jsonl", plans)

    ids = [t.utterance_id for t in tracks_]
    with (root / "ref.csv").open("w") as fh:
        fh.write("utterance_id,text\n" + "".join(f"{u},the quick brown fox\n" for u in ids))
    with (root / "hyp.csv").open("w") as fh:
        fh.write("utterance_id,text\n"
                 + "".join(f"{u},the {'quick' if k % 2 else 'slow'} brown fox\n" for k, u in enumerate(ids)))
    for side in ("ref_cep", "hyp_cep"):
        (root / side).mkdir(exist_ok=True)
    for u in ids:
        a = rng.normal(size=(int(rng.integers(5, 12)), 13))
        formats.write_cepstra(root / "ref_cep" / f"{u}.csv", a)
        formats.write_cepstra(root / "hyp_cep" / f"{u}.csv", a + rng.normal(0, 0.1, a.shape))
    return corpus, tracks_


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
