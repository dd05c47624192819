import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from emotrace import nn, queue
from emotrace.annotations import AnnotationTrack
from emotrace.circumplex import EmotionPoint
from emotrace.queue import Candidate, QueuePolicy


def fixed(point):
    return lambda history: point


def test_opening_emotion():
    const = AnnotationTrack("c", [EmotionPoint(0.3, -0.1)] * 6)
    assert queue.opening_emotion(const, 4) == EmotionPoint(0.3, -0.1)
    track = AnnotationTrack("t", [EmotionPoint(0, 0), EmotionPoint(0.4, 0.2), EmotionPoint(1, 1)])
    assert queue.opening_emotion(track, 1) == EmotionPoint(0, 0)
    p = queue.opening_emotion(track, 2)
    assert p.valence == pytest.approx(0.2) and p.arousal == pytest.approx(0.1)
    with pytest.raises(queue.QueueError):
        queue.opening_emotion(track, 4)


def test_zero_tolerance_is_argmin_with_id_tiebreak():
    cands = [Candidate("b", EmotionPoint(0.5, 0)), Candidate("a", EmotionPoint(-0.5, 0)),
             Candidate("c", EmotionPoint(0.9, 0.9))]
    sel = queue.select_next(np.zeros((2, 10)), fixed(EmotionPoint(0, 0)), cands, QueuePolicy(tolerance=0))
    assert sel.clip_id == "a" and sel.distance == 0.5


def test_single_candidate_always_chosen():
    cands = [Candidate("only", EmotionPoint(-1, -1))]
    sel = queue.select_next(np.zeros((2, 10)), fixed(EmotionPoint(1, 1)), cands, QueuePolicy(tolerance=0.1))
    assert sel.clip_id == "only"


def test_pool_membership_over_seeds():
    cands = [Candidate("near", EmotionPoint(0.1, 0)), Candidate("mid", EmotionPoint(0, 0.15)),
             Candidate("far", EmotionPoint(-0.5, 0))]
    chosen = set()
    for seed in range(100):
        sel = queue.select_next(np.zeros((2, 10)), fixed(EmotionPoint(0, 0)), cands,
                                QueuePolicy(tolerance=0.1, seed=seed))
        chosen.add(sel.clip_id)
    assert chosen == {"near", "mid"}


def test_empty_candidates_and_bad_policy():
    with pytest.raises(queue.QueueError):
        queue.select_next(np.zeros((2, 10)), fixed(EmotionPoint(0, 0)), [])
    with pytest.raises(queue.QueueError):
        QueuePolicy(tolerance=-0.1)


candidate_sets = st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=12)


@settings(max_examples=60, deadline=None)
@given(candidate_sets, st.floats(0, 1), st.floats(0, 0.5), st.integers(0, 1000))
def test_selection_within_tolerance_and_pool_monotone(raw, target, tol, seed):
    cands = [Candidate(f"c{i:02d}", EmotionPoint(v, a)) for i, (v, a) in enumerate(raw)]
    pred = EmotionPoint(target, -target)
    sel = queue.select_next(np.zeros((2, 10)), fixed(pred), cands, QueuePolicy(tolerance=tol, seed=seed))
    dists = [np.hypot(c.opening.valence - pred.valence, c.opening.arousal - pred.arousal) for c in cands]
    assert sel.distance <= min(dists) + tol + 1e-12

    def pool(t):
        return {c.clip_id for c, d in zip(cands, dists) if d <= min(dists) + t}

    assert pool(tol) <= pool(tol + 0.1)


def test_network_predictor_and_run_queue():
    net = nn.LstmNetwork.initialize(2, 4, (1,), 0.0)
    for p in net.parameters():
        p[...] = 0
    net.head_bias[...] = [0.4, 0.4]
    cands = [Candidate(f"c{i}", EmotionPoint(0.1 * i, 0.1 * i)) for i in range(8)]
    trace = queue.run_queue(np.zeros((2, 12)), net, cands, QueuePolicy(tolerance=0), steps=3)
    assert [sel.clip_id for _, sel in trace] == ["c4", "c3", "c5"]
    assert trace[0][1].predicted == EmotionPoint(0.4, 0.4)
    buf = io.StringIO()
    queue.write_trace_csv(buf, trace)
    assert buf.getvalue().splitlines()[0] == "step,chosen_id,pred_valence,pred_arousal,distance"
    assert buf.getvalue().splitlines()[1].startswith("1,c4,0.400000,0.400000,0.0000")


def test_run_queue_follows_history_with_hold():
    cands = [Candidate("up", EmotionPoint(0.8, 0.8)), Candidate("down", EmotionPoint(-0.8, -0.8))]
    history = np.full((2, 10), 0.7)
    trace = queue.run_queue(history, queue.hold_predictor, cands, QueuePolicy(tolerance=0), steps=5)
    assert [sel.clip_id for _, sel in trace] == ["up", "down"]
    with pytest.raises(queue.QueueError):
        queue.run_queue(np.zeros((2, 5)), queue.hold_predictor, cands)


def test_load_library_annotated(tmp_path):
    (tmp_path / "lib.csv").write_text("clip_id,valence,arousal\na,0.5,1.5\nb,-0.2,0\n")
    lib = queue.load_library(tmp_path / "lib.csv")
    assert lib == [Candidate("a", EmotionPoint(0.5, 1.0)), Candidate("b", EmotionPoint(-0.2, 0.0))]
    (tmp_path / "bad.csv").write_text("name,x\n")
    with pytest.raises(queue.QueueError):
        queue.load_library(tmp_path / "bad.csv")


def test_load_library_audio_uses_emotion_model(tmp_path):
    wavfile.write(tmp_path / "x.wav", 44100, np.zeros(44100 * 3, np.int16))
    (tmp_path / "lib.csv").write_text("clip_id,path\nx,x.wav\n")
    net = nn.LstmNetwork.initialize(128, 4, (1,), 0.0)
    for p in net.parameters():
        p[...] = 0
    net.head_bias[...] = [-0.25, 0.75]
    lib = queue.load_library(tmp_path / "lib.csv", net, k=4)
    assert lib == [Candidate("x", EmotionPoint(-0.25, 0.75))]
    with pytest.raises(queue.QueueError):
        queue.load_library(tmp_path / "lib.csv")


def test_read_history(tmp_path):
    (tmp_path / "h.csv").write_text("valence,arousal\n0.1,0.2\n0.3,0.4\n")
    assert queue.read_history_csv(tmp_path / "h.csv").tolist() == [[0.1, 0.3], [0.2, 0.4]]
    (tmp_path / "e.csv").write_text("valence,arousal\n")
    with pytest.raises(queue.QueueError):
        queue.read_history_csv(tmp_path / "e.csv")
