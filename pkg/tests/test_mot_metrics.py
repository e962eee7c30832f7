import math

import numpy as np
import pytest

from doatrack.errors import EvaluationError
from doatrack.geometry import DoaVector
from doatrack.mot_metrics import (
    FrameAssociation,
    associate_frame,
    count_ids,
    evaluate_sequence,
    frame_le,
)
from doatrack.scenes import SceneTimeline

from oracles import brute_force_mot


def timeline(frames, n_max=2, fp=0.1):
    return SceneTimeline(fp, frames, n_max)


def v(az, el=0.0):
    return DoaVector.from_azel(az, el)


def test_frame_le_perfect_single_source():
    fr = associate_frame(0, [v(30)], [v(30)], [0], n_max=2)
    assert frame_le(fr.assoc, fr.distances) == pytest.approx(0.0, abs=1e-9)


def test_frame_le_two_sources_brute_forced():
    # optimal pairing is (0 deg, 90 deg): brute force over both pairings
    preds = [DoaVector(1, 0, 0), DoaVector(0, 0, 1)]
    refs = [DoaVector(1, 0, 0), DoaVector(0, 1, 0)]
    fr = associate_frame(0, preds, refs, [0, 1], n_max=2)
    assert frame_le(fr.assoc, fr.distances) == pytest.approx(45.0, abs=1e-9)


def test_frame_le_order_invariant():
    preds = [v(10), v(200)]
    refs = [v(200), v(10)]
    fr = associate_frame(0, preds, refs, [0, 1], n_max=2)
    assert frame_le(fr.assoc, fr.distances) == pytest.approx(0.0, abs=1e-9)


def test_frame_le_undefined_for_empty():
    fr = associate_frame(0, [], [], [], n_max=2)
    assert frame_le(fr.assoc, fr.distances) is None


def test_count_ids_stable_match():
    history = {}
    for t in range(2):
        fr = associate_frame(t, [v(0)], [v(1)], [7], n_max=2)
        assert count_ids(fr, history) == 0
    assert history == {7: 0}


def test_count_ids_swap_counts_two():
    # two tracks whose regressor assignments swap between frames
    history = {}
    fr0 = associate_frame(0, [v(0), v(90)], [v(0), v(90)], [1, 2], n_max=2)
    assert count_ids(fr0, history) == 0
    fr1 = associate_frame(1, [v(90), v(0)], [v(0), v(90)], [1, 2], n_max=2)
    assert count_ids(fr1, history) == 2


def test_count_ids_memory_across_miss():
    history = {}
    fr0 = associate_frame(0, [v(0)], [v(0)], [5], n_max=2)
    count_ids(fr0, history)
    fr1 = associate_frame(1, [], [v(0)], [5], n_max=2)  # miss
    assert count_ids(fr1, history) == 0
    fr2 = associate_frame(2, [v(0)], [v(0)], [5], n_max=2)  # re-match, same regressor
    assert count_ids(fr2, history) == 0
    fr3 = associate_frame(3, [v(170), v(0)], [v(0)], [5], n_max=2)  # different one
    assert count_ids(fr3, history) == 1


def test_perfect_tracker_report():
    frames = [[(0, v(10)), (1, v(120))], [(0, v(12)), (1, v(121))]]
    refs = timeline(frames)
    report = evaluate_sequence(refs, refs)
    assert report.mota == pytest.approx(1.0)
    assert report.motp == pytest.approx(0.0, abs=1e-9)
    assert report.lr == 1.0 and report.lp == 1.0 and report.lf1 == 1.0
    assert report.ids == 0


def test_spurious_prediction_accounting():
    # 2 frames, 1 ref each; frame 2 adds one spurious DOA: FP=1, MOTa=0.5
    refs = timeline([[(0, v(0))], [(0, v(0))]])
    preds = timeline([[(0, v(0))], [(0, v(0)), (1, v(90))]])
    report = evaluate_sequence(refs, preds)
    assert report.fp == 1
    assert report.fn == 0
    assert report.mota == pytest.approx(0.5)


def test_empty_predictions():
    refs = timeline([[(0, v(i))] for i in range(10)])
    preds = timeline([[] for _ in range(10)], n_max=2)
    report = evaluate_sequence(refs, preds)
    assert report.fn == 10
    assert report.mota == pytest.approx(0.0)
    assert report.lr == 0.0


def test_frame_range_mismatch_raises():
    refs = timeline([[(0, v(0))]])
    preds = timeline([[(0, v(0))], [(0, v(0))]])
    with pytest.raises(EvaluationError):
        evaluate_sequence(refs, preds)


def _random_frames(rng, n_frames, max_sources, id_pool):
    frames = []
    for _ in range(n_frames):
        k = int(rng.integers(0, max_sources + 1))
        ids = rng.choice(id_pool, size=k, replace=False)
        entries = []
        for tid in sorted(ids.tolist()):
            w = rng.normal(size=3)
            entries.append((int(tid), DoaVector(*(w / np.linalg.norm(w)))))
        frames.append(entries)
    return frames


def test_oracle_equivalence_random_sequences():
    rng = np.random.default_rng(42)
    for trial in range(500):
        ref_frames = _random_frames(rng, 3, 3, [0, 1, 2])
        pred_frames = _random_frames(rng, 3, 3, [0, 1, 2])
        refs = timeline(ref_frames, n_max=3)
        preds = timeline(pred_frames, n_max=3)
        report = evaluate_sequence(refs, preds)
        oracle = brute_force_mot(
            [[(tid, d.as_array()) for tid, d in f] for f in ref_frames],
            [[(tid, d.as_array()) for tid, d in f] for f in pred_frames])
        assert report.tp == oracle["tp"], f"trial {trial}"
        assert report.fp == oracle["fp"], f"trial {trial}"
        assert report.fn == oracle["fn"], f"trial {trial}"
        assert report.ids == oracle["ids"], f"trial {trial}"
        if report.tp:
            assert report.motp == pytest.approx(oracle["motp_deg"], abs=1e-9)
        if oracle["n_ref"]:
            assert report.mota == pytest.approx(oracle["mota"], abs=1e-12)
        assert report.lr == pytest.approx(oracle["lr"], abs=1e-12)
        assert report.lp == pytest.approx(oracle["lp"], abs=1e-12)


def test_motp_equals_framewise_le_aggregation():
    rng = np.random.default_rng(43)
    ref_frames = _random_frames(rng, 20, 2, [0, 1])
    pred_frames = _random_frames(rng, 20, 2, [0, 1])
    refs = timeline(ref_frames)
    preds = timeline(pred_frames)
    report = evaluate_sequence(refs, preds)
    num = 0.0
    den = 0
    for t in range(20):
        fr = associate_frame(
            t, [d for _, d in pred_frames[t]], [d for _, d in ref_frames[t]],
            [tid for tid, _ in ref_frames[t]], n_max=2)
        le = frame_le(fr.assoc, fr.distances)
        if le is not None:
            k = fr.assoc.n_matched
            num += le * k
            den += k
    if den:
        assert report.motp == pytest.approx(num / den, abs=1e-9)


def test_mota_invariant_to_track_relabeling():
    rng = np.random.default_rng(44)
    ref_frames = _random_frames(rng, 10, 2, [0, 1])
    pred_frames = _random_frames(rng, 10, 2, [0, 1])
    base = evaluate_sequence(timeline(ref_frames), timeline(pred_frames))
    relabeled = [[(tid + 100, d) for tid, d in f] for f in ref_frames]
    shifted = evaluate_sequence(timeline(relabeled), timeline(pred_frames))
    assert shifted.mota == pytest.approx(base.mota, abs=1e-12)
    assert shifted.ids == base.ids


def test_simultaneous_fp_fn_shift():
    # adding one FP and one FN to a frame lowers MOTa by exactly 2 / sum(N_t)
    rng = np.random.default_rng(45)
    ref_frames = [[(0, v(10 * t))] for t in range(10)]
    pred_frames = [[(0, v(10 * t))] for t in range(10)]
    base = evaluate_sequence(timeline(ref_frames), timeline(pred_frames))
    ref2 = [list(f) for f in ref_frames]
    pred2 = [list(f) for f in pred_frames]
    ref2[3] = [(1, v(200))]  # replace: original ref becomes FN for track 0
    pred2[3] = [(0, v(30)), (1, v(31))]
    # frame 3 now: 2 preds, 1 ref -> 1 FP; plus make a clean FN elsewhere
    ref2[7].append((2, v(300)))
    n_ref = sum(len(f) for f in ref2)
    report = evaluate_sequence(timeline(ref2, n_max=2), timeline(pred2, n_max=2))
    assert report.fp == 1 and report.fn == 1
    assert report.mota == pytest.approx(1.0 - (1 + 1 + report.ids) / n_ref, abs=1e-12)


def test_gate_excludes_distant_matches():
    refs = timeline([[(0, v(0))]])
    preds = timeline([[(0, v(90))]])
    no_gate = evaluate_sequence(refs, preds)
    assert no_gate.tp == 1
    gated = evaluate_sequence(refs, preds, gate_deg=30.0)
    assert gated.tp == 0 and gated.fp == 1 and gated.fn == 1
