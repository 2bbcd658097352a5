import math

import numpy as np
import pytest

from pcselect import degrade
from pcselect.features import (DataFeatures, EmptyCorpus, EmptyStream, ReferenceStats,
                               TooFewPoints, analyze_stream, dataset_statistics,
                               estimate_noise_sigma, heat_csv, orientation_bin,
                               orientation_csv, per_frame_csv, reference_stats,
                               reference_stats_from_counts)
from pcselect.pointcloud_io import ObjectLabel, read_labels

from conftest import make_cloud, plane_cloud


def test_reference_stats_mean():
    ref = reference_stats([make_cloud(100), make_cloud(300)], "train")
    assert ref.mean_points_per_frame == 200.0 and ref.frame_count == 2
    assert ReferenceStats.loads(ref.dumps()) == ref
    with pytest.raises(EmptyCorpus):
        reference_stats([])
    with pytest.raises(EmptyCorpus):
        reference_stats_from_counts([])


def test_reference_stats_rejects_bad_text():
    with pytest.raises(ValueError):
        ReferenceStats.loads("frame_count=3\n")
    with pytest.raises(ValueError):
        ReferenceStats.loads("nonsense\n")


def test_analyze_ratio_against_reference():
    ref = ReferenceStats(1000.0, 10)
    frames = [make_cloud(80), make_cloud(80), make_cloud(80)]
    f = analyze_stream(frames, ref)
    assert f.normalized_point_count == pytest.approx(0.080)
    assert f.noise_sigma is None and f.frames_analyzed == 3


def test_analyze_ratio_of_degraded_copy_equals_per_frame_ratio():
    clouds = [make_cloud(2000, seed=s) for s in range(3)]
    ref = reference_stats(clouds)
    down = [degrade.random_sample(c, 0.25, 1) for c in clouds]
    assert analyze_stream(down, ref).normalized_point_count == pytest.approx(0.25)


def test_declared_noise_wins_over_estimate():
    f = analyze_stream([plane_cloud(5000, 0.08)], ReferenceStats(5000.0, 1), declared_noise=0.02,
                       estimate_noise=True)
    assert f.noise_sigma == 0.02


def test_analyze_empty_stream():
    with pytest.raises(EmptyStream):
        analyze_stream([], ReferenceStats(1.0, 1))


@pytest.mark.parametrize("sigma", [0.02, 0.04, 0.08])
def test_noise_estimate_on_plane(sigma):
    est = estimate_noise_sigma(plane_cloud(60_000, sigma, seed=1))
    assert abs(est - sigma) / sigma <= 0.25


def test_noise_estimate_is_seeded():
    c = plane_cloud(20_000, 0.04, seed=2)
    assert estimate_noise_sigma(c, seed=5) == estimate_noise_sigma(c, seed=5)


def test_noise_estimate_needs_points():
    with pytest.raises(TooFewPoints):
        estimate_noise_sigma(make_cloud(10))
    with pytest.raises(ValueError):
        estimate_noise_sigma(make_cloud(100), k=3)


def test_features_csv_round_trip():
    for f in (DataFeatures(0.123456789, None, 4), DataFeatures(1.0, 0.08, 1)):
        assert DataFeatures.from_csv(f.to_csv()) == f
    assert DataFeatures(0.5).to_csv().splitlines()[1] == "0.5,,1"


def test_features_validation():
    with pytest.raises(ValueError):
        DataFeatures(-0.1)
    with pytest.raises(ValueError):
        DataFeatures(float("nan"))
    with pytest.raises(ValueError):
        DataFeatures(0.5, -1.0)


# ------------------------------------------------------- label statistics

def _label(cls, x, z, ry):
    return ObjectLabel(cls, 0.0, 0, 0.0, (0, 0, 10, 50), (1.5, 1.6, 3.9), (x, 1.7, z), ry)


def test_orientation_bins():
    assert orientation_bin(-math.pi) == 0
    assert orientation_bin(0.0) == 18
    assert orientation_bin(math.radians(179.9)) == 35
    assert orientation_bin(math.pi) == 0  # wraps


def test_dataset_statistics():
    frames = [[_label("Car", 1.2, 10.7, 0.0), _label("Car", 1.9, 10.1, 0.05),
               _label("Pedestrian", -3.5, 5.0, 1.0)],
              [_label("Car", -0.5, 30.0, -1.5)],
              []]
    s = dataset_statistics(frames)
    assert s["Car"].heat[(1, 10)] == 2 and s["Car"].heat[(-1, 30)] == 1
    assert s["Car"].orientation.sum() == 3 and s["Car"].orientation[18] == 2
    assert dict(s["Car"].per_frame) == {2: 1, 1: 1, 0: 1}
    assert dict(s["Cyclist"].per_frame) == {0: 3}
    assert "Car,0,10,2" in orientation_csv(s).splitlines()
    assert "Pedestrian,1,1" in per_frame_csv(s).splitlines()
    assert heat_csv(s["Car"]).splitlines() == ["x_cell,y_cell,count", "-1,30,1", "1,10,2"]


def test_dontcare_and_other_classes_are_skipped():
    text = ("Van 0.00 0 0 0 0 10 50 2 2 5 1 1.7 9 0\n"
            "DontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\n")
    s = dataset_statistics([read_labels(text)])
    assert all(not st.heat for st in s.values())
