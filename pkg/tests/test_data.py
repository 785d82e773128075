"""File formats, synthetic pairs and evaluation metrics."""

import numpy as np
import pytest

from mgev_stereo.core.io import (load_sample, read_manifest, read_pfm, read_pgm, read_ppm, write_manifest,
                                 write_pfm, write_pgm, write_ppm)
from mgev_stereo.core.metrics import average_reports, evaluate, format_table, reports_frame
from mgev_stereo.core.synthetic import generate_rds


# PFM / PPM ---------------------------------------------------------------------

def test_pfm_layout(tmp_path):
    path = str(tmp_path / 'a.pfm')
    disparity = np.array([[1.0, 2.0], [3.0, 4.5]], dtype=np.float32)
    write_pfm(path, disparity)
    blob = open(path, 'rb').read()
    assert blob.startswith(b'Pf\n2 2\n-1.0\n')
    assert len(blob) == len(b'Pf\n2 2\n-1.0\n') + 16
    # bottom row first
    np.testing.assert_array_equal(np.frombuffer(blob[-16:], '<f4'), [3.0, 4.5, 1.0, 2.0])
    np.testing.assert_array_equal(read_pfm(path), disparity)


def test_pfm_big_endian(tmp_path):
    path = tmp_path / 'be.pfm'
    values = np.array([[1.5, -2.0, 7.25]], dtype='>f4')
    path.write_bytes(b'Pf\n3 1\n1.0\n' + values.tobytes())
    np.testing.assert_array_equal(read_pfm(str(path)), values.astype(np.float32))


def test_pfm_errors_name_byte_offset(tmp_path):
    path = tmp_path / 'bad.pfm'
    path.write_bytes(b'PF\n2 2\n-1.0\n' + bytes(16))
    with pytest.raises(ValueError, match='magic .* at byte 0'):
        read_pfm(str(path))
    path.write_bytes(b'Pf\n2 2\n-1.0\n' + bytes(8))
    with pytest.raises(ValueError, match='need 16'):
        read_pfm(str(path))
    with pytest.raises(FileNotFoundError):
        read_pfm(str(tmp_path / 'missing.pfm'))


def test_ppm_layout_and_values(tmp_path, rng):
    path = str(tmp_path / 'a.ppm')
    image = np.round(rng.random((3, 2, 4)) * 255) / 255
    write_ppm(path, image)
    blob = open(path, 'rb').read()
    assert blob.startswith(b'P6\n4 2\n255\n')
    assert len(blob) == len(b'P6\n4 2\n255\n') + 24
    np.testing.assert_allclose(read_ppm(path), image, atol=1e-6)


def test_grayscale_replicated_to_three_channels(tmp_path):
    path = str(tmp_path / 'g.pgm')
    gray = np.array([[0.0, 1.0], [1.0, 0.0]])
    write_pgm(path, gray)
    np.testing.assert_array_equal(read_pgm(path), gray)
    rgb = read_ppm(path)
    assert rgb.shape == (3, 2, 2)
    assert np.all(rgb == gray)


def test_ppm_rejects_other_maxval(tmp_path):
    path = tmp_path / 'deep.ppm'
    path.write_bytes(b'P6\n1 1\n65535\n' + bytes(6))
    with pytest.raises(ValueError, match='maxval must be 255'):
        read_ppm(str(path))


def test_manifest_and_sample_roundtrip(tmp_path):
    sample = generate_rds(3, 16, 32, 6.0)
    write_ppm(str(tmp_path / 'l.ppm'), sample.left)
    write_ppm(str(tmp_path / 'r.ppm'), sample.right)
    write_pfm(str(tmp_path / 'g.pfm'), sample.gt_disparity)
    write_pgm(str(tmp_path / 'm.pgm'), sample.occlusion_mask.astype(float))
    write_manifest(str(tmp_path), [{'left': 'l.ppm', 'right': 'r.ppm', 'gt': 'g.pfm', 'mask': 'm.pgm',
                                    'd_max': 6.0, 'seed': 3}])
    frame = read_manifest(str(tmp_path))
    assert len(frame) == 1 and frame.loc[0, 'seed'] == 3
    loaded = load_sample(str(tmp_path), frame.iloc[0])
    np.testing.assert_array_equal(loaded['left'], sample.left)
    np.testing.assert_array_equal(loaded['gt'], sample.gt_disparity)
    np.testing.assert_array_equal(loaded['mask'], sample.occlusion_mask)


def test_manifest_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match='manifest'):
        read_manifest(str(tmp_path))


# Synthetic pairs ---------------------------------------------------------------

def test_zero_disparity_pair_is_identical():
    sample = generate_rds(0, 32, 64, 0.0, layers=1)
    np.testing.assert_array_equal(sample.left, sample.right)
    assert np.all(sample.gt_disparity == 0)
    assert sample.occlusion_mask.all()


def test_integer_layers_warp_exactly():
    sample = generate_rds(11, 48, 96, 20.0, layers=4, fractional=0.0)
    gt = sample.gt_disparity
    assert np.all(gt == np.round(gt))
    ys, xs = np.nonzero(sample.occlusion_mask)
    x_r = xs - gt[ys, xs].astype(int)
    np.testing.assert_array_equal(sample.left[:, ys, xs], sample.right[:, ys, x_r])
    assert gt.min() >= 0 and gt.max() <= 20.0


def test_generation_deterministic_and_bounded():
    a, b = generate_rds(5, 32, 64, 12.0), generate_rds(5, 32, 64, 12.0)
    np.testing.assert_array_equal(a.left, b.left)
    np.testing.assert_array_equal(a.gt_disparity, b.gt_disparity)
    assert not np.array_equal(a.left, generate_rds(6, 32, 64, 12.0).left)
    assert 0.0 <= a.left.min() and a.left.max() <= 1.0
    assert a.gt_disparity.max() <= 12.0


def test_d_max_limited_to_half_width():
    with pytest.raises(ValueError, match='width/2'):
        generate_rds(0, 32, 64, 40.0)


# Metrics -----------------------------------------------------------------------

def test_evaluate_examples():
    gt = np.array([[10.0, 20.0, 100.0, 200.0]])
    pred = gt + np.array([[0.5, 1.5, 4.0, 12.0]])
    report = evaluate(pred, gt)
    assert report.epe == pytest.approx(4.5)
    assert report.bad == {1: 75.0, 2: 50.0, 3: 50.0, 4: 25.0}
    # 4 px on 100 is within 5%; 12 px on 200 is not
    assert report.d1 == pytest.approx(25.0)
    assert report.bucket_counts[192] == 3
    assert report.buckets[192] == pytest.approx(2.0)


def test_evaluate_matches_loop_oracle(rng):
    for _ in range(100):
        h, w = int(rng.integers(1, 6)), int(rng.integers(1, 8))
        pred, gt = rng.uniform(0, 300, (h, w)), rng.uniform(0, 300, (h, w))
        exact = rng.random((h, w)) < 0.3
        pred[exact] = gt[exact]
        mask = rng.random((h, w)) < 0.7
        mask[0, 0] = True
        report = evaluate(pred, gt, mask, ranges=(100, 200))
        pairs = [(abs(pred[y, x] - gt[y, x]), gt[y, x]) for y in range(h) for x in range(w) if mask[y, x]]
        errors = [e for e, _ in pairs]
        assert report.count == len(errors)
        assert abs(report.epe - sum(errors) / len(errors)) < 1e-6
        for k in (1, 2, 3, 4):
            assert abs(report.bad[k] - 100.0 * sum(e > k for e in errors) / len(errors)) < 1e-6
        d1 = sum(e > 3 and e > 0.05 * g for e, g in pairs)
        assert abs(report.d1 - 100.0 * d1 / len(errors)) < 1e-6
        for t in (100, 200):
            inside = [e for e, g in pairs if g < t]
            assert report.bucket_counts[t] == len(inside)
            if inside:
                assert abs(report.buckets[t] - sum(inside) / len(inside)) < 1e-6
                assert abs(report.bucket_bad[t][3] - 100.0 * sum(e > 3 for e in inside) / len(inside)) < 1e-6
            else:
                assert np.isnan(report.buckets[t]) and np.isnan(report.bucket_bad[t][3])


def test_bucket_bad_columns_and_na():
    gt = np.array([[10.0, 20.0, 300.0]])
    pred = gt + np.array([[0.5, 2.5, 5.0]])
    report = evaluate(pred, gt, ranges=(8, 192, 384))
    assert report.bucket_bad[192] == {1: 50.0, 2: 50.0, 3: 0.0, 4: 0.0}
    assert report.bucket_bad[384][4] == pytest.approx(100.0 / 3)
    frame = reports_frame({'all': report})
    for column in ('bad1_lt192', 'bad4_lt384', 'bad3_lt8'):
        assert column in frame.columns
    assert np.isnan(frame.loc[0, 'bad3_lt8'])
    text = format_table(frame)
    assert 'bad2_lt8' in text and 'n/a' in text


def test_average_reports_bucket_bad_skips_empty():
    a = evaluate(np.array([[15.0]]), np.array([[10.0]]), ranges=(192,))
    b = evaluate(np.array([[500.0]]), np.array([[500.0]]), ranges=(192,))
    mean = average_reports([a, b])
    assert mean.bucket_bad[192] == {1: 100.0, 2: 100.0, 3: 100.0, 4: 100.0}
    assert np.isnan(average_reports([b]).bucket_bad[192][1])


def test_empty_bucket_is_nan_and_shown_as_na():
    gt = np.full((2, 2), 500.0)
    report = evaluate(gt, gt)
    assert report.epe == 0.0 and report.d1 == 0.0
    assert np.isnan(report.buckets[192]) and report.bucket_counts[192] == 0
    assert 'n/a' in format_table(reports_frame({'all': report}))


def test_evaluate_ignores_non_finite_gt_and_rejects_empty():
    gt = np.array([[1.0, np.inf, np.nan]])
    assert evaluate(np.zeros_like(gt), gt).count == 1
    with pytest.raises(ValueError, match='no pixels'):
        evaluate(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2), dtype=bool))


def test_average_reports_skips_empty_buckets():
    a = evaluate(np.array([[12.0]]), np.array([[10.0]]))
    b = evaluate(np.array([[500.0]]), np.array([[500.0]]))
    mean = average_reports([a, b])
    assert mean.epe == pytest.approx(1.0)
    assert mean.buckets[192] == pytest.approx(2.0)
    assert mean.count == 2
