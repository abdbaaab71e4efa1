import numpy as np
import pytest

from auxive.core import AuxiveParams, DemixHistory, apply_history, init_state, run
from auxive.metrics import (DB_CAP, EvalReport, attenuation_trace, attenuation_variance, decompose_output, evaluate,
                            fail_stats, isnr)
from conftest import random_spec, spec_from


def fixed_history(w):
    w = np.asarray(w, complex)
    return DemixHistory(np.array([-1]), w[None], np.ones((1, w.shape[0]), complex), 0)


def identity_history(n_bins, d):
    return DemixHistory.from_states([(-1, init_state(d, n_bins, AuxiveParams()))], 0)


def test_single_source_contribution_is_output():
    spec = random_spec(8, 200, 3, seed=1)
    hist = run(spec, AuxiveParams(), "block_online").history
    (contrib,) = decompose_output(hist, [spec])
    assert np.array_equal(contrib.coeffs[:, :, 0], apply_history(spec.coeffs, hist))


def test_decomposition_linearity():
    images = [random_spec(8, 250, 3, seed=s) for s in (2, 3, 4)]
    mix = images[0].with_coeffs(sum(i.coeffs for i in images))
    hist = run(mix, AuxiveParams(), "block_online").history
    total = sum(c.coeffs for c in decompose_output(hist, images))
    assert np.max(np.abs(total[:, :, 0] - apply_history(mix.coeffs, hist))) <= 1e-10 * np.max(np.abs(total))


def test_perfect_extraction_caps():
    soi, other = random_spec(4, 30, 2, seed=5), random_spec(4, 30, 2, seed=6)
    contributions = [soi.channel(0), other.with_coeffs(np.zeros((4, 30, 1)))]
    res = isnr(contributions, 0, [soi, other])
    assert res.isnr_db == DB_CAP
    assert res.output_snr_db == DB_CAP


def test_identity_extractor_zero():
    images = [random_spec(6, 120, 3, seed=s) for s in (7, 8)]
    mix = images[0].with_coeffs(images[0].coeffs + images[1].coeffs)
    rep = evaluate(identity_history(6, 3), mix, images, 0)
    assert rep.isnr_db == 0.0
    assert rep.output_snr_db == pytest.approx(rep.input_snr_db, abs=1e-12)
    assert np.all(rep.isnr_trace == 0.0)


def test_constructed_six_db():
    rng = np.random.default_rng(0)
    s1 = rng.standard_normal((4, 400)) + 1j * rng.standard_normal((4, 400))
    s2 = rng.standard_normal((4, 400)) + 1j * rng.standard_normal((4, 400))
    s1 *= np.sqrt(10**0.6 * np.sum(np.abs(s2) ** 2) / np.sum(np.abs(s1) ** 2))
    soi = spec_from(np.stack([s1, s1], axis=-1))
    interf = spec_from(np.stack([s2, np.zeros_like(s2)], axis=-1))
    # w = [1 - t, t] keeps the SOI and scales the interferer by 1 - t
    t = 1 - 10**-0.3
    w = np.tile([1 - t, t], (4, 1))
    mix = soi.with_coeffs(soi.coeffs + interf.coeffs)
    rep = evaluate(fixed_history(w), mix, [soi, interf], 0)
    assert rep.input_snr_db == pytest.approx(6.0, abs=1e-9)
    assert rep.output_snr_db == pytest.approx(12.0, abs=1e-9)
    assert rep.isnr_db == pytest.approx(6.0, abs=0.1)
    assert not rep.failed


def test_attenuation_examples():
    s = random_spec(8, 50, 1, seed=9)
    assert np.allclose(attenuation_trace(s, s), 0.0)
    assert np.allclose(attenuation_trace(s.with_coeffs(s.coeffs / 2), s), 10 * np.log10(0.25))
    coeffs = s.coeffs.copy()
    coeffs[:, 10] = 0.0
    coeffs[:, 11] *= 1e-3
    tr = attenuation_trace(s, s.with_coeffs(coeffs))
    assert np.isnan(tr[10]) and np.isnan(tr[11])
    assert np.isfinite(tr[12])
    assert attenuation_variance(tr) == pytest.approx(0.0, abs=1e-20)


def test_attenuation_identity_clean_source():
    soi = random_spec(8, 120, 3, seed=10)
    rep = evaluate(identity_history(8, 3), soi, [soi], 0)
    defined = rep.attenuation_trace[np.isfinite(rep.attenuation_trace)]
    assert defined.size > 0
    assert np.allclose(defined, 0.0)


def test_attenuation_frame_mismatch():
    with pytest.raises(ValueError):
        attenuation_trace(random_spec(4, 10, 1), random_spec(4, 11, 1))


def test_all_values_finite_and_capped():
    soi = random_spec(4, 150, 2, seed=11)
    other = soi.with_coeffs(np.zeros_like(soi.coeffs))
    rep = evaluate(identity_history(4, 2), soi, [soi, other], 0)
    for v in (rep.input_snr_db, rep.output_snr_db, rep.isnr_db):
        assert np.isfinite(v) and abs(v) <= DB_CAP
    assert np.all(np.isfinite(rep.isnr_trace))
    assert np.all(np.abs(rep.isnr_trace) <= DB_CAP)


def test_fail_stats():
    assert fail_stats([5.0] * 4) == 0.0
    assert fail_stats([0.5, 2.0, 3.0, 0.9], 1.0) == 0.5
    rep = EvalReport(0.0, 0.0, 0.2, True, np.zeros(1), np.zeros(1))
    assert fail_stats([rep, 3.0]) == 0.5
    with pytest.raises(ValueError):
        fail_stats([])


def test_isnr_trace_window():
    images = [random_spec(4, 300, 2, seed=s) for s in (12, 13)]
    mix = images[0].with_coeffs(images[0].coeffs + images[1].coeffs)
    hist = run(mix, AuxiveParams(), "block_online").history
    rep = evaluate(hist, mix, images, 0, window_frames=50)
    assert rep.isnr_trace.shape == (300,)
    # frames before the first block completes use the identity extractor
    assert np.allclose(rep.isnr_trace[:20], 0.0)


def test_history_shape_mismatch():
    hist = identity_history(4, 2)
    with pytest.raises(ValueError, match="do not fit"):
        decompose_output(hist, [random_spec(4, 10, 3)])
