import numpy as np
import pytest

from hdmann import hdvec, pcm
from hdmann.errors import CapacityError, ValidationError

ZERO = pcm.profile("zero-noise")
EXACT_READ = pcm.ReadoutConfig(quantize=False)


def test_profiles():
    t = pcm.profile("table")
    assert (t.g0, t.drift_nu, t.prog_var, t.read_noise, t.drift_var) == (22.8, 0.0598, 0.317, 0.496, 0.0907)
    m = pcm.profile("methods")
    assert (m.drift_nu, m.drift_var, m.read_noise) == (0.0715, 0.225, 0.926)
    with pytest.raises(ValidationError):
        pcm.profile("nope")
    with pytest.raises(ValidationError):
        pcm.PcmDeviceParams(prog_var=-0.1)
    with pytest.raises(ValidationError):
        pcm.PcmDeviceParams(g0=0.0)


def test_with_variation():
    p = pcm.PcmDeviceParams().with_variation(1.0)
    assert p.prog_var == 1.0 and p.read_noise == 0.496
    q = pcm.PcmDeviceParams().with_variation(0.634, co_scale_read_noise=True)
    assert q.read_noise == pytest.approx(0.992)


def test_zero_noise_conductance():
    rng = np.random.default_rng(0)
    assert pcm.sample_device_conductance(ZERO, 1.0, rng) == 22.8
    p = pcm.PcmDeviceParams(prog_var=0, read_noise=0, drift_var=0)
    # 22.8 * 20 ** -0.0598 evaluated with the math module
    assert pcm.sample_device_conductance(p, 20.0, rng) == pytest.approx(19.060454544026857, rel=1e-12)


def test_programming_spread():
    rng = np.random.default_rng(1)
    g = pcm.sample_device_conductance(pcm.PcmDeviceParams(read_noise=0.0), 1.0, rng, 10_000)
    assert abs(g.std() / g.mean() - 0.317) < 0.02


def test_mean_conductance_tracks_drift():
    rng = np.random.default_rng(2)
    g = pcm.sample_device_conductance(pcm.PcmDeviceParams(), 20.0, rng, 200_000)
    assert g.mean() == pytest.approx(22.8 * 20**-0.0598, rel=0.02)


def test_program_binary_layout():
    rng = np.random.default_rng(3)
    K = hdvec.random_binary(512, rng, 500)
    st = pcm.program_binary(K, pcm.PcmDeviceParams(), rng)
    assert st.devices == 256_000
    np.testing.assert_array_equal(st.set_mask, K.T.astype(bool))
    assert np.all(st.g_rel[~st.set_mask] == 0)


def test_all_reset_bitline_gives_zero_current():
    rng = np.random.default_rng(4)
    K = np.zeros((1, 64), dtype=np.uint8)
    st = pcm.program_binary(K, pcm.PcmDeviceParams(read_noise=0.0), rng)
    q = hdvec.random_binary(64, rng)
    assert pcm.crossbar_read(st, q, EXACT_READ, rng)[0, 0] == 0.0


def test_reprogramming_resamples():
    K = hdvec.random_binary(64, np.random.default_rng(0), 2)
    a = pcm.program_binary(K, pcm.PcmDeviceParams(), np.random.default_rng(1))
    b = pcm.program_binary(K, pcm.PcmDeviceParams(), np.random.default_rng(2))
    assert not np.array_equal(a.g_rel, b.g_rel)


def test_program_bipolar_layout():
    rng = np.random.default_rng(5)
    K = hdvec.random_bipolar(512, rng, 3)
    K[0] = 1
    st = pcm.program_bipolar(K, pcm.PcmDeviceParams(), rng)
    assert st.devices == 3 * 1024
    assert st.set_mask[:, 0].all() and not st.set_mask[:, 1].any()
    np.testing.assert_array_equal(st.set_mask[:, 2], ~st.set_mask[:, 3])


def test_capacity_errors():
    rng = np.random.default_rng(6)
    with pytest.raises(CapacityError):
        pcm.program_binary(hdvec.random_binary(600, rng, 2), ZERO, rng)
    with pytest.raises(CapacityError):
        pcm.program_bipolar(hdvec.random_bipolar(16, rng, 5), ZERO, rng, bitlines=8)
    with pytest.raises(ValidationError):
        pcm.program_bipolar(hdvec.random_binary(16, rng, 2), ZERO, rng)


def test_zero_query_zero_current_even_with_noise():
    rng = np.random.default_rng(7)
    st = pcm.program_binary(hdvec.random_binary(32, rng, 4), pcm.PcmDeviceParams(), rng)
    I = pcm.crossbar_read(st, np.zeros((2, 32), dtype=np.uint8), pcm.ReadoutConfig(), rng)
    assert np.all(I == 0)


def test_noise_free_read_matches_dot_products():
    rng = np.random.default_rng(8)
    K = hdvec.random_binary(128, rng, 10)
    Q = hdvec.random_binary(128, rng, 6)
    st = pcm.program_binary(K, ZERO, rng)
    I = pcm.crossbar_read(st, Q, EXACT_READ, rng)
    np.testing.assert_array_equal(I, 22.8 * (Q.astype(int) @ K.T.astype(int)))


def test_similarity_matches_software_both_layouts():
    rng = np.random.default_rng(9)
    Kb = hdvec.random_bipolar(256, rng, 12)
    Qb = hdvec.random_bipolar(256, rng, 7)
    st = pcm.program_bipolar(Kb, ZERO, rng)
    np.testing.assert_array_equal(pcm.similarity_via_crossbar(st, Qb, EXACT_READ, rng),
                                  hdvec.similarity_matrix(Qb, Kb, "bipolar"))
    K2 = hdvec.bipolar_to_binary(Kb)
    Q2 = hdvec.bipolar_to_binary(Qb)
    st2 = pcm.program_binary(K2, ZERO, rng)
    np.testing.assert_array_equal(pcm.similarity_via_crossbar(st2, Q2, EXACT_READ, rng),
                                  hdvec.similarity_matrix(Q2, K2, "binary"))


def test_stored_support_scores_one():
    rng = np.random.default_rng(10)
    k = np.zeros(64, dtype=np.uint8)
    k[rng.permutation(64)[:32]] = 1
    st = pcm.program_binary(k, ZERO, rng)
    assert pcm.similarity_via_crossbar(st, k, EXACT_READ, rng)[0] == 1.0


def test_layout_mode_mismatch():
    rng = np.random.default_rng(11)
    st = pcm.program_binary(hdvec.random_binary(16, rng, 2), ZERO, rng)
    with pytest.raises(ValidationError):
        pcm.similarity_via_crossbar(st, hdvec.random_bipolar(16, rng), EXACT_READ, rng)


def test_score_spread_at_default_variability():
    # uncorrelated balanced pairs (alpha = 0.5); closed form sqrt(2*0.5/512)*0.317
    rng = np.random.default_rng(12)
    d = 512
    k = np.zeros(d, dtype=np.uint8)
    k[: d // 2] = 1
    q = np.zeros(d, dtype=np.uint8)
    q[: d // 4] = 1
    q[d // 2 : d // 2 + d // 4] = 1
    params = pcm.PcmDeviceParams(read_noise=0.0, drift_nu=0.0, drift_var=0.0)
    scores = [pcm.similarity_via_crossbar(pcm.program_binary(k, params, rng), q, EXACT_READ, rng)[0]
              for _ in range(10_000)]
    assert np.mean(scores) == pytest.approx(0.5, abs=0.001)
    assert np.std(scores) == pytest.approx(0.014009553102258474, rel=0.05)


def test_read_noise_fresh_per_read_programming_frozen():
    rng = np.random.default_rng(13)
    K = hdvec.random_binary(64, rng, 3)
    st = pcm.program_binary(K, pcm.PcmDeviceParams(), rng)
    q = hdvec.random_binary(64, rng)
    a = pcm.crossbar_read(st, q, EXACT_READ, rng)
    b = pcm.crossbar_read(st, q, EXACT_READ, rng)
    assert not np.array_equal(a, b)
    st0 = pcm.program_binary(K, pcm.PcmDeviceParams(read_noise=0.0), np.random.default_rng(1))
    c = pcm.crossbar_read(st0, q, EXACT_READ, rng)
    d = pcm.crossbar_read(st0, q, EXACT_READ, rng)
    np.testing.assert_array_equal(c, d)


def test_spatial_variability():
    rng = np.random.default_rng(14)
    K = np.ones((2000, 128), dtype=np.uint8)
    st = pcm.program_binary(K, pcm.PcmDeviceParams(prog_var=0.0), rng)
    assert pcm.apply_spatial_variability(st, 0.0, rng) is st
    sv = pcm.apply_spatial_variability(st, 0.0538, rng)
    means = sv.g_rel.mean(axis=0)
    assert means.std() / means.mean() == pytest.approx(0.0538, rel=0.1)
    # extra per-bitline factor can only add variance to the scores
    st2 = pcm.program_binary(K, pcm.PcmDeviceParams(), rng)
    sv2 = pcm.apply_spatial_variability(st2, 0.0538, rng)
    assert sv2.g_rel.sum(axis=0).var() > st2.g_rel.sum(axis=0).var()


def test_quantization_rarely_changes_predictions():
    # 100-way 5-shot: queries are noisy copies of one support of their class
    rng = np.random.default_rng(15)
    d = 512
    protos = hdvec.random_bipolar(d, rng, 100)
    flip = lambda v, p: np.where(rng.random(v.shape) < p, -v, v)
    K = np.repeat(protos, 5, axis=0)
    K = flip(K, 0.3)
    labels = np.repeat(np.arange(100), 5)
    qlab = rng.integers(0, 100, 200)
    Q = flip(protos[qlab], 0.3)
    Kb, Qb = hdvec.bipolar_to_binary(K), hdvec.bipolar_to_binary(Q)
    st = pcm.program_binary(Kb, pcm.PcmDeviceParams(read_noise=0.0), rng)
    a = pcm.similarity_via_crossbar(st, Qb, pcm.ReadoutConfig(quantize=False), rng)
    b = pcm.similarity_via_crossbar(st, Qb, pcm.ReadoutConfig(quantize=True), rng)
    V = np.eye(100)[labels]
    changed = np.mean(np.argmax(a @ V, 1) != np.argmax(b @ V, 1))
    assert changed <= 0.01


def test_export_state_csv(tmp_path):
    rng = np.random.default_rng(16)
    st = pcm.program_bipolar(hdvec.random_bipolar(4, rng, 2), pcm.PcmDeviceParams(), rng)
    path = tmp_path / "state.csv"
    pcm.export_state_csv(st, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "wordline,bitline,base_conductance_uS,drift_exponent"
    assert len(lines) == 1 + st.devices


def test_readout_config_validation():
    with pytest.raises(ValidationError):
        pcm.ReadoutConfig(t=0)
    with pytest.raises(ValidationError):
        pcm.ReadoutConfig(adc_bits=0)
