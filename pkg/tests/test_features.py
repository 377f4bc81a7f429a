import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import disk
from hep2cls import features as F
from hep2cls.data import PhantomSpec, generate_phantom
from hep2cls.errors import DegenerateMaskError, DimensionError, InsufficientDataError, ParameterError
from hep2cls.labels import ClassLabel

CS_NAMES = F.layout_names("cs")
TEX_NAMES = F.layout_names("texture")


def cols(prefix, names=CS_NAMES):
    return [i for i, n in enumerate(names) if n.startswith(prefix)]


def cell(label=ClassLabel.S, seed=3, contrast="positive"):
    return generate_phantom(PhantomSpec(label, contrast=contrast, seed=seed))


# -- layouts ----------------------------------------------------------------


def test_layout_lengths():
    assert F.FEATURE_LENGTHS == {"cs": 128, "texture": 140, "combined": 177, "scalar": 20}
    assert len(set(CS_NAMES)) == 128 and len(set(F.layout_names("combined"))) == 177


def test_cs_layout_order():
    # class-major, then scalar, then threshold, then mean and variance
    assert CS_NAMES[:8] == ["H.MOA@0.%d0" % t for t in range(2, 9)] + ["H.ACC@0.20"]
    assert CS_NAMES[126:] == ["MaskedMean", "MaskedVariance"]
    assert len(cols("NM.")) == 21 and len(cols("G.AOD@")) == 7


def test_config_validation():
    with pytest.raises(ParameterError):
        F.ExtractorConfig(threshold_grid=(0.1, 0.2, 0.3))
    with pytest.raises(ParameterError):
        F.ExtractorConfig(threshold_grid=(0.2, 0.3, 0.3, 0.5, 0.6, 0.7, 0.8))
    with pytest.raises(ParameterError):
        F.ExtractorConfig(gamma={c: 0.0 for c in ClassLabel})
    cfg = F.ExtractorConfig(threshold={c: 0.3 for c in ClassLabel}, k_o=7)
    assert F.ExtractorConfig.from_dict(cfg.to_dict()) == cfg


# -- scalars ----------------------------------------------------------------


def test_area_ratio():
    roi = np.zeros((4, 5), bool)
    roi[:2] = True
    b = np.zeros_like(roi)
    b[0, :4] = True
    b[3, :] = True  # outside the roi, ignored
    assert F.area_ratio(b, roi) == pytest.approx(0.4)
    assert F.area_ratio(np.ones_like(roi), roi) == 1.0
    assert F.area_ratio(np.zeros_like(roi), roi) == 0.0
    with pytest.raises(DegenerateMaskError):
        F.area_ratio(b, np.zeros_like(roi))


def test_scalars_on_blank_binary():
    mask = disk((31, 31), (15, 15), 10)
    img = np.zeros(mask.shape)
    for kind in ("MOA", "CC", "AOA", "HN", "ACC", "EN", "MP"):
        assert F.compute_scalar(kind, img, mask, 0.45) == 0.0
    assert F.compute_scalar("HA", img, mask, 0.45) == mask.sum()


def test_scalars_on_solid_disk():
    mask = disk((31, 31), (15, 15), 10)
    img = mask.astype(float)
    assert F.compute_scalar("ACC", img, mask, 0.45) == mask.sum()
    assert F.compute_scalar("CC", img, mask, 0.45) == 1
    assert F.compute_scalar("HA", img, mask, 0.45) == 0
    assert F.compute_scalar("MOA", img, mask, 0.45) == mask.sum()
    assert F.compute_scalar("IAR", img, mask, 0.45) == 1.0
    assert F.compute_scalar("OAR", img, mask, 0.45) == 0.0


def test_scalars_on_punched_disk():
    # 15x15 disk with three single-pixel holes
    mask = disk((15, 15), (7, 7), 6)
    img = mask.astype(float)
    for r, c in ((4, 4), (7, 9), (10, 5)):
        img[r, c] = 0.0
    b = img > 0.45
    assert oracles.holes(b) == 3 and oracles.components(b) == 1
    assert F.compute_scalar("HN", img, mask, 0.45) == 3
    assert F.compute_scalar("EN", img, mask, 0.45) == -2
    assert F.compute_scalar("HA", img, mask, 0.45) == 3


def test_masked_stats_ignore_threshold():
    mask = disk((21, 21), (10, 10), 7)
    img = np.random.default_rng(0).random(mask.shape)
    m1 = F.compute_scalar("MaskedMean", img, mask, 0.2)
    assert m1 == F.compute_scalar("MaskedMean", img, mask, 0.8)
    unit = (img - img.min()) / (img.max() - img.min())
    assert m1 == pytest.approx(unit[mask].mean())
    assert F.compute_scalar("MaskedVariance", img, mask, 0.5) == pytest.approx(unit[mask].var())


def test_unknown_scalar_kind():
    with pytest.raises(ParameterError):
        F.compute_scalar("XYZ", np.zeros((3, 3)), np.ones((3, 3), bool), 0.5)
    with pytest.raises(DimensionError):
        F.compute_scalar("ACC", np.zeros((3, 3)), np.ones((4, 3), bool), 0.5)


def test_ring_phantom_has_higher_bar_than_homogeneous():
    nm = cell(ClassLabel.NM)
    h = cell(ClassLabel.H)
    bar = {lab: F.extract_class_specific_vector(c.image, c.mask).values[cols("NM.BAR@0.40")[0]]
           for lab, c in ((ClassLabel.NM, nm), (ClassLabel.H, h))}
    iar = {lab: F.extract_class_specific_vector(c.image, c.mask).values[cols("NM.IAR@0.40")[0]]
           for lab, c in ((ClassLabel.NM, nm), (ClassLabel.H, h))}
    # relative to the interior, the ring phantom is brighter at the boundary
    assert bar[ClassLabel.NM] - iar[ClassLabel.NM] > bar[ClassLabel.H] - iar[ClassLabel.H]


# -- vectors ----------------------------------------------------------------


def test_cs_vector_blank_cell():
    mask = disk((40, 40), (20, 20), 12)
    v = F.extract_class_specific_vector(np.zeros(mask.shape), mask)
    assert v.values.shape == (128,)
    ha = cols("S.HA@")
    rest = np.setdiff1d(np.arange(126), ha)
    assert np.all(v.values[rest] == 0)
    # background pixels inside the mask: the whole mask
    assert np.all(v.values[ha] == mask.sum())
    assert v.values[126] == 0 and v.values[127] == 0


@pytest.mark.parametrize("label", list(ClassLabel))
def test_contrast_invariance(label):
    c = cell(label)
    a = F.extract_class_specific_vector(c.image, c.mask).values
    b = F.extract_class_specific_vector(2.0 * c.image + 0.25, c.mask).values
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_determinism():
    c = cell(ClassLabel.G)
    a = F.extract_all(c.image, c.mask)
    b = F.extract_all(c.image, c.mask)
    for k in a:
        assert np.array_equal(a[k].values, b[k].values)


@pytest.mark.parametrize("label", list(ClassLabel))
def test_acc_ha_monotone_in_threshold(label):
    c = cell(label, contrast="intermediate")
    v = F.extract_class_specific_vector(c.image, c.mask).values
    acc, ha = v[cols("H.ACC@")], v[cols("S.HA@")]
    assert np.all(np.diff(acc) <= 0) and np.all(np.diff(ha) >= 0)


def test_texture_constant_cell():
    mask = disk((30, 30), (15, 15), 9)
    img = np.where(mask, 0.6, 0.6)
    v = F.extract_texture_vector(img, mask).values
    assert v.shape == (140,)
    assert v[TEX_NAMES.index("tex.entropy")] == 0
    assert v[TEX_NAMES.index("tex.range")] == 0
    for off in ("(0,1)", "(1,0)", "(1,1)", "(1,-1)"):
        assert v[TEX_NAMES.index("glcm.energy" + off)] == pytest.approx(1.0)


@pytest.mark.parametrize("label", list(ClassLabel))
def test_texture_area_monotone(label):
    c = cell(label)
    v = F.extract_texture_vector(c.image, c.mask).values
    area = v[cols("tex.area@", TEX_NAMES)]
    assert np.all(np.diff(area) <= 0)


def test_glcm_matches_direct_count():
    rng = np.random.default_rng(5)
    img = rng.random((12, 13))
    mask = np.ones_like(img, bool)
    mask[:2] = False
    # the texture path quantizes the rescaled image into 8 levels
    unit = (img - img.min()) / (img.max() - img.min())
    q = np.minimum((unit * 8).astype(int), 7)
    P = np.zeros((8, 8))
    for r in range(12):
        for c in range(12):
            if mask[r, c] and mask[r, c + 1]:
                P[q[r, c], q[r, c + 1]] += 1
                P[q[r, c + 1], q[r, c]] += 1
    P /= P.sum()
    i, j = np.indices(P.shape)
    v = F.extract_texture_vector(img, mask).values
    assert v[TEX_NAMES.index("glcm.contrast(0,1)")] == pytest.approx((P * (i - j) ** 2).sum())
    assert v[TEX_NAMES.index("glcm.homogeneity(0,1)")] == pytest.approx((P / (1 + (i - j) ** 2)).sum())
    assert v[TEX_NAMES.index("glcm.energy(0,1)")] == pytest.approx(np.sqrt((P ** 2).sum()))


def test_combined_vector():
    c = cell(ClassLabel.NM)
    out = F.extract_all(c.image, c.mask)
    comb = out["combined"].values
    assert comb.shape == (177,)
    assert np.array_equal(comb[:140], out["texture"].values)
    names = F.layout_names("combined")
    cs = out["cs"].values
    for k, n in enumerate(names[140:], start=140):
        assert comb[k] == cs[CS_NAMES.index(n)]
    zero_t = F.FeatureVector("texture", np.zeros(140), F.LAYOUT_IDS["texture"])
    zero_c = F.FeatureVector("cs", np.zeros(128), F.LAYOUT_IDS["cs"])
    assert not F.build_combined_vector(zero_t, zero_c).values.any()
    with pytest.raises(DimensionError):
        F.build_combined_vector(zero_c, zero_t)


def test_scalar_pool_matches_cs_vector():
    c = cell(ClassLabel.C)
    names = F.layout_names("scalar")
    cfg = F.ExtractorConfig(threshold={lab: 0.4 for lab in ClassLabel})
    pool = F.extract_scalar_pool(c.image, c.mask, cfg).values
    cs = F.extract_class_specific_vector(c.image, c.mask, cfg).values
    for k, n in enumerate(names[:18]):
        assert pool[k] == cs[CS_NAMES.index(n + "@0.40")]
    assert pool[18] == cs[126] and pool[19] == cs[127]


def test_degenerate_rois_fall_back_and_flag():
    mask = np.zeros((20, 20), bool)
    mask[9:11, 9:11] = True
    img = np.random.default_rng(1).random(mask.shape)
    v = F.extract_class_specific_vector(img, mask)
    assert v.values.shape == (128,) and np.all(np.isfinite(v.values))
    assert "inner" in v.flags
    full = np.ones((20, 20), bool)
    v = F.extract_class_specific_vector(img, full)
    assert "outer" in v.flags


@settings(max_examples=25, deadline=None)
@given(arrays(float, (24, 24), elements=st.floats(0, 1)), st.integers(1, 11), st.integers(0, 23),
       st.integers(0, 23))
def test_lengths_on_arbitrary_inputs(img, r, cr, cc):
    mask = disk(img.shape, (cr, cc), r)
    out = F.extract_all(img, mask)
    assert [out[k].values.size for k in ("cs", "texture", "combined", "scalar")] == [128, 140, 177, 20]
    assert all(np.all(np.isfinite(out[k].values)) for k in out)


# -- normalization ----------------------------------------------------------


def test_zscore_examples():
    X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    s = F.fit_zscore(X)
    np.testing.assert_allclose(s.mean, [2, 5])
    np.testing.assert_allclose(s.std, [np.sqrt(2 / 3), 0])
    assert list(s.constant) == [False, True]
    np.testing.assert_array_equal(F.apply_zscore(s, s.mean), [0, 0])
    assert F.apply_zscore(s, s.mean + s.std)[0] == pytest.approx(1.0)
    Z = F.apply_zscore(s, X)
    assert np.all(Z[:, 1] == 0)
    X2 = np.array([[0.0, 10.0], [4.0, 30.0]])
    s2 = F.fit_zscore(X2)
    np.testing.assert_allclose(s2.mean, [2, 20])
    np.testing.assert_allclose(s2.std, [2, 10])


def test_zscore_errors():
    with pytest.raises(InsufficientDataError):
        F.fit_zscore(np.ones((1, 3)))
    s = F.fit_zscore(np.random.default_rng(0).random((5, 3)))
    with pytest.raises(DimensionError):
        F.apply_zscore(s, np.ones(4))


def test_zscore_feature_vector_passthrough():
    X = np.random.default_rng(2).random((6, 128))
    s = F.fit_zscore(X)
    v = F.FeatureVector("cs", X[0], F.LAYOUT_IDS["cs"], frozenset({"inner"}))
    z = F.apply_zscore(s, v)
    assert z.kind == "cs" and z.flags == v.flags
    np.testing.assert_allclose(z.values, F.apply_zscore(s, X)[0])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_zscore_identity_property(n, d, seed):
    r = np.random.default_rng(seed)
    X = r.normal(r.normal(0, 100, d), r.uniform(0.01, 50, d), (n, d))
    X[:, 0] = 3.0
    s = F.fit_zscore(X)
    Z = F.apply_zscore(s, X)
    live = ~s.constant
    assert np.all(np.abs(Z.mean(0)) < 1e-9)
    assert np.all(np.abs(Z[:, live].std(0) - 1) < 1e-9)
    assert np.all(Z[:, s.constant] == 0)
