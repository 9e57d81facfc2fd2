import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from filmrecover import losses
from filmrecover.imagecore import ContractError, ImageGrid, MapField, Role, mask_field
from filmrecover.losses import LossReport


def scalar_split_loss(pred, gt, sel):
    """Independent loop oracle: every quantity spelled out from the definition, no numpy reductions."""
    h, w, c = len(pred), len(pred[0]), len(pred[0][0])
    cells = [(i, j) for i in range(h) for j in range(w) if sel[i][j]]
    n = len(cells)
    mu = []
    for k in range(c):
        mu.append(math.fsum(pred[i][j][k] - gt[i][j][k] for i, j in cells) / n)
    sig = []
    for k in range(c):
        sig.append(math.sqrt(math.fsum((pred[i][j][k] - gt[i][j][k] - mu[k]) ** 2 for i, j in cells) / n))
    parts = []
    for i, j in cells:
        for k in range(c):
            d = pred[i][j][k] - gt[i][j][k]
            e = d - mu[k]
            parts.append(min(abs(d), abs(e)) if d * e > 0 else 0.0)
    return sum(abs(m) for m in mu), sum(abs(s) for s in sig), math.fsum(parts) / len(parts)


def df(a, valid=None):
    return MapField(a, Role.DEFORM, valid)


def full(h, w):
    return mask_field(np.ones((h, w), bool))


def test_split_loss_matches_scalar_oracle_100_pairs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        p, g = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
        sel = rng.random((4, 4)) < 0.75
        sel[rng.integers(4), rng.integers(4)] = True
        got = losses.shift_disturb_diff(df(p), df(g), mask_field(sel))
        want = scalar_split_loss(p.tolist(), g.tolist(), sel.tolist())
        assert np.allclose(got, want, rtol=0, atol=1e-9)


def test_split_loss_hand_example():
    # Delta = (0.3, 0.1) in one channel, zero in the other.
    p = np.zeros((1, 2, 2))
    p[0, :, 0] = [0.3, 0.1]
    lshift, ldist, ldiff = losses.shift_disturb_diff(df(p), df(np.zeros_like(p)), full(1, 2))
    assert lshift == pytest.approx(0.2)
    assert ldist == pytest.approx(0.1)
    # Contributions over 4 elements: 0.1, 0, 0, 0 (zero channel: d*e = 0, gate false).
    assert ldiff == pytest.approx(0.1 / 4)


def test_split_loss_zero_at_truth(rng):
    g = rng.normal(size=(5, 5, 2))
    assert losses.shift_disturb_diff(df(g), df(g), full(5, 5)) == (0.0, 0.0, 0.0)


def test_constant_shift_identities():
    rng = np.random.default_rng(11)
    g = rng.normal(size=(6, 6, 2))
    for _ in range(20):
        c = rng.normal(size=2)
        lshift, ldist, ldiff = losses.shift_disturb_diff(df(g + c), df(g), full(6, 6))
        assert abs(lshift - np.abs(c).sum()) < 1e-9
        assert abs(ldist) < 1e-9
        assert abs(ldiff) < 1e-9


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 4, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (3, 4, 2), elements=st.floats(-5, 5)),
       st.tuples(st.floats(-10, 10), st.floats(-10, 10)))
def test_disturbance_invariant_under_constant_shift(p, g, c):
    m = full(3, 4)
    a = losses.shift_disturb_diff(df(p), df(g), m)[1]
    b = losses.shift_disturb_diff(df(p + np.array(c)), df(g), m)[1]
    assert abs(a - b) < 1e-9


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 4, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (3, 4, 2), elements=st.floats(-5, 5)))
def test_nonnegative_and_diff_bounded_by_l1(p, g):
    m = full(3, 4)
    lshift, ldist, ldiff = losses.shift_disturb_diff(df(p), df(g), m)
    assert min(lshift, ldist, ldiff) >= 0
    assert ldiff <= losses.l1_map_loss(df(p), df(g), m) + 1e-12


def test_split_loss_respects_validity(rng):
    p, g = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
    valid = np.ones((4, 4), bool)
    valid[0] = False
    p2 = p.copy()
    p2[0] = 1e6  # invalid pixels must not matter
    a = losses.shift_disturb_diff(df(p, valid), df(g), full(4, 4))
    b = losses.shift_disturb_diff(df(p2, valid), df(g), full(4, 4))
    assert a == b


def test_split_loss_empty_mask_raises(rng):
    with pytest.raises(losses.EmptyMaskError):
        losses.shift_disturb_diff(df(rng.normal(size=(2, 2, 2))), df(np.zeros((2, 2, 2))),
                                  mask_field(np.zeros((2, 2), bool)))


def test_l1_cases():
    d = MapField(np.array([[0.5, 0.5]]), Role.DEPTH)
    m = full(1, 2)
    assert losses.l1_map_loss(d, d, m) == 0.0
    assert losses.l1_map_loss(MapField(d.data + 0.1, Role.DEPTH), d, m) == pytest.approx(0.1)
    d2 = MapField(np.array([[0.7, 0.1]]), Role.DEPTH)
    assert losses.l1_map_loss(d2, d, m) == pytest.approx(0.3)


def _maps(rng, h=6, w=6):
    n = rng.normal(size=(h, w, 3))
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    return {
        "coord3d": MapField(rng.normal(size=(h, w, 3)), Role.COORD3D),
        "normal": MapField(n, Role.NORMAL),
        "depth": MapField(1 + rng.random((h, w)), Role.DEPTH),
        "bgmask": mask_field(rng.random((h, w)) > 0.5),
        "uv": MapField(rng.random((h, w, 2)), Role.UV),
        "deform": MapField(rng.normal(size=(h, w, 2)), Role.DEFORM),
    }


def test_shape_loss_depth_only():
    rng = np.random.default_rng(3)
    gts = _maps(rng)
    order = ("coord3d", "normal", "depth", "bgmask")
    preds = dict(gts, depth=MapField(gts["depth"].data + 0.05, Role.DEPTH))
    m = full(6, 6)
    rep = losses.shape_loss([preds[k] for k in order], [gts[k] for k in order], m)
    assert rep.lshape == pytest.approx(0.05) and rep.ldp == pytest.approx(0.05)
    assert rep.l3d == rep.lnor == rep.lbg == 0.0


def test_shape_loss_role_mismatch():
    rng = np.random.default_rng(3)
    g = _maps(rng)
    with pytest.raises(ContractError):
        losses.shape_loss([g["normal"], g["coord3d"], g["depth"], g["bgmask"]],
                          [g["coord3d"], g["normal"], g["depth"], g["bgmask"]], full(6, 6))


def test_background_loss_uses_full_frame():
    rng = np.random.default_rng(4)
    g = _maps(rng)
    film = mask_field(np.zeros((6, 6), bool) | (np.arange(6)[None, :] < 3))
    wrong = mask_field(~g["bgmask"].mask_array())
    order = ("coord3d", "normal", "depth", "bgmask")
    preds = dict(g, bgmask=wrong)
    rep = losses.shape_loss([preds[k] for k in order], [g[k] for k in order], film)
    assert rep.lbg == pytest.approx(1.0)


def test_dewarp_loss_additivity_and_json():
    rng = np.random.default_rng(5)
    for _ in range(10):
        rep = losses.dewarp_loss(_maps(rng), _maps(rng), full(6, 6))
        assert abs(rep.lshape - (rep.l3d + rep.lnor + rep.ldp + rep.lbg)) < 1e-9
        assert abs(rep.ldf - (rep.lshift + rep.ldisturb + rep.ldiff)) < 1e-9
        assert abs(rep.ltrans - (rep.ldf + rep.luv)) < 1e-9
        assert abs(rep.ldewarp - (rep.lshape + rep.ltrans)) < 1e-9
    assert set(json.loads(rep.to_json())) == {f for f in LossReport.__dataclass_fields__}


def test_dewarp_loss_zero_at_truth_and_uv_only():
    rng = np.random.default_rng(6)
    g = _maps(rng)
    assert all(v == 0 for k, v in losses.dewarp_loss(g, g, full(6, 6)).to_dict().items()
               if k != "valid_pixel_count")
    pred = dict(g, uv=MapField(np.clip(g["uv"].data + rng.normal(0, 0.05, (6, 6, 2)), 0, 1), Role.UV))
    rep = losses.dewarp_loss(pred, g, full(6, 6))
    assert rep.luv > 0 and rep.ldewarp == pytest.approx(rep.luv)


def test_df_and_uv_losses_constant_shift():
    rng = np.random.default_rng(8)
    g = rng.normal(size=(5, 5, 2))
    m = full(5, 5)
    assert losses.df_loss(df(g + [0.5, -0.25]), df(g), m) == pytest.approx(0.75)
    u = MapField(rng.random((5, 5, 2)) * 0.5, Role.UV)
    assert losses.uv_loss(MapField(u.data + 0.1, Role.UV), u, m) == pytest.approx(0.2)
    assert losses.uv_loss(MapField(u.data + 0.1, Role.UV), u, m, mode="l1") == pytest.approx(0.1)
    with pytest.raises(ValueError):
        losses.uv_loss(u, u, m, mode="l2")
    with pytest.raises(ContractError):
        losses.df_loss(u, u, m)


def test_recover_loss():
    g = ImageGrid(np.full((4, 4), 0.5))
    assert losses.recover_loss([g, g], g) == 0.0
    assert losses.recover_loss([ImageGrid(np.full((4, 4), 0.7))], g) == pytest.approx(0.02)
    rng = np.random.default_rng(9)
    s1, s2 = ImageGrid(rng.random((4, 4))), ImageGrid(rng.random((4, 4)))
    m1 = sum((a - 0.5) ** 2 for a in s1.data.ravel()) / 16
    m2 = sum((a - 0.5) ** 2 for a in s2.data.ravel()) / 16
    assert losses.recover_loss([s1, s2], g) == pytest.approx(0.5 * (m1 + m2))
    with pytest.raises(ValueError):
        losses.recover_loss([], g)


def test_signed_view_scales():
    u = MapField(np.full((2, 4, 2), 0.25), Role.UV)
    assert np.allclose(losses.signed_view(u).data, -0.5)
    d = MapField(np.stack([np.full((2, 4), 2.0), np.full((2, 4), 1.0)], -1), Role.DEFORM)
    assert np.allclose(losses.signed_view(d).data[..., 0], 1.0)  # 2 * 2 / width 4
    assert np.allclose(losses.signed_view(d).data[..., 1], 1.0)  # 2 * 1 / height 2
    c = MapField(np.array([[1.0, 3.0]]), Role.DEPTH)
    with pytest.raises(ContractError):
        losses.signed_view(c)
    sp, sg = losses.signed_pair(c, c)
    assert np.allclose(sg.data.ravel(), [-1, 1])


def test_finite_diff_grad():
    g = losses.finite_diff_grad(lambda p: float(np.sum(p ** 2)), [1.0, 2.0], 1e-4)
    assert np.allclose(g, [2, 4], atol=1e-6)
    assert np.allclose(losses.finite_diff_grad(lambda p: 3.0, [1.0, 2.0]), 0.0)
    with pytest.raises(FloatingPointError, match="coordinate 1"):
        losses.finite_diff_grad(lambda p: np.inf if p[1] > 2 else 0.0, [0.0, 2.0])
    with pytest.raises(ValueError):
        losses.finite_diff_grad(lambda p: 0.0, [0.0], eps=0)


def test_finite_diff_matches_polynomial_gradients():
    rng = np.random.default_rng(10)
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        q = a @ a.T
        b = rng.normal(size=3)
        x = rng.normal(size=3)
        f = lambda p: float(p @ q @ p + b @ p + (p[0] ** 3))  # noqa: E731
        want = 2 * q @ x + b + np.array([3 * x[0] ** 2, 0, 0])
        assert np.abs(losses.finite_diff_grad(f, x, 1e-4) - want).max() < 1e-5
