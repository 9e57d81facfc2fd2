import numpy as np
import pytest

from filmrecover.analysis.evaluate import Mode, evaluate_recovery, evaluate_with_deshift
from filmrecover.imagecore import MapField, Role


def shifted_uv(bundle, dx_px, dy_px):
    d = bundle.uv.data + np.array([dx_px / bundle.texture.width, dy_px / bundle.texture.height])
    film = bundle.film & np.all((d >= 0) & (d <= 1), axis=2)
    return MapField(np.clip(d, 0, 1), Role.UV, film)


def test_mode_parse():
    assert Mode.parse("map") is Mode.MAP_DESHIFT
    assert Mode.parse("none") is Mode.PLAIN
    assert Mode.parse("IMAGE_DESHIFT") is Mode.IMAGE_DESHIFT
    with pytest.raises(ValueError):
        Mode.parse("sideways")


def test_gt_round_trip(bundle):
    rep = evaluate_recovery(bundle, bundle.uv, bundle.deform)
    assert rep.psnr >= 30.0 and rep.ms_ssim >= 0.97
    assert 0.0 <= rep.filled_fraction < 1.0


def test_map_deshift_beats_plain_on_shifted_prediction(bundle):
    pred = shifted_uv(bundle, 3.0, -2.0)
    plain = evaluate_recovery(bundle, pred, None, "plain")
    desh = evaluate_recovery(bundle, pred, None, "map")
    assert desh.psnr >= plain.psnr
    assert desh.psnr > 30.0


def test_image_deshift_recovers_integer_offset(bundle):
    pred = shifted_uv(bundle, 2.0, 0.0)
    rep = evaluate_recovery(bundle, pred, None, "image", radius=4)
    assert rep.offset is not None and abs(rep.offset[1]) == 2 and rep.offset[0] == 0
    assert rep.psnr > evaluate_recovery(bundle, pred, None, "plain").psnr


def test_report_schema(bundle):
    rep = evaluate_with_deshift(bundle, bundle.uv, bundle.deform, deshift="map").to_dict()
    assert set(rep) >= {"mode", "psnr", "ssim", "ms_ssim", "filled_fraction", "deshifted"}
    assert rep["mode"] == "PLAIN" and rep["deshifted"]["mode"] == "MAP_DESHIFT"
    assert evaluate_with_deshift(bundle, bundle.uv, deshift="none").deshifted is None
