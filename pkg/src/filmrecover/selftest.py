"""Cross-module invariant checks runnable from the command line."""

from __future__ import annotations

import time

import numpy as np

from . import mapops
from .analysis import metrics, stats
from .analysis.evaluate import evaluate_recovery
from .imagecore import ImageGrid, MapField, Role, denormalize, mask_field, normalize_signed, pixel_centers
from .losses import dewarp_loss, shift_disturb_diff
from .quality import WindowSpec, ct_restore
from .synthgen import make_sample, resolve_config, validate_bundle, window_map


class SuiteFailure(AssertionError):
    pass


def _check(cond, message: str) -> None:
    if not cond:
        raise SuiteFailure(message)


def split_loss_bruteforce(pred: np.ndarray, gt: np.ndarray, sel: np.ndarray) -> tuple[float, float, float]:
    """Scalar, loop-based evaluation of the shift / disturbance / gated-diff terms."""
    pts = [(i, j) for i in range(sel.shape[0]) for j in range(sel.shape[1]) if sel[i, j]]
    n = len(pts)
    lshift = ldist = 0.0
    mus = []
    for c in range(pred.shape[2]):
        s = 0.0
        for i, j in pts:
            s += pred[i, j, c] - gt[i, j, c]
        mu = s / n
        v = 0.0
        for i, j in pts:
            v += (pred[i, j, c] - gt[i, j, c] - mu) ** 2
        mus.append(mu)
        lshift += abs(mu)
        ldist += (v / n) ** 0.5
    total = 0.0
    for i, j in pts:
        for c in range(pred.shape[2]):
            d = pred[i, j, c] - gt[i, j, c]
            e = d - mus[c]
            if d * e > 0:
                total += min(abs(d), abs(e))
    return lshift, ldist, total / (n * pred.shape[2])


def suite_imagecore(rng) -> None:
    img = ImageGrid(rng.random((16, 12, 3)))
    back = denormalize(normalize_signed(img))
    _check(np.abs(back.data - img.data).max() < 1e-6, "normalize/denormalize round trip")


def suite_loss_oracle(rng) -> None:
    for _ in range(100):
        p, g = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
        sel = rng.random((4, 4)) < 0.8
        sel[0, 0] = True
        mask = mask_field(sel)
        got = shift_disturb_diff(MapField(p, Role.DEFORM), MapField(g, Role.DEFORM), mask)
        want = split_loss_bruteforce(p, g, sel)
        _check(np.allclose(got, want, rtol=0, atol=1e-9), f"shift/disturb/diff oracle mismatch {got} vs {want}")


def suite_loss_additivity(rng) -> None:
    h = w = 8
    mask = mask_field(np.ones((h, w), bool))
    n = rng.normal(size=(h, w, 3))
    n /= np.linalg.norm(n, axis=2, keepdims=True)

    def maps(noise):
        nn = n + noise * rng.normal(size=n.shape)
        nn /= np.linalg.norm(nn, axis=2, keepdims=True)
        return {
            "coord3d": MapField(rng.normal(size=(h, w, 3)) * noise, Role.COORD3D),
            "normal": MapField(nn, Role.NORMAL),
            "depth": MapField(1 + rng.random((h, w)) * noise, Role.DEPTH),
            "bgmask": mask,
            "uv": MapField(0.5 + 0.1 * noise * rng.normal(size=(h, w, 2)), Role.UV),
            "deform": MapField(rng.normal(size=(h, w, 2)) * noise, Role.DEFORM),
        }

    rep = dewarp_loss(maps(1.0), maps(0.5), mask)
    _check(abs(rep.lshape - (rep.l3d + rep.lnor + rep.ldp + rep.lbg)) < 1e-9, "lshape additivity")
    _check(abs(rep.ltrans - (rep.ldf + rep.luv)) < 1e-9, "ltrans additivity")
    _check(abs(rep.ldewarp - (rep.lshape + rep.ltrans)) < 1e-9, "ldewarp additivity")


def suite_geometry(rng) -> None:
    h = w = 32
    px, py = pixel_centers(h, w)
    uv = MapField(np.stack([px / w, py / h], -1), Role.UV)
    bm = mapops.uv_to_backward(uv, mask_field(np.ones((h, w), bool)), h, w)
    _check(np.abs(bm.field.data - np.stack([px, py], -1)).max() < 0.75, "identity inversion")
    b = make_sample(resolve_config(), 12345)
    _check(not validate_bundle(b), "bundle invariants")
    rep = evaluate_recovery(b, b.uv, b.deform)
    _check(rep.psnr >= 30.0, f"GT round trip PSNR {rep.psnr:.2f} < 30 dB")


def suite_metrics(rng) -> None:
    a = rng.random((176, 176))
    _check(abs(metrics.ssim(a, a) - 1) < 1e-9, "ssim identity")
    _check(abs(metrics.ms_ssim(a, a) - 1) < 1e-9, "ms_ssim identity")
    _check(abs(metrics.psnr(np.zeros((8, 8)), np.full((8, 8), 0.1)) - 20.0) < 1e-9, "psnr 20 dB case")


def window_roundtrip_errors(ww: float, wl: float) -> dict:
    """Round-trip errors between HU and 8-bit display gray through one window.

    ``hu``: worst |HU -> display -> HU| over in-window integer HU (bound ceil(ww / 510)).
    ``levels``: worst |display -> HU -> display| over all 256 levels (bound ceil(255 / (2 ww))).
    ``idempotence``: in-window HU whose display changes after one more HU round trip (must be 0).
    """
    from .fileio import to_uint8

    win = WindowSpec(ww, wl)
    hu = np.arange(int(np.ceil(wl - ww / 2)), int(np.floor(wl + ww / 2)) + 1)[None, :]
    disp = to_uint8(window_map(hu, ww, wl).data)
    hu_back = ct_restore(ImageGrid(disp / 255.0), win)
    again = to_uint8(window_map(hu_back, ww, wl).data)
    levels = np.arange(256)[None, :]
    lv_back = to_uint8(window_map(ct_restore(ImageGrid(levels / 255.0), win), ww, wl).data)[..., 0]
    return {
        "hu": int(np.abs(hu_back.astype(int) - hu).max()),
        "levels": int(np.abs(lv_back.astype(int) - levels).max()),
        "idempotence": int(np.count_nonzero(again != disp)),
    }


def suite_quality(rng) -> None:
    ww, wl = 80, 40
    err = window_roundtrip_errors(ww, wl)
    _check(err["hu"] <= int(np.ceil(ww / 510)), f"HU round trip off by {err['hu']} HU")
    _check(err["levels"] <= int(np.ceil(255 / (2 * ww))), f"display round trip off by {err['levels']} levels")
    _check(err["idempotence"] == 0, f"{err['idempotence']} HU values not idempotent")


def suite_stats(rng) -> None:
    x = rng.normal(size=101)
    _check(stats.paired_t_score(x, x)[0] == 0.0, "t of identical samples")
    _check(stats.chi_square_stat(x, x)[0] == 0.0, "chi2 of identical samples")


SUITES = {
    "imagecore": suite_imagecore,
    "loss_oracle": suite_loss_oracle,
    "loss_additivity": suite_loss_additivity,
    "geometry": suite_geometry,
    "metrics": suite_metrics,
    "quality": suite_quality,
    "stats": suite_stats,
}


def run_selftest(inject_failure: str | None = None, seed: int = 0) -> list[dict]:
    """Run every suite; ``inject_failure`` forces the named suite to fail (test hook)."""
    results = []
    for name, fn in SUITES.items():
        t0 = time.perf_counter()
        try:
            if name == inject_failure:
                raise SuiteFailure("injected tolerance violation")
            fn(np.random.default_rng(seed))
            ok, detail = True, ""
        except Exception as exc:  # a failing suite must not stop the others
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"suite": name, "ok": ok, "detail": detail, "seconds": time.perf_counter() - t0})
    return results
