"""Acceptance criteria 1-9, one test each.  Every test records a PASS/FAIL
line that pytest prints in an "acceptance criteria" summary section."""

import math
import time

import numpy as np
import pytest
from dataclasses import replace

from weatherseg import rng
from weatherseg.augment import (
    AugmentConfig,
    apply_fog,
    apply_gamma,
    apply_rgb_shift,
    augment_image,
    augment_many,
    image_stream,
    sun_flare_at,
)
from weatherseg.cli import run
from weatherseg.corpus import TOWNS, Manifest, SampleRecord, manifest_roundtrip, mask_png_roundtrip, read_manifest
from weatherseg.evalstats import evaluate, read_report, student_t_cdf
from weatherseg.evalstats.experiment import load_datasets
from weatherseg.evalstats.report import STAT_ROWS
from weatherseg.evalstats.stats import SampleSummary, t_test_b_lower
from weatherseg.scenegen import SceneSpec, preset_weather, render_scene
from weatherseg.segnet import TINY_CONFIG, UNetConfig, grad_check, init_weights, load_weights, save_weights
from weatherseg.segnet.train import OVERFIT_CONFIG, overfit

import reference_table as ref


def record(log, n, ok, detail):
    log.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    print(log[-1])


def luminance(img):
    return float((img.astype(np.float64) @ np.array([0.299, 0.587, 0.114])).mean())


# 1 ----------------------------------------------------------------------------
def test_c1_t_test_reproduces_reference_p_values(acceptance_log):
    t0 = time.perf_counter()
    p_ac, p_wa = {}, {}
    for j, col in enumerate(ref.COLUMNS):
        clear = SampleSummary(ref.CLEAR_MEAN[j], ref.CLEAR_STD[j], ref.N)
        aug = SampleSummary(ref.AUG_MEAN[j], ref.AUG_STD[j], ref.N)
        weather = SampleSummary(ref.WEATHER_MEAN[j], ref.WEATHER_STD[j], ref.N)
        p_ac[col] = t_test_b_lower(clear, aug).p_value
        p_wa[col] = t_test_b_lower(aug, weather).p_value
    elapsed = time.perf_counter() - t0
    checks = {
        "NR in [1.5e-4, 3.0e-4]": 1.5e-4 <= p_ac["NR"] <= 3.0e-4,
        "NW in [1.5e-4, 4.0e-4]": 1.5e-4 <= p_ac["NW"] <= 4.0e-4,
        "W within 0.02742 +- 0.004": abs(p_ac["W"] - 0.02742) <= 0.004,
        "DC > 0.999": p_ac["DC"] > 0.999,
        "weather<aug DR..W < 1e-4": all(p_wa[c] < 1e-4 for c in ref.COLUMNS[1:]),
        "runtime < 1 s": elapsed < 1.0,
    }
    ok = all(checks.values())
    detail = (f"NR={p_ac['NR']:.5f} NW={p_ac['NW']:.5f} W={p_ac['W']:.5f} DC={p_ac['DC']:.5f} "
              f"max weather<aug p={max(p_wa[c] for c in ref.COLUMNS[1:]):.2e} ({elapsed:.3f}s)")
    record(acceptance_log, 1, ok, detail)
    assert ok, {k: v for k, v in checks.items() if not v}


# 2 ----------------------------------------------------------------------------
def test_c2_gradient_check(acceptance_log):
    t0 = time.perf_counter()
    err = grad_check(TINY_CONFIG, seed=42, h=1e-5)
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-4 and elapsed < 60
    record(acceptance_log, 2, ok, f"max relative error {err:.2e} ({elapsed:.1f}s)")
    assert ok


# 3 ----------------------------------------------------------------------------
def test_c3_fresh_model_loss_is_ln_k(acceptance_log, tiny_datasets):
    names = ("D1", "D2", "DC", "DR", "DW", "NC", "NR", "NW", "W")
    data = load_datasets(tiny_datasets, names)
    worst = 0.0
    for k in (8, 11):
        cfg = UNetConfig(2, 4, k, 32)
        w = init_weights(cfg, rng.derive_stream(k, [("init", 0)]))
        for m in data.values():
            worst = max(worst, abs(evaluate(w, m, cfg).mean_loss - math.log(k)))
    ok = worst <= 1e-6
    record(acceptance_log, 3, ok, f"max |loss - ln K| = {worst:.2e} over {len(names)} manifests, K in (8, 11)")
    assert ok


# 4 ----------------------------------------------------------------------------
def test_c4_augmentation_invariants(acceptance_log):
    t0 = time.perf_counter()
    gen = np.random.default_rng(2024)
    imgs = [gen.integers(0, 256, (int(gen.integers(8, 48)), int(gen.integers(8, 48)), 3), dtype=np.uint8)
            for _ in range(100)]
    full = replace(AugmentConfig(), gate_probability=1.0)
    closed = replace(AugmentConfig(), gate_probability=0.0)
    fails = []
    for i, img in enumerate(imgs):
        s = image_stream(7, i)
        out = augment_image(img, s, full)
        if out.shape != img.shape or out.dtype != np.uint8:
            fails.append(f"shape/dtype {i}")
        if not (np.array_equal(apply_gamma(img, 1.0), img) and np.array_equal(apply_rgb_shift(img, 0, 0, 0), img)
                and np.array_equal(apply_fog(img, 0.0), img)
                and np.array_equal(augment_image(img, image_stream(7, i), closed), img)):
            fails.append(f"identity {i}")
        h, w = img.shape[:2]
        if not (sun_flare_at(img, gen.uniform(0, w), gen.uniform(0, h), 0.3 * min(h, w) + 1, 0.6) >= img).all():
            fails.append(f"flare {i}")
        g1, g2 = sorted(gen.uniform(0.5, 2.0, 2))
        if not (apply_gamma(img, g2) <= apply_gamma(img, g1)).all():
            fails.append(f"gamma exponent {i}")
        if not np.array_equal(augment_image(img, image_stream(7, i), full), out):
            fails.append(f"determinism {i}")
    ramp = np.arange(256, dtype=np.uint8).reshape(1, 256, 1).repeat(3, axis=2)
    if (np.diff(apply_gamma(ramp, 1.7)[0, :, 0].astype(int)) < 0).any():
        fails.append("gamma input monotonicity")
    a = augment_many(imgs, 99, full, jobs=1)
    b = augment_many(imgs, 99, full, jobs=8)
    if any(x.tobytes() != y.tobytes() for x, y in zip(a, b)):
        fails.append("jobs 1 vs 8")
    elapsed = time.perf_counter() - t0
    ok = not fails and elapsed < 60
    record(acceptance_log, 4, ok, f"100 images, {len(fails)} violations ({elapsed:.1f}s)")
    assert ok, fails[:10]


# 5 ----------------------------------------------------------------------------
def test_c5_geometry_weather_separation(acceptance_log):
    t0 = time.perf_counter()
    fails = []
    for i in range(50):
        spec = SceneSpec(TOWNS[i % len(TOWNS)], 10_000 + 17 * i)
        noon, m1 = render_scene(spec, preset_weather("ClearNoon"), 64, 64)
        rain, m2 = render_scene(spec, preset_weather("HardRainNoon"), 64, 64)
        night, m3 = render_scene(spec, preset_weather("ClearNight"), 64, 64)
        if not (np.array_equal(m1, m2) and np.array_equal(m1, m3)):
            fails.append(f"mask {i}")
        if np.array_equal(noon, rain):
            fails.append(f"rgb {i}")
        if not luminance(night) < luminance(noon):
            fails.append(f"luminance {i}")
    elapsed = time.perf_counter() - t0
    ok = not fails and elapsed < 60
    record(acceptance_log, 5, ok, f"50 scenes, {len(fails)} violations ({elapsed:.1f}s)")
    assert ok, fails


# 6 ----------------------------------------------------------------------------
def test_c6_overfit(acceptance_log):
    pairs = [render_scene(SceneSpec(TOWNS[i], 42 + i), preset_weather("ClearNoon"), 32, 32) for i in range(4)]
    x, y = np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])
    t0 = time.process_time()
    _, acc = overfit(x, y, OVERFIT_CONFIG, steps=300, seed=42)
    cpu = time.process_time() - t0
    ok = acc >= 0.95 and cpu < 300
    record(acceptance_log, 6, ok, f"pixel accuracy {acc:.4f} after 300 steps ({cpu:.1f}s CPU)")
    assert ok


# 7 ----------------------------------------------------------------------------
@pytest.mark.slow
def test_c7_desk_scale_end_to_end(acceptance_log, tmp_path, capsys):
    def once(out):
        t0 = time.process_time()
        assert run(["gen", "--out", str(out)]) == 0
        assert run(["cv", "--out", str(out)]) == 0
        return time.process_time() - t0

    cpu_a = once(tmp_path / "a")
    rep = read_report(tmp_path / "a" / "report.csv")
    complete = (rep.columns == ref.COLUMNS and all(s in rep.values for s in STAT_ROWS)
                and all(math.isfinite(v) for s in STAT_ROWS for v in rep.row(s)))
    sizes = (len(read_manifest(tmp_path / "a" / "D1" / "manifest.jsonl")),
             len(read_manifest(tmp_path / "a" / "NR" / "manifest.jsonl")))
    cpu_b = once(tmp_path / "b")
    deterministic = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                        for f in ("report.csv", "eval.csv"))
    w_nr, c_nr = rep.values["weather_mean"]["NR"], rep.values["clear_mean"]["NR"]
    p_nr = rep.values["p_aug_lt_clear"]["NR"]
    ok = complete and deterministic and sizes == (240, 80) and max(cpu_a, cpu_b) < 1800 and w_nr < c_nr
    capsys.readouterr()
    record(acceptance_log, 7,
           ok, f"CPU {cpu_a:.0f}s/{cpu_b:.0f}s, report complete={complete}, rerun identical={deterministic}, "
               f"NR weather {w_nr:.4f} < clear {c_nr:.4f}")
    acceptance_log.append(f"[{'PASS' if p_nr < 1e-3 else 'INFO'}] criterion 7 (soft, not asserted): "
                          f"p(augmented < clear on NR) = {p_nr:.5f} (target < 0.001)")
    print(acceptance_log[-1])
    assert ok


# 8 ----------------------------------------------------------------------------
def test_c8_student_t_cdf_properties(acceptance_log):
    zero = max(abs(student_t_cdf(0.0, df) - 0.5) for df in (0.5, 1, 2, 7.5, 30, 1000))
    cauchy = max(abs(student_t_cdf(float(t), 1) - (0.5 + math.atan(t) / math.pi)) for t in range(-10, 11))
    grid = np.linspace(-10, 10, 1000)
    mono = all(all(b >= a for a, b in zip(v, v[1:])) for v in
               ([student_t_cdf(float(t), df) for t in grid] for df in (1, 5, 30)))
    normal = max(abs(student_t_cdf(float(t), 200) - 0.5 * math.erfc(-t / math.sqrt(2)))
                 for t in np.linspace(-3, 3, 121))
    ok = zero <= 1e-12 and cauchy <= 1e-10 and mono and normal <= 2e-3
    record(acceptance_log, 8, ok, f"|cdf(0)-0.5|={zero:.1e}, df=1 err={cauchy:.1e}, monotone={mono}, "
                                  f"df=200 vs normal={normal:.1e}")
    assert ok


# 9 ----------------------------------------------------------------------------
def test_c9_format_round_trips(acceptance_log, tiny_datasets, tmp_path):
    mask = np.random.default_rng(0).integers(0, 8, (37, 53)).astype(np.uint8)
    mask_ok = np.array_equal(mask_png_roundtrip(mask, tmp_path / "m.png", 8), mask)
    m = read_manifest(tiny_datasets / "NR" / "manifest.jsonl")
    plain = Manifest(m.name, m.records, m.num_classes)
    back = manifest_roundtrip(plain, tmp_path / "manifest.jsonl")
    manifest_ok = back == plain and all(isinstance(r, SampleRecord) for r in back.records)
    first = (tmp_path / "manifest.jsonl").read_bytes()
    manifest_roundtrip(back, tmp_path / "again.jsonl")
    manifest_ok = manifest_ok and first == (tmp_path / "again.jsonl").read_bytes()

    cfg = UNetConfig(2, 4, 8, 32)
    w = init_weights(cfg, rng.derive_stream(3, [("init", 0)]))
    w["head.w"] = np.random.default_rng(1).normal(size=w["head.w"].shape).astype(np.float32)
    save_weights(w, cfg, tmp_path / "w.wlab")
    w2, cfg2 = load_weights(tmp_path / "w.wlab")
    m.root = tiny_datasets / "NR"
    l1, l2 = evaluate(w, m, cfg).mean_loss, evaluate(w2, m, cfg2).mean_loss
    ckpt_ok = cfg2 == cfg and l1 == l2
    ok = mask_ok and manifest_ok and ckpt_ok
    record(acceptance_log, 9, ok, f"mask={mask_ok} manifest={manifest_ok} checkpoint loss {l1!r} == {l2!r}")
    assert ok
