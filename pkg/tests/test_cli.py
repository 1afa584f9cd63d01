from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

import helpers
from synthscape.audio import AudioClip, write_audio
from synthscape.cli import draw_overlay, main, overlay_boxes
from synthscape.dataset import load_run_config, sweep_runs
from synthscape.labelling import read_manifest
from synthscape.pools import load_pool
from synthscape.spectral import ImageAxes

SR = helpers.SR


def tree_bytes(root: Path, skip=("config.json",)) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in skip}


def synth(config: Path, out: Path, *extra: str) -> int:
    return main(["synth", "--config", str(config), "--out", str(out), *extra])


@pytest.fixture(scope="module")
def built(sources, tmp_path_factory):
    root = tmp_path_factory.mktemp("built")
    cfg = helpers.write_run_config(root / "run.json", sources, root / "ds", n=8, s=30, master_seed=3,
                                   density_choices=[2])
    assert main(["synth", "--config", str(cfg)]) == 0
    return cfg, root / "ds"


class TestIsolate:
    def test_thirty_rows(self, tmp_path, capsys):
        paths = helpers.write_sources(tmp_path, n_vocal=30, with_contaminants=False)
        assert main(["isolate", str(paths["catalog"]), str(tmp_path / "p")]) == 0
        assert len(load_pool(tmp_path / "p" / "pool.json")) == 30
        assert capsys.readouterr().out.count("accepted (") == 30

    def test_empty_catalog(self, tmp_path, caplog):
        cat = tmp_path / "empty.csv"
        cat.write_text("path,class_label,vocal_t0,vocal_t1,noise_t0,noise_t1\n")
        assert main(["isolate", str(cat), str(tmp_path / "p")]) == 0
        assert load_pool(tmp_path / "p" / "pool.json") == []
        assert "empty" in caplog.text

    def test_gated_and_invalid_rows(self, tmp_path, capsys):
        x, vi, ni = helpers.raw_recording(0)
        write_audio(AudioClip(x, SR), tmp_path / "loud.wav", "float32")
        write_audio(AudioClip(x * 1e-4, SR), tmp_path / "quiet.wav", "float32")
        cat = tmp_path / "c.csv"
        with open(cat, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "class_label", "vocal_t0", "vocal_t1", "noise_t0", "noise_t1"])
            w.writerow(["loud.wav", "chirp", *vi, *ni])
            w.writerow(["quiet.wav", "chirp", *vi, *ni])
            w.writerow(["missing.wav", "chirp", *vi, *ni])
            w.writerow(["loud.wav", "chirp", "x", *vi[1:], *ni])
        assert main(["isolate", str(cat), str(tmp_path / "p")]) == 0
        out = capsys.readouterr().out
        assert "line 3: quiet_0003 rejected (rms_gate)" in out
        assert out.count("rejected (") == 3 and len(load_pool(tmp_path / "p" / "pool.json")) == 1

    def test_all_rows_fail(self, tmp_path):
        x, vi, ni = helpers.raw_recording(0)
        write_audio(AudioClip(x * 1e-4, SR), tmp_path / "quiet.wav", "float32")
        cat = tmp_path / "c.csv"
        cat.write_text(f"path,class_label,vocal_t0,vocal_t1,noise_t0,noise_t1\nquiet.wav,a,{vi[0]},{vi[1]},{ni[0]},{ni[1]}\n")
        assert main(["isolate", str(cat), str(tmp_path / "p")]) == 2


class TestSynth:
    def test_layout_and_summary(self, built, capsys):
        _, out = built
        for name in ("manifest.txt", "recipes.txt", "config.json"):
            assert (out / name).is_file()
        assert len(list((out / "audio").glob("*.wav"))) == 8
        assert len(list((out / "images").glob("*.png"))) == 8
        doc = read_manifest(out / "manifest.txt")
        assert [im["scene_id"] for im in doc["images"]] == [f"scene_{i:06d}" for i in range(8)]
        assert doc["info"]["summary"]["density_histogram"] == {"2": 8}
        assert len((out / "recipes.txt").read_text().splitlines()) == 8
        img = Image.open(out / "images" / "scene_000000.png")
        assert img.size == (256, 256) and img.mode == "RGB"

    def test_single_negative_scene(self, sources, tmp_path, capsys):
        cfg = helpers.write_run_config(tmp_path / "r.json", sources, tmp_path / "ds", n=1, density_choices=[0])
        assert main(["synth", "--config", str(cfg)]) == 0
        doc = read_manifest(tmp_path / "ds" / "manifest.txt")
        assert len(doc["images"]) == 1 and not doc["images"][0]["positive"] and doc["annotations"] == []
        assert "scenes=1 positives=0" in capsys.readouterr().out

    def test_flag_overrides_without_config(self, sources, tmp_path):
        rc = main(["synth", "--backgrounds", str(sources["backgrounds"]),
                   "--vocalisations", str(sources["pool"] / "pool.json"), "--n", "2", "--s", "4",
                   "--seed", "9", "--snr-lo", "0.5", "--snr-hi", "0.5", "--out", str(tmp_path / "o"), "--labels-only"])
        assert rc == 0
        cfg = json.loads((tmp_path / "o" / "config.json").read_text())
        assert cfg["dataset"]["n"] == 2 and cfg["dataset"]["s"] == 4 and cfg["dataset"]["master_seed"] == 9
        assert cfg["dataset"]["snr_range"] == [0.5, 0.5] and cfg["labels_only"]
        assert not (tmp_path / "o" / "audio").exists()
        for line in (tmp_path / "o" / "recipes.txt").read_text().splitlines():
            assert all(v["target_snr"] == 0.5 for v in json.loads(line)["vocalisations"])

    def test_deterministic_across_runs_and_workers(self, built, tmp_path):
        cfg, out = built
        assert synth(cfg, tmp_path / "b") == 0
        assert synth(cfg, tmp_path / "c", "--workers", "2") == 0
        ref = tree_bytes(out)
        assert tree_bytes(tmp_path / "b") == ref
        assert tree_bytes(tmp_path / "c") == ref

    def test_resume_completes_without_touching_existing(self, built, tmp_path):
        cfg, out = built
        part = tmp_path / "part"
        shutil.copytree(out, part)
        for name in ("scene_000002", "scene_000005"):
            (part / "scenes" / f"{name}.json").unlink()
            (part / "images" / f"{name}.png").unlink()
        (part / "audio" / "scene_000005.wav").write_bytes(b"half-written")
        (part / "manifest.txt").unlink()
        kept = {k: v for k, v in tree_bytes(part).items() if k.startswith("scenes")}
        stamps = {p: p.stat().st_mtime_ns for p in (part / "scenes").iterdir()}
        assert synth(cfg, part) == 0
        after = tree_bytes(part)
        assert {k: after[k] for k in kept} == kept
        assert all(p.stat().st_mtime_ns == t for p, t in stamps.items())
        assert after == tree_bytes(out)

    def test_refuses_foreign_output(self, built, sources, tmp_path):
        _, out = built
        cfg = helpers.write_run_config(tmp_path / "r.json", sources, out, n=8, master_seed=4)
        assert main(["synth", "--config", str(cfg)]) == 2

    def test_regenerate_from_recipes(self, built, tmp_path):
        cfg, out = built
        assert synth(cfg, tmp_path / "re", "--recipes", str(out / "recipes.txt")) == 0
        a, b = read_manifest(tmp_path / "re" / "manifest.txt"), read_manifest(out / "manifest.txt")
        assert a["images"] == b["images"] and a["annotations"] == b["annotations"]
        # a recipe-driven run cannot know the sampled vocalisation subset, so info differs only there
        assert "vocalisation_subset" not in a["info"]
        b["info"].pop("vocalisation_subset")
        assert a["info"] == b["info"]
        skip = ("config.json", "manifest.txt")
        assert tree_bytes(tmp_path / "re", skip) == tree_bytes(out, skip)


class TestSweep:
    def test_dirs_seeds_and_single_value_equivalence(self, sources, tmp_path, capsys):
        cfg = helpers.write_run_config(tmp_path / "r.json", sources, tmp_path / "sw", n=3, master_seed=5)
        rc = main(["sweep", "--config", str(cfg), "--axis", "s", "--values", "1", "4", "--replicates", "2",
                   "--labels-only"])
        assert rc == 0
        seeds = set()
        for tag in ("s_1/rep0", "s_1/rep1", "s_4/rep0", "s_4/rep1"):
            d = tmp_path / "sw" / tag
            conf = json.loads((d / "config.json").read_text())
            seeds.add(conf["dataset"]["master_seed"])
            ids = {p["vocalisation_id"] for im in read_manifest(d / "manifest.txt")["images"] for p in im["placements"]}
            assert len(ids) <= int(tag[2])
        assert len(seeds) == 4
        assert json.loads((tmp_path / "sw" / "sweep.json").read_text())["axis"] == "s"
        one = tmp_path / "sw" / "s_4" / "rep0"
        assert synth(one / "config.json", tmp_path / "again") == 0
        assert tree_bytes(tmp_path / "again") == tree_bytes(one)

    def test_snr_min_axis(self, sources, tmp_path):
        run = load_run_config(helpers.write_run_config(tmp_path / "r.json", sources, tmp_path / "o", n=2))
        runs = sweep_runs(run, "snr_min", [0.3, 2.0])
        assert [t for t, _ in runs] == ["snr_min_0.3/rep0", "snr_min_2/rep0"]
        assert runs[0][1].dataset.snr_range == (0.3, 1.0) and runs[1][1].dataset.snr_range == (2.0, 2.0)
        with pytest.raises(ValueError):
            sweep_runs(run, "beta", [1])


class TestEval:
    @pytest.fixture
    def manifest(self, tmp_path):
        images = [{"id": i, "scene_id": f"s{i}", "present_classes": ["a"] if i < 24 else []} for i in range(72)]
        path = tmp_path / "m.txt"
        path.write_text(json.dumps({"schema_version": 1, "images": images, "annotations": []}))
        return path

    def write_scores(self, path, scores):
        path.write_text("scene_id,score\n" + "".join(f"s{i},{s}\n" for i, s in enumerate(scores)))
        return path

    def test_worked_f1_from_files(self, manifest, tmp_path, capsys):
        scores = [0.9] * 20 + [0.1] * 4 + [0.8] * 6 + [0.2] * 42
        rc = main(["eval", str(manifest), str(self.write_scores(tmp_path / "s.csv", scores)),
                   "--json", str(tmp_path / "r.json")])
        assert rc == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["f1"] == pytest.approx(0.8, abs=1e-12)
        assert (report["tp"], report["fp"], report["fn"]) == (20, 6, 4)
        assert "f1: 0.800000" in capsys.readouterr().out

    def test_perfect_and_constant(self, manifest, tmp_path):
        main(["eval", str(manifest), str(self.write_scores(tmp_path / "p.csv", [1.0] * 24 + [0.0] * 48)),
              "--json", str(tmp_path / "p.json")])
        p = json.loads((tmp_path / "p.json").read_text())
        assert p["auc"] == 1.0 and p["f1"] == 1.0
        main(["eval", str(manifest), str(self.write_scores(tmp_path / "c.csv", [0.7] * 72)),
              "--json", str(tmp_path / "c.json")])
        assert json.loads((tmp_path / "c.json").read_text())["auc"] == 0.5

    def test_join_failures(self, manifest, tmp_path):
        bad = tmp_path / "b.csv"
        bad.write_text("nope,0.5\n")
        assert main(["eval", str(manifest), str(bad)]) == 2
        assert main(["eval", str(manifest), str(self.write_scores(tmp_path / "o.csv", [0.5] * 24))]) == 2


class TestInspect:
    def test_boxes_match_manifest(self, built, tmp_path, capsys):
        _, out = built
        doc = read_manifest(out / "manifest.txt")
        scene = next(im for im in doc["images"]
                     if len([a for a in doc["annotations"] if a["image_id"] == im["id"]]) == 2)
        png = tmp_path / "o.png"
        assert main(["inspect", str(out / "manifest.txt"), scene["scene_id"], "--image-out", str(png)]) == 0
        text = capsys.readouterr().out
        _, anns = overlay_boxes(doc, scene["scene_id"])
        assert text.count("  annotation ") == 2
        grid = doc["info"]["grid"]
        axes = ImageAxes(grid["sample_rate"], grid["num_frames"], grid["f_min"], grid["f_max"])
        base = np.zeros((256, 256, 3), dtype=np.uint8)
        for a in anns:
            b = a["bbox_pixels"]
            drawn = np.asarray(draw_overlay(base, [a], grid)).any(axis=2)
            ys, xs = np.nonzero(drawn)
            assert (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1) == (b["x0"], b["y0"], b["x1"], b["y1"])
            phys = a["bbox_physical"]
            px = axes.x_to_time(np.array([b["x0"], b["x1"]], dtype=float))
            assert abs(px[0] - phys["t0"]) <= axes.x_to_time(1.0) - axes.x_to_time(0.0) + 1e-9
            assert abs(px[1] - phys["t1"]) <= axes.x_to_time(1.0) - axes.x_to_time(0.0) + 1e-9
            if phys["f0"] >= grid["f_min"]:
                assert abs(axes.freq_to_y(phys["f0"]) - b["y1"]) <= 1
            assert abs(axes.freq_to_y(phys["f1"]) - b["y0"]) <= 1
        assert Image.open(png).size == (256, 256)

    def test_negative_scene_has_no_overlay(self, sources, tmp_path):
        cfg = helpers.write_run_config(tmp_path / "r.json", sources, tmp_path / "ds", n=1, density_choices=[0])
        assert main(["synth", "--config", str(cfg)]) == 0
        png = tmp_path / "o.png"
        assert main(["inspect", str(tmp_path / "ds" / "manifest.txt"), "scene_000000", "--image-out", str(png)]) == 0
        assert np.array_equal(np.asarray(Image.open(png)), np.asarray(Image.open(tmp_path / "ds" / "images" / "scene_000000.png").convert("RGB")))

    def test_unknown_scene(self, built, tmp_path):
        _, out = built
        assert main(["inspect", str(out / "manifest.txt"), "scene_999999", "--image-out", str(tmp_path / "x.png")]) == 2


class TestExitCodes:
    @pytest.mark.parametrize("argv", [[], ["bogus"], ["synth", "--n", "x"], ["sweep", "--axis", "n"]])
    def test_usage(self, argv):
        assert main(argv) == 1

    def test_invalid_config_value_is_usage(self, built):
        cfg, _ = built
        assert main(["synth", "--config", str(cfg), "--n", "0"]) == 1

    def test_missing_pool_is_data(self, sources, tmp_path):
        assert main(["synth", "--backgrounds", str(tmp_path / "nope.csv"),
                     "--vocalisations", str(sources["pool"] / "pool.json"), "--out", str(tmp_path / "o")]) == 2

    def test_unclippable_background_is_constraint(self, sources, tmp_path, capsys):
        spiky = np.zeros(11 * SR)
        spiky[::50] = 1.0
        write_audio(AudioClip(spiky, SR), tmp_path / "spiky.wav", "float32")
        (tmp_path / "bg.csv").write_text("path,source_id\nspiky.wav,spiky\n")
        rc = main(["synth", "--backgrounds", str(tmp_path / "bg.csv"), "--vocalisations",
                   str(sources["pool"] / "pool.json"), "--n", "1", "--out", str(tmp_path / "o"), "--labels-only"])
        assert rc == 3
        assert "clip_fraction" in capsys.readouterr().err
