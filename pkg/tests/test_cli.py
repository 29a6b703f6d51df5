import json
import math

import numpy as np
import pytest
from PIL import Image

from fisheyekit import evaluation, head, postprocess, separator
from fisheyekit.cli import main, read_rawgrid, write_rawgrid
from fisheyekit.geometry import BoxCenter
from fisheyekit.head import Anchor, Detection, RawGridPrediction


def det(cx, cy, w, h, conf, class_id=0):
    return Detection(box=BoxCenter(cx=cx, cy=cy, w=w, h=h), class_id=class_id, confidence=conf)


def write_det_file(path, rows):
    """rows: (image_id, class_id, conf, cx, cy, w, h)"""
    lines = [" ".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def write_gt_file(path, rows):
    """rows: (image_id, class_id, cx, cy, w, h)"""
    lines = [" ".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def save_png(path, value, side=16):
    arr = np.full((side, side, 3), value, dtype=np.uint8)
    Image.fromarray(arr).save(path)


class TestEval:
    def test_perfect_detections(self, tmp_path, capsys):
        gt = tmp_path / "gt.txt"
        dt = tmp_path / "det.txt"
        write_gt_file(gt, [("a", 0, 0.5, 0.5, 0.2, 0.2), ("b", 0, 0.3, 0.3, 0.1, 0.1)])
        write_det_file(
            dt,
            [("a", 0, 1.0, 0.5, 0.5, 0.2, 0.2), ("b", 0, 1.0, 0.3, 0.3, 0.1, 0.1)],
        )
        assert main(["eval", "--gt", str(gt), "--det", str(dt)]) == 0
        out = capsys.readouterr().out
        assert "map50 1\n" in out

    def test_empty_detections(self, tmp_path, capsys):
        gt = tmp_path / "gt.txt"
        dt = tmp_path / "det.txt"
        write_gt_file(gt, [("a", 0, 0.5, 0.5, 0.2, 0.2)])
        dt.write_text("")
        assert main(["eval", "--gt", str(gt), "--det", str(dt)]) == 0
        assert "map50 0\n" in capsys.readouterr().out

    def test_matches_library_exactly(self, tmp_path, capsys):
        rng = np.random.default_rng(77)
        gt_rows, det_rows = [], []
        for i in range(20):
            image_id = f"im{i:02d}"
            for _ in range(int(rng.integers(1, 5))):
                cx, cy = rng.uniform(0.2, 0.8, 2)
                w, h = rng.uniform(0.08, 0.25, 2)
                gt_rows.append((image_id, 0, cx, cy, w, h))
                if rng.random() < 0.75:
                    det_rows.append(
                        (
                            image_id,
                            0,
                            float(rng.uniform(0.1, 1.0)),
                            min(max(cx + rng.uniform(-0.02, 0.02), 0), 1),
                            cy,
                            w,
                            h,
                        )
                    )
        gt, dt = tmp_path / "gt.txt", tmp_path / "det.txt"
        write_gt_file(gt, gt_rows)
        write_det_file(dt, det_rows)
        out_json = tmp_path / "report.json"
        assert main(["eval", "--gt", str(gt), "--det", str(dt), "--json", str(out_json)]) == 0
        payload = json.loads(out_json.read_text())

        report = evaluation.evaluate(
            postprocess.read_detections(dt), evaluation.read_ground_truth(gt)
        )
        assert payload["map50"] == report.map50
        assert payload["map5095"] == report.map5095
        assert payload["mean_precision"] == report.mean_precision
        assert payload["mean_recall"] == report.mean_recall

    def test_parse_error_exits_2(self, tmp_path, capsys):
        gt = tmp_path / "gt.txt"
        dt = tmp_path / "det.txt"
        gt.write_text("a 0 0.5 0.5 0.1 0.1\n")
        dt.write_text("a 0 0.9 0.5 0.5 0.1 0.1\na 0 not-a-number 0.5 0.5 0.1 0.1\n")
        assert main(["eval", "--gt", str(gt), "--det", str(dt)]) == 2
        assert ":2:" in capsys.readouterr().err


class TestEnsemble:
    def test_single_input_round_trips(self, tmp_path):
        src = tmp_path / "a.txt"
        # canonical order, disjoint boxes: per-model NMS is a no-op
        sets = [
            postprocess.DetectionSet(
                image_id="img",
                detections=[det(0.2, 0.2, 0.1, 0.1, 0.9), det(0.7, 0.7, 0.1, 0.1, 0.5)],
            )
        ]
        postprocess.write_detections(sets, src)
        out = tmp_path / "fused.txt"
        assert main(["ensemble", str(src), "--out", str(out)]) == 0
        assert out.read_bytes() == src.read_bytes()

    def test_disjoint_inputs_concatenate(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        write_det_file(a, [("img", 0, 0.9, 0.2, 0.2, 0.1, 0.1)])
        write_det_file(b, [("img", 0, 0.7, 0.8, 0.8, 0.1, 0.1)])
        out = tmp_path / "fused.txt"
        assert main(["ensemble", str(a), str(b), "--out", str(out)]) == 0
        fused = postprocess.read_detections(out)
        assert len(fused[0].detections) == 2

    def test_input_order_invariant(self, tmp_path):
        rng = np.random.default_rng(88)
        files = []
        base = [(0.3, 0.3, 0.12, 0.12), (0.7, 0.6, 0.15, 0.1), (0.5, 0.8, 0.1, 0.14)]
        for tag in "abc":
            path = tmp_path / f"{tag}.txt"
            rows = []
            for cx, cy, w, h in base:
                rows.append(
                    (
                        "img",
                        0,
                        round(float(rng.uniform(0.3, 1.0)), 6),
                        round(cx + float(rng.uniform(-0.01, 0.01)), 6),
                        round(cy + float(rng.uniform(-0.01, 0.01)), 6),
                        w,
                        h,
                    )
                )
            write_det_file(path, rows)
            files.append(str(path))
        outputs = []
        for order in ([0, 1, 2], [2, 0, 1], [1, 2, 0]):
            out = tmp_path / f"fused{order[0]}{order[1]}{order[2]}.txt"
            assert main(["ensemble", *[files[i] for i in order], "--out", str(out)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]


class TestNmsCommand:
    def test_matches_library(self, tmp_path):
        src, out = tmp_path / "in.txt", tmp_path / "out.txt"
        rows = [
            ("img", 0, 0.9, 0.5, 0.5, 0.2, 0.2),
            ("img", 0, 0.8, 0.51, 0.5, 0.2, 0.2),
            ("img", 0, 0.7, 0.2, 0.2, 0.1, 0.1),
            ("img", 0, 0.1, 0.8, 0.8, 0.1, 0.1),  # below default conf 0.25
        ]
        write_det_file(src, rows)
        assert main(["nms", "--in", str(src), "--out", str(out)]) == 0
        kept = postprocess.read_detections(out)[0].detections
        want = postprocess.nms(
            postprocess.filter_confidence(postprocess.read_detections(src)[0], 0.25),
            0.45,
        ).detections
        assert kept == want


class TestDecode:
    def make_rawgrid_file(self, path, image_id="img"):
        anchors = (Anchor(16, 16), Anchor(32, 32), Anchor(64, 64))
        raw = RawGridPrediction(
            grid_size=2,
            stride=32.0,
            anchors=anchors,
            values=np.zeros((2, 2, 3, 5)),
        )
        raw.values[..., 4] = -12.0
        raw.values[0, 1, 0] = [0.0, 0.0, 0.0, 0.0, 2.0]
        write_rawgrid(path, image_id, raw)
        return raw

    def test_rawgrid_round_trip(self, tmp_path):
        path = tmp_path / "grid.txt"
        raw = self.make_rawgrid_file(path)
        image_id, loaded = read_rawgrid(path)
        assert image_id == "img"
        assert loaded.grid_size == raw.grid_size
        assert loaded.stride == raw.stride
        assert loaded.anchors == raw.anchors
        assert np.allclose(loaded.values, raw.values)

    def test_decode_normalizes_by_frame(self, tmp_path):
        path = tmp_path / "grid.txt"
        self.make_rawgrid_file(path)
        out = tmp_path / "det.txt"
        assert main(["decode", str(path), "--out", str(out)]) == 0
        dets = postprocess.read_detections(out)[0].detections
        assert len(dets) == 1
        d = dets[0]
        # cell (row 0, col 1), sigmoid(0) = 0.5 -> cx = 1.5*32/64, cy = 0.5*32/64
        assert d.box.cx == pytest.approx(0.75, abs=1e-9)
        assert d.box.cy == pytest.approx(0.25, abs=1e-9)
        assert d.box.w == pytest.approx(0.25, abs=1e-9)
        assert d.confidence == pytest.approx(1 / (1 + math.exp(-2.0)), abs=1e-9)

    def test_missing_header_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "grid.txt"
        bad.write_text("grid 2 32\n")
        out = tmp_path / "det.txt"
        assert main(["decode", str(bad), "--out", str(out)]) == 2


class TestAnchorsCommand:
    def test_clusters_to_file(self, tmp_path):
        rng = np.random.default_rng(5)
        boxes = tmp_path / "boxes.txt"
        lines = [f"{w:.4f} {h:.4f}" for w, h in rng.uniform(4, 120, (40, 2))]
        boxes.write_text("\n".join(lines) + "\n")
        out = tmp_path / "anchors.txt"
        assert main(["anchors", "--boxes", str(boxes), "--out", str(out), "--seed", "3"]) == 0
        aset = head.load_anchors(out)
        assert len(aset.anchors) == 9
        areas = [a.area for a in aset.anchors]
        assert areas == sorted(areas)
        # deterministic given the seed
        out2 = tmp_path / "anchors2.txt"
        assert main(["anchors", "--boxes", str(boxes), "--out", str(out2), "--seed", "3"]) == 0
        assert out2.read_bytes() == out.read_bytes()


class TestSeparatorCommands:
    def _make_corpus(self, tmp_path, n_day=4, n_night=4):
        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        lines = ["#manifest v1"]
        for i in range(n_day):
            save_png(img_dir / f"day{i}.png", 230)
            lines.append(f"day{i} imgs/day{i}.png 16 16 Day Fish")
        for i in range(n_night):
            save_png(img_dir / f"night{i}.png", 20)
            lines.append(f"night{i} imgs/night{i}.png 16 16 Night Fish")
        manifest = tmp_path / "train.manifest"
        manifest.write_text("\n".join(lines) + "\n")
        return manifest, img_dir

    def test_train_then_route_splits_bright_dark(self, tmp_path, capsys):
        manifest, img_dir = self._make_corpus(tmp_path)
        ckpt = tmp_path / "sep.ckpt"
        rc = main(
            [
                "separator-train",
                "--manifest",
                str(manifest),
                "--out",
                str(ckpt),
                "--epochs",
                "30",
                "--batch",
                "4",
                "--side",
                "8",
                "--seed",
                "1",
            ]
        )
        assert rc == 0
        history_out = capsys.readouterr().out
        assert "epoch 30 " in history_out

        listing = tmp_path / "list.txt"
        rows = [f"day0 {img_dir}/day0.png", f"night0 {img_dir}/night0.png"]
        listing.write_text("\n".join(rows) + "\n")
        day_out, night_out = tmp_path / "day.txt", tmp_path / "night.txt"
        rc = main(
            [
                "route",
                "--checkpoint",
                str(ckpt),
                "--images",
                str(listing),
                "--side",
                "8",
                "--day-out",
                str(day_out),
                "--night-out",
                str(night_out),
            ]
        )
        assert rc == 0
        assert day_out.read_text().split() == ["day0"]
        assert night_out.read_text().split() == ["night0"]

    def test_route_empty_list(self, tmp_path, capsys):
        ckpt = tmp_path / "sep.ckpt"
        separator.save_checkpoint(separator.init_params(0), ckpt)
        listing = tmp_path / "list.txt"
        listing.write_text("")
        assert main(["route", "--checkpoint", str(ckpt), "--images", str(listing)]) == 0
        assert capsys.readouterr().out == ""

    def test_route_unreadable_image_exits_2(self, tmp_path):
        ckpt = tmp_path / "sep.ckpt"
        params = separator.init_params(0)
        separator.save_checkpoint(params, ckpt)
        listing = tmp_path / "list.txt"
        listing.write_text("x missing.png\n")
        assert main(["route", "--checkpoint", str(ckpt), "--images", str(listing)]) == 2

    def test_zero_fc_checkpoint_routes_all_day(self, tmp_path, capsys):
        params = separator.init_params(0)
        params.fc_w[:] = 0.0
        params.fc_b[:] = 0.0
        ckpt = tmp_path / "sep.ckpt"
        separator.save_checkpoint(params, ckpt)
        save_png(tmp_path / "a.png", 100)
        save_png(tmp_path / "b.png", 180)
        listing = tmp_path / "list.txt"
        listing.write_text(f"a {tmp_path}/a.png\nb {tmp_path}/b.png\n")
        assert main(["route", "--checkpoint", str(ckpt), "--images", str(listing)]) == 0
        out = capsys.readouterr().out
        assert out.splitlines() == ["Day a", "Day b"]


class TestManifestCommands:
    def _manifest(self, tmp_path):
        path = tmp_path / "all.manifest"
        lines = [
            "#manifest v1",
            "d1 imgs/d1.png 32 32 Day Fish",
            "d2 imgs/d2.png 32 32 Day Fish",
            "n1 imgs/n1.png 32 32 Night Fish",
            "b1 imgs/b1.png 32 32 Day BDD",
        ]
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_partition(self, tmp_path):
        src = self._manifest(tmp_path)
        out = tmp_path / "day.manifest"
        assert main(["partition", "--manifest", str(src), "--rule", "FishDay", "--out", str(out)]) == 0
        from fisheyekit.datasets import load_manifest

        assert [r.image_id for r in load_manifest(out).records] == ["d1", "d2"]

    def test_partition_unknown_rule_exits_1(self, tmp_path):
        src = self._manifest(tmp_path)
        out = tmp_path / "x.manifest"
        assert main(["partition", "--manifest", str(src), "--rule", "Nope", "--out", str(out)]) == 1

    def test_select_challenging_and_upsample(self, tmp_path):
        gt, dt = tmp_path / "gt.txt", tmp_path / "det.txt"
        write_gt_file(gt, [("d1", 0, 0.5, 0.5, 0.2, 0.2), ("d2", 0, 0.5, 0.5, 0.2, 0.2)])
        write_det_file(dt, [("d1", 0, 0.9, 0.5, 0.5, 0.2, 0.2)])  # d2 missed
        ids = tmp_path / "hard.txt"
        rc = main(
            [
                "select-challenging",
                "--gt",
                str(gt),
                "--det",
                str(dt),
                "--threshold",
                "0.5",
                "--out",
                str(ids),
            ]
        )
        assert rc == 0
        assert ids.read_text().split() == ["d2"]

        src = self._manifest(tmp_path)
        out = tmp_path / "up.manifest"
        rc = main(
            [
                "upsample",
                "--manifest",
                str(src),
                "--challenging",
                str(ids),
                "--factor",
                "10",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        from fisheyekit.datasets import load_manifest

        records = load_manifest(out).records
        assert len(records) == 3 + 10
        assert sum(1 for r in records if r.image_id.startswith("d2#")) == 10

    def test_ingest_pseudo(self, tmp_path):
        dt = tmp_path / "det.txt"
        write_det_file(
            dt,
            [
                ("p1", 0, 0.9, 0.5, 0.5, 0.1, 0.1),
                ("p1", 0, 0.3, 0.2, 0.2, 0.1, 0.1),
            ],
        )
        listing = tmp_path / "frames.txt"
        listing.write_text("p1 frames/p1.png\np2 frames/p2.png\n")
        out = tmp_path / "pseudo.manifest"
        rc = main(
            ["ingest-pseudo", "--det", str(dt), "--images", str(listing), "--out", str(out)]
        )
        assert rc == 0
        from fisheyekit.datasets import Source, TimeOfDay, load_manifest

        m = load_manifest(out)
        assert len(m.records) == 2
        assert all(r.source == Source.PSEUDO and r.tod == TimeOfDay.DAY for r in m.records)
        assert len(m.annotations["p1"]) == 1  # cutoff 0.5 drops the 0.3 detection


class TestFocusCommand:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(31)
        img = rng.random((8, 6, 3))
        src = tmp_path / "img.npy"
        np.save(src, img)
        mid = tmp_path / "focused.npy"
        back = tmp_path / "restored.npy"
        assert main(["focus", "--in", str(src), "--out", str(mid)]) == 0
        focused = np.load(mid)
        assert focused.shape == (4, 3, 12)
        assert np.array_equal(focused, head.focus_transform(img))
        assert main(["focus", "--in", str(mid), "--out", str(back), "--inverse"]) == 0
        assert np.array_equal(np.load(back), img)

    def test_odd_size_exits_1(self, tmp_path):
        src = tmp_path / "img.npy"
        np.save(src, np.zeros((5, 4, 1)))
        out = tmp_path / "o.npy"
        assert main(["focus", "--in", str(src), "--out", str(out)]) == 1
