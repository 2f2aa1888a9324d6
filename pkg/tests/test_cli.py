import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_model
from gmface.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from gmface.core import GaussianComponent, GmModel, CholFactor, ImageGrid, Vec2, render
from gmface.io import read_image, read_loss_history, read_model, write_image, write_model


@pytest.fixture
def model_file(tmp_path, rng):
    model = random_model(rng, 8, 12, 12, w_range=(0.0, 0.15))
    path = tmp_path / "model.gmf"
    write_model(model, path)
    return path


@pytest.fixture
def image_dir(tmp_path, rng):
    d = tmp_path / "faces"
    d.mkdir()
    for i in range(3):
        write_image(ImageGrid(rng.uniform(0, 1, (10, 10))), d / f"face{i}.pgm")
    return d


def parse_loss_line(text):
    fields = dict(item.split("=") for item in text.strip().split())
    return {k: float(v) for k, v in fields.items()}


class TestFit:
    def test_common_then_personal(self, tmp_path, image_dir, capsys):
        common = tmp_path / "common.gmf"
        hist = tmp_path / "hist.csv"
        code = main([
            "fit", "--input", str(image_dir), "--components", "5", "--epochs", "4",
            "--batch-size", "2", "--out", str(common), "--history", str(hist),
        ])
        assert code == EXIT_OK
        loss = parse_loss_line(capsys.readouterr().out)
        assert set(loss) == {"l2", "l_inf", "total"}
        model = read_model(common)
        assert model.m == 5 and model.n_params == 30
        history = read_loss_history(hist)
        assert [h[0] for h in history] == [1, 2, 3, 4]
        assert history[-1][1:] == (loss["l2"], loss["l_inf"], loss["total"])

        personal = tmp_path / "personal.gmf"
        code = main([
            "fit", "--input", str(image_dir / "face1.pgm"), "--init", str(common),
            "--epochs", "3", "--out", str(personal),
        ])
        assert code == EXIT_OK
        assert read_model(personal).m == 5

    def test_deterministic(self, tmp_path, image_dir):
        outs = []
        for run in range(2):
            out, hist = tmp_path / f"m{run}.gmf", tmp_path / f"h{run}.csv"
            assert main([
                "fit", "--input", str(image_dir), "--components", "4", "--epochs", "5",
                "--seed", "9", "--out", str(out), "--history", str(hist),
            ]) == EXIT_OK
            outs.append((out.read_bytes(), hist.read_bytes()))
        assert outs[0] == outs[1]

    def test_usage_errors(self, tmp_path, image_dir):
        assert main(["fit", "--input", str(image_dir), "--epochs", "0", "--out", str(tmp_path / "x")]) == EXIT_USAGE
        assert main(["fit", "--input", str(image_dir)]) == EXIT_USAGE
        assert main(["fit", "--input", str(image_dir), "--epochs", "ten", "--out", "x"]) == EXIT_USAGE

    def test_data_errors(self, tmp_path, image_dir, model_file, capsys):
        # model grid 12x12, images 10x10
        code = main(["fit", "--input", str(image_dir), "--init", str(model_file), "--epochs", "1",
                     "--out", str(tmp_path / "x.gmf")])
        assert code == EXIT_DATA
        assert "does not match" in capsys.readouterr().err
        assert main(["fit", "--input", str(tmp_path / "nope.pgm"), "--out", str(tmp_path / "x")]) == EXIT_DATA


class TestRender:
    def test_matches_in_memory(self, tmp_path, model_file):
        out = tmp_path / "r.pgm"
        assert main(["render", "--model", str(model_file), "--out", str(out)]) == EXIT_OK
        expected = tmp_path / "e.pgm"
        write_image(render(read_model(model_file)), expected)
        assert out.read_bytes() == expected.read_bytes()

    def test_zero_weight_black(self, tmp_path):
        model = GmModel.from_components([GaussianComponent(0.0, Vec2(0.5, 0.5), CholFactor(1, 0, 1))], 4, 6)
        write_model(model, tmp_path / "z.gmf")
        assert main(["render", "--model", str(tmp_path / "z.gmf"), "--out", str(tmp_path / "z.pgm")]) == EXIT_OK
        assert not read_image(tmp_path / "z.pgm").pixels.any()

    def test_invalid_model(self, tmp_path, capsys):
        (tmp_path / "bad.gmf").write_text("GMFACE 1\n1 4 4\n0.1 0.5 0.5 -1 0 1\n")
        assert main(["render", "--model", str(tmp_path / "bad.gmf"), "--out", str(tmp_path / "x.pgm")]) == EXIT_DATA
        assert "strictly positive" in capsys.readouterr().err


class TestTransform:
    def run(self, *args):
        return main(["transform", *map(str, args)])

    def test_rotate_there_and_back(self, tmp_path, model_file):
        a, b = tmp_path / "a.gmf", tmp_path / "b.gmf"
        assert self.run("--model", model_file, "--rotate", 90, "--center", 0.5, 0.5, "--out", a) == EXIT_OK
        assert self.run("--model", a, "--rotate", -90, "--center", 0.5, 0.5, "--out", b) == EXIT_OK
        np.testing.assert_allclose(read_model(b).params, read_model(model_file).params, rtol=0, atol=1e-9)

    def test_zero_translation_identical_file(self, tmp_path, model_file):
        out = tmp_path / "t.gmf"
        assert self.run("--model", model_file, "--translate", 0, 0, "--out", out) == EXIT_OK
        assert out.read_bytes() == model_file.read_bytes()

    @pytest.mark.parametrize(
        "flags",
        [
            ["--translate", "0", "0.2"], ["--translate", "0", "-0.2"],
            ["--translate", "0.2", "0"], ["--translate", "-0.2", "0"],
            ["--scale", "2"], ["--scale", "0.5"], ["--scale", "-2"],
            ["--rotate", "30"], ["--rotate", "45"], ["--rotate", "60"], ["--rotate", "90", "--center", "0.5", "0.5"],
        ],
    )
    def test_single_invocations(self, tmp_path, model_file, flags):
        out = tmp_path / "o.gmf"
        assert main(["transform", "--model", str(model_file), *flags, "--out", str(out)]) == EXIT_OK
        assert read_model(out).m == 8

    @pytest.mark.parametrize(
        "flags",
        [
            ["--scale", "0"], ["--scale", "nan"],
            ["--scale", "2", "--rotate", "30"],
            ["--translate", "0", "0", "--scale", "2"],
            [],
            ["--translate", "0", "0", "--center", "0.5", "0.5"],
        ],
    )
    def test_usage_errors(self, tmp_path, model_file, flags):
        out = tmp_path / "o.gmf"
        assert main(["transform", "--model", str(model_file), *flags, "--out", str(out)]) == EXIT_USAGE
        assert not out.exists()

    def test_render_commutes_with_library(self, tmp_path, model_file):
        # transform + render through the CLI equals evaluating the original
        # model at inverse-mapped points, up to PGM quantization
        out, img = tmp_path / "o.gmf", tmp_path / "o.pgm"
        assert self.run("--model", model_file, "--rotate", 30, "--out", out) == EXIT_OK
        assert main(["render", "--model", str(out), "--out", str(img)]) == EXIT_OK
        from gmface.core import eval_model

        model = read_model(model_file)
        theta = math.radians(30)
        f = np.array([[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]])
        c = np.array([0.5, 0.5])
        expected = np.array([
            [eval_model(model, f @ (np.array([r / 12, k / 12]) - c) + c) for k in range(1, 13)]
            for r in range(1, 13)
        ])
        got = read_image(img).pixels
        assert np.max(np.abs(got - np.clip(expected, 0, 1))) <= 1 / 510 + 1e-12


class TestEval:
    def test_own_render(self, tmp_path, model_file, capsys):
        img = tmp_path / "r.pgm"
        main(["render", "--model", str(model_file), "--out", str(img)])
        capsys.readouterr()
        assert main(["eval", "--model", str(model_file), "--image", str(img), "--alpha", "0"]) == EXIT_OK
        loss = parse_loss_line(capsys.readouterr().out)
        assert loss["l2"] <= (1 / (2 * 255)) ** 2
        assert loss["total"] == loss["l2"]

    def test_mismatch(self, tmp_path, model_file):
        write_image(ImageGrid(np.zeros((5, 5))), tmp_path / "s.pgm")
        assert main(["eval", "--model", str(model_file), "--image", str(tmp_path / "s.pgm")]) == EXIT_DATA


class TestTopK:
    def test_k_equals_m(self, tmp_path, model_file):
        out = tmp_path / "k.gmf"
        assert main(["topk", "--model", str(model_file), "--k", "8", "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == model_file.read_bytes()

    def test_reduces(self, tmp_path, model_file):
        out = tmp_path / "k.gmf"
        assert main(["topk", "--model", str(model_file), "--k", "3", "--out", str(out)]) == EXIT_OK
        assert out.read_text().splitlines()[1] == "3 12 12"

    @pytest.mark.parametrize("k", ["0", "9"])
    def test_out_of_range(self, tmp_path, model_file, k):
        assert main(["topk", "--model", str(model_file), "--k", k, "--out", str(tmp_path / "k.gmf")]) == EXIT_USAGE


class TestSurface:
    def test_single_pixel(self, tmp_path):
        model = GmModel.from_components([GaussianComponent(0.4, Vec2(1, 1), CholFactor(1, 0, 1))], 1, 1)
        write_model(model, tmp_path / "m.gmf")
        assert main(["surface", "--model", str(tmp_path / "m.gmf"), "--out", str(tmp_path / "s.csv")]) == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert len(rows) == 1 and float(rows[0]["value"]) == 0.4

    def test_invert_involution(self, tmp_path, model_file):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["surface", "--model", str(model_file), "--out", str(a)]) == EXIT_OK
        assert main(["surface", "--model", str(model_file), "--out", str(b), "--invert"]) == EXIT_OK
        va = [float(r["value"]) for r in csv.DictReader(open(a))]
        vb = [float(r["value"]) for r in csv.DictReader(open(b))]
        assert all(abs((1 - (1 - x)) - x) < 1e-15 for x in va)
        assert all(abs(x + y - 1) < 1e-15 for x, y in zip(va, vb))

    def test_six_sections(self, tmp_path, model_file):
        out = tmp_path / "x.csv"
        code = main(["surface", "--model", str(model_file), "--out", str(out),
                     "--rows", "3,6,9", "--cols", "2,6,10", "--invert"])
        assert code == EXIT_OK
        series = {r["series"] for r in csv.DictReader(open(out))}
        assert series == {"row 3", "row 6", "row 9", "column 2", "column 6", "column 10"}

    def test_image_source(self, tmp_path):
        write_image(ImageGrid(np.full((2, 3), 0.2)), tmp_path / "i.pgm")
        assert main(["surface", "--image", str(tmp_path / "i.pgm"), "--out", str(tmp_path / "s.csv")]) == EXIT_OK

    def test_source_flags(self, tmp_path, model_file):
        out = str(tmp_path / "s.csv")
        assert main(["surface", "--out", out]) == EXIT_USAGE
        assert main(["surface", "--model", str(model_file), "--image", "x.pgm", "--out", out]) == EXIT_USAGE


def test_module_entry_point(tmp_path, model_file):
    proc = subprocess.run(
        [sys.executable, "-m", "gmface", "render", "--model", str(model_file), "--out", str(tmp_path / "r.pgm")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "gmface", "bogus"], capture_output=True, text=True)
    assert bad.returncode == 1
    assert "usage" in bad.stderr
