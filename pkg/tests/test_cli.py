import numpy as np
import pytest

from featxfer import FeatureMap, ObjectMask, SessionConfig, UNMATCHED
from featxfer import brute_force_match, transfer_step
from featxfer.cli import main, parse_config_file
from featxfer.errors import ParseError
from featxfer.tensorio import (
    read_correspondence,
    read_ppm,
    read_tensor,
    write_ppm,
    write_tensor,
)
from featxfer.transfer import ObjectPair

from conftest import full_mask


def write_feature(path, arr):
    write_tensor(path, np.asarray(arr, dtype=np.float32))


def write_mask(path, bits):
    write_tensor(path, np.asarray(bits, dtype=np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestMatchCommand:
    def test_identity_inputs(self, tmp_path, rng):
        data = rng.standard_normal((4, 4, 3)).astype(np.float32)
        write_feature(tmp_path / "t.eft", data)
        write_feature(tmp_path / "r.eft", data)
        write_mask(tmp_path / "m.eft", np.ones((4, 4)))
        out = tmp_path / "corr.eft"
        code = main(["match", "--target", str(tmp_path / "t.eft"),
                     "--reference", str(tmp_path / "r.eft"),
                     "--target-mask", str(tmp_path / "m.eft"),
                     "--ref-mask", str(tmp_path / "m.eft"),
                     "--out", str(out)])
        assert code == 0
        corr = read_correspondence(out)
        assert np.array_equal(corr.entries.reshape(-1), np.arange(16))

    def test_missing_file_exit_2(self, tmp_path):
        code = main(["match", "--target", str(tmp_path / "absent.eft"),
                     "--reference", str(tmp_path / "absent.eft"),
                     "--target-mask", str(tmp_path / "absent.eft"),
                     "--ref-mask", str(tmp_path / "absent.eft"),
                     "--out", str(tmp_path / "o.eft")])
        assert code == 2

    def test_matches_oracle_dump(self, tmp_path, rng):
        t = rng.standard_normal((6, 5, 4)).astype(np.float32)
        r = rng.standard_normal((4, 7, 4)).astype(np.float32)
        mt = (rng.random((6, 5)) < 0.6).astype(np.uint8)
        mr = (rng.random((4, 7)) < 0.6).astype(np.uint8)
        mr[0, 0] = 1
        write_feature(tmp_path / "t.eft", t)
        write_feature(tmp_path / "r.eft", r)
        write_mask(tmp_path / "mt.eft", mt)
        write_mask(tmp_path / "mr.eft", mr)
        out = tmp_path / "corr.eft"
        assert main(["match", "--target", str(tmp_path / "t.eft"),
                     "--reference", str(tmp_path / "r.eft"),
                     "--target-mask", str(tmp_path / "mt.eft"),
                     "--ref-mask", str(tmp_path / "mr.eft"),
                     "--out", str(out)]) == 0
        oracle = brute_force_match(FeatureMap(t), FeatureMap(r),
                                   ObjectMask(mt != 0), ObjectMask(mr != 0))
        assert np.array_equal(read_correspondence(out).entries, oracle.entries)


class TestTransferCommand:
    def test_zero_mask_returns_target(self, tmp_path, rng):
        t = rng.standard_normal((4, 4, 2)).astype(np.float32)
        r = rng.standard_normal((4, 4, 2)).astype(np.float32)
        write_feature(tmp_path / "t.eft", t)
        write_feature(tmp_path / "r.eft", r)
        write_mask(tmp_path / "full.eft", np.ones((4, 4)))
        write_mask(tmp_path / "zero.eft", np.zeros((4, 4)))
        out = tmp_path / "out.eft"
        assert main(["transfer", "--target", str(tmp_path / "t.eft"),
                     "--refs", str(tmp_path / "r.eft"), str(tmp_path / "full.eft"),
                     str(tmp_path / "zero.eft"),
                     "--t", "92", "--layer", "2", "--out", str(out)]) == 0
        assert read_tensor(out).tobytes() == t.tobytes()

    def test_two_objects_match_library(self, tmp_path, rng):
        t = rng.standard_normal((4, 4, 2)).astype(np.float32)
        ra = rng.standard_normal((4, 4, 2)).astype(np.float32)
        rb = rng.standard_normal((4, 4, 2)).astype(np.float32)
        ma = np.zeros((4, 4), np.uint8)
        ma[:2] = 1
        mb = np.zeros((4, 4), np.uint8)
        mb[3] = 1
        write_feature(tmp_path / "t.eft", t)
        write_feature(tmp_path / "ra.eft", ra)
        write_feature(tmp_path / "rb.eft", rb)
        write_mask(tmp_path / "full.eft", np.ones((4, 4)))
        write_mask(tmp_path / "ma.eft", ma)
        write_mask(tmp_path / "mb.eft", mb)
        out = tmp_path / "out.eft"
        assert main(["transfer", "--target", str(tmp_path / "t.eft"),
                     "--refs", str(tmp_path / "ra.eft"), str(tmp_path / "full.eft"),
                     str(tmp_path / "ma.eft"),
                     "--refs", str(tmp_path / "rb.eft"), str(tmp_path / "full.eft"),
                     str(tmp_path / "mb.eft"),
                     "--t", "92", "--layer", "2", "--out", str(out)]) == 0
        pairs = [ObjectPair(FeatureMap(ra), full_mask(4, 4), ObjectMask(ma != 0)),
                 ObjectPair(FeatureMap(rb), full_mask(4, 4), ObjectMask(mb != 0))]
        expected = transfer_step(FeatureMap(t), pairs, SessionConfig(), 92, 2)
        assert read_tensor(out).tobytes() == expected.data.tobytes()


class TestEvalCommand:
    def _manifest(self, tmp_path, rows):
        path = tmp_path / "manifest.tsv"
        path.write_text("".join(f"{i}\t{r}\t{p}\n" for i, r, p in rows))
        return path

    def test_miou_identical_pairs(self, tmp_path, rng):
        bits = (rng.random((4, 4)) < 0.5).astype(np.uint8)
        bits[0, 0] = 1
        write_mask(tmp_path / "m.eft", bits)
        manifest = self._manifest(tmp_path, [
            ("a", "gt_mask", tmp_path / "m.eft"),
            ("a", "out_mask", tmp_path / "m.eft"),
            ("b", "gt_mask", tmp_path / "m.eft"),
            ("b", "out_mask", tmp_path / "m.eft"),
        ])
        report = tmp_path / "report.tsv"
        assert main(["eval", "miou", "--manifest", str(manifest),
                     "--report", str(report)]) == 0
        lines = report.read_text().strip().split("\n")
        assert lines == ["a\t1.000000", "b\t1.000000", "MEAN\t1.000000"]

    def test_hist_identical_images(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
        write_ppm(tmp_path / "img.ppm", img)
        write_mask(tmp_path / "m.eft", np.ones((8, 8)))
        manifest = self._manifest(tmp_path, [
            ("x", "gt_image", tmp_path / "img.ppm"),
            ("x", "out_image", tmp_path / "img.ppm"),
            ("x", "gt_mask", tmp_path / "m.eft"),
            ("x", "out_mask", tmp_path / "m.eft"),
        ])
        report = tmp_path / "report.tsv"
        assert main(["eval", "hist", "--manifest", str(manifest),
                     "--report", str(report)]) == 0
        assert report.read_text().strip().split("\n")[-1] == "MEAN\t0.000000"

    def test_flow_constant_offset(self, tmp_path, rng):
        from featxfer import FlowMap
        from featxfer.tensorio import write_flow
        disp = rng.standard_normal((4, 4, 2)).astype(np.float32)
        write_flow(tmp_path / "gt.eft", tmp_path / "gt_v.eft",
                   FlowMap(disp, np.ones((4, 4), bool)))
        write_flow(tmp_path / "pred.eft", tmp_path / "pred_v.eft",
                   FlowMap(disp + 1.0, np.ones((4, 4), bool)))
        manifest = self._manifest(tmp_path, [
            ("s", "pred_flow", tmp_path / "pred.eft"),
            ("s", "pred_validity", tmp_path / "pred_v.eft"),
            ("s", "gt_flow", tmp_path / "gt.eft"),
            ("s", "gt_validity", tmp_path / "gt_v.eft"),
        ])
        report = tmp_path / "report.tsv"
        assert main(["eval", "flow", "--manifest", str(manifest),
                     "--report", str(report)]) == 0
        assert report.read_text().strip().split("\n")[-1] == "MEAN\t2.000000"

    def test_oks_report_includes_ap(self, tmp_path):
        kp = tmp_path / "kp.txt"
        kp.write_text("scale 1.0\n0 0 2 0.5\n3 4 2 0.5\n")
        manifest = self._manifest(tmp_path, [
            ("k", "pred_keypoints", kp),
            ("k", "gt_keypoints", kp),
        ])
        report = tmp_path / "report.tsv"
        assert main(["eval", "oks", "--manifest", str(manifest),
                     "--report", str(report)]) == 0
        lines = report.read_text().strip().split("\n")
        assert lines[0] == "k\t1.000000"
        assert lines[-2] == "MEAN\t1.000000"
        assert lines[-1] == "AP\t1.000000"

    def test_per_sample_error_excluded_from_mean(self, tmp_path, rng):
        bits = np.ones((4, 4), np.uint8)
        write_mask(tmp_path / "m.eft", bits)
        write_mask(tmp_path / "z.eft", np.zeros((4, 4), np.uint8))
        manifest = self._manifest(tmp_path, [
            ("good", "gt_mask", tmp_path / "m.eft"),
            ("good", "out_mask", tmp_path / "m.eft"),
            ("bad", "gt_mask", tmp_path / "z.eft"),
            ("bad", "out_mask", tmp_path / "z.eft"),
        ])
        report = tmp_path / "report.tsv"
        assert main(["eval", "miou", "--manifest", str(manifest),
                     "--report", str(report)]) == 0
        lines = report.read_text().strip().split("\n")
        assert "bad\tERROR\tEmptyUnion" in lines
        assert lines[-1] == "MEAN\t1.000000"

    def test_malformed_manifest_exit_2(self, tmp_path):
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("only-two\tcolumns\n")
        assert main(["eval", "miou", "--manifest", str(manifest),
                     "--report", str(tmp_path / "r.tsv")]) == 2


class TestRenderFlowCommand:
    def _render(self, tmp_path, colors, entries):
        from featxfer.core import CorrespondenceMap
        from featxfer.tensorio import write_correspondence
        write_ppm(tmp_path / "ref.ppm", colors)
        write_correspondence(tmp_path / "corr.eft", CorrespondenceMap(entries))
        out = tmp_path / "out.ppm"
        assert main(["render-flow", "--corr", str(tmp_path / "corr.eft"),
                     "--ref-image", str(tmp_path / "ref.ppm"),
                     "--out", str(out)]) == 0
        return read_ppm(out)

    def test_identity(self, tmp_path, rng):
        colors = rng.integers(0, 256, size=(4, 4, 3)).astype(np.uint8)
        out = self._render(tmp_path, colors, np.arange(16).reshape(4, 4))
        assert np.array_equal(out, colors)

    def test_all_unmatched_black(self, tmp_path, rng):
        colors = rng.integers(0, 256, size=(4, 4, 3)).astype(np.uint8)
        out = self._render(tmp_path, colors, np.full((4, 4), UNMATCHED))
        assert (out == 0).all()

    def test_constant_gather(self, tmp_path, rng):
        colors = rng.integers(0, 256, size=(4, 4, 3)).astype(np.uint8)
        out = self._render(tmp_path, colors, np.zeros((2, 3), dtype=np.int64))
        assert out.shape == (2, 3, 3)
        assert (out == colors[0, 0]).all()


class TestSelfcheckCommand:
    def test_small_run_passes(self, capsys):
        assert main(["selfcheck", "--seeds", "5", "--max-dim", "6"]) == 0
        assert "5" in capsys.readouterr().out

    def test_injected_fault_fails(self, monkeypatch, capsys):
        monkeypatch.setenv("FEATXFER_SELFCHECK_FAULT", "1")
        assert main(["selfcheck", "--seeds", "3", "--max-dim", "6"]) == 1

    def test_zero_seeds_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["selfcheck", "--seeds", "0"])
        assert e.value.code == 2


class TestBenchCommand:
    def test_small_bench_prints_checksum(self, capsys):
        assert main(["bench", "--h", "8", "--w", "8", "--c", "16",
                     "--mask-fill", "1.0", "--iters", "2"]) == 0
        out = capsys.readouterr().out
        assert "checksum: 0x" in out
        assert out.count("iter ") == 2

    def test_same_seed_same_checksum(self, capsys):
        args = ["bench", "--h", "8", "--w", "8", "--c", "8", "--iters", "1"]
        main(args)
        first = [ln for ln in capsys.readouterr().out.splitlines()
                 if ln.startswith("checksum")]
        main(args)
        second = [ln for ln in capsys.readouterr().out.splitlines()
                  if ln.startswith("checksum")]
        assert first == second

    def test_zero_channels_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["bench", "--c", "0"])
        assert e.value.code == 2


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text(
            "total_steps=100\n"
            "inject_t_range=42,100\n"
            "inject_layers=2,3\n"
            "adain_t_range=82,100\n"
            "readout_t=92\n"
            "readout_layer=2\n"
            "epsilon=1e-8\n")
        assert parse_config_file(path) == SessionConfig()

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("bogus=1\n")
        with pytest.raises(ParseError):
            parse_config_file(path)
