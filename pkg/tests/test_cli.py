import numpy as np
import pytest

from cyclehash.cli import main
from cyclehash.codes import load_codes
from cyclehash.evaluation import read_report


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small synthetic dataset plus a trained checkpoint and codes."""
    d = tmp_path_factory.mktemp("cli")
    images, texts, labels = (str(d / n) for n in ("i.uchfeat", "t.uchfeat", "l.uchlab"))
    assert run(
        "synth", "--clusters", "3", "--pairs-per-cluster", "20",
        "--dimg", "12", "--dtxt", "8", "--seed", "4",
        "--images", images, "--texts", texts, "--labels", labels,
    ) == 0
    ckpt = str(d / "model.uchckpt")
    log = str(d / "log.csv")
    assert run(
        "train", "--images", images, "--texts", texts, "--k", "8",
        "--iters", "5", "--batch-size", "8", "--lr-image", "1e-3",
        "--lr-text", "1e-3", "--weight-decay", "0", "--seed", "1",
        "--gen-adv", "off", "--checkpoint", ckpt, "--log", log,
    ) == 0
    codes = str(d / "codes.uchcode")
    assert run(
        "encode", "--checkpoint", ckpt, "--images", images,
        "--mode", "image", "--out", codes,
    ) == 0
    return dict(dir=d, images=images, texts=texts, labels=labels,
                ckpt=ckpt, log=log, codes=codes)


class TestSynth:
    def test_writes_files(self, workspace):
        from cyclehash.data import load_dataset

        ds = load_dataset(
            workspace["images"], workspace["texts"], workspace["labels"]
        )
        assert ds.n == 60
        assert ds.images.shape == (60, 12)

    def test_invalid_spec_exit_2(self, tmp_path, capsys):
        code = run(
            "synth", "--clusters", "1",
            "--images", str(tmp_path / "i"), "--texts", str(tmp_path / "t"),
            "--labels", str(tmp_path / "l"),
        )
        assert code == 2
        assert "error" in capsys.readouterr().err


class TestTrain:
    def test_log_row_count(self, workspace):
        lines = open(workspace["log"]).read().strip().split("\n")
        assert len(lines) == 6  # header + 5 iterations
        assert lines[0].startswith("iter,")

    def test_missing_file_exit_2(self, tmp_path):
        code = run(
            "train", "--images", str(tmp_path / "absent"),
            "--texts", str(tmp_path / "absent2"),
        )
        assert code == 2

    def test_invalid_k_exit_2(self, workspace):
        code = run(
            "train", "--images", workspace["images"],
            "--texts", workspace["texts"], "--k", "12", "--iters", "1",
        )
        assert code == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_3(self, workspace, tmp_path):
        code = run(
            "train", "--images", workspace["images"],
            "--texts", workspace["texts"], "--k", "8", "--iters", "200",
            "--lr-image", "1e6", "--lr-text", "1e6", "--gen-adv", "off",
            "--checkpoint", str(tmp_path / "c"), "--log", str(tmp_path / "log.csv"),
        )
        assert code == 3
        # partial log written before the failure is preserved
        assert (tmp_path / "log.csv").exists()


class TestEncode:
    def test_codes_match_direct_api(self, workspace):
        from cyclehash.data import load_features
        from cyclehash.networks import load_bundle
        from cyclehash.trainer import extract_codes

        cm = load_codes(workspace["codes"])
        bundle = load_bundle(workspace["ckpt"])
        direct = extract_codes(
            bundle, "image", images=load_features(workspace["images"])
        )
        assert (cm.words == direct.words).all()

    def test_missing_modality_exit_2(self, workspace, tmp_path):
        code = run(
            "encode", "--checkpoint", workspace["ckpt"],
            "--mode", "paired", "--out", str(tmp_path / "c.uchcode"),
        )
        assert code == 2


class TestEval:
    def test_report_and_figures(self, workspace, tmp_path):
        out = str(tmp_path / "report.csv")
        code = run(
            "eval", "--query-codes", workspace["codes"],
            "--db-codes", workspace["codes"],
            "--query-labels", workspace["labels"],
            "--db-labels", workspace["labels"],
            "--topn", "1,5", "--out", out,
        )
        assert code == 0
        report = read_report(out)
        # self-retrieval: the query itself is rank 1 and relevant
        assert report.map_score > 0.3
        assert len(report.pr_points) == 9  # K+1 radii for K=8
        assert (tmp_path / "report_pr.png").exists()
        assert (tmp_path / "report_topn.png").exists()

    def test_no_figures_flag(self, workspace, tmp_path):
        out = str(tmp_path / "r2.csv")
        code = run(
            "eval", "--query-codes", workspace["codes"],
            "--db-codes", workspace["codes"],
            "--query-labels", workspace["labels"],
            "--db-labels", workspace["labels"],
            "--out", out, "--no-figures",
        )
        assert code == 0
        assert not (tmp_path / "r2_pr.png").exists()

    def test_code_length_mismatch_exit_2(self, workspace, tmp_path):
        # build 16-bit codes against the 8-bit database
        other = str(tmp_path / "other.uchcode")
        from cyclehash.codes import CodeMatrix, save_codes

        save_codes(CodeMatrix.pack(np.ones((4, 16), dtype=np.int8)), other)
        code = run(
            "eval", "--query-codes", other, "--db-codes", workspace["codes"],
            "--query-labels", workspace["labels"],
            "--db-labels", workspace["labels"],
            "--out", str(tmp_path / "r3.csv"),
        )
        assert code == 2


class TestGradcheckCommand:
    def test_passes(self, capsys):
        assert run("gradcheck", "--dimg", "8", "--dtxt", "6", "--k", "8") == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_corrupt_adjoint_detected(self, capsys):
        assert (
            run("gradcheck", "--dimg", "8", "--dtxt", "6", "--k", "8",
                "--self-test-corrupt") == 1
        )
        assert "FAIL" in capsys.readouterr().out


class TestDeterminism:
    def test_pipeline_byte_identical(self, tmp_path):
        def pipeline(sub):
            sub.mkdir()
            images, texts, labels = (
                str(sub / n) for n in ("i.uchfeat", "t.uchfeat", "l.uchlab")
            )
            run("synth", "--clusters", "2", "--pairs-per-cluster", "10",
                "--dimg", "8", "--dtxt", "6", "--seed", "3",
                "--images", images, "--texts", texts, "--labels", labels)
            ckpt, log = str(sub / "m.uchckpt"), str(sub / "log.csv")
            run("train", "--images", images, "--texts", texts, "--k", "8",
                "--iters", "3", "--batch-size", "8", "--lr-image", "1e-3",
                "--lr-text", "1e-3", "--seed", "2", "--gen-adv", "off",
                "--checkpoint", ckpt, "--log", log)
            codes = str(sub / "c.uchcode")
            run("encode", "--checkpoint", ckpt, "--images", images,
                "--mode", "image", "--out", codes)
            report = str(sub / "r.csv")
            run("eval", "--query-codes", codes, "--db-codes", codes,
                "--query-labels", labels, "--db-labels", labels,
                "--out", report, "--no-figures")
            return [open(p, "rb").read() for p in (images, ckpt, codes, report, log)]

        a = pipeline(tmp_path / "a")
        b = pipeline(tmp_path / "b")
        assert a == b
