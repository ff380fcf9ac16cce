"""Command-line surface: stages, graph/index/eval subcommands, exit codes."""

import json

import numpy as np
import pytest

from codexforge.cli import main


class TestStageCommands:
    def test_classify_with_config(self, fresh_corpus, capsys):
        code = main(["classify", "--config", str(fresh_corpus.config_path)])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["counts"]["pages"] == 24

    def test_detect_without_classify_exits_1(self, fresh_corpus, capsys):
        code = main(["detect", "--config", str(fresh_corpus.config_path)])
        assert code == 1
        assert "classifications" in capsys.readouterr().err

    def test_missing_config_and_root(self, capsys):
        assert main(["classify"]) == 1
        assert "required" in capsys.readouterr().err


class TestGraphAndIndexCommands:
    def test_full_cli_run_then_query(self, fresh_corpus, capsys):
        config = str(fresh_corpus.config_path)
        assert main(["all", "--config", config]) == 0
        capsys.readouterr()
        assert main(["index", "query", "dragon", "--config", config, "--top", "3"]) == 0
        out = capsys.readouterr().out
        assert "_b0" in out

        assert main(["graph", "communities", "--config", config]) == 0
        communities = json.loads(capsys.readouterr().out)
        assert communities["communities"] == 2

        out_csv = fresh_corpus.root / "edges.csv"
        assert main(["graph", "export", "--config", config, "--format", "csv",
                     "--out", str(out_csv)]) == 0
        assert out_csv.read_text().startswith("source,target,weight")

    def test_graph_export_without_build_fails(self, fresh_corpus, capsys):
        code = main(["graph", "export", "--config", str(fresh_corpus.config_path)])
        assert code == 1
        assert "graph build" in capsys.readouterr().err


class TestEvalCommands:
    def test_eval_detect_files(self, tmp_path, capsys):
        predictions = {"img1": [[0, 0, 10, 10, 0.9], [50, 50, 60, 60, 0.7]]}
        truth = {"img1": [[0, 0, 10, 10], [100, 100, 120, 130]]}
        pred_path = tmp_path / "pred.json"
        truth_path = tmp_path / "truth.json"
        pred_path.write_text(json.dumps(predictions))
        truth_path.write_text(json.dumps(truth))
        out = tmp_path / "metrics.json"
        code = main(["eval", "detect", "--predictions", str(pred_path),
                     "--truth", str(truth_path), "--out", str(out)])
        assert code == 0
        metrics = json.loads(out.read_text())
        assert metrics["tp"] == 1 and metrics["fp"] == 1 and metrics["fn"] == 1
        assert metrics["precision"] == pytest.approx(0.5)

    def test_eval_classify_files(self, tmp_path):
        predictions = [{"page_id": f"l_c_v_p{i:05d}", "prob_art": p}
                       for i, p in enumerate([0.9, 0.8, 0.3, 0.1], start=1)]
        truth = {f"l_c_v_p{i:05d}": label
                 for i, label in enumerate(["art", "no_art", "art", "no_art"], start=1)}
        pred_path = tmp_path / "pred.json"
        truth_path = tmp_path / "truth.json"
        pred_path.write_text(json.dumps(predictions))
        truth_path.write_text(json.dumps(truth))
        out = tmp_path / "metrics.json"
        code = main(["eval", "classify", "--predictions", str(pred_path),
                     "--truth", str(truth_path), "--out", str(out)])
        assert code == 0
        metrics = json.loads(out.read_text())
        assert metrics["tp"] == 1 and metrics["fp"] == 1
        assert "roc_auc" in metrics

    def test_eval_masks2boxes(self, tmp_path, capsys):
        import cv2

        mask = np.zeros((60, 60), np.uint8)
        mask[5:15, 5:15] = 255
        mask[5:15, 19:29] = 255
        mask_path = tmp_path / "mask.png"
        cv2.imwrite(str(mask_path), mask)
        out = tmp_path / "boxes.json"
        code = main(["eval", "masks2boxes", "--mask", str(mask_path),
                     "--radius", "10", "--out", str(out)])
        assert code == 0
        boxes = json.loads(out.read_text())
        assert len(boxes) == 1  # 4-px gap merged at radius 10
