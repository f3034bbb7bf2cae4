import numpy as np
import pytest
from PIL import Image

from cyclesem.metrics import EvalReport
from cyclesem.report import (
    ABLATION_COLUMNS,
    grid_rows,
    image_grid,
    save_grid,
    select_report_indices,
    to_uint8,
    write_ablation_csv,
    write_comparison_csv,
)


def make_report(method="cycle", mode="continuous", ap=0.5, dice=0.4):
    return EvalReport(method=method, mode=mode, split="test", auprc=ap, best_dice=dice, best_threshold=0.3,
                      num_pixels=16, num_positive=4, num_slices=1, median_residual_lesion=0.4,
                      median_residual_healthy=0.1)


class TestCsv:
    def test_ablation_schema(self, tmp_path):
        path = tmp_path / "ablation.csv"
        write_ablation_csv(path, {"discrete": make_report(mode="discrete", ap=0.3),
                                  "continuous": make_report(ap=0.6)})
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(ABLATION_COLUMNS) == "mode,auprc,best_dice"
        assert [line.split(",")[0] for line in lines[1:]] == ["continuous", "discrete"]
        assert float(lines[1].split(",")[1]) == 0.6

    def test_ablation_needs_both_modes(self, tmp_path):
        with pytest.raises(KeyError):
            write_ablation_csv(tmp_path / "ablation.csv", {"continuous": make_report()})

    def test_comparison_sorted(self, tmp_path):
        path = tmp_path / "comparison.csv"
        write_comparison_csv(path, [make_report(mode="discrete"), make_report(method="ae", mode="none")])
        rows = [line.split(",")[:2] for line in path.read_text().splitlines()[1:]]
        assert rows == [["ae", "none"], ["cycle", "discrete"]]


class TestImages:
    def test_uint8_mapping(self):
        assert to_uint8(np.array([0.0, 0.5, 1.0, 1.7, -0.2])).tolist() == [0, 128, 255, 255, 0]

    def test_grid_size(self):
        plane = np.zeros((8, 8))
        grid = image_grid([[plane] * 5, [plane] * 5], padding=2)
        assert grid.mode == "L"
        assert grid.size == (5 * 10 + 2, 2 * 10 + 2)

    def test_save_grid_writes_png(self, tmp_path):
        path = tmp_path / "grid.png"
        save_grid(path, [[np.full((4, 4), 1.0), np.zeros((4, 4))]])
        with Image.open(path) as img:
            assert img.format == "PNG"
            assert np.asarray(img).max() == 255

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            image_grid([])

    def test_row_layout(self):
        image, rec, res = np.zeros((2, 2)), np.ones((2, 2)), np.full((2, 2), 0.5)
        assert len(grid_rows(image, [rec, rec], res, np.zeros((2, 2), dtype=bool))) == 5
        assert len(grid_rows(image, [rec], res, None)) == 3

    def test_selects_lesioned_slices_in_order(self):
        masks = np.zeros((5, 2, 2), dtype=bool)
        masks[1, 0, 0] = masks[3, 1, 1] = masks[4, 0, 1] = True
        assert select_report_indices(masks, 2) == [1, 3]
        assert select_report_indices(masks, 0) == []
