import math
from pathlib import Path

import numpy as np
import pytest

from mechworld_plots.render import (
    SchemaError,
    load_adaptation_rows,
    load_count_matrix,
    main,
    render,
    sem,
)

SAMPLES = Path(__file__).resolve().parents[1] / "samples"


def test_sem_matches_hand_computed_three_seed_fixture():
    # three seeds -> band half-width = sample std / sqrt(3)
    values = [0.010, 0.014, 0.018]
    mean = sum(values) / 3
    var = sum((v - mean) ** 2 for v in values) / 2  # ddof = 1
    expect = math.sqrt(var) / math.sqrt(3)
    assert abs(sem(values) - expect) < 1e-9
    assert sem([0.5]) == 0.0


def test_heatmap_grid_matches_count_matrix_shape(tmp_path):
    csv_path = tmp_path / "counts.csv"
    csv_path.write_text(
        "mode,mech_0,mech_1,mech_2\n"
        "STRAIGHT_LINE,10,0,2\n"
        "REPULSION,1,20,0\n"
        "ATTRACTION,0,3,30\n"
        "SPRING,0,0,0\n"
    )
    out = tmp_path / "heatmap.png"
    shape = render("heatmap", [str(csv_path)], out)
    assert shape == (4, 3)
    assert out.exists() and out.stat().st_size > 0


def test_heatmap_identity_matrix_normalizes_to_ones(tmp_path):
    csv_path = tmp_path / "eye.csv"
    csv_path.write_text("mode,mech_0,mech_1\nA,7,0\nB,0,3\n")
    names, labels, counts = load_count_matrix(csv_path)
    probs = counts / counts.sum(axis=1, keepdims=True)
    assert np.allclose(np.diag(probs), 1.0)
    out = tmp_path / "eye.svg"
    assert render("heatmap", [str(csv_path)], out) == (2, 2)


def test_adaptation_grouping_and_sem(tmp_path):
    csv_path = tmp_path / "adaptation.csv"
    csv_path.write_text(
        "method,n_episodes,seed,mse_step_1,mean_mse\n"
        "comet,10,0,0.0,0.010\n"
        "comet,10,1,0.0,0.014\n"
        "comet,10,2,0.0,0.018\n"
        "gnn_finetune,10,0,0.0,0.030\n"
    )
    grouped = load_adaptation_rows([csv_path])
    assert grouped[("comet", 10)] == [0.010, 0.014, 0.018]
    band = sem(grouped[("comet", 10)])
    assert abs(band - np.std([0.010, 0.014, 0.018], ddof=1) / np.sqrt(3)) < 1e-9
    out = tmp_path / "curves.png"
    render("adaptation_curves", [str(csv_path)], out)
    assert out.exists()


def test_schema_mismatch_names_missing_column(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("method,n_episodes,seed\ncomet,1,0\n")
    with pytest.raises(SchemaError, match="mean_mse"):
        load_adaptation_rows([bad])


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    out = tmp_path / "x.png"
    code = main(["--kind", "adaptation_curves", "--in", str(bad), "--out", str(out)])
    assert code == 1
    assert "method" in capsys.readouterr().err
    missing = main(["--kind", "heatmap", "--in", str(tmp_path / "nope.csv"), "--out", str(out)])
    assert missing == 1


def test_rollout_curves_and_timeline(tmp_path):
    roll = tmp_path / "rollout_oracle.csv"
    lines = ["episode,step,mse,mse_pos"]
    for e in range(3):
        for s in range(1, 6):
            lines.append(f"{e},{s},{0.001 * s * (e + 1)},{0.0005 * s}")
    roll.write_text("\n".join(lines) + "\n")
    out = tmp_path / "rollout.png"
    render("rollout_curves", [str(roll)], out)
    assert out.exists()

    trace = tmp_path / "rollout_confidence_trace.csv"
    lines = ["episode,step,object,mechanism,context"]
    for s in range(1, 11):
        for i in range(3):
            lines.append(f"0,{s},{i},{(s + i) % 4},{i}")
    trace.write_text("\n".join(lines) + "\n")
    out2 = tmp_path / "timeline.png"
    render("usage_timeline", [str(trace)], out2, episode=0)
    assert out2.exists()


def test_rendering_is_idempotent(tmp_path):
    csv_path = tmp_path / "counts.csv"
    csv_path.write_text("mode,mech_0,mech_1\nA,5,1\nB,2,8\n")
    out_a = tmp_path / "a.png"
    out_b = tmp_path / "b.png"
    render("heatmap", [str(csv_path)], out_a)
    render("heatmap", [str(csv_path)], out_b)
    assert out_a.read_bytes() == out_b.read_bytes()


def test_unsupported_output_format_rejected(tmp_path):
    csv_path = tmp_path / "counts.csv"
    csv_path.write_text("mode,mech_0\nA,1\n")
    with pytest.raises(SchemaError, match="unsupported output"):
        render("heatmap", [str(csv_path)], tmp_path / "x.pdf")


@pytest.mark.skipif(not SAMPLES.exists() or not any(SAMPLES.iterdir()), reason="samples not generated")
def test_shipped_samples_render(tmp_path):
    rendered = 0
    mapping = [
        ("disentanglement", "heatmap"),
        ("adaptation", "adaptation_curves"),
        ("rollout_oracle", "rollout_curves"),
        ("trace", "usage_timeline"),
    ]
    for stem, kind in mapping:
        for sample in SAMPLES.glob(f"*{stem}*.csv"):
            out = tmp_path / f"{sample.stem}.png"
            render(kind, [str(sample)], out)
            assert out.exists() and out.stat().st_size > 0
            rendered += 1
    assert rendered >= 3
