"""Secondary acceptance: render the experiment figures from real CSV output
of the solver harness (skipped when that package is not installed)."""

import importlib.util
import os

import pytest

from plotkit import read_series
from plotkit.cli import main

HAVE_HARNESS = importlib.util.find_spec("extragrad") is not None


@pytest.mark.skipif(not HAVE_HARNESS, reason="solver harness not installed")
def test_criterion_10_figures_from_harness_csvs(tmp_path):
    from extragrad import harness

    out_dir = tmp_path / "results"
    harness.run_preset(
        "exp1_us_vs_is", desk=True, total_k=400, n_seeds=3,
        record_every=20, out_dir=str(out_dir),
    )
    for preset in ("exp2_sseg_stepsizes", "exp3_negative_mu", "exp4_iseg_stepsizes"):
        harness.run_preset(preset, desk=True, total_k=400, n_seeds=3,
                           record_every=20, out_dir=str(out_dir))

    exp1 = sorted(
        str(out_dir / f) for f in os.listdir(out_dir) if f.startswith("exp1")
    )
    assert len(exp1) == 8
    fig1 = tmp_path / "fig_exp1.png"
    rc = main(["--layout", "1x4", "--out", str(fig1)] + exp1)
    assert rc == 0
    assert fig1.exists() and (tmp_path / "fig_exp1.pdf").exists()

    others = sorted(
        str(out_dir / f)
        for f in os.listdir(out_dir)
        if f.startswith(("exp2", "exp3", "exp4"))
    )
    series = [read_series(p) for p in others]
    assert sum(s.has_envelope for s in series) >= 4  # theory overlays present
    fig2 = tmp_path / "fig_exp234.png"
    rc = main(["--layout", "1x3", "--out", str(fig2)] + others)
    assert rc == 0
    assert fig2.exists()

    # header-schema violations exit non-zero
    bad = tmp_path / "bad.csv"
    bad.write_text("k,mean_sq_dist,stderr\n0,1,0\n")
    assert main(["--out", str(tmp_path / "x.png"), str(bad)]) != 0
    print("ACCEPTANCE 10: PASS - exp1 four-panel and exp2-4 three-panel figures rendered")
