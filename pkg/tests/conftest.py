import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from doreg import bench  # noqa: E402

# fixed up front for the acceptance configuration; never tuned
DESK_SEED = 0


def desk_config(output_dir, **overrides):
    """The scaled acceptance configuration: 128-point model, n=500, K=10, 4 levels x 20 cases."""
    cfg = bench.load_config(overrides={"output_dir": str(output_dir), "seed": DESK_SEED,
                                       "sweeps.record_timing": False})
    for k, v in overrides.items():
        cfg = bench.load_config(overrides={**_flatten(cfg), k: v})
    return cfg


def _flatten(cfg, prefix=""):
    out = {}
    for k, v in cfg.items():
        if isinstance(v, dict) and k not in ("levels", "ranges", "maps"):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


@pytest.fixture(scope="session")
def desk_maps(tmp_path_factory):
    """Desk-scale maps for both DO variants, trained once per session."""
    cfg = desk_config(tmp_path_factory.mktemp("desk_a"))
    trained = bench.train_maps(cfg)
    return cfg, trained


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
