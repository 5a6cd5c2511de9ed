import subprocess
import sys
from pathlib import Path

import numpy as np

from irkprec.butcher import make_radau_iia, read_coeff_file
from irkprec.config import read_config_file
from irkprec.sparsela import read_matrix_market

ROOT = Path(__file__).resolve().parents[1]
SCRIPTS = ROOT / "scripts"


def script(name, *args):
    return subprocess.run([sys.executable, str(SCRIPTS / name), *map(str, args)], capture_output=True,
                          text=True, check=True).stdout


def test_all_configs_parse():
    cfgs = sorted((SCRIPTS / "configs").glob("*.cfg"))
    assert len(cfgs) >= 8
    for c in cfgs:
        assert "study" in read_config_file(c)


def test_export_system(tmp_path):
    script("export_system.py", "--problem", "heat", "--hx-inv", "4", "--out", tmp_path)
    M = read_matrix_market(tmp_path / "heat-P2-n4_M.mtx")
    assert M.shape == (49, 49)
    assert (tmp_path / "heat-P2-n4_mesh.txt").read_text().startswith("nodes 25\n")


def test_write_coeff_and_pivot(tmp_path):
    path = tmp_path / "gsl.txt"
    script("write_coeff.py", "--stages", "3", "--kind", "GSL", path)
    np.testing.assert_array_equal(read_coeff_file(path), np.tril(make_radau_iia(3).A))
    csv_path = tmp_path / "it.csv"
    csv_path.write_text("s,hx_inv,preconditioner,side,iterations,status\n"
                        "2,8,J,right,12,ok\n2,8,LD,right,7,ok\n2,16,J,right,14,not-converged\n")
    out = script("pivot.py", csv_path).splitlines()
    assert out == ["s,hx_inv,J/right,LD/right", "2,8,12,7", "2,16,(14),"]
