import numpy as np

from sangria.fingerprint_data import UJI_NOT_DETECTED, load_uji_csv
from sangria.synthetic import PhoneProfile, simulate_rows, simulate_uji_csv


def test_row_layout():
    rows = simulate_rows(n_rps=4, samples_per_rp=2, n_aps=30, seed=0)
    assert len(rows) == 4 * 2 * 3
    assert all(len(r) == 30 + 9 for r in rows)


def test_seeded():
    a = simulate_rows(n_rps=4, samples_per_rp=2, n_aps=30, seed=5)
    b = simulate_rows(n_rps=4, samples_per_rp=2, n_aps=30, seed=5)
    assert a == b


def test_detection_floor_respected():
    phones = {"7": PhoneProfile(1.0, 0.0, 1.0, -80.0)}
    rows = np.array(simulate_rows(n_rps=6, samples_per_rp=3, phones=phones, n_aps=60, seed=1))
    rss = rows[:, :60]
    detected = rss[rss != UJI_NOT_DETECTED]
    assert detected.size and detected.min() >= -80 and detected.max() <= 0


def test_file_loads(tmp_path):
    db = load_uji_csv(simulate_uji_csv(tmp_path / "s.csv", n_rps=3, samples_per_rp=2, n_floors=2))
    assert len(db) == 3 * 2 * 3 * 2
    assert db.device_set == ["1", "2", "3"]
    assert sorted(set(db.locations[:, 2])) == [0.0, 4.0]
