import cmath
import json

import numpy as np
import pytest

from mimnet import data
from mimnet.data import (
    GRID_STEP_NM,
    WAVELENGTHS,
    Dataset,
    Geometry,
    Metal,
    MalformedHeaderError,
    NonNumericFieldError,
    RowArityError,
    base_resonance,
    fit_normalizer,
    generate_grid,
    lorentzian_s11,
    normalize,
    oracle_s11,
    read_dataset,
    split,
    write_dataset,
)
from mimnet.numcore import ContractError, DomainError, Rng

G0 = Geometry(50, 300, 90, 80)


def test_wavelength_grid():
    assert WAVELENGTHS.size == 64
    assert WAVELENGTHS[0] == 500.0 and WAVELENGTHS[-1] == 850.0
    assert GRID_STEP_NM == pytest.approx(350 / 63)


def test_oracle_examples():
    assert float(base_resonance(G0.as_tuple())) == 634.0
    s = oracle_s11(Metal.AL, G0, 634.0)
    assert abs(s - (-0.15 + 0j)) < 1e-12
    s = oracle_s11(Metal.AL, G0, 694.0)
    assert abs(s - (0.425 + 0.575j)) < 1e-12


def test_zero_coupling_mode_is_unit_reflection():
    lam = np.linspace(500, 850, 71)
    assert np.all(lorentzian_s11(lam, [(634.0, 0.0, 60.0)]) == 1 + 0j)


def test_oracle_window_checked():
    with pytest.raises(DomainError):
        oracle_s11(Metal.AL, G0, 499.0)
    with pytest.raises(DomainError):
        oracle_s11(Metal.AU, G0, 851.0)


def test_mode_tables_valid():
    for metal in Metal:
        assert metal.modes
        for m in metal.modes:
            assert 0 < m.K < 2 and m.gamma > 0
    assert len(Metal.AG.modes) == 2


def test_geometry_validation():
    with pytest.raises(DomainError):
        Geometry(0, 300, 90, 80)
    assert Geometry(20, 200, 90, 60).plausible
    assert not Geometry(20, 200, 150, 60).plausible


def test_vectorized_oracle_matches_scalar_bitwise():
    g = Geometry(30, 325, 75, 85)
    for metal in Metal:
        re, im = data.oracle_spectra(metal, [g.as_tuple()])
        direct = oracle_s11(metal, g, WAVELENGTHS)
        assert re[0].tobytes() == direct.real.tobytes()
        assert im[0].tobytes() == direct.imag.tobytes()


def test_critical_coupling_zero_reflection():
    for center in (510.0, 634.0, 777.7):
        assert abs(lorentzian_s11(center, [(center, 1.0, 45.0)])) < 1e-12


def test_far_detuning_bound():
    center, K, gamma = 610.0, 1.15, 5.0
    lam = np.array([500.0, 505.0, 711.0, 850.0])
    s = lorentzian_s11(lam, [(center, K, gamma)])
    for l, v in zip(lam, s):
        assert abs(l - center) > 20 * gamma
        assert abs(v - 1) < K * gamma / abs(l - center) + 1e-12


@pytest.mark.parametrize("metal", [Metal.AL, Metal.AU])
def test_single_mode_symmetry(metal):
    g = Geometry(40, 300, 90, 80)
    center = metal.modes[0].center(float(base_resonance(g.as_tuple())))
    for off in (1.0, 7.5, 33.3, 80.0):
        lo = oracle_s11(metal, g, center - off)
        hi = oracle_s11(metal, g, center + off)
        assert abs(lo.real - hi.real) < 1e-12
        assert abs(lo.imag + hi.imag) < 1e-12


def test_grid_shape_and_order(al_grid):
    assert len(al_grid) == 6561
    assert tuple(al_grid.geoms[0]) == (20, 200, 30, 60)
    assert tuple(al_grid.geoms[-1]) == (100, 400, 150, 100)
    assert tuple(al_grid.geoms[1]) == (20, 200, 30, 65)  # T innermost
    assert tuple(al_grid.geoms[729]) == (30, 200, 30, 60)  # H outermost
    assert len({tuple(g) for g in al_grid.geoms}) == 6561
    lam0 = base_resonance(al_grid.geoms)
    assert lam0.min() == 438.0 and lam0.max() == 822.0
    assert np.all(np.isfinite(al_grid.re)) and np.all(np.isfinite(al_grid.im))


def test_grid_records_implausible_samples(al_grid):
    expected = int(np.sum(al_grid.geoms[:, 2] >= al_grid.geoms[:, 1] / 2))
    assert al_grid.provenance["implausible_count"] == expected > 0


def test_grid_deterministic(al_grid):
    assert generate_grid(Metal.AL).equals(al_grid)


@pytest.mark.parametrize("metal", [Metal.AL, Metal.AU])
def test_passivity_single_mode(metal, al_grid, au_grid):
    ds = al_grid if metal is Metal.AL else au_grid
    assert np.hypot(ds.re, ds.im).max() <= 1.0


def _local_minima(m):
    return sum(1 for k in range(1, len(m) - 1) if m[k] < m[k - 1] and m[k] < m[k + 1])


def test_silver_has_two_dips(ag_grid):
    lam0 = base_resonance(ag_grid.geoms)
    c1, c2 = (m.center(lam0) for m in Metal.AG.modes)
    max_gamma = max(m.gamma for m in Metal.AG.modes)
    sel = (c1 >= 520) & (c1 <= 830) & (c2 >= 520) & (c2 <= 830) & (np.abs(c1 - c2) > 3 * max_gamma)
    assert sel.sum() > 100
    mags = np.hypot(ag_grid.re[sel], ag_grid.im[sel])
    assert min(_local_minima(m) for m in mags) >= 2


def test_split(al_grid):
    pool, test = split(al_grid, 11)
    assert len(test) == 609 and len(pool) == 5952
    ids = np.concatenate([pool.ids, test.ids])
    assert sorted(ids.tolist()) == list(range(6561))
    again_pool, again_test = split(al_grid, 11)
    assert np.array_equal(pool.ids, again_pool.ids) and np.array_equal(test.ids, again_test.ids)
    perm = Rng(11).permutation(6561)
    assert np.array_equal(test.ids, perm[:609]) and np.array_equal(pool.ids, perm[609:])
    other_pool, _ = split(al_grid, 12)
    assert not np.array_equal(pool.ids, other_pool.ids)
    with pytest.raises(ContractError):
        split(al_grid.subset(np.arange(100)), 1)


def test_normalizer(al_grid):
    pool, _ = split(al_grid, 3)
    stats = fit_normalizer(pool.geoms)
    assert np.array_equal(normalize([20, 200, 30, 60], stats), [0, 0, 0, 0])
    assert np.array_equal(normalize([100, 400, 150, 100], stats), [1, 1, 1, 1])
    assert normalize([60, 300, 90, 80], stats)[0] == 0.5
    with pytest.raises(DomainError):
        fit_normalizer([[1, 2, 3, 4], [1, 5, 6, 7]])


def test_dataset_round_trip(tmp_path, ag_grid):
    path = tmp_path / "ag.csv"
    write_dataset(ag_grid, path, seed=3)
    back = read_dataset(path)
    assert back.equals(ag_grid)
    lines = path.read_text().splitlines()
    assert len(lines) == 6562
    assert lines[0].startswith("metal,H,P,R,T,re_0,") and lines[0].endswith(",im_63")
    meta = json.loads(data.sidecar_path(path).read_text())
    assert meta["samples"] == 6561 and meta["seed"] == 3 and meta["fingerprint"] == ag_grid.fingerprint()


def _small(tmp_path):
    ds = generate_grid(Metal.AU).subset(np.arange(3))
    path = tmp_path / "s.csv"
    write_dataset(ds, path)
    return path, path.read_text().splitlines()


def test_parse_errors(tmp_path):
    path, lines = _small(tmp_path)
    bad = lines[:]
    bad[2] = ",".join(bad[2].split(",")[:-3])  # 130 columns
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(RowArityError) as err:
        read_dataset(path)
    assert err.value.line == 3 and "line 3" in str(err.value)

    bad = lines[:]
    cells = bad[3].split(",")
    cells[7] = "abc"
    bad[3] = ",".join(cells)
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(NonNumericFieldError) as err:
        read_dataset(path)
    assert err.value.line == 4

    path.write_text("")
    with pytest.raises(MalformedHeaderError):
        read_dataset(path)
    path.write_text("metal,H,P\n")
    with pytest.raises(MalformedHeaderError):
        read_dataset(path)


def test_fingerprint_sensitive(al_grid):
    d = al_grid.subset(np.arange(10))
    e = al_grid.subset(np.arange(10))
    assert d.fingerprint() == e.fingerprint()
    e.re[0, 0] += 1e-15
    assert d.fingerprint() != e.fingerprint()
    assert isinstance(d, Dataset)
