import numpy as np
import pytest

from impactforge.dataset import (HEIGHT_M, STRAIN, SampleTensor, absorbed_energy, apply_scaler,
                                 augment, build_dataset, downsample, fit_scaler, invert_scaler,
                                 load_dataset, save_dataset, split, truncate)
from impactforge.errors import InvalidArgument
from impactforge.fesolver import SimulationRecord
from impactforge.geometry import DesignParams

P = DesignParams(4, 2, 3, 0.5, 0.05)


def make_record(n=500, final=0.25, rate=10.0, stress=None, force=None):
    e = np.linspace(0.0, final, n)
    s = 1e8 * e if stress is None else stress(e)
    f = s * 11e-3 if force is None else np.full(n, force)
    zeros = np.zeros(n)
    return SimulationRecord(time=e / rate, nominal_strain=e, nominal_stress=s, reaction_force=f,
                            E_plastic=3.0 * e, E_elastic=np.sqrt(e), E_kinetic=zeros,
                            external_work=zeros, hourglass_energy=zeros, strain_rate=rate,
                            final_strain=final)


def test_downsample_identity_for_uniform_50_point_record():
    rec = make_record(50)
    s = downsample(rec, P)
    assert np.array_equal(s.inputs[:, STRAIN], rec.nominal_strain)
    assert np.array_equal(s.outputs[:, 0], rec.nominal_stress)
    assert np.array_equal(s.outputs[:, 1], rec.E_plastic)
    assert np.array_equal(s.inputs[:, 5], rec.time)


def test_downsampled_linear_record_stays_on_the_line():
    s = downsample(make_record(500), P)
    assert s.inputs.shape == (50, 8) and s.outputs.shape == (50, 4)
    assert np.allclose(s.outputs[:, 0], 1e8 * s.inputs[:, STRAIN], rtol=1e-12, atol=1e-4)
    assert np.allclose(s.inputs[:, :5], P.as_vector())
    assert np.all(s.inputs[:, 7] == 10.0)


def test_constant_force_absorbs_force_times_distance():
    rec = make_record(37, force=250.0)
    s = downsample(rec, P)
    assert s.outputs[-1, 3] == pytest.approx(250.0 * 0.25 * HEIGHT_M, rel=1e-12)
    assert absorbed_energy([0.0], [1.0]).tolist() == [0.0]


def test_downsample_rejects_single_point():
    with pytest.raises(InvalidArgument):
        downsample(make_record(1), P)


def test_augment_children():
    parent = downsample(make_record(500), P, T=201, sim_id="s7")
    kids = augment(parent, k=20, rng=3)
    assert len(kids) == 20
    for c in kids:
        ef = c.final_strain
        assert 0.10 <= ef <= 0.25
        assert c.inputs.shape == (50, 8)
        assert c.inputs[-1, STRAIN] == ef
        assert np.all(np.diff(c.inputs[:, STRAIN]) > 0)
        assert np.allclose(c.inputs[:, :5], parent.inputs[0, :5])
        assert np.all(c.inputs[:, 7] == parent.inputs[0, 7])
        # a linear channel keeps its slope
        assert np.allclose(c.outputs[:, 1], 3.0 * c.inputs[:, STRAIN], rtol=1e-12, atol=1e-15)
    assert len({c.sample_id for c in kids}) == 20


def test_child_at_parent_final_strain_is_the_parent():
    parent = downsample(make_record(50), P)
    child = truncate(parent, parent.final_strain)
    assert np.array_equal(child.inputs, parent.inputs)
    assert np.array_equal(child.outputs, parent.outputs)


@pytest.mark.parametrize("kw", [dict(k=0), dict(strain_lo=0.2, strain_hi=0.2),
                                dict(strain_hi=0.3)])
def test_augment_preconditions(kw):
    with pytest.raises(InvalidArgument):
        augment(downsample(make_record(50), P), **kw)


def _sample(v):
    x = np.zeros((50, 8))
    x[:, 6] = v
    y = np.full((50, 4), v)
    return SampleTensor(x, y)


def test_scaler_two_point_example_and_constant_channel():
    sc = fit_scaler([_sample(0.0), _sample(2.0)])
    assert sc.in_mean[6] == 1.0 and sc.in_std[6] == 1.0
    scaled = apply_scaler(sc, _sample(2.0))
    assert np.all(scaled.inputs[:, 6] == 1.0)
    assert np.all(apply_scaler(sc, _sample(0.0)).inputs[:, 6] == -1.0)
    # constant channels get the unit sentinel and scale to zero
    assert sc.in_std[0] == 1.0 and np.all(scaled.inputs[:, 0] == 0.0)
    # held-out data need not be centred
    assert apply_scaler(sc, _sample(5.0)).inputs[:, 6].mean() == 4.0


def test_scaler_round_trip():
    rng = np.random.default_rng(0)
    samples = [SampleTensor(rng.normal(3, 7, (50, 8)), rng.normal(-1e6, 1e5, (50, 4)))
               for _ in range(5)]
    sc = fit_scaler(samples)
    for s in samples:
        back = invert_scaler(sc, apply_scaler(sc, s))
        assert np.allclose(back.inputs, s.inputs, rtol=1e-12, atol=0)
        assert np.allclose(back.outputs, s.outputs, rtol=1e-12, atol=0)
    X = np.concatenate([apply_scaler(sc, s).inputs for s in samples])
    assert np.all(np.abs(X.mean(axis=0)) < 1e-9)
    assert np.allclose(X.std(axis=0), 1.0, atol=1e-9)
    with pytest.raises(InvalidArgument):
        fit_scaler([])


def test_split_100_parents():
    groups = [f"sim{p}" for p in range(100) for _ in range(21)]
    sp = split(groups, seed=4)
    sizes = [len(set(groups[i] for i in part)) for part in (sp.train, sp.validation, sp.test)]
    assert sizes == [65, 15, 20]
    assert len(sp.train) == 65 * 21
    all_idx = np.concatenate([sp.train, sp.validation, sp.test])
    assert sorted(all_idx.tolist()) == list(range(2100))
    again = split(groups, seed=4)
    assert np.array_equal(sp.test, again.test)
    assert not np.array_equal(sp.test, split(groups, seed=5).test)


def test_split_needs_three_parents():
    with pytest.raises(InvalidArgument):
        split(["a", "a", "b"])
    sp = split(["a", "b", "c"])
    assert len(sp.train) == len(sp.validation) == len(sp.test) == 1


def test_build_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    entries = [(f"s{i}", P, make_record(201, rate=float(rng.uniform(1, 50)),
                                        stress=lambda e, a=rng.uniform(1, 2): a * 1e8 * e))
               for i in range(10)]
    ds = build_dataset(entries, k=4, seed=2)
    assert len(ds.samples) == 10 * 5
    for part in ("train", "validation", "test"):
        ids = {ds.samples[i].sim_id for i in getattr(ds.split, part)}
        for other in ("train", "validation", "test"):
            if other != part:
                assert not ids & {ds.samples[i].sim_id for i in getattr(ds.split, other)}
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.manifest["augmentation"]["k"] == 4 and back.manifest["seed"] == 2
    for a, b in zip(ds.samples, back.samples):
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.outputs, b.outputs)
        assert a.sample_id == b.sample_id
    for name in ("in_mean", "in_std", "out_mean", "out_std"):
        assert np.array_equal(getattr(ds.scaler, name), getattr(back.scaler, name))
    assert np.array_equal(ds.split.validation, back.split.validation)
    X, Y = back.arrays("train")
    assert X.shape[1:] == (50, 8) and Y.shape[1:] == (50, 4)
