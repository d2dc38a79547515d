import numpy as np
import pytest

from ttalab.datagen import (Shift, StreamSpec, export_stream_csv,
                            generate_eval_batch, generate_stream,
                            import_stream_csv, make_ood_prototypes,
                            make_prototypes, ood_row_count)
from ttalab.model import class_probabilities, encode, init_encoder_params, \
    make_projection
from ttalab.numerics import derive_rng


def _spec(**kw):
    base = dict(n_classes=6, d_in=16, d_emb=8, samples_per_batch=32, n_batches=4,
                cluster_spread=0.5, shift=Shift("none"), ood_fraction=0.0,
                prototype_margin=0.2, seed=0)
    base.update(kw)
    return StreamSpec(**base)


def test_shift_parsing():
    assert Shift.parse("none").kind == "none"
    s = Shift.parse("noise:0.8")
    assert s.kind == "noise" and s.param == 0.8
    with pytest.raises(ValueError):
        Shift.parse("noise")
    with pytest.raises(ValueError):
        Shift.parse("warp:1.0")


def test_prototypes_margin_and_determinism():
    spec = _spec()
    a = make_prototypes(spec, derive_rng(0, "p"))
    b = make_prototypes(spec, derive_rng(0, "p"))
    assert np.array_equal(a.protos, b.protos)
    np.testing.assert_allclose(np.linalg.norm(a.protos, axis=1), 1.0, atol=1e-12)
    gram = a.protos @ a.protos.T
    off = gram[~np.eye(spec.n_classes, dtype=bool)]
    assert off.max() <= 1.0 - spec.prototype_margin + 1e-12


def test_prototypes_near_antipodal_two_classes():
    spec = _spec(n_classes=2, d_emb=3, prototype_margin=1.8)
    protos = make_prototypes(spec, derive_rng(1, "p"))
    assert float(protos.protos[0] @ protos.protos[1]) <= -0.8


def test_prototypes_infeasible_margin_errors():
    spec = _spec(n_classes=6, d_emb=8, prototype_margin=1.99)
    with pytest.raises(ValueError, match="attempts"):
        make_prototypes(spec, derive_rng(2, "p"))


def test_prototype_margin_warns_when_dim_small():
    spec = _spec(n_classes=6, d_emb=4)
    with pytest.warns(UserWarning, match="d_emb"):
        make_prototypes(spec, derive_rng(3, "p"))


def test_ood_prototypes_disjoint_margin():
    spec = _spec(ood_fraction=0.0)
    protos = make_prototypes(spec, derive_rng(4, "p"))
    ood = make_ood_prototypes(spec, protos, derive_rng(4, "o"))
    cross = ood @ protos.protos.T
    assert cross.max() <= 1.0 - spec.prototype_margin + 1e-12


def test_stream_shapes_and_determinism():
    spec = _spec()
    w = make_projection(spec.d_in, spec.d_emb, derive_rng(0, "w"))
    protos = make_prototypes(spec, derive_rng(0, "p"))
    s1 = generate_stream(spec, protos, w)
    s2 = generate_stream(spec, protos, w)
    assert len(s1) == spec.n_batches
    for b1, b2 in zip(s1, s2):
        assert b1.x_raw.shape == (spec.samples_per_batch, spec.d_in)
        assert np.array_equal(b1.x_raw, b2.x_raw)
        assert np.array_equal(b1.true_labels, b2.true_labels)
        assert not b1.ood_mask.any()


def test_ood_row_count_doubles_at_half():
    assert ood_row_count(128, 0.5) == 128
    assert ood_row_count(64, 0.0) == 0
    assert ood_row_count(60, 0.25) == 20


def test_open_set_stream_adds_rows():
    spec = _spec(ood_fraction=0.5)
    w = make_projection(spec.d_in, spec.d_emb, derive_rng(1, "w"))
    protos = make_prototypes(spec, derive_rng(1, "p"))
    for batch in generate_stream(spec, protos, w):
        assert batch.x_raw.shape[0] == 2 * spec.samples_per_batch
        assert batch.ood_mask.sum() == spec.samples_per_batch
        assert (batch.true_labels[batch.ood_mask] == -1).all()
        assert (batch.true_labels[~batch.ood_mask] >= 0).all()


def test_separable_limit_perfect_zero_shot():
    spec = _spec(cluster_spread=0.05, samples_per_batch=64, n_batches=2)
    w = make_projection(spec.d_in, spec.d_emb, derive_rng(2, "w"))
    protos = make_prototypes(spec, derive_rng(2, "p"))
    params = init_encoder_params(spec.d_in, spec.d_emb, derive_rng(2, "w"))
    correct = total = 0
    for batch in generate_stream(spec, protos, w):
        q = class_probabilities(encode(batch.x_raw, params), protos, 0.01)
        correct += (np.argmax(q, axis=1) == batch.true_labels).sum()
        total += batch.x_raw.shape[0]
    assert correct == total


def test_noise_shift_reduces_zero_shot_accuracy():
    base = _spec(cluster_spread=0.8, samples_per_batch=128, n_batches=2)
    noisy = _spec(cluster_spread=0.8, samples_per_batch=128, n_batches=2,
                  shift=Shift("noise", 2.5))
    acc = {}
    for tag, spec in (("clean", base), ("noisy", noisy)):
        w = make_projection(spec.d_in, spec.d_emb, derive_rng(3, "w"))
        protos = make_prototypes(spec, derive_rng(3, "p"))
        params = init_encoder_params(spec.d_in, spec.d_emb, derive_rng(3, "w"))
        correct = total = 0
        for batch in generate_stream(spec, protos, w):
            q = class_probabilities(encode(batch.x_raw, params), protos, 0.01)
            correct += (np.argmax(q, axis=1) == batch.true_labels).sum()
            total += batch.x_raw.shape[0]
        acc[tag] = correct / total
    assert acc["noisy"] < acc["clean"]


def test_rotation_and_bias_shift_applied():
    for shift in (Shift("rotation", 0.7), Shift("additive_bias", 1.5)):
        spec_shift = _spec(shift=shift, n_batches=1)
        spec_plain = _spec(n_batches=1)
        w = make_projection(16, 8, derive_rng(4, "w"))
        protos = make_prototypes(spec_plain, derive_rng(4, "p"))
        a = generate_stream(spec_plain, protos, w)[0]
        b = generate_stream(spec_shift, protos, w)[0]
        assert not np.allclose(a.x_raw, b.x_raw)
        if shift.kind == "rotation":
            # plane rotations preserve row norms
            np.testing.assert_allclose(np.linalg.norm(b.x_raw, axis=1),
                                       np.linalg.norm(a.x_raw, axis=1),
                                       rtol=1e-10)


def test_eval_batch_shape():
    spec = _spec(ood_fraction=0.5)
    w = make_projection(spec.d_in, spec.d_emb, derive_rng(5, "w"))
    protos = make_prototypes(spec, derive_rng(5, "p"))
    ev = generate_eval_batch(spec, protos, w)
    assert ev.id_mask.sum() == 4 * spec.samples_per_batch
    assert ev.ood_mask.sum() == 4 * spec.samples_per_batch


def test_stream_csv_round_trip(tmp_path):
    spec = _spec(n_batches=2, samples_per_batch=5, ood_fraction=0.5)
    w = make_projection(spec.d_in, spec.d_emb, derive_rng(6, "w"))
    protos = make_prototypes(spec, derive_rng(6, "p"))
    stream = generate_stream(spec, protos, w)
    path = tmp_path / "stream.csv"
    export_stream_csv(stream, path)
    loaded = import_stream_csv(path)
    assert len(loaded) == len(stream)
    for a, b in zip(stream, loaded):
        assert np.array_equal(a.x_raw, b.x_raw)
        assert np.array_equal(a.true_labels, b.true_labels)
        assert np.array_equal(a.ood_mask, b.ood_mask)
    header = path.read_text().splitlines()[0]
    assert header.startswith("batch,row,label_or_unknown,ood_flag,x0")
