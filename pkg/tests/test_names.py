import numpy as np
import pytest

from daea.names import NameEmbeddingTable, hash_fallback_embedding, load_pretrained_vectors


def test_load_unit_vector(tmp_path):
    path = tmp_path / "vec"
    path.write_text("5\t0.6 0.8\n")
    table = load_pretrained_vectors(path, 2)
    np.testing.assert_allclose(table.vectors[5], [0.6, 0.8])
    assert len(table) == 1


def test_load_normalizes(tmp_path):
    path = tmp_path / "vec"
    path.write_text("5\t3 4\n")
    np.testing.assert_allclose(load_pretrained_vectors(path, 2).vectors[5], [0.6, 0.8], atol=1e-15)


def test_load_dimension_error(tmp_path):
    path = tmp_path / "vec"
    path.write_text("5\t1 2 3\n")
    with pytest.raises(ValueError, match="id 5"):
        load_pretrained_vectors(path, 2)


def test_load_non_finite(tmp_path):
    path = tmp_path / "vec"
    path.write_text("1\tnan 1\n")
    with pytest.raises(ValueError, match="non-finite"):
        load_pretrained_vectors(path, 2)


def test_hash_fallback_deterministic_and_unit():
    a = hash_fallback_embedding("Pale Ale", 64, 3)
    b = hash_fallback_embedding("Pale Ale", 64, 3)
    assert a.tobytes() == b.tobytes()
    for label in ["", "x", "Beer", "啤酒", "a" * 500]:
        assert np.linalg.norm(hash_fallback_embedding(label, 17, 0, entity_id=4)) == pytest.approx(1.0, abs=1e-9)
    assert not np.array_equal(hash_fallback_embedding("Beer", 8, 0), hash_fallback_embedding("Beer", 8, 1))


def test_hash_fallback_empty_label_uses_id():
    a = hash_fallback_embedding("", 8, 0, entity_id=1)
    b = hash_fallback_embedding("", 8, 0, entity_id=2)
    assert not np.array_equal(a, b)


def test_hash_fallback_distinct_labels_nearly_orthogonal():
    cos = [
        abs(hash_fallback_embedding(f"left-{i}", 64) @ hash_fallback_embedding(f"right-{i}", 64))
        for i in range(1000)
    ]
    assert np.mean(np.array(cos) < 0.5) >= 0.99


def test_table_fills_missing_ids():
    table = NameEmbeddingTable({0: np.array([1.0, 0.0])}, 2)
    m = table.matrix(3, {2: "two"})
    np.testing.assert_array_equal(m[0], [1.0, 0.0])
    np.testing.assert_array_equal(m[2], hash_fallback_embedding("two", 2))
    with pytest.raises(ValueError):
        NameEmbeddingTable({0: np.ones(3)}, 2)
