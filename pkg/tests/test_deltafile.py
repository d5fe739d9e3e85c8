import numpy as np
import pytest

from attrdelta.deltafile import (
    FILE_SUFFIX,
    FORMAT_VERSION,
    MAGIC,
    DeltaRegistry,
    delta_from_bytes,
    delta_to_bytes,
    load_delta,
    save_delta,
)
from attrdelta.errors import BadMagic, DimMismatchOnLoad, UnsupportedVersion
from attrdelta.extraction import AttributeDelta


def _delta(name="age", encoder="toy-agg16", dim=16, seed=0, method="learned"):
    rng = np.random.default_rng(seed)
    return AttributeDelta(
        attribute_name=name,
        vector=rng.standard_normal(dim).astype(np.float32),
        encoder_id=encoder,
        method=method,
        training_nouns=("person", "woman"),
        config_digest="deadbeefcafef00d",
    )


class TestBytesRoundTrip:
    def test_vector_bits_survive(self):
        d = _delta()
        back = delta_from_bytes(delta_to_bytes(d))
        assert np.array_equal(back.vector, d.vector)
        assert back.vector.dtype == np.float32

    def test_metadata_survives(self):
        d = _delta()
        back = delta_from_bytes(delta_to_bytes(d))
        assert back.attribute_name == d.attribute_name
        assert back.encoder_id == d.encoder_id
        assert back.method == d.method
        assert back.training_nouns == d.training_nouns
        assert back.config_digest == d.config_digest
        assert back.created_at == d.created_at

    def test_layout_preamble(self):
        blob = delta_to_bytes(_delta())
        assert blob[:4] == MAGIC
        assert int.from_bytes(blob[4:6], "little") == FORMAT_VERSION

    def test_serialization_deterministic(self):
        assert delta_to_bytes(_delta()) == delta_to_bytes(_delta())


class TestCorruptInputs:
    def test_bad_magic(self):
        blob = delta_to_bytes(_delta())
        with pytest.raises(BadMagic):
            delta_from_bytes(b"NOPE" + blob[4:])

    def test_short_file(self):
        with pytest.raises(BadMagic):
            delta_from_bytes(b"ADL")

    def test_unsupported_version(self):
        blob = bytearray(delta_to_bytes(_delta()))
        blob[4:6] = (99).to_bytes(2, "little")
        with pytest.raises(UnsupportedVersion):
            delta_from_bytes(bytes(blob))

    def test_truncated_header(self):
        blob = delta_to_bytes(_delta())
        with pytest.raises(BadMagic):
            delta_from_bytes(blob[:12])

    def test_garbage_header(self):
        d = _delta()
        header_garbage = b"{not json"
        import struct

        blob = struct.pack("<4sHI", MAGIC, FORMAT_VERSION, len(header_garbage))
        with pytest.raises(BadMagic):
            delta_from_bytes(blob + header_garbage)

    def test_payload_length_mismatch(self):
        blob = delta_to_bytes(_delta())
        with pytest.raises(DimMismatchOnLoad):
            delta_from_bytes(blob[:-4])
        with pytest.raises(DimMismatchOnLoad):
            delta_from_bytes(blob + b"\x00" * 4)


class TestFileRoundTrip:
    def test_save_load(self, tmp_path):
        d = _delta()
        path = save_delta(d, tmp_path / "age.adlt")
        assert path.exists()
        back = load_delta(path)
        assert np.array_equal(back.vector, d.vector)

    def test_save_creates_parents_and_leaves_no_temp(self, tmp_path):
        target = tmp_path / "a" / "b" / "x.adlt"
        save_delta(_delta(), target)
        assert target.exists()
        assert list(target.parent.glob("*.tmp")) == []

    def test_overwrite_is_atomic_replacement(self, tmp_path):
        path = tmp_path / "d.adlt"
        save_delta(_delta(seed=1), path)
        save_delta(_delta(seed=2), path)
        assert np.array_equal(load_delta(path).vector, _delta(seed=2).vector)


class TestRegistry:
    def test_save_scan_load(self, tmp_path):
        reg = DeltaRegistry(tmp_path)
        d = _delta("age")
        path = reg.save(d)
        assert path.name == f"age@toy-agg16{FILE_SUFFIX}"
        entries, problems = reg.scan()
        assert problems == []
        assert [e.key for e in entries] == ["age@toy-agg16"]
        assert entries[0].embedding_dim == 16
        back = reg.load("age@toy-agg16")
        assert np.array_equal(back.vector, d.vector)

    def test_bare_name_load_when_unambiguous(self, tmp_path):
        reg = DeltaRegistry(tmp_path)
        reg.save(_delta("age"))
        assert reg.load("age").attribute_name == "age"

    def test_bare_name_ambiguous_raises(self, tmp_path):
        reg = DeltaRegistry(tmp_path)
        reg.save(_delta("age", encoder="toy-agg16"))
        reg.save(_delta("age", encoder="toy-ws16"))
        with pytest.raises(KeyError, match="ambiguous"):
            reg.load("age")
        # full key still works
        assert reg.load("age@toy-ws16").encoder_id == "toy-ws16"

    def test_unknown_key_raises(self, tmp_path):
        reg = DeltaRegistry(tmp_path)
        with pytest.raises(KeyError, match="no delta"):
            reg.load("ghost")

    def test_corrupt_file_reported_not_fatal(self, tmp_path):
        reg = DeltaRegistry(tmp_path)
        reg.save(_delta("age"))
        (tmp_path / "junk.adlt").write_bytes(b"garbage bytes here")
        entries, problems = reg.scan()
        assert [e.name for e in entries] == ["age"]
        assert len(problems) == 1 and "junk.adlt" in problems[0]

    def test_scan_sorted_by_key(self, tmp_path):
        reg = DeltaRegistry(tmp_path)
        for name in ("width", "age", "smile"):
            reg.save(_delta(name))
        entries, _ = reg.scan()
        assert [e.name for e in entries] == ["age", "smile", "width"]

    def test_many_vectors_bit_exact(self, tmp_path):
        reg = DeltaRegistry(tmp_path)
        originals = {}
        for i in range(25):
            d = _delta(f"attr{i:02d}", seed=i)
            reg.save(d)
            originals[d.attribute_name] = d.vector
        entries, problems = reg.scan()
        assert problems == [] and len(entries) == 25
        for e in entries:
            assert np.array_equal(load_delta(e.path).vector, originals[e.name])
