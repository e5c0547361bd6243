import numpy as np

from utils import derive_rng, derive_seed, ensure_dir, write_file


def test_derive_rng_is_path_addressed():
    first = derive_rng(7, "sample", 3).uniform(size=4)
    assert np.array_equal(first, derive_rng(7, "sample", 3).uniform(size=4))
    derive_rng(7, "other").uniform(size=100)
    assert np.array_equal(first, derive_rng(7, "sample", 3).uniform(size=4))
    assert not np.array_equal(first, derive_rng(7, "sample", 4).uniform(size=4))
    assert not np.array_equal(first, derive_rng(8, "sample", 3).uniform(size=4))


def test_string_parts_are_hashed_stably():
    assert derive_seed(0, "init", "head").spawn_key == derive_seed(0, "init", "head").spawn_key
    assert derive_seed(0, "init").spawn_key != derive_seed(0, "eval").spawn_key


def test_file_helpers(tmp_path):
    out = ensure_dir(tmp_path / "a" / "b")
    assert out.is_dir()
    write_file(str(tmp_path / "c" / "d.txt"), "contenu")
    assert (tmp_path / "c" / "d.txt").read_text(encoding="utf-8") == "contenu"
