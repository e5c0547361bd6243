import json

import numpy as np
import pytest

from benchmark import (GeneratorSpec, SyntheticSample, build_dataset, load_dataset, make_generators, make_source,
                       save_dataset, synthesize)
from config import default_config, merge
from errors import ConfigError, DataError
from utils import derive_rng


@pytest.fixture(scope="module")
def default_dataset():
    return build_dataset(default_config())


def test_same_inputs_give_identical_images():
    source = make_source(0, 3)
    gen = make_generators(0, 2, 0.06, 0.12)[1]
    first = synthesize(source, gen, derive_rng(0, "sample", 5)).data
    second = synthesize(source, gen, derive_rng(0, "sample", 5)).data
    assert first.tobytes() == second.tobytes()
    assert first.shape == (3, 32, 32)
    assert first.min() >= 0.0 and first.max() <= 1.0


def test_vanishing_artifact_leaves_only_noise():
    source = make_source(0, 1)
    weak = [GeneratorSpec(gen_id=g, fx=1 + 2 * g, fy=3, amplitude=1e-6, mask="full", phase_seed=g) for g in (0, 1)]
    images = [synthesize(source, gen, derive_rng(0, "sample")).data for gen in weak]
    assert np.abs(images[0] - images[1]).max() < 0.05


def test_artifact_mean_magnitude_matches_sinusoid_integral():
    source = make_source(0, 2)
    gen = GeneratorSpec(gen_id=1, fx=3, fy=5, amplitude=0.1, mask="full", phase_seed=11)
    image = synthesize(source, gen, derive_rng(0, "sample"), sensor_noise=0.0).data
    residual = np.abs(image - source.content(32, 32))
    assert residual.mean() == pytest.approx(0.1 * 2 / np.pi, rel=0.1)


def test_masks_localize_the_artifact():
    height = width = 32
    border = GeneratorSpec(gen_id=2, fx=1, fy=1, amplitude=0.1, mask="border", phase_seed=0)
    mask = border.mask_array(height, width)
    assert mask[0].all() and mask[:, -1].all() and not mask[16, 16]
    quadrant = GeneratorSpec(gen_id=3, fx=1, fy=1, amplitude=0.1, mask="quadrant", phase_seed=0)
    q = quadrant.mask_array(height, width)
    assert q.sum() == height * width // 4 and q[-1, -1]
    assert np.all(quadrant.pattern(height, width)[~q] == 0.0)


def test_generator_invariants():
    with pytest.raises(ConfigError):
        GeneratorSpec(gen_id=0, fx=1, fy=1, amplitude=0.5, mask="full", phase_seed=0)
    with pytest.raises(ConfigError):
        GeneratorSpec(gen_id=0, fx=1, fy=1, amplitude=0.0, mask="full", phase_seed=0)
    with pytest.raises(ConfigError):
        GeneratorSpec(gen_id=0, fx=1, fy=1, amplitude=0.1, mask="ring", phase_seed=0)
    with pytest.raises(ConfigError):
        make_generators(0, 17, 0.06, 0.12)
    gens = make_generators(0, 8, 0.06, 0.12)
    assert len({(g.fx, g.fy) for g in gens}) == 8
    assert all(g.fx % 2 == 1 and g.fy % 2 == 1 for g in gens)


def test_content_is_shared_and_in_range():
    content = make_source(4, 7).content(32, 32)
    assert content.shape == (3, 32, 32)
    np.testing.assert_allclose(content.min(axis=(1, 2)), 0.2, atol=1e-12)
    np.testing.assert_allclose(content.max(axis=(1, 2)), 0.8, atol=1e-12)
    assert np.array_equal(make_source(4, 7).content(32, 32), content)


def test_default_counts(default_dataset):
    m = default_dataset.manifest
    assert m["n_labeled"] == 800 and m["n_unlabeled"] == 1600
    assert len(default_dataset) == 2400
    assert len(default_dataset.labeled_indices()) == 800
    assert set(m["known_generators"]).isdisjoint(m["novel_generators"])
    assert set(default_dataset.gen_ids[default_dataset.labeled]) == set(m["known_generators"])


def test_every_identity_spans_several_generators(default_dataset):
    for identity in range(32):
        gens = set(default_dataset.gen_ids[default_dataset.identity_ids == identity])
        assert len(gens) >= 2


def test_raw_pixels_cluster_by_identity_not_generator(default_dataset):
    pick_rng = np.random.default_rng(0)
    query = pick_rng.choice(default_dataset.unlabeled_indices(), size=100, replace=False)
    pixels = default_dataset.images[query].reshape(100, -1)
    distances = ((pixels[:, None, :] - pixels[None, :, :]) ** 2).sum(axis=-1)
    np.fill_diagonal(distances, np.inf)
    nearest = distances.argmin(axis=1)
    identity_acc = np.mean(default_dataset.identity_ids[query][nearest] == default_dataset.identity_ids[query])
    generator_acc = np.mean(default_dataset.gen_ids[query][nearest] == default_dataset.gen_ids[query])
    assert identity_acc - generator_acc > 0.20


def test_same_identity_pairs_are_closer_than_same_generator_pairs(default_dataset):
    rng = np.random.default_rng(1)
    unlabeled = default_dataset.unlabeled_indices()
    gens, ids, images = default_dataset.gen_ids, default_dataset.identity_ids, default_dataset.images
    wins, trials = 0, 0
    while trials < 200:
        a = rng.choice(unlabeled)
        same_id = unlabeled[(ids[unlabeled] == ids[a]) & (gens[unlabeled] != gens[a])]
        same_gen = unlabeled[(gens[unlabeled] == gens[a]) & (ids[unlabeled] != ids[a])]
        if not len(same_id) or not len(same_gen):
            continue
        b, c = rng.choice(same_id), rng.choice(same_gen)
        wins += np.sum((images[a] - images[b]) ** 2) < np.sum((images[a] - images[c]) ** 2)
        trials += 1
    assert wins / trials >= 0.9


def test_build_is_deterministic(tiny_cfg):
    first, second = build_dataset(tiny_cfg), build_dataset(tiny_cfg)
    assert first.images.tobytes() == second.images.tobytes()
    assert first.manifest == second.manifest
    other = build_dataset(merge(tiny_cfg, {"seed": 1}))
    assert other.images.tobytes() != first.images.tobytes()


def test_zero_counts_rejected(tiny_cfg):
    with pytest.raises(ConfigError):
        build_dataset(merge(tiny_cfg, {"data.novel_generators": 0}))


def test_save_and_load(tiny_dataset, tmp_path):
    save_dataset(tiny_dataset, tmp_path / "data")
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text(encoding="utf-8"))
    assert len(manifest["offsets"]) == len(tiny_dataset)
    header = (tmp_path / "data" / "labels.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "sample_index,gen_id,identity_id,labeled"

    loaded = load_dataset(tmp_path / "data")
    assert np.array_equal(loaded.images, tiny_dataset.images)
    assert np.array_equal(loaded.gen_ids, tiny_dataset.gen_ids)
    assert np.array_equal(loaded.labeled, tiny_dataset.labeled)
    assert loaded.manifest == tiny_dataset.manifest


def test_load_reports_missing_or_inconsistent_files(tiny_dataset, tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "absent")
    out = save_dataset(tiny_dataset, tmp_path / "data")
    lines = (out / "labels.csv").read_text(encoding="utf-8").splitlines()
    (out / "labels.csv").write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(DataError):
        load_dataset(out)


def test_sample_view_matches_arrays(tiny_dataset):
    labeled, unlabeled = tiny_dataset.labeled_indices()[0], tiny_dataset.unlabeled_indices()[-1]
    for i in (labeled, unlabeled):
        sample = tiny_dataset.sample(int(i))
        assert isinstance(sample, SyntheticSample)
        np.testing.assert_array_equal(sample.image.data, tiny_dataset.images[i])
        assert sample.gen_id == tiny_dataset.gen_ids[i] and sample.identity_id == tiny_dataset.identity_ids[i]
        assert sample.labeled == (i == labeled)
