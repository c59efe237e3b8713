import numpy as np
import pytest

from tvbilevel.datasets import (
    IMPULSE_MODES,
    PHANTOM_KINDS,
    NoiseModelSpec,
    TrainingPair,
    TrainingSet,
    add_gaussian_noise,
    add_impulse_noise,
    build_training_set,
    export_pgm,
    import_pgm,
    load_set,
    make_phantom,
    mix_seed,
    save_set,
)
from tvbilevel.errors import DimensionMismatchError, MalformedFileError
from tvbilevel.grids import ImageGrid


class TestPhantoms:
    @pytest.mark.parametrize("kind", PHANTOM_KINDS)
    def test_range_and_determinism(self, kind):
        a = make_phantom(kind, 24, 24, seed=42)
        b = make_phantom(kind, 24, 24, seed=42)
        assert np.array_equal(a.values, b.values)
        assert a.values.min() >= 0.0 and a.values.max() <= 1.0
        assert a.h == 1.0 / 24

    @pytest.mark.parametrize("kind", PHANTOM_KINDS)
    def test_has_contrast(self, kind):
        # at least 5% of pixels sit more than 0.1 away from the image mean
        for seed in range(12):
            u = make_phantom(kind, 32, 32, seed=seed)
            frac = np.mean(np.abs(u.values - u.values.mean()) > 0.1)
            assert frac >= 0.05, f"{kind} seed {seed}: contrast fraction {frac}"

    def test_different_seeds_differ(self):
        a = make_phantom("ellipses", 16, 16, seed=0)
        b = make_phantom("ellipses", 16, 16, seed=1)
        assert not np.array_equal(a.values, b.values)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            make_phantom("checkers", 8, 8, seed=0)


class TestNoise:
    def test_gaussian_zero_sigma_is_identity(self):
        u = make_phantom("ellipses", 8, 8, seed=3)
        v = add_gaussian_noise(u, 0.0, seed=9)
        assert np.array_equal(u.values, v.values)

    def test_gaussian_moments(self):
        u = ImageGrid(np.zeros((64, 64)))
        v = add_gaussian_noise(u, 0.05, seed=10)
        d = v.values - u.values
        assert abs(d.mean()) < 0.005
        assert abs(d.std() - 0.05) < 0.005

    def test_gaussian_not_clipped(self):
        u = ImageGrid(np.zeros((32, 32)))
        v = add_gaussian_noise(u, 0.5, seed=1)
        assert v.values.min() < 0.0

    def test_impulse_exact_count_and_values(self):
        u = ImageGrid(np.full((10, 10), 0.5))
        v = add_impulse_noise(u, 0.07, seed=4)
        changed = v.values != 0.5
        assert changed.sum() == 7
        assert set(np.unique(v.values[changed])) <= {0.0, 1.0}

    def test_impulse_missing_mode_sets_zero(self):
        u = ImageGrid(np.full((10, 10), 0.5))
        v = add_impulse_noise(u, 0.1, seed=4, mode="missing")
        changed = v.values != 0.5
        assert changed.sum() == 10
        assert np.all(v.values[changed] == 0.0)

    def test_impulse_full_fraction(self):
        u = ImageGrid(np.full((6, 6), 0.5))
        v = add_impulse_noise(u, 1.0, seed=0)
        assert set(np.unique(v.values)) <= {0.0, 1.0}

    def test_impulse_zero_fraction_is_identity(self):
        u = ImageGrid(np.full((6, 6), 0.5))
        v = add_impulse_noise(u, 0.0, seed=0)
        assert np.array_equal(u.values, v.values)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseModelSpec(gaussian_sigma=-0.1)
        with pytest.raises(ValueError):
            NoiseModelSpec(impulse_fraction=1.5)
        with pytest.raises(ValueError):
            NoiseModelSpec(impulse_mode="poisson")


class TestTrainingSet:
    def test_build_is_deterministic_and_nested(self):
        noise = NoiseModelSpec(gaussian_sigma=0.05, seed=7)
        a = build_training_set("ellipses", 12, 12, 5, noise)
        b = build_training_set("ellipses", 12, 12, 5, noise)
        c = build_training_set("ellipses", 12, 12, 3, noise)
        assert a.n == 5
        for pa, pb in zip(a.pairs, b.pairs):
            assert np.array_equal(pa.noisy.values, pb.noisy.values)
        # first pairs agree when only N changes
        for pa, pc in zip(a.pairs[:3], c.pairs):
            assert np.array_equal(pa.noisy.values, pc.noisy.values)

    def test_pairs_vary_with_k(self):
        ts = build_training_set("rectangles", 12, 12, 4, NoiseModelSpec(gaussian_sigma=0.05, seed=0))
        assert not np.array_equal(ts.pairs[0].clean.values, ts.pairs[1].clean.values)

    def test_pair_validation(self):
        good = ImageGrid(np.full((4, 4), 0.5))
        with pytest.raises(ValueError):
            TrainingPair(ImageGrid(np.full((4, 4), 1.5)), good, 0)
        with pytest.raises(DimensionMismatchError):
            TrainingPair(good, ImageGrid(np.zeros((4, 5))), 0)

    def test_set_requires_common_grid(self):
        p0 = TrainingPair(ImageGrid(np.zeros((4, 4))), ImageGrid(np.zeros((4, 4))), 0)
        p1 = TrainingPair(ImageGrid(np.zeros((5, 5))), ImageGrid(np.zeros((5, 5))), 1)
        with pytest.raises(DimensionMismatchError):
            TrainingSet((p0, p1))

    def test_mix_seed_spreads(self):
        seeds = {mix_seed(7, k) for k in range(100)}
        assert len(seeds) == 100


class TestContainer:
    def test_round_trip_bitwise(self, tmp_path):
        noise = NoiseModelSpec(gaussian_sigma=0.05, impulse_fraction=0.05, seed=3)
        ts = build_training_set("blobs", 9, 7, 4, noise)
        path = tmp_path / "set.tvbl"
        save_set(ts, path)
        back = load_set(path)
        assert back.n == ts.n
        for pa, pb in zip(ts.pairs, back.pairs):
            assert np.array_equal(pa.clean.values, pb.clean.values)
            assert np.array_equal(pa.noisy.values, pb.noisy.values)
            assert pb.clean.h == 1.0 / 7

    def test_header_layout(self, tmp_path):
        ts = build_training_set("ellipses", 3, 5, 2, NoiseModelSpec(seed=0))
        path = tmp_path / "set.tvbl"
        save_set(ts, path)
        blob = path.read_bytes()
        assert blob[:4] == b"TVBL"
        assert np.frombuffer(blob[4:20], dtype="<u4").tolist() == [1, 3, 5, 2]
        assert len(blob) == 20 + 2 * 2 * 3 * 5 * 8

    def test_truncated_rejected(self, tmp_path):
        ts = build_training_set("ellipses", 3, 5, 2, NoiseModelSpec(seed=0))
        path = tmp_path / "set.tvbl"
        save_set(ts, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(MalformedFileError):
            load_set(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.tvbl"
        path.write_bytes(b"JUNK" + b"\x00" * 32)
        with pytest.raises(MalformedFileError):
            load_set(path)


class TestPGM:
    def test_round_trip_within_quantization(self, tmp_path):
        u = make_phantom("ellipses", 10, 14, seed=5)
        path = tmp_path / "img.pgm"
        export_pgm(u, path)
        v = import_pgm(path)
        assert v.values.shape == (10, 14)
        assert np.max(np.abs(v.values - u.values)) <= 0.5 / 255 + 1e-12

    def test_export_clamps(self, tmp_path):
        u = ImageGrid(np.array([[-0.2, 0.5], [1.7, 1.0]]))
        path = tmp_path / "img.pgm"
        export_pgm(u, path)
        v = import_pgm(path)
        assert v.values[0, 0] == 0.0
        assert v.values[1, 0] == 1.0

    def test_import_rejects_bad_header(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_text("P5\n2 2\n255\n0 0 0 0\n")
        with pytest.raises(MalformedFileError):
            import_pgm(path)

    def test_import_rejects_wrong_count(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_text("P2\n2 2\n255\n0 0 0\n")
        with pytest.raises(MalformedFileError):
            import_pgm(path)
