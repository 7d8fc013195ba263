import numpy as np
import pytest

from scoredecomp import InputError, ScoringSpec, identification, score, score_d1, score_d2
from scoredecomp.scoring import bregman_score, gpl_score

from oracles import central_diff

SE = ScoringSpec.squared_error()
QL = ScoringSpec.qlike()


class TestSpecValidation:
    def test_families(self):
        assert SE.functional == "mean"
        assert ScoringSpec.check_loss(0.05).functional == "quantile"

    def test_check_needs_level(self):
        with pytest.raises(InputError):
            ScoringSpec(family="check")
        with pytest.raises(InputError):
            ScoringSpec(family="check", level=1.5)

    def test_mean_families_reject_quantile(self):
        with pytest.raises(InputError):
            ScoringSpec(family="se", functional="quantile")
        with pytest.raises(InputError):
            ScoringSpec(family="se", level=0.5)

    def test_unknown_family(self):
        with pytest.raises(InputError):
            ScoringSpec(family="crps")


class TestScoreValues:
    def test_se(self):
        assert score(SE, 2.0, 1.0) == 1.0

    def test_qlike_minimum(self):
        assert score(QL, 1.0, 1.0) == 0.0

    def test_qlike_value(self):
        assert score(QL, 2.0, 1.0) == pytest.approx(0.5 - np.log(0.5) - 1.0, abs=1e-12)

    def test_check_loss(self):
        spec = ScoringSpec.check_loss(0.05)
        assert score(spec, -1.0, 0.0) == pytest.approx((0.0 - 0.05) * (-1.0 - 0.0), abs=1e-15)

    def test_qlike_domain_rejected(self):
        with pytest.raises(InputError):
            score(QL, -1.0, 1.0)
        with pytest.raises(InputError):
            score(QL, 1.0, 0.0)

    def test_nonnegative_everywhere(self, rng):
        x = rng.normal(size=10_000)
        y = rng.normal(size=10_000)
        assert np.all(score(SE, x, y) >= 0.0)
        assert np.all(score(ScoringSpec.check_loss(0.3), x, y) >= 0.0)
        xp = np.exp(x)
        yp = np.exp(y)
        assert np.all(score(QL, xp, yp) >= 0.0)


class TestDerivatives:
    def test_se_d1(self):
        assert score_d1(SE, 3.0, 1.0) == 4.0

    def test_qlike_d1(self):
        assert score_d1(QL, 1.0, 1.0) == 0.0
        assert score_d1(QL, 2.0, 1.0) == pytest.approx(0.25, abs=1e-15)

    def test_se_d2_constant(self, rng):
        x, y = rng.normal(size=5), rng.normal(size=5)
        assert np.all(score_d2(SE, x, y) == 2.0)

    def test_qlike_d2(self):
        assert score_d2(QL, 1.0, 1.0) == pytest.approx(1.0, abs=1e-15)
        assert score_d2(QL, 2.0, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_check_derivatives_unsupported(self):
        spec = ScoringSpec.check_loss(0.5)
        with pytest.raises(NotImplementedError):
            score_d1(spec, 0.0, 1.0)
        with pytest.raises(NotImplementedError):
            score_d2(spec, 0.0, 1.0)

    def test_matches_finite_differences(self, rng):
        # 1000 random points per smooth family, relative error below 1e-6
        for spec, draw in ((SE, rng.normal), (QL, lambda size: np.exp(rng.normal(size=size) * 0.4) + 0.3)):
            x = draw(size=1000)
            y = draw(size=1000)
            for xi, yi in zip(x, y):
                d1 = score_d1(spec, xi, yi)
                num = central_diff(lambda t: score(spec, t, yi), xi)
                assert d1 == pytest.approx(num, rel=1e-6, abs=1e-8)
                d2 = score_d2(spec, xi, yi)
                num2 = central_diff(lambda t: score_d1(spec, t, yi), xi)
                assert d2 == pytest.approx(num2, rel=1e-6, abs=1e-8)


class TestIdentification:
    def test_mean(self):
        assert identification(SE, 1.0, 1.0) == 0.0
        assert identification(SE, 2.0, 1.0) == 2.0

    def test_quantile_hit(self):
        assert identification(ScoringSpec.check_loss(0.01), -2.0, -3.0) == pytest.approx(0.99)
        assert identification(ScoringSpec.check_loss(0.05), -2.0, 0.0) == pytest.approx(-0.05)


class TestStrictConsistency:
    """The sample functional beats any perturbed constant on average score."""

    @pytest.mark.parametrize("family", ["se", "qlike", "check"])
    def test_spot_check(self, family, rng):
        if family == "qlike":
            spec = QL
            y = np.exp(rng.normal(size=400) * 0.4)
            opt = float(np.mean(y))
        elif family == "se":
            spec = SE
            y = rng.normal(size=400)
            opt = float(np.mean(y))
        else:
            spec = ScoringSpec.check_loss(0.25)
            y = rng.normal(size=400)
            opt = float(np.quantile(y, 0.25, method="inverted_cdf"))
        base = float(np.mean(score(spec, np.full_like(y, opt), y)))
        for eps in np.linspace(-0.5, 0.5, 100):
            if abs(eps) <= 1e-8:
                continue
            cand = opt + eps
            if family == "qlike" and cand <= 0:
                continue
            perturbed = float(np.mean(score(spec, np.full_like(y, cand), y)))
            assert perturbed > base - 1e-8
            if abs(eps) > 1e-3:
                assert perturbed > base


class TestGenericConstructors:
    def test_bregman_reproduces_se(self, rng):
        x, y = rng.normal(size=20), rng.normal(size=20)
        via_phi = bregman_score(lambda z: z**2, lambda z: 2.0 * z, x, y)
        assert np.allclose(via_phi, score(SE, x, y), atol=1e-12)

    def test_bregman_reproduces_qlike(self, rng):
        x = np.exp(rng.normal(size=20))
        y = np.exp(rng.normal(size=20))
        via_phi = bregman_score(lambda z: -np.log(z), lambda z: -1.0 / z, x, y)
        assert np.allclose(via_phi, score(QL, x, y), atol=1e-12)

    def test_gpl_reproduces_check(self, rng):
        x, y = rng.normal(size=20), rng.normal(size=20)
        spec = ScoringSpec.check_loss(0.4)
        assert np.allclose(gpl_score(lambda z: z, 0.4, x, y), score(spec, x, y), atol=1e-15)
