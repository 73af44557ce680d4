import numpy as np
import pytest

from iforge.conic import SolverSettings
from iforge.polyalg import Polynomial
from iforge.sosprog import (LinPoly, SosCertificate, SosInfeasibleError,
                            SosModel, extract, solve_model, verify_certificate)


def xvar():
    return Polynomial.variable("x", ("x",))


class TestBuildModel:
    def test_containment_pattern(self):
        # -h - (y^2 - ym^2) s - eps in Sigma: one Gram block per constraint
        m = SosModel()
        y = Polynomial.variable("y", ("y",))
        s = m.sos_poly("s", ("y",), 2)
        h = 0.25 - y * y
        m.add_sos("contain", LinPoly.from_poly(-1.0 * h)
                  - s.poly() * (y * y - 1.0) - 1e-4)
        prob, index = m.compile()
        assert "contain" in index.gram_slices
        psd_blocks = [c for c in prob.cones if c.kind == "s"]
        assert len(psd_blocks) == 2  # declared multiplier + constraint Gram

    def test_empty_model_trivially_feasible(self):
        m = SosModel()
        prob, _ = m.compile()
        from iforge import conic
        sol = conic.solve(prob)
        assert sol.status == "optimal"

    def test_objective_carried(self):
        m = SosModel()
        kappa = m.scalar("kappa")
        m.maximize({kappa.handle: 1.0})
        m.add_ineq_ge({kappa.handle: -1.0}, -2.0)  # kappa <= 2
        prob, index = m.compile()
        from iforge import conic
        sol = conic.solve(prob)
        ext = extract(index, sol)
        assert ext.scalars["kappa"] == pytest.approx(2.0, abs=1e-6)

    def test_odd_degree_fixed_leading_term_rejected(self):
        m = SosModel()
        x = xvar()
        with pytest.raises(ValueError, match="odd degree"):
            m.add_sos("bad", LinPoly.from_poly(x ** 3 + 1.0))


class TestCompileSolveExtract:
    def test_complete_the_square(self):
        # x^2 + 2x + lam in Sigma, maximize -lam  ->  lam* = 1
        m = SosModel()
        lam = m.scalar("lam")
        x = xvar()
        m.add_sos("main", LinPoly.from_poly(x * x + 2.0 * x) + lam.lin(("x",)))
        m.maximize({lam.handle: -1.0})
        _, ext = solve_model(m)
        assert ext.scalars["lam"] == pytest.approx(1.0, abs=1e-5)

    def test_quartic_min(self):
        # x^4 - 3x^2 + lam in Sigma, minimize lam -> 9/4 = (x^2 - 3/2)^2 shift
        m = SosModel()
        lam = m.scalar("lam")
        x = xvar()
        m.add_sos("main", LinPoly.from_poly(x ** 4 - 3.0 * x * x) + lam.lin(("x",)))
        m.maximize({lam.handle: -1.0})
        sol, ext = solve_model(m)
        assert ext.scalars["lam"] == pytest.approx(2.25, abs=1e-5)
        cert = ext.certificates["main"]
        rep = verify_certificate(cert.expression, cert)
        assert rep.passed

    def test_negative_at_zero_infeasible(self):
        m = SosModel()
        x = xvar()
        m.add_sos("main", LinPoly.from_poly(x * x - 1.0))
        with pytest.raises(SosInfeasibleError) as err:
            solve_model(m)
        assert err.value.ray is not None  # improving-ray certificate attached

    def test_feasibility_multipliers_realized(self):
        m = SosModel()
        y = Polynomial.variable("y", ("y",))
        s = m.sos_poly("s", ("y",), 2)
        h = 0.5 - y * y
        m.add_sos("c1", LinPoly.from_poly(-1.0 * h)
                  - s.poly() * (y * y - 1.0) - 1e-4)
        _, ext = solve_model(m)
        s_poly = ext.polys["s"]
        # multiplier must be nonnegative on samples (it is SOS by construction)
        for val in np.linspace(-3, 3, 31):
            assert s_poly.evaluate({"y": val}) >= -1e-9


class TestVerifyCertificate:
    def test_valid_square(self):
        x = xvar()
        cert = SosCertificate("c", ("x",), [(0,), (1,)],
                              np.array([[1.0, 1.0], [1.0, 1.0]]),
                              (x + 1.0) * (x + 1.0))
        rep = verify_certificate((x + 1.0) * (x + 1.0), cert)
        assert rep.passed and rep.max_coeff_residual == 0.0

    def test_wrong_expression_fails(self):
        x = xvar()
        cert = SosCertificate("c", ("x",), [(0,), (1,)],
                              np.array([[1.0, 1.0], [1.0, 1.0]]),
                              x * x + 2.0 * x + 2.0)
        rep = verify_certificate(x * x + 2.0 * x + 2.0, cert)
        assert not rep.passed
        assert rep.max_coeff_residual == pytest.approx(1.0)

    def test_indefinite_gram_fails(self):
        x = xvar()
        cert = SosCertificate("c", ("x",), [(0,), (1,)],
                              np.array([[1.0, 2.0], [2.0, 1.0]]),
                              x * x + 4.0 * x + 1.0)
        rep = verify_certificate(x * x + 4.0 * x + 1.0, cert)
        assert rep.psd_floor < -1e-8 and not rep.passed


class TestRoundTripAndSoundness:
    def _solve_corpus(self):
        corpus = []
        x = xvar()
        m1 = SosModel()
        lam = m1.scalar("lam")
        m1.add_sos("main", LinPoly.from_poly(x ** 4 - 3.0 * x * x) + lam.lin(("x",)))
        m1.maximize({lam.handle: -1.0})
        corpus.append(m1)
        m2 = SosModel()
        y = Polynomial.variable("y", ("y",))
        s = m2.sos_poly("s", ("y",), 2)
        m2.add_sos("c1", LinPoly.from_poly(y * y - 0.5)
                   - s.poly() * (y * y - 1.0) + 1.0)
        corpus.append(m2)
        return corpus

    def test_round_trip_all_feasible_models(self):
        for model in self._solve_corpus():
            _, ext = solve_model(model)
            for cert in ext.certificates.values():
                assert verify_certificate(cert.expression, cert).passed

    def test_soundness_spot_check(self):
        rng = np.random.default_rng(0)
        for model in self._solve_corpus():
            _, ext = solve_model(model)
            for cert in ext.certificates.values():
                n = len(cert.variables)
                pts = rng.uniform(-2.0, 2.0, (1000, n))
                arrs = {v: pts[:, i] for i, v in enumerate(cert.variables)}
                vals = cert.expression.evaluate_array(arrs)
                deg = cert.expression.degree
                norms = np.linalg.norm(pts, axis=1) ** max(deg, 1)
                assert (vals >= -1e-5 * (1.0 + norms)).all()

    def test_adding_constraint_never_raises_optimum(self):
        x = xvar()

        def base():
            m = SosModel()
            kappa = m.scalar("kappa")
            # kappa - x^2 + 1 in Sigma  =>  kappa >= sup... gives kappa bound
            m.add_sos("a", LinPoly.from_poly(x * x + 1.0) - kappa.lin(("x",)))
            m.maximize({kappa.handle: 1.0})
            return m, kappa

        m1, _ = base()
        _, ext1 = solve_model(m1)
        m2, kappa2 = base()
        m2.add_sos("b", LinPoly.from_poly(0.25 * x * x + 0.5) - kappa2.lin(("x",)))
        _, ext2 = solve_model(m2)
        assert ext2.scalars["kappa"] <= ext1.scalars["kappa"] + 1e-6
