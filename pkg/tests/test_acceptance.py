"""Acceptance suite: one group of tests per criterion, at the stated tolerances.

A summary line per criterion is printed at the end of the pytest run.
Full-scale profiles are marked ``slow`` and need ``--runslow``.
"""

import math

import numpy as np
import pytest
from scipy.optimize import isotonic_regression

from twostage.cli import main
from twostage.cox import SurvivalData, fit_cox
from twostage.experiments import (
    ExperimentConfig,
    estimate_fwer,
    independence_check,
    marginal_scan_study,
    power_curve,
)
from twostage.glm import fit_glm
from twostage.scan import GenotypeMatrix, ScanConfig, exhaustive_scan, run_two_stage
from twostage.simulate import (
    PhenotypeSpec,
    make_rng,
    simulate_genotypes_independent,
    simulate_phenotype,
)

import oracles

FAMILIES = ["linear", "logistic", "poisson", "cox"]
SEED = 2024


def report(line):
    print(line)


# ---------------------------------------------------------------- criterion 1

C1 = pytest.mark.criterion("1", "fitter oracle equivalence")


@C1
@pytest.mark.parametrize("seed", range(10))
def test_c1_gaussian_normal_equations(seed):
    rng = np.random.default_rng(1000 + seed)
    n, q = int(rng.integers(10, 51)), int(rng.integers(2, 6))
    x = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))])
    y = x @ rng.normal(size=q) + rng.normal(size=n)
    fit = fit_glm(x, y, "linear")
    beta, _, _ = oracles.normal_equations(x, y)
    rel = np.max(np.abs(fit.beta - beta) / np.maximum(np.abs(beta), 1e-300))
    report(f"C1 gaussian seed={seed} max rel err {rel:.2e}")
    assert rel < 1e-10


@C1
@pytest.mark.parametrize("family", ["logistic", "poisson"])
@pytest.mark.parametrize("seed", range(5))
def test_c1_newton_oracle(family, seed):
    rng = np.random.default_rng(2000 + seed)
    n = 300
    x = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
    eta = x @ np.array([0.2, -0.5, 0.3, 0.1])
    t = rng.uniform(1, 5, n) if family == "poisson" else None
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float) if t is None else rng.poisson(t * np.exp(eta)).astype(float)
    fit = fit_glm(x, y, family, offsets=t)
    beta, _ = oracles.newton_glm(x, y, family, t)
    err = np.max(np.abs(fit.beta - beta))
    report(f"C1 {family} seed={seed} max abs err {err:.2e}")
    assert fit.converged and err < 1e-8


@C1
@pytest.mark.parametrize("seed", range(5))
def test_c1_cox_golden_section(seed):
    rng = np.random.default_rng(3000 + seed)
    n = 40
    x = rng.standard_normal(n)
    t = np.sqrt(-np.log(rng.random(n)) * np.exp(-0.5 * x))
    c = rng.uniform(math.sqrt(-math.log(0.3)), math.sqrt(-math.log(0.01)), n)
    event = t <= c
    time = np.where(event, t, c)
    fit = fit_cox(SurvivalData(time, event, x))
    b = oracles.grid_golden_max(lambda v: oracles.cox_loglik_bruteforce(v, time, event, x), -5, 5)
    report(f"C1 cox seed={seed} |beta - golden| {abs(fit.beta[0] - b):.2e}")
    assert abs(fit.beta[0] - b) < 1e-6


# ---------------------------------------------------------------- criterion 2

C2 = pytest.mark.criterion("2", "FWER control at desk scale")
FWER_BOUND = 0.05 + 3 * math.sqrt(0.05 * 0.95 / 500)


def _desk_fwer(family, setting):
    return estimate_fwer(ExperimentConfig(family=family, setting=setting, n=500, p=200, replicates=500,
                                          seed=SEED, fst=(0.05, 0.01)))


@pytest.fixture(scope="module")
def desk_fwer():
    return {(f, s): _desk_fwer(f, s) for f in FAMILIES for s in ("independent", "correlated")}


@C2
@pytest.mark.parametrize("setting", ["independent", "correlated"])
@pytest.mark.parametrize("family", FAMILIES)
def test_c2_fwer_bound(desk_fwer, family, setting):
    rep = desk_fwer[(family, setting)]
    for row in rep.rows:
        report(f"C2 {family} {setting} FST={row[2]}: FWER {row[3]:.4f} (SE {row[4]:.4f}), bound {FWER_BOUND:.4f}")
        assert row[3] <= FWER_BOUND


@C2
@pytest.mark.parametrize("family", FAMILIES)
def test_c2_correlated_below_uncorrelated(desk_fwer, family):
    ind = desk_fwer[(family, "independent")]
    cor = desk_fwer[(family, "correlated")]
    for a, b in zip(ind.rows, cor.rows):
        report(f"C2 {family} FST={a[2]}: correlated {b[3]:.4f} vs uncorrelated {a[3]:.4f}")
    for a, b in zip(ind.rows, cor.rows):
        assert b[3] < a[3], f"FST={a[2]}: correlated {b[3]} not below uncorrelated {a[3]}"


# published FWER, independent markers: (family, FST) -> estimate at n=2000, p=3000, 5000 replicates
PUBLISHED_FWER = {
    ("linear", 0.05): 0.0448, ("linear", 0.01): 0.0462, ("linear", 0.005): 0.0452,
    ("poisson", 0.05): 0.0416, ("poisson", 0.01): 0.0492, ("poisson", 0.005): 0.0364,
    ("cox", 0.05): 0.0432, ("cox", 0.01): 0.0432, ("cox", 0.005): 0.0490,
}


@pytest.mark.slow
@pytest.mark.criterion("2", "FWER control at desk scale")
@pytest.mark.parametrize("family", ["linear", "poisson", "cox"])
def test_c2_full_scale(family):
    rep = estimate_fwer(ExperimentConfig(family=family, n=2000, p=3000, replicates=5000, seed=SEED,
                                         fst=(0.05, 0.01, 0.005), threads=8))
    for row in rep.rows:
        target = PUBLISHED_FWER[(family, row[2])]
        report(f"C2 full-scale {family} FST={row[2]}: {row[3]:.4f} vs {target}")
        assert abs(row[3] - target) <= 0.01


# ---------------------------------------------------------------- criterion 3

C3 = pytest.mark.criterion("3", "stage independence under the full null")
IND_BOUND = 0.067


@C3
@pytest.mark.parametrize("family", FAMILIES)
def test_c3_independence(family):
    rep = independence_check(ExperimentConfig(family=family, n=1000, replicates=2000, seed=SEED))
    rows = {r[1]: r for r in rep.rows}
    for kind in ("pairwise", "mixed"):
        r = rows[kind]
        report(f"C3 {family} {kind}: corr({r[2]}, {r[3]}) = {r[4]:+.4f} over {r[6]} replicates")
    assert rows["pairwise"][6] == 2000
    assert abs(rows["pairwise"][4]) < IND_BOUND
    assert abs(rows["mixed"][4]) < IND_BOUND


# ---------------------------------------------------------------- criterion 4

C4 = pytest.mark.criterion("4", "power-curve shapes")
POWER_REPS = 200


@pytest.fixture(scope="module")
def power_none():
    return power_curve(ExperimentConfig(family="linear", n=1000, p=200, replicates=POWER_REPS, seed=SEED,
                                        fst=(1.0, 0.01), main_effects="none"))


def _curve(rep, fst):
    rows = sorted(rep.where(fst=fst), key=lambda r: r[1])
    return np.array([r[1] for r in rows]), np.array([r[2] for r in rows]), np.array([r[3] for r in rows])


@C4
@pytest.mark.parametrize("fst", [1.0, 0.01])
def test_c4a_monotone_in_beta3(power_none, fst):
    beta, power, _ = _curve(power_none, fst)
    iso = isotonic_regression(power).x
    se = np.sqrt(np.maximum(iso * (1 - iso), 0.0) / POWER_REPS)
    se = np.maximum(se, 1.0 / POWER_REPS)
    dev = np.abs(power - iso) / se
    report(f"C4a FST={fst}: power {np.round(power, 3).tolist()}")
    report(f"C4a FST={fst}: max isotonic deviation {dev.max():.2f} SE")
    assert dev.max() < 3


@C4
def test_c4b_two_stage_more_powerful(power_none):
    beta, p1, se1 = _curve(power_none, 1.0)
    _, p2, se2 = _curve(power_none, 0.01)
    mid = np.flatnonzero((p1 > 0.1) & (p1 < 0.9))
    assert mid.size, "no grid point with FST=1 power in (0.1, 0.9)"
    i = mid[np.argmin(np.abs(p1[mid] - 0.5))]
    pooled = math.sqrt(se1[i] ** 2 + se2[i] ** 2)
    report(f"C4b beta3={beta[i]}: FST=0.01 power {p2[i]:.3f}, FST=1 power {p1[i]:.3f}, pooled SE {pooled:.3f}")
    assert p2[i] - p1[i] >= 2 * pooled


@C4
def test_c4c_opposite_effects_drop():
    grid_max = max(ExperimentConfig().beta3)
    rep = power_curve(ExperimentConfig(family="linear", n=1000, p=200, replicates=POWER_REPS, seed=SEED,
                                       fst=(1.0, 0.005), main_effects="opposite", beta3=(grid_max,)))
    p_all = rep.where(fst=1.0)[0][2]
    p_two = rep.where(fst=0.005)[0][2]
    report(f"C4c opposite effects, beta3={grid_max}: FST=0.005 power {p_two:.3f}, FST=1 power {p_all:.3f}")
    assert p_two < p_all


# ---------------------------------------------------------------- criterion 5

C5 = pytest.mark.criterion("5", "marginal screening tracks the interaction effect")


@C5
@pytest.mark.parametrize("family", FAMILIES)
def test_c5_marginal_spearman(family):
    rep = marginal_scan_study(ExperimentConfig(family=family, n=2000, seed=SEED))
    rho = rep.config["spearman_positive"]
    assert len(rep.rows) == 1001
    report(f"C5 {family}: Spearman(beta3, |z|) on beta3 > 0 = {rho:.4f}")
    assert rho > 0.9


# ---------------------------------------------------------------- criterion 6

C6 = pytest.mark.criterion("6", "threshold one reduces to the exhaustive scan")


@C6
@pytest.mark.parametrize("instance", range(20))
def test_c6_reduction_identity(instance):
    family = FAMILIES[instance % 4]
    rng = make_rng(SEED, instance, 1)
    geno = simulate_genotypes_independent(150, 15, rng=rng)
    y = simulate_phenotype(geno, PhenotypeSpec(family=family), make_rng(SEED, instance, 2))
    fixed = rng.normal(size=(150, 1)) if instance % 3 == 0 else None
    a = run_two_stage(geno, y, ScanConfig(family=family, stage1_threshold=1.0, fixed_covariates=fixed))
    b = exhaustive_scan(geno, y, ScanConfig(family=family, fixed_covariates=fixed))
    same = (a.k.tobytes() == b.k.tobytes() and a.l.tobytes() == b.l.tobytes()
            and a.raw_p.tobytes() == b.raw_p.tobytes() and a.estimate.tobytes() == b.estimate.tobytes()
            and list(a.flag) == list(b.flag) and a.k1 == b.k1)
    report(f"C6 instance {instance} ({family}): {a.n_pairs} pairs, bit-identical={same}")
    assert same


# ---------------------------------------------------------------- criterion 7

C7 = pytest.mark.criterion("7", "thread count does not change experiment output")
_DET_ARGS = {
    "fwer": ["--n", "300", "--p", "60", "--replicates", "20", "--fst", "0.05,0.01"],
    "power": ["--n", "300", "--p", "40", "--replicates", "10", "--beta3", "0:1:0.25", "--fst", "1,0.05"],
    "independence": ["--n", "300", "--replicates", "100"],
    "marginal": ["--n", "500", "--grid=-1:1:0.1"],
}


@C7
@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("command", list(_DET_ARGS))
def test_c7_threads_byte_identical(tmp_path, command, seed):
    family = FAMILIES[seed % 4]
    outs = []
    for threads in (1, 8):
        out = tmp_path / f"{command}-{threads}.csv"
        code = main([command, "--seed", str(seed), "--family", family, "--threads", str(threads),
                     "--out", str(out)] + _DET_ARGS[command])
        assert code == 0
        outs.append(out.read_bytes())
    report(f"C7 {command} seed={seed} {family}: identical={outs[0] == outs[1]} ({len(outs[0])} bytes)")
    assert outs[0] == outs[1]


# ---------------------------------------------------------------- criterion 8

C8 = pytest.mark.criterion("8", "simulation calibration")
_ZERO = GenotypeMatrix(np.zeros((100_000, 2), dtype=np.uint8))


@C8
def test_c8_cox_censoring():
    out = simulate_phenotype(_ZERO, PhenotypeSpec(family="cox"), make_rng(SEED, 0, 8))
    frac = 1 - out.event.mean()
    report(f"C8 Cox null censoring fraction {frac:.4f} (quadrature {oracles.weibull_censoring_fraction():.4f})")
    assert abs(frac - 0.10) <= 0.01


@C8
def test_c8_weibull_baseline():
    out = simulate_phenotype(_ZERO, PhenotypeSpec(family="cox", censor_window=(0.99, 0.99)), make_rng(SEED, 1, 8))
    order = np.argsort(out.time)
    t, d = out.time[order], out.event[order]
    cumhaz = np.cumsum(d / np.arange(t.size, 0, -1))
    worst = 0.0
    for s in np.linspace(0.3, 1.2, 19):
        h = cumhaz[np.searchsorted(t, s, side="right") - 1]
        worst = max(worst, abs(h - s * s) / (s * s))
    report(f"C8 Nelson-Aalen vs t^2: max relative error {worst:.4f}")
    assert worst < 0.05


@C8
def test_c8_moments():
    n = _ZERO.n
    g = simulate_phenotype(_ZERO, PhenotypeSpec(), make_rng(SEED, 2, 8))
    mean_z = abs(g.y.mean()) / (1 / math.sqrt(n))
    var_z = abs(g.y.var(ddof=1) - 1) / math.sqrt(2 / n)
    spec = PhenotypeSpec(family="poisson", offset_range=(3.0, 3.0))
    pois = simulate_phenotype(_ZERO, spec, make_rng(SEED, 3, 8), eta=np.full(n, math.log(2)))
    pois_z = abs(pois.y.mean() - 6) / math.sqrt(6 / n)
    report(f"C8 Gaussian mean {mean_z:.2f} SE, variance {var_z:.2f} SE; Poisson mean {pois_z:.2f} SE")
    assert mean_z < 4 and var_z < 4 and pois_z < 4
