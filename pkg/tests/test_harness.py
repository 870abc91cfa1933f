"""Evaluation harness tests at small scale: 3-channel grid, short frames,
1-3 spans of standard fiber."""

import json
import math

import numpy as np
import pytest

from fiberwave.core import (
    ConfigError,
    EdfaParams,
    FiberSpanParams,
    LinkConfig,
    PrngSpec,
    WdmConfig,
    read_field,
    write_field,
)
from fiberwave.harness import (
    CandidateKind,
    CandidateModel,
    EvalReport,
    benchmark_inference,
    candidate_fields,
    default_prbs_specs,
    evaluate,
    export_candidate_job,
    prbs_robustness,
    reference_run,
    sweep_launch_power,
)
from fiberwave.metrics import MetricsReport

SEED = PrngSpec(seed=7)
NUM_SYMBOLS = 512
DISTANCES = (1, 2, 3)


def small_cfg(power_dbm=4.0):
    return WdmConfig(num_channels=3, launch_power_dbm_per_channel=power_dbm)


def small_link(num_spans=3, ase=False):
    return LinkConfig.uniform(
        num_spans, FiberSpanParams(), EdfaParams(ase_enabled=ase)
    )


@pytest.fixture(scope="module")
def ref_setup():
    """One shared reference run (fields, plans, loading calibration)."""
    cfg = small_cfg()
    link = small_link()
    ref = reference_run(link, cfg, DISTANCES, SEED, num_symbols=NUM_SYMBOLS)
    return cfg, link, ref


class TestCandidateModel:
    def test_external_requires_pattern(self):
        with pytest.raises(ConfigError):
            CandidateModel(kind=CandidateKind.EXTERNAL_WAVEFORM)

    def test_factories(self):
        assert CandidateModel.reference().kind is CandidateKind.PERTURBED_SSFM
        c = CandidateModel.perturbed_ssfm(gamma_scale=1.2)
        assert c.gamma_scale == 1.2 and c.beta2_scale == 1.0
        assert CandidateModel.identity_plus_cdc().kind is CandidateKind.IDENTITY_PLUS_CDC
        e = CandidateModel.external("out/span{span}_seed{seed}.wfld")
        assert e.path_pattern.startswith("out/")


class TestReferenceRun:
    def test_distances_validated(self):
        cfg, link = small_cfg(), small_link()
        for bad in ((), (2, 1), (1, 1, 2), (0, 1), (1, 4)):
            with pytest.raises(ConfigError):
                reference_run(link, cfg, bad, SEED, num_symbols=64)

    def test_loading_calibrated_per_distance_and_variant(self, ref_setup):
        cfg, link, ref = ref_setup
        assert set(ref.outcomes) == {(n, v) for n in DISTANCES for v in ("linear", "nonlinear")}
        for (n, variant), outcome in ref.outcomes.items():
            assert outcome.sigma > 0.0
            assert abs(outcome.report.ber - 0.04) <= 2e-3
            assert outcome.report.n_bits == 8 * NUM_SYMBOLS
        assert len(ref.span_plans) == max(DISTANCES)
        assert ref.elapsed_s > 0.0


class TestSelfCandidate:
    def test_exact_zeros(self, ref_setup):
        cfg, link, ref = ref_setup
        report = evaluate(
            link, CandidateModel.reference(), cfg, DISTANCES, SEED,
            num_symbols=NUM_SYMBOLS, reference=ref, include_constellations=True,
        )
        # bit-identical physics: every comparison collapses exactly
        assert report.nmse_cut == (0.0, 0.0, 0.0)
        assert report.q_error_db("linear") == (0.0, 0.0, 0.0)
        assert report.q_error_db("nonlinear") == (0.0, 0.0, 0.0)
        for i in range(len(DISTANCES)):
            assert report.candidate_linear[i].ber == report.reference_linear[i].ber
            assert report.candidate_nonlinear[i].ber == report.reference_nonlinear[i].ber
        assert report.distances_km == (80.0, 160.0, 240.0)
        assert "span1_linear" in report.constellations
        assert len(report.constellations["span1_linear"]["x_re"]) == 512
        assert report.timings_s["reference_run_s"] > 0.0

    def test_reference_reuse_validated(self, ref_setup):
        cfg, link, ref = ref_setup
        with pytest.raises(ConfigError):
            evaluate(link, CandidateModel.reference(), cfg, (1, 2), SEED,
                     num_symbols=NUM_SYMBOLS, reference=ref)
        with pytest.raises(ConfigError):
            evaluate(link, CandidateModel.reference(), cfg, DISTANCES, SEED,
                     num_symbols=NUM_SYMBOLS // 2, reference=ref)


class TestIdentityPlusCdc:
    def test_linear_channel_candidate(self, ref_setup):
        cfg, link, ref = ref_setup
        report = evaluate(
            link, CandidateModel.identity_plus_cdc(), cfg, DISTANCES, SEED,
            num_symbols=NUM_SYMBOLS, reference=ref,
        )
        # missing Kerr shows up in the waveforms, growing with distance
        assert all(v > 1e-4 for v in report.nmse_cut)
        assert report.nmse_cut[0] < report.nmse_cut[1] < report.nmse_cut[2]
        # under the backpropagation chain the candidate is over-rotated by the
        # inverse Kerr it never accumulated, so it scores worse than the
        # reference. At 4096 bits the counted-Q resolution is ~0.2 dB, so only
        # the accumulated trend and the final value are asserted here; the
        # full-scale run resolves each distance individually.
        q_nl = report.q_error_db("nonlinear")
        assert all(q is not None for q in q_nl)
        assert q_nl[-1] > 0.15
        assert q_nl[-1] > q_nl[0]
        # under the linear chain the roles flip: the reference carries real
        # nonlinear distortion that CDC cannot remove, the candidate has none
        q_lin = report.q_error_db("linear")
        assert q_lin[-1] is not None and q_lin[-1] < 0.0


class TestPerturbedSsfm:
    def test_error_grows_with_perturbation(self, ref_setup):
        cfg, link, ref = ref_setup
        mild = evaluate(
            link, CandidateModel.perturbed_ssfm(gamma_scale=1.1), cfg, DISTANCES,
            SEED, num_symbols=NUM_SYMBOLS, reference=ref,
        )
        harsh = evaluate(
            link, CandidateModel.perturbed_ssfm(gamma_scale=1.5), cfg, DISTANCES,
            SEED, num_symbols=NUM_SYMBOLS, reference=ref,
        )
        for i in range(len(DISTANCES)):
            assert 0.0 < mild.nmse_cut[i] < harsh.nmse_cut[i]
        # the linear-DSP chain leaves the full gamma excess in the candidate,
        # so its Q penalty resolves clearly and orders with the perturbation;
        # the backpropagation chain cancels all but ~(scale-1) of it, which at
        # this frame length sits inside the bit-counting noise
        q_mild = mild.q_error_db("linear")[-1]
        q_harsh = harsh.q_error_db("linear")[-1]
        assert q_mild is not None and q_harsh is not None
        assert q_mild < q_harsh
        assert q_harsh > 0.15


class TestReportSerialization:
    def test_json_round_trip(self, tmp_path, ref_setup):
        cfg, link, ref = ref_setup
        report = evaluate(
            link, CandidateModel.identity_plus_cdc(), cfg, DISTANCES, SEED,
            num_symbols=NUM_SYMBOLS, reference=ref,
        )
        path = tmp_path / "report.json"
        report.write_json(path)
        loaded = json.loads(path.read_text())
        assert loaded["candidate"]["kind"] == "IDENTITY_PLUS_CDC"
        assert loaded["distances_spans"] == [1, 2, 3]
        assert loaded["distances_km"] == [80.0, 160.0, 240.0]
        assert loaded["nmse_cut"] == list(report.nmse_cut)
        assert len(loaded["candidate_nonlinear"]) == 3
        assert loaded["config_echo"]["wdm"]["num_channels"] == 3
        assert loaded["config_echo"]["target_loading_ber"] == 0.04

    def test_csv_columns(self, tmp_path, ref_setup):
        cfg, link, ref = ref_setup
        report = evaluate(
            link, CandidateModel.reference(), cfg, DISTANCES, SEED,
            num_symbols=NUM_SYMBOLS, reference=ref,
        )
        path = tmp_path / "curve.csv"
        report.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "distance_km,nmse,q_error_linear_db,q_error_nonlinear_db"
        assert len(lines) == 1 + len(DISTANCES)
        first = lines[1].split(",")
        assert float(first[0]) == 80.0
        assert float(first[1]) == 0.0

    def test_csv_empty_cells_for_undefined_q_error(self, tmp_path):
        rep = MetricsReport(nmse=0.5)
        report = EvalReport(
            candidate=CandidateModel.identity_plus_cdc(),
            distances=(1,),
            distances_km=(80.0,),
            nmse_cut=(0.5,),
            reference_linear=(rep,),
            reference_nonlinear=(rep,),
            candidate_linear=(rep,),
            candidate_nonlinear=(rep,),
        )
        path = tmp_path / "curve.csv"
        report.write_csv(path)
        assert path.read_text().strip().split("\n")[1] == "80,0.5,,"


class TestExternalCandidate:
    def test_job_export_and_round_trip(self, tmp_path, ref_setup):
        cfg, link, _ = ref_setup
        out = export_candidate_job(
            tmp_path, link, cfg, (1, 2), SEED, num_symbols=NUM_SYMBOLS, run_id="job1"
        )
        assert out == tmp_path / "job1"
        job = json.loads((out / "job.json").read_text())
        assert job["path_pattern"] == "span{span}_seed{seed}.wfld"
        assert job["expected_files"] == ["span1_seed7.wfld", "span2_seed7.wfld"]
        assert job["spans"][0]["edfa"]["ase_sigma2_w"] == 0.0  # ase disabled here
        assert "standard_normal((4, num_samples))" in job["ase_draw"]
        tx = read_field(out / "tx.wfld")
        assert tx.num_samples == NUM_SYMBOLS * cfg.sps

        # a perfect external model: answer with the reference's own fields
        ref = reference_run(link, cfg, (1, 2), SEED, num_symbols=NUM_SYMBOLS)
        for n in (1, 2):
            write_field(ref.fields[n], out / f"span{n}_seed{SEED.seed}.wfld")
        ext = CandidateModel.external(str(out / "span{span}_seed{seed}.wfld"))
        report = evaluate(
            link, ext, cfg, (1, 2), SEED, num_symbols=NUM_SYMBOLS, reference=ref
        )
        assert report.nmse_cut == (0.0, 0.0)
        assert report.q_error_db("nonlinear") == (0.0, 0.0)

    def test_metadata_mismatch_rejected(self, tmp_path, ref_setup):
        cfg, link, ref = ref_setup
        field = ref.fields[1]
        short = field.with_samples(field.x_samples[:256], field.y_samples[:256])
        write_field(short, tmp_path / "span1_seed7.wfld")
        ext = CandidateModel.external(str(tmp_path / "span{span}_seed{seed}.wfld"))
        with pytest.raises(ConfigError):
            candidate_fields(ext, ref.frame, link, (1,))


class TestPowerSweep:
    def test_sweep_mechanics(self, tmp_path):
        cfg = small_cfg()
        link = small_link(num_spans=2, ase=True)
        powers = (-4.0, 0.0, 4.0, 8.0)
        result = sweep_launch_power(link, cfg, powers, SEED, num_symbols=256)
        assert result.powers_dbm == powers
        assert len(result.q_db) == 4
        assert all(math.isfinite(q) for q in result.q_db)
        best = int(np.argmax(result.q_db))
        assert result.optimum_dbm == powers[best]
        assert result.test_power_dbm == result.optimum_dbm + 2.5
        assert result.assumed_distance_km == 160.0
        # Kerr must hurt at the hot end of the sweep
        assert result.q_db[-1] < max(result.q_db)
        assert all(0.0 <= b <= 1.0 for b in result.ber_counted)
        path = tmp_path / "sweep.csv"
        result.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "power_dbm,esnr_db,q_db,ber_counted"
        assert len(lines) == 5
        assert set(result.to_json_dict()) >= {"powers_dbm", "q_db", "optimum_dbm"}

    def test_needs_three_points(self):
        with pytest.raises(ConfigError):
            sweep_launch_power(small_link(1), small_cfg(), (0.0, 2.0), SEED, num_symbols=64)


class TestPrbsRobustness:
    def test_reference_scores_zero_everywhere(self, ref_setup):
        cfg, link, _ = ref_setup
        result = prbs_robustness(
            link, cfg, CandidateModel.reference(), num_spans=1, num_symbols=256
        )
        assert len(result.nmse_values) == 8
        assert result.mean == 0.0 and result.std == 0.0

    def test_physical_candidate_generalizes_across_sequences(self, ref_setup):
        cfg, link, _ = ref_setup
        result = prbs_robustness(
            link, cfg, CandidateModel.perturbed_ssfm(gamma_scale=1.3),
            num_spans=1, num_symbols=256,
        )
        assert all(v > 0.0 for v in result.nmse_values)
        # a physics-level model is insensitive to the bit sequence
        assert result.std < 0.3 * result.mean
        assert len(set(result.labels)) == 8
        assert all(label.endswith(("-1", "-2")) for label in result.labels)

    def test_default_battery(self):
        specs = default_prbs_specs()
        assert len(specs) == 8
        assert len({(s.algorithm, s.seed) for s in specs}) == 8

    def test_span_range_checked(self, ref_setup):
        cfg, link, _ = ref_setup
        with pytest.raises(ConfigError):
            prbs_robustness(link, cfg, CandidateModel.reference(), num_spans=9)


class TestBenchmark:
    def test_linear_candidate_beats_ssfm(self):
        cfg = small_cfg()
        link = small_link(num_spans=1)
        result = benchmark_inference(
            CandidateModel.identity_plus_cdc(), cfg, link=link, num_symbols=256
        )
        assert result.ssfm_median_s > 0.0
        assert result.candidate_median_s > 0.0
        assert result.candidate_median_s < result.ssfm_median_s
        assert result.num_steps > 1
        assert result.num_samples == 256 * cfg.sps
        assert result.repeats == 5

    def test_repeat_floor(self):
        with pytest.raises(ConfigError):
            benchmark_inference(CandidateModel.identity_plus_cdc(), small_cfg(),
                                repeats=3, num_symbols=64)
